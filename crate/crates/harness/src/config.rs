//! TOML configuration shared by every subcommand.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Tables: `[base]` (required), `[[microclassifier]]`, `[voting]`,
//! `[bitrate]`, `[run]`, `[discrete]`, `[generate]`, `[train]`, `[bench]`.

use std::path::{Path, PathBuf};

use filterforward_core::cost::BitrateModel;
use filterforward_core::events::VotingPolicy;
use filterforward_core::microclassifier::Architecture;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::generate::EventSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Filterforward,
    Discrete,
    FullDnn,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Filterforward, Mode::Discrete, Mode::FullDnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Filterforward => "filterforward",
            Mode::Discrete => "discrete",
            Mode::FullDnn => "full-dnn",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSection {
    pub seed: u64,
    pub height: u32,
    pub width: u32,
    pub widths: Option<Vec<usize>>,
}

/// A classifier to deploy: a weight file, or (`oracle = true`) a test hook
/// that answers from the run's label file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McEntry {
    pub weights: Option<PathBuf>,
    pub name: Option<String>,
    #[serde(default)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VotingSection {
    pub window_size: usize,
    pub votes_required: usize,
}

impl Default for VotingSection {
    fn default() -> Self {
        let p = VotingPolicy::default();
        Self {
            window_size: p.window_size,
            votes_required: p.votes_required,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BitrateSection {
    pub frame_rate: f64,
    pub full_stream_bitrate: f64,
    pub event_bitrate: f64,
}

impl Default for BitrateSection {
    fn default() -> Self {
        let m = BitrateModel::default();
        Self {
            frame_rate: m.frame_rate,
            full_stream_bitrate: m.full_stream_bitrate,
            event_bitrate: m.event_bitrate,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub mode: Mode,
    pub batch_size: usize,
    pub input: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Filter count in the baseline modes; defaults to the number of
    /// `[[microclassifier]]` entries, or 1.
    pub classifiers: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: Mode::Filterforward,
            batch_size: 8,
            input: None,
            labels: None,
            output_dir: None,
            workers: None,
            classifiers: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscreteSection {
    pub seed: u64,
    pub widths: [usize; 3],
    pub threshold: f32,
}

impl Default for DiscreteSection {
    fn default() -> Self {
        Self {
            seed: 0,
            widths: filterforward_core::baseline::DC_DEFAULT_WIDTHS,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub seed: u64,
    pub frame_count: u32,
    pub prevalence: f64,
    pub min_event_len: u32,
    pub max_event_len: u32,
    pub output: PathBuf,
    pub labels: PathBuf,
}

impl GenerateSection {
    pub fn events(&self) -> EventSpec {
        EventSpec {
            prevalence: self.prevalence,
            min_event_len: self.min_event_len,
            max_event_len: self.max_event_len,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub name: String,
    pub arch: String,
    pub tap: Option<String>,
    /// `[row0, col0, row1, col1]` in tap coordinates, inclusive.
    pub crop: Option<[usize; 4]>,
    #[serde(default = "default_window")]
    pub window: usize,
    pub stream: Option<PathBuf>,
    /// Feature cache; written from `stream` when missing.
    pub features: Option<PathBuf>,
    pub labels: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub init_seed: u64,
    pub learning_rate: Option<f32>,
    pub momentum: Option<f32>,
    pub epochs: Option<f32>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    /// Fraction of frames, taken from the end, held out for accuracy.
    #[serde(default)]
    pub holdout: f64,
    #[serde(default = "default_true")]
    pub calibrate_input_scale: bool,
    pub threshold: Option<f32>,
}

fn default_window() -> usize {
    filterforward_core::microclassifier::DEFAULT_WINDOW
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub counts: Vec<usize>,
    pub frames: u32,
    pub modes: Vec<Mode>,
    pub arch: String,
    pub output: Option<PathBuf>,
    pub seed: u64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            counts: (1..=12).collect(),
            frames: 16,
            modes: Mode::ALL.to_vec(),
            arch: "ffod".into(),
            output: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub base: BaseSection,
    #[serde(default, rename = "microclassifier")]
    pub microclassifiers: Vec<McEntry>,
    #[serde(default)]
    pub voting: VotingSection,
    #[serde(default)]
    pub bitrate: BitrateSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub discrete: DiscreteSection,
    pub generate: Option<GenerateSection>,
    pub train: Option<TrainSection>,
    pub bench: Option<BenchSection>,
    #[serde(skip)]
    pub source: PathBuf,
}

fn resolve(dir: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = dir.join(&*p);
    }
}

fn resolve_opt(dir: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(dir, p);
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parse `text` as if it were read from `path`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut c: Config = toml::from_str(text).map_err(|e| Error::config(path, e.to_string()))?;
        c.source = path.to_path_buf();
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for m in &mut c.microclassifiers {
            resolve_opt(&dir, &mut m.weights);
        }
        resolve_opt(&dir, &mut c.run.input);
        resolve_opt(&dir, &mut c.run.labels);
        resolve_opt(&dir, &mut c.run.output_dir);
        if let Some(g) = &mut c.generate {
            resolve(&dir, &mut g.output);
            resolve(&dir, &mut g.labels);
        }
        if let Some(t) = &mut c.train {
            resolve_opt(&dir, &mut t.stream);
            resolve_opt(&dir, &mut t.features);
            resolve(&dir, &mut t.labels);
            resolve(&dir, &mut t.output);
        }
        if let Some(b) = &mut c.bench {
            resolve_opt(&dir, &mut b.output);
        }
        c.validate()?;
        Ok(c)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::config(&self.source, message)
    }

    fn validate(&self) -> Result<()> {
        if self.base.height == 0 || self.base.width == 0 {
            return Err(self.err("base: height and width must be positive"));
        }
        if self.run.batch_size == 0 {
            return Err(self.err("run.batch_size: must be at least 1"));
        }
        if self.run.workers == Some(0) {
            return Err(self.err("run.workers: must be at least 1"));
        }
        for (i, m) in self.microclassifiers.iter().enumerate() {
            match (m.oracle, &m.weights) {
                (true, Some(_)) => {
                    return Err(self.err(format!(
                        "microclassifier[{i}]: oracle entries take no weights"
                    )))
                }
                (false, None) => {
                    return Err(self.err(format!("microclassifier[{i}].weights: missing")))
                }
                _ => {}
            }
        }
        self.voting_policy()?;
        self.bitrate_model()?;
        if let Some(b) = &self.bench {
            if b.counts.is_empty() || b.counts.contains(&0) {
                return Err(self.err("bench.counts: classifier counts must be at least 1"));
            }
            if b.frames == 0 {
                return Err(self.err("bench.frames: must be at least 1"));
            }
            self.bench_arch()?;
        }
        if let Some(t) = &self.train {
            self.parse_arch(&t.arch, "train.arch")?;
            if !(0.0..1.0).contains(&t.holdout) {
                return Err(self.err("train.holdout: must be in [0, 1)"));
            }
            if t.stream.is_none() && t.features.is_none() {
                return Err(self.err("train: needs `stream`, `features` or both"));
            }
        }
        Ok(())
    }

    fn parse_arch(&self, s: &str, field: &str) -> Result<Architecture> {
        s.parse().map_err(|e| self.err(format!("{field}: {e}")))
    }

    pub fn bench_arch(&self) -> Result<Architecture> {
        let arch = self
            .bench
            .as_ref()
            .map(|b| b.arch.as_str())
            .unwrap_or("ffod");
        self.parse_arch(arch, "bench.arch")
    }

    pub fn train_arch(&self) -> Result<Architecture> {
        let t = self
            .train
            .as_ref()
            .ok_or_else(|| self.err("[train] table missing"))?;
        self.parse_arch(&t.arch, "train.arch")
    }

    pub fn voting_policy(&self) -> Result<VotingPolicy> {
        VotingPolicy::new(self.voting.window_size, self.voting.votes_required)
            .map_err(|e| self.err(format!("voting: {e}")))
    }

    pub fn bitrate_model(&self) -> Result<BitrateModel> {
        let b = self.bitrate;
        BitrateModel::new(b.frame_rate, b.full_stream_bitrate, b.event_bitrate)
            .map_err(|e| self.err(format!("bitrate: {e}")))
    }

    /// `FF_WORKERS` overrides the configured worker count.
    pub fn workers(&self) -> Result<usize> {
        if let Ok(v) = std::env::var("FF_WORKERS") {
            return v.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
                Error::Usage(format!("FF_WORKERS={v:?} is not a positive integer"))
            });
        }
        Ok(self.run.workers.unwrap_or(1))
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, field: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| self.err(format!("{field}: missing")))
    }
}
