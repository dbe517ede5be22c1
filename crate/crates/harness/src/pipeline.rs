//! The `run` command: stream in, events, metadata, report and archive out.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use filterforward_core::base::{frame_from_rgb8, BaseNetwork};
use filterforward_core::baseline::{DiscreteClassifier, FullDnnFilter};
use filterforward_core::cost::{bandwidth_report, break_even, model_cost, BreakEven, Model};
use filterforward_core::events::{annotate, k_vote_smooth, segment_events, EventSegment};
use filterforward_core::metrics::{event_f1, ranges_from_labels, EventScores, RecallWeights};
use filterforward_core::rng::SplitMix64;
use filterforward_core::Tensor;
use serde::Serialize;

use crate::config::{Config, Mode};
use crate::engine::{Classifier, Engine, PhaseLog};
use crate::error::{Context, Error, Result};
use crate::stream::StreamReader;
use crate::{archive, csvio, weights};

pub const REPORT: &str = "report.json";
pub const EVENTS: &str = "events.csv";
pub const METADATA: &str = "metadata.csv";
pub const ARCHIVE_DIR: &str = "archive";

pub fn build_base(cfg: &Config) -> Result<BaseNetwork> {
    let b = &cfg.base;
    let widths = b
        .widths
        .as_deref()
        .unwrap_or(&filterforward_core::base::DEFAULT_WIDTHS);
    BaseNetwork::build_with_widths(b.seed, b.height as usize, b.width as usize, widths)
        .context(|| "base network".into())
}

pub fn build_discrete(cfg: &Config, n: usize) -> Result<Vec<(String, DiscreteClassifier)>> {
    let d = &cfg.discrete;
    let mut rng = SplitMix64::new(d.seed);
    (0..n)
        .map(|i| {
            let mut dc = DiscreteClassifier::build_with_widths(
                rng.next_u64(),
                cfg.base.height as usize,
                cfg.base.width as usize,
                d.widths,
            )
            .context(|| "discrete classifier".into())?;
            dc.threshold = d.threshold;
            Ok((format!("dc{i}"), dc))
        })
        .collect()
}

pub fn build_full_dnn(cfg: &Config, n: usize) -> Result<Vec<(String, FullDnnFilter)>> {
    let b = &cfg.base;
    let widths = b
        .widths
        .as_deref()
        .unwrap_or(&filterforward_core::base::DEFAULT_WIDTHS);
    let mut rng = SplitMix64::new(b.seed);
    (0..n)
        .map(|i| {
            let base = BaseNetwork::build_with_widths(
                rng.next_u64(),
                b.height as usize,
                b.width as usize,
                widths,
            )
            .context(|| "full-dnn base".into())?;
            let f = FullDnnFilter::with_base(base).context(|| "full-dnn head".into())?;
            Ok((format!("dnn{i}"), f))
        })
        .collect()
}

/// Load the configured microclassifiers. Oracle entries need `labels`.
pub fn load_classifiers(cfg: &Config, labels: Option<&Arc<[bool]>>) -> Result<Vec<Classifier>> {
    cfg.microclassifiers
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if m.oracle {
                let labels = labels.ok_or_else(|| {
                    Error::config(
                        &cfg.source,
                        format!("microclassifier[{i}]: oracle needs run.labels"),
                    )
                })?;
                let name = m.name.clone().unwrap_or_else(|| format!("oracle{i}"));
                return Ok(Classifier::Oracle {
                    name,
                    labels: labels.clone(),
                });
            }
            let path = m.weights.as_ref().expect("validated");
            let mut spec = weights::load(path)?;
            if let Some(name) = &m.name {
                spec.name = name.clone();
            }
            Ok(Classifier::Model { spec, state: None })
        })
        .collect()
}

fn baseline_count(cfg: &Config) -> usize {
    cfg.run
        .classifiers
        .unwrap_or(cfg.microclassifiers.len().max(1))
}

pub fn build_engine(cfg: &Config, labels: Option<&Arc<[bool]>>) -> Result<Engine> {
    Ok(match cfg.run.mode {
        Mode::Filterforward => {
            Engine::filterforward(build_base(cfg)?, load_classifiers(cfg, labels)?)?
        }
        Mode::Discrete => Engine::Discrete {
            filters: build_discrete(cfg, baseline_count(cfg))?,
        },
        Mode::FullDnn => Engine::FullDnn {
            filters: build_full_dnn(cfg, baseline_count(cfg))?,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub precision: f64,
    pub mean_event_recall: f64,
    pub event_f1: f64,
}

impl From<EventScores> for Scores {
    fn from(s: EventScores) -> Self {
        Self {
            precision: s.precision,
            mean_event_recall: s.mean_event_recall,
            event_f1: s.event_f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthSection {
    pub matched_frames: u64,
    pub total_frames: u64,
    pub uploaded_bits: f64,
    pub full_bits: f64,
    /// `null` when nothing is uploaded.
    pub savings_factor: Option<f64>,
    pub note: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelCost {
    pub name: String,
    pub kind: String,
    pub multiply_adds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostSection {
    /// Shared base network, filterforward mode only.
    pub base: Option<u64>,
    pub models: Vec<ModelCost>,
    pub discrete_classifier: u64,
    pub per_frame_total: u64,
    /// Classifier count at which the shared base beats one discrete
    /// classifier per task: a number, `"never"`, or `null` without metered
    /// microclassifiers.
    pub break_even_n: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierReport {
    pub name: String,
    pub raw_positive_frames: u64,
    pub smoothed_positive_frames: u64,
    pub events: u64,
    pub metrics: Option<Scores>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub mode: &'static str,
    pub frame_count: u64,
    pub frame_height: u32,
    pub frame_width: u32,
    pub batch_size: usize,
    pub window_size: usize,
    pub votes_required: usize,
    /// Union of all classifiers' smoothed detections against the labels;
    /// `null` without labels or without any labelled event.
    pub metrics: Option<Scores>,
    pub bandwidth: BandwidthSection,
    pub cost: CostSection,
    pub classifiers: Vec<ClassifierReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub events: Vec<EventSegment>,
    /// Raw per-frame verdicts, per classifier in declaration order.
    pub verdicts: Vec<Vec<bool>>,
    pub output_dir: PathBuf,
}

fn scores(truth: &[bool], predicted: &[bool]) -> Result<Option<Scores>> {
    let truth = ranges_from_labels(truth);
    if truth.is_empty() {
        return Ok(None);
    }
    let s = event_f1(
        &truth,
        &ranges_from_labels(predicted),
        RecallWeights::default(),
    )
    .context(|| "metrics".into())?;
    Ok(Some(s.into()))
}

pub fn cost_section(cfg: &Config, engine: &Engine) -> Result<CostSection> {
    let (h, w) = (cfg.base.height as usize, cfg.base.width as usize);
    let ctx = || "cost model".to_string();
    let dc = build_discrete(cfg, 1)?.pop().expect("one classifier").1;
    let dc_cost = model_cost(Model::Discrete(&dc), h, w).context(ctx)?.total();
    let mut models = Vec::new();
    let mut base = None;
    let mut break_even_n = serde_json::Value::Null;
    match engine {
        Engine::FilterForward { net, classifiers } => {
            let b = model_cost(Model::Base(net), h, w).context(ctx)?.total();
            base = Some(b);
            let mut metered = Vec::new();
            for c in classifiers {
                let (kind, cost) = match c {
                    Classifier::Model { spec, .. } => {
                        let cost = model_cost(Model::Microclassifier(spec, net), h, w)
                            .context(ctx)?
                            .total();
                        metered.push(cost);
                        (spec.arch.as_str().to_string(), cost)
                    }
                    Classifier::Oracle { .. } => ("oracle".to_string(), 0),
                };
                models.push(ModelCost {
                    name: c.name().to_string(),
                    kind,
                    multiply_adds: cost,
                });
            }
            if !metered.is_empty() {
                let mean = metered.iter().sum::<u64>() / metered.len() as u64;
                break_even_n = match break_even(b, mean, dc_cost) {
                    BreakEven::At(n) => n.into(),
                    BreakEven::Never => "never".into(),
                };
            }
        }
        Engine::Discrete { filters } => {
            for (name, f) in filters {
                let cost = model_cost(Model::Discrete(f), h, w).context(ctx)?.total();
                models.push(ModelCost {
                    name: name.clone(),
                    kind: "discrete".into(),
                    multiply_adds: cost,
                });
            }
        }
        Engine::FullDnn { filters } => {
            for (name, f) in filters {
                let cost = model_cost(Model::FullDnn(f), h, w).context(ctx)?.total();
                models.push(ModelCost {
                    name: name.clone(),
                    kind: "full-dnn".into(),
                    multiply_adds: cost,
                });
            }
        }
    }
    let per_frame_total = base.unwrap_or(0) + models.iter().map(|m| m.multiply_adds).sum::<u64>();
    Ok(CostSection {
        base,
        models,
        discrete_classifier: dc_cost,
        per_frame_total,
        break_even_n,
    })
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {workers} workers: {e}")))
}

/// Run the configured pipeline and write its outputs. `phases`, when given,
/// records the execution order of every unit of work.
pub fn run(cfg: &Config, phases: Option<&PhaseLog>) -> Result<RunOutput> {
    let input = cfg.require(&cfg.run.input, "run.input")?;
    let output_dir = cfg.require(&cfg.run.output_dir, "run.output_dir")?.clone();
    let mut reader = StreamReader::open(input)?;
    let header = reader.header();
    if (header.height, header.width) != (cfg.base.height, cfg.base.width) {
        return Err(Error::config(
            &cfg.source,
            format!(
                "base: configured for {}x{} but {} holds {}x{} frames",
                cfg.base.height,
                cfg.base.width,
                input.display(),
                header.height,
                header.width
            ),
        ));
    }
    let frame_count = header.frame_count as usize;
    let labels: Option<Arc<[bool]>> = match &cfg.run.labels {
        Some(p) => {
            let l = csvio::read_labels(p)?;
            if l.len() != frame_count {
                return Err(Error::format(
                    p,
                    format!("{} labels for {frame_count} frames", l.len()),
                ));
            }
            Some(l.into())
        }
        None => None,
    };
    let policy = cfg.voting_policy()?;
    let bitrate = cfg.bitrate_model()?;
    let mut engine = build_engine(cfg, labels.as_ref())?;
    let names = engine.names();
    let pool = build_pool(cfg.workers()?)?;

    let mut slots: Vec<Vec<Option<bool>>> = vec![vec![None; frame_count]; names.len()];
    let mut record = |per_classifier: Vec<
        Vec<filterforward_core::microclassifier::FrameVerdict>,
    >|
     -> Result<()> {
        for (slot, verdicts) in slots.iter_mut().zip(per_classifier) {
            for v in verdicts {
                let cell = slot
                    .get_mut(v.frame_index as usize)
                    .ok_or_else(|| Error::Core {
                        context: v.mc_name.clone(),
                        source: filterforward_core::Error::InvariantViolation(format!(
                            "verdict for frame {} beyond stream end",
                            v.frame_index
                        )),
                    })?;
                *cell = Some(v.positive);
            }
        }
        Ok(())
    };

    let (h, w) = (header.height as usize, header.width as usize);
    let mut buf = Vec::new();
    let mut batch_no = 0u64;
    let mut next = 0u64;
    pool.install(|| -> Result<()> {
        loop {
            let mut frames: Vec<Tensor> = Vec::with_capacity(cfg.run.batch_size);
            while frames.len() < cfg.run.batch_size && reader.next_frame(&mut buf)? {
                frames.push(
                    frame_from_rgb8(h, w, &buf)
                        .context(|| format!("frame {}", next + frames.len() as u64))?,
                );
            }
            if frames.is_empty() {
                break;
            }
            let out = engine.process_batch(batch_no, next, &frames, phases)?;
            record(out)?;
            next += frames.len() as u64;
            batch_no += 1;
        }
        record(engine.finish()?)
    })?;

    let verdicts = slots
        .into_iter()
        .zip(&names)
        .map(|(slot, name)| {
            slot.into_iter()
                .enumerate()
                .map(|(i, v)| {
                    v.ok_or_else(|| Error::Core {
                        context: name.clone(),
                        source: filterforward_core::Error::InvariantViolation(format!(
                            "no verdict for frame {i}"
                        )),
                    })
                })
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut events = Vec::new();
    let mut union = vec![false; frame_count];
    let mut classifiers = Vec::new();
    for (name, raw) in names.iter().zip(&verdicts) {
        let smoothed = k_vote_smooth(raw, policy);
        let segs = segment_events(&smoothed, name);
        for (u, &s) in union.iter_mut().zip(&smoothed) {
            *u |= s;
        }
        classifiers.push(ClassifierReport {
            name: name.clone(),
            raw_positive_frames: raw.iter().filter(|&&v| v).count() as u64,
            smoothed_positive_frames: smoothed.iter().filter(|&&v| v).count() as u64,
            events: segs.len() as u64,
            metrics: match &labels {
                Some(l) => scores(l, &smoothed)?,
                None => None,
            },
        });
        events.extend(segs);
    }
    let metadata = annotate(&events, frame_count).context(|| "frame metadata".into())?;
    let matched = union.iter().filter(|&&v| v).count() as u64;
    let bw =
        bandwidth_report(matched, frame_count as u64, &bitrate).context(|| "bandwidth".into())?;

    let report = Report {
        mode: cfg.run.mode.as_str(),
        frame_count: frame_count as u64,
        frame_height: header.height,
        frame_width: header.width,
        batch_size: cfg.run.batch_size,
        window_size: policy.window_size,
        votes_required: policy.votes_required,
        metrics: match &labels {
            Some(l) => scores(l, &union)?,
            None => None,
        },
        bandwidth: BandwidthSection {
            matched_frames: matched,
            total_frames: frame_count as u64,
            uploaded_bits: bw.uploaded_bits,
            full_bits: bw.full_bits,
            savings_factor: bw.savings_factor,
            note: "upper bound at target bitrates",
        },
        cost: cost_section(cfg, &engine)?,
        classifiers,
    };

    fs::create_dir_all(&output_dir).map_err(|e| Error::io(&output_dir, e))?;
    csvio::write_events(output_dir.join(EVENTS), &events)?;
    csvio::write_metadata(output_dir.join(METADATA), &metadata)?;
    write_json(&output_dir.join(REPORT), &report)?;
    archive::write(&output_dir.join(ARCHIVE_DIR), input, &events)?;
    Ok(RunOutput {
        report,
        events,
        verdicts,
        output_dir,
    })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
