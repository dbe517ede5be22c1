#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use filterforward_harness::config::Config;
use filterforward_harness::generate::{generate, EventSpec, SyntheticPlan, SyntheticSpec};
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        Self {
            dir: tempfile::tempdir().expect("temp dir"),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Write `text` as `name` in the fixture and load it.
    pub fn config(&self, name: &str, text: &str) -> Config {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        Config::load(&p).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    /// Synthetic stream `<stem>.ffvs` with labels `<stem>.csv`.
    pub fn stream(&self, stem: &str, spec: SyntheticSpec) -> SyntheticPlan {
        generate(
            &spec,
            self.path(&format!("{stem}.ffvs")),
            self.path(&format!("{stem}.csv")),
        )
        .unwrap()
    }
}

pub fn synthetic(
    seed: u64,
    frames: u32,
    side: u32,
    prevalence: f64,
    min_len: u32,
    max_len: u32,
) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        frame_count: frames,
        height: side,
        width: side,
        events: EventSpec {
            prevalence,
            min_event_len: min_len,
            max_event_len: max_len,
        },
    }
}

pub fn base(seed: u64, side: u32) -> String {
    format!("[base]\nseed = {seed}\nheight = {side}\nwidth = {side}\n")
}

/// `[run]` table reading `<stem>.ffvs` and `<stem>.csv`.
pub fn run_table(stem: &str, out: &str, extra: &str) -> String {
    format!("[run]\ninput = \"{stem}.ffvs\"\nlabels = \"{stem}.csv\"\noutput_dir = \"{out}\"\n{extra}\n")
}

pub fn bytes(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

/// Train an lbc on a balanced bright-blob stream and return the weight file.
pub fn train_lbc(fx: &Fixture, side: u32, frames: u32, epochs: f32) -> PathBuf {
    fx.stream("train", synthetic(101, frames, side, 0.5, 1, 3));
    let cfg = fx.config(
        "train.toml",
        &format!(
            "{}[train]\nname = \"blob\"\narch = \"lbc\"\nstream = \"train.ffvs\"\nlabels = \"train.csv\"\n\
             output = \"blob.ffmc\"\nlearning_rate = 0.01\nbatch_size = 8\nepochs = {epochs}\nholdout = 0.2\nseed = 3\ninit_seed = 5\n",
            base(7, side)
        ),
    );
    let report = filterforward_harness::trainer::run(&cfg).unwrap();
    assert!(report.holdout_accuracy.unwrap() >= 0.95, "{report:?}");
    fx.path("blob.ffmc")
}
