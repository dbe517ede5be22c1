//! Throughput benchmark: fps and metered multiply-adds per frame for each
//! mode and classifier count.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use filterforward_core::base::frame_from_rgb8;
use filterforward_core::microclassifier::{Architecture, MicroclassifierSpec};
use filterforward_core::rng::SplitMix64;
use filterforward_core::Tensor;
use serde::Serialize;

use crate::config::{BenchSection, Config, Mode};
use crate::engine::{Classifier, Engine};
use crate::error::{Context, Error, Result};
use crate::pipeline::{build_base, build_discrete, build_full_dnn, cost_section};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub mode: &'static str,
    pub n: usize,
    pub fps: f64,
    pub multiply_adds_per_frame: u64,
    pub workers: usize,
}

/// `n` copies of one default classifier, named `mc0..`.
pub fn engine_for(
    cfg: &Config,
    mode: Mode,
    n: usize,
    arch: Architecture,
    seed: u64,
) -> Result<Engine> {
    match mode {
        Mode::Filterforward => {
            let net = build_base(cfg)?;
            let spec = MicroclassifierSpec::init_default("mc", arch, &net, seed)
                .context(|| "bench classifier".into())?;
            let classifiers = (0..n)
                .map(|i| {
                    let mut s = spec.clone();
                    s.name = format!("mc{i}");
                    Classifier::Model {
                        spec: s,
                        state: None,
                    }
                })
                .collect();
            Engine::filterforward(net, classifiers)
        }
        Mode::Discrete => Ok(Engine::Discrete {
            filters: build_discrete(cfg, n)?,
        }),
        Mode::FullDnn => Ok(Engine::FullDnn {
            filters: build_full_dnn(cfg, n)?,
        }),
    }
}

fn noise_frames(cfg: &Config, count: u32, seed: u64) -> Result<Vec<Tensor>> {
    let (h, w) = (cfg.base.height as usize, cfg.base.width as usize);
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            let rgb: Vec<u8> = (0..h * w * 3).map(|_| rng.below(256) as u8).collect();
            frame_from_rgb8(h, w, &rgb).context(|| "bench frame".into())
        })
        .collect()
}

fn time_engine(engine: &mut Engine, frames: &[Tensor], batch_size: usize) -> Result<f64> {
    // One untimed batch to fault in buffers.
    engine.process_batch(0, 0, &frames[..batch_size.min(frames.len())], None)?;
    let start = Instant::now();
    let mut first = batch_size.min(frames.len()) as u64;
    for (b, chunk) in frames.chunks(batch_size).enumerate() {
        engine.process_batch(b as u64 + 1, first, chunk, None)?;
        first += chunk.len() as u64;
    }
    engine.finish()?;
    let secs = start.elapsed().as_secs_f64();
    Ok(frames.len() as f64 / secs.max(1e-9))
}

pub fn run(cfg: &Config) -> Result<Vec<BenchRow>> {
    let default = BenchSection::default();
    let b = cfg.bench.as_ref().unwrap_or(&default);
    let arch = cfg.bench_arch()?;
    let workers = cfg.workers()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Usage(e.to_string()))?;
    let frames = noise_frames(cfg, b.frames, b.seed)?;
    let mut rows = Vec::new();
    for &mode in &b.modes {
        for &n in &b.counts {
            let mut engine = engine_for(cfg, mode, n, arch, b.seed)?;
            let cost = cost_section(cfg, &engine)?.per_frame_total;
            let fps = pool.install(|| time_engine(&mut engine, &frames, cfg.run.batch_size))?;
            rows.push(BenchRow {
                mode: mode.as_str(),
                n,
                fps,
                multiply_adds_per_frame: cost,
                workers,
            });
        }
    }
    Ok(rows)
}

pub fn write_csv(rows: &[BenchRow], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save(rows: &[BenchRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(rows, file).map_err(|e| Error::csv(path, e))
}

/// Smallest `n` at which `faster` beats `slower` by `metric` and keeps
/// beating it for every larger tested `n`; `None` if it never does.
pub fn crossover(
    rows: &[BenchRow],
    faster: Mode,
    slower: Mode,
    metric: impl Fn(&BenchRow, &BenchRow) -> bool,
) -> Option<usize> {
    let mut pairs: Vec<(usize, bool)> = rows
        .iter()
        .filter(|r| r.mode == faster.as_str())
        .filter_map(|a| {
            rows.iter()
                .find(|b| b.mode == slower.as_str() && b.n == a.n)
                .map(|b| (a.n, metric(a, b)))
        })
        .collect();
    pairs.sort_unstable();
    let mut answer = None;
    for &(n, wins) in pairs.iter().rev() {
        if !wins {
            break;
        }
        answer = Some(n);
    }
    answer
}
