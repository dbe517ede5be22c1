//! Synthetic labelled streams: low-amplitude noise everywhere, plus a bright
//! square ("blob") during labelled events. Each event has its own blob
//! position, size and intensity.

use std::path::Path;

use filterforward_core::events::FrameRange;
use filterforward_core::rng::SplitMix64;
use filterforward_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::csvio::write_labels;
use crate::error::{Context, Result};
use crate::stream::StreamWriter;

pub const NOISE_MAX: u8 = 60;
pub const BLOB_MIN_INTENSITY: u8 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub prevalence: f64,
    pub min_event_len: u32,
    pub max_event_len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub frame_count: u32,
    pub height: u32,
    pub width: u32,
    pub events: EventSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blob {
    pub row0: u32,
    pub col0: u32,
    pub size: u32,
    pub intensity: u8,
}

impl Blob {
    pub fn contains(&self, row: u32, col: u32) -> bool {
        (self.row0..self.row0 + self.size).contains(&row)
            && (self.col0..self.col0 + self.size).contains(&col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPlan {
    pub labels: Vec<bool>,
    pub events: Vec<(FrameRange, Blob)>,
}

impl SyntheticPlan {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn blob_at(&self, frame: u64) -> Option<Blob> {
        let i = self.events.partition_point(|(r, _)| r.end < frame);
        self.events
            .get(i)
            .filter(|(r, _)| r.contains(frame))
            .map(|(_, b)| *b)
    }
}

fn reject(msg: String) -> CoreError {
    CoreError::Generation(msg)
}

fn check(spec: &SyntheticSpec) -> Result<(), CoreError> {
    let e = spec.events;
    if !(e.prevalence > 0.0 && e.prevalence < 1.0) {
        return Err(reject(format!(
            "prevalence {} outside (0, 1)",
            e.prevalence
        )));
    }
    if e.min_event_len == 0 || e.min_event_len > e.max_event_len {
        return Err(reject(format!(
            "event lengths {}..={} invalid",
            e.min_event_len, e.max_event_len
        )));
    }
    if spec.frame_count == 0 || spec.height < 2 || spec.width < 2 {
        return Err(reject(
            "need at least one frame of at least 2x2 pixels".into(),
        ));
    }
    Ok(())
}

/// Event layout and per-event blobs. Realised prevalence is kept within
/// 10% of the target or generation fails.
pub fn plan(spec: &SyntheticSpec) -> Result<SyntheticPlan, CoreError> {
    check(spec)?;
    let n = spec.frame_count as u64;
    let e = spec.events;
    let target = (e.prevalence * n as f64).round() as u64;
    let mut rng = SplitMix64::new(spec.seed);

    let mut lengths = Vec::new();
    let mut total = 0u64;
    while total < target {
        let len =
            e.min_event_len as u64 + rng.below((e.max_event_len - e.min_event_len) as u64 + 1);
        let len = len.min(target - total).max(e.min_event_len as u64);
        lengths.push(len);
        total += len;
    }
    let realized = total as f64 / n as f64;
    if lengths.is_empty() || (realized - e.prevalence).abs() > 0.1 * e.prevalence {
        return Err(reject(format!(
            "cannot realise prevalence {} with events of {}..={} frames in {n} frames",
            e.prevalence, e.min_event_len, e.max_event_len
        )));
    }
    let events = lengths.len() as u64;
    let gaps = n
        .checked_sub(total)
        .filter(|&g| g + 1 >= events)
        .ok_or_else(|| {
            reject(format!(
                "{events} events of {total} frames do not fit in {n} frames with separating gaps"
            ))
        })?;

    // Interior gaps get one frame each; the rest is split across all slots.
    let spare = gaps + 1 - events;
    let weights: Vec<f64> = (0..=events).map(|_| rng.next_f64() + 1e-9).collect();
    let wsum: f64 = weights.iter().sum();
    let mut slots: Vec<u64> = weights
        .iter()
        .map(|w| (w / wsum * spare as f64).floor() as u64)
        .collect();
    let assigned: u64 = slots.iter().sum();
    slots[events as usize] += spare - assigned;
    for s in slots.iter_mut().take(events as usize).skip(1) {
        *s += 1;
    }

    let side = spec.height.min(spec.width);
    let min_size = (side / 6).max(2);
    let max_size = (side / 4).max(min_size);
    let mut labels = vec![false; n as usize];
    let mut out = Vec::with_capacity(lengths.len());
    let mut cursor = 0u64;
    for (i, &len) in lengths.iter().enumerate() {
        cursor += slots[i];
        let range = FrameRange::new(cursor, cursor + len - 1);
        labels[cursor as usize..(cursor + len) as usize]
            .iter_mut()
            .for_each(|l| *l = true);
        let size = min_size + rng.below((max_size - min_size) as u64 + 1) as u32;
        let blob = Blob {
            row0: rng.below((spec.height - size) as u64 + 1) as u32,
            col0: rng.below((spec.width - size) as u64 + 1) as u32,
            size,
            intensity: BLOB_MIN_INTENSITY + rng.below((255 - BLOB_MIN_INTENSITY) as u64 + 1) as u8,
        };
        out.push((range, blob));
        cursor += len;
    }
    Ok(SyntheticPlan {
        labels,
        events: out,
    })
}

/// Pixels of frame `index`: noise in `0..=NOISE_MAX`, overwritten by the
/// event's blob if the frame is labelled.
pub fn render_frame(spec: &SyntheticSpec, plan: &SyntheticPlan, index: u64, buf: &mut Vec<u8>) {
    let (h, w) = (spec.height, spec.width);
    let mut rng =
        SplitMix64::new(spec.seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
    buf.clear();
    buf.extend((0..h as usize * w as usize * 3).map(|_| rng.below(NOISE_MAX as u64 + 1) as u8));
    if let Some(blob) = plan.blob_at(index) {
        for r in blob.row0..blob.row0 + blob.size {
            let start = (r as usize * w as usize + blob.col0 as usize) * 3;
            buf[start..start + blob.size as usize * 3].fill(blob.intensity);
        }
    }
}

pub fn generate(
    spec: &SyntheticSpec,
    stream: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<SyntheticPlan> {
    let plan = plan(spec).context(|| "generate".into())?;
    let mut w = StreamWriter::create(stream, spec.width, spec.height, spec.frame_count)?;
    let mut buf = Vec::new();
    for i in 0..spec.frame_count as u64 {
        render_frame(spec, &plan, i, &mut buf);
        w.write_frame(&buf)?;
    }
    w.finish()?;
    write_labels(labels, &plan.labels)?;
    Ok(plan)
}

/// The `generate` command: the `[generate]` table at the `[base]` dims.
pub fn run(cfg: &crate::config::Config) -> Result<SyntheticPlan> {
    let g = cfg.require(&cfg.generate, "generate")?;
    let spec = SyntheticSpec {
        seed: g.seed,
        frame_count: g.frame_count,
        height: cfg.base.height,
        width: cfg.base.width,
        events: g.events(),
    };
    generate(&spec, &g.output, &g.labels)
}
