//! Event-level accuracy: per-event recall that rewards detecting any frame of
//! an event (existence) and detecting many of its frames (overlap), frame
//! precision, and their harmonic mean.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::events::FrameRange;

/// Weights of the existence and overlap terms of event recall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RecallWeights {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 0.1,
        }
    }
}

impl RecallWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 || (alpha + beta - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!(
                "recall weights must be non-negative and sum to 1, got {alpha} + {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

fn check_disjoint(ranges: &[FrameRange]) -> Result<()> {
    let mut sorted: Vec<FrameRange> = ranges.to_vec();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[1].start <= w[0].end) {
        return Err(Error::InvariantViolation(format!(
            "predicted ranges {}..={} and {}..={} overlap",
            w[0].start, w[0].end, w[1].start, w[1].end
        )));
    }
    Ok(())
}

/// `alpha * existence + beta * overlap` for one ground-truth event, where
/// overlap sums the intersections with every predicted range.
pub fn event_recall(
    truth: FrameRange,
    predicted: &[FrameRange],
    weights: RecallWeights,
) -> Result<f64> {
    check_disjoint(predicted)?;
    Ok(recall_unchecked(truth, predicted, weights))
}

fn recall_unchecked(truth: FrameRange, predicted: &[FrameRange], weights: RecallWeights) -> f64 {
    let hit: u64 = predicted.iter().map(|p| truth.intersection_len(p)).sum();
    let existence = if hit > 0 { 1.0 } else { 0.0 };
    let overlap = hit as f64 / truth.len() as f64;
    weights.alpha * existence + weights.beta * overlap
}

fn total_len(ranges: &[FrameRange]) -> u64 {
    ranges.iter().map(FrameRange::len).sum()
}

/// Fraction of predicted frames that are true positives; 1.0 when nothing
/// was predicted. Both inputs must be disjoint range lists.
pub fn frame_precision(predicted: &[FrameRange], truth: &[FrameRange]) -> Result<f64> {
    check_disjoint(predicted)?;
    check_disjoint(truth)?;
    let predicted_frames = total_len(predicted);
    if predicted_frames == 0 {
        return Ok(1.0);
    }
    let correct: u64 = predicted
        .iter()
        .map(|p| truth.iter().map(|t| p.intersection_len(t)).sum::<u64>())
        .sum();
    Ok(correct as f64 / predicted_frames as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventScores {
    pub precision: f64,
    pub mean_event_recall: f64,
    pub event_f1: f64,
}

/// Harmonic mean of frame precision and the mean event recall over truth
/// events.
pub fn event_f1(
    truth: &[FrameRange],
    predicted: &[FrameRange],
    weights: RecallWeights,
) -> Result<EventScores> {
    if truth.is_empty() {
        return Err(Error::UndefinedMetric(
            "event F1 needs at least one ground-truth event",
        ));
    }
    let precision = frame_precision(predicted, truth)?;
    let recall_sum: f64 = truth
        .iter()
        .map(|t| recall_unchecked(*t, predicted, weights))
        .sum();
    let mean_event_recall = recall_sum / truth.len() as f64;
    Ok(EventScores {
        precision,
        mean_event_recall,
        event_f1: f1(precision, mean_event_recall),
    })
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Ranges of consecutive `true` entries.
pub fn ranges_from_labels(labels: &[bool]) -> Vec<FrameRange> {
    crate::events::segment_events(labels, "")
        .into_iter()
        .map(|s| s.range())
        .collect()
}
