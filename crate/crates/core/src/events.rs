//! From per-frame verdicts to events: K-of-N voting, segmentation into
//! numbered events, per-frame membership metadata and the demand-fetch range
//! computation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Mark a frame positive when at least `votes_required` of the
/// `window_size` frames centred on it are positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VotingPolicy {
    pub window_size: usize,
    pub votes_required: usize,
}

impl Default for VotingPolicy {
    fn default() -> Self {
        Self {
            window_size: 5,
            votes_required: 2,
        }
    }
}

impl VotingPolicy {
    pub fn new(window_size: usize, votes_required: usize) -> Result<Self> {
        let p = Self {
            window_size,
            votes_required,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.window_size.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!(
                "voting window must be odd and positive, got {}",
                self.window_size
            )));
        }
        if self.votes_required == 0 || self.votes_required > self.window_size {
            return Err(Error::InvalidSpec(format!(
                "votes required must be in 1..={}, got {}",
                self.window_size, self.votes_required
            )));
        }
        Ok(())
    }
}

/// K-of-N smoothing. Windows at the sequence edges are clipped, not padded,
/// and still need `votes_required` positives.
pub fn k_vote_smooth(labels: &[bool], policy: VotingPolicy) -> Vec<bool> {
    let n = labels.len();
    let half = policy.window_size / 2;
    let mut prefix = vec![0usize; n + 1];
    for (i, &l) in labels.iter().enumerate() {
        prefix[i + 1] = prefix[i] + l as usize;
    }
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(n);
            prefix[hi] - prefix[lo] >= policy.votes_required
        })
        .collect()
}

/// Inclusive frame range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameRange {
    pub start: u64,
    pub end: u64,
}

impl FrameRange {
    pub const fn new(start: u64, end: u64) -> Self {
        Self { start, end }
    }

    // Inclusive bounds, so a range is never empty.
    #[allow(clippy::len_without_is_empty)]
    pub const fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub const fn contains(&self, frame: u64) -> bool {
        self.start <= frame && frame <= self.end
    }

    pub fn intersection_len(&self, other: &FrameRange) -> u64 {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }
}

/// A maximal run of smoothed-positive frames for one classifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventSegment {
    pub mc_name: String,
    pub event_id: u64,
    pub start_frame: u64,
    pub end_frame: u64,
}

impl EventSegment {
    pub fn range(&self) -> FrameRange {
        FrameRange::new(self.start_frame, self.end_frame)
    }
}

/// Maximal runs of `true` become events numbered 0, 1, 2, ... in order.
pub fn segment_events(smoothed: &[bool], mc_name: &str) -> Vec<EventSegment> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in smoothed.iter().chain(core::iter::once(&false)).enumerate() {
        match (v, start) {
            (true, None) => start = Some(i as u64),
            (false, Some(s)) => {
                out.push(EventSegment {
                    mc_name: mc_name.into(),
                    event_id: out.len() as u64,
                    start_frame: s,
                    end_frame: i as u64 - 1,
                });
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Inverse of [`segment_events`] for one classifier.
pub fn segments_to_labels(segments: &[EventSegment], frame_count: usize) -> Vec<bool> {
    let mut out = vec![false; frame_count];
    for s in segments {
        for f in s.start_frame..=s.end_frame.min(frame_count as u64 - 1) {
            out[f as usize] = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrameMetadata {
    pub frame_index: u64,
    /// Classifier name to the id of its event containing this frame.
    pub memberships: BTreeMap<String, u64>,
}

/// Check the per-classifier invariants: ids count up from 0 in start order and
/// segments are disjoint with at least one frame between them.
pub fn check_segments(segments: &[EventSegment]) -> Result<()> {
    let mut by_mc: BTreeMap<&str, Vec<&EventSegment>> = BTreeMap::new();
    for s in segments {
        if s.start_frame > s.end_frame {
            return Err(Error::InvariantViolation(format!(
                "{} event {} starts after it ends",
                s.mc_name, s.event_id
            )));
        }
        by_mc.entry(&s.mc_name).or_default().push(s);
    }
    for (mc, mut segs) in by_mc {
        segs.sort_by_key(|s| s.start_frame);
        for w in segs.windows(2) {
            if w[1].start_frame <= w[0].end_frame + 1 {
                return Err(Error::InvariantViolation(format!(
                    "{mc} events {} and {} overlap or touch",
                    w[0].event_id, w[1].event_id
                )));
            }
        }
        for (i, s) in segs.iter().enumerate() {
            if s.event_id != i as u64 {
                return Err(Error::InvariantViolation(format!(
                    "{mc} event ids are not sequential in start order (found {} at position {i})",
                    s.event_id
                )));
            }
        }
    }
    Ok(())
}

/// Per-frame membership maps over all classifiers' segments.
pub fn annotate(segments: &[EventSegment], frame_count: usize) -> Result<Vec<FrameMetadata>> {
    check_segments(segments)?;
    let mut out: Vec<FrameMetadata> = (0..frame_count as u64)
        .map(|frame_index| FrameMetadata {
            frame_index,
            memberships: BTreeMap::new(),
        })
        .collect();
    for s in segments {
        if s.end_frame as usize >= frame_count {
            return Err(Error::InvariantViolation(format!(
                "{} event {} ends at frame {} beyond stream of {frame_count}",
                s.mc_name, s.event_id, s.end_frame
            )));
        }
        for f in s.start_frame..=s.end_frame {
            out[f as usize]
                .memberships
                .insert(s.mc_name.clone(), s.event_id);
        }
    }
    Ok(out)
}

/// Lookup from (classifier, event id) to frame range over an archived stream.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventIndex {
    frame_count: u64,
    events: BTreeMap<(String, u64), FrameRange>,
}

impl EventIndex {
    pub fn new(frame_count: u64, segments: &[EventSegment]) -> Result<Self> {
        check_segments(segments)?;
        let mut events = BTreeMap::new();
        for s in segments {
            if s.end_frame >= frame_count {
                return Err(Error::InvariantViolation(format!(
                    "event beyond stream end: {} {}",
                    s.mc_name, s.event_id
                )));
            }
            events.insert((s.mc_name.clone(), s.event_id), s.range());
        }
        Ok(Self {
            frame_count,
            events,
        })
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    pub fn get(&self, mc_name: &str, event_id: u64) -> Option<FrameRange> {
        self.events.get(&(String::from(mc_name), event_id)).copied()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// The event's range widened by `context_frames` on each side, clamped to
/// the stream.
pub fn demand_fetch(
    index: &EventIndex,
    mc_name: &str,
    event_id: u64,
    context_frames: u64,
) -> Result<FrameRange> {
    let r = index
        .get(mc_name, event_id)
        .ok_or_else(|| Error::NotFound(format!("event {event_id} of classifier {mc_name:?}")))?;
    let last = index.frame_count.saturating_sub(1);
    Ok(FrameRange::new(
        r.start.saturating_sub(context_frames),
        r.end.saturating_add(context_frames).min(last),
    ))
}
