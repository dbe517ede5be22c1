//! CSV files: per-frame labels, events and per-frame event memberships.

use std::path::Path;

use filterforward_core::events::{EventSegment, FrameMetadata};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    frame_index: u64,
    label: u8,
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[bool]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for (i, &l) in labels.iter().enumerate() {
        w.serialize(LabelRow {
            frame_index: i as u64,
            label: l as u8,
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Labels must cover frames `0..n` in order.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize::<LabelRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        if row.frame_index != out.len() as u64 {
            return Err(Error::format(
                path,
                format!(
                    "expected frame_index {}, found {}",
                    out.len(),
                    row.frame_index
                ),
            ));
        }
        if row.label > 1 {
            return Err(Error::format(
                path,
                format!(
                    "label {} for frame {} is not 0 or 1",
                    row.label, row.frame_index
                ),
            ));
        }
        out.push(row.label == 1);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    mc_name: String,
    event_id: u64,
    start_frame: u64,
    end_frame: u64,
}

pub fn write_events(path: impl AsRef<Path>, events: &[EventSegment]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    if events.is_empty() {
        w.write_record(["mc_name", "event_id", "start_frame", "end_frame"])
            .map_err(|e| Error::csv(path, e))?;
    }
    for e in events {
        w.serialize(EventRow {
            mc_name: e.mc_name.clone(),
            event_id: e.event_id,
            start_frame: e.start_frame,
            end_frame: e.end_frame,
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<EventSegment>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize::<EventRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::csv(path, e))?;
            if row.end_frame < row.start_frame {
                return Err(Error::format(
                    path,
                    format!(
                        "event {} of {} ends before it starts",
                        row.event_id, row.mc_name
                    ),
                ));
            }
            Ok(EventSegment {
                mc_name: row.mc_name,
                event_id: row.event_id,
                start_frame: row.start_frame,
                end_frame: row.end_frame,
            })
        })
        .collect()
}

/// One row per (frame, classifier) membership, in frame then name order.
pub fn write_metadata(path: impl AsRef<Path>, metadata: &[FrameMetadata]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["frame_index", "mc_name", "event_id"])
        .map_err(|e| Error::csv(path, e))?;
    for m in metadata {
        for (name, id) in &m.memberships {
            w.write_record([m.frame_index.to_string(), name.clone(), id.to_string()])
                .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
