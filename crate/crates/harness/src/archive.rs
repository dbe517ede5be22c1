//! Edge-side archive: an offsets index over the original stream file plus
//! the detected events, and demand-fetch of frame ranges from it.
//!
//! Layout of an archive directory:
//! - `manifest.json`: stream path, dimensions and frame count
//! - `offsets.bin`: little-endian u64 byte offset of every frame
//! - `events.csv`: the run's events

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use filterforward_core::events::{demand_fetch, EventIndex, EventSegment, FrameRange};
use serde::{Deserialize, Serialize};

use crate::binio::{read_u64, write_u64};
use crate::csvio;
use crate::error::{Context, Error, Result};
use crate::stream::{StreamReader, StreamWriter};

pub const MANIFEST: &str = "manifest.json";
pub const OFFSETS: &str = "offsets.bin";
pub const EVENTS: &str = "events.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stream: PathBuf,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub frame_len: u64,
}

/// Index `stream` into `dir` together with `events`.
pub fn write(dir: &Path, stream: &Path, events: &[EventSegment]) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stream = fs::canonicalize(stream).map_err(|e| Error::io(stream, e))?;
    let header = StreamReader::open(&stream)?.header();
    let manifest = Manifest {
        stream,
        width: header.width,
        height: header.height,
        frame_count: header.frame_count,
        frame_len: header.frame_len() as u64,
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

    let path = dir.join(OFFSETS);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..header.frame_count as u64 {
        write_u64(&mut w, header.offset(i)).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    csvio::write_events(dir.join(EVENTS), events)?;
    Ok(manifest)
}

pub struct Archive {
    dir: PathBuf,
    pub manifest: Manifest,
    offsets: Vec<u64>,
    pub index: EventIndex,
}

impl Archive {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;

        let path = dir.join(OFFSETS);
        let len = fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        if len != manifest.frame_count as u64 * 8 {
            return Err(Error::format(
                &path,
                format!("{len} bytes for {} frames", manifest.frame_count),
            ));
        }
        let mut r = BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?);
        let offsets = (0..manifest.frame_count)
            .map(|_| read_u64(&mut r))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(&path, e))?;

        let events = csvio::read_events(dir.join(EVENTS))?;
        let index = EventIndex::new(manifest.frame_count as u64, &events)
            .context(|| format!("{}", dir.join(EVENTS).display()))?;
        Ok(Self {
            dir,
            manifest,
            offsets,
            index,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// The event's frames widened by `context` on each side.
    pub fn event_range(&self, mc_name: &str, event_id: u64, context: u64) -> Result<FrameRange> {
        demand_fetch(&self.index, mc_name, event_id, context)
            .context(|| format!("fetch from {}", self.dir.display()))
    }

    pub fn full_range(&self) -> Option<FrameRange> {
        (self.manifest.frame_count > 0)
            .then(|| FrameRange::new(0, self.manifest.frame_count as u64 - 1))
    }

    /// Copy frames `range` (inclusive) of the archived stream to a new
    /// stream file at `out`. `None` writes an empty stream.
    pub fn extract(&self, range: Option<FrameRange>, out: &Path) -> Result<()> {
        let m = &self.manifest;
        let source = StreamReader::open(&m.stream)?.header();
        if (source.width, source.height, source.frame_count) != (m.width, m.height, m.frame_count) {
            return Err(Error::format(
                &m.stream,
                "stream no longer matches its archive manifest",
            ));
        }
        let count = range.map_or(0, |r| r.len());
        let mut writer = StreamWriter::create(out, m.width, m.height, count as u32)?;
        if let Some(r) = range {
            let mut file = File::open(&m.stream).map_err(|e| Error::io(&m.stream, e))?;
            let mut buf = vec![0u8; m.frame_len as usize];
            for i in r.start..=r.end {
                let offset = *self.offsets.get(i as usize).ok_or_else(|| {
                    Error::format(self.dir.join(OFFSETS), format!("no offset for frame {i}"))
                })?;
                file.seek(SeekFrom::Start(offset))
                    .map_err(|e| Error::io(&m.stream, e))?;
                file.read_exact(&mut buf)
                    .map_err(|e| Error::io(&m.stream, e))?;
                writer.write_frame(&buf)?;
            }
        }
        writer.finish()
    }
}
