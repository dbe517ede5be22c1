//! `FFFM` feature-map cache files.
//!
//! Header: magic, version u32, tap count u32, then per tap a name (u32
//! length + UTF-8) and height, width, channels as u32; then the frame count
//! u32. Each frame is its index as u64 followed by every tap's values as
//! little-endian f32, in tap order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use filterforward_core::base::FeatureMapSet;
use filterforward_core::tensor::{Shape, Tensor};

use crate::binio::*;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FFFM";
pub const VERSION: u32 = 1;

pub struct FeatureCacheWriter {
    path: PathBuf,
    file: BufWriter<File>,
    taps: Vec<(String, Shape)>,
    remaining: u32,
}

impl FeatureCacheWriter {
    pub fn create(
        path: impl AsRef<Path>,
        taps: &[(String, Shape)],
        frame_count: u32,
    ) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut file = BufWriter::new(file);
        let header = |w: &mut BufWriter<File>| -> io::Result<()> {
            w.write_all(MAGIC)?;
            write_u32(w, VERSION)?;
            write_u32(w, len_u32(taps.len())?)?;
            for (name, s) in taps {
                write_str(w, name)?;
                for d in [s.height, s.width, s.channels] {
                    write_u32(w, len_u32(d)?)?;
                }
            }
            write_u32(w, frame_count)
        };
        header(&mut file).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            file,
            taps: taps.to_vec(),
            remaining: frame_count,
        })
    }

    pub fn write(&mut self, fs: &FeatureMapSet) -> Result<()> {
        if self.remaining == 0 {
            return Err(Error::format(
                &self.path,
                "more frames than declared in the header",
            ));
        }
        let matches = fs.maps.len() == self.taps.len()
            && fs
                .maps
                .iter()
                .zip(&self.taps)
                .all(|((n, t), (tn, ts))| n == tn && t.shape() == *ts);
        if !matches {
            return Err(Error::format(
                &self.path,
                format!("frame {} does not match the tap table", fs.frame_index),
            ));
        }
        let mut body = || -> io::Result<()> {
            write_u64(&mut self.file, fs.frame_index)?;
            for (_, t) in &fs.maps {
                write_f32s(&mut self.file, t.data())?;
            }
            Ok(())
        };
        body().map_err(|e| Error::io(&self.path, e))?;
        self.remaining -= 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.remaining != 0 {
            return Err(Error::format(
                &self.path,
                format!("{} declared frames not written", self.remaining),
            ));
        }
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn read_header(r: &mut impl Read) -> io::Result<(Vec<(String, Shape)>, u32)> {
    expect_magic(r, MAGIC)?;
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unsupported cache version {version}"),
        ));
    }
    let n = read_u32(r)?;
    let mut taps = Vec::new();
    for _ in 0..n {
        let name = read_str(r, 4096)?;
        let h = read_u32(r)? as usize;
        let w = read_u32(r)? as usize;
        let c = read_u32(r)? as usize;
        taps.push((name, Shape::new(h, w, c)));
    }
    Ok((taps, read_u32(r)?))
}

/// Tap names and shapes stored in a cache.
pub type TapShapes = Vec<(String, Shape)>;

/// Load frames from a cache, keeping only the taps in `keep` (all when
/// `None`).
pub fn load(
    path: impl AsRef<Path>,
    keep: Option<&[&str]>,
) -> Result<(TapShapes, Vec<FeatureMapSet>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |e: io::Error| Error::format(path, e.to_string());
    let (taps, count) = read_header(&mut r).map_err(bad)?;
    if let Some(keep) = keep {
        for k in keep {
            if !taps.iter().any(|(n, _)| n == k) {
                return Err(Error::format(path, format!("cache has no tap {k:?}")));
            }
        }
    }
    let mut frames = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let frame_index = read_u64(&mut r).map_err(bad)?;
        let mut maps = Vec::new();
        for (name, s) in &taps {
            let data = read_f32s(&mut r, s.len()).map_err(bad)?;
            if keep.is_none_or(|k| k.contains(&name.as_str())) {
                let t = Tensor::new(s.height, s.width, s.channels, data)
                    .map_err(|e| Error::format(path, e.to_string()))?;
                maps.push((name.clone(), t));
            }
        }
        frames.push(FeatureMapSet { frame_index, maps });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after the last frame"));
    }
    let kept = taps
        .into_iter()
        .filter(|(n, _)| keep.is_none_or(|k| k.contains(&n.as_str())))
        .collect();
    Ok((kept, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use filterforward_core::base::BaseNetwork;

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fffm");
        let net = BaseNetwork::build(2, 16, 16).unwrap();
        let frames: Vec<FeatureMapSet> = (0..3)
            .map(|i| {
                let t = Tensor::from_fn(16, 16, 3, |y, x, c| {
                    ((y * 7 + x * 3 + c + i) % 11) as f32 / 10.0
                });
                net.extract_frame(i as u64 + 5, &t).unwrap()
            })
            .collect();
        let mut w = FeatureCacheWriter::create(&path, &net.tap_shapes(), 3).unwrap();
        for f in &frames {
            w.write(f).unwrap();
        }
        w.finish().unwrap();
        let (taps, back) = load(&path, None).unwrap();
        assert_eq!(taps, net.tap_shapes());
        assert_eq!(back, frames);
        let (taps, only) = load(&path, Some(&["conv2"])).unwrap();
        assert_eq!(taps.len(), 1);
        assert_eq!(
            only[1].tap("conv2").unwrap(),
            frames[1].tap("conv2").unwrap()
        );
        assert!(load(&path, Some(&["conv9"])).is_err());
    }
}
