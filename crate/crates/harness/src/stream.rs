//! `FFVS` frame stream files: a 20-byte header (magic, version, width,
//! height, frame count, all u32 little-endian) followed by raw 8-bit RGB
//! frames in row-major order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::binio::{expect_magic, read_u32, write_u32};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FFVS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
}

impl StreamHeader {
    pub fn frame_len(&self) -> usize {
        self.width as usize * self.height as usize * 3
    }

    /// Byte offset of frame `index` within the file.
    pub fn offset(&self, index: u64) -> u64 {
        HEADER_LEN + index * self.frame_len() as u64
    }

    pub fn file_len(&self) -> u64 {
        self.offset(self.frame_count as u64)
    }

    fn write(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        write_u32(w, self.width)?;
        write_u32(w, self.height)?;
        write_u32(w, self.frame_count)
    }
}

pub struct StreamReader {
    path: PathBuf,
    file: BufReader<File>,
    header: StreamHeader,
    next: u64,
}

impl StreamReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut file = BufReader::new(file);
        let bad = |e: io::Error| Error::format(&path, e.to_string());
        expect_magic(&mut file, MAGIC).map_err(bad)?;
        let version = read_u32(&mut file).map_err(bad)?;
        if version != VERSION {
            return Err(Error::format(
                &path,
                format!("unsupported stream version {version}"),
            ));
        }
        let header = StreamHeader {
            width: read_u32(&mut file).map_err(bad)?,
            height: read_u32(&mut file).map_err(bad)?,
            frame_count: read_u32(&mut file).map_err(bad)?,
        };
        if header.width == 0 || header.height == 0 {
            return Err(Error::format(&path, "frame dimensions must be positive"));
        }
        if len != header.file_len() {
            return Err(Error::format(
                &path,
                format!(
                    "file is {len} bytes, header implies {} ({} frames of {}x{})",
                    header.file_len(),
                    header.frame_count,
                    header.width,
                    header.height
                ),
            ));
        }
        Ok(Self {
            path,
            file,
            header,
            next: 0,
        })
    }

    pub fn header(&self) -> StreamHeader {
        self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Read the next frame into `buf`; `false` at end of stream.
    pub fn next_frame(&mut self, buf: &mut Vec<u8>) -> Result<bool> {
        if self.next >= self.header.frame_count as u64 {
            return Ok(false);
        }
        buf.resize(self.header.frame_len(), 0);
        self.file
            .read_exact(buf)
            .map_err(|e| Error::io(&self.path, e))?;
        self.next += 1;
        Ok(true)
    }

    /// Random access to frame `index`. Sequential reads continue after it.
    pub fn read_frame(&mut self, index: u64, buf: &mut Vec<u8>) -> Result<()> {
        if index >= self.header.frame_count as u64 {
            return Err(Error::format(
                &self.path,
                format!(
                    "frame {index} out of range ({} frames)",
                    self.header.frame_count
                ),
            ));
        }
        self.file
            .seek(SeekFrom::Start(self.header.offset(index)))
            .map_err(|e| Error::io(&self.path, e))?;
        self.next = index;
        self.next_frame(buf).map(|_| ())
    }
}

pub struct StreamWriter {
    path: PathBuf,
    file: BufWriter<File>,
    header: StreamHeader,
    written: u32,
}

impl StreamWriter {
    pub fn create(
        path: impl AsRef<Path>,
        width: u32,
        height: u32,
        frame_count: u32,
    ) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if width == 0 || height == 0 {
            return Err(Error::format(&path, "frame dimensions must be positive"));
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut file = BufWriter::new(file);
        let header = StreamHeader {
            width,
            height,
            frame_count,
        };
        header.write(&mut file).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            file,
            header,
            written: 0,
        })
    }

    pub fn write_frame(&mut self, rgb: &[u8]) -> Result<()> {
        if rgb.len() != self.header.frame_len() {
            return Err(Error::format(
                &self.path,
                format!(
                    "frame of {} bytes, expected {}",
                    rgb.len(),
                    self.header.frame_len()
                ),
            ));
        }
        if self.written == self.header.frame_count {
            return Err(Error::format(
                &self.path,
                "more frames than declared in the header",
            ));
        }
        self.file
            .write_all(rgb)
            .map_err(|e| Error::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.frame_count {
            return Err(Error::format(
                &self.path,
                format!(
                    "wrote {} frames, header declares {}",
                    self.written, self.header.frame_count
                ),
            ));
        }
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_length_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ffvs");
        let mut w = StreamWriter::create(&path, 3, 2, 2).unwrap();
        let frames: Vec<Vec<u8>> = (0..2u8)
            .map(|i| (0..18).map(|b| b * 3 + i).collect())
            .collect();
        for f in &frames {
            w.write_frame(f).unwrap();
        }
        assert!(w.write_frame(&frames[0]).is_err());
        w.finish().unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 20 + 36);

        let mut r = StreamReader::open(&path).unwrap();
        assert_eq!(
            r.header(),
            StreamHeader {
                width: 3,
                height: 2,
                frame_count: 2
            }
        );
        let mut buf = Vec::new();
        assert!(r.next_frame(&mut buf).unwrap());
        assert_eq!(buf, frames[0]);
        r.read_frame(1, &mut buf).unwrap();
        assert_eq!(buf, frames[1]);
        assert!(!r.next_frame(&mut buf).unwrap());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            StreamReader::open(&path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn short_write_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let w = StreamWriter::create(dir.path().join("s.ffvs"), 1, 1, 2).unwrap();
        assert!(w.finish().is_err());
    }
}
