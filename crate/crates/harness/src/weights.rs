//! `FFMC` microclassifier weight files.
//!
//! Layout (little-endian): magic, version u32, arch tag u32, name, tap,
//! crop flag u8 (+ row0, col0, row1, col1 as u32 when set), window u32,
//! threshold f32, input scale f32, block count u32, then per block: name,
//! rank u32, dims u32 x rank, and the f32 values. Strings are a u32 byte
//! length followed by UTF-8.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use filterforward_core::microclassifier::{
    Architecture, McWeights, MicroclassifierSpec, ParamBlock,
};
use filterforward_core::tensor::CropRect;

use crate::binio::*;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FFMC";
pub const VERSION: u32 = 1;
const MAX_NAME: usize = 4096;
const MAX_RANK: u32 = 8;

pub fn write_spec(w: &mut impl Write, spec: &MicroclassifierSpec) -> io::Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    write_u32(w, spec.arch.tag())?;
    write_str(w, &spec.name)?;
    write_str(w, &spec.tap)?;
    match spec.crop {
        Some(r) => {
            w.write_all(&[1])?;
            for v in [r.row0, r.col0, r.row1, r.col1] {
                write_u32(w, len_u32(v)?)?;
            }
        }
        None => w.write_all(&[0])?,
    }
    write_u32(w, len_u32(spec.window)?)?;
    write_f32(w, spec.threshold)?;
    write_f32(w, spec.input_scale)?;
    let blocks = spec.weights.to_blocks();
    write_u32(w, len_u32(blocks.len())?)?;
    for b in &blocks {
        write_str(w, &b.name)?;
        write_u32(w, len_u32(b.dims.len())?)?;
        for &d in &b.dims {
            write_u32(w, len_u32(d)?)?;
        }
        write_f32s(w, &b.data)?;
    }
    Ok(())
}

fn invalid(message: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, message)
}

/// Parse a weight file. The result still needs validating against the base
/// network it will read from.
pub fn read_spec(r: &mut impl Read) -> io::Result<MicroclassifierSpec> {
    expect_magic(r, MAGIC)?;
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(invalid(format!(
            "unsupported weight file version {version}"
        )));
    }
    let tag = read_u32(r)?;
    let arch = Architecture::from_tag(tag)
        .ok_or_else(|| invalid(format!("unknown architecture tag {tag}")))?;
    let name = read_str(r, MAX_NAME)?;
    let tap = read_str(r, MAX_NAME)?;
    let crop = match read_u8(r)? {
        0 => None,
        1 => {
            let mut v = [0usize; 4];
            for x in v.iter_mut() {
                *x = read_u32(r)? as usize;
            }
            Some(CropRect::new(v[0], v[1], v[2], v[3]))
        }
        other => return Err(invalid(format!("bad crop flag {other}"))),
    };
    let window = read_u32(r)? as usize;
    let threshold = read_f32(r)?;
    let input_scale = read_f32(r)?;
    let count = read_u32(r)?;
    let mut blocks = Vec::new();
    for _ in 0..count {
        let name = read_str(r, MAX_NAME)?;
        let rank = read_u32(r)?;
        if rank > MAX_RANK {
            return Err(invalid(format!("block {name:?} has rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= (1 << 30))
            .ok_or_else(|| invalid(format!("block {name:?} is too large")))?;
        let data = read_f32s(r, len)?;
        blocks.push(ParamBlock { name, dims, data });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(invalid("trailing bytes after the last block".into()));
    }
    let weights = McWeights::from_blocks(arch, &blocks).map_err(|e| invalid(e.to_string()))?;
    Ok(MicroclassifierSpec {
        name,
        arch,
        tap,
        crop,
        weights,
        threshold,
        window,
        input_scale,
    })
}

pub fn save(path: impl AsRef<Path>, spec: &MicroclassifierSpec) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_spec(&mut w, spec)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<MicroclassifierSpec> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_spec(&mut BufReader::new(file)).map_err(|e| match e.kind() {
        io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => {
            Error::format(path, e.to_string())
        }
        _ => Error::io(path, e),
    })
}
