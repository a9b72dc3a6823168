//! Versioned binary checkpoints: magic `ALSMODL1`, format version (u32),
//! input/h1/h2 widths (u64 each), parameter count (u64), then every parameter
//! as a little-endian f64 in layout order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dims, ModelState};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ALSMODL1";
const VERSION: u32 = 1;

pub fn write_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let d = model.dims();
    let mut header = Vec::with_capacity(44);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    for v in [d.input, d.h1, d.h2, model.params().len()] {
        header.extend_from_slice(&(v as u64).to_le_bytes());
    }
    w.write_all(&header).map_err(io)?;
    for p in model.params() {
        w.write_all(&p.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<ModelState> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    };
    if bytes.len() < 44 || &bytes[..8] != MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[12 + 8 * i..20 + 8 * i].try_into().expect("8 bytes")) as usize;
    let dims = Dims {
        input: word(0),
        h1: word(1),
        h2: word(2),
    };
    let count = word(3);
    let body = &bytes[44..];
    if count != dims.n_params() || body.len() != count * 8 {
        return Err(bad("parameter count does not match the stored widths"));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ModelState::from_params(dims, params)
}
