//! Binary dataset files holding simulated profiles with their labels.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic   8 bytes  "ALSDSET1"
//! t0      f64      first bin centre (µs)
//! delta   f64      logarithmic step
//! n_bins  u32      bins of the simulation grid
//! width   u32      stored values per sample (n_bins, a pooled size, or 0)
//! count   u64
//! count × { class u8, a f64, c f64, alpha f64, width × f32 }
//! ```
//!
//! A file with `width = 0` stores a bare parameter batch.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::{CellParams, SymmetryClass};
use crate::simulator::TofGrid;

pub const MAGIC: &[u8; 8] = b"ALSDSET1";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub cell: CellParams,
    pub intensity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: TofGrid,
    pub width: usize,
    pub records: Vec<Record>,
}

impl Dataset {
    /// A parameter-only dataset.
    pub fn from_params(grid: TofGrid, params: &[CellParams]) -> Self {
        Dataset {
            grid,
            width: 0,
            records: params
                .iter()
                .map(|&cell| Record {
                    cell,
                    intensity: Vec::new(),
                })
                .collect(),
        }
    }

    pub fn params(&self) -> Vec<CellParams> {
        self.records.iter().map(|r| r.cell).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.grid.t0.to_le_bytes())?;
        w.write_all(&self.grid.delta.to_le_bytes())?;
        w.write_all(&(self.grid.n_bins as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for r in &self.records {
            debug_assert_eq!(r.intensity.len(), self.width);
            w.write_all(&[r.cell.class.index() as u8])?;
            w.write_all(&r.cell.a.to_le_bytes())?;
            w.write_all(&r.cell.c.to_le_bytes())?;
            w.write_all(&r.cell.alpha.to_le_bytes())?;
            for &v in &r.intensity {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file)).map_err(|e| match e {
            ReadError::Io(e) => Error::io(path, e),
            ReadError::Format(detail) => Error::Format {
                path: path.to_path_buf(),
                detail,
            },
        })
    }

    fn read_from<R: Read>(mut r: R) -> Result<Self, ReadError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ReadError::Format("not a dataset file (bad magic)".into()));
        }
        let grid = TofGrid {
            t0: f64::from_le_bytes(take(&mut r)?),
            delta: f64::from_le_bytes(take(&mut r)?),
            n_bins: u32::from_le_bytes(take(&mut r)?) as usize,
        };
        let width = u32::from_le_bytes(take(&mut r)?) as usize;
        let count = u64::from_le_bytes(take(&mut r)?) as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let [class] = take::<_, 1>(&mut r)?;
            let class = SymmetryClass::from_index(class as usize)
                .map_err(|_| ReadError::Format(format!("class index {class} out of range")))?;
            let a = f64::from_le_bytes(take(&mut r)?);
            let c = f64::from_le_bytes(take(&mut r)?);
            let alpha = f64::from_le_bytes(take(&mut r)?);
            let mut intensity = Vec::with_capacity(width);
            for _ in 0..width {
                intensity.push(f32::from_le_bytes(take(&mut r)?) as f64);
            }
            records.push(Record {
                cell: CellParams { class, a, c, alpha },
                intensity,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(ReadError::Format("trailing bytes after last record".into()));
        }
        Ok(Dataset { grid, width, records })
    }
}

#[derive(Debug)]
enum ReadError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ReadError::Format("file is truncated".into())
        } else {
            ReadError::Io(e)
        }
    }
}

fn take<R: Read, const N: usize>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
