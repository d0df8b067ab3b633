use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;

pub const MAGIC: &[u8; 6] = b"INODE1";
pub const FORMAT_VERSION: u32 = 1;

/// Named, ordered collection of learnable matrices.
///
/// Slot indices are stable and are the same indices used to bind
/// parameters onto a [`crate::numerics::Tape`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Matrix)>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.entries.push((name.into(), value));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Matrix {
        &self.entries[slot].1
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Matrix {
        &mut self.entries[slot].1
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.entries[slot].0
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|(_, m)| m.shape()).collect()
    }

    /// Total number of scalars over all matrices.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn write_binary<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, m) in &self.entries {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(m.rows() as u32).to_le_bytes())?;
            out.write_all(&(m.cols() as u32).to_le_bytes())?;
            for v in m.as_slice() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 6];
        read_exact(input, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = read_u32(input)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(input)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(input)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(input, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let rows = read_u32(input)? as usize;
            let cols = read_u32(input)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(read_f64(input)?);
            }
            let m = Matrix::from_vec(rows, cols, data).map_err(|e| Error::Format(format!("parameter {name}: {e}")))?;
            store.push(name, m);
        }
        Ok(store)
    }
}

pub(crate) fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(input, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Weight uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
pub fn init_linear<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> (Matrix, Matrix) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    let weight = Matrix::from_vec(fan_in, fan_out, data).expect("finite init");
    (weight, Matrix::zeros(1, fan_out))
}
