//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"VFCK" | version u32 | count u32 |
//!   count × ( name_len u16 | name utf-8 | rank u8 | rank × dim u32 | values )
//! ```
//!
//! Version 1 stores values as `f32`. Version 2 is identical except that values
//! are `f64`, which lets 64-bit training resume bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{ParamStore, Result, Scalar, Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"VFCK";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn version(self) -> u32 {
        match self {
            Precision::F32 => 1,
            Precision::F64 => 2,
        }
    }

    /// Storage precision that keeps `F` values exact.
    pub fn lossless_for<F: Scalar>() -> Self {
        if std::mem::size_of::<F>() == 8 {
            Precision::F64
        } else {
            Precision::F32
        }
    }
}

pub fn write_checkpoint<F: Scalar, W: Write>(
    mut w: W,
    entries: &[(&str, &Tensor<F>)],
    precision: Precision,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&precision.version().to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| TensorError::Format(format!("parameter name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        let rank = u8::try_from(t.rank()).map_err(|_| TensorError::Format(format!("rank too large for `{name}`")))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| TensorError::Format(format!("dimension too large in `{name}`")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        match precision {
            Precision::F32 => {
                for v in t.data() {
                    w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
                }
            }
            Precision::F64 => {
                for v in t.data() {
                    w.write_all(&v.as_f64().to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TensorError::Format(format!("truncated file while reading {what}")),
        _ => TensorError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<F: Scalar, R: Read>(mut r: R) -> Result<Vec<(String, Tensor<F>)>> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}, expected VFCK")));
    }
    let precision = match read_u32(&mut r, "version")? {
        1 => Precision::F32,
        2 => Precision::F64,
        v => return Err(TensorError::Format(format!("unsupported version {v}"))),
    };
    let count = read_u32(&mut r, "count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut lb = [0u8; 2];
        read_exact(&mut r, &mut lb, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(lb) as usize];
        read_exact(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| TensorError::Format("parameter name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r, "dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        match precision {
            Precision::F32 => {
                let mut raw = vec![0u8; n * 4];
                read_exact(&mut r, &mut raw, &name)?;
                data.extend(raw.chunks_exact(4).map(|b| F::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)));
            }
            Precision::F64 => {
                let mut raw = vec![0u8; n * 8];
                read_exact(&mut r, &mut raw, &name)?;
                data.extend(raw.chunks_exact(8).map(|b| F::of(f64::from_le_bytes(b.try_into().unwrap()))));
            }
        }
        let t = Tensor::new(shape, data).map_err(|e| TensorError::Format(format!("parameter `{name}`: {e}")))?;
        out.push((name, t));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(TensorError::Format("trailing bytes after last parameter".into()));
    }
    Ok(out)
}

pub fn save_checkpoint<F: Scalar>(path: impl AsRef<Path>, entries: &[(&str, &Tensor<F>)], precision: Precision) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), entries, precision)
}

pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<F>)>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

impl<F: Scalar> ParamStore<F> {
    /// Parameters as checkpoint entries, in insertion order.
    pub fn entries(&self) -> Vec<(&str, &Tensor<F>)> {
        self.iter().map(|(_, p)| (p.name.as_str(), &p.value)).collect()
    }
}
