//! Binary network serialization.
//!
//! Layout, little-endian throughout: magic `ONLB`, format version (u32),
//! layer count (u32), then per layer: in_dim (u32), out_dim (u32), relu flag
//! (u8), row-major weights (f64), biases (f64).

use std::io::{Read, Write};

use super::{Layer, Network};
use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const MAGIC: &[u8; 4] = b"ONLB";
pub const VERSION: u32 = 1;

pub fn write_network<W: Write>(net: &Network, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for l in net.layers() {
        w.write_all(&(l.in_dim() as u32).to_le_bytes())?;
        w.write_all(&(l.out_dim() as u32).to_le_bytes())?;
        w.write_all(&[l.relu as u8])?;
        for x in l.weight.as_slice().iter().chain(&l.bias) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    (0..n)
        .map(|_| {
            r.read_exact(&mut buf).map_err(truncated)?;
            Ok(f64::from_le_bytes(buf))
        })
        .collect()
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated network file: {e}"))
}

pub fn read_network<R: Read>(mut r: R) -> Result<Network> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let in_dim = read_u32(&mut r)? as usize;
        let out_dim = read_u32(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(truncated)?;
        let relu = match flag[0] {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("bad relu flag {v}"))),
        };
        let weight = Mat::from_vec(out_dim, in_dim, read_f64s(&mut r, in_dim * out_dim)?)?;
        let bias = read_f64s(&mut r, out_dim)?;
        layers.push(Layer::new(weight, bias, relu)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after network".into()));
    }
    Network::new(layers).map_err(|e| Error::Format(format!("invalid network: {e}")))
}
