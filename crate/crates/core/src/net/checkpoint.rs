//! Binary parameter files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "UCBGMLP\0"
//! version      u32      1
//! net_count    u32
//! per net:
//!   layers     u32      L
//!   widths     (L + 1) x u32   input, hidden..., heads
//!   per layer: weights out x in f64 (row-major), then bias out x f64
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Layer, Mlp};
use crate::error::{Error, Result};
use crate::gridio::write_atomic;

pub const MAGIC: &[u8; 8] = b"UCBGMLP\0";
pub const VERSION: u32 = 1;

pub fn encode(nets: &[&Mlp]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for net in nets {
        let widths = net.architecture().widths();
        out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
        for w in widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        for v in net.to_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Mlp>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let n_layers = r.u32()? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {n_layers}")));
        }
        let widths = (0..=n_layers).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(n_layers);
        for pair in widths.windows(2) {
            let (inp, out) = (pair[0], pair[1]);
            let w = (0..inp * out).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let b = (0..out).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((out, inp), w).expect("sized above"),
                bias: Array1::from(b),
            });
        }
        nets.push(Mlp::from_layers(layers)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(nets)
}

pub fn write(path: &Path, nets: &[&Mlp]) -> Result<()> {
    write_atomic(path, &encode(nets))
}

pub fn read(path: &Path) -> Result<Vec<Mlp>> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, Architecture};

    #[test]
    fn encode_decode_is_bit_exact() {
        let a = init_params(1, &Architecture::standard(7, 3));
        let b = init_params(2, &Architecture::new(4, vec![5], 1));
        let bytes = encode(&[&a, &b]);
        assert_eq!(&bytes[..8], MAGIC);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let a = init_params(1, &Architecture::standard(3, 1));
        let mut bytes = encode(&[&a]);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
    }
}
