//! `COCOANET` network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! | field | type |
//! |---|---|
//! | magic | `b"COCOANET"` |
//! | format version | u32 (currently 1) |
//! | layer count `L` | u32 |
//! | layer dims | `L + 1` × u32 |
//! | activations | `L` × u8 (0 linear, 1 tanh, 2 relu) |
//! | bias flags | `L` × u8 (1 = layer has a bias vector) |
//! | per layer | weights `out × in` row-major f64, then bias `out` f64 if flagged |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Layer, Mlp};
use crate::binio::*;
use crate::error::{Error, Result};

pub const NET_MAGIC: &[u8; 8] = b"COCOANET";
pub const NET_VERSION: u32 = 1;

pub fn write_net<W: Write>(net: &Mlp, w: &mut W) -> Result<()> {
    write_magic(w, NET_MAGIC)?;
    write_u32(w, NET_VERSION)?;
    write_u32(w, net.layers().len() as u32)?;
    for d in net.dims() {
        write_u32(w, d as u32)?;
    }
    for l in net.layers() {
        write_u8(w, l.activation as u8)?;
    }
    for l in net.layers() {
        write_u8(w, l.has_bias() as u8)?;
    }
    for l in net.layers() {
        write_f64s(w, l.weights.as_slice().expect("standard layout"))?;
        write_f64s(w, l.bias.as_slice().expect("standard layout"))?;
    }
    Ok(())
}

pub fn read_net<R: Read>(r: &mut R) -> Result<Mlp> {
    expect_magic(r, NET_MAGIC)?;
    let version = read_u32(r)?;
    if version != NET_VERSION {
        return Err(Error::Format(format!("unsupported net version {version}")));
    }
    let n = read_u32(r)? as usize;
    if n == 0 || n > 1024 {
        return Err(Error::Format(format!("implausible layer count {n}")));
    }
    let dims = (0..=n)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let acts = (0..n)
        .map(|_| {
            let tag = read_u8(r)?;
            Activation::from_u8(tag).ok_or_else(|| Error::Format(format!("bad activation tag {tag}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let flags = (0..n).map(|_| read_u8(r)).collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(n);
    for l in 0..n {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let w = read_f64s(r, fan_in * fan_out)?;
        let weights = Array2::from_shape_vec((fan_out, fan_in), w)
            .map_err(|e| Error::Format(e.to_string()))?;
        let bias = match flags[l] {
            0 => Array1::zeros(0),
            1 => Array1::from(read_f64s(r, fan_out)?),
            f => return Err(Error::Format(format!("bad bias flag {f}"))),
        };
        layers.push(Layer {
            weights,
            bias,
            activation: acts[l],
        });
    }
    Mlp::from_layers(layers)
}

pub fn save_net(net: &Mlp, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_net(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_net(path: &Path) -> Result<Mlp> {
    let mut r = BufReader::new(File::open(path)?);
    let net = read_net(&mut r)?;
    expect_eof(&mut r)?;
    Ok(net)
}
