//! `DVPW` weights files.
//!
//! Layout (little-endian): magic, `u32` version, `u64` length and JSON
//! header (configs and seed), `u64` blob count, then per blob a `u32`
//! name length, the UTF-8 name, `u32` rank, `u64` dims and `f32` values.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::layers::Module;
use crate::network::{Network, NetworkConfig};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"DVPW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    seed: u64,
    config: NetworkConfig,
}

pub fn write_weights_to(w: &mut impl Write, net: &Network<f32>) -> Result<()> {
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_u32::<LE>(WEIGHTS_VERSION)?;
    let header = serde_json::to_vec(&Header {
        seed: net.seed,
        config: net.config(),
    })?;
    w.write_u64::<LE>(header.len() as u64)?;
    w.write_all(&header)?;
    let mut blobs = Vec::new();
    net.visit(&mut |p| blobs.push((p.name.clone(), p.shape.clone(), p.value.clone())));
    w.write_u64::<LE>(blobs.len() as u64)?;
    for (name, shape, value) in blobs {
        w.write_u32::<LE>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LE>(shape.len() as u32)?;
        for d in shape {
            w.write_u64::<LE>(d as u64)?;
        }
        for v in value {
            w.write_f32::<LE>(v)?;
        }
    }
    Ok(())
}

const MAX_HEADER: u64 = 1 << 20;
const MAX_BLOBS: u64 = 1 << 16;

pub fn read_weights_from(r: &mut impl Read) -> Result<Network<f32>> {
    let bad = |m: &str| NetError::Format(m.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(bad("missing DVPW magic"));
    }
    let version = r.read_u32::<LE>()?;
    if version != WEIGHTS_VERSION {
        return Err(NetError::Format(format!("unsupported version {version}")));
    }
    let len = r.read_u64::<LE>()?;
    if len > MAX_HEADER {
        return Err(bad("header too large"));
    }
    let mut header = vec![0u8; len as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut net = Network::new(header.config, header.seed)?;

    let count = r.read_u64::<LE>()?;
    if count > MAX_BLOBS {
        return Err(bad("too many blobs"));
    }
    let mut blobs = BTreeMap::new();
    for _ in 0..count {
        let n = r.read_u32::<LE>()? as usize;
        if n > 4096 {
            return Err(bad("blob name too long"));
        }
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("blob name is not UTF-8"))?;
        let rank = r.read_u32::<LE>()? as usize;
        if rank > 8 {
            return Err(bad("blob rank too large"));
        }
        let shape = (0..rank)
            .map(|_| r.read_u64::<LE>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad("blob too large"))?;
        if len > 1 << 30 {
            return Err(bad("blob too large"));
        }
        let mut values = vec![0f32; len];
        r.read_f32_into::<LE>(&mut values)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NetError::Format(format!("{name} holds non-finite values")));
        }
        if blobs.insert(name.clone(), (shape, values)).is_some() {
            return Err(NetError::Format(format!("duplicate blob {name}")));
        }
    }
    let mut problem = None;
    net.visit_mut(&mut |p| match blobs.remove(&p.name) {
        Some((shape, values)) if shape == p.shape => p.value = values,
        Some(_) => problem = problem.take().or(Some(format!("{} has the wrong shape", p.name))),
        None => problem = problem.take().or(Some(format!("missing blob {}", p.name))),
    });
    if let Some(m) = problem {
        return Err(NetError::Format(m));
    }
    if let Some(name) = blobs.keys().next() {
        return Err(NetError::Format(format!("unexpected blob {name}")));
    }
    Ok(net)
}

pub fn write_weights(path: impl AsRef<Path>, net: &Network<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_weights_to(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<Network<f32>> {
    read_weights_from(&mut BufReader::new(File::open(path)?))
}
