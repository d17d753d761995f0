//! Versioned little-endian basis file.
//!
//! Layout: magic `DVPB`, u32 version, u64 N, N_alpha, N_beta, N_delta, seed;
//! average geometry and reflectance, the three basis matrices column-major
//! and the three stddev vectors as f64; then u64-counted tables of triangles
//! (u32 triples), texture coordinates (f64 pairs), the two eye annotations
//! (vertex indices, center, radius) and the landmark vertices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector, Vector3};

use super::basis::{EyeAnnotation, FaceBasis};
use crate::error::{Error, Result};

pub const BASIS_MAGIC: &[u8; 4] = b"DVPB";
pub const BASIS_VERSION: u32 = 1;
/// Refuse absurd headers before allocating.
const MAX_ELEMENTS: u64 = 1 << 28;

fn write_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    for &x in v {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LE>(&mut v)?;
    Ok(v)
}

fn read_count(r: &mut impl Read) -> Result<usize> {
    let n = r.read_u64::<LE>()?;
    if n > MAX_ELEMENTS {
        return Err(Error::Format(format!("count {n} too large")));
    }
    Ok(n as usize)
}

fn write_u32s(w: &mut impl Write, v: &[u32]) -> Result<()> {
    w.write_u64::<LE>(v.len() as u64)?;
    for &x in v {
        w.write_u32::<LE>(x)?;
    }
    Ok(())
}

fn read_u32s(r: &mut impl Read) -> Result<Vec<u32>> {
    let n = read_count(r)?;
    let mut v = vec![0; n];
    r.read_u32_into::<LE>(&mut v)?;
    Ok(v)
}

pub fn write_basis_to(w: &mut impl Write, b: &FaceBasis) -> Result<()> {
    let d = b.dims();
    w.write_all(BASIS_MAGIC)?;
    w.write_u32::<LE>(BASIS_VERSION)?;
    for v in [
        b.vertex_count as u64,
        d.alpha as u64,
        d.beta as u64,
        d.delta as u64,
        b.seed,
    ] {
        w.write_u64::<LE>(v)?;
    }
    write_f64s(w, b.average_geometry.as_slice())?;
    write_f64s(w, b.average_reflectance.as_slice())?;
    write_f64s(w, b.geometry_basis.as_slice())?;
    write_f64s(w, b.reflectance_basis.as_slice())?;
    write_f64s(w, b.expression_basis.as_slice())?;
    write_f64s(w, &b.geometry_stddevs)?;
    write_f64s(w, &b.reflectance_stddevs)?;
    write_f64s(w, &b.expression_stddevs)?;
    let flat: Vec<u32> = b.triangles.iter().flatten().copied().collect();
    write_u32s(w, &flat)?;
    w.write_u64::<LE>(b.texture_coordinates.len() as u64)?;
    for uv in &b.texture_coordinates {
        write_f64s(w, uv)?;
    }
    for e in &b.eyes {
        write_u32s(w, &e.vertices)?;
        write_f64s(w, e.center.as_slice())?;
        w.write_f64::<LE>(e.radius)?;
    }
    write_u32s(w, &b.landmark_vertices)?;
    Ok(())
}

pub fn read_basis_from(r: &mut impl Read) -> Result<FaceBasis> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BASIS_MAGIC {
        return Err(Error::Format("not a basis file (bad magic)".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != BASIS_VERSION {
        return Err(Error::Format(format!("unsupported basis version {version}")));
    }
    let n = read_count(r)?;
    let (na, nb, nd) = (read_count(r)?, read_count(r)?, read_count(r)?);
    let seed = r.read_u64::<LE>()?;
    let rows = 3 * n;
    if (rows as u64) * (na + nb + nd) as u64 > MAX_ELEMENTS {
        return Err(Error::Format("basis header too large".into()));
    }
    let average_geometry = DVector::from_vec(read_f64s(r, rows)?);
    let average_reflectance = DVector::from_vec(read_f64s(r, rows)?);
    let geometry_basis = DMatrix::from_vec(rows, na, read_f64s(r, rows * na)?);
    let reflectance_basis = DMatrix::from_vec(rows, nb, read_f64s(r, rows * nb)?);
    let expression_basis = DMatrix::from_vec(rows, nd, read_f64s(r, rows * nd)?);
    let geometry_stddevs = read_f64s(r, na)?;
    let reflectance_stddevs = read_f64s(r, nb)?;
    let expression_stddevs = read_f64s(r, nd)?;
    let flat = read_u32s(r)?;
    if flat.len() % 3 != 0 {
        return Err(Error::Format("triangle table length not a multiple of 3".into()));
    }
    let triangles = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let nt = read_count(r)?;
    let tc = read_f64s(r, 2 * nt)?;
    let texture_coordinates = tc.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let mut read_eye = || -> Result<EyeAnnotation> {
        let vertices = read_u32s(r)?;
        let c = read_f64s(r, 3)?;
        let radius = r.read_f64::<LE>()?;
        Ok(EyeAnnotation {
            vertices,
            center: Vector3::new(c[0], c[1], c[2]),
            radius,
        })
    };
    let eyes = [read_eye()?, read_eye()?];
    let landmark_vertices = read_u32s(r)?;
    let basis = FaceBasis {
        seed,
        vertex_count: n,
        average_geometry,
        average_reflectance,
        geometry_basis,
        reflectance_basis,
        expression_basis,
        geometry_stddevs,
        reflectance_stddevs,
        expression_stddevs,
        triangles,
        texture_coordinates,
        eyes,
        landmark_vertices,
    };
    basis.validate()?;
    Ok(basis)
}

pub fn write_basis(path: impl AsRef<Path>, b: &FaceBasis) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_basis_to(&mut w, b)?;
    w.flush()?;
    Ok(())
}

pub fn read_basis(path: impl AsRef<Path>) -> Result<FaceBasis> {
    read_basis_from(&mut BufReader::new(File::open(path)?))
}
