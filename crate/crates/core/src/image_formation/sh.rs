//! Real spherical harmonics up to band 2 and diffuse shading.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// `1 / (2 sqrt(pi))`
pub const Y00: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9; // sqrt(3 / 4pi)
const C2: f64 = 1.092_548_430_592_079_2; // sqrt(15 / 4pi)
const C3: f64 = 0.315_391_565_252_520_05; // sqrt(5 / 16pi)
const C4: f64 = 0.546_274_215_296_039_6; // sqrt(15 / 16pi)

pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// The nine basis functions at a unit direction, in the order
/// `1, y, z, x, xy, yz, 3z^2-1, xz, x^2-y^2`.
#[inline]
pub fn sh_basis(n: &Vector3<f64>) -> [f64; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        Y00,
        C1 * y,
        C1 * z,
        C1 * x,
        C2 * x * y,
        C2 * y * z,
        C3 * (3.0 * z * z - 1.0),
        C2 * x * z,
        C4 * (x * x - y * y),
    ]
}

/// Per-channel `sum_b gamma_b Y_b(n)` without albedo.
#[inline]
pub fn irradiance(n: &Vector3<f64>, gamma: &[f64; 27]) -> [f64; 3] {
    let y = sh_basis(n);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = (0..9).map(|b| gamma[9 * c + b] * y[b]).sum();
    }
    out
}

/// Diffuse radiance `r * sum_b gamma_b Y_b(n)` per channel.
pub fn shade_vertex(albedo: [f64; 3], normal: &Vector3<f64>, gamma: &[f64; 27]) -> Result<[f64; 3]> {
    let len = normal.norm();
    if (len - 1.0).abs() > NORMAL_TOLERANCE {
        return Err(Error::NonUnitNormal(len));
    }
    let e = irradiance(normal, gamma);
    Ok([albedo[0] * e[0], albedo[1] * e[1], albedo[2] * e[2]])
}
