//! Z-buffered triangle rasterization with perspective-correct barycentrics.
//!
//! Pixel centers sit at half-integer coordinates. A pixel is covered when all
//! three barycentric weights are non-negative. The depth test is strict
//! less-than, so among equal depths the triangle with the lowest index wins.

use nalgebra::Vector3;

use super::camera::CameraIntrinsics;

/// Triangles with a vertex closer than this are dropped (no clipping).
pub const NEAR_PLANE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenVertex {
    pub x: f64,
    pub y: f64,
    /// Camera-space depth.
    pub z: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub triangle: u32,
    /// Perspective-correct barycentric weights of the surface point.
    pub bary: [f64; 3],
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FragmentBuffer {
    pub width: usize,
    pub height: usize,
    pub fragments: Vec<Option<Fragment>>,
}

impl FragmentBuffer {
    pub fn empty(width: usize, height: usize) -> Self {
        FragmentBuffer {
            width,
            height,
            fragments: vec![None; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<&Fragment> {
        self.fragments[y * self.width + x].as_ref()
    }

    pub fn covered(&self) -> usize {
        self.fragments.iter().filter(|f| f.is_some()).count()
    }

    /// Covered pixels in row-major order.
    pub fn iter_covered(&self) -> impl Iterator<Item = (usize, usize, &Fragment)> + '_ {
        let w = self.width;
        self.fragments
            .iter()
            .enumerate()
            .filter_map(move |(i, f)| f.as_ref().map(|f| (i % w, i / w, f)))
    }
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Rasterizes screen-space triangles; `keep(t)` filters triangles up front.
pub fn rasterize_screen(
    verts: &[ScreenVertex],
    tris: &[[u32; 3]],
    width: usize,
    height: usize,
    keep: impl Fn(usize) -> bool,
) -> FragmentBuffer {
    let mut buf = FragmentBuffer::empty(width, height);
    for (ti, tri) in tris.iter().enumerate() {
        if !keep(ti) {
            continue;
        }
        let [a, b, c] = tri.map(|i| verts[i as usize]);
        let area = edge(a.x, a.y, b.x, b.y, c.x, c.y);
        if area.abs() < 1e-12 || !area.is_finite() {
            continue;
        }
        let min_x = a.x.min(b.x).min(c.x);
        let max_x = a.x.max(b.x).max(c.x);
        let min_y = a.y.min(b.y).min(c.y);
        let max_y = a.y.max(b.y).max(c.y);
        if max_x < 0.0 || max_y < 0.0 || min_x > width as f64 || min_y > height as f64 {
            continue;
        }
        let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
        let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
        let x1 = ((max_x - 0.5).floor() as i64).min(width as i64 - 1);
        let y1 = ((max_y - 0.5).floor() as i64).min(height as i64 - 1);
        if x1 < x0 as i64 || y1 < y0 as i64 {
            continue;
        }
        let inv_area = 1.0 / area;
        let (iza, izb, izc) = (1.0 / a.z, 1.0 / b.z, 1.0 / c.z);
        for py in y0..=y1 as usize {
            let fy = py as f64 + 0.5;
            for px in x0..=x1 as usize {
                let fx = px as f64 + 0.5;
                let w0 = edge(b.x, b.y, c.x, c.y, fx, fy) * inv_area;
                let w1 = edge(c.x, c.y, a.x, a.y, fx, fy) * inv_area;
                let w2 = edge(a.x, a.y, b.x, b.y, fx, fy) * inv_area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let s = w0 * iza + w1 * izb + w2 * izc;
                let depth = 1.0 / s;
                let slot = &mut buf.fragments[py * width + px];
                if slot.is_none_or(|f| depth < f.depth) {
                    *slot = Some(Fragment {
                        triangle: ti as u32,
                        bary: [w0 * iza / s, w1 * izb / s, w2 * izc / s],
                        depth,
                    });
                }
            }
        }
    }
    buf
}

/// Projects camera-space vertices, culls back faces and triangles crossing
/// the near plane, then rasterizes.
pub fn rasterize_mesh(points: &[Vector3<f64>], tris: &[[u32; 3]], cam: &CameraIntrinsics) -> FragmentBuffer {
    let verts: Vec<ScreenVertex> = points
        .iter()
        .map(|p| {
            if p.z > NEAR_PLANE {
                let s = cam.project_unchecked(p);
                ScreenVertex { x: s.x, y: s.y, z: p.z }
            } else {
                ScreenVertex {
                    x: f64::NAN,
                    y: f64::NAN,
                    z: p.z,
                }
            }
        })
        .collect();
    rasterize_screen(&verts, tris, cam.width(), cam.height(), |t| {
        let [a, b, c] = tris[t].map(|i| points[i as usize]);
        if a.z <= NEAR_PLANE || b.z <= NEAR_PLANE || c.z <= NEAR_PLANE {
            return false;
        }
        // front faces point toward the camera at the origin
        (b - a).cross(&(c - a)).dot(&a) < 0.0
    })
}
