//! Procedural closed head mesh.
//!
//! Model space uses the camera convention: x to the right, y down, z away
//! from the viewer. The face looks toward -z, so an identity rotation with a
//! positive z translation shows the head frontally.

use std::f64::consts::PI;

use nalgebra::Vector3;

/// Semi-axes of the undeformed head ellipsoid.
pub const HEAD_SEMI_AXES: [f64; 3] = [0.75, 1.0, 0.85];

/// Canonical eye socket centers, before snapping onto the surface.
pub(crate) const EYE_SOCKET_XY: [[f64; 2]; 2] = [[-0.28, -0.12], [0.28, -0.12]];
pub const EYE_RADIUS: f64 = 0.13;

pub(crate) struct HeadMesh {
    pub positions: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub uvs: Vec<[f64; 2]>,
}

/// Split `total` vertices across rings proportionally to the ring
/// circumference, at least three per ring.
fn ring_counts(total: usize, rings: usize) -> Vec<usize> {
    let weights: Vec<f64> = (0..rings)
        .map(|r| (PI * (r as f64 + 1.0) / (rings as f64 + 1.0)).sin())
        .collect();
    let spare = total - 3 * rings;
    let wsum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / wsum * spare as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| 3 + e.floor() as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    // largest remainder, lowest index first on ties
    let mut order: Vec<usize> = (0..rings).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut k = 0;
    while assigned < total {
        counts[order[k % rings]] += 1;
        assigned += 1;
        k += 1;
    }
    counts
}

fn ring_angle(j: usize, count: usize, offset: f64) -> f64 {
    2.0 * PI * (j as f64 + offset) / count as f64
}

/// Triangulates the band between two rings so that the result is closed.
fn stitch(tris: &mut Vec<[u32; 3]>, a0: usize, na: usize, oa: f64, b0: usize, nb: usize, ob: f64) {
    let (mut i, mut j) = (0usize, 0usize);
    while i < na || j < nb {
        let next_a = ring_angle(i + 1, na, oa);
        let next_b = ring_angle(j + 1, nb, ob);
        let advance_a = j == nb || (i < na && next_a <= next_b);
        let ai = (a0 + i % na) as u32;
        let bj = (b0 + j % nb) as u32;
        if advance_a {
            tris.push([ai, bj, (a0 + (i + 1) % na) as u32]);
            i += 1;
        } else {
            tris.push([ai, bj, (b0 + (j + 1) % nb) as u32]);
            j += 1;
        }
    }
}

fn smooth_bump(d2: f64, radius: f64) -> f64 {
    (-d2 / (radius * radius)).exp()
}

/// Radial deformation of the ellipsoid: nose, eye sockets, chin, brow.
fn deform(p: Vector3<f64>) -> Vector3<f64> {
    let [ax, ay, az] = HEAD_SEMI_AXES;
    let mut q = Vector3::new(p.x * ax, p.y * ay, p.z * az);
    if p.z < 0.0 {
        let front = (-p.z).powi(2);
        let mut push = 0.0;
        // nose ridge
        push += 0.15 * (-(p.x / 0.12).powi(2) - ((p.y - 0.05) / 0.25).powi(2)).exp() * front;
        // brow
        push += 0.04 * smooth_bump((p.y + 0.3).powi(2), 0.08) * front;
        // chin
        push += 0.05 * smooth_bump(p.x.powi(2) + (p.y - 0.72).powi(2), 0.2) * front;
        for [ex, ey] in EYE_SOCKET_XY {
            let d2 = (q.x - ex).powi(2) + (q.y - ey).powi(2);
            push -= 0.06 * smooth_bump(d2, 0.16);
        }
        q.z -= push;
    }
    q
}

pub(crate) fn build_head(vertex_count: usize) -> HeadMesh {
    let body = vertex_count - 2;
    let rings = (((body as f64) / 2.0).sqrt().round() as usize).clamp(3, body / 3);
    let counts = ring_counts(body, rings);

    let mut dirs: Vec<Vector3<f64>> = Vec::with_capacity(vertex_count);
    let mut uvs = Vec::with_capacity(vertex_count);
    let mut ring_start = Vec::with_capacity(rings);
    let mut offsets = Vec::with_capacity(rings);

    // top pole is y = -1
    dirs.push(Vector3::new(0.0, -1.0, 0.0));
    uvs.push([0.5, 0.0]);
    for (r, &n) in counts.iter().enumerate() {
        let theta = PI * (r as f64 + 1.0) / (rings as f64 + 1.0);
        let offset = if r % 2 == 0 { 0.0 } else { 0.5 };
        ring_start.push(dirs.len());
        offsets.push(offset);
        for j in 0..n {
            let phi = ring_angle(j, n, offset);
            dirs.push(Vector3::new(
                theta.sin() * phi.sin(),
                -theta.cos(),
                -theta.sin() * phi.cos(),
            ));
            uvs.push([(phi / (2.0 * PI)).clamp(0.0, 1.0), theta / PI]);
        }
    }
    let bottom = dirs.len();
    dirs.push(Vector3::new(0.0, 1.0, 0.0));
    uvs.push([0.5, 1.0]);

    let mut tris = Vec::new();
    let n0 = counts[0];
    for j in 0..n0 {
        tris.push([0, (1 + j) as u32, (1 + (j + 1) % n0) as u32]);
    }
    for r in 0..rings - 1 {
        stitch(
            &mut tris,
            ring_start[r],
            counts[r],
            offsets[r],
            ring_start[r + 1],
            counts[r + 1],
            offsets[r + 1],
        );
    }
    let last = ring_start[rings - 1];
    let nl = counts[rings - 1];
    for j in 0..nl {
        tris.push([bottom as u32, (last + j) as u32, (last + (j + 1) % nl) as u32]);
    }

    // orient every triangle outward on the convex sphere before deforming
    for t in tris.iter_mut() {
        let [a, b, c] = t.map(|i| dirs[i as usize]);
        let n = (b - a).cross(&(c - a));
        if n.dot(&(a + b + c)) < 0.0 {
            t.swap(1, 2);
        }
    }

    let positions = dirs.into_iter().map(deform).collect();
    HeadMesh {
        positions,
        triangles: tris,
        uvs,
    }
}

/// Canonical landmark targets on the face front, as (x, y) in model units.
/// Layout: 17 jaw, 10 brow, 9 nose, 12 eye, 18 mouth.
pub(crate) fn landmark_targets() -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(66);
    for k in 0..17 {
        let a = PI * (0.1 + 0.8 * k as f64 / 16.0);
        pts.push([-0.62 * a.cos(), 0.1 + 0.62 * a.sin()]);
    }
    for side in [-1.0, 1.0] {
        for k in 0..5 {
            let x = side * (0.12 + 0.08 * k as f64);
            pts.push([x, -0.33 - 0.03 * (1.0 - ((k as f64 - 2.0) / 2.0).powi(2))]);
        }
    }
    for k in 0..4 {
        pts.push([0.0, -0.1 + 0.08 * k as f64]);
    }
    for k in 0..5 {
        pts.push([-0.12 + 0.06 * k as f64, 0.25]);
    }
    for [ex, ey] in EYE_SOCKET_XY {
        for k in 0..6 {
            let a = 2.0 * PI * k as f64 / 6.0;
            pts.push([ex + 0.1 * a.cos(), ey + 0.05 * a.sin()]);
        }
    }
    for k in 0..12 {
        let a = 2.0 * PI * k as f64 / 12.0;
        pts.push([0.22 * a.cos(), 0.45 + 0.09 * a.sin()]);
    }
    for k in 0..6 {
        let a = 2.0 * PI * k as f64 / 6.0;
        pts.push([0.12 * a.cos(), 0.45 + 0.03 * a.sin()]);
    }
    debug_assert_eq!(pts.len(), 66);
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn edge_counts(tris: &[[u32; 3]]) -> HashMap<(u32, u32), usize> {
        let mut m = HashMap::new();
        for t in tris {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    #[test]
    fn ring_counts_sum_exactly() {
        for total in [62, 100, 510, 1998] {
            for rings in [3, 7, 16] {
                if total >= 3 * rings {
                    assert_eq!(ring_counts(total, rings).iter().sum::<usize>(), total);
                }
            }
        }
    }

    #[test]
    fn closed_for_many_sizes() {
        for n in [64, 65, 200, 512, 1001] {
            let mesh = build_head(n);
            assert_eq!(mesh.positions.len(), n);
            let edges = edge_counts(&mesh.triangles);
            assert!(edges.values().all(|&c| c == 2), "n = {n}");
            // Euler characteristic of a sphere
            assert_eq!(n as i64 - edges.len() as i64 + mesh.triangles.len() as i64, 2);
        }
    }
}
