//! Marching cubes with a case table generated at first use.
//!
//! For each of the 256 corner sign patterns the crossing points on each cube
//! face are paired into oriented segments (ambiguous faces keep the negative
//! corners apart), the segments are chained into closed loops along shared
//! edges, and each loop is fanned into triangles. Face pairing depends only
//! on the face's own corners, so neighbouring cubes agree and the output is
//! watertight.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scaffold::TriMesh;

/// Corner `c` sits at `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn corner_pos(c: usize) -> [f64; 3] {
    [(c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64]
}

/// The 12 cube edges as `(low corner, axis)`.
fn cube_edges() -> Vec<(usize, usize)> {
    let mut e = Vec::with_capacity(12);
    for axis in 0..3 {
        for c in 0..8 {
            if c & (1 << axis) == 0 {
                e.push((c, axis));
            }
        }
    }
    e
}

fn edge_index(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    let axis = (hi ^ lo).trailing_zeros() as usize;
    cube_edges().iter().position(|&(c, ax)| c == lo && ax == axis).expect("corners share an edge")
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn edge_mid(e: usize) -> [f64; 3] {
    let (c, axis) = cube_edges()[e];
    let mut p = corner_pos(c);
    p[axis] += 0.5;
    p
}

/// Triangles (as cube-edge triples) for one sign pattern; bit `c` set means
/// corner `c` is inside.
fn case_triangles(mask: u8) -> Vec<[u8; 3]> {
    let inside = |c: usize| mask & (1 << c) != 0;
    // next[e] = edge following e along its loop
    let mut next: [Option<usize>; 12] = [None; 12];
    for axis in 0..3 {
        for side in 0..2 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let base = side << axis;
            let ring = [base, base | (1 << u), base | (1 << u) | (1 << v), base | (1 << v)];
            let mut normal = [0.0; 3];
            normal[axis] = if side == 1 { 1.0 } else { -1.0 };
            let crossings: Vec<usize> = (0..4).filter(|&i| inside(ring[i]) != inside(ring[(i + 1) % 4])).collect();
            // pairs of (ring position i, ring position j) of crossing edges
            let pairs: Vec<(usize, usize)> = match crossings.len() {
                0 => vec![],
                2 => vec![(crossings[0], crossings[1])],
                4 => {
                    // pair each inside corner's two edges so inside corners stay separate
                    let first_in = (0..4).find(|&i| inside(ring[i])).expect("ambiguous face has inside corners");
                    let a = (first_in + 3) % 4;
                    let b = (first_in + 1) % 4;
                    vec![(a, first_in), (b, (b + 1) % 4)]
                }
                _ => unreachable!("a face has an even number of crossings"),
            };
            for (i, j) in pairs {
                let ei = edge_index(ring[i], ring[(i + 1) % 4]);
                let ej = edge_index(ring[j], ring[(j + 1) % 4]);
                // inside corners cut off by this segment
                let cut: Vec<usize> = if crossings.len() == 4 {
                    let shared = if (i + 1) % 4 == j { j } else { i };
                    vec![ring[shared]]
                } else {
                    ring.iter().copied().filter(|&c| inside(c)).collect()
                };
                let mut inner = [0.0; 3];
                for &c in &cut {
                    let p = corner_pos(c);
                    for k in 0..3 {
                        inner[k] += p[k] / cut.len() as f64;
                    }
                }
                let (pi, pj) = (edge_mid(ei), edge_mid(ej));
                let mid = [(pi[0] + pj[0]) / 2.0, (pi[1] + pj[1]) / 2.0, (pi[2] + pj[2]) / 2.0];
                // orient so that normal x direction points away from the inside corners
                let d = sub(pj, pi);
                let (from, to) = if dot(cross(normal, d), sub(inner, mid)) < 0.0 { (ei, ej) } else { (ej, ei) };
                debug_assert!(next[from].is_none());
                next[from] = Some(to);
            }
        }
    }
    let mut tris = Vec::new();
    let mut seen = [false; 12];
    for start in 0..12 {
        if seen[start] || next[start].is_none() {
            continue;
        }
        let mut lp = vec![start];
        seen[start] = true;
        let mut cur = next[start].expect("checked");
        while cur != start {
            seen[cur] = true;
            lp.push(cur);
            cur = next[cur].expect("loops are closed");
        }
        for k in 1..lp.len() - 1 {
            tris.push([lp[0] as u8, lp[k] as u8, lp[k + 1] as u8]);
        }
    }
    tris
}

fn case_table() -> &'static Vec<Vec<[u8; 3]>> {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=255u8).map(case_triangles).collect())
}

/// Extract the zero level set of `f` over the cube `[lo, hi]^3` sampled with
/// `resolution` cells per axis. Vertices are shared between cells and placed
/// by linear interpolation; triangles wind counter-clockwise seen from the
/// positive side.
pub fn marching_cubes(f: impl Fn([f64; 3]) -> f64 + Sync, resolution: usize, lo: f64, hi: f64) -> Result<TriMesh<f64>> {
    if resolution < 8 {
        return Err(Error::InvalidArgument(format!("marching cubes needs resolution >= 8, got {resolution}")));
    }
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("empty range [{lo}, {hi}]")));
    }
    let n = resolution + 1;
    let h = (hi - lo) / resolution as f64;
    let pos = |i: usize, j: usize, k: usize| [lo + i as f64 * h, lo + j as f64 * h, lo + k as f64 * h];
    let idx = |i: usize, j: usize, k: usize| (k * n + j) * n + i;
    let mut values = vec![0.0; n * n * n];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                values[idx(i, j, k)] = f(pos(i, j, k));
            }
        }
    }
    let table = case_table();
    let edges = cube_edges();
    let mut vertices: Vec<Vec3<f64>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                let corner = |c: usize| (i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                let mut mask = 0u8;
                for c in 0..8 {
                    let (a, b, cc) = corner(c);
                    if values[idx(a, b, cc)] < 0.0 {
                        mask |= 1 << c;
                    }
                }
                let tris = &table[mask as usize];
                if tris.is_empty() {
                    continue;
                }
                let mut local = [u32::MAX; 12];
                for tri in tris {
                    let mut face = [0u32; 3];
                    for (slot, &e) in tri.iter().enumerate() {
                        let e = e as usize;
                        if local[e] == u32::MAX {
                            let (c, axis) = edges[e];
                            let (a, b, cc) = corner(c);
                            let key = (idx(a, b, cc), axis);
                            local[e] = *edge_vertex.entry(key).or_insert_with(|| {
                                let mut q = [a, b, cc];
                                q[axis] += 1;
                                let v0 = values[idx(a, b, cc)];
                                let v1 = values[idx(q[0], q[1], q[2])];
                                let t = (v0 / (v0 - v1)).clamp(1e-4, 1.0 - 1e-4);
                                let p0 = pos(a, b, cc);
                                let mut p = p0;
                                p[axis] += t * h;
                                vertices.push(Vec3::from_array(p));
                                (vertices.len() - 1) as u32
                            });
                        }
                        face[slot] = local[e];
                    }
                    faces.push(face);
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::NoZeroCrossing);
    }
    TriMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(p: [f64; 3]) -> f64 {
        (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0
    }

    #[test]
    fn every_case_is_closed_and_outward() {
        for mask in 0..=255u8 {
            let tris = case_triangles(mask);
            for t in &tris {
                let p: Vec<[f64; 3]> = t.iter().map(|&e| edge_mid(e as usize)).collect();
                let nrm = cross(sub(p[1], p[0]), sub(p[2], p[0]));
                if dot(nrm, nrm) < 1e-12 {
                    continue;
                }
                // gradient of the trilinear interpolant of corner signs (-1 inside)
                let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0, (p[0][2] + p[1][2] + p[2][2]) / 3.0];
                let mut grad = [0.0; 3];
                for corner in 0..8 {
                    let v = if mask & (1 << corner) != 0 { -1.0 } else { 1.0 };
                    let q = corner_pos(corner);
                    let w = |a: usize| if q[a] == 1.0 { c[a] } else { 1.0 - c[a] };
                    let dw = |a: usize| if q[a] == 1.0 { 1.0 } else { -1.0 };
                    grad[0] += v * dw(0) * w(1) * w(2);
                    grad[1] += v * w(0) * dw(1) * w(2);
                    grad[2] += v * w(0) * w(1) * dw(2);
                }
                assert!(dot(nrm, grad) > 0.0, "mask {mask:#010b} triangle {t:?} points inward");
            }
        }
    }

    #[test]
    fn sphere_mesh_is_close_and_watertight() {
        let res = 32;
        let m = marching_cubes(sphere, res, -1.5, 1.5).unwrap();
        let cell = 3.0 / res as f64;
        for v in &m.vertices {
            assert!((v.norm() - 1.0).abs() < 2.0 * cell);
        }
        let mut count: HashMap<(u32, u32), i32> = HashMap::new();
        for f in &m.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *count.entry((a.min(b), a.max(b))).or_default() += if a < b { 1 } else { -1 };
            }
        }
        // every undirected edge is used once in each direction
        assert!(count.values().all(|&c| c == 0));
        // Euler characteristic of a sphere
        let e = count.len() as i64;
        assert_eq!(m.vertices.len() as i64 - e + m.faces.len() as i64, 2);
    }

    #[test]
    fn sphere_normals_point_outward() {
        let m = marching_cubes(sphere, 24, -1.5, 1.5).unwrap();
        let normals = m.vertex_normals().unwrap();
        for (v, n) in m.vertices.iter().zip(&normals) {
            let p = *v + *n * 1e-3;
            assert!(sphere(p.to_array()) > sphere(v.to_array()));
        }
    }

    #[test]
    fn sphere_outside_range_is_an_error() {
        let far = |p: [f64; 3]| sphere([p[0] - 10.0, p[1], p[2]]);
        assert!(matches!(marching_cubes(far, 16, -1.5, 1.5), Err(Error::NoZeroCrossing)));
    }

    #[test]
    fn finer_grid_reduces_residual() {
        let residual = |res| {
            let m = marching_cubes(sphere, res, -1.5, 1.5).unwrap();
            m.vertices.iter().map(|v| sphere(v.to_array()).abs()).fold(0.0, f64::max)
        };
        assert!(residual(32) < residual(16));
    }
}
