//! Bounding volume hierarchy over mesh faces for ray–mesh interval queries.

use crate::geom::Vec3;
use crate::real::Real;

use super::mesh::TriMesh;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb<T> {
    lo: Vec3<T>,
    hi: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    fn empty() -> Self {
        Self { lo: Vec3::splat(T::infinity()), hi: Vec3::splat(T::neg_infinity()) }
    }

    fn grow(&mut self, p: Vec3<T>) {
        self.lo = self.lo.min(p);
        self.hi = self.hi.max(p);
    }

    /// Whether the infinite line `o + t d` passes through the (slightly
    /// inflated) box.
    fn hits_line(&self, o: Vec3<T>, inv: Vec3<T>) -> bool {
        let pad = (self.hi - self.lo).max_abs_component() * T::of(1e-6) + T::of(1e-12);
        let mut t0 = T::neg_infinity();
        let mut t1 = T::infinity();
        for a in 0..3 {
            let (lo, hi) = (self.lo[a] - pad, self.hi[a] + pad);
            if inv[a].is_infinite() {
                if o[a] < lo || o[a] > hi {
                    return false;
                }
                continue;
            }
            let ta = (lo - o[a]) * inv[a];
            let tb = (hi - o[a]) * inv[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        t0 <= t1
    }
}

#[derive(Debug, Clone)]
struct BvhNode<T> {
    bounds: Aabb<T>,
    /// Leaf when `count > 0`: faces `order[start..start + count]`.
    start: u32,
    count: u32,
    left: u32,
    right: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh<T> {
    nodes: Vec<BvhNode<T>>,
    order: Vec<u32>,
    tris: Vec<[Vec3<T>; 3]>,
}

impl<T: Real> Bvh<T> {
    pub fn build(mesh: &TriMesh<T>) -> Self {
        let tris: Vec<[Vec3<T>; 3]> = mesh.faces.iter().map(|f| f.map(|i| mesh.vertices[i as usize])).collect();
        let mut bvh = Self { nodes: Vec::new(), order: (0..tris.len() as u32).collect(), tris };
        if !bvh.tris.is_empty() {
            let centroids: Vec<Vec3<T>> =
                bvh.tris.iter().map(|t| (t[0] + t[1] + t[2]) * T::of(1.0 / 3.0)).collect();
            bvh.build_node(0, bvh.tris.len(), &centroids);
        }
        bvh
    }

    fn build_node(&mut self, start: usize, end: usize, centroids: &[Vec3<T>]) -> u32 {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &i in &self.order[start..end] {
            for p in self.tris[i as usize] {
                bounds.grow(p);
            }
            cbounds.grow(centroids[i as usize]);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(BvhNode { bounds, start: start as u32, count: (end - start) as u32, left: 0, right: 0 });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let ext = cbounds.hi - cbounds.lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis]
                .partial_cmp(&centroids[b as usize][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let left = self.build_node(start, mid, centroids);
        let right = self.build_node(mid, end, centroids);
        let node = &mut self.nodes[id as usize];
        node.count = 0;
        node.left = left;
        node.right = right;
        id
    }

    /// Minimum and maximum line parameter over every triangle crossed by the
    /// infinite line `o + t d`, or `None` if no triangle is crossed.
    pub fn line_extent(&self, o: Vec3<T>, d: Vec3<T>) -> Option<(T, T)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = d.map(|c| T::one() / c);
        let mut ext: Option<(T, T)> = None;
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            if !node.bounds.hits_line(o, inv) {
                continue;
            }
            if node.count > 0 {
                for &fi in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    if let Some(t) = intersect_line(o, d, &self.tris[fi as usize]) {
                        ext = Some(match ext {
                            None => (t, t),
                            Some((a, b)) => (a.min(t), b.max(t)),
                        });
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.left);
            }
        }
        ext
    }

    pub fn bounds(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        self.nodes.first().map(|n| (n.bounds.lo, n.bounds.hi))
    }
}

/// Möller–Trumbore, two-sided, any sign of `t`; edges count as hits.
pub fn intersect_line<T: Real>(o: Vec3<T>, d: Vec3<T>, tri: &[Vec3<T>; 3]) -> Option<T> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = d.cross(e2);
    let det = e1.dot(p);
    let scale = e1.norm() * e2.norm();
    if det.abs() <= T::epsilon() * scale {
        return None;
    }
    let inv = T::one() / det;
    let s = o - tri[0];
    let u = s.dot(p) * inv;
    let tol = T::of(1e-9);
    if u < -tol || u > T::one() + tol {
        return None;
    }
    let q = s.cross(e1);
    let v = d.dot(q) * inv;
    if v < -tol || u + v > T::one() + tol {
        return None;
    }
    Some(e2.dot(q) * inv)
}
