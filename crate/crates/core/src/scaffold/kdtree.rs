//! K-nearest-neighbour search over vertex positions.
//!
//! Results are ordered by `(squared distance, vertex index)`, so equal
//! distances resolve to the lowest index and every query matches a brute-force
//! scan exactly.

use crate::geom::Vec3;
use crate::real::Real;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: T, left: u32, right: u32 },
}

#[derive(Debug, Clone)]
pub struct KdTree<T> {
    points: Vec<Vec3<T>>,
    perm: Vec<u32>,
    /// `points` in `perm` order, so leaves scan contiguous memory.
    leaf_points: Vec<Vec3<T>>,
    nodes: Vec<Node<T>>,
}

impl<T: Real> KdTree<T> {
    pub fn build(points: &[Vec3<T>]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            perm: (0..points.len() as u32).collect(),
            leaf_points: Vec::new(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree.leaf_points = tree.perm.iter().map(|&i| points[i as usize]).collect();
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start: start as u32, end: end as u32 });
            return id;
        }
        let (lo, hi) = self.perm[start..end].iter().fold(
            (Vec3::splat(T::infinity()), Vec3::splat(T::neg_infinity())),
            |(lo, hi), &i| (lo.min(self.points[i as usize]), hi.max(self.points[i as usize])),
        );
        let ext = hi - lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][axis]
                .partial_cmp(&points[b as usize][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let value = self.points[self.perm[mid] as usize][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id as usize] = Node::Split { axis: axis as u8, value, left, right };
        id
    }

    /// The `k` nearest points as `(index, squared distance)`, ascending.
    pub fn knn_squared(&self, x: Vec3<T>, k: usize, out: &mut Vec<(u32, T)>) {
        out.clear();
        if self.points.is_empty() || k == 0 {
            return;
        }
        let k = k.min(self.points.len());
        self.search(0, x, k, out);
    }

    fn search(&self, node: u32, x: Vec3<T>, k: usize, best: &mut Vec<(u32, T)>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                let (start, end) = (start as usize, end as usize);
                for (&i, &p) in self.perm[start..end].iter().zip(&self.leaf_points[start..end]) {
                    insert_sorted(best, k, i, (p - x).norm_squared());
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = x[axis as usize] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near, x, k, best);
                // points equal to the splitting plane can sit on either side
                if best.len() < k || diff * diff <= best[best.len() - 1].1 {
                    self.search(far, x, k, best);
                }
            }
        }
    }
}

#[inline]
fn precedes<T: Real>(a: (u32, T), b: (u32, T)) -> bool {
    a.1 < b.1 || (a.1 == b.1 && a.0 < b.0)
}

#[inline]
fn insert_sorted<T: Real>(best: &mut Vec<(u32, T)>, k: usize, idx: u32, d2: T) {
    let cand = (idx, d2);
    if best.len() == k {
        if !precedes(cand, best[k - 1]) {
            return;
        }
        best.pop();
    }
    let mut pos = best.len();
    while pos > 0 && precedes(cand, best[pos - 1]) {
        pos -= 1;
    }
    best.insert(pos, cand);
}

/// Reference scan: every point, sorted by `(squared distance, index)`.
pub fn brute_force_knn<T: Real>(points: &[Vec3<T>], x: Vec3<T>, k: usize) -> Vec<(u32, T)> {
    let mut all: Vec<(u32, T)> =
        points.iter().enumerate().map(|(i, p)| (i as u32, (*p - x).norm_squared())).collect();
    all.sort_by(|a, b| {
        a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
    });
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_points(n: usize, seed: u64) -> Vec<Vec3<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn singleton_tree() {
        let tree = KdTree::build(&[Vec3::new(0.5f64, 0.5, 0.5)]);
        let mut out = Vec::new();
        tree.knn_squared(Vec3::new(3.0, -1.0, 2.0), 8, &mut out);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, 0);
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        // a lattice produces many exactly equal distances
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                for k in 0..6 {
                    pts.push(Vec3::new(i as f64, j as f64, k as f64));
                }
            }
        }
        let tree = KdTree::build(&pts);
        let mut out = Vec::new();
        for q in [Vec3::new(2.5, 2.5, 2.5), Vec3::new(2.0, 3.0, 1.0), Vec3::new(0.5, 0.0, 0.5)] {
            for k in [1, 3, 8, 27] {
                tree.knn_squared(q, k, &mut out);
                assert_eq!(out, brute_force_knn(&pts, q, k));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_brute_force(n in 1usize..1000, k in 1usize..20, seed in 0u64..1000) {
            let pts = random_points(n, seed);
            let tree = KdTree::build(&pts);
            let queries = random_points(20, seed + 7);
            let mut out = Vec::new();
            for q in queries {
                tree.knn_squared(q, k, &mut out);
                prop_assert_eq!(&out, &brute_force_knn(&pts, q, k));
            }
        }
    }
}
