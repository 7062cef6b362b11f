//! Mesh scaffold, per-vertex attributes and the spatial queries run against
//! them.

mod bvh;
mod kdtree;
mod mesh;

pub use bvh::{intersect_line, Bvh};
pub use kdtree::{brute_force_knn, KdTree};
pub use mesh::{MeshScaffold, TriMesh};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::real::Real;

/// Neighbour record: vertex id and Euclidean distance to the query.
pub type Neighbor<T> = (u32, T);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayBounds<T> {
    pub near: T,
    pub far: T,
    pub hit: bool,
}

impl<T: Real> RayBounds<T> {
    pub fn miss() -> Self {
        Self { near: T::zero(), far: T::zero(), hit: false }
    }
}

/// Acceleration structures over a scaffold: a kd-tree on vertices and a BVH
/// on faces. Rebuild after any vertex edit.
#[derive(Debug, Clone)]
pub struct SpatialIndex<T> {
    kd: KdTree<T>,
    bvh: Bvh<T>,
    mean_edge: T,
}

impl<T: Real> SpatialIndex<T> {
    pub fn build(mesh: &TriMesh<T>) -> Result<Self> {
        if mesh.vertices.is_empty() {
            return Err(Error::EmptyMesh);
        }
        mesh.validate()?;
        Ok(Self { kd: KdTree::build(&mesh.vertices), bvh: Bvh::build(mesh), mean_edge: mesh.mean_edge_length() })
    }

    pub fn vertex_count(&self) -> usize {
        self.kd.len()
    }

    /// Default near/far padding: twice the mean edge length.
    pub fn default_margin(&self) -> T {
        self.mean_edge * T::of(2.0)
    }

    /// `min(k, V)` nearest vertices sorted by distance, ties to the lowest id.
    pub fn knn(&self, x: Vec3<T>, k: usize) -> Vec<Neighbor<T>> {
        let mut out = Vec::with_capacity(k);
        self.knn_into(x, k, &mut out);
        out
    }

    /// Allocation-free variant of [`SpatialIndex::knn`].
    pub fn knn_into(&self, x: Vec3<T>, k: usize, out: &mut Vec<Neighbor<T>>) {
        self.kd.knn_squared(x, k, out);
        for n in out.iter_mut() {
            n.1 = n.1.sqrt();
        }
    }

    /// Near/far interval of the ray against the scaffold faces, padded by
    /// `margin` and clamped to start at the origin.
    pub fn ray_bounds(&self, origin: Vec3<T>, direction: Vec3<T>, margin: T) -> Result<RayBounds<T>> {
        let len = direction.norm().as_f64();
        if (len - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("ray direction must be unit length, got norm {len}")));
        }
        Ok(match self.bvh.line_extent(origin, direction) {
            Some((t_min, t_max)) if t_max >= T::zero() => RayBounds {
                near: (t_min - margin).max(T::zero()),
                far: t_max + margin,
                hit: true,
            },
            _ => RayBounds::miss(),
        })
    }
}

/// Build the spatial index for a scaffold.
pub fn build_index<T: Real>(scaffold: &MeshScaffold<T>) -> Result<SpatialIndex<T>> {
    scaffold.validate()?;
    SpatialIndex::build(&scaffold.mesh)
}
