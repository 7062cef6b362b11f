//! Mesh-anchored field queries: inverse-distance interpolation of per-vertex
//! codes, the sign-indicator distance `h~`, positional encoding, and the
//! batched decoder evaluation in [`eval`].

pub mod encoding;
pub mod eval;

pub use encoding::{encoded_len, positional_encode};
pub use eval::{blend_groups, GeometryPass, Neighborhood, RadiancePass};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::model::Scene;
use crate::real::Real;
use crate::scaffold::{MeshScaffold, Neighbor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingConfig {
    /// Neighbour count.
    pub k: usize,
    /// Weight of the sign indicator against the offset direction.
    pub omega_n: f64,
    pub freq_h: usize,
    pub freq_code: usize,
    pub freq_dir: usize,
    /// Lower clamp on distances before inverting them.
    pub distance_epsilon: f64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self { k: 8, omega_n: 0.1, freq_h: 8, freq_code: 2, freq_dir: 4, distance_epsilon: 1e-8 }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if !(self.omega_n > 0.0) || !self.omega_n.is_finite() {
            return Err(Error::InvalidArgument(format!("omega_n must be positive, got {}", self.omega_n)));
        }
        if !(self.distance_epsilon > 0.0) {
            return Err(Error::InvalidArgument("distance_epsilon must be positive".into()));
        }
        if self.freq_h > 30 || self.freq_code > 30 || self.freq_dir > 30 {
            return Err(Error::InvalidArgument("frequency counts above 30 are not supported".into()));
        }
        Ok(())
    }

    pub fn geometry_input_dim(&self, code_dim: usize) -> usize {
        encoded_len(code_dim, self.freq_code) + encoded_len(1, self.freq_h)
    }

    pub fn radiance_input_dim(&self, code_dim: usize) -> usize {
        self.geometry_input_dim(code_dim) + encoded_len(3, self.freq_dir) + 3
    }
}

/// Everything the decoders see, and produce, at one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample<T> {
    pub interp_geometry_code: Vec<T>,
    /// One interpolated texture code per decoder group, ordered as `decoder_groups`.
    pub interp_texture_codes: Vec<Vec<T>>,
    pub decoder_groups: Vec<u32>,
    pub interp_signed_distance: T,
    pub sdf: T,
    pub sdf_gradient: Vec3<T>,
    pub radiance: [T; 3],
}

impl<T: Real> FieldSample<T> {
    pub fn is_finite(&self) -> bool {
        self.interp_geometry_code.iter().all(|v| v.is_finite())
            && self.interp_texture_codes.iter().flatten().all(|v| v.is_finite())
            && self.interp_signed_distance.is_finite()
            && self.sdf.is_finite()
            && self.sdf_gradient.is_finite()
            && self.radiance.iter().all(|v| v.is_finite())
    }
}

/// Raw inverse-distance weights `1 / max(d, eps)`.
#[inline]
pub fn inverse_distance<T: Real>(d: T, eps: T) -> T {
    T::one() / d.max(eps)
}

/// Normalised inverse-distance weights of a neighbour list.
pub fn idw_weights<T: Real>(neighbors: &[Neighbor<T>], eps: f64) -> Result<Vec<T>> {
    if neighbors.is_empty() {
        return Err(Error::InvalidArgument("empty neighbour list".into()));
    }
    let eps = T::of(eps);
    let mut w: Vec<T> = Vec::with_capacity(neighbors.len());
    for &(_, d) in neighbors {
        if !(d >= T::zero()) {
            return Err(Error::InvalidArgument(format!("negative or NaN neighbour distance {d}")));
        }
        w.push(inverse_distance(d, eps));
    }
    let total: T = w.iter().copied().sum();
    for v in w.iter_mut() {
        *v /= total;
    }
    Ok(w)
}

/// Inverse-distance interpolation of the rows of `values` (`V x D`) at the
/// listed neighbours.
pub fn interpolate<T: Real>(
    neighbors: &[Neighbor<T>],
    values: ndarray::ArrayView2<T>,
    cfg: &EncodingConfig,
) -> Result<Vec<T>> {
    let w = idw_weights(neighbors, cfg.distance_epsilon)?;
    let mut out = vec![T::zero(); values.ncols()];
    for (&(id, _), &wk) in neighbors.iter().zip(&w) {
        let row = values.row(id as usize);
        for (o, &v) in out.iter_mut().zip(row.iter()) {
            *o += wk * v;
        }
    }
    Ok(out)
}

/// Per-vertex signed distance `h_k` for offset `p = x - v_k` and indicator
/// `n`: `p . (w n + |p| p^) / (w + |p|)`, i.e. `(w p.n + |p|^2) / (w + |p|)`.
#[inline]
pub fn vertex_signed_distance<T: Real>(p: Vec3<T>, n: Vec3<T>, omega: T) -> T {
    let r = p.norm();
    if r == T::zero() {
        return T::zero();
    }
    (omega * p.dot(n) + r * r) / (omega + r)
}

/// Interpolated signed distance `h~(x)`.
pub fn signed_distance<T: Real>(
    neighbors: &[Neighbor<T>],
    x: Vec3<T>,
    scaffold: &MeshScaffold<T>,
    cfg: &EncodingConfig,
) -> Result<T> {
    let w = idw_weights(neighbors, cfg.distance_epsilon)?;
    let omega = T::of(cfg.omega_n);
    let mut h = T::zero();
    for (&(id, _), &wk) in neighbors.iter().zip(&w) {
        let id = id as usize;
        h += wk * vertex_signed_distance(x - scaffold.mesh.vertices[id], scaffold.indicators[id], omega);
    }
    Ok(h)
}

/// Evaluate the full field at a single point and direction.
pub fn sample_field<T: Real>(scene: &Scene<T>, x: Vec3<T>, d: Vec3<T>) -> Result<FieldSample<T>> {
    let nb = Neighborhood::query(scene.index(), &[x], scene.encoding.k);
    let geo = GeometryPass::forward(scene, &[x], &nb, true)?;
    let rad = RadiancePass::forward(scene, &nb, &geo.h, &geo.grad, &[d])?;
    let ids = nb.ids(0);
    let neighbors: Vec<Neighbor<T>> = ids.iter().copied().zip(nb.dists(0).iter().copied()).collect();
    let mut groups: Vec<u32> = Vec::new();
    for &id in ids {
        let g = scene.scaffold.decoder_ids[id as usize];
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    let mut tex = Vec::with_capacity(groups.len());
    for &g in &groups {
        let members: Vec<Neighbor<T>> =
            neighbors.iter().copied().filter(|(id, _)| scene.scaffold.decoder_ids[*id as usize] == g).collect();
        tex.push(interpolate(&members, scene.scaffold.texture_codes.view(), &scene.encoding)?);
    }
    Ok(FieldSample {
        interp_geometry_code: geo.code.row(0).to_vec(),
        interp_texture_codes: tex,
        decoder_groups: groups,
        interp_signed_distance: geo.h[0],
        sdf: geo.sdf[0],
        sdf_gradient: geo.grad[0],
        radiance: rad.colors[0],
    })
}
