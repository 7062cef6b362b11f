//! Closed-form least-squares similarity between corresponding point sets.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::{procrustes_rotation, Mat3, Vec3};

type V3 = Vec3<f64>;

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3<f64>,
    pub translation: V3,
}

impl Similarity {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Mat3::identity(), translation: V3::zero() }
    }

    pub fn apply(&self, p: V3) -> V3 {
        self.rotation.mul_vec(p) * self.scale + self.translation
    }
}

fn na(v: V3) -> Vector3<f64> {
    Vector3::new(v.x, v.y, v.z)
}

fn fit(src: &[V3], dst: &[V3], with_scale: bool) -> Result<Similarity> {
    if src.len() != dst.len() {
        return Err(Error::ShapeMismatch(format!("{} source vs {} target points", src.len(), dst.len())));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("alignment needs at least 3 point pairs, got {}", src.len())));
    }
    let k = src.len() as f64;
    let mu_s = src.iter().fold(V3::zero(), |a, &p| a + p) * (1.0 / k);
    let mu_d = dst.iter().fold(V3::zero(), |a, &p| a + p) * (1.0 / k);
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_s = 0.0;
    for (&s, &d) in src.iter().zip(dst) {
        let (a, b) = (na(s - mu_s), na(d - mu_d));
        cov += b * a.transpose() / k;
        scatter += a * a.transpose() / k;
        var_s += a.norm_squared() / k;
    }
    // collinear sources leave the rotation about their line undetermined
    let sv = scatter.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sv.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(var_s > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate("source points are coincident or collinear".into()));
    }
    let r = procrustes_rotation(&cov).ok_or_else(|| Error::Degenerate("point covariance is rank deficient".into()))?;
    let scale = if with_scale { (r.transpose() * cov).trace() / var_s } else { 1.0 };
    let rotation = Mat3::from_nalgebra(&r);
    let translation = mu_d - rotation.mul_vec(mu_s) * scale;
    Ok(Similarity { scale, rotation, translation })
}

/// Similarity `(s, R, t)` minimising `sum |dst - (s R src + t)|^2` with `R`
/// a proper rotation.
pub fn umeyama(src: &[V3], dst: &[V3]) -> Result<Similarity> {
    fit(src, dst, true)
}

/// Same as [`umeyama`] with the scale fixed to 1.
pub fn rigid_fit(src: &[V3], dst: &[V3]) -> Result<Similarity> {
    fit(src, dst, false)
}
