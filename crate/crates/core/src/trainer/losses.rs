use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub distill: f64,
    pub photometric: f64,
    pub sign: f64,
    pub eikonal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { distill: 1.0, photometric: 1.0, sign: 0.01, eikonal: 0.01 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.distill, self.photometric, self.sign, self.eikonal].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationFlags {
    pub learnable_indicators: bool,
    pub distill: bool,
    pub finetune: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self { learnable_indicators: true, distill: true, finetune: true }
    }
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        if !self.distill && !self.finetune {
            return Err(Error::InvalidArgument("at least one of distill/finetune must be enabled".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub distill: T,
    pub photometric: T,
    pub sign: T,
    pub eikonal: T,
}

impl<T: Real> LossParts<T> {
    pub fn zero() -> Self {
        Self { distill: T::zero(), photometric: T::zero(), sign: T::zero(), eikonal: T::zero() }
    }

    pub fn named(&self) -> [(&'static str, T); 4] {
        [("L_d", self.distill), ("L_f", self.photometric), ("L_rs", self.sign), ("L_re", self.eikonal)]
    }
}

/// `sum |s - s^t| + sum ||c - c^t||`.
pub fn distill_loss<T: Real>(s: &[T], c: &[[T; 3]], s_t: &[T], c_t: &[[T; 3]]) -> Result<T> {
    if s.len() != s_t.len() || c.len() != c_t.len() || s.len() != c.len() {
        return Err(Error::ShapeMismatch(format!(
            "distillation: {} sdf / {} colour predictions vs {} / {} teacher values",
            s.len(),
            c.len(),
            s_t.len(),
            c_t.len()
        )));
    }
    let mut acc = T::zero();
    for i in 0..s.len() {
        acc += (s[i] - s_t[i]).abs();
        let d = [0, 1, 2].map(|k| c[i][k] - c_t[i][k]);
        acc += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    }
    Ok(acc)
}

/// `sum ||C^ - C||^2` over the ray batch.
pub fn photometric_loss<T: Real>(rendered: &[[T; 3]], target: &[[T; 3]]) -> Result<T> {
    if rendered.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("photometric: {} rendered vs {} target pixels", rendered.len(), target.len())));
    }
    Ok(rendered
        .iter()
        .zip(target)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).fold(T::zero(), |x, y| x + y))
        .fold(T::zero(), |x, y| x + y))
}

/// `sum_k ||n_k - n^t_k||^2`.
pub fn sign_regularizer<T: Real>(indicators: &[Vec3<T>], reference: &[Vec3<T>]) -> Result<T> {
    if indicators.len() != reference.len() {
        return Err(Error::ShapeMismatch("indicator and reference normal counts differ".into()));
    }
    Ok(indicators.iter().zip(reference).map(|(a, b)| (*a - *b).norm_squared()).fold(T::zero(), |x, y| x + y))
}

/// `sum (||g|| - 1)^2`.
pub fn eikonal_regularizer<T: Real>(gradients: &[Vec3<T>]) -> T {
    gradients.iter().map(|g| (g.norm() - T::one()).powi(2)).fold(T::zero(), |x, y| x + y)
}

/// Weighted sum of the enabled terms.
pub fn total_loss<T: Real>(parts: &LossParts<T>, w: &LossWeights, flags: &AblationFlags) -> T {
    let mut t = T::of(w.eikonal) * parts.eikonal;
    if flags.distill {
        t += T::of(w.distill) * parts.distill;
    }
    if flags.finetune {
        t += T::of(w.photometric) * parts.photometric;
    }
    if flags.learnable_indicators {
        t += T::of(w.sign) * parts.sign;
    }
    t
}
