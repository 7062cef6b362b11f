//! Opacity from SDF samples through the logistic CDF, and alpha compositing.

use crate::error::{Error, Result};
use crate::real::{log_sigmoid, sigmoid, Real};

/// Discrete opacities `alpha_i = max(1 - Phi(s_{i+1}) / Phi(s_i), 0)` with
/// `Phi(x) = sigmoid(s_inv x)`. The last sample has no successor and gets 0.
pub fn alphas<T: Real>(sdf: &[T], s_inv: T) -> Vec<T> {
    let mut out = vec![T::zero(); sdf.len()];
    for i in 0..sdf.len().saturating_sub(1) {
        out[i] = alpha_pair(sdf[i], sdf[i + 1], s_inv).0;
    }
    out
}

/// `(alpha, ratio)` for one interval; the ratio is computed in log space.
#[inline]
fn alpha_pair<T: Real>(s0: T, s1: T, s_inv: T) -> (T, T) {
    let ratio = (log_sigmoid(s_inv * s1) - log_sigmoid(s_inv * s0)).exp();
    ((T::one() - ratio).max(T::zero()), ratio)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composite<T> {
    pub color: [T; 3],
    pub alphas: Vec<T>,
    /// `T_i = prod_{j<i} (1 - alpha_j)`.
    pub transmittance: Vec<T>,
    /// `w_i = T_i alpha_i`.
    pub weights: Vec<T>,
    /// `sum w_i`, evaluated as `1 - T_n`.
    pub opacity: T,
}

/// Composite one ray's samples over `background`.
pub fn composite<T: Real>(sdf: &[T], colors: &[[T; 3]], s_inv: T, background: [T; 3]) -> Result<Composite<T>> {
    if sdf.len() < 2 {
        return Err(Error::InvalidArgument(format!("compositing needs at least 2 samples, got {}", sdf.len())));
    }
    if colors.len() != sdf.len() {
        return Err(Error::ShapeMismatch(format!("{} sdf values but {} colours", sdf.len(), colors.len())));
    }
    let alphas = alphas(sdf, s_inv);
    let mut transmittance = Vec::with_capacity(sdf.len());
    let mut weights = Vec::with_capacity(sdf.len());
    let mut t = T::one();
    let mut color = [T::zero(); 3];
    for (a, c) in alphas.iter().zip(colors) {
        transmittance.push(t);
        let w = t * *a;
        weights.push(w);
        for ch in 0..3 {
            color[ch] += w * c[ch];
        }
        t *= T::one() - *a;
    }
    // equals sum w_i, but cannot round past 1
    let opacity = T::one() - t;
    for ch in 0..3 {
        color[ch] += (T::one() - opacity) * background[ch];
    }
    Ok(Composite { color, alphas, transmittance, weights, opacity })
}

/// Cotangents of a composite with respect to its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeGrad<T> {
    pub sdf: Vec<T>,
    pub colors: Vec<[T; 3]>,
    pub s_inv: T,
}

/// Reverse pass of [`composite`] for pixel cotangent `color_bar`.
pub fn composite_backward<T: Real>(
    sdf: &[T],
    colors: &[[T; 3]],
    s_inv: T,
    background: [T; 3],
    comp: &Composite<T>,
    color_bar: [T; 3],
) -> CompositeGrad<T> {
    let n = sdf.len();
    let mut colors_bar = vec![[T::zero(); 3]; n];
    let mut w_bar = vec![T::zero(); n];
    for i in 0..n {
        for ch in 0..3 {
            colors_bar[i][ch] = comp.weights[i] * color_bar[ch];
            w_bar[i] += color_bar[ch] * (colors[i][ch] - background[ch]);
        }
    }
    // alpha_bar_k = T_k (w_bar_k - S_k), S_k = w_bar_{k+1} a_{k+1} + (1 - a_{k+1}) S_{k+1}
    let mut sdf_bar = vec![T::zero(); n];
    let mut s_inv_bar = T::zero();
    let mut tail = T::zero();
    for k in (0..n.saturating_sub(1)).rev() {
        let a1 = comp.alphas[k + 1];
        tail = w_bar[k + 1] * a1 + (T::one() - a1) * tail;
        let a_bar = comp.transmittance[k] * (w_bar[k] - tail);
        if comp.alphas[k] > T::zero() {
            let (s0, s1) = (sdf[k], sdf[k + 1]);
            let ratio = T::one() - comp.alphas[k];
            let g0 = T::one() - sigmoid(s_inv * s0);
            let g1 = T::one() - sigmoid(s_inv * s1);
            sdf_bar[k] += a_bar * ratio * s_inv * g0;
            sdf_bar[k + 1] -= a_bar * ratio * s_inv * g1;
            s_inv_bar -= a_bar * ratio * (s1 * g1 - s0 * g0);
        }
    }
    CompositeGrad { sdf: sdf_bar, colors: colors_bar, s_inv: s_inv_bar }
}
