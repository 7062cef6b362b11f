//! Depth sampling along rays: stratified coarse samples and single-pass
//! importance upsampling from the coarse compositing weights.

use rand::Rng;

use super::composite::alphas;
use crate::real::Real;
use crate::scaffold::RayBounds;

/// `n` stratified depths in `[near, far]`: one per equal sub-interval, at
/// its midpoint without `rng`, uniformly jittered inside it with one.
pub fn sample_coarse<T: Real, R: Rng>(bounds: &RayBounds<T>, n: usize, rng: Option<&mut R>) -> Vec<T> {
    if !bounds.hit || n == 0 {
        return Vec::new();
    }
    stratified(bounds.near, bounds.far, n, rng)
}

fn stratified<T: Real, R: Rng>(near: T, far: T, n: usize, mut rng: Option<&mut R>) -> Vec<T> {
    let step = (far - near) / T::of(n as f64);
    (0..n)
        .map(|i| {
            let u = match rng.as_mut() {
                Some(r) => T::of(r.gen::<f64>()),
                None => T::of(0.5),
            };
            near + step * (T::of(i as f64) + u)
        })
        .collect()
}

/// Importance-sample `n_fine` extra depths from the coarse weight
/// distribution at sharpness `s_inv`, merge with `depths` and sort. Falls
/// back to stratified samples of `[near, far]` when every weight is zero.
pub fn upsample_fine<T: Real, R: Rng>(
    depths: &[T],
    sdf: &[T],
    n_fine: usize,
    s_inv: T,
    near: T,
    far: T,
    rng: Option<&mut R>,
) -> Vec<T> {
    let mut out = depths.to_vec();
    if n_fine > 0 && !depths.is_empty() {
        out.extend(fine_depths(depths, sdf, n_fine, s_inv, near, far, rng));
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    make_strictly_increasing(&mut out);
    out
}

fn fine_depths<T: Real, R: Rng>(
    depths: &[T],
    sdf: &[T],
    n_fine: usize,
    s_inv: T,
    near: T,
    far: T,
    mut rng: Option<&mut R>,
) -> Vec<T> {
    let a = alphas(sdf, s_inv);
    // bin i spans [t_i, t_{i+1}] with mass w_i = T_i alpha_i
    let bins = depths.len().saturating_sub(1);
    let mut cdf = Vec::with_capacity(bins + 1);
    cdf.push(0.0f64);
    let mut trans = 1.0f64;
    for &ai in a.iter().take(bins) {
        let ai = ai.as_f64();
        let last = *cdf.last().expect("non-empty");
        cdf.push(last + trans * ai);
        trans *= 1.0 - ai;
    }
    let total = *cdf.last().expect("non-empty");
    if !(total > 0.0) {
        return stratified(near, far, n_fine, rng);
    }
    (0..n_fine)
        .map(|j| {
            let u = match rng.as_mut() {
                Some(r) => (j as f64 + r.gen::<f64>()) / n_fine as f64,
                None => (j as f64 + 0.5) / n_fine as f64,
            } * total;
            // first bin whose upper cdf reaches u
            let b = cdf[1..].partition_point(|&c| c < u).min(bins - 1);
            let (c0, c1) = (cdf[b], cdf[b + 1]);
            let f = if c1 > c0 { ((u - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.5 };
            depths[b] + (depths[b + 1] - depths[b]) * T::of(f)
        })
        .collect()
}

/// Nudge repeated values upward by the smallest representable amount so a
/// sorted sequence becomes strictly increasing.
fn make_strictly_increasing<T: Real>(v: &mut [T]) {
    for i in 1..v.len() {
        if v[i] <= v[i - 1] {
            let prev = v[i - 1];
            v[i] = prev + prev.abs().max(T::one()) * T::epsilon();
        }
    }
}
