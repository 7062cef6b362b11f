//! Batched ray tracing through the field, and full-image rendering.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::camera::Camera;
use super::composite::{composite, composite_backward, Composite};
use super::sampling::{sample_coarse, upsample_fine};
use crate::error::Result;
use crate::field::{GeometryPass, Neighborhood, RadiancePass};
use crate::geom::Vec3;
use crate::image::Image;
use crate::model::Scene;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub dir: Vec3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub background: [f64; 3],
    pub seed: u64,
    /// Jitter sample depths inside their strata.
    pub jitter: bool,
    /// Near/far padding around the scaffold; defaults to twice the mean edge.
    pub margin: Option<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { n_coarse: 64, n_fine: 64, background: [0.0; 3], seed: 0, jitter: false, margin: None }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.n_coarse < 2 {
            return Err(crate::Error::InvalidArgument("n_coarse must be at least 2".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(crate::Error::InvalidArgument("background colour must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-pixel RNG seed, independent of evaluation order.
pub fn pixel_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Coarse + fine depths for each ray (empty for rays missing the scaffold).
pub fn sample_depths<T: Real>(scene: &Scene<T>, rays: &[Ray<T>], cfg: &RenderConfig, seeds: &[u64]) -> Result<Vec<Vec<T>>> {
    let index = scene.index();
    let margin = cfg.margin.map(T::of).unwrap_or_else(|| index.default_margin());
    let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
    let mut bounds = Vec::with_capacity(rays.len());
    let mut coarse = Vec::with_capacity(rays.len());
    for (r, rng) in rays.iter().zip(rngs.iter_mut()) {
        let b = index.ray_bounds(r.origin, r.dir, margin)?;
        coarse.push(sample_coarse(&b, cfg.n_coarse, cfg.jitter.then_some(rng)));
        bounds.push(b);
    }
    if cfg.n_fine == 0 {
        return Ok(coarse);
    }
    let points: Vec<Vec3<T>> =
        rays.iter().zip(&coarse).flat_map(|(r, ds)| ds.iter().map(move |&t| r.origin + r.dir * t)).collect();
    let nb = Neighborhood::query(index, &points, scene.encoding.k);
    let geo = GeometryPass::forward(scene, &points, &nb, false)?;
    let s_inv = scene.s_inv();
    let mut offset = 0;
    let mut out = Vec::with_capacity(rays.len());
    for ((ds, b), rng) in coarse.iter().zip(&bounds).zip(rngs.iter_mut()) {
        let sdf = &geo.sdf[offset..offset + ds.len()];
        offset += ds.len();
        out.push(if ds.is_empty() {
            Vec::new()
        } else {
            upsample_fine(ds, sdf, cfg.n_fine, s_inv, b.near, b.far, cfg.jitter.then_some(rng))
        });
    }
    Ok(out)
}

/// Field evaluations and composites for a batch of rays, retained for the
/// reverse pass.
#[derive(Debug, Clone)]
pub struct TracedRays<T> {
    /// Sample range of ray `r` is `offsets[r]..offsets[r + 1]`.
    pub offsets: Vec<usize>,
    pub depths: Vec<T>,
    pub points: Vec<Vec3<T>>,
    pub dirs: Vec<Vec3<T>>,
    pub nb: Neighborhood<T>,
    pub geo: GeometryPass<T>,
    pub rad: RadiancePass<T>,
    /// `None` for rays with fewer than two samples.
    pub composites: Vec<Option<Composite<T>>>,
    pub colors: Vec<[T; 3]>,
    pub opacity: Vec<T>,
    pub background: [T; 3],
    pub s_inv: T,
}

/// Evaluate the field at the given per-ray depths and composite.
pub fn trace_depths<T: Real>(scene: &Scene<T>, rays: &[Ray<T>], depths: Vec<Vec<T>>, background: [f64; 3]) -> Result<TracedRays<T>> {
    let mut offsets = Vec::with_capacity(rays.len() + 1);
    offsets.push(0);
    let mut flat = Vec::new();
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    for (r, ds) in rays.iter().zip(&depths) {
        for &t in ds {
            flat.push(t);
            points.push(r.origin + r.dir * t);
            dirs.push(r.dir);
        }
        offsets.push(flat.len());
    }
    let nb = Neighborhood::query(scene.index(), &points, scene.encoding.k);
    let geo = GeometryPass::forward(scene, &points, &nb, true)?;
    let rad = RadiancePass::forward(scene, &nb, &geo.h, &geo.grad, &dirs)?;
    let bg = background.map(T::of);
    let s_inv = scene.s_inv();
    let mut composites = Vec::with_capacity(rays.len());
    let mut colors = Vec::with_capacity(rays.len());
    let mut opacity = Vec::with_capacity(rays.len());
    for r in 0..rays.len() {
        let (a, b) = (offsets[r], offsets[r + 1]);
        if b - a < 2 {
            composites.push(None);
            colors.push(bg);
            opacity.push(T::zero());
            continue;
        }
        let c = composite(&geo.sdf[a..b], &rad.colors[a..b], s_inv, bg)?;
        colors.push(c.color);
        opacity.push(c.opacity);
        composites.push(Some(c));
    }
    Ok(TracedRays { offsets, depths: flat, points, dirs, nb, geo, rad, composites, colors, opacity, background: bg, s_inv })
}

pub fn trace_rays<T: Real>(scene: &Scene<T>, rays: &[Ray<T>], cfg: &RenderConfig, seeds: &[u64]) -> Result<TracedRays<T>> {
    let depths = sample_depths(scene, rays, cfg, seeds)?;
    trace_depths(scene, rays, depths, cfg.background)
}

impl<T: Real> TracedRays<T> {
    pub fn ray_count(&self) -> usize {
        self.colors.len()
    }

    pub fn sample_range(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }

    /// Pull per-pixel colour cotangents back to per-sample sdf and colour
    /// cotangents and the `s_inv` cotangent.
    pub fn composite_backward(&self, pixel_bar: &[[T; 3]]) -> (Vec<T>, Vec<[T; 3]>, T) {
        let n = self.points.len();
        let mut sdf_bar = vec![T::zero(); n];
        let mut color_bar = vec![[T::zero(); 3]; n];
        let mut s_inv_bar = T::zero();
        for (r, comp) in self.composites.iter().enumerate() {
            let Some(comp) = comp else { continue };
            let range = self.sample_range(r);
            let g = composite_backward(
                &self.geo.sdf[range.clone()],
                &self.rad.colors[range.clone()],
                self.s_inv,
                self.background,
                comp,
                pixel_bar[r],
            );
            sdf_bar[range.clone()].copy_from_slice(&g.sdf);
            color_bar[range].copy_from_slice(&g.colors);
            s_inv_bar += g.s_inv;
        }
        (sdf_bar, color_bar, s_inv_bar)
    }

    /// Depth of each ray's largest compositing weight.
    pub fn peak_depths(&self) -> Vec<Option<T>> {
        self.composites
            .iter()
            .enumerate()
            .map(|(r, c)| {
                let c = c.as_ref()?;
                let (best, w) = c.weights.iter().enumerate().fold((0, T::zero()), |acc, (i, &w)| if w > acc.1 { (i, w) } else { acc });
                (w > T::zero()).then(|| self.depths[self.offsets[r] + best])
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    /// Accumulated opacity, one channel.
    pub opacity: Image,
}

/// Render every pixel of `camera`. Rows are traced in parallel; each pixel
/// seeds its own RNG so the result does not depend on scheduling.
pub fn render_image<T: Real>(scene: &Scene<T>, camera: &Camera<T>, cfg: &RenderConfig) -> Result<RenderOutput> {
    cfg.validate()?;
    let (w, h) = (camera.width, camera.height);
    let rows: Vec<Result<(Vec<[T; 3]>, Vec<T>)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let rays: Vec<Ray<T>> = (0..w)
                .map(|x| {
                    let (origin, dir) = camera.pixel_ray(x, y);
                    Ray { origin, dir }
                })
                .collect();
            let seeds: Vec<u64> = (0..w).map(|x| pixel_seed(cfg.seed, (y * w + x) as u64)).collect();
            let traced = trace_rays(scene, &rays, cfg, &seeds)?;
            Ok((traced.colors, traced.opacity))
        })
        .collect();
    let mut image = Image::new(w, h, 3);
    let mut opacity = Image::new(w, h, 1);
    for (y, row) in rows.into_iter().enumerate() {
        let (colors, ops) = row?;
        for x in 0..w {
            let px = image.pixel_mut(x, y);
            for ch in 0..3 {
                px[ch] = colors[x][ch].as_f32();
            }
            opacity.pixel_mut(x, y)[0] = ops[x].as_f32();
        }
    }
    Ok(RenderOutput { image, opacity })
}
