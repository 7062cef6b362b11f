//! Texture painting by fine-tuning only the texture codes the painted
//! pixels see.
//!
//! Geometry is frozen during painting, so the compositing weights of every
//! ray through the (dilated) mask are fixed. They are computed once, and each
//! iteration only re-evaluates the radiance decoders at the samples that
//! carry weight.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{Neighborhood, RadiancePass};
use crate::geom::Vec3;
use crate::image::Image;
use crate::model::{Scene, SceneGrad};
use crate::nn::{Adam, AdamConfig};
use crate::real::Real;
use crate::render::{pixel_seed, sample_depths, trace_depths, Camera, Ray, RenderConfig};

#[derive(Debug, Clone)]
pub struct PaintJob<T> {
    pub camera: Camera<T>,
    /// Painted RGB image, same size as the camera.
    pub image: Image,
    /// Row-major paint mask.
    pub mask: Vec<bool>,
    /// Training rays are drawn from the mask dilated by this many pixels.
    pub dilation: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Probability of replacing a sample's view direction with a random one.
    pub augment_prob: f64,
    pub batch_rays: usize,
    pub seed: u64,
    pub render: RenderConfig,
}

impl<T: Real> PaintJob<T> {
    pub fn new(camera: Camera<T>, image: Image, mask: Vec<bool>) -> Self {
        Self {
            camera,
            image,
            mask,
            dilation: 5,
            iterations: 8000,
            lr: 0.01,
            augment_prob: 0.5,
            batch_rays: 512,
            seed: 0,
            render: RenderConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.render.validate()?;
        let (w, h) = (self.camera.width, self.camera.height);
        if self.image.width != w || self.image.height != h || self.image.channels != 3 {
            return Err(Error::Edit(format!(
                "painted image is {}x{}x{}, camera is {w}x{h}",
                self.image.width, self.image.height, self.image.channels
            )));
        }
        if self.mask.len() != w * h {
            return Err(Error::Edit(format!("mask has {} pixels, camera has {}", self.mask.len(), w * h)));
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(Error::Edit("paint mask is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_prob) || !(self.lr > 0.0) || self.batch_rays == 0 {
            return Err(Error::Edit("paint needs lr > 0, batch > 0 and augment probability in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PaintResult<T> {
    pub scene: Scene<T>,
    /// Vertices whose texture codes were optimised, ascending.
    pub affected: Vec<u32>,
    /// Photometric loss per iteration.
    pub losses: Vec<f64>,
}

/// Pixels within Euclidean distance `radius` of a masked pixel.
pub fn dilate_mask(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    let mut out = vec![false; mask.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            if !mask[(y * width as isize + x) as usize] {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x + dx, y + dy);
                    if dx * dx + dy * dy <= r * r && xx >= 0 && yy >= 0 && xx < width as isize && yy < height as isize {
                        out[(yy * width as isize + xx) as usize] = true;
                    }
                }
            }
        }
    }
    out
}

/// Cached per-sample state of one training ray.
#[derive(Debug, Clone)]
struct CachedRay<T> {
    target: [T; 3],
    /// Background weight `1 - sum w`.
    bg_weight: T,
    samples: Vec<CachedSample<T>>,
}

#[derive(Debug, Clone)]
struct CachedSample<T> {
    weight: T,
    ids: Vec<u32>,
    dists: Vec<T>,
    h: T,
    grad: Vec3<T>,
    dir: Vec3<T>,
}

/// Fine-tune the texture codes seen by the painted pixels of `job.camera`.
pub fn paint_texture<T: Real>(scene: &Scene<T>, job: &PaintJob<T>) -> Result<PaintResult<T>> {
    job.validate()?;
    let cam = &job.camera;
    let (w, h) = (cam.width, cam.height);
    let dilated = dilate_mask(&job.mask, w, h, job.dilation);
    let pixels: Vec<usize> = (0..w * h).filter(|&p| dilated[p]).collect();
    let k = scene.encoding.k;
    let bg = job.render.background.map(T::of);
    let weight_floor = T::zero();

    let mut cache = Vec::with_capacity(pixels.len());
    let mut affected = BTreeSet::new();
    for chunk in pixels.chunks(256) {
        let rays: Vec<Ray<T>> = chunk
            .iter()
            .map(|&p| {
                let (origin, dir) = cam.pixel_ray(p % w, p / w);
                Ray { origin, dir }
            })
            .collect();
        let seeds: Vec<u64> = chunk.iter().map(|&p| pixel_seed(job.render.seed, p as u64)).collect();
        let depths = sample_depths(scene, &rays, &job.render, &seeds)?;
        let traced = trace_depths(scene, &rays, depths, job.render.background)?;
        let peaks = traced.peak_depths();
        for (r, &p) in chunk.iter().enumerate() {
            let px = job.image.pixel(p % w, p / w);
            let target = [T::of(px[0] as f64), T::of(px[1] as f64), T::of(px[2] as f64)];
            let mut ray = CachedRay { target, bg_weight: T::one(), samples: Vec::new() };
            if let Some(comp) = &traced.composites[r] {
                ray.bg_weight = T::one() - comp.opacity;
                for (j, s) in traced.sample_range(r).enumerate() {
                    let wgt = comp.weights[j];
                    if wgt > weight_floor {
                        ray.samples.push(CachedSample {
                            weight: wgt,
                            ids: traced.nb.ids(s).to_vec(),
                            dists: traced.nb.dists(s).to_vec(),
                            h: traced.geo.h[s],
                            grad: traced.geo.grad[s],
                            dir: traced.dirs[s],
                        });
                    }
                }
            }
            if job.mask[p] {
                if let Some(t) = peaks[r] {
                    let x = rays[r].origin + rays[r].dir * t;
                    affected.extend(scene.index().knn(x, k).iter().map(|n| n.0));
                }
            }
            cache.push(ray);
        }
    }
    if affected.is_empty() {
        return Err(Error::Edit("paint mask hits no surface".into()));
    }
    let affected: Vec<u32> = affected.into_iter().collect();

    let mut out = scene.clone();
    let d = scene.scaffold.code_dim();
    let mut params: Vec<T> = affected.iter().flat_map(|&v| scene.scaffold.texture_codes.row(v as usize).to_vec()).collect();
    let mut adam = Adam::new(AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let mut losses = Vec::with_capacity(job.iterations);
    for step in 0..job.iterations {
        let batch: Vec<usize> = (0..job.batch_rays).map(|_| rng.gen_range(0..cache.len())).collect();
        let mut ids = Vec::new();
        let mut dists = Vec::new();
        let mut hs = Vec::new();
        let mut grads = Vec::new();
        let mut dirs = Vec::new();
        for &b in &batch {
            for s in &cache[b].samples {
                ids.extend_from_slice(&s.ids);
                dists.extend_from_slice(&s.dists);
                hs.push(s.h);
                grads.push(s.grad);
                let dir = if job.augment_prob > 0.0 && rng.gen::<f64>() < job.augment_prob {
                    random_view_dir(&mut rng, s.grad).unwrap_or(s.dir)
                } else {
                    s.dir
                };
                dirs.push(dir);
            }
        }
        let mut loss = T::zero();
        let mut color_bar = Vec::with_capacity(hs.len());
        let colors = if hs.is_empty() {
            None
        } else {
            let nb = Neighborhood::from_parts(k, ids, dists)?;
            Some(RadiancePass::forward(&out, &nb, &hs, &grads, &dirs)?)
        };
        let mut offset = 0;
        for &b in &batch {
            let ray = &cache[b];
            let mut c = bg.map(|v| v * ray.bg_weight);
            if let Some(rad) = &colors {
                for (j, s) in ray.samples.iter().enumerate() {
                    for ch in 0..3 {
                        c[ch] += s.weight * rad.colors[offset + j][ch];
                    }
                }
            }
            // the target is stored in f32; residuals below its precision are
            // rounding, and Adam would otherwise amplify them into full steps
            let diff = [0, 1, 2].map(|ch| {
                let d = c[ch] - ray.target[ch];
                if d.abs() <= T::of(f32::EPSILON as f64) * ray.target[ch].abs().max(T::one()) {
                    T::zero()
                } else {
                    d
                }
            });
            loss += diff.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b);
            for s in &ray.samples {
                color_bar.push(diff.map(|v| T::of(2.0) * s.weight * v));
            }
            offset += ray.samples.len();
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, term: "L_f" });
        }
        losses.push(loss.as_f64());
        let Some(rad) = colors else { continue };
        let mut g = SceneGrad::zeros_like(&out);
        let n = color_bar.len();
        rad.backward(&out, &color_bar, &mut g, &mut vec![T::zero(); n], &mut vec![Vec3::zero(); n])?;
        let grad: Vec<T> = affected.iter().flat_map(|&v| g.texture_codes.row(v as usize).to_vec()).collect();
        adam.update("texture_codes", &mut params, &grad, T::of(job.lr))?;
        for (a, &v) in affected.iter().enumerate() {
            for c in 0..d {
                out.scaffold.texture_codes[[v as usize, c]] = params[a * d + c];
            }
        }
    }
    Ok(PaintResult { scene: out, affected, losses })
}

/// Uniform direction in the hemisphere of rays that look at a surface with
/// outward gradient `grad`.
fn random_view_dir<T: Real>(rng: &mut ChaCha8Rng, grad: Vec3<T>) -> Option<Vec3<T>> {
    let inward = (-grad).try_normalize()?;
    loop {
        let v = Vec3::new(
            T::of(rng.gen_range(-1.0..1.0)),
            T::of(rng.gen_range(-1.0..1.0)),
            T::of(rng.gen_range(-1.0..1.0)),
        );
        let n2 = v.norm_squared();
        if n2 > T::of(1e-6) && n2 <= T::one() {
            let u = v * (T::one() / n2.sqrt());
            return Some(if u.dot(inward) < T::zero() { -u } else { u });
        }
    }
}
