//! Losses, the distillation + photometric fine-tuning loop, and evaluation.

mod losses;

pub use losses::{
    distill_loss, eikonal_regularizer, photometric_loss, sign_regularizer, total_loss, AblationFlags, LossParts,
    LossWeights,
};

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{GeometryPass, Neighborhood};
use crate::geom::Vec3;
use crate::image::{psnr, Image};
use crate::model::{Scene, SceneGrad};
use crate::nn::{lr_at, Adam, AdamConfig, MlpGrad};
use crate::real::Real;
use crate::render::{
    fibonacci_cameras, render_image, sample_depths, train_test_split, trace_depths, Camera, Ray, RenderConfig,
};
use crate::teacher::TeacherScene;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_rays: usize,
    pub base_lr: f64,
    pub warmup: usize,
    pub steps: usize,
    pub seed: u64,
    pub flags: AblationFlags,
    pub weights: LossWeights,
    pub render: RenderConfig,
    pub n_cameras: usize,
    pub n_test: usize,
    pub camera_radius: f64,
    pub image_size: usize,
    pub focal: f64,
    /// Steps between checkpoint callbacks; 0 disables them.
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_rays: 512,
            base_lr: 5e-4,
            warmup: 5000,
            steps: 5000,
            seed: 0,
            flags: AblationFlags::default(),
            weights: LossWeights::default(),
            render: RenderConfig::default(),
            n_cameras: 100,
            n_test: 10,
            camera_radius: 3.0,
            image_size: 128,
            focal: 140.0,
            checkpoint_every: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.flags.validate()?;
        self.weights.validate()?;
        self.render.validate()?;
        if self.batch_rays == 0 {
            return Err(Error::InvalidArgument("batch_rays must be positive".into()));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::InvalidArgument(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.n_test >= self.n_cameras {
            return Err(Error::InvalidArgument("n_test must leave at least one training camera".into()));
        }
        if self.image_size == 0 || !(self.focal > 0.0) || !(self.camera_radius > 0.0) {
            return Err(Error::InvalidArgument("camera rig needs positive size, focal and radius".into()));
        }
        Ok(())
    }
}

/// One training batch with everything that does not depend on the
/// parameters: rays, sample depths, teacher values per sample, and target
/// pixel colours.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub rays: Vec<Ray<T>>,
    pub depths: Vec<Vec<T>>,
    pub teacher_sdf: Vec<T>,
    pub teacher_color: Vec<[T; 3]>,
    pub target: Vec<[T; 3]>,
}

impl<T: Real> Batch<T> {
    /// Fill in teacher values for given rays and depths.
    pub fn from_teacher(teacher: &TeacherScene, rays: Vec<Ray<T>>, depths: Vec<Vec<T>>, background: [f64; 3]) -> Self {
        let mut teacher_sdf = Vec::new();
        let mut teacher_color = Vec::new();
        let mut target = Vec::with_capacity(rays.len());
        for (r, ds) in rays.iter().zip(&depths) {
            let o = r.origin.cast::<f64>();
            let d = r.dir.cast::<f64>();
            for &t in ds {
                let x = o + d * t.as_f64();
                teacher_sdf.push(T::of(teacher.sdf(x)));
                teacher_color.push(teacher.color(x, d).map(T::of));
            }
            target.push(teacher.shade_ray(o, d, background).map(T::of));
        }
        Self { rays, depths, teacher_sdf, teacher_color, target }
    }
}

/// Loss terms and the full parameter gradient for one batch at fixed depths.
pub fn loss_and_grad<T: Real>(
    scene: &Scene<T>,
    batch: &Batch<T>,
    weights: &LossWeights,
    flags: &AblationFlags,
    background: [f64; 3],
) -> Result<(LossParts<T>, SceneGrad<T>)> {
    let traced = trace_depths(scene, &batch.rays, batch.depths.clone(), background)?;
    let n = traced.points.len();
    if batch.teacher_sdf.len() != n || batch.teacher_color.len() != n {
        return Err(Error::ShapeMismatch("teacher values do not match the batch samples".into()));
    }
    let sc = &scene.scaffold;
    let parts = LossParts {
        distill: distill_loss(&traced.geo.sdf, &traced.rad.colors, &batch.teacher_sdf, &batch.teacher_color)?,
        photometric: photometric_loss(&traced.colors, &batch.target)?,
        sign: if flags.learnable_indicators {
            sign_regularizer(&sc.indicators, &sc.reference_normals)?
        } else {
            T::zero()
        },
        eikonal: eikonal_regularizer(&traced.geo.grad),
    };

    let (ld, lf, lrs, lre) = (
        T::of(if flags.distill { weights.distill } else { 0.0 }),
        T::of(if flags.finetune { weights.photometric } else { 0.0 }),
        T::of(if flags.learnable_indicators { weights.sign } else { 0.0 }),
        T::of(weights.eikonal),
    );

    let mut g = SceneGrad::zeros_like(scene);
    let (mut sdf_bar, mut color_bar, s_inv_bar) = if lf > T::zero() {
        let pixel_bar: Vec<[T; 3]> = traced
            .colors
            .iter()
            .zip(&batch.target)
            .map(|(c, t)| [0, 1, 2].map(|k| T::of(2.0) * lf * (c[k] - t[k])))
            .collect();
        traced.composite_backward(&pixel_bar)
    } else {
        (vec![T::zero(); n], vec![[T::zero(); 3]; n], T::zero())
    };
    g.log_sharpness = s_inv_bar * traced.s_inv;

    if ld > T::zero() {
        for i in 0..n {
            let ds = traced.geo.sdf[i] - batch.teacher_sdf[i];
            sdf_bar[i] += ld * sign(ds);
            let dc = [0, 1, 2].map(|k| traced.rad.colors[i][k] - batch.teacher_color[i][k]);
            let norm = (dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2]).sqrt();
            if norm > T::zero() {
                for k in 0..3 {
                    color_bar[i][k] += ld * dc[k] / norm;
                }
            }
        }
    }

    let mut grad_bar: Vec<Vec3<T>> = traced
        .geo
        .grad
        .iter()
        .map(|gr| {
            let norm = gr.norm();
            if norm > T::zero() {
                *gr * (T::of(2.0) * lre * (norm - T::one()) / norm)
            } else {
                Vec3::zero()
            }
        })
        .collect();
    let mut h_bar = vec![T::zero(); n];
    traced.rad.backward(scene, &color_bar, &mut g, &mut h_bar, &mut grad_bar)?;
    traced.geo.backward(scene, &sdf_bar, Some(&grad_bar), Some(&h_bar), &mut g, flags.learnable_indicators)?;

    if lrs > T::zero() {
        for (gi, (n_k, r_k)) in g.indicators.iter_mut().zip(sc.indicators.iter().zip(&sc.reference_normals)) {
            *gi += (*n_k - *r_k) * (T::of(2.0) * lrs);
        }
    }
    if !flags.learnable_indicators {
        g.indicators.iter_mut().for_each(|v| *v = Vec3::zero());
    }
    Ok((parts, g))
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Apply one Adam update to every trainable tensor of `scene`.
pub fn apply_update<T: Real>(
    scene: &mut Scene<T>,
    g: &SceneGrad<T>,
    adam: &mut Adam<T>,
    lr: T,
    flags: &AblationFlags,
) -> Result<()> {
    let sc = &mut scene.scaffold;
    adam.update("geometry_codes", slice_mut(&mut sc.geometry_codes)?, slice(&g.geometry_codes)?, lr)?;
    adam.update("texture_codes", slice_mut(&mut sc.texture_codes)?, slice(&g.texture_codes)?, lr)?;
    if flags.learnable_indicators {
        let mut flat: Vec<T> = sc.indicators.iter().flat_map(|v| v.to_array()).collect();
        let grads: Vec<T> = g.indicators.iter().flat_map(|v| v.to_array()).collect();
        adam.update("indicators", &mut flat, &grads, lr)?;
        for (v, c) in sc.indicators.iter_mut().zip(flat.chunks_exact(3)) {
            *v = Vec3::new(c[0], c[1], c[2]);
        }
    }
    update_mlp(adam, "geometry", scene.geometry.layers_mut(), &g.geometry, lr)?;
    for (j, (mlp, mg)) in scene.radiance.iter_mut().zip(&g.radiance).enumerate() {
        update_mlp(adam, &format!("radiance{j}"), mlp.layers_mut(), mg, lr)?;
    }
    let mut ls = [scene.log_sharpness];
    adam.update("log_sharpness", &mut ls, &[g.log_sharpness], lr)?;
    scene.log_sharpness = ls[0];
    Ok(())
}

fn update_mlp<T: Real>(
    adam: &mut Adam<T>,
    prefix: &str,
    layers: &mut [crate::nn::Dense<T>],
    g: &MlpGrad<T>,
    lr: T,
) -> Result<()> {
    for (i, (l, gl)) in layers.iter_mut().zip(&g.layers).enumerate() {
        adam.update(&format!("{prefix}.l{i}.weight"), slice_mut(&mut l.weight)?, slice(&gl.weight)?, lr)?;
        let b = l.bias.as_slice_mut().ok_or_else(|| Error::ShapeMismatch("bias not contiguous".into()))?;
        let gb = gl.bias.as_slice().ok_or_else(|| Error::ShapeMismatch("bias not contiguous".into()))?;
        adam.update(&format!("{prefix}.l{i}.bias"), b, gb, lr)?;
    }
    Ok(())
}

fn slice<T>(a: &ndarray::Array2<T>) -> Result<&[T]> {
    a.as_slice().ok_or_else(|| Error::ShapeMismatch("tensor not in standard layout".into()))
}

fn slice_mut<T>(a: &mut ndarray::Array2<T>) -> Result<&mut [T]> {
    a.as_slice_mut().ok_or_else(|| Error::ShapeMismatch("tensor not in standard layout".into()))
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub distill: f64,
    pub photometric: f64,
    pub sign: f64,
    pub eikonal: f64,
    pub total: f64,
    pub lr: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,L_d,L_f,L_rs,L_re,total,lr";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.distill, self.photometric, self.sign, self.eikonal, self.total, self.lr
        )
    }
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from(LOSS_CSV_HEADER);
    body.push('\n');
    for r in records {
        body.push_str(&r.csv_row());
        body.push('\n');
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Training state: the student scene, optimiser moments, camera rig and loss
/// history.
pub struct Trainer<'a, T> {
    pub scene: Scene<T>,
    pub teacher: &'a TeacherScene,
    pub cfg: TrainConfig,
    pub cameras: Vec<Camera<T>>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub history: Vec<LossRecord>,
    adam: Adam<T>,
    rng: ChaCha8Rng,
    step: usize,
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(scene: Scene<T>, teacher: &'a TeacherScene, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        teacher.validate()?;
        scene.validate()?;
        let cameras = fibonacci_cameras(cfg.n_cameras, cfg.camera_radius, cfg.image_size, cfg.image_size, cfg.focal)?;
        let (train_ids, test_ids) = train_test_split(cfg.n_cameras, cfg.n_test, cfg.seed);
        Ok(Self {
            scene,
            teacher,
            adam: Adam::new(cfg.adam),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e),
            cameras,
            train_ids,
            test_ids,
            history: Vec::new(),
            cfg,
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Draw rays through random sub-pixel positions of random training
    /// cameras and sample their depths with the current field.
    pub fn sample_batch(&mut self) -> Result<Batch<T>> {
        let n = self.cfg.batch_rays;
        let mut rays = Vec::with_capacity(n);
        let mut seeds = Vec::with_capacity(n);
        for _ in 0..n {
            let cam = &self.cameras[self.train_ids[self.rng.gen_range(0..self.train_ids.len())]];
            let u = T::of(self.rng.gen::<f64>() * cam.width as f64);
            let v = T::of(self.rng.gen::<f64>() * cam.height as f64);
            let (origin, dir) = cam.generate_ray(u, v)?;
            rays.push(Ray { origin, dir });
            seeds.push(self.rng.gen());
        }
        let depths = sample_depths(&self.scene, &rays, &self.cfg.render, &seeds)?;
        Ok(Batch::from_teacher(self.teacher, rays, depths, self.cfg.render.background))
    }

    /// One optimisation step; returns the logged losses.
    pub fn step(&mut self) -> Result<LossRecord> {
        let batch = self.sample_batch()?;
        let flags = self.cfg.flags;
        let (parts, g) = loss_and_grad(&self.scene, &batch, &self.cfg.weights, &flags, self.cfg.render.background)?;
        for (term, v) in parts.named() {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { step: self.step, term });
            }
        }
        let total = total_loss(&parts, &self.cfg.weights, &flags);
        let lr = lr_at(self.step, self.cfg.base_lr, self.cfg.warmup, self.cfg.steps);
        apply_update(&mut self.scene, &g, &mut self.adam, T::of(lr), &flags).map_err(|e| match e {
            Error::NonFiniteGradient(name) => Error::NonFiniteGradient(format!("{name} at step {}", self.step)),
            e => e,
        })?;
        let rec = LossRecord {
            step: self.step,
            distill: parts.distill.as_f64(),
            photometric: parts.photometric.as_f64(),
            sign: parts.sign.as_f64(),
            eikonal: parts.eikonal.as_f64(),
            total: total.as_f64(),
            lr,
        };
        self.step += 1;
        self.scene.step = self.step as u64;
        self.history.push(rec);
        Ok(rec)
    }

    /// Run the remaining steps. `on_checkpoint` is called every
    /// `checkpoint_every` steps and after the last one.
    pub fn run(&mut self, mut on_checkpoint: impl FnMut(&Scene<T>, usize) -> Result<()>) -> Result<()> {
        while self.step < self.cfg.steps {
            self.step()?;
            let every = self.cfg.checkpoint_every;
            if (every > 0 && self.step % every == 0) || self.step == self.cfg.steps {
                on_checkpoint(&self.scene, self.step)?;
            }
        }
        Ok(())
    }

    pub fn test_cameras(&self) -> Vec<Camera<T>> {
        self.test_ids.iter().map(|&i| self.cameras[i].clone()).collect()
    }
}

/// Train a student on `teacher` from an initial scene.
pub fn train<T: Real>(scene: Scene<T>, teacher: &TeacherScene, cfg: TrainConfig) -> Result<(Scene<T>, Vec<LossRecord>)> {
    let mut t = Trainer::new(scene, teacher, cfg)?;
    t.run(|_, _| Ok(()))?;
    Ok((t.scene, t.history))
}

/// Mean PSNR of student renders against teacher renders over `cameras`.
pub fn mean_psnr<T: Real>(
    scene: &Scene<T>,
    teacher: &TeacherScene,
    cameras: &[Camera<T>],
    render: &RenderConfig,
    supersample: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for cam in cameras {
        let student = render_image(scene, cam, render)?.image;
        let reference: Image = teacher.render(&cam.cast::<f64>(), render.background, supersample);
        total += psnr(&student, &reference)?;
    }
    Ok(total / cameras.len().max(1) as f64)
}

/// Mean absolute SDF error at `n` points within `band` of the teacher
/// surface, drawn by pushing random points along the teacher normal.
pub fn sdf_mae<T: Real>(scene: &Scene<T>, teacher: &TeacherScene, n: usize, band: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let verts = scene.scaffold.vertices();
    let mut pts = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    while pts.len() < n {
        // project a jittered scaffold vertex onto the teacher surface, then offset
        let v = verts[rng.gen_range(0..verts.len())].cast::<f64>();
        let j = Vec3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
        let mut x = v + j;
        for _ in 0..8 {
            x = x - teacher.sdf.normal(x) * teacher.sdf(x);
        }
        let x = x + teacher.sdf.normal(x) * rng.gen_range(-band..=band);
        let s = teacher.sdf(x);
        if s.abs() <= band {
            pts.push(x.cast::<T>());
            truth.push(s);
        }
    }
    let nb = Neighborhood::query(scene.index(), &pts, scene.encoding.k);
    let geo = GeometryPass::forward(scene, &pts, &nb, false)?;
    Ok(geo.sdf.iter().zip(&truth).map(|(s, t)| (s.as_f64() - t).abs()).sum::<f64>() / n as f64)
}
