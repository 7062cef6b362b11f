#![allow(dead_code)]

use meshfield::field::{EncodingConfig, Neighborhood};
use meshfield::render::{sample_depths, Ray, RenderConfig};
use meshfield::scaffold::TriMesh;
use meshfield::teacher::{Albedo, Sdf, Shading, TeacherScene};
use meshfield::trainer::{loss_and_grad, total_loss, AblationFlags, Batch, LossWeights};
use meshfield::{ModelConfig, Scene, SceneGrad, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        code_dim: 4,
        geometry_layers: 2,
        geometry_width: 12,
        radiance_layers: 2,
        radiance_width: 12,
        init_log_sharpness: 30f64.ln(),
        code_init_scale: 0.5,
        encoding: EncodingConfig::default(),
    }
}

/// Small f64 scene with non-trivial codes and indicators that are perturbed
/// away from the normals.
pub fn tiny_scene(mesh: TriMesh<f64>, seed: u64) -> Scene<f64> {
    let mut s = Scene::new(mesh, &tiny_config(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for n in s.scaffold.indicators.iter_mut() {
        *n = *n + Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    }
    s
}

pub fn random_point(rng: &mut impl Rng, lo: f64, hi: f64) -> Vec3<f64> {
    loop {
        let p = Vec3::new(rng.gen_range(-hi..hi), rng.gen_range(-hi..hi), rng.gen_range(-hi..hi));
        let r = p.norm();
        if r >= lo && r <= hi {
            return p;
        }
    }
}

pub fn random_unit(rng: &mut impl Rng) -> Vec3<f64> {
    random_point(rng, 0.5, 1.0).normalize()
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn checker_sphere_teacher() -> TeacherScene {
    TeacherScene::new(
        Sdf::unit_sphere(),
        Albedo::Checker { a: [0.85, 0.35, 0.2], b: [0.2, 0.45, 0.85], cell: 0.5 },
        Shading::default(),
    )
    .unwrap()
}

/// One scalar trainable parameter of a [`Scene`].
#[derive(Debug, Clone, Copy)]
pub enum Param {
    GeometryCode(usize, usize),
    TextureCode(usize, usize),
    Indicator(usize, usize),
    GeometryWeight(usize, usize, usize),
    GeometryBias(usize, usize),
    RadianceWeight(usize, usize, usize, usize),
    LogSharpness,
}

impl Param {
    pub fn get(&self, s: &Scene<f64>) -> f64 {
        match *self {
            Param::GeometryCode(v, c) => s.scaffold.geometry_codes[[v, c]],
            Param::TextureCode(v, c) => s.scaffold.texture_codes[[v, c]],
            Param::Indicator(v, a) => s.scaffold.indicators[v][a],
            Param::GeometryWeight(l, i, j) => s.geometry.layers()[l].weight[[i, j]],
            Param::GeometryBias(l, i) => s.geometry.layers()[l].bias[i],
            Param::RadianceWeight(d, l, i, j) => s.radiance[d].layers()[l].weight[[i, j]],
            Param::LogSharpness => s.log_sharpness,
        }
    }

    pub fn set(&self, s: &mut Scene<f64>, x: f64) {
        match *self {
            Param::GeometryCode(v, c) => s.scaffold.geometry_codes[[v, c]] = x,
            Param::TextureCode(v, c) => s.scaffold.texture_codes[[v, c]] = x,
            Param::Indicator(v, a) => {
                let mut n = s.scaffold.indicators[v].to_array();
                n[a] = x;
                s.scaffold.indicators[v] = Vec3::from_array(n);
            }
            Param::GeometryWeight(l, i, j) => s.geometry.layers_mut()[l].weight[[i, j]] = x,
            Param::GeometryBias(l, i) => s.geometry.layers_mut()[l].bias[i] = x,
            Param::RadianceWeight(d, l, i, j) => s.radiance[d].layers_mut()[l].weight[[i, j]] = x,
            Param::LogSharpness => s.log_sharpness = x,
        }
    }

    pub fn grad(&self, g: &SceneGrad<f64>) -> f64 {
        match *self {
            Param::GeometryCode(v, c) => g.geometry_codes[[v, c]],
            Param::TextureCode(v, c) => g.texture_codes[[v, c]],
            Param::Indicator(v, a) => g.indicators[v][a],
            Param::GeometryWeight(l, i, j) => g.geometry.layers[l].weight[[i, j]],
            Param::GeometryBias(l, i) => g.geometry.layers[l].bias[i],
            Param::RadianceWeight(d, l, i, j) => g.radiance[d].layers[l].weight[[i, j]],
            Param::LogSharpness => g.log_sharpness,
        }
    }
}

/// Tiny two-decoder scene on a 42-vertex icosphere, a few rays with their
/// sample depths and teacher values.
pub fn gradient_check_problem(seed: u64) -> (Scene<f64>, Batch<f64>) {
    let mut scene = tiny_scene(TriMesh::icosphere(1), seed);
    let mut extra = scene.radiance[0].clone();
    for l in extra.layers_mut() {
        l.weight.mapv_inplace(|w| -0.7 * w + 0.01);
    }
    scene.radiance.push(extra);
    for (i, id) in scene.scaffold.decoder_ids.iter_mut().enumerate() {
        *id = (scene.scaffold.mesh.vertices[i].x > 0.0) as u32;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
    let rays: Vec<Ray<f64>> = (0..6)
        .map(|_| {
            let origin = random_unit(&mut rng) * 3.0;
            let target = random_point(&mut rng, 0.0, 0.8);
            Ray { origin, dir: (target - origin).normalize() }
        })
        .collect();
    let cfg = RenderConfig { n_coarse: 12, n_fine: 6, ..RenderConfig::default() };
    let seeds: Vec<u64> = (0..rays.len() as u64).collect();
    let depths = sample_depths(&scene, &rays, &cfg, &seeds).unwrap();
    let batch = Batch::from_teacher(&checker_sphere_teacher(), rays, depths, cfg.background);
    (scene, batch)
}

pub fn total_of(scene: &Scene<f64>, batch: &Batch<f64>) -> f64 {
    let (w, f) = (LossWeights::default(), AblationFlags::default());
    let (parts, _) = loss_and_grad(scene, batch, &w, &f, [0.0; 3]).unwrap();
    total_loss(&parts, &w, &f)
}

/// `count` parameters spread over every tensor kind; code and indicator
/// entries come from vertices the batch actually touches.
pub fn sample_params(scene: &Scene<f64>, batch: &Batch<f64>, count: usize, seed: u64) -> Vec<Param> {
    let points: Vec<Vec3<f64>> = batch
        .rays
        .iter()
        .zip(&batch.depths)
        .flat_map(|(r, ds)| ds.iter().map(move |&t| r.origin + r.dir * t))
        .collect();
    let nb = Neighborhood::query(scene.index(), &points, scene.encoding.k);
    let mut touched: Vec<usize> = nb.all_ids().iter().map(|&i| i as usize).collect();
    touched.sort_unstable();
    touched.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = scene.scaffold.code_dim();
    let mut out = vec![Param::LogSharpness];
    while out.len() < count {
        let v = touched[rng.gen_range(0..touched.len())];
        let p = match out.len() % 6 {
            0 => Param::GeometryCode(v, rng.gen_range(0..d)),
            1 => Param::TextureCode(v, rng.gen_range(0..d)),
            2 => Param::Indicator(v, rng.gen_range(0..3)),
            3 => {
                let l = rng.gen_range(0..scene.geometry.layers().len());
                let w = &scene.geometry.layers()[l].weight;
                Param::GeometryWeight(l, rng.gen_range(0..w.nrows()), rng.gen_range(0..w.ncols()))
            }
            4 => {
                let l = rng.gen_range(0..scene.geometry.layers().len());
                Param::GeometryBias(l, rng.gen_range(0..scene.geometry.layers()[l].bias.len()))
            }
            _ => {
                let dec = rng.gen_range(0..scene.radiance.len());
                let l = rng.gen_range(0..scene.radiance[dec].layers().len());
                let w = &scene.radiance[dec].layers()[l].weight;
                Param::RadianceWeight(dec, l, rng.gen_range(0..w.nrows()), rng.gen_range(0..w.ncols()))
            }
        };
        out.push(p);
    }
    out
}

/// Largest relative error between analytic and central-difference
/// gradients of the total loss over the sampled parameters.
pub fn total_loss_gradient_error(seed: u64, count: usize) -> (f64, Vec<(Param, f64, f64)>) {
    let (mut scene, batch) = gradient_check_problem(seed);
    let (_, g) =
        loss_and_grad(&scene, &batch, &LossWeights::default(), &AblationFlags::default(), [0.0; 3]).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for p in sample_params(&scene, &batch, count, seed ^ 17) {
        let x = p.get(&scene);
        p.set(&mut scene, x + h);
        let lp = total_of(&scene, &batch);
        p.set(&mut scene, x - h);
        let lm = total_of(&scene, &batch);
        p.set(&mut scene, x);
        let fd = (lp - lm) / (2.0 * h);
        let an = p.grad(&g);
        worst = worst.max(relative_error(an, fd, 1e-6));
        rows.push((p, an, fd));
    }
    (worst, rows)
}
