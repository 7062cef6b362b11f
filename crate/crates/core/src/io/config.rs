//! `key = value` text formats: run configs, cameras, plus the line-based
//! selection and correspondence files used by the editors.
//!
//! Blank lines and `#` comments are ignored everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::editor::{Correspondences, VertexSelection};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::model::ModelConfig;
use crate::render::Camera;
use crate::teacher::{Albedo, Sdf, Shading, TeacherScene};
use crate::trainer::TrainConfig;

/// `(line number, key, value)` triples of a `key = value` file.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| Error::Config { line, msg: format!("expected 'key = value', got '{body}'") })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::Config { line, msg: "empty key".into() });
        }
        if let Some(first) = seen.insert(k.clone(), line) {
            return Err(Error::Config { line, msg: format!("'{k}' already set on line {first}") });
        }
        out.push((line, k, v));
    }
    Ok(out)
}

fn bad(line: usize, key: &str, value: &str, want: &str) -> Error {
    Error::Config { line, msg: format!("{key} = '{value}': expected {want}") }
}

fn num<F: std::str::FromStr>(line: usize, key: &str, v: &str, want: &str) -> Result<F> {
    v.parse().map_err(|_| bad(line, key, v, want))
}

fn positive_usize(line: usize, key: &str, v: &str) -> Result<usize> {
    match v.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(bad(line, key, v, "a positive integer")),
    }
}

fn finite(line: usize, key: &str, v: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(bad(line, key, v, "a finite number")),
    }
}

fn positive(line: usize, key: &str, v: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(bad(line, key, v, "a positive number")),
    }
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(line, key, v, "true or false")),
    }
}

fn triple(line: usize, key: &str, v: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad(line, key, v, "three comma-separated numbers"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = finite(line, key, p).map_err(|_| bad(line, key, v, "three comma-separated numbers"))?;
    }
    Ok(out)
}

fn color(line: usize, key: &str, v: &str) -> Result<[f64; 3]> {
    let c = triple(line, key, v)?;
    if c.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(bad(line, key, v, "RGB components in [0, 1]"));
    }
    Ok(c)
}

/// Everything a CLI run needs: the analytic teacher, scaffold extraction,
/// model size, training and rendering settings, output directory.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub teacher: TeacherScene,
    /// Marching-cubes grid resolution for the scaffold.
    pub scaffold_resolution: usize,
    /// Half extent of the cube the scaffold is extracted from.
    pub scaffold_bounds: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            teacher: TeacherScene::new(
                Sdf::unit_sphere(),
                Albedo::Checker { a: [0.85, 0.35, 0.2], b: [0.2, 0.45, 0.85], cell: 0.5 },
                Shading::default(),
            )
            .expect("default teacher is valid"),
            scaffold_resolution: 32,
            scaffold_bounds: 1.5,
            model: ModelConfig::desk(),
            train: desk_train_config(),
            output: PathBuf::from("out"),
        }
    }
}

/// Training schedule for the desk-scale model: 32 + 32 samples per ray and a
/// warm-up of a tenth of the run.
pub fn desk_train_config() -> TrainConfig {
    let mut t = TrainConfig { base_lr: 5e-3, warmup: 500, ..TrainConfig::default() };
    t.render.n_coarse = 32;
    t.render.n_fine = 32;
    t
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut shape = ("sphere".to_string(), 0usize);
        let mut center = [0.0; 3];
        let mut radius = 1.0;
        let mut half = [0.5; 3];
        let mut albedo = ("checker".to_string(), 0usize);
        let (mut color_a, mut color_b) = ([0.85, 0.35, 0.2], [0.2, 0.45, 0.85]);
        let (mut cell, mut axis, mut period) = (0.5, [0.0, 1.0, 0.0], 0.5);
        let mut lines: BTreeMap<&'static str, usize> = BTreeMap::new();

        for (line, key, v) in parse_key_values(text)? {
            let group = match key.split('.').next().unwrap_or("") {
                "teacher" => "teacher",
                "scaffold" => "scaffold",
                "model" => "model",
                "train" => "train",
                "render" => "render",
                _ => "output",
            };
            lines.insert(group, line);
            let (k, v) = (key.as_str(), v.as_str());
            let t = &mut cfg.train;
            let m = &mut cfg.model;
            match k {
                "teacher.shape" => shape = (v.to_string(), line),
                "teacher.center" => center = triple(line, k, v)?,
                "teacher.radius" => radius = positive(line, k, v)?,
                "teacher.half" => half = triple(line, k, v)?,
                "teacher.albedo" => albedo = (v.to_string(), line),
                "teacher.color_a" => color_a = color(line, k, v)?,
                "teacher.color_b" => color_b = color(line, k, v)?,
                "teacher.cell" => cell = positive(line, k, v)?,
                "teacher.axis" => axis = triple(line, k, v)?,
                "teacher.period" => period = positive(line, k, v)?,
                "teacher.light" => cfg.teacher.shading.light = Vec3::<f64>::from_f64(triple(line, k, v)?).normalize().to_array(),
                "teacher.ambient" => cfg.teacher.shading.ambient = finite(line, k, v)?,
                "teacher.diffuse" => cfg.teacher.shading.diffuse = finite(line, k, v)?,
                "teacher.specular" => cfg.teacher.shading.specular = finite(line, k, v)?,
                "teacher.shininess" => cfg.teacher.shading.shininess = positive(line, k, v)?,
                "scaffold.resolution" => cfg.scaffold_resolution = positive_usize(line, k, v)?,
                "scaffold.bounds" => cfg.scaffold_bounds = positive(line, k, v)?,
                "model.code_dim" => m.code_dim = positive_usize(line, k, v)?,
                "model.geometry_layers" => m.geometry_layers = num(line, k, v, "an integer")?,
                "model.geometry_width" => m.geometry_width = positive_usize(line, k, v)?,
                "model.radiance_layers" => m.radiance_layers = num(line, k, v, "an integer")?,
                "model.radiance_width" => m.radiance_width = positive_usize(line, k, v)?,
                "model.init_sharpness" => m.init_log_sharpness = positive(line, k, v)?.ln(),
                "model.code_init_scale" => m.code_init_scale = finite(line, k, v)?.abs(),
                "model.k" => m.encoding.k = positive_usize(line, k, v)?,
                "model.omega_n" => m.encoding.omega_n = positive(line, k, v)?,
                "model.freq_h" => m.encoding.freq_h = num(line, k, v, "an integer")?,
                "model.freq_code" => m.encoding.freq_code = num(line, k, v, "an integer")?,
                "model.freq_dir" => m.encoding.freq_dir = num(line, k, v, "an integer")?,
                "train.steps" => t.steps = num(line, k, v, "an integer")?,
                "train.batch_rays" => t.batch_rays = positive_usize(line, k, v)?,
                "train.base_lr" => t.base_lr = positive(line, k, v)?,
                "train.warmup" => t.warmup = num(line, k, v, "an integer")?,
                "train.seed" => t.seed = num(line, k, v, "an unsigned integer")?,
                "train.learnable_indicators" => t.flags.learnable_indicators = boolean(line, k, v)?,
                "train.distill" => t.flags.distill = boolean(line, k, v)?,
                "train.finetune" => t.flags.finetune = boolean(line, k, v)?,
                "train.w_distill" => t.weights.distill = finite(line, k, v)?,
                "train.w_photometric" => t.weights.photometric = finite(line, k, v)?,
                "train.w_sign" => t.weights.sign = finite(line, k, v)?,
                "train.w_eikonal" => t.weights.eikonal = finite(line, k, v)?,
                "train.n_cameras" => t.n_cameras = positive_usize(line, k, v)?,
                "train.n_test" => t.n_test = num(line, k, v, "an integer")?,
                "train.camera_radius" => t.camera_radius = positive(line, k, v)?,
                "train.image_size" => t.image_size = positive_usize(line, k, v)?,
                "train.focal" => t.focal = positive(line, k, v)?,
                "train.checkpoint_every" => t.checkpoint_every = num(line, k, v, "an integer")?,
                "render.n_coarse" => t.render.n_coarse = positive_usize(line, k, v)?,
                "render.n_fine" => t.render.n_fine = num(line, k, v, "an integer")?,
                "render.background" => t.render.background = color(line, k, v)?,
                "render.jitter" => t.render.jitter = boolean(line, k, v)?,
                "render.seed" => t.render.seed = num(line, k, v, "an unsigned integer")?,
                "render.margin" => t.render.margin = Some(positive(line, k, v)?),
                "output.dir" | "output" => cfg.output = PathBuf::from(v),
                _ => return Err(Error::Config { line, msg: format!("unknown key '{k}'") }),
            }
        }

        let sdf = match shape.0.as_str() {
            "sphere" => Sdf::Sphere { center, radius },
            "box" => Sdf::Box { center, half },
            other => return Err(bad(shape.1, "teacher.shape", other, "sphere or box")),
        };
        let albedo = match albedo.0.as_str() {
            "constant" => Albedo::Constant(color_a),
            "checker" => Albedo::Checker { a: color_a, b: color_b, cell },
            "stripes" => Albedo::Stripes { a: color_a, b: color_b, axis, period },
            other => return Err(bad(albedo.1, "teacher.albedo", other, "constant, checker or stripes")),
        };
        let at = |g: &str| *lines.get(g).unwrap_or(&0);
        cfg.teacher = TeacherScene::new(sdf, albedo, cfg.teacher.shading)
            .map_err(|e| Error::Config { line: at("teacher"), msg: e.to_string() })?;
        cfg.model.validate().map_err(|e| Error::Config { line: at("model"), msg: e.to_string() })?;
        cfg.train.validate().map_err(|e| {
            let line = at("train").max(at("render"));
            Error::Config { line, msg: e.to_string() }
        })?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Pinhole camera from `eye`, `target`, `up`, `width`, `height`, `focal`
/// keys. `up` defaults to +y.
pub fn parse_camera(text: &str) -> Result<Camera<f64>> {
    let mut eye = None;
    let mut target = [0.0; 3];
    let mut up = [0.0, 1.0, 0.0];
    let (mut w, mut h, mut focal) = (None, None, None);
    let mut last = 0;
    for (line, k, v) in parse_key_values(text)? {
        last = line;
        match k.as_str() {
            "eye" => eye = Some(triple(line, &k, &v)?),
            "target" => target = triple(line, &k, &v)?,
            "up" => up = triple(line, &k, &v)?,
            "width" => w = Some(positive_usize(line, &k, &v)?),
            "height" => h = Some(positive_usize(line, &k, &v)?),
            "focal" => focal = Some(positive(line, &k, &v)?),
            _ => return Err(Error::Config { line, msg: format!("unknown camera key '{k}'") }),
        }
    }
    let missing = |name: &str| Error::Config { line: last, msg: format!("camera needs '{name}'") };
    let eye = eye.ok_or_else(|| missing("eye"))?;
    let (w, h, focal) = (w.ok_or_else(|| missing("width"))?, h.ok_or_else(|| missing("height"))?, focal.ok_or_else(|| missing("focal"))?);
    Camera::look_at(Vec3::from_f64(eye), Vec3::from_f64(target), Vec3::from_f64(up), w, h, focal)
        .map_err(|e| Error::Config { line: last, msg: e.to_string() })
}

pub fn format_camera(eye: [f64; 3], target: [f64; 3], up: [f64; 3], width: usize, height: usize, focal: f64) -> String {
    let t = |v: [f64; 3]| format!("{}, {}, {}", v[0], v[1], v[2]);
    format!(
        "eye = {}\ntarget = {}\nup = {}\nwidth = {width}\nheight = {height}\nfocal = {focal}\n",
        t(eye),
        t(target),
        t(up)
    )
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let body = l.split('#').next().unwrap_or("").trim();
        (!body.is_empty()).then(|| (i + 1, body.split_whitespace().collect()))
    })
}

/// One vertex per line: `id` or `id u v`. Either every line has a UV or
/// none does.
pub fn parse_selection(name: &str, text: &str) -> Result<VertexSelection> {
    let mut ids = Vec::new();
    let mut uvs = Vec::new();
    let mut with_uv = None;
    for (line, t) in data_lines(text) {
        let perr = |msg: String| Error::Parse { what: format!("selection {name}"), msg: format!("line {line}: {msg}") };
        let has_uv = match t.len() {
            1 => false,
            3 => true,
            n => return Err(perr(format!("expected 'id' or 'id u v', got {n} fields"))),
        };
        if *with_uv.get_or_insert(has_uv) != has_uv {
            return Err(perr("mixes lines with and without UVs".into()));
        }
        ids.push(t[0].parse::<u32>().map_err(|_| perr(format!("bad vertex id '{}'", t[0])))?);
        if has_uv {
            let u: f64 = t[1].parse().map_err(|_| perr(format!("bad u '{}'", t[1])))?;
            let v: f64 = t[2].parse().map_err(|_| perr(format!("bad v '{}'", t[2])))?;
            uvs.push([u, v]);
        }
    }
    Ok(if with_uv == Some(true) { VertexSelection::with_uvs(name, ids, uvs) } else { VertexSelection::new(name, ids) })
}

pub fn format_selection(sel: &VertexSelection) -> String {
    let mut s = format!("# {}\n", sel.name);
    for (i, id) in sel.ids.iter().enumerate() {
        match &sel.uvs {
            Some(uv) => s.push_str(&format!("{id} {} {}\n", uv[i][0], uv[i][1])),
            None => s.push_str(&format!("{id}\n")),
        }
    }
    s
}

/// One pair per line: `sx sy sz tx ty tz`.
pub fn parse_correspondences(text: &str) -> Result<Correspondences> {
    let mut pairs = Vec::new();
    for (line, t) in data_lines(text) {
        let perr = |msg: String| Error::Parse { what: "correspondences".into(), msg: format!("line {line}: {msg}") };
        if t.len() != 6 {
            return Err(perr(format!("expected 6 numbers, got {}", t.len())));
        }
        let v: Vec<f64> = t.iter().map(|s| s.parse::<f64>().map_err(|_| perr(format!("bad number '{s}'")))).collect::<Result<_>>()?;
        pairs.push((Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])));
    }
    Correspondences::new(pairs)
}

pub fn format_correspondences(c: &Correspondences) -> String {
    c.pairs.iter().map(|(a, b)| format!("{} {} {} {} {} {}\n", a.x, a.y, a.z, b.x, b.y, b.z)).collect()
}
