//! Analytic teacher: exact SDFs of simple primitive trees, procedural
//! shading, a sphere-traced reference renderer and marching cubes.

mod mc;

pub use mc::marching_cubes;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::image::Image;
use crate::render::Camera;
use crate::scaffold::TriMesh;

type V3 = Vec3<f64>;

#[derive(Debug, Clone, PartialEq)]
pub enum Sdf {
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned box.
    Box { center: [f64; 3], half: [f64; 3] },
    Union(Box<Sdf>, Box<Sdf>),
    Intersection(Box<Sdf>, Box<Sdf>),
    /// Polynomial smooth minimum with blend radius `k`.
    SmoothUnion(Box<Sdf>, Box<Sdf>, f64),
}

impl Sdf {
    pub fn unit_sphere() -> Self {
        Sdf::Sphere { center: [0.0; 3], radius: 1.0 }
    }

    pub fn eval(&self, p: V3) -> f64 {
        match self {
            Sdf::Sphere { center, radius } => (p - V3::from_array(*center)).norm() - radius,
            Sdf::Box { center, half } => {
                let q = (p - V3::from_array(*center)).map(f64::abs) - V3::from_array(*half);
                q.max(V3::zero()).norm() + q.x.max(q.y).max(q.z).min(0.0)
            }
            Sdf::Union(a, b) => a.eval(p).min(b.eval(p)),
            Sdf::Intersection(a, b) => a.eval(p).max(b.eval(p)),
            Sdf::SmoothUnion(a, b, k) => {
                let (da, db) = (a.eval(p), b.eval(p));
                if *k <= 0.0 {
                    return da.min(db);
                }
                let h = (0.5 + 0.5 * (db - da) / k).clamp(0.0, 1.0);
                db + (da - db) * h - k * h * (1.0 - h)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Sdf::Sphere { radius, center } => {
                if !(*radius > 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidArgument(format!("sphere radius must be positive, got {radius}")));
                }
            }
            Sdf::Box { half, center } => {
                if half.iter().any(|h| !(*h > 0.0)) || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidArgument("box half-extents must be positive".into()));
                }
            }
            Sdf::Union(a, b) | Sdf::Intersection(a, b) => {
                a.validate()?;
                b.validate()?;
            }
            Sdf::SmoothUnion(a, b, k) => {
                if !(*k >= 0.0) {
                    return Err(Error::InvalidArgument("smooth-union radius must be non-negative".into()));
                }
                a.validate()?;
                b.validate()?;
            }
        }
        Ok(())
    }

    /// Unit outward normal by central differences.
    pub fn normal(&self, p: V3) -> V3 {
        let h = 1e-5;
        let g = V3::new(
            self.eval(p + V3::new(h, 0.0, 0.0)) - self.eval(p - V3::new(h, 0.0, 0.0)),
            self.eval(p + V3::new(0.0, h, 0.0)) - self.eval(p - V3::new(0.0, h, 0.0)),
            self.eval(p + V3::new(0.0, 0.0, h)) - self.eval(p - V3::new(0.0, 0.0, h)),
        );
        g.try_normalize().unwrap_or(V3::new(0.0, 0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Albedo {
    Constant([f64; 3]),
    /// 3D checkerboard of cubes with edge `cell`.
    Checker { a: [f64; 3], b: [f64; 3], cell: f64 },
    /// Smooth sinusoidal stripes along `axis` with the given period.
    Stripes { a: [f64; 3], b: [f64; 3], axis: [f64; 3], period: f64 },
}

impl Albedo {
    pub fn eval(&self, p: V3) -> [f64; 3] {
        match self {
            Albedo::Constant(c) => *c,
            Albedo::Checker { a, b, cell } => {
                let s = (p.x / cell).floor() + (p.y / cell).floor() + (p.z / cell).floor();
                if (s as i64).rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Albedo::Stripes { a, b, axis, period } => {
                let t = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * p.dot(V3::from_array(*axis)) / period).sin();
                [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        let good = match self {
            Albedo::Constant(c) => ok(c),
            Albedo::Checker { a, b, cell } => ok(a) && ok(b) && *cell > 0.0,
            Albedo::Stripes { a, b, axis, period } => {
                ok(a) && ok(b) && *period > 0.0 && V3::from_array(*axis).norm() > 0.0
            }
        };
        if good {
            Ok(())
        } else {
            Err(Error::InvalidArgument("albedo colours must lie in [0, 1] with positive cell/period".into()))
        }
    }
}

/// Lambertian + Phong-style lobe from one directional light.
#[derive(Debug, Clone, PartialEq)]
pub struct Shading {
    /// Unit direction towards the light.
    pub light: [f64; 3],
    pub ambient: f64,
    pub diffuse: f64,
    pub specular: f64,
    pub shininess: f64,
}

impl Default for Shading {
    fn default() -> Self {
        let l = V3::new(0.4, -0.8, 0.45).normalize();
        Self { light: l.to_array(), ambient: 0.35, diffuse: 0.65, specular: 0.0, shininess: 32.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherScene {
    pub sdf: Sdf,
    pub albedo: Albedo,
    pub shading: Shading,
}

impl TeacherScene {
    pub fn new(sdf: Sdf, albedo: Albedo, shading: Shading) -> Result<Self> {
        let s = Self { sdf, albedo, shading };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.sdf.validate()?;
        self.albedo.validate()?;
        let l = V3::from_array(self.shading.light);
        if (l.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument("light direction must be unit length".into()));
        }
        let sh = &self.shading;
        if [sh.ambient, sh.diffuse, sh.specular, sh.shininess].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("shading weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn sdf(&self, x: V3) -> f64 {
        self.sdf.eval(x)
    }

    /// Shaded colour at `x` seen along ray direction `d`, clamped to [0, 1].
    pub fn color(&self, x: V3, d: V3) -> [f64; 3] {
        let n = self.sdf.normal(x);
        let l = V3::from_array(self.shading.light);
        let sh = &self.shading;
        let lambert = n.dot(l).max(0.0);
        let base = self.albedo.eval(x);
        let spec = if sh.specular > 0.0 {
            let r = n * (2.0 * n.dot(l)) - l;
            sh.specular * r.dot(-d).max(0.0).powf(sh.shininess)
        } else {
            0.0
        };
        base.map(|c| (c * (sh.ambient + sh.diffuse * lambert) + spec).clamp(0.0, 1.0))
    }

    /// First surface hit along the ray by sphere tracing, if any before `t_max`.
    pub fn trace(&self, o: V3, d: V3, t_max: f64) -> Option<f64> {
        let mut t = 0.0;
        for _ in 0..1024 {
            let s = self.sdf(o + d * t);
            if s.abs() < 1e-7 {
                return Some(t);
            }
            t += s.max(1e-7) * 0.95;
            if t > t_max {
                return None;
            }
        }
        None
    }

    /// Pixel colour along one ray.
    pub fn shade_ray(&self, o: V3, d: V3, background: [f64; 3]) -> [f64; 3] {
        match self.trace(o, d, 100.0) {
            Some(t) => self.color(o + d * t, d),
            None => background,
        }
    }

    /// Reference image: per pixel, the mean of `supersample^2` stratified
    /// sub-pixel rays.
    pub fn render(&self, camera: &Camera<f64>, background: [f64; 3], supersample: usize) -> Image {
        let (w, h) = (camera.width, camera.height);
        let ss = supersample.max(1);
        let rows: Vec<Vec<[f64; 3]>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| {
                        let mut acc = [0.0; 3];
                        for sy in 0..ss {
                            for sx in 0..ss {
                                let u = x as f64 + (sx as f64 + 0.5) / ss as f64;
                                let v = y as f64 + (sy as f64 + 0.5) / ss as f64;
                                let (o, d) = camera.generate_ray(u, v).expect("sub-pixel inside the image");
                                let c = self.shade_ray(o, d, background);
                                for k in 0..3 {
                                    acc[k] += c[k] / (ss * ss) as f64;
                                }
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        let data = rows.into_iter().flatten().flat_map(|c| c.map(|v| v as f32)).collect();
        Image::from_data(w, h, 3, data).expect("sized by construction")
    }

    /// Scaffold from the zero level set over `[lo, hi]^3`.
    pub fn marching_cubes(&self, resolution: usize, lo: f64, hi: f64) -> Result<TriMesh<f64>> {
        marching_cubes(|p| self.sdf(V3::from_array(p)), resolution, lo, hi)
    }
}
