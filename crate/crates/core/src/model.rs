//! The trainable scene: scaffold with per-vertex attributes, decoders,
//! sharpness and the spatial index kept in sync with the vertices.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::EncodingConfig;
use crate::geom::Vec3;
use crate::nn::{Activation, Mlp, MlpGrad};
use crate::real::Real;
use crate::scaffold::{MeshScaffold, SpatialIndex, TriMesh};

/// Decoder and code sizes. Defaults are the full-size model; see
/// [`ModelConfig::desk`] for the reduced one used for CPU training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub code_dim: usize,
    pub geometry_layers: usize,
    pub geometry_width: usize,
    pub radiance_layers: usize,
    pub radiance_width: usize,
    pub init_log_sharpness: f64,
    pub code_init_scale: f64,
    pub encoding: EncodingConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            code_dim: 32,
            geometry_layers: 3,
            geometry_width: 256,
            radiance_layers: 4,
            radiance_width: 256,
            init_log_sharpness: 30f64.ln(),
            code_init_scale: 1e-2,
            encoding: EncodingConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Narrow decoders that train in minutes on one CPU core, on scaffolds
    /// with edges near 0.1. The indicator weight is raised to 1 so the
    /// interpolated distance keeps its sign across the ±0.1 band on such a
    /// coarse mesh; at 0.1 it turns positive a few edge lengths inside.
    pub fn desk() -> Self {
        let mut encoding = EncodingConfig::default();
        encoding.omega_n = 1.0;
        Self { geometry_width: 64, radiance_width: 64, encoding, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        if self.code_dim == 0 || self.geometry_width == 0 || self.radiance_width == 0 {
            return Err(Error::InvalidArgument("code and layer widths must be positive".into()));
        }
        if !self.init_log_sharpness.is_finite() {
            return Err(Error::InvalidArgument("initial sharpness must be finite".into()));
        }
        Ok(())
    }

    pub fn geometry_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.encoding.geometry_input_dim(self.code_dim)];
        s.extend(std::iter::repeat(self.geometry_width).take(self.geometry_layers));
        s.push(1);
        s
    }

    pub fn radiance_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.encoding.radiance_input_dim(self.code_dim)];
        s.extend(std::iter::repeat(self.radiance_width).take(self.radiance_layers));
        s.push(3);
        s
    }
}

/// Decoder input layout, recorded in checkpoints.
pub const DECODER_LAYOUT: &str = "geometry=[code,h];radiance=[code,h,dir,grad_s]";

#[derive(Debug, Clone)]
pub struct Scene<T> {
    pub scaffold: MeshScaffold<T>,
    pub encoding: EncodingConfig,
    pub geometry: Mlp<T>,
    /// Radiance decoder table indexed by the per-vertex decoder id.
    pub radiance: Vec<Mlp<T>>,
    /// `ln s_inv`.
    pub log_sharpness: T,
    pub seed: u64,
    pub step: u64,
    index: SpatialIndex<T>,
}

impl<T: Real> Scene<T> {
    /// Fresh, untrained scene on `mesh`; all randomness comes from `seed`.
    pub fn new(mesh: TriMesh<T>, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scaffold = MeshScaffold::from_mesh(mesh, cfg.code_dim, cfg.code_init_scale, &mut rng)?;
        let geometry = Mlp::new(&cfg.geometry_sizes(), Activation::Softplus, Activation::Identity, &mut rng);
        let radiance = Mlp::new(&cfg.radiance_sizes(), Activation::Relu, Activation::Sigmoid, &mut rng);
        Self::from_parts(scaffold, cfg.encoding, geometry, vec![radiance], T::of(cfg.init_log_sharpness), seed, 0)
    }

    pub fn from_parts(
        scaffold: MeshScaffold<T>,
        encoding: EncodingConfig,
        geometry: Mlp<T>,
        radiance: Vec<Mlp<T>>,
        log_sharpness: T,
        seed: u64,
        step: u64,
    ) -> Result<Self> {
        encoding.validate()?;
        let index = SpatialIndex::build(&scaffold.mesh)?;
        let scene = Self { scaffold, encoding, geometry, radiance, log_sharpness, seed, step, index };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.scaffold.validate()?;
        let d = self.scaffold.code_dim();
        if self.geometry.input_dim() != self.encoding.geometry_input_dim(d) || self.geometry.output_dim() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "geometry decoder is {:?}, expected input {} and one output",
                self.geometry.sizes(),
                self.encoding.geometry_input_dim(d)
            )));
        }
        if self.radiance.is_empty() {
            return Err(Error::InvalidArgument("scene has no radiance decoder".into()));
        }
        for (i, r) in self.radiance.iter().enumerate() {
            if r.input_dim() != self.encoding.radiance_input_dim(d) || r.output_dim() != 3 {
                return Err(Error::ShapeMismatch(format!("radiance decoder {i} is {:?}", r.sizes())));
            }
        }
        if let Some(&bad) = self.scaffold.decoder_ids.iter().find(|&&id| id as usize >= self.radiance.len()) {
            return Err(Error::InvalidArgument(format!("decoder id {bad} has no radiance decoder")));
        }
        if !self.log_sharpness.is_finite() {
            return Err(Error::InvalidArgument("sharpness is not finite".into()));
        }
        Ok(())
    }

    pub fn index(&self) -> &SpatialIndex<T> {
        &self.index
    }

    pub fn rebuild_index(&mut self) -> Result<()> {
        self.index = SpatialIndex::build(&self.scaffold.mesh)?;
        Ok(())
    }

    /// Replace vertex positions (same count) and rebuild the index. Does not
    /// touch indicators or normals.
    pub fn set_vertices(&mut self, vertices: Vec<Vec3<T>>) -> Result<()> {
        if vertices.len() != self.scaffold.vertex_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} vertices, got {}",
                self.scaffold.vertex_count(),
                vertices.len()
            )));
        }
        self.scaffold.mesh.vertices = vertices;
        self.rebuild_index()
    }

    /// Inverse standard deviation `s_inv = exp(log_sharpness)`.
    pub fn s_inv(&self) -> T {
        self.log_sharpness.exp()
    }

    pub fn cast<U: Real>(&self) -> Scene<U> {
        Scene {
            scaffold: self.scaffold.cast(),
            encoding: self.encoding,
            geometry: self.geometry.cast(),
            radiance: self.radiance.iter().map(|r| r.cast()).collect(),
            log_sharpness: U::of(self.log_sharpness.as_f64()),
            seed: self.seed,
            step: self.step,
            index: SpatialIndex::build(&self.scaffold.mesh.cast()).expect("index of a valid scene"),
        }
    }
}

/// Gradient buffers with the shapes of a [`Scene`]'s trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrad<T> {
    pub geometry_codes: Array2<T>,
    pub texture_codes: Array2<T>,
    pub indicators: Vec<Vec3<T>>,
    pub geometry: MlpGrad<T>,
    pub radiance: Vec<MlpGrad<T>>,
    pub log_sharpness: T,
}

impl<T: Real> SceneGrad<T> {
    pub fn zeros_like(scene: &Scene<T>) -> Self {
        let sc = &scene.scaffold;
        Self {
            geometry_codes: Array2::zeros(sc.geometry_codes.raw_dim()),
            texture_codes: Array2::zeros(sc.texture_codes.raw_dim()),
            indicators: vec![Vec3::zero(); sc.vertex_count()],
            geometry: MlpGrad::zeros_like(&scene.geometry),
            radiance: scene.radiance.iter().map(MlpGrad::zeros_like).collect(),
            log_sharpness: T::zero(),
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        self.geometry_codes += &o.geometry_codes;
        self.texture_codes += &o.texture_codes;
        for (a, &b) in self.indicators.iter_mut().zip(&o.indicators) {
            *a += b;
        }
        self.geometry.add_assign(&o.geometry);
        for (a, b) in self.radiance.iter_mut().zip(&o.radiance) {
            a.add_assign(b);
        }
        self.log_sharpness += o.log_sharpness;
    }
}
