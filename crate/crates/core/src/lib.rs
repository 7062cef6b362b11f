pub mod editor;
pub mod error;
pub mod field;
pub mod geom;
pub mod image;
pub mod io;
pub mod model;
pub mod nn;
pub mod real;
pub mod render;
pub mod scaffold;
pub mod teacher;
pub mod trainer;

pub use error::{Error, Result};
pub use geom::{Mat3, Vec3};
pub use image::{psnr, Image};
pub use model::{ModelConfig, Scene, SceneGrad};
pub use real::Real;

pub type Scene32 = Scene<f32>;
pub type Scene64 = Scene<f64>;
