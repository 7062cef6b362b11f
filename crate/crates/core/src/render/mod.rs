//! Ray generation, depth sampling, compositing and image rendering.

mod camera;
mod composite;
mod sampling;
mod trace;

pub use camera::{fibonacci_cameras, train_test_split, Camera};
pub use composite::{alphas, composite, composite_backward, Composite, CompositeGrad};
pub use sampling::{sample_coarse, upsample_fine};
pub use trace::{pixel_seed, render_image, sample_depths, trace_depths, trace_rays, Ray, RenderConfig, RenderOutput, TracedRays};
