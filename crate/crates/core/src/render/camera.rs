//! Pinhole cameras (OpenCV convention: +x right, +y down, +z forward).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    /// World-from-camera rotation; its columns are the camera axes.
    pub rotation: Mat3<T>,
    /// Camera centre in world coordinates.
    pub position: Vec3<T>,
}

impl<T: Real> Camera<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
        rotation: Mat3<T>,
        position: Vec3<T>,
    ) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, width, height, rotation, position };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::InvalidArgument(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        let r = self.rotation.cast::<f64>();
        let rtr = r.transpose().mul_mat(&r);
        if rtr.max_abs_diff(&Mat3::identity()) > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument("camera rotation is not orthonormal".into()));
        }
        if !self.position.is_finite() {
            return Err(Error::InvalidArgument("camera position is not finite".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` roughly opposite the
    /// image's +y axis and the principal point at the image centre.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, width: usize, height: usize, focal: T) -> Result<Self> {
        let fwd = (target - eye)
            .try_normalize()
            .ok_or_else(|| Error::InvalidArgument("camera eye coincides with target".into()))?;
        let right = fwd
            .cross(up)
            .try_normalize()
            .ok_or_else(|| Error::InvalidArgument("up vector is parallel to the viewing direction".into()))?;
        let down = fwd.cross(right);
        let half = T::of(0.5);
        Self::new(
            focal,
            focal,
            T::of(width as f64) * half,
            T::of(height as f64) * half,
            width,
            height,
            Mat3::from_cols(right, down, fwd),
            eye,
        )
    }

    pub fn forward(&self) -> Vec3<T> {
        self.rotation.col(2)
    }

    /// Ray through continuous pixel coordinates `(u, v)`; pixel `(i, j)`
    /// has its centre at `(i + 0.5, j + 0.5)`.
    pub fn generate_ray(&self, u: T, v: T) -> Result<(Vec3<T>, Vec3<T>)> {
        let (w, h) = (T::of(self.width as f64), T::of(self.height as f64));
        if !(u >= T::zero() && u <= w && v >= T::zero() && v <= h) {
            return Err(Error::InvalidArgument(format!("pixel ({u}, {v}) outside {}x{} image", self.width, self.height)));
        }
        let d_cam = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, T::one());
        Ok((self.position, self.rotation.mul_vec(d_cam).normalize()))
    }

    /// Ray through the centre of pixel `(col, row)`.
    pub fn pixel_ray(&self, col: usize, row: usize) -> (Vec3<T>, Vec3<T>) {
        let half = T::of(0.5);
        self.generate_ray(T::of(col as f64) + half, T::of(row as f64) + half).expect("pixel centre lies inside the image")
    }

    pub fn translated(&self, t: Vec3<T>) -> Self {
        Self { position: self.position + t, ..*self }
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        Camera {
            fx: U::of(self.fx.as_f64()),
            fy: U::of(self.fy.as_f64()),
            cx: U::of(self.cx.as_f64()),
            cy: U::of(self.cy.as_f64()),
            width: self.width,
            height: self.height,
            rotation: self.rotation.cast(),
            position: self.position.cast(),
        }
    }
}

/// `n` cameras on a Fibonacci sphere of the given radius, all looking at
/// the origin.
pub fn fibonacci_cameras<T: Real>(n: usize, radius: f64, width: usize, height: usize, focal: f64) -> Result<Vec<Camera<T>>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            let eye = Vec3::new(r * phi.cos(), y, r * phi.sin()) * radius;
            // switch the up hint near the poles
            let up = if y.abs() > 0.9 { Vec3::new(0.0, 0.0, 1.0) } else { Vec3::new(0.0, 1.0, 0.0) };
            Camera::look_at(eye, Vec3::zero(), up, width, height, focal).map(|c| c.cast())
        })
        .collect()
}

/// Seeded split of `0..n` into `(train, test)` index lists.
pub fn train_test_split(n: usize, n_test: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = n_test.min(n);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}
