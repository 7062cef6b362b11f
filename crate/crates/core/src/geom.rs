//! Small fixed-size vector and matrix types.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    pub fn from_f64(v: [f64; 3]) -> Self {
        Self::new(T::of(v[0]), T::of(v[1]), T::of(v[2]))
    }

    #[inline]
    pub fn to_f64(self) -> [f64; 3] {
        [self.x.as_f64(), self.y.as_f64(), self.z.as_f64()]
    }

    #[inline]
    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(U::of(self.x.as_f64()), U::of(self.y.as_f64()), U::of(self.z.as_f64()))
    }

    #[inline]
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    /// Unit vector, or `None` for a (near) zero vector.
    pub fn try_normalize(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self * (T::one() / n))
        } else {
            None
        }
    }

    pub fn normalize(self) -> Self {
        self.try_normalize().unwrap_or_else(Self::zero)
    }

    #[inline]
    pub fn component_mul(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    #[inline]
    pub fn map(self, f: impl Fn(T) -> T) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn min(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_abs_component(self) -> T {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl<T: Real> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self { m: [[o, z, z], [z, o, z], [z, z, o]] }
    }

    pub fn zero() -> Self {
        Self { m: [[T::zero(); 3]; 3] }
    }

    pub fn from_rows(r0: Vec3<T>, r1: Vec3<T>, r2: Vec3<T>) -> Self {
        Self { m: [r0.to_array(), r1.to_array(), r2.to_array()] }
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self::from_rows(c0, c1, c2).transpose()
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::from_array(self.m[i])
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.m[j][i];
            }
        }
        out
    }

    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = T::zero();
                for k in 0..3 {
                    acc += self.m[i][k] * o.m[k][j];
                }
                out.m[i][j] = acc;
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for row in out.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] += o.m[i][j];
            }
        }
        out
    }

    pub fn determinant(&self) -> T {
        self.row(0).dot(self.row(1).cross(self.row(2)))
    }

    /// Skew-symmetric cross-product matrix `[v]x`.
    pub fn skew(v: Vec3<T>) -> Self {
        let z = T::zero();
        Self { m: [[z, -v.z, v.y], [v.z, z, -v.x], [-v.y, v.x, z]] }
    }

    /// Rotation by `angle` radians about the unit `axis`.
    pub fn axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let k = Self::skew(axis.normalize());
        let k2 = k.mul_mat(&k);
        Self::identity().add(&k.scale(angle.sin())).add(&k2.scale(T::one() - angle.cos()))
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        let mut out = Mat3::<U>::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = U::of(self.m[i][j].as_f64());
            }
        }
        out
    }

    pub fn to_nalgebra(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::from_fn(|i, j| self.m[i][j].as_f64())
    }

    pub fn from_nalgebra(m: &nalgebra::Matrix3<f64>) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = T::of(m[(i, j)]);
            }
        }
        out
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut d = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.m[i][j] - o.m[i][j]).abs());
            }
        }
        d
    }
}

/// Smallest rotation taking unit vector `from` onto unit vector `to`.
///
/// Identical inputs give the exact identity. Antipodal inputs rotate by pi
/// about an axis perpendicular to `from`.
pub fn minimal_rotation<T: Real>(from: Vec3<T>, to: Vec3<T>) -> Mat3<T> {
    let v = from.cross(to);
    let c = from.dot(to);
    if c > T::of(-1.0 + 1e-7) {
        let k = Mat3::skew(v);
        let k2 = k.mul_mat(&k);
        Mat3::identity().add(&k).add(&k2.scale(T::one() / (T::one() + c)))
    } else {
        let helper = if from.x.abs() < T::of(0.9) {
            Vec3::new(T::one(), T::zero(), T::zero())
        } else {
            Vec3::new(T::zero(), T::one(), T::zero())
        };
        let axis = from.cross(helper).normalize();
        Mat3::axis_angle(axis, T::PI())
    }
}

/// Best proper rotation `R` maximising `tr(R^T cov)` where
/// `cov = sum(target_i * source_i^T)`. Returns `None` when the covariance is
/// rank-deficient beyond rank 2.
pub fn procrustes_rotation(cov: &nalgebra::Matrix3<f64>) -> Option<nalgebra::Matrix3<f64>> {
    let mut sv: Vec<f64> = cov.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[1] > 1e-12 * sv[0].max(f64::MIN_POSITIVE)) {
        return None;
    }
    // Horn's quaternion form: the SVD route loses accuracy when singular
    // values repeat, which symmetric one-rings produce all the time.
    let s = |i: usize, j: usize| cov[(j, i)];
    let n = nalgebra::Matrix4::new(
        s(0, 0) + s(1, 1) + s(2, 2),
        s(1, 2) - s(2, 1),
        s(2, 0) - s(0, 2),
        s(0, 1) - s(1, 0),
        s(1, 2) - s(2, 1),
        s(0, 0) - s(1, 1) - s(2, 2),
        s(0, 1) + s(1, 0),
        s(2, 0) + s(0, 2),
        s(2, 0) - s(0, 2),
        s(0, 1) + s(1, 0),
        -s(0, 0) + s(1, 1) - s(2, 2),
        s(1, 2) + s(2, 1),
        s(0, 1) - s(1, 0),
        s(2, 0) + s(0, 2),
        s(1, 2) + s(2, 1),
        -s(0, 0) - s(1, 1) + s(2, 2),
    );
    let eig = n.symmetric_eigen();
    let top = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(top);
    let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    Some(q.to_rotation_matrix().into_inner())
}
