//! Rigid-body geometry on SE(3) and SO(3).
//!
//! Twists are 6-vectors ordered `(rotation, translation)`: the first three
//! components are the axis-angle part in radians, the last three the
//! translational part in meters. Every Jacobian and adjoint in the crate uses
//! this ordering.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};

use crate::error::GeometryError;

pub type Twist = Vector6<f64>;

/// Number of compositions after which a rotation is projected back onto SO(3).
const REORTHONORMALIZE_EVERY: u32 = 1000;

/// Below this rotation angle exp/log switch to their Taylor expansions.
const SMALL_ANGLE: f64 = 1e-6;
/// Below this the cancellation-prone Jacobian coefficients use their Taylor series.
const SERIES_ANGLE: f64 = 1e-3;

/// `log_map` refuses rotations this close to pi, where the axis is ill-defined.
const PI_MARGIN: f64 = 1e-6;

/// A rigid transform `x -> R x + t`.
///
/// The rotation is stored as a matrix because point transforms dominate the
/// workload. Composition tracks how many products have been applied since the
/// last projection onto SO(3) so rounding drift cannot accumulate.
#[derive(Clone, Copy, Debug)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    chain: u32,
}

impl PartialEq for Pose {
    fn eq(&self, other: &Self) -> bool {
        self.rotation == other.rotation && self.translation == other.translation
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            chain: 0,
        }
    }

    /// Builds a pose from a rotation that is assumed to be orthonormal.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            chain: 0,
        }
    }

    /// Builds a pose after projecting `rotation` onto the nearest rotation matrix.
    pub fn from_approx_rotation(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(nearest_rotation(&rotation), translation)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(so3_exp(&axis_angle), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
            chain: self.chain,
        }
    }

    /// `self * other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let chain = self.chain.saturating_add(other.chain).saturating_add(1);
        let mut rotation = self.rotation * other.rotation;
        let translation = self.rotation * other.translation + self.translation;
        let chain = if chain >= REORTHONORMALIZE_EVERY {
            rotation = nearest_rotation(&rotation);
            0
        } else {
            chain
        };
        Pose {
            rotation,
            translation,
            chain,
        }
    }

    /// `self⁻¹ * other`: the pose of `other` expressed in the frame of `self`.
    pub fn relative(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    /// Right perturbation `self * exp(delta)`.
    pub fn retract(&self, delta: &Twist) -> Pose {
        self.compose(&exp_map(delta))
    }

    /// Adjoint in `(rotation, translation)` ordering: `T exp(v) T⁻¹ = exp(Ad_T v)`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut ad = Matrix6::zeros();
        let r = &self.rotation;
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(hat(&self.translation) * r));
        ad
    }

    /// Row-major 3x4 `[R | t]`, the KITTI layout.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
        ]
    }

    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    /// Largest absolute element-wise difference of the 3x4 matrices.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.rotation - other.rotation)
            .amax()
            .max((self.translation - other.translation).amax())
    }
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Projects a near-rotation onto SO(3) through the polar decomposition.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = 0.5 * vee(&(r - r.transpose())).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// `(1 − cos θ)/θ²` without the cancellation of the direct form.
fn half_versine_ratio(theta: f64) -> f64 {
    let s = (0.5 * theta).sin() / theta;
    2.0 * s * s
}

pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    if theta2.sqrt() < SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = half_versine_ratio(theta);
    Matrix3::identity() + a * k + b * k * k
}

pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let skew = vee(&(r - r.transpose()));
    let theta = rotation_angle(r);
    if theta >= std::f64::consts::PI - PI_MARGIN {
        return Err(GeometryError::AngleAtPi { angle: theta });
    }
    if theta < SMALL_ANGLE {
        // sin θ/θ ≈ 1 − θ²/6
        return Ok(0.5 * (1.0 + theta * theta / 6.0) * skew);
    }
    Ok(theta / (2.0 * theta.sin()) * skew)
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else if theta < SERIES_ANGLE {
        (
            half_versine_ratio(theta),
            1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
        )
    } else {
        (half_versine_ratio(theta), (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + a * k + b * k * k
}

pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let c = if theta < SERIES_ANGLE {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - 0.5 * k + c * k * k
}

pub fn exp_map(v: &Twist) -> Pose {
    let phi = v.fixed_rows::<3>(0).into_owned();
    let rho = v.fixed_rows::<3>(3).into_owned();
    Pose::new(so3_exp(&phi), so3_left_jacobian(&phi) * rho)
}

pub fn log_map(pose: &Pose) -> Result<Twist, GeometryError> {
    let phi = so3_log(&pose.rotation)?;
    let rho = so3_left_jacobian_inv(&phi) * pose.translation;
    Ok(Twist::new(phi[0], phi[1], phi[2], rho[0], rho[1], rho[2]))
}

/// Lie-algebra adjoint `ad_v` so that `[v, w] = ad_v w`.
pub fn ad(v: &Twist) -> Matrix6<f64> {
    let phi = hat(&v.fixed_rows::<3>(0).into_owned());
    let rho = hat(&v.fixed_rows::<3>(3).into_owned());
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&phi);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&phi);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&rho);
    m
}

/// Translational coupling block of the SE(3) left Jacobian.
fn se3_q(phi: &Vector3<f64>, rho: &Vector3<f64>) -> Matrix3<f64> {
    let p = hat(phi);
    let r = hat(rho);
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (c1, c2, c3) = if theta < 1e-2 {
        let t4 = theta2 * theta2;
        (
            1.0 / 6.0 - theta2 / 120.0 + t4 / 5040.0,
            1.0 / 24.0 - theta2 / 720.0 + t4 / 40320.0,
            1.0 / 120.0 - theta2 / 2520.0 + t4 / 120960.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (
            (theta - s) / (theta2 * theta),
            (theta2 + 2.0 * c - 2.0) / (2.0 * theta2 * theta2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta2 * theta2 * theta),
        )
    };
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    0.5 * r + c1 * (pr + rp + prp) + c2 * (p * pr + rp * p - 3.0 * prp) + c3 * (prp * p + p * prp)
}

/// Left Jacobian of SE(3): `exp(v + d) ≈ exp(J_l(v) d) exp(v)`.
pub fn se3_left_jacobian(v: &Twist) -> Matrix6<f64> {
    let phi = v.fixed_rows::<3>(0).into_owned();
    let rho = v.fixed_rows::<3>(3).into_owned();
    let j = so3_left_jacobian(&phi);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&se3_q(&phi, &rho));
    m
}

/// Right Jacobian of SE(3): `exp(v + d) ≈ exp(v) exp(J_r(v) d)`.
pub fn se3_right_jacobian(v: &Twist) -> Matrix6<f64> {
    se3_left_jacobian(&-v)
}

/// Inverse right Jacobian of SE(3), with a first-order expansion for tiny twists.
pub fn se3_right_jacobian_inv(v: &Twist) -> Matrix6<f64> {
    if v.norm() < 1e-4 {
        return Matrix6::identity() + 0.5 * ad(v);
    }
    let minus = -v;
    let phi = minus.fixed_rows::<3>(0).into_owned();
    let rho = minus.fixed_rows::<3>(3).into_owned();
    let j_inv = so3_left_jacobian_inv(&phi);
    let q = se3_q(&phi, &rho);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    m.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-j_inv * q * j_inv));
    m
}

/// Eigen-decomposition of a symmetric 3x3 matrix, eigenvalues ascending.
#[derive(Clone, Copy, Debug)]
pub struct SymEigen3 {
    pub values: Vector3<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Matrix3<f64>,
}

pub fn sym_eig3(m: &Matrix3<f64>) -> SymEigen3 {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vector3::new(
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    let vectors = Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    SymEigen3 { values, vectors }
}
