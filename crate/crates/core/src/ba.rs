//! Windowed plane bundle adjustment.
//!
//! The cost of a window is the sum over plane voxels of the smallest
//! eigenvalue of the scatter matrix of all points in the voxel, which is the
//! mean squared point-to-plane distance to the best-fit plane. Derivatives are
//! taken with respect to right perturbations `T·Exp(δ)` of every pose except
//! the first, which anchors the gauge. Everything is computed from the
//! per-frame point clusters, so the cost of an iteration does not depend on
//! the number of points.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};

use crate::error::BaError;
use crate::frame_io::Frame;
use crate::geometry::{hat, sym_eig3, Pose, Twist};
use crate::voxel_map::{build_adaptive_map, global_moments, PlaneVoxel, VoxelConfig};

const LAMBDA_MAX: f64 = 1e16;
const LAMBDA_MIN: f64 = 1e-12;
/// Relative eigen-gap below which the plane normal is ill-defined.
const EIGEN_GAP: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaConfig {
    pub max_iter: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// When set, the normal equations keep only diagonal blocks spanning this
    /// many consecutive poses (reduced BA ablation).
    pub block_size: Option<usize>,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            max_iter: 10,
            lambda_init: 1e-4,
            lambda_up: 10.0,
            lambda_down: 10.0,
            grad_tol: 1e-7,
            step_tol: 1e-8,
            block_size: None,
        }
    }
}

/// Voxels plus the window-local poses they are observed from. Pose 0 is the anchor.
#[derive(Clone, Debug)]
pub struct BaProblem {
    pub voxels: Vec<PlaneVoxel>,
    pub poses: Vec<Pose>,
}

impl BaProblem {
    pub fn new(voxels: Vec<PlaneVoxel>, poses: Vec<Pose>) -> Result<Self, BaError> {
        if poses.len() < 2 {
            return Err(BaError::TooFewFrames(poses.len()));
        }
        for v in &voxels {
            for obs in &v.observations {
                if obs.frame >= poses.len() {
                    return Err(BaError::MissingPose { frame: obs.frame });
                }
            }
        }
        Ok(Self { voxels, poses })
    }

    /// Number of optimized parameters, `6(w−1)`.
    pub fn dim(&self) -> usize {
        6 * (self.poses.len() - 1)
    }

    /// Voxels seen by at least two frames; the others cannot constrain anything.
    pub fn active_voxels(&self) -> impl Iterator<Item = &PlaneVoxel> {
        self.voxels.iter().filter(|v| v.frame_count() >= 2)
    }

    pub fn cost(&self) -> f64 {
        cost_at(&self.voxels, &self.poses)
    }
}

/// λ1 of one voxel under `poses`.
pub fn voxel_cost(voxel: &PlaneVoxel, poses: &[Pose]) -> f64 {
    match global_moments(voxel, poses) {
        Ok(m) if m.count > 0 => sym_eig3(&m.scatter).values[0],
        _ => 0.0,
    }
}

pub fn ba_cost(problem: &BaProblem) -> f64 {
    problem.cost()
}

fn cost_at(voxels: &[PlaneVoxel], poses: &[Pose]) -> f64 {
    voxels
        .iter()
        .filter(|v| v.frame_count() >= 2)
        .map(|v| voxel_cost(v, poses))
        .sum()
}

#[derive(Clone, Debug)]
pub struct Derivatives {
    pub cost: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    /// Indices of voxels skipped because their two smallest eigenvalues nearly coincide.
    pub eigen_gap_voxels: Vec<usize>,
}

/// `[q × w ; c·w]`, the shape every per-frame derivative block takes.
fn lvec(q: &Vector3<f64>, c: f64, w: &Vector3<f64>) -> Vector6<f64> {
    let a = q.cross(w);
    let b = c * w;
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

/// Exact gradient and Hessian of the cost.
///
/// For a voxel with merged scatter eigenpairs `(λm, um)` the Hessian is the
/// fixed-normal second derivative of `u1ᵀCu1` plus the eigenvector-rotation
/// terms `2 Σ_{m>1} hm hmᵀ / (λ1 − λm)`, which are what makes it match the
/// curvature of λ1 itself rather than that of a frozen plane.
pub fn ba_gradient_hessian(problem: &BaProblem) -> Derivatives {
    derivatives_at(&problem.voxels, &problem.poses)
}

fn derivatives_at(voxels: &[PlaneVoxel], poses: &[Pose]) -> Derivatives {
    let dim = 6 * (poses.len() - 1);
    let mut gradient = DVector::zeros(dim);
    let mut hessian = DMatrix::zeros(dim, dim);
    let mut eigen_gap_voxels = Vec::new();
    let mut cost = 0.0;
    // per-frame 6x3 columns of the three rank-one terms of the current voxel
    let mut low_rank: Vec<(usize, nalgebra::Matrix6x3<f64>)> = Vec::new();

    for (vi, voxel) in voxels.iter().enumerate() {
        if voxel.frame_count() < 2 {
            continue;
        }
        let moments = match global_moments(voxel, poses) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let n_total = moments.count as f64;
        let mean = moments.mean;
        let eig = sym_eig3(&moments.scatter);
        let (l1, l2, l3) = (eig.values[0], eig.values[1], eig.values[2]);
        cost += l1;
        if l2 - l1 < EIGEN_GAP * l3 {
            eigen_gap_voxels.push(vi);
            continue;
        }
        let u: [Vector3<f64>; 3] = [
            eig.vectors.column(0).into_owned(),
            eig.vectors.column(1).into_owned(),
            eig.vectors.column(2).into_owned(),
        ];
        let scale = 2.0 / n_total;
        let weights = Vector3::new(-2.0, 2.0 / (l1 - l2), 2.0 / (l1 - l3));
        low_rank.clear();

        for obs in &voxel.observations {
            let k = obs.frame;
            let pose = &poses[k];
            let r = pose.rotation();
            let c = &obs.cluster;
            let nk = c.count as f64;
            let s = c.sum();
            let p = c.outer();
            let w: [Vector3<f64>; 3] = [r.tr_mul(&u[0]), r.tr_mul(&u[1]), r.tr_mul(&u[2])];
            let offset = pose.translation() - mean;
            let d: [f64; 3] = [u[0].dot(&offset), u[1].dot(&offset), u[2].dot(&offset)];
            let w1 = &w[0];
            let z = p * w1 + d[0] * s;
            let alpha = w1.dot(&s) + nk * d[0];

            let gbar = lvec(&s, nk, w1) / n_total;
            let mut cols = nalgebra::Matrix6x3::zeros();
            cols.set_column(0, &gbar);
            for m in 1..3 {
                let y = p * w[m] + d[m] * s;
                let beta = w[m].dot(&s) + nk * d[m];
                let h = (lvec(&z, alpha, &w[m]) + lvec(&y, beta, w1)) / n_total;
                cols.set_column(m, &h);
            }
            if k == 0 {
                continue;
            }
            let base = 6 * (k - 1);
            let g = scale * lvec(&z, alpha, w1);
            let mut slot = gradient.fixed_rows_mut::<6>(base);
            slot += g;

            let wx = hat(w1);
            let sxw = s.cross(w1);
            let mut block = Matrix6::zeros();
            // fixed-normal curvature of the frame's own points
            block.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-wx * p * wx));
            block.fixed_view_mut::<3, 3>(0, 3).copy_from(&(sxw * w1.transpose()));
            block.fixed_view_mut::<3, 3>(3, 0).copy_from(&(w1 * sxw.transpose()));
            block.fixed_view_mut::<3, 3>(3, 3).copy_from(&(nk * w1 * w1.transpose()));
            // second-order part of the retraction
            let wz = 0.5 * (w1 * z.transpose() + z * w1.transpose()) - w1.dot(&z) * Matrix3::identity();
            let mut curl = block.fixed_view_mut::<3, 3>(0, 0);
            curl += wz;
            let mut cross = block.fixed_view_mut::<3, 3>(0, 3);
            cross -= 0.5 * alpha * wx;
            let mut cross = block.fixed_view_mut::<3, 3>(3, 0);
            cross += 0.5 * alpha * wx;
            let mut target = hessian.fixed_view_mut::<6, 6>(base, base);
            target += scale * block;
            low_rank.push((base, cols));
        }

        let diag = Matrix3::from_diagonal(&weights);
        for (ai, (a_base, a_cols)) in low_rank.iter().enumerate() {
            let weighted = a_cols * diag;
            for (b_base, b_cols) in &low_rank[ai..] {
                let blk = weighted * b_cols.transpose();
                let mut target = hessian.fixed_view_mut::<6, 6>(*a_base, *b_base);
                target += blk;
            }
        }
    }

    // only blocks with a_base <= b_base were filled by the low-rank loop
    symmetrize_from_blocks(&mut hessian);
    Derivatives {
        cost,
        gradient,
        hessian,
        eigen_gap_voxels,
    }
}

/// The diagonal blocks are complete; off-diagonal blocks exist only above the
/// diagonal. Mirror them and symmetrize the diagonal blocks.
fn symmetrize_from_blocks(h: &mut DMatrix<f64>) {
    let blocks = h.nrows() / 6;
    for a in 0..blocks {
        let d = h.fixed_view::<6, 6>(6 * a, 6 * a).into_owned();
        h.fixed_view_mut::<6, 6>(6 * a, 6 * a)
            .copy_from(&(0.5 * (d + d.transpose())));
        for b in a + 1..blocks {
            let upper = h.fixed_view::<6, 6>(6 * a, 6 * b).transpose();
            h.fixed_view_mut::<6, 6>(6 * b, 6 * a).copy_from(&upper);
        }
    }
}

/// Zeroes every entry coupling poses that fall in different blocks of `block_size`
/// consecutive poses (pose `k` belongs to block `k / block_size`).
pub fn block_diagonal(h: &mut DMatrix<f64>, block_size: usize) {
    let poses = h.nrows() / 6;
    let group = |row: usize| (row / 6 + 1) / block_size.max(1);
    for r in 0..h.nrows() {
        for c in 0..h.ncols() {
            if group(r) != group(c) {
                h[(r, c)] = 0.0;
            }
        }
    }
    debug_assert_eq!(poses * 6, h.nrows());
}

fn retract_all(poses: &[Pose], delta: &DVector<f64>) -> Vec<Pose> {
    let mut out = Vec::with_capacity(poses.len());
    out.push(poses[0]);
    for (k, pose) in poses.iter().enumerate().skip(1) {
        let d: Twist = delta.fixed_rows::<6>(6 * (k - 1)).into_owned();
        out.push(pose.retract(&d));
    }
    out
}

#[derive(Clone, Debug)]
pub struct WindowResult {
    /// Optimized poses relative to the window's first frame; entry 0 is the identity.
    pub relative_poses: Vec<Pose>,
    /// Hessian at the returned poses, anchor excluded.
    pub hessian: DMatrix<f64>,
    pub initial_cost: f64,
    pub cost: f64,
    /// Accepted LM steps.
    pub iterations: usize,
    /// Cost after each accepted step.
    pub cost_history: Vec<f64>,
    /// Stopped on the gradient or step tolerance rather than on the iteration cap.
    pub converged: bool,
    /// The window had nothing to optimize; poses were passed through.
    pub fallback: bool,
}

impl WindowResult {
    /// Pass-through result for a window without plane features.
    pub fn passthrough(relative_poses: Vec<Pose>) -> Self {
        let dim = 6 * relative_poses.len().saturating_sub(1);
        Self {
            relative_poses,
            hessian: DMatrix::identity(dim, dim),
            initial_cost: 0.0,
            cost: 0.0,
            iterations: 0,
            cost_history: Vec::new(),
            converged: true,
            fallback: true,
        }
    }

    pub fn len(&self) -> usize {
        self.relative_poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relative_poses.is_empty()
    }
}

/// Levenberg–Marquardt on `problem`, starting from its poses.
pub fn optimize(problem: &BaProblem, config: &BaConfig) -> Result<WindowResult, BaError> {
    if problem.active_voxels().next().is_none() {
        return Err(BaError::NoFeatures);
    }
    let voxels = &problem.voxels;
    let mut poses = problem.poses.clone();
    let mut derivs = derivatives_at(voxels, &poses);
    if !derivs.cost.is_finite() {
        return Err(BaError::NonFiniteCost { iteration: 0 });
    }
    let initial_cost = derivs.cost;
    let mut lambda = config.lambda_init;
    let mut iterations = 0;
    let mut converged = false;
    let mut cost_history = Vec::new();

    while iterations < config.max_iter {
        if !derivs.eigen_gap_voxels.is_empty() {
            log::debug!("{} voxels skipped for a vanishing eigen-gap", derivs.eigen_gap_voxels.len());
        }
        if derivs.gradient.amax() < config.grad_tol {
            converged = true;
            break;
        }
        let mut h = derivs.hessian.clone();
        if let Some(b) = config.block_size {
            block_diagonal(&mut h, b);
        }
        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut damped = h.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda;
            }
            let Some(chol) = Cholesky::new(damped) else {
                lambda *= config.lambda_up;
                continue;
            };
            let delta = -chol.solve(&derivs.gradient);
            if delta.amax() < config.step_tol {
                converged = true;
                break;
            }
            let trial = retract_all(&poses, &delta);
            let trial_cost = cost_at(voxels, &trial);
            if trial_cost.is_finite() && trial_cost <= derivs.cost {
                poses = trial;
                lambda = (lambda / config.lambda_down).max(LAMBDA_MIN);
                accepted = true;
                break;
            }
            lambda *= config.lambda_up;
        }
        if !accepted {
            break;
        }
        iterations += 1;
        derivs = derivatives_at(voxels, &poses);
        if !derivs.cost.is_finite() {
            return Err(BaError::NonFiniteCost { iteration: iterations });
        }
        cost_history.push(derivs.cost);
    }
    if !converged && derivs.gradient.amax() < config.grad_tol {
        converged = true;
    }

    let anchor_inv = poses[0].inverse();
    let relative_poses = poses.iter().map(|p| anchor_inv.compose(p)).collect();
    Ok(WindowResult {
        relative_poses,
        hessian: derivs.hessian,
        initial_cost,
        cost: derivs.cost,
        iterations,
        cost_history,
        converged,
        fallback: false,
    })
}

#[derive(Clone, Debug)]
pub struct SolvedWindow {
    pub result: WindowResult,
    /// The plane voxels the window was solved on, indexed by window frame position.
    pub voxels: Vec<PlaneVoxel>,
    pub voxel_seconds: f64,
    pub ba_seconds: f64,
}

/// Voxelizes `frames` with their global poses and optimizes their relative poses.
pub fn solve_window(frames: &[Frame], ba: &BaConfig, voxel: &VoxelConfig) -> Result<SolvedWindow, BaError> {
    if frames.len() < 2 {
        return Err(BaError::TooFewFrames(frames.len()));
    }
    let start = Instant::now();
    let voxels = build_adaptive_map(frames, voxel);
    let voxel_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let anchor_inv = frames[0].pose.inverse();
    let poses = frames.iter().map(|f| anchor_inv.compose(&f.pose)).collect();
    let problem = BaProblem::new(voxels, poses)?;
    let result = optimize(&problem, ba)?;
    Ok(SolvedWindow {
        result,
        voxels: problem.voxels,
        voxel_seconds,
        ba_seconds: start.elapsed().as_secs_f64(),
    })
}

/// A relative-pose measurement with its information matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeConstraint {
    pub measurement: Pose,
    pub information: Matrix6<f64>,
    /// Information is the identity placeholder rather than derived from the Hessian.
    pub fallback: bool,
}

/// Scale of the identity information used when the Hessian cannot be inverted.
pub const FALLBACK_INFORMATION: f64 = 1.0;

fn fallback_constraint(measurement: Pose) -> RelativeConstraint {
    RelativeConstraint {
        measurement,
        information: Matrix6::identity() * FALLBACK_INFORMATION,
        fallback: true,
    }
}

/// Pose covariance `(H + εI)⁻¹` with `ε = 1e-6·tr(H)/dim`.
fn pose_covariance(hessian: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let dim = hessian.nrows();
    if dim == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let eps = 1e-6 * hessian.trace() / dim as f64;
    if !(eps.is_finite() && eps > 0.0) {
        return None;
    }
    let mut reg = hessian.clone();
    for i in 0..dim {
        reg[(i, i)] += eps;
    }
    let cov = Cholesky::new(reg)?.inverse();
    cov.iter().all(|v| v.is_finite()).then_some(cov)
}

/// Block `(a, b)` of the covariance of window poses, zero where the anchor is involved.
fn cov_block(cov: &DMatrix<f64>, a: usize, b: usize) -> Matrix6<f64> {
    if a == 0 || b == 0 {
        return Matrix6::zeros();
    }
    cov.fixed_view::<6, 6>(6 * (a - 1), 6 * (b - 1)).into_owned()
}

fn constraint_from_covariance(result: &WindowResult, cov: &DMatrix<f64>, j: usize) -> RelativeConstraint {
    let ta = &result.relative_poses[j];
    let tb = &result.relative_poses[j + 1];
    let measurement = ta.relative(tb);
    // δrel ≈ −Ad(rel⁻¹)·δa + δb for right perturbations δa, δb
    let ja = -measurement.inverse().adjoint();
    let saa = cov_block(cov, j, j);
    let sab = cov_block(cov, j, j + 1);
    let sbb = cov_block(cov, j + 1, j + 1);
    let omega = ja * saa * ja.transpose() + ja * sab + sab.transpose() * ja.transpose() + sbb;
    let omega = 0.5 * (omega + omega.transpose());
    let eps = 1e-6 * omega.trace() / 6.0;
    if !(eps.is_finite() && eps > 0.0) {
        return fallback_constraint(measurement);
    }
    let Some(chol) = Cholesky::new(omega + Matrix6::identity() * eps) else {
        return fallback_constraint(measurement);
    };
    let info = chol.inverse();
    let info = 0.5 * (info + info.transpose());
    if Cholesky::new(info).is_none() {
        return fallback_constraint(measurement);
    }
    RelativeConstraint {
        measurement,
        information: info,
        fallback: false,
    }
}

/// Measurement and information of the relative pose between window poses `j` and `j+1`.
pub fn relative_pose_information(result: &WindowResult, j: usize) -> Result<RelativeConstraint, BaError> {
    if j + 1 >= result.len() {
        return Err(BaError::PoseIndex {
            index: j + 1,
            len: result.len(),
        });
    }
    let measurement = result.relative_poses[j].relative(&result.relative_poses[j + 1]);
    if result.fallback {
        return Ok(fallback_constraint(measurement));
    }
    match pose_covariance(&result.hessian) {
        Some(cov) => Ok(constraint_from_covariance(result, &cov, j)),
        None => {
            log::warn!("window Hessian is singular, using identity information");
            Ok(fallback_constraint(measurement))
        }
    }
}

/// Constraints for every adjacent pair of the window, inverting the Hessian once.
pub fn adjacent_constraints(result: &WindowResult) -> Vec<RelativeConstraint> {
    let pairs = result.len().saturating_sub(1);
    let fallback_all = || {
        (0..pairs)
            .map(|j| fallback_constraint(result.relative_poses[j].relative(&result.relative_poses[j + 1])))
            .collect()
    };
    if result.fallback {
        return fallback_all();
    }
    match pose_covariance(&result.hessian) {
        Some(cov) => (0..pairs).map(|j| constraint_from_covariance(result, &cov, j)).collect(),
        None => {
            log::warn!("window Hessian is singular, using identity information");
            fallback_all()
        }
    }
}
