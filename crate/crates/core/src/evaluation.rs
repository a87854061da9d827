//! Trajectory and map quality metrics.

use std::collections::HashMap;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rayon::prelude::*;

use crate::error::EvalError;
use crate::geometry::{nearest_rotation, Pose};

pub const DEFAULT_MME_RADIUS: f64 = 0.5;
const MIN_NEIGHBORS: usize = 10;
const DET_REGULARIZER: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct AteResult {
    pub rot_rmse_deg: f64,
    pub trans_rmse_m: f64,
    pub rot_errors_deg: Vec<f64>,
    pub trans_errors_m: Vec<f64>,
    /// Rigid transform applied to the estimate before comparison.
    pub alignment: Pose,
}

/// Least-squares rigid transform `A` minimizing `Σ‖A·src_k − dst_k‖²` (no scale).
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Pose {
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vector3<f64>>() / n;
    let md = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cross = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cross += (d - md) * (s - ms).transpose();
    }
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let (s1, s2) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    let r = if s1 <= 1e-12 * n {
        Matrix3::identity()
    } else if s2 <= 1e-9 * s1 {
        // collinear positions leave the roll about the line free; take the smallest rotation
        let from = v_t.row(order[0]).transpose();
        let to = u.column(order[0]).into_owned();
        match Rotation3::rotation_between(&from, &to) {
            Some(rot) => *rot.matrix(),
            None => {
                let axis = Unit::new_normalize(from.cross(&perpendicular(&from)));
                *Rotation3::from_axis_angle(&axis, std::f64::consts::PI).matrix()
            }
        }
    } else {
        nearest_rotation(&cross)
    };
    Pose::new(r, md - r * ms)
}

fn perpendicular(v: &Vector3<f64>) -> Vector3<f64> {
    if v.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    }
}

/// Absolute trajectory error after rigid alignment of `estimate` onto `ground_truth`.
pub fn ate(estimate: &[Pose], ground_truth: &[Pose]) -> Result<AteResult, EvalError> {
    if estimate.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch {
            estimate: estimate.len(),
            ground_truth: ground_truth.len(),
        });
    }
    if estimate.is_empty() {
        return Err(EvalError::Empty);
    }
    let src: Vec<_> = estimate.iter().map(|p| *p.translation()).collect();
    let dst: Vec<_> = ground_truth.iter().map(|p| *p.translation()).collect();
    let alignment = align_rigid(&src, &dst);
    let mut rot_errors_deg = Vec::with_capacity(estimate.len());
    let mut trans_errors_m = Vec::with_capacity(estimate.len());
    for (e, g) in estimate.iter().zip(ground_truth) {
        let aligned = alignment.compose(e);
        rot_errors_deg.push(g.relative(&aligned).rotation_angle().to_degrees());
        trans_errors_m.push((aligned.translation() - g.translation()).norm());
    }
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    Ok(AteResult {
        rot_rmse_deg: rms(&rot_errors_deg),
        trans_rmse_m: rms(&trans_errors_m),
        rot_errors_deg,
        trans_errors_m,
        alignment,
    })
}

/// Mean differential entropy of the point neighborhoods within `radius`.
pub fn mme(points: &[Vector3<f64>], radius: f64) -> Result<f64, EvalError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(EvalError::InvalidRadius(radius));
    }
    let cell = |p: &Vector3<f64>| -> [i64; 3] {
        [
            (p.x / radius).floor() as i64,
            (p.y / radius).floor() as i64,
            (p.z / radius).floor() as i64,
        ]
    };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let r2 = radius * radius;
    let entropies: Vec<Option<f64>> = points
        .par_iter()
        .map(|p| {
            let c = cell(p);
            // moments about the query point stay well conditioned far from the origin
            let (mut count, mut first, mut second) = (0usize, Vector3::zeros(), Matrix3::zeros());
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(ids) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                            continue;
                        };
                        for &i in ids {
                            let d = points[i] - p;
                            if d.norm_squared() <= r2 {
                                count += 1;
                                first += d;
                                second += d * d.transpose();
                            }
                        }
                    }
                }
            }
            if count < MIN_NEIGHBORS {
                return None;
            }
            let n = count as f64;
            let mean = first / n;
            let cov = second / n - mean * mean.transpose() + Matrix3::identity() * DET_REGULARIZER;
            let scale = 2.0 * std::f64::consts::PI * std::f64::consts::E;
            Some(0.5 * (scale.powi(3) * cov.determinant()).ln())
        })
        .collect();
    // sequential sum in point order keeps the result independent of the thread count
    let (mut sum, mut count) = (0.0, 0usize);
    for h in entropies.into_iter().flatten() {
        sum += h;
        count += 1;
    }
    if count == 0 {
        return Err(EvalError::DegenerateMap { radius });
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_map, Twist};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_pose(rng: &mut ChaCha8Rng, scale: f64) -> Pose {
        exp_map(&Twist::from_fn(|_, _| rng.random_range(-scale..scale)))
    }

    fn random_trajectory(rng: &mut ChaCha8Rng, n: usize) -> Vec<Pose> {
        (0..n).map(|_| random_pose(rng, 2.0)).collect()
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = random_trajectory(&mut rng, 20);
        let r = ate(&gt, &gt).unwrap();
        assert!(r.rot_rmse_deg < 1e-6 && r.trans_rmse_m < 1e-12);
    }

    #[test]
    fn common_rigid_offset_is_aligned_away() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = random_trajectory(&mut rng, 20);
        let offset = random_pose(&mut rng, 3.0);
        let est: Vec<_> = gt.iter().map(|p| offset.compose(p)).collect();
        let r = ate(&est, &gt).unwrap();
        assert!(r.rot_rmse_deg < 1e-6 && r.trans_rmse_m < 1e-9, "{r:?}");
        assert!(r.alignment.max_abs_diff(&offset.inverse()) < 1e-9);
    }

    #[test]
    fn opposite_offsets_give_unit_rmse() {
        let gt = vec![Pose::identity(), Pose::from_translation(Vector3::new(10.0, 0.0, 0.0))];
        let est = vec![
            Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)),
            Pose::from_translation(Vector3::new(9.0, 0.0, 0.0)),
        ];
        let r = ate(&est, &gt).unwrap();
        assert!((r.trans_rmse_m - 1.0).abs() < 1e-12);
        assert!(r.rot_rmse_deg.abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_and_empty() {
        let a = vec![Pose::identity(); 3];
        assert_eq!(
            ate(&a, &a[..2]).unwrap_err(),
            EvalError::LengthMismatch {
                estimate: 3,
                ground_truth: 2
            }
        );
        assert_eq!(ate(&[], &[]).unwrap_err(), EvalError::Empty);
    }

    proptest! {
        #[test]
        fn ate_is_invariant_under_a_common_transform(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = random_trajectory(&mut rng, 12);
            let est: Vec<_> = gt.iter().map(|p| p.retract(&Twist::from_fn(|_, _| rng.random_range(-0.1..0.1)))).collect();
            let t = random_pose(&mut rng, 3.0);
            let moved = |v: &[Pose]| v.iter().map(|p| t.compose(p)).collect::<Vec<_>>();
            let a = ate(&est, &gt).unwrap();
            let b = ate(&moved(&est), &moved(&gt)).unwrap();
            prop_assert!((a.trans_rmse_m - b.trans_rmse_m).abs() < 1e-9);
            prop_assert!((a.rot_rmse_deg - b.rot_rmse_deg).abs() < 1e-9);
            let mean_sq = a.trans_errors_m.iter().map(|e| e * e).sum::<f64>() / 12.0;
            prop_assert!((a.trans_rmse_m.powi(2) - mean_sq).abs() < 1e-12);
        }
    }

    fn noisy_plane(sigma: f64, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        (0..4000)
            .map(|_| {
                Vector3::new(
                    rng.random_range(0.0..4.0),
                    rng.random_range(0.0..4.0),
                    noise.sample(&mut rng),
                )
            })
            .collect()
    }

    #[test]
    fn thicker_planes_have_higher_entropy() {
        let values: Vec<f64> = [0.01, 0.02, 0.04]
            .iter()
            .map(|&s| mme(&noisy_plane(s, 3), DEFAULT_MME_RADIUS).unwrap())
            .collect();
        assert!(values[0] < values[1] && values[1] < values[2], "{values:?}");
    }

    #[test]
    fn entropy_is_rigid_invariant() {
        let pts = noisy_plane(0.02, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_pose(&mut rng, 2.0);
        let moved: Vec<_> = pts.iter().map(|p| t.transform_point(p)).collect();
        let a = mme(&pts, DEFAULT_MME_RADIUS).unwrap();
        let b = mme(&moved, DEFAULT_MME_RADIUS).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} {b}");
    }

    #[test]
    fn single_point_map_is_degenerate() {
        assert_eq!(
            mme(&[Vector3::zeros()], 0.5).unwrap_err(),
            EvalError::DegenerateMap { radius: 0.5 }
        );
        assert_eq!(mme(&[Vector3::zeros()], 0.0).unwrap_err(), EvalError::InvalidRadius(0.0));
    }

    #[test]
    fn entropy_of_an_isotropic_cloud_matches_the_closed_form() {
        // all points inside one neighborhood: entropy = ½ ln((2πe)³ det Σ)
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vector3<f64>> = (0..50)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)))
            .collect();
        let n = pts.len() as f64;
        let mean = pts.iter().sum::<Vector3<f64>>() / n;
        let cov = pts.iter().map(|p| (p - mean) * (p - mean).transpose()).sum::<Matrix3<f64>>() / n;
        let expected = 0.5 * ((2.0 * std::f64::consts::PI * std::f64::consts::E).powi(3) * cov.determinant()).ln();
        let got = mme(&pts, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} {expected}");
    }
}
