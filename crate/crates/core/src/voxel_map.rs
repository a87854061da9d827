//! Adaptive voxelization into plane features.
//!
//! Points of all frames are brought into the global frame, hashed into cubic
//! root cells of edge `V`, and every cell whose points fail the planarity test
//! is split into eight children until it passes or `max_depth` is reached.
//! Retained cells keep, per frame, the sufficient statistics of the points in
//! that frame's local coordinates so that the bundle adjustment never has to
//! touch individual points again.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Matrix3, Vector3};

use crate::error::BaError;
use crate::frame_io::Frame;
use crate::geometry::{sym_eig3, Pose};

/// Scatter matrices whose largest eigenvalue is below this carry no orientation.
const DEGENERATE_SCATTER: f64 = 1e-12;

/// Sufficient statistics of a point set: count, mean and centered second moment.
///
/// Kept centered (merged with the parallel-axis rule) so that thin clusters far
/// from the origin keep their small eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointCluster {
    pub count: usize,
    centroid: Vector3<f64>,
    /// `Σ(p − μ)(p − μ)ᵀ`.
    centered: Matrix3<f64>,
}

impl Default for PointCluster {
    fn default() -> Self {
        Self {
            count: 0,
            centroid: Vector3::zeros(),
            centered: Matrix3::zeros(),
        }
    }
}

impl PointCluster {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Self {
        let mut c = Self::default();
        for p in points {
            c.push(p);
        }
        c
    }

    pub fn push(&mut self, p: &Vector3<f64>) {
        self.count += 1;
        let delta = p - self.centroid;
        self.centroid += delta / self.count as f64;
        self.centered += delta * (p - self.centroid).transpose();
    }

    pub fn merge(&mut self, other: &PointCluster) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = other.centroid - self.centroid;
        self.centroid += delta * (nb / n);
        self.centered += other.centered + delta * delta.transpose() * (na * nb / n);
        self.count += other.count;
    }

    pub fn mean(&self) -> Vector3<f64> {
        self.centroid
    }

    /// `Σp`.
    pub fn sum(&self) -> Vector3<f64> {
        self.count as f64 * self.centroid
    }

    /// `Σppᵀ`.
    pub fn outer(&self) -> Matrix3<f64> {
        self.centered + self.count as f64 * self.centroid * self.centroid.transpose()
    }

    /// `Σ(p − μ)(p − μ)ᵀ/N`.
    pub fn scatter(&self) -> Matrix3<f64> {
        let c = self.centered / self.count as f64;
        0.5 * (c + c.transpose())
    }

    /// Statistics of the same points after applying `pose` to each of them.
    pub fn transformed(&self, pose: &Pose) -> PointCluster {
        let r = pose.rotation();
        PointCluster {
            count: self.count,
            centroid: pose.transform_point(&self.centroid),
            centered: r * self.centered * r.transpose(),
        }
    }
}

/// Eigenvalue-ratio planarity test `λ1/λ3 < θ` on the cluster's scatter.
pub fn plane_test(cluster: &PointCluster, theta: f64) -> bool {
    if cluster.count < 3 {
        return false;
    }
    let eig = sym_eig3(&cluster.scatter());
    let (l1, l3) = (eig.values[0], eig.values[2]);
    if l3 < DEGENERATE_SCATTER {
        return false;
    }
    l1 / l3 < theta
}

/// Integer cell coordinates at a given octree depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelKey {
    pub depth: u8,
    pub index: [i64; 3],
}

impl VoxelKey {
    pub fn of_point(p: &Vector3<f64>, root_size: f64, depth: u8) -> Self {
        let cell = cell_size(root_size, depth);
        Self {
            depth,
            index: [
                (p.x / cell).floor() as i64,
                (p.y / cell).floor() as i64,
                (p.z / cell).floor() as i64,
            ],
        }
    }
}

pub fn cell_size(root_size: f64, depth: u8) -> f64 {
    root_size / (1u64 << depth) as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelConfig {
    /// Root cell edge `V`, meters.
    pub voxel_size: f64,
    /// Planarity threshold on `λ1/λ3`.
    pub theta: f64,
    pub min_points: usize,
    pub max_depth: u8,
}

impl VoxelConfig {
    pub fn local() -> Self {
        Self {
            voxel_size: 4.0,
            theta: 0.05,
            min_points: 20,
            max_depth: 3,
        }
    }

    pub fn global() -> Self {
        Self {
            theta: 0.1,
            ..Self::local()
        }
    }
}

/// The points one frame contributes to a plane voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameObservation {
    /// Position of the frame in the slice the map was built from.
    pub frame: usize,
    /// Statistics in the frame's local coordinates.
    pub cluster: PointCluster,
    pub points: Vec<Vector3<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlaneVoxel {
    pub key: VoxelKey,
    /// Sorted by frame.
    pub observations: Vec<FrameObservation>,
    /// All points in global coordinates at construction time.
    pub merged: PointCluster,
}

impl PlaneVoxel {
    pub fn frame_count(&self) -> usize {
        self.observations.len()
    }
}

/// Re-accumulates the voxel's per-frame clusters under `poses` (indexed by frame position).
pub fn merge_into_global(voxel: &PlaneVoxel, poses: &[Pose]) -> Result<PointCluster, BaError> {
    let mut merged = PointCluster::default();
    for obs in &voxel.observations {
        let pose = poses.get(obs.frame).ok_or(BaError::MissingPose { frame: obs.frame })?;
        merged.merge(&obs.cluster.transformed(pose));
    }
    Ok(merged)
}

/// Count, mean and scatter of a voxel's points under `poses`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: Vector3<f64>,
    pub scatter: Matrix3<f64>,
}

/// Same quantities as `merge_into_global(..).scatter()`, but combined from
/// per-frame centered scatters so that points far from the origin do not
/// cancel catastrophically.
pub fn global_moments(voxel: &PlaneVoxel, poses: &[Pose]) -> Result<Moments, BaError> {
    let mut count = 0usize;
    let mut weighted_mean = Vector3::zeros();
    let mut parts = Vec::with_capacity(voxel.observations.len());
    for obs in &voxel.observations {
        let pose = poses.get(obs.frame).ok_or(BaError::MissingPose { frame: obs.frame })?;
        let c = &obs.cluster;
        if c.count == 0 {
            continue;
        }
        let r = pose.rotation();
        let mean = pose.transform_point(&c.mean());
        weighted_mean += c.count as f64 * mean;
        count += c.count;
        parts.push((c.count as f64, mean, r * c.scatter() * r.transpose()));
    }
    if count == 0 {
        return Ok(Moments {
            count,
            mean: Vector3::zeros(),
            scatter: Matrix3::zeros(),
        });
    }
    let n = count as f64;
    let mean = weighted_mean / n;
    let mut scatter = Matrix3::zeros();
    for (nk, mk, ck) in parts {
        let d = mk - mean;
        scatter += nk * (ck + d * d.transpose());
    }
    scatter /= n;
    Ok(Moments {
        count,
        mean,
        scatter: 0.5 * (scatter + scatter.transpose()),
    })
}

/// (frame position, point index) of one point.
type PointRef = (u32, u32);

struct Builder<'a> {
    frames: &'a [Frame],
    global: Vec<Vec<Vector3<f64>>>,
    config: VoxelConfig,
    out: Vec<PlaneVoxel>,
}

impl Builder<'_> {
    fn global_point(&self, r: PointRef) -> &Vector3<f64> {
        &self.global[r.0 as usize][r.1 as usize]
    }

    fn visit(&mut self, key: VoxelKey, refs: Vec<PointRef>) {
        if refs.len() < self.config.min_points {
            return;
        }
        let merged = PointCluster::from_points(refs.iter().map(|&r| self.global_point(r)));
        if plane_test(&merged, self.config.theta) {
            self.emit(key, merged, &refs);
            return;
        }
        if key.depth >= self.config.max_depth {
            return;
        }
        let depth = key.depth + 1;
        let mut children: BTreeMap<[i64; 3], Vec<PointRef>> = BTreeMap::new();
        for &r in &refs {
            let mut child = VoxelKey::of_point(self.global_point(r), self.config.voxel_size, depth).index;
            // floating-point rounding must not push a point outside its parent
            for (c, parent) in child.iter_mut().zip(key.index) {
                *c = (*c).clamp(2 * parent, 2 * parent + 1);
            }
            children.entry(child).or_default().push(r);
        }
        drop(refs);
        for (index, child_refs) in children {
            self.visit(VoxelKey { depth, index }, child_refs);
        }
    }

    fn emit(&mut self, key: VoxelKey, merged: PointCluster, refs: &[PointRef]) {
        let mut observations: Vec<FrameObservation> = Vec::new();
        for &(f, i) in refs {
            let p = self.frames[f as usize].points[i as usize];
            match observations.last_mut() {
                Some(obs) if obs.frame == f as usize => {
                    obs.cluster.push(&p);
                    obs.points.push(p);
                }
                _ => observations.push(FrameObservation {
                    frame: f as usize,
                    cluster: PointCluster::from_points([&p]),
                    points: vec![p],
                }),
            }
        }
        self.out.push(PlaneVoxel {
            key,
            observations,
            merged,
        });
    }
}

/// Builds the plane-voxel map of `frames` placed by their (global) poses.
///
/// Output is sorted by root cell and then depth-first by child cell, so it is
/// a pure function of the input order and the configuration.
pub fn build_adaptive_map(frames: &[Frame], config: &VoxelConfig) -> Vec<PlaneVoxel> {
    assert!(config.voxel_size > 0.0, "voxel size must be positive");
    let global: Vec<Vec<Vector3<f64>>> = frames.iter().map(|f| f.global_points().collect()).collect();
    let mut roots: HashMap<[i64; 3], Vec<PointRef>> = HashMap::new();
    for (f, pts) in global.iter().enumerate() {
        for (i, p) in pts.iter().enumerate() {
            let key = VoxelKey::of_point(p, config.voxel_size, 0);
            roots.entry(key.index).or_default().push((f as u32, i as u32));
        }
    }
    let mut roots: Vec<([i64; 3], Vec<PointRef>)> = roots.into_iter().collect();
    roots.sort_unstable_by_key(|(k, _)| *k);
    let mut builder = Builder {
        frames,
        global,
        config: *config,
        out: Vec::new(),
    };
    for (index, refs) in roots {
        builder.visit(VoxelKey { depth: 0, index }, refs);
    }
    builder.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_map, Twist};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn frame(points: Vec<Vector3<f64>>) -> Frame {
        Frame::new(0, points, Pose::identity())
    }

    #[test]
    fn plane_points_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<_> = (0..200)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
            .collect();
        assert!(plane_test(&PointCluster::from_points(&pts), 0.05));
    }

    #[test]
    fn isotropic_cloud_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<_> = (0..10_000)
            .map(|_| Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        let c = PointCluster::from_points(&pts);
        let eig = sym_eig3(&c.scatter());
        assert!(eig.values[0] / eig.values[2] > 0.9);
        assert!(!plane_test(&c, 0.05));
    }

    #[test]
    fn coincident_points_fail() {
        let pts = vec![Vector3::new(1.0, 2.0, 3.0); 50];
        assert!(!plane_test(&PointCluster::from_points(&pts), 0.05));
        assert!(!plane_test(&PointCluster::from_points(&pts[..2]), 0.05));
    }

    #[test]
    fn single_plane_fills_root_cells() {
        // 100 x 100 grid over [0.1, 19.9]² on z = 0.5 (inside one root layer)
        let pts: Vec<_> = (0..10_000)
            .map(|i| Vector3::new(0.1 + 0.198 * (i % 100) as f64, 0.1 + 0.198 * (i / 100) as f64, 0.5))
            .collect();
        let map = build_adaptive_map(&[frame(pts)], &VoxelConfig::local());
        assert_eq!(map.len(), 25);
        assert!(map.iter().all(|v| v.key.depth == 0));
        let total: usize = map.iter().map(|v| v.merged.count).sum();
        assert_eq!(total, 10_000);
    }

    #[test]
    fn random_cube_is_discarded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<_> = (0..20_000)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(0.0..4.0)))
            .collect();
        let map = build_adaptive_map(&[frame(pts)], &VoxelConfig::local());
        assert!(map.is_empty(), "{} voxels retained", map.len());
    }

    #[test]
    fn perpendicular_walls_split() {
        // walls x = 1.3 and y = 2.7 crossing the root cell [0,4)³
        let mut pts = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                let a = 0.02 + i as f64 * 0.066;
                let b = 0.02 + j as f64 * 0.066;
                pts.push(Vector3::new(1.3, a, b));
                pts.push(Vector3::new(a, 2.7, b));
            }
        }
        let cfg = VoxelConfig::local();
        let map = build_adaptive_map(&[frame(pts)], &cfg);
        assert!(map.len() >= 2);
        for v in &map {
            assert!(v.key.depth > 0);
            let eig = sym_eig3(&v.merged.scatter());
            assert!(eig.values[0] / eig.values[2] < cfg.theta);
            assert!(v.merged.count >= cfg.min_points);
        }
    }

    #[test]
    fn negative_coordinates_use_floor() {
        let key = VoxelKey::of_point(&Vector3::new(-0.1, 4.0, -4.0), 4.0, 0);
        assert_eq!(key.index, [-1, 1, -1]);
        let key = VoxelKey::of_point(&Vector3::new(-0.1, 4.0, -4.0), 4.0, 3);
        assert_eq!(key.index, [-1, 8, -8]);
    }

    #[test]
    fn merge_identity_poses_is_plain_sum() {
        let a = PointCluster::from_points(&[Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.0, 1.0, 0.0)]);
        let b = PointCluster::from_points(&[Vector3::new(-1.0, 0.5, 2.0)]);
        let voxel = PlaneVoxel {
            key: VoxelKey { depth: 0, index: [0; 3] },
            observations: vec![
                FrameObservation { frame: 0, cluster: a, points: vec![] },
                FrameObservation { frame: 1, cluster: b, points: vec![] },
            ],
            merged: PointCluster::default(),
        };
        let merged = merge_into_global(&voxel, &[Pose::identity(); 2]).unwrap();
        let mut expected = a;
        expected.merge(&b);
        assert_eq!(merged, expected);
        assert!(matches!(
            merge_into_global(&voxel, &[Pose::identity()]),
            Err(BaError::MissingPose { frame: 1 })
        ));
    }

    #[test]
    fn single_point_transform() {
        let p = Vector3::new(0.3, -1.2, 2.0);
        let pose = exp_map(&Twist::new(0.2, -0.4, 0.9, 1.0, 2.0, 3.0));
        let c = PointCluster::from_points([&p]).transformed(&pose);
        let q = pose.transform_point(&p);
        assert!((c.sum() - q).amax() < 1e-14);
        assert!((c.outer() - q * q.transpose()).amax() < 1e-13);
    }

    proptest! {
        #[test]
        fn cluster_transform_matches_raw_points(
            seed in any::<u64>(),
            n in 1usize..40,
            twist in proptest::array::uniform6(-2.0f64..2.0),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::from_fn(|_, _| rng.random_range(-20.0..20.0)))
                .collect();
            let mut v = Twist::from_row_slice(&twist);
            for k in 3..6 { v[k] *= 10.0; }
            let pose = exp_map(&v);
            let fast = PointCluster::from_points(&pts).transformed(&pose);
            let moved: Vec<_> = pts.iter().map(|p| pose.transform_point(p)).collect();
            let slow = PointCluster::from_points(&moved);
            let scale = slow.outer().amax().max(1.0);
            prop_assert!((fast.outer() - slow.outer()).amax() <= 1e-9 * scale);
            prop_assert!((fast.sum() - slow.sum()).amax() <= 1e-9 * slow.sum().amax().max(1.0));
        }

        #[test]
        fn merge_commutes_and_scatter_is_psd(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut make = |n: usize| {
                let pts: Vec<Vector3<f64>> = (0..n)
                    .map(|_| Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)))
                    .collect();
                PointCluster::from_points(&pts)
            };
            let (a, b, c) = (make(5), make(7), make(3));
            let mut ab = a; ab.merge(&b);
            let mut ba = b; ba.merge(&a);
            prop_assert!((ab.outer() - ba.outer()).amax() < 1e-12);
            let mut ab_c = ab; ab_c.merge(&c);
            let mut bc = b; bc.merge(&c);
            let mut a_bc = a; a_bc.merge(&bc);
            prop_assert!((ab_c.outer() - a_bc.outer()).amax() < 1e-10);
            let s = ab_c.scatter();
            prop_assert!(sym_eig3(&s).values[0] >= -1e-9 * s.trace());
        }
    }
}
