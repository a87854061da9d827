//! Synthetic planar worlds, ray-cast scans and perturbed trajectories.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ba::BaProblem;
use crate::config::{parse_key_values, KeyValue};
use crate::error::{ConfigError, Error, FrameIoError, SynthError};
use crate::frame_io::{encode_bin_xyzi, write_trajectory, Frame, PoseFormat, Trajectory};
use crate::geometry::{exp_map, Pose, Twist};
use crate::voxel_map::{FrameObservation, PlaneVoxel, PointCluster, VoxelKey};

/// A finite rectangle: `point + a·u + b·(n × u)` with `|a| ≤ half_u`, `|b| ≤ half_v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub u_axis: Vector3<f64>,
    pub half_u: f64,
    pub half_v: f64,
}

impl Plane {
    pub fn new(point: Vector3<f64>, normal: Vector3<f64>, u_axis: Vector3<f64>, half_u: f64, half_v: f64) -> Self {
        let normal = normal.normalize();
        let u_axis = (u_axis - normal * normal.dot(&u_axis)).normalize();
        Self {
            point,
            normal,
            u_axis,
            half_u,
            half_v,
        }
    }

    pub fn v_axis(&self) -> Vector3<f64> {
        self.normal.cross(&self.u_axis)
    }

    /// Ray parameter of the hit inside the rectangle, if any.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.point - origin)) / denom;
        if t <= 0.0 {
            return None;
        }
        let rel = origin + dir * t - self.point;
        (rel.dot(&self.u_axis).abs() <= self.half_u && rel.dot(&self.v_axis()).abs() <= self.half_v).then_some(t)
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.point)).abs()
    }
}

/// Walls, floor and ceiling of a 10 x 10 x 3 m room with open corners.
///
/// Every surface keeps to its own cells of the 4 m grid: the walls sit in
/// the outer cells and only span the inner `[-4, 4)` band laterally, as do
/// floor and ceiling. Surfaces are also a quarter meter off every multiple of
/// 0.5 m so none lies on a cell boundary.
pub fn box_room() -> Vec<Plane> {
    let (lo, hi) = (-4.75, 5.25);
    let (floor, ceiling) = (-1.25, 1.75);
    let half = 3.95;
    let mid_z = 0.5 * (floor + ceiling);
    let half_z = 0.5 * (ceiling - floor);
    let x = Vector3::x();
    let y = Vector3::y();
    let z = Vector3::z();
    vec![
        Plane::new(Vector3::new(lo, 0.0, mid_z), x, y, half, half_z),
        Plane::new(Vector3::new(hi, 0.0, mid_z), -x, y, half, half_z),
        Plane::new(Vector3::new(0.0, lo, mid_z), y, x, half, half_z),
        Plane::new(Vector3::new(0.0, hi, mid_z), -y, x, half, half_z),
        Plane::new(Vector3::new(0.0, 0.0, floor), z, x, half, half),
        Plane::new(Vector3::new(0.0, 0.0, ceiling), -z, x, half, half),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    Loop,
    Line,
    FigureEight,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loop" => Ok(Self::Loop),
            "line" => Ok(Self::Line),
            "figure-eight" | "figure_eight" => Ok(Self::FigureEight),
            _ => Err(format!("unknown trajectory `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub frames: usize,
    /// Path length between consecutive frames, meters.
    pub step: f64,
    /// Loop radius or figure-eight half width, meters.
    pub radius: f64,
    /// Center of the path.
    pub center: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorSpec {
    pub azimuth_rays: usize,
    pub elevation_rays: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub max_range: f64,
    pub point_noise: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PerturbationSpec {
    /// White noise on every pose except the first.
    pub rotation_deg: f64,
    pub translation_m: f64,
    /// Per-frame random-walk increments accumulated along the trajectory.
    pub drift_rotation_deg: f64,
    pub drift_translation_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub planes: Vec<Plane>,
    pub trajectory: TrajectorySpec,
    pub sensor: SensorSpec,
    pub perturbation: PerturbationSpec,
}

impl SceneSpec {
    /// Box room with a loop of `frames` poses, noiseless scans, no perturbation.
    pub fn box_room_loop(frames: usize) -> Self {
        Self {
            planes: box_room(),
            trajectory: TrajectorySpec {
                kind: TrajectoryKind::Loop,
                frames,
                step: 0.15,
                radius: 2.5,
                center: Vector3::new(0.25, 0.25, 0.25),
            },
            sensor: SensorSpec {
                azimuth_rays: 120,
                elevation_rays: 10,
                elevation_min_deg: -45.0,
                elevation_max_deg: 45.0,
                max_range: 50.0,
                point_noise: 0.0,
                seed: 1,
            },
            perturbation: PerturbationSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidScene(m.to_string()));
        if self.planes.is_empty() {
            return bad("no planes");
        }
        if self.planes.iter().any(|p| !(p.half_u > 0.0 && p.half_v > 0.0)) {
            return bad("plane extents must be positive");
        }
        if self.planes.iter().any(|p| !p.normal.iter().chain(p.point.iter()).all(|v| v.is_finite())) {
            return bad("plane parameters must be finite");
        }
        let t = &self.trajectory;
        if t.frames < 1 || !(t.step > 0.0) || !(t.radius > 0.0) {
            return bad("trajectory needs frames >= 1, step > 0 and radius > 0");
        }
        let s = &self.sensor;
        if s.azimuth_rays == 0 || s.elevation_rays == 0 || !(s.max_range > 0.0) || !(s.point_noise >= 0.0) {
            return bad("sensor needs rays > 0, max_range > 0 and point_noise >= 0");
        }
        let p = &self.perturbation;
        if [p.rotation_deg, p.translation_m, p.drift_rotation_deg, p.drift_translation_m]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return bad("perturbation magnitudes must be non-negative");
        }
        Ok(())
    }

    /// Parses the `key = value` scene format. Repeated `plane` lines replace the default room.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut spec = Self::box_room_loop(125);
        let mut planes = Vec::new();
        for KeyValue { line, key, value } in parse_key_values(text)? {
            let invalid = || ConfigError::InvalidValue {
                key: key.clone(),
                value: value.clone(),
            };
            let num = || value.parse::<f64>().map_err(|_| invalid());
            let int = || value.parse::<usize>().map_err(|_| invalid());
            match key.as_str() {
                "plane" => {
                    let v: Vec<f64> = value
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| invalid())?;
                    if v.len() != 11 {
                        return Err(invalid().into());
                    }
                    let normal = Vector3::new(v[3], v[4], v[5]);
                    let u = Vector3::new(v[6], v[7], v[8]);
                    if normal.norm() < 1e-9 || normal.cross(&u).norm() < 1e-9 * u.norm().max(1.0) {
                        return Err(invalid().into());
                    }
                    planes.push(Plane::new(Vector3::new(v[0], v[1], v[2]), normal, u, v[9], v[10]));
                }
                "trajectory" => spec.trajectory.kind = value.parse().map_err(|_| invalid())?,
                "frames" => spec.trajectory.frames = int()?,
                "step" => spec.trajectory.step = num()?,
                "radius" => spec.trajectory.radius = num()?,
                "center" => {
                    let v: Vec<f64> = value
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| invalid())?;
                    if v.len() != 3 {
                        return Err(invalid().into());
                    }
                    spec.trajectory.center = Vector3::new(v[0], v[1], v[2]);
                }
                "azimuth_rays" => spec.sensor.azimuth_rays = int()?,
                "elevation_rays" => spec.sensor.elevation_rays = int()?,
                "elevation_min_deg" => spec.sensor.elevation_min_deg = num()?,
                "elevation_max_deg" => spec.sensor.elevation_max_deg = num()?,
                "max_range" => spec.sensor.max_range = num()?,
                "point_noise" => spec.sensor.point_noise = num()?,
                "seed" => spec.sensor.seed = value.parse().map_err(|_| invalid())?,
                "rotation_noise_deg" => spec.perturbation.rotation_deg = num()?,
                "translation_noise_m" => spec.perturbation.translation_m = num()?,
                "drift_rotation_deg" => spec.perturbation.drift_rotation_deg = num()?,
                "drift_translation_m" => spec.perturbation.drift_translation_m = num()?,
                _ => return Err(ConfigError::UnknownKey { line, key }.into()),
            }
        }
        if !planes.is_empty() {
            spec.planes = planes;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Poses of the noiseless sensor path.
pub fn ground_truth_trajectory(spec: &TrajectorySpec) -> Vec<Pose> {
    (0..spec.frames)
        .map(|k| {
            let s = k as f64 * spec.step;
            let (pos, tangent) = match spec.kind {
                TrajectoryKind::Line => (Vector3::new(s - 0.5 * spec.radius, 0.0, 0.0), Vector3::x()),
                TrajectoryKind::Loop => {
                    let a = s / spec.radius;
                    (
                        Vector3::new(spec.radius * a.cos(), spec.radius * a.sin(), 0.0),
                        Vector3::new(-a.sin(), a.cos(), 0.0),
                    )
                }
                TrajectoryKind::FigureEight => {
                    // lemniscate of Gerono, parameter advanced by arc length / radius
                    let a = s / spec.radius;
                    let r = spec.radius;
                    (
                        Vector3::new(r * a.sin(), r * a.sin() * a.cos(), 0.0),
                        Vector3::new(a.cos(), (2.0 * a).cos(), 0.0).normalize(),
                    )
                }
            };
            let yaw = tangent.y.atan2(tangent.x);
            // gentle roll/pitch sway so every axis gets exercised
            let roll = 0.03 * (0.7 * k as f64).sin();
            let pitch = 0.03 * (0.5 * k as f64).cos();
            Pose::from_axis_angle(Vector3::new(0.0, 0.0, yaw), spec.center + pos)
                .compose(&Pose::from_axis_angle(Vector3::new(roll, pitch, 0.0), Vector3::zeros()))
        })
        .collect()
}

fn ray_directions(sensor: &SensorSpec) -> Vec<Vector3<f64>> {
    let mut dirs = Vec::with_capacity(sensor.azimuth_rays * sensor.elevation_rays);
    for e in 0..sensor.elevation_rays {
        let frac = if sensor.elevation_rays == 1 {
            0.5
        } else {
            e as f64 / (sensor.elevation_rays - 1) as f64
        };
        let elev = (sensor.elevation_min_deg + frac * (sensor.elevation_max_deg - sensor.elevation_min_deg)).to_radians();
        for a in 0..sensor.azimuth_rays {
            let az = 2.0 * PI * a as f64 / sensor.azimuth_rays as f64;
            dirs.push(Vector3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()));
        }
    }
    dirs
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    /// Frames carry local points and the perturbed pose.
    pub frames: Vec<Frame>,
    pub ground_truth: Vec<Pose>,
    pub perturbed: Vec<Pose>,
    /// Source plane of every point, parallel to `frames[k].points`.
    pub plane_ids: Vec<Vec<usize>>,
}

impl SyntheticData {
    pub fn ground_truth_frames(&self) -> Vec<Frame> {
        self.frames
            .iter()
            .zip(&self.ground_truth)
            .map(|(f, p)| Frame {
                pose: *p,
                ..f.clone()
            })
            .collect()
    }
}

fn gaussian_twist(rng: &mut ChaCha8Rng, rot_sigma: f64, trans_sigma: f64) -> Twist {
    let mut v = Twist::zeros();
    if rot_sigma > 0.0 {
        let n = Normal::new(0.0, rot_sigma).expect("finite sigma");
        for k in 0..3 {
            v[k] = n.sample(rng);
        }
    }
    if trans_sigma > 0.0 {
        let n = Normal::new(0.0, trans_sigma).expect("finite sigma");
        for k in 3..6 {
            v[k] = n.sample(rng);
        }
    }
    v
}

/// Drifted and noisy copy of `truth`; the first pose is kept exact.
pub fn perturb_trajectory(truth: &[Pose], p: &PerturbationSpec, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let mut out: Vec<Pose> = Vec::with_capacity(truth.len());
    let mut drifted = match truth.first() {
        Some(t) => *t,
        None => return out,
    };
    out.push(drifted);
    for k in 1..truth.len() {
        let step = truth[k - 1].relative(&truth[k]);
        let drift = gaussian_twist(rng, p.drift_rotation_deg.to_radians(), p.drift_translation_m);
        drifted = drifted.compose(&step).compose(&exp_map(&drift));
        let noise = gaussian_twist(rng, p.rotation_deg.to_radians(), p.translation_m);
        out.push(drifted.retract(&noise));
    }
    out
}

/// Ray-casts every ground-truth pose against the scene and perturbs the trajectory.
pub fn generate(spec: &SceneSpec) -> Result<SyntheticData, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.sensor.seed);
    let ground_truth = ground_truth_trajectory(&spec.trajectory);
    let dirs = ray_directions(&spec.sensor);
    let noise = (spec.sensor.point_noise > 0.0).then(|| Normal::new(0.0, spec.sensor.point_noise).expect("finite sigma"));

    let mut scans = Vec::with_capacity(ground_truth.len());
    let mut plane_ids = Vec::with_capacity(ground_truth.len());
    for (k, pose) in ground_truth.iter().enumerate() {
        let origin = pose.translation();
        let r: &Matrix3<f64> = pose.rotation();
        let inv = pose.inverse();
        let mut points = Vec::new();
        let mut ids = Vec::new();
        for d in &dirs {
            let dir = r * d;
            let hit = spec
                .planes
                .iter()
                .enumerate()
                .filter_map(|(i, pl)| pl.intersect(origin, &dir).map(|t| (t, i)))
                .filter(|(t, _)| *t <= spec.sensor.max_range)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((t, i)) = hit {
                let mut local = inv.transform_point(&(origin + dir * t));
                if let Some(n) = &noise {
                    local += Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
                }
                points.push(local);
                ids.push(i);
            }
        }
        if points.is_empty() {
            return Err(SynthError::EmptyScan { frame: k });
        }
        scans.push(points);
        plane_ids.push(ids);
    }

    let perturbed = perturb_trajectory(&ground_truth, &spec.perturbation, &mut rng);
    let frames = scans
        .into_iter()
        .zip(&perturbed)
        .enumerate()
        .map(|(k, (pts, pose))| Frame::new(k, pts, *pose))
        .collect();
    Ok(SyntheticData {
        frames,
        ground_truth,
        perturbed,
        plane_ids,
    })
}

/// Writes `scans/NNNNNN.bin`, `poses_gt.txt` and `poses_init.txt` (kitti) under `dir`.
pub fn write_fixture(data: &SyntheticData, dir: &Path) -> Result<(), FrameIoError> {
    let scans = dir.join("scans");
    std::fs::create_dir_all(&scans).map_err(|e| FrameIoError::io(&scans, e))?;
    for (k, f) in data.frames.iter().enumerate() {
        let path = scans.join(format!("{k:06}.bin"));
        std::fs::write(&path, encode_bin_xyzi(&f.points)).map_err(|e| FrameIoError::io(&path, e))?;
    }
    write_trajectory(
        &Trajectory::new(data.ground_truth.clone()),
        &dir.join("poses_gt.txt"),
        PoseFormat::Kitti,
    )?;
    write_trajectory(
        &Trajectory::new(data.perturbed.clone()),
        &dir.join("poses_init.txt"),
        PoseFormat::Kitti,
    )
}

/// Parameters of a random plane-voxel BA problem, independent of any scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneProblemSpec {
    pub poses: usize,
    pub voxels: usize,
    pub points_per_frame: usize,
    pub point_noise: f64,
    /// Standard deviation of the initial pose error, radians.
    pub rotation_noise: f64,
    pub translation_noise: f64,
}

#[derive(Clone, Debug)]
pub struct PlaneProblem {
    pub problem: BaProblem,
    pub truth: Vec<Pose>,
}

/// Random planar patches observed from random poses, with pose 0 as exact anchor.
pub fn random_plane_problem(rng: &mut ChaCha8Rng, spec: &PlaneProblemSpec) -> PlaneProblem {
    let mut truth = vec![Pose::identity()];
    for _ in 1..spec.poses {
        let v = Twist::from_fn(|i, _| {
            if i < 3 {
                rng.random_range(-0.3f64..0.3)
            } else {
                rng.random_range(-2.0f64..2.0)
            }
        });
        truth.push(exp_map(&v));
    }
    let noise = (spec.point_noise > 0.0).then(|| Normal::new(0.0, spec.point_noise).expect("finite sigma"));
    let mut voxels = Vec::with_capacity(spec.voxels);
    for vi in 0..spec.voxels {
        let normal = Vector3::from_fn(|_, _| rng.random_range(-1.0f64..1.0)).normalize();
        let helper = if normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = normal.cross(&helper).normalize();
        let v = normal.cross(&u);
        let center = Vector3::from_fn(|_, _| rng.random_range(-5.0f64..5.0));
        let mut frames: Vec<usize> = (0..spec.poses).filter(|_| rng.random_bool(0.7)).collect();
        if frames.len() < 2 {
            frames = vec![0, spec.poses - 1];
        }
        let mut observations = Vec::new();
        let mut merged = PointCluster::default();
        for &k in &frames {
            let inv = truth[k].inverse();
            let mut points = Vec::with_capacity(spec.points_per_frame);
            for _ in 0..spec.points_per_frame {
                let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let mut p = center + u * a + v * b;
                if let Some(n) = &noise {
                    p += Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
                }
                merged.push(&p);
                points.push(inv.transform_point(&p));
            }
            observations.push(FrameObservation {
                frame: k,
                cluster: PointCluster::from_points(&points),
                points,
            });
        }
        voxels.push(PlaneVoxel {
            key: VoxelKey {
                depth: 0,
                index: [vi as i64, 0, 0],
            },
            observations,
            merged,
        });
    }
    let mut poses = vec![truth[0]];
    for t in &truth[1..] {
        poses.push(t.retract(&gaussian_twist(rng, spec.rotation_noise, spec.translation_noise)));
    }
    PlaneProblem {
        problem: BaProblem::new(voxels, poses).expect("fixture frames index existing poses"),
        truth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_room_scans_see_three_independent_planes() {
        let data = generate(&SceneSpec::box_room_loop(125)).unwrap();
        assert_eq!(data.frames.len(), 125);
        let planes = box_room();
        for ids in &data.plane_ids {
            let mut seen: Vec<usize> = ids.clone();
            seen.sort_unstable();
            seen.dedup();
            let normals = Matrix3::from_columns(&[planes[seen[0]].normal, planes[seen[1]].normal, planes[seen[2]].normal]);
            let stacked: Vec<Vector3<f64>> = seen.iter().map(|&i| planes[i].normal).collect();
            let mut scatter = Matrix3::zeros();
            for n in &stacked {
                scatter += n * n.transpose();
            }
            assert!(scatter.determinant() > 0.5, "normals {normals}");
        }
    }

    #[test]
    fn noisy_points_stay_near_their_planes() {
        let mut spec = SceneSpec::box_room_loop(20);
        spec.sensor.point_noise = 0.02;
        let data = generate(&spec).unwrap();
        let planes = box_room();
        let (mut total, mut inside) = (0usize, 0usize);
        for (k, frame) in data.frames.iter().enumerate() {
            for (p, &id) in frame.points.iter().zip(&data.plane_ids[k]) {
                let g = data.ground_truth[k].transform_point(p);
                total += 1;
                if planes[id].distance(&g) <= 3.0 * 0.02 {
                    inside += 1;
                }
            }
        }
        // normal component of isotropic noise: two-sided 3σ mass 0.9973
        let frac = inside as f64 / total as f64;
        assert!(frac > 0.995, "{frac}");
        assert_eq!(total, data.frames.iter().map(|f| f.points.len()).sum::<usize>());
    }

    #[test]
    fn noiseless_points_lie_on_planes() {
        let data = generate(&SceneSpec::box_room_loop(10)).unwrap();
        let planes = box_room();
        for (k, frame) in data.frames.iter().enumerate() {
            for (p, &id) in frame.points.iter().zip(&data.plane_ids[k]) {
                assert!(planes[id].distance(&data.ground_truth[k].transform_point(p)) < 1e-12);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let mut spec = SceneSpec::box_room_loop(15);
        spec.sensor.point_noise = 0.01;
        spec.perturbation.rotation_deg = 0.5;
        spec.perturbation.drift_translation_m = 0.01;
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        for (x, y) in a.frames.iter().zip(&b.frames) {
            assert_eq!(x.points, y.points);
            assert_eq!(x.pose, y.pose);
        }
    }

    #[test]
    fn empty_scene_view_is_an_error() {
        let mut spec = SceneSpec::box_room_loop(3);
        spec.planes = vec![Plane::new(Vector3::new(100.0, 0.0, 0.0), Vector3::x(), Vector3::y(), 1.0, 1.0)];
        spec.sensor.max_range = 10.0;
        assert!(matches!(generate(&spec), Err(SynthError::EmptyScan { frame: 0 })));
    }

    #[test]
    fn perturbation_keeps_first_pose_and_zero_is_identity() {
        let truth = ground_truth_trajectory(&SceneSpec::box_room_loop(30).trajectory);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let same = perturb_trajectory(&truth, &PerturbationSpec::default(), &mut rng);
        for (a, b) in same.iter().zip(&truth) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
        let p = PerturbationSpec {
            drift_translation_m: 0.05,
            ..Default::default()
        };
        let drifted = perturb_trajectory(&truth, &p, &mut rng);
        assert_eq!(drifted[0], truth[0]);
        assert!(drifted[29].max_abs_diff(&truth[29]) > 1e-3);
    }

    #[test]
    fn scene_spec_parsing() {
        let spec = SceneSpec::parse(
            "# room\ntrajectory = figure-eight\nframes = 40\npoint_noise = 0.01\n\
             plane = 0 0 -1 0 0 1 1 0 0 5 5\nplane = 3 0 0 -1 0 0 0 1 0 5 2\nplane = 0 3 0 0 -1 0 1 0 0 5 2\n",
        )
        .unwrap();
        assert_eq!(spec.trajectory.kind, TrajectoryKind::FigureEight);
        assert_eq!(spec.trajectory.frames, 40);
        assert_eq!(spec.planes.len(), 3);
        assert!(SceneSpec::parse("frames = 10\nbogus = 1\n").is_err());
        assert!(SceneSpec::parse("plane = 0 0 0 0 0 1 0 0 1 1 1\n").is_err());
        assert!(SceneSpec::parse("frames = x\n").is_err());
    }
}
