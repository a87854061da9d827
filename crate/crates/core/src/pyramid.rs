//! Bottom-up layer construction.
//!
//! Each layer is cut into overlapping windows that are solved independently;
//! every window then collapses into one keyframe of the next layer. The top
//! layer is solved as a single window.

use std::borrow::Cow;
use std::ops::Range;

use rayon::prelude::*;

use crate::ba::{solve_window, BaConfig, SolvedWindow, WindowResult};
use crate::error::{BaError, ConfigError, Error};
use crate::frame_io::Frame;
use crate::geometry::Pose;
use crate::voxel_map::{PlaneVoxel, VoxelConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PyramidConfig {
    pub window: usize,
    pub stride: usize,
    pub workers: usize,
    /// Total layer count including the top; 0 selects it from the cost model.
    pub layers: usize,
    pub local: VoxelConfig,
    pub global: VoxelConfig,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            window: 10,
            stride: 5,
            workers: 8,
            layers: 0,
            local: VoxelConfig::local(),
            global: VoxelConfig::global(),
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stride < 2 || self.stride >= self.window {
            return Err(ConfigError::Invalid(format!(
                "stride must satisfy 2 <= s < w, got s={} w={}",
                self.stride, self.window
            )));
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        for v in [&self.local, &self.global] {
            if !(v.voxel_size > 0.0) || !(v.theta > 0.0) {
                return Err(ConfigError::Invalid("voxel size and plane threshold must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpan {
    pub start: usize,
    pub len: usize,
}

impl WindowSpan {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Windows starting at `s·j`, `j = 0..=⌊(N−w)/s⌋`; the last one absorbs trailing frames.
pub fn partition_windows(n: usize, w: usize, s: usize) -> Vec<WindowSpan> {
    if n < w {
        return vec![WindowSpan { start: 0, len: n }];
    }
    let count = (n - w) / s + 1;
    let mut spans: Vec<WindowSpan> = (0..count).map(|j| WindowSpan { start: s * j, len: w }).collect();
    if let Some(last) = spans.last_mut() {
        last.len = n - last.start;
    }
    spans
}

/// Predicted solve time `T_l` of an `l`-layer pyramid, in units of a cubic BA solve.
pub fn predict_cost(n: usize, w: usize, s: usize, workers: usize, l: usize) -> f64 {
    let n = n as f64;
    if l <= 1 {
        return n * n * n;
    }
    let s = s as f64;
    let w = w as f64;
    let windows: f64 = (1..l).map(|i| n / s.powi(i as i32)).sum();
    let top = n / s.powi(l as i32 - 1);
    w * w * w / workers as f64 * windows + top * top * top
}

/// Real-valued stationary point of the cost model, `½·log_s(3N²(s³−s)n/w³)`.
pub fn closed_form_layers_real(n: usize, w: usize, s: usize, workers: usize) -> f64 {
    let (n, w, s, k) = (n as f64, w as f64, s as f64, workers as f64);
    0.5 * (3.0 * n * n * (s * s * s - s) * k / (w * w * w)).ln() / s.ln()
}

pub fn closed_form_l(n: usize, w: usize, s: usize, workers: usize) -> i64 {
    closed_form_layers_real(n, w, s, workers).floor() as i64
}

/// `1 + ⌊log_s(N/w)⌋`, the most layers that keep at least `w` frames on top.
pub fn layer_cap(n: usize, w: usize, s: usize) -> usize {
    if n < w {
        return 1;
    }
    let mut cap = 1;
    let mut top = w;
    while top.saturating_mul(s) <= n {
        top *= s;
        cap += 1;
    }
    cap
}

/// Integer argmin of [`predict_cost`] over `1..=layer_cap`, ties to the smaller `l`.
pub fn select_layers(n: usize, w: usize, s: usize, workers: usize) -> usize {
    let mut best = 1;
    let mut best_cost = predict_cost(n, w, s, workers, 1);
    for l in 2..=layer_cap(n, w, s) {
        let c = predict_cost(n, w, s, workers, l);
        if c < best_cost {
            best = l;
            best_cost = c;
        }
    }
    best
}

/// Keyframe of a solved window: its plane points expressed in the window's first frame.
pub fn aggregate_keyframe(voxels: &[PlaneVoxel], result: &WindowResult, index: usize, pose: Pose) -> Frame {
    let mut points = Vec::new();
    for v in voxels {
        for obs in &v.observations {
            let rel = &result.relative_poses[obs.frame];
            points.extend(obs.points.iter().map(|p| rel.transform_point(p)));
        }
    }
    Frame::new(index, points, pose)
}

#[derive(Clone, Debug)]
pub struct Layer {
    /// 1-based layer number.
    pub index: usize,
    pub frame_count: usize,
    pub windows: Vec<WindowSpan>,
    pub results: Vec<WindowResult>,
}

#[derive(Clone, Debug)]
pub struct Pyramid {
    /// Bottom first; the last layer holds the single global window.
    pub layers: Vec<Layer>,
    pub stride: usize,
    /// Global pose of layer-1 frame 0, which every keyframe chain starts from.
    pub base_pose: Pose,
    /// Voxelization and BA time summed over all windows.
    pub voxel_seconds: f64,
    pub ba_seconds: f64,
}

impl Pyramid {
    pub fn top(&self) -> &WindowResult {
        &self.layers.last().expect("pyramid has a top layer").results[0]
    }

    /// Global poses of the top-layer keyframes after the global BA.
    pub fn top_poses(&self) -> Vec<Pose> {
        self.top().relative_poses.iter().map(|r| self.base_pose.compose(r)).collect()
    }
}

fn solve_or_passthrough(
    frames: &[Frame],
    ba: &BaConfig,
    voxel: &VoxelConfig,
    layer: usize,
    window: usize,
) -> Result<SolvedWindow, Error> {
    match solve_window(frames, ba, voxel) {
        Ok(s) => Ok(s),
        Err(BaError::NoFeatures) => {
            log::warn!("layer {layer} window {window}: no plane features, poses passed through");
            let inv = frames[0].pose.inverse();
            Ok(SolvedWindow {
                result: WindowResult::passthrough(frames.iter().map(|f| inv.compose(&f.pose)).collect()),
                voxels: Vec::new(),
                voxel_seconds: 0.0,
                ba_seconds: 0.0,
            })
        }
        Err(source) => Err(Error::Ba { layer, window, source }),
    }
}

/// Builds all layers from the layer-1 `frames` (which carry their current global poses).
pub fn build_pyramid(frames: &[Frame], config: &PyramidConfig, ba: &BaConfig) -> Result<Pyramid, Error> {
    config.validate()?;
    if frames.len() < 2 {
        return Err(Error::Ba {
            layer: 1,
            window: 0,
            source: BaError::TooFewFrames(frames.len()),
        });
    }
    let (w, s) = (config.window, config.stride);
    let target = if config.layers == 0 {
        select_layers(frames.len(), w, s, config.workers)
    } else {
        config.layers
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("worker pool: {e}")))?;

    let base_pose = frames[0].pose;
    let mut layers = Vec::new();
    let mut voxel_seconds = 0.0;
    let mut ba_seconds = 0.0;
    let mut current: Cow<[Frame]> = Cow::Borrowed(frames);

    for index in 1..target {
        let windows = partition_windows(current.len(), w, s);
        if windows.len() < 2 {
            log::warn!("layer {index} has only {} frames; using it as the top layer", current.len());
            break;
        }
        // index-addressed collect keeps the output independent of completion order
        let solved: Vec<Result<SolvedWindow, Error>> = pool.install(|| {
            windows
                .par_iter()
                .enumerate()
                .map(|(j, span)| solve_or_passthrough(&current[span.range()], ba, &config.local, index, j))
                .collect()
        });
        let solved: Vec<SolvedWindow> = solved.into_iter().collect::<Result<_, _>>()?;

        let mut keyframes: Vec<Frame> = Vec::with_capacity(solved.len());
        for (j, sw) in solved.iter().enumerate() {
            let pose = match keyframes.last() {
                None => current[0].pose,
                Some(prev) => prev.pose.compose(&solved[j - 1].result.relative_poses[s]),
            };
            let mut kf = aggregate_keyframe(&sw.voxels, &sw.result, j, pose);
            kf.layer = index + 1;
            keyframes.push(kf);
            voxel_seconds += sw.voxel_seconds;
            ba_seconds += sw.ba_seconds;
        }
        layers.push(Layer {
            index,
            frame_count: current.len(),
            windows,
            results: solved.into_iter().map(|sw| sw.result).collect(),
        });
        current = Cow::Owned(keyframes);
    }

    let index = layers.len() + 1;
    let top = solve_or_passthrough(&current, ba, &config.global, index, 0)?;
    voxel_seconds += top.voxel_seconds;
    ba_seconds += top.ba_seconds;
    layers.push(Layer {
        index,
        frame_count: current.len(),
        windows: vec![WindowSpan {
            start: 0,
            len: current.len(),
        }],
        results: vec![top.result],
    });
    Ok(Pyramid {
        layers,
        stride: s,
        base_pose,
        voxel_seconds,
        ba_seconds,
    })
}
