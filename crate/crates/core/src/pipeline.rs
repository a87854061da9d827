//! Outer refinement loop and the ablation baselines.
//!
//! A hierarchical pass runs the bottom-up pyramid, pushes the layer poses back
//! down by direct assignment to get an initial guess, then solves the pose
//! graph over the layer-1 poses. Passes repeat with freshly built voxel maps
//! until the top-layer BA cost stops decreasing.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::ba::{solve_window, BaConfig};
use crate::error::{ConfigError, Error, FrameIoError};
use crate::frame_io::Frame;
use crate::geometry::{log_map, Pose};
use crate::pose_graph::{build_graph, optimize, FactorGraph, GraphConfig};
use crate::pyramid::{build_pyramid, Pyramid, PyramidConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Hierarchical,
    OriginalBa,
    ReducedBa,
    DirectAssign,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Hierarchical => "hierarchical",
            Mode::OriginalBa => "original_ba",
            Mode::ReducedBa => "reduced_ba",
            Mode::DirectAssign => "direct_assign",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Mode::Hierarchical, Mode::OriginalBa, Mode::ReducedBa, Mode::DirectAssign]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ConfigError::InvalidValue {
                key: "mode".into(),
                value: s.into(),
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub pyramid: PyramidConfig,
    pub ba: BaConfig,
    pub graph: GraphConfig,
    pub max_passes: usize,
    pub rel_cost_tol: f64,
    pub mode: Mode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pyramid: PyramidConfig::default(),
            ba: BaConfig::default(),
            graph: GraphConfig::default(),
            max_passes: 5,
            rel_cost_tol: 1e-3,
            mode: Mode::Hierarchical,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pyramid.validate()?;
        if self.max_passes == 0 {
            return Err(ConfigError::Invalid("max_passes must be at least 1".into()));
        }
        if !(self.rel_cost_tol >= 0.0) {
            return Err(ConfigError::Invalid("rel_cost_tol must be non-negative".into()));
        }
        if self.ba.max_iter == 0 || self.graph.max_iter == 0 {
            return Err(ConfigError::Invalid("iteration limits must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PassReport {
    /// 1-based.
    pub pass: usize,
    /// Final cost of the top-layer (or single) BA.
    pub cost_ba: f64,
    /// Final pose-graph cost; zero in modes without a graph.
    pub cost_pg: f64,
    pub t_voxel_s: f64,
    pub t_ba_s: f64,
    pub t_pg_s: f64,
    pub rss_mb_estimate: f64,
    /// LM iterations of the top-layer (or single) BA.
    pub ba_iterations: usize,
    pub mode: Mode,
}

pub const REPORT_HEADER: &str = "pass,cost_ba,cost_pg,t_voxel_s,t_ba_s,t_pg_s,rss_mb_estimate,mode";

impl PassReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:.6},{:.6},{:.6},{:.3},{}",
            self.pass, self.cost_ba, self.cost_pg, self.t_voxel_s, self.t_ba_s, self.t_pg_s, self.rss_mb_estimate, self.mode
        )
    }
}

pub fn format_report(reports: &[PassReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug)]
pub struct RunOutput {
    /// Refined layer-1 poses; the last good ones if a pass failed.
    pub poses: Vec<Pose>,
    pub reports: Vec<PassReport>,
    /// Factor graph of the last completed hierarchical pass.
    pub graph: Option<FactorGraph>,
    pub failure: Option<Error>,
}

impl RunOutput {
    pub fn into_result(self) -> Result<(Vec<Pose>, Vec<PassReport>), Error> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok((self.poses, self.reports)),
        }
    }
}

fn with_poses(frames: &[Frame], poses: &[Pose]) -> Vec<Frame> {
    frames
        .iter()
        .zip(poses)
        .map(|(f, p)| Frame {
            pose: *p,
            ..f.clone()
        })
        .collect()
}

fn check_inputs(frames: &[Frame], poses: &[Pose], config: &PipelineConfig) -> Result<(), Error> {
    config.validate()?;
    if frames.len() != poses.len() {
        return Err(FrameIoError::LengthMismatch {
            poses: poses.len(),
            frames: frames.len(),
        }
        .into());
    }
    Ok(())
}

/// Cost changes below this are round-off, not progress.
const COST_FLOOR: f64 = 1e-12;

const MB: f64 = 1024.0 * 1024.0;
const POINT_BYTES: f64 = 24.0;

/// Dominant working set: input points, the largest layer of keyframe points,
/// the dense window Hessians alive at once, and the graph blocks.
fn memory_estimate(frames: &[Frame], pyramid: Option<&Pyramid>, workers: usize, graph_blocks: usize) -> f64 {
    let input: usize = frames.iter().map(|f| f.points.len()).sum();
    let mut bytes = input as f64 * POINT_BYTES;
    if let Some(p) = pyramid {
        let mut max_hessian = 0.0f64;
        for layer in &p.layers {
            let mut sizes: Vec<f64> = layer
                .results
                .iter()
                .map(|r| (r.hessian.nrows() * r.hessian.ncols() * 8) as f64)
                .collect();
            sizes.sort_by(|a, b| b.total_cmp(a));
            max_hessian = max_hessian.max(sizes.iter().take(workers).sum());
        }
        // keyframe points roughly match the input points at every layer
        bytes += input as f64 * POINT_BYTES + max_hessian;
    }
    bytes += graph_blocks as f64 * 36.0 * 8.0;
    bytes / MB
}

/// Layer-1 poses obtained by pushing every layer's optimized poses down
/// through the windows' relative poses, without any graph optimization.
pub fn direct_assign(pyramid: &Pyramid) -> Vec<Pose> {
    let s = pyramid.stride;
    let mut upper = pyramid.top_poses();
    for layer in pyramid.layers.iter().rev().skip(1) {
        let mut lower = vec![Pose::identity(); layer.frame_count];
        let last = layer.windows.len() - 1;
        for (j, (span, result)) in layer.windows.iter().zip(&layer.results).enumerate() {
            let count = if j == last { span.len } else { s };
            for k in 0..count {
                lower[span.start + k] = upper[j].compose(&result.relative_poses[k]);
            }
        }
        upper = lower;
    }
    upper
}

struct PassOutcome {
    poses: Vec<Pose>,
    report: PassReport,
    graph: Option<FactorGraph>,
    top_initial_cost: f64,
}

fn hierarchical_pass(frames: &[Frame], config: &PipelineConfig, pass: usize) -> Result<PassOutcome, Error> {
    let pyramid = build_pyramid(frames, &config.pyramid, &config.ba)?;
    let assigned = direct_assign(&pyramid);
    let top = pyramid.top();
    let mut report = PassReport {
        pass,
        cost_ba: top.cost,
        cost_pg: 0.0,
        t_voxel_s: pyramid.voxel_seconds,
        t_ba_s: pyramid.ba_seconds,
        t_pg_s: 0.0,
        rss_mb_estimate: 0.0,
        ba_iterations: top.iterations,
        mode: config.mode,
    };
    let mut blocks = 0;
    let mut kept = None;
    let poses = if config.mode == Mode::DirectAssign {
        assigned
    } else {
        let start = Instant::now();
        let graph = build_graph(&pyramid, &assigned)?;
        blocks = graph.nodes.len() + graph.factors.len();
        let solution = optimize(&graph, &config.graph)?;
        report.t_pg_s = start.elapsed().as_secs_f64();
        report.cost_pg = solution.cost;
        kept = Some(graph);
        solution.poses
    };
    report.rss_mb_estimate = memory_estimate(frames, Some(&pyramid), config.pyramid.workers, blocks);
    Ok(PassOutcome {
        poses,
        report,
        graph: kept,
        top_initial_cost: top.initial_cost,
    })
}

/// Runs the configured mode on `frames` starting from `initial` poses.
pub fn run(frames: &[Frame], initial: &[Pose], config: &PipelineConfig) -> RunOutput {
    let fail = |e: Error| RunOutput {
        poses: initial.to_vec(),
        reports: Vec::new(),
        graph: None,
        failure: Some(e),
    };
    if let Err(e) = check_inputs(frames, initial, config) {
        return fail(e);
    }
    match config.mode {
        Mode::Hierarchical | Mode::DirectAssign => run_passes(frames, initial, config),
        Mode::OriginalBa | Mode::ReducedBa => match single_ba(frames, initial, config) {
            Ok((poses, report)) => RunOutput {
                poses,
                reports: vec![report],
                graph: None,
                failure: None,
            },
            Err(e) => fail(e),
        },
    }
}

fn run_passes(frames: &[Frame], initial: &[Pose], config: &PipelineConfig) -> RunOutput {
    let mut poses = initial.to_vec();
    let mut reports: Vec<PassReport> = Vec::new();
    let mut previous: Option<f64> = None;
    let mut graph = None;
    for pass in 1..=config.max_passes {
        let current = with_poses(frames, &poses);
        let outcome = match hierarchical_pass(&current, config, pass) {
            Ok(o) => o,
            Err(e) => {
                log::error!("pass {pass} failed: {e}");
                return RunOutput {
                    poses,
                    reports,
                    graph,
                    failure: Some(e),
                };
            }
        };
        let cost = outcome.report.cost_ba;
        let before = previous.unwrap_or(outcome.top_initial_cost);
        log::info!(
            "pass {pass}: top BA cost {cost:.6e} (before {before:.6e}), pose graph cost {:.6e}",
            outcome.report.cost_pg
        );
        poses = outcome.poses;
        graph = outcome.graph;
        reports.push(outcome.report);
        let decrease = if before > 0.0 { (before - cost) / before } else { 0.0 };
        if decrease < config.rel_cost_tol || before - cost <= COST_FLOOR {
            break;
        }
        previous = Some(cost);
    }
    RunOutput {
        poses,
        reports,
        graph,
        failure: None,
    }
}

fn single_ba(frames: &[Frame], initial: &[Pose], config: &PipelineConfig) -> Result<(Vec<Pose>, PassReport), Error> {
    let mut ba = config.ba;
    if config.mode == Mode::ReducedBa {
        ba.block_size = Some(config.pyramid.stride);
    }
    let current = with_poses(frames, initial);
    let solved = solve_window(&current, &ba, &config.pyramid.local).map_err(|source| Error::Ba {
        layer: 1,
        window: 0,
        source,
    })?;
    let base = initial[0];
    let poses = solved.result.relative_poses.iter().map(|r| base.compose(r)).collect();
    let dim = solved.result.hessian.nrows();
    let report = PassReport {
        pass: 1,
        cost_ba: solved.result.cost,
        cost_pg: 0.0,
        t_voxel_s: solved.voxel_seconds,
        t_ba_s: solved.ba_seconds,
        t_pg_s: 0.0,
        rss_mb_estimate: memory_estimate(frames, None, 1, 0) + (dim * dim * 8) as f64 / MB,
        ba_iterations: solved.result.iterations,
        mode: config.mode,
    };
    Ok((poses, report))
}

/// Single BA over all frames: one window spanning the whole sequence.
pub fn run_original_ba(frames: &[Frame], initial: &[Pose], config: &PipelineConfig) -> Result<Vec<Pose>, Error> {
    let config = PipelineConfig {
        mode: Mode::OriginalBa,
        ..config.clone()
    };
    run(frames, initial, &config).into_result().map(|(p, _)| p)
}

/// As [`run_original_ba`] but the LM system keeps only stride-sized diagonal blocks.
pub fn run_reduced_ba(frames: &[Frame], initial: &[Pose], config: &PipelineConfig) -> Result<Vec<Pose>, Error> {
    let config = PipelineConfig {
        mode: Mode::ReducedBa,
        ..config.clone()
    };
    run(frames, initial, &config).into_result().map(|(p, _)| p)
}

/// Bottom-up pyramid with the top-down graph replaced by direct assignment.
pub fn run_direct_assign(frames: &[Frame], initial: &[Pose], config: &PipelineConfig) -> Result<Vec<Pose>, Error> {
    let config = PipelineConfig {
        mode: Mode::DirectAssign,
        ..config.clone()
    };
    run(frames, initial, &config).into_result().map(|(p, _)| p)
}

/// Largest adjacent relative-pose error `‖Log((G_k⁻¹G_{k+1})⁻¹·(E_k⁻¹E_{k+1}))‖`.
pub fn max_adjacent_discontinuity(estimate: &[Pose], ground_truth: &[Pose]) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..estimate.len().min(ground_truth.len()).saturating_sub(1) {
        let e = estimate[k].relative(&estimate[k + 1]);
        let g = ground_truth[k].relative(&ground_truth[k + 1]);
        // an error near π is reported as π rather than failing
        let norm = log_map(&g.relative(&e)).map_or(std::f64::consts::PI, |v| v.norm());
        worst = worst.max(norm);
    }
    worst
}
