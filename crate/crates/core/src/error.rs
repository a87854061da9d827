use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation angle {angle} is too close to pi for a unique logarithm")]
    AngleAtPi { angle: f64 },
}

#[derive(Debug, Error)]
pub enum FrameIoError {
    #[error("{what}: not found")]
    NotFound { what: String, path: PathBuf },
    #[error("malformed {format} input: {message}")]
    Format {
        format: &'static str,
        message: String,
    },
    #[error("scan contains no points")]
    EmptyScan,
    #[error("line {line}: rotation determinant {det} is not 1")]
    NonRigidRotation { line: usize, det: f64 },
    #[error("{scans} scans but {poses} poses")]
    CountMismatch { scans: usize, poses: usize },
    #[error("poses and frames differ in length ({poses} vs {frames})")]
    LengthMismatch { poses: usize, frames: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FrameIoError {
    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Self::Format {
            format,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaError {
    #[error("window has no plane features")]
    NoFeatures,
    #[error("cost became non-finite at iteration {iteration}")]
    NonFiniteCost { iteration: usize },
    #[error("need at least two frames, got {0}")]
    TooFewFrames(usize),
    #[error("pose index {index} out of range for a window of {len} poses")]
    PoseIndex { index: usize, len: usize },
    #[error("voxel references frame {frame} which has no pose")]
    MissingPose { frame: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("factor graph is disconnected: node {node} is unreachable from node 0")]
    DisconnectedGraph { node: usize },
    #[error("factor references node {node} but the graph has {len} nodes")]
    MissingNode { node: usize, len: usize },
    #[error("pose-graph cost became non-finite at iteration {iteration}")]
    NonFiniteCost { iteration: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("trajectories differ in length ({estimate} vs {ground_truth})")]
    LengthMismatch {
        estimate: usize,
        ground_truth: usize,
    },
    #[error("trajectory is empty")]
    Empty,
    #[error("no point has enough neighbors within radius {radius}")]
    DegenerateMap { radius: f64 },
    #[error("radius must be positive, got {0}")]
    InvalidRadius(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid value `{value}` for `{key}`")]
    InvalidValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("frame {frame} sees no plane")]
    EmptyScan { frame: usize },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// Pipeline-level error carrying the stage that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("frame-io: {0}")]
    FrameIo(#[from] FrameIoError),
    #[error("ba (layer {layer}, window {window}): {source}")]
    Ba {
        layer: usize,
        window: usize,
        #[source]
        source: BaError,
    },
    #[error("pose-graph: {0}")]
    Graph(#[from] GraphError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("synth: {0}")]
    Synth(#[from] SynthError),
}

impl Error {
    /// Usage or input problems map to exit code 2, numerical failures to 1.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::FrameIo(_) | Error::Config(_) | Error::Synth(_) | Error::Eval(_) => true,
            Error::Ba { .. } | Error::Graph(_) => false,
        }
    }
}
