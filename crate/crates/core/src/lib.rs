// negated comparisons below deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ba;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod frame_io;
pub mod geometry;
pub mod pipeline;
pub mod pose_graph;
pub mod pyramid;
pub mod sparse;
pub mod synth;
pub mod voxel_map;

pub use error::Error;
