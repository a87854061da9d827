//! Flat `key = value` configuration files.

use std::str::FromStr;

use crate::error::ConfigError;
use crate::evaluation::DEFAULT_MME_RADIUS;
use crate::frame_io::{FilterConfig, PoseFormat};
use crate::pipeline::PipelineConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyValue {
    /// 1-based line number.
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<KeyValue>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push(KeyValue {
            line: i + 1,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

/// Every tunable of a refinement run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub filter: FilterConfig,
    pub pose_format: PoseFormat,
    pub mme_radius: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            filter: FilterConfig::default(),
            pose_format: PoseFormat::Kitti,
            mme_radius: DEFAULT_MME_RADIUS,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, ConfigError> {
    raw.parse().map_err(|_| ConfigError::InvalidValue {
        key: key.to_string(),
        value: raw.to_string(),
    })
}

fn flag(key: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_string(),
            value: raw.to_string(),
        }),
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "window",
        "stride",
        "workers",
        "layers",
        "local_voxel_size",
        "local_theta",
        "local_min_points",
        "local_max_depth",
        "global_voxel_size",
        "global_theta",
        "global_min_points",
        "global_max_depth",
        "ba_max_iter",
        "ba_lambda_init",
        "ba_lambda_up",
        "ba_lambda_down",
        "ba_grad_tol",
        "ba_step_tol",
        "pg_max_iter",
        "pg_grad_tol",
        "pg_step_tol",
        "pg_lambda_init",
        "max_passes",
        "rel_cost_tol",
        "mode",
        "filter",
        "filter_voxel_size",
        "pose_format",
        "mme_radius",
    ];

    /// Sets one key; the key set is closed.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let p = &mut self.pipeline;
        match key {
            "window" => p.pyramid.window = value(key, raw)?,
            "stride" => p.pyramid.stride = value(key, raw)?,
            "workers" => p.pyramid.workers = value(key, raw)?,
            "layers" => p.pyramid.layers = value(key, raw)?,
            "local_voxel_size" => p.pyramid.local.voxel_size = value(key, raw)?,
            "local_theta" => p.pyramid.local.theta = value(key, raw)?,
            "local_min_points" => p.pyramid.local.min_points = value(key, raw)?,
            "local_max_depth" => p.pyramid.local.max_depth = value(key, raw)?,
            "global_voxel_size" => p.pyramid.global.voxel_size = value(key, raw)?,
            "global_theta" => p.pyramid.global.theta = value(key, raw)?,
            "global_min_points" => p.pyramid.global.min_points = value(key, raw)?,
            "global_max_depth" => p.pyramid.global.max_depth = value(key, raw)?,
            "ba_max_iter" => p.ba.max_iter = value(key, raw)?,
            "ba_lambda_init" => p.ba.lambda_init = value(key, raw)?,
            "ba_lambda_up" => p.ba.lambda_up = value(key, raw)?,
            "ba_lambda_down" => p.ba.lambda_down = value(key, raw)?,
            "ba_grad_tol" => p.ba.grad_tol = value(key, raw)?,
            "ba_step_tol" => p.ba.step_tol = value(key, raw)?,
            "pg_max_iter" => p.graph.max_iter = value(key, raw)?,
            "pg_grad_tol" => p.graph.grad_tol = value(key, raw)?,
            "pg_step_tol" => p.graph.step_tol = value(key, raw)?,
            "pg_lambda_init" => p.graph.lambda_init = value(key, raw)?,
            "max_passes" => p.max_passes = value(key, raw)?,
            "rel_cost_tol" => p.rel_cost_tol = value(key, raw)?,
            "mode" => p.mode = raw.parse()?,
            "filter" => self.filter.enabled = flag(key, raw)?,
            "filter_voxel_size" => self.filter.voxel_size = value(key, raw)?,
            "pose_format" => self.pose_format = value(key, raw)?,
            "mme_radius" => self.mme_radius = value(key, raw)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Applies a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for kv in parse_key_values(text)? {
            self.set(&kv.key, &kv.value).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line: kv.line, key },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        config.apply_text(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline.validate()?;
        if self.filter.enabled && !(self.filter.voxel_size > 0.0) {
            return Err(ConfigError::Invalid("filter_voxel_size must be positive".into()));
        }
        if !(self.mme_radius > 0.0) {
            return Err(ConfigError::Invalid("mme_radius must be positive".into()));
        }
        Ok(())
    }

    /// Renders every key with its current value; parsing the text yields `self` again.
    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        let (l, g) = (&p.pyramid.local, &p.pyramid.global);
        let pose_format = match self.pose_format {
            PoseFormat::Kitti => "kitti",
            PoseFormat::Tum => "tum",
        };
        let values: Vec<String> = vec![
            p.pyramid.window.to_string(),
            p.pyramid.stride.to_string(),
            p.pyramid.workers.to_string(),
            p.pyramid.layers.to_string(),
            l.voxel_size.to_string(),
            l.theta.to_string(),
            l.min_points.to_string(),
            l.max_depth.to_string(),
            g.voxel_size.to_string(),
            g.theta.to_string(),
            g.min_points.to_string(),
            g.max_depth.to_string(),
            p.ba.max_iter.to_string(),
            p.ba.lambda_init.to_string(),
            p.ba.lambda_up.to_string(),
            p.ba.lambda_down.to_string(),
            p.ba.grad_tol.to_string(),
            p.ba.step_tol.to_string(),
            p.graph.max_iter.to_string(),
            p.graph.grad_tol.to_string(),
            p.graph.step_tol.to_string(),
            p.graph.lambda_init.to_string(),
            p.max_passes.to_string(),
            p.rel_cost_tol.to_string(),
            p.mode.to_string(),
            self.filter.enabled.to_string(),
            self.filter.voxel_size.to_string(),
            pose_format.to_string(),
            self.mme_radius.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
