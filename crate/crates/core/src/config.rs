//! Plain key=value run configuration: model coefficients, discretization
//! levels and output destinations. Unknown keys are rejected so typos in a
//! config file cannot silently fall back to defaults.

use crate::params::ModelParams;
use crate::stepper::Regularization;
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got '{text}'")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value for '{key}': {value} ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Params(#[from] crate::params::ParamError),
}

/// One full run: discretization, coefficients, source switch and outputs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// spatial refinement: mesh size 2^{-k}
    pub mesh_k: usize,
    /// temporal refinement: dt = (t_final / 5) 2^{-l}
    pub time_l: usize,
    pub params: ModelParams,
    /// manufactured sources on (convergence runs) or off (decay runs)
    pub with_sources: bool,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub regularization: Regularization,
    pub output_dir: PathBuf,
    /// write a VTK snapshot every this many steps; 0 disables
    pub vtk_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mesh_k: 4,
            time_l: 4,
            params: ModelParams::default(),
            with_sources: false,
            picard_tol: 1e-12,
            picard_max_iter: 50,
            regularization: Regularization::Off,
            output_dir: PathBuf::from("out"),
            vtk_every: 0,
        }
    }
}

impl RunConfig {
    /// dt implied by the time level and the final time.
    pub fn dt(&self) -> f64 {
        self.params.t_final / 5.0 / (1u64 << self.time_l) as f64
    }

    pub fn apply_dt(&mut self) {
        self.params.dt = self.dt();
    }

    pub fn n_steps(&self) -> usize {
        (self.params.t_final / self.dt()).round() as usize
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            let (key, value) = s.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line,
                text: raw.to_string(),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| match e {
                    ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line, key },
                    other => other,
                })?;
        }
        cfg.apply_dt();
        cfg.params.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Set one key; used by both the file parser and CLI overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|e| bad(&e.to_string()));
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| bad(&e.to_string()));
        match key {
            "mesh_k" => self.mesh_k = parse_usize(value)?,
            "time_l" => self.time_l = parse_usize(value)?,
            "eta" => self.params.eta = parse_f64(value)?,
            "mu" => self.params.mu = parse_f64(value)?,
            "beta" => self.params.beta = parse_f64(value)?,
            "lambda" => self.params.lambda = parse_f64(value)?,
            "delta1" => self.params.delta1 = parse_f64(value)?,
            "delta2" => self.params.delta2 = parse_f64(value)?,
            "t_final" => self.params.t_final = parse_f64(value)?,
            "sources" => {
                self.with_sources = match value {
                    "on" => true,
                    "off" => false,
                    _ => return Err(bad("expected on|off")),
                }
            }
            "picard_tol" => self.picard_tol = parse_f64(value)?,
            "picard_max_iter" => self.picard_max_iter = parse_usize(value)?,
            "regularization" => {
                self.regularization = if value == "off" {
                    Regularization::Off
                } else {
                    Regularization::Delta(parse_f64(value)?)
                }
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "vtk_every" => self.vtk_every = parse_usize(value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Canonical serialization (also embedded as '#' comments in CSVs).
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("mesh_k", self.mesh_k.to_string());
        m.insert("time_l", self.time_l.to_string());
        m.insert("eta", fmt_f64(self.params.eta));
        m.insert("mu", fmt_f64(self.params.mu));
        m.insert("beta", fmt_f64(self.params.beta));
        m.insert("lambda", fmt_f64(self.params.lambda));
        m.insert("delta1", fmt_f64(self.params.delta1));
        m.insert("delta2", fmt_f64(self.params.delta2));
        m.insert("t_final", fmt_f64(self.params.t_final));
        m.insert(
            "sources",
            if self.with_sources { "on" } else { "off" }.to_string(),
        );
        m.insert("picard_tol", fmt_f64(self.picard_tol));
        m.insert("picard_max_iter", self.picard_max_iter.to_string());
        m.insert(
            "regularization",
            match self.regularization {
                Regularization::Off => "off".to_string(),
                Regularization::Delta(d) => fmt_f64(d),
            },
        );
        m.insert("vtk_every", self.vtk_every.to_string());
        m
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that round-trips
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}
