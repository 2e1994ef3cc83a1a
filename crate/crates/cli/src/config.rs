//! Run configuration, read from TOML.

use serde::Deserialize;
use std::path::{Path, PathBuf};
use tori_core::cohomology::{FrequencyData, SolverOptions};
use tori_core::model::PendulaParams;
use tori_core::newton::NewtonOptions;

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Double,
    Extended,
}

fn default_model() -> String {
    "pendula".into()
}
fn default_tol() -> f64 {
    1e-11
}
fn default_max_steps() -> usize {
    12
}
fn default_divisor_floor() -> f64 {
    1e-8
}
fn default_verify() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_model")]
    pub model: String,
    /// Degrees of freedom.
    pub n: usize,
    /// Torus dimension.
    pub d: usize,
    pub omega: Vec<f64>,
    pub beta: Vec<f64>,
    pub l1: f64,
    pub l2: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    /// Values of the outer coupling visited in order; the last is the target.
    pub eps_schedule: Vec<f64>,
    /// Grid points per angle.
    pub n_f: usize,
    #[serde(default = "default_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_divisor_floor")]
    pub divisor_floor: f64,
    pub output_dir: PathBuf,
    #[serde(default = "default_verify")]
    pub verify: bool,
    #[serde(default)]
    pub precision: Precision,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse and validate.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.model != "pendula" {
            return Err(invalid(format!("unknown model '{}' (available: pendula)", self.model)));
        }
        if self.n != 4 || self.d != 2 {
            return Err(invalid(format!(
                "the pendula model has n = 4, d = 2, got n = {}, d = {}",
                self.n, self.d
            )));
        }
        if self.omega.len() != self.d || self.beta.len() != self.n - self.d {
            return Err(invalid(format!(
                "expected {} tangent and {} normal frequencies, got {} and {}",
                self.d,
                self.n - self.d,
                self.omega.len(),
                self.beta.len()
            )));
        }
        if self
            .omega
            .iter()
            .chain(&self.beta)
            .any(|w| !(w.is_finite() && *w > 0.0))
        {
            return Err(invalid("frequencies must be positive and finite"));
        }
        FrequencyData::new(self.omega.clone(), self.beta.clone()).map_err(|e| invalid(e.to_string()))?;
        for (name, l) in [("l1", self.l1), ("l2", self.l2)] {
            if !(l.is_finite() && l > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {l}")));
            }
        }
        // The initial torus is a product of librating pendulum circles.
        for (i, (w, l)) in self.omega.iter().zip([self.l1, self.l2]).enumerate() {
            if w * l.sqrt() >= 1.0 {
                return Err(invalid(format!(
                    "omega[{i}] = {w} is not a libration frequency of a pendulum of length {l} (need omega < {})",
                    1.0 / l.sqrt()
                )));
            }
        }
        if [self.k1, self.k2, self.k3].iter().any(|k| !k.is_finite()) {
            return Err(invalid("spring constants must be finite"));
        }
        let s = &self.eps_schedule;
        if s.is_empty() || s.iter().any(|e| !e.is_finite()) {
            return Err(invalid("eps_schedule must be a non-empty list of finite values"));
        }
        if !(s.windows(2).all(|w| w[1] > w[0]) || s.windows(2).all(|w| w[1] < w[0])) {
            return Err(invalid(format!("eps_schedule {s:?} is not strictly monotone")));
        }
        if self.n_f < 8 || !self.n_f.is_power_of_two() {
            return Err(invalid(format!("n_f must be a power of two >= 8, got {}", self.n_f)));
        }
        if !(self.newton_tol > 0.0) || self.max_steps == 0 || !(self.divisor_floor > 0.0) {
            return Err(invalid("newton_tol, max_steps and divisor_floor must be positive"));
        }
        if self.precision == Precision::Extended {
            return Err(invalid(
                "precision = \"extended\" needs an extended-precision backend, which this build does not include",
            ));
        }
        Ok(())
    }

    /// Model parameters at coupling `eps`.
    pub fn params(&self, eps: f64) -> PendulaParams {
        PendulaParams {
            l1: self.l1,
            l2: self.l2,
            beta: [self.beta[0], self.beta[1]],
            k1: self.k1,
            k2: self.k2,
            k3: self.k3,
            eps,
        }
    }

    pub fn newton_options(&self) -> NewtonOptions {
        NewtonOptions {
            solver: SolverOptions {
                divisor_floor: self.divisor_floor,
                ..SolverOptions::default()
            },
            tol: self.newton_tol,
            max_steps: self.max_steps,
            ..NewtonOptions::default()
        }
    }
}
