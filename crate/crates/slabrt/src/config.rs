//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slabrt_core::discretization::{coercivity_constants, Scheme};
use slabrt_core::solver::{derived_constants, SolverParams};
use slabrt_core::study::{paired_angular_size, SolverVariant, StudyParams, ToleranceRule};
use slabrt_core::{CaseId, ManufacturedCase};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    St,
    StInexact,
}

impl From<Variant> for SolverVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Plain => SolverVariant::Plain,
            Variant::St => SolverVariant::St,
            Variant::StInexact => SolverVariant::StInexact,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    Fixed,
    ScaledOverJ,
}

impl From<Tolerance> for ToleranceRule {
    fn from(t: Tolerance) -> Self {
        match t {
            Tolerance::Fixed => ToleranceRule::Fixed,
            Tolerance::ScaledOverJ => ToleranceRule::ScaledOverJ,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeName {
    #[serde(rename = "SN", alias = "sn")]
    Sn,
    #[serde(rename = "PN", alias = "pn")]
    Pn,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::Sn => Scheme::SN,
            SchemeName::Pn => Scheme::PN,
        }
    }
}

/// The `[solver]` table. Every omitted key takes its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Residual tolerance; omitted means the case's reference tolerance.
    pub eps_target: Option<f64>,
    pub delta0: f64,
    pub enforce_delta0_bound: bool,
    pub theta: f64,
    pub nu: f64,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub eta0: f64,
    pub max_iter: Option<usize>,
    /// Wall-clock limit per row in seconds; output is no longer
    /// reproducible when it triggers.
    pub max_wall_time: Option<f64>,
    /// Relative accuracy of the exponential-sum preconditioner.
    pub expsum_eps: f64,
    pub gamma1_scale: f64,
    pub plain_round_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverParams::default();
        let p = StudyParams::default();
        Self {
            eps_target: None,
            delta0: s.delta0,
            enforce_delta0_bound: s.enforce_delta0_bound,
            theta: s.theta,
            nu: s.nu,
            tau1: s.tau1,
            tau2: s.tau2,
            eta0: s.eta0,
            max_iter: s.max_iter,
            max_wall_time: s.max_wall_time,
            expsum_eps: p.expsum_eps,
            gamma1_scale: p.gamma1_scale,
            plain_round_tol: p.plain_round_tol,
        }
    }
}

/// Raw file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub case: String,
    pub scheme: SchemeName,
    /// Spatial element counts `J`.
    pub sizes: Vec<usize>,
    /// Angular sizes paired with `sizes`; omitted means the default pairing.
    #[serde(default)]
    pub angular_sizes: Option<Vec<usize>>,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_tolerance")]
    pub tolerance_rule: Tolerance,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub solver: SolverSection,
}

fn default_variant() -> Variant {
    Variant::St
}
fn default_tolerance() -> Tolerance {
    Tolerance::Fixed
}
fn default_jobs() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A validated configuration with every default filled in.
#[derive(Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub case_id: CaseId,
    pub case: ManufacturedCase,
    pub scheme: Scheme,
    /// `(J, N)` pairs in run order.
    pub ladder: Vec<(usize, usize)>,
    pub params: StudyParams,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Checks the schema and every parameter, including the constraints that
    /// depend on the problem constants, and fills in defaults.
    pub fn validate(mut self) -> Result<Experiment, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let case_id = CaseId::from_name(&self.case).ok_or_else(|| {
            let known: Vec<&str> = CaseId::ALL.iter().map(|c| c.name()).collect();
            invalid(format!("unknown case {:?}; known cases: {}", self.case, known.join(", ")))
        })?;
        self.case = case_id.name().to_string();
        if self.sizes.is_empty() {
            return Err(invalid("size ladder is empty"));
        }
        if let Some(&j) = self.sizes.iter().find(|&&j| j < 1) {
            return Err(invalid(format!("spatial size {j} must be at least 1")));
        }
        if self.jobs < 1 {
            return Err(invalid("jobs must be at least 1"));
        }
        let scheme: Scheme = self.scheme.into();
        let angular = match &self.angular_sizes {
            Some(a) if a.len() != self.sizes.len() => {
                return Err(invalid(format!(
                    "angular_sizes has {} entries but sizes has {}",
                    a.len(),
                    self.sizes.len()
                )))
            }
            Some(a) => a.clone(),
            None => self.sizes.iter().map(|&j| paired_angular_size(scheme, j)).collect(),
        };
        self.angular_sizes = Some(angular.clone());
        let ladder: Vec<(usize, usize)> = self.sizes.iter().copied().zip(angular).collect();

        let s = &mut self.solver;
        let eps_target = *s.eps_target.get_or_insert(case_id.default_tolerance());
        let solver = SolverParams {
            eps_target,
            delta0: s.delta0,
            enforce_delta0_bound: s.enforce_delta0_bound,
            theta: s.theta,
            nu: s.nu,
            tau1: s.tau1,
            tau2: s.tau2,
            eta0: s.eta0,
            max_iter: s.max_iter,
            max_wall_time: s.max_wall_time,
        };
        solver.validate().map_err(|e| invalid(e.to_string()))?;
        if !(s.expsum_eps > 0.0 && s.expsum_eps < 1.0) {
            return Err(invalid(format!("expsum_eps = {} must lie in (0, 1)", s.expsum_eps)));
        }
        if !(s.gamma1_scale > 0.0 && s.gamma1_scale <= 1.0) {
            return Err(invalid(format!("gamma1_scale = {} must lie in (0, 1]", s.gamma1_scale)));
        }
        if !(s.plain_round_tol >= 0.0) {
            return Err(invalid(format!("plain_round_tol = {} must be nonnegative", s.plain_round_tol)));
        }
        let params = StudyParams {
            variant: self.variant.into(),
            solver,
            tolerance_rule: self.tolerance_rule.into(),
            expsum_eps: s.expsum_eps,
            gamma1_scale: s.gamma1_scale,
            plain_round_tol: s.plain_round_tol,
        };

        let case = ManufacturedCase::new(case_id);
        for &(j, n) in &ladder {
            let spec = case.discretization(scheme, j, n).map_err(|e| invalid(format!("({j}, {n}): {e}")))?;
            let c = coercivity_constants(&spec).map_err(|e| invalid(e.to_string()))?;
            let derived = derived_constants(params.gamma1_scale * c.gamma1, c.gamma2, params.expsum_eps)
                .map_err(|e| invalid(e.to_string()))?;
            let mut row_solver = params.solver.clone();
            row_solver.eps_target = params.tolerance_rule.tolerance(row_solver.eps_target, j);
            row_solver.resolve(derived).map_err(|e| invalid(format!("({j}, {n}): {e}")))?;
        }

        Ok(Experiment {
            case_id,
            case,
            scheme,
            ladder,
            params,
            config: self,
        })
    }
}

impl Experiment {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        ExperimentConfig::load(path)?.validate()
    }
}
