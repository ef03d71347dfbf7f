//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transflow_core::driver::{Damping, OuterConfig};
use transflow_core::kkt::{Formulation, NewtonMode, ProblemParams, QOperator};
use transflow_core::krylov::{KrylovConfig, KrylovMethod};
use transflow_core::precond::{PrecondConfig, PrecondKind, RightMatching, SchurVariant};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_formulation")]
    pub formulation: Formulation,
    #[serde(default = "d_newton")]
    pub newton_mode: NewtonMode,
    pub beta: f64,
    #[serde(default = "d_one")]
    pub gamma: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "d_q")]
    pub q_operator: QOperator,
    pub grid: GridConfig,
    #[serde(default = "d_disc")]
    pub discretisation: Discretisation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbf: Option<RbfConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub precond: PrecondSection,
    #[serde(default)]
    pub outer: OuterSection,
    #[serde(default)]
    pub io: IoConfig,
    #[serde(default)]
    pub seed: u64,
}

fn d_formulation() -> Formulation {
    Formulation::ContinuityDTO
}
fn d_newton() -> NewtonMode {
    NewtonMode::GaussNewton
}
fn d_one() -> f64 {
    1.0
}
fn d_q() -> QOperator {
    QOperator::Identity
}
fn d_disc() -> Discretisation {
    Discretisation::FiniteDifference
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_x: usize,
    pub n_y: usize,
    #[serde(rename = "N_t")]
    pub n_t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Discretisation {
    FiniteDifference,
    RBF,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbfConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centres_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<CentreGenerator>,
    /// Defaults to `1/(2 d̄²)` from the mean nearest-neighbour distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum CentreGenerator {
    Halton { n: usize },
    Grid { side: usize },
    /// Uniform random centres drawn from `seed`.
    Random { n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: KrylovMethod,
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let k = KrylovConfig::default();
        Self {
            method: k.method,
            tol: k.tol,
            max_iter: k.max_iter,
            restart: k.restart,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecondSection {
    pub kind: PrecondKind,
    #[serde(default = "d_schur")]
    pub schur_variant: SchurVariant,
    #[serde(default = "d_mu_floor")]
    pub mu_floor: f64,
    #[serde(default = "d_right")]
    pub right_matching: RightMatching,
}

fn d_schur() -> SchurVariant {
    PrecondConfig::default().schur_variant
}
fn d_mu_floor() -> f64 {
    PrecondConfig::default().mu_floor
}
fn d_right() -> RightMatching {
    RightMatching::Full
}

impl Default for PrecondSection {
    fn default() -> Self {
        let p = PrecondConfig::default();
        Self {
            kind: p.kind,
            schur_variant: p.schur_variant,
            mu_floor: p.mu_floor,
            right_matching: p.right_matching,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterSection {
    pub nl_tol: f64,
    pub max_outer: usize,
    pub damping: Damping,
}

impl Default for OuterSection {
    fn default() -> Self {
        let o = OuterConfig::default();
        Self {
            nl_tol: o.nl_tol,
            max_outer: o.max_outer,
            damping: o.damping,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y1_path: Option<PathBuf>,
    /// Directory of `N_t` PGM frames, taken in file-name order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ybar_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Translating-Gaussian data used when no images are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    /// Resample images of the wrong size instead of rejecting them.
    #[serde(default = "d_true")]
    pub resample: bool,
}

fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub shift: [f64; 2],
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative paths inside it are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut self.io.y0_path);
        fix(&mut self.io.y1_path);
        fix(&mut self.io.ybar_dir);
        fix(&mut self.io.out_dir);
        if let Some(r) = &mut self.rbf {
            fix(&mut r.centres_path);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.params()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let g = self.grid;
        if g.n_x < 2 || g.n_y < 2 || g.n_t < 1 {
            return bad(format!("grid {}x{} with {} steps is too small", g.n_x, g.n_y, g.n_t));
        }
        self.outer_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        match (self.io.y0_path.is_some(), self.io.y1_path.is_some()) {
            (true, true) => {}
            (false, false) if self.io.synthetic.is_some() => {}
            (false, false) => return bad("give io.y0_path and io.y1_path, or io.synthetic".into()),
            _ => return bad("io.y0_path and io.y1_path must be given together".into()),
        }
        if let Some(s) = &self.io.synthetic {
            if !s.shift.iter().all(|v| v.abs() < 0.5) {
                return bad(format!("synthetic shift components must lie in (-0.5, 0.5), got {:?}", s.shift));
            }
        }
        match self.discretisation {
            Discretisation::FiniteDifference => {
                if self.rbf.is_some() {
                    return bad("rbf section given for a finite-difference run".into());
                }
            }
            Discretisation::RBF => {
                let Some(r) = &self.rbf else {
                    return bad("RBF discretisation needs an rbf section".into());
                };
                if r.centres_path.is_some() == r.generator.is_some() {
                    return bad("rbf needs exactly one of centres_path and generator".into());
                }
                if let Some(c) = r.shape_c {
                    if !(c > 0.0 && c.is_finite()) {
                        return bad(format!("rbf.shape_c must be positive, got {c}"));
                    }
                }
                match r.generator {
                    Some(CentreGenerator::Halton { n } | CentreGenerator::Random { n }) if n < 2 => {
                        return bad("need at least two centres".into())
                    }
                    Some(CentreGenerator::Grid { side }) if side < 2 => {
                        return bad("need at least two centres".into())
                    }
                    _ => {}
                }
                if !matches!(self.precond.kind, PrecondKind::P1 | PrecondKind::None) {
                    return bad(format!("preconditioner {:?} is not available for RBF", self.precond.kind));
                }
            }
        }
        Ok(())
    }

    pub fn params(&self) -> ProblemParams {
        ProblemParams {
            beta: self.beta,
            gamma: self.gamma,
            delta: self.delta,
            q_operator: self.q_operator,
            formulation: self.formulation,
            newton_mode: self.newton_mode,
        }
    }

    pub fn outer_config(&self) -> OuterConfig {
        OuterConfig {
            nl_tol: self.outer.nl_tol,
            max_outer: self.outer.max_outer,
            damping: self.outer.damping,
            linear: KrylovConfig {
                method: self.solver.method,
                tol: self.solver.tol,
                max_iter: self.solver.max_iter,
                restart: self.solver.restart,
                record_history: false,
            },
            precond: PrecondConfig {
                kind: self.precond.kind,
                schur_variant: self.precond.schur_variant,
                mu_floor: self.precond.mu_floor,
                right_matching: self.precond.right_matching,
            },
        }
    }
}
