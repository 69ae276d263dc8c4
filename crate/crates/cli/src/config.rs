//! The run configuration file.
//!
//! A TOML document with one table per concern. Every key is optional and
//! unknown keys are rejected. [`Config::resolve`] fills in the defaults that
//! depend on other settings, so the serialized resolved config is the exact
//! description of what ran.
//!
//! ```toml
//! [scheme]
//! domain = [-1.0, 1.0]   # default
//! dx = 0.01              # default
//! # dt = 0.005           # default dx/2; or give cfl_factor instead
//! T = 0.25               # default
//! # H = 0.5              # kernel width; absent means the local scheme
//! store_every = 1        # default
//!
//! [kernel]
//! shape = "affine"       # or "quadratic"
//!
//! [speed]
//! law = "greenshields"   # or { law = "power", exponent = 2.0 }
//!
//! [initial]
//! kind = "reference_bump" # initial_guess | riemann | constant | cells
//!
//! [objective]
//! reference = { source = "builtin", kind = "local" }
//! terms = [{ kind = "distributed_tracking", weight = 1.0 }]
//!
//! [optimizer]
//! max_iterations = 1000
//! max_evaluations = 100000
//! fd_step = 1e-6
//!
//! [admissible]
//! box = [0.0, 1.0]
//! tv_bound = 2.0
//!
//! [study]
//! kind = "grid_convergence_local"
//! dx_list = [0.08, 0.04, 0.02, 0.01]
//! ```

use std::path::{Path, PathBuf};

use nlcontrol::kernel::KernelShape;
use nlcontrol::optimize::{ArmijoConfig, StepRule};
use nlcontrol::scheme::compute_dt;
use nlcontrol::studies::{self, Coupling, StudyKind};
use nlcontrol::SpeedLaw;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub scheme: SchemeBlock,
    #[serde(default)]
    pub kernel: KernelBlock,
    #[serde(default)]
    pub speed: SpeedLaw,
    /// Initial datum of `solve`, starting point of `optimize`, datum of the
    /// nl2l study. Defaults to the reference bump, or to the starting guess
    /// for `optimize`.
    #[serde(default)]
    pub initial: Option<Datum>,
    #[serde(default)]
    pub objective: ObjectiveBlock,
    #[serde(default)]
    pub optimizer: OptimizerBlock,
    #[serde(default)]
    pub admissible: AdmissibleBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Constant extension of the boundary cells.
    #[default]
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeBlock {
    #[serde(default = "default_domain")]
    pub domain: [f64; 2],
    #[serde(default = "default_dx")]
    pub dx: f64,
    /// Time step; must divide `T`. Defaults to `dx/2`, shrunk to divide `T`.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Alternative to `dt`: `dt ≤ cfl_factor·dx/(8 v_max)`, shrunk to
    /// divide `T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfl_factor: Option<f64>,
    #[serde(rename = "T", default = "default_horizon")]
    pub t_final: f64,
    #[serde(rename = "H", default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default = "default_store_every")]
    pub store_every: usize,
}

impl Default for SchemeBlock {
    fn default() -> Self {
        Self {
            domain: default_domain(),
            dx: default_dx(),
            dt: None,
            cfl_factor: None,
            t_final: default_horizon(),
            h: None,
            boundary: Boundary::Constant,
            store_every: default_store_every(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    #[serde(default)]
    pub shape: KernelShape,
}

/// Initial datum, projected onto the grid by cell averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Datum {
    /// `(0.25 − x²)` on `|x| ≤ 0.5`, plus `0.2`.
    ReferenceBump,
    /// `0.25·χ_{[0,∞)} + 0.2`.
    InitialGuess,
    /// `left` for `x < at`, `right` for `x ≥ at`.
    Riemann {
        left: f64,
        right: f64,
        #[serde(default)]
        at: f64,
    },
    Constant {
        value: f64,
    },
    /// Explicit cell values; the length must match the grid.
    Cells {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveBlock {
    /// Tracking target. Defaults to the builtin local reference (nonlocal
    /// with the study's width for the nonlocal grid-convergence study).
    #[serde(default)]
    pub reference: Option<ReferenceSource>,
    /// Defaults to a single distributed-tracking term on the whole domain.
    /// Studies always use that default.
    #[serde(default)]
    pub terms: Option<Vec<Term>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Local,
    Nonlocal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSource {
    /// Generated in process on the fine reference mesh.
    Builtin {
        kind: ReferenceKind,
        #[serde(rename = "H", default)]
        h: Option<f64>,
    },
    /// The trajectory written by an earlier `solve` run, located through its
    /// manifest. `run_id`, when given, must match the manifest.
    Run {
        manifest: PathBuf,
        #[serde(default)]
        run_id: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Term {
    DistributedTracking {
        #[serde(default = "one")]
        weight: f64,
        #[serde(default)]
        window: Option<[f64; 2]>,
    },
    FinalTimeTracking {
        #[serde(default = "one")]
        p: f64,
        #[serde(default = "one")]
        weight: f64,
        #[serde(default)]
        window: Option<[f64; 2]>,
    },
    BvRegularization {
        #[serde(default = "one")]
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerBlock {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_max_evaluations")]
    pub max_evaluations: usize,
    /// Defaults to `dx³` of the optimization mesh.
    #[serde(default)]
    pub step_tolerance: Option<f64>,
    /// Defaults to `dx²` of the optimization mesh.
    #[serde(default)]
    pub optimality_tolerance: Option<f64>,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub armijo: ArmijoConfig,
    #[serde(default)]
    pub step_rule: StepRule,
    /// Evaluate gradient components in parallel.
    #[serde(default)]
    pub parallel: bool,
}

impl Default for OptimizerBlock {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            max_evaluations: default_max_evaluations(),
            step_tolerance: None,
            optimality_tolerance: None,
            fd_step: default_fd_step(),
            armijo: ArmijoConfig::default(),
            step_rule: StepRule::default(),
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibleBlock {
    #[serde(rename = "box", default = "default_box")]
    pub bounds: [f64; 2],
    #[serde(default = "default_tv_bound")]
    pub tv_bound: f64,
    /// Defaults to the whole domain.
    #[serde(default)]
    pub support: Option<[f64; 2]>,
}

impl Default for AdmissibleBlock {
    fn default() -> Self {
        Self {
            bounds: default_box(),
            tv_bound: default_tv_bound(),
            support: None,
        }
    }
}

/// Experiment selection for the `study` command. Studies run on the domain
/// `[-1, 1]` up to `T = 0.25` with `dt = dx/2`; the `[scheme]` block does
/// not apply to them except through `[kernel]` and `[speed]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    pub kind: StudyKind,
    /// Grid-convergence meshes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx_list: Option<Vec<f64>>,
    /// Kernel width of the nonlocal grid-convergence study.
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Fixed mesh of the Γ-minimizer and solution studies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
    #[serde(rename = "H_list", default, skip_serializing_if = "Option::is_none")]
    pub h_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<Coupling>,
    /// Run independent cells of the sweep in parallel.
    #[serde(default)]
    pub parallel_cells: bool,
}

fn default_domain() -> [f64; 2] {
    [studies::DOMAIN.lo, studies::DOMAIN.hi]
}
fn default_dx() -> f64 {
    0.01
}
fn default_horizon() -> f64 {
    studies::HORIZON
}
fn default_store_every() -> usize {
    1
}
fn one() -> f64 {
    1.0
}
fn default_max_iterations() -> usize {
    1000
}
fn default_max_evaluations() -> usize {
    100_000
}
fn default_fd_step() -> f64 {
    1e-6
}
fn default_box() -> [f64; 2] {
    [0.0, 1.0]
}
fn default_tv_bound() -> f64 {
    2.0
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Config {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, path)
    }

    /// Fills derived defaults in place. The command decides which blocks
    /// are relevant: `study` requires a `[study]` table, the others reject
    /// one.
    pub fn resolve(&mut self, command: &str) -> Result<(), CliError> {
        self.speed.validate().map_err(|e| invalid(e.to_string()))?;
        match (command, self.study.is_some()) {
            ("study", false) => return Err(invalid("the study command needs a [study] table")),
            ("study", true) => return self.resolve_study(),
            (_, true) => {
                return Err(invalid(format!(
                    "[study] is only read by the study command, not by {command}"
                )))
            }
            _ => {}
        }
        self.resolve_scheme()?;
        self.initial.get_or_insert(if command == "optimize" {
            Datum::InitialGuess
        } else {
            Datum::ReferenceBump
        });
        if command == "optimize" {
            let dx = self.scheme.dx;
            self.optimizer.step_tolerance.get_or_insert(dx.powi(3));
            self.optimizer
                .optimality_tolerance
                .get_or_insert(dx.powi(2));
            self.admissible.support.get_or_insert(self.scheme.domain);
            self.objective
                .reference
                .get_or_insert(ReferenceSource::Builtin {
                    kind: ReferenceKind::Local,
                    h: None,
                });
            let domain = self.scheme.domain;
            let terms = self.objective.terms.get_or_insert_with(|| {
                vec![Term::DistributedTracking {
                    weight: 1.0,
                    window: None,
                }]
            });
            for term in terms.iter_mut() {
                match term {
                    Term::DistributedTracking { window, .. }
                    | Term::FinalTimeTracking { window, .. } => {
                        window.get_or_insert(domain);
                    }
                    Term::BvRegularization { .. } => {}
                }
            }
            resolve_reference(self.objective.reference.as_mut())?;
        }
        Ok(())
    }

    fn resolve_scheme(&mut self) -> Result<(), CliError> {
        let s = &mut self.scheme;
        match (s.dt, s.cfl_factor) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "give either scheme.dt or scheme.cfl_factor, not both",
                ))
            }
            (Some(_), None) => {}
            (None, Some(cfl)) => {
                let dt_max =
                    compute_dt(s.dx, &self.speed, cfl).map_err(|e| invalid(e.to_string()))?;
                s.dt = Some(fit_step(dt_max, s.t_final));
            }
            (None, None) => s.dt = Some(fit_step(studies::DT_OVER_DX * s.dx, s.t_final)),
        }
        if s.store_every == 0 {
            return Err(invalid("scheme.store_every must be at least 1"));
        }
        Ok(())
    }

    fn resolve_study(&mut self) -> Result<(), CliError> {
        if self.objective.terms.is_some() {
            return Err(invalid(
                "studies always track on the whole domain; remove objective.terms",
            ));
        }
        let study = self.study.as_mut().expect("checked by caller");
        let mut unused = Vec::new();
        let mut take = |used: bool, present: bool, name: &str| {
            if present && !used {
                unused.push(name.to_string());
            }
        };
        let kind = study.kind;
        use StudyKind::*;
        take(
            matches!(kind, GridConvergenceLocal | GridConvergenceNonlocal),
            study.dx_list.is_some(),
            "dx_list",
        );
        take(kind == GridConvergenceNonlocal, study.h.is_some(), "H");
        take(
            matches!(kind, GammaMinimizers | Nl2lSolutions),
            study.dx.is_some(),
            "dx",
        );
        take(
            kind != GridConvergenceLocal && kind != GridConvergenceNonlocal,
            study.h_list.is_some(),
            "H_list",
        );
        take(kind == DoubleLimit, study.coupling.is_some(), "coupling");
        if !unused.is_empty() {
            return Err(invalid(format!(
                "study.{} not used by study kind {kind:?}",
                unused.join(", study.")
            )));
        }
        match kind {
            GridConvergenceLocal | GridConvergenceNonlocal => {
                study
                    .dx_list
                    .get_or_insert_with(|| vec![0.08, 0.04, 0.02, 0.01]);
                if kind == GridConvergenceNonlocal {
                    study.h.get_or_insert(studies::NONLOCAL_REFERENCE_H);
                }
            }
            GammaMinimizers => {
                study.dx.get_or_insert(0.01);
                study
                    .h_list
                    .get_or_insert_with(|| vec![0.08, 0.04, 0.02, 0.01, 0.005]);
            }
            DoubleLimit => {
                study
                    .h_list
                    .get_or_insert_with(|| studies::linspace(0.01, 0.1, 10));
                study
                    .coupling
                    .get_or_insert(Coupling::Ratio { divisor: 2.0 });
            }
            Nl2lSolutions => {
                study.dx.get_or_insert(0.01);
                study
                    .h_list
                    .get_or_insert_with(|| vec![0.4, 0.2, 0.1, 0.05, 0.01]);
            }
        }
        if kind == Nl2lSolutions {
            self.initial.get_or_insert(Datum::ReferenceBump);
        } else if self.initial.is_some() {
            return Err(invalid(format!(
                "[initial] is not used by study kind {kind:?}; the starting guess is fixed"
            )));
        }
        if kind != Nl2lSolutions {
            let default = match kind {
                GridConvergenceNonlocal => ReferenceSource::Builtin {
                    kind: ReferenceKind::Nonlocal,
                    h: study.h,
                },
                _ => ReferenceSource::Builtin {
                    kind: ReferenceKind::Local,
                    h: None,
                },
            };
            self.objective.reference.get_or_insert(default);
            resolve_reference(self.objective.reference.as_mut())?;
        } else if self.objective.reference.is_some() {
            return Err(invalid("objective.reference is not used by nl2l_solutions"));
        }
        self.admissible
            .support
            .get_or_insert([studies::DOMAIN.lo, studies::DOMAIN.hi]);
        Ok(())
    }
}

fn resolve_reference(reference: Option<&mut ReferenceSource>) -> Result<(), CliError> {
    match reference {
        Some(ReferenceSource::Builtin {
            kind: ReferenceKind::Nonlocal,
            h,
        }) => {
            h.get_or_insert(studies::NONLOCAL_REFERENCE_H);
        }
        Some(ReferenceSource::Builtin {
            kind: ReferenceKind::Local,
            h: Some(_),
        }) => {
            return Err(invalid(
                "objective.reference: H is only valid for kind = \"nonlocal\"",
            ))
        }
        _ => {}
    }
    Ok(())
}

/// Largest step not above `dt_max` that divides `t_final`.
fn fit_step(dt_max: f64, t_final: f64) -> f64 {
    if t_final == 0.0 {
        return dt_max;
    }
    let ratio = t_final / dt_max;
    let rounded = ratio.round();
    if (ratio - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        return dt_max;
    }
    t_final / ratio.ceil()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, CliError> {
        Config::from_toml(text, Path::new("test.toml"))
    }

    #[test]
    fn empty_file_is_the_default_config() {
        assert_eq!(parse("").unwrap(), Config::default());
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        for text in [
            "[scheme]\ndxx = 0.1\n",
            "[initial]\nkind = \"constant\"\nvalue = 0.5\nextra = 1\n",
            "[speed]\nlaw = \"power\"\nexponent = 2.0\nfoo = 1\n",
            "[optimizer.step_rule]\nrule = \"fixed\"\nlength = 1.0\nbar = 2\n",
            "[optimizer.armijo]\nshrinkage = 0.5\n",
            "[nonsense]\n",
        ] {
            let err = parse(text).unwrap_err().to_string();
            assert!(err.contains("unknown"), "{text:?} gave {err}");
        }
    }

    #[test]
    fn diagnostics_carry_the_line() {
        let err = parse("[scheme]\ndx = 0.1\nT = \"late\"\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn partial_armijo_keeps_other_defaults() {
        let c = parse("[optimizer.armijo]\nc = 0.01\n").unwrap();
        assert_eq!(c.optimizer.armijo.c, 0.01);
        assert_eq!(c.optimizer.armijo.max_backtracks, 30);
    }

    #[test]
    fn solve_defaults_resolve_dt_to_half_dx() {
        let mut c = parse("[scheme]\ndx = 0.02\n").unwrap();
        c.resolve("solve").unwrap();
        assert_eq!(c.scheme.dt, Some(0.01));
    }

    #[test]
    fn cfl_factor_gives_a_dividing_step() {
        let mut c = parse("[scheme]\ndx = 0.01\ncfl_factor = 1.0\nT = 0.1\n").unwrap();
        c.resolve("solve").unwrap();
        let dt = c.scheme.dt.unwrap();
        assert!(dt <= 0.01 / 8.0);
        assert!(((0.1 / dt) - (0.1 / dt).round()).abs() < 1e-9);
    }

    #[test]
    fn dt_and_cfl_factor_conflict() {
        let mut c = parse("[scheme]\ndt = 0.001\ncfl_factor = 1.0\n").unwrap();
        assert!(c.resolve("solve").is_err());
    }

    #[test]
    fn optimize_resolves_mesh_tolerances_and_windows() {
        let mut c = parse("[scheme]\ndx = 0.04\n").unwrap();
        c.resolve("optimize").unwrap();
        assert!((c.optimizer.step_tolerance.unwrap() - 0.04f64.powi(3)).abs() < 1e-18);
        assert!((c.optimizer.optimality_tolerance.unwrap() - 0.0016).abs() < 1e-15);
        assert_eq!(
            c.objective.terms,
            Some(vec![Term::DistributedTracking {
                weight: 1.0,
                window: Some([-1.0, 1.0])
            }])
        );
    }

    #[test]
    fn study_defaults_per_kind() {
        let mut c = parse("[study]\nkind = \"gamma_minimizers\"\n").unwrap();
        c.resolve("study").unwrap();
        let s = c.study.unwrap();
        assert_eq!(s.dx, Some(0.01));
        assert_eq!(s.h_list.unwrap().last(), Some(&0.005));

        let mut c = parse("[study]\nkind = \"grid_convergence_nonlocal\"\n").unwrap();
        c.resolve("study").unwrap();
        assert_eq!(
            c.objective.reference,
            Some(ReferenceSource::Builtin {
                kind: ReferenceKind::Nonlocal,
                h: Some(0.5)
            })
        );
    }

    #[test]
    fn study_rejects_keys_of_other_kinds() {
        let mut c = parse("[study]\nkind = \"gamma_minimizers\"\ndx_list = [0.1]\n").unwrap();
        let err = c.resolve("study").unwrap_err().to_string();
        assert!(err.contains("dx_list"), "{err}");
    }

    #[test]
    fn study_table_is_tied_to_the_study_command() {
        let mut c = parse("[study]\nkind = \"double_limit\"\n").unwrap();
        assert!(c.resolve("solve").is_err());
        let mut c = Config::default();
        assert!(c.resolve("study").is_err());
    }

    #[test]
    fn resolved_config_round_trips_through_json() {
        let mut c = parse(
            "[study]\nkind = \"double_limit\"\ncoupling = { rule = \"power\", exponent = 1.1 }\n",
        )
        .unwrap();
        c.resolve("study").unwrap();
        let json = serde_json::to_value(&c).unwrap();
        let back: Config = serde_json::from_value(json).unwrap();
        assert_eq!(back, c);
    }
}
