//! Experiment harness: reference solutions, grid-convergence tables for the
//! local and nonlocal control problems, convergence of minimizers as the
//! kernel width shrinks (at fixed and at coupled mesh size) and the
//! nonlocal-to-local convergence of solutions.
//!
//! All studies share the same setup: domain `[−1, 1]`, horizon `T = 0.25`,
//! Greenshields speed, `Δt = Δx/2`, the quadratic-bump datum as target
//! control and the step `0.25·χ_{[0,∞)} + 0.2` as starting guess.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    l1_distance, project_admissible, project_function, AdmissibleSpec, CellField, Grid1D, Interval,
};
use crate::kernel::KernelSpec;
use crate::objectives::{CompiledObjective, ObjectiveSpec, Provenance, ReferenceSolution};
use crate::optimize::{
    minimize, ArmijoConfig, OptimizationReport, OptimizerConfig, StepRule, Termination,
};
use crate::scheme::{run, SchemeConfig, SpeedLaw};

pub const DOMAIN: Interval = Interval { lo: -1.0, hi: 1.0 };
pub const HORIZON: f64 = 0.25;
pub const REFERENCE_DX: f64 = 0.002;
pub const REFERENCE_DT: f64 = 0.001;
pub const NONLOCAL_REFERENCE_H: f64 = 0.5;
/// `Δt / Δx` used by every coarse run.
pub const DT_OVER_DX: f64 = 0.5;

/// Target control: `(−x² + 0.25)·χ_{|x| ≤ 0.5} + 0.2`.
pub fn reference_datum(x: f64) -> f64 {
    if x.abs() <= 0.5 {
        -x * x + 0.25 + 0.2
    } else {
        0.2
    }
}

/// Starting guess: `0.25·χ_{[0,∞)} + 0.2`.
pub fn initial_guess(x: f64) -> f64 {
    if x >= 0.0 {
        0.45
    } else {
        0.2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceKind {
    Local,
    Nonlocal { h: f64 },
}

/// Runs the target datum on the reference mesh (`Δx = 0.002`,
/// `Δt = 0.001`) up to `T`, storing every step.
pub fn make_reference(
    kind: ReferenceKind,
    kernel: KernelSpec,
    speed: SpeedLaw,
) -> Result<ReferenceSolution> {
    let grid = Grid1D::new(DOMAIN.lo, DOMAIN.hi, REFERENCE_DX)?;
    let datum = project_function(reference_datum, &grid)?;
    let mut scheme = SchemeConfig::new(REFERENCE_DX, REFERENCE_DT, HORIZON)?;
    let provenance = match kind {
        ReferenceKind::Local => Provenance::Local,
        ReferenceKind::Nonlocal { h } => {
            scheme = scheme.with_kernel(kernel, h)?;
            Provenance::Nonlocal { h }
        }
    };
    let trajectory = run(&datum, &speed, &scheme)?;
    ReferenceSolution::new(trajectory, provenance)
}

/// Coupling between kernel width and mesh size in the double-limit sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coupling {
    /// `Δx = H / divisor`.
    Ratio { divisor: f64 },
    /// `Δx = H^exponent`.
    Power { exponent: f64 },
}

impl Coupling {
    pub fn mesh(&self, h: f64) -> f64 {
        match *self {
            Coupling::Ratio { divisor } => h / divisor,
            Coupling::Power { exponent } => h.powf(exponent),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Coupling::Ratio { divisor } => format!("dx=H/{divisor}"),
            Coupling::Power { exponent } => format!("dx=H^{exponent}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    GridConvergenceLocal,
    GridConvergenceNonlocal,
    GammaMinimizers,
    DoubleLimit,
    Nl2lSolutions,
}

/// Settings shared by every study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    pub kernel: KernelSpec,
    pub speed: SpeedLaw,
    /// Box constraint on the datum.
    pub box_lo: f64,
    pub box_hi: f64,
    pub tv_bound: f64,
    pub support: Interval,
    pub step_rule: StepRule,
    pub armijo: ArmijoConfig,
    pub fd_step: f64,
    pub max_iterations: usize,
    pub max_evaluations: usize,
    /// Overrides the mesh-derived tolerances when set.
    pub step_tolerance: Option<f64>,
    pub optimality_tolerance: Option<f64>,
    /// Run independent study cells on the rayon pool.
    pub parallel_cells: bool,
    /// Evaluate gradient components on the rayon pool.
    pub parallel_gradient: bool,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::default(),
            speed: SpeedLaw::Greenshields,
            box_lo: 0.0,
            box_hi: 1.0,
            tv_bound: 2.0,
            support: DOMAIN,
            step_rule: StepRule::default(),
            armijo: ArmijoConfig::default(),
            fd_step: 1e-6,
            max_iterations: 1000,
            max_evaluations: 100_000,
            step_tolerance: None,
            optimality_tolerance: None,
            parallel_cells: false,
            parallel_gradient: false,
        }
    }
}

impl StudySettings {
    pub fn optimizer(&self, dx: f64) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::for_mesh(dx);
        cfg.max_iterations = self.max_iterations;
        cfg.max_evaluations = self.max_evaluations;
        cfg.fd_step = self.fd_step;
        cfg.step_rule = self.step_rule;
        cfg.armijo = self.armijo;
        cfg.parallel = self.parallel_gradient;
        if let Some(t) = self.step_tolerance {
            cfg.step_tolerance = t;
        }
        if let Some(t) = self.optimality_tolerance {
            cfg.optimality_tolerance = t;
        }
        cfg
    }
}

/// One control problem: mesh, optional kernel width and its tracking
/// reference.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub grid: Grid1D,
    pub scheme: SchemeConfig,
    pub reference: Arc<ReferenceSolution>,
}

impl ControlProblem {
    /// Mesh of (approximately) `dx` dividing the domain, `Δt ≤ Δx/2`
    /// dividing the horizon, nonlocal when `h` is given.
    pub fn new(
        dx: f64,
        h: Option<f64>,
        reference: Arc<ReferenceSolution>,
        settings: &StudySettings,
    ) -> Result<Self> {
        let grid = Grid1D::snapped(DOMAIN.lo, DOMAIN.hi, dx)?;
        let mut scheme = SchemeConfig::fitted(grid.dx(), DT_OVER_DX * grid.dx(), HORIZON)?;
        if let Some(h) = h {
            scheme = scheme.with_kernel(settings.kernel, h)?;
        }
        Ok(Self {
            grid,
            scheme,
            reference,
        })
    }

    pub fn objective(&self, settings: &StudySettings) -> Result<CompiledObjective> {
        let spec = ObjectiveSpec::distributed(self.reference.clone(), DOMAIN);
        CompiledObjective::new(&spec, self.grid, self.scheme.clone(), settings.speed)
    }

    pub fn admissible(&self, settings: &StudySettings) -> Result<AdmissibleSpec> {
        AdmissibleSpec::new(
            settings.box_lo,
            settings.box_hi,
            settings.tv_bound,
            settings.support,
        )
    }

    /// Admissible projection of the starting guess.
    pub fn start(&self, settings: &StudySettings) -> Result<CellField> {
        let raw = project_function(initial_guess, &self.grid)?;
        Ok(project_admissible(&raw, &self.admissible(settings)?)?.field)
    }

    /// The target control averaged on this mesh.
    pub fn target_datum(&self) -> Result<CellField> {
        project_function(reference_datum, &self.grid)
    }

    pub fn solve(
        &self,
        start: &CellField,
        settings: &StudySettings,
        optimizer: &OptimizerConfig,
    ) -> Result<OptimizationReport> {
        let objective = self.objective(settings)?;
        minimize(&objective, start, &self.admissible(settings)?, optimizer)
    }
}

/// `‖a − b‖_{L¹(Ω)} / ‖b‖_{L¹(Ω)}` on the domain.
pub fn relative_l1_error(a: &CellField, b: &CellField) -> Result<f64> {
    let num = l1_distance(a, b, DOMAIN)?;
    let zero = CellField::constant(*b.grid(), 0.0);
    let den = l1_distance(b, &zero, DOMAIN)?;
    if den == 0.0 {
        return Err(Error::InvalidStudy(
            "relative error against a zero field".into(),
        ));
    }
    Ok(num / den)
}

/// One line of a study table.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub dx: f64,
    pub h: Option<f64>,
    pub l1_relative_error: f64,
    pub objective_value: f64,
    pub iterations: usize,
    pub first_order_optimality: f64,
    pub evaluations: usize,
    pub termination: Option<Termination>,
    pub total_variation: f64,
    pub within_tv_bound: bool,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Ok,
    Failed(String),
}

impl StudyRow {
    fn from_report(dx: f64, h: Option<f64>, error: f64, report: &OptimizationReport) -> Self {
        Self {
            dx,
            h,
            l1_relative_error: error,
            objective_value: report.objective_value,
            iterations: report.iterations,
            first_order_optimality: report.first_order_optimality,
            evaluations: report.evaluations,
            termination: Some(report.termination),
            total_variation: report.total_variation,
            within_tv_bound: report.within_tv_bound,
            status: RowStatus::Ok,
        }
    }

    fn failed(dx: f64, h: Option<f64>, err: &Error) -> Self {
        Self {
            dx,
            h,
            l1_relative_error: f64::NAN,
            objective_value: f64::NAN,
            iterations: 0,
            first_order_optimality: f64::NAN,
            evaluations: 0,
            termination: None,
            total_variation: f64::NAN,
            within_tv_bound: false,
            status: RowStatus::Failed(err.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RowStatus::Ok
    }
}

/// A study row together with the recovered control.
#[derive(Debug, Clone)]
pub struct StudyCell {
    pub row: StudyRow,
    pub report: Option<OptimizationReport>,
}

fn map_cells<T, F>(items: &[T], parallel: bool, f: F) -> Vec<StudyCell>
where
    T: Sync,
    F: Fn(&T) -> StudyCell + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

fn check_list(name: &str, list: &[f64]) -> Result<()> {
    if list.is_empty() {
        return Err(Error::InvalidStudy(format!("{name} is empty")));
    }
    if list.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidStudy(format!(
            "{name} must hold positive values"
        )));
    }
    let increasing = list.windows(2).all(|w| w[1] > w[0]);
    let decreasing = list.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::InvalidStudy(format!(
            "{name} must be strictly monotone"
        )));
    }
    Ok(())
}

/// Optimizes from the projected starting guess on every mesh and compares
/// the recovered control with the target datum.
///
/// `h = None` tracks the local reference with the local scheme; `Some(H)`
/// tracks the nonlocal reference of width `H` with the nonlocal scheme.
pub fn grid_convergence_study(
    dx_list: &[f64],
    h: Option<f64>,
    reference: Arc<ReferenceSolution>,
    settings: &StudySettings,
) -> Result<Vec<StudyCell>> {
    check_list("dx_list", dx_list)?;
    Ok(map_cells(dx_list, settings.parallel_cells, |&dx| {
        let attempt = || -> Result<StudyCell> {
            let problem = ControlProblem::new(dx, h, reference.clone(), settings)?;
            let start = problem.start(settings)?;
            let report = problem.solve(&start, settings, &settings.optimizer(problem.grid.dx()))?;
            let error = relative_l1_error(&report.minimizer, &problem.target_datum()?)?;
            Ok(StudyCell {
                row: StudyRow::from_report(problem.grid.dx(), h, error, &report),
                report: Some(report),
            })
        };
        attempt().unwrap_or_else(|e| StudyCell {
            row: StudyRow::failed(dx, h, &e),
            report: None,
        })
    }))
}

/// Convergence of minimizers of the nonlocal problems to the minimizer of
/// the local one at a fixed mesh.
#[derive(Debug, Clone)]
pub struct GammaStudy {
    pub local: StudyCell,
    /// One cell per `H`; the error column holds
    /// `‖U_{o,H}^min − U_o^min‖ / ‖U_o^min‖`.
    pub cells: Vec<StudyCell>,
}

impl GammaStudy {
    pub fn curve(&self) -> Vec<(f64, f64)> {
        self.cells
            .iter()
            .map(|c| (c.row.h.unwrap_or(f64::NAN), c.row.l1_relative_error))
            .collect()
    }
}

pub fn gamma_minimizers_study(
    dx: f64,
    h_list: &[f64],
    reference: Arc<ReferenceSolution>,
    settings: &StudySettings,
) -> Result<GammaStudy> {
    check_list("H_list", h_list)?;
    let local_problem = ControlProblem::new(dx, None, reference.clone(), settings)?;
    let optimizer = settings.optimizer(local_problem.grid.dx());
    let start = local_problem.start(settings)?;
    let local_report = local_problem.solve(&start, settings, &optimizer)?;
    let target = local_problem.target_datum()?;
    let local = StudyCell {
        row: StudyRow::from_report(
            local_problem.grid.dx(),
            None,
            relative_l1_error(&local_report.minimizer, &target)?,
            &local_report,
        ),
        report: Some(local_report.clone()),
    };
    let local_min = local_report.minimizer;
    let cells = map_cells(h_list, settings.parallel_cells, |&h| {
        let attempt = || -> Result<StudyCell> {
            let problem = ControlProblem::new(dx, Some(h), reference.clone(), settings)?;
            let report = problem.solve(&start, settings, &optimizer)?;
            let error = relative_l1_error(&report.minimizer, &local_min)?;
            Ok(StudyCell {
                row: StudyRow::from_report(problem.grid.dx(), Some(h), error, &report),
                report: Some(report),
            })
        };
        attempt().unwrap_or_else(|e| StudyCell {
            row: StudyRow::failed(dx, Some(h), &e),
            report: None,
        })
    });
    Ok(GammaStudy { local, cells })
}

/// `n` evenly spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Simultaneous limit: for every `H` the nonlocal problem is solved on the
/// coupled mesh and its minimizer compared with the target datum. The
/// optimizer tolerances are taken from the smallest mesh of the sweep.
#[derive(Debug, Clone)]
pub struct DoubleLimitStudy {
    pub coupling: Coupling,
    /// Smallest nominal mesh of the sweep.
    pub min_dx: f64,
    pub cells: Vec<StudyCell>,
}

pub fn double_limit_study(
    h_list: &[f64],
    coupling: Coupling,
    reference: Arc<ReferenceSolution>,
    settings: &StudySettings,
) -> Result<DoubleLimitStudy> {
    check_list("H_list", h_list)?;
    let meshes: Vec<f64> = h_list.iter().map(|&h| coupling.mesh(h)).collect();
    if meshes.iter().any(|&dx| !(dx > 0.0 && dx < DOMAIN.length())) {
        return Err(Error::InvalidStudy(format!(
            "coupling {} yields meshes outside (0, {})",
            coupling.label(),
            DOMAIN.length()
        )));
    }
    let min_dx = meshes.iter().copied().fold(f64::INFINITY, f64::min);
    let optimizer = settings.optimizer(min_dx);
    let pairs: Vec<(f64, f64)> = h_list.iter().copied().zip(meshes).collect();
    let cells = map_cells(&pairs, settings.parallel_cells, |&(h, dx)| {
        let attempt = || -> Result<StudyCell> {
            let problem = ControlProblem::new(dx, Some(h), reference.clone(), settings)?;
            let start = problem.start(settings)?;
            let report = problem.solve(&start, settings, &optimizer)?;
            let error = relative_l1_error(&report.minimizer, &problem.target_datum()?)?;
            Ok(StudyCell {
                row: StudyRow::from_report(problem.grid.dx(), Some(h), error, &report),
                report: Some(report),
            })
        };
        attempt().unwrap_or_else(|e| StudyCell {
            row: StudyRow::failed(dx, Some(h), &e),
            report: None,
        })
    });
    Ok(DoubleLimitStudy {
        coupling,
        min_dx,
        cells,
    })
}

/// `sup_t ‖U_H(t) − U(t)‖_{L¹}` for every `H`, both runs from `u_o` with
/// `Δt = Δx/2`.
pub fn nl2l_solutions_study(
    u_o: &CellField,
    h_list: &[f64],
    settings: &StudySettings,
) -> Result<Vec<(f64, f64)>> {
    check_list("H_list", h_list)?;
    let grid = *u_o.grid();
    let scheme = SchemeConfig::fitted(grid.dx(), DT_OVER_DX * grid.dx(), HORIZON)?;
    let local = run(u_o, &settings.speed, &scheme)?;
    let window = grid.extent();
    let sup_error = |h: f64| -> Result<(f64, f64)> {
        let nonlocal = run(
            u_o,
            &settings.speed,
            &scheme.clone().with_kernel(settings.kernel, h)?,
        )?;
        let mut sup: f64 = 0.0;
        for (a, b) in nonlocal.states.iter().zip(&local.states) {
            sup = sup.max(l1_distance(a, b, window)?);
        }
        Ok((h, sup))
    };
    if settings.parallel_cells {
        h_list.par_iter().map(|&h| sup_error(h)).collect()
    } else {
        h_list.iter().map(|&h| sup_error(h)).collect()
    }
}
