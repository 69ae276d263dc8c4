//! Box-constrained minimization over the cell values of the initial datum:
//! projected gradient descent with Armijo backtracking along the projection
//! arc and forward-difference gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{total_variation_of, AdmissibleSpec, CellField};

/// A scalar functional of the cell values.
pub trait Objective: Sync {
    fn dimension(&self) -> usize;
    fn value(&self, u: &[f64]) -> Result<f64>;
}

/// Adapter turning a closure into an [`Objective`].
pub struct FnObjective<F> {
    dimension: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(dimension: usize, f: F) -> Self {
        Self { dimension, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        Ok((self.f)(u))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmijoConfig {
    pub c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoConfig {
    fn default() -> Self {
        Self {
            c: 1e-4,
            shrink: 0.5,
            max_backtracks: 30,
        }
    }
}

/// How the first trial step of each line search is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepRule {
    /// Always start from the same step length.
    Fixed { length: f64 },
    /// Barzilai–Borwein length `sᵀs / sᵀy` from the previous iteration,
    /// clamped to `[min, max]`; the first iteration uses `max`.
    BarzilaiBorwein { min: f64, max: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Fixed { length: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub max_evaluations: usize,
    pub step_tolerance: f64,
    pub optimality_tolerance: f64,
    pub fd_step: f64,
    pub armijo: ArmijoConfig,
    pub step_rule: StepRule,
    /// Evaluate gradient components on the rayon pool.
    pub parallel: bool,
}

impl OptimizerConfig {
    /// Defaults tied to the mesh: step tolerance `dx³`, optimality
    /// tolerance `dx²`.
    pub fn for_mesh(dx: f64) -> Self {
        Self {
            max_iterations: 1000,
            max_evaluations: 100_000,
            step_tolerance: dx * dx * dx,
            optimality_tolerance: dx * dx,
            fd_step: 1e-6,
            armijo: ArmijoConfig::default(),
            step_rule: StepRule::default(),
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step_tolerance", self.step_tolerance),
            ("optimality_tolerance", self.optimality_tolerance),
            ("fd_step", self.fd_step),
            ("armijo.c", self.armijo.c),
            ("armijo.shrink", self.armijo.shrink),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidOptimizer(format!(
                    "{name} = {v} must be positive"
                )));
            }
        }
        if self.armijo.shrink >= 1.0 {
            return Err(Error::InvalidOptimizer("armijo.shrink must be < 1".into()));
        }
        if self.max_iterations == 0 || self.max_evaluations == 0 {
            return Err(Error::InvalidOptimizer("budgets must be positive".into()));
        }
        match self.step_rule {
            StepRule::Fixed { length } if !(length > 0.0) => Err(Error::InvalidOptimizer(format!(
                "step length {length} must be positive"
            ))),
            StepRule::BarzilaiBorwein { min, max } if !(min > 0.0 && max >= min) => Err(
                Error::InvalidOptimizer(format!("invalid step bounds [{min}, {max}]")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    StepTol,
    OptimalityTol,
    MaxIter,
    MaxEval,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::StepTol => "step_tol",
            Termination::OptimalityTol => "optimality_tol",
            Termination::MaxIter => "max_iter",
            Termination::MaxEval => "max_eval",
        }
    }
}

/// One row of the iteration log. Row 0 describes the starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    pub optimality: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationReport {
    pub minimizer: CellField,
    pub objective_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub first_order_optimality: f64,
    pub termination: Termination,
    pub history: Vec<IterationRecord>,
    pub total_variation: f64,
    pub within_tv_bound: bool,
}

/// Forward-difference gradient with box-aware probes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
    /// Cells whose lower and upper bounds coincide; their component is 0.
    pub pinned: Vec<usize>,
    pub evaluations: usize,
}

/// `(G(u + δ e_j) − G(u))/δ` per cell, where the probe `u_j + h` is clipped
/// to `[lo_j, hi_j]` and `δ` is the actual displacement. A cell sitting on
/// its upper bound is probed backwards.
pub fn fd_gradient(
    objective: &dyn Objective,
    u: &[f64],
    f0: f64,
    h: f64,
    lo: &[f64],
    hi: &[f64],
    parallel: bool,
) -> Result<Gradient> {
    let n = u.len();
    let component = |j: usize| -> Result<Option<f64>> {
        let forward = (u[j] + h).min(hi[j]);
        let probe = if forward > u[j] {
            forward
        } else {
            (u[j] - h).max(lo[j])
        };
        let delta = probe - u[j];
        if delta == 0.0 {
            return Ok(None);
        }
        let mut shifted = u.to_vec();
        shifted[j] = probe;
        Ok(Some((objective.value(&shifted)? - f0) / delta))
    };
    let parts: Vec<Option<f64>> = if parallel {
        (0..n)
            .into_par_iter()
            .map(component)
            .collect::<Result<Vec<_>>>()?
    } else {
        (0..n).map(component).collect::<Result<Vec<_>>>()?
    };
    let pinned: Vec<usize> = parts
        .iter()
        .enumerate()
        .filter_map(|(j, p)| p.is_none().then_some(j))
        .collect();
    Ok(Gradient {
        evaluations: n - pinned.len(),
        values: parts.into_iter().map(|p| p.unwrap_or(0.0)).collect(),
        pinned,
    })
}

fn project_into(u: &[f64], lo: &[f64], hi: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        u.iter()
            .zip(lo.iter().zip(hi))
            .map(|(&v, (&l, &h))| v.clamp(l, h)),
    );
}

/// `‖Π(u − g) − u‖∞`.
pub fn projected_gradient_residual(u: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    u.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&v, &d), (&l, &h))| ((v - d).clamp(l, h) - v).abs())
        .fold(0.0, f64::max)
}

fn norm2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-cell bounds: the box inside the support, `box_lo` outside.
fn bounds(u: &CellField, admissible: &AdmissibleSpec) -> (Vec<f64>, Vec<f64>) {
    let grid = u.grid();
    (0..grid.n_cells())
        .map(|j| {
            if admissible.support.contains(grid.midpoint(j)) {
                (admissible.box_lo, admissible.box_hi)
            } else {
                (admissible.box_lo, admissible.box_lo)
            }
        })
        .unzip()
}

struct Budget {
    max: usize,
    used: usize,
}

impl Budget {
    fn allows(&self, extra: usize) -> bool {
        self.used + extra <= self.max
    }
}

/// Projected-gradient descent from the projection of `u_start`.
///
/// Each iteration computes a forward-difference gradient `g`, then searches
/// along `u(α) = Π(u − α g)` for the first `α` (from the step rule, shrunk
/// geometrically) with `G(u(α)) ≤ G(u) + c gᵀ(u(α) − u)`. The run stops on
/// the first of: projected-gradient residual `‖Π(u − g) − u‖∞` below the
/// optimality tolerance, an accepted step shorter than the step tolerance
/// (Euclidean norm), a failed line search, or an exhausted budget.
pub fn minimize(
    objective: &dyn Objective,
    u_start: &CellField,
    admissible: &AdmissibleSpec,
    cfg: &OptimizerConfig,
) -> Result<OptimizationReport> {
    cfg.validate()?;
    let n = objective.dimension();
    if n != u_start.len() {
        return Err(Error::InvalidOptimizer(format!(
            "objective dimension {n} differs from the start datum size {}",
            u_start.len()
        )));
    }
    let grid = *u_start.grid();
    let (lo, hi) = bounds(u_start, admissible);
    let mut u = Vec::with_capacity(n);
    project_into(u_start.values(), &lo, &hi, &mut u);

    let mut budget = Budget {
        max: cfg.max_evaluations,
        used: 0,
    };
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut iterations = 0;
    let mut optimality = f64::INFINITY;

    macro_rules! finish {
        ($term:expr, $value:expr) => {{
            let tv = total_variation_of(&u);
            return Ok(OptimizationReport {
                minimizer: CellField::new(grid, u)?,
                objective_value: $value,
                iterations,
                evaluations: budget.used,
                first_order_optimality: optimality,
                termination: $term,
                history,
                total_variation: tv,
                within_tv_bound: tv <= admissible.tv_bound,
            });
        }};
    }
    macro_rules! attempt {
        ($e:expr, $value:expr) => {
            match $e {
                Ok(v) => v,
                Err(source) => {
                    let tv = total_variation_of(&u);
                    let report = OptimizationReport {
                        minimizer: CellField::new(grid, u.clone())?,
                        objective_value: $value,
                        iterations,
                        evaluations: budget.used,
                        first_order_optimality: optimality,
                        termination: Termination::MaxEval,
                        history: history.clone(),
                        total_variation: tv,
                        within_tv_bound: tv <= admissible.tv_bound,
                    };
                    return Err(Error::Aborted {
                        report: Box::new(report),
                        source: Box::new(source),
                    });
                }
            }
        };
    }

    let mut f = attempt!(objective.value(&u), f64::NAN);
    budget.used += 1;
    let mut last_step = 0.0;
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut trial = Vec::with_capacity(n);
    let mut shifted = Vec::with_capacity(n);

    loop {
        let active = (0..n).filter(|&j| lo[j] < hi[j]).count();
        if !budget.allows(active) {
            history.push(IterationRecord {
                iteration: iterations,
                value: f,
                optimality,
                step: last_step,
            });
            finish!(Termination::MaxEval, f);
        }
        let grad = attempt!(
            fd_gradient(objective, &u, f, cfg.fd_step, &lo, &hi, cfg.parallel),
            f
        );
        budget.used += grad.evaluations;
        let g = grad.values;
        optimality = projected_gradient_residual(&u, &g, &lo, &hi);
        history.push(IterationRecord {
            iteration: iterations,
            value: f,
            optimality,
            step: last_step,
        });
        if optimality <= cfg.optimality_tolerance {
            finish!(Termination::OptimalityTol, f);
        }
        if iterations >= cfg.max_iterations {
            finish!(Termination::MaxIter, f);
        }

        let mut alpha = match cfg.step_rule {
            StepRule::Fixed { length } => length,
            StepRule::BarzilaiBorwein { min, max } => match &previous {
                None => max,
                Some((u_prev, g_prev)) => {
                    let (mut ss, mut sy) = (0.0, 0.0);
                    for j in 0..n {
                        let s = u[j] - u_prev[j];
                        ss += s * s;
                        sy += s * (g[j] - g_prev[j]);
                    }
                    if sy > 0.0 {
                        (ss / sy).clamp(min, max)
                    } else {
                        max
                    }
                }
            },
        };

        let mut accepted = None;
        for _ in 0..=cfg.armijo.max_backtracks {
            if !budget.allows(1) {
                finish!(Termination::MaxEval, f);
            }
            shifted.clear();
            shifted.extend(u.iter().zip(&g).map(|(v, d)| v - alpha * d));
            project_into(&shifted, &lo, &hi, &mut trial);
            let decrease: f64 = trial
                .iter()
                .zip(&u)
                .zip(&g)
                .map(|((t, v), d)| d * (t - v))
                .sum();
            if trial == u {
                break;
            }
            let f_trial = attempt!(objective.value(&trial), f);
            budget.used += 1;
            if f_trial <= f + cfg.armijo.c * decrease {
                accepted = Some(f_trial);
                break;
            }
            alpha *= cfg.armijo.shrink;
        }
        let Some(f_new) = accepted else {
            finish!(Termination::StepTol, f);
        };
        iterations += 1;
        last_step = norm2(trial.iter().zip(&u).map(|(t, v)| t - v));
        previous = Some((u.clone(), g));
        std::mem::swap(&mut u, &mut trial);
        f = f_new;
        if last_step <= cfg.step_tolerance {
            history.push(IterationRecord {
                iteration: iterations,
                value: f,
                optimality,
                step: last_step,
            });
            finish!(Termination::StepTol, f);
        }
    }
}
