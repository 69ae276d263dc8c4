//! Tracking-type functionals over the initial datum.
//!
//! An [`ObjectiveSpec`] is a weighted sum of terms evaluated on the run
//! started from the datum: distributed tracking of a reference solution over
//! space-time, tracking at the final time, and total-variation
//! regularization of the datum itself.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{total_variation, total_variation_of, CellField, Grid1D, Interval};
use crate::optimize::Objective;
use crate::scheme::{run_observed, SchemeConfig, SpeedLaw, Trajectory};

/// Slack applied when matching query times against stored times.
const TIME_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Local,
    Nonlocal { h: f64 },
}

/// Fine-grid trajectory stored at every step, used as tracking target.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    trajectory: Trajectory,
    provenance: Provenance,
}

impl ReferenceSolution {
    pub fn new(trajectory: Trajectory, provenance: Provenance) -> Result<Self> {
        if !trajectory.is_complete() {
            return Err(Error::IncompleteTrajectory(trajectory.config.store_every()));
        }
        Ok(Self {
            trajectory,
            provenance,
        })
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn grid(&self) -> &Grid1D {
        self.trajectory.initial().grid()
    }

    pub fn t_final(&self) -> f64 {
        self.trajectory.config.t_final()
    }

    /// Index of the latest stored time not after `t`.
    pub fn slice_index(&self, t: f64) -> Result<usize> {
        let times = &self.trajectory.times;
        let t_end = *times.last().expect("non-empty trajectory");
        if !(t >= -TIME_SLACK && t <= t_end + TIME_SLACK) {
            return Err(Error::OutOfRange(format!("t = {t} outside [0, {t_end}]")));
        }
        let k = times.partition_point(|&s| s <= t + TIME_SLACK);
        Ok(k.saturating_sub(1))
    }

    /// Value of the reference cell containing `x` at the latest stored time
    /// not after `t`.
    pub fn sample(&self, t: f64, x: f64) -> Result<f64> {
        let k = self.slice_index(t)?;
        self.trajectory.states[k]
            .value_at(x)
            .ok_or_else(|| Error::OutOfRange(format!("x = {x} outside {}", self.grid())))
    }

    /// Reference values at the midpoints of `cells` of `grid`, at time `t`.
    pub fn sample_cells(
        &self,
        grid: &Grid1D,
        cells: std::ops::Range<usize>,
        t: f64,
    ) -> Result<Vec<f64>> {
        let state = &self.trajectory.states[self.slice_index(t)?];
        cells
            .map(|j| {
                let x = grid.midpoint(j);
                state
                    .value_at(x)
                    .ok_or_else(|| Error::OutOfRange(format!("x = {x} outside {}", self.grid())))
            })
            .collect()
    }
}

#[inline]
fn slice_mismatch(values: &[f64], target: &[f64]) -> f64 {
    values.iter().zip(target).map(|(u, r)| (u - r).abs()).sum()
}

/// `Σ_m Σ_j |U^m_j − U^d(t_m, x_j)| Δx Δt` over all steps and the cells
/// whose midpoint lies in `window`.
pub fn distributed_tracking(
    traj: &Trajectory,
    reference: &ReferenceSolution,
    window: Interval,
) -> Result<f64> {
    if !traj.is_complete() {
        return Err(Error::IncompleteTrajectory(traj.config.store_every()));
    }
    let grid = *traj.initial().grid();
    let range = grid.midpoint_range(window);
    let scale = grid.dx() * traj.config.dt();
    let mut total = 0.0;
    for (state, &t) in traj.states.iter().zip(&traj.times) {
        let target = reference.sample_cells(&grid, range.clone(), t)?;
        total += slice_mismatch(&state.values()[range.clone()], &target) * scale;
    }
    Ok(total)
}

/// `Σ_j |f_j − target_j|^p Δx` over the cells of the cell-aligned `window`.
pub fn final_time_tracking(
    f: &CellField,
    target: &CellField,
    p: f64,
    window: Interval,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidObjective(format!("p = {p} must be ≥ 1")));
    }
    f.grid().ensure_matches(target.grid())?;
    let range = f.grid().aligned_range(window)?;
    Ok(power_mismatch(
        &f.values()[range.clone()],
        &target.values()[range],
        p,
        f.grid().dx(),
    ))
}

fn power_mismatch(values: &[f64], target: &[f64], p: f64, dx: f64) -> f64 {
    if p == 1.0 {
        values
            .iter()
            .zip(target)
            .map(|(x, y)| (x - y).abs() * dx)
            .sum()
    } else {
        values
            .iter()
            .zip(target)
            .map(|(x, y)| (x - y).abs().powf(p) * dx)
            .sum()
    }
}

pub fn bv_regularization(f: &CellField) -> f64 {
    total_variation(f)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TermKind {
    DistributedTracking {
        reference: Arc<ReferenceSolution>,
    },
    FinalTimeTracking {
        p: f64,
        reference: Arc<ReferenceSolution>,
    },
    BvRegularization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTerm {
    pub kind: TermKind,
    pub weight: f64,
    pub window: Interval,
}

/// Weighted sum of functional terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub terms: Vec<ObjectiveTerm>,
}

impl ObjectiveSpec {
    /// Distributed tracking of `reference` on `window` with unit weight.
    pub fn distributed(reference: Arc<ReferenceSolution>, window: Interval) -> Self {
        Self {
            terms: vec![ObjectiveTerm {
                kind: TermKind::DistributedTracking { reference },
                weight: 1.0,
                window,
            }],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidObjective(
                "at least one term is required".into(),
            ));
        }
        for t in &self.terms {
            if !(t.weight >= 0.0 && t.weight.is_finite()) {
                return Err(Error::InvalidObjective(format!(
                    "weight {} must be finite and non-negative",
                    t.weight
                )));
            }
            if let TermKind::FinalTimeTracking { p, .. } = t.kind {
                if !(p >= 1.0) {
                    return Err(Error::InvalidObjective(format!("p = {p} must be ≥ 1")));
                }
            }
        }
        Ok(())
    }
}

enum CompiledTerm {
    Distributed {
        cells: std::ops::Range<usize>,
        targets: Vec<Vec<f64>>,
    },
    FinalTime {
        p: f64,
        cells: std::ops::Range<usize>,
        target: Vec<f64>,
    },
    Bv,
}

/// An [`ObjectiveSpec`] bound to an evaluation grid and scheme, with the
/// reference samples precomputed for every time step.
pub struct CompiledObjective {
    grid: Grid1D,
    scheme: SchemeConfig,
    speed: SpeedLaw,
    weights: Vec<f64>,
    terms: Vec<CompiledTerm>,
}

impl CompiledObjective {
    pub fn new(
        spec: &ObjectiveSpec,
        grid: Grid1D,
        scheme: SchemeConfig,
        speed: SpeedLaw,
    ) -> Result<Self> {
        spec.validate()?;
        let mut terms = Vec::with_capacity(spec.terms.len());
        for term in &spec.terms {
            let compiled = match &term.kind {
                TermKind::DistributedTracking { reference } => {
                    let cells = grid.midpoint_range(term.window);
                    let targets = (0..=scheme.steps())
                        .map(|m| reference.sample_cells(&grid, cells.clone(), scheme.time(m)))
                        .collect::<Result<Vec<_>>>()?;
                    CompiledTerm::Distributed { cells, targets }
                }
                TermKind::FinalTimeTracking { p, reference } => {
                    let cells = grid.aligned_range(term.window)?;
                    let target = reference.sample_cells(&grid, cells.clone(), scheme.t_final())?;
                    CompiledTerm::FinalTime {
                        p: *p,
                        cells,
                        target,
                    }
                }
                TermKind::BvRegularization => CompiledTerm::Bv,
            };
            terms.push(compiled);
        }
        Ok(Self {
            grid,
            scheme,
            speed,
            weights: spec.terms.iter().map(|t| t.weight).collect(),
            terms,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn scheme(&self) -> &SchemeConfig {
        &self.scheme
    }

    pub fn speed(&self) -> &SpeedLaw {
        &self.speed
    }

    /// Value of every term (unweighted), in the order given.
    pub fn term_values(&self, u_o: &CellField) -> Result<Vec<f64>> {
        self.grid.ensure_matches(u_o.grid())?;
        let scale = self.grid.dx() * self.scheme.dt();
        let dx = self.grid.dx();
        let last = self.scheme.steps();
        let mut acc = vec![0.0; self.terms.len()];
        run_observed(u_o, &self.speed, &self.scheme, |m, values| {
            for (term, a) in self.terms.iter().zip(acc.iter_mut()) {
                match term {
                    CompiledTerm::Distributed { cells, targets } => {
                        *a += slice_mismatch(&values[cells.clone()], &targets[m]) * scale;
                    }
                    CompiledTerm::FinalTime { p, cells, target } if m == last => {
                        *a = power_mismatch(&values[cells.clone()], target, *p, dx);
                    }
                    _ => {}
                }
            }
            Ok(())
        })?;
        for (term, a) in self.terms.iter().zip(acc.iter_mut()) {
            if let CompiledTerm::Bv = term {
                *a = total_variation_of(u_o.values());
            }
        }
        Ok(acc)
    }

    /// `Σ_i weight_i · term_i`.
    pub fn evaluate(&self, u_o: &CellField) -> Result<f64> {
        Ok(self
            .term_values(u_o)?
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * t)
            .sum())
    }
}

impl Objective for CompiledObjective {
    fn dimension(&self) -> usize {
        self.grid.n_cells()
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        self.evaluate(&CellField::new(self.grid, u.to_vec())?)
    }
}

/// Runs the scheme from `u_o` once and returns the weighted objective.
pub fn evaluate(
    spec: &ObjectiveSpec,
    u_o: &CellField,
    scheme: &SchemeConfig,
    speed: &SpeedLaw,
) -> Result<f64> {
    CompiledObjective::new(spec, *u_o.grid(), scheme.clone(), *speed)?.evaluate(u_o)
}
