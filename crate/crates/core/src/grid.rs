//! Uniform one-dimensional meshes, piecewise-constant fields and the
//! measurements taken on them (windowed L¹ distances, total variation, the
//! discrete one-sided Lipschitz seminorm) together with the projection onto
//! the admissible set of initial data.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when deciding whether a ratio is an integer.
const INTEGER_SLACK: f64 = 1e-9;

/// Closed interval `[lo, hi]` on the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Uniform mesh of `n_cells` cells of width `dx` covering `[x_min, x_max]`.
///
/// Cell `j` (0-based) is `[x_min + j·dx, x_min + (j+1)·dx]` with midpoint
/// `x_min + (j + 1/2)·dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    dx: f64,
    n_cells: usize,
}

fn nearest_integer(ratio: f64) -> Option<usize> {
    let rounded = ratio.round();
    if rounded >= 1.0 && (ratio - rounded).abs() <= INTEGER_SLACK * rounded.max(1.0) {
        Some(rounded as usize)
    } else {
        None
    }
}

impl Grid1D {
    /// Builds the grid on `[x_min, x_max]`; the extent must hold an integer
    /// number of cells of width `dx`.
    pub fn new(x_min: f64, x_max: f64, dx: f64) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && dx.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "non-finite grid parameters ({x_min}, {x_max}, {dx})"
            )));
        }
        if x_max <= x_min {
            return Err(Error::InvalidGrid(format!(
                "x_max = {x_max} must exceed x_min = {x_min}"
            )));
        }
        if dx <= 0.0 {
            return Err(Error::InvalidGrid(format!("dx = {dx} must be positive")));
        }
        let extent = x_max - x_min;
        let n_cells = nearest_integer(extent / dx).ok_or(Error::NonIntegerCells { extent, dx })?;
        Ok(Self {
            x_min,
            x_max,
            dx,
            n_cells,
        })
    }

    /// Grid with `n_cells` cells covering `[x_min, x_max]` exactly, i.e. with
    /// `dx = (x_max − x_min)/n_cells`.
    pub fn with_cells(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::InvalidGrid("at least one cell is required".into()));
        }
        if !(x_max > x_min) {
            return Err(Error::InvalidGrid(format!(
                "x_max = {x_max} must exceed x_min = {x_min}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            dx: (x_max - x_min) / n_cells as f64,
            n_cells,
        })
    }

    /// Grid on `[x_min, x_max]` whose width is the closest admissible one to
    /// `dx_target`, i.e. `n_cells = round((x_max − x_min)/dx_target)`.
    pub fn snapped(x_min: f64, x_max: f64, dx_target: f64) -> Result<Self> {
        if !(dx_target > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "dx = {dx_target} must be positive"
            )));
        }
        let n = ((x_max - x_min) / dx_target).round().max(1.0) as usize;
        Self::with_cells(x_min, x_max, n)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn extent(&self) -> Interval {
        Interval::new(self.x_min, self.x_max)
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        self.x_min + (j as f64 + 0.5) * self.dx
    }

    pub fn cell(&self, j: usize) -> Interval {
        Interval::new(
            self.x_min + j as f64 * self.dx,
            self.x_min + (j + 1) as f64 * self.dx,
        )
    }

    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_cells).map(move |j| self.midpoint(j))
    }

    /// Index of the cell containing `x`. Points on an interior cell boundary
    /// (up to a relative 1e-9 of `dx`) belong to the cell on the right; the
    /// right end of the grid belongs to the last cell.
    pub fn cell_index(&self, x: f64) -> Option<usize> {
        let tol = INTEGER_SLACK * self.dx;
        if !(x >= self.x_min - tol && x <= self.x_max + tol) {
            return None;
        }
        let s = (x - self.x_min) / self.dx + INTEGER_SLACK;
        let j = s.floor().max(0.0) as usize;
        Some(j.min(self.n_cells - 1))
    }

    /// Cells whose midpoint lies in the closed window.
    pub fn midpoint_range(&self, window: Interval) -> Range<usize> {
        let tol = INTEGER_SLACK * self.dx;
        let first = (0..self.n_cells).find(|&j| self.midpoint(j) >= window.lo - tol);
        let last = (0..self.n_cells)
            .rev()
            .find(|&j| self.midpoint(j) <= window.hi + tol);
        match (first, last) {
            (Some(a), Some(b)) if a <= b => a..b + 1,
            _ => 0..0,
        }
    }

    /// Cells contained in `window`, which must start and end on cell
    /// boundaries (within 1e-9 cells) and lie inside the grid.
    pub fn aligned_range(&self, window: Interval) -> Result<Range<usize>> {
        let misaligned = || Error::MisalignedWindow {
            lo: window.lo,
            hi: window.hi,
            grid: self.to_string(),
        };
        let boundary = |x: f64| -> Option<usize> {
            let s = (x - self.x_min) / self.dx;
            let r = s.round();
            if (s - r).abs() <= INTEGER_SLACK * r.abs().max(1.0) && r >= 0.0 {
                Some(r as usize)
            } else {
                None
            }
        };
        let lo = boundary(window.lo).ok_or_else(misaligned)?;
        let hi = boundary(window.hi).ok_or_else(misaligned)?;
        if hi > self.n_cells || lo > hi {
            return Err(misaligned());
        }
        Ok(lo..hi)
    }

    /// Structural equality up to round-off in the stored reals.
    pub fn matches(&self, other: &Grid1D) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        self.n_cells == other.n_cells
            && close(self.x_min, other.x_min)
            && close(self.x_max, other.x_max)
            && close(self.dx, other.dx)
    }

    pub(crate) fn ensure_matches(&self, other: &Grid1D) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl fmt::Display for Grid1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Grid1D[{}, {}; dx = {}, {} cells]",
            self.x_min, self.x_max, self.dx, self.n_cells
        )
    }
}

/// Piecewise-constant function on a [`Grid1D`], one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    grid: Grid1D,
    values: Vec<f64>,
}

impl CellField {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::InvalidGrid(format!(
                "{} values supplied for {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some((cell, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { cell, value });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid1D, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_cells()],
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Value of the cell containing `x` (see [`Grid1D::cell_index`]).
    pub fn value_at(&self, x: f64) -> Option<f64> {
        self.grid.cell_index(x).map(|j| self.values[j])
    }

    /// `∫ |f|` over the cells whose midpoint lies in `window`.
    pub fn l1_norm_on(&self, window: Interval) -> f64 {
        let dx = self.grid.dx();
        self.values[self.grid.midpoint_range(window)]
            .iter()
            .map(|v| v.abs() * dx)
            .sum()
    }
}

/// Cell averages of `f`, computed with two-point Gauss–Legendre quadrature
/// on every cell (exact for cubic polynomials).
pub fn project_function<F>(f: F, grid: &Grid1D) -> Result<CellField>
where
    F: Fn(f64) -> f64,
{
    let offset = 0.5 / 3f64.sqrt();
    let dx = grid.dx();
    let values = (0..grid.n_cells())
        .map(|j| {
            let m = grid.midpoint(j);
            let avg = 0.5 * (f(m - offset * dx) + f(m + offset * dx));
            if avg.is_finite() {
                Ok(avg)
            } else {
                Err(Error::NonFinite {
                    cell: j,
                    value: avg,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CellField {
        grid: *grid,
        values,
    })
}

/// `Σ |a_j − b_j|·dx` over the cells contained in the cell-aligned `window`.
pub fn l1_distance(a: &CellField, b: &CellField, window: Interval) -> Result<f64> {
    a.grid.ensure_matches(&b.grid)?;
    let range = a.grid.aligned_range(window)?;
    let dx = a.grid.dx();
    Ok(a.values[range.clone()]
        .iter()
        .zip(&b.values[range])
        .map(|(x, y)| (x - y).abs() * dx)
        .sum())
}

pub fn total_variation(f: &CellField) -> f64 {
    total_variation_of(&f.values)
}

pub(crate) fn total_variation_of(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Discrete one-sided Lipschitz seminorm `max_j −(f_{j+1} − f_j)/dx`.
///
/// Positive values measure the steepest downward jump. Single-cell fields
/// have no adjacent pair and report 0.
pub fn lip_minus_discrete(f: &CellField) -> f64 {
    let dx = f.grid.dx();
    f.values
        .windows(2)
        .map(|w| -(w[1] - w[0]) / dx)
        .fold(None, |acc: Option<f64>, s| {
            Some(acc.map_or(s, |a| a.max(s)))
        })
        .unwrap_or(0.0)
}

/// Discrete admissible set for initial data: box bounds, a total-variation
/// budget and a support interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleSpec {
    pub box_lo: f64,
    pub box_hi: f64,
    pub tv_bound: f64,
    pub support: Interval,
}

impl AdmissibleSpec {
    pub fn new(box_lo: f64, box_hi: f64, tv_bound: f64, support: Interval) -> Result<Self> {
        if !(box_lo <= box_hi) {
            return Err(Error::InvalidGrid(format!(
                "box [{box_lo}, {box_hi}] is empty"
            )));
        }
        if !(tv_bound > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "TV bound must be positive, got {tv_bound}"
            )));
        }
        if !(support.lo <= support.hi) {
            return Err(Error::InvalidGrid(format!("support {support} is empty")));
        }
        Ok(Self {
            box_lo,
            box_hi,
            tv_bound,
            support,
        })
    }

    /// Unit box, the given TV budget and the whole grid as support.
    pub fn unit_box_on(grid: &Grid1D, tv_bound: f64) -> Result<Self> {
        Self::new(0.0, 1.0, tv_bound, grid.extent())
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.box_lo, self.box_hi)
    }

    fn check_grid(&self, grid: &Grid1D) -> Result<()> {
        let tol = INTEGER_SLACK * grid.dx();
        if self.support.lo < grid.x_min() - tol || self.support.hi > grid.x_max() + tol {
            return Err(Error::InvalidGrid(format!(
                "support {} is not contained in {grid}",
                self.support
            )));
        }
        Ok(())
    }
}

/// Result of [`project_admissible`]: the projected field and its TV check.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleProjection {
    pub field: CellField,
    pub total_variation: f64,
    pub within_tv_bound: bool,
}

/// Clips to the box and sets cells whose midpoint lies outside the support
/// to the lower bound. The TV budget is reported, not enforced.
pub fn project_admissible(f: &CellField, spec: &AdmissibleSpec) -> Result<AdmissibleProjection> {
    spec.check_grid(&f.grid)?;
    let grid = f.grid;
    let values: Vec<f64> = f
        .values
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            if spec.support.contains(grid.midpoint(j)) {
                spec.clamp(v)
            } else {
                spec.box_lo
            }
        })
        .collect();
    let tv = total_variation_of(&values);
    Ok(AdmissibleProjection {
        field: CellField { grid, values },
        total_variation: tv,
        within_tv_bound: tv <= spec.tv_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Grid1D {
        Grid1D::new(-1.0, 1.0, 0.01).unwrap()
    }

    #[test]
    fn make_grid_cell_counts() {
        assert_eq!(Grid1D::new(-1.0, 1.0, 0.01).unwrap().n_cells(), 200);
        assert_eq!(Grid1D::new(-1.0, 1.0, 0.002).unwrap().n_cells(), 1000);
        match Grid1D::new(-1.0, 1.0, 0.03) {
            Err(Error::NonIntegerCells { extent, dx }) => {
                assert_eq!(extent, 2.0);
                assert_eq!(dx, 0.03);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn make_grid_rejects_degenerate_input() {
        assert!(Grid1D::new(1.0, -1.0, 0.1).is_err());
        assert!(Grid1D::new(-1.0, 1.0, 0.0).is_err());
        assert!(Grid1D::new(-1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn grid_geometry() {
        let g = unit();
        assert!((g.midpoint(0) + 0.995).abs() < 1e-15);
        let c = g.cell(199);
        assert!((c.hi - 1.0).abs() < 1e-12);
        assert!((g.x_max() - g.x_min() - g.n_cells() as f64 * g.dx()).abs() <= 1e-12);
        assert_eq!(g.cell_index(-1.0), Some(0));
        assert_eq!(g.cell_index(1.0), Some(199));
        assert_eq!(g.cell_index(0.0), Some(100));
        assert_eq!(g.cell_index(1.5), None);
    }

    #[test]
    fn snapped_grid_divides_domain() {
        let g = Grid1D::snapped(-1.0, 1.0, 0.015).unwrap();
        assert_eq!(g.n_cells(), 133);
        assert!((g.dx() - 2.0 / 133.0).abs() < 1e-15);
    }

    #[test]
    fn project_constant() {
        let f = project_function(|_| 0.45, &unit()).unwrap();
        assert!(f.values().iter().all(|&v| (v - 0.45).abs() <= 1e-14));
    }

    #[test]
    fn project_symmetric_step() {
        // cell 100 of a grid shifted by half a cell straddles 0 symmetrically
        let g = Grid1D::new(-1.005, 0.995, 0.01).unwrap();
        let f = project_function(|x| if x >= 0.0 { 1.0 } else { 0.0 }, &g).unwrap();
        assert!((g.midpoint(100)).abs() < 1e-12);
        assert_eq!(f.values()[100], 0.5);
        assert_eq!(f.values()[99], 0.0);
        assert_eq!(f.values()[101], 1.0);
    }

    #[test]
    fn project_reports_non_finite() {
        let err = project_function(|x| if x > 0.5 { f64::NAN } else { 0.0 }, &unit()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { cell: 150, .. }));
    }

    #[test]
    fn project_parabola_bump_matches_exact_cell_integrals() {
        let g = Grid1D::new(-1.0, 1.0, 0.002).unwrap();
        let datum = |x: f64| {
            if x.abs() <= 0.5 {
                -x * x + 0.25 + 0.2
            } else {
                0.2
            }
        };
        let f = project_function(datum, &g).unwrap();
        // exact antiderivative of the bump part: 0.25 x − x³/3
        let anti = |x: f64| {
            let x = x.clamp(-0.5, 0.5);
            0.25 * x - x * x * x / 3.0
        };
        for j in 0..g.n_cells() {
            let c = g.cell(j);
            let exact = 0.2 + (anti(c.hi) - anti(c.lo)) / g.dx();
            assert!((f.values()[j] - exact).abs() < 1e-12, "cell {j}");
        }
        assert!((f.max() - 0.45).abs() < 1e-5);
        assert_eq!(f.values()[0], 0.2);
        assert_eq!(f.values()[999], 0.2);
    }

    #[test]
    fn l1_examples() {
        let g = unit();
        let a = project_function(|x| if x >= 0.0 { 1.0 } else { 0.0 }, &g).unwrap();
        let zero = CellField::constant(g, 0.0);
        let w = Interval::new(-1.0, 1.0);
        assert_eq!(l1_distance(&a, &a, w).unwrap(), 0.0);
        let c = CellField::constant(g, 0.3);
        assert!((l1_distance(&zero, &c, w).unwrap() - 0.6).abs() < 1e-12);
        // direct summation: 100 cells of height 1 and width 0.01
        let expected: f64 = (0..100).map(|_| 0.01).sum();
        assert_eq!(l1_distance(&a, &zero, w).unwrap(), expected);
        assert!((expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l1_rejects_mismatch_and_misalignment() {
        let a = CellField::constant(unit(), 0.0);
        let b = CellField::constant(Grid1D::new(-1.0, 1.0, 0.02).unwrap(), 0.0);
        assert!(matches!(
            l1_distance(&a, &b, Interval::new(-1.0, 1.0)),
            Err(Error::GridMismatch { .. })
        ));
        assert!(matches!(
            l1_distance(&a, &a, Interval::new(-0.995, 1.0)),
            Err(Error::MisalignedWindow { .. })
        ));
        assert!(l1_distance(&a, &a, Interval::new(-1.0, 1.5)).is_err());
    }

    #[test]
    fn total_variation_examples() {
        let g = unit();
        assert_eq!(total_variation(&CellField::constant(g, 0.7)), 0.0);
        let step = project_function(|x| if x >= 0.0 { 0.5 } else { 0.0 }, &g).unwrap();
        assert_eq!(total_variation(&step), 0.5);

        let fine = Grid1D::new(-1.0, 1.0, 0.002).unwrap();
        let bump =
            project_function(|x| if x.abs() <= 0.5 { -x * x + 0.45 } else { 0.2 }, &fine).unwrap();
        assert!((total_variation(&bump) - 0.5).abs() <= 2.0 * fine.dx());
    }

    #[test]
    fn lip_minus_examples() {
        let g = unit();
        assert_eq!(lip_minus_discrete(&CellField::constant(g, 0.3)), 0.0);
        let down = project_function(|x| if x >= 0.0 { 0.0 } else { 0.5 }, &g).unwrap();
        assert!((lip_minus_discrete(&down) - 50.0).abs() < 1e-9);
        let inc = CellField::new(g, (0..200).map(|j| j as f64 * 1e-3).collect()).unwrap();
        assert!((lip_minus_discrete(&inc) + 1e-3 / 0.01).abs() < 1e-9);
    }

    #[test]
    fn project_admissible_examples() {
        let g = unit();
        let spec = AdmissibleSpec::unit_box_on(&g, 1.0).unwrap();
        let init = project_function(|x| if x >= 0.0 { 0.45 } else { 0.2 }, &g).unwrap();
        let p = project_admissible(&init, &spec).unwrap();
        assert_eq!(p.field, init);
        assert!((p.total_variation - 0.25).abs() < 1e-15);
        assert!(p.within_tv_bound);

        let over = CellField::constant(g, 1.2);
        let p = project_admissible(&over, &spec).unwrap();
        assert!(p.field.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn project_admissible_support_and_tv_flag() {
        let g = unit();
        let spec = AdmissibleSpec::new(0.0, 1.0, 0.1, Interval::new(-0.5, 0.5)).unwrap();
        let f = CellField::constant(g, 0.4);
        let p = project_admissible(&f, &spec).unwrap();
        assert_eq!(p.field.values()[0], 0.0);
        assert_eq!(p.field.values()[100], 0.4);
        assert!((p.total_variation - 0.8).abs() < 1e-12);
        assert!(!p.within_tv_bound);

        let outside = AdmissibleSpec::new(0.0, 1.0, 1.0, Interval::new(-2.0, 1.0)).unwrap();
        assert!(project_admissible(&f, &outside).is_err());
    }
}
