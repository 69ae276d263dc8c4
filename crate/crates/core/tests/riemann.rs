//! The Riemann problem with a single admissible shock: `0` on the left,
//! `1/2` on the right, shock speed `(f(1/2) − f(0))/(1/2) = 1/2` for
//! `f(u) = u(1 − u)`.

use nlcontrol::grid::project_function;
use nlcontrol::scheme::run;
use nlcontrol::{CellField, Grid1D, SchemeConfig, SpeedLaw};

const RIGHT: f64 = 0.5;
const SPEED: f64 = 0.5;

fn solve(dx: f64, t: f64) -> CellField {
    let grid = Grid1D::new(-1.0, 1.0, dx).unwrap();
    let u = project_function(|x| if x < 0.0 { 0.0 } else { RIGHT }, &grid).unwrap();
    let cfg = SchemeConfig::fitted(dx, dx / 2.0, t).unwrap();
    run(&u, &SpeedLaw::Greenshields, &cfg)
        .unwrap()
        .last()
        .clone()
}

/// `∫|U − u(t)|` with the exact solution integrated cell by cell.
fn exact_l1_error(f: &CellField, t: f64) -> f64 {
    let shock = SPEED * t;
    let g = f.grid();
    (0..g.n_cells())
        .map(|j| {
            let c = g.cell(j);
            let left = (shock.clamp(c.lo, c.hi) - c.lo).max(0.0);
            let right = g.dx() - left;
            let u = f.values()[j];
            u.abs() * left + (u - RIGHT).abs() * right
        })
        .sum()
}

/// First crossing of `level`, interpolated linearly between midpoints.
fn crossing(f: &CellField, level: f64) -> f64 {
    let g = f.grid();
    let v = f.values();
    for j in 0..v.len() - 1 {
        if v[j] < level && v[j + 1] >= level {
            let s = (level - v[j]) / (v[j + 1] - v[j]);
            return g.midpoint(j) + s * g.dx();
        }
    }
    panic!("profile never crosses {level}");
}

#[test]
fn shock_travels_at_half_speed() {
    for dx in [0.02, 0.01, 0.005] {
        let x = crossing(&solve(dx, 0.5), 0.25);
        assert!((x - 0.25).abs() <= 3.0 * dx, "dx = {dx}: crossing at {x}");
    }
}

#[test]
fn shock_error_converges_at_first_order() {
    let dxs = [0.04, 0.02, 0.01, 0.005];
    let errors: Vec<f64> = dxs
        .iter()
        .map(|&dx| exact_l1_error(&solve(dx, 0.25), 0.25))
        .collect();
    for w in errors.windows(2) {
        assert!(w[1] < w[0], "{errors:?}");
        let order = (w[0] / w[1]).log2();
        assert!(order >= 0.6, "{errors:?}");
    }
}
