//! Eulerian–Lagrangian time stepping for local and nonlocal scalar
//! conservation laws `∂_t u + ∂_x (u v(·)) = 0`.
//!
//! Each step tracks cell averages along linearized no-flux curves
//! `x̄_j = x_j + Δt·V_j`. With `h_j = Δx + Δt (V_{j+1} − V_j)` and
//! `F_j = (U_j + U_{j−1})(V_j + V_{j−1}) / h_{j−1}` the update is
//!
//! ```text
//! U'_j = (U_{j−1} + 2U_j + U_{j+1})/4 + Δt/4 · (F_j − F_{j+1})
//! ```
//!
//! where `V_j = v(U_j)` for the local law and `V_j = v((U ∗ η_H)_j)` for the
//! nonlocal one. Boundaries are absorbing: the state is extended by constant
//! ghost cells before every step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::CellField;
use crate::kernel::{convolve_into, extend_into, DiscreteKernel, ExtendedField, KernelSpec};

/// Velocity–density relation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedLaw {
    /// `v(r) = 1 − r`.
    #[default]
    Greenshields,
    /// `v(r) = 1 − r^p` on `[0, 1]`, `p ≥ 1`.
    Power { exponent: f64 },
}

impl SpeedLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SpeedLaw::Greenshields => Ok(()),
            SpeedLaw::Power { exponent } if exponent >= 1.0 && exponent.is_finite() => Ok(()),
            SpeedLaw::Power { exponent } => Err(Error::InvalidSpeed(format!(
                "exponent must be ≥ 1, got {exponent}"
            ))),
        }
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            SpeedLaw::Greenshields => 1.0 - r,
            SpeedLaw::Power { exponent } => 1.0 - r.clamp(0.0, 1.0).powf(exponent),
        }
    }

    /// `sup |v|` on `[0, 1]`.
    pub fn v_max(&self) -> f64 {
        match *self {
            SpeedLaw::Greenshields | SpeedLaw::Power { .. } => 1.0,
        }
    }
}

/// `Δt = cfl_factor · Δx / (8 ‖v‖∞)`; a factor of 1 is the strict bound
/// `|V| ≤ Δx/(8Δt)`.
pub fn compute_dt(dx: f64, speed: &SpeedLaw, cfl_factor: f64) -> Result<f64> {
    if !(cfl_factor > 0.0) {
        return Err(Error::InvalidScheme(format!(
            "cfl_factor must be positive, got {cfl_factor}"
        )));
    }
    let v_max = speed.v_max();
    if !(v_max > 0.0) {
        return Err(Error::InvalidSpeed("v_max = 0".into()));
    }
    Ok(cfl_factor * dx / (8.0 * v_max))
}

/// Discretization parameters of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    dx: f64,
    dt: f64,
    t_final: f64,
    steps: usize,
    kernel: Option<(KernelSpec, DiscreteKernel)>,
    store_every: usize,
}

impl SchemeConfig {
    /// Requires `t_final / dt` to be an integer (within 1e-9).
    pub fn new(dx: f64, dt: f64, t_final: f64) -> Result<Self> {
        Self::check_positive(dx, dt, t_final)?;
        let ratio = t_final / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidScheme(format!(
                "T = {t_final} is not an integer multiple of dt = {dt} (T/dt = {ratio})"
            )));
        }
        Ok(Self {
            dx,
            dt,
            t_final,
            steps: steps as usize,
            kernel: None,
            store_every: 1,
        })
    }

    /// Uses `dt_max` when it divides `t_final`; otherwise takes
    /// `M = ⌈T/dt_max⌉` steps of `dt = T/M`.
    pub fn fitted(dx: f64, dt_max: f64, t_final: f64) -> Result<Self> {
        Self::check_positive(dx, dt_max, t_final)?;
        if let Ok(exact) = Self::new(dx, dt_max, t_final) {
            return Ok(exact);
        }
        let steps = (t_final / dt_max).ceil() as usize;
        Ok(Self {
            dx,
            dt: t_final / steps as f64,
            t_final,
            steps,
            kernel: None,
            store_every: 1,
        })
    }

    fn check_positive(dx: f64, dt: f64, t_final: f64) -> Result<()> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::InvalidScheme(format!("dx = {dx} must be positive")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidScheme(format!("dt = {dt} must be positive")));
        }
        if !(t_final >= 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidScheme(format!(
                "T = {t_final} must be non-negative"
            )));
        }
        Ok(())
    }

    /// Switches to the nonlocal scheme with kernel `η_H`.
    pub fn with_kernel(mut self, spec: KernelSpec, h: f64) -> Result<Self> {
        let k = DiscreteKernel::new(&spec, h, self.dx)?;
        self.kernel = Some((spec, k));
        Ok(self)
    }

    pub fn with_store_every(mut self, store_every: usize) -> Result<Self> {
        if store_every == 0 {
            return Err(Error::InvalidScheme("store_every must be ≥ 1".into()));
        }
        self.store_every = store_every;
        Ok(self)
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn store_every(&self) -> usize {
        self.store_every
    }

    /// Kernel width, `None` for the local scheme.
    pub fn h(&self) -> Option<f64> {
        self.kernel.as_ref().map(|(_, k)| k.h())
    }

    pub fn kernel(&self) -> Option<&DiscreteKernel> {
        self.kernel.as_ref().map(|(_, k)| k)
    }

    pub fn kernel_spec(&self) -> Option<&KernelSpec> {
        self.kernel.as_ref().map(|(s, _)| s)
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Ghost cells `(left, right)`: one on each side for the local scheme,
    /// one on the left and `⌈H/Δx⌉ + 1` on the right for the nonlocal one.
    pub fn ghosts(&self) -> (usize, usize) {
        match self.kernel() {
            None => (1, 1),
            Some(k) => (1, k.n_taps() + 1),
        }
    }

    /// `8 Δt ‖v‖∞ / Δx`; values above 1 exceed the strict CFL bound.
    pub fn cfl_ratio(&self, speed: &SpeedLaw) -> f64 {
        8.0 * self.dt * speed.v_max() / self.dx
    }

    /// Logs a warning when the strict CFL bound is exceeded. Such runs are
    /// still performed; only non-positive `h_j` aborts a step.
    pub fn warn_if_relaxed(&self, speed: &SpeedLaw) {
        let r = self.cfl_ratio(speed);
        if r > 1.0 + 1e-12 {
            log::warn!(
                "dt = {} exceeds the strict CFL bound dx/(8 v_max) = {} by a factor {:.3}",
                self.dt,
                self.dx / (8.0 * speed.v_max()),
                r
            );
        }
    }
}

/// Scratch buffers for one step on `n` cells.
#[derive(Debug, Default)]
pub(crate) struct StepWork {
    conv: Vec<f64>,
    speeds: Vec<f64>,
    widths: Vec<f64>,
    fluxes: Vec<f64>,
}

/// Advances the interior of `ext` one step. `ext` starts one ghost cell to
/// the left of the first interior cell and must extend far enough to the
/// right for the kernel (`n + 1 + weights.len()` entries at least).
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_into(
    ext: &[f64],
    n: usize,
    weights: Option<&[f64]>,
    speed: &SpeedLaw,
    dx: f64,
    dt: f64,
    work: &mut StepWork,
    out: &mut [f64],
) -> Result<()> {
    // speeds on the left ghost, the interior and the first right ghost
    work.speeds.clear();
    match weights {
        None => work
            .speeds
            .extend(ext[..n + 2].iter().map(|&u| speed.eval(u))),
        Some(w) => {
            work.conv.resize(n + 2, 0.0);
            convolve_into(ext, w, &mut work.conv);
            work.speeds.extend(work.conv.iter().map(|&u| speed.eval(u)));
        }
    }
    let v = &work.speeds;
    work.widths.clear();
    for k in 0..=n {
        let h = dx + dt * (v[k + 1] - v[k]);
        if !(h > 0.0) {
            return Err(Error::CflViolation { cell: k, h });
        }
        work.widths.push(h);
    }
    // fluxes[k - 1] holds F_k for k = 1 … n + 1
    work.fluxes.clear();
    for k in 1..=n + 1 {
        work.fluxes
            .push((ext[k] + ext[k - 1]) * (v[k] + v[k - 1]) / work.widths[k - 1]);
    }
    let f = &work.fluxes;
    for (j, o) in out.iter_mut().enumerate().take(n) {
        let k = j + 1;
        *o = (ext[k - 1] + 2.0 * ext[k] + ext[k + 1]) / 4.0 + dt / 4.0 * (f[k - 1] - f[k]);
    }
    Ok(())
}

fn check_extension(u: &ExtendedField, right_needed: usize) -> Result<()> {
    if u.n_left < 1 {
        return Err(Error::InsufficientGhosts {
            required: 1,
            available: u.n_left,
        });
    }
    if u.n_right < right_needed {
        return Err(Error::InsufficientGhosts {
            required: right_needed,
            available: u.n_right,
        });
    }
    Ok(())
}

/// One step of the local scheme on a field extended by at least one ghost
/// cell per side.
pub fn local_step(u: &ExtendedField, speed: &SpeedLaw, dx: f64, dt: f64) -> Result<CellField> {
    check_extension(u, 1)?;
    let n = u.grid.n_cells();
    let mut out = vec![0.0; n];
    step_into(
        &u.values[u.n_left - 1..],
        n,
        None,
        speed,
        dx,
        dt,
        &mut StepWork::default(),
        &mut out,
    )?;
    CellField::new(u.grid, out)
}

/// One step of the nonlocal scheme; the field needs one ghost cell on the
/// left and `N_H` on the right.
pub fn nonlocal_step(
    u: &ExtendedField,
    k: &DiscreteKernel,
    speed: &SpeedLaw,
    dx: f64,
    dt: f64,
) -> Result<CellField> {
    check_extension(u, k.n_taps())?;
    let n = u.grid.n_cells();
    let mut out = vec![0.0; n];
    step_into(
        &u.values[u.n_left - 1..],
        n,
        Some(k.weights()),
        speed,
        dx,
        dt,
        &mut StepWork::default(),
        &mut out,
    )?;
    CellField::new(u.grid, out)
}

/// Range of values visited during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunBounds {
    pub min: f64,
    pub max: f64,
}

/// Steps the scheme from `u_o` to `T`, handing every state (including the
/// initial one) to `observe(step, values)`.
pub fn run_observed<F>(
    u_o: &CellField,
    speed: &SpeedLaw,
    config: &SchemeConfig,
    mut observe: F,
) -> Result<RunBounds>
where
    F: FnMut(usize, &[f64]) -> Result<()>,
{
    if !config.dx.eq(&u_o.grid().dx()) && (config.dx - u_o.grid().dx()).abs() > 1e-12 * config.dx {
        return Err(Error::InvalidScheme(format!(
            "scheme dx = {} differs from the datum grid {}",
            config.dx,
            u_o.grid()
        )));
    }
    let n = u_o.len();
    let (n_left, n_right) = config.ghosts();
    let weights = config.kernel().map(|k| k.weights());
    let mut bounds = RunBounds {
        min: u_o.min(),
        max: u_o.max(),
    };
    let mut current = u_o.values().to_vec();
    let mut next = vec![0.0; n];
    let mut ext = Vec::with_capacity(n + n_left + n_right);
    let mut work = StepWork::default();
    observe(0, &current)?;
    for m in 1..=config.steps {
        extend_into(&current, n_left, n_right, &mut ext);
        step_into(
            &ext[n_left - 1..],
            n,
            weights,
            speed,
            config.dx,
            config.dt,
            &mut work,
            &mut next,
        )
        .map_err(|e| Error::Step {
            step: m,
            source: Box::new(e),
        })?;
        std::mem::swap(&mut current, &mut next);
        for &u in &current {
            bounds.min = bounds.min.min(u);
            bounds.max = bounds.max.max(u);
        }
        observe(m, &current)?;
    }
    Ok(bounds)
}

/// Stored states of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub config: SchemeConfig,
    pub times: Vec<f64>,
    pub steps: Vec<usize>,
    pub states: Vec<CellField>,
    pub bounds: RunBounds,
}

impl Trajectory {
    pub fn initial(&self) -> &CellField {
        &self.states[0]
    }

    pub fn last(&self) -> &CellField {
        self.states
            .last()
            .expect("trajectory holds at least one state")
    }

    pub fn is_complete(&self) -> bool {
        self.steps.len() == self.config.steps + 1
    }
}

/// Runs the scheme and keeps every `store_every`-th state plus `t = 0` and
/// `t = T`.
pub fn run(u_o: &CellField, speed: &SpeedLaw, config: &SchemeConfig) -> Result<Trajectory> {
    let grid = *u_o.grid();
    let every = config.store_every;
    let last = config.steps;
    let mut times = Vec::new();
    let mut steps = Vec::new();
    let mut states = Vec::new();
    let bounds = run_observed(u_o, speed, config, |m, values| {
        if m % every == 0 || m == last {
            times.push(config.time(m));
            steps.push(m);
            states.push(CellField::new(grid, values.to_vec())?);
        }
        Ok(())
    })?;
    Ok(Trajectory {
        config: config.clone(),
        times,
        steps,
        states,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{project_function, Grid1D};
    use crate::kernel::extend_boundary;

    #[test]
    fn dt_examples() {
        let g = SpeedLaw::Greenshields;
        assert_eq!(compute_dt(0.1, &g, 1.0).unwrap(), 0.0125);
        assert_eq!(compute_dt(0.01, &g, 4.0).unwrap(), 0.005);
        assert_eq!(
            compute_dt(0.02, &g, 1.0).unwrap(),
            2.0 * compute_dt(0.01, &g, 1.0).unwrap()
        );
        assert!(compute_dt(0.01, &g, 0.0).is_err());
    }

    #[test]
    fn ghost_counts() {
        let c = SchemeConfig::new(0.01, 0.005, 0.25).unwrap();
        assert_eq!(c.ghosts(), (1, 1));
        assert_eq!(c.steps(), 50);
        let c = c.with_kernel(KernelSpec::default(), 0.5).unwrap();
        assert_eq!(c.ghosts(), (1, 51));
    }

    #[test]
    fn strict_and_fitted_step_counts() {
        assert!(SchemeConfig::new(0.08, 0.04, 0.25).is_err());
        let c = SchemeConfig::fitted(0.08, 0.04, 0.25).unwrap();
        assert_eq!(c.steps(), 7);
        assert!(c.dt() <= 0.04);
        assert!((c.dt() * 7.0 - 0.25).abs() < 1e-15);
        let exact = SchemeConfig::fitted(0.01, 0.005, 0.25).unwrap();
        assert_eq!(exact.dt(), 0.005);
        assert_eq!(SchemeConfig::new(0.01, 0.005, 0.0).unwrap().steps(), 0);
    }

    fn four_cells() -> ExtendedField {
        let g = Grid1D::new(0.0, 0.2, 0.1).unwrap();
        ExtendedField {
            grid: g,
            n_left: 1,
            n_right: 1,
            values: vec![0.2, 0.2, 0.7, 0.7],
        }
    }

    #[test]
    fn local_step_hand_example() {
        // V = [0.8, 0.8, 0.3, 0.3], h = [0.1, 0.09375, 0.1], F = [6.4, 10.56, 8.4]
        let out = local_step(&four_cells(), &SpeedLaw::Greenshields, 0.1, 0.0125).unwrap();
        assert!((out.values()[0] - 0.312).abs() < 1e-14);
        assert!((out.values()[1] - 0.58175).abs() < 1e-14);
    }

    #[test]
    fn nonlocal_step_hand_example() {
        let mut u = four_cells();
        u.values.push(0.7);
        u.n_right = 2;
        let k = DiscreteKernel::new(&KernelSpec::default(), 0.2, 0.1).unwrap();
        let out = nonlocal_step(&u, &k, &SpeedLaw::Greenshields, 0.1, 0.0125).unwrap();
        // conv = [0.2, 11/30, 0.7, 0.7], V = 1 − conv
        let v = [0.8, 19.0 / 30.0, 0.3, 0.3];
        let h = [
            0.1 + 0.0125 * (v[1] - v[0]),
            0.1 + 0.0125 * (v[2] - v[1]),
            0.1 + 0.0125 * (v[3] - v[2]),
        ];
        let uu = [0.2, 0.2, 0.7, 0.7];
        let flux = |k: usize| (uu[k] + uu[k - 1]) * (v[k] + v[k - 1]) / h[k - 1];
        let first = (0.2 + 0.4 + 0.7) / 4.0 + 0.0125 / 4.0 * (flux(1) - flux(2));
        let second = (0.2 + 1.4 + 0.7) / 4.0 + 0.0125 / 4.0 * (flux(2) - flux(3));
        assert!((out.values()[0] - first).abs() < 1e-14);
        assert!((out.values()[1] - second).abs() < 1e-14);
        // exact rational evaluation: 68299/216200 and 0.5761413…
        assert!((out.values()[0] - 68299.0 / 216200.0).abs() < 1e-14);
        assert!((out.values()[1] - 0.576_141_304_347_826_1).abs() < 1e-14);
    }

    #[test]
    fn constant_states_are_fixed_points() {
        let g = Grid1D::new(0.0, 1.0, 0.1).unwrap();
        let c = CellField::constant(g, 0.37);
        let s = local_step(
            &extend_boundary(&c, 1, 1),
            &SpeedLaw::Greenshields,
            0.1,
            0.05,
        )
        .unwrap();
        assert!(s.values().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        let k = DiscreteKernel::new(&KernelSpec::default(), 0.35, 0.1).unwrap();
        let s = nonlocal_step(
            &extend_boundary(&c, 1, 5),
            &k,
            &SpeedLaw::Greenshields,
            0.1,
            0.05,
        )
        .unwrap();
        assert!(s.values().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn narrow_kernel_step_equals_local_step() {
        let g = Grid1D::new(0.0, 0.6, 0.1).unwrap();
        let f = CellField::new(g, vec![0.1, 0.8, 0.3, 0.9, 0.0, 0.5]).unwrap();
        let local = local_step(
            &extend_boundary(&f, 1, 1),
            &SpeedLaw::Greenshields,
            0.1,
            0.05,
        )
        .unwrap();
        let k = DiscreteKernel::new(&KernelSpec::default(), 0.05, 0.1).unwrap();
        let nonlocal = nonlocal_step(
            &extend_boundary(&f, 1, 2),
            &k,
            &SpeedLaw::Greenshields,
            0.1,
            0.05,
        )
        .unwrap();
        assert_eq!(local, nonlocal);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let e = four_cells();
        match local_step(&e, &SpeedLaw::Greenshields, 0.1, 0.5) {
            Err(Error::CflViolation { cell: 1, h }) => assert!(h <= 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_ghosts_rejected() {
        let mut e = four_cells();
        e.n_right = 0;
        e.values.pop();
        e.grid = Grid1D::new(0.0, 0.3, 0.1).unwrap();
        assert!(matches!(
            local_step(&e, &SpeedLaw::Greenshields, 0.1, 0.01),
            Err(Error::InsufficientGhosts { .. })
        ));
    }

    #[test]
    fn run_zero_horizon_keeps_datum() {
        let g = Grid1D::new(-1.0, 1.0, 0.1).unwrap();
        let u = project_function(|x| 0.3 + 0.1 * x, &g).unwrap();
        let cfg = SchemeConfig::new(0.1, 0.05, 0.0).unwrap();
        let t = run(&u, &SpeedLaw::Greenshields, &cfg).unwrap();
        assert_eq!(t.states.len(), 1);
        assert_eq!(t.states[0], u);
        assert_eq!(t.times, vec![0.0]);
    }

    #[test]
    fn run_stores_requested_states() {
        let g = Grid1D::new(-1.0, 1.0, 0.1).unwrap();
        let u = CellField::constant(g, 0.6);
        let cfg = SchemeConfig::new(0.1, 0.05, 0.5)
            .unwrap()
            .with_store_every(3)
            .unwrap();
        let t = run(&u, &SpeedLaw::Greenshields, &cfg).unwrap();
        assert_eq!(t.steps, vec![0, 3, 6, 9, 10]);
        assert!(t.times.windows(2).all(|w| w[1] > w[0]));
        assert!(t.states.iter().all(|s| s == &u));
        assert!(!t.is_complete());
    }

    #[test]
    fn step_errors_carry_the_step_index() {
        let g = Grid1D::new(0.0, 0.4, 0.1).unwrap();
        let u = CellField::new(g, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let cfg = SchemeConfig::new(0.1, 0.2, 0.4).unwrap();
        match run(&u, &SpeedLaw::Greenshields, &cfg) {
            Err(Error::Step { step: 1, source }) => {
                assert!(matches!(*source, Error::CflViolation { .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
