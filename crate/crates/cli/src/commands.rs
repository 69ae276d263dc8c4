//! The three commands. Each loads and resolves its configuration, builds
//! every library object up front (so configuration problems surface before
//! any computation or file creation), runs, and then writes its artifacts
//! and manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::info;
use nlcontrol::grid::{project_admissible, project_function, total_variation};
use nlcontrol::objectives::{
    CompiledObjective, ObjectiveTerm, Provenance, ReferenceSolution, TermKind,
};
use nlcontrol::optimize::{minimize, OptimizationReport};
use nlcontrol::scheme::{run, RunBounds};
use nlcontrol::studies::{
    self, double_limit_study, gamma_minimizers_study, grid_convergence_study, initial_guess,
    nl2l_solutions_study, reference_datum, StudyCell, StudyKind, StudyRow, StudySettings,
};
use nlcontrol::{
    AdmissibleSpec, CellField, Error, Grid1D, Interval, KernelSpec, ObjectiveSpec, OptimizerConfig,
    SchemeConfig, Trajectory,
};
use serde_json::json;

use crate::config::{Config, Datum, ReferenceKind, ReferenceSource, StudyBlock, Term};
use crate::output::{clear_stale, sci, write_atomic, Artifacts, RunManifest, Table, MANIFEST_NAME};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Optimize,
    Study,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Optimize => "optimize",
            Command::Study => "study",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Thread count; more than one enables parallel gradient evaluation.
    pub parallel: Option<usize>,
    pub store_every: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest_path: PathBuf,
    pub manifest: RunManifest,
    pub exit_code: i32,
}

/// What a command produced before persistence.
struct Product {
    artifacts: Artifacts,
    summary: serde_json::Value,
    status: &'static str,
    exit_code: i32,
}

pub fn execute(command: Command, opts: &Options) -> Result<Outcome, CliError> {
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let mut config = Config::load(&opts.config)?;
    if let Some(k) = opts.store_every {
        config.scheme.store_every = k;
    }
    if let Some(n) = opts.parallel {
        if n == 0 {
            return Err(CliError::Config("--parallel must be at least 1".into()));
        }
        config.optimizer.parallel = n > 1;
    }
    config.resolve(command.as_str())?;
    let product = match command {
        Command::Solve => solve(&config)?,
        Command::Optimize => optimize(&config)?,
        Command::Study => study(&config)?,
    };

    fs::create_dir_all(&opts.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", opts.out.display())))?;
    let names = product.artifacts.names();
    clear_stale(&opts.out, &names)?;
    product.artifacts.write_all(&opts.out)?;
    let manifest = RunManifest {
        run_id: uuid::Uuid::new_v4().to_string(),
        command: command.as_str().into(),
        config_path: opts.config.display().to_string(),
        config_echo: serde_json::to_value(&config).expect("config serializes"),
        started: started.to_rfc3339(),
        finished: chrono::Utc::now().to_rfc3339(),
        wall_time_seconds: clock.elapsed().as_secs_f64(),
        artifacts: names,
        library_version: nlcontrol::VERSION.into(),
        status: product.status.into(),
        summary: product.summary,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let manifest_path = write_atomic(&opts.out, MANIFEST_NAME, text.as_bytes())?;
    info!("wrote {}", manifest_path.display());
    Ok(Outcome {
        manifest_path,
        manifest,
        exit_code: product.exit_code,
    })
}

fn cfg_err(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

fn run_err(e: Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn interval(b: [f64; 2]) -> Interval {
    Interval::new(b[0], b[1])
}

fn grid_of(config: &Config) -> Result<Grid1D, CliError> {
    let [lo, hi] = config.scheme.domain;
    Grid1D::new(lo, hi, config.scheme.dx).map_err(cfg_err)
}

fn kernel_of(config: &Config) -> Result<KernelSpec, CliError> {
    KernelSpec::new(config.kernel.shape).map_err(cfg_err)
}

fn scheme_of(config: &Config) -> Result<SchemeConfig, CliError> {
    let s = &config.scheme;
    let dt = s.dt.expect("resolved");
    let mut scheme = SchemeConfig::new(s.dx, dt, s.t_final)
        .and_then(|c| c.with_store_every(s.store_every))
        .map_err(cfg_err)?;
    if let Some(h) = s.h {
        scheme = scheme.with_kernel(kernel_of(config)?, h).map_err(cfg_err)?;
    }
    Ok(scheme)
}

fn datum_on(datum: &Datum, grid: &Grid1D) -> Result<CellField, CliError> {
    let field = match *datum {
        Datum::ReferenceBump => project_function(reference_datum, grid),
        Datum::InitialGuess => project_function(initial_guess, grid),
        Datum::Riemann { left, right, at } => {
            project_function(|x| if x < at { left } else { right }, grid)
        }
        Datum::Constant { value } => CellField::new(*grid, vec![value; grid.n_cells()]),
        Datum::Cells { ref values } => CellField::new(*grid, values.clone()),
    };
    field.map_err(cfg_err)
}

fn reference_of(config: &Config) -> Result<Arc<ReferenceSolution>, CliError> {
    let source = config.objective.reference.as_ref().expect("resolved");
    let reference = match source {
        ReferenceSource::Builtin { kind, h } => {
            let kind = match kind {
                ReferenceKind::Local => studies::ReferenceKind::Local,
                ReferenceKind::Nonlocal => studies::ReferenceKind::Nonlocal {
                    h: h.expect("resolved"),
                },
            };
            info!("computing builtin reference {kind:?}");
            studies::make_reference(kind, kernel_of(config)?, config.speed).map_err(cfg_err)?
        }
        ReferenceSource::Run { manifest, run_id } => {
            load_run_reference(manifest, run_id.as_deref())?
        }
    };
    Ok(Arc::new(reference))
}

/// Rebuilds the trajectory written by an earlier `solve` run. The states
/// carry the six significant digits of the CSV.
pub fn load_run_reference(
    manifest_path: &Path,
    run_id: Option<&str>,
) -> Result<ReferenceSolution, CliError> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", manifest_path.display()));
    let manifest = RunManifest::load(manifest_path)?;
    if let Some(id) = run_id {
        if id != manifest.run_id {
            return Err(bad(format!(
                "run_id {} does not match {id}",
                manifest.run_id
            )));
        }
    }
    if manifest.command != "solve" {
        return Err(bad(format!("run is a {}, not a solve", manifest.command)));
    }
    let config: Config = serde_json::from_value(manifest.config_echo.clone())
        .map_err(|e| bad(format!("config echo unreadable: {e}")))?;
    if config.scheme.store_every != 1 {
        return Err(bad("a reference must be stored at every step".into()));
    }
    if !manifest.artifacts.iter().any(|a| a == TRAJECTORY_NAME) {
        return Err(bad(format!("no {TRAJECTORY_NAME} among the artifacts")));
    }
    let grid = grid_of(&config)?;
    let scheme = scheme_of(&config)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let csv_path = dir.join(TRAJECTORY_NAME);
    let mut reader = csv::Reader::from_path(&csv_path)
        .map_err(|e| bad(format!("{}: {e}", csv_path.display())))?;
    let n = grid.n_cells();
    let mut values = Vec::with_capacity(n * (scheme.steps() + 1));
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(format!("{}: {e}", csv_path.display())))?;
        let field = |k: usize| -> Result<f64, CliError> {
            record
                .get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("{}: bad row {}", csv_path.display(), i + 2)))
        };
        let (t, x, u) = (field(0)?, field(1)?, field(2)?);
        let (m, j) = (i / n, i % n);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3);
        if !close(t, scheme.time(m)) || !close(x, grid.midpoint(j)) {
            return Err(bad(format!(
                "{}: row {} is not on the run's mesh",
                csv_path.display(),
                i + 2
            )));
        }
        values.push(u);
    }
    if values.len() != n * (scheme.steps() + 1) {
        return Err(bad(format!(
            "{} holds {} values, expected {}",
            csv_path.display(),
            values.len(),
            n * (scheme.steps() + 1)
        )));
    }
    let states = values
        .chunks(n)
        .map(|c| CellField::new(grid, c.to_vec()))
        .collect::<nlcontrol::Result<Vec<_>>>()
        .map_err(cfg_err)?;
    let bounds = RunBounds {
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let provenance = match scheme.h() {
        Some(h) => Provenance::Nonlocal { h },
        None => Provenance::Local,
    };
    let trajectory = Trajectory {
        times: (0..=scheme.steps()).map(|m| scheme.time(m)).collect(),
        steps: (0..=scheme.steps()).collect(),
        config: scheme,
        states,
        bounds,
    };
    ReferenceSolution::new(trajectory, provenance).map_err(cfg_err)
}

pub const TRAJECTORY_NAME: &str = "trajectory.csv";

fn solve(config: &Config) -> Result<Product, CliError> {
    let grid = grid_of(config)?;
    let scheme = scheme_of(config)?;
    let datum = datum_on(config.initial.as_ref().expect("resolved"), &grid)?;
    scheme.warn_if_relaxed(&config.speed);
    info!(
        "solving {} steps of dt = {} on {} cells",
        scheme.steps(),
        scheme.dt(),
        grid.n_cells()
    );
    let traj = run(&datum, &config.speed, &scheme).map_err(run_err)?;
    let mut table = Table::new(&["t", "x", "u"]);
    for (t, state) in traj.times.iter().zip(&traj.states) {
        for (x, u) in grid.midpoints().zip(state.values()) {
            table.push(vec![sci(*t), sci(x), sci(*u)]);
        }
    }
    let mut artifacts = Artifacts::default();
    artifacts.add_table(TRAJECTORY_NAME, &table);
    Ok(Product {
        artifacts,
        summary: json!({
            "steps": scheme.steps(),
            "stored_states": traj.states.len(),
            "dt": scheme.dt(),
            "cfl_ratio": scheme.cfl_ratio(&config.speed),
            "min": traj.bounds.min,
            "max": traj.bounds.max,
        }),
        status: "ok",
        exit_code: 0,
    })
}

fn objective_spec(config: &Config, reference: &Arc<ReferenceSolution>) -> ObjectiveSpec {
    let terms = config.objective.terms.as_ref().expect("resolved");
    ObjectiveSpec {
        terms: terms
            .iter()
            .map(|t| match *t {
                Term::DistributedTracking { weight, window } => ObjectiveTerm {
                    kind: TermKind::DistributedTracking {
                        reference: reference.clone(),
                    },
                    weight,
                    window: interval(window.expect("resolved")),
                },
                Term::FinalTimeTracking { p, weight, window } => ObjectiveTerm {
                    kind: TermKind::FinalTimeTracking {
                        p,
                        reference: reference.clone(),
                    },
                    weight,
                    window: interval(window.expect("resolved")),
                },
                Term::BvRegularization { weight } => ObjectiveTerm {
                    kind: TermKind::BvRegularization,
                    weight,
                    window: interval(config.scheme.domain),
                },
            })
            .collect(),
    }
}

fn admissible_of(config: &Config) -> Result<AdmissibleSpec, CliError> {
    let a = &config.admissible;
    AdmissibleSpec::new(
        a.bounds[0],
        a.bounds[1],
        a.tv_bound,
        interval(a.support.expect("resolved")),
    )
    .map_err(cfg_err)
}

fn optimizer_of(config: &Config) -> Result<OptimizerConfig, CliError> {
    let o = &config.optimizer;
    let cfg = OptimizerConfig {
        max_iterations: o.max_iterations,
        max_evaluations: o.max_evaluations,
        step_tolerance: o.step_tolerance.expect("resolved"),
        optimality_tolerance: o.optimality_tolerance.expect("resolved"),
        fd_step: o.fd_step,
        armijo: o.armijo,
        step_rule: o.step_rule,
        parallel: o.parallel,
    };
    cfg.validate().map_err(cfg_err)?;
    Ok(cfg)
}

fn report_tables(report: &OptimizationReport) -> (Table, Table) {
    let mut minimizer = Table::new(&["x", "u"]);
    let grid = report.minimizer.grid();
    for (x, u) in grid.midpoints().zip(report.minimizer.values()) {
        minimizer.push(vec![sci(x), sci(*u)]);
    }
    let mut history = Table::new(&["iter", "value", "optimality", "step"]);
    for r in &report.history {
        history.push(vec![
            r.iteration.to_string(),
            sci(r.value),
            sci(r.optimality),
            sci(r.step),
        ]);
    }
    (minimizer, history)
}

fn report_summary(report: &OptimizationReport) -> serde_json::Value {
    json!({
        "initial_value": report.history.first().map(|r| r.value),
        "objective_value": report.objective_value,
        "iterations": report.iterations,
        "evaluations": report.evaluations,
        "first_order_optimality": report.first_order_optimality,
        "termination": report.termination.as_str(),
        "total_variation": report.total_variation,
        "within_tv_bound": report.within_tv_bound,
    })
}

fn optimize(config: &Config) -> Result<Product, CliError> {
    let grid = grid_of(config)?;
    let scheme = scheme_of(config)?.with_store_every(1).map_err(cfg_err)?;
    let admissible = admissible_of(config)?;
    let optimizer = optimizer_of(config)?;
    let raw = datum_on(config.initial.as_ref().expect("resolved"), &grid)?;
    let start = project_admissible(&raw, &admissible)
        .map_err(cfg_err)?
        .field;
    let reference = reference_of(config)?;
    let objective = CompiledObjective::new(
        &objective_spec(config, &reference),
        grid,
        scheme.clone(),
        config.speed,
    )
    .map_err(cfg_err)?;
    scheme.warn_if_relaxed(&config.speed);
    let initial = objective.evaluate(&start).map_err(run_err)?;
    info!("starting objective {initial:e} on {} cells", grid.n_cells());
    let (report, status, exit_code, error) =
        match minimize(&objective, &start, &admissible, &optimizer) {
            Ok(report) => (report, "ok", 0, None),
            Err(Error::Aborted { report, source }) => {
                log::error!("optimization aborted: {source}");
                (*report, "aborted", 2, Some(source.to_string()))
            }
            Err(e) => return Err(run_err(e)),
        };
    info!(
        "{} after {} iterations: value {:e}",
        report.termination.as_str(),
        report.iterations,
        report.objective_value
    );
    let (minimizer, history) = report_tables(&report);
    let mut artifacts = Artifacts::default();
    artifacts.add_table("minimizer.csv", &minimizer);
    artifacts.add_table("history.csv", &history);
    let mut summary = report_summary(&report);
    if let Some(e) = error {
        summary["error"] = json!(e);
    }
    Ok(Product {
        artifacts,
        summary,
        status,
        exit_code,
    })
}

fn study_settings(config: &Config, study: &StudyBlock) -> Result<StudySettings, CliError> {
    let o = &config.optimizer;
    let a = &config.admissible;
    let settings = StudySettings {
        kernel: kernel_of(config)?,
        speed: config.speed,
        box_lo: a.bounds[0],
        box_hi: a.bounds[1],
        tv_bound: a.tv_bound,
        support: interval(a.support.expect("resolved")),
        step_rule: o.step_rule,
        armijo: o.armijo,
        fd_step: o.fd_step,
        max_iterations: o.max_iterations,
        max_evaluations: o.max_evaluations,
        step_tolerance: o.step_tolerance,
        optimality_tolerance: o.optimality_tolerance,
        parallel_cells: study.parallel_cells,
        parallel_gradient: o.parallel,
    };
    // Validate what can be validated before the sweep starts.
    settings.optimizer(0.01).validate().map_err(cfg_err)?;
    AdmissibleSpec::new(
        settings.box_lo,
        settings.box_hi,
        settings.tv_bound,
        settings.support,
    )
    .map_err(cfg_err)?;
    Ok(settings)
}

const ROW_HEADER: [&str; 11] = [
    "dx",
    "H",
    "l1_relative_error",
    "objective_value",
    "iterations",
    "first_order_optimality",
    "evaluations",
    "termination",
    "total_variation",
    "within_tv_bound",
    "status",
];

fn opt_sci(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

fn row_record(row: &StudyRow) -> Vec<String> {
    let status = match &row.status {
        studies::RowStatus::Ok => "ok".to_string(),
        studies::RowStatus::Failed(msg) => format!("failed: {msg}"),
    };
    vec![
        sci(row.dx),
        opt_sci(row.h),
        sci(row.l1_relative_error),
        sci(row.objective_value),
        row.iterations.to_string(),
        sci(row.first_order_optimality),
        row.evaluations.to_string(),
        row.termination
            .map(|t| t.as_str())
            .unwrap_or("")
            .to_string(),
        sci(row.total_variation),
        row.within_tv_bound.to_string(),
        status,
    ]
}

fn rows_table<'a>(cells: impl IntoIterator<Item = &'a StudyCell>) -> Table {
    let mut table = Table::new(&ROW_HEADER);
    for c in cells {
        table.push(row_record(&c.row));
    }
    table
}

/// Recovered controls next to what their error is measured against.
fn minimizers_table<'a>(
    cells: impl IntoIterator<Item = &'a StudyCell>,
    baseline: impl Fn(&StudyCell) -> Option<CellField>,
) -> Table {
    let mut table = Table::new(&["dx", "H", "x", "u", "baseline"]);
    for c in cells {
        let (Some(report), Some(base)) = (&c.report, baseline(c)) else {
            continue;
        };
        let grid = report.minimizer.grid();
        for ((x, u), b) in grid
            .midpoints()
            .zip(report.minimizer.values())
            .zip(base.values())
        {
            table.push(vec![
                sci(grid.dx()),
                opt_sci(c.row.h),
                sci(x),
                sci(*u),
                sci(*b),
            ]);
        }
    }
    table
}

fn target_on(c: &StudyCell) -> Option<CellField> {
    let grid = c.report.as_ref()?.minimizer.grid();
    project_function(reference_datum, grid).ok()
}

fn study(config: &Config) -> Result<Product, CliError> {
    let block = config.study.as_ref().expect("resolved");
    let settings = study_settings(config, block)?;
    let kind = block.kind;
    let mut artifacts = Artifacts::default();
    let mut summary = json!({ "kind": kind });
    let cells: Vec<StudyCell>;

    if kind == StudyKind::Nl2lSolutions {
        let dx = block.dx.expect("resolved");
        let grid = Grid1D::snapped(studies::DOMAIN.lo, studies::DOMAIN.hi, dx).map_err(cfg_err)?;
        let datum = datum_on(config.initial.as_ref().expect("resolved"), &grid)?;
        let h_list = block.h_list.as_ref().expect("resolved");
        let curve = nl2l_solutions_study(&datum, h_list, &settings).map_err(run_err)?;
        let mut table = Table::new(&["H", "dx", "sup_l1_error"]);
        for (h, e) in &curve {
            table.push(vec![sci(*h), sci(grid.dx()), sci(*e)]);
        }
        artifacts.add_table("fig_nl2l_solutions.csv", &table);
        summary["datum_total_variation"] = json!(total_variation(&datum));
        return Ok(Product {
            artifacts,
            summary,
            status: "ok",
            exit_code: 0,
        });
    }

    let reference = reference_of(config)?;
    match kind {
        StudyKind::GridConvergenceLocal | StudyKind::GridConvergenceNonlocal => {
            let h =
                (kind == StudyKind::GridConvergenceNonlocal).then(|| block.h.expect("resolved"));
            let dx_list = block.dx_list.as_ref().expect("resolved");
            cells = grid_convergence_study(dx_list, h, reference, &settings).map_err(cfg_err)?;
            let name = if h.is_some() {
                "grid_convergence_nonlocal"
            } else {
                "grid_convergence_local"
            };
            let mut fig = Table::new(&["dx", "l1_relative_error", "objective_value"]);
            for c in &cells {
                fig.push(vec![
                    sci(c.row.dx),
                    sci(c.row.l1_relative_error),
                    sci(c.row.objective_value),
                ]);
            }
            artifacts.add_table(format!("study_{name}.csv"), &rows_table(&cells));
            artifacts.add_table(format!("fig_{name}.csv"), &fig);
            artifacts.add_table("minimizers.csv", &minimizers_table(&cells, target_on));
        }
        StudyKind::GammaMinimizers => {
            let dx = block.dx.expect("resolved");
            let h_list = block.h_list.as_ref().expect("resolved");
            let gamma =
                gamma_minimizers_study(dx, h_list, reference, &settings).map_err(run_err)?;
            let mut fig = Table::new(&["H", "relative_error"]);
            for (h, e) in gamma.curve() {
                fig.push(vec![sci(h), sci(e)]);
            }
            let local_min = gamma.local.report.as_ref().map(|r| r.minimizer.clone());
            let all: Vec<&StudyCell> = std::iter::once(&gamma.local).chain(&gamma.cells).collect();
            artifacts.add_table(
                "study_gamma_minimizers.csv",
                &rows_table(all.iter().copied()),
            );
            artifacts.add_table("fig_discrete_gamma_conv.csv", &fig);
            artifacts.add_table(
                "minimizers.csv",
                &minimizers_table(all.iter().copied(), |_| local_min.clone()),
            );
            summary["local_l1_relative_error"] = json!(gamma.local.row.l1_relative_error);
            cells = all.into_iter().cloned().collect();
        }
        StudyKind::DoubleLimit => {
            let h_list = block.h_list.as_ref().expect("resolved");
            let coupling = block.coupling.expect("resolved");
            let sweep =
                double_limit_study(h_list, coupling, reference, &settings).map_err(cfg_err)?;
            let mut fig = Table::new(&[
                "coupling",
                "H",
                "dx",
                "l1_relative_error",
                "objective_value",
            ]);
            for c in &sweep.cells {
                fig.push(vec![
                    coupling.label(),
                    opt_sci(c.row.h),
                    sci(c.row.dx),
                    sci(c.row.l1_relative_error),
                    sci(c.row.objective_value),
                ]);
            }
            artifacts.add_table("study_double_limit.csv", &rows_table(&sweep.cells));
            artifacts.add_table("fig_diagonal_gamma_conv.csv", &fig);
            artifacts.add_table("minimizers.csv", &minimizers_table(&sweep.cells, target_on));
            summary["coupling"] = json!(coupling.label());
            summary["min_dx"] = json!(sweep.min_dx);
            cells = sweep.cells;
        }
        StudyKind::Nl2lSolutions => unreachable!("handled above"),
    }

    let failed = cells.iter().filter(|c| !c.row.is_ok()).count();
    summary["rows"] = json!(cells.len());
    summary["failed_rows"] = json!(failed);
    for c in cells.iter().filter(|c| !c.row.is_ok()) {
        log::warn!(
            "row dx = {} H = {:?} failed: {:?}",
            c.row.dx,
            c.row.h,
            c.row.status
        );
    }
    let total_failure = failed == cells.len();
    Ok(Product {
        artifacts,
        summary,
        status: if total_failure { "failed" } else { "ok" },
        exit_code: if total_failure { 2 } else { 0 },
    })
}
