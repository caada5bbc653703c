//! Batch driver: `validate`, `classes`, `run`, `report`, `all`.
//!
//! Exit codes: 0 success, 2 validation failure, 3 solver abort, 4 report
//! FAIL. Outputs are plain text: `trajectory.csv`, `diagnostics.csv`,
//! `profile_initial.txt`, `profile_final.txt`, `manifest.txt`, `report.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use num_traits::{ToPrimitive, Zero};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calabi::{write_profile_dump, AnsatzKind, AnsatzModel, Grid, GeometryError};
use crate::classes::{
    class_at, collapsing_condition_residual, reference_volume_polynomial, singular_time,
    ClassError, ReferenceVolumePolynomial, SingularTime,
};
use crate::config::{ConfigError, ExperimentConfig, RateCheck};
use crate::flow::{
    initial_data, run_from, ClassData, FlowError, FlowProblem, Integrator, StepControl,
    Termination,
};
use crate::monitors::{
    boundedness_window, curvature_constant, default_barrier_constant, BConfig, Monitor,
    MonitorContext, MonitorError, MonitorRecord, WindowRule, WindowVerdict, CSV_COLUMNS,
};
use crate::rates::{exponent_drift, fit_power_law, FitError, FitWindow, RateFit};
use crate::{ExactClass, Rational};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_REPORT_FAIL: u8 = 4;

/// Extra per-snapshot columns written next to the trajectory.
pub const DIAGNOSTIC_COLUMNS: [&str; 12] = [
    "t", "c_low", "c_high", "npot_inf", "trace0_scaled_inf", "trace_sigma_inf", "Q_inf",
    "Q_argmax", "a_meas", "b_meas", "a_pred", "b_pred",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("class ledger: {0}")]
    Classes(#[from] ClassError),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("report: {0}")]
    Schema(String),
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Solver(_) => EXIT_SOLVER,
            _ => EXIT_VALIDATION,
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<MonitorError> for CliError {
    fn from(e: MonitorError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

fn to_f64(q: &Rational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Class-level checks of an experiment, all in exact arithmetic.
#[derive(Debug, Clone)]
pub struct Validation {
    pub singular_time: SingularTime<Rational>,
    /// `None` when `T` is infinite.
    pub residual: Option<ExactClass>,
    pub in_cone: bool,
    /// `[ω_t]` at `t = kT/4`, `k = 0..4`.
    pub trajectory: Vec<(Rational, ExactClass)>,
    pub volume: Option<ReferenceVolumePolynomial<Rational>>,
    pub fiber_dim: usize,
}

impl Validation {
    pub fn passed(&self) -> bool {
        self.singular_time.finite().is_some() && self.residual.as_ref().is_some_and(|r| r.is_zero())
    }

    pub fn singular_time_f64(&self) -> Option<f64> {
        self.singular_time.finite().map(|t| to_f64(&t))
    }

    pub fn render(&self, cfg: &ExperimentConfig) -> String {
        let m = &cfg.model;
        let mut s = String::new();
        let _ = writeln!(s, "model        {} (n = {}, r = {})", m.kind, m.basis.dim_complex(), m.basis.fiber_dim());
        let _ = writeln!(s, "generators   {}", m.basis.labels().join(" "));
        if let Some(c) = &m.convention {
            let _ = writeln!(s, "convention   {c}");
        }
        let _ = writeln!(s, "omega0       {}", m.omega0);
        let _ = writeln!(s, "c1           {}", m.c1);
        let _ = writeln!(s, "target       {}", m.target);
        let _ = writeln!(s, "in cone      {}", if self.in_cone { "yes" } else { "no" });
        let _ = writeln!(s, "T            {}", self.singular_time);
        for (t, c) in &self.trajectory {
            let _ = writeln!(s, "class(t={t})  {c}");
        }
        match &self.residual {
            Some(r) => {
                let _ = writeln!(s, "residual     {r} ({})", if r.is_zero() { "zero" } else { "NONZERO" });
            }
            None => {
                let _ = writeln!(s, "residual     undefined (T infinite)");
            }
        }
        if let Some(v) = &self.volume {
            let fmt = |c: &[Rational]| c.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(" ");
            let _ = writeln!(s, "volume       grouped by (T-t)^k: {}", fmt(&v.grouped));
            let _ = writeln!(s, "volume       in s = T-t: {}", fmt(&v.in_gap_variable()));
            let lowest = v.lowest_power().map_or("none".to_string(), |k| k.to_string());
            let _ = writeln!(s, "volume       lowest power {lowest} (fiber dimension {})", self.fiber_dim);
            if v.degenerate {
                let _ = writeln!(s, "volume       initial class carries no volume");
            }
        }
        let _ = writeln!(s, "verdict      {}", if self.passed() { "OK" } else { "INVALID" });
        s
    }
}

pub fn validate(cfg: &ExperimentConfig) -> Result<Validation, CliError> {
    let m = &cfg.model;
    let in_cone = m.cone.contains(&m.omega0)?;
    let t_sing = if in_cone {
        singular_time(&m.omega0, &m.c1, &m.cone)?
    } else {
        SingularTime::Infinite
    };
    let (residual, trajectory, volume) = match t_sing.finite() {
        Some(t) => {
            let residual = collapsing_condition_residual(&m.omega0, &m.c1, &t, &m.target)?;
            let trajectory = (0..=4)
                .map(|k| {
                    let tk = t.clone() * Rational::new(k.into(), 4.into());
                    class_at(&m.omega0, &m.c1, &tk).map(|c| (tk, c))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let volume = reference_volume_polynomial(&m.omega0, &m.target, &m.table, &t)?;
            (Some(residual), trajectory, Some(volume))
        }
        None => (None, Vec::new(), None),
    };
    Ok(Validation {
        singular_time: t_sing,
        residual,
        in_cone,
        trajectory,
        volume,
        fiber_dim: m.basis.fiber_dim(),
    })
}

/// Solver-side description of a validated experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: AnsatzModel,
    pub problem: FlowProblem<f64>,
    pub control: StepControl<f64>,
    pub singular_time: f64,
}

/// Maps the class data onto the radial model. The bundle uses the pairings
/// with the exceptional divisor and the section at infinity as the momentum
/// endpoints; the product uses (base, fiber) coordinates with a flat base.
pub fn setup(cfg: &ExperimentConfig, v: &Validation) -> Result<Setup, CliError> {
    if !v.passed() {
        return Err(CliError::Validation("class checks failed (see `validate`)".into()));
    }
    let m = &cfg.model;
    let t = v.singular_time.finite().expect("checked");
    if m.basis.len() != 2 {
        return Err(CliError::Validation(format!(
            "{} model expects two generators, found {}",
            m.kind,
            m.basis.len()
        )));
    }
    let n = m.basis.dim_complex();
    let w = &m.omega0.coeffs;
    let c = &m.c1.coeffs;
    let tg = &m.target.coeffs;
    let grid = Grid::new(cfg.solver.nodes, cfg.solver.half_width)?;
    let (model, initial, classes) = match m.kind {
        AnsatzKind::ProjectiveBundleK1 => {
            if tg[0] != tg[1] {
                return Err(CliError::Validation(
                    "target must pair equally with both sections".into(),
                ));
            }
            let model = AnsatzModel::bundle(n)?;
            let initial = initial_data::bundle(grid, to_f64(&w[0]), to_f64(&w[1]))?;
            let classes = ClassData {
                singular_time: Some(to_f64(&t)),
                residual_zero: true,
                endpoints: (to_f64(&w[0]), to_f64(&w[1])),
                rates: (to_f64(&c[0]), to_f64(&c[1])),
                sigma: to_f64(&tg[0]),
                fiber_dim: m.basis.fiber_dim(),
            };
            (model, initial, classes)
        }
        AnsatzKind::Product => {
            if !c[0].is_zero() {
                return Err(CliError::Validation(
                    "product model has a flat base: c1 must vanish on the base generator".into(),
                ));
            }
            if !tg[1].is_zero() {
                return Err(CliError::Validation("target must have no fiber component".into()));
            }
            let model = AnsatzModel::product(n)?;
            let initial = initial_data::product(grid, to_f64(&w[0]), to_f64(&w[1]))?;
            let classes = ClassData {
                singular_time: Some(to_f64(&t)),
                residual_zero: true,
                endpoints: (0.0, to_f64(&w[1])),
                rates: (0.0, to_f64(&c[1])),
                sigma: to_f64(&tg[0]),
                fiber_dim: m.basis.fiber_dim(),
            };
            (model, initial, classes)
        }
    };
    let problem = FlowProblem::new(model, initial, &classes)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let s = &cfg.solver;
    let control = StepControl {
        dt_max: s.dt_max,
        tol: s.tol,
        eps_stop: s.eps_stop,
        kappa: s.kappa,
        dt_floor: s.dt_floor,
        cadence: cfg.monitor.cadence,
        gauge: s.gauge,
        max_steps: s.max_steps,
        ..StepControl::default()
    };
    control.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(Setup { model, problem, control, singular_time: to_f64(&t) })
}

/// Everything a run produced, kept in memory as well as on disk.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub records: Vec<MonitorRecord<f64>>,
    pub termination: Termination,
    /// Message of a solver or monitor error that ended the run early.
    pub failure: Option<String>,
    pub trajectory_csv: String,
    pub diagnostics_csv: String,
    pub manifest: String,
    pub wall_time: f64,
    pub barrier_a: f64,
    pub accepted: usize,
    pub rejected: usize,
    /// Minima of `u′` and `u″` over every accepted state.
    pub min_uprime: f64,
    pub min_uprime2: f64,
}

impl RunArtifacts {
    pub fn aborted(&self) -> bool {
        self.failure.is_some() || !matches!(self.termination, Termination::Completed)
    }
}

pub fn trajectory_csv(records: &[MonitorRecord<f64>]) -> String {
    let mut s = CSV_COLUMNS.join(",");
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn diagnostics_csv(records: &[MonitorRecord<f64>], problem: &FlowProblem<f64>) -> String {
    let mut s = DIAGNOSTIC_COLUMNS.join(",");
    s.push('\n');
    for r in records {
        let (ap, bp) = problem.predicted_endpoints(r.t);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.c_low,
            r.c_high,
            r.npot_inf,
            r.trace0_scaled_inf,
            r.trace_sigma_inf,
            r.q_inf,
            r.q_argmax,
            r.a_meas,
            r.b_meas,
            ap,
            bp
        );
    }
    s
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Integrates the experiment and writes its artifacts into `out`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    cadence: Option<usize>,
) -> Result<RunArtifacts, CliError> {
    let v = validate(cfg)?;
    let mut su = setup(cfg, &v)?;
    if let Some(c) = cadence {
        if c == 0 {
            return Err(CliError::Validation("cadence must be at least 1".into()));
        }
        su.control.cadence = c;
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let started = Instant::now();
    let integrator = Integrator::new(su.problem.clone(), su.control.clone())?;
    let start = integrator.initial_state()?;
    let c_tilde = curvature_constant(&su.model, &start.profile)?;
    let a = cfg.monitor.a.unwrap_or_else(|| default_barrier_constant(c_tilde, su.singular_time));
    let bcfg = BConfig::new(cfg.monitor.b, a)?;
    let ctx = MonitorContext::new(&su.problem, start.profile.clone(), bcfg)?;
    let mut monitor = Monitor::new(ctx);

    let mut records = Vec::new();
    let mut monitor_error: Option<MonitorError> = None;
    let outcome = run_from(&integrator, start.clone(), |st| {
        if monitor_error.is_none() {
            match monitor.observe(st) {
                Ok(r) => records.push(r),
                Err(e) => monitor_error = Some(e),
            }
        }
    });
    let wall_time = started.elapsed().as_secs_f64();
    let (termination, failure, final_state, steps) = match outcome {
        Ok(o) => {
            let steps = Some((o.accepted, o.rejected, o.min_du, o.min_d2u));
            (o.termination, monitor_error.map(|e| format!("monitor: {e}")), Some(o.final_state), steps)
        }
        Err(e) => (Termination::Completed, Some(format!("solver: {e}")), None, None),
    };

    let trajectory = trajectory_csv(&records);
    let diagnostics = diagnostics_csv(&records, &su.problem);
    write_file(&out.join("trajectory.csv"), &trajectory)?;
    write_file(&out.join("diagnostics.csv"), &diagnostics)?;
    write_file(
        &out.join("profile_initial.txt"),
        &write_profile_dump(&su.model, &start.profile, 0.0, &[]),
    )?;
    if let Some(fs_) = &final_state {
        let extra = [("termination", termination.to_string())];
        write_file(
            &out.join("profile_final.txt"),
            &write_profile_dump(&su.model, &fs_.profile, fs_.t, &extra),
        )?;
    }

    let mut man = String::new();
    let _ = writeln!(man, "krflow_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(man, "config_sha256 = {}", sha256_hex(&cfg.source));
    let _ = writeln!(man, "model = {}", su.model.kind);
    let _ = writeln!(man, "singular_time = {}", v.singular_time);
    let _ = writeln!(man, "nodes = {}", cfg.solver.nodes);
    let _ = writeln!(man, "half_width = {}", cfg.solver.half_width);
    let _ = writeln!(man, "eps_stop = {}", su.control.eps_stop);
    let _ = writeln!(man, "cadence = {}", su.control.cadence);
    let _ = writeln!(man, "gauge = {}", su.control.gauge);
    let _ = writeln!(man, "B = {}", cfg.monitor.b);
    let _ = writeln!(man, "A = {a}{}", if cfg.monitor.a.is_none() { " (auto)" } else { "" });
    let _ = writeln!(man, "curvature_constant = {c_tilde}");
    match &failure {
        Some(f) => {
            let _ = writeln!(man, "termination = aborted: {f}");
        }
        None => {
            let _ = writeln!(man, "termination = {termination}");
        }
    }
    if let Some(fs_) = &final_state {
        let _ = writeln!(man, "t_final = {}", fs_.t);
    }
    if let Some((acc, rej, du, d2u)) = steps {
        let _ = writeln!(man, "accepted_steps = {acc}");
        let _ = writeln!(man, "rejected_steps = {rej}");
        let _ = writeln!(man, "min_uprime = {du}");
        let _ = writeln!(man, "min_uprime2 = {d2u}");
    }
    let _ = writeln!(man, "records = {}", records.len());
    let _ = writeln!(
        man,
        "hypothesis_violation = {}",
        monitor.first_violation().map_or("none".to_string(), |t| t.to_string())
    );
    let _ = writeln!(man, "wall_time_s = {wall_time:.3}");
    write_file(&out.join("manifest.txt"), &man)?;

    Ok(RunArtifacts {
        records,
        termination,
        failure,
        trajectory_csv: trajectory,
        diagnostics_csv: diagnostics,
        manifest: man,
        wall_time,
        barrier_a: a,
        accepted: steps.map_or(0, |s| s.0),
        rejected: steps.map_or(0, |s| s.1),
        min_uprime: steps.map_or(f64::NAN, |s| s.2),
        min_uprime2: steps.map_or(f64::NAN, |s| s.3),
    })
}

/// Parsed numeric CSV with a fixed header.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn parse_csv(text: &str, expected: &[&str]) -> Result<Table, CliError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Schema("empty file".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    for (j, want) in expected.iter().enumerate() {
        match header.get(j) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(CliError::Schema(format!(
                    "column {}: expected `{want}`, found `{got}`",
                    j + 1
                )))
            }
            None => return Err(CliError::Schema(format!("column {}: missing `{want}`", j + 1))),
        }
    }
    if header.len() > expected.len() {
        return Err(CliError::Schema(format!(
            "column {}: unexpected `{}`",
            expected.len() + 1,
            header[expected.len()]
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .enumerate()
            .map(|(j, f)| {
                f.trim().parse::<f64>().map_err(|_| {
                    CliError::Schema(format!(
                        "row {}, column `{}`: not a number: `{}`",
                        i + 2,
                        header.get(j).map_or("?", |s| s.as_str()),
                        f.trim()
                    ))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if row.len() != header.len() {
            return Err(CliError::Schema(format!(
                "row {}: {} fields, header has {}",
                i + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(Table { columns: header, rows })
}

#[derive(Debug, Clone)]
pub struct RateLine {
    pub check: RateCheck,
    /// One fit per configured decade, oldest first.
    pub fits: Vec<Result<RateFit<f64>, FitError>>,
    pub excluded: usize,
    /// Fit over hypothesis-violating samples, when there are enough.
    pub excluded_fit: Option<RateFit<f64>>,
    pub pass: bool,
}

impl RateLine {
    pub fn last_fit(&self) -> Option<&RateFit<f64>> {
        self.fits.last().and_then(|f| f.as_ref().ok())
    }
}

#[derive(Debug, Clone)]
pub struct BoundLine {
    pub name: String,
    pub rule: WindowRule,
    pub verdict: Option<WindowVerdict>,
}

impl BoundLine {
    pub fn pass(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.pass)
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub singular_time: f64,
    pub eps_stop: f64,
    pub rates: Vec<RateLine>,
    pub bounds: Vec<BoundLine>,
}

impl Report {
    pub fn pass(&self) -> bool {
        self.rates.iter().all(|r| r.pass) && self.bounds.iter().all(|b| b.pass())
    }

    pub fn rate(&self, column: &str) -> Option<&RateLine> {
        self.rates.iter().find(|r| r.check.column == column)
    }

    pub fn bound(&self, name: &str) -> Option<&BoundLine> {
        self.bounds.iter().find(|b| b.name == name)
    }

    pub fn render(&self) -> String {
        let verdict = |p: bool| if p { "PASS" } else { "FAIL" };
        let mut s = String::new();
        let _ = writeln!(s, "# T = {}, eps_stop = {}", self.singular_time, self.eps_stop);
        for r in &self.rates {
            match r.last_fit() {
                Some(f) => {
                    let _ = writeln!(
                        s,
                        "rate {} window [{:.8}, {:.8}] exponent {:.5} stderr {:.2e} residual {:.3e} n {} expected {} {}",
                        r.check.column,
                        f.window.0,
                        f.window.1,
                        f.exponent,
                        f.exponent_stderr,
                        f.residual_rms,
                        f.n_points,
                        r.check,
                        verdict(r.pass)
                    );
                }
                None => {
                    let why = match r.fits.last() {
                        Some(Err(e)) => e.to_string(),
                        _ => "no window".into(),
                    };
                    let _ = writeln!(s, "rate {} no fit ({why}) expected {} FAIL", r.check.column, r.check);
                }
            }
            let ok: Vec<RateFit<f64>> = r.fits.iter().filter_map(|f| f.as_ref().ok().cloned()).collect();
            if ok.len() > 1 {
                let exps: Vec<String> = ok.iter().map(|f| format!("{:.5}", f.exponent)).collect();
                let drift: Vec<String> = exponent_drift(&ok).iter().map(|d| format!("{d:.2e}")).collect();
                let _ = writeln!(
                    s,
                    "  decades {} drift {}",
                    exps.join(" "),
                    drift.join(" ")
                );
            }
            if r.excluded > 0 {
                let _ = write!(s, "  excluded {} samples with Ric > B·omega0", r.excluded);
                match &r.excluded_fit {
                    Some(f) => {
                        let _ = writeln!(s, "; their exponent {:.5}", f.exponent);
                    }
                    None => s.push('\n'),
                }
            }
        }
        for b in &self.bounds {
            match &b.verdict {
                Some(v) => {
                    let _ = writeln!(
                        s,
                        "bounded {} ({}) early {:.6e} max {:.6e} bound {:.6e} {}",
                        b.name,
                        rule_name(b.rule),
                        v.early_max,
                        v.run_max,
                        v.bound,
                        verdict(v.pass)
                    );
                }
                None => {
                    let _ = writeln!(s, "bounded {} no data FAIL", b.name);
                }
            }
        }
        let _ = writeln!(s, "overall {}", verdict(self.pass()));
        s
    }
}

fn rule_name(rule: WindowRule) -> String {
    match rule {
        WindowRule::Multiplicative => "10x first decile".into(),
        WindowRule::Logarithmic => "first decile + ln 10".into(),
        WindowRule::Additive(m) => format!("t=0 value + {m}"),
    }
}

/// Rate fits and boundedness verdicts for a trajectory (and, when given,
/// its diagnostics file).
pub fn report(
    cfg: &ExperimentConfig,
    singular_time: f64,
    trajectory: &str,
    diagnostics: Option<&str>,
) -> Result<Report, CliError> {
    let table = parse_csv(trajectory, &CSV_COLUMNS)?;
    let t = table.column("t").expect("schema");
    let ok: Vec<bool> = table.column("hypothesis_ok").expect("schema").iter().map(|v| *v != 0.0).collect();
    let eps = cfg.solver.eps_stop;
    let windows = FitWindow::decades(singular_time, eps, cfg.rates.windows);
    let mut rates = Vec::new();
    for check in &cfg.rates.checks {
        let values = table.column(&check.column).expect("validated column");
        let mut kept = Vec::new();
        let mut excluded = Vec::new();
        for ((&ti, &vi), &flag) in t.iter().zip(&values).zip(&ok) {
            if flag {
                kept.push((ti, vi));
            } else {
                excluded.push((ti, vi));
            }
        }
        let fits: Vec<_> = windows.iter().map(|w| fit_power_law(&kept, singular_time, *w)).collect();
        let last = *windows.last().expect("at least one window");
        let excluded_fit = fit_power_law(&excluded, singular_time, last).ok();
        let pass = fits.last().and_then(|f| f.as_ref().ok()).is_some_and(|f| check.accepts(f.exponent));
        rates.push(RateLine { check: check.clone(), fits, excluded: excluded.len(), excluded_fit, pass });
    }
    let series = |name: &str, tab: &Table| -> Vec<(f64, f64)> {
        let tt = tab.column("t").expect("schema");
        tt.into_iter().zip(tab.column(name).expect("schema")).collect()
    };
    let mut bounds = Vec::new();
    for name in ["vr_sup", "npot_sup", "Q_sup"] {
        let s = series(name, &table);
        bounds.push(BoundLine {
            name: name.into(),
            rule: WindowRule::Multiplicative,
            verdict: boundedness_window(&s, WindowRule::Multiplicative),
        });
    }
    let q = series("Q_sup", &table);
    bounds.push(BoundLine {
        name: "Q_sup".into(),
        rule: WindowRule::Additive(1.0),
        verdict: boundedness_window(&q, WindowRule::Additive(1.0)),
    });
    if let Some(text) = diagnostics {
        let d = parse_csv(text, &DIAGNOSTIC_COLUMNS)?;
        let lo = d.column("c_low").expect("schema");
        let hi = d.column("c_high").expect("schema");
        let tt = d.column("t").expect("schema");
        let ratio: Vec<(f64, f64)> = tt.iter().zip(lo.iter().zip(&hi)).map(|(&t, (&l, &h))| (t, h / l)).collect();
        bounds.push(BoundLine {
            name: "c_high/c_low".into(),
            rule: WindowRule::Multiplicative,
            verdict: boundedness_window(&ratio, WindowRule::Multiplicative),
        });
    }
    Ok(Report { singular_time, eps_stop: eps, rates, bounds })
}

#[derive(Parser, Debug)]
#[command(name = "krflow", version, about = "Kähler-Ricci flow with a collapsing fiber on Calabi-ansatz models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check the class data: singular time, collapsing residual, cone.
    Validate(ConfigArgs),
    /// Print the class trajectory and reference volume polynomial.
    Classes(ConfigArgs),
    /// Integrate the flow and write the trajectory and manifest.
    Run(RunArgs),
    /// Fit rates and check boundedness windows of a finished run.
    Report(ReportArgs),
    /// validate, run and report in one go.
    All(RunArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (default: `out` from the config, else `runs/<name>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Monitor every K accepted steps.
    #[arg(long, value_name = "K")]
    pub cadence: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trajectory CSV (default: `<out>/trajectory.csv`).
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

fn out_dir(cfg: &ExperimentConfig, config: &Path, flag: Option<&PathBuf>) -> PathBuf {
    flag.cloned().or_else(|| cfg.out.clone()).unwrap_or_else(|| {
        let stem = config.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
        PathBuf::from("runs").join(stem)
    })
}

fn say(quiet: bool, text: &str) {
    if !quiet {
        print!("{text}");
    }
}

fn cmd_validate(args: &ConfigArgs, quiet: bool) -> Result<u8, CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let v = validate(&cfg)?;
    say(quiet, &v.render(&cfg));
    if !v.passed() {
        return Ok(EXIT_VALIDATION);
    }
    match setup(&cfg, &v) {
        Ok(_) => say(quiet, "solver       ready\n"),
        Err(e) => say(quiet, &format!("solver       unsupported: {e}\n")),
    }
    Ok(EXIT_OK)
}

fn cmd_run(args: &RunArgs, quiet: bool) -> Result<(u8, ExperimentConfig, PathBuf, f64), CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let v = validate(&cfg)?;
    if !v.passed() {
        say(quiet, &v.render(&cfg));
        return Err(CliError::Validation("class checks failed; no solver artifacts written".into()));
    }
    let out = out_dir(&cfg, &args.config, args.out.as_ref());
    let art = run_experiment(&cfg, &out, args.cadence)?;
    say(quiet, &art.manifest);
    say(quiet, &format!("artifacts in {}\n", out.display()));
    let code = if art.aborted() {
        if let Some(f) = &art.failure {
            eprintln!("krflow: {f}");
        } else {
            eprintln!("krflow: {}", art.termination);
        }
        EXIT_SOLVER
    } else {
        EXIT_OK
    };
    Ok((code, cfg, out, v.singular_time_f64().expect("validated")))
}

fn write_report(cfg: &ExperimentConfig, t_sing: f64, out: &Path, trajectory: &Path, quiet: bool) -> Result<u8, CliError> {
    let text = fs::read_to_string(trajectory).map_err(io_err(trajectory))?;
    let diag_path = out.join("diagnostics.csv");
    let diag = fs::read_to_string(&diag_path).ok();
    let rep = report(cfg, t_sing, &text, diag.as_deref())?;
    let rendered = rep.render();
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join("report.txt"), &rendered)?;
    say(quiet, &rendered);
    Ok(if rep.pass() { EXIT_OK } else { EXIT_REPORT_FAIL })
}

fn cmd_report(args: &ReportArgs, quiet: bool) -> Result<u8, CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let v = validate(&cfg)?;
    let t_sing = v
        .singular_time_f64()
        .ok_or_else(|| CliError::Validation("singular time is infinite".into()))?;
    let out = out_dir(&cfg, &args.config, args.out.as_ref());
    let trajectory = args.trajectory.clone().unwrap_or_else(|| out.join("trajectory.csv"));
    write_report(&cfg, t_sing, &out, &trajectory, quiet)
}

pub fn execute(cli: &Cli) -> Result<u8, CliError> {
    let quiet = cli.quiet;
    match &cli.command {
        Command::Validate(a) => cmd_validate(a, quiet),
        Command::Classes(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            let v = validate(&cfg)?;
            say(quiet, &v.render(&cfg));
            Ok(if v.passed() { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Run(a) => cmd_run(a, quiet).map(|r| r.0),
        Command::Report(a) => cmd_report(a, quiet),
        Command::All(a) => {
            let (code, cfg, out, t_sing) = cmd_run(a, quiet)?;
            if code != EXIT_OK {
                return Ok(code);
            }
            write_report(&cfg, t_sing, &out, &out.join("trajectory.csv"), quiet)
        }
    }
}

/// Entry point of the `krflow` binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK });
        }
    };
    let level = if cli.quiet { "error" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("krflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
