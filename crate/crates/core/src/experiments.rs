//! Convergence studies over the manufactured problems: configuration,
//! execution of independent runs, and table/CSV output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_mass_stiffness, ritz_project, QuadratureSettings, WeightedSpace};
use crate::error::{Error, Result};
use crate::fractional::GradedMesh;
use crate::manufactured::{convergence_rates, ErrorTracker, Example, ManufacturedProblem};
use crate::stepper::{SolverMode, StepperSettings, TimeStepper};

/// How the grid size follows the number of time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Grid taken from `cells`.
    FixedN,
    /// Largest `M` with `M^{m+1} <= N^2`.
    #[default]
    Coupled,
}

/// Flat experiment description, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub example: Example,
    /// Order used by spatial and single runs.
    pub alpha: f64,
    /// Orders swept by the temporal study; empty means `[alpha]`.
    pub alphas: Vec<f64>,
    pub degree: usize,
    /// Mesh grading; `None` selects `2/α`.
    pub grading: Option<f64>,
    pub t_final: f64,
    /// Grid sizes `M` (cells per direction) of the spatial study; empty
    /// selects `8..=64` for `m = 1` and `4..=32` otherwise.
    pub cells: Vec<usize>,
    /// Step counts of the temporal study.
    pub steps: Vec<usize>,
    /// Step count of spatial and single runs.
    pub fixed_steps: usize,
    pub coupling: Coupling,
    /// Gauss points per direction; `None` selects `m + 3`.
    pub quad_points: Option<usize>,
    pub quad_depth: usize,
    pub newton_tol: f64,
    pub solver: SolverMode,
    /// Raise the step count of spatial rows whose projected temporal error
    /// `N^{-2}` exceeds a tenth of the expected spatial error.
    pub auto_steps: bool,
    pub threads: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            example: Example::SquareSine,
            alpha: 0.5,
            alphas: Vec::new(),
            degree: 1,
            grading: None,
            t_final: 0.5,
            cells: Vec::new(),
            steps: vec![8, 16, 32, 64],
            fixed_steps: 2000,
            coupling: Coupling::Coupled,
            quad_points: None,
            quad_depth: 4,
            newton_tol: 1e-12,
            solver: SolverMode::Reduced,
            auto_steps: true,
            threads: 1,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for &a in std::iter::once(&self.alpha).chain(&self.alphas) {
            if !(a > 0.0 && a < 1.0) {
                return bad(format!("alpha must lie in (0, 1), got {a}"));
            }
        }
        if self.degree == 0 || self.degree > crate::bspline::MAX_DEGREE {
            return bad(format!("degree must be in 1..={}", crate::bspline::MAX_DEGREE));
        }
        if let Some(r) = self.grading {
            if !(r >= 1.0) {
                return bad(format!("grading must be >= 1, got {r}"));
            }
        }
        if !(self.t_final > 0.0) {
            return bad("t_final must be positive".into());
        }
        if self.cells.iter().any(|&m| m == 0) || self.steps.iter().any(|&n| n == 0) || self.fixed_steps == 0 {
            return bad("grid sizes and step counts must be positive".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    pub fn grading_for(&self, alpha: f64) -> f64 {
        self.grading.unwrap_or(2.0 / alpha)
    }

    pub fn quadrature(&self) -> QuadratureSettings {
        let mut q = QuadratureSettings::for_degree(self.degree);
        if let Some(p) = self.quad_points {
            q.points = p;
        }
        q.max_depth = self.quad_depth;
        q
    }

    pub fn stepper_settings(&self) -> StepperSettings {
        StepperSettings {
            newton_tol: self.newton_tol,
            solver: self.solver,
            ..StepperSettings::default()
        }
    }

    pub fn spatial_cells(&self) -> Vec<usize> {
        match (self.cells.is_empty(), self.degree) {
            (false, _) => self.cells.clone(),
            (true, 1) => vec![8, 16, 32, 64],
            (true, _) => vec![4, 8, 16, 32],
        }
    }

    fn temporal_alphas(&self) -> Vec<f64> {
        if self.alphas.is_empty() {
            vec![self.alpha]
        } else {
            self.alphas.clone()
        }
    }

    fn cells_for_steps(&self, steps: usize) -> Result<usize> {
        match self.coupling {
            Coupling::Coupled => Ok(coupled_cells(steps, self.degree)),
            Coupling::FixedN => self
                .cells
                .first()
                .copied()
                .ok_or_else(|| Error::Config("fixed coupling needs a grid size in `cells`".into())),
        }
    }

    fn case(&self, alpha: f64, cells: usize, steps: usize) -> CaseSpec {
        CaseSpec {
            example: self.example,
            alpha,
            degree: self.degree,
            cells,
            steps,
            grading: self.grading_for(alpha),
            t_final: self.t_final,
            quad: self.quadrature(),
            stepper: self.stepper_settings(),
        }
    }
}

/// Largest `M` with `M^{m+1} <= N^2`.
pub fn coupled_cells(steps: usize, degree: usize) -> usize {
    let target = (steps as u128).pow(2);
    let mut m = 1usize;
    while ((m + 1) as u128).pow(degree as u32 + 1) <= target {
        m += 1;
    }
    m
}

/// Everything needed for one discretized run.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub example: Example,
    pub alpha: f64,
    pub degree: usize,
    pub cells: usize,
    pub steps: usize,
    pub grading: f64,
    pub t_final: f64,
    pub quad: QuadratureSettings,
    pub stepper: StepperSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub dof: usize,
    pub e_u: f64,
    pub e_v: f64,
    pub newton_iterations: usize,
    pub newton_residual: f64,
    pub max_block_residual: f64,
    pub max_constraint_residual: f64,
    /// `max_n ||U^n||` and `max_n ||V^n||` in `L^2(Omega)`.
    pub max_u_norm: f64,
    pub max_v_norm: f64,
    pub runtime_s: f64,
}

/// Builds the space, initializes by Ritz projection, marches to `T` and
/// measures the relative errors.
pub fn run_case(spec: &CaseSpec) -> Result<CaseResult> {
    let start = Instant::now();
    let problem = ManufacturedProblem::new(spec.example, spec.alpha)?;
    let space = WeightedSpace::new(problem.weight(), spec.degree, spec.cells, spec.quad)?;
    let ops = assemble_mass_stiffness(&space)?;
    let mesh = GradedMesh::new(spec.t_final, spec.steps, spec.grading, spec.alpha)?;
    let t0 = mesh.t(0);
    let tt0 = problem.temporal(t0);
    let u0 = ritz_project(&space, &ops, |p| {
        let g = problem.spatial(p).grad;
        [tt0 * g[0], tt0 * g[1]]
    })?;
    let v0 = ritz_project(&space, &ops, |p| {
        let g = problem.spatial(p).grad_laplacian;
        [-tt0 * g[0], -tt0 * g[1]]
    })?;
    let loads = problem.forcing_loads(&space);
    let stepper = TimeStepper::new(&space, &ops, mesh.clone(), spec.stepper)?;
    let mut tracker = ErrorTracker::new(problem, &space);
    let qw: Vec<f64> = space.points().iter().map(|p| p.qw).collect();
    let l2 = |f: &[f64]| f.iter().zip(&qw).map(|(v, w)| w * v * v).sum::<f64>().sqrt();
    let (mut max_u, mut max_v) = (0.0f64, 0.0f64);
    let history = stepper.run(u0, v0, &loads, |n, u, v| {
        let up = space.field_at_points(u);
        let vp = space.field_at_points(v);
        max_u = max_u.max(l2(&up));
        max_v = max_v.max(l2(&vp));
        if n >= 1 {
            tracker.record(mesh.t(n), &up, &vp);
        }
    })?;
    let (e_u, e_v) = tracker.relative_errors()?;
    let fold = |v: &[f64]| v.iter().skip(1).fold(0.0f64, |a, b| a.max(*b));
    Ok(CaseResult {
        dof: space.dim(),
        e_u,
        e_v,
        newton_iterations: history.newton_iterations,
        newton_residual: history.newton_residual,
        max_block_residual: fold(&history.block_residuals),
        max_constraint_residual: fold(&history.constraint_residuals),
        max_u_norm: max_u,
        max_v_norm: max_v,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs independent cases on up to `threads` workers; results keep the
/// input order.
pub fn run_cases(cases: &[CaseSpec], threads: usize) -> Vec<Result<CaseResult>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<CaseResult>>>> = Mutex::new((0..cases.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(cases.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cases.len() {
                    break;
                }
                let c = &cases[i];
                info!(
                    "running {} alpha={} m={} M={} N={}",
                    c.example, c.alpha, c.degree, c.cells, c.steps
                );
                let r = run_case(c);
                if let Err(e) = &r {
                    warn!("case M={} N={} failed: {e}", c.cells, c.steps);
                }
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every case ran"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Spatial,
    Temporal,
    Single,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Spatial => "spatial",
            Study::Temporal => "temporal",
            Study::Single => "single",
        }
    }
}

/// One table row; failed runs keep their parameters and the error message.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub study: Study,
    pub example: Example,
    pub alpha: f64,
    pub degree: usize,
    pub grading: f64,
    pub steps: usize,
    pub cells: usize,
    pub dof: usize,
    pub e_u: Option<f64>,
    pub rate_u: Option<f64>,
    pub e_v: Option<f64>,
    pub rate_v: Option<f64>,
    pub runtime_s: f64,
    pub failure: Option<String>,
    pub result: Option<CaseResult>,
}

fn rows_from(study: Study, cases: &[CaseSpec], results: Vec<Result<CaseResult>>) -> Vec<Row> {
    cases
        .iter()
        .zip(results)
        .map(|(c, r)| {
            let (ok, failure) = match r {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let m1 = c.degree + c.cells;
            Row {
                study,
                example: c.example,
                alpha: c.alpha,
                degree: c.degree,
                grading: c.grading,
                steps: c.steps,
                cells: c.cells,
                dof: ok.as_ref().map_or(m1 * m1, |v| v.dof),
                e_u: ok.as_ref().map(|v| v.e_u),
                rate_u: None,
                e_v: ok.as_ref().map(|v| v.e_v),
                rate_v: None,
                runtime_s: ok.as_ref().map_or(0.0, |v| v.runtime_s),
                failure,
                result: ok,
            }
        })
        .collect()
}

/// Fills rates between consecutive successful rows of each group.
fn fill_rates(rows: &mut [Row], same_group: impl Fn(&Row, &Row) -> bool) {
    for i in 1..rows.len() {
        if !same_group(&rows[i - 1], &rows[i]) {
            continue;
        }
        let pair = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => convergence_rates(&[x, y]).ok().map(|r| r[0]),
            _ => None,
        };
        rows[i].rate_u = pair(rows[i - 1].e_u, rows[i].e_u);
        rows[i].rate_v = pair(rows[i - 1].e_v, rows[i].e_v);
    }
}

/// Step count for a spatial row: the configured value, raised when the
/// projected temporal error `N^{-2}` exceeds a tenth of the spatial error
/// expected from the previous row at rate `m + 1`.
pub fn suggested_steps(base: usize, previous_error: Option<f64>, degree: usize) -> usize {
    let Some(prev) = previous_error else { return base };
    let expected = prev / 2f64.powi(degree as i32 + 1);
    let n = base as f64;
    if n.powi(-2) > 0.1 * expected {
        (10.0 / expected).sqrt().ceil() as usize
    } else {
        base
    }
}

/// One row per grid size in `cells`, all at `fixed_steps` (possibly raised
/// by the automatic rule).
pub fn run_spatial_study(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    if cfg.auto_steps {
        // Each row's step count depends on the previous error, so rows run
        // in sequence.
        let mut prev = None;
        for m in cfg.spatial_cells() {
            let steps = suggested_steps(cfg.fixed_steps, prev, cfg.degree);
            if steps != cfg.fixed_steps {
                info!("M={m}: raising N from {} to {steps} to keep the temporal error small", cfg.fixed_steps);
            }
            let case = cfg.case(cfg.alpha, m, steps);
            let mut r = rows_from(Study::Spatial, std::slice::from_ref(&case), run_cases(std::slice::from_ref(&case), 1));
            prev = r[0].e_u;
            rows.append(&mut r);
        }
    } else {
        let cases: Vec<CaseSpec> = cfg.spatial_cells().into_iter().map(|m| cfg.case(cfg.alpha, m, cfg.fixed_steps)).collect();
        rows = rows_from(Study::Spatial, &cases, run_cases(&cases, cfg.threads));
    }
    fill_rates(&mut rows, |_, _| true);
    Ok(rows)
}

/// Rows for every `alpha` in `alphas` and every `N` in `steps`, with the
/// grid coupled to `N` unless `coupling = fixed_n`.
pub fn run_temporal_study(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    let mut cases = Vec::new();
    for a in cfg.temporal_alphas() {
        for &n in &cfg.steps {
            cases.push(cfg.case(a, cfg.cells_for_steps(n)?, n));
        }
    }
    let mut rows = rows_from(Study::Temporal, &cases, run_cases(&cases, cfg.threads));
    fill_rates(&mut rows, |a, b| a.alpha == b.alpha);
    Ok(rows)
}

/// A single run at `fixed_steps` on the first grid size of the spatial
/// series.
pub fn run_single(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    let cells = cfg.spatial_cells()[0];
    let case = cfg.case(cfg.alpha, cells, cfg.fixed_steps);
    Ok(rows_from(Study::Single, std::slice::from_ref(&case), run_cases(std::slice::from_ref(&case), 1)))
}

/// `0.XXXXE-k` with four mantissa digits.
pub fn format_mantissa(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sign = if x < 0.0 { "-" } else { "" };
    let a = x.abs();
    let mut e = a.log10().floor() as i32 + 1;
    let mut mant = (a / 10f64.powi(e) * 1e4).round() as i64;
    if mant >= 10_000 {
        mant /= 10;
        e += 1;
    } else if mant < 1000 {
        // log10 rounding placed the mantissa just below 0.1.
        e -= 1;
        mant = (a / 10f64.powi(e) * 1e4).round() as i64;
    }
    let exp = if e <= 0 { format!("-{}", -e) } else { format!("+{e}") };
    format!("{sign}0.{mant:04}E{exp}")
}

fn format_rate(r: Option<f64>) -> String {
    r.map(|v| format!("{v:.4}")).unwrap_or_default()
}

fn format_error(e: Option<f64>) -> String {
    e.map(format_mantissa).unwrap_or_default()
}

/// Fixed-width text table with columns N, M, DOF, E_u, rate, E_v, rate.
pub fn format_table(rows: &[Row]) -> String {
    let mut out = String::new();
    let mut last_header = None;
    for r in rows {
        let header = (r.study, r.example, r.alpha.to_bits(), r.degree);
        if last_header != Some(header) {
            if last_header.is_some() {
                out.push('\n');
            }
            out.push_str(&format!(
                "{} study: example={} alpha={} m={} r={}\n",
                r.study.name(),
                r.example,
                r.alpha,
                r.degree,
                r.grading
            ));
            out.push_str(&format!(
                "{:>7} {:>5} {:>7} {:>11} {:>8} {:>11} {:>8}\n",
                "N", "M", "DOF", "E_u", "Rate", "E_v", "Rate"
            ));
            last_header = Some(header);
        }
        match &r.failure {
            None => out.push_str(&format!(
                "{:>7} {:>5} {:>7} {:>11} {:>8} {:>11} {:>8}\n",
                r.steps,
                r.cells,
                r.dof,
                format_error(r.e_u),
                format_rate(r.rate_u),
                format_error(r.e_v),
                format_rate(r.rate_v)
            )),
            Some(msg) => out.push_str(&format!("{:>7} {:>5} {:>7} FAILED: {msg}\n", r.steps, r.cells, r.dof)),
        }
    }
    out
}

pub const CSV_HEADER: [&str; 13] = [
    "study", "example", "alpha", "m", "r", "N", "M", "dof", "E_u", "rate_u", "E_v", "rate_v", "runtime_s",
];

/// CSV with the columns of [`CSV_HEADER`]; missing values are empty fields.
pub fn write_csv<W: Write>(rows: &[Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.study.name().to_string(),
            r.example.name().to_string(),
            r.alpha.to_string(),
            r.degree.to_string(),
            r.grading.to_string(),
            r.steps.to_string(),
            r.cells.to_string(),
            r.dof.to_string(),
            format_error(r.e_u),
            format_rate(r.rate_u),
            format_error(r.e_v),
            format_rate(r.rate_v),
            format!("{:.3}", r.runtime_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Text,
    Csv,
}

/// Writes `<dir>/<study>.txt` or `<dir>/<study>.csv`.
pub fn emit(rows: &[Row], format: OutputFormat, dir: &Path) -> Result<PathBuf> {
    let study = rows
        .first()
        .ok_or_else(|| Error::InvalidParameter("no rows to emit".into()))?
        .study;
    std::fs::create_dir_all(dir)?;
    let path = match format {
        OutputFormat::Text => dir.join(format!("{}.txt", study.name())),
        OutputFormat::Csv => dir.join(format!("{}.csv", study.name())),
    };
    let file = std::fs::File::create(&path)?;
    match format {
        OutputFormat::Text => {
            let mut f = std::io::BufWriter::new(file);
            f.write_all(format_table(rows).as_bytes())?;
            f.flush()?;
        }
        OutputFormat::Csv => write_csv(rows, std::io::BufWriter::new(file))?,
    }
    Ok(path)
}
