use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use wbfrac::experiments::{
    emit, format_table, run_single, run_spatial_study, run_temporal_study, Coupling, ExperimentConfig, OutputFormat,
    Row,
};
use wbfrac::manufactured::Example;
use wbfrac::stepper::SolverMode;

/// Convergence studies for the weighted b-spline / L2-1σ scheme.
#[derive(Debug, Parser)]
#[command(name = "wbfrac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Refine the grid at a fixed (large) number of time steps.
    Spatial(Options),
    /// Refine the time mesh with the grid coupled to N.
    Temporal(Options),
    /// One run at a single (M, N).
    Single(Options),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExampleArg {
    SquareSine,
    DiskComposite,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Reduced,
    Direct,
    Krylov,
    Modal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CouplingArg {
    FixedN,
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
    Both,
}

#[derive(Debug, Args)]
struct Options {
    /// Config file (TOML, flat keys); flags override its values.
    #[arg(long, env = "WBFRAC_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, env = "WBFRAC_EXAMPLE")]
    example: Option<ExampleArg>,
    /// Fractional order; a comma-separated list runs each value (temporal).
    #[arg(long, value_delimiter = ',', env = "WBFRAC_ALPHA")]
    alpha: Vec<f64>,
    /// Spline degree m.
    #[arg(long, env = "WBFRAC_DEGREE")]
    degree: Option<usize>,
    /// Grading exponent r (default 2/α).
    #[arg(long, env = "WBFRAC_GRADING")]
    grading: Option<f64>,
    /// Time steps: the step series (temporal) or the fixed count (spatial, single).
    #[arg(long = "N", value_delimiter = ',', env = "WBFRAC_N")]
    steps: Vec<usize>,
    /// Cells per direction: the grid series (spatial) or the grid (single).
    #[arg(long = "M", value_delimiter = ',', env = "WBFRAC_M")]
    cells: Vec<usize>,
    /// Final time.
    #[arg(long = "T", env = "WBFRAC_T")]
    t_final: Option<f64>,
    /// Gauss points per direction.
    #[arg(long, env = "WBFRAC_QUAD_Q")]
    quad_q: Option<usize>,
    /// Subdivision depth for cut cells.
    #[arg(long, env = "WBFRAC_QUAD_DEPTH")]
    quad_depth: Option<usize>,
    #[arg(long, env = "WBFRAC_NEWTON_TOL")]
    newton_tol: Option<f64>,
    #[arg(long, value_enum, env = "WBFRAC_SOLVER")]
    solver: Option<SolverArg>,
    #[arg(long, value_enum, env = "WBFRAC_COUPLING")]
    coupling: Option<CouplingArg>,
    /// Keep N fixed on spatial studies instead of raising it on fine grids.
    #[arg(long, env = "WBFRAC_NO_AUTO_STEPS")]
    no_auto_steps: bool,
    #[arg(long, env = "WBFRAC_THREADS")]
    threads: Option<usize>,
    /// Output directory for the table files.
    #[arg(long, env = "WBFRAC_OUT")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both", env = "WBFRAC_FORMAT")]
    format: FormatArg,
}

impl Options {
    fn config(&self, temporal: bool) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(e) = self.example {
            cfg.example = match e {
                ExampleArg::SquareSine => Example::SquareSine,
                ExampleArg::DiskComposite => Example::DiskComposite,
            };
        }
        match self.alpha.as_slice() {
            [] => {}
            [a] => {
                cfg.alpha = *a;
                cfg.alphas.clear();
            }
            list => {
                cfg.alpha = list[0];
                cfg.alphas = list.to_vec();
            }
        }
        if let Some(m) = self.degree {
            cfg.degree = m;
        }
        if self.grading.is_some() {
            cfg.grading = self.grading;
        }
        if !self.steps.is_empty() {
            if temporal {
                cfg.steps = self.steps.clone();
            } else {
                cfg.fixed_steps = self.steps[0];
            }
        }
        if !self.cells.is_empty() {
            cfg.cells = self.cells.clone();
        }
        if let Some(t) = self.t_final {
            cfg.t_final = t;
        }
        if self.quad_q.is_some() {
            cfg.quad_points = self.quad_q;
        }
        if let Some(d) = self.quad_depth {
            cfg.quad_depth = d;
        }
        if let Some(tol) = self.newton_tol {
            cfg.newton_tol = tol;
        }
        if let Some(s) = self.solver {
            cfg.solver = match s {
                SolverArg::Reduced => SolverMode::Reduced,
                SolverArg::Direct => SolverMode::Direct,
                SolverArg::Krylov => SolverMode::Krylov,
                SolverArg::Modal => SolverMode::Modal,
            };
        }
        if let Some(c) = self.coupling {
            cfg.coupling = match c {
                CouplingArg::FixedN => Coupling::FixedN,
                CouplingArg::Coupled => Coupling::Coupled,
            };
        }
        if self.no_auto_steps {
            cfg.auto_steps = false;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if self.out.is_some() {
            cfg.out_dir = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(rows: &[Row], cfg: &ExperimentConfig, format: FormatArg) -> Result<usize> {
    print!("{}", format_table(rows));
    if let Some(dir) = &cfg.out_dir {
        let formats: &[OutputFormat] = match format {
            FormatArg::Text => &[OutputFormat::Text],
            FormatArg::Csv => &[OutputFormat::Csv],
            FormatArg::Both => &[OutputFormat::Text, OutputFormat::Csv],
        };
        for &f in formats {
            let path = emit(rows, f, dir)?;
            info!("wrote {}", path.display());
        }
    }
    let mut failures = 0;
    for row in rows {
        if let Some(msg) = &row.failure {
            failures += 1;
            error!("alpha={} M={} N={}: {msg}", row.alpha, row.cells, row.steps);
            eprintln!("FAILED alpha={} M={} N={}: {msg}", row.alpha, row.cells, row.steps);
        }
    }
    Ok(failures)
}

fn run(cli: Cli) -> Result<usize> {
    let (opts, temporal) = match &cli.command {
        Command::Temporal(o) => (o, true),
        Command::Spatial(o) | Command::Single(o) => (o, false),
    };
    let cfg = opts.config(temporal)?;
    let rows = match cli.command {
        Command::Spatial(_) => run_spatial_study(&cfg)?,
        Command::Temporal(_) => run_temporal_study(&cfg)?,
        Command::Single(_) => run_single(&cfg)?,
    };
    report(&rows, &cfg, opts.format)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("WBFRAC_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} row(s) failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
