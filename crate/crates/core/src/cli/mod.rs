//! Command-line front end: scenario files in, CSV/JSON reports out.

pub mod checks;
pub mod config;
pub mod figures;
pub mod observe;
pub mod run;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::lierank;

use checks::{CheckReport, RunParams};
use config::{Family, ModelSpec, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(name = "qmanifold", version, about = "Simulate monitored quantum systems and certify their confining manifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run trajectories and write `<stem>_trajectories.csv` and `<stem>_summary.json`.
    Simulate(Common),
    /// Lie-algebra rank of the scenario's vector fields (`<stem>_rank.json`).
    Rank(Common),
    /// QND laws: phases, coherence ratios, z invariants, explicit populations;
    /// or the repetition-code laws.
    QndCheck(Common),
    /// Gaussian-kernel filters: Riccati closed forms and same-record agreement.
    GaussCheck(Common),
    /// Thirteen-variable emission laws.
    EmissionCheck(Common),
    /// Drive-free dispersive filter vs the full SME.
    DispersiveCheck(Common),
    /// Built-in Fig. 1–3 panels (or the one given by `--config`).
    Figures(Common),
}

#[derive(Clone, Debug, Default, Args)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Override `run.dt`.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Override `run.n_traj`.
    #[arg(long)]
    pub traj: Option<usize>,
}

impl Common {
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.run.seed = s;
            cfg.rank.seed = s;
        }
        if let Some(dt) = self.dt {
            cfg.run.dt = dt;
        }
        if let Some(n) = self.traj {
            cfg.run.n_traj = n;
        }
        cfg.validate()
    }

    fn load(&self) -> Result<ScenarioConfig> {
        let path = self.config.as_ref().ok_or_else(|| Error::Config("--config PATH is required".into()))?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = ScenarioConfig::from_toml(&text)?;
        self.apply(&mut cfg)?;
        Ok(cfg)
    }
}

/// Outcome of a command: whether every check or certificate passed, plus
/// the lines to print.
pub struct Outcome {
    pub pass: bool,
    pub lines: Vec<String>,
}

pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ERROR: i32 = 3;

/// Parse arguments, run, print, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(out) => {
            for l in &out.lines {
                println!("{l}");
            }
            if out.pass {
                0
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
                _ => EXIT_ERROR,
            }
        }
    }
}

pub fn execute(cmd: &Command) -> Result<Outcome> {
    let common = match cmd {
        Command::Simulate(c)
        | Command::Rank(c)
        | Command::QndCheck(c)
        | Command::GaussCheck(c)
        | Command::EmissionCheck(c)
        | Command::DispersiveCheck(c)
        | Command::Figures(c) => c,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::ResourceLimit(e.to_string()))?;
    pool.install(|| match cmd {
        Command::Simulate(c) => simulate(c),
        Command::Rank(c) => rank(c),
        Command::QndCheck(c) => check(c, "qnd_check", qnd_check),
        Command::GaussCheck(c) => check(c, "gauss_check", gauss_check),
        Command::EmissionCheck(c) => check(c, "emission_check", emission_check),
        Command::DispersiveCheck(c) => check(c, "dispersive_check", dispersive_check),
        Command::Figures(c) => figures(c),
    })
}

fn simulate(c: &Common) -> Result<Outcome> {
    let cfg = c.load()?;
    let s = run::simulate_to(&cfg, &c.out)?;
    let mut lines = vec![format!(
        "{}: {} trajectories ({} failed), dt = {}, seed = {}, {:.2} s -> {}",
        cfg.stem(),
        s.n_traj,
        s.n_failed,
        s.dt,
        s.seed,
        s.wall_time_s,
        c.out.display()
    )];
    let mut pass = true;
    if let Some(cert) = &s.certificate {
        lines.extend(certificate_lines(&cfg.stem(), cert));
        pass = cert.pass;
    }
    Ok(Outcome { pass, lines })
}

fn certificate_lines(stem: &str, cert: &run::Certificate) -> Vec<String> {
    cert.rows
        .iter()
        .map(|r| {
            let op = match r.kind {
                run::CertificateKind::Collapse => "<=",
                _ => ">=",
            };
            format!("{} [{stem}] t={} {:?} {}: {:.6e} ({op} {:e})", if r.pass { "PASS" } else { "FAIL" }, r.t, r.kind, r.columns.join(","), r.value, r.bound)
        })
        .collect()
}

/// Sample-state support for truncated oscillators: levels below the top two.
fn rank_support(cfg: &ScenarioConfig) -> Option<Vec<usize>> {
    let (d, n_max) = match &cfg.model {
        ModelSpec::Fluorescence { n_max, .. } | ModelSpec::Xp { n_max, .. } => (1, *n_max),
        ModelSpec::Dispersive { shifts, n_max, .. } => (shifts.len(), *n_max),
        _ => return None,
    };
    Some((0..d).flat_map(|k| (0..n_max - 1).map(move |n| k * (n_max + 1) + n)).collect())
}

fn rank(c: &Common) -> Result<Outcome> {
    let cfg = c.load()?;
    let built = cfg.build()?;
    let mut opts = cfg.rank.options();
    opts.support = rank_support(&cfg);
    let report = lierank::manifold_dimension_with(&built.model, &opts)?;
    std::fs::create_dir_all(&c.out)?;
    run::write_json(&c.out.join(format!("{}_rank.json", cfg.stem())), &report)?;
    let line = format!(
        "{}: M = {} ({}), depth reached {}, {} candidates{}",
        cfg.stem(),
        report.m,
        if report.converged { "converged" } else { "lower bound" },
        report.depth_reached,
        report.candidates_evaluated,
        if report.heuristic { ", heuristic (truncated oscillator)" } else { "" }
    );
    Ok(Outcome { pass: true, lines: vec![line] })
}

/// Ensemble parameters of a scenario's `[run]` table.
pub fn run_params(cfg: &ScenarioConfig) -> RunParams {
    RunParams { t_final: cfg.run.t_final, dt: cfg.run.dt, n_traj: cfg.run.n_traj, seed: cfg.run.seed }
}

fn check(c: &Common, suffix: &str, f: fn(&ScenarioConfig) -> Result<CheckReport>) -> Result<Outcome> {
    let cfg = c.load()?;
    let report = f(&cfg)?;
    write_report(&c.out, &format!("{}_{suffix}", cfg.stem()), &report)?;
    Ok(Outcome { pass: report.pass, lines: report.lines() })
}

/// `<name>.json` with the full report and `<name>_<table>.csv` per table.
pub fn write_report(out: &Path, name: &str, report: &CheckReport) -> Result<()> {
    std::fs::create_dir_all(out)?;
    run::write_json(&out.join(format!("{name}.json")), report)?;
    for t in &report.tables {
        checks::write_table_csv(&out.join(format!("{name}_{}.csv", t.name)), t)?;
    }
    Ok(())
}

/// QND invariants and explicit populations, or the repetition-code laws.
pub fn qnd_check(cfg: &ScenarioConfig) -> Result<CheckReport> {
    let built = cfg.build()?;
    let run = run_params(cfg);
    match (&cfg.model, &built.family) {
        (ModelSpec::QutritQnd { rabi: None, .. }, Family::Qnd(qnd)) => {
            let mut rep = checks::qnd_invariant_suite(qnd, &built.rho0, &[], &run)?;
            rep.absorb(checks::prop5_suite(qnd, &built.rho0, &run)?);
            Ok(rep)
        }
        (ModelSpec::Repetition { eta, gamma_flip, .. }, _) if *gamma_flip == 0.0 => checks::repetition_suite(*eta, &built.rho0, &run),
        _ => Err(Error::Config("qnd-check needs a qutrit-qnd model without Rabi drive, or a repetition model without bit flips".into())),
    }
}

/// Gaussian-kernel suite for a fluorescence or X/P scenario.
pub fn gauss_check(cfg: &ScenarioConfig) -> Result<CheckReport> {
    let built = cfg.build()?;
    let n_max = match &cfg.model {
        ModelSpec::Fluorescence { n_max, .. } | ModelSpec::Xp { n_max, .. } => *n_max,
        _ => 0,
    };
    let (family, w0) = match built.family {
        Family::Fluorescence { params, w0, kernel: true } => (Ok(params), w0),
        Family::Xp { params, w0 } => (Err(params), w0),
        _ => return Err(Error::Config("gauss-check needs a fluorescence (without kerr/homodyne_only) or xp model".into())),
    };
    let run = run_params(cfg);
    checks::gauss_suite(&checks::GaussCase { family, w0, n_max, run, reduction_dt: run.dt / 10.0 })
}

/// Thirteen-variable emission suite (equal rates).
pub fn emission_check(cfg: &ScenarioConfig) -> Result<CheckReport> {
    let built = cfg.build()?;
    match &cfg.model {
        ModelSpec::Emission { rate1, rate2, eta1, eta2 } if rate1 == rate2 => checks::emission_suite(*rate1, *eta1, *eta2, &built.rho0, &run_params(cfg), 48),
        _ => Err(Error::Config("emission-check needs an emission model with equal rates".into())),
    }
}

/// Drive-free dispersive filter vs the full SME.
pub fn dispersive_check(cfg: &ScenarioConfig) -> Result<CheckReport> {
    let built = cfg.build()?;
    match (&cfg.model, &built.family) {
        (ModelSpec::Dispersive { n_max, .. }, Family::Dispersive { params, c0, w0 }) => checks::dispersive_suite(params, c0, w0, *n_max, &run_params(cfg)),
        _ => Err(Error::Config("dispersive-check needs a dispersive model".into())),
    }
}

fn figures(c: &Common) -> Result<Outcome> {
    let configs = match &c.config {
        Some(_) => vec![c.load()?],
        None => {
            let mut all = figures::builtin_configs()?;
            for cfg in &mut all {
                c.apply(cfg)?;
            }
            all
        }
    };
    let results = figures::run_figures(&configs, &c.out)?;
    let mut lines = Vec::new();
    for r in &results {
        if let Some(cert) = &r.certificate {
            lines.extend(certificate_lines(&r.panel, cert));
        }
        lines.push(format!("{} {}: {} trajectories, {} failed, {:.1} s", if r.pass { "PASS" } else { "FAIL" }, r.panel, r.n_traj, r.n_failed, r.wall_time_s));
    }
    Ok(Outcome { pass: results.iter().all(|r| r.pass), lines })
}
