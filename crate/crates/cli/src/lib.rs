//! Subcommands behind the `embedded-eigs` binary.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use embedded_eigs::format::{self, real};
use embedded_eigs::gluer::{build, thread_potential, Eigen};
use embedded_eigs::model::{BoundaryAngle, EnergyPoint, Potential, SolutionTrace};
use embedded_eigs::verify::{decay_exponent, jacobi_matrix, oscillatory_sum, truncated_spectrum};

pub use config::RunConfig;

/// Exit status when every check ran but at least one tolerance failed.
pub const EXIT_TOLERANCE: i32 = 2;
/// Exit status for any error; a record is written to standard error.
pub const EXIT_ERROR: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] embedded_eigs::Error),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    pub fn kind(&self) -> String {
        match self {
            CliError::Core(e) => {
                let debug = format!("{e:?}");
                debug.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Core").to_string()
            }
            CliError::Io(_) => "Io".into(),
            CliError::Config(_) => "Config".into(),
        }
    }

    /// `[error]` table with `kind` and `message`.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record {
            kind: String,
            message: String,
        }
        #[derive(Serialize)]
        struct Doc {
            error: Record,
        }
        toml::to_string(&Doc { error: Record { kind: self.kind(), message: self.to_string() } })
            .expect("error record serializes")
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected START..END, got {s:?}"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if a >= b {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok((a, b))
}

#[derive(Debug, Parser)]
#[command(name = "embedded-eigs", version, about = "Potentials with prescribed embedded eigenvalues")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a potential from a configuration file.
    Construct(ConstructArgs),
    /// Re-thread a potential file and check it against the configured tolerances.
    Verify(VerifyArgs),
    /// Truncated-matrix eigenvalues and eigenvectors near the recorded energies.
    Spectrum(SpectrumArgs),
    /// Write `n,V(n)` rows for a range of sites.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct Overrides {
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long)]
    pub target_exponent: Option<f64>,
    #[arg(long)]
    pub stop_factor: Option<f64>,
    /// Record every site in START..END.
    #[arg(long, value_parser = parse_range)]
    pub full_trace_window: Option<(u64, u64)>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(p) = self.target_exponent {
            cfg.target_exponent = p;
        }
        if let Some(f) = self.stop_factor {
            cfg.stop_factor = f;
        }
        if let Some(w) = self.full_trace_window {
            cfg.full_trace_window = Some(w);
        }
    }
}

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Potential file; `<out>/potential.toml` when omitted.
    #[arg(long)]
    pub potential: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub potential: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    pub truncation: usize,
    /// Also list every eigenvalue of the matrix with boundary angle `--theta`.
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    pub theta: f64,
    /// Directory for `spectrum.toml`; standard output only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub potential: PathBuf,
    #[arg(long, value_parser = parse_range)]
    pub range: Option<(u64, u64)>,
    /// Output table; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Whether every tolerance check passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    ToleranceFailure,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::ToleranceFailure => EXIT_TOLERANCE,
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Construct(a) => cmd_construct(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Spectrum(a) => cmd_spectrum(&a),
        Command::Export(a) => cmd_export(&a),
    }
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::parse(&read(path)?)?;
    overrides.apply(&mut cfg);
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct EigenSummary {
    id: usize,
    energy: String,
    theta: String,
    l2_total: String,
    last_decade_fraction: String,
    abs_exponent: String,
    fit_from: u64,
}

#[derive(Debug, Serialize)]
struct ConstructSummary {
    horizon: u64,
    k2: u64,
    c_global: String,
    c_global_site: u64,
    horizon_exhausted: bool,
    steps: usize,
    pieces: usize,
    eigenvalues: Vec<EigenSummary>,
}

pub fn cmd_construct(args: &ConstructArgs) -> Result<Outcome, CliError> {
    let cfg = load_config(&args.config, &args.overrides)?;
    let plan = cfg.plan()?;
    let result = build(&plan, cfg.horizon)?;
    let out = &args.out;
    write(&out.join("potential.toml"), &format::write_potential(&result.potential))?;
    for g in &result.eigen {
        write(&out.join(format!("trace_{}.csv", g.id)), &format::trace_table(&g.trace))?;
    }
    write(&out.join("schedule.csv"), &format::schedule_table(&result.schedule))?;
    write(&out.join("l2.csv"), &format::l2_table(&result))?;
    write(&out.join("run.log"), &result.run_log())?;
    let summary = ConstructSummary {
        horizon: cfg.horizon,
        k2: result.k2,
        c_global: real(result.c_global.0),
        c_global_site: result.c_global.1,
        horizon_exhausted: result.horizon_exhausted,
        steps: result.schedule.len(),
        pieces: result.potential.pieces().len(),
        eigenvalues: result
            .eigen
            .iter()
            .map(|g| EigenSummary {
                id: g.id,
                energy: real(g.energy.energy()),
                theta: real(g.theta.radians()),
                l2_total: real(g.l2.total),
                last_decade_fraction: real(g.l2.last_decade_fraction),
                abs_exponent: real(g.l2.abs_exponent),
                fit_from: g.fit_from,
            })
            .collect(),
    };
    let text = toml::to_string(&summary).expect("summary serializes");
    write(&out.join("summary.toml"), &text)?;
    print!("{text}");
    Ok(Outcome::Pass)
}

/// One line of the verification report.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: String,
    pub bound: String,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    pass: bool,
    checks: Vec<Check>,
}

fn check(name: impl Into<String>, value: f64, bound: f64, pass: bool) -> Check {
    Check { name: name.into(), value: real(value), bound: real(bound), pass }
}

fn tail(trace: &SolutionTrace, from: u64) -> SolutionTrace {
    SolutionTrace { id: trace.id, energy: trace.energy, samples: trace.window(from, u64::MAX).to_vec() }
}

fn config_eigen(cfg: &RunConfig) -> Result<Vec<Eigen>, CliError> {
    let angles = cfg.boundary_angles()?;
    cfg.energies
        .iter()
        .zip(angles)
        .enumerate()
        .map(|(id, (&e, theta))| Ok(Eigen { id, energy: EnergyPoint::new(e)?, theta }))
        .collect()
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<Outcome, CliError> {
    let cfg = load_config(&args.config, &args.overrides)?;
    cfg.validate()?;
    let path = args.potential.clone().unwrap_or_else(|| args.out.join("potential.toml"));
    let potential = format::read_potential(&read(&path)?)?;
    let eigen = config_eigen(&cfg)?;
    let tol = &cfg.tolerances;
    let mut checks = Vec::new();

    let bad = potential.replay_mismatches();
    checks.push(check("replay_mismatches", bad.len() as f64, 0.0, bad.is_empty()));
    let (c, _) = potential.measured_c_global();
    checks.push(check("c_global_recorded", c, potential.c_global, c.to_bits() == potential.c_global.to_bits()));
    let meta_ok = potential.eigenvalues.len() == eigen.len()
        && potential.eigenvalues.iter().zip(&eigen).all(|(m, e)| m.energy == e.energy.energy() && m.theta == e.theta.radians());
    checks.push(check("metadata_matches_config", meta_ok as u8 as f64, 1.0, meta_ok));

    let threaded = thread_potential(&potential, &eigen, cfg.per_decade, cfg.full_trace_window)?;
    for g in &threaded {
        let id = g.id;
        match decay_exponent(&tail(&g.trace, g.fit_from), 0) {
            Ok(d) => checks.push(check(format!("decay_slope[{id}]"), d.slope, tol.max_decay_slope, d.slope <= tol.max_decay_slope)),
            Err(e) => checks.push(Check {
                name: format!("decay_slope[{id}]"),
                value: e.to_string(),
                bound: real(tol.max_decay_slope),
                pass: false,
            }),
        }
        let l2 = &g.l2;
        checks.push(check(
            format!("last_decade_fraction[{id}]"),
            l2.last_decade_fraction,
            tol.max_last_decade_fraction,
            l2.last_decade_fraction <= tol.max_last_decade_fraction,
        ));
        checks.push(check(
            format!("abs_exponent[{id}]"),
            l2.abs_exponent,
            tol.max_abs_exponent,
            l2.abs_exponent <= tol.max_abs_exponent,
        ));
        if let Some((lo, _)) = cfg.full_trace_window {
            let b = potential.piece_at(lo)?.b;
            let osc = oscillatory_sum(&g.trace, b, lo)?;
            let bound = tol.max_oscillatory_c.unwrap_or(f64::INFINITY);
            checks.push(check(format!("oscillatory_c[{id}]"), osc.certified_c, bound, osc.certified_c <= bound));
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    let text = toml::to_string(&VerifyReport { pass, checks }).expect("report serializes");
    write(&args.out.join("verify.toml"), &text)?;
    print!("{text}");
    Ok(if pass { Outcome::Pass } else { Outcome::ToleranceFailure })
}

#[derive(Debug, Serialize)]
struct TargetRow {
    energy: String,
    theta: String,
    nearest_eigenvalue: String,
    distance: String,
    eigenvector_overlap: String,
    residual_norm: String,
    boundary_term: String,
}

#[derive(Debug, Serialize)]
struct SpectrumDoc {
    truncation: usize,
    targets: Vec<TargetRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eigenvalues: Option<Vec<String>>,
}

fn recorded_targets(p: &Potential) -> Result<Vec<(EnergyPoint, BoundaryAngle)>, CliError> {
    p.eigenvalues
        .iter()
        .map(|m| Ok((EnergyPoint::new(m.energy)?, BoundaryAngle::new(m.theta)?)))
        .collect()
}

pub fn cmd_spectrum(args: &SpectrumArgs) -> Result<Outcome, CliError> {
    let potential = format::read_potential(&read(&args.potential)?)?;
    if args.truncation < 100 {
        return Err(embedded_eigs::Error::Size(format!("truncation {} is below 100", args.truncation)).into());
    }
    let matrix = jacobi_matrix(&potential, BoundaryAngle::new(args.theta)?, args.truncation)?;
    let targets = recorded_targets(&potential)?;
    let report = truncated_spectrum(&potential, &targets, args.truncation)?;
    let eigenvalues = args.all.then(|| matrix.eigenvalues().into_iter().map(real).collect());
    let doc = SpectrumDoc {
        truncation: report.truncation,
        targets: report
            .targets
            .iter()
            .zip(&targets)
            .map(|(t, (_, theta))| TargetRow {
                energy: real(t.energy),
                theta: real(theta.radians()),
                nearest_eigenvalue: real(t.nearest_eigenvalue),
                distance: real((t.nearest_eigenvalue - t.energy).abs()),
                eigenvector_overlap: real(t.eigenvector_overlap),
                residual_norm: real(t.residual_norm),
                boundary_term: real(t.boundary_term),
            })
            .collect(),
        eigenvalues,
    };
    let text = toml::to_string(&doc).expect("spectrum report serializes");
    if let Some(dir) = &args.out {
        write(&dir.join("spectrum.toml"), &text)?;
    }
    print!("{text}");
    Ok(Outcome::Pass)
}

pub fn cmd_export(args: &ExportArgs) -> Result<Outcome, CliError> {
    let potential = format::read_potential(&read(&args.potential)?)?;
    let (lo, hi) = args.range.unwrap_or((0, potential.horizon()));
    if hi > potential.horizon() {
        return Err(embedded_eigs::Error::OutOfHorizon { site: hi, horizon: potential.horizon() }.into());
    }
    let table = format::potential_table(&potential, lo, hi);
    match &args.out {
        Some(path) => write(path, &table)?,
        None => print!("{table}"),
    }
    Ok(Outcome::Pass)
}
