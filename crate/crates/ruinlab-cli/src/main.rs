//! `ruinlab`: ruin probabilities of an invested reserve in a random
//! environment.
//!
//! Subcommands: `simulate` (Monte Carlo), `solve` (boundary-value ODE for
//! exponential claims), `residual` (integro-differential residual of a
//! tabulated candidate), `compare` (cross-method report with a PASS/FAIL
//! gate), `report` (horizon and smoothness diagnostics).
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical failure,
//! 3 comparison FAIL, 64 usage error. `RUINLAB_THREADS` caps the worker
//! count (0 = auto).

mod output;

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use output::{num, OutputWriter};
use ruinlab::ide::{ide_residual, CandidateFn, SmoothCandidate};
use ruinlab::model::ModelConfig;
use ruinlab::ode::{solve_bvp_on, BvpAnchors};
use ruinlab::sim::{estimate_ruin, horizon_diagnostic};
use ruinlab::validation::{
    compare, smoothness_diagnostic, ErrorModel, PointEstimate, SmoothnessInput,
    SmoothnessVerdict,
};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_COMPARE_FAIL: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Debug)]
enum CliError {
    /// Bad inputs: config files, CSV schemas, flag values.
    Validation(String),
    /// The computation itself failed.
    Numerical(String),
    /// The comparison gate failed (max z above threshold).
    CompareFail(f64),
}

impl From<ruinlab::model::ConfigError> for CliError {
    fn from(e: ruinlab::model::ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ruinlab::sim::SimError> for CliError {
    fn from(e: ruinlab::sim::SimError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<ruinlab::ode::OdeError> for CliError {
    fn from(e: ruinlab::ode::OdeError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<ruinlab::ide::IdeError> for CliError {
    fn from(e: ruinlab::ide::IdeError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<ruinlab::validation::ValidationError> for CliError {
    fn from(e: ruinlab::validation::ValidationError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("io error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(format!("csv error: {e}"))
    }
}

#[derive(Parser, Debug)]
#[command(name = "ruinlab", version, about, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Model configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the Monte Carlo step numerics.mc_step.
    #[arg(long)]
    h: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo ruin estimates over a list of capitals.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated capitals, e.g. `1,2,5`.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        u: Vec<f64>,
        /// Initial regime.
        #[arg(long, default_value_t = 0)]
        i: usize,
        /// Path count (default: numerics.n_paths).
        #[arg(long)]
        paths: Option<u64>,
        /// Horizon (default: numerics.horizon).
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the exponential-claims boundary-value problem.
    Solve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Anchor CSV: regime,psi_min,psi_min_se,dpsi_min,dpsi_min_se,psi_max,psi_max_se
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long)]
        u_min: f64,
        #[arg(long)]
        u_max: f64,
        /// Collocation grid size (default: numerics.bvp_points).
        #[arg(long)]
        points: Option<usize>,
        /// Extra capitals injected as exact grid nodes, e.g. `1,2,4`.
        #[arg(long, value_delimiter = ',')]
        include: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integro-differential residual of a tabulated survival candidate.
    Residual {
        #[command(flatten)]
        config: ConfigArgs,
        /// Solution grid CSV: u,regime,phi,phi_p,phi_pp
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two estimate files at requested points (PASS iff max z <= 3).
    Compare {
        /// First input CSV (simulate or solve schema).
        #[arg(long)]
        a: PathBuf,
        /// Second input CSV (simulate or solve schema).
        #[arg(long)]
        b: PathBuf,
        /// Points CSV: u,regime
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Diagnostics: horizon refinement or smoothness consistency.
    Report {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_parser = ["horizon", "smoothness"])]
        kind: String,
        /// Capital (horizon kind).
        #[arg(long, default_value_t = 1.0)]
        u: f64,
        #[arg(long, default_value_t = 0)]
        i: usize,
        /// Comma-separated horizons (horizon kind).
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<f64>>,
        /// Uniform grid start/stop/spacing (smoothness kind).
        #[arg(long, default_value_t = 0.5)]
        u_start: f64,
        #[arg(long, default_value_t = 3.0)]
        u_stop: f64,
        #[arg(long, default_value_t = 0.1)]
        du: f64,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successful exits; anything else is
            // a usage error.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(CliError::CompareFail(z)) => {
            println!("FAIL max z = {}", num(z));
            ExitCode::from(EXIT_COMPARE_FAIL)
        }
    }
}

/// `RUINLAB_THREADS` caps the rayon pool; 0 or unset means auto.
fn init_thread_pool() {
    if let Ok(v) = std::env::var("RUINLAB_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

struct LoadedConfig {
    model: ModelConfig,
    bytes: Vec<u8>,
    seed: u64,
}

fn load_config(args: &ConfigArgs) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(&args.config)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Validation("config is not valid UTF-8".into()))?;
    let mut model = ModelConfig::from_toml_str(&text)?;
    if let Some(h) = args.h {
        if !(h > 0.0) {
            return Err(CliError::Validation(format!("--h {h} must be > 0")));
        }
        model.numerics.mc_step = h;
    }
    let seed = args.seed.unwrap_or(model.seed);
    Ok(LoadedConfig { model, bytes, seed })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            config,
            u,
            i,
            paths,
            horizon,
            out,
        } => {
            let loaded = load_config(&config)?;
            let writer = OutputWriter::new("simulate", Some(&loaded.bytes), Some(loaded.seed));
            let n_paths = paths.unwrap_or(loaded.model.numerics.n_paths);
            let horizon = horizon.unwrap_or(loaded.model.numerics.horizon);
            let estimates = estimate_ruin(&loaded.model, &u, i, horizon, n_paths, loaded.seed)?;
            let mut csv = String::from("u,i,horizon,n_paths,psi_hat,std_err,h\n");
            for e in &estimates {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    num(e.u),
                    e.i,
                    num(e.horizon),
                    e.n_paths,
                    num(e.psi_hat),
                    num(e.std_err),
                    num(e.h)
                ));
            }
            writer.write(&out, &csv)?;
            Ok(())
        }
        Command::Solve {
            config,
            anchors,
            u_min,
            u_max,
            points,
            include,
            out,
        } => {
            let loaded = load_config(&config)?;
            let writer = OutputWriter::new("solve", Some(&loaded.bytes), Some(loaded.seed));
            let anchors = read_anchors(&anchors, loaded.model.regime_count())?;
            let n = points.unwrap_or(loaded.model.numerics.bvp_points);
            let grid = solve_bvp_on(
                &loaded.model,
                (u_min, u_max),
                &anchors,
                n,
                include.as_deref().unwrap_or(&[]),
            )?;
            let mut csv = String::from("u,regime,psi,psi_p,psi_pp\n");
            for (j, &u) in grid.us.iter().enumerate() {
                for regime in 0..loaded.model.regime_count() {
                    csv.push_str(&format!(
                        "{},{},{},{},{}\n",
                        num(u),
                        regime,
                        num(grid.psi[regime][j]),
                        num(grid.psi_p[regime][j]),
                        num(grid.psi_pp[regime][j])
                    ));
                }
            }
            writer.write(&out, &csv)?;
            eprintln!(
                "max interior residual {:.3e}; monotone per regime: {:?}",
                grid.max_interior_residual, grid.monotone
            );
            Ok(())
        }
        Command::Residual { config, grid, out } => {
            let loaded = load_config(&config)?;
            let writer = OutputWriter::new("residual", Some(&loaded.bytes), None);
            let table = read_solution_grid(&grid, loaded.model.regime_count())?;
            let fns: Vec<CandidateFn> = (0..loaded.model.regime_count())
                .map(|regime| {
                    CandidateFn::from_grid(
                        &table.us,
                        &table.value[regime],
                        &table.d1[regime],
                        &table.d2[regime],
                    )
                })
                .collect();
            let candidate = SmoothCandidate::survival(fns);
            let mut csv = String::from("u,regime,residual\n");
            for &u in &table.us {
                let res = ide_residual(&candidate, u, &loaded.model)?;
                for (regime, r) in res.iter().enumerate() {
                    csv.push_str(&format!("{},{regime},{}\n", num(u), num(*r)));
                }
            }
            writer.write(&out, &csv)?;
            Ok(())
        }
        Command::Compare { a, b, points, out } => {
            let writer = OutputWriter::new("compare", None, None);
            let a_points = read_estimates(&a)?;
            let b_points = read_estimates(&b)?;
            let pts = read_points(&points)?;
            let report = compare(&a_points, &b_points, &pts)?;
            let mut csv = String::from("u,regime,a,b,diff,z\n");
            for row in &report.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    num(row.u),
                    row.regime,
                    num(row.a),
                    num(row.b),
                    num(row.diff),
                    num(row.z)
                ));
            }
            writer.write(&out, &csv)?;
            if report.passes(3.0) {
                println!("PASS max z = {}", num(report.max_z));
                Ok(())
            } else {
                Err(CliError::CompareFail(report.max_z))
            }
        }
        Command::Report {
            config,
            kind,
            u,
            i,
            horizons,
            u_start,
            u_stop,
            du,
            paths,
            horizon,
            out,
        } => {
            let loaded = load_config(&config)?;
            let writer = OutputWriter::new("report", Some(&loaded.bytes), Some(loaded.seed));
            let n_paths = paths.unwrap_or(loaded.model.numerics.n_paths);
            match kind.as_str() {
                "horizon" => {
                    let ladder = horizons.ok_or_else(|| {
                        CliError::Validation("--horizons is required for --kind horizon".into())
                    })?;
                    let diag =
                        horizon_diagnostic(&loaded.model, u, i, &ladder, n_paths, loaded.seed)?;
                    let mut csv = String::from("horizon,psi_hat,std_err\n");
                    for row in &diag.rows {
                        csv.push_str(&format!(
                            "{},{},{}\n",
                            num(row.horizon),
                            num(row.psi_hat),
                            num(row.std_err)
                        ));
                    }
                    writer.write(&out, &csv)?;
                    println!("converged = {}", diag.converged);
                    Ok(())
                }
                "smoothness" => {
                    if !(du > 0.0 && u_stop > u_start && u_start > 0.0) {
                        return Err(CliError::Validation(
                            "need 0 < u_start < u_stop and du > 0".into(),
                        ));
                    }
                    let steps = ((u_stop - u_start) / du).round() as usize;
                    let us: Vec<f64> =
                        (0..=steps).map(|j| u_start + du * j as f64).collect();
                    let horizon = horizon.unwrap_or(loaded.model.numerics.horizon);
                    let est =
                        estimate_ruin(&loaded.model, &us, i, horizon, n_paths, loaded.seed)?;
                    let input = SmoothnessInput {
                        us: us.clone(),
                        psi: est.iter().map(|e| e.psi_hat).collect(),
                        std_err: est.iter().map(|e| e.std_err).collect(),
                        n_paths,
                        coupling: ErrorModel::MonotoneCoupled,
                    };
                    let report = smoothness_diagnostic(&input)?;
                    let mut csv = String::from("u,psi_hat,std_err,d2_fine,d2_coarse,gap_sigma\n");
                    for row in &report.rows {
                        let j = us.iter().position(|&x| x == row.u).unwrap();
                        csv.push_str(&format!(
                            "{},{},{},{},{},{}\n",
                            num(row.u),
                            num(est[j].psi_hat),
                            num(est[j].std_err),
                            num(row.d2_fine),
                            num(row.d2_coarse),
                            num(row.gap_sigma)
                        ));
                    }
                    writer.write(&out, &csv)?;
                    match &report.verdict {
                        SmoothnessVerdict::ConsistentWithC2 => {
                            println!("verdict = consistent-with-C2 (consistency check, not a proof)")
                        }
                        SmoothnessVerdict::Inconsistent => println!("verdict = inconsistent"),
                        SmoothnessVerdict::Inconclusive(reason) => {
                            println!("verdict = inconclusive: {reason}")
                        }
                    }
                    Ok(())
                }
                other => Err(CliError::Validation(format!("unknown report kind '{other}'"))),
            }
        }
    }
}

fn read_anchors(path: &Path, regimes: usize) -> Result<BvpAnchors, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut psi_min = vec![None; regimes];
    let mut dpsi_min = vec![None; regimes];
    let mut psi_max = vec![None; regimes];
    for record in reader.deserialize() {
        let row: AnchorRow = record?;
        if row.regime >= regimes {
            return Err(CliError::Validation(format!(
                "anchor regime {} out of range (K = {regimes})",
                row.regime
            )));
        }
        psi_min[row.regime] = Some((row.psi_min, row.psi_min_se));
        dpsi_min[row.regime] = Some((row.dpsi_min, row.dpsi_min_se));
        psi_max[row.regime] = Some((row.psi_max, row.psi_max_se));
    }
    let unwrap_all = |v: Vec<Option<(f64, f64)>>, what: &str| -> Result<Vec<(f64, f64)>, CliError> {
        v.into_iter()
            .enumerate()
            .map(|(regime, o)| {
                o.ok_or_else(|| {
                    CliError::Validation(format!("anchor file misses {what} for regime {regime}"))
                })
            })
            .collect()
    };
    Ok(BvpAnchors {
        psi_min: unwrap_all(psi_min, "psi_min")?,
        dpsi_min: unwrap_all(dpsi_min, "dpsi_min")?,
        psi_max: unwrap_all(psi_max, "psi_max")?,
    })
}

#[derive(Debug, serde::Deserialize)]
struct AnchorRow {
    regime: usize,
    psi_min: f64,
    psi_min_se: f64,
    dpsi_min: f64,
    dpsi_min_se: f64,
    psi_max: f64,
    psi_max_se: f64,
}

struct GridTable {
    us: Vec<f64>,
    value: Vec<Vec<f64>>,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
}

fn read_solution_grid(path: &Path, regimes: usize) -> Result<GridTable, CliError> {
    #[derive(serde::Deserialize)]
    struct Row {
        u: f64,
        regime: usize,
        phi: f64,
        phi_p: f64,
        phi_pp: f64,
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows: Vec<Row> = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    let mut us: Vec<f64> = rows.iter().map(|r| r.u).collect();
    us.sort_by(f64::total_cmp);
    us.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * (1.0 + a.abs()));
    if us.len() < 2 {
        return Err(CliError::Validation(
            "solution grid needs at least two distinct u values".into(),
        ));
    }
    let mut value = vec![vec![f64::NAN; us.len()]; regimes];
    let mut d1 = vec![vec![f64::NAN; us.len()]; regimes];
    let mut d2 = vec![vec![f64::NAN; us.len()]; regimes];
    for row in &rows {
        if row.regime >= regimes {
            return Err(CliError::Validation(format!(
                "grid regime {} out of range (K = {regimes})",
                row.regime
            )));
        }
        let j = us
            .iter()
            .position(|&x| (x - row.u).abs() < 1e-12 * (1.0 + x.abs()))
            .expect("u collected above");
        value[row.regime][j] = row.phi;
        d1[row.regime][j] = row.phi_p;
        d2[row.regime][j] = row.phi_pp;
    }
    for regime in 0..regimes {
        if value[regime].iter().any(|v| v.is_nan()) {
            return Err(CliError::Validation(format!(
                "solution grid misses rows for regime {regime}"
            )));
        }
    }
    Ok(GridTable { us, value, d1, d2 })
}

/// Accepts both the simulate schema (`u,i,...,psi_hat,std_err,...`) and the
/// solve schema (`u,regime,psi,...`, zero uncertainty).
fn read_estimates(path: &Path) -> Result<Vec<PointEstimate>, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let u_col = col("u")
        .ok_or_else(|| CliError::Validation(format!("{}: no 'u' column", path.display())))?;
    let regime_col = col("i").or_else(|| col("regime")).ok_or_else(|| {
        CliError::Validation(format!("{}: no 'i' or 'regime' column", path.display()))
    })?;
    let (value_col, se_col) = if let Some(v) = col("psi_hat") {
        (v, col("std_err"))
    } else if let Some(v) = col("psi") {
        (v, None)
    } else if let Some(v) = col("value") {
        (v, col("std_err"))
    } else {
        return Err(CliError::Validation(format!(
            "{}: no 'psi_hat', 'psi' or 'value' column",
            path.display()
        )));
    };
    let parse = |field: &str, what: &str| -> Result<f64, CliError> {
        field
            .trim()
            .parse::<f64>()
            .map_err(|_| CliError::Validation(format!("bad {what} value '{field}'")))
    };
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        out.push(PointEstimate {
            u: parse(&record[u_col], "u")?,
            regime: record[regime_col]
                .trim()
                .parse::<usize>()
                .map_err(|_| CliError::Validation("bad regime value".into()))?,
            value: parse(&record[value_col], "value")?,
            std_err: match se_col {
                Some(c) => parse(&record[c], "std_err")?,
                None => 0.0,
            },
        });
    }
    Ok(out)
}

fn read_points(path: &Path) -> Result<Vec<(f64, usize)>, CliError> {
    #[derive(serde::Deserialize)]
    struct Row {
        u: f64,
        regime: usize,
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in reader.deserialize() {
        let row: Row = record?;
        out.push((row.u, row.regime));
    }
    Ok(out)
}
