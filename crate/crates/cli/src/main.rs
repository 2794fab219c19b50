//! `countrank`: command-line frontend for the count-matrix estimation
//! pipeline. Subcommands cover simulation of masked count observations,
//! spectral estimation, error-bound reports, packing construction, Monte
//! Carlo campaigns, and calibration of the concentration constant.
//!
//! Exit codes: 0 success, 1 command-line misuse, 2 invalid input data,
//! 3 numerical failure. Every randomized subcommand takes an explicit
//! `--seed`; outputs are pure functions of flags, inputs, and seeds.
//! Orchestration here is single-threaded — parallelism lives in the
//! library's campaign runner.

mod error;
mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use countrank_core::bounds::{
    bound_report, calibrate_c, standard_grid, BoundConfig, CalibrationScenario, DEFAULT_C,
    DEFAULT_C0,
};
use countrank_core::constructions::{default_packing_target, gv_packing_with_budget,
    DEFAULT_ATTEMPT_BUDGET};
use countrank_core::estimators::{
    estimate_dantzig, estimate_multinomial_matrix, estimate_rank_truncated,
    estimate_regls, estimate_row_multinomial, EstimateResult, ProjectionFlags,
};
use countrank_core::mc::{run_campaign, Scenario};
use countrank_core::rng::{derive, TAG_MASK, TAG_POISSON};
use countrank_core::sampling::{sample_bernoulli_mask, sample_poisson};
use countrank_core::{DenseMatrix, SamplingConfig};

use error::{CliError, Result};

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                return 0;
            }
            eprint!("{err}");
            return 1;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

#[derive(Parser)]
#[command(name = "countrank", version, about = "Low-rank estimation from sampled count matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a Bernoulli cell mask and Poisson counts from a rate matrix.
    Simulate {
        /// Dense CSV of nonnegative Poisson rates.
        #[arg(long)]
        rates: PathBuf,
        /// Cell observation probability in (0, 1].
        #[arg(long)]
        p: f64,
        /// Seed for mask and count draws (decimal or 0x-prefixed hex).
        #[arg(long, value_parser = parse_seed)]
        seed: u64,
        /// Output observation file (sparse i,j,count triples).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one estimator on observed counts.
    Estimate {
        /// Observation file from `simulate` (Poisson estimators).
        #[arg(long)]
        obs: Option<PathBuf>,
        /// Dense count matrix, CSV or MatrixMarket (multinomial estimators).
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: KindOpt,
        /// Override the sampling probability recorded in the observation
        /// file (Poisson estimators only).
        #[arg(long)]
        p: Option<f64>,
        /// Residual threshold for the constrained and multinomial kinds.
        #[arg(long)]
        delta: Option<f64>,
        /// Penalty weight for the regularized least-squares kind.
        #[arg(long)]
        lambda: Option<f64>,
        /// Target rank for the truncation kind.
        #[arg(long)]
        rank_budget: Option<usize>,
        /// Post-projection constraints; repeat the flag to combine.
        #[arg(long, value_enum)]
        project: Vec<ProjectOpt>,
        /// Dense CSV of the estimated matrix.
        #[arg(long)]
        out_matrix: PathBuf,
        /// Optional JSON report (threshold, output rank, residual).
        #[arg(long)]
        out_report: Option<PathBuf>,
    },
    /// Compute the error-bound report for a known rate matrix.
    Bounds {
        /// Dense CSV of nonnegative Poisson rates.
        #[arg(long)]
        rates: PathBuf,
        /// Rank to use in the bound formulas.
        #[arg(long)]
        rank: usize,
        /// Cell observation probability in (0, 1].
        #[arg(long)]
        p: f64,
        /// Tail probability level in (0, 1/2).
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        /// Leading constant of the spectral concentration level.
        #[arg(long, default_value_t = DEFAULT_C)]
        c: f64,
        /// Constant inside the logarithmic rate threshold.
        #[arg(long, default_value_t = DEFAULT_C0)]
        c0: f64,
        /// Output JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a binary packing with pairwise Hamming distance >= min-dist.
    Pack {
        /// Codeword length in bits.
        #[arg(long)]
        bits: usize,
        /// Minimum pairwise Hamming distance (at most bits/2).
        #[arg(long)]
        min_dist: usize,
        /// Number of codewords; defaults to the exponential packing size.
        #[arg(long)]
        target: Option<usize>,
        #[arg(long, value_parser = parse_seed)]
        seed: u64,
        /// Rejection-sampling attempt budget.
        #[arg(long, default_value_t = DEFAULT_ATTEMPT_BUDGET)]
        budget: u64,
        /// Output JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo campaign described by a TOML scenario file.
    Bench {
        /// Scenario description (name, model, truth, sampling, estimator,
        /// trials, base_seed; see the scenario schema in the library).
        #[arg(long)]
        config: PathBuf,
        /// Override the configured trial count.
        #[arg(long)]
        trials: Option<u32>,
        /// Override the configured base seed.
        #[arg(long, value_parser = parse_seed)]
        base_seed: Option<u64>,
        /// Override the scenario name.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out_json: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Fit the smallest concentration constant reaching a coverage target.
    Calibrate {
        /// Tail probability level in (0, 1/2).
        #[arg(long)]
        epsilon: f64,
        /// Monte Carlo trials per grid scenario.
        #[arg(long)]
        trials: u32,
        #[arg(long, value_parser = parse_seed)]
        seed: u64,
        /// Coverage target in (0, 1]; defaults to 1 - 2*epsilon.
        #[arg(long)]
        target: Option<f64>,
        /// TOML grid of [[scenario]] tables (m, n, r, lambda_max, p);
        /// defaults to the built-in grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Output JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindOpt {
    /// Soft thresholding at delta, back-scaled by 1/p.
    Dantzig,
    /// Soft thresholding of the back-scaled embedding at lambda/(2p^2).
    Regls,
    /// Best rank-r approximation of the back-scaled embedding.
    RankTrunc,
    /// Soft thresholding of a total-count normalized matrix.
    MultinomialMatrix,
    /// Row-normalized soft thresholding for per-row multinomials.
    MultinomialRows,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProjectOpt {
    Nonnegative,
    GlobalSimplex,
    RowSimplex,
}

fn parse_seed(s: &str) -> std::result::Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| format!("'{s}' is not a u64 seed (decimal or 0x hex)"))
}

fn projection_flags(opts: &[ProjectOpt]) -> ProjectionFlags {
    let mut flags = ProjectionFlags::NONE;
    for opt in opts {
        match opt {
            ProjectOpt::Nonnegative => flags.nonnegative = true,
            ProjectOpt::GlobalSimplex => flags.global_simplex = true,
            ProjectOpt::RowSimplex => flags.row_simplex = true,
        }
    }
    flags
}

fn check_probability(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(CliError::usage(format!("--p must lie in (0, 1], got {p}")));
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(CliError::usage(format!("--epsilon must lie in (0, 1/2), got {epsilon}")));
    }
    Ok(())
}

fn write_or_print(out: Option<&PathBuf>, contents: &str) -> Result<()> {
    match out {
        Some(path) => io::write_text(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { rates, p, seed, out } => cmd_simulate(&rates, p, seed, &out),
        Command::Estimate {
            obs,
            counts,
            kind,
            p,
            delta,
            lambda,
            rank_budget,
            project,
            out_matrix,
            out_report,
        } => cmd_estimate(EstimateArgs {
            obs,
            counts,
            kind,
            p,
            delta,
            lambda,
            rank_budget,
            project,
            out_matrix,
            out_report,
        }),
        Command::Bounds { rates, rank, p, epsilon, c, c0, out } => {
            cmd_bounds(&rates, rank, p, epsilon, c, c0, out.as_ref())
        }
        Command::Pack { bits, min_dist, target, seed, budget, out } => {
            cmd_pack(bits, min_dist, target, seed, budget, out.as_ref())
        }
        Command::Bench { config, trials, base_seed, name, out_json, out_csv } => {
            cmd_bench(&config, trials, base_seed, name, &out_json, &out_csv)
        }
        Command::Calibrate { epsilon, trials, seed, target, grid, out } => {
            cmd_calibrate(epsilon, trials, seed, target, grid.as_ref(), out.as_ref())
        }
    }
}

fn cmd_simulate(rates: &PathBuf, p: f64, seed: u64, out: &PathBuf) -> Result<()> {
    check_probability(p)?;
    let rates = io::read_rate_matrix(rates)?;
    let cfg = SamplingConfig::new(p, derive(seed, TAG_MASK, 0, 0))?;
    let mask = sample_bernoulli_mask(rates.rows(), rates.cols(), &cfg)?;
    let obs = sample_poisson(&rates, &mask, derive(seed, TAG_POISSON, 0, 0))?;
    io::write_observations(&obs, p, seed, out)
}

struct EstimateArgs {
    obs: Option<PathBuf>,
    counts: Option<PathBuf>,
    kind: KindOpt,
    p: Option<f64>,
    delta: Option<f64>,
    lambda: Option<f64>,
    rank_budget: Option<usize>,
    project: Vec<ProjectOpt>,
    out_matrix: PathBuf,
    out_report: Option<PathBuf>,
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let project = projection_flags(&args.project);
    let needs = |flag: &str, kind: &str| {
        CliError::usage(format!("--{flag} is required for --kind {kind}"))
    };
    let forbid = |given: bool, flag: &str, kind: &str| -> Result<()> {
        if given {
            Err(CliError::usage(format!("--{flag} does not apply to --kind {kind}")))
        } else {
            Ok(())
        }
    };
    if let Some(delta) = args.delta {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(CliError::usage(format!("--delta must be finite and >= 0, got {delta}")));
        }
    }
    if let Some(lambda) = args.lambda {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(CliError::usage(format!("--lambda must be finite and >= 0, got {lambda}")));
        }
    }
    if let Some(p) = args.p {
        check_probability(p)?;
    }

    // Resolve every flag before touching any file, so misuse always exits
    // as misuse even when the input path is bogus.
    enum Tuning {
        Dantzig(f64),
        Regls(f64),
        RankTrunc(usize),
        MultinomialMatrix(f64),
        MultinomialRows(f64),
    }
    let tuning = match args.kind {
        KindOpt::Dantzig => {
            forbid(args.lambda.is_some(), "lambda", "dantzig")?;
            forbid(args.rank_budget.is_some(), "rank-budget", "dantzig")?;
            Tuning::Dantzig(args.delta.ok_or_else(|| needs("delta", "dantzig"))?)
        }
        KindOpt::Regls => {
            forbid(args.delta.is_some(), "delta", "regls")?;
            forbid(args.rank_budget.is_some(), "rank-budget", "regls")?;
            Tuning::Regls(args.lambda.ok_or_else(|| needs("lambda", "regls"))?)
        }
        KindOpt::RankTrunc => {
            forbid(args.delta.is_some(), "delta", "rank-trunc")?;
            forbid(args.lambda.is_some(), "lambda", "rank-trunc")?;
            Tuning::RankTrunc(args.rank_budget.ok_or_else(|| needs("rank-budget", "rank-trunc"))?)
        }
        KindOpt::MultinomialMatrix => Tuning::MultinomialMatrix(
            args.delta.ok_or_else(|| needs("delta", "multinomial-matrix"))?,
        ),
        KindOpt::MultinomialRows => Tuning::MultinomialRows(
            args.delta.ok_or_else(|| needs("delta", "multinomial-rows"))?,
        ),
    };
    let poisson_kind =
        matches!(args.kind, KindOpt::Dantzig | KindOpt::Regls | KindOpt::RankTrunc);
    if poisson_kind {
        forbid(args.counts.is_some(), "counts", "dantzig/regls/rank-trunc")?;
        if args.obs.is_none() {
            return Err(needs("obs", "dantzig/regls/rank-trunc"));
        }
    } else {
        let kind_name = match args.kind {
            KindOpt::MultinomialMatrix => "multinomial-matrix",
            _ => "multinomial-rows",
        };
        forbid(args.obs.is_some(), "obs", kind_name)?;
        forbid(args.p.is_some(), "p", kind_name)?;
        forbid(args.lambda.is_some(), "lambda", kind_name)?;
        forbid(args.rank_budget.is_some(), "rank-budget", kind_name)?;
        if args.counts.is_none() {
            return Err(needs("counts", kind_name));
        }
    }

    let result: EstimateResult = if poisson_kind {
        let obs_path = args.obs.as_ref().expect("checked above");
        let (obs, header_p, _seed) = io::read_observations(obs_path)?;
        let p = args.p.unwrap_or(header_p);
        check_probability(p).map_err(|_| {
            CliError::data(format!(
                "{}: recorded sampling probability {header_p} is invalid",
                obs_path.display()
            ))
        })?;
        match tuning {
            Tuning::Dantzig(delta) => estimate_dantzig(&obs, p, delta, project)?,
            Tuning::Regls(lambda) => estimate_regls(&obs, p, lambda, project)?,
            Tuning::RankTrunc(budget) => estimate_rank_truncated(&obs, p, budget, project)?,
            _ => unreachable!("poisson tuning only"),
        }
    } else {
        let x = io::read_count_matrix(args.counts.as_ref().expect("checked above"))?;
        match tuning {
            Tuning::MultinomialMatrix(delta) => {
                let total: u64 = total_count(&x);
                estimate_multinomial_matrix(&x, total, delta, project)?
            }
            Tuning::MultinomialRows(delta) => {
                let trial_counts: Vec<u64> = (0..x.rows())
                    .map(|i| (0..x.cols()).map(|j| x.get(i, j) as u64).sum())
                    .collect();
                estimate_row_multinomial(&x, &trial_counts, delta, project)?
            }
            _ => unreachable!("multinomial tuning only"),
        }
    };

    io::write_dense_csv(&result.estimate, &args.out_matrix)?;
    if let Some(report_path) = args.out_report {
        io::write_text(&report_path, &io::to_pretty_json(&result)?)?;
    }
    Ok(())
}

/// Counts parse as exact integers, so summing the f64 cells stays exact
/// until the total itself leaves the integer-exact range.
fn total_count(x: &DenseMatrix) -> u64 {
    let mut total = 0u64;
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            total += x.get(i, j) as u64;
        }
    }
    total
}

fn cmd_bounds(
    rates: &PathBuf,
    rank: usize,
    p: f64,
    epsilon: f64,
    c: f64,
    c0: f64,
    out: Option<&PathBuf>,
) -> Result<()> {
    check_probability(p)?;
    check_epsilon(epsilon)?;
    if !(c > 0.0 && c.is_finite()) || !(c0 > 0.0 && c0.is_finite()) {
        return Err(CliError::usage(format!(
            "--c and --c0 must be positive and finite, got {c} and {c0}"
        )));
    }
    if rank == 0 {
        return Err(CliError::usage("--rank must be at least 1".to_string()));
    }
    let rates = io::read_rate_matrix(rates)?;
    let cfg = BoundConfig::new(c, c0, epsilon)?;
    let report = bound_report(&rates, rank, p, &cfg)?;
    write_or_print(out, &io::to_pretty_json(&report)?)
}

fn cmd_pack(
    bits: usize,
    min_dist: usize,
    target: Option<usize>,
    seed: u64,
    budget: u64,
    out: Option<&PathBuf>,
) -> Result<()> {
    if bits == 0 {
        return Err(CliError::usage("--bits must be at least 1".to_string()));
    }
    if min_dist == 0 || min_dist > bits / 2 {
        return Err(CliError::usage(format!(
            "--min-dist must lie in 1..={} for {bits}-bit words, got {min_dist}",
            bits / 2
        )));
    }
    if budget == 0 {
        return Err(CliError::usage("--budget must be at least 1".to_string()));
    }
    let target = match target {
        Some(0) => return Err(CliError::usage("--target must be at least 1".to_string())),
        Some(t) => t,
        None => default_packing_target(bits)?,
    };
    let packing = gv_packing_with_budget(bits, min_dist, target, seed, budget)?;
    write_or_print(out, &io::to_pretty_json(&packing)?)
}

fn cmd_bench(
    config: &PathBuf,
    trials: Option<u32>,
    base_seed: Option<u64>,
    name: Option<String>,
    out_json: &PathBuf,
    out_csv: &PathBuf,
) -> Result<()> {
    let text = io::read_text(config)?;
    let mut scenario: Scenario = toml::from_str(&text)
        .map_err(|e| CliError::data(format!("{}: {e}", config.display())))?;
    if let Some(trials) = trials {
        if trials == 0 {
            return Err(CliError::usage("--trials must be at least 1".to_string()));
        }
        scenario.trials = trials;
    }
    if let Some(seed) = base_seed {
        scenario.base_seed = seed;
    }
    if let Some(name) = name {
        if name.is_empty() || name.contains([',', '"', '\n', '\r']) {
            return Err(CliError::usage(
                "--name must be nonempty without commas, quotes, or line breaks".to_string(),
            ));
        }
        scenario.name = name;
    }
    let report = run_campaign(&scenario)?;
    io::write_text(out_json, &report.to_json()?)?;
    io::write_text(out_csv, &report.to_csv())
}

#[derive(serde::Deserialize)]
struct GridFile {
    scenario: Vec<CalibrationScenario>,
}

fn cmd_calibrate(
    epsilon: f64,
    trials: u32,
    seed: u64,
    target: Option<f64>,
    grid: Option<&PathBuf>,
    out: Option<&PathBuf>,
) -> Result<()> {
    check_epsilon(epsilon)?;
    if trials == 0 {
        return Err(CliError::usage("--trials must be at least 1".to_string()));
    }
    if let Some(target) = target {
        if !(target > 0.0 && target <= 1.0) {
            return Err(CliError::usage(format!("--target must lie in (0, 1], got {target}")));
        }
    }
    let scenarios = match grid {
        Some(path) => {
            let text = io::read_text(path)?;
            let file: GridFile = toml::from_str(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            if file.scenario.is_empty() {
                return Err(CliError::data(format!(
                    "{}: grid file declares no [[scenario]] tables",
                    path.display()
                )));
            }
            file.scenario
        }
        None => standard_grid(),
    };
    let report = calibrate_c(&scenarios, epsilon, trials, seed, target)?;
    write_or_print(out, &io::to_pretty_json(&report)?)
}
