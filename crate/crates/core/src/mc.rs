//! Monte Carlo experiment engine: declarative scenarios, deterministic
//! trial execution, coverage and risk aggregates, and comparisons against
//! the closed-form bounds and the MLE baseline.
//!
//! Determinism contract: a [`CampaignReport`] is a pure function of its
//! [`Scenario`] — trials run on derived per-index seeds and aggregate in
//! index order, so reruns produce byte-identical JSON and CSV. Measured
//! wall time is kept in memory only and the CSV `wall_ms` column is a
//! fixed placeholder, deliberately.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    self, delta_row_multinomial, opnorm_bound_a, upper_bound, BoundConfig, BoundReport,
    ErrorBoundKind,
};
use crate::error::{CoreError, Result};
use crate::estimators::{
    run_estimator, CountData, EstimatorKind, EstimatorParams, ProjectionFlags, RANK_REL_TOL,
};
use crate::linalg::DenseMatrix;
use crate::rng::{
    derive, TAG_MASK, TAG_MULTINOMIAL, TAG_POISSON, TAG_ROW_MULTINOMIAL, TAG_TRIAL,
};
use crate::sampling::{
    random_low_rank, random_row_stochastic, sample_bernoulli_mask, sample_matrix_multinomial,
    sample_poisson, sample_row_multinomial, RowMultinomialModel, SamplingConfig,
};

/// Attached to every family sweep; the sweep samples members and runs one
/// concrete estimator, which checks consistency with the lower bound but
/// cannot certify it.
pub const FAMILY_SWEEP_LABEL: &str =
    "consistency probe over sampled family members; not a minimax certificate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    PoissonCompletion,
    MultinomialMatrix,
    MultinomialRows,
}

/// Where the true matrix comes from. Random variants draw once per
/// campaign from the scenario's base seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TruthSpec {
    /// Rates (poisson) or probabilities summing to 1 (multinomial matrix).
    Explicit { matrix: DenseMatrix },
    /// Row-stochastic probabilities with per-row trial counts.
    ExplicitRows { probabilities: DenseMatrix, trial_counts: Vec<u64> },
    /// Random nonnegative rank-r rates with the given peak.
    RandomLowRank { m: usize, n: usize, rank: usize, lambda_max: f64 },
    /// Random rank-r matrix normalized to sum 1.
    RandomProbability { m: usize, n: usize, rank: usize },
    /// Random row-stochastic rank-r rows, same trial count per row.
    RandomStochasticRows { m: usize, n: usize, rank: usize, trials_per_row: u64 },
    /// Constant rate matrix.
    Constant { m: usize, n: usize, value: f64 },
}

/// Which δ-tuned estimator family a rule drives. Rank truncation takes no
/// δ and is configured through `Fixed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TunedFamily {
    Dantzig,
    Regls,
}

/// How estimator parameters are chosen each trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EstimatorRule {
    /// Parameters given verbatim.
    Fixed { params: EstimatorParams },
    /// δ = the true residual of this trial's draw — needs the truth, so
    /// simulation-only; covers every trial by construction.
    Oracle {
        family: TunedFamily,
        #[serde(default)]
        project: ProjectionFlags,
    },
    /// δ = the concentration level computed from the truth (A(M, p, ε),
    /// or the row-multinomial level); simulation-only.
    Theorem {
        family: TunedFamily,
        #[serde(default)]
        project: ProjectionFlags,
    },
    /// δ from observed data alone: the concentration level evaluated on
    /// the unbiased plug-in matrix (counts back-scaled by 1/p). The
    /// squared-entry term inherits the plug-in's noise, biasing δ upward.
    Plugin {
        family: TunedFamily,
        #[serde(default)]
        project: ProjectionFlags,
    },
}

fn default_bound_config() -> BoundConfig {
    BoundConfig::with_defaults(0.1).expect("default bound config is valid")
}

/// One experiment: a truth, a sampling model, an estimator rule, and a
/// trial budget. Everything downstream is a deterministic function of
/// this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Identifier echoed into CSV rows; must be nonempty without commas,
    /// quotes, or line breaks.
    pub name: String,
    pub model: ModelKind,
    pub truth: TruthSpec,
    pub sampling: SamplingConfig,
    /// Grand total N; multinomial-matrix model only.
    #[serde(default)]
    pub total_count: Option<u64>,
    pub estimator: EstimatorRule,
    pub trials: u32,
    pub base_seed: u64,
    /// Constants and ε for concentration levels and attached reports.
    #[serde(default = "default_bound_config")]
    pub bound: BoundConfig,
}

/// Truth drawn/validated once per campaign.
#[derive(Debug, Clone)]
pub enum MaterializedTruth {
    Poisson { rates: DenseMatrix, rank: usize },
    MultinomialMatrix { probabilities: DenseMatrix, total: u64, rank: usize },
    Rows { model: RowMultinomialModel, rank: usize },
}

impl MaterializedTruth {
    #[must_use]
    pub fn rank(&self) -> usize {
        match self {
            MaterializedTruth::Poisson { rank, .. }
            | MaterializedTruth::MultinomialMatrix { rank, .. }
            | MaterializedTruth::Rows { rank, .. } => *rank,
        }
    }
}

fn numeric_rank(m: &DenseMatrix) -> usize {
    let sv = m.singular_values_only();
    let top = sv.first().copied().unwrap_or(0.0);
    sv.iter().filter(|&&s| s > RANK_REL_TOL * top.max(1.0)).count()
}

fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains([',', '"', '\n', '\r']) {
        return Err(CoreError::invalid(
            "scenario name must be nonempty without commas, quotes, or line breaks",
        ));
    }
    Ok(())
}

/// Draws/validates the scenario's truth and checks model consistency.
pub fn materialize_truth(scenario: &Scenario) -> Result<MaterializedTruth> {
    validate_name(&scenario.name)?;
    if scenario.trials == 0 {
        return Err(CoreError::invalid("trials must be >= 1"));
    }
    if scenario.total_count.is_some() && scenario.model != ModelKind::MultinomialMatrix {
        return Err(CoreError::invalid("total_count only applies to the multinomial matrix model"));
    }
    match (scenario.model, &scenario.truth) {
        (ModelKind::PoissonCompletion, TruthSpec::Explicit { matrix }) => {
            if matrix.min_entry() < 0.0 {
                return Err(CoreError::invalid("rate matrix must be nonnegative"));
            }
            Ok(MaterializedTruth::Poisson { rank: numeric_rank(matrix), rates: matrix.clone() })
        }
        (ModelKind::PoissonCompletion, TruthSpec::RandomLowRank { m, n, rank, lambda_max }) => {
            let rates = random_low_rank(*m, *n, *rank, *lambda_max, scenario.base_seed)?;
            Ok(MaterializedTruth::Poisson { rank: numeric_rank(&rates), rates })
        }
        (ModelKind::PoissonCompletion, TruthSpec::Constant { m, n, value }) => {
            if !(*value >= 0.0) {
                return Err(CoreError::invalid(format!("rate must be >= 0, got {value}")));
            }
            let rates = DenseMatrix::from_fn(*m, *n, |_, _| *value);
            Ok(MaterializedTruth::Poisson { rank: numeric_rank(&rates), rates })
        }
        (ModelKind::MultinomialMatrix, spec) => {
            let total = scenario.total_count.ok_or_else(|| {
                CoreError::invalid("multinomial matrix model requires total_count")
            })?;
            if total == 0 {
                return Err(CoreError::invalid("total_count must be >= 1"));
            }
            let probabilities = match spec {
                TruthSpec::Explicit { matrix } => {
                    let sum: f64 = (0..matrix.rows())
                        .flat_map(|i| (0..matrix.cols()).map(move |j| (i, j)))
                        .map(|(i, j)| matrix.get(i, j))
                        .sum();
                    if matrix.min_entry() < 0.0 || (sum - 1.0).abs() > 1e-9 {
                        return Err(CoreError::invalid(format!(
                            "probability matrix must be nonnegative and sum to 1, sum = {sum}"
                        )));
                    }
                    matrix.clone()
                }
                TruthSpec::RandomProbability { m, n, rank } => {
                    let raw = random_low_rank(*m, *n, *rank, 1.0, scenario.base_seed)?;
                    let sum: f64 = (0..raw.rows())
                        .flat_map(|i| (0..raw.cols()).map(move |j| (i, j)))
                        .map(|(i, j)| raw.get(i, j))
                        .sum();
                    raw.scale(1.0 / sum)
                }
                other => {
                    return Err(CoreError::invalid(format!(
                        "truth {other:?} does not fit the multinomial matrix model"
                    )))
                }
            };
            Ok(MaterializedTruth::MultinomialMatrix {
                rank: numeric_rank(&probabilities),
                probabilities,
                total,
            })
        }
        (ModelKind::MultinomialRows, TruthSpec::ExplicitRows { probabilities, trial_counts }) => {
            let model = RowMultinomialModel::new(probabilities.clone(), trial_counts.clone())?;
            Ok(MaterializedTruth::Rows { rank: numeric_rank(probabilities), model })
        }
        (
            ModelKind::MultinomialRows,
            TruthSpec::RandomStochasticRows { m, n, rank, trials_per_row },
        ) => {
            let probabilities = random_row_stochastic(*m, *n, *rank, scenario.base_seed)?;
            let model =
                RowMultinomialModel::new(probabilities.clone(), vec![*trials_per_row; *m])?;
            Ok(MaterializedTruth::Rows { rank: numeric_rank(&probabilities), model })
        }
        (model, spec) => Err(CoreError::invalid(format!(
            "truth {spec:?} does not fit model {model:?}"
        ))),
    }
}

/// Outcome of one sample → estimate → score cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u32,
    /// Seed the trial's sample streams were derived from.
    pub seed: u64,
    /// ‖M̂ − M‖_F (or ‖P̂ − P‖_F for the multinomial models).
    pub frobenius_error: f64,
    /// Row-weighted error ‖D^{1/2}(P̂ − P)‖_F for the rows model; equals
    /// `frobenius_error` for the others.
    pub weighted_error: f64,
    /// Truth-based residual of the draw: ‖A_Ω*(X) − pM‖,
    /// ‖X − NP‖/N, or ‖D^{-1/2}(X − DP)‖ by model.
    pub residual_opnorm: f64,
    /// δ (or the equivalent level) the resolved estimator used.
    pub threshold_used: f64,
    /// Error bound claimed by the theory for this trial's parameters;
    /// absent when no claim applies (e.g. rank budget ≠ truth rank).
    pub theorem_bound: Option<f64>,
    /// The theorem's precondition held (residual within the level, or the
    /// rank budget matches the truth rank).
    pub covered: bool,
    /// `covered` but the error exceeded `theorem_bound` — campaigns treat
    /// any occurrence as a hard failure.
    pub bound_violated: bool,
    /// Measured wall time; in-memory only to keep artifacts reproducible.
    #[serde(skip)]
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean_error: f64,
    pub median_error: f64,
    pub q10_error: f64,
    pub q90_error: f64,
    pub mean_squared_error: f64,
    /// Mean of squared `weighted_error`; the quantity MLE references
    /// speak about.
    pub mean_squared_weighted: f64,
    /// Fraction of trials whose theorem precondition held.
    pub coverage: f64,
    /// Exact expected squared MLE error, when defined for the scenario.
    pub mle_risk_reference: Option<f64>,
    /// mean_squared_weighted / mle_risk_reference.
    pub mle_risk_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignReport {
    pub scenario: Scenario,
    pub truth_rank: usize,
    pub records: Vec<TrialRecord>,
    pub aggregates: Aggregates,
    /// Closed-form bound panel for the truth (poisson and matrix
    /// multinomial; the rows model reports `row_delta_theorem` instead).
    pub bound_report: Option<BoundReport>,
    /// Concentration level of the rows model at the scenario's ε.
    pub row_delta_theorem: Option<f64>,
}

/// Type-7 quantile (linear interpolation between order statistics).
#[must_use]
pub fn quantile_type7(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty() && (0.0..=1.0).contains(&q), "need data and q in [0, 1]");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 == sorted.len() {
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Exact expected squared error of the unstructured MLE: Σ M_ij for fully
/// observed Poisson, Σ p_ij(1−p_ij)/N for the matrix multinomial, and the
/// row-weighted Σ p_ij(1−p_ij) for independent rows. Poisson with p < 1
/// has no closed MLE reference here and is rejected.
pub fn mle_risk_reference(truth: &MaterializedTruth, p: f64) -> Result<f64> {
    match truth {
        MaterializedTruth::Poisson { rates, .. } => {
            if p != 1.0 {
                return Err(CoreError::invalid(
                    "poisson MLE reference requires full observation (p = 1)",
                ));
            }
            Ok(sum_entries(rates, |v| v))
        }
        MaterializedTruth::MultinomialMatrix { probabilities, total, .. } => {
            Ok(sum_entries(probabilities, |v| v * (1.0 - v)) / *total as f64)
        }
        MaterializedTruth::Rows { model, .. } => {
            Ok(sum_entries(model.probabilities(), |v| v * (1.0 - v)))
        }
    }
}

fn sum_entries(m: &DenseMatrix, f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            acc += f(m.get(i, j));
        }
    }
    acc
}

fn max_col_sum(m: &DenseMatrix) -> f64 {
    let mut col = vec![0.0f64; m.cols()];
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            col[j] += m.get(i, j);
        }
    }
    col.iter().copied().fold(0.0, f64::max)
}

/// The concentration level the rows model's theorem prescribes for the
/// given truth: column sums from P, D from the trial counts.
pub fn row_theorem_delta(model: &RowMultinomialModel, epsilon: f64) -> Result<f64> {
    let p = model.probabilities();
    let d_min = *model.trial_counts().iter().min().expect("validated nonempty") as f64;
    delta_row_multinomial(max_col_sum(p), d_min, p.rows(), p.cols(), epsilon)
}

fn tuned_params(
    family: TunedFamily,
    project: ProjectionFlags,
    model: ModelKind,
    p: f64,
    delta: f64,
) -> Result<EstimatorParams> {
    let kind = match (model, family) {
        (ModelKind::PoissonCompletion, TunedFamily::Dantzig) => EstimatorKind::Dantzig { p, delta },
        (ModelKind::PoissonCompletion, TunedFamily::Regls) => {
            EstimatorKind::Regls { p, lambda: 2.0 * p * delta }
        }
        (ModelKind::MultinomialMatrix, TunedFamily::Dantzig) => {
            EstimatorKind::MultinomialMatrix { delta }
        }
        (ModelKind::MultinomialRows, TunedFamily::Dantzig) => {
            EstimatorKind::MultinomialRows { delta }
        }
        (_, TunedFamily::Regls) => {
            return Err(CoreError::invalid(
                "regls tuning applies to the poisson completion model only",
            ))
        }
    };
    Ok(EstimatorParams { kind, project })
}

fn check_fixed_params(scenario: &Scenario, params: &EstimatorParams) -> Result<()> {
    let ok = matches!(
        (scenario.model, &params.kind),
        (
            ModelKind::PoissonCompletion,
            EstimatorKind::Dantzig { .. } | EstimatorKind::Regls { .. } | EstimatorKind::RankTrunc { .. }
        ) | (ModelKind::MultinomialMatrix, EstimatorKind::MultinomialMatrix { .. })
            | (ModelKind::MultinomialRows, EstimatorKind::MultinomialRows { .. })
    );
    if !ok {
        return Err(CoreError::invalid(format!(
            "estimator {:?} does not fit model {:?}",
            params.kind, scenario.model
        )));
    }
    if let EstimatorKind::Dantzig { p, .. }
    | EstimatorKind::Regls { p, .. }
    | EstimatorKind::RankTrunc { p, .. } = params.kind
    {
        if p != scenario.sampling.p {
            return Err(CoreError::invalid(format!(
                "estimator p = {p} disagrees with sampling p = {}",
                scenario.sampling.p
            )));
        }
    }
    Ok(())
}

/// Runs one trial: draw the sample, resolve the estimator rule, estimate,
/// and score against the truth. Deterministic in (scenario, trial_index).
pub fn run_trial(
    scenario: &Scenario,
    truth: &MaterializedTruth,
    trial_index: u32,
) -> Result<TrialRecord> {
    let start = Instant::now();
    let trial_seed =
        derive(scenario.base_seed, TAG_TRIAL, scenario.sampling.seed, trial_index as u64);
    if let EstimatorRule::Fixed { params } = &scenario.estimator {
        check_fixed_params(scenario, params)?;
    }
    let cfg = &scenario.bound;
    let p = scenario.sampling.p;
    let r_bound = truth.rank().max(1);

    let (params, estimate, frob, weighted, residual) = match truth {
        MaterializedTruth::Poisson { rates, .. } => {
            let mask_cfg = SamplingConfig { p, seed: derive(trial_seed, TAG_MASK, 0, 0) };
            let mask = sample_bernoulli_mask(rates.rows(), rates.cols(), &mask_cfg)?;
            let obs = sample_poisson(rates, &mask, derive(trial_seed, TAG_POISSON, 0, 0))?;
            let residual = obs.adjoint().minus(&rates.scale(p)).operator_norm();
            let params = match &scenario.estimator {
                EstimatorRule::Fixed { params } => params.clone(),
                EstimatorRule::Oracle { family, project } => {
                    tuned_params(*family, *project, scenario.model, p, residual)?
                }
                EstimatorRule::Theorem { family, project } => {
                    tuned_params(*family, *project, scenario.model, p, opnorm_bound_a(rates, p, cfg)?)?
                }
                EstimatorRule::Plugin { family, project } => {
                    let plug = obs.adjoint().scale(1.0 / p);
                    tuned_params(*family, *project, scenario.model, p, opnorm_bound_a(&plug, p, cfg)?)?
                }
            };
            let est = run_estimator(&params, CountData::Masked(&obs))?;
            let frob = est.estimate.minus(rates).frobenius_norm();
            (params, est, frob, frob, residual)
        }
        MaterializedTruth::MultinomialMatrix { probabilities, total, .. } => {
            let x = sample_matrix_multinomial(
                probabilities,
                *total,
                derive(trial_seed, TAG_MULTINOMIAL, 0, 0),
            )?;
            let n = *total as f64;
            let residual = x.minus(&probabilities.scale(n)).operator_norm() / n;
            let params = match &scenario.estimator {
                EstimatorRule::Fixed { params } => params.clone(),
                EstimatorRule::Oracle { family, project } => {
                    tuned_params(*family, *project, scenario.model, 1.0, residual)?
                }
                EstimatorRule::Theorem { family, project } => {
                    let level = opnorm_bound_a(&probabilities.scale(n), 1.0, cfg)? / n;
                    tuned_params(*family, *project, scenario.model, 1.0, level)?
                }
                EstimatorRule::Plugin { family, project } => {
                    let level = opnorm_bound_a(&x, 1.0, cfg)? / n;
                    tuned_params(*family, *project, scenario.model, 1.0, level)?
                }
            };
            let est = run_estimator(&params, CountData::Total { x: &x, n: *total })?;
            let frob = est.estimate.minus(probabilities).frobenius_norm();
            (params, est, frob, frob, residual)
        }
        MaterializedTruth::Rows { model, .. } => {
            let x = sample_row_multinomial(model, derive(trial_seed, TAG_ROW_MULTINOMIAL, 0, 0))?;
            let probs = model.probabilities();
            let counts = model.trial_counts();
            let whitened = DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
                (x.get(i, j) - counts[i] as f64 * probs.get(i, j)) / (counts[i] as f64).sqrt()
            });
            let residual = whitened.operator_norm();
            let params = match &scenario.estimator {
                EstimatorRule::Fixed { params } => params.clone(),
                EstimatorRule::Oracle { family, project } => {
                    tuned_params(*family, *project, scenario.model, 1.0, residual)?
                }
                EstimatorRule::Theorem { family, project } => {
                    let level = row_theorem_delta(model, cfg.epsilon)?;
                    tuned_params(*family, *project, scenario.model, 1.0, level)?
                }
                EstimatorRule::Plugin { family, project } => {
                    let plug = DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
                        x.get(i, j) / counts[i] as f64
                    });
                    let d_min = *counts.iter().min().expect("nonempty") as f64;
                    let level = delta_row_multinomial(
                        max_col_sum(&plug),
                        d_min,
                        x.rows(),
                        x.cols(),
                        cfg.epsilon,
                    )?;
                    tuned_params(*family, *project, scenario.model, 1.0, level)?
                }
            };
            let est = run_estimator(&params, CountData::Rows { x: &x, trial_counts: counts })?;
            let diff = est.estimate.minus(probs);
            let frob = diff.frobenius_norm();
            let weighted = DenseMatrix::from_fn(diff.rows(), diff.cols(), |i, j| {
                (counts[i] as f64).sqrt() * diff.get(i, j)
            })
            .frobenius_norm();
            (params, est, frob, weighted, residual)
        }
    };

    // Theorem claim for the resolved parameters: precondition + bound.
    let (covered, theorem_bound) = match params.kind {
        EstimatorKind::Dantzig { p, delta } => (
            residual <= delta,
            Some(upper_bound(ErrorBoundKind::Dantzig { delta }, r_bound, p)?),
        ),
        EstimatorKind::Regls { p, lambda } => (
            residual <= lambda / (2.0 * p),
            Some(upper_bound(ErrorBoundKind::Regls { lambda }, r_bound, p)?),
        ),
        EstimatorKind::RankTrunc { p, rank_budget } => {
            if rank_budget == truth.rank() {
                (true, Some(upper_bound(ErrorBoundKind::RankTrunc { a_value: residual }, r_bound, p)?))
            } else {
                (false, None)
            }
        }
        EstimatorKind::MultinomialMatrix { delta } | EstimatorKind::MultinomialRows { delta } => (
            residual <= delta,
            Some(upper_bound(ErrorBoundKind::Dantzig { delta }, r_bound, 1.0)?),
        ),
    };
    let scored_error = match truth {
        MaterializedTruth::Rows { .. } => weighted,
        _ => frob,
    };
    let bound_violated = match theorem_bound {
        Some(b) => covered && scored_error > b * (1.0 + 1e-9),
        None => false,
    };

    Ok(TrialRecord {
        trial: trial_index,
        seed: trial_seed,
        frobenius_error: frob,
        weighted_error: weighted,
        residual_opnorm: residual,
        threshold_used: estimate.threshold_used,
        theorem_bound,
        covered,
        bound_violated,
        wall_ms: start.elapsed().as_millis(),
    })
}

fn compute_aggregates(records: &[TrialRecord], reference: Option<f64>) -> Aggregates {
    let errors: Vec<f64> = records.iter().map(|r| r.frobenius_error).collect();
    let n = records.len() as f64;
    let mean_squared_weighted =
        records.iter().map(|r| r.weighted_error * r.weighted_error).sum::<f64>() / n;
    Aggregates {
        mean_error: errors.iter().sum::<f64>() / n,
        median_error: quantile_type7(&errors, 0.5),
        q10_error: quantile_type7(&errors, 0.1),
        q90_error: quantile_type7(&errors, 0.9),
        mean_squared_error: errors.iter().map(|e| e * e).sum::<f64>() / n,
        mean_squared_weighted,
        coverage: records.iter().filter(|r| r.covered).count() as f64 / n,
        mle_risk_reference: reference,
        mle_risk_ratio: reference.map(|rf| mean_squared_weighted / rf),
    }
}

/// Runs every trial (in parallel, aggregated in index order), attaches the
/// closed-form panel, and hard-fails if any trial's theorem claim was
/// violated.
pub fn run_campaign(scenario: &Scenario) -> Result<CampaignReport> {
    let truth = materialize_truth(scenario)?;
    let records: Vec<TrialRecord> = (0..scenario.trials)
        .into_par_iter()
        .map(|t| run_trial(scenario, &truth, t))
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = records.iter().find(|r| r.bound_violated) {
        return Err(CoreError::numerical(format!(
            "trial {} violated its theorem bound: error {} > bound {:?}",
            bad.trial, bad.frobenius_error, bad.theorem_bound
        )));
    }
    let reference = mle_risk_reference(&truth, scenario.sampling.p).ok();
    let aggregates = compute_aggregates(&records, reference);
    let (bound_report, row_delta_theorem) = match &truth {
        MaterializedTruth::Poisson { rates, rank } => (
            Some(bounds::bound_report(rates, rank.max(&1).to_owned(), scenario.sampling.p, &scenario.bound)?),
            None,
        ),
        MaterializedTruth::MultinomialMatrix { probabilities, total, rank } => (
            Some(bounds::bound_report(
                &probabilities.scale(*total as f64),
                (*rank).max(1),
                1.0,
                &scenario.bound,
            )?),
            None,
        ),
        MaterializedTruth::Rows { model, .. } => {
            (None, Some(row_theorem_delta(model, scenario.bound.epsilon)?))
        }
    };
    Ok(CampaignReport {
        scenario: scenario.clone(),
        truth_rank: truth.rank(),
        records,
        aggregates,
        bound_report,
        row_delta_theorem,
    })
}

impl CampaignReport {
    /// Pretty JSON with a trailing newline; field order is fixed by the
    /// struct definitions, so equal reports give equal bytes.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::numerical(format!("serialization failed: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    /// Per-trial rows; floats use shortest round-trip formatting. The
    /// wall_ms column is a constant 0 so reruns stay byte-identical.
    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("scenario_id,trial,seed,error,weighted_error,residual,bound_violated,wall_ms\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},0\n",
                self.scenario.name,
                r.trial,
                r.seed,
                r.frobenius_error,
                r.weighted_error,
                r.residual_opnorm,
                r.bound_violated
            ));
        }
        s
    }

    /// Recomputes the aggregates from the records and compares exactly;
    /// used after loading artifacts.
    pub fn verify_aggregates(&self) -> Result<()> {
        let recomputed = compute_aggregates(&self.records, self.aggregates.mle_risk_reference);
        if recomputed != self.aggregates {
            return Err(CoreError::invalid(format!(
                "aggregates do not match the records: stored {:?}, recomputed {recomputed:?}",
                self.aggregates
            )));
        }
        Ok(())
    }
}

/// Summary of running one estimator over a family of hard instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilySweepReport {
    pub member_count: usize,
    pub trials_per_member: u32,
    pub per_member_mean_error: Vec<f64>,
    pub max_mean_error: f64,
    /// The lower-bound radius the sweep compares against.
    pub reference_radius: f64,
    /// max_mean_error / reference_radius; absent when the radius is 0.
    pub ratio: Option<f64>,
    /// Always [`FAMILY_SWEEP_LABEL`].
    pub label: String,
}

/// Runs a small campaign per family member (Poisson completion at the
/// given p) and reports the worst mean error against a lower-bound
/// radius. A consistency probe only — one estimator cannot witness the
/// infimum over estimators.
pub fn minimax_family_sweep(
    members: &[DenseMatrix],
    p: f64,
    rule: &EstimatorRule,
    trials_per_member: u32,
    base_seed: u64,
    reference_radius: f64,
) -> Result<FamilySweepReport> {
    if members.is_empty() {
        return Err(CoreError::invalid("family sweep needs at least one member"));
    }
    let mut per_member = Vec::with_capacity(members.len());
    for (idx, member) in members.iter().enumerate() {
        let scenario = Scenario {
            name: format!("family-member-{idx}"),
            model: ModelKind::PoissonCompletion,
            truth: TruthSpec::Explicit { matrix: member.clone() },
            sampling: SamplingConfig { p, seed: 0 },
            total_count: None,
            estimator: rule.clone(),
            trials: trials_per_member,
            base_seed: derive(base_seed, TAG_TRIAL, idx as u64, 1),
            bound: default_bound_config(),
        };
        per_member.push(run_campaign(&scenario)?.aggregates.mean_error);
    }
    let max_mean_error = per_member.iter().copied().fold(0.0, f64::max);
    Ok(FamilySweepReport {
        member_count: members.len(),
        trials_per_member,
        per_member_mean_error: per_member,
        max_mean_error,
        reference_radius,
        ratio: if reference_radius > 0.0 { Some(max_mean_error / reference_radius) } else { None },
        label: FAMILY_SWEEP_LABEL.to_string(),
    })
}
