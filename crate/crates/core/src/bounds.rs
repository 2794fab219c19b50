//! Closed-form theoretical quantities: the variance proxy σ̃, the
//! operator-norm concentration level A(M, p, ε), per-estimator error
//! bounds, Poisson tail and KL bounds, the row-multinomial concentration
//! level, minimax lower-bound rates, and an empirical calibration routine
//! for the universal constant C.
//!
//! All logarithms are natural. The constants C and C₀ are not pinned by
//! theory; they are configuration with documented defaults, and
//! [`calibrate_c`] fits the smallest C achieving a target empirical
//! coverage on a scenario grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{derive, TAG_CALIBRATION};
use crate::sampling::{random_low_rank, sample_bernoulli_mask, sample_poisson, SamplingConfig};

/// Default second-moment constant.
pub const DEFAULT_C0: f64 = 8.0;

/// Default universal constant: √(4·C₀).
pub const DEFAULT_C: f64 = 5.656854249492381;

/// Constants and failure probability entering the concentration level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub c: f64,
    pub c0: f64,
    pub epsilon: f64,
}

impl BoundConfig {
    pub fn new(c: f64, c0: f64, epsilon: f64) -> Result<Self> {
        if !(c > 0.0) || !(c0 > 0.0) {
            return Err(CoreError::invalid(format!("constants must be positive, got C={c}, C0={c0}")));
        }
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(CoreError::invalid(format!("epsilon must lie in (0, 1/2), got {epsilon}")));
        }
        Ok(BoundConfig { c, c0, epsilon })
    }

    /// Default constants with the given failure probability.
    pub fn with_defaults(epsilon: f64) -> Result<Self> {
        BoundConfig::new(DEFAULT_C, DEFAULT_C0, epsilon)
    }
}

fn check_rate_matrix(m: &DenseMatrix) -> Result<()> {
    if m.min_entry() < 0.0 {
        return Err(CoreError::invalid("rate matrix must be nonnegative"));
    }
    Ok(())
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(CoreError::invalid(format!("p must lie in (0, 1], got {p}")));
    }
    Ok(())
}

/// Row/column second-moment proxy:
/// max_i √(Σ_j M_ij + (1−p)M_ij²) + max_j √(Σ_i M_ij + (1−p)M_ij²).
pub fn sigma_tilde(m: &DenseMatrix, p: f64) -> Result<f64> {
    check_rate_matrix(m)?;
    check_p(p)?;
    Ok(axis_sqrt_max(m, |v| v + (1.0 - p) * v * v))
}

/// Exact per-entry variance version: with var = pM_ij + p(1−p)M_ij²,
/// returns max_i √(Σ_j var) + max_j √(Σ_i var). Equals √p · σ̃ by the
/// factorization var = p·(M_ij + (1−p)M_ij²); computed directly from the
/// variances so the identity is testable, not definitional.
pub fn variance_matrix_sigma(m: &DenseMatrix, p: f64) -> Result<f64> {
    check_rate_matrix(m)?;
    check_p(p)?;
    Ok(axis_sqrt_max(m, |v| p * v + p * (1.0 - p) * v * v))
}

fn axis_sqrt_max(m: &DenseMatrix, per_entry: impl Fn(f64) -> f64) -> f64 {
    let mut row_sums = vec![0.0f64; m.rows()];
    let mut col_sums = vec![0.0f64; m.cols()];
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let v = per_entry(m.get(i, j));
            row_sums[i] += v;
            col_sums[j] += v;
        }
    }
    let max_row = row_sums.iter().copied().fold(0.0, f64::max);
    let max_col = col_sums.iter().copied().fold(0.0, f64::max);
    max_row.sqrt() + max_col.sqrt()
}

/// High-probability operator-norm level for the centered observations:
/// A = 2√p·σ̃(M) + 8ε/√(mn) + C·max{λmax, 4·ln(2mn/ε)}·√(ln((m∨n)/ε)).
pub fn opnorm_bound_a(m: &DenseMatrix, p: f64, cfg: &BoundConfig) -> Result<f64> {
    let st = sigma_tilde(m, p)?;
    let (rows, cols) = (m.rows() as f64, m.cols() as f64);
    let lambda_max = m.max_entry();
    let eps = cfg.epsilon;
    let dim = rows.max(cols);
    Ok(2.0 * p.sqrt() * st
        + 8.0 * eps / (rows * cols).sqrt()
        + cfg.c * lambda_max.max(4.0 * (2.0 * rows * cols / eps).ln()) * (dim / eps).ln().sqrt())
}

/// Which estimator's error bound to evaluate; the payload is δ, λ, or the
/// concentration level A respectively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorBoundKind {
    Dantzig { delta: f64 },
    Regls { lambda: f64 },
    RankTrunc { a_value: f64 },
}

/// Frobenius-error bound for a rank-r truth: 4√(2r)δ/p, 2√(2r)λ/p², or
/// 2√(2r)A/p by kind.
pub fn upper_bound(kind: ErrorBoundKind, r: usize, p: f64) -> Result<f64> {
    check_p(p)?;
    if r == 0 {
        return Err(CoreError::invalid("rank must be >= 1"));
    }
    let sqrt2r = (2.0 * r as f64).sqrt();
    let value = match kind {
        ErrorBoundKind::Dantzig { delta } => {
            check_nonneg(delta, "delta")?;
            4.0 * sqrt2r * delta / p
        }
        ErrorBoundKind::Regls { lambda } => {
            check_nonneg(lambda, "lambda")?;
            2.0 * sqrt2r * lambda / (p * p)
        }
        ErrorBoundKind::RankTrunc { a_value } => {
            check_nonneg(a_value, "a_value")?;
            2.0 * sqrt2r * a_value / p
        }
    };
    Ok(value)
}

fn check_nonneg(v: f64, name: &str) -> Result<()> {
    if !(v >= 0.0) {
        return Err(CoreError::invalid(format!("{name} must be >= 0, got {v}")));
    }
    Ok(())
}

/// Upper-tail bound for X ~ Poisson(λ):
/// P(X − λ ≥ t) ≤ min{1, exp(−t²/(2(λ + t/3))), [t ≥ λ]·exp(−3t/8)}.
#[must_use]
pub fn poisson_tail_bound(lambda: f64, t: f64) -> f64 {
    assert!(lambda >= 0.0 && t > 0.0, "requires lambda >= 0 and t > 0");
    let bernstein = (-t * t / (2.0 * (lambda + t / 3.0))).exp();
    let mut bound = bernstein.min(1.0);
    if t >= lambda {
        bound = bound.min((-3.0 * t / 8.0).exp());
    }
    bound
}

/// KL divergence between Poisson(λ) and Poisson(λ′):
/// λ′ − λ + λ·ln(λ/λ′), with KL(0‖λ′) = λ′ and KL(λ‖0) = +∞ for λ > 0.
#[must_use]
pub fn poisson_kl(lambda: f64, lambda_prime: f64) -> f64 {
    assert!(lambda >= 0.0 && lambda_prime >= 0.0, "rates must be nonnegative");
    if lambda == 0.0 {
        return lambda_prime;
    }
    if lambda_prime == 0.0 {
        return f64::INFINITY;
    }
    lambda_prime - lambda + lambda * (lambda / lambda_prime).ln()
}

/// Concentration level for the row-whitened multinomial residual:
/// max{2√(max{1, max_col_sum}·ln((m+n)/ε)), (4/(3√D_min))·ln((m+n)/ε)}.
pub fn delta_row_multinomial(
    max_col_sum: f64,
    d_min: f64,
    m: usize,
    n: usize,
    epsilon: f64,
) -> Result<f64> {
    if !(max_col_sum >= 0.0) || !(d_min > 0.0) || m == 0 || n == 0 {
        return Err(CoreError::invalid("inputs must be positive"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(CoreError::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let log_term = ((m + n) as f64 / epsilon).ln();
    let first = 2.0 * (max_col_sum.max(1.0) * log_term).sqrt();
    let second = 4.0 / (3.0 * d_min.sqrt()) * log_term;
    Ok(first.max(second))
}

/// Minimax radius/probability pair from the variance-driven lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceLowerBound {
    /// √r·σ₁/(8√(2p)).
    pub radius: f64,
    /// 1/2 − 8·ln 2/(m∨n); can be ≤ 0 for small dimensions.
    pub probability: f64,
    /// True when the probability is ≤ 0 and the statement carries no
    /// information. Never clamped silently.
    pub vacuous: bool,
}

/// The variance-driven minimax rate. `max_dim` is m∨n, which the
/// probability term depends on.
pub fn lower_bound_variance_rate(
    r: usize,
    p: f64,
    sigma1: f64,
    max_dim: usize,
) -> Result<VarianceLowerBound> {
    check_p(p)?;
    if r == 0 || max_dim == 0 {
        return Err(CoreError::invalid("rank and dimensions must be >= 1"));
    }
    check_nonneg(sigma1, "sigma1")?;
    let radius = (r as f64).sqrt() * sigma1 / (8.0 * (2.0 * p).sqrt());
    let probability = 0.5 - 8.0 * std::f64::consts::LN_2 / max_dim as f64;
    Ok(VarianceLowerBound { radius, probability, vacuous: probability <= 0.0 })
}

/// Expected-squared-error lower bound driven by missingness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquaredLowerBound {
    /// (1/64)·((1−p)/p)·r·σ₂².
    pub floor_form: f64,
    /// (r·σ₂²/8)·max{½·⌊1/(2p)⌋, 1−p} — the tighter displayed form.
    pub max_form: f64,
    /// The construction behind the bound requires p ≥ r/(2(m∧n)).
    pub valid: bool,
}

/// The missingness-driven minimax rate. `min_dim` is m∧n, which the
/// validity condition depends on.
pub fn lower_bound_squared_rate(
    r: usize,
    p: f64,
    sigma2: f64,
    min_dim: usize,
) -> Result<SquaredLowerBound> {
    check_p(p)?;
    if r == 0 || min_dim == 0 {
        return Err(CoreError::invalid("rank and dimensions must be >= 1"));
    }
    check_nonneg(sigma2, "sigma2")?;
    let rs2 = r as f64 * sigma2 * sigma2;
    let half_floor = 0.5 * (1.0 / (2.0 * p)).floor();
    Ok(SquaredLowerBound {
        floor_form: (1.0 - p) / p * rs2 / 64.0,
        max_form: rs2 / 8.0 * half_floor.max(1.0 - p),
        valid: p >= r as f64 / (2.0 * min_dim as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingRegime {
    /// λmax ≥ ln(m∨n): sampling rate compares against r·ln d/d.
    HighIntensity,
    /// λmax < ln(m∨n): sampling rate compares against r·ln³d/(d·λmax²).
    LowIntensity,
}

/// Where p stands relative to the sampling-rate thresholds under which the
/// upper and lower bounds match up to constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingRegimeReport {
    pub dim: usize,
    pub log_dim: f64,
    pub regime: MatchingRegime,
    /// Threshold of the applicable regime.
    pub threshold: f64,
    /// p / threshold; ≥ 1 means the condition holds with that slack.
    pub slack: f64,
    pub satisfied: bool,
    /// Threshold of the other regime, echoed for context.
    pub other_threshold: f64,
}

pub fn matching_regime_check(
    m: usize,
    n: usize,
    r: usize,
    p: f64,
    lambda_max: f64,
) -> Result<MatchingRegimeReport> {
    check_p(p)?;
    if m == 0 || n == 0 || r == 0 {
        return Err(CoreError::invalid("dimensions and rank must be >= 1"));
    }
    if !(lambda_max > 0.0) {
        return Err(CoreError::invalid(format!("lambda_max must be > 0, got {lambda_max}")));
    }
    let dim = m.max(n);
    let log_dim = (dim as f64).ln();
    let high = r as f64 * log_dim / dim as f64;
    let low = r as f64 * log_dim.powi(3) / (dim as f64 * lambda_max * lambda_max);
    let regime = if lambda_max >= log_dim {
        MatchingRegime::HighIntensity
    } else {
        MatchingRegime::LowIntensity
    };
    let (threshold, other_threshold) = match regime {
        MatchingRegime::HighIntensity => (high, low),
        MatchingRegime::LowIntensity => (low, high),
    };
    Ok(MatchingRegimeReport {
        dim,
        log_dim,
        regime,
        threshold,
        slack: p / threshold,
        satisfied: p >= threshold,
        other_threshold,
    })
}

/// Every closed-form quantity for one (M, r, p, ε, C) tuple, with inputs
/// echoed so the JSON artifact is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub p: f64,
    pub lambda_max: f64,
    pub epsilon: f64,
    pub c: f64,
    pub c0: f64,
    pub sigma_tilde: f64,
    pub a_value: f64,
    /// Bounds at the concentration level: δ = A for dantzig/rank_trunc,
    /// λ = 2pA for regls.
    pub ub_dantzig: f64,
    pub ub_regls: f64,
    pub ub_rank_trunc: f64,
    /// Tightest class constants containing M: σ₁ from row/column sums, σ₂
    /// from row/column squared sums.
    pub sigma1: f64,
    pub sigma2: f64,
    pub lb_variance_radius: f64,
    pub lb_variance_prob: f64,
    pub lb_variance_vacuous: bool,
    pub lb_squared_floor: f64,
    pub lb_squared_max_form: f64,
    pub lb_squared_valid: bool,
}

pub fn bound_report(m: &DenseMatrix, r: usize, p: f64, cfg: &BoundConfig) -> Result<BoundReport> {
    check_rate_matrix(m)?;
    if r == 0 || r > m.rows().min(m.cols()) {
        return Err(CoreError::invalid(format!(
            "rank {r} outside 1..={}",
            m.rows().min(m.cols())
        )));
    }
    let st = sigma_tilde(m, p)?;
    let a = opnorm_bound_a(m, p, cfg)?;
    let sigma1 = axis_sqrt_max(m, |v| v) / 2.0;
    let sigma2 = axis_sqrt_max(m, |v| v * v) / 2.0;
    let lb_var = lower_bound_variance_rate(r, p, sigma1, m.rows().max(m.cols()))?;
    let lb_sq = lower_bound_squared_rate(r, p, sigma2, m.rows().min(m.cols()))?;
    Ok(BoundReport {
        m: m.rows(),
        n: m.cols(),
        r,
        p,
        lambda_max: m.max_entry(),
        epsilon: cfg.epsilon,
        c: cfg.c,
        c0: cfg.c0,
        sigma_tilde: st,
        a_value: a,
        ub_dantzig: upper_bound(ErrorBoundKind::Dantzig { delta: a }, r, p)?,
        ub_regls: upper_bound(ErrorBoundKind::Regls { lambda: 2.0 * p * a }, r, p)?,
        ub_rank_trunc: upper_bound(ErrorBoundKind::RankTrunc { a_value: a }, r, p)?,
        sigma1,
        sigma2,
        lb_variance_radius: lb_var.radius,
        lb_variance_prob: lb_var.probability,
        lb_variance_vacuous: lb_var.vacuous,
        lb_squared_floor: lb_sq.floor_form,
        lb_squared_max_form: lb_sq.max_form,
        lb_squared_valid: lb_sq.valid,
    })
}

/// One cell of the calibration grid: a random rank-r truth at the given
/// size, peak rate, and sampling probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationScenario {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub lambda_max: f64,
    pub p: f64,
}

/// Default grid: three shapes, three ranks, two peak rates, four sampling
/// probabilities.
#[must_use]
pub fn standard_grid() -> Vec<CalibrationScenario> {
    let mut grid = Vec::new();
    for &(m, n) in &[(50, 50), (100, 100), (100, 30)] {
        for &r in &[1usize, 2, 5] {
            for &lambda_max in &[5.0, 20.0] {
                for &p in &[0.3, 0.5, 0.7, 1.0] {
                    grid.push(CalibrationScenario { m, n, r, lambda_max, p });
                }
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCalibration {
    pub scenario: CalibrationScenario,
    /// Smallest C putting this scenario's empirical coverage at or above
    /// the target.
    pub c_required: f64,
    /// Coverage this scenario attains at the globally calibrated C.
    pub coverage_at_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub epsilon: f64,
    pub target_coverage: f64,
    pub trials: u32,
    pub seed: u64,
    /// Smallest C achieving the target coverage on every grid scenario.
    pub c: f64,
    pub per_scenario: Vec<ScenarioCalibration>,
}

/// Fits the smallest C for which the event
/// ‖A_Ω*(X) − pM‖ ≤ A(M, p, ε) holds in at least `target_coverage` of
/// trials, on every scenario of the grid.
///
/// The event is monotone in C (A is affine in C with positive slope), so
/// per trial there is a minimal sufficient C, and the fit reduces to an
/// order statistic — no search loop. `target_coverage` defaults to 1−2ε.
pub fn calibrate_c(
    scenarios: &[CalibrationScenario],
    epsilon: f64,
    trials: u32,
    seed: u64,
    target_coverage: Option<f64>,
) -> Result<CalibrationReport> {
    if scenarios.is_empty() {
        return Err(CoreError::invalid("calibration grid is empty"));
    }
    if trials == 0 {
        return Err(CoreError::invalid("calibration needs at least one trial"));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(CoreError::invalid(format!("epsilon must lie in (0, 1/2), got {epsilon}")));
    }
    let target = target_coverage.unwrap_or(1.0 - 2.0 * epsilon);
    if !(target > 0.0 && target <= 1.0) {
        return Err(CoreError::invalid(format!("target coverage must lie in (0, 1], got {target}")));
    }

    // Per-trial minimal C values, per scenario.
    let mut per_scenario_c: Vec<Vec<f64>> = Vec::with_capacity(scenarios.len());
    for (si, sc) in scenarios.iter().enumerate() {
        check_p(sc.p)?;
        let truth =
            random_low_rank(sc.m, sc.n, sc.r, sc.lambda_max, derive(seed, TAG_CALIBRATION, si as u64, 0))?;
        let st = sigma_tilde(&truth, sc.p)?;
        let (rows, cols) = (sc.m as f64, sc.n as f64);
        let base = 2.0 * sc.p.sqrt() * st + 8.0 * epsilon / (rows * cols).sqrt();
        let slope = truth.max_entry().max(4.0 * (2.0 * rows * cols / epsilon).ln())
            * (rows.max(cols) / epsilon).ln().sqrt();
        let scaled = truth.scale(sc.p);
        let mut c_req: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mask_seed = derive(seed, TAG_CALIBRATION, si as u64, 2 * t as u64 + 1);
                let count_seed = derive(seed, TAG_CALIBRATION, si as u64, 2 * t as u64 + 2);
                let cfg = SamplingConfig { p: sc.p, seed: mask_seed };
                let mask = sample_bernoulli_mask(sc.m, sc.n, &cfg)?;
                let obs = sample_poisson(&truth, &mask, count_seed)?;
                let residual = obs.adjoint().minus(&scaled).operator_norm();
                Ok(((residual - base) / slope).max(0.0))
            })
            .collect::<Result<Vec<f64>>>()?;
        c_req.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        per_scenario_c.push(c_req);
    }

    // Coverage ≥ target needs C at least the k-th smallest per-trial
    // requirement, k = ⌈target·trials⌉.
    let k = (target * trials as f64).ceil().min(trials as f64) as usize;
    let c = per_scenario_c
        .iter()
        .map(|reqs| reqs[k - 1])
        .fold(0.0f64, f64::max)
        // A strictly positive floor keeps the result usable as BoundConfig::c
        // when every trial is covered at C = 0.
        .max(1e-6);

    let per_scenario = scenarios
        .iter()
        .zip(&per_scenario_c)
        .map(|(sc, reqs)| {
            let covered = reqs.iter().filter(|&&req| req <= c).count();
            ScenarioCalibration {
                scenario: *sc,
                c_required: reqs[k - 1],
                coverage_at_c: covered as f64 / trials as f64,
            }
        })
        .collect();

    Ok(CalibrationReport { epsilon, target_coverage: target, trials, seed, c, per_scenario })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, uniform_f64, TAG_TRIAL};
    use crate::sampling::dist;
    use proptest::prelude::*;

    fn ones(m: usize, n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(m, n, |_, _| 1.0)
    }

    #[test]
    fn sigma_tilde_closed_cases() {
        assert!((sigma_tilde(&ones(4, 4), 1.0).unwrap() - 4.0).abs() < 1e-12);
        let expected = 2.0 * 6.0f64.sqrt();
        assert!((sigma_tilde(&ones(4, 4), 0.5).unwrap() - expected).abs() < 1e-12);
        assert_eq!(sigma_tilde(&DenseMatrix::zeros(3, 5), 0.7).unwrap(), 0.0);
    }

    #[test]
    fn variance_sigma_identity() {
        let mut rng = stream(3, TAG_TRIAL, 0, 0);
        for trial in 0..50 {
            let m = DenseMatrix::from_fn(5, 7, |_, _| 10.0 * uniform_f64(&mut rng));
            let p = 0.05 + 0.95 * uniform_f64(&mut rng);
            let lhs = variance_matrix_sigma(&m, p).unwrap();
            let rhs = p.sqrt() * sigma_tilde(&m, p).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0), "trial {trial}");
        }
        assert_eq!(variance_matrix_sigma(&DenseMatrix::zeros(2, 2), 0.4).unwrap(), 0.0);
    }

    #[test]
    fn opnorm_level_zero_matrix_formula() {
        // Independent re-evaluation of the formula for the zero matrix:
        // only the ε term and the log term survive.
        let cfg = BoundConfig::new(1.0, DEFAULT_C0, 0.1).unwrap();
        let z = DenseMatrix::zeros(10, 10);
        let got = opnorm_bound_a(&z, 1.0, &cfg).unwrap();
        let term_eps = 0.8 / 10.0;
        let term_log = 4.0 * (200.0f64 / 0.1).ln() * (10.0f64 / 0.1).ln().sqrt();
        assert!((got - (term_eps + term_log)).abs() <= 1e-12 * got);
    }

    #[test]
    fn opnorm_level_monotonicity() {
        let cfg_tight = BoundConfig::with_defaults(0.05).unwrap();
        let cfg_loose = BoundConfig::with_defaults(0.2).unwrap();
        let m = crate::sampling::random_low_rank(12, 9, 2, 30.0, 5).unwrap();
        let a_tight = opnorm_bound_a(&m, 0.5, &cfg_tight).unwrap();
        let a_loose = opnorm_bound_a(&m, 0.5, &cfg_loose).unwrap();
        assert!(a_tight > a_loose, "smaller epsilon must inflate the level");
        let a_small = opnorm_bound_a(&m.scale(0.5), 0.5, &cfg_loose).unwrap();
        assert!(a_small < a_loose, "smaller peak rate must shrink the level");
    }

    #[test]
    fn upper_bound_relations() {
        let d = upper_bound(ErrorBoundKind::Dantzig { delta: 1.7 }, 3, 0.4).unwrap();
        let r = upper_bound(ErrorBoundKind::Regls { lambda: 2.0 * 0.4 * 1.7 }, 3, 0.4).unwrap();
        let t = upper_bound(ErrorBoundKind::RankTrunc { a_value: 1.7 }, 3, 0.4).unwrap();
        assert!((d - r).abs() <= 1e-12 * d);
        assert!((d - 2.0 * t).abs() <= 1e-12 * d);
        let unit = upper_bound(ErrorBoundKind::Dantzig { delta: 1.0 }, 1, 1.0).unwrap();
        assert!((unit - 4.0 * 2.0f64.sqrt()).abs() < 1e-12);
    }

    /// Exact upper tail P(X ≥ k0) by forward PMF summation from k0.
    fn exact_poisson_tail(lambda: f64, k0: u64) -> f64 {
        let ln_pmf = k0 as f64 * lambda.ln() - lambda - dist::ln_factorial(k0);
        let mut pmf = ln_pmf.exp();
        let mut tail = 0.0;
        let mut k = k0;
        // Sum until the terms stop mattering.
        loop {
            tail += pmf;
            k += 1;
            pmf *= lambda / k as f64;
            if pmf < 1e-300 || pmf < 1e-18 * tail {
                break;
            }
        }
        tail
    }

    #[test]
    fn poisson_tail_boundary_case() {
        let got = poisson_tail_bound(1.0, 1.0);
        assert!((got - (-3.0f64 / 8.0).exp()).abs() < 1e-15);
        assert!(poisson_tail_bound(2.0, 1e-9) > 1.0 - 1e-9);
        assert!(poisson_tail_bound(2.0, 1e9) < 1e-200);
    }

    #[test]
    fn poisson_tail_dominates_exact_tail() {
        for &lambda in &[0.5, 1.0, 5.0, 20.0] {
            let mut t = 1.0f64;
            while t <= 40.0 {
                let k0 = (lambda + t).ceil() as u64;
                let exact = exact_poisson_tail(lambda, k0);
                let bound = poisson_tail_bound(lambda, t);
                assert!(
                    bound >= exact,
                    "lambda={lambda}, t={t}: bound {bound} < exact {exact}"
                );
                t += 0.5;
            }
        }
    }

    #[test]
    fn poisson_tail_dominates_empirical_tail() {
        use crate::linalg::Mask;
        let lambda = 5.0;
        let rates = DenseMatrix::from_fn(1_000_000, 1, |_, _| lambda);
        let obs = crate::sampling::sample_poisson(&rates, &Mask::full(1_000_000, 1), 8).unwrap();
        let n = obs.counts().len() as f64;
        for t in 1..=30u64 {
            let exceed =
                obs.counts().iter().filter(|&&c| c as f64 - lambda >= t as f64).count() as f64;
            assert!(exceed / n <= poisson_tail_bound(lambda, t as f64), "t={t}");
        }
    }

    #[test]
    fn kl_conventions_and_quadratic_bound() {
        assert_eq!(poisson_kl(3.0, 3.0), 0.0);
        assert_eq!(poisson_kl(0.0, 2.0), 2.0);
        assert_eq!(poisson_kl(2.0, 0.0), f64::INFINITY);
        let mut rng = stream(9, TAG_TRIAL, 0, 0);
        for _ in 0..500 {
            let a = 0.01 + 30.0 * uniform_f64(&mut rng);
            let b = 0.01 + 30.0 * uniform_f64(&mut rng);
            let kl = poisson_kl(a, b);
            assert!(kl >= 0.0);
            assert!(kl <= (a - b) * (a - b) / b + 1e-12);
        }
    }

    #[test]
    fn row_multinomial_level_branches() {
        // Column sums ≤ 1 and huge D_min: the Gaussian-style branch.
        let d = delta_row_multinomial(0.8, 1e12, 40, 20, 0.1).unwrap();
        let expected = 2.0 * (60.0f64 / 0.1).ln().sqrt();
        assert!((d - expected).abs() <= 1e-12 * expected);
        // D_min = 1, tiny epsilon: the linear branch dominates.
        let d = delta_row_multinomial(0.8, 1.0, 4, 3, 1e-6).unwrap();
        let log_term = (7.0f64 / 1e-6).ln();
        assert!((d - 4.0 / 3.0 * log_term).abs() <= 1e-12 * d);
    }

    #[test]
    fn variance_lower_bound_cases() {
        let lb = lower_bound_variance_rate(1, 1.0, 8.0 * 2.0f64.sqrt(), 1000).unwrap();
        assert!((lb.radius - 1.0).abs() < 1e-12);
        assert!(!lb.vacuous && lb.probability > 0.49);
        // Dimensions too small for the probability to be positive.
        let small = lower_bound_variance_rate(1, 0.5, 1.0, 8).unwrap();
        assert!(small.vacuous && small.probability <= 0.0);
        // Radius scales as 1/√p.
        let a = lower_bound_variance_rate(2, 0.1, 3.0, 100).unwrap();
        let b = lower_bound_variance_rate(2, 0.4, 3.0, 100).unwrap();
        assert!((a.radius / b.radius - 2.0).abs() < 1e-12);
    }

    #[test]
    fn squared_lower_bound_cases() {
        let lb = lower_bound_squared_rate(2, 0.5, 3.0, 50).unwrap();
        // max{½·⌊1⌋, ½} = ½ → r·σ₂²/16.
        assert!((lb.max_form - 2.0 * 9.0 / 16.0).abs() < 1e-12);
        assert!(lb.valid);
        let at_one = lower_bound_squared_rate(2, 1.0, 3.0, 50).unwrap();
        assert_eq!(at_one.floor_form, 0.0);
        assert_eq!(at_one.max_form, 0.0);
        // The max-form dominates the floor form across p.
        for i in 1..=9 {
            let p = i as f64 / 10.0;
            let lb = lower_bound_squared_rate(3, p, 2.0, 50).unwrap();
            assert!(lb.max_form >= lb.floor_form - 1e-12, "p={p}");
        }
        // Validity flag: r/(2·min_dim) = 0.25 > p.
        assert!(!lower_bound_squared_rate(5, 0.2, 1.0, 10).unwrap().valid);
    }

    #[test]
    fn matching_regime_cases() {
        let rep = matching_regime_check(1000, 1000, 2, 0.5, 20.0).unwrap();
        assert_eq!(rep.regime, MatchingRegime::HighIntensity);
        assert!(rep.satisfied && rep.slack > 1.0);

        let threshold = 2.0 * (1000.0f64).ln() / 1000.0;
        let rep = matching_regime_check(1000, 1000, 2, threshold / 10.0, 20.0).unwrap();
        assert!(!rep.satisfied && rep.slack < 1.0);

        let rep = matching_regime_check(100, 100, 2, 0.5, 1.0).unwrap();
        assert_eq!(rep.regime, MatchingRegime::LowIntensity);
        let d = 100.0f64;
        let expected_other = 2.0 * d.ln() / d;
        assert!((rep.other_threshold - expected_other).abs() < 1e-12);
    }

    #[test]
    fn bound_report_internal_consistency() {
        let m = crate::sampling::random_low_rank(20, 15, 3, 10.0, 77).unwrap();
        let cfg = BoundConfig::with_defaults(0.1).unwrap();
        let rep = bound_report(&m, 3, 0.6, &cfg).unwrap();
        assert!((rep.ub_dantzig - 2.0 * rep.ub_rank_trunc).abs() <= 1e-12 * rep.ub_dantzig);
        assert!((rep.ub_dantzig - rep.ub_regls).abs() <= 1e-12 * rep.ub_dantzig);
        for v in [
            rep.sigma_tilde,
            rep.a_value,
            rep.ub_dantzig,
            rep.ub_regls,
            rep.ub_rank_trunc,
            rep.lb_variance_radius,
            rep.lb_squared_floor,
            rep.lb_squared_max_form,
        ] {
            assert!(v >= 0.0);
        }
        // JSON round trip is lossless.
        let json = serde_json::to_string(&rep).unwrap();
        let back: BoundReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn calibration_reaches_target_and_is_deterministic() {
        let grid = vec![
            CalibrationScenario { m: 20, n: 20, r: 2, lambda_max: 8.0, p: 0.5 },
            CalibrationScenario { m: 25, n: 10, r: 1, lambda_max: 3.0, p: 1.0 },
        ];
        let rep = calibrate_c(&grid, 0.1, 40, 99, None).unwrap();
        assert!((rep.target_coverage - 0.8).abs() < 1e-12);
        for sc in &rep.per_scenario {
            assert!(sc.coverage_at_c >= rep.target_coverage - 1e-12);
            assert!(sc.c_required <= rep.c + 1e-12);
        }
        let again = calibrate_c(&grid, 0.1, 40, 99, None).unwrap();
        assert_eq!(serde_json::to_string(&rep).unwrap(), serde_json::to_string(&again).unwrap());
        // Higher target cannot need a smaller C.
        let strict = calibrate_c(&grid, 0.1, 40, 99, Some(1.0)).unwrap();
        assert!(strict.c >= rep.c);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sigma_identity_property(seed in 0u64..500, p in 0.01f64..1.0) {
            let mut rng = stream(seed, TAG_TRIAL, 1, 1);
            let m = DenseMatrix::from_fn(4, 6, |_, _| 25.0 * uniform_f64(&mut rng));
            let lhs = variance_matrix_sigma(&m, p).unwrap();
            let rhs = p.sqrt() * sigma_tilde(&m, p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }

        #[test]
        fn upper_bounds_monotone(r in 1usize..6, p in 0.05f64..1.0, delta in 0.0f64..10.0) {
            let base = upper_bound(ErrorBoundKind::Dantzig { delta }, r, p).unwrap();
            let more_rank = upper_bound(ErrorBoundKind::Dantzig { delta }, r + 1, p).unwrap();
            let more_delta = upper_bound(ErrorBoundKind::Dantzig { delta: delta + 1.0 }, r, p).unwrap();
            let less_p = upper_bound(ErrorBoundKind::Dantzig { delta }, r, p * 0.5).unwrap();
            prop_assert!(more_rank >= base);
            prop_assert!(more_delta >= base);
            prop_assert!(less_p >= base);
        }
    }
}
