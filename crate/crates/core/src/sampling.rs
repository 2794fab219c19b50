//! Seeded generation of Bernoulli masks and Poisson / multinomial count
//! observations.
//!
//! Masks and Poisson counts are drawn from per-cell streams keyed by
//! `(seed, tag, i, j)`, so results are independent of evaluation order and
//! cells may be sampled concurrently. Multinomial draws use one stream per
//! matrix (or per row) because the conditional-binomial method is
//! inherently sequential within a draw.
//!
//! Outputs are bit-reproducible for a given seed on a given platform. The
//! generator and key schedule are pinned (see [`crate::rng`]); the only
//! cross-platform caveat is last-ulp variation in the system `ln`/`exp`
//! used inside the samplers.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::{DenseMatrix, Mask, MaskedObservations};
use crate::rng::{
    self, stream, uniform_f64, uniform_open_f64, TAG_MASK, TAG_MULTINOMIAL, TAG_POISSON,
    TAG_ROW_MULTINOMIAL,
};

/// Rows of a probability matrix must sum to 1 within this tolerance;
/// violations are rejected, never renormalized silently.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Bernoulli cell-sampling probability plus the seed that makes the draw
/// reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub p: f64,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(CoreError::invalid(format!(
                "sampling probability must lie in (0, 1], got {p}"
            )));
        }
        Ok(SamplingConfig { p, seed })
    }
}

/// Independent multinomial rows: row i of `probabilities` is a point on
/// the simplex and receives `trial_counts[i]` trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMultinomialModel {
    probabilities: DenseMatrix,
    trial_counts: Vec<u64>,
}

impl RowMultinomialModel {
    pub fn new(probabilities: DenseMatrix, trial_counts: Vec<u64>) -> Result<Self> {
        if trial_counts.len() != probabilities.rows() {
            return Err(CoreError::invalid(format!(
                "expected {} trial counts, got {}",
                probabilities.rows(),
                trial_counts.len()
            )));
        }
        if let Some(n) = trial_counts.iter().find(|&&n| n == 0) {
            return Err(CoreError::invalid(format!("trial count must be >= 1, got {n}")));
        }
        for i in 0..probabilities.rows() {
            let mut sum = 0.0;
            for j in 0..probabilities.cols() {
                let v = probabilities.get(i, j);
                if !(0.0..=1.0).contains(&v) {
                    return Err(CoreError::invalid(format!(
                        "probability entry ({i}, {j}) = {v} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(CoreError::invalid(format!(
                    "row {i} sums to {sum}, outside simplex tolerance {SIMPLEX_TOLERANCE}"
                )));
            }
        }
        Ok(RowMultinomialModel { probabilities, trial_counts })
    }

    #[must_use]
    pub fn probabilities(&self) -> &DenseMatrix {
        &self.probabilities
    }

    #[must_use]
    pub fn trial_counts(&self) -> &[u64] {
        &self.trial_counts
    }

    /// diag(N_1, …, N_m) applied from the left: row i scaled by N_i.
    #[must_use]
    pub fn scaled_means(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.probabilities.rows(), self.probabilities.cols(), |i, j| {
            self.trial_counts[i] as f64 * self.probabilities.get(i, j)
        })
    }
}

/// Nonnegative rank-r rate matrix with maximum entry exactly
/// `lambda_max`: a product of entrywise-positive factors (so the rank is
/// exactly r almost surely), rescaled to the requested peak rate.
pub fn random_low_rank(
    m: usize,
    n: usize,
    r: usize,
    lambda_max: f64,
    seed: u64,
) -> Result<DenseMatrix> {
    if m == 0 || n == 0 {
        return Err(CoreError::invalid("matrix dimensions must be positive"));
    }
    if r == 0 || r > m.min(n) {
        return Err(CoreError::invalid(format!("rank {r} outside 1..={}", m.min(n))));
    }
    if !(lambda_max > 0.0) {
        return Err(CoreError::invalid(format!("lambda_max must be > 0, got {lambda_max}")));
    }
    let mut rng = stream(seed, rng::TAG_TRUTH, m as u64, n as u64);
    // Entries bounded away from zero keep the factors well conditioned.
    let u = DenseMatrix::from_fn(m, r, |_, _| 0.1 + 0.9 * uniform_f64(&mut rng));
    let v = DenseMatrix::from_fn(r, n, |_, _| 0.1 + 0.9 * uniform_f64(&mut rng));
    let prod = u.matmul(&v);
    Ok(prod.scale(lambda_max / prod.max_entry()))
}

/// Row-stochastic rank-r matrix: a nonnegative rank-r matrix with each
/// row rescaled to sum to 1 (row scaling preserves the rank).
pub fn random_row_stochastic(m: usize, n: usize, r: usize, seed: u64) -> Result<DenseMatrix> {
    let base = random_low_rank(m, n, r, 1.0, seed)?;
    Ok(DenseMatrix::from_fn(m, n, |i, j| {
        let row_sum: f64 = (0..n).map(|k| base.get(i, k)).sum();
        base.get(i, j) / row_sum
    }))
}

/// Includes each of the m×n cells independently with probability `cfg.p`.
pub fn sample_bernoulli_mask(m: usize, n: usize, cfg: &SamplingConfig) -> Result<Mask> {
    if m == 0 || n == 0 {
        return Err(CoreError::invalid("mask dimensions must be positive"));
    }
    if !(cfg.p > 0.0 && cfg.p <= 1.0) {
        return Err(CoreError::invalid(format!(
            "sampling probability must lie in (0, 1], got {}",
            cfg.p
        )));
    }
    let mut entries = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let mut cell = stream(cfg.seed, TAG_MASK, i as u64, j as u64);
            // uniform_f64 < 1 always, so p = 1 yields the full mask.
            if uniform_f64(&mut cell) < cfg.p {
                entries.push((i, j));
            }
        }
    }
    Mask::new(m, n, entries)
}

/// Draws independent Poisson(M_ij) counts at the sampled cells.
pub fn sample_poisson(rates: &DenseMatrix, mask: &Mask, seed: u64) -> Result<MaskedObservations> {
    if mask.rows() != rates.rows() || mask.cols() != rates.cols() {
        return Err(CoreError::invalid(format!(
            "mask is {}x{} but rate matrix is {}x{}",
            mask.rows(),
            mask.cols(),
            rates.rows(),
            rates.cols()
        )));
    }
    if rates.min_entry() < 0.0 {
        return Err(CoreError::invalid("negative Poisson rate"));
    }
    let counts: Vec<u64> = mask
        .entries()
        .iter()
        .map(|&(i, j)| {
            let mut cell = stream(seed, TAG_POISSON, i as u64, j as u64);
            dist::poisson(&mut cell, rates.get(i, j))
        })
        .collect();
    MaskedObservations::new(mask.clone(), counts)
}

/// One multinomial draw over all cells of `p`: counts sum exactly to `n`
/// and cell (i, j) is marginally Binomial(n, p_ij).
pub fn sample_matrix_multinomial(p: &DenseMatrix, n: u64, seed: u64) -> Result<DenseMatrix> {
    if n == 0 {
        return Err(CoreError::invalid("total count must be >= 1"));
    }
    let mut sum = 0.0;
    for &v in p.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(CoreError::invalid(format!("probability entry {v} outside [0, 1]")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(CoreError::invalid(format!(
            "probabilities sum to {sum}, outside simplex tolerance {SIMPLEX_TOLERANCE}"
        )));
    }
    let mut rng = stream(seed, TAG_MULTINOMIAL, 0, 0);
    let counts = dist::multinomial(&mut rng, p.data(), n);
    DenseMatrix::new(p.rows(), p.cols(), counts.into_iter().map(|c| c as f64).collect())
}

/// Independent multinomial draws per row: row i sums exactly to N_i.
pub fn sample_row_multinomial(model: &RowMultinomialModel, seed: u64) -> Result<DenseMatrix> {
    let p = model.probabilities();
    let mut out = DenseMatrix::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        let row: Vec<f64> = (0..p.cols()).map(|j| p.get(i, j)).collect();
        let mut rng = stream(seed, TAG_ROW_MULTINOMIAL, i as u64, 0);
        let counts = dist::multinomial(&mut rng, &row, model.trial_counts()[i]);
        for (j, c) in counts.into_iter().enumerate() {
            out.set(i, j, c as f64);
        }
    }
    Ok(out)
}

/// Count-distribution kernels. Hand-rolled so the draws are a pure
/// function of the pinned generator, independent of external crate
/// versions.
pub(crate) mod dist {
    use super::{uniform_f64, uniform_open_f64};
    use rand_core::RngCore;
    use std::sync::OnceLock;

    /// Binomial chunk size: splitting Binomial(n, p) into independent
    /// Binomial(512, p) draws keeps (1-p)^chunk ≥ 0.5^512 ≈ 7.5e-155, far
    /// from underflow, while the CDF walk stays exact.
    const BINOMIAL_CHUNK: u64 = 512;

    /// PTRS switchover; inversion below, transformed rejection above.
    const POISSON_PTRS_THRESHOLD: f64 = 10.0;

    fn ln_factorial_table() -> &'static [f64; 1024] {
        static TABLE: OnceLock<[f64; 1024]> = OnceLock::new();
        TABLE.get_or_init(|| {
            let mut t = [0.0f64; 1024];
            for k in 2..1024usize {
                t[k] = t[k - 1] + (k as f64).ln();
            }
            t
        })
    }

    /// ln(k!) — cumulative table below 1024, Stirling series above
    /// (absolute error < 1e-13 in both regimes).
    pub(crate) fn ln_factorial(k: u64) -> f64 {
        if k < 1024 {
            return ln_factorial_table()[k as usize];
        }
        let x = k as f64;
        const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;
        (x + 0.5) * x.ln() - x + HALF_LN_TWO_PI + 1.0 / (12.0 * x) - 1.0 / (360.0 * x * x * x)
    }

    pub(crate) fn poisson(rng: &mut impl RngCore, lambda: f64) -> u64 {
        assert!(lambda >= 0.0 && lambda.is_finite(), "invalid Poisson rate {lambda}");
        if lambda == 0.0 {
            0
        } else if lambda < POISSON_PTRS_THRESHOLD {
            poisson_inversion(rng, lambda)
        } else {
            poisson_ptrs(rng, lambda)
        }
    }

    /// Sequential CDF inversion; the walk length is geometric around λ.
    fn poisson_inversion(rng: &mut impl RngCore, lambda: f64) -> u64 {
        let u = uniform_f64(rng);
        let mut k = 0u64;
        let mut pmf = (-lambda).exp();
        let mut cdf = pmf;
        // u < 1 strictly; the cap only guards against the CDF saturating
        // below u through rounding.
        let cap = (10.0 * lambda) as u64 + 128;
        while u > cdf && k < cap {
            k += 1;
            pmf *= lambda / k as f64;
            cdf += pmf;
        }
        k
    }

    /// Hörmann's transformed rejection with squeeze (PTRS), valid for
    /// λ ≥ 10.
    fn poisson_ptrs(rng: &mut impl RngCore, lambda: f64) -> u64 {
        let slam = lambda.sqrt();
        let loglam = lambda.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let invalpha = 1.1239 + 1.1328 / (b - 3.4);
        let vr = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = uniform_f64(rng) - 0.5;
            let v = uniform_open_f64(rng);
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
            if us >= 0.07 && v <= vr {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let kf = k;
            if (v * invalpha / (a / (us * us) + b)).ln()
                <= kf * loglam - lambda - ln_factorial(kf as u64)
            {
                return k as u64;
            }
        }
    }

    pub(crate) fn binomial(rng: &mut impl RngCore, n: u64, p: f64) -> u64 {
        assert!((0.0..=1.0).contains(&p), "invalid binomial probability {p}");
        if n == 0 || p == 0.0 {
            return 0;
        }
        if p == 1.0 {
            return n;
        }
        if p > 0.5 {
            return n - binomial_inversion_chunked(rng, n, 1.0 - p);
        }
        binomial_inversion_chunked(rng, n, p)
    }

    /// Binomial(n, p) as a sum of independent chunk draws, each by CDF
    /// inversion. Requires p ≤ 0.5.
    fn binomial_inversion_chunked(rng: &mut impl RngCore, n: u64, p: f64) -> u64 {
        let mut total = 0u64;
        let mut left = n;
        while left > 0 {
            let c = left.min(BINOMIAL_CHUNK);
            total += binomial_inversion(rng, c, p);
            left -= c;
        }
        total
    }

    fn binomial_inversion(rng: &mut impl RngCore, n: u64, p: f64) -> u64 {
        let q = 1.0 - p;
        let ratio = p / q;
        let u = uniform_f64(rng);
        let mut k = 0u64;
        let mut pmf = q.powi(n as i32);
        let mut cdf = pmf;
        while u > cdf && k < n {
            // pmf(k+1) = pmf(k) · (n-k)/(k+1) · p/q
            pmf *= (n - k) as f64 / (k + 1) as f64 * ratio;
            cdf += pmf;
            k += 1;
        }
        k
    }

    /// Conditional-binomial sequential multinomial: cell k receives
    /// Binomial(remaining, p_k / tail_k) where tail_k = Σ_{t ≥ k} p_t.
    /// The last cell with positive probability absorbs whatever remains,
    /// so totals are exact by construction.
    pub(crate) fn multinomial(rng: &mut impl RngCore, p: &[f64], n: u64) -> Vec<u64> {
        let mut tail = vec![0.0f64; p.len() + 1];
        for k in (0..p.len()).rev() {
            tail[k] = tail[k + 1] + p[k];
        }
        let last_positive = p.iter().rposition(|&v| v > 0.0);
        let mut counts = vec![0u64; p.len()];
        let mut remaining = n;
        for k in 0..p.len() {
            if remaining == 0 {
                break;
            }
            if Some(k) == last_positive {
                counts[k] = remaining;
                break;
            }
            if p[k] == 0.0 {
                continue;
            }
            let ratio = (p[k] / tail[k]).clamp(0.0, 1.0);
            let draw = binomial(rng, remaining, ratio);
            counts[k] = draw;
            remaining -= draw;
        }
        debug_assert_eq!(counts.iter().sum::<u64>(), n, "multinomial total must equal n");
        counts
    }
}
