//! Closed-form spectral estimators for sampled count matrices, optional
//! convex projections, and a first-order reference solver used purely as a
//! correctness oracle.
//!
//! Every estimator is a single SVD: soft-threshold the singular values of
//! the zero-padded observation matrix (or a weighted version of it) and
//! rescale. The nonnegativity constraint of the underlying optimization
//! problems is dropped and offered as an optional post-projection; this
//! leaves the error guarantees unchanged and the computation closed-form.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::{DenseMatrix, MaskedObservations};

/// Singular values at or below `RANK_REL_TOL · σ_max` do not count toward
/// the reported output rank.
pub const RANK_REL_TOL: f64 = 1e-10;

/// Default iteration cap and objective tolerance for the reference solver.
pub const SOLVER_MAX_ITER: usize = 5000;
pub const SOLVER_DEFAULT_TOL: f64 = 1e-5;

/// Which convex projections to apply, in the fixed order nonnegative →
/// global simplex → row simplex. Both simplex projections land in the
/// nonnegative orthant on their own.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionFlags {
    #[serde(default)]
    pub nonnegative: bool,
    #[serde(default)]
    pub global_simplex: bool,
    #[serde(default)]
    pub row_simplex: bool,
}

impl ProjectionFlags {
    pub const NONE: ProjectionFlags =
        ProjectionFlags { nonnegative: false, global_simplex: false, row_simplex: false };

    #[must_use]
    pub fn any(&self) -> bool {
        self.nonnegative || self.global_simplex || self.row_simplex
    }

    fn apply(&self, a: &DenseMatrix) -> DenseMatrix {
        let mut out = a.clone();
        if self.nonnegative {
            out = project_nonnegative(&out);
        }
        if self.global_simplex {
            out = project_global_simplex(&out);
        }
        if self.row_simplex {
            out = project_rows_simplex(&out);
        }
        out
    }
}

/// Estimator selection with exactly the parameters its kind needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    /// svt(A_Ω*(X), δ) / p — operator-norm-constrained nuclear minimizer.
    Dantzig { p: f64, delta: f64 },
    /// svt(A_Ω*(X)/p, λ/(2p²)) — nuclear-regularized least squares.
    Regls { p: f64, lambda: f64 },
    /// Best rank-r approximation of A_Ω*(X)/p.
    RankTrunc { p: f64, rank_budget: usize },
    /// svt(X, Nδ)/N for a single multinomial over all cells.
    MultinomialMatrix { delta: f64 },
    /// Row-weighted thresholding for independent multinomial rows.
    MultinomialRows { delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    #[serde(flatten)]
    pub kind: EstimatorKind,
    #[serde(default)]
    pub project: ProjectionFlags,
}

/// Count data in the shape the chosen estimator expects.
#[derive(Debug, Clone, Copy)]
pub enum CountData<'a> {
    /// Bernoulli-masked Poisson counts.
    Masked(&'a MaskedObservations),
    /// Dense count matrix with grand total `n`.
    Total { x: &'a DenseMatrix, n: u64 },
    /// Dense count matrix with per-row totals.
    Rows { x: &'a DenseMatrix, trial_counts: &'a [u64] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimate: DenseMatrix,
    /// Soft threshold actually applied to the decomposed matrix; for
    /// rank truncation, the largest discarded singular value (0 if none).
    pub threshold_used: f64,
    /// Rank of the closed-form solution before any projection, counting
    /// singular values above `RANK_REL_TOL · σ_max`. Reported, never used
    /// in math.
    pub output_rank: usize,
    /// Operator norm of the data-fit residual of the final estimate:
    /// ‖A_Ω*(X) − p·estimate‖, ‖X − N·estimate‖, or the row-weighted
    /// analogue ‖D^{-1/2}(X − D·estimate)‖, by kind. At most the
    /// kind's tolerance before projection; projections may add slack.
    pub residual_opnorm: f64,
    pub projected: ProjectionFlags,
}

/// Singular value soft thresholding: U·diag(max(σ − τ, 0))·Vᵀ.
/// τ = 0 returns the input unchanged (exactly, bypassing the SVD).
pub fn svt(a: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    if !(tau >= 0.0) {
        return Err(CoreError::invalid(format!("svt threshold must be >= 0, got {tau}")));
    }
    if tau == 0.0 {
        return Ok(a.clone());
    }
    let mut f = a.svd()?;
    for s in &mut f.singular_values {
        *s = (*s - tau).max(0.0);
    }
    Ok(f.reconstruct())
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(CoreError::invalid(format!("p must lie in (0, 1], got {p}")));
    }
    Ok(())
}

fn output_rank_of(pre: &DenseMatrix) -> usize {
    let sv = pre.singular_values_only();
    let top = sv.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_REL_TOL * top).count()
}

fn finish(
    pre: DenseMatrix,
    threshold_used: f64,
    project: ProjectionFlags,
    residual: impl Fn(&DenseMatrix) -> f64,
) -> EstimateResult {
    let output_rank = output_rank_of(&pre);
    let estimate = if project.any() { project.apply(&pre) } else { pre };
    let residual_opnorm = residual(&estimate);
    EstimateResult { estimate, threshold_used, output_rank, residual_opnorm, projected: project }
}

/// Operator-norm-constrained estimator: svt(A_Ω*(X), δ)/p.
pub fn estimate_dantzig(
    obs: &MaskedObservations,
    p: f64,
    delta: f64,
    project: ProjectionFlags,
) -> Result<EstimateResult> {
    check_p(p)?;
    if !(delta >= 0.0) {
        return Err(CoreError::invalid(format!("delta must be >= 0, got {delta}")));
    }
    let y = obs.adjoint();
    let pre = svt(&y, delta)?.scale(1.0 / p);
    Ok(finish(pre, delta, project, |est| y.minus(&est.scale(p)).operator_norm()))
}

/// Nuclear-regularized least squares: svt(A_Ω*(X)/p, λ/(2p²)).
pub fn estimate_regls(
    obs: &MaskedObservations,
    p: f64,
    lambda: f64,
    project: ProjectionFlags,
) -> Result<EstimateResult> {
    check_p(p)?;
    if !(lambda >= 0.0) {
        return Err(CoreError::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let y = obs.adjoint();
    let tau = lambda / (2.0 * p * p);
    let pre = svt(&y.scale(1.0 / p), tau)?;
    Ok(finish(pre, tau, project, |est| y.minus(&est.scale(p)).operator_norm()))
}

/// Least squares under an exact rank constraint: best rank-r
/// approximation of A_Ω*(X)/p. Ties at the cut (σ_r = σ_{r+1}) keep the
/// first r in SVD output order, so the result is deterministic.
pub fn estimate_rank_truncated(
    obs: &MaskedObservations,
    p: f64,
    rank_budget: usize,
    project: ProjectionFlags,
) -> Result<EstimateResult> {
    check_p(p)?;
    if rank_budget == 0 {
        return Err(CoreError::invalid("rank budget must be >= 1"));
    }
    let y = obs.adjoint();
    let scaled = y.scale(1.0 / p);
    let (pre, discarded) = if rank_budget >= scaled.rows().min(scaled.cols()) {
        (scaled, 0.0)
    } else {
        let mut f = scaled.svd()?;
        let discarded = f.singular_values[rank_budget];
        for s in f.singular_values.iter_mut().skip(rank_budget) {
            *s = 0.0;
        }
        (f.reconstruct(), discarded)
    };
    Ok(finish(pre, discarded, project, |est| y.minus(&est.scale(p)).operator_norm()))
}

/// Single-multinomial probability estimator: svt(X, Nδ)/N.
pub fn estimate_multinomial_matrix(
    x: &DenseMatrix,
    n: u64,
    delta: f64,
    project: ProjectionFlags,
) -> Result<EstimateResult> {
    if !(delta >= 0.0) {
        return Err(CoreError::invalid(format!("delta must be >= 0, got {delta}")));
    }
    validate_counts(x)?;
    let total: f64 = x.data().iter().sum();
    if total != n as f64 {
        return Err(CoreError::invalid(format!(
            "count matrix sums to {total}, expected total {n}"
        )));
    }
    let nf = n as f64;
    let tau = nf * delta;
    let pre = svt(x, tau)?.scale(1.0 / nf);
    Ok(finish(pre, tau, project, |est| x.minus(&est.scale(nf)).operator_norm()))
}

/// Row-multinomial probability estimator: with D = diag(trial counts),
/// threshold the row-whitened counts W = svt(D^{-1/2}X, δ) and return
/// D^{-1/2}W.
pub fn estimate_row_multinomial(
    x: &DenseMatrix,
    trial_counts: &[u64],
    delta: f64,
    project: ProjectionFlags,
) -> Result<EstimateResult> {
    if !(delta >= 0.0) {
        return Err(CoreError::invalid(format!("delta must be >= 0, got {delta}")));
    }
    validate_counts(x)?;
    if trial_counts.len() != x.rows() {
        return Err(CoreError::invalid(format!(
            "expected {} trial counts, got {}",
            x.rows(),
            trial_counts.len()
        )));
    }
    if let Some(n) = trial_counts.iter().find(|&&n| n == 0) {
        return Err(CoreError::invalid(format!("trial count must be >= 1, got {n}")));
    }
    for i in 0..x.rows() {
        let row_sum: f64 = (0..x.cols()).map(|j| x.get(i, j)).sum();
        if row_sum != trial_counts[i] as f64 {
            return Err(CoreError::invalid(format!(
                "row {i} sums to {row_sum}, expected {}",
                trial_counts[i]
            )));
        }
    }
    let d_inv_sqrt: Vec<f64> = trial_counts.iter().map(|&n| 1.0 / (n as f64).sqrt()).collect();
    let whitened = DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| d_inv_sqrt[i] * x.get(i, j));
    let w = svt(&whitened, delta)?;
    let pre = DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| d_inv_sqrt[i] * w.get(i, j));
    Ok(finish(pre, delta, project, |est| {
        DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
            d_inv_sqrt[i] * (x.get(i, j) - trial_counts[i] as f64 * est.get(i, j))
        })
        .operator_norm()
    }))
}

/// Dispatch by parameter kind; validates that the data shape matches.
pub fn run_estimator(params: &EstimatorParams, data: CountData<'_>) -> Result<EstimateResult> {
    match (&params.kind, data) {
        (EstimatorKind::Dantzig { p, delta }, CountData::Masked(obs)) => {
            estimate_dantzig(obs, *p, *delta, params.project)
        }
        (EstimatorKind::Regls { p, lambda }, CountData::Masked(obs)) => {
            estimate_regls(obs, *p, *lambda, params.project)
        }
        (EstimatorKind::RankTrunc { p, rank_budget }, CountData::Masked(obs)) => {
            estimate_rank_truncated(obs, *p, *rank_budget, params.project)
        }
        (EstimatorKind::MultinomialMatrix { delta }, CountData::Total { x, n }) => {
            estimate_multinomial_matrix(x, n, *delta, params.project)
        }
        (EstimatorKind::MultinomialRows { delta }, CountData::Rows { x, trial_counts }) => {
            estimate_row_multinomial(x, trial_counts, *delta, params.project)
        }
        _ => Err(CoreError::invalid("estimator kind does not match the provided count data")),
    }
}

fn validate_counts(x: &DenseMatrix) -> Result<()> {
    for &v in x.data() {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(CoreError::invalid(format!("count entries must be nonnegative integers, got {v}")));
        }
    }
    Ok(())
}

/// Entrywise clamp at zero.
#[must_use]
pub fn project_nonnegative(a: &DenseMatrix) -> DenseMatrix {
    a.map(|v| v.max(0.0))
}

/// Euclidean projection of the whole matrix onto {entries ≥ 0, Σ = 1}.
#[must_use]
pub fn project_global_simplex(a: &DenseMatrix) -> DenseMatrix {
    let w = simplex_project(a.data());
    DenseMatrix::new(a.rows(), a.cols(), w).expect("projection preserves shape")
}

/// Euclidean projection of each row onto the probability simplex.
#[must_use]
pub fn project_rows_simplex(a: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        let row: Vec<f64> = (0..a.cols()).map(|j| a.get(i, j)).collect();
        for (j, v) in simplex_project(&row).into_iter().enumerate() {
            out.set(i, j, v);
        }
    }
    out
}

/// Exact sort-and-threshold projection onto the unit simplex:
/// w_i = max(v_i − θ, 0) with θ chosen so Σw = 1.
fn simplex_project(v: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// First-order reference solver for the operator-norm-constrained nuclear
/// minimizer: Douglas–Rachford splitting between the nuclear-norm prox
/// (soft thresholding) and projection onto {Z : ‖Z − A_Ω*(X)‖ ≤ δ}
/// (singular-value clipping of the deviation). An oracle for the closed
/// form only — excluded from any performance claim.
pub fn reference_solver_dantzig(
    obs: &MaskedObservations,
    p: f64,
    delta: f64,
    tol: f64,
) -> Result<DenseMatrix> {
    check_p(p)?;
    if !(delta > 0.0) {
        return Err(CoreError::invalid(format!("solver requires delta > 0, got {delta}")));
    }
    if !(tol > 0.0) {
        return Err(CoreError::invalid(format!("solver requires tol > 0, got {tol}")));
    }
    let y = obs.adjoint();

    // Projection onto the operator-norm ball of radius δ around y.
    let project_ball = |v: &DenseMatrix| -> Result<DenseMatrix> {
        let mut f = v.minus(&y).svd()?;
        for s in &mut f.singular_values {
            *s = s.min(delta);
        }
        Ok(y.plus(&f.reconstruct()))
    };

    // Prox step size: on the scale of the constraint radius.
    let step = delta;
    let mut v = y.clone();
    let mut prev_obj = f64::INFINITY;
    for _ in 0..SOLVER_MAX_ITER {
        let x = project_ball(&v)?;
        let reflected = x.scale(2.0).minus(&v);
        let z = svt(&reflected, step)?;
        v = v.plus(&z).minus(&x);
        let obj = x.nuclear_norm();
        if (prev_obj - obj).abs() <= tol * obj.max(1.0) {
            return Ok(x.scale(1.0 / p));
        }
        prev_obj = obj;
    }
    Err(CoreError::numerical(format!(
        "reference solver did not reach tolerance {tol} within {SOLVER_MAX_ITER} iterations"
    )))
}
