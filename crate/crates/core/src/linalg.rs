//! Dense matrices, observation masks, and the spectral operations the
//! estimators are built on.
//!
//! Matrices are dense row-major `f64` (rate/probability matrices at desk
//! scale); observations are stored sparse as a mask plus one count per
//! sampled cell. Indices are 0-based everywhere in memory; text formats
//! use 1-based indices and are converted at the I/O boundary.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// QR-SVD sweep budget; exceeding it is reported as a numerical failure.
const SVD_MAX_ITER: usize = 4096;

/// Dense row-major matrix with at least one row and one column; all
/// entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CoreError::invalid("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(CoreError::invalid(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(CoreError::invalid(format!("non-finite matrix entry {bad}")));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// All-zero matrix. Panics if a dimension is zero.
    #[must_use]
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds entry (i, j) as f(i, j). Panics on zero dimensions or if `f`
    /// produces a non-finite value.
    #[must_use]
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                assert!(v.is_finite(), "non-finite entry at ({i}, {j})");
                data.push(v);
            }
        }
        DenseMatrix { rows, cols, data }
    }

    #[must_use]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[must_use]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[must_use]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    #[must_use]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        self.data[i * self.cols + j] = v;
    }

    #[must_use]
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    #[must_use]
    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// Entrywise difference. Panics on dimension mismatch (internal use;
    /// boundary code validates dimensions first).
    #[must_use]
    pub fn minus(&self, rhs: &DenseMatrix) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "dimension mismatch");
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    #[must_use]
    pub fn plus(&self, rhs: &DenseMatrix) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "dimension mismatch");
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    #[must_use]
    pub fn transpose(&self) -> Self {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    #[must_use]
    pub fn matmul(&self, rhs: &DenseMatrix) -> Self {
        assert_eq!(self.cols, rhs.rows, "inner dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += aik * rhs.get(k, j);
                }
            }
        }
        out
    }

    /// Frobenius inner product ⟨A, B⟩ = Σ A_ij B_ij.
    #[must_use]
    pub fn frob_dot(&self, rhs: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "dimension mismatch");
        self.data.iter().zip(&rhs.data).map(|(a, b)| a * b).sum()
    }

    #[must_use]
    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    #[must_use]
    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[must_use]
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest singular value.
    #[must_use]
    pub fn operator_norm(&self) -> f64 {
        self.singular_values_only()
            .first()
            .copied()
            .unwrap_or(0.0)
    }

    /// Sum of singular values.
    #[must_use]
    pub fn nuclear_norm(&self) -> f64 {
        self.singular_values_only().iter().sum()
    }

    /// Singular values, descending, without accumulating the factors.
    /// Runs the QR-SVD to convergence (finite inputs are guaranteed by the
    /// type invariant, and the unbounded iteration cannot stall on them).
    #[must_use]
    pub fn singular_values_only(&self) -> Vec<f64> {
        let svd = nalgebra::linalg::SVD::try_new(self.to_na(), false, false, f64::EPSILON, 0)
            .expect("unbounded-iteration svd always converges");
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
        sv
    }

    /// Thin SVD with descending singular values. The singular-vector sign
    /// convention is not fixed; compare reconstructions or singular
    /// values, never factor entries.
    pub fn svd(&self) -> Result<SvdFactorization> {
        let svd = nalgebra::linalg::SVD::try_new(self.to_na(), true, true, f64::EPSILON, SVD_MAX_ITER)
            .ok_or_else(|| CoreError::numerical("svd did not converge"))?;
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        let k = svd.singular_values.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .expect("singular values are finite")
        });
        let singular_values: Vec<f64> = order.iter().map(|&c| svd.singular_values[c]).collect();
        let left = DenseMatrix::from_fn(self.rows, k, |i, j| u[(i, order[j])]);
        let right = DenseMatrix::from_fn(self.cols, k, |i, j| vt[(order[j], i)]);
        Ok(SvdFactorization { left, singular_values, right })
    }

    /// Entries of `self` restricted to the mask, in mask iteration order
    /// (row-major over sampled cells).
    pub fn apply_mask(&self, mask: &Mask) -> Result<Vec<f64>> {
        if mask.rows != self.rows || mask.cols != self.cols {
            return Err(CoreError::invalid(format!(
                "mask is {}x{} but matrix is {}x{}",
                mask.rows, mask.cols, self.rows, self.cols
            )));
        }
        Ok(mask.entries.iter().map(|&(i, j)| self.get(i, j)).collect())
    }

    pub(crate) fn to_na(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// Thin SVD: `left` is m×k with orthonormal columns, `right` is n×k with
/// orthonormal columns, `singular_values` has length k = min(m, n) and is
/// nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdFactorization {
    pub left: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub right: DenseMatrix,
}

impl SvdFactorization {
    /// left · diag(σ) · rightᵀ.
    #[must_use]
    pub fn reconstruct(&self) -> DenseMatrix {
        let k = self.singular_values.len();
        DenseMatrix::from_fn(self.left.rows(), self.right.rows(), |i, j| {
            (0..k)
                .map(|c| self.left.get(i, c) * self.singular_values[c] * self.right.get(j, c))
                .sum()
        })
    }

    /// Number of singular values above `rel_tol` times the largest.
    #[must_use]
    pub fn rank_above(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        if top <= 0.0 {
            return 0;
        }
        self.singular_values.iter().filter(|&&s| s > rel_tol * top).count()
    }

    /// Checks the factorization invariants against the matrix it claims to
    /// factor: σ nonincreasing and nonnegative, orthonormal columns, and
    /// reconstruction within 1e-10 relative Frobenius error.
    pub fn validate(&self, original: &DenseMatrix) -> Result<()> {
        let k = self.singular_values.len();
        if k != self.left.cols() || k != self.right.cols() {
            return Err(CoreError::invalid("factor widths disagree with singular value count"));
        }
        for w in self.singular_values.windows(2) {
            if w[1] > w[0] {
                return Err(CoreError::invalid("singular values not nonincreasing"));
            }
        }
        if self.singular_values.iter().any(|&s| s < 0.0) {
            return Err(CoreError::invalid("negative singular value"));
        }
        for (name, f) in [("left", &self.left), ("right", &self.right)] {
            let gram = f.transpose().matmul(f);
            for i in 0..k {
                for j in 0..k {
                    let want = if i == j { 1.0 } else { 0.0 };
                    if (gram.get(i, j) - want).abs() > 1e-10 {
                        return Err(CoreError::invalid(format!("{name} columns not orthonormal")));
                    }
                }
            }
        }
        let err = self.reconstruct().minus(original).frobenius_norm();
        let scale = original.frobenius_norm().max(1.0);
        if err > 1e-10 * scale {
            return Err(CoreError::invalid(format!(
                "reconstruction error {err:.3e} exceeds tolerance"
            )));
        }
        Ok(())
    }
}

/// Set of sampled cells of an m×n matrix: 0-based, sorted row-major, no
/// duplicates. Iteration order (and hence the layout of masked vectors) is
/// the sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize)>,
}

impl Mask {
    /// Builds a mask from cell coordinates; sorts them and rejects
    /// duplicates or out-of-range indices.
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize)>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CoreError::invalid("mask dimensions must be positive"));
        }
        for &(i, j) in &entries {
            if i >= rows || j >= cols {
                return Err(CoreError::invalid(format!(
                    "mask index ({i}, {j}) out of bounds for {rows}x{cols}"
                )));
            }
        }
        entries.sort_unstable();
        if entries.windows(2).any(|w| w[0] == w[1]) {
            return Err(CoreError::invalid("duplicate mask index"));
        }
        Ok(Mask { rows, cols, entries })
    }

    /// Mask containing every cell.
    #[must_use]
    pub fn full(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "mask dimensions must be positive");
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push((i, j));
            }
        }
        Mask { rows, cols, entries }
    }

    #[must_use]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[must_use]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[must_use]
    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    #[must_use]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.entries.binary_search(&(i, j)).is_ok()
    }

    /// Adjoint of the sampling operator on an arbitrary masked vector:
    /// places `values[k]` at the k-th sampled cell, zero elsewhere.
    pub fn embed(&self, values: &[f64]) -> Result<DenseMatrix> {
        if values.len() != self.entries.len() {
            return Err(CoreError::invalid(format!(
                "expected {} masked values, got {}",
                self.entries.len(),
                values.len()
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for (&(i, j), &v) in self.entries.iter().zip(values) {
            out.set(i, j, v);
        }
        Ok(out)
    }
}

/// Counts observed at the sampled cells, aligned with mask iteration
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedObservations {
    mask: Mask,
    counts: Vec<u64>,
}

impl MaskedObservations {
    pub fn new(mask: Mask, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != mask.len() {
            return Err(CoreError::invalid(format!(
                "expected {} counts for mask, got {}",
                mask.len(),
                counts.len()
            )));
        }
        Ok(MaskedObservations { mask, counts })
    }

    #[must_use]
    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    #[must_use]
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Dense embedding with the observed count at each sampled cell and
    /// zeros elsewhere. Exact for counts below 2^53.
    #[must_use]
    pub fn adjoint(&self) -> DenseMatrix {
        let values: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        self.mask.embed(&values).expect("counts aligned with mask by construction")
    }

    #[must_use]
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}
