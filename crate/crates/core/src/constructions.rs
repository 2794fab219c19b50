//! Hard-instance families for the minimax lower bounds: block rate
//! matrices indexed by binary codewords, the two-level family used with
//! Fano's method, the full hypercube family used with Assouad's lemma, and
//! a randomized Gilbert–Varshamov packing of well-separated codewords.
//!
//! Families hand out members lazily; every materialized member is run
//! through the matching class validator before being returned, so class
//! membership is checked, never assumed.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::estimators::RANK_REL_TOL;
use crate::linalg::DenseMatrix;
use crate::rng::{stream, TAG_PACKING};
use rand_core::RngCore;

/// Attempt ceiling for the randomized packing search.
pub const DEFAULT_ATTEMPT_BUDGET: u64 = 10_000_000;

/// Relative slack on the class-membership inequality checks.
const CLASS_TOL: f64 = 1e-9;

/// Which lower-bound argument the family instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyMode {
    Fano,
    Assouad,
}

/// Shape parameters of a block family: m = r·k rows in r row-blocks of
/// k, n = r·l columns in r column-blocks of l. Row i carries a constant
/// value on its own block's columns and zero elsewhere, so rank ≤ r holds
/// structurally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockFamilyConfig {
    pub r: usize,
    pub k: usize,
    pub l: usize,
    pub lambda_max: f64,
    pub p: f64,
    pub mode: FamilyMode,
}

impl BlockFamilyConfig {
    /// Validates positivity plus the mode's regime condition:
    /// fano needs λmax ≥ 1/(8·l_eff·p) with l_eff = k∧l, assouad needs
    /// p ≥ 1/(2(k∧l)).
    pub fn new(r: usize, k: usize, l: usize, lambda_max: f64, p: f64, mode: FamilyMode) -> Result<Self> {
        if r == 0 || k == 0 || l == 0 {
            return Err(CoreError::invalid("r, k, l must be >= 1"));
        }
        if !(lambda_max > 0.0) {
            return Err(CoreError::invalid(format!("lambda_max must be > 0, got {lambda_max}")));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(CoreError::invalid(format!("p must lie in (0, 1], got {p}")));
        }
        let cfg = BlockFamilyConfig { r, k, l, lambda_max, p, mode };
        match mode {
            FamilyMode::Fano => {
                let bound = 1.0 / (8.0 * cfg.l_eff() as f64 * p);
                if lambda_max < bound {
                    return Err(CoreError::invalid(format!(
                        "fano regime needs lambda_max >= 1/(8*l*p) = {bound}, got {lambda_max}"
                    )));
                }
            }
            FamilyMode::Assouad => {
                let bound = 1.0 / (2.0 * k.min(l) as f64);
                if p < bound {
                    return Err(CoreError::invalid(format!(
                        "assouad regime needs p >= 1/(2*(k AND l)) = {bound}, got {p}"
                    )));
                }
            }
        }
        Ok(cfg)
    }

    pub fn rows(&self) -> usize {
        self.r * self.k
    }

    pub fn cols(&self) -> usize {
        self.r * self.l
    }

    /// The constructions assume k ≥ l and transpose otherwise; these are
    /// the internal block sizes after that reduction.
    fn k_eff(&self) -> usize {
        self.k.max(self.l)
    }

    fn l_eff(&self) -> usize {
        self.k.min(self.l)
    }

    fn is_transposed(&self) -> bool {
        self.k < self.l
    }
}

/// Block matrix in the natural orientation of `cfg` (no transposition):
/// row i of row-block q = i/k carries λ_{θ_i} on columns q·l..(q+1)·l.
pub fn block_matrix(
    theta: &[bool],
    cfg: &BlockFamilyConfig,
    lambda0: f64,
    lambda1: f64,
) -> Result<DenseMatrix> {
    block_matrix_raw(theta, cfg.r, cfg.k, cfg.l, lambda0, lambda1)
}

fn block_matrix_raw(
    theta: &[bool],
    r: usize,
    k: usize,
    l: usize,
    lambda0: f64,
    lambda1: f64,
) -> Result<DenseMatrix> {
    if theta.len() != r * k {
        return Err(CoreError::invalid(format!(
            "theta has length {}, expected r*k = {}",
            theta.len(),
            r * k
        )));
    }
    if !(lambda0 >= 0.0 && lambda1 >= 0.0) {
        return Err(CoreError::invalid("block levels must be >= 0"));
    }
    let mut out = DenseMatrix::zeros(r * k, r * l);
    for (i, &bit) in theta.iter().enumerate() {
        let value = if bit { lambda1 } else { lambda0 };
        let q = i / k;
        for j in q * l..(q + 1) * l {
            out.set(i, j, value);
        }
    }
    Ok(out)
}

fn max_axis_sums(m: &DenseMatrix, square: bool) -> (f64, f64) {
    let mut row = vec![0.0f64; m.rows()];
    let mut col = vec![0.0f64; m.cols()];
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let v = m.get(i, j);
            let v = if square { v * v } else { v };
            row[i] += v;
            col[j] += v;
        }
    }
    (
        row.iter().copied().fold(0.0, f64::max),
        col.iter().copied().fold(0.0, f64::max),
    )
}

fn validate_common(mat: &DenseMatrix, r: usize, lambda_max: f64) -> Result<()> {
    let tol = CLASS_TOL * lambda_max.max(1.0);
    if mat.min_entry() < -tol || mat.max_entry() > lambda_max + tol {
        return Err(CoreError::invalid(format!(
            "entries outside [0, {lambda_max}]: range [{}, {}]",
            mat.min_entry(),
            mat.max_entry()
        )));
    }
    let sv = mat.singular_values_only();
    if let Some(&overflow) = sv.get(r) {
        if overflow > RANK_REL_TOL * sv[0].max(1.0) {
            return Err(CoreError::invalid(format!(
                "rank exceeds {r}: singular value {overflow} at index {r}"
            )));
        }
    }
    Ok(())
}

/// Membership check for the class with linear row/column sums:
/// entries in [0, λmax], rank ≤ r, √(max row sum) + √(max col sum) ≤ 2σ₁.
pub fn validate_class_s1(mat: &DenseMatrix, r: usize, lambda_max: f64, sigma1: f64) -> Result<()> {
    validate_common(mat, r, lambda_max)?;
    let (row, col) = max_axis_sums(mat, false);
    let lhs = row.sqrt() + col.sqrt();
    if lhs > 2.0 * sigma1 * (1.0 + CLASS_TOL) {
        return Err(CoreError::invalid(format!(
            "row/col sum condition fails: {lhs} > 2*sigma1 = {}",
            2.0 * sigma1
        )));
    }
    Ok(())
}

/// Membership check for the class with squared row/column sums:
/// entries in [0, λmax], rank ≤ r, √(max row Σ M²) + √(max col Σ M²) ≤ 2σ₂.
pub fn validate_class_s2(mat: &DenseMatrix, r: usize, lambda_max: f64, sigma2: f64) -> Result<()> {
    validate_common(mat, r, lambda_max)?;
    let (row, col) = max_axis_sums(mat, true);
    let lhs = row.sqrt() + col.sqrt();
    if lhs > 2.0 * sigma2 * (1.0 + CLASS_TOL) {
        return Err(CoreError::invalid(format!(
            "squared row/col sum condition fails: {lhs} > 2*sigma2 = {}",
            2.0 * sigma2
        )));
    }
    Ok(())
}

/// Well-separated binary codewords of a fixed length.
///
/// Bit j of a codeword is stored at word j/64, bit j%64; hex serialization
/// encodes the little-endian byte stream of those words truncated to
/// ⌈m/8⌉ bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PackingSetRepr", into = "PackingSetRepr")]
pub struct PackingSet {
    m: usize,
    words_per_codeword: usize,
    codewords: Vec<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct PackingSetRepr {
    m: usize,
    codewords: Vec<String>,
}

impl From<PackingSet> for PackingSetRepr {
    fn from(p: PackingSet) -> Self {
        let codewords = (0..p.len()).map(|i| p.codeword_hex(i)).collect();
        PackingSetRepr { m: p.m, codewords }
    }
}

impl TryFrom<PackingSetRepr> for PackingSet {
    type Error = CoreError;

    fn try_from(repr: PackingSetRepr) -> Result<Self> {
        PackingSet::from_hex(repr.m, &repr.codewords)
    }
}

impl PackingSet {
    /// Builds from explicit bit-vectors, all of length `m`.
    pub fn from_codewords(m: usize, codewords: Vec<Vec<bool>>) -> Result<Self> {
        if m == 0 {
            return Err(CoreError::invalid("codeword length must be >= 1"));
        }
        let words = m.div_ceil(64);
        let mut packed = Vec::with_capacity(codewords.len());
        for bits in &codewords {
            if bits.len() != m {
                return Err(CoreError::invalid(format!(
                    "codeword length {} != {m}",
                    bits.len()
                )));
            }
            let mut w = vec![0u64; words];
            for (j, &b) in bits.iter().enumerate() {
                if b {
                    w[j / 64] |= 1 << (j % 64);
                }
            }
            packed.push(w);
        }
        Ok(PackingSet { m, words_per_codeword: words, codewords: packed })
    }

    pub fn from_hex(m: usize, lines: &[String]) -> Result<Self> {
        if m == 0 {
            return Err(CoreError::invalid("codeword length must be >= 1"));
        }
        let words = m.div_ceil(64);
        let bytes_needed = m.div_ceil(8);
        let mut packed = Vec::with_capacity(lines.len());
        for (idx, line) in lines.iter().enumerate() {
            if line.len() != 2 * bytes_needed {
                return Err(CoreError::invalid(format!(
                    "codeword {idx}: hex length {} != {}",
                    line.len(),
                    2 * bytes_needed
                )));
            }
            let mut w = vec![0u64; words];
            for b in 0..bytes_needed {
                let byte = u8::from_str_radix(&line[2 * b..2 * b + 2], 16)
                    .map_err(|e| CoreError::invalid(format!("codeword {idx}: {e}")))?;
                w[b / 8] |= (byte as u64) << (8 * (b % 8));
            }
            // Bits past m must be zero under the canonical encoding.
            let last_bits = m % 64;
            if last_bits != 0 && w[words - 1] >> last_bits != 0 {
                return Err(CoreError::invalid(format!("codeword {idx}: bits set past length {m}")));
            }
            packed.push(w);
        }
        Ok(PackingSet { m, words_per_codeword: words, codewords: packed })
    }

    #[must_use]
    pub fn m(&self) -> usize {
        self.m
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    #[must_use]
    pub fn bit(&self, idx: usize, pos: usize) -> bool {
        self.codewords[idx][pos / 64] >> (pos % 64) & 1 == 1
    }

    #[must_use]
    pub fn codeword_bits(&self, idx: usize) -> Vec<bool> {
        (0..self.m).map(|j| self.bit(idx, j)).collect()
    }

    #[must_use]
    pub fn codeword_hex(&self, idx: usize) -> String {
        let bytes_needed = self.m.div_ceil(8);
        let mut s = String::with_capacity(2 * bytes_needed);
        for b in 0..bytes_needed {
            let byte = (self.codewords[idx][b / 8] >> (8 * (b % 8))) as u8;
            s.push_str(&format!("{byte:02x}"));
        }
        s
    }

    /// Hamming distance between codewords `a` and `b`.
    #[must_use]
    pub fn hamming(&self, a: usize, b: usize) -> usize {
        self.codewords[a]
            .iter()
            .zip(&self.codewords[b])
            .map(|(x, y)| (x ^ y).count_ones() as usize)
            .sum()
    }

    /// Full pairwise audit: every pair at distance ≥ `min_dist`.
    pub fn audit(&self, min_dist: usize) -> Result<()> {
        for a in 0..self.len() {
            for b in a + 1..self.len() {
                let d = self.hamming(a, b);
                if d < min_dist {
                    return Err(CoreError::invalid(format!(
                        "codewords {a} and {b} at distance {d} < {min_dist}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Randomized greedy packing: draw uniform codewords, reject any within
/// `min_dist` of an accepted one, until `target_count` accepted. Fails
/// with the achieved count if the attempt budget runs out. Deterministic
/// given the seed; a full pairwise audit runs before returning.
pub fn gv_packing(m: usize, min_dist: usize, target_count: usize, seed: u64) -> Result<PackingSet> {
    gv_packing_with_budget(m, min_dist, target_count, seed, DEFAULT_ATTEMPT_BUDGET)
}

pub fn gv_packing_with_budget(
    m: usize,
    min_dist: usize,
    target_count: usize,
    seed: u64,
    attempt_budget: u64,
) -> Result<PackingSet> {
    if m == 0 || target_count == 0 {
        return Err(CoreError::invalid("length and target count must be >= 1"));
    }
    if min_dist == 0 || min_dist > m / 2 {
        return Err(CoreError::invalid(format!(
            "min_dist must lie in 1..=m/2 = {}, got {min_dist}",
            m / 2
        )));
    }
    let words = m.div_ceil(64);
    let last_mask = if m % 64 == 0 { u64::MAX } else { (1u64 << (m % 64)) - 1 };
    let mut rng = stream(seed, TAG_PACKING, m as u64, min_dist as u64);
    let mut accepted: Vec<Vec<u64>> = Vec::with_capacity(target_count);
    let mut attempts: u64 = 0;
    while accepted.len() < target_count {
        if attempts >= attempt_budget {
            return Err(CoreError::exhausted(format!(
                "packing reached {} of {target_count} codewords within {attempt_budget} attempts",
                accepted.len()
            )));
        }
        attempts += 1;
        let mut cand: Vec<u64> = (0..words).map(|_| rng.next_u64()).collect();
        cand[words - 1] &= last_mask;
        let ok = accepted.iter().all(|acc| {
            let d: usize = acc.iter().zip(&cand).map(|(x, y)| (x ^ y).count_ones() as usize).sum();
            d >= min_dist
        });
        if ok {
            accepted.push(cand);
        }
    }
    let set = PackingSet { m, words_per_codeword: words, codewords: accepted };
    set.audit(min_dist)?;
    Ok(set)
}

/// Default codeword target for a length-m packing: ⌈e^{m/8}⌉.
pub fn default_packing_target(m: usize) -> Result<usize> {
    let exponent = m as f64 / 8.0;
    if exponent > 20.0 {
        return Err(CoreError::invalid(format!(
            "default target e^({m}/8) is impractically large; choose a target explicitly"
        )));
    }
    Ok(exponent.exp().ceil() as usize)
}

/// Two-level block family indexed by a packing set, with levels
/// λmax/2 ∓ δ′ and δ′ = √(λmax/(32·l·p)).
#[derive(Debug, Clone)]
pub struct FanoFamily {
    pub config: BlockFamilyConfig,
    /// Half-gap between the two levels.
    pub delta_prime: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    /// Class constant: σ₁ = √(k_eff·λmax).
    pub sigma1: f64,
    /// Guaranteed pairwise Frobenius separation √(m_eff·l_eff)·δ′.
    pub min_separation: f64,
    /// Arithmetic bound on the pairwise observation divergence,
    /// m_eff·l_eff·p·2δ′²/λmax = m_eff/16 by the choice of δ′.
    pub kl_divergence_budget: f64,
    /// Output matrices are transposes of the internal k ≥ l orientation.
    pub transposed: bool,
    pub packing: PackingSet,
}

/// Builds the family over a packing of ⌈e^{m_eff/8}⌉ codewords at minimum
/// distance ⌈m_eff/4⌉, where m_eff = r·(k∨l).
pub fn fano_family(cfg: &BlockFamilyConfig, seed: u64) -> Result<FanoFamily> {
    let target = default_packing_target(cfg.r * cfg.k_eff())?;
    fano_family_with_target(cfg, target, seed)
}

pub fn fano_family_with_target(
    cfg: &BlockFamilyConfig,
    target_count: usize,
    seed: u64,
) -> Result<FanoFamily> {
    if cfg.mode != FamilyMode::Fano {
        return Err(CoreError::invalid("config mode must be fano"));
    }
    let m_eff = cfg.r * cfg.k_eff();
    let l_eff = cfg.l_eff();
    let delta_prime = (cfg.lambda_max / (32.0 * l_eff as f64 * cfg.p)).sqrt();
    let lambda0 = cfg.lambda_max / 2.0 - delta_prime;
    let lambda1 = cfg.lambda_max / 2.0 + delta_prime;
    debug_assert!(lambda0 >= -1e-12, "regime validation keeps the low level nonnegative");
    let packing = gv_packing(m_eff, m_eff.div_ceil(4), target_count, seed)?;
    Ok(FanoFamily {
        config: *cfg,
        delta_prime,
        lambda0: lambda0.max(0.0),
        lambda1,
        sigma1: (cfg.k_eff() as f64 * cfg.lambda_max).sqrt(),
        min_separation: ((m_eff * l_eff) as f64).sqrt() * delta_prime,
        kl_divergence_budget: m_eff as f64 * l_eff as f64 * cfg.p * 2.0 * delta_prime * delta_prime
            / cfg.lambda_max,
        transposed: cfg.is_transposed(),
        packing,
    })
}

impl FanoFamily {
    #[must_use]
    pub fn len(&self) -> usize {
        self.packing.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.packing.is_empty()
    }

    /// Materializes member `idx` and validates its class membership.
    pub fn member(&self, idx: usize) -> Result<DenseMatrix> {
        if idx >= self.len() {
            return Err(CoreError::invalid(format!("member {idx} out of range {}", self.len())));
        }
        let theta = self.packing.codeword_bits(idx);
        let raw = block_matrix_raw(
            &theta,
            self.config.r,
            self.config.k_eff(),
            self.config.l_eff(),
            self.lambda0,
            self.lambda1,
        )?;
        let out = if self.transposed { raw.transpose() } else { raw };
        validate_class_s1(&out, self.config.r, self.config.lambda_max, self.sigma1)?;
        Ok(out)
    }
}

/// Full hypercube family at levels 0 and λmax, with the block width
/// reduced to l_a = min(k∧l, max(1, ⌊1/(2p)⌋)) so that a whole block row
/// goes unobserved with probability ≥ 1/2.
#[derive(Debug, Clone)]
pub struct AssouadFamily {
    pub config: BlockFamilyConfig,
    /// Reduced block width actually used for the members.
    pub l_effective: usize,
    pub lambda0: f64,
    pub lambda1: f64,
    /// Class constant: σ₂ = √(k_eff)·λmax.
    pub sigma2: f64,
    /// Squared Frobenius change from flipping one codeword bit.
    pub per_bit_separation_sq: f64,
    /// Lower bound 1 − l_a·p on the probability that a row's entire block
    /// is unobserved; ≥ 1/2 whenever ⌊1/(2p)⌋ ≥ 1.
    pub missing_row_prob_lb: f64,
    pub transposed: bool,
}

pub fn assouad_family(cfg: &BlockFamilyConfig) -> Result<AssouadFamily> {
    if cfg.mode != FamilyMode::Assouad {
        return Err(CoreError::invalid("config mode must be assouad"));
    }
    let l_a = cfg.l_eff().min(((1.0 / (2.0 * cfg.p)).floor() as usize).max(1));
    Ok(AssouadFamily {
        config: *cfg,
        l_effective: l_a,
        lambda0: 0.0,
        lambda1: cfg.lambda_max,
        sigma2: (cfg.k_eff() as f64).sqrt() * cfg.lambda_max,
        per_bit_separation_sq: l_a as f64 * cfg.lambda_max * cfg.lambda_max,
        missing_row_prob_lb: (1.0 - l_a as f64 * cfg.p).max(0.0),
        transposed: cfg.is_transposed(),
    })
}

impl AssouadFamily {
    /// Codeword length: one bit per row of the internal orientation.
    #[must_use]
    pub fn theta_len(&self) -> usize {
        self.config.r * self.config.k_eff()
    }

    /// Number of rows/cols of a materialized member.
    #[must_use]
    pub fn shape(&self) -> (usize, usize) {
        let rows = self.theta_len();
        let cols = self.config.r * self.l_effective;
        if self.transposed {
            (cols, rows)
        } else {
            (rows, cols)
        }
    }

    /// Materializes the member for `theta` and validates class membership.
    pub fn member(&self, theta: &[bool]) -> Result<DenseMatrix> {
        let raw = block_matrix_raw(
            theta,
            self.config.r,
            self.config.k_eff(),
            self.l_effective,
            self.lambda0,
            self.lambda1,
        )?;
        let out = if self.transposed { raw.transpose() } else { raw };
        validate_class_s2(&out, self.config.r, self.config.lambda_max, self.sigma2)?;
        Ok(out)
    }

    /// Convenience for codewords that fit a u64: bit i of `theta` is the
    /// codeword's entry i.
    pub fn member_u64(&self, theta: u64) -> Result<DenseMatrix> {
        let len = self.theta_len();
        if len > 64 {
            return Err(CoreError::invalid(format!("codeword length {len} exceeds 64 bits")));
        }
        let bits: Vec<bool> = (0..len).map(|i| theta >> i & 1 == 1).collect();
        self.member(&bits)
    }
}
