//! File formats: dense CSV matrices, MatrixMarket coordinate counts, and
//! the sparse observation triples produced by `simulate`.
//!
//! Round-trip contract: counts are written and reparsed exactly; real
//! values are written with Rust's shortest-round-trip `Display`, so a
//! write-then-read cycle reproduces the same f64 bit pattern.

use std::fmt::Write as _;
use std::path::Path;

use countrank_core::{DenseMatrix, Mask, MaskedObservations};

use crate::error::{CliError, Result};

/// Largest count representable exactly in an f64 cell.
const MAX_EXACT_COUNT: u64 = 1 << 53;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Reads a dense matrix of counts. MatrixMarket coordinate-integer files
/// are recognized by their `%%MatrixMarket` banner; anything else is
/// parsed as headerless comma-separated rows. Negative or fractional
/// cells are rejected with their position.
pub fn read_count_matrix(path: &Path) -> Result<DenseMatrix> {
    let text = read_text(path)?;
    if text.trim_start().starts_with("%%MatrixMarket") {
        parse_matrix_market(path, &text)
    } else {
        parse_dense(path, &text, CellKind::Count)
    }
}

/// Reads a dense matrix of nonnegative reals from headerless CSV.
pub fn read_rate_matrix(path: &Path) -> Result<DenseMatrix> {
    let text = read_text(path)?;
    parse_dense(path, &text, CellKind::Rate)
}

/// Writes a dense matrix as headerless CSV, one row per line, cells in
/// shortest-round-trip decimal.
pub fn write_dense_csv(matrix: &DenseMatrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..matrix.rows() {
        for j in 0..matrix.cols() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{}", matrix.get(i, j)).expect("string write cannot fail");
        }
        out.push('\n');
    }
    write_text(path, &out)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CellKind {
    Count,
    Rate,
}

fn parse_dense(path: &Path, text: &str, kind: CellKind) -> Result<DenseMatrix> {
    let mut data: Vec<f64> = Vec::new();
    let mut cols = 0usize;
    let mut rows = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if rows == 0 {
            cols = cells.len();
        } else if cells.len() != cols {
            return Err(CliError::data(format!(
                "{}: line {line_no}: expected {cols} cells, found {}",
                path.display(),
                cells.len()
            )));
        }
        for (c, cell) in cells.iter().enumerate() {
            data.push(parse_cell(path, cell.trim(), kind, line_no, c + 1)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::data(format!("{}: no matrix rows found", path.display())));
    }
    DenseMatrix::new(rows, cols, data).map_err(Into::into)
}

fn parse_cell(path: &Path, cell: &str, kind: CellKind, line: usize, col: usize) -> Result<f64> {
    let at = format!("{}: line {line}, column {col}", path.display());
    if cell.is_empty() {
        return Err(CliError::data(format!("{at}: empty cell")));
    }
    match kind {
        CellKind::Count => match cell.parse::<u64>() {
            Ok(v) if v <= MAX_EXACT_COUNT => Ok(v as f64),
            Ok(v) => Err(CliError::data(format!(
                "{at}: count {v} exceeds the exactly representable range"
            ))),
            Err(_) => Err(CliError::data(format!(
                "{at}: counts must be plain nonnegative integers, got '{cell}'"
            ))),
        },
        CellKind::Rate => {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::data(format!("{at}: not a real number: '{cell}'"))
            })?;
            if !v.is_finite() {
                return Err(CliError::data(format!("{at}: value must be finite, got '{cell}'")));
            }
            if v < 0.0 {
                return Err(CliError::data(format!("{at}: value must be nonnegative, got {v}")));
            }
            Ok(v)
        }
    }
}

fn parse_matrix_market(path: &Path, text: &str) -> Result<DenseMatrix> {
    let at = |line: usize| format!("{}: line {line}", path.display());
    let mut lines = text.lines().enumerate();
    let (_, banner) = lines
        .next()
        .ok_or_else(|| CliError::data(format!("{}: empty file", path.display())))?;
    let tokens: Vec<String> = banner.split_whitespace().map(str::to_lowercase).collect();
    let expect = ["%%matrixmarket", "matrix", "coordinate", "integer", "general"];
    if tokens.len() != expect.len() || tokens.iter().zip(expect).any(|(t, e)| t != e) {
        return Err(CliError::data(format!(
            "{}: unsupported MatrixMarket header '{banner}'; \
             expected 'matrix coordinate integer general'",
            path.display()
        )));
    }

    // Size line: first line that is neither blank nor a % comment.
    let mut size: Option<(usize, usize, usize, usize)> = None;
    for (idx, line) in lines.by_ref() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = trimmed.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(CliError::data(format!(
                "{}: expected 'rows cols nonzeros'", at(idx + 1)
            )));
        }
        let dims: Vec<usize> = parts
            .iter()
            .map(|s| {
                s.parse::<usize>().map_err(|_| {
                    CliError::data(format!("{}: bad size field '{s}'", at(idx + 1)))
                })
            })
            .collect::<Result<_>>()?;
        size = Some((dims[0], dims[1], dims[2], idx + 1));
        break;
    }
    let (m, n, nnz, size_line) =
        size.ok_or_else(|| CliError::data(format!("{}: missing size line", path.display())))?;
    if m == 0 || n == 0 {
        return Err(CliError::data(format!("{}: matrix dimensions must be positive", at(size_line))));
    }

    let mut dense = DenseMatrix::zeros(m, n);
    let mut seen = vec![false; m * n];
    let mut found = 0usize;
    for (idx, line) in lines {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        if found == nnz {
            return Err(CliError::data(format!(
                "{}: more than the declared {nnz} entries", at(idx + 1)
            )));
        }
        let parts: Vec<&str> = trimmed.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(CliError::data(format!("{}: expected 'i j count'", at(idx + 1))));
        }
        let i: usize = parts[0]
            .parse()
            .map_err(|_| CliError::data(format!("{}: bad row index '{}'", at(idx + 1), parts[0])))?;
        let j: usize = parts[1]
            .parse()
            .map_err(|_| CliError::data(format!("{}: bad column index '{}'", at(idx + 1), parts[1])))?;
        if i == 0 || i > m || j == 0 || j > n {
            return Err(CliError::data(format!(
                "{}: index ({i}, {j}) outside 1..={m} x 1..={n}", at(idx + 1)
            )));
        }
        let v: u64 = parts[2].parse().map_err(|_| {
            CliError::data(format!(
                "{}: counts must be plain nonnegative integers, got '{}'",
                at(idx + 1),
                parts[2]
            ))
        })?;
        if v > MAX_EXACT_COUNT {
            return Err(CliError::data(format!(
                "{}: count {v} exceeds the exactly representable range", at(idx + 1)
            )));
        }
        let flat = (i - 1) * n + (j - 1);
        if seen[flat] {
            return Err(CliError::data(format!(
                "{}: duplicate entry for ({i}, {j})", at(idx + 1)
            )));
        }
        seen[flat] = true;
        dense.set(i - 1, j - 1, v as f64);
        found += 1;
    }
    if found != nnz {
        return Err(CliError::data(format!(
            "{}: declared {nnz} entries but found {found}",
            path.display()
        )));
    }
    Ok(dense)
}

/// Writes sampled observations as `i,j,count` triples (0-based, row-major
/// order), preceded by a metadata line recording the matrix shape, the
/// sampling probability, and the seed.
pub fn write_observations(
    obs: &MaskedObservations,
    p: f64,
    seed: u64,
    path: &Path,
) -> Result<()> {
    let mask = obs.mask();
    let mut out = String::new();
    writeln!(out, "# m={} n={} p={p} seed={seed}", mask.rows(), mask.cols())
        .expect("string write cannot fail");
    out.push_str("i,j,count\n");
    for (&(i, j), &c) in mask.entries().iter().zip(obs.counts()) {
        writeln!(out, "{i},{j},{c}").expect("string write cannot fail");
    }
    write_text(path, &out)
}

/// Reads an observation file back into masked counts plus the recorded
/// sampling probability and seed. Counts reload exactly; `p` reloads to
/// the identical f64 because it was written in shortest-round-trip form.
pub fn read_observations(path: &Path) -> Result<(MaskedObservations, f64, u64)> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();

    let (_, meta) = lines
        .next()
        .ok_or_else(|| CliError::data(format!("{}: empty file", path.display())))?;
    let meta = meta.strip_prefix('#').ok_or_else(|| {
        CliError::data(format!("{}: line 1: expected '# m=.. n=.. p=.. seed=..'", path.display()))
    })?;
    let (mut m, mut n, mut p, mut seed) = (None, None, None, None);
    for token in meta.split_whitespace() {
        let (key, value) = token.split_once('=').ok_or_else(|| {
            CliError::data(format!("{}: line 1: bad metadata token '{token}'", path.display()))
        })?;
        let bad =
            |k: &str| CliError::data(format!("{}: line 1: bad value for {k}", path.display()));
        match key {
            "m" => m = Some(value.parse::<usize>().map_err(|_| bad("m"))?),
            "n" => n = Some(value.parse::<usize>().map_err(|_| bad("n"))?),
            "p" => p = Some(value.parse::<f64>().map_err(|_| bad("p"))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("seed"))?),
            other => {
                return Err(CliError::data(format!(
                    "{}: line 1: unknown metadata key '{other}'",
                    path.display()
                )))
            }
        }
    }
    let missing = |k: &str| CliError::data(format!("{}: line 1: missing {k}", path.display()));
    let (m, n) = (m.ok_or_else(|| missing("m"))?, n.ok_or_else(|| missing("n"))?);
    let p = p.ok_or_else(|| missing("p"))?;
    let seed = seed.ok_or_else(|| missing("seed"))?;

    match lines.next() {
        Some((_, header)) if header.trim() == "i,j,count" => {}
        _ => {
            return Err(CliError::data(format!(
                "{}: line 2: expected column header 'i,j,count'",
                path.display()
            )))
        }
    }

    let mut triples: Vec<(usize, usize, u64)> = Vec::new();
    for (idx, line) in lines {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let at = format!("{}: line {}", path.display(), idx + 1);
        let parts: Vec<&str> = trimmed.split(',').collect();
        if parts.len() != 3 {
            return Err(CliError::data(format!("{at}: expected 'i,j,count'")));
        }
        let i: usize = parts[0]
            .trim()
            .parse()
            .map_err(|_| CliError::data(format!("{at}: bad row index '{}'", parts[0])))?;
        let j: usize = parts[1]
            .trim()
            .parse()
            .map_err(|_| CliError::data(format!("{at}: bad column index '{}'", parts[1])))?;
        let c: u64 = parts[2].trim().parse().map_err(|_| {
            CliError::data(format!(
                "{at}: counts must be plain nonnegative integers, got '{}'",
                parts[2]
            ))
        })?;
        if c > MAX_EXACT_COUNT {
            return Err(CliError::data(format!(
                "{at}: count {c} exceeds the exactly representable range"
            )));
        }
        triples.push((i, j, c));
    }

    // Mask construction sorts its cells, so order the counts the same way
    // before pairing them up.
    triples.sort_unstable_by_key(|&(i, j, _)| (i, j));
    if let Some(w) = triples.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
        return Err(CliError::data(format!(
            "{}: duplicate observation for cell ({}, {})",
            path.display(),
            w[0].0,
            w[0].1
        )));
    }
    let cells: Vec<(usize, usize)> = triples.iter().map(|&(i, j, _)| (i, j)).collect();
    let counts: Vec<u64> = triples.iter().map(|&(_, _, c)| c).collect();
    let mask = Mask::new(m, n, cells)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let obs = MaskedObservations::new(mask, counts)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok((obs, p, seed))
}

/// Pretty JSON with a trailing newline, matching the core report writers.
pub fn to_pretty_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::data(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}
