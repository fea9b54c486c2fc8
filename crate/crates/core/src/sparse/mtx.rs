//! Matrix Market exchange format: symmetric coordinate matrices and dense
//! array vectors.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::csr::CsrMatrix;

/// Writes a symmetric matrix as `coordinate real symmetric`, lower triangle,
/// 1-based indices, 17 significant digits.
pub fn write_symmetric(a: &CsrMatrix) -> Result<String> {
    if !a.is_symmetric() {
        return Err(Error::InvalidMatrix("symmetric output requires a symmetric matrix".into()));
    }
    let lower = a.lower();
    let mut s = String::with_capacity(32 * lower.nnz() + 64);
    s.push_str("%%MatrixMarket matrix coordinate real symmetric\n");
    let _ = writeln!(s, "{} {} {}", a.n(), a.n(), lower.nnz());
    for i in 0..lower.n() {
        let (cols, vals) = lower.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let _ = writeln!(s, "{} {} {:.16e}", i + 1, j + 1, v);
        }
    }
    Ok(s)
}

/// Writes a general (possibly non-symmetric) matrix, used for factor dumps.
pub fn write_general(a: &CsrMatrix) -> String {
    let mut s = String::with_capacity(32 * a.nnz() + 64);
    s.push_str("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(s, "{} {} {}", a.n(), a.n(), a.nnz());
    for i in 0..a.n() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let _ = writeln!(s, "{} {} {:.16e}", i + 1, j + 1, v);
        }
    }
    s
}

pub fn write_vector(v: &[f64]) -> String {
    let mut s = String::with_capacity(26 * v.len() + 64);
    s.push_str("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(s, "{} 1", v.len());
    for x in v {
        let _ = writeln!(s, "{x:.16e}");
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    /// Next non-comment, non-blank line with its 1-based number.
    fn next_data(&mut self) -> Option<(usize, &'a str)> {
        self.inner
            .by_ref()
            .map(|(k, l)| (k + 1, l.trim()))
            .find(|(_, l)| !l.is_empty() && !l.starts_with('%'))
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn header(text: &str) -> Result<(Vec<String>, Lines<'_>)> {
    let mut it = text.lines().enumerate();
    let (_, first) = it.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let tokens: Vec<String> = first.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(1, "missing %%MatrixMarket matrix header"));
    }
    Ok((tokens, Lines { inner: it }))
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what}")))
}

/// Reads a square `coordinate real` matrix (`symmetric` or `general`).
pub fn read_matrix(text: &str) -> Result<CsrMatrix> {
    let (tokens, mut lines) = header(text)?;
    if tokens[2] != "coordinate" || tokens[3] != "real" {
        return Err(parse_err(1, "expected coordinate real matrix"));
    }
    let symmetric = match tokens[4].as_str() {
        "symmetric" => true,
        "general" => false,
        other => return Err(parse_err(1, format!("unsupported symmetry {other}"))),
    };
    let (ln, size) = lines.next_data().ok_or_else(|| parse_err(2, "missing size line"))?;
    let mut it = size.split_whitespace();
    let rows: usize = parse_num(it.next(), ln, "row count")?;
    let cols: usize = parse_num(it.next(), ln, "column count")?;
    let nnz: usize = parse_num(it.next(), ln, "entry count")?;
    if rows != cols {
        return Err(parse_err(ln, "matrix must be square"));
    }
    let mut triplets = Vec::with_capacity(if symmetric { 2 * nnz } else { nnz });
    for _ in 0..nnz {
        let (ln, l) = lines.next_data().ok_or_else(|| parse_err(0, "fewer entries than declared"))?;
        let mut it = l.split_whitespace();
        let i: usize = parse_num(it.next(), ln, "row index")?;
        let j: usize = parse_num(it.next(), ln, "column index")?;
        let v: f64 = parse_num(it.next(), ln, "value")?;
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(parse_err(ln, "index out of range"));
        }
        if symmetric && j > i {
            return Err(parse_err(ln, "symmetric file stores the upper triangle"));
        }
        triplets.push((i - 1, j - 1, v));
        if symmetric && i != j {
            triplets.push((j - 1, i - 1, v));
        }
    }
    CsrMatrix::from_triplets(rows, &triplets)
}

/// Reads an `array real general` column vector.
pub fn read_vector(text: &str) -> Result<Vec<f64>> {
    let (tokens, mut lines) = header(text)?;
    if tokens[2] != "array" || tokens[3] != "real" {
        return Err(parse_err(1, "expected array real vector"));
    }
    let (ln, size) = lines.next_data().ok_or_else(|| parse_err(2, "missing size line"))?;
    let mut it = size.split_whitespace();
    let rows: usize = parse_num(it.next(), ln, "row count")?;
    let cols: usize = parse_num(it.next(), ln, "column count")?;
    if cols != 1 {
        return Err(parse_err(ln, "vector must have one column"));
    }
    let mut v = Vec::with_capacity(rows);
    for _ in 0..rows {
        let (ln, l) = lines.next_data().ok_or_else(|| parse_err(0, "fewer values than declared"))?;
        let x: f64 = parse_num(l.split_whitespace().next(), ln, "value")?;
        if !x.is_finite() {
            return Err(parse_err(ln, "non-finite value"));
        }
        v.push(x);
    }
    Ok(v)
}

pub fn read_matrix_file(path: &Path) -> Result<CsrMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    read_matrix(&text)
}

pub fn read_vector_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    read_vector(&text)
}
