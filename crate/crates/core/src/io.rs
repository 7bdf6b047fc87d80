//! Matrix Market matrices, one-value-per-line mean vectors and JSON
//! configuration sets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::gmrf::GaussianPosterior;
use crate::posterior_methods::{ParamConfig, ParamConfigSet};
use crate::sparse::SparseSymmetricMatrix;

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), message: message.into() }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Coordinate entries of a Matrix Market file.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixMarket {
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    /// Zero-based `(row, col, value)`.
    pub entries: Vec<(usize, usize, f64)>,
}

pub fn parse_matrix_market(text: &str, path: &Path) -> Result<MatrixMarket> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(path, "empty file"))?;
    let h: Vec<String> = header.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if h.len() != 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" {
        return Err(parse_err(path, "missing %%MatrixMarket matrix header"));
    }
    if h[2] != "coordinate" {
        return Err(parse_err(path, "only coordinate format is supported"));
    }
    if h[3] != "real" && h[3] != "integer" {
        return Err(parse_err(path, format!("unsupported field '{}'", h[3])));
    }
    let symmetric = match h[4].as_str() {
        "symmetric" => true,
        "general" => false,
        other => return Err(parse_err(path, format!("unsupported symmetry '{other}'"))),
    };
    let mut body = lines.enumerate().filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (_, size) = body.next().ok_or_else(|| parse_err(path, "missing size line"))?;
    let size: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(path, format!("bad size line '{size}'"))))
        .collect::<Result<_>>()?;
    if size.len() != 3 {
        return Err(parse_err(path, "size line needs rows, cols and nnz"));
    }
    let (rows, cols, nnz) = (size[0], size[1], size[2]);
    let mut entries = Vec::with_capacity(nnz);
    for (lineno, line) in body {
        let t: Vec<&str> = line.split_whitespace().collect();
        let bad = || parse_err(path, format!("line {}: bad entry '{line}'", lineno + 2));
        if t.len() != 3 {
            return Err(bad());
        }
        let i: usize = t[0].parse().map_err(|_| bad())?;
        let j: usize = t[1].parse().map_err(|_| bad())?;
        let v: f64 = t[2].parse().map_err(|_| bad())?;
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(parse_err(path, format!("line {}: index out of range", lineno + 2)));
        }
        if !v.is_finite() {
            return Err(parse_err(path, format!("line {}: non-finite value", lineno + 2)));
        }
        entries.push((i - 1, j - 1, v));
    }
    if entries.len() != nnz {
        return Err(parse_err(path, format!("expected {nnz} entries, found {}", entries.len())));
    }
    Ok(MatrixMarket { rows, cols, symmetric, entries })
}

fn square(mm: &MatrixMarket, path: &Path) -> Result<()> {
    if mm.rows != mm.cols || mm.rows == 0 {
        return Err(parse_err(path, "matrix must be square and non-empty"));
    }
    Ok(())
}

/// Lower-triangle entries of a symmetric matrix; a general file must list
/// both triangles consistently.
fn lower_entries(mm: &MatrixMarket, path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    square(mm, path)?;
    if mm.symmetric {
        return Ok(mm.entries.iter().map(|&(i, j, v)| if i >= j { (i, j, v) } else { (j, i, v) }).collect());
    }
    let mut full = BTreeMap::new();
    for &(i, j, v) in &mm.entries {
        *full.entry((i, j)).or_insert(0.0) += v;
    }
    for (&(i, j), &v) in &full {
        let w = full.get(&(j, i)).copied().unwrap_or(0.0);
        if (v - w).abs() > 1e-12 * (1.0 + v.abs()) {
            return Err(parse_err(path, format!("matrix is not symmetric at ({}, {})", i + 1, j + 1)));
        }
    }
    Ok(full.into_iter().filter(|&((i, j), _)| i >= j).map(|((i, j), v)| (i, j, v)).collect())
}

pub fn read_sparse_symmetric(path: &Path) -> Result<SparseSymmetricMatrix<f64>> {
    let mm = parse_matrix_market(&read(path)?, path)?;
    SparseSymmetricMatrix::from_triplets(mm.rows, &lower_entries(&mm, path)?)
}

pub fn read_dense_symmetric(path: &Path) -> Result<DenseMatrix<f64>> {
    let mm = parse_matrix_market(&read(path)?, path)?;
    let n = mm.rows;
    let mut d = vec![vec![0.0; n]; n];
    for (i, j, v) in lower_entries(&mm, path)? {
        d[i][j] += v;
        if i != j {
            d[j][i] += v;
        }
    }
    DenseMatrix::from_rows(&d)
}

fn format_mm(n: usize, entries: &[(usize, usize, f64)]) -> String {
    let mut s = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
    let _ = writeln!(s, "{n} {n} {}", entries.len());
    for &(i, j, v) in entries {
        let _ = writeln!(s, "{} {} {:e}", i + 1, j + 1, v);
    }
    s
}

pub fn write_sparse_symmetric(path: &Path, q: &SparseSymmetricMatrix<f64>) -> Result<()> {
    write(path, &format_mm(q.dim(), &q.lower_triplets()))
}

pub fn write_dense_symmetric(path: &Path, m: &DenseMatrix<f64>) -> Result<()> {
    let mut e = Vec::new();
    for j in 0..m.cols() {
        for i in j..m.rows() {
            if m[(i, j)] != 0.0 {
                e.push((i, j, m[(i, j)]));
            }
        }
    }
    write(path, &format_mm(m.rows(), &e))
}

/// One value per line; blank lines and `#` comments are skipped.
pub fn parse_vector(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let t = line.trim().trim_end_matches(',');
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| parse_err(path, format!("line {}: not a number: '{t}'", k + 1)))?;
        if !v.is_finite() {
            return Err(parse_err(path, format!("line {}: non-finite value", k + 1)));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(parse_err(path, "no values"));
    }
    Ok(out)
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    parse_vector(&read(path)?, path)
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let mut s = String::new();
    for x in v {
        let _ = writeln!(s, "{x:e}");
    }
    write(path, &s)
}

/// Matrix file of a posterior, by storage form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatrixFile {
    Precision(PathBuf),
    Covariance(PathBuf),
}

pub fn load_posterior(matrix: &MatrixFile, mean: &Path) -> Result<GaussianPosterior<f64>> {
    let mu = read_vector(mean)?;
    match matrix {
        MatrixFile::Precision(p) => GaussianPosterior::with_precision(mu, read_sparse_symmetric(p)?),
        MatrixFile::Covariance(p) => GaussianPosterior::with_covariance(mu, read_dense_symmetric(p)?),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigEntry {
    #[serde(default)]
    theta: BTreeMap<String, f64>,
    weight: f64,
    precision_file: Option<PathBuf>,
    covariance_file: Option<PathBuf>,
    mean_file: PathBuf,
}

/// Configuration-set JSON; file paths are relative to the JSON file.
pub fn load_config_set(path: &Path) -> Result<ParamConfigSet<f64>> {
    let text = read(path)?;
    let entries: Vec<ConfigEntry> = serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut configs = Vec::with_capacity(entries.len());
    for (k, e) in entries.into_iter().enumerate() {
        let matrix = match (e.precision_file, e.covariance_file) {
            (Some(p), None) => MatrixFile::Precision(base.join(p)),
            (None, Some(c)) => MatrixFile::Covariance(base.join(c)),
            _ => {
                return Err(parse_err(
                    path,
                    format!("entry {k}: exactly one of precision_file and covariance_file is required"),
                ))
            }
        };
        let posterior = load_posterior(&matrix, &base.join(e.mean_file))?;
        configs.push(ParamConfig { theta: e.theta, weight: e.weight, posterior });
    }
    ParamConfigSet::new(configs).map_err(|e| match e {
        Error::InvalidArgument(m) => parse_err(path, m),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("excursets-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn matrix_market_round_trip() {
        let q = SparseSymmetricMatrix::from_triplets(3, &[(0, 0, 2.0), (1, 0, -1.0), (1, 1, 2.0), (2, 2, 0.125)]).unwrap();
        let p = tmp("q.mtx");
        write_sparse_symmetric(&p, &q).unwrap();
        assert_eq!(read_sparse_symmetric(&p).unwrap(), q);
        let d = read_dense_symmetric(&p).unwrap();
        assert_eq!(d, q.to_dense());
    }

    #[test]
    fn general_form_and_comments() {
        let text = "%%MatrixMarket matrix coordinate real general\n% c\n2 2 4\n1 1 1\n1 2 0.5\n2 1 0.5\n2 2 1\n";
        let mm = parse_matrix_market(text, Path::new("x")).unwrap();
        let e = lower_entries(&mm, Path::new("x")).unwrap();
        assert_eq!(e, vec![(0, 0, 1.0), (1, 0, 0.5), (1, 1, 1.0)]);
        let bad = "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 2 0.5\n";
        let mm = parse_matrix_market(bad, Path::new("x")).unwrap();
        assert!(lower_entries(&mm, Path::new("x")).is_err());
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_matrix_market("", Path::new("x")).is_err());
        assert!(parse_matrix_market("%%MatrixMarket matrix array real general\n", Path::new("x")).is_err());
        assert!(parse_matrix_market("%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1\n", Path::new("x")).is_err());
        assert!(parse_vector("1\nx\n", Path::new("m")).is_err());
        assert_eq!(parse_vector("1\n\n# c\n-2.5\n", Path::new("m")).unwrap(), vec![1.0, -2.5]);
    }

    #[test]
    fn config_set_paths_are_relative() {
        let q = tmp("c.mtx");
        write_dense_symmetric(&q, &DenseMatrix::identity(2)).unwrap();
        write_vector(&tmp("m.csv"), &[0.0, 1.0]).unwrap();
        let json = r#"[{"theta": {"kappa": 1.0}, "weight": 3, "covariance_file": "c.mtx", "mean_file": "m.csv"},
                       {"weight": 1, "precision_file": "c.mtx", "mean_file": "m.csv"}]"#;
        let path = tmp("set.json");
        fs::write(&path, json).unwrap();
        let set = load_config_set(&path).unwrap();
        assert_eq!(set.weights(), vec![0.75, 0.25]);
        assert_eq!(set.configs()[0].theta["kappa"], 1.0);
        fs::write(&path, r#"[{"weight": 1, "mean_file": "m.csv"}]"#).unwrap();
        assert!(matches!(load_config_set(&path), Err(Error::Parse { .. })));
    }
}
