use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Binary n×p decision matrix: `true` keeps the entry, `false` removes it.
///
/// Stored row-major; the retained count `k` is cached and kept in sync by
/// every mutator.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MinimizationMask {
    n: usize,
    p: usize,
    retained: Vec<bool>,
    k: usize,
}

impl MinimizationMask {
    pub fn full(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            retained: vec![true; n * p],
            k: n * p,
        }
    }

    pub fn empty(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            retained: vec![false; n * p],
            k: 0,
        }
    }

    pub fn from_retained(n: usize, p: usize, retained: Vec<bool>) -> Result<Self> {
        if retained.len() != n * p {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} entries, expected {n}x{p}",
                retained.len()
            )));
        }
        let k = retained.iter().filter(|&&b| b).count();
        Ok(Self { n, p, retained, k })
    }

    /// Retains the `k` entries with the largest scores (row-major order,
    /// earlier entries win ties).
    pub fn from_top_k(n: usize, p: usize, scores: &[f64], k: usize) -> Result<Self> {
        if scores.len() != n * p {
            return Err(Error::DimensionMismatch(format!(
                "score matrix has {} entries, expected {n}x{p}",
                scores.len()
            )));
        }
        if k > n * p {
            return Err(Error::InvalidArgument(format!(
                "k={k} exceeds the {} entries of the mask",
                n * p
            )));
        }
        let mut retained = vec![false; n * p];
        for idx in top_k_indices(scores, k) {
            retained[idx] = true;
        }
        Ok(Self { n, p, retained, k })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of retained entries.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    pub fn retained_fraction(&self) -> f64 {
        if self.retained.is_empty() {
            0.0
        } else {
            self.k as f64 / self.retained.len() as f64
        }
    }

    pub fn is_retained(&self, i: usize, j: usize) -> bool {
        self.retained[i * self.p + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.retained
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.retained[i * self.p..(i + 1) * self.p]
    }

    pub fn set(&mut self, i: usize, j: usize, keep: bool) {
        self.set_flat(i * self.p + j, keep);
    }

    pub fn set_flat(&mut self, idx: usize, keep: bool) {
        let old = std::mem::replace(&mut self.retained[idx], keep);
        match (old, keep) {
            (false, true) => self.k += 1,
            (true, false) => self.k -= 1,
            _ => {}
        }
    }

    pub fn retained_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.retained
            .iter()
            .enumerate()
            .filter_map(|(idx, &b)| b.then_some(idx))
    }

    pub fn removed_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.retained
            .iter()
            .enumerate()
            .filter_map(|(idx, &b)| (!b).then_some(idx))
    }

    /// 0/1 matrix view.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.p, |i, j| {
            if self.is_retained(i, j) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn check_dims(&self, n: usize, p: usize) -> Result<()> {
        if self.n != n || self.p != p {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{}, data is {n}x{p}",
                self.n, self.p
            )));
        }
        Ok(())
    }

    /// Serializes to the mask file format: a `# mask n=.. p=.. k=..` header
    /// followed by `n` comma-separated 0/1 rows.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("# mask n={} p={} k={}\n", self.n, self.p, self.k);
        for i in 0..self.n {
            for (j, &b) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push(if b { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::EmptyDataset)?;
        let (n, p, k) = parse_header(header)?;
        let mut retained = Vec::with_capacity(n * p);
        let mut rows = 0;
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != p {
                return Err(Error::Parse {
                    row: lineno + 1,
                    column: None,
                    message: format!("expected {p} mask cells, found {}", cells.len()),
                });
            }
            for (j, cell) in cells.iter().enumerate() {
                retained.push(match *cell {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(Error::Parse {
                            row: lineno + 1,
                            column: Some(j),
                            message: format!("mask cell {other:?} is not 0 or 1"),
                        })
                    }
                });
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Parse {
                row: rows + 1,
                column: None,
                message: format!("header declares n={n} rows, found {rows}"),
            });
        }
        let mask = Self::from_retained(n, p, retained)?;
        if mask.k != k {
            return Err(Error::Parse {
                row: 1,
                column: None,
                message: format!("header declares k={k}, body has {}", mask.k),
            });
        }
        Ok(mask)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_file_string(&text)
    }
}

fn parse_header(header: &str) -> Result<(usize, usize, usize)> {
    let bad = |message: String| Error::Parse {
        row: 1,
        column: None,
        message,
    };
    let rest = header
        .trim()
        .strip_prefix("# mask")
        .ok_or_else(|| bad(format!("missing '# mask' header, found {header:?}")))?;
    let (mut n, mut p, mut k) = (None, None, None);
    for token in rest.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header token {token:?}")))?;
        let value: usize = value
            .parse()
            .map_err(|_| bad(format!("header value {value:?} is not a count")))?;
        match key {
            "n" => n = Some(value),
            "p" => p = Some(value),
            "k" => k = Some(value),
            _ => return Err(bad(format!("unknown header key {key:?}"))),
        }
    }
    match (n, p, k) {
        (Some(n), Some(p), Some(k)) => Ok((n, p, k)),
        _ => Err(bad("header must declare n, p and k".into())),
    }
}

/// Indices of the `k` largest scores; ties resolved toward the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        other => other,
    });
    order.truncate(k);
    order
}

/// Removed entries carry an explicit flag, so `0.0` stays a valid datum.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizedDataset {
    values: DMatrix<f64>,
    mask: MinimizationMask,
}

impl MinimizedDataset {
    pub fn new(features: &DMatrix<f64>, mask: &MinimizationMask) -> Result<Self> {
        mask.check_dims(features.nrows(), features.ncols())?;
        let values = DMatrix::from_fn(features.nrows(), features.ncols(), |i, j| {
            if mask.is_retained(i, j) {
                features[(i, j)]
            } else {
                0.0
            }
        });
        Ok(Self {
            values,
            mask: mask.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.mask.is_retained(i, j).then(|| self.values[(i, j)])
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        !self.mask.is_retained(i, j)
    }

    pub fn mask(&self) -> &MinimizationMask {
        &self.mask
    }

    /// Values with removed entries zero-filled.
    pub fn zero_filled(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n() {
            for j in 0..self.p() {
                if j > 0 {
                    out.push(',');
                }
                if let Some(v) = self.get(i, j) {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}
