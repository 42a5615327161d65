//! Dense multivariate time series.

use crate::error::{Error, Result};

/// A sequence of equally-dimensioned feature vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    dim: usize,
    data: Vec<f64>,
}

impl Series {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() {
            return Err(Error::EmptySeries);
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: data.len() % dim,
            });
        }
        Ok(Series { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptySeries)?.as_ref().len();
        let mut data = Vec::with_capacity(first * rows.len());
        for row in rows {
            let row = row.as_ref();
            if row.len() != first {
                return Err(Error::DimensionMismatch {
                    left: first,
                    right: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Series::new(first, data)
    }

    /// One-dimensional series, one value per time step.
    pub fn univariate(values: &[f64]) -> Result<Self> {
        Series::new(1, values.to_vec())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.len() - 1)
    }

    /// Time-reversed copy.
    pub fn reversed(&self) -> Series {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.dim).rev() {
            data.extend_from_slice(row);
        }
        Series {
            dim: self.dim,
            data,
        }
    }
}

pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Series {
    /// Parses one time step per line; values separated by whitespace or commas.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse_text(text: &str) -> Result<Series> {
        let mut dim = None;
        let mut data = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut count = 0;
            for token in line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
            {
                let value: f64 = token
                    .parse()
                    .map_err(|_| Error::parse(lineno + 1, format!("invalid number {token:?}")))?;
                if !value.is_finite() {
                    return Err(Error::parse(lineno + 1, "non-finite value"));
                }
                data.push(value);
                count += 1;
            }
            match dim {
                None => dim = Some(count),
                Some(d) if d != count => {
                    return Err(Error::parse(
                        lineno + 1,
                        format!("expected {d} values, found {count}"),
                    ))
                }
                _ => {}
            }
        }
        Series::new(dim.ok_or(Error::EmptySeries)?, data)
    }
}
