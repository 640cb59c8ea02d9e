//! Row-major observation matrix plus its CSV representation.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// An `n x p` matrix of finite observations stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    p: usize,
}

impl Dataset {
    /// Builds a dataset from row-major values.
    pub fn from_flat(values: Vec<f64>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParameter("dataset dimension must be >= 1".into()));
        }
        if values.is_empty() || !values.len().is_multiple_of(p) {
            return Err(Error::InvalidParameter(format!(
                "{} values cannot form rows of length {p}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dataset row {}", i / p)));
        }
        Ok(Self { values, p })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let p = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::InvalidParameter("dataset must have at least one row".into()))?;
        let mut values = Vec::with_capacity(rows.len() * p);
        for row in rows {
            let row = row.as_ref();
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(values, p)
    }

    /// Number of rows.
    pub fn n(&self) -> usize {
        self.values.len() / self.p
    }

    /// Row length.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.p)
    }

    /// Column `k` copied out.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// Parses CSV: comma separated decimals, one row per line, lines starting
    /// with `#` and blank lines ignored.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut values = Vec::new();
        let mut p = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut count = 0;
            for field in trimmed.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: cannot parse {:?} as a number", lineno + 1, field)))?;
                if !v.is_finite() {
                    return Err(Error::Parse(format!("line {}: non-finite value", lineno + 1)));
                }
                values.push(v);
                count += 1;
            }
            match p {
                None => p = Some(count),
                Some(expected) if expected != count => {
                    return Err(Error::Parse(format!(
                        "line {}: expected {expected} columns, found {count}",
                        lineno + 1
                    )))
                }
                _ => {}
            }
        }
        let p = p.ok_or_else(|| Error::Parse("no data rows".into()))?;
        Self::from_flat(values, p)
    }

    /// Writes CSV with an optional `#` header. Values use the shortest decimal
    /// form that parses back to the identical `f64`.
    pub fn write_csv<W: Write>(&self, mut writer: W, header: Option<&str>) -> Result<()> {
        if let Some(h) = header {
            writeln!(writer, "# {h}")?;
        }
        let mut line = String::new();
        for row in self.rows() {
            line.clear();
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                write!(line, "{v:e}").expect("writing to a String cannot fail");
            }
            line.push('\n');
            writer.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}
