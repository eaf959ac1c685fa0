//! Immutable binary data matrices and their CSV dialect.
//!
//! The dialect is strict: comma separated, a header row of unique column
//! names, and cells that are exactly `0` or `1`.

use std::collections::HashSet;
use std::io::{Read, Write};

use crate::error::DataError;

/// An `n x d` matrix over {0, 1} with named columns, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryDataset {
    n: usize,
    d: usize,
    values: Vec<u8>,
    names: Vec<String>,
}

impl BinaryDataset {
    pub fn new(names: Vec<String>, values: Vec<u8>) -> Result<Self, DataError> {
        let d = names.len();
        let mut seen = HashSet::with_capacity(d);
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateName(name.clone()));
            }
        }
        if d == 0 || values.is_empty() {
            return Err(DataError::Empty);
        }
        if !values.len().is_multiple_of(d) {
            return Err(DataError::Shape {
                len: values.len(),
                n: values.len() / d,
                d,
            });
        }
        if let Some(pos) = values.iter().position(|&v| v > 1) {
            return Err(DataError::NonBinary {
                line: pos / d + 2,
                column: names[pos % d].clone(),
                value: values[pos].to_string(),
            });
        }
        Ok(Self {
            n: values.len() / d,
            d,
            values,
            names,
        })
    }

    /// Builds a dataset with default column names `X1..Xd`.
    pub fn from_rows(d: usize, values: Vec<u8>) -> Result<Self, DataError> {
        Self::new(default_names(d), values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[row * self.d + col]
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.values[row * self.d..(row + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.values.chunks_exact(self.d)
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = u8> + '_ {
        self.values.iter().skip(col).step_by(self.d).copied()
    }

    /// Number of ones in each column.
    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0usize; self.d];
        for row in self.rows() {
            for (s, &v) in sums.iter_mut().zip(row) {
                *s += v as usize;
            }
        }
        sums
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Returns the dataset with columns reordered so that new column `k` is
    /// old column `order[k]`.
    pub fn select_columns(&self, order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.n * order.len());
        for row in self.rows() {
            values.extend(order.iter().map(|&c| row[c]));
        }
        Self {
            n: self.n,
            d: order.len(),
            values,
            names: order.iter().map(|&c| self.names[c].clone()).collect(),
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = records.next().ok_or(DataError::MissingHeader)??;
        let names: Vec<String> = header.iter().map(str::to_string).collect();
        let d = names.len();
        let mut values = Vec::new();
        for (i, record) in records.enumerate() {
            let record = record?;
            let line = i + 2;
            if record.len() != d {
                return Err(DataError::Ragged {
                    line,
                    expected: d,
                    found: record.len(),
                });
            }
            for (c, cell) in record.iter().enumerate() {
                let v = match cell {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(DataError::NonBinary {
                            line,
                            column: names[c].clone(),
                            value: other.to_string(),
                        })
                    }
                };
                values.push(v);
            }
        }
        Self::new(names, values)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.names.join(","))?;
        let mut line = String::with_capacity(2 * self.d);
        for row in self.rows() {
            line.clear();
            for (k, &v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push(if v == 1 { '1' } else { '0' });
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

pub fn default_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("X{j}")).collect()
}
