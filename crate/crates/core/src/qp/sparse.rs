use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Coordinate-format matrix. Duplicate entries are summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    /// # Panics
    /// If an entry lies outside the `nrows x ncols` shape.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        for &(r, c, _) in &entries {
            assert!(
                r < nrows && c < ncols,
                "entry ({r}, {c}) outside {nrows}x{ncols}"
            );
        }
        Self {
            nrows,
            ncols,
            entries,
        }
    }

    pub fn from_dense(rows: &[Vec<f64>], ncols: usize) -> Self {
        let entries = rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(move |(c, &v)| (r, c, v))
            })
            .collect();
        Self::from_triplets(rows.len(), ncols, entries)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.2.is_finite())
    }

    /// Summed entries keyed by `(row, col)`, explicit zeros dropped.
    pub fn entry_map(&self) -> BTreeMap<(usize, usize), f64> {
        let mut map = BTreeMap::new();
        for &(r, c, v) in &self.entries {
            *map.entry((r, c)).or_insert(0.0) += v;
        }
        map.retain(|_, v| *v != 0.0);
        map
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            out[r] += v * x[c];
        }
        out
    }

    /// `out += self' * y`
    pub fn mul_t_vec_add(&self, y: &[f64], out: &mut [f64]) {
        for &(r, c, v) in &self.entries {
            out[c] += v * y[r];
        }
    }

    pub(crate) fn add_diagonal(&self, shift: f64) -> Self {
        let mut out = self.clone();
        out.entries
            .extend((0..self.nrows.min(self.ncols)).map(|i| (i, i, shift)));
        out
    }

    pub(crate) fn without_row(&self, row: usize) -> Self {
        let entries = self
            .entries
            .iter()
            .filter(|e| e.0 != row)
            .map(|&(r, c, v)| (if r > row { r - 1 } else { r }, c, v))
            .collect();
        Self {
            nrows: self.nrows - 1,
            ncols: self.ncols,
            entries,
        }
    }

    pub fn to_dense_rows(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for &(r, c, v) in &self.entries {
            out[r][c] += v;
        }
        out
    }
}
