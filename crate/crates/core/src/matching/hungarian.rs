//! Minimum-cost assignment of ground-truth columns to prediction rows.
//!
//! Shortest augmenting path formulation with row/column potentials, O(n² m)
//! for `n` columns and `m >= n` rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense cost matrix, rows = predictions, columns = ground-truth instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{rows}x{cols} cost matrix needs {} entries, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cost matrix has non-finite entries"));
        }
        Ok(CostMatrix { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self::new(rows, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cost of assigning column `j` to row `rows[j]`, summed in column order.
    pub fn total(&self, row_of_col: &[usize]) -> f64 {
        row_of_col
            .iter()
            .enumerate()
            .map(|(j, &i)| self.get(i, j))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Prediction row assigned to each ground-truth column.
    pub row_of_col: Vec<usize>,
    /// Summed cost, in column order.
    pub total: f64,
}

impl Assignment {
    /// `(row, col)` pairs sorted by row.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut p: Vec<_> = self
            .row_of_col
            .iter()
            .enumerate()
            .map(|(j, &i)| (i, j))
            .collect();
        p.sort_unstable();
        p
    }

    /// Column matched to each row, `None` for unmatched rows.
    pub fn col_of_row(&self, rows: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; rows];
        for (j, &i) in self.row_of_col.iter().enumerate() {
            out[i] = Some(j);
        }
        out
    }
}

/// Globally minimal assignment covering every column. Rows may stay
/// unmatched; more columns than rows is an error.
pub fn hungarian(costs: &CostMatrix) -> Result<Assignment> {
    let (m, n) = (costs.rows, costs.cols);
    if n > m {
        return Err(Error::invalid(format!(
            "{n} ground-truth instances exceed {m} prediction slots"
        )));
    }
    if n == 0 {
        return Ok(Assignment {
            row_of_col: Vec::new(),
            total: 0.0,
        });
    }
    // 1-based: columns are the left side (1..=n), rows the right side (1..=m).
    let a = |col: usize, row: usize| costs.get(row - 1, col - 1);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for col in 1..=n {
        owner[0] = col;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_of_col = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            row_of_col[owner[j] - 1] = j - 1;
        }
    }
    let total = costs.total(&row_of_col);
    Ok(Assignment { row_of_col, total })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum over every injective column -> row map, summed in column order.
    pub(crate) fn brute_force_min(c: &CostMatrix) -> f64 {
        fn rec(c: &CostMatrix, col: usize, used: &mut Vec<bool>, chosen: &mut Vec<usize>, best: &mut f64) {
            if col == c.cols() {
                *best = best.min(c.total(chosen));
                return;
            }
            for r in 0..c.rows() {
                if !used[r] {
                    used[r] = true;
                    chosen.push(r);
                    rec(c, col + 1, used, chosen, best);
                    chosen.pop();
                    used[r] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(c, 0, &mut vec![false; c.rows()], &mut Vec::new(), &mut best);
        if c.cols() == 0 {
            0.0
        } else {
            best
        }
    }

    #[test]
    fn identity_friendly() {
        let c = CostMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 }).unwrap();
        let a = hungarian(&c).unwrap();
        assert_eq!(a.row_of_col, vec![0, 1, 2, 3]);
        assert_eq!(a.total, 0.0);
    }

    #[test]
    fn all_equal_costs() {
        let c = CostMatrix::from_fn(5, 3, |_, _| 0.7).unwrap();
        let a = hungarian(&c).unwrap();
        assert!((a.total - 2.1).abs() < 1e-12);
        let mut rows = a.row_of_col.clone();
        rows.sort_unstable();
        rows.dedup();
        assert_eq!(rows.len(), 3);
    }

    #[test]
    fn more_columns_than_rows_rejected() {
        let c = CostMatrix::from_fn(2, 3, |_, _| 0.0).unwrap();
        assert!(hungarian(&c).is_err());
        let empty = CostMatrix::new(3, 0, vec![]).unwrap();
        assert_eq!(hungarian(&empty).unwrap().total, 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(CostMatrix::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn random_square_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let c = CostMatrix::from_fn(7, 7, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
            assert_eq!(hungarian(&c).unwrap().total, brute_force_min(&c));
        }
    }

    #[test]
    fn scaling_keeps_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = CostMatrix::from_fn(6, 4, |_, _| rng.gen_range(0.0..1.0)).unwrap();
        let scaled = CostMatrix::new(6, 4, c.values().iter().map(|v| v * 3.5).collect()).unwrap();
        assert_eq!(hungarian(&c).unwrap().row_of_col, hungarian(&scaled).unwrap().row_of_col);
    }
}
