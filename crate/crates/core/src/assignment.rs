//! Rectangular minimum-cost linear assignment.
//!
//! Shortest augmenting path formulation of Jonker-Volgenant (as described by
//! Crouse for the rectangular case): one Dijkstra-like search per row over
//! reduced costs, maintaining dual potentials so every augmentation keeps
//! the partial matching optimal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("cost matrix must have at least one row and one column")]
    Empty,
    #[error("cost matrix row {row} has {got} entries, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("non-finite cost {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Solves min-cost assignment of `min(rows, cols)` pairs.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<AssignmentResult, AssignmentError> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(AssignmentError::Empty);
    }
    for (r, row) in cost.iter().enumerate() {
        if row.len() != cols {
            return Err(AssignmentError::Ragged {
                row: r,
                got: row.len(),
                expected: cols,
            });
        }
        if let Some((c, &value)) = row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(AssignmentError::NonFinite { row: r, col: c, value });
        }
    }

    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| if transpose { cost[j][i] } else { cost[i][j] };
    let col_for_row = shortest_augmenting_path(n, m, at);

    let mut pairs: Vec<(usize, usize)> = col_for_row
        .iter()
        .enumerate()
        .map(|(i, &j)| if transpose { (j, i) } else { (i, j) })
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, c)| cost[r][c]).sum();

    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for &(r, c) in &pairs {
        row_used[r] = true;
        col_used[c] = true;
    }
    Ok(AssignmentResult {
        pairs,
        total_cost,
        unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..cols).filter(|&c| !col_used[c]).collect(),
    })
}

/// `n <= m`. Returns the assigned column for each row.
fn shortest_augmenting_path(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; m];
    let mut col4row = vec![NONE; n];
    let mut row4col = vec![NONE; m];
    let mut path = vec![NONE; m];
    let mut shortest = vec![f64::INFINITY; m];
    let mut scanned_rows = vec![false; n];
    let mut scanned_cols = vec![false; m];
    let mut remaining: Vec<usize> = Vec::with_capacity(m);

    for cur_row in 0..n {
        shortest.fill(f64::INFINITY);
        path.fill(NONE);
        scanned_rows.fill(false);
        scanned_cols.fill(false);
        remaining.clear();
        remaining.extend((0..m).rev());

        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink = loop {
            scanned_rows[i] = true;
            let mut lowest = f64::INFINITY;
            let mut index = NONE;
            for (it, &j) in remaining.iter().enumerate() {
                let reduced = min_val + cost(i, j) - u[i] - v[j];
                if reduced < shortest[j] {
                    path[j] = i;
                    shortest[j] = reduced;
                }
                // Prefer unassigned columns on ties so augmentation ends sooner.
                if shortest[j] < lowest || (shortest[j] == lowest && row4col[j] == NONE) {
                    lowest = shortest[j];
                    index = it;
                }
            }
            min_val = lowest;
            let j = remaining.swap_remove(index);
            scanned_cols[j] = true;
            if row4col[j] == NONE {
                break j;
            }
            i = row4col[j];
        };

        u[cur_row] += min_val;
        for r in 0..n {
            if scanned_rows[r] && r != cur_row {
                u[r] += min_val - shortest[col4row[r]];
            }
        }
        for c in 0..m {
            if scanned_cols[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }
    col4row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell() {
        let r = solve_assignment(&[vec![5.0]]).unwrap();
        assert_eq!(r.pairs, vec![(0, 0)]);
        assert_eq!(r.total_cost, 5.0);
    }

    #[test]
    fn diagonal() {
        let r = solve_assignment(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(r.total_cost, 2.0);
    }

    #[test]
    fn anti_diagonal() {
        let r = solve_assignment(&[vec![4.0, 1.0], vec![1.0, 4.0]]).unwrap();
        assert_eq!(r.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rectangular_wide_and_tall() {
        let wide = solve_assignment(&[vec![9.0, 1.0, 5.0]]).unwrap();
        assert_eq!(wide.pairs, vec![(0, 1)]);
        assert_eq!(wide.unmatched_cols, vec![0, 2]);

        let tall = solve_assignment(&[vec![3.0], vec![0.5], vec![2.0]]).unwrap();
        assert_eq!(tall.pairs, vec![(1, 0)]);
        assert_eq!(tall.unmatched_rows, vec![0, 2]);
        assert_eq!(tall.total_cost, 0.5);
    }

    #[test]
    fn negative_costs() {
        let r = solve_assignment(&[vec![-1.0, -5.0], vec![-3.0, -2.0]]).unwrap();
        assert_eq!(r.total_cost, -8.0);
    }

    #[test]
    fn errors() {
        assert_eq!(solve_assignment(&[]), Err(AssignmentError::Empty));
        assert_eq!(solve_assignment(&[vec![]]), Err(AssignmentError::Empty));
        assert!(matches!(
            solve_assignment(&[vec![1.0, f64::NAN]]),
            Err(AssignmentError::NonFinite { row: 0, col: 1, .. })
        ));
        assert!(matches!(
            solve_assignment(&[vec![1.0, 2.0], vec![1.0]]),
            Err(AssignmentError::Ragged { row: 1, .. })
        ));
    }
}
