//! Rectangular minimum-cost assignment.
//!
//! Rectangular inputs are padded to square with a constant sentinel cost. The
//! square problem is solved with the shortest-augmenting-path Hungarian method,
//! which also yields optimal dual potentials. Every optimal assignment uses only
//! edges whose reduced cost is zero under those potentials, so ties are broken
//! by searching that tight subgraph for the lexicographically smallest perfect
//! matching (row 0 takes its smallest feasible column, then row 1, ...).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced costs within this fraction of the cost scale count as tight.
const TIGHT_RELATIVE: f64 = 1e-10;

/// R×S dissimilarity matrix; lower is better.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("empty cost matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "cost matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cost matrix has non-finite entries"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dim("ragged cost matrix"));
        }
        Self::new(r, c, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Square copy padded with `2 * max + 1`.
    fn padded(&self) -> Square {
        let n = self.rows.max(self.cols);
        let sentinel = 2.0 * self.max_entry().abs() + 1.0;
        let mut data = vec![sentinel; n * n];
        for i in 0..self.rows {
            data[i * n..i * n + self.cols].copy_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
        }
        Square { n, data }
    }
}

/// A matching between cost-matrix rows and columns.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// Matched `(row, column)` pairs in ascending row order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    /// Sum of matched costs, accumulated in row order.
    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(i, j)| cost.get(i, j)).sum()
    }

    pub fn column_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }
}

struct Square {
    n: usize,
    data: Vec<f64>,
}

struct Solved {
    row_to_col: Vec<usize>,
    row_potential: Vec<f64>,
    col_potential: Vec<f64>,
}

/// Minimum-cost matching of size `min(R, S)`; among optima, the one whose
/// row-ordered column sequence is lexicographically smallest.
pub fn solve_assignment(cost: &CostMatrix) -> Result<Assignment> {
    let square = cost.padded();
    let solved = hungarian(&square);
    let tight = tight_edges(&square, &solved, cost.max_abs());
    let row_to_col = lexicographic_min(&tight, square.n, solved.row_to_col);
    Ok(to_assignment(cost, &row_to_col))
}

/// Like [`solve_assignment`], but among primary optima first minimizes the
/// total `secondary` cost, and only then breaks remaining ties lexicographically.
pub fn solve_assignment_with_tiebreak(cost: &CostMatrix, secondary: &CostMatrix) -> Result<Assignment> {
    if cost.rows != secondary.rows || cost.cols != secondary.cols {
        return Err(Error::dim(format!(
            "tie-break costs {}x{} for a {}x{} problem",
            secondary.rows, secondary.cols, cost.rows, cost.cols
        )));
    }
    let square = cost.padded();
    let solved = hungarian(&square);
    let tight = tight_edges(&square, &solved, cost.max_abs());

    let n = square.n;
    let lo = secondary.data.iter().copied().fold(0.0f64, f64::min);
    let hi = secondary.data.iter().copied().fold(0.0f64, f64::max);
    let penalty = 2.0 * n as f64 * (hi - lo) + 1.0;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let base = if i < secondary.rows && j < secondary.cols {
                secondary.get(i, j)
            } else {
                0.0
            };
            data[i * n + j] = if tight[i * n + j] { base } else { base + penalty };
        }
    }
    let refined = Square { n, data };
    let solved = hungarian(&refined);
    let scale = hi.abs().max(lo.abs()) + penalty;
    let tight = tight_edges(&refined, &solved, scale);
    let row_to_col = lexicographic_min(&tight, n, solved.row_to_col);
    Ok(to_assignment(cost, &row_to_col))
}

fn to_assignment(cost: &CostMatrix, row_to_col: &[usize]) -> Assignment {
    let mut out = Assignment::default();
    let mut col_used = vec![false; cost.cols];
    for (i, &j) in row_to_col.iter().enumerate().take(cost.rows) {
        if j < cost.cols {
            out.pairs.push((i, j));
            col_used[j] = true;
        } else {
            out.unmatched_rows.push(i);
        }
    }
    out.unmatched_cols = (0..cost.cols).filter(|&j| !col_used[j]).collect();
    out
}

/// O(n³) shortest augmenting path with potentials.
fn hungarian(sq: &Square) -> Solved {
    let n = sq.n;
    let a = |i: usize, j: usize| sq.data[(i - 1) * n + (j - 1)];
    // 1-based; index 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
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
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    Solved {
        row_to_col,
        row_potential: u[1..].to_vec(),
        col_potential: v[1..].to_vec(),
    }
}

fn tight_edges(sq: &Square, solved: &Solved, scale: f64) -> Vec<bool> {
    let n = sq.n;
    let eps = TIGHT_RELATIVE * (1.0 + scale) * n as f64;
    let mut tight = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let reduced = sq.data[i * n + j] - solved.row_potential[i] - solved.col_potential[j];
            tight[i * n + j] = reduced <= eps;
        }
    }
    // matched edges are tight by construction; guard against drift
    for (i, &j) in solved.row_to_col.iter().enumerate() {
        tight[i * n + j] = true;
    }
    tight
}

/// Lexicographically smallest perfect matching inside the tight subgraph,
/// starting from any perfect matching `row_to_col` of it.
fn lexicographic_min(tight: &[bool], n: usize, mut row_to_col: Vec<usize>) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    let mut col_to_row = vec![NONE; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }

    struct Search<'a> {
        tight: &'a [bool],
        n: usize,
        row_to_col: &'a mut [usize],
        col_to_row: &'a mut [usize],
        visited: Vec<bool>,
        pivot: usize,
        target: usize,
    }

    impl Search<'_> {
        // Re-seat `row` on some column, ending the alternating path at `target`.
        // Rows at or before `pivot` are fixed.
        fn reseat(&mut self, row: usize) -> bool {
            for c in 0..self.n {
                if !self.tight[row * self.n + c] || self.visited[c] {
                    continue;
                }
                self.visited[c] = true;
                let owner = self.col_to_row[c];
                let free = c == self.target;
                if free || (owner > self.pivot && owner != NONE && self.reseat(owner)) {
                    self.row_to_col[row] = c;
                    self.col_to_row[c] = row;
                    return true;
                }
            }
            false
        }
    }

    for i in 0..n {
        let current = row_to_col[i];
        for j in 0..current {
            if !tight[i * n + j] {
                continue;
            }
            let displaced = col_to_row[j];
            if displaced < i {
                continue;
            }
            row_to_col[i] = j;
            col_to_row[j] = i;
            col_to_row[current] = NONE;
            let mut visited = vec![false; n];
            visited[j] = true;
            let mut search = Search {
                tight,
                n,
                row_to_col: &mut row_to_col,
                col_to_row: &mut col_to_row,
                visited,
                pivot: i,
                target: current,
            };
            if search.reseat(displaced) {
                break;
            }
            row_to_col[i] = current;
            col_to_row[current] = i;
            col_to_row[j] = displaced;
            row_to_col[displaced] = j;
        }
    }
    row_to_col
}
