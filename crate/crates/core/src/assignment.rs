//! Minimum-cost one-to-one assignment (Hungarian / Kuhn-Munkres).
//!
//! [`hungarian`] solves rectangular problems, pairing `min(rows, cols)` rows
//! and columns. Among several optimal assignments it returns the
//! lexicographically smallest row→column mapping, where an unassigned row
//! sorts after every column.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs in increasing row order.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the chosen entries, accumulated in row order.
    pub cost: f64,
}

impl Assignment {
    /// Row → column mapping of length `rows`.
    pub fn mapping(&self, rows: usize) -> Vec<Option<usize>> {
        let mut m = vec![None; rows];
        for &(r, c) in &self.pairs {
            m[r] = Some(c);
        }
        m
    }
}

/// Optimal cost of the square problem `cost` (n×n), via shortest augmenting
/// paths with potentials. Returns `col_of_row`.
fn solve_square(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based arrays as in the classic formulation; index 0 is the virtual root.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Optimal cost of assigning `min(|rows|, |cols|)` pairs among the given
/// subsets of rows and columns.
fn optimal_cost(cost: &Array2<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let n = rows.len().max(cols.len());
    let mut sq = vec![0.0; n * n];
    for (a, &r) in rows.iter().enumerate() {
        for (b, &c) in cols.iter().enumerate() {
            sq[a * n + b] = cost[[r, c]];
        }
    }
    let col_of_row = solve_square(&sq, n);
    rows.iter()
        .enumerate()
        .filter_map(|(a, &r)| cols.get(col_of_row[a]).map(|&c| cost[[r, c]]))
        .sum()
}

/// Minimum-cost assignment of `min(rows, cols)` pairs with lexicographic
/// tie-breaking. Entries must be finite.
pub fn hungarian(cost: &Array2<f64>) -> Result<Assignment> {
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cost matrix entries must be finite".into()));
    }
    let (nr, nc) = cost.dim();
    if nr == 0 || nc == 0 {
        return Ok(Assignment {
            pairs: vec![],
            cost: 0.0,
        });
    }
    let all_rows: Vec<usize> = (0..nr).collect();
    let all_cols: Vec<usize> = (0..nc).collect();
    let best = optimal_cost(cost, &all_rows, &all_cols);
    let tol = 1e-9 * best.abs().max(1.0);

    let mut pairs = Vec::new();
    let mut fixed = 0.0;
    let mut free_cols = all_cols;
    let mut needed = nr.min(nc);
    for i in 0..nr {
        if needed == 0 {
            break;
        }
        let rest: Vec<usize> = (i + 1..nr).collect();
        let mut chosen = None;
        for (pos, &c) in free_cols.iter().enumerate() {
            let mut cols = free_cols.clone();
            cols.remove(pos);
            if rest.len().min(cols.len()) < needed - 1 {
                continue;
            }
            let total = fixed + cost[[i, c]] + optimal_cost(cost, &rest, &cols);
            if total <= best + tol {
                chosen = Some(pos);
                break;
            }
        }
        // No column keeps the total optimal: the row stays unassigned.
        if let Some(pos) = chosen {
            let c = free_cols.remove(pos);
            fixed += cost[[i, c]];
            pairs.push((i, c));
            needed -= 1;
        }
    }
    let total = pairs.iter().map(|&(r, c)| cost[[r, c]]).sum();
    Ok(Assignment { pairs, cost: total })
}

/// [`hungarian`] followed by dropping pairs whose cost exceeds `max_cost`.
pub fn gated_assignment(cost: &Array2<f64>, max_cost: f64) -> Result<Assignment> {
    let mut a = hungarian(cost)?;
    a.pairs.retain(|&(r, c)| cost[[r, c]] <= max_cost);
    a.cost = a.pairs.iter().map(|&(r, c)| cost[[r, c]]).sum();
    Ok(a)
}
