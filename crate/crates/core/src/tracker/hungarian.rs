//! Minimum-cost bipartite matching (Kuhn–Munkres with potentials, O(n³)).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Result of matching current items (rows) against previous items (columns).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment<Id = usize> {
    /// `(current_index, previous_id)`, sorted by `current_index`.
    pub pairs: Vec<(usize, Id)>,
    pub unassigned_current: Vec<usize>,
    pub unassigned_previous: Vec<Id>,
}

impl<Id> Default for Assignment<Id> {
    fn default() -> Self {
        Assignment {
            pairs: Vec::new(),
            unassigned_current: Vec::new(),
            unassigned_previous: Vec::new(),
        }
    }
}

impl<Id: Copy> Assignment<Id> {
    pub fn map_previous<T: Copy>(&self, f: impl Fn(Id) -> T) -> Assignment<T> {
        Assignment {
            pairs: self.pairs.iter().map(|&(i, j)| (i, f(j))).collect(),
            unassigned_current: self.unassigned_current.clone(),
            unassigned_previous: self.unassigned_previous.iter().map(|&j| f(j)).collect(),
        }
    }
}

impl Assignment<usize> {
    pub fn total_cost(&self, cost: &DMatrix<f64>) -> f64 {
        self.pairs.iter().map(|&(i, j)| cost[(i, j)]).sum()
    }
}

/// Minimum-total-cost matching of size `min(rows, cols)`.
///
/// Rectangular inputs are padded to square with a constant sentinel larger
/// than every real cost; a constant pad adds the same amount to every
/// complete matching, so the optimum over real entries is unchanged.
pub fn assign_hungarian(cost: &DMatrix<f64>) -> Result<Assignment> {
    let (rows, cols) = cost.shape();
    if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::input(
            "assignment costs must be finite and non-negative",
        ));
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            unassigned_current: (0..rows).collect(),
            unassigned_previous: (0..cols).collect(),
        });
    }
    let n = rows.max(cols);
    let sentinel = cost.max() + 1.0;
    let at = |i: usize, j: usize| {
        if i < rows && j < cols {
            cost[(i, j)]
        } else {
            sentinel
        }
    };

    // 1-based arrays; index 0 is the virtual root of each augmenting search.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![usize::MAX; rows];
    for j in 1..=n {
        let i = row_of_col[j];
        if i >= 1 && i <= rows && j <= cols {
            col_of_row[i - 1] = j - 1;
        }
    }
    let pairs: Vec<(usize, usize)> = col_of_row
        .iter()
        .enumerate()
        .filter(|(_, &j)| j != usize::MAX)
        .map(|(i, &j)| (i, j))
        .collect();
    let unassigned_current = (0..rows).filter(|&i| col_of_row[i] == usize::MAX).collect();
    let unassigned_previous = (0..cols)
        .filter(|j| !pairs.iter().any(|(_, pj)| pj == j))
        .collect();
    Ok(Assignment {
        pairs,
        unassigned_current,
        unassigned_previous,
    })
}
