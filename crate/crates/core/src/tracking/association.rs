//! Marginal data-association probabilities for point-target PMB updates.
//!
//! Weights are normalized per measurement: `miss[i] = 1 − r_i p_D,i` and
//! `assoc[i][j] = r_i p_D,i g_ij / (c_j + e_j)`, so an unused measurement
//! contributes a factor of one.

use serde::{Deserialize, Serialize};

/// Association marginals. Row `i` holds `[p(miss), p(j = 0), p(j = 1), ...]`
/// for Bernoulli `i`; `new_target[j]` is the probability that measurement
/// `j` is not associated with any existing Bernoulli.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationMatrix {
    pub rows: Vec<Vec<f64>>,
    pub new_target: Vec<f64>,
}

impl AssociationMatrix {
    pub fn miss(&self, i: usize) -> f64 {
        self.rows[i][0]
    }

    pub fn assoc(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j + 1]
    }

    /// Largest deviation of a row sum from one.
    pub fn row_sum_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Total-variation distance, the largest over rows and over the
    /// new-target marginals.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let cols = self
            .new_target
            .iter()
            .zip(&other.new_target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        rows.max(cols)
    }
}

/// Upper bound on the number of global hypotheses.
pub fn hypothesis_count_bound(assoc: &[Vec<f64>]) -> f64 {
    assoc
        .iter()
        .map(|row| 1.0 + row.iter().filter(|w| **w > 0.0).count() as f64)
        .product()
}

/// Exact marginals by enumerating all injective assignments.
pub fn exact_marginals(miss: &[f64], assoc: &[Vec<f64>]) -> AssociationMatrix {
    let n = miss.len();
    let m = assoc.first().map_or(0, Vec::len);
    let mut acc = vec![vec![0.0; m + 1]; n];
    let mut total = 0.0;
    let mut choice = vec![0usize; n];
    let mut used = vec![false; m];

    #[allow(clippy::too_many_arguments)]
    fn rec(
        i: usize,
        w: f64,
        miss: &[f64],
        assoc: &[Vec<f64>],
        choice: &mut [usize],
        used: &mut [bool],
        acc: &mut [Vec<f64>],
        total: &mut f64,
    ) {
        if w == 0.0 {
            return;
        }
        if i == miss.len() {
            *total += w;
            for (k, &c) in choice.iter().enumerate() {
                acc[k][c] += w;
            }
            return;
        }
        choice[i] = 0;
        rec(i + 1, w * miss[i], miss, assoc, choice, used, acc, total);
        for j in 0..used.len() {
            if !used[j] && assoc[i][j] > 0.0 {
                used[j] = true;
                choice[i] = j + 1;
                rec(i + 1, w * assoc[i][j], miss, assoc, choice, used, acc, total);
                used[j] = false;
            }
        }
    }
    rec(0, 1.0, miss, assoc, &mut choice, &mut used, &mut acc, &mut total);

    let rows: Vec<Vec<f64>> = if total > 0.0 {
        acc.into_iter()
            .map(|r| r.into_iter().map(|v| v / total).collect())
            .collect()
    } else {
        (0..n)
            .map(|_| {
                let mut r = vec![0.0; m + 1];
                r[0] = 1.0;
                r
            })
            .collect()
    };
    let new_target = (0..m)
        .map(|j| (1.0 - rows.iter().map(|r| r[j + 1]).sum::<f64>()).clamp(0.0, 1.0))
        .collect();
    AssociationMatrix { rows, new_target }
}

/// Loopy belief propagation marginals. Returns the marginals and the number
/// of iterations used.
pub fn bp_marginals(
    miss: &[f64],
    assoc: &[Vec<f64>],
    tolerance: f64,
    max_iterations: usize,
) -> (AssociationMatrix, usize) {
    let n = miss.len();
    let m = assoc.first().map_or(0, Vec::len);
    // nu[i][j]: measurement-to-Bernoulli messages
    let mut nu = vec![vec![1.0; m]; n];
    let mut mu = vec![vec![0.0; m]; n];
    let mut iterations = 0;
    for it in 0..max_iterations {
        iterations = it + 1;
        for i in 0..n {
            let s: f64 = miss[i] + (0..m).map(|j| assoc[i][j] * nu[i][j]).sum::<f64>();
            for j in 0..m {
                let denom = s - assoc[i][j] * nu[i][j];
                mu[i][j] = if denom > 0.0 { assoc[i][j] / denom } else { 0.0 };
            }
        }
        let mut delta = 0.0f64;
        for j in 0..m {
            let s: f64 = (0..n).map(|i| mu[i][j]).sum();
            for i in 0..n {
                let v = 1.0 / (1.0 + s - mu[i][j]);
                delta = delta.max((v - nu[i][j]).abs());
                nu[i][j] = v;
            }
        }
        if delta < tolerance {
            break;
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let s: f64 = miss[i] + (0..m).map(|j| assoc[i][j] * nu[i][j]).sum::<f64>();
            if s <= 0.0 {
                let mut r = vec![0.0; m + 1];
                r[0] = 1.0;
                return r;
            }
            std::iter::once(miss[i] / s)
                .chain((0..m).map(|j| assoc[i][j] * nu[i][j] / s))
                .collect()
        })
        .collect();
    let new_target = (0..m)
        .map(|j| 1.0 / (1.0 + (0..n).map(|i| mu[i][j]).sum::<f64>()))
        .collect();
    (AssociationMatrix { rows, new_target }, iterations)
}

/// Exact marginals when the hypothesis count is at most `exact_limit`,
/// belief propagation otherwise.
pub fn marginals(
    miss: &[f64],
    assoc: &[Vec<f64>],
    exact_limit: usize,
    tolerance: f64,
    max_iterations: usize,
) -> AssociationMatrix {
    if hypothesis_count_bound(assoc) <= exact_limit as f64 {
        exact_marginals(miss, assoc)
    } else {
        bp_marginals(miss, assoc, tolerance, max_iterations).0
    }
}
