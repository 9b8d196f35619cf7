//! GOSPA distance between estimated and true scatterer sets.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::GospaSettings;
use crate::error::{Error, Result};

/// Minimum-cost perfect assignment of a square cost matrix (row-major
/// `n × n`). Returns the column assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // Potentials formulation with 1-based sentinel column 0.
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
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// GOSPA parameters `(p, c, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GospaConfig {
    pub order: f64,
    pub cutoff: f64,
    pub alpha: f64,
}

impl Default for GospaConfig {
    fn default() -> Self {
        Self {
            order: 2.0,
            cutoff: 20.0,
            alpha: 2.0,
        }
    }
}

impl From<&GospaSettings> for GospaConfig {
    fn from(s: &GospaSettings) -> Self {
        Self {
            order: s.order,
            cutoff: s.cutoff,
            alpha: s.alpha,
        }
    }
}

/// GOSPA value and its decomposition. The parts are in `p`-th power units,
/// so `total = (localization + missed + false_targets)^(1/p)` for `α = 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GospaResult {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_targets: f64,
    pub assigned: usize,
}

pub fn gospa(estimates: &[Vector3<f64>], truth: &[Vector3<f64>], cfg: &GospaConfig) -> Result<GospaResult> {
    if !(cfg.order >= 1.0 && cfg.cutoff > 0.0 && cfg.alpha > 0.0 && cfg.alpha <= 2.0) {
        return Err(Error::InvalidParameter(format!("GOSPA parameters {cfg:?}")));
    }
    let (p, c) = (cfg.order, cfg.cutoff);
    let miss_cost = c.powf(p) / cfg.alpha;
    let n = estimates.len().max(truth.len());
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = match (estimates.get(i), truth.get(j)) {
                (Some(e), Some(t)) => (e - t).norm().min(c).powf(p),
                (None, None) => 0.0,
                _ => miss_cost,
            };
        }
    }
    let assignment = hungarian(&cost, n);
    let mut res = GospaResult {
        total: 0.0,
        localization: 0.0,
        missed: 0.0,
        false_targets: 0.0,
        assigned: 0,
    };
    for (i, &j) in assignment.iter().enumerate() {
        match (estimates.get(i), truth.get(j)) {
            (Some(e), Some(t)) => {
                let d = (e - t).norm();
                if d < c {
                    res.localization += d.powf(p);
                    res.assigned += 1;
                } else {
                    // Capped pairs count as one miss plus one false target.
                    res.missed += miss_cost;
                    res.false_targets += miss_cost;
                }
            }
            (Some(_), None) => res.false_targets += miss_cost,
            (None, Some(_)) => res.missed += miss_cost,
            (None, None) => {}
        }
    }
    let sum: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    res.total = sum.max(0.0).powf(1.0 / p);
    Ok(res)
}
