//! Point-target Poisson multi-Bernoulli filter over static scatterer
//! positions.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::association::{marginals, AssociationMatrix};
use super::model::{filter_branch, fit_point, measurement_model};
use crate::config::FilterConfig;
use crate::detection::Branch;
use crate::geometry::Pose;
use crate::linalg::{symmetrize, ScaledCholesky};
use crate::measurement::{residual, Measurement};

/// Existence probabilities are clamped away from 1 by this margin where a
/// ratio would otherwise be 0/0.
const DETECTION_CEILING: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bernoulli {
    pub r: f64,
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Axis-aligned region of the undetected intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lower: Vector3<f64>,
    pub upper: Vector3<f64>,
}

impl Region {
    pub fn volume(&self) -> f64 {
        (self.upper - self.lower).iter().product()
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        (0..3).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }
}

/// Uniform Poisson intensity plus Bernoulli components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmbPosterior {
    pub undetected_weight: f64,
    pub region: Region,
    pub bernoullis: Vec<Bernoulli>,
}

/// JSON snapshot of a posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSnapshot {
    pub undetected_weight: f64,
    pub bernoullis: Vec<BernoulliRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliRecord {
    pub r: f64,
    pub mean: [f64; 3],
    pub cov: [[f64; 3]; 3],
}

impl PmbPosterior {
    pub fn new(region: Region, undetected_weight: f64) -> Self {
        Self {
            undetected_weight,
            region,
            bernoullis: Vec::new(),
        }
    }

    /// Static-target prediction with survival and uniform birth.
    pub fn predict(&mut self, cfg: &FilterConfig) {
        for b in &mut self.bernoullis {
            b.r *= cfg.survival;
        }
        self.undetected_weight = cfg.survival * self.undetected_weight + cfg.birth_weight;
    }

    /// Means of Bernoullis with existence above `threshold`.
    pub fn estimates(&self, threshold: f64) -> Vec<Vector3<f64>> {
        self.bernoullis
            .iter()
            .filter(|b| b.r > threshold)
            .map(|b| b.mean)
            .collect()
    }

    pub fn snapshot(&self) -> PosteriorSnapshot {
        PosteriorSnapshot {
            undetected_weight: self.undetected_weight,
            bernoullis: self
                .bernoullis
                .iter()
                .map(|b| BernoulliRecord {
                    r: b.r,
                    mean: [b.mean.x, b.mean.y, b.mean.z],
                    cov: [0, 1, 2].map(|i| [0, 1, 2].map(|j| b.cov[(i, j)])),
                })
                .collect(),
        }
    }

    /// Every Bernoulli covariance is symmetric positive definite.
    pub fn all_covariances_spd(&self) -> bool {
        self.bernoullis.iter().all(|b| {
            let m = DMatrix::from_fn(3, 3, |i, j| b.cov[(i, j)]);
            crate::linalg::is_spd(&m)
        })
    }

    pub fn existence_in_range(&self) -> bool {
        self.bernoullis.iter().all(|b| (0.0..=1.0).contains(&b.r))
    }
}

/// Context of one update.
pub struct UpdateContext<'a> {
    pub ue: &'a Pose,
    pub ris: &'a Pose,
    /// Branch family of the filter (`R` or `N`).
    pub branch: Branch,
    /// Clutter intensity in measurement space.
    pub clutter_intensity: f64,
    pub cfg: &'a FilterConfig,
}

/// Diagnostics of one update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub hypotheses_dropped: usize,
    pub births: usize,
    pub association_row_error: f64,
}

/// Gaussian update of one Bernoulli density by one measurement.
#[derive(Debug, Clone)]
pub struct CubatureUpdate {
    pub ln_likelihood: f64,
    pub mahalanobis: f64,
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Third-degree spherical-radial cubature update.
pub fn cubature_update(
    branch: Branch,
    mean: &Vector3<f64>,
    cov: &Matrix3<f64>,
    meas: &Measurement,
    ue: &Pose,
    ris: &Pose,
) -> Option<CubatureUpdate> {
    let fb = filter_branch(branch);
    let l = cov.cholesky()?.l();
    let n = 3usize;
    let scale = (n as f64).sqrt();
    let centre = measurement_model(fb, mean, ue, ris).ok()?;
    let mut points = Vec::with_capacity(2 * n);
    let mut zs = Vec::with_capacity(2 * n);
    for k in 0..n {
        for sign in [1.0, -1.0] {
            let x = mean + l.column(k) * (sign * scale);
            let z = measurement_model(fb, &x, ue, ris).ok()?;
            // Express relative to the centre so azimuths do not wrap.
            zs.push(&centre + residual(fb, &z, &centre));
            points.push(x);
        }
    }
    let w = 1.0 / (2 * n) as f64;
    let m = centre.len();
    let z_hat = zs.iter().fold(DVector::zeros(m), |acc, z| acc + z) * w;
    let mut s = meas.cov.clone();
    let mut c = DMatrix::<f64>::zeros(3, m);
    for (x, z) in points.iter().zip(&zs) {
        let dz = z - &z_hat;
        let dx = DVector::from_column_slice((x - mean).as_slice());
        s += &dz * dz.transpose() * w;
        c += &dx * dz.transpose() * w;
    }
    let s = symmetrize(&s);
    let sc = ScaledCholesky::new(&s)?;
    let nu = residual(fb, &meas.z, &z_hat);
    let maha = sc.quad_form(&nu);
    // K = C S⁻¹
    let k_t = DMatrix::from_columns(
        &(0..3).map(|i| sc.solve(&c.row(i).transpose())).collect::<Vec<_>>(),
    );
    let k = k_t.transpose();
    let dm = &k * &nu;
    let new_mean = mean + Vector3::new(dm[0], dm[1], dm[2]);
    let dp = &k * &s * k.transpose();
    let new_cov = cov - Matrix3::from_fn(|i, j| dp[(i, j)]);
    let new_cov = (new_cov + new_cov.transpose()) * 0.5;
    new_cov.cholesky()?;
    let ln_likelihood =
        -0.5 * (maha + sc.ln_det() + m as f64 * (2.0 * std::f64::consts::PI).ln());
    Some(CubatureUpdate {
        ln_likelihood,
        mahalanobis: maha,
        mean: new_mean,
        cov: new_cov,
    })
}

/// Weighted Gaussian `(weight, mean, covariance)`.
type Component = (f64, Vector3<f64>, Matrix3<f64>);

/// Moment-matched Gaussian of a weighted mixture.
fn moment_match(parts: &[Component]) -> Option<(Vector3<f64>, Matrix3<f64>)> {
    let total: f64 = parts.iter().map(|p| p.0).sum();
    if !(total > 0.0) {
        return None;
    }
    let mean = parts.iter().fold(Vector3::zeros(), |acc, (w, m, _)| acc + m * (*w / total));
    let cov = parts.iter().fold(Matrix3::zeros(), |acc, (w, m, p)| {
        let d = m - mean;
        acc + (p + d * d.transpose()) * (*w / total)
    });
    Some((mean, (cov + cov.transpose()) * 0.5))
}

/// PMB measurement update with adaptive per-Bernoulli detection
/// probabilities `dps` (evaluated by the caller at the predicted means).
pub fn pmb_update(
    prior: &PmbPosterior,
    z: &[Measurement],
    dps: &[f64],
    ctx: &UpdateContext<'_>,
) -> (PmbPosterior, UpdateReport, AssociationMatrix) {
    let cfg = ctx.cfg;
    let n = prior.bernoullis.len();
    let m = z.len();
    assert_eq!(dps.len(), n, "one detection probability per Bernoulli");
    let mut report = UpdateReport::default();

    // Single-measurement updates and likelihoods.
    let mut updates: Vec<Vec<Option<CubatureUpdate>>> = Vec::with_capacity(n);
    for b in &prior.bernoullis {
        let row = z
            .iter()
            .map(|meas| {
                let u = cubature_update(ctx.branch, &b.mean, &b.cov, meas, ctx.ue, ctx.ris);
                if u.is_none() {
                    report.hypotheses_dropped += 1;
                }
                u.filter(|u| u.mahalanobis <= cfg.gate)
            })
            .collect();
        updates.push(row);
    }

    // New-target terms from the undetected intensity.
    let density = prior.undetected_weight / prior.region.volume();
    let births: Vec<Option<Component>> = z
        .iter()
        .map(|meas| {
            let fit = fit_point(ctx.branch, &meas.z, &meas.cov, ctx.ue, ctx.ris)?;
            if !prior.region.contains(&fit.mean) {
                return None;
            }
            let e = cfg.intensity_detection * density * fit.ln_evidence.exp();
            (e > 0.0 && e.is_finite()).then_some((e, fit.mean, fit.cov))
        })
        .collect();
    let e: Vec<f64> = births.iter().map(|b| b.as_ref().map_or(0.0, |b| b.0)).collect();
    let c = ctx.clutter_intensity;

    let pd: Vec<f64> = dps.iter().map(|p| p.clamp(0.0, DETECTION_CEILING)).collect();
    let miss: Vec<f64> = prior
        .bernoullis
        .iter()
        .zip(&pd)
        .map(|(b, p)| 1.0 - b.r * p)
        .collect();
    let assoc: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| match &updates[i][j] {
                    Some(u) if c + e[j] > 0.0 => {
                        prior.bernoullis[i].r * pd[i] * u.ln_likelihood.exp() / (c + e[j])
                    }
                    _ => 0.0,
                })
                .map(|w| if w.is_finite() { w } else { 0.0 })
                .collect()
        })
        .collect();
    let marg = marginals(
        &miss,
        &assoc,
        cfg.exact_hypothesis_limit,
        cfg.bp_tolerance,
        cfg.bp_max_iterations,
    );
    report.association_row_error = marg.row_sum_error();

    let mut out = Vec::with_capacity(n + m);
    for (i, b) in prior.bernoullis.iter().enumerate() {
        let r_miss = if miss[i] > 0.0 { b.r * (1.0 - pd[i]) / miss[i] } else { 0.0 };
        let mut parts = vec![(marg.miss(i) * r_miss, b.mean, b.cov)];
        for (j, u) in updates[i].iter().enumerate() {
            if let Some(u) = u {
                let w = marg.assoc(i, j);
                if w > 0.0 {
                    parts.push((w, u.mean, u.cov));
                }
            }
        }
        let r: f64 = parts.iter().map(|p| p.0).sum();
        if let Some((mean, cov)) = moment_match(&parts) {
            out.push(Bernoulli { r: r.clamp(0.0, 1.0), mean, cov });
        }
    }
    for (j, birth) in births.into_iter().enumerate() {
        if let Some((ej, mean, cov)) = birth {
            // With no Bernoullis the matrix has no columns and every measurement is new.
            let r = marg.new_target.get(j).copied().unwrap_or(1.0) * ej / (ej + c);
            if r > 0.0 {
                report.births += 1;
                out.push(Bernoulli { r: r.clamp(0.0, 1.0), mean, cov });
            }
        }
    }

    let mut post = PmbPosterior {
        undetected_weight: prior.undetected_weight * (1.0 - cfg.intensity_detection),
        region: prior.region,
        bernoullis: out,
    };
    prune_and_merge(&mut post, cfg);
    (post, report, marg)
}

/// Drops components with `r` below the prune threshold and merges pairs
/// whose means are within the merge threshold (squared Mahalanobis under
/// the stronger component's covariance).
pub fn prune_and_merge(post: &mut PmbPosterior, cfg: &FilterConfig) {
    post.bernoullis.retain(|b| {
        b.r >= cfg.prune_threshold && b.mean.iter().all(|v| v.is_finite()) && b.cov.cholesky().is_some()
    });
    post.bernoullis.sort_by(|a, b| b.r.total_cmp(&a.r));
    let mut merged: Vec<Bernoulli> = Vec::with_capacity(post.bernoullis.len());
    let mut taken = vec![false; post.bernoullis.len()];
    for i in 0..post.bernoullis.len() {
        if taken[i] {
            continue;
        }
        let head = &post.bernoullis[i];
        let inv = match head.cov.try_inverse() {
            Some(v) => v,
            None => continue,
        };
        let mut group = vec![(head.r, head.mean, head.cov)];
        for (j, o) in post.bernoullis.iter().enumerate().skip(i + 1) {
            if taken[j] {
                continue;
            }
            let d = o.mean - head.mean;
            if (d.transpose() * inv * d)[0] < cfg.merge_threshold {
                taken[j] = true;
                group.push((o.r, o.mean, o.cov));
            }
        }
        let r: f64 = group.iter().map(|g| g.0).sum();
        let (mean, cov) = moment_match(&group).unwrap_or((head.mean, head.cov));
        merged.push(Bernoulli { r: r.min(1.0), mean, cov });
    }
    post.bernoullis = merged;
}
