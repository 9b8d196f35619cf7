//! Channel-parameter measurements with CRLB-level noise, clutter, and the
//! merge of directional and orthogonal double-bounce measurements.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{
    bilinear, delay_response, ris_coupling, steering_vector, CVector, RisProfileSchedule,
};
use crate::detection::{Branch, EpochDetector, PathDetection};
use crate::error::{Error, Result};
use crate::geometry::{channel_params, wrap_angle, AzEl, PathParams, Pose};
use crate::linalg::{symmetrize, ScaledCholesky};

/// Relative finite-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Smallest relative equilibrated pivot for an invertible FIM.
const FIM_PIVOT_TOLERANCE: f64 = 1e-7;

/// Measurement vector layout of a branch.
pub fn measurement_dim(branch: Branch) -> usize {
    match branch {
        Branch::N => 3,
        _ => 5,
    }
}

/// Indices of azimuth components (wrapped to `[−π, π)`).
pub fn azimuth_indices(branch: Branch) -> &'static [usize] {
    match branch {
        Branch::N => &[1],
        _ => &[0, 3],
    }
}

/// `a − b` with azimuths wrapped.
pub fn residual(branch: Branch, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut d = a - b;
    for &i in azimuth_indices(branch) {
        d[i] = wrap_angle(d[i]);
    }
    d
}

/// Noise-free measurement of a path: `[φ, τ, θ]` for RIS branches and
/// `[τ̄, θ]` for the direct branch.
pub fn true_measurement(branch: Branch, p: &PathParams) -> DVector<f64> {
    match branch {
        Branch::N => DVector::from_vec(vec![
            p.toa_uncontrolled.unwrap_or(f64::NAN),
            p.aod_ue.az,
            p.aod_ue.el,
        ]),
        _ => DVector::from_vec(vec![
            p.aod_ris.az,
            p.aod_ris.el,
            p.toa_controlled,
            p.aod_ue.az,
            p.aod_ue.el,
        ]),
    }
}

/// A noisy channel-parameter measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub z: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub branch: Branch,
    /// Index of the generating scatterer; `None` for clutter.
    pub source: Option<usize>,
}

/// Plain-vector form used for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub branch: Branch,
    pub z: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub source: Option<usize>,
}

impl From<&Measurement> for MeasurementRecord {
    fn from(m: &Measurement) -> Self {
        Self {
            branch: m.branch,
            z: m.z.iter().copied().collect(),
            cov: (0..m.cov.nrows())
                .map(|i| m.cov.row(i).iter().copied().collect())
                .collect(),
            source: m.source,
        }
    }
}

impl From<&MeasurementRecord> for Measurement {
    fn from(r: &MeasurementRecord) -> Self {
        let n = r.z.len();
        Self {
            z: DVector::from_vec(r.z.clone()),
            cov: DMatrix::from_fn(n, n, |i, j| r.cov[i][j]),
            branch: r.branch,
            source: r.source,
        }
    }
}

/// Per-branch measurement sets of one epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementSets {
    pub d: Vec<Measurement>,
    pub o: Vec<Measurement>,
    pub n: Vec<Measurement>,
    /// `(scatterer, branch)` pairs whose FIM was singular.
    pub singular: Vec<(usize, Branch)>,
}

/// Poisson clutter, uniform over a measurement-space box.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterModel {
    pub mean: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Covariance attached to clutter measurements.
    pub cov: DMatrix<f64>,
}

impl ClutterModel {
    pub fn volume(&self) -> f64 {
        (&self.upper - &self.lower).iter().product()
    }

    /// Clutter intensity `μ_C / V`.
    pub fn intensity(&self) -> f64 {
        let v = self.volume();
        if v > 0.0 {
            self.mean / v
        } else {
            0.0
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, branch: Branch, rng: &mut R) -> Vec<Measurement> {
        if self.mean <= 0.0 {
            return Vec::new();
        }
        let count = Poisson::new(self.mean).map(|p| p.sample(rng) as usize).unwrap_or(0);
        (0..count)
            .map(|_| Measurement {
                z: DVector::from_fn(self.lower.len(), |i, _| {
                    rng.random_range(self.lower[i]..=self.upper[i])
                }),
                cov: self.cov.clone(),
                branch,
                source: None,
            })
            .collect()
    }
}

/// Bounding box of the branch measurements of SPs inside `[lo, hi]`, seen
/// from `ue`. Evaluated on a 9×9×5 grid; azimuths are widened to the full
/// circle when the box straddles the wrap.
pub fn measurement_box(
    branch: Branch,
    ue: &Pose,
    ris: &Pose,
    lo: &Vector3<f64>,
    hi: &Vector3<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let dim = measurement_dim(branch);
    let mut min = DVector::from_element(dim, f64::INFINITY);
    let mut max = DVector::from_element(dim, f64::NEG_INFINITY);
    let steps = [9usize, 9, 5];
    for i in 0..steps[0] {
        for j in 0..steps[1] {
            for k in 0..steps[2] {
                let f = |n: usize, s: usize| n as f64 / (s - 1) as f64;
                let p = Vector3::new(
                    lo.x + f(i, steps[0]) * (hi.x - lo.x),
                    lo.y + f(j, steps[1]) * (hi.y - lo.y),
                    lo.z + f(k, steps[2]) * (hi.z - lo.z),
                );
                if let Ok(params) = channel_params(ue, ris, Some(&p)) {
                    let z = true_measurement(branch, &params);
                    for d in 0..dim {
                        min[d] = min[d].min(z[d]);
                        max[d] = max[d].max(z[d]);
                    }
                }
            }
        }
    }
    for &a in azimuth_indices(branch) {
        if max[a] - min[a] > std::f64::consts::PI {
            min[a] = -std::f64::consts::PI;
            max[a] = std::f64::consts::PI;
        }
    }
    (min, max)
}

/// Everything fixed within an epoch that the branch signal models need.
pub struct BranchModel<'a> {
    pub detector: &'a EpochDetector<'a>,
    pub schedule: &'a RisProfileSchedule,
}

/// One Jacobian column in factored form: `coef · (angle_part ⊗ delay_part)`.
#[derive(Clone, Copy)]
struct FactoredColumn {
    coef: Complex64,
    angle: usize,
    delay: usize,
}

fn gram(vs: &[Vec<Complex64>]) -> DMatrix<Complex64> {
    DMatrix::from_fn(vs.len(), vs.len(), |i, j| {
        vs[i].iter()
            .zip(&vs[j])
            .fold(Complex64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b)
    })
}

/// Central finite difference of a vector-valued function.
fn central_diff<F: Fn(f64) -> Vec<Complex64>>(f: F, x: f64, h: f64) -> Vec<Complex64> {
    let plus = f(x + h);
    let minus = f(x - h);
    plus.iter()
        .zip(&minus)
        .map(|(p, m)| (p - m) / (2.0 * h))
        .collect()
}

impl BranchModel<'_> {
    fn scenario(&self) -> &crate::config::Scenario {
        self.detector.scenario
    }

    fn ris_responses(&self, phi: AzEl) -> Vec<Complex64> {
        let s = self.scenario();
        let c = ris_coupling(&s.ris_array, phi, self.detector.ris_link.aod_ris, s.wavelength);
        self.schedule.responses(&c)
    }

    fn ue_vector(&self, theta: AzEl) -> CVector {
        let s = self.scenario();
        steering_vector(&s.ue_array, theta, s.wavelength)
    }

    /// Angle-dependent factor of the single-path branch signal, stacked over
    /// transmissions and output dimensions.
    pub fn angle_part(&self, branch: Branch, phi: AzEl, theta: AzEl) -> Vec<Complex64> {
        let plan = self.detector.plan;
        let a_l = self.ue_vector(theta);
        match branch {
            Branch::D | Branch::R => {
                let nu = self.ris_responses(phi);
                let leak = self.detector.combiner.project_perp(a_l.as_slice());
                let a_0 = self.ue_vector(self.detector.ris_link.aod_ue);
                let mut out = Vec::with_capacity(plan.t1() * leak.len());
                for (t, f) in plan.t1_precoders.iter().enumerate() {
                    let c = nu[t] * bilinear(&a_0, f);
                    out.extend(leak.iter().map(|w| w * c));
                }
                out
            }
            Branch::O => {
                let nu = self.ris_responses(phi);
                let sqrt_n = (a_l.len() as f64).sqrt();
                plan.t2_precoders
                    .iter()
                    .enumerate()
                    .map(|(k, f)| nu[plan.t1() + k] * sqrt_n * bilinear(&a_l, f))
                    .collect()
            }
            Branch::N => {
                let mut out = Vec::with_capacity(plan.t1() + plan.t2());
                for f in plan.all() {
                    let c = bilinear(&a_l, &f);
                    out.extend(a_l.iter().map(|a| a * c));
                }
                out
            }
        }
    }

    fn delay_part(&self, tau: f64) -> Vec<Complex64> {
        let s = self.scenario();
        delay_response(tau, s.subcarriers, s.subcarrier_spacing)
    }

    /// Full noiseless single-path branch signal for parameter vector `psi`
    /// (geometric parameters in measurement order, then Re and Im of the gain).
    pub fn branch_signal(&self, branch: Branch, psi: &[f64]) -> Vec<Complex64> {
        let (phi, tau, theta, gain) = self.unpack(branch, psi);
        let m = self.angle_part(branch, phi, theta);
        let b = self.delay_part(tau);
        let mut out = Vec::with_capacity(m.len() * b.len());
        for mv in &m {
            out.extend(b.iter().map(|bv| gain * mv * bv));
        }
        out
    }

    fn unpack(&self, branch: Branch, psi: &[f64]) -> (AzEl, f64, AzEl, Complex64) {
        match branch {
            Branch::N => (
                AzEl::default(),
                psi[0],
                AzEl::new(psi[1], psi[2]),
                Complex64::new(psi[3], psi[4]),
            ),
            _ => (
                AzEl::new(psi[0], psi[1]),
                psi[2],
                AzEl::new(psi[3], psi[4]),
                Complex64::new(psi[5], psi[6]),
            ),
        }
    }

    /// FD step for parameter `k` of `psi`.
    fn step(branch: Branch, psi: &[f64], k: usize) -> f64 {
        let dim = measurement_dim(branch);
        let delay_index = if branch == Branch::N { 0 } else { 2 };
        let gain_scale = psi[dim].hypot(psi[dim + 1]);
        let typical = if k == delay_index {
            psi[k].abs()
        } else if k >= dim {
            gain_scale
        } else {
            1.0
        };
        FD_STEP * psi[k].abs().max(typical).max(f64::MIN_POSITIVE)
    }

    /// Fisher information of `psi` from the factored signal structure, for
    /// receiver noise PSD `N_0` (branch noise `N_0 / 2`).
    pub fn fim(&self, branch: Branch, psi: &[f64], noise_psd: f64) -> DMatrix<f64> {
        let dim = measurement_dim(branch);
        let (phi, tau, theta, gain) = self.unpack(branch, psi);
        let m0 = self.angle_part(branch, phi, theta);
        let b0 = self.delay_part(tau);
        let delay_index = if branch == Branch::N { 0 } else { 2 };
        let b1 = central_diff(|t| self.delay_part(t), tau, Self::step(branch, psi, delay_index));

        let mut angle_parts = vec![m0];
        let mut columns = Vec::with_capacity(dim + 2);
        for k in 0..dim {
            if k == delay_index {
                columns.push(FactoredColumn { coef: gain, angle: 0, delay: 1 });
                continue;
            }
            let h = Self::step(branch, psi, k);
            let dm = central_diff(
                |x| {
                    let mut p = psi.to_vec();
                    p[k] = x;
                    let (ph, _, th, _) = self.unpack(branch, &p);
                    self.angle_part(branch, ph, th)
                },
                psi[k],
                h,
            );
            angle_parts.push(dm);
            columns.push(FactoredColumn { coef: gain, angle: angle_parts.len() - 1, delay: 0 });
        }
        columns.push(FactoredColumn { coef: Complex64::new(1.0, 0.0), angle: 0, delay: 0 });
        columns.push(FactoredColumn { coef: Complex64::new(0.0, 1.0), angle: 0, delay: 0 });

        let ga = gram(&angle_parts);
        let gb = gram(&[b0, b1]);
        let n = columns.len();
        let scale = 2.0 / (noise_psd / 2.0);
        symmetrize(&DMatrix::from_fn(n, n, |p, q| {
            let (cp, cq) = (columns[p], columns[q]);
            scale * (cp.coef.conj() * cq.coef * ga[(cp.angle, cq.angle)] * gb[(cp.delay, cq.delay)]).re
        }))
    }

    /// Parameter vector of a path: measurement then gain components.
    pub fn parameters(branch: Branch, det: &PathDetection) -> Vec<f64> {
        let mut psi: Vec<f64> = true_measurement(branch, &det.params).iter().copied().collect();
        let g = if branch == Branch::N { det.beta } else { det.alpha };
        psi.extend([g, 0.0]);
        psi
    }

    /// Measurement covariance: inverse FIM with the complex gain marginalized.
    pub fn fim_covariance(&self, branch: Branch, psi: &[f64], noise_psd: f64) -> Result<DMatrix<f64>> {
        let fim = self.fim(branch, psi, noise_psd);
        covariance_from_fim(&fim, measurement_dim(branch))
    }
}

/// Inverse of the Schur complement of the nuisance block, i.e. the leading
/// `dim × dim` block of `FIM⁻¹`.
pub fn covariance_from_fim(fim: &DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>> {
    let chol = ScaledCholesky::with_tolerance(fim, FIM_PIVOT_TOLERANCE)
        .ok_or(Error::SingularFim("parameter unobservable at this geometry"))?;
    let inv = chol.inverse();
    let r = symmetrize(&inv.view((0, 0), (dim, dim)).into_owned());
    if ScaledCholesky::new(&r).is_none() {
        return Err(Error::SingularFim("covariance not positive definite"));
    }
    Ok(r)
}

/// Fisher information `2/σ² Re(JᴴJ)` by central differences of a stacked
/// signal with per-sample noise variance `σ²`; the slow reference path.
pub fn fim_from_signal<F>(signal: F, psi: &[f64], steps: &[f64], noise_var: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<Complex64>,
{
    let n = psi.len();
    let cols: Vec<Vec<Complex64>> = (0..n)
        .map(|k| {
            let mut p = psi.to_vec();
            p[k] = psi[k] + steps[k];
            let plus = signal(&p);
            p[k] = psi[k] - steps[k];
            let minus = signal(&p);
            plus.iter()
                .zip(&minus)
                .map(|(a, b)| (a - b) / (2.0 * steps[k]))
                .collect()
        })
        .collect();
    let g = gram(&cols);
    symmetrize(&DMatrix::from_fn(n, n, |i, j| 2.0 / noise_var * g[(i, j)].re))
}

/// FD steps used by [`BranchModel::fim`], exposed for the reference path.
pub fn fd_steps(branch: Branch, psi: &[f64]) -> Vec<f64> {
    (0..psi.len()).map(|k| BranchModel::step(branch, psi, k)).collect()
}

/// Draws the measurement sets of one epoch.
///
/// Each scatterer is detected in each branch independently with that
/// branch's detection probability; detected paths yield the true parameters
/// plus `noise_scale`-scaled Gaussian noise with the FIM covariance.
#[allow(clippy::too_many_arguments)]
pub fn generate_measurements<R: Rng + ?Sized>(
    model: &BranchModel<'_>,
    detections: &[PathDetection],
    clutter: &[(Branch, &ClutterModel)],
    noise_scale: f64,
    rng: &mut R,
) -> MeasurementSets {
    let n0 = model.scenario().noise_psd;
    let mut sets = MeasurementSets::default();
    for (i, det) in detections.iter().enumerate() {
        for branch in [Branch::D, Branch::O, Branch::N] {
            let draw: f64 = rng.random();
            if draw >= det.dp(branch) {
                continue;
            }
            let psi = BranchModel::parameters(branch, det);
            let cov = match model.fim_covariance(branch, &psi, n0) {
                Ok(c) => c,
                Err(_) => {
                    sets.singular.push((i, branch));
                    continue;
                }
            };
            let truth = true_measurement(branch, &det.params);
            let white = DVector::from_fn(truth.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let noise = ScaledCholesky::new(&cov)
                .map(|c| c.correlate(&white))
                .unwrap_or_else(|| DVector::zeros(truth.len()));
            let mut z = truth + noise * noise_scale;
            for &a in azimuth_indices(branch) {
                z[a] = wrap_angle(z[a]);
            }
            let m = Measurement { z, cov, branch, source: Some(i) };
            match branch {
                Branch::D => sets.d.push(m),
                Branch::O => sets.o.push(m),
                _ => sets.n.push(m),
            }
        }
    }
    for (branch, c) in clutter {
        let extra = c.sample(*branch, rng);
        match branch {
            Branch::D => sets.d.extend(extra),
            Branch::O => sets.o.extend(extra),
            _ => sets.n.extend(extra),
        }
    }
    sets.d.shuffle(rng);
    sets.o.shuffle(rng);
    sets.n.shuffle(rng);
    sets
}

/// `0.5 Δᵀ (R_D⁻¹ + R_O⁻¹) Δ` with azimuths wrapped.
pub fn gating_distance(d: &Measurement, o: &Measurement) -> Option<f64> {
    let delta = residual(Branch::R, &d.z, &o.z);
    let cd = ScaledCholesky::new(&d.cov)?;
    let co = ScaledCholesky::new(&o.cov)?;
    Some(0.5 * (cd.quad_form(&delta) + co.quad_form(&delta)))
}

/// Merges directional and orthogonal double-bounce measurements.
///
/// Pairs are accepted greedily in ascending distance, each measurement used
/// at most once; accepted pairs are averaged with covariance
/// `(R_D + R_O)/4`. Everything unpaired passes through unchanged.
pub fn merge_double_bounce(zd: &[Measurement], zo: &[Measurement], t_mg: f64) -> Vec<Measurement> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in zd.iter().enumerate() {
        for (j, o) in zo.iter().enumerate() {
            if let Some(dist) = gating_distance(d, o) {
                if dist < t_mg {
                    pairs.push((dist, i, j));
                }
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_d = vec![false; zd.len()];
    let mut used_o = vec![false; zo.len()];
    let mut out = Vec::with_capacity(zd.len() + zo.len());
    for (_, i, j) in pairs {
        if used_d[i] || used_o[j] {
            continue;
        }
        used_d[i] = true;
        used_o[j] = true;
        let (d, o) = (&zd[i], &zo[j]);
        let mut z = &d.z + residual(Branch::R, &o.z, &d.z) * 0.5;
        for &a in azimuth_indices(Branch::R) {
            z[a] = wrap_angle(z[a]);
        }
        out.push(Measurement {
            z,
            cov: symmetrize(&((&d.cov + &o.cov) * 0.25)),
            branch: Branch::R,
            source: if d.source == o.source { d.source } else { None },
        });
    }
    out.extend(zd.iter().zip(&used_d).filter(|(_, u)| !**u).map(|(m, _)| m.clone()));
    out.extend(zo.iter().zip(&used_o).filter(|(_, u)| !**u).map(|(m, _)| m.clone()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meas(z: &[f64], var: f64, branch: Branch) -> Measurement {
        Measurement {
            z: DVector::from_vec(z.to_vec()),
            cov: DMatrix::identity(z.len(), z.len()) * var,
            branch,
            source: Some(0),
        }
    }

    #[test]
    fn identical_pair_merges_with_half_covariance() {
        let d = meas(&[0.1, 0.2, 1e-7, 0.3, -0.1], 1e-4, Branch::D);
        let o = meas(&[0.1, 0.2, 1e-7, 0.3, -0.1], 1e-4, Branch::O);
        let out = merge_double_bounce(std::slice::from_ref(&d), &[o], 36.0);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].branch, Branch::R);
        assert!((&out[0].cov - &d.cov * 0.5).amax() < 1e-18);
        assert!((&out[0].z - &d.z).amax() < 1e-15);
    }

    #[test]
    fn distant_pair_stays_apart() {
        // Dist = 0.5 (100 + 100) = 100 > 36
        let d = meas(&[0.0, 0.0, 0.0, 0.0, 0.0], 1.0, Branch::D);
        let v = 10.0 / 3f64.sqrt();
        let o = meas(&[0.0, v, v, 0.0, v], 1.0, Branch::O);
        let dist = gating_distance(&d, &o).unwrap();
        assert!((dist - 100.0).abs() < 1e-9);
        let out = merge_double_bounce(&[d], &[o], 36.0);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].branch, Branch::D);
        assert_eq!(out[1].branch, Branch::O);
    }

    #[test]
    fn merge_wraps_azimuth() {
        let pi = std::f64::consts::PI;
        let d = meas(&[pi - 0.01, 0.0, 0.0, 0.0, 0.0], 1e-3, Branch::D);
        let o = meas(&[-pi + 0.01, 0.0, 0.0, 0.0, 0.0], 1e-3, Branch::O);
        let out = merge_double_bounce(&[d], &[o], 36.0);
        assert_eq!(out.len(), 1);
        assert!(out[0].z[0].abs() > pi - 1e-9);
    }

    #[test]
    fn one_to_one_matching() {
        let o = meas(&[0.0; 5], 1.0, Branch::O);
        let d1 = meas(&[0.1; 5], 1.0, Branch::D);
        let d2 = meas(&[0.2; 5], 1.0, Branch::D);
        let out = merge_double_bounce(&[d2, d1.clone()], &[o], 36.0);
        assert_eq!(out.len(), 2);
        assert!((out[0].z[0] - 0.05).abs() < 1e-12);
        assert_eq!(out[1].z[0], 0.2);
    }

    #[test]
    fn singular_fim_is_reported() {
        let fim = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(covariance_from_fim(&fim, 1), Err(Error::SingularFim(_))));
    }

    #[test]
    fn clutter_intensity() {
        let c = ClutterModel {
            mean: 2.0,
            lower: DVector::from_vec(vec![0.0, -1.0]),
            upper: DVector::from_vec(vec![2.0, 1.0]),
            cov: DMatrix::identity(2, 2),
        };
        assert!((c.intensity() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn record_round_trip() {
        let m = meas(&[1.0, 2.0, 3.0], 0.5, Branch::N);
        let r = MeasurementRecord::from(&m);
        let back = Measurement::from(&serde_json::from_str::<MeasurementRecord>(&serde_json::to_string(&r).unwrap()).unwrap());
        assert_eq!(back, m);
    }
}
