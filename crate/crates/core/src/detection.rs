//! Detection probabilities of the separated paths and the link-budget
//! analysis of the four signal types.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    bilinear, ris_coupling, scatterer_powers, steering_vector, CVector, RisProfileSchedule,
};
use crate::config::{RisProfileMode, Scenario};
use crate::error::{Error, Result};
use crate::geometry::{channel_params, AzEl, LinkDistances, PathParams, Pose};
use crate::separation::{Combiner, PrecoderPlan};

/// Beyond this `|a − b|` the Marcum function is within `exp(−72)` of 0 or 1.
const MARCUM_SATURATION: f64 = 12.0;

/// `e^{-x} I_k(x)` for `k = 0..=n_max` by Miller's backward recurrence,
/// normalized with `Ĩ_0 + 2 Σ Ĩ_k = 1`.
fn scaled_bessel_i(x: f64, n_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_max + 1];
    if x < 1e-300 {
        out[0] = 1.0;
        return out;
    }
    let start = n_max + 20 + (8.0 * x.sqrt()) as usize;
    let mut next = 0.0f64;
    let mut cur = 1e-280f64;
    let mut sum = 0.0f64;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / x * cur + next;
        if k <= n_max {
            out[k] = cur;
        }
        sum += 2.0 * cur;
        next = cur;
        cur = prev;
        if cur > 1e250 {
            let s = 1e-250;
            cur *= s;
            next *= s;
            sum *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    out[0] = cur;
    sum += cur;
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// First-order Marcum Q function `Q₁(a, b)`.
pub fn marcum_q1(a: f64, b: f64) -> f64 {
    let (a, b) = (a.max(0.0), b.max(0.0));
    if b == 0.0 {
        return 1.0;
    }
    if a == 0.0 {
        return (-0.5 * b * b).exp();
    }
    if b - a > MARCUM_SATURATION {
        return 0.0;
    }
    if a - b > MARCUM_SATURATION {
        return 1.0;
    }
    let x = a * b;
    let n_max = (12.0 * x.sqrt()) as usize + 40;
    let bessel = scaled_bessel_i(x, n_max);
    let prefactor = (-0.5 * (a - b) * (a - b)).exp();
    let series = |ratio: f64, first: usize| {
        let mut s = 0.0;
        let mut p = ratio.powi(first as i32);
        for &ik in &bessel[first..] {
            let term = p * ik;
            s += term;
            if term < 1e-17 * s && p < 1.0 {
                break;
            }
            p *= ratio;
        }
        s
    };
    if a < b {
        (prefactor * series(a / b, 0)).clamp(0.0, 1.0)
    } else {
        (1.0 - prefactor * series(b / a, 1)).clamp(0.0, 1.0)
    }
}

/// False-alarm setting and the resulting threshold `γ = −2 ln p_FA`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub p_fa: f64,
    pub gamma: f64,
}

impl DetectionConfig {
    pub fn new(p_fa: f64) -> Result<Self> {
        if !(p_fa > 0.0 && p_fa < 1.0) {
            return Err(Error::InvalidParameter(format!("p_fa = {p_fa}")));
        }
        Ok(Self {
            p_fa,
            gamma: -2.0 * p_fa.ln(),
        })
    }
}

/// `Q₁(√(4 gain² P̃ / N_0), √γ)`.
pub fn detection_probability(gain: f64, energy: f64, noise_psd: f64, cfg: &DetectionConfig) -> f64 {
    let lambda = noncentrality(gain, energy, noise_psd);
    marcum_q1(lambda.sqrt(), cfg.gamma.sqrt())
}

pub fn noncentrality(gain: f64, energy: f64, noise_psd: f64) -> f64 {
    4.0 * gain * gain * energy / noise_psd
}

/// Separated observation a path is detected in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// UE-RIS-SP-UE, RIS-directed transmissions.
    D,
    /// UE-SP-RIS-UE, transmissions with a null towards the RIS.
    O,
    /// UE-SP-UE.
    N,
    /// Merged double-bounce measurement.
    R,
}

/// Per-path inputs of the matched-energy sums.
pub struct PathResponse<'a> {
    /// `ν_t̃(φ_l)` for every transmission pair.
    pub ris_responses: &'a [Complex64],
    /// `a_U(θ_0)`.
    pub ue_to_ris: &'a CVector,
    /// `a_U(θ_l)`.
    pub ue_to_sp: &'a CVector,
}

/// Matched energy `P̃ = Σ_{t̃,s} ‖p_{t̃,s}‖²` of one branch.
pub fn matched_energy(
    branch: Branch,
    path: &PathResponse<'_>,
    plan: &PrecoderPlan,
    combiner: &Combiner,
    subcarriers: usize,
) -> f64 {
    let n_u = path.ue_to_sp.len() as f64;
    let nu = path.ris_responses;
    let per_symbol: f64 = match branch {
        Branch::D => {
            let leak = combiner.project_perp(path.ue_to_sp.as_slice()).norm_squared();
            plan.t1_precoders
                .iter()
                .zip(nu)
                .map(|(f, v)| v.norm_sqr() * bilinear(path.ue_to_ris, f).norm_sqr() * leak)
                .sum()
        }
        Branch::O => plan
            .t2_precoders
            .iter()
            .zip(&nu[plan.t1()..])
            .map(|(f, v)| v.norm_sqr() * n_u * bilinear(path.ue_to_sp, f).norm_sqr())
            .sum(),
        Branch::N => plan
            .all()
            .iter()
            .map(|f| n_u * bilinear(path.ue_to_sp, f).norm_sqr())
            .sum(),
        Branch::R => {
            matched_energy(Branch::D, path, plan, combiner, 1)
                + matched_energy(Branch::O, path, plan, combiner, 1)
        }
    };
    per_symbol * subcarriers as f64
}

/// Detection quantities of one scattering point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathDetection {
    pub params: PathParams,
    pub alpha: f64,
    pub beta: f64,
    pub energy_d: f64,
    pub energy_o: f64,
    pub energy_n: f64,
    pub dp_d: f64,
    pub dp_o: f64,
    pub dp_n: f64,
}

impl PathDetection {
    pub fn dp(&self, branch: Branch) -> f64 {
        match branch {
            Branch::D => self.dp_d,
            Branch::O => self.dp_o,
            Branch::N => self.dp_n,
            Branch::R => self.dp_d.max(self.dp_o),
        }
    }
}

/// RIS profile choice used when evaluating a point.
#[derive(Debug, Clone)]
pub enum ProfileChoice<'a> {
    /// A fixed schedule shared by all points.
    Schedule(&'a RisProfileSchedule),
    /// Phase-conjugate profile aimed at the evaluated point itself.
    FocusOnPoint,
}

/// Everything fixed within one epoch that the per-point evaluation needs.
pub struct EpochDetector<'a> {
    pub scenario: &'a Scenario,
    pub ue: Pose,
    pub plan: &'a PrecoderPlan,
    pub combiner: Combiner,
    pub cfg: DetectionConfig,
    pub ris_link: PathParams,
    ue_to_ris: CVector,
}

impl<'a> EpochDetector<'a> {
    pub fn new(
        scenario: &'a Scenario,
        ue: Pose,
        plan: &'a PrecoderPlan,
        cfg: DetectionConfig,
    ) -> Result<Self> {
        let ris_link = channel_params(&ue, &scenario.ris, None)?;
        let combiner = Combiner::new(ris_link.aod_ue, &scenario.ue_array, scenario.wavelength)?;
        let ue_to_ris = steering_vector(&scenario.ue_array, ris_link.aod_ue, scenario.wavelength);
        Ok(Self {
            scenario,
            ue,
            plan,
            combiner,
            cfg,
            ris_link,
            ue_to_ris,
        })
    }

    /// RIS responses `ν_t̃(φ)` towards RIS-side angle `phi`.
    pub fn ris_responses(&self, phi: AzEl, profiles: &ProfileChoice<'_>) -> Vec<Complex64> {
        let s = self.scenario;
        let coupling = ris_coupling(&s.ris_array, phi, self.ris_link.aod_ris, s.wavelength);
        match profiles {
            ProfileChoice::Schedule(schedule) => schedule.responses(&coupling),
            ProfileChoice::FocusOnPoint => {
                let gain: f64 = coupling.iter().map(|c| c.norm()).sum();
                vec![Complex64::new(gain, 0.0); s.half_transmissions()]
            }
        }
    }

    pub fn evaluate(&self, sp: &Vector3<f64>, profiles: &ProfileChoice<'_>) -> Result<PathDetection> {
        let s = self.scenario;
        let params = channel_params(&self.ue, &s.ris, Some(sp))?;
        let d = LinkDistances::new(&self.ue.position, &s.ris, sp)?;
        let (a2, b2) = scatterer_powers(s, &d);
        let ue_to_sp = steering_vector(&s.ue_array, params.aod_ue, s.wavelength);
        let nu = self.ris_responses(params.aod_ris, profiles);
        let path = PathResponse {
            ris_responses: &nu,
            ue_to_ris: &self.ue_to_ris,
            ue_to_sp: &ue_to_sp,
        };
        let e = |b| matched_energy(b, &path, self.plan, &self.combiner, s.subcarriers);
        let (energy_d, energy_o, energy_n) = (e(Branch::D), e(Branch::O), e(Branch::N));
        let (alpha, beta) = (a2.sqrt(), b2.sqrt());
        let dp = |g, en| detection_probability(g, en, s.noise_psd, &self.cfg);
        Ok(PathDetection {
            params,
            alpha,
            beta,
            energy_d,
            energy_o,
            energy_n,
            dp_d: dp(alpha, energy_d),
            dp_o: dp(alpha, energy_o),
            dp_n: dp(beta, energy_n),
        })
    }
}

/// One cell of a detection-probability map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DpMapPoint {
    pub x: f64,
    pub y: f64,
    pub dp_d: f64,
    pub dp_o: f64,
    pub dp_n: f64,
}

/// Grid of SP positions `x × y` at height `z`.
pub fn grid(x_range: [f64; 2], y_range: [f64; 2], z: f64, step: f64) -> Vec<Vector3<f64>> {
    let nx = ((x_range[1] - x_range[0]) / step + 1e-9).floor() as usize + 1;
    let ny = ((y_range[1] - y_range[0]) / step + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            out.push(Vector3::new(
                x_range[0] + i as f64 * step,
                y_range[0] + j as f64 * step,
                z,
            ));
        }
    }
    out
}

/// Detection probabilities over a set of SP positions. Points that coincide
/// with the UE or the RIS are skipped.
pub fn dp_map(
    detector: &EpochDetector<'_>,
    points: &[Vector3<f64>],
    profiles: &ProfileChoice<'_>,
) -> Vec<DpMapPoint> {
    use rayon::prelude::*;
    points
        .par_iter()
        .filter_map(|p| {
            detector.evaluate(p, profiles).ok().map(|d| DpMapPoint {
                x: p.x,
                y: p.y,
                dp_d: d.dp_d,
                dp_o: d.dp_o,
                dp_n: d.dp_n,
            })
        })
        .collect()
}

/// Draws the RIS schedule for a profile mode. Directional profiles focus the
/// RIS-UE link on `focus`.
pub fn make_schedule<R: Rng + ?Sized>(
    scenario: &Scenario,
    ue: &Pose,
    mode: RisProfileMode,
    focus: &Vector3<f64>,
    rng: &mut R,
) -> Result<RisProfileSchedule> {
    let pairs = scenario.half_transmissions();
    Ok(match mode {
        RisProfileMode::Random => {
            RisProfileSchedule::random(scenario.ris_array.len(), pairs, rng)
        }
        RisProfileMode::Directional => {
            let phi_0 = channel_params(ue, &scenario.ris, None)?.aod_ris;
            let phi_f = scenario.ris.angles_to(focus);
            RisProfileSchedule::directional(&scenario.ris_array, scenario.wavelength, phi_0, phi_f, pairs)
        }
    })
}

/// Received-to-transmitted power ratios of the four signal types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkBudget {
    /// UE-RIS-UE
    pub ris: f64,
    /// UE-RIS-SP-UE (equal to UE-SP-RIS-UE)
    pub double_bounce: f64,
    /// UE-SP-UE
    pub direct: f64,
}

/// Broadside link budget with RIS element area `(λ/4)²` and RIS gain `N_R²`
/// (directional) or `N_R` (random).
pub fn link_budget(
    d_ur: f64,
    d_us: f64,
    d_rs: f64,
    n_ris: usize,
    mode: RisProfileMode,
    wavelength: f64,
    rcs: f64,
) -> Result<LinkBudget> {
    if !(d_ur > 0.0 && d_us > 0.0 && d_rs > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "link distances must be positive ({d_ur}, {d_us}, {d_rs})"
        )));
    }
    let g = match mode {
        RisProfileMode::Directional => (n_ris as f64).powi(2),
        RisProfileMode::Random => n_ris as f64,
    };
    let lam2 = wavelength * wavelength;
    let area = lam2 / 16.0;
    let fp = 4.0 * PI;
    Ok(LinkBudget {
        ris: g * lam2 * area / (fp.powi(2) * d_ur.powi(4)),
        double_bounce: g * lam2 * rcs * area
            / (fp.powi(4) * d_us * d_us * d_ur * d_ur * d_rs * d_rs),
        direct: lam2 * rcs / (fp.powi(3) * d_us.powi(4)),
    })
}

/// Placement of UE and SP along the RIS broadside line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkScenario {
    /// SP between RIS and UE, `d_RS = ρ d_UR` with `d_UR` fixed.
    SpBetween,
    /// UE between RIS and SP, `d_RU = ρ d_RS` with `d_RS` fixed.
    UeBetween,
}

/// `(d_UR, d_US, d_RS)` for ratio `rho` and fixed distance `span`.
pub fn link_distances(scenario: LinkScenario, rho: f64, span: f64) -> (f64, f64, f64) {
    match scenario {
        LinkScenario::SpBetween => (span, (1.0 - rho) * span, rho * span),
        LinkScenario::UeBetween => (rho * span, (1.0 - rho) * span, span),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkBudgetRow {
    pub rho: f64,
    pub pl_r_db: f64,
    pub pl_d_db: f64,
    pub pl_n_db: f64,
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn link_budget_sweep(
    scenario: LinkScenario,
    mode: RisProfileMode,
    span: f64,
    rhos: &[f64],
    n_ris: usize,
    wavelength: f64,
    rcs: f64,
) -> Result<Vec<LinkBudgetRow>> {
    rhos.iter()
        .map(|&rho| {
            let (d_ur, d_us, d_rs) = link_distances(scenario, rho, span);
            let lb = link_budget(d_ur, d_us, d_rs, n_ris, mode, wavelength, rcs)?;
            Ok(LinkBudgetRow {
                rho,
                pl_r_db: to_db(lb.ris),
                pl_d_db: to_db(lb.double_bounce),
                pl_n_db: to_db(lb.direct),
            })
        })
        .collect()
}

/// Empirical CCDF `P(X > x)` at each threshold.
pub fn ccdf(samples: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&x| {
            let at_or_below = sorted.partition_point(|v| *v <= x);
            (sorted.len() - at_or_below) as f64 / n
        })
        .collect()
}
