//! Array responses, RIS phase profiles, path gains and received-signal
//! synthesis for the monostatic multipath model.

use std::f64::consts::PI;

use nalgebra::{DVector, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::geometry::{channel_params, AzEl, LinkDistances, PathParams, Pose};
use crate::tensor::CTensor3;

pub type CVector = DVector<Complex64>;

/// Uniform planar array. Elements are ordered azimuth-fastest: element
/// `(p, q)` sits at index `q * n_az + p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpaConfig {
    pub n_az: usize,
    pub n_el: usize,
    /// Element spacing in meters.
    pub spacing: f64,
}

impl UpaConfig {
    pub fn new(n_az: usize, n_el: usize, spacing: f64) -> Result<Self> {
        if n_az == 0 || n_el == 0 || !(spacing > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "UPA {n_az}x{n_el} with spacing {spacing}"
            )));
        }
        Ok(Self {
            n_az,
            n_el,
            spacing,
        })
    }

    pub fn len(&self) -> usize {
        self.n_az * self.n_el
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Array response with unit-modulus entries; `|a|^2 = N`.
pub fn steering_vector(cfg: &UpaConfig, angle: AzEl, wavelength: f64) -> CVector {
    let k = 2.0 * PI / wavelength * cfg.spacing;
    let u = angle.az.sin() * angle.el.cos();
    let v = angle.el.sin();
    let row: Vec<Complex64> = (0..cfg.n_az)
        .map(|p| Complex64::from_polar(1.0, k * p as f64 * u))
        .collect();
    DVector::from_iterator(
        cfg.len(),
        (0..cfg.n_el).flat_map(|q| {
            let col = Complex64::from_polar(1.0, k * q as f64 * v);
            row.iter().map(move |r| r * col)
        }),
    )
}

/// Element-wise product `a_R(phi_l) ⊙ a_R(phi_0)`; the RIS response to any
/// profile is its dot product with the profile.
pub fn ris_coupling(cfg: &UpaConfig, phi_l: AzEl, phi_0: AzEl, wavelength: f64) -> CVector {
    steering_vector(cfg, phi_l, wavelength).component_mul(&steering_vector(cfg, phi_0, wavelength))
}

/// `a_R(phi_l)^T diag(profile) a_R(phi_0)`.
pub fn ris_response(
    profile: &CVector,
    phi_l: AzEl,
    phi_0: AzEl,
    cfg: &UpaConfig,
    wavelength: f64,
) -> Complex64 {
    profile_dot(profile, &ris_coupling(cfg, phi_l, phi_0, wavelength))
}

#[inline]
pub(crate) fn profile_dot(profile: &CVector, coupling: &CVector) -> Complex64 {
    profile
        .iter()
        .zip(coupling.iter())
        .fold(Complex64::new(0.0, 0.0), |acc, (w, c)| acc + w * c)
}

/// `a^T f` (unconjugated bilinear product).
#[inline]
pub(crate) fn bilinear(a: &CVector, f: &CVector) -> Complex64 {
    a.iter()
        .zip(f.iter())
        .fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x * y)
}

/// Phase ramp `d_s(tau) = exp(-j 2 pi s tau Δf)` for `s = 0..n`.
pub fn delay_response(tau: f64, n_subcarriers: usize, spacing: f64) -> Vec<Complex64> {
    (0..n_subcarriers)
        .map(|s| Complex64::from_polar(1.0, -2.0 * PI * s as f64 * tau * spacing))
        .collect()
}

/// Base RIS profiles `ω̃_t̃` for the `T/2` transmission pairs. The profile of
/// transmission `t` (0-based) is `+ω̃_{t/2}` for even `t` and `-ω̃_{t/2}` for
/// odd `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RisProfileSchedule {
    base: Vec<CVector>,
}

impl RisProfileSchedule {
    pub fn from_base(base: Vec<CVector>) -> Result<Self> {
        let n = base.first().map(|b| b.len()).unwrap_or(0);
        for b in &base {
            if b.len() != n {
                return Err(Error::DimensionMismatch("RIS profiles differ in length".into()));
            }
            if b.iter().any(|w| (w.norm() - 1.0).abs() > 1e-9) {
                return Err(Error::InvalidParameter("RIS profile entries must be unit-modulus".into()));
            }
        }
        Ok(Self { base })
    }

    /// Independent uniform phases.
    pub fn random<R: Rng + ?Sized>(n_elements: usize, pairs: usize, rng: &mut R) -> Self {
        let base = (0..pairs)
            .map(|_| {
                DVector::from_fn(n_elements, |_, _| {
                    Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))
                })
            })
            .collect();
        Self { base }
    }

    /// Phase-conjugate profile `conj(a_R(phi_0) ⊙ a_R(phi_focus))` for every pair.
    pub fn directional(
        cfg: &UpaConfig,
        wavelength: f64,
        phi_0: AzEl,
        phi_focus: AzEl,
        pairs: usize,
    ) -> Self {
        let w = ris_coupling(cfg, phi_focus, phi_0, wavelength).map(|c| c.conj() / c.norm());
        Self {
            base: vec![w; pairs],
        }
    }

    pub fn pairs(&self) -> usize {
        self.base.len()
    }

    pub fn base(&self, pair: usize) -> &CVector {
        &self.base[pair]
    }

    /// Expanded profile of transmission `t` (0-based).
    pub fn profile(&self, t: usize) -> CVector {
        let w = &self.base[t / 2];
        if t.is_multiple_of(2) {
            w.clone()
        } else {
            -w
        }
    }

    /// RIS responses `ν_t̃` of every pair for a given coupling vector.
    pub fn responses(&self, coupling: &CVector) -> Vec<Complex64> {
        self.base.iter().map(|w| profile_dot(w, coupling)).collect()
    }
}

/// Complex path gains of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathGains {
    /// `α_0` (UE-RIS-UE) followed by `α_l` for each scatterer.
    pub controlled: Vec<Complex64>,
    /// `β_l` for each scatterer.
    pub uncontrolled: Vec<Complex64>,
    /// Set where the RIS cosine pattern was negative and the gain zeroed.
    pub behind_ris: Vec<bool>,
    /// Common phase offset of the epoch.
    pub phase_offset: f64,
}

/// `g^(2 q0)` with negative cosines mapped to zero.
fn pattern(g: f64, q0: f64) -> f64 {
    if g <= 0.0 {
        0.0
    } else {
        g.powf(2.0 * q0)
    }
}

/// Squared amplitude of the UE-RIS-UE path.
pub fn ris_link_power(s: &Scenario, d_ur: f64, g_ur: f64) -> f64 {
    let lam2 = s.wavelength * s.wavelength;
    let four_pi = 4.0 * PI;
    let prefactor =
        s.energy_per_subcarrier * lam2 * pattern(g_ur, s.q0) / (16.0 * four_pi.powi(2) * d_ur * d_ur);
    prefactor * pattern(g_ur, s.q0) * lam2 / (four_pi * d_ur * d_ur)
}

/// Squared amplitudes `(|α_l|^2, |β_l|^2)` of the scatterer paths.
pub fn scatterer_powers(s: &Scenario, d: &LinkDistances) -> (f64, f64) {
    let lam2 = s.wavelength * s.wavelength;
    let four_pi = 4.0 * PI;
    let prefactor = s.energy_per_subcarrier * lam2 * pattern(d.g_ur, s.q0)
        / (16.0 * four_pi.powi(2) * d.d_ur * d.d_ur);
    let alpha2 = prefactor * pattern(d.g_sr, s.q0) * lam2 * s.rcs
        / (four_pi.powi(2) * d.d_sr * d.d_sr * d.d_su * d.d_su);
    let beta2 = s.energy_per_subcarrier * lam2 * s.rcs / (four_pi.powi(3) * d.d_su.powi(4));
    (alpha2, beta2)
}

/// Draws the epoch phase offset and evaluates all path gains.
pub fn path_gains<R: Rng + ?Sized>(
    scenario: &Scenario,
    ue: &Pose,
    sps: &[Vector3<f64>],
    rng: &mut R,
) -> Result<PathGains> {
    let phase_offset = rng.random_range(0.0..2.0 * PI);
    path_gains_with_offset(scenario, ue, sps, phase_offset)
}

pub fn path_gains_with_offset(
    scenario: &Scenario,
    ue: &Pose,
    sps: &[Vector3<f64>],
    phase_offset: f64,
) -> Result<PathGains> {
    let ris = &scenario.ris;
    let phase = |tau: f64| -(2.0 * PI * scenario.carrier_hz * tau + phase_offset);
    let p0 = channel_params(ue, ris, None)?;
    let d_ur = (ue.position - ris.position).norm();
    let g_ur = (ue.position - ris.position).dot(&ris.normal()) / d_ur;
    let mut controlled = vec![Complex64::from_polar(
        ris_link_power(scenario, d_ur, g_ur).sqrt(),
        phase(p0.toa_controlled),
    )];
    let mut behind_ris = vec![g_ur < 0.0];
    let mut uncontrolled = Vec::with_capacity(sps.len());
    for sp in sps {
        let p = channel_params(ue, ris, Some(sp))?;
        let d = LinkDistances::new(&ue.position, ris, sp)?;
        let (a2, b2) = scatterer_powers(scenario, &d);
        controlled.push(Complex64::from_polar(a2.sqrt(), phase(p.toa_controlled)));
        uncontrolled.push(Complex64::from_polar(
            b2.sqrt(),
            phase(p.toa_uncontrolled.expect("scatterer path")),
        ));
        behind_ris.push(d.g_sr < 0.0 || d.g_ur < 0.0);
    }
    Ok(PathGains {
        controlled,
        uncontrolled,
        behind_ris,
        phase_offset,
    })
}

/// Received OFDM block of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct RxSignalBlock {
    /// `[t][s][antenna]`
    pub samples: CTensor3,
    /// Per-antenna noise PSD used for the draw (W/Hz).
    pub noise_psd: f64,
}

/// Which groups of terms of the received-signal model to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalTerms {
    pub ue_ris_ue: bool,
    pub ue_ris_sp_ue: bool,
    pub ue_sp_ris_ue: bool,
    pub ue_sp_ue: bool,
}

impl SignalTerms {
    pub const ALL: Self = Self {
        ue_ris_ue: true,
        ue_ris_sp_ue: true,
        ue_sp_ris_ue: true,
        ue_sp_ue: true,
    };
    pub const RIS_ONLY: Self = Self {
        ue_ris_ue: true,
        ue_ris_sp_ue: true,
        ue_sp_ris_ue: true,
        ue_sp_ue: false,
    };
    pub const DIRECT_ONLY: Self = Self {
        ue_ris_ue: false,
        ue_ris_sp_ue: false,
        ue_sp_ris_ue: false,
        ue_sp_ue: true,
    };
}

/// Noise injection for [`synthesize_rx`].
pub enum Noise<'a, R: Rng + ?Sized> {
    Off,
    On(&'a mut R),
}

struct Term {
    delay: f64,
    /// Antenna vector per transmission.
    vectors: Vec<CVector>,
}

/// Synthesizes the received block for every transmission and subcarrier.
///
/// `precoders` holds one unit-norm precoder per transmission pair; both
/// transmissions of a pair use it.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_rx<R: Rng + ?Sized>(
    scenario: &Scenario,
    ue: &Pose,
    sps: &[Vector3<f64>],
    gains: &PathGains,
    schedule: &RisProfileSchedule,
    precoders: &[CVector],
    terms: SignalTerms,
    noise: Noise<'_, R>,
) -> Result<RxSignalBlock> {
    let pairs = scenario.half_transmissions();
    let n_u = scenario.ue_array.len();
    let n_sc = scenario.subcarriers;
    if precoders.len() != pairs || schedule.pairs() != pairs {
        return Err(Error::DimensionMismatch(format!(
            "{} precoders / {} profiles for {} transmission pairs",
            precoders.len(),
            schedule.pairs(),
            pairs
        )));
    }
    if precoders.iter().any(|f| f.len() != n_u) {
        return Err(Error::DimensionMismatch("precoder length differs from UE array".into()));
    }
    if gains.controlled.len() != sps.len() + 1 || gains.uncontrolled.len() != sps.len() {
        return Err(Error::DimensionMismatch("path gains do not match scatterer count".into()));
    }
    if schedule.base(0).len() != scenario.ris_array.len() {
        return Err(Error::DimensionMismatch("RIS profile length differs from RIS array".into()));
    }

    let lam = scenario.wavelength;
    let ris = &scenario.ris;
    let p0 = channel_params(ue, ris, None)?;
    let a0 = steering_vector(&scenario.ue_array, p0.aod_ue, lam);
    let t_count = 2 * pairs;

    // ν_t for transmission t: the odd member of each pair uses -ω̃
    let responses = |params: &PathParams| -> Vec<Complex64> {
        let c = ris_coupling(&scenario.ris_array, params.aod_ris, p0.aod_ris, lam);
        (0..t_count)
            .map(|t| profile_dot(&schedule.profile(t), &c))
            .collect()
    };

    let mut term_list: Vec<Term> = Vec::new();
    if terms.ue_ris_ue {
        let nu = responses(&p0);
        let alpha = gains.controlled[0];
        term_list.push(Term {
            delay: p0.toa_controlled,
            vectors: (0..t_count)
                .map(|t| &a0 * (alpha * nu[t] * bilinear(&a0, &precoders[t / 2])))
                .collect(),
        });
    }
    for (l, sp) in sps.iter().enumerate() {
        let p = channel_params(ue, ris, Some(sp))?;
        let al = steering_vector(&scenario.ue_array, p.aod_ue, lam);
        if terms.ue_ris_sp_ue || terms.ue_sp_ris_ue {
            let nu = responses(&p);
            let alpha = gains.controlled[l + 1];
            let vectors = (0..t_count)
                .map(|t| {
                    let f = &precoders[t / 2];
                    let mut v = CVector::zeros(n_u);
                    if terms.ue_ris_sp_ue {
                        v += &al * bilinear(&a0, f);
                    }
                    if terms.ue_sp_ris_ue {
                        v += &a0 * bilinear(&al, f);
                    }
                    v * (alpha * nu[t])
                })
                .collect();
            term_list.push(Term {
                delay: p.toa_controlled,
                vectors,
            });
        }
        if terms.ue_sp_ue {
            let beta = gains.uncontrolled[l];
            term_list.push(Term {
                delay: p.toa_uncontrolled.expect("scatterer path"),
                vectors: (0..t_count)
                    .map(|t| &al * (beta * bilinear(&al, &precoders[t / 2])))
                    .collect(),
            });
        }
    }

    let ramps: Vec<Vec<Complex64>> = term_list
        .iter()
        .map(|term| delay_response(term.delay, n_sc, scenario.subcarrier_spacing))
        .collect();
    let mut samples = CTensor3::zeros(t_count, n_sc, n_u);
    for t in 0..t_count {
        for s in 0..n_sc {
            let out = samples.at_mut(t, s);
            for (term, ramp) in term_list.iter().zip(&ramps) {
                let d = ramp[s];
                for (o, v) in out.iter_mut().zip(term.vectors[t].iter()) {
                    *o += v * d;
                }
            }
        }
    }

    if let Noise::On(rng) = noise {
        let sigma = (scenario.noise_psd / 2.0).sqrt();
        for t in 0..t_count {
            for s in 0..n_sc {
                for o in samples.at_mut(t, s) {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    *o += Complex64::new(sigma * re, sigma * im);
                }
            }
        }
    }

    Ok(RxSignalBlock {
        samples,
        noise_psd: scenario.noise_psd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn broadside_is_all_ones() {
        let cfg = UpaConfig::new(4, 3, 0.005).unwrap();
        let a = steering_vector(&cfg, AzEl::new(0.0, 0.0), 0.01);
        assert!(a.iter().all(|z| (z - c(1.0)).norm() < 1e-15));
    }

    #[test]
    fn steering_norm_is_sqrt_n() {
        let cfg = UpaConfig::new(5, 7, 0.0025).unwrap();
        for (az, el) in [(0.3, -0.2), (2.0, 1.1), (-1.4, 0.7)] {
            let a = steering_vector(&cfg, AzEl::new(az, el), 0.01);
            assert!((a.norm_squared() - 35.0).abs() < 1e-12);
        }
    }

    #[test]
    fn endfire_phase_steps_by_pi() {
        let cfg = UpaConfig::new(4, 4, 0.005).unwrap();
        let a = steering_vector(&cfg, AzEl::new(PI / 2.0, 0.0), 0.01);
        for q in 0..4 {
            for p in 1..4 {
                let ratio = a[q * 4 + p] / a[q * 4 + p - 1];
                assert!((ratio - c(-1.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn phase_conjugate_profile_gives_full_gain() {
        let cfg = UpaConfig::new(10, 10, 0.0025).unwrap();
        let phi_0 = AzEl::new(0.3, -0.1);
        let phi_l = AzEl::new(-0.5, 0.2);
        let sched = RisProfileSchedule::directional(&cfg, 0.01, phi_0, phi_l, 1);
        let nu = ris_response(sched.base(0), phi_l, phi_0, &cfg, 0.01);
        assert!((nu - c(100.0)).norm() < 1e-10);
        let ones = CVector::from_element(100, c(1.0));
        let nu = ris_response(&ones, AzEl::default(), AzEl::default(), &cfg, 0.01);
        assert!((nu - c(100.0)).norm() < 1e-12);
    }

    #[test]
    fn random_profile_gain_is_n() {
        let cfg = UpaConfig::new(10, 10, 0.0025).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sched = RisProfileSchedule::random(100, 10_000, &mut rng);
        let coupling = ris_coupling(&cfg, AzEl::new(0.4, 0.1), AzEl::new(-0.2, 0.3), 0.01);
        let mean: f64 = sched
            .responses(&coupling)
            .iter()
            .map(|n| n.norm_sqr())
            .sum::<f64>()
            / 10_000.0;
        assert!((mean / 100.0 - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn schedule_alternates_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sched = RisProfileSchedule::random(9, 3, &mut rng);
        for tp in 0..3 {
            assert_eq!(sched.profile(2 * tp), sched.base(tp).clone());
            assert_eq!(sched.profile(2 * tp + 1), -sched.base(tp));
        }
        assert!(RisProfileSchedule::from_base(vec![CVector::from_element(3, c(2.0))]).is_err());
    }

    fn scenario() -> Scenario {
        let mut cfg = ScenarioConfig::default();
        cfg.channel.rcs_m2 = 50.0;
        let mut s = cfg.scenario().unwrap();
        s.energy_per_subcarrier = 1.0;
        s
    }

    #[test]
    fn direct_path_power_at_15m() {
        let s = scenario();
        let ris = s.ris.clone();
        let ue = Vector3::new(45.0, 0.0, 0.0);
        let sp = Vector3::new(45.0, 15.0, 0.0);
        let d = LinkDistances::new(&ue, &ris, &sp).unwrap();
        let (_, b2) = scatterer_powers(&s, &d);
        let expected = 1e-4 * 50.0 / ((4.0 * PI).powi(3) * 15f64.powi(4));
        assert!((b2 - expected).abs() < 1e-24);
        assert!((b2 - 4.977e-11).abs() < 1e-13);
        assert!((10.0 * b2.log10() + 103.03).abs() < 0.01);
        let sp2 = Vector3::new(45.0, 30.0, 0.0);
        let (_, b2_far) = scatterer_powers(&s, &LinkDistances::new(&ue, &ris, &sp2).unwrap());
        assert!((10.0 * (b2 / b2_far).log10() - 40.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn ue_in_ris_plane_kills_ris_link() {
        let s = scenario();
        assert_eq!(ris_link_power(&s, 10.0, 0.0), 0.0);
        let ue = Pose::identity_at(Vector3::new(30.0, 10.0, 20.0));
        let g = path_gains_with_offset(&s, &ue, &[], 0.0).unwrap();
        assert_eq!(g.controlled[0].norm(), 0.0);
    }

    #[test]
    fn scatterer_behind_ris_is_flagged() {
        let s = scenario();
        let ue = Pose::identity_at(Vector3::new(45.0, 0.0, 0.0));
        let g = path_gains_with_offset(&s, &ue, &[Vector3::new(20.0, 5.0, 5.0)], 0.3).unwrap();
        assert!(g.behind_ris[1]);
        assert_eq!(g.controlled[1].norm(), 0.0);
        assert!(g.uncontrolled[0].norm() > 0.0);
    }

    #[test]
    fn gain_phase_follows_delay() {
        let s = scenario();
        let ue = Pose::identity_at(Vector3::new(45.0, 0.0, 0.0));
        let sp = Vector3::new(40.0, 5.0, 5.0);
        let g = path_gains_with_offset(&s, &ue, &[sp], 1.0).unwrap();
        let p = channel_params(&ue, &s.ris, Some(&sp)).unwrap();
        let want = Complex64::from_polar(1.0, -(2.0 * PI * s.carrier_hz * p.toa_controlled + 1.0));
        assert!((g.controlled[1] / g.controlled[1].norm() - want).norm() < 1e-9);
    }
}
