#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rissense::campaign::draw_scatterers;
use rissense::channel::{path_gains, synthesize_rx, Noise, RisProfileSchedule, SignalTerms};
use rissense::config::{ScenarioConfig, T1Precoder};
use rissense::geometry::{channel_params, Pose};
use rissense::separation::{build_precoder_plan, ris_leakage, separate, Combiner, SeparatedSignals};
use rissense::tensor::CTensor3;

/// `Q1(a, b)` by quadrature of the Rician CDF. The Bessel factor is written
/// as an angular average, which makes the radial integral closed form in
/// `erfc`; the periodic angular integral uses the trapezoid rule.
pub fn marcum_oracle(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        return 1.0;
    }
    let n = 512;
    let s2 = std::f64::consts::SQRT_2;
    let mut cdf = 0.0;
    for k in 0..n {
        let th = 2.0 * PI * (k as f64 + 0.5) / n as f64;
        let m = a * th.cos();
        let rest = (-0.5 * (a * th.sin()).powi(2)).exp();
        let radial = (-0.5 * m * m).exp() - (-0.5 * (b - m).powi(2)).exp()
            + m * (PI / 2.0).sqrt() * (libm::erfc(-m / s2) - libm::erfc((b - m) / s2));
        cdf += rest * radial;
    }
    1.0 - cdf / n as f64
}

/// Results of a noise-free separation run.
pub struct SeparationCheck {
    /// Energy of each branch minus its own term, relative to the received
    /// block energy: `[D, O, N]`.
    pub leakage: [f64; 3],
    pub combiner_error: f64,
    pub null_error: f64,
}

fn branch_gap(a: &CTensor3, b: &CTensor3) -> f64 {
    a.distance_sqr(b)
}

/// Synthesizes the default scenario with `l` scatterers and no noise and
/// compares each separated branch with the synthesis of its own term alone.
pub fn separation_check(l: usize, seed: u64) -> SeparationCheck {
    let cfg = ScenarioConfig::default();
    let s = cfg.scenario().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sps: Vec<Vector3<f64>> = draw_scatterers(&cfg, seed as usize).into_iter().take(l).collect();
    let ue = cfg.initial_ue().unwrap().pose();
    let theta_0 = channel_params(&ue, &s.ris, None).unwrap().aod_ue;
    let plan = build_precoder_plan(
        theta_0,
        &s.ue_array,
        s.wavelength,
        s.transmissions,
        1.0,
        T1Precoder::Directional,
        &mut rng,
    )
    .unwrap();
    let schedule = RisProfileSchedule::random(s.ris_array.len(), s.half_transmissions(), &mut rng);
    let gains = path_gains(&s, &ue, &sps, &mut rng).unwrap();
    let precoders = plan.all();
    let combiner = Combiner::new(theta_0, &s.ue_array, s.wavelength).unwrap();
    let run = |terms: SignalTerms| {
        let rx = synthesize_rx(&s, &ue, &sps, &gains, &schedule, &precoders, terms, Noise::<ChaCha8Rng>::Off)
            .unwrap();
        let sep = separate(&rx, &combiner, plan.t1()).unwrap();
        (rx.samples.energy(), sep)
    };
    let only = |ris_sp_ue, sp_ris_ue, sp_ue| SignalTerms {
        ue_ris_ue: false,
        ue_ris_sp_ue: ris_sp_ue,
        ue_sp_ris_ue: sp_ris_ue,
        ue_sp_ue: sp_ue,
    };
    let (total, all): (f64, SeparatedSignals) = run(SignalTerms::ALL);
    let (_, d_only) = run(only(true, false, false));
    let (_, o_only) = run(only(false, true, false));
    let (_, n_only) = run(only(false, false, true));
    let leakage = [
        branch_gap(&all.y_d, &d_only.y_d) / total,
        branch_gap(&all.y_o, &o_only.y_o) / total,
        branch_gap(&all.y_n, &n_only.y_n) / total,
    ];

    let w = &combiner.matrix;
    let n = w.ncols();
    let combiner_error = (w.adjoint() * w - DMatrix::<Complex64>::identity(n, n)).norm();
    let null_error = plan
        .t2_precoders
        .iter()
        .map(|f| ris_leakage(f, theta_0, &s.ue_array, s.wavelength))
        .fold(0.0, f64::max);
    SeparationCheck {
        leakage,
        combiner_error,
        null_error,
    }
}

/// Random association weights shaped like the filter's: miss weights in
/// `(0, 1]` and sparse gated likelihood ratios.
pub fn association_instance(rng: &mut impl Rng, n: usize, m: usize, density: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let miss = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let assoc = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    if rng.random_bool(density) {
                        10f64.powf(rng.random_range(-3.0..1.0))
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    (miss, assoc)
}

/// UE and RIS poses of the default scenario at the start of the track.
pub fn default_poses() -> (Pose, Pose) {
    let cfg = ScenarioConfig::default();
    (cfg.initial_ue().unwrap().pose(), cfg.scenario().unwrap().ris)
}

/// Whether the bipartite gating graph of an association instance has a cycle.
pub fn has_cycle(assoc: &[Vec<f64>]) -> bool {
    fn root(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    let n = assoc.len();
    let m = assoc.first().map_or(0, Vec::len);
    let mut parent: Vec<usize> = (0..n + m).collect();
    for (i, row) in assoc.iter().enumerate() {
        for (j, w) in row.iter().enumerate() {
            if *w > 0.0 {
                let (a, b) = (root(&mut parent, i), root(&mut parent, n + j));
                if a == b {
                    return true;
                }
                parent[a] = b;
            }
        }
    }
    false
}
