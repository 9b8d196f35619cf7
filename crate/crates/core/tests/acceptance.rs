//! One PASS/FAIL line per acceptance criterion. Failing criteria are
//! reported, not asserted; the process exits successfully either way.

mod common;

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rissense::campaign::{dp_ccdf, dp_maps, dp_maps_at, link_budgets, run_campaign, CampaignSummary, FilterLabel};
use rissense::config::{RisProfileMode, ScenarioConfig};
use rissense::detection::{detection_probability, marcum_q1, DetectionConfig, LinkScenario};
use rissense::measurement::residual;
use rissense::detection::Branch;
use rissense::metrics::{gospa, hungarian, GospaConfig};
use rissense::tracking::{bp_marginals, exact_marginals, measurement_jacobian, measurement_model};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    println!(
        "{} criterion {id} ({name}): {} [{:.2} s, limit {} s]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn detection_floor() -> Outcome {
    let cfg = DetectionConfig::new(1e-3).unwrap();
    let floor = (detection_probability(0.0, 1.0, 1e-20, &cfg) - 1e-3).abs();
    let grid: Vec<f64> = (0..=24).map(|i| i as f64 * 0.5).collect();
    let mut worst = 0.0f64;
    for &a in &grid {
        for &b in &grid {
            worst = worst.max((marcum_q1(a, b) - common::marcum_oracle(a, b)).abs());
        }
    }
    Outcome {
        pass: floor < 1e-9 && worst < 1e-6,
        detail: format!("|dp(0) - p_FA| = {floor:.1e}, max |Q1 - oracle| = {worst:.1e} over 25x25 grid"),
    }
}

fn exact_separation() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (l, seed) in [(0, 11), (1, 12), (3, 13)] {
        let c = common::separation_check(l, seed);
        let worst = c.leakage.iter().copied().fold(0.0, f64::max);
        pass &= worst < 1e-20 && c.combiner_error < 1e-10 && c.null_error < 1e-10;
        parts.push(format!(
            "L={l}: leakage {worst:.1e}, unitarity {:.1e}, null {:.1e}",
            c.combiner_error, c.null_error
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn dp_geometry() -> Outcome {
    let cfg = ScenarioConfig::default();
    let m = &cfg.dp_map;
    let (ue, ris) = (Vector3::from(m.ue_position), Vector3::from(m.ris_position));
    let segment: Vec<Vector3<f64>> = (1..200).map(|i| ris + (ue - ris) * (i as f64 / 200.0)).collect();
    let (seg_r, seg_d) = dp_maps_at(&cfg, &segment).unwrap();
    let low = |v: &[rissense::detection::DpMapPoint]| {
        v.iter().filter(|p| p.dp_d < 2e-3).count() as f64 / v.len() as f64
    };
    let (low_r, low_d) = (low(&seg_r), low(&seg_d));
    let (random, direct) = dp_maps(&cfg).unwrap();
    let cell = m.resolution * m.resolution;
    let area = |v: &[rissense::detection::DpMapPoint]| v.iter().filter(|p| p.dp_d > 0.5).count() as f64 * cell;
    let (area_r, area_d) = (area(&random), area(&direct));
    Outcome {
        pass: low_r >= 0.95 && low_d >= 0.95 && area_d > area_r,
        detail: format!(
            "segment dp_D < 2e-3 on {:.1}% (random) / {:.1}% (directional) of 199 points; dp_D > 0.5 area {area_d} m2 directional vs {area_r} m2 random",
            100.0 * low_r,
            100.0 * low_d
        ),
    }
}

fn dominates(hi: &[f64], lo: &[f64]) -> bool {
    hi.iter().zip(lo).all(|(h, l)| h + 1e-12 >= *l)
}

fn ccdf_ordering() -> Outcome {
    let cfg = ScenarioConfig::default();
    let t = dp_ccdf(&cfg).unwrap();
    let checks = [
        ("N >= D (random)", dominates(&t.n, &t.d_random)),
        ("D >= O (random)", dominates(&t.d_random, &t.o_random)),
        ("N >= D (directional)", dominates(&t.n, &t.d_directional)),
        ("D >= O (directional)", dominates(&t.d_directional, &t.o_directional)),
        ("D directional >= random", dominates(&t.d_directional, &t.d_random)),
        ("O directional >= random", dominates(&t.o_directional, &t.o_random)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("all 6 pointwise CCDF dominances hold over {} runs", cfg.runs)
        } else {
            format!("violated: {}", failed.join(", "))
        },
    }
}

fn link_budget_check() -> Outcome {
    let cfg = ScenarioConfig::default();
    let sweeps = link_budgets(&cfg).unwrap();
    let rows = |ls, mode| {
        sweeps
            .iter()
            .find(|(l, m, _)| *l == ls && *m == mode)
            .map(|(_, _, r)| r.clone())
            .unwrap()
    };
    let a_dir = rows(LinkScenario::SpBetween, RisProfileMode::Directional);
    let a_rnd = rows(LinkScenario::SpBetween, RisProfileMode::Random);
    let boost = a_dir[0].pl_d_db - a_rnd[0].pl_d_db;
    let min_n = a_rnd.iter().map(|r| r.pl_n_db).fold(f64::INFINITY, f64::min);
    let at = |rho: f64| a_rnd.iter().find(|r| (r.rho - rho).abs() < 1e-9).unwrap().pl_d_db;
    let (d01, d05, d09) = (at(0.1), at(0.5), at(0.9));
    let boost_ok = (boost - 34.0).abs() < 0.05;
    let n_ok = min_n >= -114.0 - 2.0;
    let edges_ok = (d01 + 130.0).abs() <= 3.0 && (d09 + 130.0).abs() <= 3.0;
    let mid_ok = (d05 + 160.0).abs() <= 3.0;
    Outcome {
        pass: boost_ok && n_ok && edges_ok && mid_ok,
        detail: format!(
            "boost {boost:.2} dB [{}]; min PL_N {min_n:.2} dB [{}]; PL_D(0.1) {d01:.2}, PL_D(0.9) {d09:.2} dB vs -130 [{}]; PL_D(0.5) {d05:.2} dB vs -160 [{}]",
            ok(boost_ok),
            ok(n_ok),
            ok(edges_ok),
            ok(mid_ok)
        ),
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "off"
    }
}

fn gospa_closed_form() -> Outcome {
    let truth: Vec<Vector3<f64>> = (0..8).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
    let g = gospa(&[], &truth, &GospaConfig::default()).unwrap().total;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..400.0)).collect();
        let a = hungarian(&cost, n);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        if (total - brute_force(&cost, n)).abs() > 1e-9 {
            mismatches += 1;
        }
    }
    Outcome {
        pass: g == 40.0 && mismatches == 0,
        detail: format!("8 missed -> {g}; Hungarian vs brute force mismatches {mismatches}/200"),
    }
}

fn brute_force(cost: &[f64], n: usize) -> f64 {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        best = best.min(p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum());
    });
    best
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

fn campaign_bands(summary: &CampaignSummary, epochs: usize) -> Outcome {
    let at = |f| summary.mean_at(f, epochs).unwrap_or(f64::NAN);
    let (ris, nris, fusion, random) = (
        at(FilterLabel::Ris),
        at(FilterLabel::Nris),
        at(FilterLabel::Fusion),
        at(FilterLabel::RisRandom),
    );
    let checks = [
        nris < 1.0,
        fusion < 1.0,
        (1.0..=6.0).contains(&ris),
        random >= ris + 5.0,
    ];
    let early = summary.mean_at(FilterLabel::Ris, 2).unwrap_or(f64::NAN);
    Outcome {
        pass: checks.iter().all(|c| *c),
        detail: format!(
            "{} runs, k={epochs}: NRIS {nris:.3} [{}], Fusion {fusion:.3} [{}], RIS {ris:.3} [{}], RIS-random {random:.3} [{}]; RIS k=2 {early:.3} -> k={epochs} {ris:.3} ({})",
            summary.runs,
            ok(checks[0]),
            ok(checks[1]),
            ok(checks[2]),
            ok(checks[3]),
            if ris < early { "decreasing" } else { "not decreasing" }
        ),
    }
}

fn filter_consistency(summary: &CampaignSummary) -> Outcome {
    let h = &summary.health;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst_tv, mut worst_tree_tv, mut worst_row) = (0.0f64, 0.0f64, h.max_row_error);
    let (mut over, mut total) = (0, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        let (miss, assoc) = common::association_instance(&mut rng, n, m, 0.4);
        let exact = exact_marginals(&miss, &assoc);
        let (bp, _) = bp_marginals(&miss, &assoc, 1e-12, 1000);
        worst_row = worst_row.max(exact.row_sum_error()).max(bp.row_sum_error());
        let tv = exact.total_variation(&bp);
        if common::has_cycle(&assoc) {
            worst_tv = worst_tv.max(tv);
        } else {
            worst_tree_tv = worst_tree_tv.max(tv);
        }
        total += 1;
        if tv > 1e-3 {
            over += 1;
        }
    }
    let (ue, ris) = common::default_poses();
    let mut worst_jac = 0.0f64;
    for _ in 0..200 {
        let x = Vector3::new(rng.random_range(31.0..50.0), rng.random_range(-30.0..50.0), rng.random_range(2.0..10.0));
        for branch in [Branch::R, Branch::N] {
            let j = measurement_jacobian(branch, &x, &ue, &ris).unwrap();
            for k in 0..3 {
                let h = 1e-4;
                let (mut xp, mut xm) = (x, x);
                xp[k] += h;
                xm[k] -= h;
                let fd = residual(
                    branch,
                    &measurement_model(branch, &xp, &ue, &ris).unwrap(),
                    &measurement_model(branch, &xm, &ue, &ris).unwrap(),
                ) / (2.0 * h);
                for r in 0..j.nrows() {
                    worst_jac = worst_jac.max((fd[r] - j[(r, k)]).abs() / j.row(r).norm());
                }
            }
        }
    }
    let checks = [
        worst_row < 1e-9,
        worst_tv.max(worst_tree_tv) < 1e-3,
        h.non_spd == 0 && h.existence_violations == 0,
        worst_jac < 1e-5,
    ];
    Outcome {
        pass: checks.iter().all(|c| *c),
        detail: format!(
            "row error {worst_row:.1e} [{}]; BP vs exact TV: tree {worst_tree_tv:.1e}, loopy {worst_tv:.1e}, {over}/{total} instances > 1e-3 [{}]; non-SPD {} and existence violations {} over {} filter epochs [{}]; Jacobian rel. error {worst_jac:.1e} [{}]",
            ok(checks[0]),
            ok(checks[1]),
            h.non_spd,
            h.existence_violations,
            h.epochs,
            ok(checks[2]),
            ok(checks[3])
        ),
    }
}

fn main() {
    // Keep libtest-style flags from breaking the run.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let mut passed = 0;
    let secs = Duration::from_secs;
    let mut tally = |p: bool| passed += p as usize;
    tally(report(1, "detection floor and Marcum Q", secs(1), detection_floor));
    tally(report(2, "exact separation", secs(10), exact_separation));
    tally(report(3, "DP geometry", secs(120), dp_geometry));
    tally(report(4, "CCDF ordering", secs(600), ccdf_ordering));
    tally(report(5, "link budget", secs(1), link_budget_check));
    tally(report(6, "GOSPA closed form", secs(1), gospa_closed_form));

    let cfg = ScenarioConfig {
        runs: 50,
        ..Default::default()
    };
    let mut summary = None;
    tally(report(7, "campaign bands", secs(1200), || match run_campaign(&cfg, None) {
        Ok(s) => {
            let o = campaign_bands(&s, cfg.epochs);
            summary = Some(s);
            o
        }
        Err(e) => Outcome {
            pass: false,
            detail: format!("campaign error: {e}"),
        },
    }));
    match &summary {
        Some(s) => tally(report(8, "filter consistency", secs(600), || filter_consistency(s))),
        None => println!("FAIL criterion 8 (filter consistency): no campaign result"),
    }
    println!("acceptance: {passed}/8 criteria passed");
}
