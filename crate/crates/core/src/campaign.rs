//! Monte Carlo orchestration and figure-data generators.
//!
//! Every run draws its scatterers and noise from its own ChaCha8 stream of
//! the master seed, so results do not depend on the worker count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{path_gains, synthesize_rx, Noise, SignalTerms};
use crate::config::{RisProfileMode, Scenario, ScenarioConfig, T1Precoder};
use crate::detection::{
    ccdf, dp_map, grid, link_budget_sweep, make_schedule, Branch, DetectionConfig, DpMapPoint,
    EpochDetector, LinkBudgetRow, LinkScenario, ProfileChoice,
};
use crate::error::{Error, Result};
use crate::geometry::{channel_params, trajectory, Pose, UeState};
use crate::measurement::{
    generate_measurements, measurement_box, measurement_dim, merge_double_bounce, BranchModel,
    ClutterModel, MeasurementRecord,
};
use crate::metrics::{gospa, GospaConfig};
use crate::separation::{build_precoder_plan, separate};
use crate::tracking::fusion::gci_fuse;
use crate::tracking::pmb::{pmb_update, PmbPosterior, PosteriorSnapshot, Region, UpdateContext};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "RISSENSE_WORKERS";

/// Filter outputs reported by the campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterLabel {
    #[serde(rename = "RIS")]
    Ris,
    #[serde(rename = "NRIS")]
    Nris,
    #[serde(rename = "Fusion")]
    Fusion,
    #[serde(rename = "RIS-random")]
    RisRandom,
}

impl FilterLabel {
    pub const ALL: [FilterLabel; 4] = [Self::Ris, Self::Nris, Self::Fusion, Self::RisRandom];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ris => "RIS",
            Self::Nris => "NRIS",
            Self::Fusion => "Fusion",
            Self::RisRandom => "RIS-random",
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAMS_PER_RUN: u64 = 4;

/// Scatterer positions of one run, uniform over the configured box.
pub fn draw_scatterers(cfg: &ScenarioConfig, run: usize) -> Vec<Vector3<f64>> {
    let mut rng = stream_rng(cfg.seed, run as u64 * STREAMS_PER_RUN);
    let (lo, hi) = (cfg.geometry.sp_box_min, cfg.geometry.sp_box_max);
    (0..cfg.geometry.num_sps)
        .map(|_| Vector3::from_fn(|i, _| rng.random_range(lo[i]..=hi[i])))
        .collect()
}

/// UE states for epochs `0..=epochs`.
pub fn ue_track(cfg: &ScenarioConfig) -> Result<Vec<UeState>> {
    Ok(trajectory(
        &cfg.initial_ue()?,
        cfg.geometry.turn_rate,
        cfg.geometry.dt,
        cfg.epochs,
    ))
}

fn sp_region(cfg: &ScenarioConfig) -> Region {
    Region {
        lower: Vector3::from(cfg.geometry.sp_box_min),
        upper: Vector3::from(cfg.geometry.sp_box_max),
    }
}

fn clutter_model(cfg: &ScenarioConfig, branch: Branch, ue: &Pose, ris: &Pose) -> ClutterModel {
    let region = sp_region(cfg);
    let (lower, upper) = measurement_box(branch, ue, ris, &region.lower, &region.upper);
    let m = &cfg.measurement;
    let (a, d) = (m.clutter_angle_std.powi(2), m.clutter_delay_std.powi(2));
    let diag: Vec<f64> = match branch {
        Branch::N => vec![d, a, a],
        _ => vec![a, a, d, a, a],
    };
    debug_assert_eq!(diag.len(), measurement_dim(branch));
    ClutterModel {
        mean: m.clutter_mean,
        lower,
        upper,
        cov: DMatrix::from_diagonal(&DVector::from_vec(diag)),
    }
}

/// Per-path detection summary written to `detections.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub sp: usize,
    pub dp_d: f64,
    pub dp_o: f64,
    pub dp_n: f64,
}

/// Energies of the separated branch signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationRecord {
    pub energy_d: f64,
    pub energy_o: f64,
    pub energy_n: f64,
}

/// One line of `detections.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub run: usize,
    pub precoder: T1Precoder,
    pub epoch: usize,
    pub ue: [f64; 3],
    pub paths: Vec<PathRecord>,
    pub ris_measurements: Vec<MeasurementRecord>,
    pub direct_measurements: Vec<MeasurementRecord>,
    pub singular: Vec<(usize, Branch)>,
    pub separation: Option<SeparationRecord>,
}

/// One line of `posteriors.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRecord {
    pub run: usize,
    pub epoch: usize,
    pub filter: FilterLabel,
    pub posterior: PosteriorSnapshot,
}

/// Health counters of the filters over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterHealth {
    pub epochs: usize,
    pub non_spd: usize,
    pub existence_violations: usize,
    pub max_row_error: f64,
    pub dropped_hypotheses: usize,
    pub fusion_errors: usize,
}

impl FilterHealth {
    fn absorb(&mut self, o: &FilterHealth) {
        self.epochs += o.epochs;
        self.non_spd += o.non_spd;
        self.existence_violations += o.existence_violations;
        self.max_row_error = self.max_row_error.max(o.max_row_error);
        self.dropped_hypotheses += o.dropped_hypotheses;
        self.fusion_errors += o.fusion_errors;
    }

    fn check(&mut self, p: &PmbPosterior) {
        if !p.all_covariances_spd() {
            self.non_spd += 1;
        }
        if !p.existence_in_range() {
            self.existence_violations += 1;
        }
    }
}

/// Output of one pass (one T1 precoder mode) of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct PassOutput {
    /// GOSPA per epoch `0..=K` for each reported filter.
    pub gospa: Vec<(FilterLabel, Vec<f64>)>,
    pub epochs: Vec<EpochRecord>,
    pub posteriors: Vec<PosteriorRecord>,
    pub health: FilterHealth,
}

/// Runs the full pipeline for one run and one T1 precoder mode.
pub fn run_pass(cfg: &ScenarioConfig, scenario: &Scenario, run: usize, precoder: T1Precoder) -> Result<PassOutput> {
    let variant = match precoder {
        T1Precoder::Directional => 1,
        T1Precoder::Random => 2,
    };
    let mut rng = stream_rng(cfg.seed, run as u64 * STREAMS_PER_RUN + variant);
    let sps = draw_scatterers(cfg, run);
    let track = ue_track(cfg)?;
    let det_cfg = DetectionConfig::new(cfg.measurement.p_fa)?;
    let gcfg = GospaConfig::from(&cfg.gospa);
    let fcfg = &cfg.filter;
    let region = sp_region(cfg);
    let focus = Vector3::from(cfg.signal.ris_focus);

    let labels: Vec<FilterLabel> = match precoder {
        T1Precoder::Directional => vec![FilterLabel::Ris, FilterLabel::Nris, FilterLabel::Fusion],
        T1Precoder::Random => vec![FilterLabel::RisRandom],
    };
    let mut gospa_series: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.epochs + 1); labels.len()];
    let empty = gospa(&[], &sps, &gcfg)?.total;
    for s in &mut gospa_series {
        s.push(empty);
    }

    let mut post_r = PmbPosterior::new(region, fcfg.initial_undetected_weight);
    let mut post_n = post_r.clone();
    let mut out = PassOutput {
        gospa: Vec::new(),
        epochs: Vec::new(),
        posteriors: Vec::new(),
        health: FilterHealth::default(),
    };

    for (k, state) in track.iter().enumerate().skip(1) {
        let ue = state.pose();
        let theta_0 = channel_params(&ue, &scenario.ris, None)?.aod_ue;
        let plan = build_precoder_plan(
            theta_0,
            &scenario.ue_array,
            scenario.wavelength,
            scenario.transmissions,
            cfg.signal.split_ratio,
            precoder,
            &mut rng,
        )?;
        let schedule = make_schedule(scenario, &ue, cfg.signal.ris_profile_mode, &focus, &mut rng)?;
        let detector = EpochDetector::new(scenario, ue.clone(), &plan, det_cfg)?;
        let profiles = ProfileChoice::Schedule(&schedule);
        let detections: Vec<_> = sps
            .iter()
            .map(|sp| detector.evaluate(sp, &profiles))
            .collect::<Result<_>>()?;

        let separation = if cfg.synthesize_signals {
            let gains = path_gains(scenario, &ue, &sps, &mut rng)?;
            let rx = synthesize_rx(
                scenario,
                &ue,
                &sps,
                &gains,
                &schedule,
                &plan.all(),
                SignalTerms::ALL,
                Noise::On(&mut rng),
            )?;
            let sep = separate(&rx, &detector.combiner, plan.t1())?;
            Some(SeparationRecord {
                energy_d: sep.y_d.energy(),
                energy_o: sep.y_o.energy(),
                energy_n: sep.y_n.energy(),
            })
        } else {
            None
        };

        let model = BranchModel {
            detector: &detector,
            schedule: &schedule,
        };
        let clutter_d = clutter_model(cfg, Branch::D, &ue, &scenario.ris);
        let clutter_o = clutter_model(cfg, Branch::O, &ue, &scenario.ris);
        let clutter_n = clutter_model(cfg, Branch::N, &ue, &scenario.ris);
        let sets = generate_measurements(
            &model,
            &detections,
            &[(Branch::D, &clutter_d), (Branch::O, &clutter_o), (Branch::N, &clutter_n)],
            cfg.measurement.noise_scale,
            &mut rng,
        );
        let z_r = merge_double_bounce(&sets.d, &sets.o, cfg.measurement.t_mg);

        post_r.predict(fcfg);
        post_n.predict(fcfg);
        let dp_at = |post: &PmbPosterior, branch: Branch| -> Vec<f64> {
            post.bernoullis
                .iter()
                .map(|b| {
                    detector
                        .evaluate(&b.mean, &profiles)
                        .map(|d| d.dp(branch))
                        .unwrap_or(0.0)
                })
                .collect()
        };
        let dps_r = dp_at(&post_r, Branch::R);
        let dps_n = dp_at(&post_n, Branch::N);
        let ctx_r = UpdateContext {
            ue: &ue,
            ris: &scenario.ris,
            branch: Branch::R,
            clutter_intensity: 2.0 * clutter_d.intensity(),
            cfg: fcfg,
        };
        let ctx_n = UpdateContext {
            branch: Branch::N,
            clutter_intensity: clutter_n.intensity(),
            ..ctx_r
        };
        let (next_r, rep_r, _) = pmb_update(&post_r, &z_r, &dps_r, &ctx_r);
        let (next_n, rep_n, _) = pmb_update(&post_n, &sets.n, &dps_n, &ctx_n);
        post_r = next_r;
        post_n = next_n;

        let h = &mut out.health;
        h.epochs += 1;
        h.check(&post_r);
        h.check(&post_n);
        h.max_row_error = h.max_row_error.max(rep_r.association_row_error).max(rep_n.association_row_error);
        h.dropped_hypotheses += rep_r.hypotheses_dropped + rep_n.hypotheses_dropped;

        let fused = if precoder == T1Precoder::Directional {
            let w = fcfg.fusion_weight_ris;
            match gci_fuse(&post_r, &post_n, w, 1.0 - w, cfg.measurement.t_mg) {
                Ok(f) => {
                    h.check(&f);
                    Some(f)
                }
                Err(_) => {
                    h.fusion_errors += 1;
                    None
                }
            }
        } else {
            None
        };

        for (series, label) in gospa_series.iter_mut().zip(&labels) {
            let post = match label {
                FilterLabel::Ris | FilterLabel::RisRandom => Some(&post_r),
                FilterLabel::Nris => Some(&post_n),
                FilterLabel::Fusion => fused.as_ref(),
            };
            let est = post.map(|p| p.estimates(fcfg.extraction_threshold)).unwrap_or_default();
            series.push(gospa(&est, &sps, &gcfg)?.total);
            if let Some(p) = post {
                out.posteriors.push(PosteriorRecord {
                    run,
                    epoch: k,
                    filter: *label,
                    posterior: p.snapshot(),
                });
            }
        }

        out.epochs.push(EpochRecord {
            run,
            precoder,
            epoch: k,
            ue: [state.position.x, state.position.y, state.position.z],
            paths: detections
                .iter()
                .enumerate()
                .map(|(i, d)| PathRecord {
                    sp: i,
                    dp_d: d.dp_d,
                    dp_o: d.dp_o,
                    dp_n: d.dp_n,
                })
                .collect(),
            ris_measurements: z_r.iter().map(MeasurementRecord::from).collect(),
            direct_measurements: sets.n.iter().map(MeasurementRecord::from).collect(),
            singular: sets.singular,
            separation,
        });
    }
    out.gospa = labels.into_iter().zip(gospa_series).collect();
    Ok(out)
}

/// Mean and standard deviation of one filter at one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GospaRow {
    pub epoch: usize,
    pub filter: FilterLabel,
    pub mean: f64,
    pub std: f64,
}

/// Aggregated campaign result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub runs: usize,
    pub seed: u64,
    pub gospa: Vec<GospaRow>,
    pub health: FilterHealth,
}

impl CampaignSummary {
    pub fn mean_at(&self, filter: FilterLabel, epoch: usize) -> Option<f64> {
        self.gospa
            .iter()
            .find(|r| r.filter == filter && r.epoch == epoch)
            .map(|r| r.mean)
    }
}

/// Runs `f` over `0..n` on the configured worker pool, preserving order.
pub fn parallel_map<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let workers = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0);
    let run = || (0..n).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("{WORKERS_ENV}: {e}")))?
            .install(run),
        None => run(),
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_error)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Runs the Monte Carlo campaign and writes its files into `out`, when given.
pub fn run_campaign(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<CampaignSummary> {
    let scenario = cfg.scenario()?;
    let passes = parallel_map(cfg.runs, |run| {
        let direct = run_pass(cfg, &scenario, run, T1Precoder::Directional)?;
        let random = run_pass(cfg, &scenario, run, T1Precoder::Random)?;
        Ok((direct, random))
    })?;

    let mut health = FilterHealth::default();
    let mut rows = Vec::new();
    for label in FilterLabel::ALL {
        let series: Vec<&Vec<f64>> = passes
            .iter()
            .flat_map(|(a, b)| a.gospa.iter().chain(&b.gospa))
            .filter(|(l, _)| *l == label)
            .map(|(_, s)| s)
            .collect();
        for epoch in 0..=cfg.epochs {
            let values: Vec<f64> = series.iter().map(|s| s[epoch]).collect();
            let (mean, std) = mean_std(&values);
            rows.push(GospaRow { epoch, filter: label, mean, std });
        }
    }
    for (a, b) in &passes {
        health.absorb(&a.health);
        health.absorb(&b.health);
    }
    let summary = CampaignSummary {
        runs: cfg.runs,
        seed: cfg.seed,
        gospa: rows,
        health,
    };

    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut w = csv_writer(&dir.join("gospa_timeseries.csv"))?;
        w.write_record(["epoch", "filter", "mean", "std"]).map_err(csv_error)?;
        for r in &summary.gospa {
            w.write_record([
                r.epoch.to_string(),
                r.filter.name().to_string(),
                r.mean.to_string(),
                r.std.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        write_jsonl(
            &dir.join("detections.jsonl"),
            passes.iter().flat_map(|(a, b)| a.epochs.iter().chain(&b.epochs)),
        )?;
        write_jsonl(
            &dir.join("posteriors.jsonl"),
            passes.iter().flat_map(|(a, _)| a.posteriors.iter()),
        )?;
        let table = dp_ccdf(cfg)?;
        write_ccdf(&dir.join("dp_ccdf.csv"), &table)?;
        let mut f = File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(&mut f, &summary)?;
        f.write_all(b"\n")?;
    }
    Ok(summary)
}

/// Scenario of the detection-probability map: its own transmit power,
/// transmission count and RIS position, with the RIS facing `+x`.
pub fn dp_map_scenario(cfg: &ScenarioConfig) -> Result<(Scenario, UeState)> {
    let m = &cfg.dp_map;
    let mut c = cfg.clone();
    c.signal.transmissions = m.transmissions;
    c.signal.tx_power_dbm = m.tx_power_dbm;
    c.geometry.ris_position = m.ris_position;
    let scenario = c.scenario()?;
    let ue = UeState::new(Vector3::from(m.ue_position), m.ue_heading, 0.0)?;
    Ok((scenario, ue))
}

/// Detection-probability maps for a random and a directional RIS over the
/// configured grid.
pub fn dp_maps(cfg: &ScenarioConfig) -> Result<(Vec<DpMapPoint>, Vec<DpMapPoint>)> {
    let m = &cfg.dp_map;
    dp_maps_at(cfg, &grid(m.x_range, m.y_range, m.z, m.resolution))
}

/// Detection probabilities at `points` in the map scenario. The random map
/// uses one seeded random schedule; the directional map focuses the RIS on
/// the fixed point `signal.ris_focus`.
pub fn dp_maps_at(cfg: &ScenarioConfig, points: &[Vector3<f64>]) -> Result<(Vec<DpMapPoint>, Vec<DpMapPoint>)> {
    let (scenario, ue) = dp_map_scenario(cfg)?;
    let pose = ue.pose();
    let mut rng = stream_rng(cfg.seed, u64::MAX);
    let theta_0 = channel_params(&pose, &scenario.ris, None)?.aod_ue;
    let plan = build_precoder_plan(
        theta_0,
        &scenario.ue_array,
        scenario.wavelength,
        scenario.transmissions,
        cfg.signal.split_ratio,
        cfg.signal.t1_precoder,
        &mut rng,
    )?;
    let schedule = make_schedule(&scenario, &pose, RisProfileMode::Random, &Vector3::zeros(), &mut rng)?;
    let focus = Vector3::from(cfg.signal.ris_focus);
    let focused = make_schedule(&scenario, &pose, RisProfileMode::Directional, &focus, &mut rng)?;
    let detector = EpochDetector::new(&scenario, pose, &plan, DetectionConfig::new(cfg.measurement.p_fa)?)?;
    let random = dp_map(&detector, points, &ProfileChoice::Schedule(&schedule));
    let direct = dp_map(&detector, points, &ProfileChoice::Schedule(&focused));
    Ok((random, direct))
}

pub fn write_dp_map(path: &Path, points: &[DpMapPoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["x", "y", "dp_D", "dp_O", "dp_N"]).map_err(csv_error)?;
    for p in points {
        w.write_record([p.x, p.y, p.dp_d, p.dp_o, p.dp_n].map(|v| v.to_string()))
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Link-budget sweeps `(scenario, profile mode, rows)` over `ρ ∈ [0.05, 0.95]`.
pub fn link_budgets(cfg: &ScenarioConfig) -> Result<Vec<(LinkScenario, RisProfileMode, Vec<LinkBudgetRow>)>> {
    let scenario = cfg.scenario()?;
    let rhos: Vec<f64> = (1..=19).map(|i| i as f64 * 0.05).collect();
    let mut out = Vec::new();
    for ls in [LinkScenario::SpBetween, LinkScenario::UeBetween] {
        for mode in [RisProfileMode::Directional, RisProfileMode::Random] {
            let rows = link_budget_sweep(
                ls,
                mode,
                30.0,
                &rhos,
                scenario.ris_array.len(),
                scenario.wavelength,
                scenario.rcs,
            )?;
            out.push((ls, mode, rows));
        }
    }
    Ok(out)
}

pub fn link_budget_file_name(ls: LinkScenario, mode: RisProfileMode) -> String {
    let s = match ls {
        LinkScenario::SpBetween => "a",
        LinkScenario::UeBetween => "b",
    };
    let m = match mode {
        RisProfileMode::Directional => "direct",
        RisProfileMode::Random => "random",
    };
    format!("link_budget_{s}_{m}.csv")
}

pub fn write_link_budgets(dir: &Path, cfg: &ScenarioConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (ls, mode, rows) in link_budgets(cfg)? {
        let mut w = csv_writer(&dir.join(link_budget_file_name(ls, mode)))?;
        w.write_record(["rho", "PL_R", "PL_D", "PL_N"]).map_err(csv_error)?;
        for r in rows {
            w.write_record([r.rho, r.pl_r_db, r.pl_d_db, r.pl_n_db].map(|v| v.to_string()))
                .map_err(csv_error)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Detection-probability samples over scatterers and epochs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DpSamples {
    pub d_random: Vec<f64>,
    pub o_random: Vec<f64>,
    pub n: Vec<f64>,
    pub d_directional: Vec<f64>,
    pub o_directional: Vec<f64>,
}

/// Samples the branch detection probabilities of the campaign scatterers
/// along the trajectory, with a random RIS schedule and with the RIS
/// focused on each scatterer.
pub fn dp_samples(cfg: &ScenarioConfig) -> Result<DpSamples> {
    let scenario = cfg.scenario()?;
    let det_cfg = DetectionConfig::new(cfg.measurement.p_fa)?;
    let track = ue_track(cfg)?;
    let per_run = parallel_map(cfg.runs, |run| {
        let mut rng = stream_rng(cfg.seed, run as u64 * STREAMS_PER_RUN + 3);
        let sps = draw_scatterers(cfg, run);
        let mut s = DpSamples::default();
        for state in track.iter().skip(1) {
            let ue = state.pose();
            let theta_0 = channel_params(&ue, &scenario.ris, None)?.aod_ue;
            let plan = build_precoder_plan(
                theta_0,
                &scenario.ue_array,
                scenario.wavelength,
                scenario.transmissions,
                cfg.signal.split_ratio,
                cfg.signal.t1_precoder,
                &mut rng,
            )?;
            let schedule = make_schedule(&scenario, &ue, RisProfileMode::Random, &Vector3::zeros(), &mut rng)?;
            let detector = EpochDetector::new(&scenario, ue, &plan, det_cfg)?;
            for sp in &sps {
                let r = detector.evaluate(sp, &ProfileChoice::Schedule(&schedule))?;
                let d = detector.evaluate(sp, &ProfileChoice::FocusOnPoint)?;
                s.d_random.push(r.dp_d);
                s.o_random.push(r.dp_o);
                s.n.push(r.dp_n);
                s.d_directional.push(d.dp_d);
                s.o_directional.push(d.dp_o);
            }
        }
        Ok(s)
    })?;
    let mut all = DpSamples::default();
    for s in per_run {
        all.d_random.extend(s.d_random);
        all.o_random.extend(s.o_random);
        all.n.extend(s.n);
        all.d_directional.extend(s.d_directional);
        all.o_directional.extend(s.o_directional);
    }
    Ok(all)
}

/// CCDF table: thresholds and one column per sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdfTable {
    pub thresholds: Vec<f64>,
    pub d_random: Vec<f64>,
    pub o_random: Vec<f64>,
    pub n: Vec<f64>,
    pub d_directional: Vec<f64>,
    pub o_directional: Vec<f64>,
}

pub fn ccdf_table(samples: &DpSamples) -> CcdfTable {
    let thresholds: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    CcdfTable {
        d_random: ccdf(&samples.d_random, &thresholds),
        o_random: ccdf(&samples.o_random, &thresholds),
        n: ccdf(&samples.n, &thresholds),
        d_directional: ccdf(&samples.d_directional, &thresholds),
        o_directional: ccdf(&samples.o_directional, &thresholds),
        thresholds,
    }
}

pub fn dp_ccdf(cfg: &ScenarioConfig) -> Result<CcdfTable> {
    Ok(ccdf_table(&dp_samples(cfg)?))
}

pub fn write_ccdf(path: &Path, t: &CcdfTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["threshold", "D_random", "O_random", "N", "D_directional", "O_directional"])
        .map_err(csv_error)?;
    for i in 0..t.thresholds.len() {
        w.write_record(
            [
                t.thresholds[i],
                t.d_random[i],
                t.o_random[i],
                t.n[i],
                t.d_directional[i],
                t.o_directional[i],
            ]
            .map(|v| v.to_string()),
        )
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            runs: 1,
            epochs: 2,
            synthesize_signals: false,
            ..Default::default()
        }
    }

    #[test]
    fn scatterers_stay_in_box() {
        let cfg = small();
        let sps = draw_scatterers(&cfg, 3);
        assert_eq!(sps.len(), 8);
        let r = sp_region(&cfg);
        assert!(sps.iter().all(|p| r.contains(p)));
        assert_ne!(sps, draw_scatterers(&cfg, 4));
        assert_eq!(sps, draw_scatterers(&cfg, 3));
    }

    #[test]
    fn pass_starts_at_full_cardinality_penalty() {
        let cfg = small();
        let s = cfg.scenario().unwrap();
        let out = run_pass(&cfg, &s, 0, T1Precoder::Directional).unwrap();
        assert_eq!(out.gospa.len(), 3);
        for (_, series) in &out.gospa {
            assert_eq!(series.len(), 3);
            assert_eq!(series[0], 40.0);
        }
        assert_eq!(out.epochs.len(), 2);
        assert_eq!(out.health.non_spd, 0);
    }

    #[test]
    fn link_budget_files_cover_both_scenarios() {
        let lb = link_budgets(&ScenarioConfig::default()).unwrap();
        assert_eq!(lb.len(), 4);
        assert!(lb.iter().all(|(_, _, rows)| rows.len() == 19));
    }
}
