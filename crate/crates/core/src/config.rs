//! Scenario configuration.
//!
//! The configuration is a TOML document; every field has a default so an
//! empty file reproduces the reference setup. [`ScenarioConfig::scenario`]
//! resolves it into the physical constants used by the simulation.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::channel::UpaConfig;
use crate::error::{Error, Result};
use crate::geometry::{Pose, UeState, SPEED_OF_LIGHT};

/// How the RIS phase profiles are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RisProfileMode {
    /// Independent uniform phases per element and transmission pair.
    Random,
    /// Phase-conjugate profile focusing the RIS-UE link onto a point.
    Directional,
}

/// Precoders used in the transmissions directed at the RIS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum T1Precoder {
    Directional,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub ris_az: usize,
    pub ris_el: usize,
    pub ue_az: usize,
    pub ue_el: usize,
    /// Element spacing in wavelengths.
    pub ris_spacing: f64,
    pub ue_spacing: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            ris_az: 50,
            ris_el: 50,
            ue_az: 4,
            ue_el: 4,
            ris_spacing: 0.25,
            ue_spacing: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub transmissions: usize,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub subcarriers: usize,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    /// Ratio T1/T2 of RIS-directed to RIS-nulled transmissions.
    pub split_ratio: f64,
    pub ris_profile_mode: RisProfileMode,
    /// Focus point of the directional RIS profile.
    pub ris_focus: [f64; 3],
    pub t1_precoder: T1Precoder,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            transmissions: 40,
            carrier_hz: 30e9,
            bandwidth_hz: 200e6,
            subcarrier_spacing_hz: 120e3,
            subcarriers: 1600,
            tx_power_dbm: 37.0,
            noise_psd_dbm_hz: -166.0,
            split_ratio: 1.0,
            ris_profile_mode: RisProfileMode::Random,
            ris_focus: [50.0, 15.0, 0.0],
            t1_precoder: T1Precoder::Directional,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub ris_position: [f64; 3],
    pub ris_normal: [f64; 3],
    pub sp_box_min: [f64; 3],
    pub sp_box_max: [f64; 3],
    pub num_sps: usize,
    pub ue_position: [f64; 3],
    pub ue_heading: f64,
    pub ue_speed: f64,
    /// rad/s
    pub turn_rate: f64,
    /// Epoch interval, seconds.
    pub dt: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            ris_position: [30.0, 0.0, 20.0],
            ris_normal: [1.0, 0.0, 0.0],
            sp_box_min: [30.0, -30.0, 2.0],
            sp_box_max: [50.0, 50.0, 10.0],
            num_sps: 8,
            ue_position: [50.0, -30.0, 0.0],
            ue_heading: PI / 2.0,
            ue_speed: 11.11,
            turn_rate: 0.05,
            dt: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub rcs_m2: f64,
    pub q0: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            rcs_m2: 50.0,
            q0: 0.285,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    pub p_fa: f64,
    /// Gating threshold for the double-bounce merge and for fusion matching.
    pub t_mg: f64,
    /// Expected clutter count per branch per epoch.
    pub clutter_mean: f64,
    /// Standard deviations reported with clutter measurements.
    pub clutter_angle_std: f64,
    pub clutter_delay_std: f64,
    /// Multiplier on the measurement noise draw (0 gives noiseless parameters).
    pub noise_scale: f64,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            p_fa: 1e-3,
            t_mg: 36.0,
            clutter_mean: 1.0,
            clutter_angle_std: 0.05,
            clutter_delay_std: 1e-9,
            noise_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub survival: f64,
    pub birth_weight: f64,
    pub initial_undetected_weight: f64,
    /// Detection probability applied to the undetected intensity.
    pub intensity_detection: f64,
    pub prune_threshold: f64,
    pub merge_threshold: f64,
    /// Squared Mahalanobis gate for measurement-to-Bernoulli likelihoods.
    pub gate: f64,
    pub exact_hypothesis_limit: usize,
    pub bp_tolerance: f64,
    pub bp_max_iterations: usize,
    pub extraction_threshold: f64,
    pub fusion_weight_ris: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            survival: 0.99,
            birth_weight: 0.1,
            initial_undetected_weight: 10.0,
            intensity_detection: 0.95,
            prune_threshold: 1e-3,
            merge_threshold: 0.1,
            gate: 50.0,
            exact_hypothesis_limit: 10_000,
            bp_tolerance: 1e-6,
            bp_max_iterations: 200,
            extraction_threshold: 0.5,
            fusion_weight_ris: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GospaSettings {
    pub order: f64,
    pub cutoff: f64,
    pub alpha: f64,
}

impl Default for GospaSettings {
    fn default() -> Self {
        Self {
            order: 2.0,
            cutoff: 20.0,
            alpha: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpMapConfig {
    pub tx_power_dbm: f64,
    pub transmissions: usize,
    pub ue_position: [f64; 3],
    pub ue_heading: f64,
    pub ris_position: [f64; 3],
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z: f64,
    pub resolution: f64,
}

impl Default for DpMapConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 20.0,
            transmissions: 20,
            ue_position: [50.0, 0.0, 0.0],
            ue_heading: PI,
            ris_position: [30.0, 0.0, 0.0],
            x_range: [30.0, 60.0],
            y_range: [-30.0, 30.0],
            z: 0.0,
            resolution: 1.0,
        }
    }
}

/// Complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub runs: usize,
    pub epochs: usize,
    /// Synthesize and separate the full received signal every epoch.
    pub synthesize_signals: bool,
    pub arrays: ArrayConfig,
    pub signal: SignalConfig,
    pub geometry: GeometryConfig,
    pub channel: ChannelConfig,
    pub measurement: MeasurementConfig,
    pub filter: FilterConfig,
    pub gospa: GospaSettings,
    pub dp_map: DpMapConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            runs: 100,
            epochs: 15,
            synthesize_signals: true,
            arrays: ArrayConfig::default(),
            signal: SignalConfig::default(),
            geometry: GeometryConfig::default(),
            channel: ChannelConfig::default(),
            measurement: MeasurementConfig::default(),
            filter: FilterConfig::default(),
            gospa: GospaSettings::default(),
            dp_map: DpMapConfig::default(),
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]` (or at top level when `section` is empty).
fn locate_key(text: &str, dotted: &str) -> Option<usize> {
    let (section, key) = match dotted.rsplit_once('.') {
        Some((s, k)) => (s, k),
        None => ("", dotted),
    };
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            let k = k.trim();
            let full = if current.is_empty() {
                k.to_string()
            } else {
                format!("{current}.{k}")
            };
            if (current == section && k == key) || full == dotted {
                return Some(i + 1);
            }
        }
    }
    None
}

fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config {
        path: None,
        line: None,
        message: format!("empty override key `{key}`"),
    })?;
    let mut cursor = table;
    for p in parts {
        let entry = cursor
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry.as_table_mut().ok_or_else(|| Error::Config {
            path: None,
            line: None,
            message: format!("override `{key}`: `{p}` is not a table"),
        })?;
    }
    cursor.insert(leaf.to_string(), value);
    Ok(())
}

impl ScenarioConfig {
    /// Parses a TOML document and applies `key=value` overrides.
    pub fn from_toml(text: &str, path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let path_buf = path.map(Path::to_path_buf);
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
            path: path_buf.clone(),
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        // Typed parse of the file alone keeps spans for type errors.
        if let Err(e) = toml::from_str::<ScenarioConfig>(text) {
            if let Some(span) = e.span() {
                return Err(Error::Config {
                    path: path_buf,
                    line: Some(line_of_offset(text, span.start)),
                    message: e.message().to_string(),
                });
            }
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
                path: None,
                line: None,
                message: format!("override `{o}` is not of the form key=value"),
            })?;
            apply_override(&mut table, k.trim(), parse_override_value(v.trim()))?;
        }
        let cfg: ScenarioConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| {
                    // Value-level errors carry no span; recover the line from the key path.
                    let msg = e.message().to_string();
                    let line = e
                        .span()
                        .map(|s| line_of_offset(text, s.start))
                        .or_else(|| {
                            msg.split('`')
                                .nth(1)
                                .and_then(|k| locate_key(text, k))
                        });
                    Error::Config {
                        path: path_buf.clone(),
                        line,
                        message: msg,
                    }
                })?;
        cfg.validate().map_err(|(key, message)| {
            let overridden = overrides
                .iter()
                .any(|o| o.split_once('=').is_some_and(|(k, _)| k.trim() == key));
            if overridden {
                Error::Config {
                    path: None,
                    line: None,
                    message: format!("{key} (override): {message}"),
                }
            } else {
                Error::Config {
                    path: path_buf,
                    line: locate_key(text, key),
                    message: format!("{key}: {message}"),
                }
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, Some(path), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Returns the offending key and a message for the first invalid field.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let a = &self.arrays;
        let s = &self.signal;
        let g = &self.geometry;
        let m = &self.measurement;
        let f = &self.filter;
        let checks: [(bool, &'static str, &str); 24] = [
            (a.ris_az >= 1 && a.ris_el >= 1, "arrays.ris_az", "RIS array needs at least one element"),
            (a.ue_az * a.ue_el >= 2, "arrays.ue_az", "UE array needs at least two elements"),
            (a.ris_spacing > 0.0 && a.ue_spacing > 0.0, "arrays.ris_spacing", "spacings must be positive"),
            (s.transmissions.is_multiple_of(2) && s.transmissions >= 4, "signal.transmissions", "must be even and at least 4"),
            (s.carrier_hz > 0.0, "signal.carrier_hz", "must be positive"),
            (s.subcarrier_spacing_hz > 0.0, "signal.subcarrier_spacing_hz", "must be positive"),
            (s.subcarriers >= 1, "signal.subcarriers", "must be at least 1"),
            (s.tx_power_dbm.is_finite(), "signal.tx_power_dbm", "must be finite"),
            (s.noise_psd_dbm_hz.is_finite(), "signal.noise_psd_dbm_hz", "must be finite"),
            (s.split_ratio > 0.0 && s.split_ratio.is_finite(), "signal.split_ratio", "must be positive"),
            (g.ue_speed >= 0.0, "geometry.ue_speed", "must be non-negative"),
            (g.dt > 0.0, "geometry.dt", "must be positive"),
            ((0..3).all(|i| g.sp_box_min[i] < g.sp_box_max[i]), "geometry.sp_box_max", "box max must exceed box min"),
            (m.p_fa > 0.0 && m.p_fa < 1.0, "measurement.p_fa", "must lie in (0, 1)"),
            (m.t_mg > 0.0, "measurement.t_mg", "must be positive"),
            (m.clutter_mean >= 0.0, "measurement.clutter_mean", "must be non-negative"),
            (m.noise_scale >= 0.0, "measurement.noise_scale", "must be non-negative"),
            (f.survival > 0.0 && f.survival <= 1.0, "filter.survival", "must lie in (0, 1]"),
            (f.intensity_detection >= 0.0 && f.intensity_detection <= 1.0, "filter.intensity_detection", "must lie in [0, 1]"),
            (f.birth_weight >= 0.0 && f.initial_undetected_weight >= 0.0, "filter.birth_weight", "must be non-negative"),
            (f.fusion_weight_ris >= 0.0 && f.fusion_weight_ris <= 1.0, "filter.fusion_weight_ris", "must lie in [0, 1]"),
            (self.gospa.order >= 1.0, "gospa.order", "must be at least 1"),
            (self.gospa.cutoff > 0.0, "gospa.cutoff", "must be positive"),
            (self.dp_map.transmissions.is_multiple_of(2) && self.dp_map.transmissions >= 4 && self.dp_map.resolution > 0.0, "dp_map.transmissions", "must be even and at least 4, with positive resolution"),
        ];
        for (ok, key, msg) in checks {
            if !ok {
                return Err((key, msg.to_string()));
            }
        }
        Ok(())
    }

    /// Non-fatal consistency warnings.
    pub fn warnings(&self) -> Vec<String> {
        let s = &self.signal;
        let occupied = s.subcarriers as f64 * s.subcarrier_spacing_hz;
        let mut out = Vec::new();
        if (occupied - s.bandwidth_hz).abs() > 1e-6 * s.bandwidth_hz {
            out.push(format!(
                "bandwidth {:.4e} Hz differs from subcarriers x spacing = {:.4e} Hz",
                s.bandwidth_hz, occupied
            ));
        }
        out
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let wavelength = SPEED_OF_LIGHT / self.signal.carrier_hz;
        let ris = Pose::facing(
            Vector3::from(self.geometry.ris_position),
            Vector3::from(self.geometry.ris_normal),
        )?;
        Ok(Scenario {
            ris_array: UpaConfig::new(
                self.arrays.ris_az,
                self.arrays.ris_el,
                self.arrays.ris_spacing * wavelength,
            )?,
            ue_array: UpaConfig::new(
                self.arrays.ue_az,
                self.arrays.ue_el,
                self.arrays.ue_spacing * wavelength,
            )?,
            ris,
            wavelength,
            carrier_hz: self.signal.carrier_hz,
            transmissions: self.signal.transmissions,
            subcarriers: self.signal.subcarriers,
            subcarrier_spacing: self.signal.subcarrier_spacing_hz,
            energy_per_subcarrier: dbm_to_watts(self.signal.tx_power_dbm)
                / (self.signal.subcarriers as f64 * self.signal.subcarrier_spacing_hz),
            noise_psd: dbm_to_watts(self.signal.noise_psd_dbm_hz),
            rcs: self.channel.rcs_m2,
            q0: self.channel.q0,
        })
    }

    pub fn initial_ue(&self) -> Result<UeState> {
        UeState::new(
            Vector3::from(self.geometry.ue_position),
            self.geometry.ue_heading,
            self.geometry.ue_speed,
        )
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Resolved physical scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub ris_array: UpaConfig,
    pub ue_array: UpaConfig,
    pub ris: Pose,
    pub wavelength: f64,
    pub carrier_hz: f64,
    /// Total transmissions T per epoch (even).
    pub transmissions: usize,
    pub subcarriers: usize,
    pub subcarrier_spacing: f64,
    /// E_s, joules.
    pub energy_per_subcarrier: f64,
    /// N_0, W/Hz.
    pub noise_psd: f64,
    pub rcs: f64,
    pub q0: f64,
}

impl Scenario {
    pub fn half_transmissions(&self) -> usize {
        self.transmissions / 2
    }

    /// Copy with a different transmit power (dBm).
    pub fn with_tx_power_dbm(&self, dbm: f64) -> Self {
        let mut s = self.clone();
        s.energy_per_subcarrier =
            dbm_to_watts(dbm) / (self.subcarriers as f64 * self.subcarrier_spacing);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_setup() {
        let cfg = ScenarioConfig::from_toml("", None, &[]).unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        let s = cfg.scenario().unwrap();
        assert!((s.wavelength - 0.01).abs() < 1e-15);
        assert_eq!(s.ris_array.len(), 2500);
        assert_eq!(s.ue_array.len(), 16);
        assert!((s.noise_psd - 10f64.powf(-19.6)).abs() < 1e-30);
        // 37 dBm over 1600 x 120 kHz
        assert!((s.energy_per_subcarrier - 5.011872336272722 / 192e6).abs() < 1e-20);
    }

    #[test]
    fn table_values_warn_about_bandwidth() {
        let w = ScenarioConfig::default().warnings();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn validation_reports_line() {
        let text = "seed = 3\n\n[signal]\ncarrier_hz = 3e10\ntransmissions = 41\n";
        let err = ScenarioConfig::from_toml(text, None, &[]).unwrap_err();
        match err {
            Error::Config { line, message, .. } => {
                assert_eq!(line, Some(5));
                assert!(message.contains("signal.transmissions"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = "seed = 3\nruns = = 4\n";
        match ScenarioConfig::from_toml(text, None, &[]).unwrap_err() {
            Error::Config { line, .. } => assert_eq!(line, Some(2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = "[filter]\nsurvivl = 0.9\n";
        assert!(ScenarioConfig::from_toml(text, None, &[]).is_err());
    }

    #[test]
    fn overrides_apply() {
        let cfg = ScenarioConfig::from_toml(
            "",
            None,
            &[
                "signal.transmissions=20".into(),
                "signal.ris_profile_mode=directional".into(),
                "runs=3".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.signal.transmissions, 20);
        assert_eq!(cfg.signal.ris_profile_mode, RisProfileMode::Directional);
        assert_eq!(cfg.runs, 3);
    }

    #[test]
    fn invalid_override_names_the_override() {
        let text = "seed = 2\n\n[signal]\ntransmissions = 40\n";
        let err = ScenarioConfig::from_toml(text, None, &["signal.transmissions=7".into()])
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("signal.transmissions (override)"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml(&cfg.to_toml(), None, &[]).unwrap();
        assert_eq!(back, cfg);
    }
}
