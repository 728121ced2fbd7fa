//! Declarative experiment configs (TOML) and their validation.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use zplsim::emission_sim::{DetectorModel, SpectralWindow};
use zplsim::photophysics::MoleculeModel;
use zplsim::sil_optics::{Emitter, SilSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    CwG2,
    PulsedG2,
    SaturationSweep,
    ExcitationScan,
    ConfocalScan,
    Spectrum,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::CwG2 => "cw_g2",
            Kind::PulsedG2 => "pulsed_g2",
            Kind::SaturationSweep => "saturation_sweep",
            Kind::ExcitationScan => "excitation_scan",
            Kind::ConfocalScan => "confocal_scan",
            Kind::Spectrum => "spectrum",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub molecule: MoleculeBlock,
    pub detector: Option<DetectorModel>,
    pub filter: Option<SpectralWindow>,
    pub background: Option<BackgroundBlock>,
    pub cw: Option<CwBlock>,
    pub pulsed: Option<PulsedBlock>,
    pub histogram: Option<HistogramBlock>,
    pub saturation_sweep: Option<SweepBlock>,
    pub excitation_scan: Option<ExcitationScanBlock>,
    pub sil: Option<SilSystem>,
    pub scan: Option<ScanBlock>,
    pub spectrum: Option<SpectrumBlock>,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoleculeBlock {
    /// ns
    pub tau_f: f64,
    /// mW
    pub p_sat: f64,
}

impl Default for MoleculeBlock {
    fn default() -> Self {
        MoleculeBlock {
            tau_f: 4.5,
            p_sat: 3.5,
        }
    }
}

impl MoleculeBlock {
    pub fn model(&self) -> MoleculeModel {
        MoleculeModel {
            p_sat: self.p_sat,
            ..MoleculeModel::dbt_anthracene(self.tau_f)
        }
    }
}

/// Either an absolute rate (counts/s after the filter) or a ratio to the
/// filtered signal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundBlock {
    pub rate: Option<f64>,
    pub signal_to_background: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwBlock {
    /// P/P_sat
    pub saturation: f64,
    /// s
    pub duration: f64,
    /// Simulation chunk, s.
    #[serde(default = "default_chunk")]
    pub chunk: f64,
    #[serde(default = "half")]
    pub reflectance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulsedBlock {
    /// MHz
    pub rep_rate: f64,
    /// ns
    pub pulse_duration: f64,
    pub p_exc: f64,
    pub n_pulses: u64,
    #[serde(default)]
    pub reexcitation: bool,
    /// Peak integration window, ps.
    pub window_ps: f64,
    #[serde(default = "default_lateral_peaks")]
    pub lateral_peaks: usize,
    #[serde(default = "default_pulses_per_chunk")]
    pub pulses_per_chunk: u64,
    #[serde(default = "half")]
    pub reflectance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    Full,
    StartStop,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramBlock {
    pub mode: CorrelationMode,
    pub bin_width_ps: u64,
    pub tau_max_ps: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// P/P_sat values.
    pub saturations: Vec<f64>,
    /// Detected counts aimed for at each point.
    pub counts_per_point: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationScanBlock {
    /// On-resonance P/P_sat.
    pub saturation: f64,
    /// MHz
    pub detuning_min: f64,
    /// MHz
    pub detuning_max: f64,
    /// MHz
    pub step: f64,
    /// s per point
    pub dwell: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanBlock {
    /// µm, square
    pub extent_um: f64,
    /// nm
    pub pixel_size: f64,
    /// counts/pixel
    pub background: f64,
    /// ms/pixel
    pub dwell: f64,
    #[serde(default)]
    pub emitters: Vec<Emitter>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumBlock {
    pub saturation: f64,
    /// s
    pub duration: f64,
    /// nm
    pub lo_nm: f64,
    /// nm
    pub hi_nm: f64,
    /// nm
    pub bin_nm: f64,
}

/// Named range `center ± tol` checked by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub name: String,
    pub center: f64,
    pub tol: f64,
}

fn default_chunk() -> f64 {
    0.05
}
fn half() -> f64 {
    0.5
}
fn default_lateral_peaks() -> usize {
    4
}
fn default_pulses_per_chunk() -> u64 {
    1_000_000
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

/// All problems found in a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationErrors(pub Vec<FieldError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid experiment config:")?;
        for e in &self.0 {
            writeln!(f, "  {}: {}", e.field, e.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

struct Collector(Vec<FieldError>);

impl Collector {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(FieldError {
            field: field.into(),
            message: message.into(),
        });
    }

    fn positive(&mut self, field: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.push(field, format!("must be > 0, got {v}"));
        }
    }

    fn fraction(&mut self, field: &str, v: f64) {
        if !(0.0..=1.0).contains(&v) {
            self.push(field, format!("must lie in [0, 1], got {v}"));
        }
    }

    fn require<'a, T>(&mut self, field: &str, block: &'a Option<T>) -> Option<&'a T> {
        if block.is_none() {
            self.push(field, "block is required for this experiment kind");
        }
        block.as_ref()
    }

    fn check<E: fmt::Display>(&mut self, field: &str, r: Result<(), E>) {
        if let Err(e) = r {
            self.push(field, e.to_string());
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ValidationErrors> {
        toml::from_str(text).map_err(|e| {
            ValidationErrors(vec![FieldError {
                field: "<config>".into(),
                message: e.message().to_string(),
            }])
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated configs carry a seed")
    }

    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut c = Collector(Vec::new());
        if self.seed.is_none() {
            c.push("seed", "is required (no clock-based seeding)");
        }
        c.positive("molecule.tau_f", self.molecule.tau_f);
        c.positive("molecule.p_sat", self.molecule.p_sat);
        if let Some(d) = &self.detector {
            c.check("detector", d.validate());
        }
        if let Some(f) = &self.filter {
            c.check("filter", f.validate());
        }
        if let Some(b) = &self.background {
            match (b.rate, b.signal_to_background) {
                (Some(r), None) if !(r >= 0.0 && r.is_finite()) => {
                    c.push("background.rate", format!("must be >= 0, got {r}"))
                }
                (None, Some(sb)) => c.positive("background.signal_to_background", sb),
                (Some(_), None) => {}
                _ => c.push(
                    "background",
                    "set exactly one of `rate` and `signal_to_background`",
                ),
            }
        }
        for (i, e) in self.expect.iter().enumerate() {
            if e.name.is_empty() {
                c.push(&format!("expect[{i}].name"), "must not be empty");
            }
            if !(e.tol >= 0.0 && e.center.is_finite()) {
                c.push(
                    &format!("expect[{i}].tol"),
                    format!("must be >= 0, got {}", e.tol),
                );
            }
        }

        match self.kind {
            Kind::CwG2 => {
                c.require("detector", &self.detector);
                c.require("filter", &self.filter);
                if let Some(cw) = c.require("cw", &self.cw) {
                    c.positive("cw.saturation", cw.saturation);
                    c.positive("cw.duration", cw.duration);
                    c.positive("cw.chunk", cw.chunk);
                    c.fraction("cw.reflectance", cw.reflectance);
                }
                self.check_histogram(&mut c);
            }
            Kind::PulsedG2 => {
                c.require("detector", &self.detector);
                c.require("filter", &self.filter);
                if let Some(p) = c.require("pulsed", &self.pulsed) {
                    c.positive("pulsed.rep_rate", p.rep_rate);
                    c.positive("pulsed.pulse_duration", p.pulse_duration);
                    c.fraction("pulsed.p_exc", p.p_exc);
                    c.fraction("pulsed.reflectance", p.reflectance);
                    if p.n_pulses == 0 {
                        c.push("pulsed.n_pulses", "must be > 0");
                    }
                    if p.pulses_per_chunk == 0 {
                        c.push("pulsed.pulses_per_chunk", "must be > 0");
                    }
                    if p.lateral_peaks == 0 {
                        c.push("pulsed.lateral_peaks", "must be > 0");
                    }
                    let period_ps = 1e6 / p.rep_rate;
                    if !(p.window_ps > 0.0 && p.window_ps < period_ps) {
                        c.push(
                            "pulsed.window_ps",
                            format!("must lie in (0, {period_ps}), got {}", p.window_ps),
                        );
                    }
                }
                self.check_histogram(&mut c);
            }
            Kind::SaturationSweep => {
                c.require("detector", &self.detector);
                c.require("filter", &self.filter);
                if let Some(s) = c.require("saturation_sweep", &self.saturation_sweep) {
                    if s.saturations.is_empty() {
                        c.push(
                            "saturation_sweep.saturations",
                            "at least one point is required",
                        );
                    }
                    for (i, &v) in s.saturations.iter().enumerate() {
                        c.positive(&format!("saturation_sweep.saturations[{i}]"), v);
                    }
                    c.positive("saturation_sweep.counts_per_point", s.counts_per_point);
                }
            }
            Kind::ExcitationScan => {
                c.require("detector", &self.detector);
                c.require("filter", &self.filter);
                if let Some(s) = c.require("excitation_scan", &self.excitation_scan) {
                    c.positive("excitation_scan.saturation", s.saturation);
                    c.positive("excitation_scan.step", s.step);
                    c.positive("excitation_scan.dwell", s.dwell);
                    if !(s.detuning_max > s.detuning_min) {
                        c.push(
                            "excitation_scan.detuning_max",
                            "must exceed excitation_scan.detuning_min",
                        );
                    }
                }
            }
            Kind::ConfocalScan => {
                if let Some(sil) = c.require("sil", &self.sil) {
                    c.check("sil", sil.validate());
                }
                if let Some(s) = c.require("scan", &self.scan) {
                    c.positive("scan.extent_um", s.extent_um);
                    c.positive("scan.pixel_size", s.pixel_size);
                    c.positive("scan.dwell", s.dwell);
                    if !(s.background >= 0.0) {
                        c.push("scan.background", "must be >= 0");
                    }
                    for (i, e) in s.emitters.iter().enumerate() {
                        if !(e.brightness >= 0.0) {
                            c.push(&format!("scan.emitters[{i}].brightness"), "must be >= 0");
                        }
                    }
                }
            }
            Kind::Spectrum => {
                c.require("detector", &self.detector);
                if let Some(s) = c.require("spectrum", &self.spectrum) {
                    c.positive("spectrum.saturation", s.saturation);
                    c.positive("spectrum.duration", s.duration);
                    c.positive("spectrum.bin_nm", s.bin_nm);
                    if !(s.hi_nm > s.lo_nm) {
                        c.push("spectrum.hi_nm", "must exceed spectrum.lo_nm");
                    }
                }
            }
        }
        if c.0.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors(c.0))
        }
    }

    fn check_histogram(&self, c: &mut Collector) {
        if let Some(h) = c.require("histogram", &self.histogram) {
            if h.bin_width_ps == 0 {
                c.push("histogram.bin_width_ps", "must be > 0");
            }
            if h.tau_max_ps <= 0 {
                c.push("histogram.tau_max_ps", "must be > 0");
            }
        }
    }

    /// Background rate (counts/s) for a filtered signal rate.
    pub fn background_rate(&self, signal: f64) -> f64 {
        match &self.background {
            Some(BackgroundBlock {
                rate: Some(r),
                signal_to_background: None,
            }) => *r,
            Some(BackgroundBlock {
                rate: None,
                signal_to_background: Some(sb),
            }) => signal / sb,
            _ => 0.0,
        }
    }
}

pub const PRESETS: [(&str, &str); 6] = [
    ("cw_g2", include_str!("../presets/cw_g2.toml")),
    ("pulsed_g2", include_str!("../presets/pulsed_g2.toml")),
    (
        "saturation_sweep",
        include_str!("../presets/saturation_sweep.toml"),
    ),
    (
        "excitation_scan",
        include_str!("../presets/excitation_scan.toml"),
    ),
    (
        "confocal_scan",
        include_str!("../presets/confocal_scan.toml"),
    ),
    ("spectrum", include_str!("../presets/spectrum.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for (name, text) in PRESETS {
            let cfg = ExperimentConfig::from_toml(text).unwrap();
            assert_eq!(cfg.kind.name(), name);
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!cfg.expect.is_empty(), "{name} has no expectations");
        }
    }

    #[test]
    fn empty_sweep_names_the_field() {
        let mut cfg = ExperimentConfig::from_toml(preset("saturation_sweep").unwrap()).unwrap();
        cfg.saturation_sweep.as_mut().unwrap().saturations.clear();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.0[0].field, "saturation_sweep.saturations");
    }

    #[test]
    fn missing_seed_and_block() {
        let cfg = ExperimentConfig::from_toml("kind = \"cw_g2\"").unwrap();
        let fields: Vec<String> = cfg
            .validate()
            .unwrap_err()
            .0
            .into_iter()
            .map(|e| e.field)
            .collect();
        for f in ["seed", "detector", "filter", "cw", "histogram"] {
            assert!(
                fields.iter().any(|g| g == f),
                "{f} not reported in {fields:?}"
            );
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("kind = \"spectrum\"\nseeed = 3").is_err());
        assert!(ExperimentConfig::from_toml("kind = \"nope\"").is_err());
    }

    #[test]
    fn toml_round_trip() {
        for (_, text) in PRESETS {
            let cfg = ExperimentConfig::from_toml(text).unwrap();
            let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(again.to_toml(), cfg.to_toml());
        }
    }

    #[test]
    fn background_forms() {
        let mut cfg = ExperimentConfig::from_toml(preset("cw_g2").unwrap()).unwrap();
        cfg.background = Some(BackgroundBlock {
            rate: Some(10.0),
            signal_to_background: Some(2.0),
        });
        assert_eq!(cfg.validate().unwrap_err().0[0].field, "background");
        cfg.background = Some(BackgroundBlock {
            rate: None,
            signal_to_background: Some(4.0),
        });
        assert_eq!(cfg.background_rate(100.0), 25.0);
    }
}
