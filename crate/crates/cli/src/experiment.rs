//! Experiment stages. Each stage reads the artifacts of the previous one
//! from the output directory and writes its own.

use crate::config::{CorrelationMode, ExperimentConfig, FieldError, Kind, ValidationErrors};
use crate::report::FitReport;
use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use zplsim::emission_sim::tagfile::{TagFile, TagRecord};
use zplsim::emission_sim::{
    measure_count_rate, simulate_cw_stream, simulate_pulsed_stream, DetectionChain, PhotonStream,
    PulseTrain, SimConfig, SpectralWindow,
};
use zplsim::estimators::{
    fit_antibunching, fit_gaussian_spot, fit_lateral_peak_decay, fit_lorentzian, fit_saturation,
    read_points_csv,
};
use zplsim::hbt_correlator::{
    full_correlation_histogram, io, peak_areas, symmetric_start_stop_histogram,
};
use zplsim::photophysics::{LineKind, MoleculeModel};
use zplsim::sil_optics::{
    diffraction_resolution, simulate_confocal_scan, EfficiencyBudget, ScanGrid,
};

pub const TAGS: &str = "tags.zplt";
pub const HISTOGRAM: &str = "g2.csv";
pub const POINTS: &str = "points.csv";
pub const IMAGE_TEXT: &str = "image.txt";
pub const IMAGE_PGM: &str = "image.pgm";
pub const BUDGET: &str = "budget.csv";
pub const SPECTRUM: &str = "spectrum.csv";
pub const LINES: &str = "lines.csv";
pub const REPORT_JSON: &str = "fit_report.json";
pub const REPORT_TEXT: &str = "fit_report.txt";

fn wrong_stage(kind: Kind, stage: &str) -> anyhow::Error {
    ValidationErrors(vec![FieldError {
        field: "kind".into(),
        message: format!("`{}` experiments have no {stage} stage", kind.name()),
    }])
    .into()
}

/// Emission rate (1/s) of the two-level cycle at saturation parameter `s`.
fn emission_rate(tau_f: f64, s: f64) -> f64 {
    1e9 / tau_f * s / (1.0 + s)
}

/// Fraction of the emission whose line passes the filter.
fn passed_weight(molecule: &MoleculeModel, window: &SpectralWindow) -> f64 {
    molecule
        .lines
        .iter()
        .filter(|l| window.passes(l.center))
        .map(|l| l.weight)
        .sum()
}

fn chain(cfg: &ExperimentConfig, signal_rate: f64) -> DetectionChain {
    DetectionChain {
        window: cfg.filter.unwrap_or(SpectralWindow::AllPass),
        background_rate: cfg.background_rate(signal_rate),
        detector: cfg.detector.expect("validated"),
    }
}

fn append_shifted(records: &mut Vec<TagRecord>, a: &PhotonStream, b: &PhotonStream, offset: u64) {
    records.extend(
        TagFile::from_streams(&[a, b])
            .records
            .into_iter()
            .map(|r| TagRecord {
                time_ps: r.time_ps + offset,
                ..r
            }),
    );
}

fn write_tags(dir: &Path, records: Vec<TagRecord>) -> Result<PathBuf> {
    let path = dir.join(TAGS);
    TagFile {
        resolution_ps: 1,
        channel_count: 2,
        records,
    }
    .save(&path)
    .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_text(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn simulate(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let seed = cfg.seed();
    let molecule = cfg.molecule.model();
    let window = cfg.filter.unwrap_or(SpectralWindow::AllPass);
    match cfg.kind {
        Kind::CwG2 => {
            let cw = cfg.cw.as_ref().expect("validated");
            let signal =
                emission_rate(molecule.tau_f, cw.saturation) * passed_weight(&molecule, &window);
            let chain = chain(cfg, signal);
            let master = SimConfig::new(seed, cw.duration);
            let n_chunks = (cw.duration / cw.chunk).ceil().max(1.0) as u64;
            let (mut records, mut offset, mut left) = (Vec::new(), 0u64, cw.duration);
            for i in 0..n_chunks {
                let sub = SimConfig {
                    duration: left.min(cw.chunk),
                    ..master.derive(i)
                };
                left -= sub.duration;
                let emitted = simulate_cw_stream(&molecule, cw.saturation * molecule.p_sat, &sub)?;
                let (a, b) = chain.detect_hbt(&emitted, cw.reflectance, &sub)?;
                append_shifted(&mut records, &a, &b, offset);
                offset += sub.duration_ps();
            }
            Ok(vec![write_tags(dir, records)?])
        }
        Kind::PulsedG2 => {
            let p = cfg.pulsed.as_ref().expect("validated");
            let signal = p.rep_rate * 1e6 * p.p_exc * passed_weight(&molecule, &window);
            let chain = chain(cfg, signal);
            let master = SimConfig::new(seed, 1.0);
            let (mut records, mut offset, mut left) = (Vec::new(), 0u64, p.n_pulses);
            let mut i = 0;
            while left > 0 {
                let train = PulseTrain {
                    rep_rate: p.rep_rate,
                    pulse_duration: p.pulse_duration,
                    p_exc: p.p_exc,
                    n_pulses: left.min(p.pulses_per_chunk),
                    reexcitation: p.reexcitation,
                };
                left -= train.n_pulses;
                let sub = SimConfig {
                    duration: train.n_pulses as f64 * train.period_ns() * 1e-9,
                    ..master.derive(i)
                };
                let emitted = simulate_pulsed_stream(&molecule, &train, &sub)?;
                let (a, b) = chain.detect_hbt(&emitted, p.reflectance, &sub)?;
                append_shifted(&mut records, &a, &b, offset);
                offset += sub.duration_ps();
                i += 1;
            }
            Ok(vec![write_tags(dir, records)?])
        }
        Kind::SaturationSweep => {
            let sweep = cfg.saturation_sweep.as_ref().expect("validated");
            let eta = cfg.detector.expect("validated").efficiency;
            let mut csv = String::from("power_mw,rate,sigma\n");
            for (i, &s) in sweep.saturations.iter().enumerate() {
                let signal = emission_rate(molecule.tau_f, s) * passed_weight(&molecule, &window);
                let chain = chain(cfg, signal);
                let expected = (signal + chain.background_rate) * eta + chain.detector.dark_rate;
                if !(expected > 0.0) {
                    bail!("saturation point {s} has no expected counts");
                }
                let sub = SimConfig {
                    duration: sweep.counts_per_point / expected,
                    ..SimConfig::new(seed, 1.0).derive(i as u64)
                };
                let power = s * molecule.p_sat;
                let (n, t) = measure_count_rate(&molecule, power, &chain, &sub, 0.01)?;
                let n = n as f64;
                csv += &format!("{power},{},{}\n", n / t, n.max(1.0).sqrt() / t);
            }
            Ok(vec![write_text(dir.join(POINTS), &csv)?])
        }
        Kind::ExcitationScan => {
            let scan = cfg.excitation_scan.as_ref().expect("validated");
            let gamma0 = zplsim::photophysics::lifetime_limited_linewidth(molecule.tau_f)?;
            let n = ((scan.detuning_max - scan.detuning_min) / scan.step).floor() as u64 + 1;
            let mut csv = String::from("detuning_mhz,rate,sigma\n");
            for i in 0..n {
                let detuning = scan.detuning_min + i as f64 * scan.step;
                let profile = 1.0 / (1.0 + (2.0 * detuning / gamma0).powi(2));
                let s = scan.saturation * profile;
                let signal = emission_rate(molecule.tau_f, s) * passed_weight(&molecule, &window);
                let sub = SimConfig {
                    duration: scan.dwell,
                    ..SimConfig::new(seed, scan.dwell).derive(i)
                };
                let (c, t) = measure_count_rate(
                    &molecule,
                    s * molecule.p_sat,
                    &chain(cfg, signal),
                    &sub,
                    scan.dwell,
                )?;
                let c = c as f64;
                csv += &format!("{detuning},{},{}\n", c / t, c.max(1.0).sqrt() / t);
            }
            Ok(vec![write_text(dir.join(POINTS), &csv)?])
        }
        Kind::ConfocalScan => scan(cfg, dir),
        Kind::Spectrum => {
            let sp = cfg.spectrum.as_ref().expect("validated");
            let signal =
                emission_rate(molecule.tau_f, sp.saturation) * passed_weight(&molecule, &window);
            let sim = SimConfig::new(seed, sp.duration);
            let emitted = simulate_cw_stream(&molecule, sp.saturation * molecule.p_sat, &sim)?;
            let detected = chain(cfg, signal).detect(&emitted, &sim)?;
            let mut counts = vec![0u64; molecule.lines.len()];
            for l in detected.labels() {
                if let Some(i) = l.line {
                    counts[i as usize] += 1;
                }
            }
            let mut lines = String::from("line,kind,center_nm,fwhm_nm,counts\n");
            for (i, (l, c)) in molecule.lines.iter().zip(&counts).enumerate() {
                let kind = match l.kind {
                    LineKind::Zpl => "zpl",
                    LineKind::RedShifted => "red_shifted",
                };
                lines += &format!("{i},{kind},{},{},{c}\n", l.center, l.fwhm_nm());
            }
            // each line's counts spread over its Lorentzian profile, bin by bin
            let n_bins = ((sp.hi_nm - sp.lo_nm) / sp.bin_nm).round() as usize;
            let mut spectrum = String::from("wavelength_nm,counts\n");
            for k in 0..n_bins {
                let (lo, hi) = (
                    sp.lo_nm + k as f64 * sp.bin_nm,
                    sp.lo_nm + (k + 1) as f64 * sp.bin_nm,
                );
                let v: f64 = molecule
                    .lines
                    .iter()
                    .zip(&counts)
                    .map(|(l, &c)| {
                        let cdf = |x: f64| {
                            (2.0 * (x - l.center) / l.fwhm_nm()).atan() / std::f64::consts::PI
                        };
                        c as f64 * (cdf(hi) - cdf(lo))
                    })
                    .sum();
                spectrum += &format!("{},{v}\n", 0.5 * (lo + hi));
            }
            Ok(vec![
                write_text(dir.join(LINES), &lines)?,
                write_text(dir.join(SPECTRUM), &spectrum)?,
            ])
        }
    }
}

pub fn correlate(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    if !matches!(cfg.kind, Kind::CwG2 | Kind::PulsedG2) {
        return Err(wrong_stage(cfg.kind, "correlate"));
    }
    let h = cfg.histogram.as_ref().expect("validated");
    let tags_path = dir.join(TAGS);
    let tags = TagFile::load(&tags_path)
        .with_context(|| format!("reading {} (run `simulate` first)", tags_path.display()))?;
    let (a, b) = (tags.channel_stream(0), tags.channel_stream(1));
    let hist = match h.mode {
        CorrelationMode::Full => full_correlation_histogram(
            a.times(),
            b.times(),
            h.bin_width_ps,
            -h.tau_max_ps,
            h.tau_max_ps,
        )?,
        CorrelationMode::StartStop => {
            symmetric_start_stop_histogram(a.times(), b.times(), h.bin_width_ps, h.tau_max_ps)?
        }
    };
    let path = dir.join(HISTOGRAM);
    io::save(&hist, &path, vec![cfg.seed()])?;
    let sidecar = io::sidecar_path(&path);
    Ok(vec![path, sidecar])
}

fn read_image(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {} (run `scan` first)", path.display()))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::parse).collect())
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    let ncols = rows.first().map_or(0, |r| r.len());
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        bail!("{} is not a rectangular matrix", path.display());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn fit(cfg: &ExperimentConfig, dir: &Path) -> Result<(FitReport, Vec<PathBuf>)> {
    let kind = cfg.kind.name();
    let report = match cfg.kind {
        Kind::CwG2 => {
            let (hist, _) = io::load(&dir.join(HISTOGRAM)).context("run `correlate` first")?;
            let s = cfg.cw.as_ref().expect("validated").saturation;
            FitReport::new(kind).with_fit(fit_antibunching(&hist, s)?)
        }
        Kind::PulsedG2 => {
            let (hist, _) = io::load(&dir.join(HISTOGRAM)).context("run `correlate` first")?;
            let p = cfg.pulsed.as_ref().expect("validated");
            let period = 1e6 / p.rep_rate;
            let table = peak_areas(&hist, period, p.window_ps, p.lateral_peaks)?;
            let mut r =
                FitReport::new(kind).with_fit(fit_lateral_peak_decay(&table, &hist, period)?);
            r.set("ratio", table.ratio, Some(table.ratio_sigma));
            r.set("central_area", table.central().area as f64, None);
            r.set("lateral_mean", table.lateral_mean, None);
            r
        }
        Kind::SaturationSweep | Kind::ExcitationScan => {
            let path = dir.join(POINTS);
            let file = File::open(&path)
                .with_context(|| format!("reading {} (run `simulate` first)", path.display()))?;
            let points = read_points_csv(BufReader::new(file))?;
            let fit = if cfg.kind == Kind::SaturationSweep {
                fit_saturation(&points)?
            } else {
                fit_lorentzian(&points)?
            };
            FitReport::new(kind).with_fit(fit)
        }
        Kind::ConfocalScan => {
            let image = read_image(&dir.join(IMAGE_TEXT))?;
            let sil = cfg.sil.expect("validated");
            let px = cfg.scan.as_ref().expect("validated").pixel_size;
            let res = diffraction_resolution(sil.wavelength, sil.n_sil)?;
            let mut all: Vec<f64> = image.iter().copied().collect();
            let background = median(&mut all).max(1.0);
            let (r0, c0) = image.iamax_full();
            let peak = image[(r0, c0)];
            // fit the brightest spot alone
            let half = (2.5 * res / px).ceil() as usize;
            let (top, left) = (r0.saturating_sub(half), c0.saturating_sub(half));
            let (bottom, right) = (
                (r0 + half + 1).min(image.nrows()),
                (c0 + half + 1).min(image.ncols()),
            );
            let crop = image
                .view((top, left), (bottom - top, right - left))
                .into_owned();
            let mut r = FitReport::new(kind).with_fit(fit_gaussian_spot(&crop, px)?);
            r.set("peak_to_background", (peak - background) / background, None);
            r.set("background", background, None);
            r
        }
        Kind::Spectrum => {
            let path = dir.join(LINES);
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading {} (run `simulate` first)", path.display()))?;
            let (mut zpl, mut total) = (0.0, 0.0);
            for line in text.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                let c: f64 = f
                    .get(4)
                    .and_then(|v| v.parse().ok())
                    .with_context(|| format!("bad row {line:?} in {}", path.display()))?;
                total += c;
                if f[1] == "zpl" {
                    zpl += c;
                }
            }
            if !(total > 0.0) {
                bail!("no detected photons in {}", path.display());
            }
            let frac = zpl / total;
            let mut r = FitReport::new(kind);
            r.set(
                "zpl_fraction",
                frac,
                Some((frac * (1.0 - frac) / total).sqrt()),
            );
            r.set("detected", total, None);
            r
        }
    };
    let json = dir.join(REPORT_JSON);
    fs::write(&json, serde_json::to_string_pretty(&report)? + "\n")?;
    let text = write_text(dir.join(REPORT_TEXT), &report.to_text())?;
    Ok((report, vec![json, text]))
}

pub fn scan(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    if cfg.kind != Kind::ConfocalScan {
        return Err(wrong_stage(cfg.kind, "scan"));
    }
    let sil = cfg.sil.expect("validated");
    let s = cfg.scan.as_ref().expect("validated");
    let grid = ScanGrid::square(s.extent_um, s.pixel_size);
    let image = simulate_confocal_scan(
        &s.emitters,
        &sil,
        s.background,
        s.dwell,
        &grid,
        &SimConfig::new(cfg.seed(), 1.0),
    )?;
    for w in &image.warnings {
        eprintln!("warning: {w}");
    }
    let text = dir.join(IMAGE_TEXT);
    image.write_text(BufWriter::new(File::create(&text)?))?;
    let pgm = dir.join(IMAGE_PGM);
    let mut out = BufWriter::new(File::create(&pgm)?);
    image.write_pgm(&mut out)?;
    out.flush()?;
    let budget = dir.join(BUDGET);
    EfficiencyBudget::default().write_csv(BufWriter::new(File::create(&budget)?))?;
    Ok(vec![text, pgm, budget])
}
