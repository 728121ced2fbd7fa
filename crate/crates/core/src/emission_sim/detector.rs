use super::stream::{merge_sorted, PhotonStream, TagLabel};
use super::{check_capacity, stage_rng, streams, SimConfig, SimError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

/// Single-photon avalanche detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Detection probability per incident photon.
    pub efficiency: f64,
    /// Non-paralyzable dead time, ns.
    pub dead_time: f64,
    /// Gaussian timing jitter, ps (1 sigma).
    pub jitter_sigma: f64,
    /// Dark count rate, counts/s.
    pub dark_rate: f64,
}

impl DetectorModel {
    pub fn ideal() -> Self {
        DetectorModel {
            efficiency: 1.0,
            dead_time: 0.0,
            jitter_sigma: 0.0,
            dark_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(SimError::Invalid(format!(
                "efficiency must lie in [0,1], got {}",
                self.efficiency
            )));
        }
        if !(self.dead_time >= 0.0 && self.dead_time.is_finite()) {
            return Err(SimError::Invalid(format!(
                "dead_time must be >= 0, got {}",
                self.dead_time
            )));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(SimError::Invalid(format!(
                "jitter_sigma must be >= 0, got {}",
                self.jitter_sigma
            )));
        }
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(SimError::Invalid(format!(
                "dark_rate must be >= 0, got {}",
                self.dark_rate
            )));
        }
        Ok(())
    }
}

/// Homogeneous Poisson arrival times in [0, duration_ps).
fn poisson_times(rng: &mut ChaCha8Rng, rate: f64, cfg: &SimConfig) -> Result<Vec<u64>, SimError> {
    let duration_ps = cfg.duration_ps();
    if rate == 0.0 {
        return Ok(Vec::new());
    }
    let expected = rate * cfg.duration;
    check_capacity(expected)?;
    let gaps = Exp::new(rate * 1e-12).map_err(|e| SimError::Invalid(e.to_string()))?;
    let end = duration_ps as f64;
    let mut times = Vec::with_capacity(expected as usize + 16);
    let mut t = 0.0;
    loop {
        t += gaps.sample(rng);
        if t >= end {
            break;
        }
        times.push(cfg.quantize(t));
    }
    Ok(times)
}

/// Merges an independent Poisson stream (rate in counts/s) tagged
/// `BACKGROUND` into `stream`.
pub fn add_background(
    stream: &PhotonStream,
    rate: f64,
    cfg: &SimConfig,
) -> Result<PhotonStream, SimError> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(SimError::Invalid(format!(
            "background rate must be >= 0, got {rate}"
        )));
    }
    cfg.validate()?;
    if rate == 0.0 {
        return Ok(stream.clone());
    }
    let mut rng = stage_rng(cfg.seed, streams::BACKGROUND, stream.channel() as u64);
    let bg = poisson_times(&mut rng, rate, cfg)?;
    let bg_labels = vec![TagLabel::BACKGROUND; bg.len()];
    let (times, labels) = merge_sorted(stream.times(), stream.labels(), &bg, &bg_labels);
    Ok(PhotonStream::from_sorted(times, labels, stream))
}

/// Detection chain of one detector, in order: independent thinning by
/// efficiency, Gaussian jitter per tag, merged dark counts, then
/// non-paralyzable dead time measured from the last kept tag.
pub fn apply_detector(
    stream: &PhotonStream,
    det: &DetectorModel,
    cfg: &SimConfig,
) -> Result<PhotonStream, SimError> {
    det.validate()?;
    cfg.validate()?;
    let mut rng = stage_rng(cfg.seed, streams::DETECTOR, stream.channel() as u64);
    let last_tick = stream.duration_ps().saturating_sub(1);

    let mut times = Vec::with_capacity((stream.len() as f64 * det.efficiency) as usize + 16);
    let mut labels = Vec::with_capacity(times.capacity());
    for (t, label) in stream.iter() {
        if det.efficiency >= 1.0 || rng.random::<f64>() < det.efficiency {
            times.push(t);
            labels.push(label);
        }
    }

    if det.jitter_sigma > 0.0 {
        let normal =
            Normal::new(0.0, det.jitter_sigma).map_err(|e| SimError::Invalid(e.to_string()))?;
        let mut pairs: Vec<(u64, TagLabel)> = times
            .iter()
            .zip(&labels)
            .map(|(&t, &l)| {
                let shifted = (t as f64 + normal.sample(&mut rng))
                    .round()
                    .clamp(0.0, last_tick as f64);
                (cfg.quantize(shifted), l)
            })
            .collect();
        pairs.sort_by_key(|p| p.0);
        times.clear();
        labels.clear();
        for (t, l) in pairs {
            times.push(t);
            labels.push(l);
        }
    }

    if det.dark_rate > 0.0 {
        let dark = poisson_times(&mut rng, det.dark_rate, cfg)?;
        let dark_labels = vec![TagLabel::DARK; dark.len()];
        let merged = merge_sorted(&times, &labels, &dark, &dark_labels);
        times = merged.0;
        labels = merged.1;
    }

    if det.dead_time > 0.0 {
        let dead_ps = (det.dead_time * 1e3).ceil() as u64;
        let mut kept = 0;
        let mut last: Option<u64> = None;
        for i in 0..times.len() {
            let t = times[i];
            if last.is_none_or(|l| t - l >= dead_ps) {
                times[kept] = t;
                labels[kept] = labels[i];
                kept += 1;
                last = Some(t);
            }
        }
        times.truncate(kept);
        labels.truncate(kept);
    }

    Ok(PhotonStream::from_sorted(times, labels, stream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission_sim::{simulate_cw_stream, Origin};
    use crate::photophysics::MoleculeModel;

    fn stream(seed: u64) -> PhotonStream {
        simulate_cw_stream(&MoleculeModel::default(), 1.0, &SimConfig::new(seed, 5e-3)).unwrap()
    }

    #[test]
    fn zero_background_is_identity() {
        let s = stream(1);
        assert_eq!(
            add_background(&s, 0.0, &SimConfig::new(2, 5e-3)).unwrap(),
            s
        );
    }

    #[test]
    fn background_count_is_poisson() {
        let s = stream(1);
        let cfg = SimConfig::new(3, 5e-3);
        let out = add_background(&s, 2e6, &cfg).unwrap();
        let n_bg = out.count_origin(Origin::Background) as f64;
        let mean = 2e6 * 5e-3;
        assert!((n_bg - mean).abs() < 3.0 * mean.sqrt());
        assert_eq!(out.len() - s.len(), n_bg as usize);
        assert!(out.times().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn ideal_detector_is_identity() {
        let s = stream(4);
        let out = apply_detector(&s, &DetectorModel::ideal(), &SimConfig::new(5, 5e-3)).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn efficiency_thins_binomially() {
        let s = stream(6);
        let det = DetectorModel {
            efficiency: 0.1,
            ..DetectorModel::ideal()
        };
        let out = apply_detector(&s, &det, &SimConfig::new(7, 5e-3)).unwrap();
        let n = s.len() as f64;
        let sigma = (n * 0.1 * 0.9).sqrt();
        assert!((out.len() as f64 - 0.1 * n).abs() < 3.0 * sigma);
    }

    #[test]
    fn dead_time_gap_is_exact() {
        let s = stream(8);
        let det = DetectorModel {
            efficiency: 1.0,
            dead_time: 50.0,
            jitter_sigma: 300.0,
            dark_rate: 1e5,
        };
        let out = apply_detector(&s, &det, &SimConfig::new(9, 5e-3)).unwrap();
        assert!(out.min_gap().unwrap() >= 50_000);
        assert!(out.len() > 1000);
    }

    #[test]
    fn detector_without_jitter_keeps_order() {
        let s = stream(10);
        let det = DetectorModel {
            efficiency: 0.5,
            dead_time: 20.0,
            jitter_sigma: 0.0,
            dark_rate: 0.0,
        };
        let out = apply_detector(&s, &det, &SimConfig::new(11, 5e-3)).unwrap();
        // output is a subsequence of the input
        let mut it = s.iter();
        for tag in out.iter() {
            assert!(it.any(|x| x == tag));
        }
    }

    #[test]
    fn channels_get_independent_randomness() {
        let s = stream(12);
        let det = DetectorModel {
            efficiency: 0.5,
            ..DetectorModel::ideal()
        };
        let cfg = SimConfig::new(13, 5e-3);
        let a = apply_detector(&s, &det, &cfg).unwrap();
        let b = apply_detector(&s.clone().with_channel(1), &det, &cfg).unwrap();
        assert_ne!(a.times(), b.times());
    }
}
