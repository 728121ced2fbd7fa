use super::{add_background, apply_detector, apply_spectral_filter, simulate_cw_stream};
use super::{DetectorModel, PhotonStream, SimConfig, SimError, SpectralWindow};
use crate::hbt_correlator::beamsplit;
use crate::photophysics::MoleculeModel;
use serde::{Deserialize, Serialize};

/// Filter, background and detector applied to an emitted stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionChain {
    pub window: SpectralWindow,
    /// Background reaching the detector after the filter, counts/s.
    pub background_rate: f64,
    pub detector: DetectorModel,
}

impl DetectionChain {
    /// Single detector.
    pub fn detect(
        &self,
        emitted: &PhotonStream,
        cfg: &SimConfig,
    ) -> Result<PhotonStream, SimError> {
        let filtered = apply_spectral_filter(emitted, &self.window)?;
        let with_bg = add_background(&filtered, self.background_rate, cfg)?;
        apply_detector(&with_bg, &self.detector, cfg)
    }

    /// Hanbury-Brown–Twiss arm pair: the filtered light plus background is
    /// split on a beamsplitter, each output seen by its own detector
    /// (channels 0 and 1).
    pub fn detect_hbt(
        &self,
        emitted: &PhotonStream,
        reflectance: f64,
        cfg: &SimConfig,
    ) -> Result<(PhotonStream, PhotonStream), SimError> {
        let filtered = apply_spectral_filter(emitted, &self.window)?;
        let with_bg = add_background(&filtered, self.background_rate, cfg)?;
        let (a, b) = beamsplit(&with_bg, reflectance, cfg.seed)
            .map_err(|e| SimError::Invalid(e.to_string()))?;
        Ok((
            apply_detector(&a, &self.detector, cfg)?,
            apply_detector(&b, &self.detector, cfg)?,
        ))
    }
}

/// Detected cw count rate (counts/s) measured over `cfg.duration`, simulated
/// in chunks of at most `chunk` seconds so long acquisitions never hold
/// the full emitted stream in memory. Returns (counts, seconds).
pub fn measure_count_rate(
    molecule: &MoleculeModel,
    power: f64,
    chain: &DetectionChain,
    cfg: &SimConfig,
    chunk: f64,
) -> Result<(u64, f64), SimError> {
    cfg.validate()?;
    if !(chunk > 0.0) {
        return Err(SimError::Invalid(format!("chunk must be > 0, got {chunk}")));
    }
    let n_chunks = (cfg.duration / chunk).ceil().max(1.0) as u64;
    let mut counts = 0u64;
    let mut remaining = cfg.duration;
    for i in 0..n_chunks {
        let length = remaining.min(chunk);
        remaining -= length;
        let sub = SimConfig {
            duration: length,
            ..cfg.derive(i)
        };
        let emitted = simulate_cw_stream(molecule, power, &sub)?;
        counts += chain.detect(&emitted, &sub)?.len() as u64;
    }
    Ok((counts, cfg.duration))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_rate_matches_steady_state() {
        let m = MoleculeModel::default();
        let chain = DetectionChain {
            window: SpectralWindow::BandPass {
                center: 785.0,
                half_width: 2.0,
            },
            background_rate: 0.0,
            detector: DetectorModel {
                efficiency: 0.1,
                ..DetectorModel::ideal()
            },
        };
        let cfg = SimConfig::new(3, 0.02);
        let (n, t) = measure_count_rate(&m, 3.5, &chain, &cfg, 0.003).unwrap();
        let expected = 0.5 / 4.5e-9 * 0.33 * 0.1 * t;
        assert!((n as f64 - expected).abs() < 3.0 * expected.sqrt());
    }

    #[test]
    fn hbt_arms_partition_detected_light() {
        let m = MoleculeModel::default();
        let chain = DetectionChain {
            window: SpectralWindow::AllPass,
            background_rate: 1e6,
            detector: DetectorModel::ideal(),
        };
        let cfg = SimConfig::new(5, 1e-3);
        let emitted = simulate_cw_stream(&m, 1.0, &cfg).unwrap();
        let (a, b) = chain.detect_hbt(&emitted, 0.5, &cfg).unwrap();
        assert_eq!(a.channel(), 0);
        assert_eq!(b.channel(), 1);
        let total = add_background(&emitted, 1e6, &cfg).unwrap().len();
        assert_eq!(a.len() + b.len(), total);
    }
}
