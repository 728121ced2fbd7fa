use super::stream::{PhotonStream, TagLabel};
use super::{check_capacity, stage_rng, streams, SimConfig, SimError, MAX_STREAM_TAGS};
use crate::photophysics::{
    pump_rate_from_power, steady_state_emission_rate, MoleculeModel, SpectralLine,
};
use rand::Rng;
use rand_distr::{Distribution, Exp};

/// Cumulative line weights for drawing the emitting line of each photon.
pub(crate) struct LinePicker {
    cumulative: Vec<f64>,
    labels: Vec<TagLabel>,
}

impl LinePicker {
    pub(crate) fn new(lines: &[SpectralLine]) -> Self {
        let mut acc = 0.0;
        let cumulative = lines
            .iter()
            .map(|l| {
                acc += l.weight;
                acc
            })
            .collect();
        let labels = lines
            .iter()
            .enumerate()
            .map(|(i, l)| TagLabel {
                origin: l.kind.into(),
                line: Some(i as u8),
            })
            .collect();
        LinePicker { cumulative, labels }
    }

    #[inline]
    pub(crate) fn pick<R: Rng>(&self, rng: &mut R) -> TagLabel {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let i = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.labels.len() - 1);
        self.labels[i]
    }
}

/// Continuous-wave emission: alternating exponential ground dwell (rate
/// `k_exc`) and excited dwell (mean τ_f); every decay emits one photon whose
/// line is drawn from the molecule's branching weights.
pub fn simulate_cw_stream(
    molecule: &MoleculeModel,
    power: f64,
    cfg: &SimConfig,
) -> Result<PhotonStream, SimError> {
    molecule.validate()?;
    cfg.validate()?;
    let k_exc = pump_rate_from_power(power, molecule)?;
    let duration_ps = cfg.duration_ps();
    let mut out_times = Vec::new();
    let mut out_labels = Vec::new();
    if k_exc > 0.0 {
        let expected = steady_state_emission_rate(k_exc, molecule.tau_f) * cfg.duration * 1e9;
        check_capacity(expected)?;
        out_times.reserve(expected as usize + 16);
        out_labels.reserve(expected as usize + 16);

        let mut rng = stage_rng(cfg.seed, streams::CW, 0);
        let ground = Exp::new(k_exc).map_err(|e| SimError::Invalid(e.to_string()))?;
        let excited =
            Exp::new(1.0 / molecule.tau_f).map_err(|e| SimError::Invalid(e.to_string()))?;
        let picker = LinePicker::new(&molecule.lines);
        let end_ns = duration_ps as f64 * 1e-3;
        let mut t = 0.0_f64;
        loop {
            t += ground.sample(&mut rng);
            t += excited.sample(&mut rng);
            if t >= end_ns {
                break;
            }
            if out_times.len() >= MAX_STREAM_TAGS {
                return Err(SimError::Capacity {
                    requested: out_times.len() as u64 + 1,
                    capacity: MAX_STREAM_TAGS as u64,
                });
            }
            out_times.push(cfg.quantize(t * 1e3));
            out_labels.push(picker.pick(&mut rng));
        }
    }
    PhotonStream::from_parts(
        out_times,
        out_labels,
        duration_ps,
        cfg.time_resolution,
        molecule.lines.clone(),
    )
}
