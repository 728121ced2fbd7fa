use super::cw::LinePicker;
use super::stream::PhotonStream;
use super::{check_capacity, stage_rng, streams, SimConfig, SimError};
use crate::photophysics::{pulse_pump_rate, MoleculeModel};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

/// Periodic pump pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    /// Repetition rate, MHz.
    pub rep_rate: f64,
    /// Pulse length, ns.
    pub pulse_duration: f64,
    /// Excitation probability of a ground-state molecule per pulse.
    pub p_exc: f64,
    pub n_pulses: u64,
    /// Allow decay and re-excitation inside one pulse.
    #[serde(default)]
    pub reexcitation: bool,
}

impl PulseTrain {
    /// Pulse period, ns.
    pub fn period_ns(&self) -> f64 {
        1e3 / self.rep_rate
    }

    /// Pulse period in ps, as used for correlation peak positions.
    pub fn period_ps(&self) -> f64 {
        1e6 / self.rep_rate
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.rep_rate > 0.0 && self.rep_rate.is_finite()) {
            return Err(SimError::Invalid(format!(
                "rep_rate must be > 0, got {}",
                self.rep_rate
            )));
        }
        if !(self.pulse_duration > 0.0 && self.pulse_duration < self.period_ns()) {
            return Err(SimError::Invalid(format!(
                "pulse_duration must lie in (0, {}) ns, got {}",
                self.period_ns(),
                self.pulse_duration
            )));
        }
        if !(0.0..=1.0).contains(&self.p_exc) {
            return Err(SimError::Invalid(format!(
                "p_exc must lie in [0,1], got {}",
                self.p_exc
            )));
        }
        Ok(())
    }
}

/// Photon-number statistics per pulse of a pulsed run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PulseStats {
    pub n_pulses: u64,
    /// `yield_histogram[k]` = number of pulses that produced k photons.
    pub yield_histogram: Vec<u64>,
}

impl PulseStats {
    pub fn pulses_with_at_least(&self, k: usize) -> u64 {
        self.yield_histogram.iter().skip(k).sum()
    }

    pub fn multi_photon_fraction(&self) -> f64 {
        self.pulses_with_at_least(2) as f64 / self.n_pulses as f64
    }
}

/// Pulsed emission. See [`simulate_pulsed_stream_with_stats`].
pub fn simulate_pulsed_stream(
    molecule: &MoleculeModel,
    train: &PulseTrain,
    cfg: &SimConfig,
) -> Result<PhotonStream, SimError> {
    simulate_pulsed_stream_with_stats(molecule, train, cfg).map(|(s, _)| s)
}

/// Pulsed emission with per-pulse photon statistics.
///
/// Pulses start at t = 0 and repeat every period. A molecule still excited
/// when a pulse arrives is not pumped by it. Without re-excitation a pulse
/// excites with probability `p_exc` at its arrival time. With re-excitation
/// the pulse pumps at the constant rate matching `p_exc` for its whole
/// length, so a decay inside the pulse can be followed by another
/// excitation. Photons later than the acquisition end are counted in the
/// statistics but not stored in the stream.
pub fn simulate_pulsed_stream_with_stats(
    molecule: &MoleculeModel,
    train: &PulseTrain,
    cfg: &SimConfig,
) -> Result<(PhotonStream, PulseStats), SimError> {
    molecule.validate()?;
    cfg.validate()?;
    train.validate()?;
    let duration_ps = cfg.duration_ps();
    let period = train.period_ns();
    let end_ns = duration_ps as f64 * 1e-3;
    if train.n_pulses as f64 * period > end_ns * (1.0 + 1e-12) {
        return Err(SimError::Invalid(format!(
            "{} pulses at {} MHz do not fit in {} s",
            train.n_pulses, train.rep_rate, cfg.duration
        )));
    }
    check_capacity(train.n_pulses as f64 * train.p_exc)?;

    let mut times = Vec::with_capacity((train.n_pulses as f64 * train.p_exc) as usize + 16);
    let mut labels = Vec::with_capacity(times.capacity());
    let mut yields = vec![0u64; 3];
    let mut rng = stage_rng(cfg.seed, streams::PULSED, 0);
    let decay = Exp::new(1.0 / molecule.tau_f).map_err(|e| SimError::Invalid(e.to_string()))?;
    let picker = LinePicker::new(&molecule.lines);
    let pump = pulse_pump_rate(train.p_exc, train.pulse_duration);
    let instant_pump = pump.is_infinite();
    let pump_exp = if instant_pump || pump == 0.0 {
        None
    } else {
        Some(Exp::new(pump).unwrap())
    };

    let mut busy_until = f64::NEG_INFINITY;
    let mut emissions: Vec<f64> = Vec::with_capacity(4);
    for k in 0..train.n_pulses {
        let t0 = k as f64 * period;
        emissions.clear();
        if t0 >= busy_until && train.p_exc > 0.0 {
            if !train.reexcitation {
                if rng.random::<f64>() < train.p_exc {
                    emissions.push(t0 + decay.sample(&mut rng));
                }
            } else {
                // first excitation time inside the pulse, truncated exponential
                let first = if instant_pump {
                    Some(0.0)
                } else if rng.random::<f64>() < train.p_exc {
                    let u: f64 = rng.random();
                    Some((-(-u * train.p_exc).ln_1p() / pump).min(train.pulse_duration))
                } else {
                    None
                };
                if let Some(mut t_exc) = first {
                    loop {
                        let t_em = t_exc + decay.sample(&mut rng);
                        emissions.push(t0 + t_em);
                        if t_em >= train.pulse_duration {
                            break;
                        }
                        let next = match &pump_exp {
                            None => t_em,
                            Some(d) => t_em + d.sample(&mut rng),
                        };
                        if next >= train.pulse_duration {
                            break;
                        }
                        t_exc = next;
                    }
                }
            }
        }
        if let Some(&last) = emissions.last() {
            busy_until = last;
        }
        let n = emissions.len();
        if n >= yields.len() {
            yields.resize(n + 1, 0);
        }
        yields[n] += 1;
        for &t in &emissions {
            if t < end_ns {
                times.push(cfg.quantize(t * 1e3));
                labels.push(picker.pick(&mut rng));
            }
        }
    }

    let stream = PhotonStream::from_parts(
        times,
        labels,
        duration_ps,
        cfg.time_resolution,
        molecule.lines.clone(),
    )?;
    Ok((
        stream,
        PulseStats {
            n_pulses: train.n_pulses,
            yield_histogram: yields,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train(p_exc: f64, n: u64, reexcitation: bool) -> PulseTrain {
        PulseTrain {
            rep_rate: 16.0,
            pulse_duration: 300e-6,
            p_exc,
            n_pulses: n,
            reexcitation,
        }
    }

    #[test]
    fn zero_excitation_is_empty() {
        let m = MoleculeModel::default();
        let cfg = SimConfig::new(1, 1e-3);
        let s = simulate_pulsed_stream(&m, &train(0.0, 16_000, false), &cfg).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn never_two_photons_without_reexcitation() {
        let m = MoleculeModel::default();
        let cfg = SimConfig::new(5, 0.01);
        let (s, stats) =
            simulate_pulsed_stream_with_stats(&m, &train(1.0, 160_000, false), &cfg).unwrap();
        assert_eq!(stats.pulses_with_at_least(2), 0);
        assert_eq!(stats.yield_histogram.iter().sum::<u64>(), 160_000);
        assert!(s.len() > 150_000);
    }

    #[test]
    fn photons_follow_their_pulse() {
        let m = MoleculeModel::default();
        let cfg = SimConfig::new(11, 1e-3);
        let s = simulate_pulsed_stream(&m, &train(0.5, 16_000, false), &cfg).unwrap();
        // delay after the preceding pulse is mostly within a few lifetimes
        let period_ps = 62_500u64;
        let late = s
            .times()
            .iter()
            .filter(|&&t| t % period_ps > 30_000)
            .count();
        assert!((late as f64) < 0.01 * s.len() as f64);
    }

    #[test]
    fn rejects_bad_trains() {
        let m = MoleculeModel::default();
        let cfg = SimConfig::new(1, 1e-3);
        let mut t = train(0.5, 10, false);
        t.pulse_duration = 70.0;
        assert!(simulate_pulsed_stream(&m, &t, &cfg).is_err());
        let t = train(1.5, 10, false);
        assert!(simulate_pulsed_stream(&m, &t, &cfg).is_err());
        let t = train(0.5, 1_000_000, false);
        assert!(simulate_pulsed_stream(&m, &t, &cfg).is_err());
    }
}
