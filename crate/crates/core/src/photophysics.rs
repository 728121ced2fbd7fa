//! Closed-form photophysics of a two-level molecule pumped through a fast
//! vibronic level: saturation, cw intensity correlation, excitation
//! lineshape and the multi-photon probability of a short pump pulse.
//!
//! Units used throughout: lifetimes in ns, powers in mW, count rates in
//! counts/s, frequencies in MHz unless a field says otherwise.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Speed of light in nm·GHz.
const C_NM_GHZ: f64 = 299_792_458.0;

/// Largest vibronic-relaxation / lifetime ratio for which the
/// instantaneous-relaxation two-state model is accepted.
pub const MAX_RELAX_TO_LIFETIME: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhotophysicsError {
    #[error("domain error: {0}")]
    Domain(String),
}

fn domain<T>(msg: impl Into<String>) -> Result<T, PhotophysicsError> {
    Err(PhotophysicsError::Domain(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Zpl,
    RedShifted,
}

/// One emission line of the molecule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralLine {
    pub kind: LineKind,
    /// Center wavelength, nm.
    pub center: f64,
    /// Branching weight of total emission.
    pub weight: f64,
    /// Linewidth, GHz.
    pub fwhm: f64,
}

impl SpectralLine {
    /// Linewidth converted to the wavelength domain (nm).
    pub fn fwhm_nm(&self) -> f64 {
        self.center * self.center * self.fwhm / C_NM_GHZ
    }

    fn validate(&self) -> Result<(), PhotophysicsError> {
        if !(self.center > 0.0) {
            return domain(format!("line center must be > 0, got {}", self.center));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return domain(format!(
                "line weight must lie in [0,1], got {}",
                self.weight
            ));
        }
        if !(self.fwhm > 0.0) {
            return domain(format!("line fwhm must be > 0, got {}", self.fwhm));
        }
        Ok(())
    }
}

/// Photophysical parameters of a single molecule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeModel {
    /// Excited-state lifetime, ns.
    pub tau_f: f64,
    /// Saturation power, mW.
    pub p_sat: f64,
    /// Fraction of the emission in the zero-phonon line.
    pub zpl_fraction: f64,
    /// Intersystem-crossing probability per cycle. Stored only; the
    /// simulator runs the two-level cycle.
    pub isc_yield: f64,
    /// Vibronic relaxation time, ps.
    pub vibronic_relax: f64,
    pub lines: Vec<SpectralLine>,
}

impl Default for MoleculeModel {
    /// DBT in anthracene at 2 K.
    fn default() -> Self {
        Self::dbt_anthracene(4.5)
    }
}

impl MoleculeModel {
    /// DBT:anthracene parameters with the given lifetime: 3.5 mW saturation,
    /// 33 % ZPL at 785 nm (37 MHz), everything else lumped into one broad
    /// red-shifted line at 810 nm.
    pub fn dbt_anthracene(tau_f: f64) -> Self {
        let zpl = 0.33;
        MoleculeModel {
            tau_f,
            p_sat: 3.5,
            zpl_fraction: zpl,
            isc_yield: 0.0,
            vibronic_relax: 4.0,
            lines: vec![
                SpectralLine {
                    kind: LineKind::Zpl,
                    center: 785.0,
                    weight: zpl,
                    fwhm: 0.037,
                },
                SpectralLine {
                    kind: LineKind::RedShifted,
                    center: 810.0,
                    weight: 1.0 - zpl,
                    fwhm: 1000.0,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<(), PhotophysicsError> {
        if !(self.tau_f > 0.0) {
            return domain(format!("tau_f must be > 0, got {}", self.tau_f));
        }
        if !(self.p_sat > 0.0) {
            return domain(format!("p_sat must be > 0, got {}", self.p_sat));
        }
        if !(self.zpl_fraction > 0.0 && self.zpl_fraction <= 1.0) {
            return domain(format!(
                "zpl_fraction must lie in (0,1], got {}",
                self.zpl_fraction
            ));
        }
        if !(self.isc_yield >= 0.0) {
            return domain(format!("isc_yield must be >= 0, got {}", self.isc_yield));
        }
        if !(self.vibronic_relax > 0.0) {
            return domain(format!(
                "vibronic_relax must be > 0, got {}",
                self.vibronic_relax
            ));
        }
        // vibronic_relax is in ps, tau_f in ns
        let ratio = self.vibronic_relax * 1e-3 / self.tau_f;
        if ratio >= MAX_RELAX_TO_LIFETIME {
            return domain(format!(
                "vibronic relaxation must be much faster than the lifetime (ratio {ratio:.3e} >= {MAX_RELAX_TO_LIFETIME})"
            ));
        }
        if self.lines.is_empty() {
            return domain("molecule needs at least one spectral line");
        }
        for line in &self.lines {
            line.validate()?;
        }
        let total: f64 = self.lines.iter().map(|l| l.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return domain(format!("line weights must sum to 1, got {total}"));
        }
        let zpl: Vec<_> = self
            .lines
            .iter()
            .filter(|l| l.kind == LineKind::Zpl)
            .collect();
        if zpl.len() != 1 {
            return domain(format!(
                "exactly one ZPL line required, found {}",
                zpl.len()
            ));
        }
        if (zpl[0].weight - self.zpl_fraction).abs() > 1e-9 {
            return domain(format!(
                "zpl_fraction {} does not match ZPL line weight {}",
                self.zpl_fraction, zpl[0].weight
            ));
        }
        Ok(())
    }

    /// Saturation parameter P/P_sat.
    pub fn saturation_parameter(&self, power: f64) -> f64 {
        power / self.p_sat
    }
}

/// Saturation law parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationCurve {
    /// Saturated count rate, counts/s.
    pub s_inf: f64,
    /// Saturation power, mW.
    pub p_sat: f64,
}

impl SaturationCurve {
    pub fn new(s_inf: f64, p_sat: f64) -> Result<Self, PhotophysicsError> {
        if !(s_inf > 0.0 && p_sat > 0.0) {
            return domain(format!("s_inf and p_sat must be > 0, got {s_inf}, {p_sat}"));
        }
        Ok(Self { s_inf, p_sat })
    }
}

/// Detected count rate at `power` following S = S_inf·(P/P_sat)/(1 + P/P_sat).
pub fn saturation_signal(power: f64, curve: &SaturationCurve) -> Result<f64, PhotophysicsError> {
    if !(power >= 0.0) {
        return domain(format!("power must be >= 0, got {power}"));
    }
    if power.is_infinite() {
        return Ok(curve.s_inf);
    }
    let s = power / curve.p_sat;
    Ok(curve.s_inf * s / (1.0 + s))
}

/// Continuous-wave coincidence curve
/// `c_inf·{1 − dip·exp[−(|τ|/τ_f)(1+s)]}`.
pub fn analytic_g2_cw(
    tau: f64,
    dip: f64,
    tau_f: f64,
    s: f64,
    c_inf: f64,
) -> Result<f64, PhotophysicsError> {
    if !(0.0..=1.0).contains(&dip) {
        return domain(format!("dip must lie in [0,1], got {dip}"));
    }
    if !(tau_f > 0.0) {
        return domain(format!("tau_f must be > 0, got {tau_f}"));
    }
    if !(s >= 0.0) {
        return domain(format!("saturation parameter must be >= 0, got {s}"));
    }
    Ok(c_inf * (1.0 - dip * (-(tau.abs() / tau_f) * (1.0 + s)).exp()))
}

/// Rise time of the cw antibunching dip, τ_f/(1+s).
pub fn antibunching_rise_time(tau_f: f64, s: f64) -> f64 {
    tau_f / (1.0 + s)
}

/// Power-broadened Lorentzian excitation profile normalized to 1 on
/// resonance. The width is `fwhm0·√(1+s)`.
pub fn excitation_lineshape(detuning: f64, fwhm0: f64, s: f64) -> Result<f64, PhotophysicsError> {
    if !(fwhm0 > 0.0) {
        return domain(format!("fwhm0 must be > 0, got {fwhm0}"));
    }
    if !(s >= 0.0) {
        return domain(format!("saturation parameter must be >= 0, got {s}"));
    }
    let half = 0.5 * fwhm0 * (1.0 + s).sqrt();
    let x = detuning / half;
    Ok(1.0 / (1.0 + x * x))
}

/// Lifetime-limited homogeneous linewidth 1/(2π·τ_f) in MHz for τ_f in ns.
pub fn lifetime_limited_linewidth(tau_f: f64) -> Result<f64, PhotophysicsError> {
    if !(tau_f > 0.0) {
        return domain(format!("tau_f must be > 0, got {tau_f}"));
    }
    Ok(1e3 / (2.0 * PI * tau_f))
}

/// Ground-to-excited pump rate (1/ns) for a cw power. With k = s/τ_f the
/// two-state cycle reproduces both the saturation law and the (1+s)/τ_f
/// antibunching rise rate.
pub fn pump_rate_from_power(
    power: f64,
    molecule: &MoleculeModel,
) -> Result<f64, PhotophysicsError> {
    if !(power >= 0.0) {
        return domain(format!("power must be >= 0, got {power}"));
    }
    Ok(molecule.saturation_parameter(power) / molecule.tau_f)
}

/// Steady-state emission rate (1/ns) of the two-state cycle with pump rate
/// `k_exc` and decay rate 1/τ_f.
pub fn steady_state_emission_rate(k_exc: f64, tau_f: f64) -> f64 {
    let gamma = 1.0 / tau_f;
    k_exc * gamma / (k_exc + gamma)
}

/// Constant pump rate (1/ns) that excites a ground-state molecule with
/// probability `p_exc` over a square pulse of `pulse_duration` ns.
/// Infinite for `p_exc == 1`.
pub fn pulse_pump_rate(p_exc: f64, pulse_duration: f64) -> f64 {
    if p_exc >= 1.0 {
        f64::INFINITY
    } else {
        -(-p_exc).ln_1p() / pulse_duration
    }
}

/// ∫₀ᵀ x·e^{−a·x} dx, stable for small |a·T|.
fn moment_integral(a: f64, t: f64) -> f64 {
    let at = a * t;
    if at.abs() < 1e-4 {
        t * t * (0.5 - at / 3.0 + at * at / 8.0)
    } else {
        (-(-at).exp_m1() - at * (-at).exp()) / (a * a)
    }
}

/// Probability that one square pump pulse yields two or more photons:
/// excitation, decay and re-excitation all complete inside the pulse
/// window. The pulse pumps at the constant rate of [`pulse_pump_rate`];
/// `p_exc == 1` means instantaneous excitation.
pub fn two_photon_per_pulse_prob(
    pulse_duration: f64,
    tau_f: f64,
    p_exc: f64,
) -> Result<f64, PhotophysicsError> {
    if !(pulse_duration > 0.0) {
        return domain(format!("pulse_duration must be > 0, got {pulse_duration}"));
    }
    if !(tau_f > 0.0) {
        return domain(format!("tau_f must be > 0, got {tau_f}"));
    }
    if !(0.0..=1.0).contains(&p_exc) {
        return domain(format!("p_exc must lie in [0,1], got {p_exc}"));
    }
    if p_exc == 0.0 {
        return Ok(0.0);
    }
    let gamma = 1.0 / tau_f;
    let t = pulse_duration;
    if p_exc >= 1.0 {
        return Ok(-(-gamma * t).exp_m1());
    }
    // P(E1 + E2 + E3 <= T) with E1, E3 ~ Exp(k) and E2 ~ Exp(gamma)
    let k = pulse_pump_rate(p_exc, t);
    let kt = k * t;
    let gamma2_cdf = -(-kt).exp_m1() - kt * (-kt).exp();
    let p = gamma2_cdf - k * k * (-gamma * t).exp() * moment_integral(k - gamma, t);
    Ok(p.clamp(0.0, 1.0))
}
