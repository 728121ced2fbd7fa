//! Weierstrass solid-immersion-lens objective: aplanatic ray trace, NA and
//! resolution formulas, detection-efficiency budget and confocal scans.
//!
//! Geometry: sphere of radius `r` centered at the origin, optical axis `z`
//! pointing out of the lens. The source sits at the aplanatic point
//! `z = −r/n` on the flat face. Angles are measured from the axis.

mod scan;

pub use scan::{expected_scan, simulate_confocal_scan, Emitter, ScanGrid, ScanImage};

use crate::emission_sim::SimError;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Field of view of the objective, µm (square).
pub const FIELD_OF_VIEW_UM: f64 = 35.0;
/// Resolution prefactor of `0.61·λ/n`.
pub const RESOLUTION_FACTOR: f64 = 0.61;

#[derive(Debug, Error)]
pub enum SilError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("total internal reflection at source angle {angle} rad")]
    TotalInternalReflection { angle: f64 },
    #[error("scan extent {extent_um} µm exceeds the {FIELD_OF_VIEW_UM} µm field of view")]
    FieldOfView { extent_um: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn domain<T>(msg: String) -> Result<T, SilError> {
    Err(SilError::Domain(msg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilSystem {
    pub n_sil: f64,
    /// mm
    pub diameter: f64,
    /// NA of the collection lens behind the SIL.
    pub lens_na: f64,
    /// mm
    pub lens_focal: f64,
    /// nm
    pub wavelength: f64,
}

impl Default for SilSystem {
    /// 1 mm ZF14 glass SIL (n = 1.8) with a 4.5 mm, NA 0.55 asphere at 785 nm.
    fn default() -> Self {
        SilSystem {
            n_sil: 1.8,
            diameter: 1.0,
            lens_na: 0.55,
            lens_focal: 4.5,
            wavelength: 785.0,
        }
    }
}

impl SilSystem {
    pub fn validate(&self) -> Result<(), SilError> {
        if !(self.n_sil > 1.0 && self.n_sil.is_finite()) {
            return domain(format!("n_sil must be > 1, got {}", self.n_sil));
        }
        if !(self.lens_na > 0.0 && self.lens_na < 1.0) {
            return domain(format!("lens_na must lie in (0, 1), got {}", self.lens_na));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return domain(format!("wavelength must be > 0, got {}", self.wavelength));
        }
        if !(self.diameter > 0.0 && self.lens_focal > 0.0) {
            return domain("diameter and lens_focal must be > 0".into());
        }
        Ok(())
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    /// Distance of the aplanatic point below the sphere center, mm.
    pub fn aplanatic_depth(&self) -> f64 {
        self.radius() / self.n_sil
    }

    /// Axial thickness from the flat face to the apex, mm.
    pub fn thickness(&self) -> f64 {
        self.radius() * (1.0 + 1.0 / self.n_sil)
    }
}

/// NA of the beam leaving the SIL for a source filling the half space: `1/n`.
pub fn weierstrass_output_na(n_sil: f64) -> Result<f64, SilError> {
    if !(n_sil > 1.0 && n_sil.is_finite()) {
        return domain(format!("n_sil must be > 1, got {n_sil}"));
    }
    Ok(1.0 / n_sil)
}

/// Collection NA referred to the source: `min(n²·lens_na, n)`.
pub fn effective_na(sys: &SilSystem) -> Result<f64, SilError> {
    sys.validate()?;
    Ok((sys.n_sil * sys.n_sil * sys.lens_na).min(sys.n_sil))
}

/// `0.61·λ/n`, in the units of `wavelength`.
pub fn diffraction_resolution(wavelength: f64, n_sil: f64) -> Result<f64, SilError> {
    if !(wavelength > 0.0 && n_sil > 0.0) {
        return domain(format!(
            "wavelength and n must be > 0, got {wavelength}, {n_sil}"
        ));
    }
    Ok(RESOLUTION_FACTOR * wavelength / n_sil)
}

/// Exact trace of a meridional ray leaving the aplanatic point at
/// `source_angle` (inside the glass) through the spherical surface into air.
/// Returns the exit angle to the axis; the ray's backward extension passes
/// through the virtual image at `z = −n·r`, so `sin(exit) = sin(source)/n`.
pub fn trace_meridional_ray(sys: &SilSystem, source_angle: f64) -> Result<f64, SilError> {
    sys.validate()?;
    if !(source_angle.abs() <= std::f64::consts::FRAC_PI_2) {
        return domain(format!("|source_angle| must be <= π/2, got {source_angle}"));
    }
    let (r, n) = (sys.radius(), sys.n_sil);
    let (p0x, p0z) = (0.0, -r / n);
    let (dx, dz) = (source_angle.sin(), source_angle.cos());
    // |p0 + t·d|² = r², taking the forward root
    let b = p0x * dx + p0z * dz;
    let c = p0x * p0x + p0z * p0z - r * r;
    let t = -b + (b * b - c).sqrt();
    let (hx, hz) = (p0x + t * dx, p0z + t * dz);
    // signed incidence angle from the impact parameter of the ray about the
    // center, which stays accurate near grazing where 1 − cos² does not
    let sin_i = (p0z * dx - p0x * dz) / r;
    let sin_t = n * sin_i;
    if sin_t.abs() > 1.0 + 1e-12 {
        return Err(SilError::TotalInternalReflection {
            angle: source_angle,
        });
    }
    let normal = hx.atan2(hz);
    Ok(normal + sin_t.clamp(-1.0, 1.0).asin())
}

/// Ordered optical loss stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBudget {
    pub stages: Vec<(String, f64)>,
}

impl Default for EfficiencyBudget {
    fn default() -> Self {
        EfficiencyBudget {
            stages: vec![
                ("half-space collection".into(), 0.5),
                ("optics and filters".into(), 0.4),
                ("APD quantum efficiency".into(), 0.6),
            ],
        }
    }
}

impl EfficiencyBudget {
    pub fn new(stages: Vec<(String, f64)>) -> Result<Self, SilError> {
        let budget = EfficiencyBudget { stages };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<(), SilError> {
        for (name, t) in &self.stages {
            if !(0.0..=1.0).contains(t) {
                return domain(format!("stage `{name}` transmission {t} is outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn overall(&self) -> f64 {
        self.stages.iter().map(|s| s.1).product()
    }

    /// `stage,transmission` rows followed by the overall product.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SilError> {
        writeln!(w, "stage,transmission")?;
        for (name, t) in &self.stages {
            writeln!(w, "{name},{t}")?;
        }
        writeln!(w, "overall,{}", self.overall())?;
        Ok(())
    }
}

/// Overall detection probability of a budget.
pub fn detection_efficiency_budget(budget: &EfficiencyBudget) -> Result<f64, SilError> {
    budget.validate()?;
    Ok(budget.overall())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn output_na() {
        assert!((weierstrass_output_na(1.8).unwrap() - 0.5556).abs() < 1e-4);
        assert_eq!(weierstrass_output_na(2.0).unwrap(), 0.5);
        assert!(weierstrass_output_na(1.0).is_err());
    }

    #[test]
    fn effective_na_branches() {
        let sys = SilSystem::default();
        assert!((effective_na(&sys).unwrap() - 1.782).abs() < 1e-12);
        let half_space = SilSystem {
            lens_na: 1.0 / 1.8,
            ..sys
        };
        assert!((effective_na(&half_space).unwrap() - 1.8).abs() < 1e-12);
        let slow = SilSystem {
            lens_na: 0.3,
            ..sys
        };
        assert!((effective_na(&slow).unwrap() - 0.972).abs() < 1e-12);
        let fast = SilSystem {
            lens_na: 0.9,
            ..sys
        };
        assert_eq!(effective_na(&fast).unwrap(), 1.8);
    }

    #[test]
    fn resolution_values() {
        assert_eq!(diffraction_resolution(785.0, 1.8).unwrap().round(), 266.0);
        assert_eq!(diffraction_resolution(767.0, 1.8).unwrap().round(), 260.0);
        let a = diffraction_resolution(785.0, 1.8).unwrap();
        let b = diffraction_resolution(785.0, 3.6).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
        assert!(diffraction_resolution(-1.0, 1.8).is_err());
    }

    #[test]
    fn geometry() {
        let sys = SilSystem::default();
        assert!((sys.aplanatic_depth() - 0.5 / 1.8).abs() < 1e-15);
        assert!((sys.thickness() - 0.5 * (1.0 + 1.0 / 1.8)).abs() < 1e-15);
    }

    #[test]
    fn axial_and_grazing_rays() {
        let sys = SilSystem::default();
        assert_eq!(trace_meridional_ray(&sys, 0.0).unwrap(), 0.0);
        let grazing = trace_meridional_ray(&sys, FRAC_PI_2).unwrap();
        assert!((grazing - (1.0f64 / 1.8).asin()).abs() < 1e-9);
        assert!((grazing.sin() - weierstrass_output_na(1.8).unwrap()).abs() < 1e-9);
        assert!(trace_meridional_ray(&sys, 2.0).is_err());
    }

    #[test]
    fn aplanatic_relation_over_sweep() {
        for n in [1.3, 1.8, 2.2, 3.5] {
            let sys = SilSystem {
                n_sil: n,
                ..SilSystem::default()
            };
            for k in 0..100 {
                let a = FRAC_PI_2 * (2.0 * k as f64 / 99.0 - 1.0);
                let exit = trace_meridional_ray(&sys, a).unwrap();
                assert!((n * exit.sin() - a.sin()).abs() < 1e-9, "n {n}, angle {a}");
            }
        }
    }

    #[test]
    fn budget() {
        assert!((EfficiencyBudget::default().overall() - 0.12).abs() < 1e-12);
        let one = EfficiencyBudget::new(vec![("x".into(), 0.5)]).unwrap();
        assert_eq!(detection_efficiency_budget(&one).unwrap(), 0.5);
        let zero = EfficiencyBudget::new(vec![("a".into(), 0.7), ("b".into(), 0.0)]).unwrap();
        assert_eq!(zero.overall(), 0.0);
        assert!(EfficiencyBudget::new(vec![("bad".into(), 1.2)]).is_err());
        let mut out = Vec::new();
        EfficiencyBudget::default().write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("stage,transmission\nhalf-space collection,0.5\n"));
        assert_eq!(text.lines().count(), 5);
    }

    proptest! {
        #[test]
        fn effective_na_is_monotone_and_clamped(n in 1.01f64..4.0, a in 0.001f64..0.998, d in 0.0f64..0.001) {
            let lo = effective_na(&SilSystem { n_sil: n, lens_na: a, ..SilSystem::default() }).unwrap();
            let hi = effective_na(&SilSystem { n_sil: n, lens_na: a + d, ..SilSystem::default() }).unwrap();
            prop_assert!(hi >= lo);
            prop_assert!(hi <= n);
        }

        #[test]
        fn resolution_round_trip(l in 100.0f64..2000.0, n in 1.01f64..4.0) {
            let r = diffraction_resolution(l, n).unwrap();
            prop_assert!((r * n / l - 0.61).abs() < 1e-12);
        }

        #[test]
        fn budget_is_product(ts in proptest::collection::vec(0.0f64..=1.0, 1..8)) {
            let b = EfficiencyBudget::new(ts.iter().enumerate().map(|(i, &t)| (format!("s{i}"), t)).collect()).unwrap();
            let p: f64 = ts.iter().product();
            prop_assert!((b.overall() - p).abs() < 1e-12);
        }

        #[test]
        fn aplanatic_for_any_angle(a in -FRAC_PI_2..FRAC_PI_2, n in 1.05f64..3.0) {
            let sys = SilSystem { n_sil: n, ..SilSystem::default() };
            let exit = trace_meridional_ray(&sys, a).unwrap();
            prop_assert!((n * exit.sin() - a.sin()).abs() < 1e-9);
        }
    }
}
