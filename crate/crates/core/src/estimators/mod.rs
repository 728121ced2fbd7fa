//! Weighted nonlinear least-squares fits of the measured curves: saturation,
//! antibunching dip, Lorentzian line, lateral-peak decay and confocal spot.
//!
//! Every fitter starts from a deterministic data-driven guess, so results do
//! not depend on any RNG. Histogram and image models are averaged over the
//! bin or pixel they are compared with, which keeps round trips exact for
//! any bin width.

mod antibunching;
mod lateral;
pub mod lm;
mod lorentzian;
mod saturation;
mod spot;

pub use antibunching::{antibunching_model, fit_antibunching};
pub use lateral::{fit_lateral_peak_decay, lateral_peak_model, MIN_PEAK_COUNTS};
pub use lorentzian::{fit_lorentzian, lorentzian_model};
pub use saturation::{fit_saturation, saturation_model};
pub use spot::{fit_gaussian_spot, spot_model, FWHM_PER_SIGMA};

use crate::hbt_correlator::CorrelatorError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::BufRead;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("fit did not converge after {iterations} iterations (gradient {gradient:.3e}), last iterate {last:?}")]
    NotConverged {
        iterations: usize,
        gradient: f64,
        last: Vec<f64>,
    },
    #[error("no spot found: {0}")]
    NotFound(String),
    #[error("feature is not resolvable: {0}")]
    Unresolvable(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Correlator(#[from] CorrelatorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<ParamEstimate>,
    pub reduced_chi2: f64,
    pub n_iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub(crate) fn from_outcome(names: &[&str], out: &lm::LmOutcome) -> FitResult {
        let dof = out.n_points.saturating_sub(names.len());
        let params = names
            .iter()
            .enumerate()
            .map(|(k, name)| ParamEstimate {
                name: name.to_string(),
                value: out.params[k],
                std_error: out.covariance[(k, k)].max(0.0).sqrt(),
            })
            .collect();
        FitResult {
            params,
            reduced_chi2: if dof > 0 { out.chi2 / dof as f64 } else { 0.0 },
            n_iterations: out.n_iterations,
            converged: out.converged,
        }
    }

    /// Value of a named parameter. Panics if the name is unknown.
    pub fn value(&self, name: &str) -> f64 {
        self.get(name)
            .unwrap_or_else(|| panic!("no parameter `{name}`"))
            .value
    }

    /// 1σ uncertainty of a named parameter. Panics if the name is unknown.
    pub fn sigma(&self, name: &str) -> f64 {
        self.get(name)
            .unwrap_or_else(|| panic!("no parameter `{name}`"))
            .std_error
    }

    pub fn get(&self, name: &str) -> Option<&ParamEstimate> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit results serialize")
    }

    pub fn from_json(text: &str) -> Result<FitResult, FitError> {
        serde_json::from_str(text).map_err(|e| FitError::Invalid(e.to_string()))
    }
}

impl fmt::Display for FitResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(f, "{} = {} ± {}", p.name, p.value, p.std_error)?;
        }
        writeln!(f, "reduced_chi2 = {}", self.reduced_chi2)?;
        writeln!(f, "n_iterations = {}", self.n_iterations)?;
        write!(f, "converged = {}", self.converged)
    }
}

/// A measured point `(x, y, sigma)`.
pub type Point = (f64, f64, f64);

/// Sorts points by x, then y, then sigma, so fits are independent of input order.
pub(crate) fn canonical(points: &[Point]) -> Result<Vec<Point>, FitError> {
    if let Some(p) = points
        .iter()
        .find(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite()))
    {
        return Err(FitError::Invalid(format!("non-finite point {p:?}")));
    }
    let mut v = points.to_vec();
    v.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });
    Ok(v)
}

pub(crate) fn unzip3(points: &[Point]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let xs = points.iter().map(|p| p.0).collect();
    let ys = points.iter().map(|p| p.1).collect();
    let ss = points.iter().map(|p| p.2).collect();
    (xs, ys, ss)
}

/// Poisson standard deviation of a count, floored at one count.
pub(crate) fn poisson_sigma(count: f64) -> f64 {
    count.max(1.0).sqrt()
}

/// `∫ₗʰ e^{−v/τ} dv` for `0 ≤ l ≤ h` and its derivative in `τ`.
fn one_sided(l: f64, h: f64, tau: f64) -> (f64, f64) {
    let a = (-l / tau).exp();
    let w = h - l;
    let em = (-w / tau).exp_m1();
    let b = -em;
    (
        tau * a * b,
        a * (b * (1.0 + l / tau) - (w / tau) * (1.0 + em)),
    )
}

/// Mean of `e^{−|v|/τ}` over `[lo, hi]` and its derivative in `τ`.
pub(crate) fn laplace_bin_mean(lo: f64, hi: f64, tau: f64) -> (f64, f64) {
    let (i, d) = if lo >= 0.0 {
        one_sided(lo, hi, tau)
    } else if hi <= 0.0 {
        one_sided(-hi, -lo, tau)
    } else {
        let (i1, d1) = one_sided(0.0, -lo, tau);
        let (i2, d2) = one_sided(0.0, hi, tau);
        (i1 + i2, d1 + d2)
    };
    let w = hi - lo;
    (i / w, d / w)
}

/// Reads `x,y[,sigma]` rows; a missing sigma defaults to `sqrt(max(y, 1))`.
pub fn read_points_csv<R: BufRead>(r: R) -> Result<Vec<Point>, FitError> {
    let mut points = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match (parsed, fields.len()) {
            (Ok(v), 2) => points.push((v[0], v[1], poisson_sigma(v[1]))),
            (Ok(v), 3) => points.push((v[0], v[1], v[2])),
            (Err(_), _) if n == 0 => continue,
            _ => {
                return Err(FitError::Invalid(format!(
                    "line {}: expected `x,y[,sigma]`, got {line:?}",
                    n + 1
                )))
            }
        }
    }
    Ok(points)
}

#[cfg(test)]
pub(crate) mod testutil {
    /// Checks an analytic gradient against a fourth-order central
    /// difference. Components smaller than 1e-5 of the natural scale
    /// `|f|/|p_k|` are compared against that scale, since double-precision
    /// differencing cannot resolve them further.
    pub fn check_gradient<X>(model: impl Fn(&X, &[f64], &mut [f64]) -> f64, x: &X, p: &[f64]) {
        let mut g = vec![0.0; p.len()];
        let f0 = model(x, p, &mut g);
        let mut scratch = vec![0.0; p.len()];
        let mut at = |k: usize, d: f64| {
            let mut q = p.to_vec();
            q[k] += d;
            model(x, &q, &mut scratch)
        };
        for k in 0..p.len() {
            let pk = p[k].abs().max(1e-3);
            let h = 1e-4 * pk;
            let fd =
                (8.0 * (at(k, h) - at(k, -h)) - (at(k, 2.0 * h) - at(k, -2.0 * h))) / (12.0 * h);
            let scale = g[k]
                .abs()
                .max(fd.abs())
                .max(1e-5 * f0.abs() / pk)
                .max(1e-300);
            assert!(
                (g[k] - fd).abs() / scale < 1e-6,
                "parameter {k}: analytic {} vs finite difference {fd} at p = {p:?}",
                g[k]
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_bin_mean_matches_quadrature() {
        for &(lo, hi, tau) in &[
            (-0.5, 0.5, 4.7),
            (1.0, 2.0, 0.3),
            (-3.0, -1.0, 2.0),
            (0.0, 1e-9, 1.0),
            (30.0, 31.0, 0.9),
        ] {
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let q: f64 = (0..n)
                .map(|i| (-(lo + (i as f64 + 0.5) * h).abs() / tau).exp())
                .sum::<f64>()
                * h
                / (hi - lo);
            let (m, _) = laplace_bin_mean(lo, hi, tau);
            assert!((m - q).abs() < 1e-8 * q, "{lo} {hi} {tau}: {m} vs {q}");
        }
    }

    #[test]
    fn laplace_tau_derivative() {
        for bin in [(-0.7, 1.3), (2.0, 2.5), (-9.0, -8.0), (25.0, 26.0)] {
            testutil::check_gradient(
                |x: &(f64, f64), p: &[f64], g: &mut [f64]| {
                    let (m, d) = laplace_bin_mean(x.0, x.1, p[0]);
                    g[0] = d;
                    m
                },
                &bin,
                &[2.2],
            );
        }
    }

    #[test]
    fn display_and_json() {
        let r = FitResult {
            params: vec![ParamEstimate {
                name: "tau_f".into(),
                value: 4.5,
                std_error: 0.1,
            }],
            reduced_chi2: 1.02,
            n_iterations: 7,
            converged: true,
        };
        assert!(r.to_string().starts_with("tau_f = 4.5 ± 0.1\n"));
        assert_eq!(FitResult::from_json(&r.to_json()).unwrap(), r);
        assert_eq!(r.value("tau_f"), 4.5);
    }

    #[test]
    fn points_csv() {
        let text = "power_mW,rate\n1,100\n2,150,3\n\n# comment\n";
        let p = read_points_csv(text.as_bytes()).unwrap();
        assert_eq!(p, vec![(1.0, 100.0, 10.0), (2.0, 150.0, 3.0)]);
        assert!(read_points_csv("1,2\nx,y\n".as_bytes()).is_err());
    }
}
