use super::lm::{minimize, Bounds, LmConfig};
use super::{laplace_bin_mean, poisson_sigma, FitError, FitResult};
use crate::hbt_correlator::CoincidenceHistogram;

/// Bin mean of `c_inf·(1 − dip·exp(−|τ|(1+s)/tau_f))` over `[lo, hi]` ns,
/// parameters `[c_inf, dip, tau_f]`.
pub fn antibunching_model(bin: &(f64, f64), s: f64, p: &[f64], grad: &mut [f64]) -> f64 {
    let (c, dip, tau_f) = (p[0], p[1], p[2]);
    let (m, dm) = laplace_bin_mean(bin.0, bin.1, tau_f / (1.0 + s));
    grad[0] = 1.0 - dip * m;
    grad[1] = -c * m;
    grad[2] = -c * dip * dm / (1.0 + s);
    c * (1.0 - dip * m)
}

/// Bin edges in ns.
fn edges_ns(hist: &CoincidenceHistogram) -> Vec<(f64, f64)> {
    (0..hist.len())
        .map(|i| {
            let lo = hist.bin_start(i);
            let hi = (lo + hist.bin_width as i64).min(hist.tau_max);
            (lo as f64 * 1e-3, hi as f64 * 1e-3)
        })
        .collect()
}

/// Fits the dip of a signed-delay histogram at known saturation parameter
/// `s`. Returns `c_inf` (counts per bin), `dip` and `tau_f` (ns).
pub fn fit_antibunching(hist: &CoincidenceHistogram, s: f64) -> Result<FitResult, FitError> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(FitError::Invalid(format!(
            "saturation parameter must be >= 0, got {s}"
        )));
    }
    if hist.tau_min >= 0 || hist.tau_max <= 0 {
        return Err(FitError::InsufficientData(
            "histogram must cover both signs of delay".into(),
        ));
    }
    let bins = edges_ns(hist);
    let ys: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let centers: Vec<f64> = bins.iter().map(|b| 0.5 * (b.0 + b.1)).collect();
    let reach = centers.iter().fold(0.0f64, |a, c| a.max(c.abs()));

    let tail: Vec<f64> = centers
        .iter()
        .zip(&ys)
        .filter(|(c, _)| c.abs() >= 0.5 * reach)
        .map(|(_, &y)| y)
        .collect();
    let c0 = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    if !(c0 > 0.0) {
        return Err(FitError::InsufficientData("histogram tail is empty".into()));
    }
    let bw = hist.bin_width as f64 * 1e-3;
    let core: Vec<f64> = centers
        .iter()
        .zip(&ys)
        .filter(|(c, _)| c.abs() <= bw)
        .map(|(_, &y)| y)
        .collect();
    let y0 = core.iter().sum::<f64>() / core.len().max(1) as f64;
    let dip0 = (1.0 - y0 / c0).clamp(0.0, 1.0);

    // symmetric radial profile, 3-point smoothed, for the 1/e crossing
    let mut radial: Vec<(f64, f64)> = centers
        .iter()
        .zip(&ys)
        .map(|(c, &y)| (c.abs(), y))
        .collect();
    radial.sort_by(|a, b| a.0.total_cmp(&b.0));
    let crossing = if dip0 > 0.05 {
        let target = c0 - (c0 - y0) / std::f64::consts::E;
        radial
            .windows(3)
            .find(|w| (w[0].1 + w[1].1 + w[2].1) / 3.0 >= target)
            .map(|w| w[1].0)
    } else {
        None
    };
    let rise0 = crossing.filter(|&t| t > 0.0).unwrap_or(reach / 10.0);
    if -hist.tau_min as f64 * 1e-3 < 5.0 * rise0 || (hist.tau_max as f64) * 1e-3 < 5.0 * rise0 {
        return Err(FitError::InsufficientData(format!(
            "histogram must span 5 rise times ({:.3} ns) on both sides",
            5.0 * rise0
        )));
    }
    let tau0 = rise0 * (1.0 + s);

    let sigmas: Vec<f64> = ys.iter().map(|&y| poisson_sigma(y)).collect();
    let bounds = Bounds::unbounded(3)
        .set(0, 0.0, f64::INFINITY)
        .set(1, 0.0, 1.0)
        .set(2, 1e-6 * tau0, f64::INFINITY);
    let model = |b: &(f64, f64), p: &[f64], g: &mut [f64]| antibunching_model(b, s, p, g);
    let out = minimize(
        &bins,
        &ys,
        &sigmas,
        &[c0, dip0, tau0],
        &bounds,
        model,
        &LmConfig::default(),
        None,
    )?;
    Ok(FitResult::from_outcome(&["c_inf", "dip", "tau_f"], &out))
}
