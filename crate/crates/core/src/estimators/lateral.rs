use super::lm::{minimize, Bounds, LmConfig};
use super::{laplace_bin_mean, poisson_sigma, FitError, FitResult};
use crate::hbt_correlator::{CoincidenceHistogram, PeakTable};

/// Minimum area of a lateral peak entering the fit.
pub const MIN_PEAK_COUNTS: u64 = 100;

/// One bin of one peak: `(peak slot, lo, hi)` with edges in ns relative to
/// the peak position.
pub type PeakBin = (usize, f64, f64);

/// Bin mean of `A_k · exp(−|u|/tau_f) + offset`; parameters
/// `[tau_f, offset, A_0, A_1, …]`.
pub fn lateral_peak_model(bin: &PeakBin, p: &[f64], grad: &mut [f64]) -> f64 {
    let (k, lo, hi) = *bin;
    let (tau, off, a) = (p[0], p[1], p[2 + k]);
    let (m, dm) = laplace_bin_mean(lo, hi, tau);
    grad[0] = a * dm;
    grad[1] = 1.0;
    grad[2 + k] = m;
    a * m + off
}

/// Fits the exponential wings of the lateral peaks of a pulsed histogram
/// with one shared lifetime. `rep_period` in ps; returns `tau_f` in ns.
pub fn fit_lateral_peak_decay(
    table: &PeakTable,
    hist: &CoincidenceHistogram,
    rep_period: f64,
) -> Result<FitResult, FitError> {
    if !(rep_period > 0.0) {
        return Err(FitError::Invalid(format!(
            "rep_period must be > 0, got {rep_period}"
        )));
    }
    let mut used: Vec<i64> = table
        .lateral()
        .filter(|p| p.area >= MIN_PEAK_COUNTS)
        .map(|p| p.index)
        .collect();
    used.sort_unstable();
    if used.len() < 2 {
        return Err(FitError::InsufficientData(format!(
            "{} lateral peaks with at least {MIN_PEAK_COUNTS} counts, need 2",
            used.len()
        )));
    }
    let half = 0.5 * table.window;
    let bw_ns = hist.bin_width as f64 * 1e-3;
    let mut bins: Vec<PeakBin> = Vec::new();
    let mut ys = Vec::new();
    let mut edge_counts = Vec::new();
    let mut peak_stats = vec![(0.0f64, 0.0f64, 0usize); used.len()];
    for (k, &n) in used.iter().enumerate() {
        let c = n as f64 * rep_period;
        let slot: Vec<usize> = (0..hist.len())
            .filter(|&i| (hist.bin_center(i) - c).abs() < half)
            .collect();
        for (j, &i) in slot.iter().enumerate() {
            let lo = hist.bin_start(i) as f64;
            let hi = (hist.bin_start(i) + hist.bin_width as i64).min(hist.tau_max) as f64;
            let y = hist.counts[i] as f64;
            bins.push((k, (lo - c) * 1e-3, (hi - c) * 1e-3));
            ys.push(y);
            let st = &mut peak_stats[k];
            st.0 = st.0.max(y);
            st.1 += y;
            st.2 += 1;
            if j == 0 || j + 1 == slot.len() {
                edge_counts.push(y);
            }
        }
    }
    let off0 = edge_counts.iter().sum::<f64>() / edge_counts.len().max(1) as f64;
    let heights: Vec<f64> = peak_stats.iter().map(|s| (s.0 - off0).max(1.0)).collect();
    let excess: f64 = peak_stats
        .iter()
        .map(|s| (s.1 - off0 * s.2 as f64).max(0.0))
        .sum();
    let tau0 = excess * bw_ns / (2.0 * heights.iter().sum::<f64>());
    if !(tau0 >= bw_ns) {
        return Err(FitError::Unresolvable(format!(
            "peak decay ({tau0:.3} ns) is not resolved by {bw_ns} ns bins"
        )));
    }

    let mut p0 = vec![tau0, off0];
    p0.extend(&heights);
    let m = p0.len();
    let mut bounds =
        Bounds::unbounded(m)
            .set(0, 1e-6 * tau0, f64::INFINITY)
            .set(1, 0.0, f64::INFINITY);
    for k in 2..m {
        bounds = bounds.set(k, 0.0, f64::INFINITY);
    }
    let sigmas: Vec<f64> = ys.iter().map(|&y| poisson_sigma(y)).collect();
    let out = minimize(
        &bins,
        &ys,
        &sigmas,
        &p0,
        &bounds,
        lateral_peak_model,
        &LmConfig::default(),
        None,
    )?;
    if out.params[0] < 0.5 * bw_ns {
        return Err(FitError::Unresolvable(format!(
            "fitted decay {:.3} ns is below half a bin ({bw_ns} ns)",
            out.params[0]
        )));
    }
    let names: Vec<String> = ["tau_f".to_string(), "offset".to_string()]
        .into_iter()
        .chain(used.iter().map(|n| format!("amplitude[{n}]")))
        .collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Ok(FitResult::from_outcome(&refs, &out))
}
