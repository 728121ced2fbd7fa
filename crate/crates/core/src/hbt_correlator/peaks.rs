use super::{CoincidenceHistogram, CorrelatorError};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LATERAL_PEAKS: usize = 4;

/// One coincidence peak at delay `index · period`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: i64,
    /// Counts with bin centers in `[index·T − w/2, index·T + w/2)`.
    pub area: u64,
    /// Count-weighted mean delay, ps; `None` for an empty peak.
    pub center: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakTable {
    pub rep_period: f64,
    pub window: f64,
    pub peaks: Vec<Peak>,
    /// Central area over the mean of up to `k` lateral areas each side.
    pub ratio: f64,
    /// Poisson uncertainty of `ratio`.
    pub ratio_sigma: f64,
    pub lateral_mean: f64,
}

impl PeakTable {
    pub fn central(&self) -> &Peak {
        self.peaks
            .iter()
            .find(|p| p.index == 0)
            .expect("central peak present")
    }

    pub fn lateral(&self) -> impl Iterator<Item = &Peak> {
        self.peaks.iter().filter(|p| p.index != 0)
    }
}

/// Integrates the peaks of a pulsed coincidence histogram.
///
/// Only peaks whose full window fits inside the histogram range are used.
pub fn peak_areas(
    hist: &CoincidenceHistogram,
    rep_period: f64,
    window: f64,
    k: usize,
) -> Result<PeakTable, CorrelatorError> {
    if !(rep_period > 0.0 && rep_period.is_finite()) {
        return Err(CorrelatorError::Invalid(format!(
            "rep_period must be > 0, got {rep_period}"
        )));
    }
    if !(window > 0.0) {
        return Err(CorrelatorError::Invalid(format!(
            "window must be > 0, got {window}"
        )));
    }
    if window >= rep_period {
        return Err(CorrelatorError::Invalid(format!(
            "window {window} ps overlaps adjacent peaks (period {rep_period} ps)"
        )));
    }
    if k == 0 {
        return Err(CorrelatorError::Invalid(
            "need at least one lateral peak".into(),
        ));
    }
    let (lo, hi) = (hist.tau_min as f64, hist.tau_max as f64);
    let half = 0.5 * window;
    let fits = |n: i64| {
        let c = n as f64 * rep_period;
        c - half >= lo && c + half <= hi
    };
    if !fits(0) {
        return Err(CorrelatorError::Invalid(
            "central peak window lies outside the histogram".into(),
        ));
    }

    let mut peaks = Vec::new();
    for n in -(k as i64)..=(k as i64) {
        if !fits(n) {
            continue;
        }
        let c = n as f64 * rep_period;
        let (mut area, mut moment) = (0u64, 0.0);
        for (i, &count) in hist.counts.iter().enumerate() {
            let x = hist.bin_center(i);
            if x >= c - half && x < c + half {
                area += count;
                moment += count as f64 * x;
            }
        }
        let center = (area > 0).then(|| moment / area as f64);
        peaks.push(Peak {
            index: n,
            area,
            center,
        });
    }
    let laterals: Vec<f64> = peaks
        .iter()
        .filter(|p| p.index != 0)
        .map(|p| p.area as f64)
        .collect();
    if laterals.is_empty() {
        return Err(CorrelatorError::Invalid(
            "no lateral peak fits inside the histogram".into(),
        ));
    }
    let central = peaks
        .iter()
        .find(|p| p.index == 0)
        .map(|p| p.area as f64)
        .unwrap_or(0.0);
    let lateral_sum: f64 = laterals.iter().sum();
    let lateral_mean = lateral_sum / laterals.len() as f64;
    if lateral_mean == 0.0 {
        return Err(CorrelatorError::Invalid("lateral peaks are empty".into()));
    }
    let ratio = central / lateral_mean;
    // independent Poisson areas: var(C)/C² + var(ΣL)/(ΣL)²
    let ratio_sigma = ratio.abs() * (1.0 / central.max(1.0) + 1.0 / lateral_sum).sqrt();
    let ratio_sigma = if central == 0.0 {
        1.0 / lateral_mean
    } else {
        ratio_sigma
    };
    Ok(PeakTable {
        rep_period,
        window,
        peaks,
        ratio,
        ratio_sigma,
        lateral_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hbt_correlator::HistogramMode;

    fn comb(period: i64, heights: &[(i64, u64)]) -> CoincidenceHistogram {
        let mut h =
            CoincidenceHistogram::new(10, -5 * period, 5 * period, HistogramMode::Full).unwrap();
        for &(n, height) in heights {
            for d in [-15, -5, 5, 15] {
                let i = h.bin_index(n * period + d).unwrap();
                h.counts[i] += height;
            }
        }
        h
    }

    #[test]
    fn areas_of_synthetic_comb() {
        let mut heights: Vec<(i64, u64)> = (-4..=4).map(|n| (n, 100)).collect();
        heights[4].1 = 25;
        let h = comb(1000, &heights);
        let t = peak_areas(&h, 1000.0, 200.0, 4).unwrap();
        assert_eq!(t.peaks.len(), 9);
        assert_eq!(t.central().area, 100);
        assert!(t.lateral().all(|p| p.area == 400));
        assert!((t.ratio - 0.25).abs() < 1e-12);
        assert!(t.central().center.unwrap().abs() < 1e-9);
    }

    #[test]
    fn window_overlap_is_rejected() {
        let h = comb(1000, &[(0, 1), (1, 1)]);
        assert!(peak_areas(&h, 1000.0, 1000.0, 4).is_err());
        assert!(peak_areas(&h, 1000.0, 0.0, 4).is_err());
        assert!(peak_areas(&h, -1.0, 10.0, 4).is_err());
    }

    #[test]
    fn only_peaks_inside_range_are_used() {
        let h = comb(1000, &[(0, 1), (2, 1), (-2, 1), (4, 1)]);
        let t = peak_areas(&h, 2000.0, 500.0, 4).unwrap();
        // range ±5000 with period 2000: n in -2..=2
        assert_eq!(t.peaks.len(), 5);
    }
}
