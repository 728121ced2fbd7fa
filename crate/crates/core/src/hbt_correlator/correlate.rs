use super::{CoincidenceHistogram, CorrelatorError, HistogramMode};
use rayon::prelude::*;

const MIN_CHUNK: usize = 1 << 16;

fn check_sorted(times: &[u64], which: &'static str) -> Result<(), CorrelatorError> {
    match times.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(CorrelatorError::Unsorted {
            which,
            index: i + 1,
        }),
        None => Ok(()),
    }
}

fn check_range(times: &[u64], which: &'static str) -> Result<(), CorrelatorError> {
    if times.last().is_some_and(|&t| t > i64::MAX as u64) {
        return Err(CorrelatorError::Invalid(format!(
            "{which} stream exceeds the signed delay range"
        )));
    }
    Ok(())
}

fn default_chunk(n: usize) -> usize {
    n.div_ceil(rayon::current_num_threads().max(1))
        .max(MIN_CHUNK)
}

/// First stop strictly after each start, within `tau_max` ps. Bin edges run
/// from 0; a delay of exactly `tau_max` lands in the last bin.
pub fn start_stop_histogram(
    starts: &[u64],
    stops: &[u64],
    bin_width: u64,
    tau_max: i64,
) -> Result<CoincidenceHistogram, CorrelatorError> {
    start_stop_histogram_chunked(
        starts,
        stops,
        bin_width,
        tau_max,
        default_chunk(starts.len()),
    )
}

/// As [`start_stop_histogram`], with the starts partitioned into blocks of
/// `chunk` tags processed in parallel. Counts do not depend on `chunk`.
pub fn start_stop_histogram_chunked(
    starts: &[u64],
    stops: &[u64],
    bin_width: u64,
    tau_max: i64,
    chunk: usize,
) -> Result<CoincidenceHistogram, CorrelatorError> {
    if tau_max <= 0 {
        return Err(CorrelatorError::Invalid(format!(
            "tau_max must be > 0, got {tau_max}"
        )));
    }
    check_sorted(starts, "start")?;
    check_sorted(stops, "stop")?;
    let mut hist = CoincidenceHistogram::new(bin_width, 0, tau_max, HistogramMode::StartStop)?;
    let last = hist.len() - 1;
    let counts = first_stop_counts(starts, stops, tau_max as u64, chunk, hist.len(), |d| {
        ((d / bin_width) as usize).min(last)
    });
    hist.counts = counts;
    hist.n_starts = starts.len() as u64;
    Ok(hist)
}

/// Counts the first stop after each start (delay in `(0, tau_max]`) into
/// `n_bins` bins chosen by `bin`.
fn first_stop_counts<F>(
    starts: &[u64],
    stops: &[u64],
    tau_max: u64,
    chunk: usize,
    n_bins: usize,
    bin: F,
) -> Vec<u64>
where
    F: Fn(u64) -> usize + Sync,
{
    let partials: Vec<Vec<u64>> = starts
        .par_chunks(chunk.max(1))
        .map(|block| {
            let mut counts = vec![0u64; n_bins];
            let mut j = stops.partition_point(|&s| s <= block[0]);
            for &t in block {
                while j < stops.len() && stops[j] <= t {
                    j += 1;
                }
                if j == stops.len() {
                    break;
                }
                let d = stops[j] - t;
                if d <= tau_max {
                    counts[bin(d)] += 1;
                }
            }
            counts
        })
        .collect();
    let mut total = vec![0u64; n_bins];
    for p in partials {
        for (c, x) in total.iter_mut().zip(p) {
            *c += x;
        }
    }
    total
}

/// Start-stop in both directions (A starts B, then B starts A) merged on a
/// signed axis `[-tau_max, tau_max]`: B→A delays appear at negative τ.
pub fn symmetric_start_stop_histogram(
    a: &[u64],
    b: &[u64],
    bin_width: u64,
    tau_max: i64,
) -> Result<CoincidenceHistogram, CorrelatorError> {
    if tau_max <= 0 {
        return Err(CorrelatorError::Invalid(format!(
            "tau_max must be > 0, got {tau_max}"
        )));
    }
    check_sorted(a, "A")?;
    check_sorted(b, "B")?;
    let mut hist =
        CoincidenceHistogram::new(bin_width, -tau_max, tau_max, HistogramMode::StartStop)?;
    let template = hist.clone();
    let last = hist.len() - 1;
    let forward = first_stop_counts(
        a,
        b,
        tau_max as u64,
        default_chunk(a.len()),
        hist.len(),
        |d| {
            if d as i64 == tau_max {
                last
            } else {
                template.bin_index(d as i64).expect("delay in range")
            }
        },
    );
    let backward = first_stop_counts(
        b,
        a,
        tau_max as u64,
        default_chunk(b.len()),
        hist.len(),
        |d| {
            if d as i64 == tau_max {
                0
            } else {
                template.bin_index(-(d as i64)).expect("delay in range")
            }
        },
    );
    for ((c, f), r) in hist.counts.iter_mut().zip(forward).zip(backward) {
        *c = f + r;
    }
    hist.n_starts = (a.len() + b.len()) as u64;
    Ok(hist)
}

/// All pairs whose delay `t_b − t_a` falls inside the histogram range.
pub fn full_correlation_histogram(
    a: &[u64],
    b: &[u64],
    bin_width: u64,
    tau_min: i64,
    tau_max: i64,
) -> Result<CoincidenceHistogram, CorrelatorError> {
    full_correlation_histogram_chunked(a, b, bin_width, tau_min, tau_max, default_chunk(a.len()))
}

/// As [`full_correlation_histogram`], partitioning `a` into blocks of
/// `chunk` tags processed in parallel.
pub fn full_correlation_histogram_chunked(
    a: &[u64],
    b: &[u64],
    bin_width: u64,
    tau_min: i64,
    tau_max: i64,
    chunk: usize,
) -> Result<CoincidenceHistogram, CorrelatorError> {
    check_sorted(a, "A")?;
    check_sorted(b, "B")?;
    check_range(a, "A")?;
    check_range(b, "B")?;
    let mut hist = CoincidenceHistogram::new(bin_width, tau_min, tau_max, HistogramMode::Full)?;
    let template = hist.clone();
    let chunk = chunk.max(1);
    let partials: Vec<Vec<u64>> = a
        .par_chunks(chunk)
        .map(|block| {
            let mut counts = vec![0u64; template.len()];
            let first = block[0] as i64;
            let mut lo = b.partition_point(|&t| (t as i64 - first) < tau_min);
            for &ta in block {
                let ta = ta as i64;
                while lo < b.len() && (b[lo] as i64 - ta) < tau_min {
                    lo += 1;
                }
                let mut j = lo;
                while j < b.len() {
                    let d = b[j] as i64 - ta;
                    if d > tau_max {
                        break;
                    }
                    if let Some(i) = template.bin_index(d) {
                        counts[i] += 1;
                    }
                    j += 1;
                }
            }
            counts
        })
        .collect();
    for p in partials {
        for (c, x) in hist.counts.iter_mut().zip(p) {
            *c += x;
        }
    }
    hist.n_starts = a.len() as u64;
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_full(a: &[u64], b: &[u64], h: &CoincidenceHistogram) -> Vec<u64> {
        let mut counts = vec![0; h.len()];
        for &x in a {
            for &y in b {
                if let Some(i) = h.bin_index(y as i64 - x as i64) {
                    counts[i] += 1;
                }
            }
        }
        counts
    }

    fn brute_start_stop(a: &[u64], b: &[u64], bw: u64, tau_max: i64) -> Vec<u64> {
        let n = (tau_max as u64).div_ceil(bw) as usize;
        let mut counts = vec![0; n];
        for &x in a {
            if let Some(&y) = b.iter().find(|&&y| y > x) {
                let d = y - x;
                if d <= tau_max as u64 {
                    counts[((d / bw) as usize).min(n - 1)] += 1;
                }
            }
        }
        counts
    }

    #[test]
    fn start_stop_takes_first_stop_only() {
        let h = start_stop_histogram(&[0, 100], &[50, 60, 150], 10, 100).unwrap();
        assert_eq!(h.counts[5], 2);
        assert_eq!(h.total(), 2);
        assert_eq!(h.n_starts, 2);
    }

    #[test]
    fn start_stop_boundaries() {
        // equal times are not a valid stop; delay == tau_max goes in the last bin
        let h = start_stop_histogram(&[10], &[10, 110], 10, 100).unwrap();
        assert_eq!(h.counts[9], 1);
        let h = start_stop_histogram(&[10], &[111], 10, 100).unwrap();
        assert_eq!(h.total(), 0);
    }

    #[test]
    fn unsorted_input_rejected() {
        assert!(matches!(
            start_stop_histogram(&[3, 1], &[2], 1, 10),
            Err(CorrelatorError::Unsorted {
                which: "start",
                index: 1
            })
        ));
        assert!(full_correlation_histogram(&[1], &[5, 2], 1, -5, 5).is_err());
    }

    #[test]
    fn full_correlation_counts_all_pairs() {
        let h = full_correlation_histogram(&[0, 10], &[5, 12, 30], 1, -20, 21).unwrap();
        // delays: 5, 12, 30(out), -5, 2, 20
        assert_eq!(h.total(), 5);
        assert_eq!(h.counts[h.bin_index(-5).unwrap()], 1);
        assert_eq!(h.counts[h.bin_index(20).unwrap()], 1);
    }

    #[test]
    fn symmetric_merge_places_reverse_delays_at_negative_tau() {
        let h = symmetric_start_stop_histogram(&[0], &[25], 10, 100).unwrap();
        assert_eq!(h.counts[h.bin_index(25).unwrap()], 1);
        assert_eq!(h.total(), 1);
        let h = symmetric_start_stop_histogram(&[25], &[0], 10, 100).unwrap();
        assert_eq!(h.counts[h.bin_index(-25).unwrap()], 1);
        assert_eq!(h.n_starts, 2);
    }

    fn sorted_times(max: u64, n: usize) -> impl Strategy<Value = Vec<u64>> {
        proptest::collection::vec(0..max, 0..n).prop_map(|mut v| {
            v.sort_unstable();
            v
        })
    }

    proptest! {
        #[test]
        fn full_matches_brute_force(a in sorted_times(2_000, 60), b in sorted_times(2_000, 60),
                                    bw in 1u64..40, lo in -300i64..0, span in 1i64..600, chunk in 1usize..20) {
            let h = full_correlation_histogram_chunked(&a, &b, bw, lo, lo + span, chunk).unwrap();
            prop_assert_eq!(&h.counts, &brute_full(&a, &b, &h));
        }

        #[test]
        fn start_stop_matches_brute_force(a in sorted_times(5_000, 80), b in sorted_times(5_000, 80),
                                          bw in 1u64..50, tau_max in 1i64..800, chunk in 1usize..30) {
            let h = start_stop_histogram_chunked(&a, &b, bw, tau_max, chunk).unwrap();
            prop_assert_eq!(h.counts, brute_start_stop(&a, &b, bw, tau_max));
        }

        #[test]
        fn swapping_inputs_mirrors_histogram(a in sorted_times(3_000, 60), b in sorted_times(3_000, 60),
                                             half_bw in 1u64..20, m in 1i64..20) {
            // zero delay sits at a bin center, so every edge set is symmetric
            let bw = 2 * half_bw;
            let tau_max = m * bw as i64 + half_bw as i64;
            let ab = full_correlation_histogram(&a, &b, bw, -tau_max, tau_max).unwrap();
            let ba = full_correlation_histogram(&b, &a, bw, -tau_max, tau_max).unwrap();
            let mirrored: Vec<u64> = ba.counts.iter().rev().copied().collect();
            prop_assert_eq!(ab.counts, mirrored);
        }

        #[test]
        fn histogram_counts_are_bounded(a in sorted_times(3_000, 60), b in sorted_times(3_000, 60),
                                        bw in 1u64..30, tau_max in 1i64..500) {
            let ss = start_stop_histogram(&a, &b, bw, tau_max).unwrap();
            prop_assert!(ss.total() <= a.len() as u64);
            let full = full_correlation_histogram(&a, &b, bw, -tau_max, tau_max).unwrap();
            prop_assert!(full.total() <= (a.len() * b.len()) as u64);
        }
    }
}
