//! Histogram export: `tau_ps,counts` CSV (bin centers) with a JSON sidecar
//! at `<file>.json` holding the exact binning.

use super::{CoincidenceHistogram, CorrelatorError, HistogramMode};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSidecar {
    pub bin_width_ps: u64,
    pub tau_min_ps: i64,
    pub tau_max_ps: i64,
    pub mode: HistogramMode,
    pub n_starts: u64,
    /// Seeds of the stages that produced the data, outermost first.
    #[serde(default)]
    pub seed_lineage: Vec<u64>,
}

impl HistogramSidecar {
    pub fn describe(hist: &CoincidenceHistogram, seed_lineage: Vec<u64>) -> Self {
        HistogramSidecar {
            bin_width_ps: hist.bin_width,
            tau_min_ps: hist.tau_min,
            tau_max_ps: hist.tau_max,
            mode: hist.mode,
            n_starts: hist.n_starts,
            seed_lineage,
        }
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_csv<W: Write>(hist: &CoincidenceHistogram, mut w: W) -> Result<(), CorrelatorError> {
    writeln!(w, "tau_ps,counts")?;
    for (i, c) in hist.counts.iter().enumerate() {
        writeln!(w, "{},{}", hist.bin_center(i), c)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `(tau_ps, counts)` rows of a histogram CSV.
pub fn read_csv_rows<R: BufRead>(r: R) -> Result<Vec<(f64, u64)>, CorrelatorError> {
    let mut rows = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("tau")) {
            continue;
        }
        let bad = || {
            CorrelatorError::Format(format!(
                "line {}: expected `tau_ps,counts`, got {line:?}",
                n + 1
            ))
        };
        let (tau, count) = line.split_once(',').ok_or_else(bad)?;
        let tau: f64 = tau.trim().parse().map_err(|_| bad())?;
        let count: u64 = count.trim().parse().map_err(|_| bad())?;
        rows.push((tau, count));
    }
    Ok(rows)
}

/// Writes the CSV and its sidecar.
pub fn save(
    hist: &CoincidenceHistogram,
    path: &Path,
    seed_lineage: Vec<u64>,
) -> Result<(), CorrelatorError> {
    write_csv(hist, BufWriter::new(File::create(path)?))?;
    let sidecar = HistogramSidecar::describe(hist, seed_lineage);
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| CorrelatorError::Format(e.to_string()))?;
    std::fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

/// Loads a histogram saved by [`save`]. Without a sidecar the binning is
/// inferred from uniformly spaced bin centers and the mode is taken as FULL.
pub fn load(
    path: &Path,
) -> Result<(CoincidenceHistogram, Option<HistogramSidecar>), CorrelatorError> {
    let rows = read_csv_rows(BufReader::new(File::open(path)?))?;
    let side = sidecar_path(path);
    if side.exists() {
        let text = std::fs::read_to_string(&side)?;
        let meta: HistogramSidecar = serde_json::from_str(&text)
            .map_err(|e| CorrelatorError::Format(format!("{}: {e}", side.display())))?;
        let mut hist = CoincidenceHistogram::new(
            meta.bin_width_ps,
            meta.tau_min_ps,
            meta.tau_max_ps,
            meta.mode,
        )?;
        if rows.len() != hist.len() {
            return Err(CorrelatorError::Format(format!(
                "{} rows but the sidecar describes {} bins",
                rows.len(),
                hist.len()
            )));
        }
        for (i, &(tau, c)) in rows.iter().enumerate() {
            if (tau - hist.bin_center(i)).abs() > 0.5 {
                return Err(CorrelatorError::Format(format!(
                    "row {i}: tau {tau} does not match the sidecar binning"
                )));
            }
            hist.counts[i] = c;
        }
        hist.n_starts = meta.n_starts;
        return Ok((hist, Some(meta)));
    }
    Ok((from_rows(&rows)?, None))
}

/// Rebuilds a FULL-mode histogram from evenly spaced bin centers.
pub fn from_rows(rows: &[(f64, u64)]) -> Result<CoincidenceHistogram, CorrelatorError> {
    if rows.len() < 2 {
        return Err(CorrelatorError::Format(
            "need at least two rows to infer the bin width".into(),
        ));
    }
    let bw = rows[1].0 - rows[0].0;
    if !(bw >= 1.0) || bw.fract() != 0.0 {
        return Err(CorrelatorError::Format(format!(
            "bin spacing {bw} ps is not a positive integer"
        )));
    }
    for w in rows.windows(2) {
        if (w[1].0 - w[0].0 - bw).abs() > 1e-6 {
            return Err(CorrelatorError::Format(
                "bin centers are not evenly spaced".into(),
            ));
        }
    }
    let tau_min = (rows[0].0 - bw / 2.0).floor() as i64;
    let tau_max = tau_min + (bw as i64) * rows.len() as i64;
    let mut hist = CoincidenceHistogram::new(bw as u64, tau_min, tau_max, HistogramMode::Full)?;
    for (c, &(_, n)) in hist.counts.iter_mut().zip(rows) {
        *c = n;
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CoincidenceHistogram {
        let mut h =
            CoincidenceHistogram::new(512, -51_200, 51_200, HistogramMode::StartStop).unwrap();
        for (i, c) in h.counts.iter_mut().enumerate() {
            *c = (i * i) as u64 % 97;
        }
        h.n_starts = 12345;
        h
    }

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join(format!("hist-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("g2.csv");
        let h = sample();
        save(&h, &path, vec![7, 8]).unwrap();
        let (back, meta) = load(&path).unwrap();
        assert_eq!(back, h);
        assert_eq!(meta.unwrap().seed_lineage, vec![7, 8]);

        std::fs::remove_file(sidecar_path(&path)).unwrap();
        let (inferred, meta) = load(&path).unwrap();
        assert!(meta.is_none());
        assert_eq!(inferred.counts, h.counts);
        assert_eq!(
            (inferred.bin_width, inferred.tau_min, inferred.tau_max),
            (512, -51_200, 51_200)
        );
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn csv_header_and_rows() {
        let mut out = Vec::new();
        write_csv(&sample(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("tau_ps,counts"));
        assert_eq!(lines.next(), Some("-50944,0"));
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(read_csv_rows(&b"tau_ps,counts\n1.0;3\n"[..]).is_err());
        assert!(read_csv_rows(&b"1.0,-3\n"[..]).is_err());
        assert!(from_rows(&[(0.0, 1)]).is_err());
        assert!(from_rows(&[(0.0, 1), (1.0, 1), (3.0, 1)]).is_err());
    }
}
