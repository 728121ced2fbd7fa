//! Synthetic confocal images through the SIL.

use super::{diffraction_resolution, SilError, SilSystem, FIELD_OF_VIEW_UM};
use crate::emission_sim::{stage_rng, streams, SimConfig};
use crate::estimators::spot_model;
use nalgebra::DMatrix;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    /// nm, image coordinates (pixel `(0, 0)` covers `[0, pixel_size)²`).
    pub x: f64,
    /// nm
    pub y: f64,
    /// Detected count rate with the focus on the emitter, counts/s.
    pub brightness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub width: usize,
    pub height: usize,
    /// nm
    pub pixel_size: f64,
}

impl ScanGrid {
    /// A square grid of `extent_um` with `pixel_size` nm pixels.
    pub fn square(extent_um: f64, pixel_size: f64) -> Self {
        let n = (extent_um * 1e3 / pixel_size).round().max(1.0) as usize;
        ScanGrid {
            width: n,
            height: n,
            pixel_size,
        }
    }

    /// (width, height) in µm.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.pixel_size * 1e-3,
            self.height as f64 * self.pixel_size * 1e-3,
        )
    }

    fn validate(&self) -> Result<(), SilError> {
        if self.width == 0 || self.height == 0 || !(self.pixel_size > 0.0) {
            return Err(SilError::Domain(
                "scan grid needs nonzero size and a positive pixel size".into(),
            ));
        }
        let (w, h) = self.extent();
        let extent_um = w.max(h);
        if extent_um > FIELD_OF_VIEW_UM {
            return Err(SilError::FieldOfView { extent_um });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanImage {
    /// Counts, indexed `(row = y, col = x)`.
    pub pixels: DMatrix<f64>,
    /// nm
    pub pixel_size: f64,
    /// Emitters that fell outside the scanned area.
    pub warnings: Vec<String>,
}

impl ScanImage {
    /// (width, height) in µm.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.pixels.ncols() as f64 * self.pixel_size * 1e-3,
            self.pixels.nrows() as f64 * self.pixel_size * 1e-3,
        )
    }

    pub fn total(&self) -> f64 {
        self.pixels.sum()
    }

    /// Whitespace-separated rows, top row first.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<(), SilError> {
        for r in 0..self.pixels.nrows() {
            let row: Vec<String> = (0..self.pixels.ncols())
                .map(|c| format!("{}", self.pixels[(r, c)]))
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    /// Binary 16-bit PGM (P5, big-endian); counts above 65535 are scaled down.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<(), SilError> {
        let max = self.pixels.max().max(1.0);
        let (maxval, scale) = if max > 65535.0 {
            (65535u32, 65535.0 / max)
        } else {
            (max.ceil() as u32, 1.0)
        };
        let maxval = maxval.max(256);
        write!(
            w,
            "P5\n{} {}\n{}\n",
            self.pixels.ncols(),
            self.pixels.nrows(),
            maxval
        )?;
        let mut buf = Vec::with_capacity(2 * self.pixels.len());
        for r in 0..self.pixels.nrows() {
            for c in 0..self.pixels.ncols() {
                let v = (self.pixels[(r, c)] * scale)
                    .round()
                    .clamp(0.0, maxval as f64) as u16;
                buf.extend_from_slice(&v.to_be_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

/// Expected counts per pixel: `background` plus each emitter's Gaussian spot
/// (FWHM `0.61λ/n`, peak `brightness · dwell`), averaged over the pixel.
pub fn expected_scan(
    emitters: &[Emitter],
    sys: &SilSystem,
    background: f64,
    dwell: f64,
    grid: &ScanGrid,
) -> Result<DMatrix<f64>, SilError> {
    sys.validate()?;
    grid.validate()?;
    if !(background >= 0.0 && dwell > 0.0) {
        return Err(SilError::Domain(format!(
            "background must be >= 0 and dwell > 0, got {background}, {dwell}"
        )));
    }
    if let Some(e) = emitters.iter().find(|e| !(e.brightness >= 0.0)) {
        return Err(SilError::Domain(format!(
            "negative brightness {}",
            e.brightness
        )));
    }
    let fwhm = diffraction_resolution(sys.wavelength, sys.n_sil)?;
    let mut grad = [0.0; 5];
    Ok(DMatrix::from_fn(grid.height, grid.width, |r, c| {
        background
            + emitters
                .iter()
                .map(|e| {
                    let p = [e.x, e.y, fwhm, e.brightness * dwell * 1e-3, 0.0];
                    spot_model(&(c, r, grid.pixel_size), &p, &mut grad)
                })
                .sum::<f64>()
    }))
}

/// Poisson counts around [`expected_scan`]. `dwell` is in ms per pixel and
/// `background` in counts per pixel. Rows are drawn in parallel from
/// per-row streams of `cfg.seed`.
pub fn simulate_confocal_scan(
    emitters: &[Emitter],
    sys: &SilSystem,
    background: f64,
    dwell: f64,
    grid: &ScanGrid,
    cfg: &SimConfig,
) -> Result<ScanImage, SilError> {
    let mean = expected_scan(emitters, sys, background, dwell, grid)?;
    let (w, h) = (
        grid.width as f64 * grid.pixel_size,
        grid.height as f64 * grid.pixel_size,
    );
    let warnings = emitters
        .iter()
        .filter(|e| !(0.0..w).contains(&e.x) || !(0.0..h).contains(&e.y))
        .map(|e| {
            format!(
                "emitter at ({} nm, {} nm) lies outside the scan area",
                e.x, e.y
            )
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..grid.height)
        .into_par_iter()
        .map(|r| {
            let mut rng = stage_rng(cfg.seed, streams::SCAN, r as u64);
            (0..grid.width)
                .map(|c| match Poisson::new(mean[(r, c)]) {
                    Ok(p) => p.sample(&mut rng),
                    Err(_) => 0.0,
                })
                .collect()
        })
        .collect();
    let pixels = DMatrix::from_fn(grid.height, grid.width, |r, c| rows[r][c]);
    Ok(ScanImage {
        pixels,
        pixel_size: grid.pixel_size,
        warnings,
    })
}
