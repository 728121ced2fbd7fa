use super::lm::{minimize, Bounds, LmConfig};
use super::{poisson_sigma, FitError, FitResult};
use nalgebra::DMatrix;
use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};

/// FWHM of a Gaussian in units of its standard deviation, `2√(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `Φ(b) − Φ(a)` for `a ≤ b`, computed on the tail that avoids cancellation.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (erfc(a / SQRT_2) - erfc(b / SQRT_2))
    } else if b <= 0.0 {
        0.5 * (erfc(-b / SQRT_2) - erfc(-a / SQRT_2))
    } else {
        1.0 - 0.5 * (erfc(-a / SQRT_2) + erfc(b / SQRT_2))
    }
}

/// Pixel mean of `exp(−(x−x0)²/2σ²)` over `[lo, hi]`, with derivatives in
/// `x0` and `σ`.
fn axis_mean(lo: f64, hi: f64, x0: f64, sigma: f64) -> (f64, f64, f64) {
    let w = hi - lo;
    let (a, b) = ((lo - x0) / sigma, (hi - x0) / sigma);
    let k = (2.0 * PI).sqrt() / w;
    let mass = normal_mass(a, b);
    let (pa, pb) = (phi(a), phi(b));
    let v = k * sigma * mass;
    let dx0 = k * sigma * (pa - pb) / sigma;
    let dsigma = k * (mass - (b * pb - a * pa));
    (v, dx0, dsigma)
}

/// Pixel mean of `offset + A·exp(−r²/2σ²)` over the pixel `(col, row)` of
/// size `pixel` nm. Parameters `[x0, y0, fwhm, amplitude, offset]`, nm.
pub fn spot_model(px: &(usize, usize, f64), p: &[f64], grad: &mut [f64]) -> f64 {
    let (col, row, size) = *px;
    let (x0, y0, fwhm, a, off) = (p[0], p[1], p[2], p[3], p[4]);
    let sigma = fwhm / FWHM_PER_SIGMA;
    let (x_lo, y_lo) = (col as f64 * size, row as f64 * size);
    let (ex, ex_x0, ex_s) = axis_mean(x_lo, x_lo + size, x0, sigma);
    let (ey, ey_y0, ey_s) = axis_mean(y_lo, y_lo + size, y0, sigma);
    grad[0] = a * ex_x0 * ey;
    grad[1] = a * ex * ey_y0;
    grad[2] = a * (ex_s * ey + ex * ey_s) / FWHM_PER_SIGMA;
    grad[3] = ex * ey;
    grad[4] = 1.0;
    off + a * ex * ey
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fits a symmetric 2-D Gaussian plus constant background. `image` is
/// indexed `(row, col)` = `(y, x)`, pixel `(0, 0)` covering `[0, pixel_size)²`.
pub fn fit_gaussian_spot(image: &DMatrix<f64>, pixel_size: f64) -> Result<FitResult, FitError> {
    if !(pixel_size > 0.0 && pixel_size.is_finite()) {
        return Err(FitError::Invalid(format!(
            "pixel size must be > 0, got {pixel_size}"
        )));
    }
    let (rows, cols) = image.shape();
    if rows < 3 || cols < 3 {
        return Err(FitError::InsufficientData(format!(
            "{rows}×{cols} image is too small"
        )));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(FitError::Invalid("image contains non-finite values".into()));
    }
    let mut values: Vec<f64> = image.iter().copied().collect();
    let bg = median(&mut values);
    let mut dev: Vec<f64> = values.iter().map(|v| (v - bg).abs()).collect();
    let noise = 1.4826 * median(&mut dev);
    let (peak_idx, peak) =
        image.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        );
    if !(peak > bg + 3.0 * noise) {
        return Err(FitError::NotFound(format!(
            "maximum {peak} is not above background {bg} + 3σ ({noise})"
        )));
    }
    let level = bg + 0.5 * (peak - bg);
    let (pr, pc) = (peak_idx % rows, peak_idx / rows);
    // centroid and second moment of the half-maximum region around the peak
    let (mut sw, mut sx, mut sy, mut n_above) = (0.0, 0.0, 0.0, 0usize);
    let mut pixels = Vec::new();
    for c in 0..cols {
        for r in 0..rows {
            let v = image[(r, c)];
            if v >= level {
                let w = v - bg;
                let (x, y) = ((c as f64 + 0.5) * pixel_size, (r as f64 + 0.5) * pixel_size);
                sw += w;
                sx += w * x;
                sy += w * y;
                n_above += 1;
                pixels.push((x, y, w));
            }
        }
    }
    if n_above <= 1 {
        return Err(FitError::Unresolvable(format!(
            "spot at pixel ({pc}, {pr}) is narrower than one {pixel_size} nm pixel"
        )));
    }
    let (x0, y0) = (sx / sw, sy / sw);
    let r2: f64 = pixels
        .iter()
        .map(|&(x, y, w)| w * ((x - x0).powi(2) + (y - y0).powi(2)))
        .sum::<f64>()
        / sw;
    // the half-maximum disc of radius R has ⟨r²⟩ ≈ R²/2 and FWHM = 2R
    let fwhm0 = (2.0 * (2.0 * r2).sqrt()).max(pixel_size);

    let mut xs = Vec::with_capacity(rows * cols);
    let mut ys = Vec::with_capacity(rows * cols);
    for c in 0..cols {
        for r in 0..rows {
            xs.push((c, r, pixel_size));
            ys.push(image[(r, c)]);
        }
    }
    let sigmas: Vec<f64> = ys.iter().map(|&y| poisson_sigma(y)).collect();
    let bounds = Bounds::unbounded(5)
        .set(2, 1e-6 * fwhm0, f64::INFINITY)
        .set(3, 0.0, f64::INFINITY);
    let p0 = [x0, y0, fwhm0, peak - bg, bg];
    let out = minimize(
        &xs,
        &ys,
        &sigmas,
        &p0,
        &bounds,
        spot_model,
        &LmConfig::default(),
        None,
    )?;
    if out.params[2] < pixel_size {
        return Err(FitError::Unresolvable(format!(
            "fitted FWHM {:.3} nm is below the {pixel_size} nm pixel",
            out.params[2]
        )));
    }
    Ok(FitResult::from_outcome(
        &["x0", "y0", "fwhm", "amplitude", "offset"],
        &out,
    ))
}
