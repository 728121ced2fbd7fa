use super::lm::{minimize, Bounds, LmConfig};
use super::{canonical, unzip3, FitError, FitResult, Point};

/// `offset + amplitude · (Γ/2)² / ((x − center)² + (Γ/2)²)`, parameters
/// `[center, fwhm, amplitude, offset]`.
pub fn lorentzian_model(x: &f64, p: &[f64], grad: &mut [f64]) -> f64 {
    let (c, w, a, off) = (p[0], p[1], p[2], p[3]);
    let h = 0.5 * w;
    let u = x - c;
    let d = u * u + h * h;
    let l = h * h / d;
    grad[0] = a * 2.0 * u * h * h / (d * d);
    grad[1] = a * h * u * u / (d * d);
    grad[2] = l;
    grad[3] = 1.0;
    off + a * l
}

/// Fits `(detuning, rate, sigma)` points.
pub fn fit_lorentzian(points: &[Point]) -> Result<FitResult, FitError> {
    let pts = canonical(points)?;
    if pts.len() < 5 {
        return Err(FitError::InsufficientData(format!(
            "{} points, need at least 5",
            pts.len()
        )));
    }
    let off0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let peak = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let a0 = peak - off0;
    if !(a0 > 0.0) {
        return Err(FitError::InsufficientData(
            "no peak above the baseline".into(),
        ));
    }
    let (sw, swx) = pts.iter().fold((0.0, 0.0), |(s, sx), p| {
        (s + (p.1 - off0), sx + (p.1 - off0) * p.0)
    });
    let c0 = swx / sw;
    let above: Vec<f64> = pts
        .iter()
        .filter(|p| p.1 - off0 >= 0.5 * a0)
        .map(|p| p.0)
        .collect();
    let spacing = pts
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let w0 = (above.last().unwrap() - above[0]).max(spacing);
    let span = pts.last().unwrap().0 - pts[0].0;
    if span < 2.0 * w0 {
        return Err(FitError::InsufficientData(format!(
            "points span {span}, less than twice the width {w0}"
        )));
    }
    let (xs, ys, ss) = unzip3(&pts);
    let bounds = Bounds::unbounded(4).set(1, 1e-9 * w0, f64::INFINITY);
    let out = minimize(
        &xs,
        &ys,
        &ss,
        &[c0, w0, a0, off0],
        &bounds,
        lorentzian_model,
        &LmConfig::default(),
        None,
    )?;
    if span < 2.0 * out.params[1] {
        return Err(FitError::InsufficientData(format!(
            "points span {span}, less than twice the fitted width {}",
            out.params[1]
        )));
    }
    Ok(FitResult::from_outcome(
        &["center", "fwhm", "amplitude", "offset"],
        &out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::testutil::check_gradient;
    use crate::photophysics::excitation_lineshape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn line(center: f64, fwhm: f64, amp: f64, off: f64) -> Vec<Point> {
        let mut g = [0.0; 4];
        (-40..=40)
            .map(|i| {
                let x = center + 4.0 * i as f64;
                let y = lorentzian_model(&x, &[center, fwhm, amp, off], &mut g);
                (x, y, y.max(1.0).sqrt())
            })
            .collect()
    }

    #[test]
    fn noiseless_round_trip() {
        let r = fit_lorentzian(&line(12.5, 37.0, 5e4, 300.0)).unwrap();
        for (name, truth) in [
            ("center", 12.5),
            ("fwhm", 37.0),
            ("amplitude", 5e4),
            ("offset", 300.0),
        ] {
            assert!((r.value(name) / truth - 1.0).abs() < 1e-6, "{name}: {r}");
        }
    }

    #[test]
    fn symmetric_data_centers_on_symmetry_point() {
        let r = fit_lorentzian(&line(0.0, 37.0, 1e3, 10.0)).unwrap();
        assert!(r.value("center").abs() < 1e-9, "{r}");
    }

    #[test]
    fn reorder_invariance() {
        let mut pts = line(3.0, 30.0, 1e3, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in pts.iter_mut() {
            p.1 += rng.random_range(-10.0..10.0);
        }
        let a = fit_lorentzian(&pts).unwrap();
        pts.reverse();
        pts.rotate_left(17);
        assert_eq!(fit_lorentzian(&pts).unwrap(), a);
    }

    #[test]
    fn shot_noise_scan_shows_power_broadening() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Point> = (-60..=60)
            .map(|i| {
                let d = 2.0 * i as f64;
                let mean = 2e4 * excitation_lineshape(d, 35.4, 0.01).unwrap() + 50.0;
                let n = Poisson::new(mean).unwrap().sample(&mut rng);
                (d, n, n.max(1.0).sqrt())
            })
            .collect();
        let r = fit_lorentzian(&pts).unwrap();
        assert!((r.value("fwhm") - 35.6).abs() < 1.0, "{r}");
    }

    #[test]
    fn positive_width_enforced_and_narrow_span_rejected() {
        let narrow: Vec<Point> = line(0.0, 37.0, 1e3, 0.0)
            .into_iter()
            .filter(|p| p.0.abs() < 20.0)
            .collect();
        assert!(matches!(
            fit_lorentzian(&narrow),
            Err(FitError::InsufficientData(_))
        ));
        let r = fit_lorentzian(&line(0.0, 8.0, 1e3, 0.0)).unwrap();
        assert!(r.value("fwhm") > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let p = [
                rng.random_range(-50.0..50.0),
                rng.random_range(1.0..100.0),
                rng.random_range(1.0..1e5),
                rng.random_range(0.0..100.0),
            ];
            check_gradient(lorentzian_model, &rng.random_range(-200.0..200.0), &p);
        }
    }
}
