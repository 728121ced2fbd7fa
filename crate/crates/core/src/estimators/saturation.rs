use super::lm::{minimize, Bounds, LmConfig};
use super::{canonical, unzip3, FitError, FitResult, Point};

/// `S(P) = s_inf · P / (P + p_sat)` with gradient in `[s_inf, p_sat]`.
pub fn saturation_model(power: &f64, p: &[f64], grad: &mut [f64]) -> f64 {
    let (s_inf, p_sat) = (p[0], p[1]);
    let d = power + p_sat;
    grad[0] = power / d;
    grad[1] = -s_inf * power / (d * d);
    s_inf * power / d
}

/// Fits `(power mW, rate, sigma)` points; returns `s_inf` and `p_sat`.
pub fn fit_saturation(points: &[Point]) -> Result<FitResult, FitError> {
    let pts = canonical(points)?;
    if pts.len() < 3 {
        return Err(FitError::InsufficientData(format!(
            "{} points, need at least 3",
            pts.len()
        )));
    }
    if pts.iter().any(|p| p.0 < 0.0) {
        return Err(FitError::Invalid("negative excitation power".into()));
    }
    let max_rate = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if !(max_rate > 0.0) {
        return Err(FitError::InsufficientData("no positive rates".into()));
    }
    let s0 = 1.2 * max_rate;
    let half = 0.5 * s0;
    // first crossing of half the asymptote, linearly interpolated
    let p_sat0 = pts
        .windows(2)
        .find(|w| w[0].1 < half && w[1].1 >= half)
        .map(|w| w[0].0 + (half - w[0].1) * (w[1].0 - w[0].0) / (w[1].1 - w[0].1))
        .ok_or_else(|| {
            FitError::InsufficientData(
                "points do not span the saturation power (no half-maximum crossing)".into(),
            )
        })?;
    let p_sat0 = if p_sat0 > 0.0 {
        p_sat0
    } else {
        pts.iter().map(|p| p.0).find(|&x| x > 0.0).unwrap_or(1.0)
    };
    let (xs, ys, ss) = unzip3(&pts);
    let bounds =
        Bounds::unbounded(2)
            .set(0, 1e-9 * s0, f64::INFINITY)
            .set(1, 1e-9 * p_sat0, f64::INFINITY);
    let out = minimize(
        &xs,
        &ys,
        &ss,
        &[s0, p_sat0],
        &bounds,
        saturation_model,
        &LmConfig::default(),
        None,
    )?;
    Ok(FitResult::from_outcome(&["s_inf", "p_sat"], &out))
}
