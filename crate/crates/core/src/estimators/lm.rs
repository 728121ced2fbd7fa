//! Box-constrained Levenberg–Marquardt for weighted least squares.
//!
//! Minimizes `χ² = Σ ((y_i − f(x_i; p)) / σ_i)²`. Trial points are projected
//! onto the parameter box and a step is accepted only if χ² strictly
//! decreases. Converges when both the relative step `‖Δp‖/‖p‖` and the
//! scaled projected gradient `max_j |(Jᵀr)_j| / (‖J_j‖·‖y/σ‖)` fall below
//! the tolerance.

use super::FitError;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iterations: 200,
            tolerance: 1e-9,
        }
    }
}

/// Closed parameter box.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Bounds {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn set(mut self, j: usize, lower: f64, upper: f64) -> Self {
        self.lower[j] = lower;
        self.upper[j] = upper;
        self
    }

    pub fn project(&self, p: &mut [f64]) {
        for ((x, &lo), &hi) in p.iter_mut().zip(&self.lower).zip(&self.upper) {
            *x = x.clamp(lo, hi);
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((&x, &lo), &hi)| x >= lo && x <= hi)
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub n_points: usize,
    pub n_iterations: usize,
    pub converged: bool,
    pub gradient: f64,
}

/// Per-iteration observer: (iteration, accepted parameters, χ²).
pub type Trace<'a> = &'a mut dyn FnMut(usize, &[f64], f64);

struct Eval {
    r: DVector<f64>,
    j: DMatrix<f64>,
    chi2: f64,
}

fn evaluate<X, F>(xs: &[X], ys: &[f64], sigmas: &[f64], p: &[f64], model: &F) -> Option<Eval>
where
    F: Fn(&X, &[f64], &mut [f64]) -> f64,
{
    let (n, m) = (xs.len(), p.len());
    let mut r = DVector::zeros(n);
    let mut j = DMatrix::zeros(n, m);
    let mut grad = vec![0.0; m];
    for i in 0..n {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let f = model(&xs[i], p, &mut grad);
        let w = 1.0 / sigmas[i];
        r[i] = (ys[i] - f) * w;
        for k in 0..m {
            j[(i, k)] = grad[k] * w;
        }
    }
    let chi2 = r.norm_squared();
    (chi2.is_finite() && j.iter().all(|v| v.is_finite())).then_some(Eval { r, j, chi2 })
}

/// Projected, scaled gradient of χ²/2.
fn gradient_measure(e: &Eval, p: &[f64], bounds: &Bounds, y_scale: f64) -> f64 {
    let g = e.j.transpose() * &e.r;
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        // g_k > 0 asks p_k to increase
        let blocked =
            (g[k] > 0.0 && p[k] >= bounds.upper[k]) || (g[k] < 0.0 && p[k] <= bounds.lower[k]);
        if blocked {
            continue;
        }
        let col = e.j.column(k).norm();
        if col > 0.0 {
            worst = worst.max(g[k].abs() / (col * y_scale));
        }
    }
    worst
}

fn covariance(j: &DMatrix<f64>) -> DMatrix<f64> {
    let a = j.transpose() * j;
    let m = a.nrows();
    a.clone().try_inverse().unwrap_or_else(|| {
        a.pseudo_inverse(1e-14)
            .unwrap_or_else(|_| DMatrix::from_element(m, m, f64::NAN))
    })
}

fn solve(a: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    match a.clone().cholesky() {
        Some(c) => Some(c.solve(g)),
        None => a.clone().lu().solve(g),
    }
}

/// Damped step with parameters held fixed when they sit on a bound and the
/// step would push them outward.
fn constrained_step(
    damped: &DMatrix<f64>,
    g: &DVector<f64>,
    p: &[f64],
    bounds: &Bounds,
) -> Option<DVector<f64>> {
    let m = p.len();
    let at_lower = |k: usize| p[k] <= bounds.lower[k];
    let at_upper = |k: usize| p[k] >= bounds.upper[k];
    let mut fixed: Vec<bool> = (0..m)
        .map(|k| (at_lower(k) && g[k] < 0.0) || (at_upper(k) && g[k] > 0.0))
        .collect();
    for _ in 0..=m {
        let mut a = damped.clone();
        let mut rhs = g.clone();
        for k in (0..m).filter(|&k| fixed[k]) {
            a.row_mut(k).fill(0.0);
            a.column_mut(k).fill(0.0);
            a[(k, k)] = 1.0;
            rhs[k] = 0.0;
        }
        let step = solve(&a, &rhs)?;
        let outward: Vec<usize> = (0..m)
            .filter(|&k| {
                !fixed[k] && ((at_lower(k) && step[k] < 0.0) || (at_upper(k) && step[k] > 0.0))
            })
            .collect();
        if outward.is_empty() {
            return Some(step);
        }
        for k in outward {
            fixed[k] = true;
        }
    }
    None
}

/// Runs the minimization from `p0` (projected onto `bounds` first).
#[allow(clippy::too_many_arguments)]
pub fn minimize<X, F>(
    xs: &[X],
    ys: &[f64],
    sigmas: &[f64],
    p0: &[f64],
    bounds: &Bounds,
    model: F,
    config: &LmConfig,
    mut trace: Option<Trace<'_>>,
) -> Result<LmOutcome, FitError>
where
    F: Fn(&X, &[f64], &mut [f64]) -> f64,
{
    let (n, m) = (xs.len(), p0.len());
    if ys.len() != n || sigmas.len() != n {
        return Err(FitError::Invalid("x, y and sigma lengths differ".into()));
    }
    if bounds.lower.len() != m || bounds.upper.len() != m {
        return Err(FitError::Invalid(
            "bounds do not match the parameter count".into(),
        ));
    }
    if let Some(i) = sigmas.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(FitError::Invalid(format!(
            "sigma[{i}] must be positive and finite"
        )));
    }
    if n < m {
        return Err(FitError::InsufficientData(format!(
            "{n} points for {m} parameters"
        )));
    }
    let y_scale = ys
        .iter()
        .zip(sigmas)
        .map(|(y, s)| (y / s).powi(2))
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);

    let mut p = p0.to_vec();
    bounds.project(&mut p);
    let mut cur = evaluate(xs, ys, sigmas, &p, &model).ok_or_else(|| {
        FitError::Invalid(format!("model is not finite at the initial point {p:?}"))
    })?;
    let mut lambda = 1e-3;
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        let grad = gradient_measure(&cur, &p, bounds, y_scale);
        if grad < config.tolerance && (last_step < config.tolerance || cur.chi2 == 0.0) {
            converged = true;
            break;
        }
        iterations += 1;
        let a = cur.j.transpose() * &cur.j;
        let g = cur.j.transpose() * &cur.r;
        let max_diag = (0..m).map(|k| a[(k, k)]).fold(0.0, f64::max);
        let mut accepted = false;
        while lambda <= 1e16 {
            let mut damped = a.clone();
            for k in 0..m {
                damped[(k, k)] += lambda * a[(k, k)].max(1e-12 * max_diag).max(f64::MIN_POSITIVE);
            }
            let Some(step) = constrained_step(&damped, &g, &p, bounds) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            bounds.project(&mut trial);
            assert!(
                bounds.contains(&trial),
                "projected iterate left its domain: {trial:?}"
            );
            match evaluate(xs, ys, sigmas, &trial, &model) {
                Some(e) if e.chi2 < cur.chi2 => {
                    let dp: f64 = trial
                        .iter()
                        .zip(&p)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let pn: f64 = trial.iter().map(|v| v * v).sum::<f64>().sqrt();
                    last_step = if pn > 0.0 { dp / pn } else { dp };
                    p = trial;
                    cur = e;
                    lambda = (lambda / 3.0).max(1e-15);
                    accepted = true;
                    break;
                }
                _ => lambda *= 4.0,
            }
        }
        if let Some(t) = trace.as_mut() {
            t(iterations, &p, cur.chi2);
        }
        if !accepted {
            // no descent direction left at machine precision
            converged = gradient_measure(&cur, &p, bounds, y_scale) < config.tolerance;
            break;
        }
    }
    if !converged && iterations >= config.max_iterations {
        let grad = gradient_measure(&cur, &p, bounds, y_scale);
        converged = grad < config.tolerance && last_step < config.tolerance;
    }
    let gradient = gradient_measure(&cur, &p, bounds, y_scale);
    if !converged {
        return Err(FitError::NotConverged {
            iterations,
            gradient,
            last: p,
        });
    }
    Ok(LmOutcome {
        covariance: covariance(&cur.j),
        params: p,
        chi2: cur.chi2,
        n_points: n,
        n_iterations: iterations,
        converged,
        gradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(x: &f64, p: &[f64], g: &mut [f64]) -> f64 {
        g[0] = 1.0;
        g[1] = *x;
        p[0] + p[1] * x
    }

    #[test]
    fn linear_model_solves_exactly() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let out = minimize(
            &xs,
            &ys,
            &vec![1.0; 10],
            &[0.0, 0.0],
            &Bounds::unbounded(2),
            line,
            &LmConfig::default(),
            None,
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.params[0] - 2.0).abs() < 1e-9 && (out.params[1] + 0.5).abs() < 1e-9);
        assert!(out.chi2 < 1e-20);
    }

    #[test]
    fn bounds_hold_on_every_iterate() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -1.0 + 3.0 * x).collect();
        let bounds = Bounds::unbounded(2).set(0, 0.0, 10.0);
        let mut chi = Vec::new();
        let mut trace = |_: usize, p: &[f64], c: f64| {
            assert!(p[0] >= 0.0);
            chi.push(c);
        };
        let out = minimize(
            &xs,
            &ys,
            &vec![1.0; 10],
            &[5.0, 0.0],
            &bounds,
            line,
            &LmConfig::default(),
            Some(&mut trace),
        )
        .unwrap();
        assert_eq!(out.params[0], 0.0);
        assert!(chi.windows(2).all(|w| w[1] <= w[0]), "χ² must not increase");
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let xs: Vec<f64> = (1..20).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).exp()).collect();
        let expo = |x: &f64, p: &[f64], g: &mut [f64]| {
            let e = (p[0] * x).exp();
            g[0] = x * e;
            e
        };
        let cfg = LmConfig {
            max_iterations: 2,
            tolerance: 1e-9,
        };
        match minimize(
            &xs,
            &ys,
            &vec![1.0; xs.len()],
            &[0.0],
            &Bounds::unbounded(1),
            expo,
            &cfg,
            None,
        ) {
            Err(FitError::NotConverged {
                iterations, last, ..
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(last.len(), 1);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_sigma() {
        let r = minimize(
            &[1.0, 2.0],
            &[1.0, 2.0],
            &[1.0, 0.0],
            &[0.0, 0.0],
            &Bounds::unbounded(2),
            line,
            &LmConfig::default(),
            None,
        );
        assert!(matches!(r, Err(FitError::Invalid(_))));
    }
}
