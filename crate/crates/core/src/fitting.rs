//! Least-squares log-log slope fitting shared by the exponent-measuring
//! operations.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("abscissae must not be all equal")]
    DegenerateAbscissae,
    #[error("nonpositive value cannot be log-fitted: {0}")]
    NonPositive(f64),
    #[error("nonpositive weight: {0}")]
    BadWeight(f64),
}

/// Weighted least-squares line fit result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope under the supplied weights, taken as
    /// inverse variances: sqrt(1/Sxx).
    pub slope_stderr: f64,
    /// Weighted coefficient of determination; 1 for a constant target.
    pub r2: f64,
}

/// Weighted least squares of y on x with weights w_i = 1/Var(y_i).
pub fn weighted_line_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<LineFit, FitError> {
    let n = xs.len();
    if n < 2 || ys.len() != n || ws.len() != n {
        return Err(FitError::TooFewPoints { need: 2, got: n.min(ys.len()).min(ws.len()) });
    }
    for &w in ws {
        if !(w > 0.0) || !w.is_finite() {
            return Err(FitError::BadWeight(w));
        }
    }
    let sw: f64 = ws.iter().sum();
    let xbar = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ybar = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - xbar;
        let dy = ys[i] - ybar;
        sxx += ws[i] * dx * dx;
        sxy += ws[i] * dx * dy;
        syy += ws[i] * dy * dy;
    }
    if sxx == 0.0 {
        return Err(FitError::DegenerateAbscissae);
    }
    let slope = sxy / sxx;
    let ss_res = syy - slope * sxy;
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(LineFit {
        slope,
        intercept: ybar - slope * xbar,
        slope_stderr: (1.0 / sxx).sqrt(),
        r2,
    })
}

/// Unweighted log-log slope: fits log y = a + q log x, returns q.
///
/// Exact power laws are recovered to machine precision; used by the algebra
/// side where the inputs are noise-free.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64, FitError> {
    if points.len() < 2 {
        return Err(FitError::TooFewPoints { need: 2, got: points.len() });
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(x, y) in points {
        if !(x > 0.0) {
            return Err(FitError::NonPositive(x));
        }
        if !(y > 0.0) {
            return Err(FitError::NonPositive(y));
        }
        xs.push(x.ln());
        ys.push(y.ln());
    }
    let ws = vec![1.0; xs.len()];
    Ok(weighted_line_fit(&xs, &ys, &ws)?.slope)
}

/// Log-log slope when the caller has already taken logarithms.
pub fn slope_of_logs(log_xs: &[f64], log_ys: &[f64]) -> Result<f64, FitError> {
    let ws = vec![1.0; log_xs.len()];
    Ok(weighted_line_fit(log_xs, log_ys, &ws)?.slope)
}
