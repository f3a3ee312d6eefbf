//! Coupled multi-tip driving dynamics: the drift induced by a pluggable
//! partition function, the product-measure weight with finite-difference
//! Schwarzian factors, its E[M_t] = M_0 drift test, and the collapse scaling
//! of the pairwise partition function.

use std::fmt;
use std::io;

use num::complex::Complex64;
use num::Zero;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fitting::{self, FitError};
use crate::kac::{self, KacLabel, Kappa};
use crate::loewner::{elementary_map, inverse_elementary_map, Step};
use crate::montecarlo::trial_rng;
use crate::virasoro::apply_d2_twopoint;
use crate::{int, ratio, Rational};

#[derive(Debug, Error)]
pub enum MultiError {
    #[error("domain: {0}")]
    Domain(String),
    #[error("tips collided at t = {t}")]
    Collision { t: f64 },
    #[error("stencil left the chamber at step {step}")]
    StencilRejected { step: usize },
    #[error("derivative magnitude {0} is below tolerance")]
    DegenerateDerivative(f64),
    #[error("{rejected}/{paths} paths rejected, over the 20% instability budget")]
    Instability { rejected: usize, paths: usize },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Finite-difference spacing as a fraction of the smallest tip gap (used by
/// the real-line operators, e.g. the null-integrand cofactor).
const SPACING_RATIO: f64 = 1e-3;
/// Below this the finite-difference first derivative counts as degenerate.
const DERIV_TOL: f64 = 1e-12;
/// A chart derivative this small means the tip image has pinched off.
const DERIV_FLOOR: f64 = 1e-8;
const MAX_HALVINGS: u32 = 12;

/// Samples on the upper semicircle used to extract Taylor coefficients of a
/// conjugated chart. Twenty-four points resolve modes up to order three with
/// aliasing error (rho/R)^(2*24) at analyticity radius R.
const CONTOUR_POINTS: usize = 24;
/// Preferred contour radius as a fraction of the corridor to the nearest
/// neighbouring weld segment.
const CONTOUR_RADIUS_RATIO: f64 = 0.45;
/// The contour may grow to at most this fraction of the corridor before the
/// step is rejected: beyond it the aliasing factor (rho/R)^(2M) of the
/// coefficient extraction is no longer negligible.
const CONTOUR_MAX_RATIO: f64 = 0.75;
/// In chart coordinates the swept hull welds back onto a real segment, and
/// the discrete chain's defects hug that segment at the per-slit height
/// sqrt((kappa + 4) dt). The contour must arc over the segment with at least
/// this many multiples of that height to spare.
const DEFECT_CLEARANCE: f64 = 5.0;

/// Best rational approximation with denominator at most 10^6 (continued
/// fractions). Pins float inputs like 8/3 back onto the exact values the
/// closed forms need; falls back to the exact binary expansion when no small
/// denominator is close enough.
pub fn rationalize_kappa(kappa: f64) -> Result<Kappa, MultiError> {
    if !kappa.is_finite() || !(kappa > 0.0) {
        return Err(MultiError::Domain(format!(
            "kappa must be positive and finite, got {kappa}"
        )));
    }
    let (p, q) = best_rational(kappa, 1_000_000);
    let approx = p as f64 / q as f64;
    let value = if (approx - kappa).abs() <= 1e-9 * kappa.max(1.0) {
        ratio(p, q)
    } else {
        Rational::from_float(kappa).unwrap()
    };
    Kappa::new(value).map_err(|e| MultiError::Domain(e.to_string()))
}

fn best_rational(x: f64, max_den: i64) -> (i64, i64) {
    let (mut p0, mut q0): (i128, i128) = (1, 0);
    let (mut p1, mut q1): (i128, i128) = (x.floor() as i128, 1);
    let mut frac = x - x.floor();
    for _ in 0..64 {
        if !(frac > f64::EPSILON) {
            break;
        }
        let r = 1.0 / frac;
        let a = r.floor();
        if !(a >= 1.0) || a > 1e18 {
            break;
        }
        let (p2, q2) = (a as i128 * p1 + p0, a as i128 * q1 + q0);
        if q2 > max_den as i128 {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        frac = r - a;
        if (x - p1 as f64 / q1 as f64).abs() <= 1e-12 * x.abs().max(1.0) {
            break;
        }
    }
    (p1 as i64, q1 as i64)
}

/// Partition function over the ordered chamber x_1 < ... < x_m.
pub enum PartitionSpec {
    /// Z = prod_{i<j} (x_j - x_i)^alpha; log Z is finite on the open chamber.
    PairwisePower { alpha: Rational },
    /// Caller-supplied log Z and its gradient.
    UserTable {
        log_z: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        grad_log_z: Box<dyn Fn(&[f64], usize) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for PartitionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionSpec::PairwisePower { alpha } => {
                f.debug_struct("PairwisePower").field("alpha", alpha).finish()
            }
            PartitionSpec::UserTable { .. } => f.write_str("UserTable { .. }"),
        }
    }
}

impl PartitionSpec {
    /// The weight-matched default alpha = 2/kappa.
    pub fn pairwise_sle(kappa: &Kappa) -> Self {
        PartitionSpec::PairwisePower { alpha: int(2) / kappa.value() }
    }

    pub fn log_z(&self, x: &[f64]) -> f64 {
        match self {
            PartitionSpec::PairwisePower { alpha } => {
                let a = kac::rational_to_f64(alpha);
                let mut s = 0.0;
                for i in 0..x.len() {
                    for j in (i + 1)..x.len() {
                        s += (x[j] - x[i]).ln();
                    }
                }
                a * s
            }
            PartitionSpec::UserTable { log_z, .. } => log_z(x),
        }
    }

    pub fn grad_log_z(&self, x: &[f64], i: usize) -> f64 {
        match self {
            PartitionSpec::PairwisePower { alpha } => {
                let a = kac::rational_to_f64(alpha);
                let mut s = 0.0;
                for k in 0..x.len() {
                    if k != i {
                        s += 1.0 / (x[i] - x[k]);
                    }
                }
                a * s
            }
            PartitionSpec::UserTable { grad_log_z, .. } => grad_log_z(x, i),
        }
    }
}

/// True when every pair of speeds is equal or dual (product 16), cross
/// checked by requiring the rationalized central charges to coincide exactly.
pub fn check_kappa_relation(kappas: &[f64]) -> bool {
    for &k in kappas {
        if !k.is_finite() || !(k > 0.0) {
            return false;
        }
    }
    let tol = 1e-9;
    let mut pairs_ok = true;
    for i in 0..kappas.len() {
        for j in (i + 1)..kappas.len() {
            let (ki, kj) = (kappas[i], kappas[j]);
            let equal = (ki - kj).abs() <= tol * ki.max(kj);
            let dual = (ki * kj - 16.0).abs() <= tol * 16.0;
            if !(equal || dual) {
                pairs_ok = false;
            }
        }
    }
    let mut charges = Vec::with_capacity(kappas.len());
    for &k in kappas {
        match rationalize_kappa(k) {
            Ok(kq) => charges.push(kac::central_charge(&kq)),
            Err(_) => return false,
        }
    }
    let charges_ok = charges.windows(2).all(|w| w[0] == w[1]);
    pairs_ok && charges_ok
}

fn strictly_increasing(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] < w[1])
}

fn min_gap(x: &[f64]) -> f64 {
    x.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Joint driving state: m tips in the ordered chamber, one speed and one
/// growth rate per tip.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiState {
    pub x: Vec<f64>,
    pub kappas: Vec<f64>,
    pub a: Vec<f64>,
    pub t: f64,
}

impl MultiState {
    pub fn new(x: Vec<f64>, kappas: Vec<f64>, a: Vec<f64>, t: f64) -> Result<Self, MultiError> {
        let m = x.len();
        if m == 0 || kappas.len() != m || a.len() != m {
            return Err(MultiError::Domain("x, kappas, a must share a nonzero length".into()));
        }
        if x.iter().any(|v| !v.is_finite()) || !strictly_increasing(&x) {
            return Err(MultiError::Domain("tips must be finite and strictly increasing".into()));
        }
        if !check_kappa_relation(&kappas) {
            return Err(MultiError::Domain("speeds must pairwise agree or be dual".into()));
        }
        if a.iter().any(|v| !v.is_finite() || *v < 0.0) || a.iter().sum::<f64>() <= 0.0 {
            return Err(MultiError::Domain(
                "growth rates must be finite, nonnegative, not all zero".into(),
            ));
        }
        if !t.is_finite() {
            return Err(MultiError::Domain("time must be finite".into()));
        }
        Ok(MultiState { x, kappas, a, t })
    }

    pub fn m(&self) -> usize {
        self.x.len()
    }
}

/// Drift of tip i: kappa_i a_i d/dx_i log Z plus the pairwise interaction
/// sum over k of 2 a_i / (x_i - x_k).
pub fn drift(state: &MultiState, z: &PartitionSpec, i: usize) -> Result<f64, MultiError> {
    let m = state.m();
    if i >= m {
        return Err(MultiError::Domain(format!("tip index {i} out of range for m = {m}")));
    }
    if !strictly_increasing(&state.x) {
        return Err(MultiError::Collision { t: state.t });
    }
    let grad = z.grad_log_z(&state.x, i);
    let mut interaction = 0.0;
    for k in 0..m {
        if k != i {
            interaction += 2.0 * state.a[i] / (state.x[i] - state.x[k]);
        }
    }
    Ok(state.kappas[i] * state.a[i] * grad + interaction)
}

/// One Euler step of the coupled SDE in the rescaled times dt_i = a_i dt.
///
/// If the ordering would flip, the step is retried as two half steps with
/// the same normals scaled by 1/sqrt(2): the total Brownian increment is
/// preserved while the drift refreshes midway. After MAX_HALVINGS the flip
/// is reported as a collision, a valid physical outcome.
pub fn step_sde(
    state: &MultiState,
    z: &PartitionSpec,
    dt: f64,
    noise: &[f64],
) -> Result<MultiState, MultiError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(MultiError::Domain(format!("dt must be positive and finite, got {dt}")));
    }
    if noise.len() != state.m() || noise.iter().any(|v| !v.is_finite()) {
        return Err(MultiError::Domain("need one finite normal per tip".into()));
    }
    let mut out = state.clone();
    advance(&mut out, z, dt, noise, MAX_HALVINGS)?;
    Ok(out)
}

fn advance(
    state: &mut MultiState,
    z: &PartitionSpec,
    dt: f64,
    noise: &[f64],
    depth: u32,
) -> Result<(), MultiError> {
    let m = state.m();
    let mut cand = vec![0.0; m];
    for i in 0..m {
        let d = drift(state, z, i)?;
        cand[i] =
            state.x[i] + (state.kappas[i] * state.a[i] * dt).sqrt() * noise[i] + d * dt;
    }
    if cand.iter().all(|v| v.is_finite()) && strictly_increasing(&cand) {
        state.x = cand;
        state.t += dt;
        return Ok(());
    }
    if depth == 0 {
        return Err(MultiError::Collision { t: state.t });
    }
    let scaled: Vec<f64> = noise.iter().map(|n| n / std::f64::consts::SQRT_2).collect();
    advance(state, z, dt / 2.0, &scaled, depth - 1)?;
    advance(state, z, dt / 2.0, &scaled, depth - 1)
}

fn five_point(f: &[Complex64; 5], h: f64) -> (Complex64, Complex64, Complex64) {
    let fp = (f[0] - 8.0 * f[1] + 8.0 * f[3] - f[4]) / (12.0 * h);
    let fpp = (-f[0] + 16.0 * f[1] - 30.0 * f[2] + 16.0 * f[3] - f[4]) / (12.0 * h * h);
    let fppp = (f[4] - 2.0 * f[3] + 2.0 * f[1] - f[0]) / (2.0 * h * h * h);
    (fp, fpp, fppp)
}

/// Schwarzian derivative f'''/f' - (3/2)(f''/f')^2 from five equispaced
/// samples f(x + j spacing), j = -2..2; truncation error O(spacing^2).
pub fn schwarzian_fd(samples: &[f64; 5], x: f64, spacing: f64) -> Result<f64, MultiError> {
    if !x.is_finite() || !(spacing > 0.0) || !spacing.is_finite() {
        return Err(MultiError::Domain("need a finite center and positive spacing".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(MultiError::Domain("stencil values must be finite".into()));
    }
    let cf = samples.map(|v| Complex64::new(v, 0.0));
    let (fp, fpp, fppp) = five_point(&cf, spacing);
    if fp.norm() < DERIV_TOL {
        return Err(MultiError::DegenerateDerivative(fp.norm()));
    }
    let s = fppp / fp - 1.5 * (fpp / fp) * (fpp / fp);
    Ok(s.re)
}

/// Orientation of the weight's Schwarzian factor exp(sign (c/6) int S H ds).
///
/// Bounded (sign -1) keeps the weight inside the envelope 0 <= M <= (H')^h
/// for c <= 0 and is the default; Flipped is kept so drift-test runs can
/// arbitrate the two orientations empirically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SchwarzianSign {
    #[default]
    Bounded,
    Flipped,
}

impl SchwarzianSign {
    fn factor(self) -> f64 {
        match self {
            SchwarzianSign::Bounded => -1.0,
            SchwarzianSign::Flipped => 1.0,
        }
    }
}

/// Independent single-curve driving samples over a shared grid, one list per
/// curve, each curve in its own chart at unit growth rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductRun {
    pub times: Vec<f64>,
    pub w: Vec<Vec<f64>>,
}

impl ProductRun {
    pub fn new(times: Vec<f64>, w: Vec<Vec<f64>>) -> Result<Self, MultiError> {
        if times.is_empty() || times[0] != 0.0 {
            return Err(MultiError::Domain("grid must start at t = 0".into()));
        }
        if times.iter().any(|v| !v.is_finite()) || !strictly_increasing(&times) {
            return Err(MultiError::Domain("grid must be finite and strictly increasing".into()));
        }
        if w.len() < 2 {
            return Err(MultiError::Domain("need at least two curves".into()));
        }
        for wi in &w {
            if wi.len() != times.len() || wi.iter().any(|v| !v.is_finite()) {
                return Err(MultiError::Domain(
                    "each curve needs one finite driver value per grid point".into(),
                ));
            }
        }
        let seeds: Vec<f64> = w.iter().map(|wi| wi[0]).collect();
        if !strictly_increasing(&seeds) {
            return Err(MultiError::Domain("seeds must be strictly increasing".into()));
        }
        Ok(ProductRun { times, w })
    }

    /// Unweighted product measure on a uniform grid: every curve drives with
    /// its own sqrt(kappa) Brownian motion. Draws interleave curve-major per
    /// step so the stream is reproducible.
    pub fn sample(
        kappa: f64,
        seeds: &[f64],
        t_end: f64,
        steps: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, MultiError> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(MultiError::Domain("kappa must be positive and finite".into()));
        }
        if !(t_end > 0.0) || !t_end.is_finite() || steps == 0 {
            return Err(MultiError::Domain("need t_end > 0 and at least one step".into()));
        }
        let dt = t_end / steps as f64;
        let sig = (kappa * dt).sqrt();
        let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        let mut w: Vec<Vec<f64>> = seeds
            .iter()
            .map(|&s| {
                let mut v = Vec::with_capacity(steps + 1);
                v.push(s);
                v
            })
            .collect();
        for k in 0..steps {
            for wi in w.iter_mut() {
                let g: f64 = StandardNormal.sample(rng);
                let next = wi[k] + sig * g;
                wi.push(next);
            }
        }
        ProductRun::new(times, w)
    }
}

/// Running weight over the grid with its per-factor logs; the partition
/// ratio is folded into M itself and recoverable as log M minus the listed
/// factors.
#[derive(Clone, Debug, PartialEq)]
pub struct MartingalePath {
    pub times: Vec<f64>,
    pub m: Vec<f64>,
    pub log_deriv: Vec<f64>,
    pub log_schwarz: Vec<f64>,
    pub log_null: Vec<f64>,
}

impl MartingalePath {
    /// CSV export with header "t,M,logfac_deriv,logfac_schwarz,logfac_null".
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), MultiError> {
        #[derive(Serialize)]
        struct Row {
            t: f64,
            #[serde(rename = "M")]
            m: f64,
            logfac_deriv: f64,
            logfac_schwarz: f64,
            logfac_null: f64,
        }
        let mut wtr = csv::Writer::from_writer(w);
        for k in 0..self.times.len() {
            wtr.serialize(Row {
                t: self.times[k],
                m: self.m[k],
                logfac_deriv: self.log_deriv[k],
                logfac_schwarz: self.log_schwarz[k],
                logfac_null: self.log_null[k],
            })
            .map_err(|e| MultiError::Csv(e.to_string()))?;
        }
        wtr.flush().map_err(|e| MultiError::Csv(e.to_string()))
    }
}

/// (1/Z) D2 Z at tip i: the level-two cofactor of the partition function,
/// with the second log-derivative taken by central differences of the
/// supplied gradient.
pub fn null_cofactor(
    z: &PartitionSpec,
    x: &[f64],
    i: usize,
    kappa: f64,
    h: f64,
    spacing: f64,
) -> f64 {
    let g_i = z.grad_log_z(x, i);
    let mut xp = x.to_vec();
    xp[i] += spacing;
    let mut xm = x.to_vec();
    xm[i] -= spacing;
    let gpp = (z.grad_log_z(&xp, i) - z.grad_log_z(&xm, i)) / (2.0 * spacing);
    // (1/Z) d^2_i Z = (d_i log Z)^2 + d^2_i log Z
    let d2 = g_i * g_i + gpp;
    let mut rest = 0.0;
    for k in 0..x.len() {
        if k != i {
            let gap = x[k] - x[i];
            rest += h / (gap * gap) - z.grad_log_z(x, k) / gap;
        }
    }
    kappa / 2.0 * d2 - 2.0 * rest
}

/// Real segment a hull welds onto in the current chart. Pushing a real point
/// through one more slit map keeps it real unless it falls inside that
/// slit's base interval, in which case it lands on the slit and is absorbed
/// into the base; merging the new slit's own base interval afterwards keeps
/// the segment exact for a connected hull and a conservative cover otherwise.
#[derive(Clone, Copy, Debug)]
struct Weld {
    lo: f64,
    hi: f64,
}

/// Forward image of a real point under one slit map, with absorption: points
/// inside the base interval map to the base point.
fn weld_forward(u: f64, dt: f64, xi: f64) -> f64 {
    let v = u - xi;
    let b = 4.0 * dt;
    if v * v <= b {
        xi
    } else {
        xi + v.signum() * (v * v - b).sqrt()
    }
}

impl Weld {
    fn point(u: f64) -> Self {
        Weld { lo: u, hi: u }
    }

    /// Push the segment through one slit map.
    fn push(&mut self, dt: f64, xi: f64) {
        self.lo = weld_forward(self.lo, dt, xi);
        self.hi = weld_forward(self.hi, dt, xi);
    }

    /// Merge the base interval of a slit just grown at xi into the segment.
    fn absorb(&mut self, dt: f64, xi: f64) {
        let half = 2.0 * dt.sqrt();
        self.lo = self.lo.min(xi - half);
        self.hi = self.hi.max(xi + half);
    }
}

/// One chart evaluation: the tip image x, its derivative H', and the
/// Schwarzian S(H), extracted from contour samples of the conjugated chart.
struct ChartEval {
    x: f64,
    hp: f64,
    schwarzian: f64,
}

/// Evaluate the conjugated chart H = (joint chain) o (own chain)^-1 at the
/// own driving point w by Cauchy extraction on a semicircle of radius rho.
///
/// H is analytic in a full disc around w: the own chain's singularity at the
/// tip cancels against the joint chain (which welds this curve's boundary
/// back onto the real axis), and the nearest true singularity is the
/// neighbouring curve's branch cut, a chart gap away. H is also real on the
/// diameter, because both chains map that boundary stretch into the real
/// axis, so Schwarz reflection closes the circle: with midpoint nodes
/// theta_j on the upper half, c_k rho^k = (1/M) sum_j Re[H_j e^{-i k
/// theta_j}], and every Taylor coefficient comes out exactly real.
///
/// The discrete chains deviate from the continuum map only inside the swept
/// region near the tip (the "defect cloud"); the contour stays outside it,
/// where the compositions agree with the true chart, so the extraction never
/// touches the debris that defeats any tip-local finite-difference stencil.
fn eval_h_contour(
    own: &[Step],
    joint: &[Step],
    w: f64,
    rho: f64,
    step: usize,
) -> Result<ChartEval, MultiError> {
    let m = CONTOUR_POINTS;
    let mut acc = [0.0f64; 4];
    for j in 0..m {
        let theta = std::f64::consts::PI * (j as f64 + 0.5) / m as f64;
        let (sin_t, cos_t) = theta.sin_cos();
        let mut z = Complex64::new(w + rho * cos_t, rho * sin_t);
        for s in own.iter().rev() {
            z = inverse_elementary_map(s.dt, s.xi, z);
            if !z.re.is_finite() || !z.im.is_finite() || !(z.im > 0.0) {
                return Err(MultiError::StencilRejected { step });
            }
        }
        for s in joint {
            z = elementary_map(s.dt, s.xi, z);
            if !z.re.is_finite() || !z.im.is_finite() || !(z.im > 0.0) {
                return Err(MultiError::StencilRejected { step });
            }
        }
        for (k, slot) in acc.iter_mut().enumerate() {
            let phase = Complex64::from_polar(1.0, -(k as f64) * theta);
            *slot += (z * phase).re;
        }
    }
    let inv_m = 1.0 / m as f64;
    let c0 = acc[0] * inv_m;
    let c1 = acc[1] * inv_m / rho;
    let c2 = acc[2] * inv_m / (rho * rho);
    let c3 = acc[3] * inv_m / (rho * rho * rho);
    if !(c0.is_finite() && c1.is_finite() && c2.is_finite() && c3.is_finite()) {
        return Err(MultiError::StencilRejected { step });
    }
    let hp = c1;
    if !(hp > DERIV_FLOOR) {
        return Err(MultiError::StencilRejected { step });
    }
    // S(H) = H'''/H' - (3/2)(H''/H')^2 with H'' = 2 c2, H''' = 6 c3
    let r2 = 2.0 * c2 / c1;
    let s = 6.0 * c3 / c1 - 1.5 * r2 * r2;
    if !s.is_finite() {
        return Err(MultiError::StencilRejected { step });
    }
    Ok(ChartEval { x: c0, hp, schwarzian: s })
}

/// Weight path core; also returns the final summed Schwarzian time integral
/// for diagnostics.
fn weight_path(
    run: &ProductRun,
    kappa: f64,
    sign: SchwarzianSign,
) -> Result<(MartingalePath, f64), MultiError> {
    let kq = rationalize_kappa(kappa)?;
    if *kq.value() > ratio(8, 3) {
        return Err(MultiError::Domain("the bounded weight regime needs kappa <= 8/3".into()));
    }
    let label = KacLabel::new(1, 2).expect("static label");
    let h_rat = kac::kac_weight(&kq, label);
    let alpha = int(2) / kq.value();
    // exact per-run spot check: the level-two cofactor of the pairwise
    // power vanishes identically at h so the null factor is exp(0) for m = 2
    let cof = apply_d2_twopoint(&kq, &h_rat, &alpha);
    if !cof.is_zero() {
        return Err(MultiError::Domain(
            "level-two cofactor must vanish for the pairwise default".into(),
        ));
    }
    let h = kac::rational_to_f64(&h_rat);
    let c = kac::rational_to_f64(&kac::central_charge(&kq));
    let zspec = PartitionSpec::PairwisePower { alpha };

    let m = run.w.len();
    let n = run.times.len();
    let mut own: Vec<Vec<Step>> = vec![Vec::with_capacity(n - 1); m];
    let mut joint: Vec<Step> = Vec::with_capacity(m * (n - 1));
    // identity charts at t = 0
    let mut xs: Vec<f64> = run.w.iter().map(|wi| wi[0]).collect();
    let mut hps: Vec<f64> = vec![1.0; m];
    if !strictly_increasing(&xs) {
        return Err(MultiError::Domain("seeds must be strictly increasing".into()));
    }
    let log_z0 = zspec.log_z(&xs);

    let mut path = MartingalePath {
        times: vec![0.0],
        m: vec![1.0],
        log_deriv: vec![0.0],
        log_schwarz: vec![0.0],
        log_null: vec![0.0],
    };
    let mut schw_int = 0.0;
    let mut schw_prev = 0.0;
    let mut null_int = 0.0;
    let mut null_prev = 0.0;

    // weld segments: each curve's hull welds onto a real interval, tracked
    // exactly in its own chart (for the contour's inner clearance) and in
    // the joint chart (for the corridor to the neighbouring cuts)
    let mut own_weld: Vec<Weld> = (0..m).map(|i| Weld::point(run.w[i][0])).collect();
    let mut joint_weld: Vec<Weld> = xs.iter().map(|&x| Weld::point(x)).collect();

    for k in 1..n {
        let dt = run.times[k] - run.times[k - 1];
        // extend the chains over [t_{k-1}, t_k] from start-of-step data: the
        // own charts grow at unit rate, the joint chart at a_i = (H_i')^2
        for (i, chain) in own.iter_mut().enumerate() {
            chain.push(Step { dt, xi: run.w[i][k - 1] });
            own_weld[i].push(dt, run.w[i][k - 1]);
            own_weld[i].absorb(dt, run.w[i][k - 1]);
        }
        for i in 0..m {
            let a_dt = hps[i] * hps[i] * dt;
            joint.push(Step { dt: a_dt, xi: xs[i] });
            for wld in joint_weld.iter_mut() {
                wld.push(a_dt, xs[i]);
            }
            joint_weld[i].absorb(a_dt, xs[i]);
        }
        let mut new_xs = vec![0.0; m];
        let mut schw_now = 0.0;
        for i in 0..m {
            let wi = run.w[i][k];
            // corridor: joint-chart distance from this tip to the nearest
            // neighbouring weld segment, pulled back through the last H'
            let mut corridor = f64::INFINITY;
            for (j, wld) in joint_weld.iter().enumerate() {
                if j != i {
                    let d = if xs[j] > xs[i] { wld.lo - xs[i] } else { xs[i] - wld.hi };
                    corridor = corridor.min(d);
                }
            }
            if !(corridor > 0.0) {
                // a neighbouring weld segment has overrun this tip
                return Err(MultiError::StencilRejected { step: k });
            }
            let avail = corridor / hps[i].max(0.05);
            // the contour clears the own weld segment sideways and arcs over
            // it at height sqrt(rho^2 - shadow^2) >= the defect clearance
            let shadow = (own_weld[i].hi - wi).max(wi - own_weld[i].lo).max(0.0);
            let clear = DEFECT_CLEARANCE * DEFECT_CLEARANCE * (kappa + 4.0) * dt;
            let rho_lo = (shadow * shadow + clear).sqrt();
            if !(rho_lo <= CONTOUR_MAX_RATIO * avail) {
                // no clean annulus separates the own weld segment from the
                // neighbouring branch cut at this grid resolution
                return Err(MultiError::StencilRejected { step: k });
            }
            let rho = rho_lo.max(CONTOUR_RADIUS_RATIO * avail);
            let ev = eval_h_contour(&own[i], &joint, wi, rho, k)?;
            new_xs[i] = ev.x;
            hps[i] = ev.hp;
            schw_now += ev.schwarzian;
        }
        if !strictly_increasing(&new_xs) {
            return Err(MultiError::StencilRejected { step: k });
        }
        xs = new_xs;
        schw_int += 0.5 * (schw_prev + schw_now) * dt;
        schw_prev = schw_now;
        let null_now = if m == 2 {
            // exactly zero by the rational cofactor check above
            0.0
        } else {
            let fd = SPACING_RATIO * min_gap(&xs);
            let mut s = 0.0;
            for i in 0..m {
                s += null_cofactor(&zspec, &xs, i, kappa, h, fd) * hps[i] * hps[i];
            }
            s
        };
        null_int += 0.5 * (null_prev + null_now) * dt;
        null_prev = null_now;

        let lz = zspec.log_z(&xs) - log_z0;
        let ld = h * hps.iter().map(|v| v.ln()).sum::<f64>();
        let ls = sign.factor() * (c / 6.0) * schw_int;
        let ln_ = -null_int;
        let mval = (lz + ld + ls + ln_).exp();
        if !mval.is_finite() || !(mval > 0.0) {
            return Err(MultiError::StencilRejected { step: k });
        }
        path.times.push(run.times[k]);
        path.m.push(mval);
        path.log_deriv.push(ld);
        path.log_schwarz.push(ls);
        path.log_null.push(ln_);
    }
    Ok((path, schw_int))
}

/// Weight path over a product run with the pairwise default Z at
/// alpha = 2/kappa. The null factor is exactly 1 for m = 2 (checked
/// rationally on every run) and numerically integrated for m > 2.
pub fn martingale_weight(
    run: &ProductRun,
    kappa: f64,
    sign: SchwarzianSign,
) -> Result<MartingalePath, MultiError> {
    weight_path(run, kappa, sign).map(|(p, _)| p)
}

/// Drift-test verdict: sample mean of the final weight under the unweighted
/// product measure, for both Schwarzian orientations from the same paths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub kappa: f64,
    pub t_end: f64,
    pub paths: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub mean: f64,
    pub stderr: f64,
    pub mean_flipped: f64,
    pub stderr_flipped: f64,
    /// Average summed Schwarzian time integral across accepted paths; the
    /// two orientations differ by exp of (c/3) times this scale.
    pub mean_schwarz_integral: f64,
}

fn mean_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Scale-aware default grid: dt of about 2.5e-4 at unit half-gap.
fn default_grid_steps(gap: f64, t_end: f64) -> usize {
    let dt = 2.5e-4 * (gap / 2.0) * (gap / 2.0);
    ((t_end / dt).ceil() as usize).clamp(80, 4000)
}

/// Simulates the unweighted two-curve product process (independent Brownian
/// drivers, no partition drift) and averages the final weight; a true
/// martingale sits within a few stderr of 1.
pub fn martingale_drift_test(
    kappa: f64,
    x0: (f64, f64),
    t_end: f64,
    paths: usize,
    seed: u64,
) -> Result<DriftReport, MultiError> {
    martingale_drift_test_with(kappa, x0, t_end, paths, seed, None)
}

/// As martingale_drift_test with an explicit grid resolution.
pub fn martingale_drift_test_with(
    kappa: f64,
    x0: (f64, f64),
    t_end: f64,
    paths: usize,
    seed: u64,
    steps: Option<usize>,
) -> Result<DriftReport, MultiError> {
    let kq = rationalize_kappa(kappa)?;
    if *kq.value() > ratio(8, 3) {
        return Err(MultiError::Domain("the bounded weight regime needs kappa <= 8/3".into()));
    }
    if !x0.0.is_finite() || !x0.1.is_finite() || !(x0.0 < x0.1) {
        return Err(MultiError::Domain("seeds must be finite with x0.0 < x0.1".into()));
    }
    if paths == 0 {
        return Err(MultiError::Domain("need at least one path".into()));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(MultiError::Domain("t_end must be finite and nonnegative".into()));
    }
    let gap = x0.1 - x0.0;
    if t_end > 0.1 * gap * gap {
        return Err(MultiError::Domain(
            "t_end must stay within a tenth of the squared separation".into(),
        ));
    }
    if t_end == 0.0 {
        return Ok(DriftReport {
            kappa,
            t_end,
            paths,
            accepted: paths,
            rejected: 0,
            mean: 1.0,
            stderr: 0.0,
            mean_flipped: 1.0,
            stderr_flipped: 0.0,
            mean_schwarz_integral: 0.0,
        });
    }
    let n = steps.unwrap_or_else(|| default_grid_steps(gap, t_end));
    if n == 0 {
        return Err(MultiError::Domain("need at least one grid step".into()));
    }
    // ordered collect plus sequential reduction keeps the result independent
    // of the worker count
    let results: Vec<Option<(f64, f64, f64)>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = trial_rng(seed, p as u64);
            let run = ProductRun::sample(kappa, &[x0.0, x0.1], t_end, n, &mut rng)
                .expect("validated sampling parameters");
            match weight_path(&run, kappa, SchwarzianSign::Bounded) {
                Ok((path, integral)) => {
                    let last = path.m.len() - 1;
                    let m_b = path.m[last];
                    let m_f = (m_b.ln() - 2.0 * path.log_schwarz[last]).exp();
                    Some((m_b, m_f, integral))
                }
                Err(_) => None,
            }
        })
        .collect();
    let mut bounded = Vec::with_capacity(paths);
    let mut flipped = Vec::with_capacity(paths);
    let mut integrals = Vec::with_capacity(paths);
    let mut rejected = 0usize;
    for r in results {
        match r {
            Some((b, f, i)) => {
                bounded.push(b);
                flipped.push(f);
                integrals.push(i);
            }
            None => rejected += 1,
        }
    }
    if rejected * 5 > paths {
        return Err(MultiError::Instability { rejected, paths });
    }
    if bounded.len() < 2 {
        return Err(MultiError::Domain("too few accepted paths for a mean".into()));
    }
    let (mean, stderr) = mean_stderr(&bounded);
    let (mean_flipped, stderr_flipped) = mean_stderr(&flipped);
    let mean_schwarz_integral = integrals.iter().sum::<f64>() / integrals.len() as f64;
    Ok(DriftReport {
        kappa,
        t_end,
        paths,
        accepted: bounded.len(),
        rejected,
        mean,
        stderr,
        mean_flipped,
        stderr_flipped,
        mean_schwarz_integral,
    })
}

/// Restriction-type weight H'^h exp(-(c/6) I) of a single curve against a
/// fixed hull, with h = h_{(1,2)} and c = c(kappa); pure evaluation, no
/// loops sampled.
pub fn loop_soup_weight(
    h_prime: f64,
    schwarzian_integral: f64,
    kappa: f64,
) -> Result<f64, MultiError> {
    if !(h_prime > 0.0) || !(h_prime <= 1.0) {
        return Err(MultiError::Domain(format!("H' must lie in (0, 1], got {h_prime}")));
    }
    if !schwarzian_integral.is_finite() {
        return Err(MultiError::Domain("the Schwarzian integral must be finite".into()));
    }
    let kq = rationalize_kappa(kappa)?;
    if *kq.value() > ratio(8, 3) {
        return Err(MultiError::Domain("the bounded weight regime needs kappa <= 8/3".into()));
    }
    let label = KacLabel::new(1, 2).expect("static label");
    let h = kac::rational_to_f64(&kac::kac_weight(&kq, label));
    let c = kac::rational_to_f64(&kac::central_charge(&kq));
    Ok(h_prime.powf(h) * (-(c / 6.0) * schwarzian_integral).exp())
}

/// Measured log Z slope under uniform shrinking of a centered tip pattern.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CollapseScaling {
    pub slope: f64,
    /// alpha m(m-1)/2 for pairwise powers, routed through the exact collapse
    /// identity when alpha = 2/kappa; None for user tables.
    pub expected: Option<f64>,
}

/// Evaluates log Z on x_i = spread * u_i for the fixed centered unit pattern
/// u_i = i - (m-1)/2 and fits the slope against log spread.
pub fn collapse_scaling(
    kappa: f64,
    m: u32,
    spreads: &[f64],
    z: &PartitionSpec,
) -> Result<CollapseScaling, MultiError> {
    let kq = rationalize_kappa(kappa)?;
    if m < 2 {
        return Err(MultiError::Domain("need at least two collapsing tips".into()));
    }
    if spreads.len() < 3 {
        return Err(MultiError::Domain("need at least three spreads".into()));
    }
    if spreads.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(MultiError::Domain("spreads must be finite and positive".into()));
    }
    if !spreads.windows(2).all(|w| w[0] > w[1]) {
        return Err(MultiError::Domain("spreads must be strictly decreasing".into()));
    }
    let span = spreads[0] / spreads[spreads.len() - 1];
    if span < 100.0 * (1.0 - 1e-9) {
        return Err(MultiError::Domain("spreads must span at least two decades".into()));
    }
    let pattern: Vec<f64> = (0..m).map(|i| i as f64 - (m as f64 - 1.0) / 2.0).collect();
    let mut lxs = Vec::with_capacity(spreads.len());
    let mut lys = Vec::with_capacity(spreads.len());
    for &s in spreads {
        let x: Vec<f64> = pattern.iter().map(|u| s * u).collect();
        lxs.push(s.ln());
        lys.push(z.log_z(&x));
    }
    let ws = vec![1.0; lxs.len()];
    let fit = fitting::weighted_line_fit(&lxs, &lys, &ws)?;
    let expected = match z {
        PartitionSpec::PairwisePower { alpha } => {
            let pairs = int(m as i64) * int(m as i64 - 1) / int(2);
            if *alpha == int(2) / kq.value() {
                let wit = kac::collapse_exponent_identity(&kq, m)
                    .map_err(|e| MultiError::Domain(e.to_string()))?;
                if !wit.equal {
                    return Err(MultiError::Domain("collapse identity must close".into()));
                }
                let label = KacLabel::new(1, 2).expect("static label");
                let through_weights =
                    wit.lhs - int(m as i64) * kac::kac_weight(&kq, label);
                Some(kac::rational_to_f64(&through_weights))
            } else {
                Some(kac::rational_to_f64(&(alpha * pairs)))
            }
        }
        PartitionSpec::UserTable { .. } => None,
    };
    Ok(CollapseScaling { slope: fit.slope, expected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise(alpha_num: i64, alpha_den: i64) -> PartitionSpec {
        PartitionSpec::PairwisePower { alpha: ratio(alpha_num, alpha_den) }
    }

    #[test]
    fn debug_arbitration() {
        for (t, steps, paths) in [(0.12_f64, 240_usize, 300_usize), (0.2, 300, 300)] {
            let rep =
                martingale_drift_test_with(1.0, (-1.0, 1.0), t, paths, 11, Some(steps)).unwrap();
            eprintln!(
                "DBG arb t {} mean_b {} se_b {} mean_f {} se_f {} schw {} rej {}",
                t,
                rep.mean,
                rep.stderr,
                rep.mean_flipped,
                rep.stderr_flipped,
                rep.mean_schwarz_integral,
                rep.rejected
            );
        }
    }

    #[test]
    fn kappa_relation_examples() {
        assert!(check_kappa_relation(&[6.0, 6.0, 6.0]));
        assert!(check_kappa_relation(&[6.0, 8.0 / 3.0]));
        assert!(!check_kappa_relation(&[6.0, 3.0]));
        assert!(check_kappa_relation(&[2.5, 6.4]));
        assert!(!check_kappa_relation(&[6.0, -1.0]));
        assert!(!check_kappa_relation(&[6.0, f64::NAN]));
    }

    #[test]
    fn drift_single_curve_is_zero() {
        let st = MultiState::new(vec![0.3], vec![6.0], vec![1.0], 0.0).unwrap();
        assert_eq!(drift(&st, &pairwise(3, 4), 0).unwrap(), 0.0);
        let constant = PartitionSpec::UserTable {
            log_z: Box::new(|_| 7.0),
            grad_log_z: Box::new(|_, _| 0.0),
        };
        assert_eq!(drift(&st, &constant, 0).unwrap(), 0.0);
    }

    #[test]
    fn drift_pairwise_closed_form() {
        let (kappa, a) = (3.0, 0.7);
        let st = MultiState::new(vec![-1.0, 2.0], vec![kappa, kappa], vec![a, a], 0.0).unwrap();
        let alpha = 0.75;
        let got = drift(&st, &pairwise(3, 4), 0).unwrap();
        let want = -(kappa * alpha + 2.0) * a / (2.0 - (-1.0));
        assert!((got - want).abs() <= 1e-12 * want.abs());
    }

    #[test]
    fn drift_alpha_zero_is_pure_interaction() {
        let a = 0.9;
        let st = MultiState::new(vec![-1.5, 0.5], vec![4.0, 4.0], vec![a, a], 0.0).unwrap();
        let got = drift(&st, &pairwise(0, 1), 0).unwrap();
        assert_eq!(got, -2.0 * a / (0.5 - (-1.5)));
    }

    #[test]
    fn drift_coincident_tips_collide() {
        let mut st = MultiState::new(vec![0.0, 1.0], vec![2.0, 2.0], vec![1.0, 1.0], 0.5).unwrap();
        st.x[1] = 0.0;
        assert!(matches!(drift(&st, &pairwise(1, 1), 0), Err(MultiError::Collision { .. })));
    }

    #[test]
    fn step_sde_zero_noise_single_curve_fixed() {
        let st = MultiState::new(vec![0.25], vec![6.0], vec![1.0], 0.0).unwrap();
        let out = step_sde(&st, &pairwise(3, 4), 0.01, &[0.0]).unwrap();
        assert_eq!(out.x, vec![0.25]);
        assert_eq!(out.t, 0.01);
    }

    #[test]
    fn step_sde_symmetric_midpoint_invariant() {
        let d = 1.0;
        let st = MultiState::new(vec![-d, d], vec![2.0, 2.0], vec![1.0, 1.0], 0.0).unwrap();
        let out = step_sde(&st, &pairwise(1, 1), 1e-2, &[0.7, -0.7]).unwrap();
        assert_eq!(out.x[0] + out.x[1], 0.0);
        assert!(out.x[0] < out.x[1]);
    }

    #[test]
    fn step_sde_gap_repulsion_one_sided() {
        let kappa = 2.0;
        let z = PartitionSpec::pairwise_sle(&Kappa::from_int(2).unwrap());
        let (dt, steps, paths) = (1e-3, 50, 2000);
        let mut gaps = Vec::with_capacity(paths);
        for p in 0..paths {
            let mut rng = trial_rng(0xA11CE, p as u64);
            let mut st =
                MultiState::new(vec![-0.5, 0.5], vec![kappa, kappa], vec![1.0, 1.0], 0.0).unwrap();
            let mut collided = false;
            for _ in 0..steps {
                let noise: [f64; 2] =
                    [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
                match step_sde(&st, &z, dt, &noise) {
                    Ok(next) => st = next,
                    Err(MultiError::Collision { .. }) => {
                        collided = true;
                        break;
                    }
                    Err(e) => panic!("unexpected error: {e}"),
                }
            }
            if !collided {
                gaps.push(st.x[1] - st.x[0]);
            }
        }
        assert!(gaps.len() > paths * 9 / 10, "too many collisions: {}", paths - gaps.len());
        let (mean, stderr) = mean_stderr(&gaps);
        assert!(
            mean - 1.0 > 2.0 * stderr,
            "no repulsion: mean gap {mean}, stderr {stderr}"
        );
    }

    #[test]
    fn schwarzian_annihilates_moebius() {
        let (a, b, c, d) = (2.0, 1.0, 1.0, 3.0);
        let f = |z: f64| (a * z + b) / (c * z + d);
        let (x, h) = (0.5, 1e-3);
        let samples = [f(x - 2.0 * h), f(x - h), f(x), f(x + h), f(x + 2.0 * h)];
        let s = schwarzian_fd(&samples, x, h).unwrap();
        assert!(s.abs() <= 1e-6, "Moebius Schwarzian {s}");
    }

    #[test]
    fn schwarzian_of_square_map() {
        let f = |z: f64| z * z;
        let (x, h) = (1.0, 1e-3);
        let samples = [f(x - 2.0 * h), f(x - h), f(x), f(x + h), f(x + 2.0 * h)];
        let s = schwarzian_fd(&samples, x, h).unwrap();
        assert!((s - (-1.5)).abs() <= 1e-4, "got {s}");
    }

    #[test]
    fn schwarzian_of_identity_is_zero_exactly() {
        let (x, h) = (1.0, 0.0009765625);
        let samples = [x - 2.0 * h, x - h, x, x + h, x + 2.0 * h];
        assert_eq!(schwarzian_fd(&samples, x, h).unwrap(), 0.0);
    }

    #[test]
    fn schwarzian_degenerate_derivative_errors() {
        let samples = [1.0; 5];
        assert!(matches!(
            schwarzian_fd(&samples, 0.0, 1e-3),
            Err(MultiError::DegenerateDerivative(_))
        ));
    }

    #[test]
    fn martingale_weight_starts_at_one() {
        let run = ProductRun::new(vec![0.0], vec![vec![-1.0], vec![1.0]]).unwrap();
        let path = martingale_weight(&run, 8.0 / 3.0, SchwarzianSign::Bounded).unwrap();
        assert_eq!(path.m, vec![1.0]);
        assert_eq!(path.log_deriv, vec![0.0]);
        assert_eq!(path.log_schwarz, vec![0.0]);
        assert_eq!(path.log_null, vec![0.0]);
    }

    #[test]
    fn martingale_weight_factors_near_one_at_huge_separation() {
        let mut rng = trial_rng(17, 0);
        let run = ProductRun::sample(2.5, &[-500.0, 500.0], 0.05, 50, &mut rng).unwrap();
        let path = martingale_weight(&run, 2.5, SchwarzianSign::Bounded).unwrap();
        let last = path.m.len() - 1;
        let log_z = path.m[last].ln()
            - path.log_deriv[last]
            - path.log_schwarz[last]
            - path.log_null[last];
        assert!(path.log_deriv[last].abs() <= 1e-3);
        assert!(path.log_schwarz[last].abs() <= 1e-3);
        assert_eq!(path.log_null[last], 0.0);
        assert!(log_z.abs() <= 1e-3);
        assert!((path.m[last] - 1.0).abs() <= 3e-3);
    }

    #[test]
    fn martingale_weight_rejects_fast_kappa() {
        let run = ProductRun::new(vec![0.0], vec![vec![-1.0], vec![1.0]]).unwrap();
        assert!(matches!(
            martingale_weight(&run, 4.0, SchwarzianSign::Bounded),
            Err(MultiError::Domain(_))
        ));
    }

    #[test]
    fn martingale_csv_shape() {
        let run = ProductRun::new(vec![0.0], vec![vec![-1.0], vec![1.0]]).unwrap();
        let path = martingale_weight(&run, 2.0, SchwarzianSign::Bounded).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,M,logfac_deriv,logfac_schwarz,logfac_null\n0.0,1.0,0.0,0.0,0.0\n");
    }

    #[test]
    fn drift_test_time_zero_is_exact() {
        let rep = martingale_drift_test(2.0, (-1.0, 1.0), 0.0, 10, 1).unwrap();
        assert_eq!(rep.mean, 1.0);
        assert_eq!(rep.stderr, 0.0);
        assert_eq!(rep.accepted, 10);
    }

    #[test]
    fn drift_test_mean_near_one() {
        let rep = martingale_drift_test(8.0 / 3.0, (-1.0, 1.0), 0.05, 400, 7).unwrap();
        assert!(rep.rejected * 20 <= rep.paths, "rejections: {}", rep.rejected);
        assert!(
            (rep.mean - 1.0).abs() <= 3.0 * rep.stderr,
            "mean {} stderr {}",
            rep.mean,
            rep.stderr
        );
        assert!(rep.stderr <= 0.02, "stderr {}", rep.stderr);
        // c = 0: the two orientations coincide
        assert_eq!(rep.mean, rep.mean_flipped);
    }

    #[test]
    fn drift_test_far_control_is_tight() {
        let rep = martingale_drift_test(8.0 / 3.0, (-100.0, 100.0), 0.05, 64, 3).unwrap();
        assert_eq!(rep.rejected, 0);
        assert!((rep.mean - 1.0).abs() <= 1e-3, "mean {}", rep.mean);
    }

    /// Sign arbitration at a central charge far from zero: the bounded
    /// orientation holds E[M] = 1 while the flipped one drifts away, and the
    /// flipped deviation grows with the horizon (measured 2.3 sigma at
    /// t = 0.12 rising to 3.3 sigma at t = 0.2 on 300 paths).
    #[test]
    #[ignore = "minutes-long; run with -- --ignored to re-arbitrate the sign"]
    fn drift_test_arbitrates_schwarzian_sign() {
        let rep =
            martingale_drift_test_with(1.0, (-1.0, 1.0), 0.2, 300, 11, Some(300)).unwrap();
        assert!(
            (rep.mean - 1.0).abs() <= 3.0 * rep.stderr,
            "bounded mean {} stderr {}",
            rep.mean,
            rep.stderr
        );
        assert!(
            (rep.mean_flipped - 1.0).abs() > 2.0 * rep.stderr_flipped,
            "flipped mean {} stderr {}",
            rep.mean_flipped,
            rep.stderr_flipped
        );
        assert!((rep.mean_flipped - 1.0).abs() > (rep.mean - 1.0).abs());
    }

    #[test]
    fn drift_test_rejects_long_horizon() {
        assert!(matches!(
            martingale_drift_test(2.0, (-1.0, 1.0), 0.5, 10, 1),
            Err(MultiError::Domain(_))
        ));
    }

    #[test]
    fn loop_soup_weight_examples() {
        assert_eq!(loop_soup_weight(1.0, 0.0, 2.5).unwrap(), 1.0);
        // c(8/3) rationalizes to exactly zero, so the exponential drops
        let hp = 0.7;
        assert_eq!(loop_soup_weight(hp, 123.4, 8.0 / 3.0).unwrap(), hp.powf(0.625));
        assert_eq!(loop_soup_weight(0.5, 0.0, 2.0).unwrap(), 0.5);
        assert!(loop_soup_weight(1.5, 0.0, 2.0).is_err());
        assert!(loop_soup_weight(0.5, 0.0, 6.0).is_err());
    }

    #[test]
    fn collapse_scaling_examples() {
        let spreads = [1.0, 0.1, 0.01, 1e-3];
        let k6 = Kappa::from_int(6).unwrap();
        let got = collapse_scaling(6.0, 2, &spreads, &PartitionSpec::pairwise_sle(&k6)).unwrap();
        assert!((got.slope - 1.0 / 3.0).abs() <= 1e-9, "slope {}", got.slope);
        assert!((got.expected.unwrap() - 1.0 / 3.0).abs() <= 1e-15);

        let k83 = Kappa::from_ratio(8, 3).unwrap();
        let got =
            collapse_scaling(8.0 / 3.0, 3, &spreads, &PartitionSpec::pairwise_sle(&k83)).unwrap();
        assert!((got.slope - 2.25).abs() <= 1e-9, "slope {}", got.slope);
        assert!((got.expected.unwrap() - 2.25).abs() <= 1e-15);

        let got = collapse_scaling(6.0, 2, &spreads, &pairwise(0, 1)).unwrap();
        assert_eq!(got.slope, 0.0);
        assert_eq!(got.expected, Some(0.0));
    }

    #[test]
    fn collapse_scaling_validates_span() {
        let z = pairwise(1, 3);
        assert!(collapse_scaling(6.0, 2, &[1.0, 0.5, 0.2], &z).is_err());
        assert!(collapse_scaling(6.0, 1, &[1.0, 0.1, 0.01], &z).is_err());
        assert!(collapse_scaling(6.0, 2, &[0.01, 0.1, 1.0], &z).is_err());
    }

    #[test]
    fn null_cofactor_vanishes_for_matched_pair() {
        // closed-form route: exact rational zero for any kappa
        for (n, d) in [(6i64, 1i64), (8, 3), (2, 1), (17, 5)] {
            let kq = Kappa::from_ratio(n, d).unwrap();
            let h = kac::kac_weight(&kq, KacLabel::new(1, 2).unwrap());
            let alpha = int(2) / kq.value();
            assert!(apply_d2_twopoint(&kq, &h, &alpha).is_zero());
        }
        // numeric route agrees to finite-difference truncation accuracy,
        // and improves quadratically as the spacing shrinks
        let kq = Kappa::from_int(2).unwrap();
        let z = PartitionSpec::pairwise_sle(&kq);
        let h = kac::rational_to_f64(&kac::kac_weight(&kq, KacLabel::new(1, 2).unwrap()));
        let x = [-0.7, 1.3];
        for i in 0..2 {
            let coarse = null_cofactor(&z, &x, i, 2.0, h, 2e-3);
            let fine = null_cofactor(&z, &x, i, 2.0, h, 2e-4);
            assert!(coarse.abs() <= 1e-6, "cofactor {coarse} at {i}");
            assert!(fine.abs() <= 1e-8, "cofactor {fine} at {i}");
        }
    }

    proptest! {
        // dyadic inputs: the shifted differences are exact, so invariance is
        // bitwise
        #[test]
        fn prop_drift_translation_exact_on_dyadics(
            xs in proptest::collection::vec(-200i64..200, 2..5),
            shift in -128i64..128,
            num in -8i64..8,
        ) {
            let mut grid: Vec<i64> = xs.clone();
            grid.sort_unstable();
            grid.dedup();
            prop_assume!(grid.len() >= 2);
            let x: Vec<f64> = grid.iter().map(|&v| v as f64 / 16.0).collect();
            let shifted: Vec<f64> = grid.iter().map(|&v| (v + 16 * shift) as f64 / 16.0).collect();
            let m = x.len();
            let st = MultiState::new(x, vec![4.0; m], vec![1.0; m], 0.0).unwrap();
            let st2 = MultiState::new(shifted, vec![4.0; m], vec![1.0; m], 0.0).unwrap();
            let z = pairwise(num, 8);
            for i in 0..m {
                prop_assert_eq!(drift(&st, &z, i).unwrap(), drift(&st2, &z, i).unwrap());
            }
        }

        // power-of-two scalings are exact in binary floating point
        #[test]
        fn prop_drift_scale_covariant_on_dyadics(
            xs in proptest::collection::vec(-200i64..200, 2..5),
            e in -3i32..4,
            num in -8i64..8,
        ) {
            let mut grid: Vec<i64> = xs.clone();
            grid.sort_unstable();
            grid.dedup();
            prop_assume!(grid.len() >= 2);
            let lam = (2.0f64).powi(e);
            let x: Vec<f64> = grid.iter().map(|&v| v as f64 / 16.0).collect();
            let scaled: Vec<f64> = x.iter().map(|v| v * lam).collect();
            let m = x.len();
            let st = MultiState::new(x, vec![4.0; m], vec![1.0; m], 0.0).unwrap();
            let st2 = MultiState::new(scaled, vec![4.0; m], vec![1.0; m], 0.0).unwrap();
            let z = pairwise(num, 8);
            for i in 0..m {
                prop_assert_eq!(drift(&st, &z, i).unwrap(), lam * drift(&st2, &z, i).unwrap());
            }
        }

        #[test]
        fn prop_drift_invariances_general_floats(
            gaps in proptest::collection::vec(0.1f64..3.0, 1..4),
            x0 in -5.0f64..5.0,
            shift in -10.0f64..10.0,
            lam in 0.2f64..5.0,
        ) {
            let mut x = vec![x0];
            for g in &gaps {
                let next = x.last().unwrap() + g;
                x.push(next);
            }
            let m = x.len();
            let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
            let scaled: Vec<f64> = x.iter().map(|v| v * lam).collect();
            let st = MultiState::new(x, vec![2.0; m], vec![1.0; m], 0.0).unwrap();
            let st_sh = MultiState::new(shifted, vec![2.0; m], vec![1.0; m], 0.0).unwrap();
            let st_sc = MultiState::new(scaled, vec![2.0; m], vec![1.0; m], 0.0).unwrap();
            let z = pairwise(3, 4);
            for i in 0..m {
                let d = drift(&st, &z, i).unwrap();
                let d_sh = drift(&st_sh, &z, i).unwrap();
                let d_sc = drift(&st_sc, &z, i).unwrap();
                prop_assert!((d - d_sh).abs() <= 1e-9 * (1.0 + d.abs()));
                prop_assert!((d - lam * d_sc).abs() <= 1e-9 * (1.0 + d.abs()));
            }
        }

        // chamber preservation: an accepted step is ordered, a flip is
        // reported, never silently reordered
        #[test]
        fn prop_step_sde_preserves_order_or_collides(
            g1 in 0.01f64..1.0,
            g2 in 0.01f64..1.0,
            n1 in -3.0f64..3.0,
            n2 in -3.0f64..3.0,
            dt in 1e-5f64..0.5,
        ) {
            let st = MultiState::new(
                vec![0.0, g1, g1 + g2],
                vec![3.0; 3],
                vec![1.0; 3],
                0.0,
            ).unwrap();
            let z = pairwise(0, 1);
            match step_sde(&st, &z, dt, &[n1, n2, 0.0]) {
                Ok(next) => prop_assert!(strictly_increasing(&next.x)),
                Err(MultiError::Collision { t }) => prop_assert!(t.is_finite()),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn prop_best_rational_recovers_small_fractions(p in 1i64..50, q in 1i64..50) {
            let x = p as f64 / q as f64;
            let (bp, bq) = best_rational(x, 1_000_000);
            prop_assert_eq!(ratio(bp, bq), ratio(p, q));
        }
    }
}
