//! Discretized single and multiple Loewner evolution in the upper half
//! plane: driving-path sampling, elementary slit maps, trace extraction,
//! tracked-point evolution with derivative accumulation, mirror extension,
//! and the multi-tip ODE step.

use num::complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::io;
use thiserror::Error;

/// Below this imaginary part the derivative products overflow before any
/// physical information is gained.
pub const SWALLOW_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LoewnerError {
    #[error("domain: {0}")]
    Domain(String),
    #[error("branch-cut collision at step {step} with eps_reg {eps:e}")]
    BranchCut { step: usize, eps: f64 },
    #[error("real point inside the hull footprint at step {0}")]
    HullFootprint(usize),
    #[error("tip collision between {i} and {j}")]
    TipCollision { i: usize, j: usize },
    #[error("csv: {0}")]
    Csv(String),
}

/// Driving function samples on a strictly increasing capacity-time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DrivingPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl DrivingPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, LoewnerError> {
        if times.is_empty() || times.len() != values.len() {
            return Err(LoewnerError::Domain(
                "times and values must be nonempty and equal-length".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(LoewnerError::Domain("times must start at 0".into()));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(LoewnerError::Domain("times must be strictly increasing".into()));
            }
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(LoewnerError::Domain("non-finite path entry".into()));
        }
        Ok(DrivingPath { times, values })
    }

    /// Quadratic variation per unit time, the empirical speed of the path.
    pub fn quadratic_variation_rate(&self) -> f64 {
        let t_total = *self.times.last().unwrap();
        let qv: f64 = self.values.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        qv / t_total
    }
}

/// One constant-driver interval: a slit of half-plane capacity 2 dt at xi.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Step {
    pub dt: f64,
    pub xi: f64,
}

/// Composition of elementary slit maps; total capacity is 2 sum(dt).
#[derive(Clone, Debug, PartialEq)]
pub struct MapChain {
    pub steps: Vec<Step>,
}

impl MapChain {
    pub fn new(steps: Vec<Step>) -> Result<Self, LoewnerError> {
        for s in &steps {
            if !(s.dt > 0.0) || !s.dt.is_finite() || !s.xi.is_finite() {
                return Err(LoewnerError::Domain("steps need finite dt > 0 and finite xi".into()));
            }
        }
        Ok(MapChain { steps })
    }

    /// Each interval adopts the driving value at its right endpoint, so the
    /// innermost inverse map shares its driving value with the trace seed;
    /// the zero-driver oracle is exact under either endpoint convention.
    pub fn from_driving(path: &DrivingPath) -> Self {
        let steps = path
            .times
            .windows(2)
            .zip(path.values.iter().skip(1))
            .map(|(w, &xi)| Step { dt: w[1] - w[0], xi })
            .collect();
        MapChain { steps }
    }

    pub fn total_time(&self) -> f64 {
        self.steps.iter().map(|s| s.dt).sum()
    }

    pub fn capacity(&self) -> f64 {
        2.0 * self.total_time()
    }

    /// CSV export with header "dt,xi".
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), LoewnerError> {
        let mut wtr = csv::Writer::from_writer(w);
        for s in &self.steps {
            wtr.serialize(s).map_err(|e| LoewnerError::Csv(e.to_string()))?;
        }
        wtr.flush().map_err(|e| LoewnerError::Csv(e.to_string()))
    }
}

/// Tracked image of a point under the chain, with accumulated derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointState {
    pub z: Complex64,
    pub dg: Complex64,
    pub swallowed: bool,
    pub swallow_time: Option<f64>,
}

impl PointState {
    pub fn new(z: Complex64) -> Self {
        PointState { z, dg: Complex64::new(1.0, 0.0), swallowed: false, swallow_time: None }
    }
}

/// Trace samples with their capacity-time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub points: Vec<Complex64>,
    pub times: Vec<f64>,
}

impl Trace {
    /// CSV export with header "t,re,im".
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), LoewnerError> {
        #[derive(Serialize)]
        struct Row {
            t: f64,
            re: f64,
            im: f64,
        }
        let mut wtr = csv::Writer::from_writer(w);
        for (&t, p) in self.times.iter().zip(&self.points) {
            wtr.serialize(Row { t, re: p.re, im: p.im })
                .map_err(|e| LoewnerError::Csv(e.to_string()))?;
        }
        wtr.flush().map_err(|e| LoewnerError::Csv(e.to_string()))
    }
}

/// Brownian driving samples on a uniform grid: xi_0 = 0 and independent
/// centered Gaussian increments of variance kappa t_total / n, reproducible
/// from the seed.
pub fn sample_driving(
    kappa: f64,
    t_total: f64,
    n: usize,
    seed: u64,
) -> Result<DrivingPath, LoewnerError> {
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(LoewnerError::Domain("kappa must be finite and >= 0".into()));
    }
    if !(t_total > 0.0) || !t_total.is_finite() {
        return Err(LoewnerError::Domain("T must be finite and > 0".into()));
    }
    if n == 0 {
        return Err(LoewnerError::Domain("N must be >= 1".into()));
    }
    let dt = t_total / n as f64;
    let sig = (kappa * dt).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    times.push(0.0);
    values.push(0.0);
    for k in 1..=n {
        times.push(k as f64 * dt);
        let g: f64 = StandardNormal.sample(&mut rng);
        values.push(values[k - 1] + sig * g);
    }
    DrivingPath::new(times, values)
}

/// Branch factor for the forward map: principal sqrt away from the cut; an
/// exact negative-real argument means the input sits on the slit itself and
/// resolves to the slit's right face (the right-side limit), matching the
/// closed-form sign convention of the derivative examples.
fn forward_sqrt(s2: Complex64) -> Complex64 {
    if s2.im == 0.0 && s2.re < 0.0 {
        Complex64::new(0.0, -(-s2.re).sqrt())
    } else {
        s2.sqrt()
    }
}

/// Forward elementary map g(z) = xi + u sqrt(1 + 4 delta / u^2), u = z - xi,
/// with the principal inner sqrt. This form is continuous on the closed half
/// plane off the slit and hydrodynamically normalized, g(z) = z + 2 delta / z
/// + O(z^-3); the direct principal form sqrt(u^2 + 4 delta) is wrong for
/// Re(u) < 0. Points exactly on the slit resolve to its right face.
pub fn elementary_map(delta: f64, xi: f64, z: Complex64) -> Complex64 {
    let u = z - xi;
    if u == Complex64::new(0.0, 0.0) {
        return Complex64::new(xi + 2.0 * delta.sqrt(), 0.0);
    }
    xi + u * forward_sqrt(1.0 + 4.0 * delta / (u * u))
}

/// Inverse elementary map f(w) = xi + v sqrt(1 - 4 delta / v^2), v = w - xi.
/// The driving point itself pulls back to the slit tip; an exact
/// negative-real sqrt argument (a point inside the slit-base footprint) is
/// resolved toward +i, landing on the slit.
pub fn inverse_elementary_map(delta: f64, xi: f64, w: Complex64) -> Complex64 {
    let v = w - xi;
    if v == Complex64::new(0.0, 0.0) {
        return Complex64::new(xi, 2.0 * delta.sqrt());
    }
    let s2 = 1.0 - 4.0 * delta / (v * v);
    let s = if s2.im == 0.0 && s2.re < 0.0 {
        let r = (-s2.re).sqrt();
        Complex64::new(0.0, if v.re >= 0.0 { r } else { -r })
    } else {
        s2.sqrt()
    };
    xi + v * s
}

/// Advance (z, dg) through one elementary map; the map derivative is
/// u / sqrt(u^2 + 4 delta) = 1 / s on the same branch as the map itself.
pub fn step_with_derivative(
    delta: f64,
    xi: f64,
    z: Complex64,
    dg: Complex64,
) -> (Complex64, Complex64) {
    let u = z - xi;
    let s = forward_sqrt(1.0 + 4.0 * delta / (u * u));
    (xi + u * s, dg / s)
}

/// Trace point regularization: seeds sit at xi + i eps_reg with
/// eps_reg = sqrt(mean grid spacing) scaled by the empirical path speed
/// sqrt(QV/T). Zero driving gives eps_reg = 0 and the exact tip seed.
pub fn trace_epsilon(path: &DrivingPath) -> f64 {
    let n = path.times.len() - 1;
    if n == 0 {
        return 0.0;
    }
    let t_total = *path.times.last().unwrap();
    let mean_dt = t_total / n as f64;
    (mean_dt * path.quadratic_variation_rate()).sqrt()
}

fn pull_back(steps: &[Step], seed: Complex64) -> Result<Complex64, usize> {
    let mut w = seed;
    for (j, s) in steps.iter().enumerate().rev() {
        w = inverse_elementary_map(s.dt, s.xi, w);
        if !w.im.is_finite() || !w.re.is_finite() || w.im < 0.0 {
            return Err(j);
        }
    }
    Ok(w)
}

/// Trace gamma(t_k) as the innermost-first composition of inverse elementary
/// maps applied to the regularized seed xi_k + i eps_reg; O(N^2) overall.
/// One branch-cut collision retries the point with 10x the regularization.
pub fn trace_from_driving(path: &DrivingPath) -> Result<Trace, LoewnerError> {
    let chain = MapChain::from_driving(path);
    let eps = trace_epsilon(path);
    let n = chain.steps.len();
    let mut points = Vec::with_capacity(n + 1);
    points.push(Complex64::new(path.values[0], 0.0));
    for k in 1..=n {
        let seed = Complex64::new(path.values[k], eps);
        let got = match pull_back(&chain.steps[..k], seed) {
            Ok(w) => w,
            Err(_) => {
                let retry = Complex64::new(path.values[k], eps * 10.0);
                pull_back(&chain.steps[..k], retry)
                    .map_err(|step| LoewnerError::BranchCut { step, eps: eps * 10.0 })?
            }
        };
        points.push(got);
    }
    Ok(Trace { points, times: path.times.clone() })
}

/// Run an existing state through the chain. The swallow check runs before
/// each step, so a final step landing exactly on the real axis is reported
/// un-swallowed; swallow_time is relative to the chain start.
pub fn evolve_state(chain: &MapChain, mut st: PointState) -> PointState {
    let mut t = 0.0;
    for s in &chain.steps {
        if st.swallowed {
            return st;
        }
        if st.z.im < SWALLOW_TOL {
            st.swallowed = true;
            st.swallow_time = Some(t);
            return st;
        }
        let (z, dg) = step_with_derivative(s.dt, s.xi, st.z, st.dg);
        st.z = z;
        st.dg = dg;
        t += s.dt;
    }
    st
}

pub fn evolve_point(chain: &MapChain, z0: Complex64) -> Result<PointState, LoewnerError> {
    if !(z0.im > 0.0) {
        return Err(LoewnerError::Domain("Im(z0) must be positive".into()));
    }
    Ok(evolve_state(chain, PointState::new(z0)))
}

/// Koebe quarter-theorem distance estimate Im(z)/|dg|, within a factor 4 of
/// the true Euclidean distance from z0 to the growing hull; swallowed points
/// report distance zero.
pub fn koebe_distance(state: &PointState) -> f64 {
    if state.swallowed {
        return 0.0;
    }
    state.z.im / state.dg.norm()
}

fn extend_upper(chain: &MapChain, mut z: Complex64) -> Result<Complex64, LoewnerError> {
    for (idx, s) in chain.steps.iter().enumerate() {
        if z.im == 0.0 {
            let u = z.re - s.xi;
            if u.abs() < 2.0 * s.dt.sqrt() {
                return Err(LoewnerError::HullFootprint(idx));
            }
        }
        z = elementary_map(s.dt, s.xi, z);
    }
    Ok(z)
}

/// Schwarz reflection of the chain image: lower-half-plane points map
/// through the conjugated chain, so mirror_extend(conj w) = conj of
/// mirror_extend(w) by construction.
pub fn mirror_extend(chain: &MapChain, w: Complex64) -> Result<Complex64, LoewnerError> {
    if w.im < 0.0 {
        return extend_upper(chain, w.conj()).map(|z| z.conj());
    }
    extend_upper(chain, w)
}

fn multi_field(tips: &[(f64, f64)], z: Complex64) -> (Complex64, Complex64) {
    let mut v = Complex64::new(0.0, 0.0);
    let mut vp = Complex64::new(0.0, 0.0);
    for &(x, a) in tips {
        let d = z - x;
        v += 2.0 * a / d;
        vp -= 2.0 * a / (d * d);
    }
    (v, vp)
}

/// One RK4 step of the multi-tip Loewner field sum_i 2 a_i / (G - x_i) on
/// every tracked point, with the derivative advanced by the differentiated
/// field; tips are held fixed within the step (their own motion is the
/// caller's drift). A step that blows up marks the point swallowed.
pub fn multiple_step(
    states: &[PointState],
    tips: &[(f64, f64)],
    dt: f64,
) -> Result<(Vec<PointState>, Vec<(f64, f64)>), LoewnerError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(LoewnerError::Domain("dt must be finite and > 0".into()));
    }
    for &(x, a) in tips {
        if !x.is_finite() || !a.is_finite() || a < 0.0 {
            return Err(LoewnerError::Domain("tips need finite x and a >= 0".into()));
        }
    }
    for i in 0..tips.len() {
        for j in (i + 1)..tips.len() {
            if tips[i].0 == tips[j].0 {
                return Err(LoewnerError::TipCollision { i, j });
            }
        }
    }
    let mut out = Vec::with_capacity(states.len());
    for st in states {
        if st.swallowed {
            out.push(*st);
            continue;
        }
        let (z, dg) = (st.z, st.dg);
        let f = |z: Complex64, dg: Complex64| {
            let (v, vp) = multi_field(tips, z);
            (v, dg * vp)
        };
        let (k1z, k1d) = f(z, dg);
        let (k2z, k2d) = f(z + 0.5 * dt * k1z, dg + 0.5 * dt * k1d);
        let (k3z, k3d) = f(z + 0.5 * dt * k2z, dg + 0.5 * dt * k2d);
        let (k4z, k4d) = f(z + dt * k3z, dg + dt * k3d);
        let zn = z + dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
        let dgn = dg + dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
        let finite = zn.re.is_finite() && zn.im.is_finite() && dgn.re.is_finite() && dgn.im.is_finite();
        if finite {
            out.push(PointState { z: zn, dg: dgn, ..*st });
        } else {
            out.push(PointState { swallowed: true, ..*st });
        }
    }
    Ok((out, tips.to_vec()))
}
