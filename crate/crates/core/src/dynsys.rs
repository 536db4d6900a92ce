//! Autonomous dynamical systems: vector fields, decompositions into
//! sub-fields, fixed-step and adaptive integration, and equilibrium solving.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

/// State norm above which integration aborts. Loss of synchronism in
/// power systems produces unbounded angles; the guard bounds runtime.
pub const DIVERGENCE_GUARD: f64 = 1e6;

#[derive(Debug, Error)]
pub enum DynError {
    #[error("dimension mismatch: field has dim {expected}, input has dim {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid integrator configuration: {0}")]
    BadConfig(String),
    #[error("integration diverged at t = {:.6}", .trajectory.end_time())]
    Diverged {
        /// Samples accepted before divergence; the last one is the last
        /// valid state.
        trajectory: Trajectory,
    },
    #[error("no equilibrium found: residual {residual:.3e} after {iterations} iterations")]
    NoEquilibrium {
        best: Vec<f64>,
        residual: f64,
        iterations: usize,
    },
    #[error("decomposed field needs at least one part")]
    EmptyDecomposition,
}

/// An autonomous vector field `x_dot = f(x)` on R^n.
///
/// Implementations must be deterministic: identical inputs give identical
/// outputs. All provided machinery treats fields as immutable and shares
/// them freely across threads.
pub trait VectorField: Send + Sync {
    /// State dimension n.
    fn dim(&self) -> usize;

    /// Evaluate the derivative at `x` into `out`. Both slices have length
    /// `dim()`.
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval_into(x, out)
    }
}

impl<T: VectorField + ?Sized> VectorField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval_into(x, out)
    }
}

/// A vector field backed by a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        (self.f)(x, out)
    }
}

/// A vector field stored as an ordered sum of sub-fields, `f = sum_i f^i`.
///
/// The composite evaluation adds the parts in declaration order, so the sum
/// is bit-reproducible for a fixed part order.
pub struct DecomposedField {
    dim: usize,
    parts: Vec<Arc<dyn VectorField>>,
}

impl DecomposedField {
    pub fn new(parts: Vec<Arc<dyn VectorField>>) -> Result<Self, DynError> {
        let dim = parts.first().ok_or(DynError::EmptyDecomposition)?.dim();
        for p in &parts {
            if p.dim() != dim {
                return Err(DynError::DimensionMismatch {
                    expected: dim,
                    got: p.dim(),
                });
            }
        }
        Ok(Self { dim, parts })
    }

    pub fn parts(&self) -> &[Arc<dyn VectorField>] {
        &self.parts
    }

    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn part(&self, i: usize) -> &dyn VectorField {
        self.parts[i].as_ref()
    }
}

impl VectorField for DecomposedField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut scratch = vec![0.0; self.dim];
        for part in &self.parts {
            part.eval_into(x, &mut scratch);
            for (o, s) in out.iter_mut().zip(&scratch) {
                *o += *s;
            }
        }
    }
}

/// Time-stamped state samples from numerical integration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    dim: usize,
}

impl Trajectory {
    pub fn new(dim: usize) -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            dim,
        }
    }

    /// Append a sample. Panics if `t` does not increase strictly or the
    /// state has the wrong dimension.
    pub fn push(&mut self, t: f64, state: Vec<f64>) {
        assert_eq!(state.len(), self.dim, "state dimension mismatch");
        if let Some(&last) = self.times.last() {
            assert!(t > last, "timestamps must be strictly increasing");
        }
        self.times.push(t);
        self.states.push(state);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("empty trajectory")
    }

    pub fn end_state(&self) -> &[f64] {
        self.states.last().expect("empty trajectory")
    }

    /// Write as CSV with header `t,x1,...,xn`.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "t")?;
        for k in 1..=self.dim {
            write!(w, ",x{k}")?;
        }
        writeln!(w)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(w, "{t}")?;
            for v in x {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Integration method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Method {
    /// Classic fixed-step fourth-order Runge-Kutta. Steps land exactly on
    /// multiples of the step size (final partial step allowed), which makes
    /// it the right choice when a scan step must equal the integration step.
    FixedRk4,
    /// Dormand-Prince 5(4) with step-size control, for long-horizon runs.
    AdaptiveRk45,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorConfig {
    /// Step size for FixedRk4; initial step for AdaptiveRk45.
    pub step: f64,
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl IntegratorConfig {
    pub fn rk4(step: f64) -> Self {
        Self {
            step,
            method: Method::FixedRk4,
            rel_tol: 1e-6,
            abs_tol: 1e-9,
        }
    }

    pub fn rk45(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            step: 1e-2,
            method: Method::AdaptiveRk45,
            rel_tol,
            abs_tol,
        }
    }

    fn validate(&self) -> Result<(), DynError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(DynError::BadConfig(format!(
                "step must be > 0, got {}",
                self.step
            )));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(DynError::BadConfig("tolerances must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::rk4(1e-3)
    }
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn state_ok(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite()) && max_abs(x) <= DIVERGENCE_GUARD
}

/// Integrate `x_dot = field(x)` from `x0` over `[0, t_end]`.
///
/// The trajectory starts at `(0, x0)` and contains every accepted step; the
/// last sample is at `t_end`. A non-finite derivative or a state beyond the
/// divergence guard yields [`DynError::Diverged`] carrying the samples
/// accepted so far.
pub fn integrate(
    field: &dyn VectorField,
    x0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, DynError> {
    cfg.validate()?;
    if x0.len() != field.dim() {
        return Err(DynError::DimensionMismatch {
            expected: field.dim(),
            got: x0.len(),
        });
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(DynError::BadConfig(format!(
            "t_end must be > 0, got {t_end}"
        )));
    }
    match cfg.method {
        Method::FixedRk4 => integrate_rk4(field, x0, t_end, cfg.step),
        Method::AdaptiveRk45 => integrate_rk45(field, x0, t_end, cfg),
    }
}

fn rk4_step(field: &dyn VectorField, x: &[f64], h: f64, scratch: &mut Rk4Scratch) -> Vec<f64> {
    let n = x.len();
    let Rk4Scratch {
        k1,
        k2,
        k3,
        k4,
        tmp,
    } = scratch;
    field.eval_into(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    field.eval_into(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    field.eval_into(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    field.eval_into(tmp, k4);
    (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

fn integrate_rk4(
    field: &dyn VectorField,
    x0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<Trajectory, DynError> {
    let mut traj = Trajectory::new(x0.len());
    traj.push(0.0, x0.to_vec());
    let mut scratch = Rk4Scratch::new(x0.len());
    let n_full = (t_end / h).floor() as usize;
    let mut x = x0.to_vec();
    for k in 1..=n_full {
        let t = k as f64 * h;
        if t > t_end {
            break;
        }
        x = rk4_step(field, &x, h, &mut scratch);
        if !state_ok(&x) {
            return Err(DynError::Diverged { trajectory: traj });
        }
        traj.push(t, x.clone());
    }
    // Final partial step onto t_end itself.
    let t_last = traj.end_time();
    let rem = t_end - t_last;
    if rem > 1e-12 * t_end.max(1.0) {
        x = rk4_step(field, &x, rem, &mut scratch);
        if !state_ok(&x) {
            return Err(DynError::Diverged { trajectory: traj });
        }
        traj.push(t_end, x);
    }
    Ok(traj)
}

// Dormand-Prince 5(4) coefficients. Stage times are not needed: all fields
// here are autonomous.
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn integrate_rk45(
    field: &dyn VectorField,
    x0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, DynError> {
    let n = x0.len();
    let mut traj = Trajectory::new(n);
    traj.push(0.0, x0.to_vec());

    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut h = cfg.step.min(t_end);
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    const MAX_STEPS: usize = 10_000_000;

    for _ in 0..MAX_STEPS {
        if t >= t_end {
            return Ok(traj);
        }
        h = h.min(t_end - t);
        for s in 0..7 {
            for i in 0..n {
                let mut acc = x[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h * DP_A[s][j] * kj[i];
                }
                stage[i] = acc;
            }
            let (_, tail) = k.split_at_mut(s);
            field.eval_into(&stage, &mut tail[0]);
        }
        let mut x5 = vec![0.0; n];
        let mut err_norm = 0.0f64;
        for i in 0..n {
            let mut acc5 = x[i];
            let mut acc4 = x[i];
            for s in 0..7 {
                acc5 += h * DP_B5[s] * k[s][i];
                acc4 += h * DP_B4[s] * k[s][i];
            }
            x5[i] = acc5;
            let scale = cfg.abs_tol + cfg.rel_tol * x[i].abs().max(acc5.abs());
            let e = (acc5 - acc4) / scale;
            err_norm += e * e;
        }
        err_norm = (err_norm / n as f64).sqrt();

        if !x5.iter().all(|v| v.is_finite()) {
            return Err(DynError::Diverged { trajectory: traj });
        }
        if err_norm <= 1.0 {
            t += h;
            x = x5;
            if !state_ok(&x) {
                return Err(DynError::Diverged { trajectory: traj });
            }
            traj.push(t, x.clone());
        }
        let factor = if err_norm > 0.0 {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= factor;
        if h < 1e-14 * t_end.max(1.0) {
            return Err(DynError::Diverged { trajectory: traj });
        }
    }
    Err(DynError::Diverged { trajectory: traj })
}

/// Integrate many initial conditions in parallel; results keep input order.
pub fn integrate_batch(
    field: &dyn VectorField,
    x0s: &[Vec<f64>],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Vec<Result<Trajectory, DynError>> {
    x0s.par_iter()
        .map(|x0| integrate(field, x0, t_end, cfg))
        .collect()
}

/// Solve `f(x) = 0` by damped Newton iteration with a central finite
/// difference Jacobian (step `1e-7 * (1 + |x_i|)` per coordinate).
///
/// The returned point satisfies `||f(x)||_inf <= tol`. Fields with a
/// continuum of equilibria (singular Jacobian) fall back to a least-squares
/// Newton step, converging to the equilibrium nearest the guess direction.
pub fn equilibrium_solve(
    field: &dyn VectorField,
    guess: &[f64],
    tol: f64,
) -> Result<Vec<f64>, DynError> {
    if guess.len() != field.dim() {
        return Err(DynError::DimensionMismatch {
            expected: field.dim(),
            got: guess.len(),
        });
    }
    let mut x = DVector::from_column_slice(guess);
    let mut fx = DVector::from_vec(field.eval(x.as_slice()));
    let mut res = fx.amax();
    const MAX_ITER: usize = 100;

    for iter in 0..MAX_ITER {
        if res <= tol {
            let out = x.as_slice().to_vec();
            debug_assert!(max_abs(&field.eval(&out)) <= tol);
            return Ok(out);
        }

        let jac = fd_jacobian(field, x.as_slice());
        let step = solve_newton_step(&jac, &fx);
        let step = match step {
            Some(s) => s,
            None => {
                return Err(DynError::NoEquilibrium {
                    best: x.as_slice().to_vec(),
                    residual: res,
                    iterations: iter,
                })
            }
        };

        // Backtracking on the residual infinity norm.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &x + alpha * &step;
            let fc = DVector::from_vec(field.eval(cand.as_slice()));
            let rc = fc.amax();
            if rc.is_finite() && rc < res {
                x = cand;
                fx = fc;
                res = rc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(DynError::NoEquilibrium {
                best: x.as_slice().to_vec(),
                residual: res,
                iterations: iter,
            });
        }
    }
    if res <= tol {
        return Ok(x.as_slice().to_vec());
    }
    Err(DynError::NoEquilibrium {
        best: x.as_slice().to_vec(),
        residual: res,
        iterations: MAX_ITER,
    })
}

fn fd_jacobian(field: &dyn VectorField, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = 1e-7 * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        xm[j] = x[j] - h;
        field.eval_into(&xp, &mut fp);
        field.eval_into(&xm, &mut fm);
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
        xp[j] = x[j];
        xm[j] = x[j];
    }
    jac
}

fn solve_newton_step(jac: &DMatrix<f64>, fx: &DVector<f64>) -> Option<DVector<f64>> {
    let rhs = -fx;
    if let Some(sol) = jac.clone().lu().solve(&rhs) {
        if sol.iter().all(|v| v.is_finite()) {
            return Some(sol);
        }
    }
    // Singular Jacobian: minimum-norm least-squares step.
    let svd = jac.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(1.0);
    svd.solve(&rhs, eps)
        .ok()
        .filter(|s| s.iter().all(|v| v.is_finite()))
}
