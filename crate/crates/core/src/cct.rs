//! Critical clearing time estimation: build the angle-difference polytope
//! around the post-fault equilibrium, scan the fault-on trajectory for its
//! first exit, and verify against a time-domain bisection oracle.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynsys::{self, equilibrium_solve, DynError, IntegratorConfig, Trajectory};
use crate::invariance::{
    build_candidate, CandidateRoa, IndividualInvariantSet, InvarianceError, LimitSet,
};
use crate::polytope::{HalfspacePolytope, FEASIBILITY_TOL};
use crate::powersys::{
    kron_reduce_with, power_flow, reduced_angle_field, swing_field, Contingency, PowerCase,
    PowerError, PowerFlowSolution, ReducedSystem, ReductionOptions, ReductionVariant,
};

/// Power-flow tolerance used by the screening pipeline.
const PF_TOL: f64 = 1e-8;

/// Newton tolerance for the post-fault equilibrium.
const SEP_TOL: f64 = 1e-9;

/// Pairwise angle deviation (rad, relative to the post-fault equilibrium
/// separation) beyond which the time-domain oracle declares instability.
/// Matches the polytope geometry.
pub const INSTABILITY_THRESHOLD: f64 = PI;

#[derive(Debug, Error)]
pub enum CctError {
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error(transparent)]
    Dyn(#[from] DynError),
    #[error(transparent)]
    Invariance(#[from] InvarianceError),
    #[error("trajectory dimension {traj} cannot project onto polytope dimension {poly}")]
    ProjectionMismatch { traj: usize, poly: usize },
    #[error("contingency is unstable even with instantaneous clearing")]
    ContingencyUnstable,
    #[error("bad parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CctStatus {
    Ok,
    PolytopeEmpty,
    NeverExits,
    Error(String),
}

impl std::fmt::Display for CctStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CctStatus::Ok => write!(f, "ok"),
            CctStatus::PolytopeEmpty => write!(f, "polytope_empty"),
            CctStatus::NeverExits => write!(f, "never_exits"),
            CctStatus::Error(e) => write!(f, "error: {e}"),
        }
    }
}

/// Per-contingency record: the polytope estimate next to the oracle value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CctResult {
    pub contingency: Contingency,
    pub t_c_polytope: Option<f64>,
    pub t_c_oracle: Option<f64>,
    /// Oracle reached the horizon without finding instability.
    pub oracle_no_cct: bool,
    /// Angle-difference state at the first sample outside the polytope.
    pub exit_state: Option<Vec<f64>>,
    pub dt: f64,
    pub status: CctStatus,
    /// `t_c_polytope <= t_c_oracle` (true when either value is missing).
    pub conservative: bool,
}

impl CctResult {
    /// True when both estimates exist and the polytope one is not larger.
    pub fn is_conservative(&self) -> bool {
        match (self.t_c_polytope, self.t_c_oracle) {
            (Some(p), Some(o)) => p <= o + 1e-12,
            _ => true,
        }
    }
}

/// Outcome of the trajectory scan alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub t_c: Option<f64>,
    pub exit_state: Option<Vec<f64>>,
    pub status: CctStatus,
}

/// Outcome of the time-domain oracle alone.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OracleResult {
    pub t_c: f64,
    /// Stable over the whole horizon: `t_c` is the horizon, not a CCT.
    pub no_cct: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ScreenConfig {
    /// Fault-on simulation and scan step, seconds.
    pub dt: f64,
    /// Fault-on horizon and post-fault stability window, seconds.
    pub t_max: f64,
    /// Oracle bracketing tolerance, seconds (>= dt).
    pub tol: f64,
    /// Drop transfer conductances from the reduced models.
    pub lossless: bool,
    /// Include the machine-reference rows `|d_i1 - d_i1^s| <= w` in the
    /// polytope (pairs with the reference machine), not only pairs among
    /// the non-reference machines.
    pub per_angle_bounds: bool,
    /// Half-width `w` of the pairwise angle-difference bounds, radians.
    /// Pi bounds the pair sub-fields' invariant bands; smaller widths are
    /// available for sensitivity studies.
    pub box_half_width: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_max: 5.0,
            tol: 1e-3,
            lossless: false,
            per_angle_bounds: true,
            box_half_width: PI,
        }
    }
}

impl ScreenConfig {
    fn validate(&self) -> Result<(), CctError> {
        if !(self.dt > 0.0) {
            return Err(CctError::BadParams(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if !(self.t_max > self.dt) {
            return Err(CctError::BadParams(format!(
                "t_max must exceed dt, got {} <= {}",
                self.t_max, self.dt
            )));
        }
        if self.tol + 1e-15 < self.dt {
            return Err(CctError::BadParams(format!(
                "tol must be >= dt, got {} < {}",
                self.tol, self.dt
            )));
        }
        Ok(())
    }

    fn reduction(&self) -> ReductionOptions {
        ReductionOptions {
            lossless: self.lossless,
        }
    }
}

/// Options for the power-system candidate set construction.
#[derive(Debug, Clone, Copy)]
pub struct RoaOptions {
    pub per_angle_bounds: bool,
    pub half_width: f64,
}

impl Default for RoaOptions {
    fn default() -> Self {
        Self {
            per_angle_bounds: true,
            half_width: PI,
        }
    }
}

/// Build the candidate region of attraction for a post-fault reduced system:
/// pairwise angle-difference bounds of +-pi centered at the post-fault
/// stable equilibrium, grouped per sub-field of the reduced model.
pub fn build_power_roa(sys: &ReducedSystem) -> Result<CandidateRoa, CctError> {
    build_power_roa_with(sys, RoaOptions::default())
}

pub fn build_power_roa_with(
    sys: &ReducedSystem,
    opts: RoaOptions,
) -> Result<CandidateRoa, CctError> {
    let n = sys.n_mach();
    if n < 2 {
        return Err(CctError::BadParams("need at least two machines".into()));
    }
    if !(opts.half_width > 0.0) {
        return Err(CctError::BadParams("half width must be positive".into()));
    }
    let w = opts.half_width;
    let dim = n - 1;
    let field = reduced_angle_field(sys);
    let sep = equilibrium_solve(&field, &sys.delta_pre_relative(), SEP_TOL)
        .map_err(|e| CctError::Power(PowerError::NoPostFaultSep(e.to_string())))?;

    // Source for machine m (m = 1..n-1): its pair rows with every higher
    // machine index, plus (optionally) its pair with the reference machine,
    // which degenerates to a per-angle bound since the reference angle is 0.
    let mut sources = Vec::with_capacity(dim);
    for m in 1..n {
        let c = m - 1;
        let mut rows = Vec::new();
        let mut bounds = Vec::new();
        if opts.per_angle_bounds {
            let mut up = vec![0.0; dim];
            up[c] = 1.0;
            rows.push(up);
            bounds.push(w + sep[c]);
            let mut lo = vec![0.0; dim];
            lo[c] = -1.0;
            rows.push(lo);
            bounds.push(w - sep[c]);
        }
        for k in (m + 1)..n {
            let kc = k - 1;
            let shift = sep[c] - sep[kc];
            let mut up = vec![0.0; dim];
            up[c] = 1.0;
            up[kc] = -1.0;
            rows.push(up);
            bounds.push(w + shift);
            let mut lo = vec![0.0; dim];
            lo[c] = -1.0;
            lo[kc] = 1.0;
            rows.push(lo);
            bounds.push(w - shift);
        }
        sources.push(IndividualInvariantSet {
            polytope: HalfspacePolytope::from_rows(dim, rows, bounds).expect("pair rows are valid"),
            limit_set: LimitSet::Point(sep.clone()),
        });
    }
    Ok(build_candidate(sources, sep)?)
}

/// Project a full swing state `(delta_1..delta_n, omega_1..omega_n)` onto
/// machine-0-referenced angle differences. States already in the reduced
/// space pass through unchanged.
pub fn project_to_angle_differences(
    state: &[f64],
    reduced_dim: usize,
) -> Result<Vec<f64>, CctError> {
    if state.len() == reduced_dim {
        return Ok(state.to_vec());
    }
    if state.len() == 2 * (reduced_dim + 1) {
        return Ok((1..=reduced_dim).map(|i| state[i] - state[0]).collect());
    }
    Err(CctError::ProjectionMismatch {
        traj: state.len(),
        poly: reduced_dim,
    })
}

/// Simulate the fault-on swing dynamics from the pre-fault equilibrium
/// (rotors at their pre-fault angles, zero speed deviation) with fixed-step
/// RK4 at `dt`. Divergence before `t_max` truncates the trajectory rather
/// than failing: a fault-on system is expected to run away.
pub fn fault_on_trajectory(
    case: &PowerCase,
    contingency: &Contingency,
    dt: f64,
    t_max: f64,
) -> Result<Trajectory, CctError> {
    fault_on_trajectory_with(case, contingency, dt, t_max, ReductionOptions::default())
}

pub fn fault_on_trajectory_with(
    case: &PowerCase,
    contingency: &Contingency,
    dt: f64,
    t_max: f64,
    opts: ReductionOptions,
) -> Result<Trajectory, CctError> {
    let sol = power_flow(case, PF_TOL)?;
    let sys = kron_reduce_with(case, &sol, ReductionVariant::FaultOn(*contingency), opts)?;
    fault_on_from_parts(&sys, dt, t_max)
}

fn fault_on_from_parts(
    fault_sys: &ReducedSystem,
    dt: f64,
    t_max: f64,
) -> Result<Trajectory, CctError> {
    let field = swing_field(fault_sys);
    let mut x0 = fault_sys.delta_pre();
    x0.resize(2 * fault_sys.n_mach(), 0.0);
    match dynsys::integrate(&field, &x0, t_max, &IntegratorConfig::rk4(dt)) {
        Ok(t) => Ok(t),
        Err(DynError::Diverged { trajectory }) => Ok(trajectory),
        Err(e) => Err(e.into()),
    }
}

/// Scan the fault-on trajectory against the candidate set: `t_c` is the last
/// sample time before the first sample whose angle-difference projection
/// leaves the polytope. The emptiness gate runs first.
pub fn first_exit_cct(
    roa: &CandidateRoa,
    traj: &Trajectory,
    dt: f64,
    t_max: f64,
) -> Result<ScanResult, CctError> {
    if !(dt > 0.0) {
        return Err(CctError::BadParams("dt must be positive".into()));
    }
    if roa.omega_e().is_empty() {
        return Ok(ScanResult {
            t_c: None,
            exit_state: None,
            status: CctStatus::PolytopeEmpty,
        });
    }
    let dim = roa.dim();
    let mut last_inside: Option<f64> = None;
    for i in 0..traj.len() {
        let t = traj.time(i);
        if t > t_max + 1e-12 {
            break;
        }
        let x = project_to_angle_differences(traj.state(i), dim)?;
        if roa.omega_e().contains(&x, FEASIBILITY_TOL) {
            last_inside = Some(t);
        } else {
            return Ok(ScanResult {
                t_c: Some(last_inside.unwrap_or(0.0)),
                exit_state: Some(x),
                status: CctStatus::Ok,
            });
        }
    }
    Ok(ScanResult {
        t_c: last_inside,
        exit_state: None,
        status: CctStatus::NeverExits,
    })
}

/// Pairwise angle deviation from the equilibrium separation, maximized over
/// machine pairs: the oracle's instability measure.
fn max_pair_deviation(delta: &[f64], sep_full: &[f64]) -> f64 {
    let n = delta.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dev = (delta[i] - delta[j]) - (sep_full[i] - sep_full[j]);
            worst = worst.max(dev.abs());
        }
    }
    worst
}

struct OracleParts {
    fault_traj: Trajectory,
    post_sys: ReducedSystem,
    post_field: crate::dynsys::DecomposedField,
    /// Post-fault equilibrium angles with the reference machine prepended.
    sep_full: Vec<f64>,
    n_mach: usize,
}

impl OracleParts {
    fn build(
        case: &PowerCase,
        sol: &PowerFlowSolution,
        contingency: &Contingency,
        cfg: &ScreenConfig,
    ) -> Result<Self, CctError> {
        let fault_sys = kron_reduce_with(
            case,
            sol,
            ReductionVariant::FaultOn(*contingency),
            cfg.reduction(),
        )?;
        let fault_traj = fault_on_from_parts(&fault_sys, cfg.dt, cfg.t_max)?;
        let post_sys = kron_reduce_with(
            case,
            sol,
            ReductionVariant::PostFault(*contingency),
            cfg.reduction(),
        )?;
        let sep = equilibrium_solve(
            &reduced_angle_field(&post_sys),
            &post_sys.delta_pre_relative(),
            SEP_TOL,
        )
        .map_err(|e| CctError::Power(PowerError::NoPostFaultSep(e.to_string())))?;
        let mut sep_full = vec![0.0];
        sep_full.extend_from_slice(&sep);
        let post_field = swing_field(&post_sys);
        let n_mach = post_sys.n_mach();
        Ok(Self {
            fault_traj,
            post_sys,
            post_field,
            sep_full,
            n_mach,
        })
    }

    /// Is the system stable when the fault clears at sample `k`? A stable
    /// swing may cross the threshold transiently; loss of synchronism means
    /// the deviation is still beyond it at the end of the window (or ran
    /// beyond any recapture earlier).
    fn stable_when_cleared_at(&self, k: usize, cfg: &ScreenConfig) -> bool {
        if k >= self.fault_traj.len() {
            // Fault-on trajectory was truncated by divergence; clearing
            // this late is unstable by construction.
            return false;
        }
        let x0 = self.fault_traj.state(k);
        let traj = match dynsys::integrate(
            &self.post_field,
            x0,
            cfg.t_max,
            &IntegratorConfig::rk4(cfg.dt),
        ) {
            Ok(t) => t,
            Err(_) => return false,
        };
        for i in 0..traj.len() {
            let state = traj.state(i);
            if max_pair_deviation(&state[..self.n_mach], &self.sep_full)
                > 4.0 * INSTABILITY_THRESHOLD
            {
                return false;
            }
        }
        let last = traj.end_state();
        max_pair_deviation(&last[..self.n_mach], &self.sep_full) <= INSTABILITY_THRESHOLD
    }
}

/// Binary search for the critical clearing time: the latest clearing instant
/// (a multiple of `dt`, bracketed to `tol`) whose post-fault trajectory
/// keeps every pairwise angle separation within [`INSTABILITY_THRESHOLD`] of
/// the post-fault equilibrium separation for `t_max` seconds.
pub fn bisection_cct_oracle(
    case: &PowerCase,
    contingency: &Contingency,
    dt: f64,
    t_max: f64,
    tol: f64,
) -> Result<OracleResult, CctError> {
    let cfg = ScreenConfig {
        dt,
        t_max,
        tol,
        ..ScreenConfig::default()
    };
    cfg.validate()?;
    contingency.validate(case)?;
    let sol = power_flow(case, PF_TOL)?;
    let parts = OracleParts::build(case, &sol, contingency, &cfg)?;
    oracle_bisect(&parts, &cfg)
}

fn oracle_bisect(parts: &OracleParts, cfg: &ScreenConfig) -> Result<OracleResult, CctError> {
    let k_max = (cfg.t_max / cfg.dt).floor() as usize;
    if !parts.stable_when_cleared_at(0, cfg) {
        return Err(CctError::ContingencyUnstable);
    }
    if parts.stable_when_cleared_at(k_max, cfg) {
        return Ok(OracleResult {
            t_c: cfg.t_max,
            no_cct: true,
        });
    }
    let tol_steps = ((cfg.tol / cfg.dt).round() as usize).max(1);
    let mut lo = 0usize; // stable
    let mut hi = k_max; // unstable
    while hi - lo > tol_steps {
        let mid = lo + (hi - lo) / 2;
        if parts.stable_when_cleared_at(mid, cfg) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(OracleResult {
        t_c: lo as f64 * cfg.dt,
        no_cct: false,
    })
}

/// Run the full pipeline for one contingency against an already-solved
/// pre-fault operating point.
fn screen_one(
    case: &PowerCase,
    sol: &PowerFlowSolution,
    contingency: &Contingency,
    cfg: &ScreenConfig,
) -> CctResult {
    let attempt = || -> Result<CctResult, CctError> {
        contingency.validate(case)?;
        let parts = OracleParts::build(case, sol, contingency, cfg)?;
        let roa = build_power_roa_with(
            &parts.post_sys,
            RoaOptions {
                per_angle_bounds: cfg.per_angle_bounds,
                half_width: cfg.box_half_width,
            },
        )?;
        let scan = first_exit_cct(&roa, &parts.fault_traj, cfg.dt, cfg.t_max)?;
        let oracle = oracle_bisect(&parts, cfg)?;
        let mut result = CctResult {
            contingency: *contingency,
            t_c_polytope: scan.t_c,
            t_c_oracle: Some(oracle.t_c),
            oracle_no_cct: oracle.no_cct,
            exit_state: scan.exit_state,
            dt: cfg.dt,
            status: scan.status,
            conservative: true,
        };
        result.conservative = result.is_conservative();
        Ok(result)
    };
    attempt().unwrap_or_else(|e| {
        log::info!("contingency {contingency} failed: {e}");
        CctResult {
            contingency: *contingency,
            t_c_polytope: None,
            t_c_oracle: None,
            oracle_no_cct: false,
            exit_state: None,
            dt: cfg.dt,
            status: CctStatus::Error(e.to_string()),
            conservative: true,
        }
    })
}

/// Screen a batch of contingencies. Per-contingency failures land in the
/// result status; the batch itself never aborts. Results keep input order.
pub fn screen(
    case: &PowerCase,
    contingencies: &[Contingency],
    cfg: &ScreenConfig,
) -> Result<Vec<CctResult>, CctError> {
    cfg.validate()?;
    if contingencies.is_empty() {
        return Ok(Vec::new());
    }
    let sol = power_flow(case, PF_TOL)?;
    Ok(contingencies
        .par_iter()
        .map(|c| screen_one(case, &sol, c, cfg))
        .collect())
}

/// All line-trip contingencies derivable from in-service branches (each
/// endpoint of each branch as the faulted bus).
pub fn line_trip_candidates(case: &PowerCase) -> Vec<Contingency> {
    let mut out = Vec::new();
    for br in case.branches.iter().filter(|b| b.in_service) {
        out.push(Contingency::new(br.from, (br.from, br.to)));
        out.push(Contingency::new(br.to, (br.from, br.to)));
    }
    out
}

/// CSV table matching the published layout:
/// `faulted_bus,tripped_line,t_c_polytope,t_c_oracle,status`.
pub fn write_results_csv<W: std::io::Write>(
    results: &[CctResult],
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "faulted_bus,tripped_line,t_c_polytope,t_c_oracle,status")?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.contingency.faulted_bus,
            r.contingency.line_label(),
            r.t_c_polytope.map_or(String::new(), fmt_seconds),
            r.t_c_oracle.map_or(String::new(), fmt_seconds),
            r.status
        )?;
    }
    Ok(())
}

/// Seconds with millisecond-ish precision, trailing zeros trimmed.
pub fn fmt_seconds(t: f64) -> String {
    let s = format!("{t:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powersys::{bundled_case, kron_reduce};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn wscc9_postfault(c: Contingency) -> ReducedSystem {
        let case = bundled_case("wscc9").unwrap().unwrap();
        let sol = power_flow(&case, 1e-10).unwrap();
        kron_reduce(&case, &sol, ReductionVariant::PostFault(c)).unwrap()
    }

    #[test]
    fn power_roa_has_pairwise_rows_and_contains_sep() {
        let sys = wscc9_postfault(Contingency::new(8, (8, 9)));
        let roa = build_power_roa(&sys).unwrap();
        // n(n-1) rows for n = 3.
        assert_eq!(roa.omega_e().n_rows(), 6);
        assert_eq!(roa.dim(), 2);
        assert!(roa.omega_e().contains(roa.equilibrium(), 1e-12));
    }

    #[test]
    fn power_roa_without_reference_rows() {
        let sys = wscc9_postfault(Contingency::new(8, (8, 9)));
        let roa = build_power_roa_with(
            &sys,
            RoaOptions {
                per_angle_bounds: false,
                ..RoaOptions::default()
            },
        )
        .unwrap();
        assert_eq!(roa.omega_e().n_rows(), 2);
    }

    #[test]
    fn synthetic_straightline_exit_at_pi() {
        let pi_box = HalfspacePolytope::inf_norm_box(2, PI);
        let source = IndividualInvariantSet {
            polytope: pi_box,
            limit_set: LimitSet::Point(vec![0.0, 0.0]),
        };
        let roa = build_candidate(vec![source], vec![0.0, 0.0]).unwrap();
        let dt = 0.01;
        let mut traj = Trajectory::new(2);
        for k in 0..=400 {
            let t = k as f64 * dt;
            traj.push(t, vec![t, 0.0]);
        }
        let scan = first_exit_cct(&roa, &traj, dt, 4.0).unwrap();
        assert_eq!(scan.status, CctStatus::Ok);
        let t_c = scan.t_c.unwrap();
        let expected = 314.0 * dt; // last grid point before the exit at pi
        assert!((t_c - expected).abs() < 1e-9, "t_c {t_c}");
    }

    #[test]
    fn constant_trajectory_never_exits() {
        let sys = wscc9_postfault(Contingency::new(8, (8, 9)));
        let roa = build_power_roa(&sys).unwrap();
        let mut traj = Trajectory::new(2);
        for k in 0..=100 {
            traj.push(k as f64 * 0.01, roa.equilibrium().to_vec());
        }
        let scan = first_exit_cct(&roa, &traj, 0.01, 1.0).unwrap();
        assert_eq!(scan.status, CctStatus::NeverExits);
        assert!(scan.exit_state.is_none());
    }

    #[test]
    fn empty_polytope_gates_the_scan() {
        // Hand-build a CandidateRoa with an infeasible polytope via bypassing
        // build_candidate is not possible; instead check the polytope gate
        // through a roa with equilibrium inside but scanning a mismatched
        // trajectory dimension errors.
        let sys = wscc9_postfault(Contingency::new(8, (8, 9)));
        let roa = build_power_roa(&sys).unwrap();
        let mut traj = Trajectory::new(5);
        traj.push(0.0, vec![0.0; 5]);
        assert!(matches!(
            first_exit_cct(&roa, &traj, 0.01, 1.0),
            Err(CctError::ProjectionMismatch { .. })
        ));
    }

    #[test]
    fn fault_on_starts_exactly_at_prefault_equilibrium() {
        let case = bundled_case("wscc9").unwrap().unwrap();
        let sol = power_flow(&case, 1e-10).unwrap();
        let pre = kron_reduce(&case, &sol, ReductionVariant::PreFault).unwrap();
        let c = Contingency::new(8, (8, 9));
        let traj = fault_on_trajectory(&case, &c, 1e-3, 0.5).unwrap();
        assert_eq!(traj.time(0), 0.0);
        let x0 = traj.state(0);
        for (a, b) in x0[..3].iter().zip(pre.delta_pre()) {
            assert_eq!(*a, b);
        }
        assert_eq!(&x0[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn fault_on_angle_spread_grows() {
        let case = bundled_case("wscc9").unwrap().unwrap();
        let c = Contingency::new(8, (8, 9));
        let traj = fault_on_trajectory(&case, &c, 1e-3, 0.5).unwrap();
        let spread = |x: &[f64]| -> f64 {
            let d = &x[..3];
            let mut worst = 0.0f64;
            for i in 0..3 {
                for j in (i + 1)..3 {
                    worst = worst.max((d[i] - d[j]).abs());
                }
            }
            worst
        };
        let mut last = -1.0;
        for i in (0..traj.len()).step_by(50) {
            let s = spread(traj.state(i));
            assert!(s >= last - 1e-9, "spread shrank at {i}");
            last = s;
        }
    }

    #[test]
    fn fault_on_rk4_step_halving_agrees() {
        let case = bundled_case("wscc9").unwrap().unwrap();
        let c = Contingency::new(8, (8, 9));
        let t1 = fault_on_trajectory(&case, &c, 1e-3, 0.4).unwrap();
        let t2 = fault_on_trajectory(&case, &c, 5e-4, 0.4).unwrap();
        for k in 0..=4 {
            let i1 = k * 100; // every 0.1 s
            let i2 = k * 200;
            assert!((t1.time(i1) - t2.time(i2)).abs() < 1e-12);
            for (a, b) in t1.state(i1).iter().zip(t2.state(i2)) {
                assert!((a - b).abs() <= 1e-6, "{a} vs {b} at sample {k}");
            }
        }
    }

    #[test]
    fn projection_two_routes_agree_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let n = rng.random_range(2..6);
            let state: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let direct = project_to_angle_differences(&state, n - 1).unwrap();
            // Matrix route: row r has -1 at column 0 and +1 at column r+1.
            let matrix: Vec<f64> = (0..n - 1)
                .map(|r| {
                    let mut acc = 0.0;
                    for (col, &v) in state.iter().enumerate() {
                        let coeff = if col == 0 {
                            -1.0
                        } else if col == r + 1 {
                            1.0
                        } else {
                            0.0
                        };
                        if coeff != 0.0 {
                            acc += coeff * v;
                        }
                    }
                    acc
                })
                .collect();
            assert_eq!(direct, matrix);
        }
    }

    #[test]
    fn scan_matches_bruteforce_on_random_piecewise_linear_trajectories() {
        let pi_box = HalfspacePolytope::inf_norm_box(2, 1.5);
        let roa = build_candidate(
            vec![IndividualInvariantSet {
                polytope: pi_box,
                limit_set: LimitSet::Point(vec![0.0, 0.0]),
            }],
            vec![0.0, 0.0],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..1000 {
            let dt = 0.01;
            let n = rng.random_range(5..80);
            // Piecewise-linear walk with occasional large kicks.
            let mut x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let mut traj = Trajectory::new(2);
            traj.push(0.0, x.clone());
            for k in 1..n {
                if rng.random_bool(0.1) {
                    x[0] += rng.random_range(-2.0..2.0);
                    x[1] += rng.random_range(-2.0..2.0);
                } else {
                    x[0] += rng.random_range(-0.1..0.1);
                    x[1] += rng.random_range(-0.1..0.1);
                }
                traj.push(k as f64 * dt, x.clone());
            }
            let scan = first_exit_cct(&roa, &traj, dt, 1.0).unwrap();
            // Brute force: first sample outside, previous time is t_c.
            let mut expect_tc = None;
            let mut expect_exit = None;
            for i in 0..traj.len() {
                if roa.omega_e().contains(traj.state(i), FEASIBILITY_TOL) {
                    expect_tc = Some(traj.time(i));
                } else {
                    expect_exit = Some(traj.state(i).to_vec());
                    break;
                }
            }
            match expect_exit {
                Some(exit) => {
                    assert_eq!(scan.status, CctStatus::Ok);
                    assert_eq!(scan.t_c, Some(expect_tc.unwrap_or(0.0)));
                    assert_eq!(scan.exit_state, Some(exit));
                }
                None => {
                    assert_eq!(scan.status, CctStatus::NeverExits);
                    assert_eq!(scan.t_c, expect_tc);
                }
            }
        }
    }

    #[test]
    fn two_machine_roa_is_a_symmetric_interval_when_sep_is_zero() {
        use nalgebra::DMatrix;
        use num_complex::Complex64;
        let y = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, -2.0),
                Complex64::new(0.0, 2.0),
                Complex64::new(0.0, 2.0),
                Complex64::new(0.0, -2.0),
            ],
        );
        let sys = ReducedSystem {
            y_reduced: y,
            e_internal: vec![Complex64::new(1.0, 0.0); 2],
            p_mech: vec![0.0, 0.0],
            m_inertia: vec![0.1, 0.1],
            d_damp: vec![0.0, 0.0],
            lossless: true,
        };
        let roa = build_power_roa(&sys).unwrap();
        // One reduced coordinate bounded as |d_21 - d_21^s| <= pi with the
        // equilibrium separation at zero.
        assert_eq!(roa.dim(), 1);
        assert_eq!(roa.omega_e().n_rows(), 2);
        assert_eq!(roa.equilibrium(), &[0.0]);
        for (i, b) in roa.omega_e().b_vector().iter().enumerate() {
            assert!((b - PI).abs() < 1e-12, "row {i} bound {b}");
        }
    }

    #[test]
    fn oracle_brackets_wscc9_first_contingency() {
        let case = bundled_case("wscc9").unwrap().unwrap();
        let c = Contingency::new(8, (8, 9));
        let oracle = bisection_cct_oracle(&case, &c, 1e-3, 3.0, 1e-3).unwrap();
        assert!(!oracle.no_cct);
        assert!(
            (0.2..0.6).contains(&oracle.t_c),
            "oracle CCT {} outside the plausible band",
            oracle.t_c
        );
        // Multiple of dt.
        let steps = oracle.t_c / 1e-3;
        assert!((steps - steps.round()).abs() < 1e-9);
    }

    #[test]
    fn weak_radial_stub_fault_never_destabilizes() {
        // A high-impedance stub feeding no machine and no load: grounding
        // its far end barely disturbs the machines, so no clearing time in
        // the horizon is critical.
        let mut case = bundled_case("wscc9").unwrap().unwrap();
        case.buses.push(crate::powersys::Bus {
            id: 10,
            bus_type: crate::powersys::BusType::Pq,
            voltage: 1.0,
            p_load: 0.0,
            q_load: 0.0,
        });
        case.branches.push(crate::powersys::Branch {
            from: 9,
            to: 10,
            r: 0.0,
            x: 100.0,
            b: 0.0,
            in_service: true,
        });
        case.validate().unwrap();
        let c = Contingency::new(10, (9, 10));
        let oracle = bisection_cct_oracle(&case, &c, 1e-3, 2.0, 1e-3).unwrap();
        assert!(oracle.no_cct);
        assert_eq!(oracle.t_c, 2.0);
    }

    #[test]
    fn fmt_seconds_trims() {
        assert_eq!(fmt_seconds(0.365), "0.365");
        assert_eq!(fmt_seconds(5.0), "5");
        assert_eq!(fmt_seconds(0.0), "0");
    }

    #[test]
    fn empty_contingency_list_screens_to_empty() {
        let case = bundled_case("wscc9").unwrap().unwrap();
        let results = screen(&case, &[], &ScreenConfig::default()).unwrap();
        assert!(results.is_empty());
    }

    #[test]
    fn line_trip_candidates_cover_both_endpoints() {
        let case = bundled_case("wscc9").unwrap().unwrap();
        let cands = line_trip_candidates(&case);
        assert_eq!(cands.len(), 18);
        assert!(cands.contains(&Contingency::new(8, (8, 9))));
        assert!(cands.contains(&Contingency::new(9, (8, 9))));
    }
}
