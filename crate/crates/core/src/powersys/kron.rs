//! Reduction of a solved network to machine internal nodes: loads become
//! constant shunt admittances, machines appear behind their transient
//! reactances, and every network node is eliminated by a Schur complement.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::case::PowerCase;
use super::powerflow::{ybus, PowerFlowSolution};
use super::{Contingency, PowerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReductionVariant {
    PreFault,
    /// Faulted bus grounded (its node held at zero voltage).
    FaultOn(Contingency),
    /// Tripped branch removed.
    PostFault(Contingency),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReductionOptions {
    /// Zero the transfer conductances so the swing model keeps only the
    /// susceptance terms. Mechanical powers are recomputed from the
    /// susceptance-only flows at the pre-fault angles so the pre-fault
    /// point stays an exact equilibrium.
    pub lossless: bool,
}

/// The classical-model data over machine internal nodes.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    /// n x n complex admittance over internal nodes (symmetric).
    pub y_reduced: DMatrix<Complex64>,
    /// Pre-fault internal voltage phasors (magnitude held constant).
    pub e_internal: Vec<Complex64>,
    /// Mechanical powers, pu.
    pub p_mech: Vec<f64>,
    /// `M_i = 2 H_i / omega_s`, pu power per (rad/s^2).
    pub m_inertia: Vec<f64>,
    /// Damping converted to the radian convention, `D_i / omega_s`.
    pub d_damp: Vec<f64>,
    pub lossless: bool,
}

impl ReducedSystem {
    pub fn n_mach(&self) -> usize {
        self.e_internal.len()
    }

    pub fn e_mag(&self, i: usize) -> f64 {
        self.e_internal[i].norm()
    }

    /// Pre-fault internal rotor angles, rad.
    pub fn delta_pre(&self) -> Vec<f64> {
        self.e_internal.iter().map(|e| e.arg()).collect()
    }

    /// Pre-fault angles referenced to machine 0: `delta_i - delta_0` for
    /// `i = 1..n`.
    pub fn delta_pre_relative(&self) -> Vec<f64> {
        let d = self.delta_pre();
        d[1..].iter().map(|&di| di - d[0]).collect()
    }

    /// Electrical air-gap power of each machine at the given rotor angles:
    /// `P_i = sum_j E_i E_j (G_ij cos(d_i - d_j) + B_ij sin(d_i - d_j))`.
    pub fn electrical_power(&self, delta: &[f64]) -> Vec<f64> {
        let n = self.n_mach();
        debug_assert_eq!(delta.len(), n);
        let mut p = vec![0.0; n];
        for i in 0..n {
            let ei = self.e_mag(i);
            let mut acc = 0.0;
            for j in 0..n {
                let y = self.y_reduced[(i, j)];
                if y.re == 0.0 && y.im == 0.0 {
                    continue;
                }
                let (s, c) = (delta[i] - delta[j]).sin_cos();
                acc += ei * self.e_mag(j) * (y.re * c + y.im * s);
            }
            p[i] = acc;
        }
        p
    }

    /// Max `|Y_ij - Y_ji|` over all pairs; a reciprocal network reduces to a
    /// symmetric matrix.
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.n_mach();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.y_reduced[(i, j)] - self.y_reduced[(j, i)]).norm());
            }
        }
        worst
    }

    /// Max `|P_mech_i - P_elec_i|` at the pre-fault angles. Near zero for
    /// pre-fault reductions by construction.
    pub fn equilibrium_residual(&self) -> f64 {
        let pe = self.electrical_power(&self.delta_pre());
        self.p_mech
            .iter()
            .zip(&pe)
            .map(|(pm, p)| (pm - p).abs())
            .fold(0.0, f64::max)
    }
}

pub fn kron_reduce(
    case: &PowerCase,
    solution: &PowerFlowSolution,
    variant: ReductionVariant,
) -> Result<ReducedSystem, PowerError> {
    kron_reduce_with(case, solution, variant, ReductionOptions::default())
}

pub fn kron_reduce_with(
    case: &PowerCase,
    solution: &PowerFlowSolution,
    variant: ReductionVariant,
    opts: ReductionOptions,
) -> Result<ReducedSystem, PowerError> {
    let n_bus = case.buses.len();
    let n_mach = case.machines.len();
    if n_mach == 0 {
        return Err(PowerError::NoMachines);
    }
    {
        let mut seen = std::collections::HashSet::new();
        for m in &case.machines {
            if !seen.insert(m.bus) {
                return Err(PowerError::SharedMachineBus(m.bus));
            }
        }
    }

    let (skip_branch, grounded_bus) = match variant {
        ReductionVariant::PreFault => (None, None),
        ReductionVariant::FaultOn(c) => {
            c.validate(case)?;
            (None, Some(c.faulted_bus))
        }
        ReductionVariant::PostFault(c) => {
            c.validate(case)?;
            (Some(c.tripped_branch), None)
        }
    };

    // Network admittance with constant-impedance loads folded in. Load
    // admittances always come from the pre-fault voltages.
    let mut y_net = ybus(case, skip_branch);
    for (i, bus) in case.buses.iter().enumerate() {
        if bus.p_load != 0.0 || bus.q_load != 0.0 {
            let s_load = Complex64::new(bus.p_load, bus.q_load);
            let v2 = solution.voltages[i].norm_sqr();
            y_net[(i, i)] += s_load.conj() / v2;
        }
    }

    // Augment with machine internal nodes behind x'd.
    let total = n_bus + n_mach;
    let mut aug = DMatrix::<Complex64>::zeros(total, total);
    aug.view_mut((0, 0), (n_bus, n_bus)).copy_from(&y_net);
    for (k, m) in case.machines.iter().enumerate() {
        let i = case.bus_index(m.bus).expect("validated machine bus");
        let ym = Complex64::new(1.0, 0.0) / Complex64::new(0.0, m.xd_prime);
        let g = n_bus + k;
        aug[(g, g)] += ym;
        aug[(i, i)] += ym;
        aug[(i, g)] -= ym;
        aug[(g, i)] -= ym;
    }

    // Eliminated set: every network bus except a grounded one, which is
    // dropped outright (zero-voltage node). A bus left floating by a trip
    // (exactly zero row) carries no current and is pruned from the model.
    let grounded_idx = grounded_bus.map(|id| case.bus_index(id).expect("validated faulted bus"));
    let elim: Vec<usize> = (0..n_bus)
        .filter(|&i| Some(i) != grounded_idx)
        .filter(|&i| (0..total).any(|c| aug[(i, c)] != Complex64::new(0.0, 0.0)))
        .collect();
    let keep: Vec<usize> = (n_bus..total).collect();

    let y_gg = select(&aug, &keep, &keep);
    let y_gl = select(&aug, &keep, &elim);
    let y_lg = select(&aug, &elim, &keep);
    let y_ll = select(&aug, &elim, &elim);

    let solved = y_ll.clone().lu().solve(&y_lg).ok_or_else(|| {
        // Name the node with the weakest diagonal as the likely culprit.
        let r = (0..y_ll.nrows())
            .min_by(|&a, &b| {
                y_ll[(a, a)]
                    .norm()
                    .partial_cmp(&y_ll[(b, b)].norm())
                    .unwrap()
            })
            .unwrap_or(0);
        PowerError::ReductionSingular {
            bus: case.buses[elim[r]].id,
        }
    })?;
    let mut y_red = y_gg - y_gl * solved;
    if y_red.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(PowerError::ReductionSingular {
            bus: case.buses[elim[0]].id,
        });
    }

    // Internal voltages and machine powers from the pre-fault solution.
    let mut e_internal = Vec::with_capacity(n_mach);
    let mut p_mech = Vec::with_capacity(n_mach);
    for m in &case.machines {
        let i = case.bus_index(m.bus).expect("validated machine bus");
        let v = solution.voltages[i];
        let s_gen =
            solution.injections[i] + Complex64::new(case.buses[i].p_load, case.buses[i].q_load);
        let current = (s_gen / v).conj();
        e_internal.push(v + Complex64::new(0.0, m.xd_prime) * current);
        p_mech.push(s_gen.re);
    }

    let omega_s = case.omega_s();
    let m_inertia: Vec<f64> = case.machines.iter().map(|m| 2.0 * m.h / omega_s).collect();
    let d_damp: Vec<f64> = case.machines.iter().map(|m| m.d / omega_s).collect();

    if opts.lossless {
        for v in y_red.iter_mut() {
            *v = Complex64::new(0.0, v.im);
        }
    }
    let mut sys = ReducedSystem {
        y_reduced: y_red,
        e_internal,
        p_mech,
        m_inertia,
        d_damp,
        lossless: opts.lossless,
    };
    if opts.lossless {
        // Mechanical power must balance the susceptance-only flows of the
        // PRE-FAULT network, whatever variant this reduction is for;
        // otherwise the fault imbalance would be erased.
        match variant {
            ReductionVariant::PreFault => {
                sys.p_mech = sys.electrical_power(&sys.delta_pre());
            }
            _ => {
                let pre = kron_reduce_with(case, solution, ReductionVariant::PreFault, opts)?;
                sys.p_mech = pre.p_mech;
            }
        }
    }
    Ok(sys)
}

fn select(m: &DMatrix<Complex64>, rows: &[usize], cols: &[usize]) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}
