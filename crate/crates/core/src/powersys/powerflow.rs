//! Newton-Raphson AC power flow in polar form. Dense linear algebra: the
//! bundled cases top out at 39 buses.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::case::{BusType, PowerCase};
use super::PowerError;

const MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Complex bus voltage per bus, in case bus order.
    pub voltages: Vec<Complex64>,
    /// Net complex injection `S_i = V_i * conj(I_i)` per bus (generation
    /// minus load), from the solved state.
    pub injections: Vec<Complex64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

/// Build the bus admittance matrix over in-service branches, optionally
/// skipping one branch (used for post-fault topologies).
pub(super) fn ybus(case: &PowerCase, skip: Option<(usize, usize)>) -> DMatrix<Complex64> {
    let n = case.buses.len();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for br in case.branches.iter().filter(|b| b.in_service) {
        if let Some((sf, st)) = skip {
            if (br.from == sf && br.to == st) || (br.from == st && br.to == sf) {
                continue;
            }
        }
        let f = case.bus_index(br.from).expect("validated branch endpoint");
        let t = case.bus_index(br.to).expect("validated branch endpoint");
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let shunt = Complex64::new(0.0, br.b / 2.0);
        y[(f, f)] += ys + shunt;
        y[(t, t)] += ys + shunt;
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }
    y
}

/// Solve the pre-fault operating point. Power mismatches at every non-slack
/// bus are driven below `tol`; PV magnitudes are held at their setpoints.
pub fn power_flow(case: &PowerCase, tol: f64) -> Result<PowerFlowSolution, PowerError> {
    let n = case.buses.len();
    let y = ybus(case, None);
    let g = y.map(|v| v.re);
    let b = y.map(|v| v.im);

    // Flat start at setpoint magnitudes.
    let mut vm: Vec<f64> = case
        .buses
        .iter()
        .map(|bus| match bus.bus_type {
            BusType::Pq => 1.0,
            _ => bus.voltage,
        })
        .collect();
    let mut va = vec![0.0f64; n];

    let p_spec: Vec<f64> = (0..n).map(|i| case.p_injection(i)).collect();
    let q_spec: Vec<f64> = case.buses.iter().map(|bus| -bus.q_load).collect();

    let ang_vars: Vec<usize> = (0..n)
        .filter(|&i| case.buses[i].bus_type != BusType::Slack)
        .collect();
    let mag_vars: Vec<usize> = (0..n)
        .filter(|&i| case.buses[i].bus_type == BusType::Pq)
        .collect();
    let n_ang = ang_vars.len();
    let n_var = n_ang + mag_vars.len();

    let calc_pq = |vm: &[f64], va: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let mut pi = 0.0;
            let mut qi = 0.0;
            for k in 0..n {
                if g[(i, k)] == 0.0 && b[(i, k)] == 0.0 {
                    continue;
                }
                let th = va[i] - va[k];
                let (s, c) = th.sin_cos();
                pi += vm[k] * (g[(i, k)] * c + b[(i, k)] * s);
                qi += vm[k] * (g[(i, k)] * s - b[(i, k)] * c);
            }
            p[i] = vm[i] * pi;
            q[i] = vm[i] * qi;
        }
        (p, q)
    };

    let mut iterations = 0;
    loop {
        let (p, q) = calc_pq(&vm, &va);
        let mut mismatch = DVector::<f64>::zeros(n_var);
        for (r, &i) in ang_vars.iter().enumerate() {
            mismatch[r] = p_spec[i] - p[i];
        }
        for (r, &i) in mag_vars.iter().enumerate() {
            mismatch[n_ang + r] = q_spec[i] - q[i];
        }
        let max_mismatch = mismatch.amax();
        if max_mismatch <= tol {
            log::debug!(
                "power flow converged in {iterations} iterations, mismatch {max_mismatch:.3e}"
            );
            let voltages: Vec<Complex64> = (0..n)
                .map(|i| Complex64::from_polar(vm[i], va[i]))
                .collect();
            let injections = (0..n)
                .map(|i| {
                    let ii: Complex64 = (0..n).map(|k| y[(i, k)] * voltages[k]).sum();
                    voltages[i] * ii.conj()
                })
                .collect();
            return Ok(PowerFlowSolution {
                voltages,
                injections,
                iterations,
                max_mismatch,
            });
        }
        if iterations >= MAX_ITERATIONS || !max_mismatch.is_finite() {
            return Err(PowerError::PowerFlowDiverged {
                mismatch: max_mismatch,
                iterations,
            });
        }

        let mut jac = DMatrix::<f64>::zeros(n_var, n_var);
        for (r, &i) in ang_vars.iter().enumerate() {
            for (cidx, &j) in ang_vars.iter().enumerate() {
                jac[(r, cidx)] = if i == j {
                    -q[i] - b[(i, i)] * vm[i] * vm[i]
                } else {
                    let th = va[i] - va[j];
                    vm[i] * vm[j] * (g[(i, j)] * th.sin() - b[(i, j)] * th.cos())
                };
            }
            for (cidx, &j) in mag_vars.iter().enumerate() {
                jac[(r, n_ang + cidx)] = if i == j {
                    p[i] / vm[i] + g[(i, i)] * vm[i]
                } else {
                    let th = va[i] - va[j];
                    vm[i] * (g[(i, j)] * th.cos() + b[(i, j)] * th.sin())
                };
            }
        }
        for (r, &i) in mag_vars.iter().enumerate() {
            for (cidx, &j) in ang_vars.iter().enumerate() {
                jac[(n_ang + r, cidx)] = if i == j {
                    p[i] - g[(i, i)] * vm[i] * vm[i]
                } else {
                    let th = va[i] - va[j];
                    -vm[i] * vm[j] * (g[(i, j)] * th.cos() + b[(i, j)] * th.sin())
                };
            }
            for (cidx, &j) in mag_vars.iter().enumerate() {
                jac[(n_ang + r, n_ang + cidx)] = if i == j {
                    q[i] / vm[i] - b[(i, i)] * vm[i]
                } else {
                    let th = va[i] - va[j];
                    vm[i] * (g[(i, j)] * th.sin() - b[(i, j)] * th.cos())
                };
            }
        }

        let delta = jac
            .lu()
            .solve(&mismatch)
            .ok_or(PowerError::PowerFlowDiverged {
                mismatch: max_mismatch,
                iterations,
            })?;
        for (r, &i) in ang_vars.iter().enumerate() {
            va[i] += delta[r];
        }
        for (r, &i) in mag_vars.iter().enumerate() {
            vm[i] += delta[n_ang + r];
        }
        iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powersys::case::bundled_case;
    use approx::assert_abs_diff_eq;

    #[test]
    fn wscc9_slack_voltage_held() {
        let case = bundled_case("wscc9").unwrap().unwrap();
        let sol = power_flow(&case, 1e-8).unwrap();
        let slack = case.slack_index();
        assert_abs_diff_eq!(sol.voltages[slack].norm(), 1.05, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.voltages[slack].arg(), 0.0, epsilon = 1e-12);
        assert!(sol.max_mismatch <= 1e-8);
    }

    #[test]
    fn wscc9_pv_magnitudes_held() {
        let case = bundled_case("wscc9").unwrap().unwrap();
        let sol = power_flow(&case, 1e-8).unwrap();
        for (i, bus) in case.buses.iter().enumerate() {
            if bus.bus_type == BusType::Pv {
                assert_abs_diff_eq!(sol.voltages[i].norm(), bus.voltage, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn flat_case_has_zero_angles() {
        let case = PowerCase {
            base_mva: 100.0,
            frequency_hz: 50.0,
            notes: None,
            buses: vec![
                super::super::case::Bus {
                    id: 1,
                    bus_type: BusType::Slack,
                    voltage: 1.0,
                    p_load: 0.0,
                    q_load: 0.0,
                },
                super::super::case::Bus {
                    id: 2,
                    bus_type: BusType::Pq,
                    voltage: 1.0,
                    p_load: 0.0,
                    q_load: 0.0,
                },
            ],
            branches: vec![super::super::case::Branch {
                from: 1,
                to: 2,
                r: 0.01,
                x: 0.1,
                b: 0.0,
                in_service: true,
            }],
            machines: vec![],
        };
        case.validate().unwrap();
        let sol = power_flow(&case, 1e-10).unwrap();
        for v in &sol.voltages {
            assert_abs_diff_eq!(v.arg(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ieee39_converges_with_small_residuals() {
        let case = bundled_case("ieee39").unwrap().unwrap();
        let sol = power_flow(&case, 1e-8).unwrap();
        assert!(sol.max_mismatch <= 1e-8);
        assert!(sol.iterations < 15);
        // Injection at a pure load bus equals minus the load.
        let i20 = case.bus_index(20).unwrap();
        assert_abs_diff_eq!(sol.injections[i20].re, -6.80, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.injections[i20].im, -1.03, epsilon = 1e-6);
    }
}
