//! Bundled second-order systems with hand-derived decompositions and
//! analytic invariant sets, used as ground truth for the invariance
//! machinery and as CLI demo systems.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use thiserror::Error;

use crate::dynsys::{DecomposedField, FnField, VectorField};
use crate::invariance::{build_candidate, CandidateRoa, IndividualInvariantSet, LimitSet};
use crate::polytope::HalfspacePolytope;

#[derive(Debug, Error)]
pub enum ExampleError {
    #[error("unknown example '{0}' (expected example1, example2 or example3)")]
    UnknownName(String),
    #[error("unknown parameter '{0}' for this example")]
    UnknownParam(String),
    #[error("parameter '{name}' must be positive, got {value}")]
    NonPositiveParam { name: String, value: f64 },
    #[error("grid box axis {axis} has zero width")]
    DegenerateBox { axis: usize },
    #[error("grid resolution must be >= 2, got {0}")]
    BadResolution(usize),
}

/// A bundled system: its decomposition, the per-sub-field invariant sets,
/// and the resulting candidate region of attraction.
pub struct ExampleSystem {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub field: DecomposedField,
    pub omega_sets: Vec<IndividualInvariantSet>,
    pub roa: CandidateRoa,
}

fn resolve_params(
    defaults: &[(&str, f64)],
    overrides: &[(String, f64)],
) -> Result<BTreeMap<String, f64>, ExampleError> {
    let mut params: BTreeMap<String, f64> =
        defaults.iter().map(|&(k, v)| (k.to_string(), v)).collect();
    for (k, v) in overrides {
        if !params.contains_key(k) {
            return Err(ExampleError::UnknownParam(k.clone()));
        }
        if *v <= 0.0 || !v.is_finite() {
            return Err(ExampleError::NonPositiveParam {
                name: k.clone(),
                value: *v,
            });
        }
        params.insert(k.clone(), *v);
    }
    Ok(params)
}

fn band(dim: usize, coord: usize, half_width: f64) -> HalfspacePolytope {
    let mut up = vec![0.0; dim];
    up[coord] = 1.0;
    let mut lo = vec![0.0; dim];
    lo[coord] = -1.0;
    HalfspacePolytope::from_rows(dim, vec![up, lo], vec![half_width, half_width])
        .expect("band rows are valid")
}

fn axis_subspace(dim: usize, coord: usize) -> LimitSet {
    let mut row = vec![0.0; dim];
    row[coord] = 1.0;
    LimitSet::AffineSubspace {
        c: vec![row],
        d: vec![0.0],
    }
}

/// Construct a bundled example by name, optionally overriding parameters.
/// Defaults reproduce the published phase portraits.
pub fn example(name: &str, overrides: &[(String, f64)]) -> Result<ExampleSystem, ExampleError> {
    match name {
        "example1" => example1(overrides),
        "example2" => example2(overrides),
        "example3" => example3(overrides),
        other => Err(ExampleError::UnknownName(other.to_string())),
    }
}

pub const EXAMPLE_NAMES: [&str; 3] = ["example1", "example2", "example3"];

/// Decoupled pendulum-like pair:
/// `x1' = -b sin x1 - a x1`, `x2' = -b sin x2 - a x2`.
fn example1(overrides: &[(String, f64)]) -> Result<ExampleSystem, ExampleError> {
    let params = resolve_params(&[("a", 0.1), ("b", 1.0)], overrides)?;
    let a = params["a"];
    let b = params["b"];

    let f1 = Arc::new(FnField::new(2, move |x: &[f64], out: &mut [f64]| {
        out[0] = -b * x[0].sin();
        out[1] = 0.0;
    }));
    let f2 = Arc::new(FnField::new(2, move |x: &[f64], out: &mut [f64]| {
        out[0] = 0.0;
        out[1] = -b * x[1].sin();
    }));
    let f3 = Arc::new(FnField::new(2, move |x: &[f64], out: &mut [f64]| {
        out[0] = -a * x[0];
        out[1] = -a * x[1];
    }));
    let field = DecomposedField::new(vec![f1, f2, f3]).expect("two-dimensional parts");

    let omega_sets = vec![
        IndividualInvariantSet {
            polytope: band(2, 0, PI),
            limit_set: axis_subspace(2, 0),
        },
        IndividualInvariantSet {
            polytope: band(2, 1, PI),
            limit_set: axis_subspace(2, 1),
        },
        IndividualInvariantSet {
            polytope: HalfspacePolytope::whole_space(2),
            limit_set: LimitSet::Point(vec![0.0, 0.0]),
        },
    ];
    finish("example1", params, field, omega_sets, vec![0.0, 0.0])
}

/// Reduced-order two-machine system:
/// `x1' = -a1 sin x1 - b sin(x1 - x2)`, `x2' = -a2 sin x2 - b sin(x2 - x1)`.
fn example2(overrides: &[(String, f64)]) -> Result<ExampleSystem, ExampleError> {
    let params = resolve_params(&[("a1", 1.0), ("a2", 0.5), ("b", 0.5)], overrides)?;
    let a1 = params["a1"];
    let a2 = params["a2"];
    let b = params["b"];

    let f1 = Arc::new(FnField::new(2, move |x: &[f64], out: &mut [f64]| {
        out[0] = -a1 * x[0].sin();
        out[1] = 0.0;
    }));
    let f2 = Arc::new(FnField::new(2, move |x: &[f64], out: &mut [f64]| {
        out[0] = 0.0;
        out[1] = -a2 * x[1].sin();
    }));
    let f3 = Arc::new(FnField::new(2, move |x: &[f64], out: &mut [f64]| {
        out[0] = -b * (x[0] - x[1]).sin();
        out[1] = -b * (x[1] - x[0]).sin();
    }));
    let field = DecomposedField::new(vec![f1, f2, f3]).expect("two-dimensional parts");

    let omega_sets = vec![
        IndividualInvariantSet {
            polytope: band(2, 0, PI),
            limit_set: axis_subspace(2, 0),
        },
        IndividualInvariantSet {
            polytope: band(2, 1, PI),
            limit_set: axis_subspace(2, 1),
        },
        IndividualInvariantSet {
            polytope: HalfspacePolytope::from_rows(
                2,
                vec![vec![1.0, -1.0], vec![-1.0, 1.0]],
                vec![PI, PI],
            )
            .expect("pair rows are valid"),
            limit_set: LimitSet::AffineSubspace {
                c: vec![vec![1.0, -1.0]],
                d: vec![0.0],
            },
        },
    ];
    finish("example2", params, field, omega_sets, vec![0.0, 0.0])
}

/// Reduced-order flux-decay model:
/// `x1' = -a x2 sin x1`, `x2' = -b x2 + c cos x1`.
fn example3(overrides: &[(String, f64)]) -> Result<ExampleSystem, ExampleError> {
    let params = resolve_params(&[("a", 2.0), ("b", 2.7), ("c", 1.7)], overrides)?;
    let a = params["a"];
    let b = params["b"];
    let c = params["c"];

    let f1 = Arc::new(FnField::new(2, move |x: &[f64], out: &mut [f64]| {
        out[0] = -a * x[1] * x[0].sin();
        out[1] = 0.0;
    }));
    let f2 = Arc::new(FnField::new(2, move |x: &[f64], out: &mut [f64]| {
        out[0] = 0.0;
        out[1] = -b * x[1] + c * x[0].cos();
    }));
    let field = DecomposedField::new(vec![f1, f2]).expect("two-dimensional parts");

    let omega_sets = vec![
        // |x1| <= pi together with x2 >= 0.
        IndividualInvariantSet {
            polytope: HalfspacePolytope::from_rows(
                2,
                vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, -1.0]],
                vec![PI, PI, 0.0],
            )
            .expect("rows are valid"),
            limit_set: axis_subspace(2, 0),
        },
        // |x1| <= pi/2.
        IndividualInvariantSet {
            polytope: band(2, 0, FRAC_PI_2),
            limit_set: LimitSet::Point(vec![0.0, c / b]),
        },
    ];
    finish("example3", params, field, omega_sets, vec![0.0, c / b])
}

fn finish(
    name: &str,
    params: BTreeMap<String, f64>,
    field: DecomposedField,
    omega_sets: Vec<IndividualInvariantSet>,
    equilibrium: Vec<f64>,
) -> Result<ExampleSystem, ExampleError> {
    let residual = field
        .eval(&equilibrium)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(
        residual <= 1e-10,
        "{name}: equilibrium residual {residual:.3e}"
    );
    let roa = build_candidate(omega_sets.clone(), equilibrium)
        .expect("bundled invariant sets intersect and contain the equilibrium");
    Ok(ExampleSystem {
        name: name.to_string(),
        params,
        field,
        omega_sets,
        roa,
    })
}

/// Row-major grid of states and composite-field evaluations over a box,
/// for external plotting of phase portraits.
pub struct VectorGrid {
    pub dim: usize,
    pub points: Vec<(Vec<f64>, Vec<f64>)>,
}

impl VectorGrid {
    /// CSV with header `x1,...,xn,f1,...,fn`.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        for k in 1..=self.dim {
            write!(w, "{}x{k}", if k == 1 { "" } else { "," })?;
        }
        for k in 1..=self.dim {
            write!(w, ",f{k}")?;
        }
        writeln!(w)?;
        for (x, f) in &self.points {
            let mut first = true;
            for v in x.iter().chain(f.iter()) {
                write!(w, "{}{v}", if first { "" } else { "," })?;
                first = false;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Evaluate `sys.field` on a `resolution^dim` row-major grid spanning `box_bounds`
/// (last axis fastest).
pub fn vector_field_grid(
    sys: &ExampleSystem,
    box_bounds: &[(f64, f64)],
    resolution: usize,
) -> Result<VectorGrid, ExampleError> {
    let dim = sys.field.dim();
    assert_eq!(
        box_bounds.len(),
        dim,
        "box bounds must match the state dimension"
    );
    if resolution < 2 {
        return Err(ExampleError::BadResolution(resolution));
    }
    for (axis, &(lo, hi)) in box_bounds.iter().enumerate() {
        if hi <= lo {
            return Err(ExampleError::DegenerateBox { axis });
        }
    }
    let n_points = resolution.pow(dim as u32);
    let mut points = Vec::with_capacity(n_points);
    for flat in 0..n_points {
        let mut idx = flat;
        let mut x = vec![0.0; dim];
        for axis in (0..dim).rev() {
            let i = idx % resolution;
            idx /= resolution;
            let (lo, hi) = box_bounds[axis];
            x[axis] = lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
        }
        let f = sys.field.eval(&x);
        points.push((x, f));
    }
    Ok(VectorGrid { dim, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{equilibrium_solve, integrate, IntegratorConfig};
    use approx::assert_abs_diff_eq;

    #[test]
    fn example1_defaults_give_pi_box() {
        let sys = example("example1", &[]).unwrap();
        assert_eq!(sys.params["a"], 0.1);
        assert_eq!(sys.params["b"], 1.0);
        assert_eq!(sys.roa.omega_e().n_rows(), 4);
        let pi_box = HalfspacePolytope::inf_norm_box(2, PI);
        // Same set as the inf-norm box.
        for p in [[3.0, -3.0], [0.0, 3.1], [-3.3, 0.0]] {
            assert_eq!(
                sys.roa.omega_e().contains(&p, 0.0),
                pi_box.contains(&p, 0.0)
            );
        }
    }

    #[test]
    fn example2_defaults_have_six_rows() {
        let sys = example("example2", &[]).unwrap();
        assert_eq!(sys.params["a1"], 1.0);
        assert_eq!(sys.params["a2"], 0.5);
        assert_eq!(sys.params["b"], 0.5);
        assert_eq!(sys.roa.omega_e().n_rows(), 6);
        assert_eq!(sys.field.n_parts(), sys.omega_sets.len());
    }

    #[test]
    fn example3_equilibrium_is_c_over_b() {
        let sys = example("example3", &[]).unwrap();
        assert_abs_diff_eq!(sys.roa.equilibrium()[1], 1.7 / 2.7, epsilon = 1e-12);
        // Set equality with {|x1| <= pi/2, x2 >= 0}.
        for p in [
            [0.0f64, 0.5],
            [1.0, 10.0],
            [1.6, 0.5],
            [0.0, -0.01],
            [-1.0, 3.0],
        ] {
            let expect = p[0].abs() <= FRAC_PI_2 && p[1] >= 0.0;
            assert_eq!(sys.roa.omega_e().contains(&p, 0.0), expect, "at {p:?}");
        }
    }

    #[test]
    fn example3_field_converges_to_equilibrium() {
        let sys = example("example3", &[]).unwrap();
        let traj = integrate(
            &sys.field,
            &[0.1, 0.6],
            50.0,
            &IntegratorConfig::rk45(1e-10, 1e-12),
        )
        .unwrap();
        assert_abs_diff_eq!(traj.end_state()[0], 0.0, epsilon = 1e-3);
        assert_abs_diff_eq!(traj.end_state()[1], 1.7 / 2.7, epsilon = 1e-3);
    }

    #[test]
    fn example3_newton_finds_equilibrium() {
        let sys = example("example3", &[]).unwrap();
        let x = equilibrium_solve(&sys.field, &[0.2, 0.5], 1e-10).unwrap();
        assert_abs_diff_eq!(x[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(x[1], 1.7 / 2.7, epsilon = 1e-9);
    }

    #[test]
    fn example2_newton_finds_origin() {
        let sys = example("example2", &[]).unwrap();
        let x = equilibrium_solve(&sys.field, &[0.1, 0.1], 1e-10).unwrap();
        assert_abs_diff_eq!(x[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn unknown_name_and_bad_params_error() {
        assert!(matches!(
            example("example9", &[]),
            Err(ExampleError::UnknownName(_))
        ));
        assert!(matches!(
            example("example1", &[("a".into(), -1.0)]),
            Err(ExampleError::NonPositiveParam { .. })
        ));
        assert!(matches!(
            example("example1", &[("zeta".into(), 1.0)]),
            Err(ExampleError::UnknownParam(_))
        ));
    }

    #[test]
    fn grid_center_of_example1_is_equilibrium() {
        let sys = example("example1", &[]).unwrap();
        let grid = vector_field_grid(&sys, &[(-4.0, 4.0), (-4.0, 4.0)], 3).unwrap();
        assert_eq!(grid.points.len(), 9);
        let (x, f) = &grid.points[4]; // row-major center of a 3x3 grid
        assert_eq!(x, &vec![0.0, 0.0]);
        assert_eq!(f, &vec![0.0, 0.0]);
    }

    #[test]
    fn grid_corners_and_field_value_example3() {
        let sys = example("example3", &[]).unwrap();
        let grid = vector_field_grid(&sys, &[(-PI, PI), (0.0, 2.0)], 2).unwrap();
        assert_eq!(grid.points.len(), 4);
        assert_eq!(grid.points[0].0, vec![-PI, 0.0]);
        assert_eq!(grid.points[3].0, vec![PI, 2.0]);
        // Direct substitution at the origin: f = (0, c).
        let f0 = sys.field.eval(&[0.0, 0.0]);
        assert_abs_diff_eq!(f0[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f0[1], 1.7, epsilon = 1e-15);
    }

    #[test]
    fn grid_values_equal_part_sums() {
        let sys = example("example2", &[]).unwrap();
        let grid = vector_field_grid(&sys, &[(-2.0, 2.0), (-2.0, 2.0)], 4).unwrap();
        for (x, f) in &grid.points {
            let mut acc = vec![0.0; 2];
            for k in 0..sys.field.n_parts() {
                let part = sys.field.part(k).eval(x);
                acc[0] += part[0];
                acc[1] += part[1];
            }
            assert_eq!(&acc, f);
        }
    }

    #[test]
    fn example2_intersection_membership_equals_conjunction() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let sys = example("example2", &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let conj = sys
                .omega_sets
                .iter()
                .all(|s| s.polytope.contains(&x, 1e-12));
            assert_eq!(sys.roa.omega_e().contains(&x, 1e-12), conj, "at {x:?}");
        }
    }

    #[test]
    fn degenerate_box_rejected() {
        let sys = example("example1", &[]).unwrap();
        assert!(matches!(
            vector_field_grid(&sys, &[(-1.0, -1.0), (0.0, 1.0)], 3),
            Err(ExampleError::DegenerateBox { axis: 0 })
        ));
        assert!(matches!(
            vector_field_grid(&sys, &[(-1.0, 1.0), (0.0, 1.0)], 1),
            Err(ExampleError::BadResolution(1))
        ));
    }
}
