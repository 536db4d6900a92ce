//! Halfspace polytopes `P = {x : Ax <= b}`: membership, intersection by row
//! concatenation, and emptiness testing via a phase-1 simplex.

mod simplex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default feasibility / membership tolerance. Angle variables in this crate
/// are O(1), so an absolute tolerance is appropriate.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PolytopeError {
    #[error("A has {rows} rows but b has {bounds} entries")]
    RowCountMismatch { rows: usize, bounds: usize },
    #[error("row {row} is all zeros with negative bound {bound}: trivially infeasible noise")]
    ZeroRowNegativeBound { row: usize, bound: f64 },
    #[error("non-finite coefficient in row {row}")]
    NonFinite { row: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot intersect an empty list of polytopes")]
    EmptyList,
}

/// `{x in R^n : Ax <= b}`. Zero rows mean the whole space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeJson", into = "PolytopeJson")]
pub struct HalfspacePolytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl HalfspacePolytope {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, PolytopeError> {
        if a.nrows() != b.len() {
            return Err(PolytopeError::RowCountMismatch {
                rows: a.nrows(),
                bounds: b.len(),
            });
        }
        for i in 0..a.nrows() {
            if a.row(i).iter().any(|v| !v.is_finite()) || !b[i].is_finite() {
                return Err(PolytopeError::NonFinite { row: i });
            }
            if a.row(i).iter().all(|&v| v == 0.0) && b[i] < 0.0 {
                return Err(PolytopeError::ZeroRowNegativeBound {
                    row: i,
                    bound: b[i],
                });
            }
        }
        Ok(Self { a, b })
    }

    pub fn from_rows(
        dim: usize,
        rows: Vec<Vec<f64>>,
        bounds: Vec<f64>,
    ) -> Result<Self, PolytopeError> {
        if rows.len() != bounds.len() {
            return Err(PolytopeError::RowCountMismatch {
                rows: rows.len(),
                bounds: bounds.len(),
            });
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(PolytopeError::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            let _ = i;
        }
        let a = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        Self::new(a, DVector::from_vec(bounds))
    }

    /// The whole of R^dim (no constraints).
    pub fn whole_space(dim: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, dim),
            b: DVector::zeros(0),
        }
    }

    /// The box `||x||_inf <= r`.
    pub fn inf_norm_box(dim: usize, r: f64) -> Self {
        let mut rows = Vec::with_capacity(2 * dim);
        let mut bounds = Vec::with_capacity(2 * dim);
        for k in 0..dim {
            let mut up = vec![0.0; dim];
            up[k] = 1.0;
            rows.push(up);
            bounds.push(r);
            let mut lo = vec![0.0; dim];
            lo[k] = -1.0;
            rows.push(lo);
            bounds.push(r);
        }
        Self::from_rows(dim, rows, bounds).expect("box rows are valid")
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b_vector(&self) -> &DVector<f64> {
        &self.b
    }

    /// True iff every row satisfies `a_i . x <= b_i + tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        debug_assert_eq!(x.len(), self.dim());
        for i in 0..self.a.nrows() {
            let mut dot = 0.0;
            for j in 0..self.a.ncols() {
                dot += self.a[(i, j)] * x[j];
            }
            if dot > self.b[i] + tol {
                return false;
            }
        }
        true
    }

    /// Signed slack `b_i - a_i . x` of row `i` at `x` (negative = violated).
    pub fn row_slack(&self, i: usize, x: &[f64]) -> f64 {
        let mut dot = 0.0;
        for j in 0..self.a.ncols() {
            dot += self.a[(i, j)] * x[j];
        }
        self.b[i] - dot
    }

    /// Set intersection by row concatenation, in input order.
    pub fn intersect(ps: &[&HalfspacePolytope]) -> Result<Self, PolytopeError> {
        let first = ps.first().ok_or(PolytopeError::EmptyList)?;
        let dim = first.dim();
        let mut rows = Vec::new();
        let mut bounds = Vec::new();
        for p in ps {
            if p.dim() != dim {
                return Err(PolytopeError::DimensionMismatch {
                    expected: dim,
                    got: p.dim(),
                });
            }
            for i in 0..p.n_rows() {
                rows.push(p.a.row(i).iter().copied().collect());
                bounds.push(p.b[i]);
            }
        }
        Self::from_rows(dim, rows, bounds)
    }

    /// True iff no point satisfies all rows (within [`FEASIBILITY_TOL`]).
    pub fn is_empty(&self) -> bool {
        self.feasible_point().is_none()
    }

    /// A point satisfying all rows, when one exists (phase-1 simplex with
    /// Bland's anti-cycling rule).
    pub fn feasible_point(&self) -> Option<Vec<f64>> {
        if self.n_rows() == 0 {
            return Some(vec![0.0; self.dim()]);
        }
        simplex::phase1_feasible_point(&self.a, &self.b, FEASIBILITY_TOL)
    }

    /// Per-coordinate bounds derived from single-coefficient rows; unbounded
    /// coordinates are clipped to `[-clip, clip]`. Used as a sampling box.
    pub fn coordinate_bounds(&self, clip: f64) -> Vec<(f64, f64)> {
        let dim = self.dim();
        let mut bounds = vec![(-clip, clip); dim];
        for i in 0..self.n_rows() {
            let row = self.a.row(i);
            let nz: Vec<usize> = (0..dim).filter(|&j| row[j] != 0.0).collect();
            if let [j] = nz[..] {
                let coeff = row[j];
                let limit = self.b[i] / coeff;
                if coeff > 0.0 {
                    bounds[j].1 = bounds[j].1.min(limit);
                } else {
                    bounds[j].0 = bounds[j].0.max(limit);
                }
            }
        }
        bounds
    }
}

#[derive(Serialize, Deserialize)]
struct PolytopeJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl TryFrom<PolytopeJson> for HalfspacePolytope {
    type Error = PolytopeError;
    fn try_from(j: PolytopeJson) -> Result<Self, Self::Error> {
        let dim = j.a.first().map_or(0, |r| r.len());
        HalfspacePolytope::from_rows(dim, j.a, j.b)
    }
}

impl From<HalfspacePolytope> for PolytopeJson {
    fn from(p: HalfspacePolytope) -> Self {
        let a = (0..p.n_rows())
            .map(|i| p.a.row(i).iter().copied().collect())
            .collect();
        PolytopeJson {
            a,
            b: p.b.iter().copied().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn pi_box() -> HalfspacePolytope {
        HalfspacePolytope::inf_norm_box(2, std::f64::consts::PI)
    }

    #[test]
    fn box_contains_center() {
        assert!(pi_box().contains(&[0.0, 0.0], 0.0));
    }

    #[test]
    fn box_rejects_point_past_facet() {
        assert!(!pi_box().contains(&[std::f64::consts::PI + 0.01, 0.0], 0.0));
    }

    #[test]
    fn example2_omega_e_rejects_wide_separation() {
        // ||x||_inf <= pi plus |x1 - x2| <= pi.
        let pi = std::f64::consts::PI;
        let pair =
            HalfspacePolytope::from_rows(2, vec![vec![1.0, -1.0], vec![-1.0, 1.0]], vec![pi, pi])
                .unwrap();
        let omega_e = HalfspacePolytope::intersect(&[&pi_box(), &pair]).unwrap();
        assert_eq!(omega_e.n_rows(), 6);
        assert!(!omega_e.contains(&[3.0, -3.0], 0.0));
        assert!(omega_e.contains(&[1.0, 1.0], 0.0));
    }

    #[test]
    fn zero_row_negative_bound_rejected() {
        let err = HalfspacePolytope::from_rows(2, vec![vec![0.0, 0.0]], vec![-1.0]).unwrap_err();
        assert!(matches!(err, PolytopeError::ZeroRowNegativeBound { .. }));
    }

    #[test]
    fn intersect_single_is_identity() {
        let p = pi_box();
        let q = HalfspacePolytope::intersect(&[&p]).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn intersect_boxes_gives_four_row_box() {
        let pi = std::f64::consts::PI;
        let p1 =
            HalfspacePolytope::from_rows(2, vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![pi, pi])
                .unwrap();
        let p2 =
            HalfspacePolytope::from_rows(2, vec![vec![0.0, 1.0], vec![0.0, -1.0]], vec![pi, pi])
                .unwrap();
        let q = HalfspacePolytope::intersect(&[&p1, &p2]).unwrap();
        assert_eq!(q.n_rows(), 4);
        assert!(q.contains(&[3.0, -3.0], 0.0));
        assert!(!q.contains(&[3.3, 0.0], 0.0));
    }

    #[test]
    fn contradictory_bounds_are_empty() {
        // x <= -1 and -x <= -1 (i.e. x >= 1).
        let p =
            HalfspacePolytope::from_rows(1, vec![vec![1.0], vec![-1.0]], vec![-1.0, -1.0]).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn box_is_nonempty_with_valid_witness() {
        let p = pi_box();
        let w = p.feasible_point().expect("box is feasible");
        assert!(p.contains(&w, FEASIBILITY_TOL));
    }

    #[test]
    fn shifted_halfspace_feasible() {
        // x1 >= 10, x2 <= -3: feasible but far from the origin.
        let p = HalfspacePolytope::from_rows(
            2,
            vec![vec![-1.0, 0.0], vec![0.0, 1.0]],
            vec![-10.0, -3.0],
        )
        .unwrap();
        let w = p.feasible_point().expect("feasible");
        assert!(p.contains(&w, FEASIBILITY_TOL));
    }

    #[test]
    fn coordinate_bounds_from_rows() {
        let pi = std::f64::consts::PI;
        let p = HalfspacePolytope::from_rows(
            2,
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, -1.0]],
            vec![pi / 2.0, pi / 2.0, 0.0],
        )
        .unwrap();
        let bounds = p.coordinate_bounds(50.0);
        assert_eq!(bounds[0], (-pi / 2.0, pi / 2.0));
        assert_eq!(bounds[1], (0.0, 50.0));
    }

    #[test]
    fn json_round_trip() {
        let p = pi_box();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"A\""));
        let q: HalfspacePolytope = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }

    fn random_polytope(rng: &mut ChaCha8Rng, dim: usize, rows: usize) -> HalfspacePolytope {
        loop {
            let a: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let b: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..2.0)).collect();
            if let Ok(p) = HalfspacePolytope::from_rows(dim, a, b) {
                return p;
            }
        }
    }

    #[test]
    fn emptiness_consistent_with_rejection_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut found_empty = 0;
        let mut found_nonempty = 0;
        for _ in 0..100 {
            let dim = rng.random_range(1..=6);
            let rows = rng.random_range(1..=12);
            let p = random_polytope(&mut rng, dim, rows);
            let sampled: Option<Vec<f64>> = (0..20_000)
                .map(|_| {
                    (0..dim)
                        .map(|_| rng.random_range(-5.0..5.0))
                        .collect::<Vec<f64>>()
                })
                .find(|x| p.contains(x, 0.0));
            match p.feasible_point() {
                Some(w) => {
                    assert!(p.contains(&w, FEASIBILITY_TOL), "witness must satisfy rows");
                    found_nonempty += 1;
                }
                None => {
                    assert!(
                        sampled.is_none(),
                        "sampler found a point in an 'empty' polytope"
                    );
                    found_empty += 1;
                }
            }
        }
        // The generator must exercise both outcomes for this test to mean much.
        assert!(found_empty > 5, "too few empty polytopes: {found_empty}");
        assert!(
            found_nonempty > 5,
            "too few nonempty polytopes: {found_nonempty}"
        );
    }

    proptest! {
        #[test]
        fn intersection_membership_is_conjunction(
            seed in 0u64..500,
            x in prop::collection::vec(-4.0f64..4.0, 3),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ps: Vec<HalfspacePolytope> =
                (0..3).map(|_| random_polytope(&mut rng, 3, 4)).collect();
            let refs: Vec<&HalfspacePolytope> = ps.iter().collect();
            let inter = HalfspacePolytope::intersect(&refs).unwrap();
            let conj = ps.iter().all(|p| p.contains(&x, 1e-12));
            prop_assert_eq!(inter.contains(&x, 1e-12), conj);
        }

        #[test]
        fn row_order_does_not_affect_membership_or_emptiness(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_polytope(&mut rng, 3, 8);
            let mut order: Vec<usize> = (0..p.n_rows()).collect();
            order.shuffle(&mut rng);
            let rows: Vec<Vec<f64>> = order
                .iter()
                .map(|&i| p.a_matrix().row(i).iter().copied().collect())
                .collect();
            let bounds: Vec<f64> = order.iter().map(|&i| p.b_vector()[i]).collect();
            let q = HalfspacePolytope::from_rows(3, rows, bounds).unwrap();
            prop_assert_eq!(p.is_empty(), q.is_empty());
            for _ in 0..50 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
                prop_assert_eq!(p.contains(&x, 1e-9), q.contains(&x, 1e-9));
            }
        }
    }
}
