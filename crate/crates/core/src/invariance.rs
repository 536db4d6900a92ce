//! Candidate invariant sets built from per-sub-field invariant sets, plus
//! numerical certification: facet-flow checks on the boundary and sampled
//! trajectory invariance on the interior.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynsys::{self, DecomposedField, DynError, IntegratorConfig, VectorField};
use crate::polytope::{HalfspacePolytope, PolytopeError, FEASIBILITY_TOL};

/// Facet flow above this value is flagged as an invariance violation.
pub const BOUNDARY_FLOW_TOL: f64 = 1e-7;

/// Coordinates unconstrained by the polytope are sampled within this bound.
pub const UNBOUNDED_CLIP: f64 = 50.0;

const MAX_REJECTION_DRAWS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum InvarianceError {
    #[error("intersection of the individual invariant sets is empty")]
    EmptyIntersection,
    #[error("equilibrium lies outside the intersection")]
    EquilibriumOutside,
    #[error(
        "rejection sampling failed after {draws} draws; the set is likely \
         unbounded in a non-coordinate direction — add explicit bound rows"
    )]
    UnboundedSet { draws: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Dyn(#[from] DynError),
}

/// The limit set `omega_i` an artificial system converges to: a point or an
/// affine equilibrium subspace `{x : Cx = d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LimitSet {
    Point(Vec<f64>),
    AffineSubspace { c: Vec<Vec<f64>>, d: Vec<f64> },
}

impl LimitSet {
    /// Distance from `x` to the limit set. For a subspace this is the
    /// residual-based distance `||Cx - d|| / min_row ||c_row||`, exact for a
    /// single orthogonal row and a usable bound otherwise.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            LimitSet::Point(p) => x
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
            LimitSet::AffineSubspace { c, d } => {
                let mut worst = 0.0f64;
                for (row, &di) in c.iter().zip(d) {
                    let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                    let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        worst = worst.max((dot - di).abs() / norm);
                    }
                }
                worst
            }
        }
    }

    /// Sample points on the limit set (the point itself, or the particular
    /// solution plus random combinations of a nullspace basis).
    pub fn sample_points(&self, dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        match self {
            LimitSet::Point(p) => vec![p.clone()],
            LimitSet::AffineSubspace { c, d } => {
                use nalgebra::{DMatrix, DVector};
                let cm = DMatrix::from_fn(c.len(), dim, |i, j| c[i][j]);
                let dv = DVector::from_column_slice(d);
                let particular = cm
                    .clone()
                    .svd(true, true)
                    .solve(&dv, 1e-12)
                    .unwrap_or_else(|_| DVector::zeros(dim));
                let basis = nullspace_basis(c, dim);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n)
                    .map(|_| {
                        let mut x = particular.clone();
                        for v in &basis {
                            let amp: f64 = rng.random_range(-2.0..2.0);
                            for j in 0..dim {
                                x[j] += amp * v[j];
                            }
                        }
                        x.as_slice().to_vec()
                    })
                    .collect()
            }
        }
    }
}

/// Orthonormal basis of `{x : Cx = 0}` by Gram-Schmidt over the standard
/// basis after removing the row span.
fn nullspace_basis(c: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    // Orthonormalize the constraint rows first; the nullspace is their
    // orthogonal complement.
    let mut span: Vec<Vec<f64>> = Vec::new();
    let orthogonalize = |v: &mut Vec<f64>, against: &[Vec<f64>]| {
        for u in against {
            let dot: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= dot * ui;
            }
        }
    };
    for row in c {
        let mut v = row.clone();
        orthogonalize(&mut v, &span);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            v.iter_mut().for_each(|x| *x /= norm);
            span.push(v);
        }
    }
    for k in 0..dim {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        orthogonalize(&mut v, &span);
        orthogonalize(&mut v, &accepted);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            v.iter_mut().for_each(|x| *x /= norm);
            accepted.push(v);
        }
    }
    accepted
}

/// An invariant polytope of one artificial system together with the limit
/// set its trajectories converge to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndividualInvariantSet {
    pub polytope: HalfspacePolytope,
    pub limit_set: LimitSet,
}

impl IndividualInvariantSet {
    /// Max residual `||f_part||_inf` over sampled limit-set points; an
    /// invariant set description is consistent when this is <= 1e-8.
    pub fn limit_residual(&self, part: &dyn VectorField, n_samples: usize, seed: u64) -> f64 {
        self.limit_set
            .sample_points(self.polytope.dim(), n_samples, seed)
            .iter()
            .map(|x| part.eval(x).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .fold(0.0, f64::max)
    }
}

/// The intersection of individual invariant sets, centered on an
/// equilibrium of the composite field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRoa {
    omega_e: HalfspacePolytope,
    equilibrium: Vec<f64>,
    sources: Vec<IndividualInvariantSet>,
}

impl CandidateRoa {
    pub fn omega_e(&self) -> &HalfspacePolytope {
        &self.omega_e
    }

    pub fn equilibrium(&self) -> &[f64] {
        &self.equilibrium
    }

    pub fn sources(&self) -> &[IndividualInvariantSet] {
        &self.sources
    }

    pub fn dim(&self) -> usize {
        self.omega_e.dim()
    }
}

/// Intersect the individual sets and validate the result: non-empty and
/// containing the equilibrium.
pub fn build_candidate(
    sets: Vec<IndividualInvariantSet>,
    equilibrium: Vec<f64>,
) -> Result<CandidateRoa, InvarianceError> {
    let polys: Vec<&HalfspacePolytope> = sets.iter().map(|s| &s.polytope).collect();
    let omega_e = HalfspacePolytope::intersect(&polys)?;
    if equilibrium.len() != omega_e.dim() {
        return Err(InvarianceError::DimensionMismatch {
            expected: omega_e.dim(),
            got: equilibrium.len(),
        });
    }
    if omega_e.is_empty() {
        return Err(InvarianceError::EmptyIntersection);
    }
    if !omega_e.contains(&equilibrium, FEASIBILITY_TOL) {
        return Err(InvarianceError::EquilibriumOutside);
    }
    Ok(CandidateRoa {
        omega_e,
        equilibrium,
        sources: sets,
    })
}

/// Flow of one sub-field through one facet, measured as
/// `(a_i . f^k(x)) / ||a_i||` maximized over facet samples. `None` when the
/// facet carries no samples (redundant rows intersect the set in a lower-
/// dimensional or empty face).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FacetFlow {
    pub facet: usize,
    pub samples: usize,
    pub per_part_max: Vec<Option<f64>>,
    pub composite_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryFlowReport {
    pub tol: f64,
    pub facets: Vec<FacetFlow>,
}

impl BoundaryFlowReport {
    /// `(facet, part, value)` triples where the outward flow exceeds `tol`.
    pub fn violations(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for f in &self.facets {
            for (k, m) in f.per_part_max.iter().enumerate() {
                if let Some(v) = m {
                    if *v > self.tol {
                        out.push((f.facet, k, *v));
                    }
                }
            }
        }
        out
    }

    pub fn all_within_tol(&self) -> bool {
        self.violations().is_empty()
    }

    /// Largest per-sub-field facet flow seen anywhere (negative = inward).
    pub fn max_flow(&self) -> f64 {
        self.facets
            .iter()
            .flat_map(|f| f.per_part_max.iter().flatten())
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }
}

/// Sample each facet of `roa` and report the outward flow component of each
/// sub-field of `field` (and of their sum) there.
pub fn check_boundary_flow(
    field: &DecomposedField,
    roa: &CandidateRoa,
    samples_per_facet: usize,
    seed: u64,
) -> Result<BoundaryFlowReport, InvarianceError> {
    let p = roa.omega_e();
    if field.dim() != p.dim() {
        return Err(InvarianceError::DimensionMismatch {
            expected: p.dim(),
            got: field.dim(),
        });
    }
    let dim = p.dim();
    let box_bounds = p.coordinate_bounds(UNBOUNDED_CLIP);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut facets = Vec::with_capacity(p.n_rows());

    for i in 0..p.n_rows() {
        let a_row: Vec<f64> = p.a_matrix().row(i).iter().copied().collect();
        let norm_sq: f64 = a_row.iter().map(|v| v * v).sum();
        if norm_sq == 0.0 {
            facets.push(FacetFlow {
                facet: i,
                samples: 0,
                per_part_max: vec![None; field.n_parts()],
                composite_max: None,
            });
            continue;
        }
        let norm = norm_sq.sqrt();
        let b_i = p.b_vector()[i];

        let mut accepted = 0usize;
        let mut per_part_max = vec![f64::NEG_INFINITY; field.n_parts()];
        let mut composite_max = f64::NEG_INFINITY;
        let mut scratch = vec![0.0; dim];
        let max_attempts = samples_per_facet.saturating_mul(2000).max(10_000);
        for _ in 0..max_attempts {
            if accepted >= samples_per_facet {
                break;
            }
            // Draw in the sampling box and project onto the facet plane.
            let mut x: Vec<f64> = box_bounds
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect();
            let dot: f64 = a_row.iter().zip(&x).map(|(a, v)| a * v).sum();
            let shift = (b_i - dot) / norm_sq;
            for (xj, aj) in x.iter_mut().zip(&a_row) {
                *xj += shift * aj;
            }
            if !p.contains(&x, FEASIBILITY_TOL) {
                continue;
            }
            accepted += 1;
            for (k, part_max) in per_part_max.iter_mut().enumerate() {
                field.part(k).eval_into(&x, &mut scratch);
                let flow: f64 = a_row.iter().zip(&scratch).map(|(a, v)| a * v).sum::<f64>() / norm;
                *part_max = part_max.max(flow);
            }
            field.eval_into(&x, &mut scratch);
            let flow: f64 = a_row.iter().zip(&scratch).map(|(a, v)| a * v).sum::<f64>() / norm;
            composite_max = composite_max.max(flow);
        }

        let entry = FacetFlow {
            facet: i,
            samples: accepted,
            per_part_max: per_part_max
                .iter()
                .map(|&v| (accepted > 0).then_some(v))
                .collect(),
            composite_max: (accepted > 0).then_some(composite_max),
        };
        // The composite flow can never exceed the sum of per-part maxima on
        // the same samples.
        if let Some(cm) = entry.composite_max {
            let bound: f64 = per_part_max.iter().sum();
            assert!(
                cm <= bound + 1e-9,
                "facet {i}: composite flow {cm} exceeds per-part bound {bound}"
            );
        }
        facets.push(entry);
    }

    Ok(BoundaryFlowReport {
        tol: BOUNDARY_FLOW_TOL,
        facets,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExitRecord {
    pub time: f64,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub index: usize,
    pub start: Vec<f64>,
    /// First departure from the candidate set, if any.
    pub exit: Option<ExitRecord>,
    pub terminal_state: Vec<f64>,
    pub terminal_distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub n_samples: usize,
    pub t_end: f64,
    pub n_exits: usize,
    pub max_terminal_distance: f64,
    pub samples: Vec<SampleOutcome>,
}

/// Integrate `n_samples` uniformly sampled initial conditions in the
/// candidate set and report every exit and the terminal distance to the
/// equilibrium. Sampling is seeded and results are ordered by sample index.
pub fn check_trajectory_invariance(
    field: &dyn VectorField,
    roa: &CandidateRoa,
    n_samples: usize,
    t_end: f64,
    seed: u64,
) -> Result<InvarianceReport, InvarianceError> {
    let p = roa.omega_e();
    if field.dim() != p.dim() {
        return Err(InvarianceError::DimensionMismatch {
            expected: p.dim(),
            got: field.dim(),
        });
    }
    let box_bounds = p.coordinate_bounds(UNBOUNDED_CLIP);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = Vec::with_capacity(n_samples);
    let mut draws = 0usize;
    while starts.len() < n_samples {
        if draws >= MAX_REJECTION_DRAWS {
            return Err(InvarianceError::UnboundedSet { draws });
        }
        draws += 1;
        let x: Vec<f64> = box_bounds
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..=hi))
            .collect();
        if p.contains(&x, 0.0) {
            starts.push(x);
        }
    }

    let cfg = IntegratorConfig::rk45(1e-6, 1e-9);
    let samples: Vec<SampleOutcome> = starts
        .into_par_iter()
        .enumerate()
        .map(|(index, start)| {
            let (traj, diverged) = match dynsys::integrate(field, &start, t_end, &cfg) {
                Ok(t) => (t, false),
                Err(DynError::Diverged { trajectory }) => (trajectory, true),
                Err(e) => panic!("integration failed structurally: {e}"),
            };
            let mut exit = None;
            for i in 0..traj.len() {
                if !p.contains(traj.state(i), FEASIBILITY_TOL) {
                    exit = Some(ExitRecord {
                        time: traj.time(i),
                        state: traj.state(i).to_vec(),
                    });
                    break;
                }
            }
            if exit.is_none() && diverged {
                // Ran off to infinity without leaving the set is impossible
                // for a bounded set; flag the last state as the exit.
                exit = Some(ExitRecord {
                    time: traj.end_time(),
                    state: traj.end_state().to_vec(),
                });
            }
            let terminal_state = traj.end_state().to_vec();
            let terminal_distance = terminal_state
                .iter()
                .zip(roa.equilibrium())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            SampleOutcome {
                index,
                start,
                exit,
                terminal_state,
                terminal_distance,
            }
        })
        .collect();

    let n_exits = samples.iter().filter(|s| s.exit.is_some()).count();
    let max_terminal_distance = samples
        .iter()
        .map(|s| s.terminal_distance)
        .fold(0.0, f64::max);
    Ok(InvarianceReport {
        n_samples,
        t_end,
        n_exits,
        max_terminal_distance,
        samples,
    })
}
