//! Classical swing dynamics as decomposed vector fields: the full
//! second-order `(delta, omega)` model and the first-order reduced model in
//! machine-0-referenced angles.

use std::sync::Arc;

use num_complex::Complex64;

use crate::dynsys::{DecomposedField, VectorField};

use super::kron::ReducedSystem;

/// Linear rows of the swing model: `delta_i' = omega_i` and
/// `omega_i' = (P_i - E_i^2 G_ii - d_i omega_i) / M_i`.
struct SwingLinear {
    n: usize,
    p_net: Vec<f64>,
    m: Vec<f64>,
    d: Vec<f64>,
}

impl VectorField for SwingLinear {
    fn dim(&self) -> usize {
        2 * self.n
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            out[i] = x[n + i];
            out[n + i] = (self.p_net[i] - self.d[i] * x[n + i]) / self.m[i];
        }
    }
}

/// One machine-pair interaction: the `sin`/`cos` coupling terms of machines
/// `i` and `j`, zero elsewhere.
struct PairInteraction {
    n: usize,
    i: usize,
    j: usize,
    /// `E_i E_j G_ij`
    eeg: f64,
    /// `E_i E_j B_ij`
    eeb: f64,
    m_i: f64,
    m_j: f64,
}

impl VectorField for PairInteraction {
    fn dim(&self) -> usize {
        2 * self.n
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let (s, c) = (x[self.i] - x[self.j]).sin_cos();
        out[self.n + self.i] = -(self.eeg * c + self.eeb * s) / self.m_i;
        out[self.n + self.j] = -(self.eeg * c - self.eeb * s) / self.m_j;
    }
}

/// The full swing model over states `(delta_1..delta_n, omega_1..omega_n)`,
/// decomposed as one linear part plus one part per machine pair.
pub fn swing_field(sys: &ReducedSystem) -> DecomposedField {
    let n = sys.n_mach();
    let p_net: Vec<f64> = (0..n)
        .map(|i| {
            let gii = sys.y_reduced[(i, i)].re;
            let ei = sys.e_mag(i);
            sys.p_mech[i] - ei * ei * gii
        })
        .collect();
    let mut parts: Vec<Arc<dyn VectorField>> = vec![Arc::new(SwingLinear {
        n,
        p_net,
        m: sys.m_inertia.clone(),
        d: sys.d_damp.clone(),
    })];
    for i in 0..n {
        for j in (i + 1)..n {
            let y: Complex64 = sys.y_reduced[(i, j)];
            let ee = sys.e_mag(i) * sys.e_mag(j);
            parts.push(Arc::new(PairInteraction {
                n,
                i,
                j,
                eeg: ee * y.re,
                eeb: ee * y.im,
                m_i: sys.m_inertia[i],
                m_j: sys.m_inertia[j],
            }));
        }
    }
    DecomposedField::new(parts).expect("swing parts share one dimension")
}

/// One row of the reduced-order model: `x_k' = P_k - P_e(k)` evaluated in
/// machine-0-referenced angles (`x_k = delta_{k+1} - delta_0`, `delta_0 = 0`).
struct ReducedRow {
    k: usize,
    n: usize,
    p: f64,
    e_mag: Vec<f64>,
    g_row: Vec<f64>,
    b_row: Vec<f64>,
}

impl VectorField for ReducedRow {
    fn dim(&self) -> usize {
        self.n - 1
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let dk = x[self.k - 1];
        let ek = self.e_mag[self.k];
        let mut pe = 0.0;
        for j in 0..self.n {
            if self.g_row[j] == 0.0 && self.b_row[j] == 0.0 {
                continue;
            }
            let dj = if j == 0 { 0.0 } else { x[j - 1] };
            let (s, c) = (dk - dj).sin_cos();
            pe += ek * self.e_mag[j] * (self.g_row[j] * c + self.b_row[j] * s);
        }
        out[self.k - 1] = self.p - pe;
    }
}

/// The first-order reduced model over `(delta_{2,1} .. delta_{n,1})`,
/// decomposed with one part per equation row.
pub fn reduced_angle_field(sys: &ReducedSystem) -> DecomposedField {
    let n = sys.n_mach();
    assert!(n >= 2, "reduced model needs at least two machines");
    let e_mag: Vec<f64> = (0..n).map(|i| sys.e_mag(i)).collect();
    let parts: Vec<Arc<dyn VectorField>> = (1..n)
        .map(|k| {
            Arc::new(ReducedRow {
                k,
                n,
                p: sys.p_mech[k],
                e_mag: e_mag.clone(),
                g_row: (0..n).map(|j| sys.y_reduced[(k, j)].re).collect(),
                b_row: (0..n).map(|j| sys.y_reduced[(k, j)].im).collect(),
            }) as Arc<dyn VectorField>
        })
        .collect();
    DecomposedField::new(parts).expect("reduced rows share one dimension")
}
