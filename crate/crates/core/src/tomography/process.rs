use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_text;
use crate::quantum::{hermitian_eigen, min_eigenvalue, pauli_basis, psd_sqrt, CMatrix, CVector, C64};

use super::lbfgs::{maximize, AscentOptions};
use super::{matrix_from_json, matrix_json};

pub const PAULI_LABELS: [&str; 4] = ["I", "X", "Y", "Z"];

/// Qubit process matrix in the Pauli basis: `E(ρ) = Σ χ_mn σ_m ρ σ_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessMatrix {
    chi: CMatrix,
}

impl ProcessMatrix {
    pub fn new(chi: CMatrix) -> Result<Self> {
        if chi.shape() != (4, 4) {
            return Err(Error::DimensionMismatch {
                expected: 4,
                found: chi.nrows(),
            });
        }
        let herm = (&chi - chi.adjoint()).norm();
        if herm > 1e-8 {
            return Err(Error::NotPhysical(format!("χ Hermiticity error {herm:.3e}")));
        }
        let chi = (&chi + chi.adjoint()).unscale(2.0);
        let min = min_eigenvalue(&chi);
        if min < -1e-8 {
            return Err(Error::NotPhysical(format!("χ has negative eigenvalue {min:.3e}")));
        }
        Ok(Self { chi })
    }

    pub fn identity() -> Self {
        let mut chi = CMatrix::zeros(4, 4);
        chi[(0, 0)] = C64::new(1.0, 0.0);
        Self { chi }
    }

    pub fn chi(&self) -> &CMatrix {
        &self.chi
    }

    /// `Tr χ`; 1 for a trace-preserving channel, less with leakage.
    pub fn trace(&self) -> f64 {
        self.chi.trace().re
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let p = pauli_basis();
        let mut out = CMatrix::zeros(2, 2);
        for m in 0..4 {
            for n in 0..4 {
                if self.chi[(m, n)] != C64::new(0.0, 0.0) {
                    out += &p[m] * rho * &p[n] * self.chi[(m, n)];
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = matrix_json(&self.chi, serde_json::json!({ "basis": PAULI_LABELS }));
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(matrix_from_json(&doc)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.to_json()?)
    }
}

/// Column-stacked `|X⟩⟩`: component `2·i + k` is `X[k][i]`.
fn vec_op(x: &CMatrix) -> CVector {
    CVector::from_fn(4, |idx, _| x[(idx % 2, idx / 2)])
}

/// Choi matrix `J = Σ |i⟩⟨j| ⊗ E(|i⟩⟨j|)` (input factor first).
pub fn choi_from_chi(chi: &CMatrix) -> CMatrix {
    let p = pauli_basis();
    let v: Vec<CVector> = p.iter().map(vec_op).collect();
    let mut j = CMatrix::zeros(4, 4);
    for m in 0..4 {
        for n in 0..4 {
            j += &v[m] * v[n].adjoint() * chi[(m, n)];
        }
    }
    j
}

pub fn chi_from_choi(j: &CMatrix) -> CMatrix {
    let p = pauli_basis();
    let v: Vec<CVector> = p.iter().map(vec_op).collect();
    CMatrix::from_fn(4, 4, |m, n| (v[m].adjoint() * j * &v[n])[(0, 0)] / 4.0)
}

/// `E(ρ) = Tr_in[(ρᵀ ⊗ I) J]`.
#[cfg(test)]
fn apply_choi(j: &CMatrix, rho: &CMatrix) -> CMatrix {
    let k = rho.transpose().kronecker(&CMatrix::identity(2, 2)) * j;
    CMatrix::from_fn(2, 2, |a, b| k[(a, b)] + k[(2 + a, 2 + b)])
}

/// `|g⟩, |e⟩, (|g⟩±|e⟩)/√2, (|g⟩±i|e⟩)/√2` in the order
/// g, e, +x, +y, −x, −y.
pub fn mub_states() -> [CVector; 6] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let v = |a: C64, b: C64| CVector::from_vec(vec![a, b]);
    let r = |x: f64| C64::new(x, 0.0);
    [
        v(r(1.0), r(0.0)),
        v(r(0.0), r(1.0)),
        v(r(s), r(s)),
        v(r(s), C64::new(0.0, s)),
        v(r(s), r(-s)),
        v(r(s), C64::new(0.0, -s)),
    ]
}

#[derive(Clone, Debug)]
pub struct ProcessFit {
    pub chi: ProcessMatrix,
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// Maximum-likelihood χ from input states and their (possibly
/// sub-normalised) qubit-block outputs. Each output is treated as the
/// outcome intensities of the six mutually unbiased projectors, so a
/// channel that loses population is fitted with a trace-decreasing χ.
pub fn process_tomography(inputs: &[CVector], outputs: &[CMatrix]) -> Result<ProcessFit> {
    if inputs.len() != outputs.len() {
        return Err(Error::Argument(format!(
            "{} inputs but {} outputs",
            inputs.len(),
            outputs.len()
        )));
    }
    if inputs.iter().any(|v| v.len() != 2) || outputs.iter().any(|m| m.shape() != (2, 2)) {
        return Err(Error::DimensionMismatch { expected: 2, found: 0 });
    }
    let rho_in: Vec<CMatrix> = inputs.iter().map(|v| v * v.adjoint()).collect();
    // linear inversion of the superoperator
    let x = CMatrix::from_fn(4, rho_in.len(), |r, c| vec_op(&rho_in[c])[r]);
    let y = CMatrix::from_fn(4, outputs.len(), |r, c| vec_op(&outputs[c])[r]);
    let svd = x.clone().svd(true, true);
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-9).count();
    if rank < 4 {
        return Err(Error::Estimation(format!(
            "inputs span only {rank} of 4 operator dimensions"
        )));
    }
    let x_pinv = svd
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Estimation(e.to_string()))?;
    let s = y * x_pinv;
    // reshuffle: J[(i,k),(j,l)] = S[(l·2 + k), (j·2 + i)]
    let j_lin = CMatrix::from_fn(4, 4, |r, c| {
        let (i, k) = (r / 2, r % 2);
        let (j, l) = (c / 2, c % 2);
        s[(2 * l + k, 2 * j + i)]
    });
    let j_lin = (&j_lin + j_lin.adjoint()).unscale(2.0);

    let projectors: Vec<CMatrix> = mub_states().iter().map(|v| v * v.adjoint()).collect();
    let mut terms: Vec<(CMatrix, f64)> = Vec::new();
    for (rho, out) in rho_in.iter().zip(outputs) {
        for pm in &projectors {
            let p = (out * pm).trace().re.max(0.0);
            terms.push((rho.transpose().kronecker(pm), p));
        }
    }
    let objective = |j: &CMatrix| -> f64 {
        let mut ll = 0.0;
        for (k, p) in &terms {
            let q = (j * k).trace().re;
            if *p > 0.0 {
                if !(q > 0.0) {
                    return f64::NEG_INFINITY;
                }
                ll += p * q.ln();
            }
            ll -= q;
        }
        ll
    };

    let (vals, vecs) = hermitian_eigen(&j_lin);
    let mut start = CMatrix::zeros(4, 4);
    for (k, &v) in vals.iter().enumerate() {
        if v > 0.0 {
            let c = vecs.column(k);
            start += (c * c.adjoint()).scale(v);
        }
    }
    let exact =
        vals.iter().all(|&v| v >= -1e-12) && terms.iter().all(|(k, p)| ((&j_lin * k).trace().re - p).abs() <= 1e-12);
    let (j_fit, ll, iterations) = if exact {
        // data are reproduced by a CP map: the likelihood is at its maximum
        (j_lin.clone(), objective(&j_lin), 0)
    } else {
        let tr = start.trace().re.max(1e-12);
        let eps = 1e-4;
        let start = start.scale(1.0 - eps) + CMatrix::identity(4, 4).scale(eps * tr / 4.0);
        let b0 = psd_sqrt(&start);
        let mut x0 = vec![0.0; 32];
        pack(&b0, &mut x0);
        let f = |x: &[f64], grad: &mut [f64]| -> f64 {
            let b = unpack(x);
            let j = &b * b.adjoint();
            let v = objective(&j);
            if !v.is_finite() {
                return v;
            }
            let mut g = CMatrix::zeros(4, 4);
            for (k, p) in &terms {
                let q = (&j * k).trace().re;
                let w = if *p > 0.0 { p / q - 1.0 } else { -1.0 };
                g += k.scale(w);
            }
            pack(&(g * &b).scale(2.0), grad);
            v
        };
        let r = maximize(f, x0, &AscentOptions::default())?;
        let b = unpack(&r.x);
        (&b * b.adjoint(), r.value, r.iterations)
    };
    // enforce trace non-increase: Tr_out J ≤ I
    let tr_out = CMatrix::from_fn(2, 2, |i, j| j_fit[(2 * i, 2 * j)] + j_fit[(2 * i + 1, 2 * j + 1)]);
    let (tv, _) = hermitian_eigen(&tr_out);
    let lmax = tv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let j_fit = if lmax > 1.0 + 1e-9 {
        log::warn!("fitted process increases trace by {:.3e}; rescaled", lmax - 1.0);
        j_fit.unscale(lmax)
    } else {
        j_fit
    };
    Ok(ProcessFit {
        chi: ProcessMatrix::new(chi_from_choi(&j_fit))?,
        log_likelihood: ll,
        iterations,
    })
}

fn pack(m: &CMatrix, out: &mut [f64]) {
    for i in 0..4 {
        for j in 0..4 {
            out[i * 4 + j] = m[(i, j)].re;
            out[16 + i * 4 + j] = m[(i, j)].im;
        }
    }
}

fn unpack(x: &[f64]) -> CMatrix {
    CMatrix::from_fn(4, 4, |i, j| C64::new(x[i * 4 + j], x[16 + i * 4 + j]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMetrics {
    /// `Tr(χ_ideal χ)` relative to the identity process.
    pub process_fidelity: f64,
    /// Mean `⟨ψ|ρ_out|ψ⟩` over the inputs.
    pub state_fidelity: f64,
    pub per_input: Vec<f64>,
    pub chi_trace: f64,
}

pub fn transfer_metrics(chi: &ProcessMatrix, inputs: &[CVector], outputs: &[CMatrix]) -> Result<TransferMetrics> {
    if inputs.len() != outputs.len() || inputs.is_empty() {
        return Err(Error::Argument("need matching, non-empty inputs and outputs".into()));
    }
    let per_input: Vec<f64> = inputs
        .iter()
        .zip(outputs)
        .map(|(psi, out)| (psi.adjoint() * out * psi)[(0, 0)].re)
        .collect();
    Ok(TransferMetrics {
        process_fidelity: chi.chi()[(0, 0)].re,
        state_fidelity: per_input.iter().sum::<f64>() / per_input.len() as f64,
        per_input,
        chi_trace: chi.trace(),
    })
}

/// `Z(θ) m Z(θ)†` with `Z(θ) = diag(1, e^{iθ})`: a virtual-Z frame change.
pub fn rotate_phase(m: &CMatrix, theta: f64) -> CMatrix {
    let z = CMatrix::from_diagonal(&CVector::from_vec(vec![
        C64::new(1.0, 0.0),
        C64::from_polar(1.0, theta),
    ]));
    &z * m * z.adjoint()
}

/// Frame phase on the receiving qubit that maximises the mean transfer
/// fidelity: `θ = arg Σ a_g* a_e ρ_ge`.
pub fn calibrate_transfer_phase(inputs: &[CVector], outputs: &[CMatrix]) -> f64 {
    let c: C64 = inputs
        .iter()
        .zip(outputs)
        .map(|(psi, out)| psi[0].conj() * psi[1] * out[(0, 1)])
        .sum();
    c.arg()
}

#[cfg(test)]
fn apply_via_choi(chi: &CMatrix, rho: &CMatrix) -> CMatrix {
    apply_choi(&choi_from_chi(chi), rho)
}
