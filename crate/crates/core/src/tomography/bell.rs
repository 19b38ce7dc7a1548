use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{
    concurrence, pauli_expectations, state_fidelity, CMatrix, CVector, DensityMatrix, HilbertSpace, PureState, C64,
};

/// Two-qutrit indices of `gg, ge, eg, ee`.
const QUBIT_BLOCK: [usize; 4] = [0, 1, 3, 4];

/// Restrict a two-qutrit state to its `{g, e}⊗{g, e}` block. The result
/// keeps its reduced trace; population in `f` is discarded, not renormalised.
pub fn reduce_to_qubits(rho: &DensityMatrix) -> Result<DensityMatrix> {
    if rho.dim() != 9 {
        return Err(Error::DimensionMismatch {
            expected: 9,
            found: rho.dim(),
        });
    }
    let m = rho.matrix();
    let block = CMatrix::from_fn(4, 4, |i, j| m[(QUBIT_BLOCK[i], QUBIT_BLOCK[j])]);
    DensityMatrix::subnormalized(HilbertSpace::two_qubits(), block, rho.tolerance().max(1e-9))
}

fn z_on_b(theta: f64) -> CMatrix {
    let p = C64::from_polar(1.0, theta);
    let one = C64::new(1.0, 0.0);
    CMatrix::from_diagonal(&CVector::from_vec(vec![one, p, one, p]))
}

/// Frame phase `θ` on qubit B that maximises overlap with `(|ge⟩+|eg⟩)/√2`.
pub fn bell_phase(rho: &DensityMatrix) -> Result<f64> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: rho.dim(),
        });
    }
    Ok(-rho.matrix()[(1, 2)].arg())
}

/// Apply `I ⊗ diag(1, e^{iθ})` to a two-qubit state.
pub fn with_bell_phase(rho: &DensityMatrix, theta: f64) -> Result<DensityMatrix> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: rho.dim(),
        });
    }
    let z = z_on_b(theta);
    let m = &z * rho.matrix() * z.adjoint();
    DensityMatrix::subnormalized(rho.space().clone(), m, rho.tolerance().max(1e-9))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellAnalysis {
    pub fidelity: f64,
    pub concurrence: f64,
    /// `⟨σᵢ⊗σⱼ⟩` over `{I, X, Y, Z}²`, row-major in the first qubit.
    pub pauli: Vec<f64>,
    /// Population remaining in the qubit block.
    pub trace: f64,
    pub phase: f64,
}

/// Reduce a two-qutrit state to qubits, apply the frame phase and score it
/// against `(|ge⟩+|eg⟩)/√2`.
pub fn bell_protocol_analysis(rho: &DensityMatrix, phase: f64) -> Result<BellAnalysis> {
    let q = with_bell_phase(&reduce_to_qubits(rho)?, phase)?;
    Ok(BellAnalysis {
        fidelity: state_fidelity(&q, &PureState::bell_psi_plus())?,
        concurrence: concurrence(&q)?,
        pauli: pauli_expectations(&q)?.to_vec(),
        trace: q.trace(),
        phase,
    })
}
