//! Hilbert-space bookkeeping, dense operators and density matrices.
//!
//! Everything is dense: the largest space in use is two qutrits each coupled
//! to a two-level Fock truncation, i.e. 36 dimensions.

mod metrics;
mod operators;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use metrics::{
    concurrence, gell_mann_expectations, hs_distance, partial_trace, pauli_expectations, pauli_reconstruct,
    state_fidelity,
};
pub use operators::{
    annihilation, gell_mann_basis, ket, pauli_basis, projector, qutrit_rotation, sigma, transition, Pauli,
    QutritTransition, RotationAxis,
};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Absolute tolerance for Hermiticity, trace and eigenvalue checks.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// One tensor factor of a composite space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub label: String,
    pub dim: usize,
}

/// An ordered list of labelled tensor factors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertSpace {
    factors: Vec<Factor>,
}

impl HilbertSpace {
    pub fn new<S: Into<String>>(factors: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let factors: Vec<Factor> = factors
            .into_iter()
            .map(|(label, dim)| Factor {
                label: label.into(),
                dim,
            })
            .collect();
        if factors.is_empty() {
            return Err(Error::Argument("a Hilbert space needs at least one factor".into()));
        }
        for (i, f) in factors.iter().enumerate() {
            if f.dim < 2 {
                return Err(Error::Argument(format!(
                    "factor `{}` has dimension {} (< 2)",
                    f.label, f.dim
                )));
            }
            if factors[..i].iter().any(|g| g.label == f.label) {
                return Err(Error::Argument(format!("duplicate factor label `{}`", f.label)));
            }
        }
        Ok(Self { factors })
    }

    pub fn single(label: impl Into<String>, dim: usize) -> Result<Self> {
        Self::new([(label.into(), dim)])
    }

    pub fn qubit(label: impl Into<String>) -> Self {
        Self::single(label, 2).expect("qubit space is valid")
    }

    pub fn qutrit(label: impl Into<String>) -> Self {
        Self::single(label, 3).expect("qutrit space is valid")
    }

    /// Two qubits labelled `a`, `b`.
    pub fn two_qubits() -> Self {
        Self::new([("a", 2), ("b", 2)]).expect("valid")
    }

    /// Two qutrits labelled `a`, `b`.
    pub fn two_qutrits() -> Self {
        Self::new([("a", 3), ("b", 3)]).expect("valid")
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(|f| f.dim).product()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|f| f.label == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn factor_dim(&self, label: &str) -> Result<usize> {
        Ok(self.factors[self.index_of(label)?].dim)
    }

    /// Concatenation `self ⊗ other`.
    pub fn concat(&self, other: &HilbertSpace) -> Result<Self> {
        Self::new(
            self.factors
                .iter()
                .chain(other.factors.iter())
                .map(|f| (f.label.clone(), f.dim)),
        )
    }

    /// Sub-space made of the listed factors, in the order they appear in `self`.
    pub fn subspace(&self, keep: &[&str]) -> Result<Self> {
        for label in keep {
            self.index_of(label)?;
        }
        Self::new(
            self.factors
                .iter()
                .filter(|f| keep.contains(&f.label.as_str()))
                .map(|f| (f.label.clone(), f.dim)),
        )
    }

    /// Mixed-radix digits of a flat index, most significant factor first.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.factors.len()];
        for (k, f) in self.factors.iter().enumerate().rev() {
            out[k] = index % f.dim;
            index /= f.dim;
        }
        out
    }

    pub fn flat_index(&self, digits: &[usize]) -> usize {
        digits.iter().zip(&self.factors).fold(0, |acc, (&d, f)| acc * f.dim + d)
    }
}

/// Dense square operator on a declared space.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    matrix: CMatrix,
}

impl Operator {
    pub fn new(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: if matrix.nrows() != d {
                    matrix.nrows()
                } else {
                    matrix.ncols()
                },
            });
        }
        Ok(Self { space, matrix })
    }

    pub fn identity(space: HilbertSpace) -> Self {
        let d = space.dim();
        Self {
            space,
            matrix: CMatrix::identity(d, d),
        }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dagger(&self) -> Self {
        Self {
            space: self.space.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    /// Matrix product `self · rhs` on the same space.
    pub fn compose(&self, rhs: &Operator) -> Result<Self> {
        if self.space != rhs.space {
            return Err(Error::DimensionMismatch {
                expected: self.space.dim(),
                found: rhs.space.dim(),
            });
        }
        Ok(Self {
            space: self.space.clone(),
            matrix: &self.matrix * &rhs.matrix,
        })
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let d = self.space.dim();
        let prod = self.matrix.adjoint() * &self.matrix;
        (prod - CMatrix::identity(d, d)).iter().all(|z| z.norm() <= tol)
    }

    /// Lift a single-factor operator to the full space (identity elsewhere).
    pub fn embed(space: &HilbertSpace, label: &str, local: &CMatrix) -> Result<Self> {
        let idx = space.index_of(label)?;
        let mut ops = Vec::with_capacity(space.factors().len());
        for (k, f) in space.factors().iter().enumerate() {
            let single = HilbertSpace::single(f.label.clone(), f.dim)?;
            if k == idx {
                ops.push(Operator::new(single, local.clone())?);
            } else {
                ops.push(Operator::identity(single));
            }
        }
        tensor(&ops)
    }
}

/// Kronecker product in listed order.
pub fn tensor(operators: &[Operator]) -> Result<Operator> {
    let (first, rest) = operators
        .split_first()
        .ok_or_else(|| Error::Argument("tensor product of an empty list".into()))?;
    rest.iter().try_fold(first.clone(), |acc, op| {
        Ok(Operator {
            space: acc.space.concat(&op.space)?,
            matrix: acc.matrix.kronecker(&op.matrix),
        })
    })
}

/// Normalized state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    space: HilbertSpace,
    amplitudes: CVector,
}

impl PureState {
    pub fn new(space: HilbertSpace, amplitudes: CVector) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: amplitudes.len(),
            });
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::NotPhysical(format!("state norm is {norm}, expected 1")));
        }
        Ok(Self { space, amplitudes })
    }

    /// Normalizes `amplitudes` before wrapping them.
    pub fn normalized(space: HilbertSpace, amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 {
            return Err(Error::Argument("zero vector cannot be normalized".into()));
        }
        Self::new(space, amplitudes.unscale(norm))
    }

    /// Basis state given by per-factor level indices.
    pub fn basis(space: HilbertSpace, levels: &[usize]) -> Result<Self> {
        if levels.len() != space.factors().len() || levels.iter().zip(space.factors()).any(|(&l, f)| l >= f.dim) {
            return Err(Error::Argument(format!("invalid basis label {levels:?}")));
        }
        let mut amps = CVector::zeros(space.dim());
        amps[space.flat_index(levels)] = ONE;
        Ok(Self {
            space,
            amplitudes: amps,
        })
    }

    /// `(|ge⟩ + |eg⟩)/√2` on two qubits.
    pub fn bell_psi_plus() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let amps = CVector::from_vec(vec![ZERO, C64::new(s, 0.0), C64::new(s, 0.0), ZERO]);
        Self::new(HilbertSpace::two_qubits(), amps).expect("normalized")
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn apply(&self, op: &Operator) -> Result<Self> {
        if op.space().dim() != self.space.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.space.dim(),
                found: op.space().dim(),
            });
        }
        Self::normalized(self.space.clone(), op.matrix() * &self.amplitudes)
    }

    pub fn projector(&self) -> CMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }
}

/// Hermitian positive semidefinite matrix with unit (or, when flagged,
/// sub-unit) trace.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    space: HilbertSpace,
    matrix: CMatrix,
    tolerance: f64,
    subnormalized: bool,
}

impl DensityMatrix {
    pub fn new(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        Self::with_tolerance(space, matrix, DEFAULT_TOLERANCE)
    }

    pub fn with_tolerance(space: HilbertSpace, matrix: CMatrix, tolerance: f64) -> Result<Self> {
        let rho = Self::checked(space, matrix, tolerance, false)?;
        let tr = rho.trace();
        if (tr - 1.0).abs() > tolerance {
            return Err(Error::NotPhysical(format!("trace is {tr}, expected 1")));
        }
        Ok(rho)
    }

    /// Trace in `[0, 1]`; used for block reductions that discard population.
    pub fn subnormalized(space: HilbertSpace, matrix: CMatrix, tolerance: f64) -> Result<Self> {
        let rho = Self::checked(space, matrix, tolerance, true)?;
        let tr = rho.trace();
        if tr > 1.0 + tolerance || tr < -tolerance {
            return Err(Error::NotPhysical(format!("trace {tr} outside [0, 1]")));
        }
        Ok(rho)
    }

    fn checked(space: HilbertSpace, matrix: CMatrix, tolerance: f64, sub: bool) -> Result<Self> {
        let op = Operator::new(space, matrix)?;
        let herm = hermiticity_error(op.matrix());
        if herm > tolerance {
            return Err(Error::NotPhysical(format!("Hermiticity error {herm:.3e}")));
        }
        let min_eig = min_eigenvalue(op.matrix());
        if min_eig < -tolerance {
            return Err(Error::NotPhysical(format!("negative eigenvalue {min_eig:.3e}")));
        }
        Ok(Self {
            space: op.space,
            matrix: op.matrix,
            tolerance,
            subnormalized: sub,
        })
    }

    pub fn from_pure(state: &PureState) -> Self {
        Self {
            space: state.space.clone(),
            matrix: state.projector(),
            tolerance: DEFAULT_TOLERANCE,
            subnormalized: false,
        }
    }

    pub fn maximally_mixed(space: HilbertSpace) -> Self {
        let d = space.dim();
        Self {
            space,
            matrix: CMatrix::identity(d, d).unscale(d as f64),
            tolerance: DEFAULT_TOLERANCE,
            subnormalized: false,
        }
    }

    /// Closest physical state: eigenvalues below zero are clipped and the
    /// spectrum renormalized. Returns the clipped (negative) mass.
    pub fn project_physical(space: HilbertSpace, matrix: &CMatrix) -> Result<(Self, f64)> {
        let herm = (matrix + matrix.adjoint()).unscale(2.0);
        let eig = SymmetricEigen::new(herm);
        let clipped: f64 = eig.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
        let vals: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = vals.iter().sum();
        if total <= 0.0 {
            return Err(Error::NotPhysical("no positive spectral weight".into()));
        }
        let d = matrix.nrows();
        let mut out = CMatrix::zeros(d, d);
        for (k, &l) in vals.iter().enumerate() {
            if l > 0.0 {
                let v = eig.eigenvectors.column(k);
                out += (v * v.adjoint()).scale(l / total);
            }
        }
        if clipped > 0.0 {
            log::debug!("clipped {clipped:.3e} of negative spectral mass");
        }
        Ok((Self::new(space, out)?, clipped))
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn is_subnormalized(&self) -> bool {
        self.subnormalized
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn populations(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|z| z.re).collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.matrix)
    }

    /// `U ρ U†`.
    pub fn transform(&self, unitary: &Operator) -> Result<Self> {
        if unitary.space().dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: unitary.space().dim(),
            });
        }
        let u = unitary.matrix();
        Ok(Self {
            space: self.space.clone(),
            matrix: u * &self.matrix * u.adjoint(),
            tolerance: self.tolerance,
            subnormalized: self.subnormalized,
        })
    }

    /// `ρ_a ⊗ ρ_b`.
    pub fn product(&self, other: &DensityMatrix) -> Result<Self> {
        Ok(Self {
            space: self.space.concat(&other.space)?,
            matrix: self.matrix.kronecker(&other.matrix),
            tolerance: self.tolerance.max(other.tolerance),
            subnormalized: self.subnormalized || other.subnormalized,
        })
    }

    /// Unchecked constructor for matrices produced by trusted internal routes.
    pub(crate) fn from_parts(space: HilbertSpace, matrix: CMatrix, tolerance: f64, sub: bool) -> Self {
        Self {
            space,
            matrix,
            tolerance,
            subnormalized: sub,
        }
    }
}

pub(crate) fn hermiticity_error(m: &CMatrix) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn min_eigenvalue(m: &CMatrix) -> f64 {
    let herm = (m + m.adjoint()).unscale(2.0);
    SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Hermitian eigen-decomposition with eigenvalues sorted descending.
pub(crate) fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let herm = (m + m.adjoint()).unscale(2.0);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let d = m.nrows();
    let mut vecs = CMatrix::zeros(d, d);
    for (j, &k) in order.iter().enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(k));
    }
    (vals, vecs)
}

/// Principal square root of a PSD matrix (negative eigenvalues clipped).
pub(crate) fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let d = m.nrows();
    let mut out = CMatrix::zeros(d, d);
    for (k, &l) in vals.iter().enumerate() {
        if l > 0.0 {
            let v = vecs.column(k);
            out += (v * v.adjoint()).scale(l.sqrt());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tensor_of_identities_is_identity() {
        let a = Operator::identity(HilbertSpace::qubit("a"));
        let b = Operator::identity(HilbertSpace::qubit("b"));
        let ab = tensor(&[a, b]).unwrap();
        assert_eq!(ab.space().dim(), 4);
        assert_eq!(ab.matrix(), &CMatrix::identity(4, 4));
    }

    #[test]
    fn sigma_z_flips_sign_of_excited_factor() {
        let z = Operator::new(HilbertSpace::qubit("a"), sigma(Pauli::Z)).unwrap();
        let id = Operator::identity(HilbertSpace::qubit("b"));
        let zi = tensor(&[z, id]).unwrap();
        let psi = PureState::basis(HilbertSpace::two_qubits(), &[1, 0]).unwrap();
        let out = zi.matrix() * psi.amplitudes();
        assert_abs_diff_eq!(out[2].re, -1.0);
        assert_abs_diff_eq!(out.norm(), 1.0);
    }

    #[test]
    fn tensor_entries_match_index_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut rand_op = |label: &str| {
            let m = CMatrix::from_fn(2, 2, |_, _| C64::new(rng.random(), rng.random()));
            Operator::new(HilbertSpace::qubit(label), m).unwrap()
        };
        let a = rand_op("a");
        let b = rand_op("b");
        let ab = tensor(&[a.clone(), b.clone()]).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        let expect = a.matrix()[(i, j)] * b.matrix()[(k, l)];
                        let got = ab.matrix()[(2 * i + k, 2 * j + l)];
                        assert!((expect - got).norm() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_tensor_is_an_error() {
        assert!(matches!(tensor(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn hilbert_space_rejects_bad_factors() {
        assert!(HilbertSpace::new([("a", 1)]).is_err());
        assert!(HilbertSpace::new([("a", 2), ("a", 3)]).is_err());
        let s = HilbertSpace::new([("a", 3), ("r", 2), ("b", 3)]).unwrap();
        assert_eq!(s.dim(), 18);
        assert_eq!(s.digits(s.flat_index(&[2, 1, 0])), vec![2, 1, 0]);
    }

    #[test]
    fn density_matrix_validation() {
        let space = HilbertSpace::qubit("q");
        let bad = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ZERO]);
        assert!(DensityMatrix::new(space.clone(), bad).is_err());
        let neg = CMatrix::from_row_slice(2, 2, &[C64::new(1.5, 0.0), ZERO, ZERO, C64::new(-0.5, 0.0)]);
        assert!(DensityMatrix::new(space.clone(), neg.clone()).is_err());
        let (fixed, clipped) = DensityMatrix::project_physical(space, &neg).unwrap();
        assert_abs_diff_eq!(clipped, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fixed.trace(), 1.0, epsilon = 1e-12);
    }
}
