use super::operators::{gell_mann_basis, pauli_basis, sigma, Pauli};
use super::{hermitian_eigen, psd_sqrt, CMatrix, DensityMatrix, HilbertSpace, PureState};
use crate::error::{Error, Result};

/// `⟨ψ|ρ|ψ⟩`. Sub-normalized inputs are evaluated as given.
pub fn state_fidelity(rho: &DensityMatrix, target: &PureState) -> Result<f64> {
    if rho.dim() != target.space().dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            found: target.space().dim(),
        });
    }
    let psi = target.amplitudes();
    Ok((psi.adjoint() * rho.matrix() * psi)[(0, 0)].re)
}

/// Wootters concurrence of a two-qubit state.
///
/// Sub-normalized input is used unchanged, which yields a conservative
/// value compared with renormalizing first.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: rho.dim(),
        });
    }
    let yy = sigma(Pauli::Y).kronecker(&sigma(Pauli::Y));
    let m = rho.matrix();
    let flipped = &yy * m.conjugate() * &yy;
    // ρ·ρ̃ and √ρ·ρ̃·√ρ share their spectrum; the latter is Hermitian.
    let s = psd_sqrt(m);
    let (vals, _) = hermitian_eigen(&(&s * flipped * &s));
    let l: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok((l[0] - l[1] - l[2] - l[3]).max(0.0))
}

/// Frobenius norm of `m1 − m2`.
pub fn hs_distance(m1: &CMatrix, m2: &CMatrix) -> Result<f64> {
    if m1.shape() != m2.shape() {
        return Err(Error::Argument(format!(
            "shape mismatch {:?} vs {:?}",
            m1.shape(),
            m2.shape()
        )));
    }
    Ok((m1 - m2).norm())
}

/// `Tr(ρ σᵢ⊗σⱼ)` for `(i, j)` in `{I, X, Y, Z}²`, row-major in `i`.
pub fn pauli_expectations(rho: &DensityMatrix) -> Result<[f64; 16]> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: rho.dim(),
        });
    }
    let basis = pauli_basis();
    let mut out = [0.0; 16];
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            out[4 * i + j] = (rho.matrix() * a.kronecker(b)).trace().re;
        }
    }
    Ok(out)
}

/// Inverse of [`pauli_expectations`]: `ρ = ¼ Σ ⟨σᵢσⱼ⟩ σᵢ⊗σⱼ`.
pub fn pauli_reconstruct(expectations: &[f64; 16]) -> CMatrix {
    let basis = pauli_basis();
    let mut out = CMatrix::zeros(4, 4);
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            out += a.kronecker(b).scale(expectations[4 * i + j] / 4.0);
        }
    }
    out
}

/// `Tr(ρ Gᵢ⊗Gⱼ)` over identity + Gell-Mann, row-major in `i`.
pub fn gell_mann_expectations(rho: &DensityMatrix) -> Result<[f64; 81]> {
    if rho.dim() != 9 {
        return Err(Error::DimensionMismatch {
            expected: 9,
            found: rho.dim(),
        });
    }
    let basis = gell_mann_basis();
    let mut out = [0.0; 81];
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            out[9 * i + j] = (rho.matrix() * a.kronecker(b)).trace().re;
        }
    }
    Ok(out)
}

/// Reduced state on the `keep` factors (kept in their original order).
pub fn partial_trace(rho: &DensityMatrix, keep: &[&str]) -> Result<DensityMatrix> {
    let space = rho.space();
    let kept_space: HilbertSpace = space.subspace(keep)?;
    let kept: Vec<bool> = space
        .factors()
        .iter()
        .map(|f| keep.contains(&f.label.as_str()))
        .collect();
    let d = space.dim();
    let dk = kept_space.dim();
    // split every flat index into (kept index, traced index)
    let split: Vec<(usize, usize)> = (0..d)
        .map(|idx| {
            let digits = space.digits(idx);
            let (mut ki, mut ti) = (0, 0);
            for ((&dig, f), &k) in digits.iter().zip(space.factors()).zip(&kept) {
                if k {
                    ki = ki * f.dim + dig;
                } else {
                    ti = ti * f.dim + dig;
                }
            }
            (ki, ti)
        })
        .collect();
    let mut out = CMatrix::zeros(dk, dk);
    let m = rho.matrix();
    for i in 0..d {
        for j in 0..d {
            if split[i].1 == split[j].1 {
                out[(split[i].0, split[j].0)] += m[(i, j)];
            }
        }
    }
    Ok(DensityMatrix::from_parts(
        kept_space,
        out,
        rho.tolerance(),
        rho.is_subnormalized(),
    ))
}
