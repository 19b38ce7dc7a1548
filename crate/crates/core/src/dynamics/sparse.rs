//! Coordinate-format operators and the Lindblad right-hand side on a
//! row-major density matrix.

use crate::quantum::{CMatrix, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseOp {
    dim: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    pub fn from_dense(m: &CMatrix) -> Self {
        let dim = m.nrows();
        let mut entries = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                let v = m[(i, j)];
                if v.norm() > 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// `out += c · (A ρ)`.
    pub fn left_mul_acc(&self, c: C64, rho: &[C64], out: &mut [C64]) {
        let d = self.dim;
        for &(i, k, v) in &self.entries {
            let cv = c * v;
            let src = &rho[k * d..(k + 1) * d];
            let dst = &mut out[i * d..(i + 1) * d];
            for (o, r) in dst.iter_mut().zip(src) {
                *o += cv * r;
            }
        }
    }

    /// `out += X L†`.
    fn right_mul_dagger_acc(&self, x: &[C64], out: &mut [C64]) {
        let d = self.dim;
        for &(j, l, w) in &self.entries {
            let wc = w.conj();
            for i in 0..d {
                out[i * d + j] += x[i * d + l] * wc;
            }
        }
    }

    /// `Tr(A ρ)`.
    pub fn expectation(&self, rho: &[C64]) -> C64 {
        let d = self.dim;
        self.entries.iter().map(|&(i, k, v)| v * rho[k * d + i]).sum()
    }
}

/// `dρ = Mρ + (Mρ)† + Σ LρL†` with `M = M₀ + Σⱼ cⱼ Kⱼ` assembled by the caller.
pub(crate) struct LindbladKernel<'a> {
    pub static_part: &'a SparseOp,
    pub jumps: &'a [SparseOp],
}

impl LindbladKernel<'_> {
    pub fn apply(&self, drives: &[(f64, &SparseOp)], rho: &[C64], out: &mut [C64], scratch: &mut Vec<C64>) {
        let d = self.static_part.dim;
        scratch.clear();
        scratch.resize(d * d, C64::new(0.0, 0.0));
        let one = C64::new(1.0, 0.0);
        self.static_part.left_mul_acc(one, rho, scratch);
        for &(c, k) in drives {
            if c != 0.0 {
                k.left_mul_acc(C64::new(c, 0.0), rho, scratch);
            }
        }
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = scratch[i * d + j] + scratch[j * d + i].conj();
            }
        }
        for l in self.jumps {
            scratch.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            l.left_mul_acc(one, rho, scratch);
            l.right_mul_dagger_acc(scratch, out);
        }
    }
}
