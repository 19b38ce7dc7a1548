use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{hermitian_eigen, psd_sqrt, CMatrix, DensityMatrix, HilbertSpace, C64};

use super::lbfgs::{maximize, AscentOptions};
use super::{design_matrix, hermitian_from_params, RotationSet, TomographyRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    /// Relative log-likelihood change that counts as converged.
    pub rel_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            rel_tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MleReport {
    pub state: DensityMatrix,
    pub log_likelihood: f64,
    /// Log-likelihood after every accepted step.
    pub history: Vec<f64>,
    pub iterations: usize,
}

struct Problem {
    d: usize,
    unitaries: Vec<CMatrix>,
    response: DMatrix<f64>,
    frequencies: Vec<Vec<f64>>,
}

fn problem(record: &TomographyRecord) -> Result<Problem> {
    record.validate()?;
    let settings = RotationSet::standard().settings(record.qutrits)?;
    for ((name, _), recorded) in settings.iter().zip(&record.settings) {
        if name != recorded {
            return Err(Error::Estimation(format!(
                "record setting `{recorded}` does not match `{name}`"
            )));
        }
    }
    let d = record.dim();
    let response = record
        .mitigation
        .as_ref()
        .map(|r| r.entries.clone())
        .unwrap_or_else(|| DMatrix::identity(d, d));
    Ok(Problem {
        d,
        unitaries: settings.into_iter().map(|s| s.1).collect(),
        response,
        frequencies: record.frequencies.clone(),
    })
}

/// Unconstrained least-squares estimate, trace-normalised; may be unphysical.
pub fn linear_inversion(record: &TomographyRecord) -> Result<CMatrix> {
    let p = problem(record)?;
    solve_linear(&p)
}

fn solve_linear(p: &Problem) -> Result<CMatrix> {
    let a = design_matrix(&p.unitaries, &p.response);
    let b = DVector::from_iterator(a.nrows(), p.frequencies.iter().flatten().copied());
    let x = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Estimation(format!("linear inversion failed: {e}")))?;
    let m = hermitian_from_params(p.d, x.as_slice());
    let tr = m.trace().re;
    if !(tr > 0.0) {
        return Err(Error::Estimation("linear inversion gave non-positive trace".into()));
    }
    Ok(m.unscale(tr))
}

fn unpack(d: usize, x: &[f64]) -> CMatrix {
    CMatrix::from_fn(d, d, |i, j| C64::new(x[i * d + j], x[d * d + i * d + j]))
}

fn pack(m: &CMatrix, out: &mut [f64]) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = m[(i, j)].re;
            out[d * d + i * d + j] = m[(i, j)].im;
        }
    }
}

impl Problem {
    fn residual(&self, rho: &CMatrix) -> f64 {
        let d = self.d;
        let mut worst = 0.0_f64;
        for (u, f) in self.unitaries.iter().zip(&self.frequencies) {
            let m = u * rho * u.adjoint();
            for k in 0..d {
                let q: f64 = (0..d).map(|j| self.response[(j, k)] * m[(j, j)].re).sum();
                worst = worst.max((q - f[k]).abs());
            }
        }
        worst
    }

    /// Log-likelihood `Σ f log q` and its gradient with respect to `A`, where
    /// `ρ = AA†/Tr(AA†)`.
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.d;
        let a = unpack(d, x);
        let raw = &a * a.adjoint();
        let t = raw.trace().re;
        if !(t > 0.0) {
            return f64::NEG_INFINITY;
        }
        let rho = raw.unscale(t);
        let mut g = CMatrix::zeros(d, d);
        let mut ll = 0.0;
        for (u, f) in self.unitaries.iter().zip(&self.frequencies) {
            let m = u * &rho * u.adjoint();
            let pops: Vec<f64> = (0..d).map(|j| m[(j, j)].re).collect();
            let mut w = vec![0.0; d];
            for k in 0..d {
                if f[k] == 0.0 {
                    continue;
                }
                let q: f64 = (0..d).map(|j| self.response[(j, k)] * pops[j]).sum();
                if !(q > 0.0) {
                    return f64::NEG_INFINITY;
                }
                ll += f[k] * q.ln();
                for j in 0..d {
                    w[j] += self.response[(j, k)] * f[k] / q;
                }
            }
            // U† diag(w) U
            let mut scaled = u.clone();
            for j in 0..d {
                for c in 0..d {
                    scaled[(j, c)] *= w[j];
                }
            }
            g += u.adjoint() * scaled;
        }
        let mean = (&g * &rho).trace().re;
        let geff = (g - CMatrix::identity(d, d).scale(mean)).unscale(t);
        pack(&(geff * &a).scale(2.0), grad);
        ll
    }
}

fn space_for(qutrits: usize) -> HilbertSpace {
    if qutrits == 1 {
        HilbertSpace::qutrit("q")
    } else {
        HilbertSpace::two_qutrits()
    }
}

/// Maximum-likelihood state for a tomography record. When the record carries
/// an assignment matrix, the likelihood is that of the raw counts under
/// `Rᵀ·p(ρ)`, so readout correction happens inside the estimator.
pub fn mle_state(record: &TomographyRecord, options: &MleOptions) -> Result<MleReport> {
    let p = problem(record)?;
    let d = p.d;
    let lin = solve_linear(&p)?;
    let herm = (&lin + lin.adjoint()).unscale(2.0);
    let (vals, vecs) = hermitian_eigen(&herm);
    let mut start = CMatrix::zeros(d, d);
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    for (k, &v) in vals.iter().enumerate() {
        if v > 0.0 {
            let c = vecs.column(k);
            start += (c * c.adjoint()).scale(v / total);
        }
    }
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min) / total;
    if min >= -1e-12 && p.residual(&herm) <= 1e-12 {
        // a physical state reproduces the data exactly: the likelihood is maximal there
        let mut grad = vec![0.0; 2 * d * d];
        let mut x = vec![0.0; 2 * d * d];
        pack(&psd_sqrt(&start), &mut x);
        let ll = p.evaluate(&x, &mut grad);
        return Ok(MleReport {
            state: DensityMatrix::new(space_for(record.qutrits), start)?,
            log_likelihood: ll,
            history: vec![ll],
            iterations: 0,
        });
    }
    // the ascent cannot raise the rank of A, so start strictly inside
    if min < 1e-9 {
        let eps = 1e-4;
        start = start.scale(1.0 - eps) + CMatrix::identity(d, d).scale(eps / d as f64);
    }
    let mut x0 = vec![0.0; 2 * d * d];
    pack(&psd_sqrt(&start), &mut x0);

    let opts = AscentOptions {
        rel_tolerance: options.rel_tolerance,
        max_iterations: options.max_iterations,
        ..Default::default()
    };
    let result = maximize(|x, g| p.evaluate(x, g), x0, &opts)?;
    let a = unpack(d, &result.x);
    let raw = &a * a.adjoint();
    let rho = raw.unscale(raw.trace().re);
    let rho = (&rho + rho.adjoint()).unscale(2.0);
    Ok(MleReport {
        state: DensityMatrix::new(space_for(record.qutrits), rho)?,
        log_likelihood: result.value,
        history: result.history,
        iterations: result.iterations,
    })
}
