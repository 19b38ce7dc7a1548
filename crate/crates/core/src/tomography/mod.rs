//! Qutrit state tomography (one or two qutrits), qubit process tomography and
//! the transfer / entanglement figures of merit built on them.

mod bell;
mod lbfgs;
mod mle;
mod process;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_text};
use crate::quantum::{qutrit_rotation, CMatrix, DensityMatrix, QutritTransition, RotationAxis, C64};
use crate::readout::{
    classify_with_centers, expected_assignment, joint_matrix, lower_cholesky, AssignmentMatrix, IqPoint, TriModalModel,
};

pub use bell::{bell_phase, bell_protocol_analysis, reduce_to_qubits, with_bell_phase, BellAnalysis};
pub use mle::{linear_inversion, mle_state, MleOptions, MleReport};
pub use process::{
    calibrate_transfer_phase, chi_from_choi, choi_from_chi, mub_states, process_tomography, rotate_phase,
    transfer_metrics, ProcessFit, ProcessMatrix, TransferMetrics, PAULI_LABELS,
};

/// The nine single-qutrit tomography rotations.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationSet {
    names: Vec<&'static str>,
    unitaries: Vec<CMatrix>,
}

impl Default for RotationSet {
    fn default() -> Self {
        Self::standard()
    }
}

impl RotationSet {
    /// Composite entries apply the g-e π first (right-to-left product).
    pub fn standard() -> Self {
        use QutritTransition::{Ef, Ge};
        use RotationAxis::{X, Y};
        let r = qutrit_rotation;
        let ge_pi = r(Ge, X, PI);
        let entries: Vec<(&'static str, CMatrix)> = vec![
            ("I", CMatrix::identity(3, 3)),
            ("X90_ge", r(Ge, X, PI / 2.0)),
            ("Y90_ge", r(Ge, Y, PI / 2.0)),
            ("X180_ge", ge_pi.clone()),
            ("X90_ef", r(Ef, X, PI / 2.0)),
            ("Y90_ef", r(Ef, Y, PI / 2.0)),
            ("X90_ef*X180_ge", r(Ef, X, PI / 2.0) * &ge_pi),
            ("Y90_ef*X180_ge", r(Ef, Y, PI / 2.0) * &ge_pi),
            ("X180_ef*X180_ge", r(Ef, X, PI) * &ge_pi),
        ];
        let (names, unitaries) = entries.into_iter().unzip();
        Self { names, unitaries }
    }

    pub fn len(&self) -> usize {
        self.unitaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unitaries.is_empty()
    }

    pub fn names(&self) -> &[&'static str] {
        &self.names
    }

    pub fn unitaries(&self) -> &[CMatrix] {
        &self.unitaries
    }

    /// Setting labels and unitaries for `qutrits` ∈ {1, 2}; two-qutrit
    /// settings are ordered `9·i + j` for gate `i` on the first qutrit.
    pub fn settings(&self, qutrits: usize) -> Result<Vec<(String, CMatrix)>> {
        match qutrits {
            1 => Ok(self
                .names
                .iter()
                .map(|n| n.to_string())
                .zip(self.unitaries.iter().cloned())
                .collect()),
            2 => {
                let mut out = Vec::with_capacity(self.len() * self.len());
                for (na, ua) in self.names.iter().zip(&self.unitaries) {
                    for (nb, ub) in self.names.iter().zip(&self.unitaries) {
                        out.push((format!("{na}|{nb}"), ua.kronecker(ub)));
                    }
                }
                Ok(out)
            }
            _ => Err(Error::Argument(format!(
                "tomography supports 1 or 2 qutrits, not {qutrits}"
            ))),
        }
    }

    /// Rank of the linear map from Hermitian ρ to the measured populations.
    pub fn design_rank(&self, qutrits: usize) -> Result<usize> {
        let settings = self.settings(qutrits)?;
        let d = 3usize.pow(qutrits as u32);
        let unitaries: Vec<CMatrix> = settings.into_iter().map(|s| s.1).collect();
        let a = design_matrix(&unitaries, &DMatrix::identity(d, d));
        let sv = a.singular_values();
        let tol = 1e-9 * sv.max();
        Ok(sv.iter().filter(|&&s| s > tol).count())
    }

    pub fn check_complete(&self, qutrits: usize) -> Result<()> {
        let d = 3usize.pow(qutrits as u32);
        let rank = self.design_rank(qutrits)?;
        if rank != d * d {
            return Err(Error::Estimation(format!(
                "rotation set has rank {rank}, needs {}",
                d * d
            )));
        }
        Ok(())
    }
}

/// Real coefficients of `ρ ↦ q_{s,k} = Σ_j R[j][k] ⟨j|U_s ρ U_s†|j⟩`
/// in the Hermitian parameterisation of [`hermitian_from_params`].
pub(crate) fn design_matrix(unitaries: &[CMatrix], response: &DMatrix<f64>) -> DMatrix<f64> {
    let d = response.nrows();
    let rows = unitaries.len() * d;
    let mut a = DMatrix::zeros(rows, d * d);
    for (s, u) in unitaries.iter().enumerate() {
        for j in 0..d {
            // coefficient of each ρ element in population j
            let mut coeff = vec![0.0; d * d];
            let mut col = 0;
            for x in 0..d {
                coeff[col] = u[(j, x)].norm_sqr();
                col += 1;
            }
            for x in 0..d {
                for y in (x + 1)..d {
                    let c = u[(j, x)] * u[(j, y)].conj();
                    coeff[col] = 2.0 * c.re;
                    coeff[col + 1] = -2.0 * c.im;
                    col += 2;
                }
            }
            for k in 0..d {
                let w = response[(j, k)];
                if w != 0.0 {
                    for (c, v) in coeff.iter().enumerate() {
                        a[(s * d + k, c)] += w * v;
                    }
                }
            }
        }
    }
    a
}

/// Inverse of the parameterisation used by [`design_matrix`].
pub(crate) fn hermitian_from_params(d: usize, p: &[f64]) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    let mut col = 0;
    for x in 0..d {
        m[(x, x)] = C64::new(p[col], 0.0);
        col += 1;
    }
    for x in 0..d {
        for y in (x + 1)..d {
            let z = C64::new(p[col], p[col + 1]);
            m[(x, y)] = z;
            m[(y, x)] = z.conj();
            col += 2;
        }
    }
    m
}

/// Readout of one qutrit: shots drawn from `truth`, assigned to the nearest
/// of `classifier` (the calibrated centres).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QutritReadout {
    pub truth: TriModalModel,
    pub classifier: [IqPoint; 3],
}

impl QutritReadout {
    pub fn calibrated(model: TriModalModel) -> Self {
        let classifier = *model.centers();
        Self {
            truth: model,
            classifier,
        }
    }

    pub fn expected_matrix(&self) -> Result<AssignmentMatrix> {
        expected_assignment(&self.truth, &self.classifier)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotBudget {
    Finite(usize),
    /// Exact outcome probabilities.
    Infinite,
}

impl ShotBudget {
    /// Shots per setting used in the experiment's tomography.
    pub const DEFAULT: ShotBudget = ShotBudget::Finite(4000);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyRecord {
    pub qutrits: usize,
    pub settings: Vec<String>,
    /// Assigned-outcome counts per setting; absent for exact records.
    pub counts: Option<Vec<Vec<u64>>>,
    /// Assigned-outcome frequencies per setting.
    pub frequencies: Vec<Vec<f64>>,
    pub shots_per_setting: Option<usize>,
    /// Assignment matrix to correct for during reconstruction.
    pub mitigation: Option<AssignmentMatrix>,
}

impl TomographyRecord {
    pub fn dim(&self) -> usize {
        3usize.pow(self.qutrits as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let expected = RotationSet::standard().len().pow(self.qutrits as u32);
        if self.settings.len() != expected || self.frequencies.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.frequencies.len(),
            });
        }
        if self.frequencies.iter().any(|f| f.len() != d) {
            return Err(Error::Argument(format!("every setting needs {d} outcome frequencies")));
        }
        if let (Some(counts), Some(n)) = (&self.counts, self.shots_per_setting) {
            for (s, c) in counts.iter().enumerate() {
                if c.iter().sum::<u64>() != n as u64 {
                    return Err(Error::Argument(format!("setting {s}: counts do not sum to {n}")));
                }
            }
        }
        if let Some(r) = &self.mitigation {
            if r.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: r.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn with_mitigation(mut self, r: Option<AssignmentMatrix>) -> Self {
        self.mitigation = r;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    /// Multinomial resamples of a finite-shot record.
    pub fn bootstrap(&self, resamples: usize, seed: u64) -> Result<Vec<TomographyRecord>> {
        let n = self
            .shots_per_setting
            .ok_or_else(|| Error::Argument("bootstrap needs a finite-shot record".into()))?;
        (0..resamples)
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                let counts: Vec<Vec<u64>> = self.frequencies.iter().map(|f| multinomial(f, n, &mut rng)).collect();
                let frequencies = counts
                    .iter()
                    .map(|c| c.iter().map(|&x| x as f64 / n as f64).collect())
                    .collect();
                Ok(TomographyRecord {
                    counts: Some(counts),
                    frequencies,
                    ..self.clone()
                })
            })
            .collect()
    }
}

fn multinomial(p: &[f64], n: usize, rng: &mut impl Rng) -> Vec<u64> {
    let cdf: Vec<f64> = p
        .iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect();
    let mut counts = vec![0u64; p.len()];
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
        let k = cdf.iter().position(|&c| u < c).unwrap_or(p.len() - 1);
        counts[k] += 1;
    }
    counts
}

/// Populations `diag(U ρ U†)`, clipped at zero against round-off.
pub(crate) fn rotated_populations(u: &CMatrix, rho: &CMatrix) -> Vec<f64> {
    let m = u * rho * u.adjoint();
    let p: Vec<f64> = (0..m.nrows()).map(|k| m[(k, k)].re.max(0.0)).collect();
    let s: f64 = p.iter().sum();
    p.into_iter().map(|x| x / s).collect()
}

/// Measure `rho` in every setting of `gates`. `readout = None` is perfect
/// assignment; otherwise one [`QutritReadout`] per qutrit. Settings run in
/// parallel with per-setting random streams, so results do not depend on
/// scheduling.
pub fn simulate_tomography(
    rho: &DensityMatrix,
    gates: &RotationSet,
    readout: Option<&[QutritReadout]>,
    shots: ShotBudget,
    seed: u64,
) -> Result<TomographyRecord> {
    let qutrits = match rho.dim() {
        3 => 1,
        9 => 2,
        d => {
            return Err(Error::DimensionMismatch { expected: 9, found: d });
        }
    };
    if let Some(r) = readout {
        if r.len() != qutrits {
            return Err(Error::DimensionMismatch {
                expected: qutrits,
                found: r.len(),
            });
        }
    }
    if let ShotBudget::Finite(0) = shots {
        return Err(Error::Argument("shots per setting must be positive".into()));
    }
    gates.check_complete(qutrits)?;
    let settings = gates.settings(qutrits)?;
    let d = rho.dim();
    let response = match readout {
        None => None,
        Some(r) if qutrits == 1 => Some(r[0].expected_matrix()?),
        Some(r) => Some(joint_matrix(&r[0].expected_matrix()?, &r[1].expected_matrix()?)?),
    };

    let results: Vec<(Vec<u64>, Vec<f64>)> = settings
        .par_iter()
        .enumerate()
        .map(|(s, (_, u))| {
            let p = rotated_populations(u, rho.matrix());
            match shots {
                ShotBudget::Infinite => {
                    let f = match &response {
                        Some(r) => r.apply(&p).expect("matching dimension"),
                        None => p,
                    };
                    (Vec::new(), f)
                }
                ShotBudget::Finite(n) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(s as u64);
                    let counts = sample_setting(&p, readout, n, d, &mut rng);
                    let f = counts.iter().map(|&c| c as f64 / n as f64).collect();
                    (counts, f)
                }
            }
        })
        .collect();
    let (counts, frequencies): (Vec<Vec<u64>>, Vec<Vec<f64>>) = results.into_iter().unzip();
    let finite = matches!(shots, ShotBudget::Finite(_));
    Ok(TomographyRecord {
        qutrits,
        settings: settings.into_iter().map(|s| s.0).collect(),
        counts: finite.then_some(counts),
        frequencies,
        shots_per_setting: match shots {
            ShotBudget::Finite(n) => Some(n),
            ShotBudget::Infinite => None,
        },
        mitigation: None,
    })
}

fn sample_setting(p: &[f64], readout: Option<&[QutritReadout]>, n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let Some(readout) = readout else {
        return multinomial(p, n, rng);
    };
    let cdf: Vec<f64> = p
        .iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect();
    let chol: Vec<[nalgebra::Matrix2<f64>; 3]> = readout
        .iter()
        .map(|r| {
            std::array::from_fn(|k| {
                let c = r.truth.mode_covariance(k);
                lower_cholesky(&nalgebra::Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1]))
            })
        })
        .collect();
    let mut counts = vec![0u64; d];
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * cdf[d - 1];
        let joint = cdf.iter().position(|&c| u < c).unwrap_or(d - 1);
        let levels = if readout.len() == 1 {
            vec![joint]
        } else {
            vec![joint / 3, joint % 3]
        };
        let mut assigned = 0;
        for (q, (&level, r)) in levels.iter().zip(readout).enumerate() {
            let z = nalgebra::Vector2::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            let x = chol[q][level] * z;
            let c = r.truth.centers()[level];
            let k = classify_with_centers(&r.classifier, [c[0] + x[0], c[1] + x[1]]);
            assigned = 3 * assigned + k;
        }
        counts[assigned] += 1;
    }
    counts
}

/// Row-major, re/im interleaved JSON of a complex matrix.
pub fn matrix_json(m: &CMatrix, extra: serde_json::Value) -> serde_json::Value {
    let d = m.nrows();
    let mut data = Vec::with_capacity(2 * d * d);
    for i in 0..d {
        for j in 0..d {
            data.push(m[(i, j)].re);
            data.push(m[(i, j)].im);
        }
    }
    let mut doc = serde_json::json!({
        "rows": d,
        "cols": m.ncols(),
        "layout": "row-major, re/im interleaved",
        "data": data,
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (doc.as_object_mut(), extra) {
        obj.extend(more);
    }
    doc
}

pub fn matrix_from_json(doc: &serde_json::Value) -> Result<CMatrix> {
    let bad = || Error::Parse("matrix JSON needs rows, cols and data".into());
    let rows = doc["rows"].as_u64().ok_or_else(bad)? as usize;
    let cols = doc["cols"].as_u64().ok_or_else(bad)? as usize;
    let data: Vec<f64> = doc["data"]
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|v| v.as_f64().ok_or_else(bad))
        .collect::<Result<_>>()?;
    if data.len() != 2 * rows * cols {
        return Err(bad());
    }
    Ok(CMatrix::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        C64::new(data[k], data[k + 1])
    }))
}

/// `|m_ij|` as CSV with a header of column labels.
pub fn abs_csv(m: &CMatrix, labels: &[&str]) -> String {
    let mut out = String::from("row");
    for l in labels {
        let _ = write!(out, ",{l}");
    }
    out.push('\n');
    for i in 0..m.nrows() {
        out.push_str(labels.get(i).copied().unwrap_or(""));
        for j in 0..m.ncols() {
            let _ = write!(out, ",{}", fmt_f64(m[(i, j)].norm()));
        }
        out.push('\n');
    }
    out
}
