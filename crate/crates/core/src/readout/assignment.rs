use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::io::write_text;

use super::{classify_with_centers, sample_level, to_matrix, IqPoint, TriModalModel};

/// Mitigation refuses matrices worse conditioned than this.
pub const MAX_CONDITION_NUMBER: f64 = 1e6;

/// `entries[(i, j)] = P(assigned j | prepared i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    #[serde(with = "rows")]
    pub entries: DMatrix<f64>,
    /// Shots behind each row; empty for analytic matrices.
    pub shot_counts: Vec<usize>,
}

mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("assignment matrix must be square"));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

impl AssignmentMatrix {
    pub fn new(entries: DMatrix<f64>, shot_counts: Vec<usize>) -> Result<Self> {
        let m = Self { entries, shot_counts };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.entries.nrows();
        if n == 0 || self.entries.ncols() != n {
            return Err(Error::Argument("assignment matrix must be square and non-empty".into()));
        }
        if !self.shot_counts.is_empty() && self.shot_counts.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.shot_counts.len(),
            });
        }
        for i in 0..n {
            let row = self.entries.row(i);
            if row.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::NotPhysical(format!("row {i} has entries outside [0, 1]")));
            }
            if (row.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::NotPhysical(format!("row {i} sums to {}", row.sum())));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// `1 − mean(diag)`.
    pub fn average_error(&self) -> f64 {
        1.0 - self.entries.diagonal().mean()
    }

    /// `1 − R[i][i]` for each prepared state.
    pub fn state_errors(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| 1.0 - self.entries[(i, i)]).collect()
    }

    /// Expected assigned distribution for true populations `p`: `Rᵀp`.
    pub fn apply(&self, populations: &[f64]) -> Result<Vec<f64>> {
        if populations.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: populations.len(),
            });
        }
        let p = nalgebra::DVector::from_column_slice(populations);
        Ok((self.entries.transpose() * p).iter().copied().collect())
    }

    pub fn condition_number(&self) -> f64 {
        let sv = self.entries.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Calibration by counting: `n_shots` per basis state, classified by the
/// same model that generated them.
pub fn assignment_matrix(model: &TriModalModel, n_shots: usize, seed: u64) -> Result<AssignmentMatrix> {
    assignment_matrix_with(model, model, n_shots, seed)
}

/// Shots drawn from `truth`, classified against `classifier`'s centres.
pub fn assignment_matrix_with(
    truth: &TriModalModel,
    classifier: &TriModalModel,
    n_shots: usize,
    seed: u64,
) -> Result<AssignmentMatrix> {
    let mut entries = DMatrix::zeros(3, 3);
    for i in 0..3 {
        let shots = sample_level(truth, i, n_shots, seed.wrapping_add(i as u64))?;
        for p in shots {
            entries[(i, classify_with_centers(classifier.centers(), p))] += 1.0;
        }
    }
    entries /= n_shots as f64;
    AssignmentMatrix::new(entries, vec![n_shots; 3])
}

/// Infinite-shot assignment matrix: Gaussian mass of each mode inside each
/// nearest-centre cell of `classifier`.
pub fn expected_assignment(truth: &TriModalModel, classifier: &[IqPoint; 3]) -> Result<AssignmentMatrix> {
    let mut entries = DMatrix::zeros(3, 3);
    for i in 0..3 {
        let cov = to_matrix(&truth.mode_covariance(i));
        let mu = truth.centers()[i];
        for j in 0..3 {
            entries[(i, j)] = cell_mass(mu, &cov, classifier, j);
        }
        // quadrature error is ~1e-12; absorb it so rows are exactly stochastic
        let s: f64 = entries.row(i).sum();
        for j in 0..3 {
            entries[(i, j)] /= s;
        }
    }
    AssignmentMatrix::new(entries, Vec::new())
}

/// `P(x ∈ cell j)` for `x ~ N(mu, cov)`. The cell is the intersection of two
/// half-planes `n_k·x ≤ c_k`, so the mass is a bivariate normal orthant.
fn cell_mass(mu: IqPoint, cov: &nalgebra::Matrix2<f64>, centers: &[IqPoint; 3], j: usize) -> f64 {
    let others: Vec<usize> = (0..3).filter(|&k| k != j).collect();
    let mut h = [0.0; 2];
    let mut s = [0.0; 2];
    let mut normals = [nalgebra::Vector2::zeros(); 2];
    for (slot, &k) in others.iter().enumerate() {
        let cj = nalgebra::Vector2::new(centers[j][0], centers[j][1]);
        let ck = nalgebra::Vector2::new(centers[k][0], centers[k][1]);
        let n = ck - cj;
        let c = 0.5 * (ck.norm_squared() - cj.norm_squared());
        let m = nalgebra::Vector2::new(mu[0], mu[1]);
        let var = (n.transpose() * cov * n)[(0, 0)];
        normals[slot] = n;
        s[slot] = var.sqrt();
        h[slot] = c - n.dot(&m);
    }
    let std = Normal::standard();
    let phi = |x: f64| std.cdf(x);
    match (s[0] > 0.0, s[1] > 0.0) {
        (false, false) => (h[0] >= 0.0 && h[1] >= 0.0) as u8 as f64,
        (true, false) => phi(h[0] / s[0]) * (h[1] >= 0.0) as u8 as f64,
        (false, true) => phi(h[1] / s[1]) * (h[0] >= 0.0) as u8 as f64,
        (true, true) => {
            let rho = (normals[0].transpose() * cov * normals[1])[(0, 0)] / (s[0] * s[1]);
            bivariate_normal_cdf(h[0] / s[0], h[1] / s[1], rho)
        }
    }
}

/// `P(Z₁ ≤ a, Z₂ ≤ b)` for standard normals with correlation `rho`.
pub(crate) fn bivariate_normal_cdf(a: f64, b: f64, rho: f64) -> f64 {
    let std = Normal::standard();
    let phi = |x: f64| std.cdf(x);
    let rho = rho.clamp(-1.0, 1.0);
    if rho > 1.0 - 1e-12 {
        return phi(a.min(b));
    }
    if rho < -1.0 + 1e-12 {
        return (phi(a) - phi(-b)).max(0.0);
    }
    // Condition on Z₁: ∫_{-∞}^{a} φ(z) Φ((b − ρz)/√(1−ρ²)) dz, composite Simpson.
    let lo = -12.0_f64;
    if a <= lo {
        return 0.0;
    }
    let hi = a.min(12.0);
    let r = (1.0 - rho * rho).sqrt();
    let n = 4000;
    let dz = (hi - lo) / n as f64;
    let f = |z: f64| (-0.5 * z * z).exp() * phi((b - rho * z) / r);
    let mut acc = f(lo) + f(hi);
    for k in 1..n {
        let z = lo + k as f64 * dz;
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(z);
    }
    // mass beyond ±12σ is below f64 resolution
    let p = acc * dz / 3.0 / (2.0 * std::f64::consts::PI).sqrt();
    p.clamp(0.0, 1.0)
}

/// Kronecker product `R_A ⊗ R_B`.
pub fn joint_matrix(a: &AssignmentMatrix, b: &AssignmentMatrix) -> Result<AssignmentMatrix> {
    let counts = if a.shot_counts.is_empty() || b.shot_counts.is_empty() {
        Vec::new()
    } else {
        a.shot_counts
            .iter()
            .flat_map(|&na| b.shot_counts.iter().map(move |&nb| na.min(nb)))
            .collect()
    };
    AssignmentMatrix::new(a.entries.kronecker(&b.entries), counts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mitigated {
    /// Estimated populations; may contain negative entries.
    pub populations: Vec<f64>,
    pub condition_number: f64,
    pub has_negative: bool,
}

/// Invert `f = Rᵀp`. Negative estimates are kept and flagged, not clipped.
pub fn mitigate(frequencies: &[f64], r: &AssignmentMatrix) -> Result<Mitigated> {
    let n = r.dim();
    if frequencies.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: frequencies.len(),
        });
    }
    if frequencies.iter().any(|f| *f < 0.0) || (frequencies.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument("assigned frequencies must be a distribution".into()));
    }
    let cond = r.condition_number();
    if !cond.is_finite() || cond > MAX_CONDITION_NUMBER {
        return Err(Error::Mitigation(format!(
            "assignment matrix condition number {cond:.3e} exceeds {MAX_CONDITION_NUMBER:.0e}"
        )));
    }
    let f = nalgebra::DVector::from_column_slice(frequencies);
    let p = r
        .entries
        .transpose()
        .lu()
        .solve(&f)
        .ok_or_else(|| Error::Mitigation("assignment matrix is singular".into()))?;
    let populations: Vec<f64> = p.iter().copied().collect();
    let has_negative = populations.iter().any(|&x| x < 0.0);
    if has_negative {
        log::warn!("mitigated populations contain negative entries: {populations:?}");
    }
    Ok(Mitigated {
        populations,
        condition_number: cond,
        has_negative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bivariate_cdf_known_values() {
        // independent: product of marginals
        let std = Normal::standard();
        let v = bivariate_normal_cdf(0.3, -0.7, 0.0);
        assert!((v - std.cdf(0.3) * std.cdf(-0.7)).abs() < 1e-10);
        // orthant probability: 1/4 + asin(ρ)/(2π)
        for rho in [-0.9, -0.5, 0.2, 0.8] {
            let v = bivariate_normal_cdf(0.0, 0.0, rho);
            let exact = 0.25 + f64::asin(rho) / (2.0 * std::f64::consts::PI);
            assert!((v - exact).abs() < 1e-10, "{rho}: {v} vs {exact}");
        }
        assert!((bivariate_normal_cdf(1.0, 2.0, 1.0) - std.cdf(1.0)).abs() < 1e-15);
    }

    #[test]
    fn matrix_validation_and_json_round_trip() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 1.0]);
        assert!(AssignmentMatrix::new(bad, vec![]).is_err());
        let m = AssignmentMatrix::new(
            DMatrix::from_row_slice(3, 3, &[0.97, 0.02, 0.01, 0.03, 0.95, 0.02, 0.01, 0.04, 0.95]),
            vec![4000; 3],
        )
        .unwrap();
        let back = AssignmentMatrix::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert!((m.average_error() - (0.03 + 0.05 + 0.05) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_mitigation_is_noop() {
        let id = AssignmentMatrix::new(DMatrix::identity(3, 3), vec![]).unwrap();
        let f = [0.2, 0.5, 0.3];
        let m = mitigate(&f, &id).unwrap();
        for (a, b) in m.populations.iter().zip(f) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(!m.has_negative);
    }

    #[test]
    fn ill_conditioned_matrix_is_rejected() {
        let e = 1e-8;
        let r = AssignmentMatrix::new(DMatrix::from_row_slice(2, 2, &[0.5 + e, 0.5 - e, 0.5, 0.5]), vec![]).unwrap();
        assert!(matches!(mitigate(&[0.5, 0.5], &r), Err(Error::Mitigation(_))));
    }

    #[test]
    fn negatives_are_flagged_not_clipped() {
        let r = AssignmentMatrix::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]), vec![]).unwrap();
        let m = mitigate(&[0.95, 0.05], &r).unwrap();
        assert!(m.has_negative);
        assert!(m.populations[1] < 0.0);
        assert!((m.populations.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_matrix_of_two_separated_modes() {
        // third centre far away: g/e error is Φ(−d/2σ) each way
        let sigma = 1.0;
        let d = 3.0;
        let m = TriModalModel::isotropic([[0.0, 0.0], [d, 0.0], [0.0, 1e3]], sigma).unwrap();
        let r = expected_assignment(&m, m.centers()).unwrap();
        let p = Normal::standard().cdf(-d / (2.0 * sigma));
        assert!((r.entries[(0, 1)] - p).abs() < 1e-10);
        assert!((r.entries[(1, 0)] - p).abs() < 1e-10);
        assert!(r.entries[(2, 2)] > 1.0 - 1e-12);
    }
}
