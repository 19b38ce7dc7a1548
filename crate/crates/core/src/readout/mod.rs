//! Single-shot qutrit readout in the integrated `(u, v)` plane: tri-modal
//! Gaussian model, nearest-centre assignment, assignment matrices and
//! inversion-based mitigation.

mod assignment;
mod fit;
mod geometry;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_text};

pub use assignment::{
    assignment_matrix, assignment_matrix_with, expected_assignment, joint_matrix, mitigate, AssignmentMatrix,
    Mitigated, MAX_CONDITION_NUMBER,
};
pub use fit::{fit_labeled, fit_trimodal, fit_unlabeled, EmOptions, EmReport, Shots};
pub use geometry::{drift_angle_for_error, solve_geometry, GeometryTargets};

/// A point in the integrated-quadrature plane.
pub type IqPoint = [f64; 2];

pub const LEVEL_LABELS: [&str; 3] = ["g", "e", "f"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    Shared([[f64; 2]; 2]),
    PerMode([[[f64; 2]; 2]; 3]),
}

fn to_matrix(c: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1])
}

fn check_psd(c: &[[f64; 2]; 2]) -> Result<()> {
    let m = to_matrix(c);
    if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-12 * (m[(0, 0)].abs() + m[(1, 1)].abs()).max(1e-300) {
        return Err(Error::Argument("covariance is not symmetric".into()));
    }
    let tr = m.trace();
    let det = m.determinant();
    // Eigenvalues of a symmetric 2×2: both ≥ 0 ⇔ trace ≥ 0 and det ≥ 0.
    if tr < 0.0 || det < -1e-12 * tr * tr {
        return Err(Error::NotPhysical("covariance is not positive semidefinite".into()));
    }
    Ok(())
}

/// Tri-modal Gaussian readout model of one qutrit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriModalModel {
    centers: [IqPoint; 3],
    covariance: Covariance,
    weights: [f64; 3],
}

impl TriModalModel {
    pub fn new(centers: [IqPoint; 3], covariance: Covariance, weights: [f64; 3]) -> Result<Self> {
        match &covariance {
            Covariance::Shared(c) => check_psd(c)?,
            Covariance::PerMode(cs) => cs.iter().try_for_each(check_psd)?,
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "mode weights {weights:?} must be probabilities summing to 1"
            )));
        }
        for i in 0..3 {
            for j in 0..i {
                if centers[i] == centers[j] {
                    return Err(Error::Argument(format!("mode centres {j} and {i} coincide")));
                }
            }
        }
        Ok(Self {
            centers,
            covariance,
            weights,
        })
    }

    /// Shared isotropic covariance `σ²·I` and equal weights.
    pub fn isotropic(centers: [IqPoint; 3], sigma: f64) -> Result<Self> {
        let s2 = sigma * sigma;
        Self::new(centers, Covariance::Shared([[s2, 0.0], [0.0, s2]]), [1.0 / 3.0; 3])
    }

    pub fn centers(&self) -> &[IqPoint; 3] {
        &self.centers
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    pub fn weights(&self) -> &[f64; 3] {
        &self.weights
    }

    pub fn mode_covariance(&self, level: usize) -> [[f64; 2]; 2] {
        match &self.covariance {
            Covariance::Shared(c) => *c,
            Covariance::PerMode(cs) => cs[level],
        }
    }

    /// Same covariance and weights, true mode centres moved.
    pub fn with_centers(&self, centers: [IqPoint; 3]) -> Result<Self> {
        Self::new(centers, self.covariance.clone(), self.weights)
    }

    /// Centres rotated by `angle` (rad) about their centroid, modelling a
    /// phase drift of the readout chain after calibration.
    pub fn rotated(&self, angle: f64) -> Result<Self> {
        let cx = self.centers.iter().map(|c| c[0]).sum::<f64>() / 3.0;
        let cy = self.centers.iter().map(|c| c[1]).sum::<f64>() / 3.0;
        let (s, c) = angle.sin_cos();
        let centers = self.centers.map(|p| {
            let (x, y) = (p[0] - cx, p[1] - cy);
            [cx + c * x - s * y, cy + s * x + c * y]
        });
        self.with_centers(centers)
    }

    /// Gaussian density of mode `level` at `p`.
    pub fn mode_density(&self, level: usize, p: IqPoint) -> f64 {
        let cov = to_matrix(&self.mode_covariance(level));
        let det = cov.determinant();
        let d = Vector2::new(p[0] - self.centers[level][0], p[1] - self.centers[level][1]);
        match cov.try_inverse() {
            Some(inv) if det > 0.0 => (-0.5 * d.dot(&(inv * d))).exp() / (2.0 * std::f64::consts::PI * det.sqrt()),
            _ => 0.0,
        }
    }
}

/// Draw `n` shots for a qutrit with level populations `populations`.
pub fn sample_shots(
    model: &TriModalModel,
    populations: &[f64; 3],
    n: usize,
    seed: u64,
) -> Result<Vec<(usize, IqPoint)>> {
    if n == 0 {
        return Err(Error::Argument("number of shots must be positive".into()));
    }
    if populations.iter().any(|&p| p < 0.0) || (populations.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "populations {populations:?} are not a distribution"
        )));
    }
    let chol: Vec<Matrix2<f64>> = (0..3)
        .map(|k| lower_cholesky(&to_matrix(&model.mode_covariance(k))))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r: f64 = rng.random();
        let level = if r < populations[0] {
            0
        } else if r < populations[0] + populations[1] {
            1
        } else {
            2
        };
        let z = Vector2::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let x = chol[level] * z;
        let c = model.centers[level];
        out.push((level, [c[0] + x[0], c[1] + x[1]]));
    }
    Ok(out)
}

/// Shots of a basis state.
pub fn sample_level(model: &TriModalModel, level: usize, n: usize, seed: u64) -> Result<Vec<IqPoint>> {
    let mut pops = [0.0; 3];
    pops[level] = 1.0;
    Ok(sample_shots(model, &pops, n, seed)?
        .into_iter()
        .map(|(_, p)| p)
        .collect())
}

/// Cholesky factor of a PSD 2×2 matrix; semidefinite inputs allowed.
pub(crate) fn lower_cholesky(m: &Matrix2<f64>) -> Matrix2<f64> {
    let a = m[(0, 0)].max(0.0);
    let l00 = a.sqrt();
    let l10 = if l00 > 0.0 { m[(1, 0)] / l00 } else { 0.0 };
    let l11 = (m[(1, 1)] - l10 * l10).max(0.0).sqrt();
    Matrix2::new(l00, 0.0, l10, l11)
}

/// Nearest mode centre in Euclidean distance; exact ties go to the lower index.
pub fn classify(model: &TriModalModel, point: IqPoint) -> usize {
    classify_with_centers(model.centers(), point)
}

pub fn classify_with_centers(centers: &[IqPoint; 3], point: IqPoint) -> usize {
    let dist2 = |c: &IqPoint| (point[0] - c[0]).powi(2) + (point[1] - c[1]).powi(2);
    let mut best = 0;
    for k in 1..3 {
        if dist2(&centers[k]) < dist2(&centers[best]) {
            best = k;
        }
    }
    best
}

/// CSV dump with columns `u,v,prepared,assigned`.
pub fn shots_to_csv(shots: &[(usize, IqPoint)], classifier: &TriModalModel) -> String {
    let mut out = String::from("u,v,prepared,assigned\n");
    for (prepared, p) in shots {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(p[0]),
            fmt_f64(p[1]),
            LEVEL_LABELS[*prepared],
            LEVEL_LABELS[classify(classifier, *p)]
        );
    }
    out
}

pub fn write_shots_csv(path: impl AsRef<Path>, shots: &[(usize, IqPoint)], classifier: &TriModalModel) -> Result<()> {
    write_text(path, &shots_to_csv(shots, classifier))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> [IqPoint; 3] {
        [[0.0, 0.0], [4.0, 0.0], [2.0, 3.0]]
    }

    #[test]
    fn model_validation() {
        assert!(TriModalModel::isotropic(triangle(), 1.0).is_ok());
        assert!(TriModalModel::isotropic([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]], 1.0).is_err());
        let bad = Covariance::Shared([[1.0, 2.0], [2.0, 1.0]]);
        assert!(TriModalModel::new(triangle(), bad, [1.0 / 3.0; 3]).is_err());
        let ok = Covariance::Shared([[1.0, 0.0], [0.0, 1.0]]);
        assert!(TriModalModel::new(triangle(), ok, [0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn degenerate_covariance_samples_at_centres() {
        let m = TriModalModel::isotropic(triangle(), 0.0).unwrap();
        for p in sample_level(&m, 2, 50, 3).unwrap() {
            assert_eq!(p, [2.0, 3.0]);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let m = TriModalModel::isotropic(triangle(), 0.7).unwrap();
        let a = sample_shots(&m, &[0.2, 0.3, 0.5], 100, 11).unwrap();
        let b = sample_shots(&m, &[0.2, 0.3, 0.5], 100, 11).unwrap();
        let c = sample_shots(&m, &[0.2, 0.3, 0.5], 100, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(sample_shots(&m, &[1.0, 0.0, 0.0], 0, 1).is_err());
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let sigma = 0.8;
        let m = TriModalModel::isotropic(triangle(), sigma).unwrap();
        let n = 4000;
        for level in 0..3 {
            let pts = sample_level(&m, level, n, 100 + level as u64).unwrap();
            for axis in 0..2 {
                let mean = pts.iter().map(|p| p[axis]).sum::<f64>() / n as f64;
                let bound = 4.0 * sigma / (n as f64).sqrt();
                assert!((mean - m.centers()[level][axis]).abs() < bound);
            }
        }
    }

    #[test]
    fn classification_rules() {
        let m = TriModalModel::isotropic(triangle(), 1.0).unwrap();
        for (k, c) in m.centers().iter().enumerate() {
            assert_eq!(classify(&m, *c), k);
        }
        // midpoint of g and e: tie → g
        assert_eq!(classify(&m, [2.0, 0.0]), 0);
        // midpoint of e and f: tie → e
        assert_eq!(classify(&m, [3.0, 1.5]), 1);
    }

    #[test]
    fn boundary_is_perpendicular_bisector() {
        let centers = [[0.0, 0.0], [4.0, 0.0], [50.0, 50.0]];
        for i in 0..=40 {
            for j in 0..=40 {
                let p = [-2.0 + 0.2 * i as f64, -4.0 + 0.2 * j as f64];
                let expect = if p[0] <= 2.0 { 0 } else { 1 };
                assert_eq!(classify_with_centers(&centers, p), expect, "{p:?}");
            }
        }
    }

    #[test]
    fn rotation_about_centroid_keeps_shape() {
        let m = TriModalModel::isotropic(triangle(), 1.0).unwrap();
        let r = m.rotated(0.3).unwrap();
        let d =
            |c: &[IqPoint; 3], i: usize, j: usize| ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt();
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            assert!((d(m.centers(), i, j) - d(r.centers(), i, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_dump_has_labels() {
        let m = TriModalModel::isotropic(triangle(), 0.1).unwrap();
        let shots = sample_shots(&m, &[0.0, 1.0, 0.0], 3, 1).unwrap();
        let csv = shots_to_csv(&shots, &m);
        assert!(csv.starts_with("u,v,prepared,assigned\n"));
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",e,e")));
    }
}
