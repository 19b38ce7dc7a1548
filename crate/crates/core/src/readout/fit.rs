use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Covariance, IqPoint, TriModalModel};

pub const MIN_LABELED_PER_MODE: usize = 10;
pub const MIN_UNLABELED: usize = 100;

/// Calibration shots; `labels[i]` is the prepared level of `points[i]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Shots {
    pub points: Vec<IqPoint>,
    pub labels: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Stop when the log-likelihood gain falls below `tolerance·|ℓ|`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmReport {
    pub model: TriModalModel,
    /// Log-likelihood after each iteration, starting with the initial model.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn vec2(p: IqPoint) -> Vector2<f64> {
    Vector2::new(p[0], p[1])
}

fn to_array(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    // symmetrise against round-off so validation sees an exact symmetric matrix
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    [[m[(0, 0)], off], [off, m[(1, 1)]]]
}

fn check_nondegenerate(cov: &Matrix2<f64>) -> Result<()> {
    let tr = cov.trace();
    if !(tr > 0.0) || cov.determinant() <= 1e-12 * tr * tr {
        return Err(Error::Fit("shot cloud is degenerate (covariance is singular)".into()));
    }
    Ok(())
}

/// Labelled fit: per-level sample means, pooled covariance, label fractions.
pub fn fit_labeled(points: &[IqPoint], labels: &[usize]) -> Result<TriModalModel> {
    if points.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            found: labels.len(),
        });
    }
    if labels.iter().any(|&l| l > 2) {
        return Err(Error::Argument("labels must be 0, 1 or 2".into()));
    }
    let mut sums = [Vector2::zeros(); 3];
    let mut counts = [0usize; 3];
    for (p, &l) in points.iter().zip(labels) {
        sums[l] += vec2(*p);
        counts[l] += 1;
    }
    if counts.iter().any(|&c| c < MIN_LABELED_PER_MODE) {
        return Err(Error::Fit(format!(
            "every level needs at least {MIN_LABELED_PER_MODE} shots; counts are {counts:?}"
        )));
    }
    let means: [Vector2<f64>; 3] = std::array::from_fn(|k| sums[k] / counts[k] as f64);
    let mut cov = Matrix2::zeros();
    for (p, &l) in points.iter().zip(labels) {
        let d = vec2(*p) - means[l];
        cov += d * d.transpose();
    }
    let n = points.len();
    cov /= (n - 3) as f64;
    check_nondegenerate(&cov)?;
    let weights = counts.map(|c| c as f64 / n as f64);
    TriModalModel::new(means.map(|m| [m[0], m[1]]), Covariance::Shared(to_array(&cov)), weights)
        .map_err(|e| Error::Fit(e.to_string()))
}

fn log_gaussian(d: &Vector2<f64>, inv: &Matrix2<f64>, log_norm: f64) -> f64 {
    log_norm - 0.5 * d.dot(&(inv * d))
}

fn log_likelihood_and_resp(
    points: &[IqPoint],
    means: &[Vector2<f64>; 3],
    cov: &Matrix2<f64>,
    weights: &[f64; 3],
    resp: &mut [[f64; 3]],
) -> Result<f64> {
    let inv = cov
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular covariance during EM".into()))?;
    let log_norm = -(2.0 * std::f64::consts::PI).ln() - 0.5 * cov.determinant().ln();
    let mut ll = 0.0;
    for (p, r) in points.iter().zip(resp.iter_mut()) {
        let x = vec2(*p);
        let lp: [f64; 3] = std::array::from_fn(|k| weights[k].ln() + log_gaussian(&(x - means[k]), &inv, log_norm));
        let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = lp.iter().map(|v| (v - m).exp()).sum();
        let lse = m + s.ln();
        for k in 0..3 {
            r[k] = (lp[k] - lse).exp();
        }
        ll += lse;
    }
    Ok(ll)
}

/// Unlabelled fit by expectation–maximisation with a shared covariance,
/// started from `init`. Mode order follows `init`.
pub fn fit_unlabeled(points: &[IqPoint], init: &TriModalModel, options: &EmOptions) -> Result<EmReport> {
    if points.len() < MIN_UNLABELED {
        return Err(Error::Fit(format!(
            "an unlabelled fit needs at least {MIN_UNLABELED} shots"
        )));
    }
    let mut means: [Vector2<f64>; 3] = init.centers().map(vec2);
    let mut cov = (0..3)
        .map(|k| Matrix2::from_fn(|i, j| init.mode_covariance(k)[i][j]) * init.weights()[k])
        .fold(Matrix2::zeros(), |a, b| a + b);
    let mut weights = *init.weights();
    check_nondegenerate(&cov)?;
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::Fit("initial weights must be positive".into()));
    }
    let n = points.len() as f64;
    let mut resp = vec![[0.0; 3]; points.len()];
    let mut history = vec![log_likelihood_and_resp(points, &means, &cov, &weights, &mut resp)?];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let mut nk = [0.0; 3];
        let mut sums = [Vector2::zeros(); 3];
        for (p, r) in points.iter().zip(&resp) {
            for k in 0..3 {
                nk[k] += r[k];
                sums[k] += vec2(*p) * r[k];
            }
        }
        if nk.iter().any(|&c| c < 1e-9 * n) {
            return Err(Error::Fit("a mode lost all its shots during EM".into()));
        }
        means = std::array::from_fn(|k| sums[k] / nk[k]);
        weights = nk.map(|c| c / n);
        let mut c = Matrix2::zeros();
        for (p, r) in points.iter().zip(&resp) {
            for k in 0..3 {
                let d = vec2(*p) - means[k];
                c += d * d.transpose() * r[k];
            }
        }
        cov = c / n;
        check_nondegenerate(&cov)?;
        let ll = log_likelihood_and_resp(points, &means, &cov, &weights, &mut resp)?;
        let prev = *history.last().expect("non-empty");
        history.push(ll);
        if (ll - prev).abs() <= options.tolerance * ll.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let model = TriModalModel::new(means.map(|m| [m[0], m[1]]), Covariance::Shared(to_array(&cov)), weights)
        .map_err(|e| Error::Fit(e.to_string()))?;
    Ok(EmReport {
        model,
        log_likelihood: history,
        iterations,
        converged,
    })
}

/// Labelled shots use the closed form; unlabelled shots use EM from a
/// farthest-point initialisation (mode order then follows that seeding).
pub fn fit_trimodal(shots: &Shots) -> Result<TriModalModel> {
    if let Some(labels) = &shots.labels {
        return fit_labeled(&shots.points, labels);
    }
    let pts = &shots.points;
    if pts.len() < MIN_UNLABELED {
        return Err(Error::Fit(format!(
            "an unlabelled fit needs at least {MIN_UNLABELED} shots"
        )));
    }
    let n = pts.len() as f64;
    let mean = pts.iter().fold(Vector2::zeros(), |a, p| a + vec2(*p)) / n;
    let far = |from: &[Vector2<f64>]| {
        pts.iter()
            .map(|p| vec2(*p))
            .max_by(|a, b| {
                let da = from
                    .iter()
                    .map(|c| (a - c).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                let db = from
                    .iter()
                    .map(|c| (b - c).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                da.total_cmp(&db)
            })
            .expect("non-empty")
    };
    let c0 = far(&[mean]);
    let c1 = far(&[c0]);
    let c2 = far(&[c0, c1]);
    let mut cov = Matrix2::zeros();
    for p in pts {
        let d = vec2(*p) - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    check_nondegenerate(&cov)?;
    // start from a tight covariance so the seed centres are distinguishable
    let init_cov = cov * 0.1;
    let init = TriModalModel::new(
        [c0, c1, c2].map(|m| [m[0], m[1]]),
        Covariance::Shared(to_array(&init_cov)),
        [1.0 / 3.0; 3],
    )
    .map_err(|e| Error::Fit(e.to_string()))?;
    Ok(fit_unlabeled(pts, &init, &EmOptions::default())?.model)
}
