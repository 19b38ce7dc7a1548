use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

use super::{expected_assignment, TriModalModel};

/// Target misassignment `1 − R[i][i]` for g, e and f.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryTargets {
    pub state_errors: [f64; 3],
}

impl GeometryTargets {
    /// Equal error for every level (equilateral centres).
    pub fn uniform(average_error: f64) -> Self {
        Self {
            state_errors: [average_error; 3],
        }
    }

    /// Fixed ground-state error, the remainder of `3·average` split evenly
    /// between e and f.
    pub fn from_average(ground_error: f64, average_error: f64) -> Result<Self> {
        let rest = 3.0 * average_error - ground_error;
        if !(ground_error > 0.0) || rest <= 0.0 {
            return Err(Error::Argument(format!(
                "cannot split average error {average_error} with ground error {ground_error}"
            )));
        }
        Ok(Self {
            state_errors: [ground_error, 0.5 * rest, 0.5 * rest],
        })
    }

    pub fn average(&self) -> f64 {
        self.state_errors.iter().sum::<f64>() / 3.0
    }
}

/// Centres `g = 0`, `e` on the +u axis, `f` above it, from the three
/// pairwise distances `(d_ge, d_ef, d_gf)`.
fn place(d: &Vector3<f64>) -> Option<[[f64; 2]; 3]> {
    let (ge, ef, gf) = (d[0], d[1], d[2]);
    if ge <= 0.0 || ef <= 0.0 || gf <= 0.0 {
        return None;
    }
    let x = (ge * ge + gf * gf - ef * ef) / (2.0 * ge);
    let y2 = gf * gf - x * x;
    if y2 <= 0.0 {
        return None;
    }
    Some([[0.0, 0.0], [ge, 0.0], [x, y2.sqrt()]])
}

fn state_errors(d: &Vector3<f64>, sigma: f64) -> Option<Vector3<f64>> {
    let model = TriModalModel::isotropic(place(d)?, sigma).ok()?;
    let r = expected_assignment(&model, model.centers()).ok()?;
    Some(Vector3::from_iterator(r.state_errors()))
}

/// Isotropic equal-weight model with standard deviation `sigma` whose exact
/// nearest-centre error for each level matches `targets` (Newton iteration on
/// the three centre separations).
pub fn solve_geometry(targets: &GeometryTargets, sigma: f64) -> Result<TriModalModel> {
    if !(sigma > 0.0) {
        return Err(Error::Argument("sigma must be positive".into()));
    }
    let [eg, ee, ef] = targets.state_errors;
    // pairwise crossing probabilities if the three boundaries never interact
    let pair = [0.5 * (eg + ee - ef), 0.5 * (ee + ef - eg), 0.5 * (eg + ef - ee)];
    if pair.iter().any(|&p| !(p > 0.0 && p < 0.5)) {
        return Err(Error::Argument(format!(
            "state errors {:?} are not realisable by three Gaussian modes",
            targets.state_errors
        )));
    }
    let std = Normal::standard();
    let mut d = Vector3::from_iterator(pair.iter().map(|&p| -2.0 * sigma * std.inverse_cdf(p)));
    let target = Vector3::from(targets.state_errors);
    let unreachable = || Error::Fit("geometry solver left the space of triangles".into());
    for _ in 0..60 {
        let e = state_errors(&d, sigma).ok_or_else(unreachable)?;
        let resid = e - target;
        if resid.amax() < 1e-12 {
            return TriModalModel::isotropic(place(&d).ok_or_else(unreachable)?, sigma);
        }
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let h = 1e-6 * d[k];
            let mut dp = d;
            dp[k] += h;
            let ep = state_errors(&dp, sigma).ok_or_else(unreachable)?;
            jac.set_column(k, &((ep - e) / h));
        }
        let step = jac
            .lu()
            .solve(&resid)
            .ok_or_else(|| Error::Fit("singular geometry Jacobian".into()))?;
        // damp so separations stay positive
        let mut scale = 1.0;
        while (0..3).any(|k| d[k] - scale * step[k] <= 0.5 * d[k]) {
            scale *= 0.5;
        }
        d -= step * scale;
    }
    Err(Error::Fit("geometry solver did not converge".into()))
}

/// Rotation (rad) of the true centres about their centroid that raises the
/// average error of a classifier calibrated on `model` to `target`.
pub fn drift_angle_for_error(model: &TriModalModel, target: f64) -> Result<f64> {
    let calibrated = *model.centers();
    let err =
        |theta: f64| -> Result<f64> { Ok(expected_assignment(&model.rotated(theta)?, &calibrated)?.average_error()) };
    let e0 = err(0.0)?;
    if target < e0 {
        return Err(Error::Argument(format!(
            "target error {target} is below the calibrated error {e0}"
        )));
    }
    let mut hi = 1e-3;
    while err(hi)? < target {
        hi *= 2.0;
        if hi > std::f64::consts::FRAC_PI_3 {
            return Err(Error::Argument(format!(
                "target error {target} is not reachable by rotation"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if err(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solver_hits_targets() {
        let t = GeometryTargets::from_average(0.013, 0.034).unwrap();
        let m = solve_geometry(&t, 1.0).unwrap();
        let r = expected_assignment(&m, m.centers()).unwrap();
        for (a, b) in r.state_errors().iter().zip(t.state_errors) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((r.average_error() - 0.034).abs() < 1e-10);
    }

    #[test]
    fn unrealisable_targets_are_rejected() {
        assert!(GeometryTargets::from_average(0.2, 0.05).is_err());
        let t = GeometryTargets {
            state_errors: [0.01, 0.01, 0.2],
        };
        assert!(solve_geometry(&t, 1.0).is_err());
    }

    #[test]
    fn drift_angle_is_monotone_in_target() {
        let t = GeometryTargets::from_average(0.006, 0.029).unwrap();
        let m = solve_geometry(&t, 1.0).unwrap();
        let a = drift_angle_for_error(&m, 0.04).unwrap();
        let b = drift_angle_for_error(&m, 0.05).unwrap();
        assert!(0.0 < a && a < b);
        let r = expected_assignment(&m.rotated(b).unwrap(), m.centers()).unwrap();
        assert!((r.average_error() - 0.05).abs() < 1e-9);
    }
}
