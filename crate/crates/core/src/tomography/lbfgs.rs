//! Limited-memory BFGS ascent with a monotone backtracking line search.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct AscentOptions {
    /// Stop once the relative objective gain stays below this for
    /// `patience` consecutive iterations.
    pub rel_tolerance: f64,
    pub patience: usize,
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    pub memory: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            rel_tolerance: 1e-10,
            patience: 3,
            gradient_tolerance: 1e-12,
            max_iterations: 10_000,
            memory: 12,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Objective after every accepted step, starting with the initial point.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximise `f`; `f(x, grad)` returns the objective and writes its gradient.
/// Non-finite objective values are treated as infeasible and backtracked.
pub(crate) fn maximize(
    mut f: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: Vec<f64>,
    opts: &AscentOptions,
) -> Result<AscentResult> {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut value = f(&x, &mut g);
    if !value.is_finite() {
        return Err(Error::Estimation(
            "objective is not finite at the starting point".into(),
        ));
    }
    let mut history = vec![value];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut quiet = 0;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    for iteration in 0..opts.max_iterations {
        let gnorm = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gnorm <= opts.gradient_tolerance {
            return Ok(AscentResult {
                x,
                value,
                iterations: iteration,
                history,
            });
        }
        // two-loop recursion on the ascent direction
        let mut d = g.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = memory.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let scale = 1.0 / gnorm.max(1e-300);
            d.iter_mut().for_each(|v| *v *= scale.min(1.0));
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope > 0.0) {
            memory.clear();
            d = g.iter().map(|v| v / gnorm).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let v = f(&x_new, &mut g_new);
            if v.is_finite() && v >= value + 1e-4 * step * slope {
                accepted = Some(v);
                break;
            }
            step *= 0.5;
        }
        let Some(v_new) = accepted else {
            if memory.is_empty() {
                // no ascent possible along the gradient: numerically stationary
                return Ok(AscentResult {
                    x,
                    value,
                    iterations: iteration,
                    history,
                });
            }
            memory.clear();
            continue;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        // curvature pair for the minimisation of −f
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let gain = v_new - value;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        value = v_new;
        history.push(value);
        if gain <= opts.rel_tolerance * value.abs().max(1e-300) {
            quiet += 1;
            if quiet >= opts.patience {
                return Ok(AscentResult {
                    x,
                    value,
                    iterations: iteration + 1,
                    history,
                });
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::Estimation(format!(
        "no convergence in {} iterations (objective {value:.12e}, last gains {:?})",
        opts.max_iterations,
        history
            .windows(2)
            .rev()
            .take(3)
            .map(|w| w[1] - w[0])
            .collect::<Vec<_>>()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximises_a_concave_quadratic() {
        let c = [1.0, -2.0, 0.5];
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..3 {
                let w = (i + 1) as f64;
                v -= w * (x[i] - c[i]).powi(2);
                g[i] = -2.0 * w * (x[i] - c[i]);
            }
            v
        };
        let r = maximize(f, vec![0.0; 3], &AscentOptions::default()).unwrap();
        for i in 0..3 {
            assert!((r.x[i] - c[i]).abs() < 1e-6);
        }
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn rosenbrock_converges() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -(-2.0 * (1.0 - a) - 400.0 * a * (b - a * a));
            g[1] = -(200.0 * (b - a * a));
            -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
        };
        let opts = AscentOptions {
            rel_tolerance: 0.0,
            gradient_tolerance: 1e-10,
            ..Default::default()
        };
        let r = maximize(f, vec![-1.2, 1.0], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }
}
