//! Dormand–Prince 5(4) with standard step-size control.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::C64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Steps below this size (s) are treated as a collapse.
    pub min_step: f64,
    pub max_step: f64,
    pub initial_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            min_step: 1e-18,
            max_step: 5e-9,
            initial_step: 1e-11,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order minus embedded 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Reusable stage storage for one state size.
pub struct Dopri5 {
    options: IntegratorOptions,
    k: [Vec<C64>; 7],
    stage: Vec<C64>,
    next: Vec<C64>,
    h: f64,
    pub stats: IntegrationStats,
}

impl Dopri5 {
    pub fn new(n: usize, options: IntegratorOptions) -> Self {
        let zero = vec![C64::new(0.0, 0.0); n];
        Self {
            options,
            k: std::array::from_fn(|_| zero.clone()),
            stage: zero.clone(),
            next: zero,
            h: options.initial_step,
            stats: IntegrationStats::default(),
        }
    }

    /// Advance `y` from `t0` to `t1` over a span on which `f` is smooth.
    pub fn advance<F>(&mut self, f: &mut F, t0: f64, t1: f64, y: &mut Vec<C64>) -> Result<()>
    where
        F: FnMut(f64, &[C64], &mut [C64]),
    {
        if t1 <= t0 {
            return Ok(());
        }
        let opts = self.options;
        let mut t = t0;
        f(t, y, &mut self.k[0]);
        self.stats.evaluations += 1;
        loop {
            let remaining = t1 - t;
            if remaining <= 1e-12 * t1.abs().max(t0.abs()).max(1e-30) {
                return Ok(());
            }
            if self.stats.accepted + self.stats.rejected >= opts.max_steps {
                return Err(Error::Integration {
                    time: t,
                    reason: format!("exceeded {} steps", opts.max_steps),
                });
            }
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h.min(opts.max_step) };
            for s in 1..7 {
                self.stage.copy_from_slice(y);
                for (j, &a) in A[s][..s].iter().enumerate() {
                    if a != 0.0 {
                        let ha = h * a;
                        for (z, k) in self.stage.iter_mut().zip(&self.k[j]) {
                            *z += k * ha;
                        }
                    }
                }
                // The last stage sits at the 5th-order solution (FSAL).
                f(t + C[s] * h, &self.stage, &mut self.k[s]);
                self.stats.evaluations += 1;
            }
            self.next.copy_from_slice(&self.stage);

            let mut acc = 0.0;
            for i in 0..y.len() {
                let mut e = C64::new(0.0, 0.0);
                for (s, &w) in E.iter().enumerate() {
                    if w != 0.0 {
                        e += self.k[s][i] * w;
                    }
                }
                let scale = opts.atol + opts.rtol * y[i].norm().max(self.next[i].norm());
                let r = (e * h).norm() / scale;
                acc += r * r;
            }
            let err = (acc / y.len() as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Integration {
                    time: t,
                    reason: "non-finite error estimate".into(),
                });
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = if last { t1 } else { t + h };
                std::mem::swap(y, &mut self.next);
                self.k.swap(0, 6);
                self.stats.accepted += 1;
                let proposed = (h * factor).min(opts.max_step);
                // A step clipped to hit `t1` does not shrink the carried size.
                self.h = if last { self.h.max(proposed) } else { proposed };
                if last {
                    return Ok(());
                }
                if self.h < opts.min_step {
                    return Err(Error::Integration {
                        time: t,
                        reason: format!("step size collapsed to {:.3e} s", self.h),
                    });
                }
            } else {
                self.stats.rejected += 1;
                self.h = h * factor.min(1.0);
                if self.h < opts.min_step {
                    return Err(Error::Integration {
                        time: t,
                        reason: format!("step size collapsed to {:.3e} s", self.h),
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_and_oscillator() {
        let opts = IntegratorOptions {
            max_step: 1.0,
            initial_step: 1e-3,
            ..Default::default()
        };
        let mut solver = Dopri5::new(2, opts);
        // y0' = -y0 ; y1' = i·y1
        let mut f = |_t: f64, y: &[C64], dy: &mut [C64]| {
            dy[0] = -y[0];
            dy[1] = C64::new(0.0, 1.0) * y[1];
        };
        let mut y = vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
        solver.advance(&mut f, 0.0, 3.0, &mut y).unwrap();
        assert!((y[0].re - (-3f64).exp()).abs() < 1e-8);
        assert!((y[1] - C64::new(3f64.cos(), 3f64.sin())).norm() < 1e-7);
    }

    #[test]
    fn collapse_is_reported_with_time() {
        let opts = IntegratorOptions {
            max_step: 1.0,
            initial_step: 1e-3,
            min_step: 1e-6,
            ..Default::default()
        };
        let mut solver = Dopri5::new(1, opts);
        // Finite-time blow-up at t = 1.
        let mut f = |_t: f64, y: &[C64], dy: &mut [C64]| dy[0] = y[0] * y[0];
        let mut y = vec![C64::new(1.0, 0.0)];
        match solver.advance(&mut f, 0.0, 2.0, &mut y) {
            Err(Error::Integration { time, .. }) => assert!(time > 0.9 && time <= 1.0, "{time}"),
            other => panic!("expected collapse, got {other:?}"),
        }
    }

    #[test]
    fn segments_chain() {
        let opts = IntegratorOptions {
            max_step: 1.0,
            initial_step: 1e-3,
            ..Default::default()
        };
        let mut solver = Dopri5::new(1, opts);
        let mut f = |t: f64, _y: &[C64], dy: &mut [C64]| dy[0] = C64::new(t, 0.0);
        let mut y = vec![C64::new(0.0, 0.0)];
        for k in 0..10 {
            solver
                .advance(&mut f, k as f64 * 0.1, (k + 1) as f64 * 0.1, &mut y)
                .unwrap();
        }
        assert!((y[0].re - 0.5).abs() < 1e-12);
    }
}
