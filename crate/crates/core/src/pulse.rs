//! Photon envelope, |f0⟩↔|g1⟩ drive waveforms and amplitude calibration.
//!
//! Times are in seconds and rates in rad/s. The photon envelope is
//! `φ(t) = √(Γ/4)·sech(Γ(t−t₀)/2)`, normalized to unit power.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_csv_rows, write_text};

/// Half-width of the drive window in units of `1/Γ`.
pub const TRUNCATION_HALF_WIDTH: f64 = 4.6;

/// Ramp duration used by the transfer experiments.
pub const DEFAULT_RAMP: f64 = 6e-9;

/// Default waveform sample spacing.
pub const DEFAULT_SAMPLE_DT: f64 = 0.5e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonShape {
    gamma: f64,
    center_time: f64,
}

impl PhotonShape {
    pub fn new(gamma: f64, center_time: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("photon bandwidth must be positive, got {gamma}")));
        }
        Ok(Self { gamma, center_time })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn center_time(&self) -> f64 {
        self.center_time
    }
}

/// Target field envelope in s^(-1/2).
pub fn target_envelope(shape: &PhotonShape, t: f64) -> f64 {
    let x = shape.gamma * (t - shape.center_time) / 2.0;
    (shape.gamma / 4.0).sqrt() * sech(x)
}

/// Photon power contained in `center ± half_width`, analytically.
pub fn power_fraction_within(shape: &PhotonShape, half_width: f64) -> f64 {
    (shape.gamma * half_width / 2.0).tanh()
}

fn sech(x: f64) -> f64 {
    let a = x.abs();
    if a > 700.0 {
        return 0.0;
    }
    2.0 * (-a).exp() / (1.0 + (-2.0 * a).exp())
}

fn check_rates(gamma: f64, kappa: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("photon bandwidth must be positive, got {gamma}")));
    }
    if gamma > kappa {
        return Err(Error::Domain(format!(
            "photon bandwidth {gamma:.4e} rad/s exceeds resonator bandwidth {kappa:.4e} rad/s"
        )));
    }
    Ok(())
}

/// Closed-form drive rate `g̃(t)` for a sech photon centred at `t = 0` from a
/// resonator of energy decay rate `kappa`.
///
/// Agrees with [`exact_emission_drive`] at `κ = Γ`. For `κ > Γ` the photon it
/// emits is delayed (by ≈16 ns at κ/Γ = 1.38, Γ/2π = 6.25 MHz) and no longer
/// exactly sech-shaped.
pub fn emission_drive(gamma: f64, kappa: f64, t: f64) -> Result<f64> {
    check_rates(gamma, kappa)?;
    Ok(emission_drive_unchecked(gamma, kappa, t))
}

fn emission_drive_unchecked(gamma: f64, kappa: f64, t: f64) -> f64 {
    let r = kappa / gamma - 1.0;
    let x = gamma * t / 2.0;
    if x <= 0.0 {
        let e = (2.0 * x).exp();
        let num = 1.0 + 0.5 * r * e;
        let den = (1.0 + r * (e + 1.0)).sqrt();
        gamma / 2.0 * sech(x) * num / den
    } else {
        // rewritten in u = e^{-Γt} so that large positive t cannot overflow
        let u = (-2.0 * x).exp();
        gamma * (u + 0.5 * r) / ((1.0 + u) * (u * (1.0 + r) + r).sqrt())
    }
}

/// Drive rate obtained by inverting the emitter's no-jump equations of motion
/// for `φ(t) = √(Γ/4)·sech(Γt/2)`; exact for every `κ ≥ Γ`.
pub fn exact_emission_drive(gamma: f64, kappa: f64, t: f64) -> Result<f64> {
    check_rates(gamma, kappa)?;
    Ok(exact_emission_drive_unchecked(gamma, kappa, t))
}

fn exact_emission_drive_unchecked(gamma: f64, kappa: f64, t: f64) -> f64 {
    let r = kappa / gamma - 1.0;
    let x = gamma * t / 2.0;
    if x <= 0.0 {
        let e = (2.0 * x).exp();
        let num = 1.0 + 0.5 * r * (e + 1.0);
        let den = (1.0 + r * (e + 1.0)).sqrt();
        gamma / 2.0 * sech(x) * num / den
    } else {
        let u = (-2.0 * x).exp();
        gamma * (u * (1.0 + 0.5 * r) + 0.5 * r) / ((1.0 + u) * (u * (1.0 + r) + r).sqrt())
    }
}

/// Which waveform family a schedule follows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveFormula {
    /// [`emission_drive`].
    #[default]
    ClosedForm,
    /// [`exact_emission_drive`].
    Exact,
}

/// Time-reversed emission drive, used by the absorbing node.
pub fn absorption_drive(gamma: f64, kappa: f64, t: f64) -> Result<f64> {
    emission_drive(gamma, kappa, -t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseRole {
    Emission,
    Absorption,
}

/// Truncated, ramped drive waveform together with its sampled form.
///
/// The waveform is defined relative to `center`: the active window is
/// `center ± 4.6/Γ`, extended by linear ramps of length `ramp` on both sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub role: PulseRole,
    pub gamma: f64,
    pub kappa: f64,
    pub half_window: f64,
    pub ramp: f64,
    pub center: f64,
    /// Absolute time after which the drive is forced to zero.
    pub cutoff: Option<f64>,
    /// Drive amplitude multiplier; 0 switches the pulse off.
    pub scale: f64,
    #[serde(default)]
    pub formula: DriveFormula,
    sample_dt: f64,
}

impl PulseSchedule {
    pub fn window_start(&self) -> f64 {
        self.center - self.half_window
    }

    pub fn window_end(&self) -> f64 {
        self.center + self.half_window
    }

    /// First instant with a possibly non-zero drive.
    pub fn active_start(&self) -> f64 {
        self.window_start() - self.ramp
    }

    pub fn active_end(&self) -> f64 {
        let end = self.window_end() + self.ramp;
        match self.cutoff {
            Some(c) => end.min(c.max(self.active_start())),
            None => end,
        }
    }

    /// Duration of the full (uncut) pulse: `2·4.6/Γ + 2·ramp`.
    pub fn duration(&self) -> f64 {
        2.0 * self.half_window + 2.0 * self.ramp
    }

    pub fn sample_dt(&self) -> f64 {
        self.sample_dt
    }

    fn raw(&self, local: f64) -> f64 {
        let t = match self.role {
            PulseRole::Emission => local,
            PulseRole::Absorption => -local,
        };
        match self.formula {
            DriveFormula::ClosedForm => emission_drive_unchecked(self.gamma, self.kappa, t),
            DriveFormula::Exact => exact_emission_drive_unchecked(self.gamma, self.kappa, t),
        }
    }

    pub fn with_formula(mut self, formula: DriveFormula) -> Self {
        self.formula = formula;
        self
    }

    /// Drive rate at absolute time `t` (rad/s).
    pub fn rate_at(&self, t: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        if let Some(c) = self.cutoff {
            if t > c {
                return 0.0;
            }
        }
        let local = t - self.center;
        let hw = self.half_window;
        let value = if local.abs() <= hw {
            self.raw(local)
        } else if self.ramp > 0.0 && local < -hw && local >= -hw - self.ramp {
            self.raw(-hw) * (local + hw + self.ramp) / self.ramp
        } else if self.ramp > 0.0 && local > hw && local <= hw + self.ramp {
            self.raw(hw) * (hw + self.ramp - local) / self.ramp
        } else {
            0.0
        };
        self.scale * value
    }

    /// Times where the waveform has a kink or a jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![
            self.active_start(),
            self.window_start(),
            self.window_end(),
            self.window_end() + self.ramp,
        ];
        if let Some(c) = self.cutoff {
            out.push(c);
        }
        out
    }

    /// Uniform sample grid symmetric about the centre, covering the active span.
    pub fn samples(&self) -> Vec<(f64, f64)> {
        let half = self.half_window + self.ramp;
        let n = (half / self.sample_dt - 1e-9).ceil() as i64;
        (-n..=n)
            .map(|k| {
                let t = self.center + k as f64 * self.sample_dt;
                (t, self.rate_at(t))
            })
            .collect()
    }

    pub fn shifted(mut self, dt: f64) -> Self {
        self.center += dt;
        if let Some(c) = self.cutoff.as_mut() {
            *c += dt;
        }
        self
    }

    /// Truncate the pulse `tau` after its first active instant.
    pub fn truncated_after(mut self, tau: f64) -> Self {
        self.cutoff = Some(self.active_start() + tau);
        self
    }

    pub fn switched_off(mut self) -> Self {
        self.scale = 0.0;
        self
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ns,drive_rate_mhz\n");
        for (t, g) in self.samples() {
            let _ = writeln!(out, "{},{}", fmt_f64(t * 1e9), fmt_f64(g / (2.0 * PI * 1e6)));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.to_csv())
    }
}

/// Build a drive schedule centred at `t = 0`.
///
/// `half_window` defaults to `4.6/Γ` through [`build_schedule`].
pub fn build_schedule_with_window(
    gamma: f64,
    kappa: f64,
    role: PulseRole,
    sample_dt: f64,
    ramp: f64,
    half_window: f64,
) -> Result<PulseSchedule> {
    check_rates(gamma, kappa)?;
    if !(sample_dt > 0.0) {
        return Err(Error::Argument(format!(
            "sample spacing must be positive, got {sample_dt}"
        )));
    }
    if ramp < 0.0 || !(half_window > 0.0) {
        return Err(Error::Argument("ramp must be ≥ 0 and the window positive".into()));
    }
    Ok(PulseSchedule {
        role,
        gamma,
        kappa,
        half_window,
        ramp,
        center: 0.0,
        cutoff: None,
        scale: 1.0,
        formula: DriveFormula::default(),
        sample_dt,
    })
}

pub fn build_schedule(gamma: f64, kappa: f64, role: PulseRole, sample_dt: f64, ramp: f64) -> Result<PulseSchedule> {
    build_schedule_with_window(gamma, kappa, role, sample_dt, ramp, TRUNCATION_HALF_WIDTH / gamma)
}

/// One calibration measurement: amplitude, drive rate and Stark shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub amplitude: f64,
    pub drive_rate: f64,
    pub stark_shift: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CalibrationDegrees {
    pub drive: usize,
    pub stark: usize,
}

impl Default for CalibrationDegrees {
    fn default() -> Self {
        Self { drive: 3, stark: 2 }
    }
}

/// Polynomial maps from drive amplitude to `g̃` and to the Stark shift.
///
/// Coefficients are in ascending powers. The drive polynomial has no
/// constant term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub drive_rate_poly: Vec<f64>,
    pub stark_shift_poly: Vec<f64>,
    pub drive_residual: f64,
    pub stark_residual: f64,
    pub amplitude_range: (f64, f64),
}

impl CalibrationModel {
    pub fn drive_rate(&self, amplitude: f64) -> f64 {
        polyval(&self.drive_rate_poly, amplitude)
    }

    pub fn stark_shift(&self, amplitude: f64) -> f64 {
        polyval(&self.stark_shift_poly, amplitude)
    }

    /// RMS of the drive-rate fit; the headline fit residual.
    pub fn fit_residual(&self) -> f64 {
        self.drive_residual
    }
}

pub fn polyval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn least_squares(xs: &[f64], ys: &[f64], powers: &[usize]) -> Result<(Vec<f64>, f64)> {
    let n = xs.len();
    let design = DMatrix::from_fn(n, powers.len(), |i, j| xs[i].powi(powers[j] as i32));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-12) {
        return Err(Error::Fit("rank-deficient design matrix".into()));
    }
    let sol = svd
        .solve(&DVector::from_column_slice(ys), 0.0)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let resid = &design * &sol - DVector::from_column_slice(ys);
    let rms = (resid.norm_squared() / n as f64).sqrt();
    Ok((sol.iter().cloned().collect(), rms))
}

pub fn fit_calibration(points: &[CalibrationPoint], degrees: CalibrationDegrees) -> Result<CalibrationModel> {
    let need = degrees.drive.max(degrees.stark) + 1;
    if points.len() < need || degrees.drive == 0 {
        return Err(Error::Fit(format!(
            "need at least {need} points for the requested degrees, got {}",
            points.len()
        )));
    }
    let mut amps: Vec<f64> = points.iter().map(|p| p.amplitude).collect();
    amps.sort_by(f64::total_cmp);
    if amps.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Fit("calibration amplitudes must be distinct".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.amplitude).collect();
    let g: Vec<f64> = points.iter().map(|p| p.drive_rate).collect();
    let d: Vec<f64> = points.iter().map(|p| p.stark_shift).collect();

    let drive_powers: Vec<usize> = (1..=degrees.drive).collect();
    let (gc, g_rms) = least_squares(&xs, &g, &drive_powers)?;
    let mut drive_rate_poly = vec![0.0];
    drive_rate_poly.extend(gc);

    let stark_powers: Vec<usize> = (0..=degrees.stark).collect();
    let (stark_shift_poly, d_rms) = least_squares(&xs, &d, &stark_powers)?;

    Ok(CalibrationModel {
        drive_rate_poly,
        stark_shift_poly,
        drive_residual: g_rms,
        stark_residual: d_rms,
        amplitude_range: (amps[0], *amps.last().unwrap()),
    })
}

/// Amplitude producing `target` drive rate, and the Stark shift there.
///
/// Searches the monotone branch of the fitted polynomial that starts at zero
/// amplitude and stays inside the fitted amplitude range.
pub fn amplitude_for_drive(model: &CalibrationModel, target: f64) -> Result<(f64, f64)> {
    let top = model.amplitude_range.1;
    if !(top > 0.0) {
        return Err(Error::Domain("calibration has no positive amplitudes".into()));
    }
    // walk from zero amplitude until the polynomial turns over
    let steps = 4000;
    let increasing = model.drive_rate(top / steps as f64) >= 0.0;
    let mut branch_end = 0.0;
    let mut last = model.drive_rate(0.0);
    for k in 1..=steps {
        let a = top * k as f64 / steps as f64;
        let v = model.drive_rate(a);
        if (v > last) != increasing && v != last {
            break;
        }
        branch_end = a;
        last = v;
    }
    let ends = (model.drive_rate(0.0), model.drive_rate(branch_end));
    let (gmin, gmax) = if increasing { ends } else { (ends.1, ends.0) };
    let slack = 1e-12 * gmin.abs().max(gmax.abs());
    if target < gmin - slack || target > gmax + slack {
        return Err(Error::Domain(format!(
            "drive rate {target:.4e} outside fitted range [{gmin:.4e}, {gmax:.4e}]"
        )));
    }
    let (mut a, mut b) = (0.0_f64, branch_end);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        if (model.drive_rate(mid) < target) == increasing {
            a = mid;
        } else {
            b = mid;
        }
    }
    let amp = 0.5 * (a + b);
    Ok((amp, model.stark_shift(amp)))
}

/// Read `A,g_MHz,delta_MHz` rows; the rate columns are `rate/2π` in MHz.
pub fn read_calibration_csv(path: impl AsRef<Path>) -> Result<Vec<CalibrationPoint>> {
    let rows = read_csv_rows(path, 3)?;
    Ok(rows
        .into_iter()
        .map(|r| CalibrationPoint {
            amplitude: r[0],
            drive_rate: r[1] * 2.0 * PI * 1e6,
            stark_shift: r[2] * 2.0 * PI * 1e6,
        })
        .collect())
}
