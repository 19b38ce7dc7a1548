//! Resonance fitting and rectangular-waveguide attenuation.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_csv_rows, write_text};
use crate::quantum::C64;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// `20 / ln 10`.
pub const DB_PER_NEPER: f64 = 8.685_889_638;
pub const WR90_WIDTH: f64 = 22.86e-3;

const MIN_POINTS: usize = 7;
const MIN_SPAN_LINEWIDTHS: f64 = 3.0;
const MAX_ITERATIONS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveguideGeometry {
    /// Broad-wall width in metres.
    pub width_a: f64,
    pub light_speed: f64,
}

impl Default for WaveguideGeometry {
    fn default() -> Self {
        Self {
            width_a: WR90_WIDTH,
            light_speed: SPEED_OF_LIGHT,
        }
    }
}

impl WaveguideGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_a > 0.0) || !self.width_a.is_finite() {
            return Err(Error::validation(
                "width_a",
                format!("must be positive, got {}", self.width_a),
            ));
        }
        if !(self.light_speed > 0.0) || !self.light_speed.is_finite() {
            return Err(Error::validation("light_speed", "must be positive"));
        }
        Ok(())
    }

    /// TE10 cut-off `c / 2a` in Hz.
    pub fn cutoff(&self) -> f64 {
        self.light_speed / (2.0 * self.width_a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceFit {
    pub f0: f64,
    pub q_loaded: f64,
    pub amplitude: C64,
    pub baseline: C64,
    /// RMS of `|s21 − model|` over the fitted points.
    pub residual: f64,
}

fn lorentz(f: f64, f0: f64, q: f64) -> C64 {
    C64::new(1.0, 0.0) / C64::new(1.0, 2.0 * q * (f - f0) / f0)
}

impl ResonanceFit {
    pub fn linewidth(&self) -> f64 {
        self.f0 / self.q_loaded
    }

    /// `baseline + amplitude / (1 + 2iQ(f − f0)/f0)`.
    pub fn model(&self, f: f64) -> C64 {
        self.baseline + self.amplitude * lorentz(f, self.f0, self.q_loaded)
    }

    pub fn spectrum(&self, freqs: &[f64]) -> Vec<(f64, C64)> {
        freqs.iter().map(|&f| (f, self.model(f))).collect()
    }
}

/// Best complex baseline and amplitude for fixed `(f0, Q)`, plus the
/// residual sum of squares.
fn project(spectrum: &[(f64, C64)], f0: f64, q: f64) -> (C64, C64, f64) {
    let n = spectrum.len() as f64;
    let mut sl = C64::new(0.0, 0.0);
    let mut sll = 0.0;
    let mut ss = C64::new(0.0, 0.0);
    let mut sls = C64::new(0.0, 0.0);
    for &(f, s) in spectrum {
        let l = lorentz(f, f0, q);
        sl += l;
        sll += l.norm_sqr();
        ss += s;
        sls += l.conj() * s;
    }
    // [[n, Σl], [Σl*, Σ|l|²]] (B, A)ᵀ = (Σs, Σl* s)ᵀ
    let det = n * sll - sl.norm_sqr();
    let b = (ss * sll - sl * sls) / det;
    let a = (sls * n - sl.conj() * ss) / det;
    let cost = spectrum
        .iter()
        .map(|&(f, s)| (s - b - a * lorentz(f, f0, q)).norm_sqr())
        .sum();
    (b, a, cost)
}

fn residuals(spectrum: &[(f64, C64)], f0: f64, q: f64) -> Vec<f64> {
    let (b, a, _) = project(spectrum, f0, q);
    spectrum
        .iter()
        .flat_map(|&(f, s)| {
            let r = s - b - a * lorentz(f, f0, q);
            [r.re, r.im]
        })
        .collect()
}

/// Least-squares Lorentzian fit with a constant complex baseline, real and
/// imaginary parts fitted jointly. Baseline and amplitude are eliminated
/// analytically; `(f0, ln Q)` are found by Levenberg–Marquardt.
pub fn fit_lorentzian(spectrum: &[(f64, C64)]) -> Result<ResonanceFit> {
    let n = spectrum.len();
    if n < MIN_POINTS {
        return Err(Error::Fit(format!("need at least {MIN_POINTS} points, got {n}")));
    }
    if spectrum.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::Argument("frequencies must be strictly increasing".into()));
    }
    let span = spectrum[n - 1].0 - spectrum[0].0;
    let spacing = span / (n - 1) as f64;

    let edge = 3.min(n / 2);
    let b0 = (spectrum[..edge]
        .iter()
        .chain(&spectrum[n - edge..])
        .map(|p| p.1)
        .sum::<C64>())
        / (2 * edge) as f64;
    let excess: Vec<f64> = spectrum.iter().map(|p| (p.1 - b0).norm_sqr()).collect();
    let (peak, &emax) = excess
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let scale = spectrum.iter().map(|p| p.1.norm()).fold(0.0, f64::max);
    if !(emax.sqrt() > 1e-12 * scale.max(1e-300)) {
        return Err(Error::Fit("no resonance above the baseline".into()));
    }
    let mut lo = peak;
    while lo > 0 && excess[lo - 1] >= emax / 2.0 {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < n && excess[hi + 1] >= emax / 2.0 {
        hi += 1;
    }
    let f_ref = spectrum[peak].0;
    let width0 = (spectrum[hi].0 - spectrum[lo].0).max(spacing);
    let q_ref = f_ref / width0;

    // parameters: f0 = f_ref + u·width0, Q = q_ref·e^v
    let unpack = |p: [f64; 2]| (f_ref + p[0] * width0, q_ref * p[1].exp());
    let cost_of = |p: [f64; 2]| {
        let (f0, q) = unpack(p);
        project(spectrum, f0, q).2
    };
    let mut p = [0.0, 0.0];
    let mut cost = cost_of(p);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let (f0, q) = unpack(p);
        let r = residuals(spectrum, f0, q);
        let h = 1e-6;
        let mut jac = [vec![0.0; r.len()], vec![0.0; r.len()]];
        for (k, col) in jac.iter_mut().enumerate() {
            let mut up = p;
            let mut dn = p;
            up[k] += h;
            dn[k] -= h;
            let (fu, qu) = unpack(up);
            let (fd, qd) = unpack(dn);
            let ru = residuals(spectrum, fu, qu);
            let rd = residuals(spectrum, fd, qd);
            for i in 0..r.len() {
                col[i] = (ru[i] - rd[i]) / (2.0 * h);
            }
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let jtj = [
            [dot(&jac[0], &jac[0]), dot(&jac[0], &jac[1])],
            [dot(&jac[0], &jac[1]), dot(&jac[1], &jac[1])],
        ];
        let jtr = [dot(&jac[0], &r), dot(&jac[1], &r)];
        let mut improved = false;
        for _ in 0..40 {
            let a00 = jtj[0][0] * (1.0 + lambda);
            let a11 = jtj[1][1] * (1.0 + lambda);
            let a01 = jtj[0][1];
            let det = a00 * a11 - a01 * a01;
            if !(det.abs() > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let step = [
                -(a11 * jtr[0] - a01 * jtr[1]) / det,
                -(a00 * jtr[1] - a01 * jtr[0]) / det,
            ];
            let trial = [p[0] + step[0], p[1] + step[1]];
            let c = cost_of(trial);
            if c.is_finite() && c <= cost {
                p = trial;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                converged = step[0].abs() < 1e-10 && step[1].abs() < 1e-10;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no damped step lowers the cost: stationary to working precision
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::Fit(format!(
            "Levenberg–Marquardt did not converge (cost {cost:.3e})"
        )));
    }
    let (f0, q) = unpack(p);
    let (baseline, amplitude, cost) = project(spectrum, f0, q);
    let fit = ResonanceFit {
        f0,
        q_loaded: q,
        amplitude,
        baseline,
        residual: (cost / n as f64).sqrt(),
    };
    if !(f0 > 0.0 && q > 0.0) || f0 < spectrum[0].0 || f0 > spectrum[n - 1].0 {
        return Err(Error::Fit(format!("resonance at {f0:.6e} Hz lies outside the data")));
    }
    if fit.linewidth() < spacing {
        return Err(Error::Fit(format!(
            "linewidth {:.3e} Hz is narrower than the grid spacing {spacing:.3e} Hz",
            fit.linewidth()
        )));
    }
    if span < MIN_SPAN_LINEWIDTHS * fit.linewidth() {
        return Err(Error::Fit(format!(
            "data span {:.2} linewidths, need at least {MIN_SPAN_LINEWIDTHS}",
            span / fit.linewidth()
        )));
    }
    if amplitude.norm() < 5.0 * fit.residual {
        return Err(Error::Fit(
            "fitted resonance is not significant above the residual".into(),
        ));
    }
    Ok(fit)
}

/// Windows of a wide scan around peaks whose excess over the median
/// baseline exceeds `threshold` times the largest excess.
pub fn find_resonances(spectrum: &[(f64, C64)], threshold: f64) -> Result<Vec<Range<usize>>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Argument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let n = spectrum.len();
    if n < MIN_POINTS {
        return Ok(Vec::new());
    }
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let base = C64::new(
        median(spectrum.iter().map(|p| p.1.re).collect()),
        median(spectrum.iter().map(|p| p.1.im).collect()),
    );
    let excess: Vec<f64> = spectrum.iter().map(|p| (p.1 - base).norm()).collect();
    let top = excess.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return Ok(Vec::new());
    }
    let mut peaks: Vec<(usize, usize)> = Vec::new(); // (centre, half width)
    let mut i = 0;
    while i < n {
        if excess[i] > threshold * top {
            let start = i;
            while i < n && excess[i] > threshold * top {
                i += 1;
            }
            let centre = (start..i)
                .max_by(|&a, &b| excess[a].total_cmp(&excess[b]))
                .expect("non-empty");
            peaks.push((centre, (i - start).max(1)));
        } else {
            i += 1;
        }
    }
    let mut windows = Vec::with_capacity(peaks.len());
    for (k, &(centre, width)) in peaks.iter().enumerate() {
        let half = (4 * width).max(MIN_POINTS);
        let mut lo = centre.saturating_sub(half);
        let mut hi = (centre + half + 1).min(n);
        if k > 0 {
            lo = lo.max((peaks[k - 1].0 + centre) / 2 + 1);
        }
        if k + 1 < peaks.len() {
            hi = hi.min((centre + peaks[k + 1].0) / 2 + 1);
        }
        windows.push(lo..hi);
    }
    Ok(windows)
}

/// Locate and fit every resonance in a wide scan, in parallel.
pub fn fit_spectrum(spectrum: &[(f64, C64)], threshold: f64) -> Result<Vec<ResonanceFit>> {
    find_resonances(spectrum, threshold)?
        .into_par_iter()
        .map(|w| fit_lorentzian(&spectrum[w]))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attenuation {
    pub np_per_m: f64,
    pub db_per_km: f64,
}

/// Attenuation bound of the TE10 mode from a resonance's quality factor:
/// `α = (1/Q)(2πν/c) / √(1 − (c/2aν)²)`.
pub fn attenuation(f0: f64, q: f64, geom: &WaveguideGeometry) -> Result<Attenuation> {
    geom.validate()?;
    if !(q > 0.0) {
        return Err(Error::Argument(format!("quality factor must be positive, got {q}")));
    }
    let fc = geom.cutoff();
    if !(f0 > fc) {
        return Err(Error::Domain(format!(
            "{f0:.6e} Hz is at or below the {fc:.6e} Hz cut-off; the mode is evanescent"
        )));
    }
    let np_per_m = if q.is_infinite() {
        0.0
    } else {
        (2.0 * std::f64::consts::PI * f0 / geom.light_speed) / (q * (1.0 - (fc / f0).powi(2)).sqrt())
    };
    Ok(Attenuation {
        np_per_m,
        db_per_km: np_per_m * DB_PER_NEPER * 1000.0,
    })
}

/// Smallest quality factor that bounds the attenuation at `f0` below
/// `db_per_km`.
pub fn q_for_attenuation(f0: f64, db_per_km: f64, geom: &WaveguideGeometry) -> Result<f64> {
    if !(db_per_km > 0.0) {
        return Err(Error::Argument(format!(
            "target attenuation must be positive, got {db_per_km}"
        )));
    }
    Ok(attenuation(f0, 1.0, geom)?.db_per_km / db_per_km)
}

/// Fractional power lost over `length` metres: `1 − 10^(−α·L/10)`.
pub fn loss_budget(db_per_km: f64, length: f64) -> Result<f64> {
    if !(length >= 0.0) {
        return Err(Error::Argument(format!("length must be non-negative, got {length}")));
    }
    if !(db_per_km >= 0.0) {
        return Err(Error::Argument(format!(
            "attenuation must be non-negative, got {db_per_km}"
        )));
    }
    Ok(-(-(db_per_km / 1000.0) * length / 10.0 * std::f64::consts::LN_10).exp_m1())
}

/// `frequency_Hz, re_s21, im_s21` with a header row.
pub fn read_spectrum_csv(path: impl AsRef<Path>) -> Result<Vec<(f64, C64)>> {
    Ok(read_csv_rows(path, 3)?
        .into_iter()
        .map(|r| (r[0], C64::new(r[1], r[2])))
        .collect())
}

pub fn spectrum_csv(spectrum: &[(f64, C64)]) -> String {
    let mut out = String::from("frequency_Hz,re_s21,im_s21\n");
    for (f, s) in spectrum {
        let _ = writeln!(out, "{},{},{}", fmt_f64(*f), fmt_f64(s.re), fmt_f64(s.im));
    }
    out
}

/// `f0_GHz, Q, alpha_dB_per_km` per fitted resonance.
pub fn resonance_table_csv(fits: &[ResonanceFit], geom: &WaveguideGeometry) -> Result<String> {
    let mut out = String::from("f0_GHz,Q,alpha_dB_per_km\n");
    for fit in fits {
        let a = attenuation(fit.f0, fit.q_loaded, geom)?;
        let _ = writeln!(
            out,
            "{},{},{}",
            fmt_f64(fit.f0 / 1e9),
            fmt_f64(fit.q_loaded),
            fmt_f64(a.db_per_km)
        );
    }
    Ok(out)
}

pub fn write_resonance_table(path: impl AsRef<Path>, fits: &[ResonanceFit], geom: &WaveguideGeometry) -> Result<()> {
    write_text(path, &resonance_table_csv(fits, geom)?)
}
