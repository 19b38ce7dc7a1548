use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_text};
use crate::quantum::{min_eigenvalue, CMatrix, DensityMatrix, HilbertSpace, Operator, C64};

use super::generator::{Generator, TWO_TRANSMON_LABELS};
use super::integrator::{Dopri5, IntegrationStats, IntegratorOptions};

/// States handed to the trace keep this much slack on trace and positivity.
pub const STATE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub integrator: IntegratorOptions,
    /// Keep the full state at every grid time.
    pub store_states: bool,
    /// Record the minimum eigenvalue at every grid time.
    pub track_positivity: bool,
}

/// Recorded evolution of the link.
#[derive(Clone, Debug)]
pub struct ExperimentTrace {
    pub times: Vec<f64>,
    /// One series per label of [`TWO_TRANSMON_LABELS`].
    pub populations: Vec<Vec<f64>>,
    pub output_field: Vec<C64>,
    /// `⟨L†L⟩`, photons per second leaving the link.
    pub output_flux: Vec<f64>,
    pub trace_norm: Vec<f64>,
    pub min_eigenvalues: Option<Vec<f64>>,
    pub states: Option<Vec<CMatrix>>,
    pub final_state: DensityMatrix,
    pub stats: IntegrationStats,
}

fn to_flat(m: &CMatrix) -> Vec<C64> {
    let d = m.nrows();
    (0..d * d).map(|k| m[(k / d, k % d)]).collect()
}

fn from_flat(d: usize, v: &[C64]) -> CMatrix {
    CMatrix::from_row_slice(d, d, v)
}

/// Integrate `ρ₀` across `t_grid`, stopping at every drive breakpoint.
pub fn evolve(
    rho0: &DensityMatrix,
    generator: &Generator,
    t_grid: &[f64],
    options: &EvolveOptions,
) -> Result<ExperimentTrace> {
    if rho0.space() != generator.space() {
        return Err(Error::DimensionMismatch {
            expected: generator.dim(),
            found: rho0.dim(),
        });
    }
    if t_grid.is_empty() {
        return Err(Error::Argument("time grid is empty".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Argument("time grid must be strictly increasing".into()));
    }
    let d = generator.dim();
    let (t_first, t_last) = (t_grid[0], *t_grid.last().expect("non-empty"));
    let mut stops: Vec<(f64, Option<usize>)> = t_grid.iter().enumerate().map(|(k, &t)| (t, Some(k))).collect();
    for bp in generator.breakpoints() {
        if bp > t_first && bp < t_last && !t_grid.iter().any(|&t| (t - bp).abs() <= 1e-15) {
            stops.push((bp, None));
        }
    }
    stops.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut trace = ExperimentTrace {
        times: Vec::with_capacity(t_grid.len()),
        populations: (0..9).map(|_| Vec::with_capacity(t_grid.len())).collect(),
        output_field: Vec::with_capacity(t_grid.len()),
        output_flux: Vec::with_capacity(t_grid.len()),
        trace_norm: Vec::with_capacity(t_grid.len()),
        min_eigenvalues: options.track_positivity.then(Vec::new),
        states: options.store_states.then(Vec::new),
        final_state: rho0.clone(),
        stats: IntegrationStats::default(),
    };
    let mut y = to_flat(rho0.matrix());
    let record = |trace: &mut ExperimentTrace, t: f64, y: &[C64]| {
        trace.times.push(t);
        for (series, p) in trace.populations.iter_mut().zip(generator.pair_populations(y)) {
            series.push(p);
        }
        trace.output_field.push(generator.output_field(y));
        trace.output_flux.push(generator.output_flux(y));
        trace.trace_norm.push((0..d).map(|k| y[k * d + k].re).sum());
        let m = (options.store_states || options.track_positivity).then(|| from_flat(d, y));
        if let (Some(list), Some(m)) = (trace.min_eigenvalues.as_mut(), m.as_ref()) {
            list.push(min_eigenvalue(m));
        }
        if let (Some(list), Some(m)) = (trace.states.as_mut(), m) {
            list.push(m);
        }
    };
    record(&mut trace, t_first, &y);

    let mut solver = Dopri5::new(d * d, options.integrator);
    let mut scratch = Vec::with_capacity(d * d);
    for w in stops.windows(2) {
        let (t0, _) = w[0];
        let (t1, tag) = w[1];
        let mut f = |t: f64, rho: &[C64], out: &mut [C64]| {
            generator.rhs(t, (t0, t1), rho, out, &mut scratch);
        };
        solver.advance(&mut f, t0, t1, &mut y)?;
        if tag.is_some() {
            record(&mut trace, t1, &y);
        }
    }
    trace.stats = solver.stats;
    let m = from_flat(d, &y);
    let m = (&m + m.adjoint()).unscale(2.0);
    trace.final_state = DensityMatrix::with_tolerance(generator.space().clone(), m, STATE_TOLERANCE)?;
    Ok(trace)
}

impl ExperimentTrace {
    pub fn population(&self, label: &str) -> Option<&[f64]> {
        TWO_TRANSMON_LABELS
            .iter()
            .position(|l| *l == label)
            .map(|k| self.populations[k].as_slice())
    }

    /// `|⟨a_out⟩|²` at each grid time.
    pub fn output_power(&self) -> Vec<f64> {
        self.output_field.iter().map(|z| z.norm_sqr()).collect()
    }

    /// Two-transmon populations of `final_state`.
    pub fn final_populations(&self) -> [f64; 9] {
        pair_populations_of(&self.final_state)
    }

    pub fn final_population(&self, label: &str) -> f64 {
        let k = TWO_TRANSMON_LABELS
            .iter()
            .position(|l| *l == label)
            .expect("valid two-transmon label");
        self.final_populations()[k]
    }

    /// Apply an instantaneous unitary to the final state (e.g. a closing gate).
    pub fn apply_final_unitary(&mut self, unitary: &Operator) -> Result<()> {
        self.final_state = self.final_state.transform(unitary)?;
        Ok(())
    }

    pub fn max_trace_error(&self) -> f64 {
        self.trace_norm.iter().map(|t| (t - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ns");
        for l in TWO_TRANSMON_LABELS {
            let _ = write!(out, ",P_{l}");
        }
        out.push_str(",re_aout,im_aout\n");
        for (k, t) in self.times.iter().enumerate() {
            out.push_str(&fmt_f64(t * 1e9));
            for series in &self.populations {
                out.push(',');
                out.push_str(&fmt_f64(series[k]));
            }
            let z = self.output_field[k];
            let _ = writeln!(out, ",{},{}", fmt_f64(z.re), fmt_f64(z.im));
        }
        out
    }

    pub fn to_json(&self, metadata: serde_json::Value) -> Result<String> {
        let m = self.final_state.matrix();
        let d = m.nrows();
        let mut data = Vec::with_capacity(2 * d * d);
        for i in 0..d {
            for j in 0..d {
                data.push(m[(i, j)].re);
                data.push(m[(i, j)].im);
            }
        }
        let doc = serde_json::json!({
            "metadata": metadata,
            "final_state": {
                "dim": d,
                "factors": self.final_state.space().factors(),
                "layout": "row-major, re/im interleaved",
                "data": data,
            },
            "final_populations": TWO_TRANSMON_LABELS
                .iter()
                .zip(self.final_populations())
                .map(|(l, p)| (l.to_string(), serde_json::Value::from(p)))
                .collect::<serde_json::Map<_, _>>(),
            "stats": self.stats,
        });
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.to_csv())
    }

    pub fn write_json(&self, path: impl AsRef<Path>, metadata: serde_json::Value) -> Result<()> {
        write_text(path, &self.to_json(metadata)?)
    }
}

/// Populations of a state on the link space, marginalised over resonators.
pub fn pair_populations_of(rho: &DensityMatrix) -> [f64; 9] {
    let space: &HilbertSpace = rho.space();
    let ia = space.index_of(super::generator::QA).expect("link space");
    let ib = space.index_of(super::generator::QB).expect("link space");
    let mut out = [0.0; 9];
    for k in 0..space.dim() {
        let dig = space.digits(k);
        out[super::generator::two_transmon_index(dig[ia], dig[ib])] += rho.matrix()[(k, k)].re;
    }
    out
}
