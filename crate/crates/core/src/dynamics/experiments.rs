use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse::{
    build_schedule_with_window, DriveFormula, PulseRole, PulseSchedule, DEFAULT_RAMP, DEFAULT_SAMPLE_DT,
    TRUNCATION_HALF_WIDTH,
};
use crate::quantum::{
    qutrit_rotation, CMatrix, DensityMatrix, HilbertSpace, Operator, QutritTransition, RotationAxis, C64,
};

use super::generator::{build_generator, link_space, QA, QB, TWO_TRANSMON_LABELS};
use super::model::{LinkModel, NodeModel, Preparation};
use super::trace::{evolve, EvolveOptions, ExperimentTrace, STATE_TOLERANCE};

/// Everything needed to simulate one run of the link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSystem {
    pub node_a: NodeModel,
    pub node_b: NodeModel,
    pub link: LinkModel,
    /// Photon bandwidth Γ (rad/s).
    pub gamma: f64,
    pub ramp: f64,
    pub sample_dt: f64,
    /// Half-width of the drive window; `None` uses 4.6/Γ.
    pub half_window: Option<f64>,
    pub preparation: Preparation,
    #[serde(default)]
    pub formula: DriveFormula,
    /// Spacing of recorded trace samples.
    pub grid_dt: f64,
    pub evolve: EvolveOptions,
}

impl LinkSystem {
    pub fn reference() -> Self {
        Self::new(
            NodeModel::reference_a(),
            NodeModel::reference_b(),
            LinkModel::reference(),
            2.0 * PI * 6.25e6,
        )
    }

    pub fn new(node_a: NodeModel, node_b: NodeModel, link: LinkModel, gamma: f64) -> Self {
        Self {
            node_a,
            node_b,
            link,
            gamma,
            ramp: DEFAULT_RAMP,
            sample_dt: DEFAULT_SAMPLE_DT,
            half_window: None,
            preparation: Preparation::Ideal,
            formula: DriveFormula::default(),
            grid_dt: 1e-9,
            evolve: EvolveOptions::default(),
        }
    }

    pub fn half_window(&self) -> f64 {
        self.half_window.unwrap_or(TRUNCATION_HALF_WIDTH / self.gamma)
    }

    pub fn space(&self) -> Result<HilbertSpace> {
        link_space(&self.node_a, &self.node_b)
    }

    pub fn schedule(&self, node: &NodeModel, role: PulseRole) -> Result<PulseSchedule> {
        Ok(build_schedule_with_window(
            self.gamma,
            node.kappa,
            role,
            self.sample_dt,
            self.ramp,
            self.half_window(),
        )?
        .with_formula(self.formula))
    }

    pub fn validate(&self) -> Result<()> {
        self.node_a.validate()?;
        self.node_b.validate()?;
        self.link.validate()?;
        if !(self.grid_dt > 0.0) {
            return Err(Error::validation("grid_dt", "must be > 0"));
        }
        self.schedule(&self.node_a, PulseRole::Emission)?;
        self.schedule(&self.node_b, PulseRole::Absorption)?;
        Ok(())
    }

    /// Ideal `e-f` π on node B, lifted to the link space.
    pub fn closing_gate(&self) -> Result<Operator> {
        let u = qutrit_rotation(QutritTransition::Ef, RotationAxis::X, PI);
        Operator::embed(&self.space()?, QB, &u)
    }
}

/// Which drives are active in a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Drives {
    pub a: Option<PulseRole>,
    pub b: Option<PulseRole>,
}

impl Drives {
    pub const TRANSFER: Drives = Drives {
        a: Some(PulseRole::Emission),
        b: Some(PulseRole::Absorption),
    };
}

/// Qutrit state after reset (with the node's chosen residual) and `prep`.
pub fn prepared_qutrit(node: &NodeModel, preparation: Preparation, prep: &CMatrix) -> CMatrix {
    let p = node.initial_excited_population(preparation);
    let mut rho = CMatrix::zeros(3, 3);
    rho[(0, 0)] = C64::new(1.0 - p, 0.0);
    rho[(1, 1)] = C64::new(p, 0.0);
    prep * rho * prep.adjoint()
}

/// Embed a two-qutrit state (A ⊗ B, 9×9) with both resonators in vacuum.
pub fn link_state(space: &HilbertSpace, pair: &CMatrix) -> Result<DensityMatrix> {
    if pair.nrows() != 9 || pair.ncols() != 9 {
        return Err(Error::DimensionMismatch {
            expected: 9,
            found: pair.nrows(),
        });
    }
    let ia = space.index_of(QA)?;
    let ib = space.index_of(QB)?;
    let d = space.dim();
    let mut m = CMatrix::zeros(d, d);
    let vacuum = |dig: &[usize]| dig.iter().enumerate().all(|(k, &v)| k == ia || k == ib || v == 0);
    for r in 0..d {
        let dr = space.digits(r);
        if !vacuum(&dr) {
            continue;
        }
        for c in 0..d {
            let dc = space.digits(c);
            if vacuum(&dc) {
                m[(r, c)] = pair[(3 * dr[ia] + dr[ib], 3 * dc[ia] + dc[ib])];
            }
        }
    }
    DensityMatrix::with_tolerance(space.clone(), m, STATE_TOLERANCE)
}

fn uniform_grid(start: f64, end: f64, dt: f64) -> Vec<f64> {
    if end <= start {
        return vec![start];
    }
    let n = ((end - start) / dt).ceil() as usize;
    let mut out: Vec<f64> = (0..n).map(|k| start + k as f64 * dt).collect();
    if end - out[n - 1] < 1e-3 * dt {
        out.pop();
    }
    out.push(end);
    out
}

/// Run the drives from the earliest pulse start to the latest (uncut) pulse
/// end plus `tail`; no closing gate is applied.
pub fn run_sequence(
    sys: &LinkSystem,
    delay_offset: f64,
    truncation: Option<f64>,
    initial_pair: &CMatrix,
    drives: Drives,
    tail: f64,
) -> Result<ExperimentTrace> {
    let make = |node: &NodeModel, role: Option<PulseRole>| -> Result<PulseSchedule> {
        Ok(match role {
            Some(r) => sys.schedule(node, r)?,
            None => sys.schedule(node, PulseRole::Emission)?.switched_off(),
        })
    };
    let mut sched_a = make(&sys.node_a, drives.a)?;
    let mut sched_b = make(&sys.node_b, drives.b)?;
    if let Some(tau) = truncation {
        if !(0.0..=sched_a.duration() + 1e-15).contains(&tau) {
            return Err(Error::Argument(format!(
                "truncation {tau:.3e} s outside the pulse duration {:.3e} s",
                sched_a.duration()
            )));
        }
        sched_a = sched_a.truncated_after(tau);
        // Cut-off is set in B's own frame, before the generator shifts it.
        sched_b = sched_b.truncated_after(tau);
    }
    let generator = build_generator(&sys.node_a, &sys.node_b, &sys.link, &sched_a, &sched_b, delay_offset)?;

    let mut start = f64::INFINITY;
    let mut end = f64::NEG_INFINITY;
    for (sched, shift, on) in [
        (&sched_a, 0.0, drives.a.is_some()),
        (&sched_b, delay_offset, drives.b.is_some()),
    ] {
        if on {
            start = start.min(sched.active_start() + shift);
            end = end.max(sched.window_end() + sched.ramp + shift);
        }
    }
    if !start.is_finite() {
        start = 0.0;
        end = 0.0;
    }
    let grid = uniform_grid(start, end + tail, sys.grid_dt);
    let rho0 = link_state(generator.space(), initial_pair)?;
    evolve(&rho0, &generator, &grid, &sys.evolve)
}

/// Pair state `ρ_A ⊗ ρ_B`.
pub fn product_pair(rho_a: &CMatrix, rho_b: &CMatrix) -> CMatrix {
    rho_a.kronecker(rho_b)
}

fn transfer_initial_pair(sys: &LinkSystem) -> CMatrix {
    let to_f = qutrit_rotation(QutritTransition::Ef, RotationAxis::X, PI)
        * qutrit_rotation(QutritTransition::Ge, RotationAxis::X, PI);
    let rho_a = prepared_qutrit(&sys.node_a, sys.preparation, &to_f);
    let rho_b = prepared_qutrit(&sys.node_b, sys.preparation, &CMatrix::identity(3, 3));
    product_pair(&rho_a, &rho_b)
}

/// Transfer `|f0⟩_A|g0⟩_B → |g0⟩_A|e0⟩_B`; the closing `e-f` π on B is
/// applied to `final_state`.
pub fn run_transfer(sys: &LinkSystem, delay_offset: f64, truncation: Option<f64>) -> Result<ExperimentTrace> {
    let pair = transfer_initial_pair(sys);
    let mut trace = run_sequence(sys, delay_offset, truncation, &pair, Drives::TRANSFER, 0.0)?;
    trace.apply_final_unitary(&sys.closing_gate()?)?;
    Ok(trace)
}

/// Full transfer protocol for an arbitrary initial two-qutrit state.
pub fn run_protocol(sys: &LinkSystem, delay_offset: f64, initial_pair: &CMatrix) -> Result<ExperimentTrace> {
    let mut trace = run_sequence(sys, delay_offset, None, initial_pair, Drives::TRANSFER, 0.0)?;
    trace.apply_final_unitary(&sys.closing_gate()?)?;
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPoint {
    pub tau: f64,
    /// Final populations in [`TWO_TRANSMON_LABELS`] order, after the closing gate.
    pub populations: [f64; 9],
}

impl TruncationPoint {
    pub fn population(&self, label: &str) -> f64 {
        let k = TWO_TRANSMON_LABELS
            .iter()
            .position(|l| *l == label)
            .expect("valid label");
        self.populations[k]
    }
}

pub fn truncation_sweep(sys: &LinkSystem, delay_offset: f64, taus: &[f64]) -> Result<Vec<TruncationPoint>> {
    taus.par_iter()
        .map(|&tau| {
            let trace = run_transfer(sys, delay_offset, Some(tau))?;
            Ok(TruncationPoint {
                tau,
                populations: trace.final_populations(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagSweep {
    pub offsets: Vec<f64>,
    pub p_ge: Vec<f64>,
    pub argmax_index: usize,
    pub argmax: f64,
    /// Vertex of the parabola through the maximum and its neighbours.
    pub refined_argmax: f64,
}

pub fn lag_sweep(sys: &LinkSystem, offsets: &[f64]) -> Result<LagSweep> {
    if offsets.is_empty() {
        return Err(Error::Argument("empty offset grid".into()));
    }
    let p_ge: Vec<f64> = offsets
        .par_iter()
        .map(|&off| Ok(run_transfer(sys, off, None)?.final_population("ge")))
        .collect::<Result<_>>()?;
    let argmax_index = p_ge
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(k, _)| k)
        .expect("non-empty");
    let argmax = offsets[argmax_index];
    let refined_argmax = if argmax_index > 0 && argmax_index + 1 < offsets.len() {
        let (x0, x1, x2) = (offsets[argmax_index - 1], argmax, offsets[argmax_index + 1]);
        let (y0, y1, y2) = (p_ge[argmax_index - 1], p_ge[argmax_index], p_ge[argmax_index + 1]);
        let num = (x1 - x0).powi(2) * (y1 - y2) - (x1 - x2).powi(2) * (y1 - y0);
        let den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0);
        if den.abs() > 0.0 {
            x1 - 0.5 * num / den
        } else {
            x1
        }
    } else {
        argmax
    };
    Ok(LagSweep {
        offsets: offsets.to_vec(),
        p_ge,
        argmax_index,
        argmax,
        refined_argmax,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotonScenario {
    EmitFromA,
    EmitFromB,
    EmitAAbsorbB,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonRecord {
    pub scenario: PhotonScenario,
    pub times: Vec<f64>,
    /// `|⟨a_out⟩|²` in the record's normalisation.
    pub power: Vec<f64>,
    pub integrated: f64,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Time allowed after the last drive for the field to leave the resonators.
fn ringdown_tail(sys: &LinkSystem) -> f64 {
    12.0 / sys.node_a.kappa.min(sys.node_b.kappa).min(sys.gamma)
}

/// Raw `|⟨a_out⟩|²` (units of s⁻¹) with the emitter in `(|g⟩+|f⟩)/√2`.
pub fn photon_record(sys: &LinkSystem, scenario: PhotonScenario, delay_offset: f64) -> Result<PhotonRecord> {
    let superpose = qutrit_rotation(QutritTransition::Ef, RotationAxis::Y, PI)
        * qutrit_rotation(QutritTransition::Ge, RotationAxis::Y, PI / 2.0);
    let idle = CMatrix::identity(3, 3);
    let (prep_a, prep_b, drives, offset) = match scenario {
        PhotonScenario::EmitFromA => (
            &superpose,
            &idle,
            Drives {
                a: Some(PulseRole::Emission),
                b: None,
            },
            0.0,
        ),
        PhotonScenario::EmitFromB => (
            &idle,
            &superpose,
            Drives {
                a: None,
                b: Some(PulseRole::Emission),
            },
            0.0,
        ),
        PhotonScenario::EmitAAbsorbB => (&superpose, &idle, Drives::TRANSFER, delay_offset),
    };
    let pair = product_pair(
        &prepared_qutrit(&sys.node_a, sys.preparation, prep_a),
        &prepared_qutrit(&sys.node_b, sys.preparation, prep_b),
    );
    let trace = run_sequence(sys, offset, None, &pair, drives, ringdown_tail(sys))?;
    let power = trace.output_power();
    let integrated = trapezoid(&trace.times, &power);
    Ok(PhotonRecord {
        scenario,
        times: trace.times,
        power,
        integrated,
    })
}

/// The three field records, normalised so that emission from B integrates to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonRecords {
    pub emit_a: PhotonRecord,
    pub emit_b: PhotonRecord,
    pub emit_a_absorb_b: PhotonRecord,
    /// `∫power(A) / ∫power(B)`, an estimate of `1 − l`.
    pub transmission: f64,
    pub absorption_efficiency: f64,
}

pub fn photon_records(sys: &LinkSystem, delay_offset: f64) -> Result<PhotonRecords> {
    let scenarios = [
        PhotonScenario::EmitFromA,
        PhotonScenario::EmitFromB,
        PhotonScenario::EmitAAbsorbB,
    ];
    let mut records: Vec<PhotonRecord> = scenarios
        .par_iter()
        .map(|&s| photon_record(sys, s, delay_offset))
        .collect::<Result<_>>()?;
    let norm = records[1].integrated;
    if !(norm > 0.0) {
        return Err(Error::Domain("emission from B produced no output power".into()));
    }
    for r in &mut records {
        r.power.iter_mut().for_each(|p| *p /= norm);
        r.integrated /= norm;
    }
    let emit_a_absorb_b = records.pop().expect("three records");
    let emit_b = records.pop().expect("three records");
    let emit_a = records.pop().expect("three records");
    Ok(PhotonRecords {
        transmission: emit_a.integrated,
        absorption_efficiency: 1.0 - emit_a_absorb_b.integrated / emit_a.integrated,
        emit_a,
        emit_b,
        emit_a_absorb_b,
    })
}

/// Wall time of the transfer sub-sequence: drive pulse, lag and closing gate.
pub fn protocol_duration(gamma: f64, ramp: f64, ef_gate: f64, offset: f64) -> f64 {
    protocol_duration_with_guard(gamma, ramp, ef_gate, offset, 0.0)
}

pub fn protocol_duration_with_guard(gamma: f64, ramp: f64, ef_gate: f64, offset: f64, guard: f64) -> f64 {
    2.0 * TRUNCATION_HALF_WIDTH / gamma + 2.0 * ramp + offset + ef_gate + guard
}
