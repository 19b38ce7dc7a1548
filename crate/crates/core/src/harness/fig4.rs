//! Transfer-process and Bell-state experiments: exact simulation, simulated
//! tomography through the readout chain, and reconstruction.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::dynamics::{prepared_qutrit, product_pair, run_protocol, LinkSystem};
use crate::error::Result;
use crate::quantum::{
    hs_distance, partial_trace, qutrit_rotation, CMatrix, CVector, DensityMatrix, HilbertSpace, QutritTransition,
    RotationAxis,
};
use crate::readout::{assignment_matrix_with, drift_angle_for_error, joint_matrix, AssignmentMatrix, TriModalModel};
use crate::tomography::{
    bell_phase, bell_protocol_analysis, calibrate_transfer_phase, mle_state, mub_states, process_tomography,
    reduce_to_qubits, rotate_phase, simulate_tomography, transfer_metrics, BellAnalysis, MleOptions, ProcessMatrix,
    QutritReadout, RotationSet, ShotBudget, TomographyRecord, TransferMetrics,
};

use super::task_seed;

/// Readout chain during the experiment: the true response may have drifted
/// away from the calibration the classifier uses.
#[derive(Clone, Debug)]
pub struct ReadoutChain {
    pub qutrits: [QutritReadout; 2],
    /// Shots per prepared state for the assignment-matrix measurement.
    pub calibration_shots: usize,
}

impl ReadoutChain {
    /// Rotate each calibrated response about its centroid until its average
    /// error reaches `drifted_error`.
    pub fn new(calibrated: [TriModalModel; 2], drifted_error: Option<f64>, calibration_shots: usize) -> Result<Self> {
        let make = |m: TriModalModel| -> Result<QutritReadout> {
            let classifier = *m.centers();
            let truth = match drifted_error {
                Some(target) => {
                    let angle = drift_angle_for_error(&m, target)?;
                    m.rotated(angle)?
                }
                None => m,
            };
            Ok(QutritReadout { truth, classifier })
        };
        let [a, b] = calibrated;
        Ok(Self {
            qutrits: [make(a)?, make(b)?],
            calibration_shots,
        })
    }

    /// Assignment matrix measured with the drifted response.
    fn measured(&self, k: usize, seed: u64) -> Result<AssignmentMatrix> {
        let q = &self.qutrits[k];
        let classifier = q.truth.with_centers(q.classifier)?;
        assignment_matrix_with(&q.truth, &classifier, self.calibration_shots, seed)
    }
}

#[derive(Clone, Debug)]
pub struct TomographySettings {
    pub shots: ShotBudget,
    pub readout: Option<ReadoutChain>,
    pub master_seed: u64,
}

fn embed_qubit(psi: &CVector) -> CMatrix {
    // unitary on the g–e block taking |g⟩ to ψ
    let (a, b) = (psi[0], psi[1]);
    let mut u = CMatrix::identity(3, 3);
    u[(0, 0)] = a;
    u[(1, 0)] = b;
    u[(0, 1)] = -b.conj();
    u[(1, 1)] = a.conj();
    u
}

fn qubit_block(m: &CMatrix) -> CMatrix {
    m.view((0, 0), (2, 2)).into_owned()
}

/// Final two-qutrit link state for sending `ψ` (a g–e superposition on A)
/// through the protocol.
pub fn transfer_output(sys: &LinkSystem, delay_offset: f64, psi: &CVector) -> Result<DensityMatrix> {
    let to_f = qutrit_rotation(QutritTransition::Ef, RotationAxis::X, PI);
    let rho_a = prepared_qutrit(&sys.node_a, sys.preparation, &(to_f * embed_qubit(psi)));
    let rho_b = prepared_qutrit(&sys.node_b, sys.preparation, &CMatrix::identity(3, 3));
    let trace = run_protocol(sys, delay_offset, &product_pair(&rho_a, &rho_b))?;
    partial_trace(&trace.final_state, &["qa", "qb"])
}

/// Bell-protocol link state: A in `(|e⟩ − i|f⟩)/√2`, B in `|g⟩`.
pub fn bell_output(sys: &LinkSystem, delay_offset: f64) -> Result<DensityMatrix> {
    let u = qutrit_rotation(QutritTransition::Ef, RotationAxis::X, PI / 2.0)
        * qutrit_rotation(QutritTransition::Ge, RotationAxis::X, PI);
    let rho_a = prepared_qutrit(&sys.node_a, sys.preparation, &u);
    let rho_b = prepared_qutrit(&sys.node_b, sys.preparation, &CMatrix::identity(3, 3));
    let trace = run_protocol(sys, delay_offset, &product_pair(&rho_a, &rho_b))?;
    partial_trace(&trace.final_state, &["qa", "qb"])
}

#[derive(Clone, Debug)]
pub struct ProcessEstimate {
    pub chi: ProcessMatrix,
    pub metrics: TransferMetrics,
    /// Phase-corrected qubit-block outputs.
    pub outputs: Vec<CMatrix>,
    pub hs_to_reference: f64,
}

#[derive(Clone, Debug)]
pub struct ProcessRun {
    pub inputs: Vec<CVector>,
    /// Virtual-Z frame phase on B, calibrated on the noiseless outputs.
    pub phase: f64,
    pub reference: ProcessEstimate,
    /// Reconstruction without readout correction (or with perfect readout).
    pub unmitigated: ProcessEstimate,
    pub mitigated: Option<ProcessEstimate>,
    pub records: Vec<TomographyRecord>,
}

fn estimate(inputs: &[CVector], outputs: Vec<CMatrix>, reference: Option<&ProcessMatrix>) -> Result<ProcessEstimate> {
    let chi = process_tomography(inputs, &outputs)?.chi;
    let metrics = transfer_metrics(&chi, inputs, &outputs)?;
    let hs_to_reference = match reference {
        Some(r) => hs_distance(chi.chi(), r.chi())?,
        None => 0.0,
    };
    Ok(ProcessEstimate {
        chi,
        metrics,
        outputs,
        hs_to_reference,
    })
}

/// Transfer each mutually unbiased state, tomograph B, and fit χ.
pub fn process_experiment(sys: &LinkSystem, delay_offset: f64, settings: &TomographySettings) -> Result<ProcessRun> {
    let inputs = mub_states().to_vec();
    let exact: Vec<CMatrix> = inputs
        .par_iter()
        .map(|psi| {
            let pair = transfer_output(sys, delay_offset, psi)?;
            Ok(partial_trace(&pair, &["qb"])?.into_matrix())
        })
        .collect::<Result<_>>()?;
    let blocks: Vec<CMatrix> = exact.iter().map(qubit_block).collect();
    let phase = calibrate_transfer_phase(&inputs, &blocks);
    let reference = estimate(&inputs, blocks.iter().map(|m| rotate_phase(m, phase)).collect(), None)?;

    let gates = RotationSet::standard();
    let seed = settings.master_seed;
    let readout_b = settings.readout.as_ref().map(|r| [r.qutrits[1].clone()]);
    let mitigation = match &settings.readout {
        Some(chain) => Some(chain.measured(1, task_seed(seed, "fig4_process/calibration/b"))?),
        None => None,
    };
    let records: Vec<TomographyRecord> = exact
        .par_iter()
        .enumerate()
        .map(|(k, m)| {
            let rho = DensityMatrix::with_tolerance(HilbertSpace::qutrit("qb"), m.clone(), 1e-6)?;
            let s = task_seed(seed, &format!("fig4_process/tomography/{k}"));
            simulate_tomography(&rho, &gates, readout_b.as_ref().map(|r| &r[..]), settings.shots, s)
        })
        .collect::<Result<_>>()?;

    let reconstruct = |with: Option<&AssignmentMatrix>| -> Result<Vec<CMatrix>> {
        records
            .par_iter()
            .map(|rec| {
                let rec = rec.clone().with_mitigation(with.cloned());
                let fit = mle_state(&rec, &MleOptions::default())?;
                Ok(rotate_phase(&qubit_block(fit.state.matrix()), phase))
            })
            .collect()
    };
    let unmitigated = estimate(&inputs, reconstruct(None)?, Some(&reference.chi))?;
    let mitigated = match &mitigation {
        Some(r) => Some(estimate(&inputs, reconstruct(Some(r))?, Some(&reference.chi))?),
        None => None,
    };
    Ok(ProcessRun {
        inputs,
        phase,
        reference,
        unmitigated,
        mitigated,
        records,
    })
}

#[derive(Clone, Debug)]
pub struct BellEstimate {
    pub analysis: BellAnalysis,
    pub state: DensityMatrix,
    pub hs_to_reference: f64,
}

#[derive(Clone, Debug)]
pub struct BellRun {
    pub phase: f64,
    pub reference: BellEstimate,
    pub unmitigated: BellEstimate,
    pub mitigated: Option<BellEstimate>,
    pub record: TomographyRecord,
}

pub fn bell_experiment(sys: &LinkSystem, delay_offset: f64, settings: &TomographySettings) -> Result<BellRun> {
    let exact = bell_output(sys, delay_offset)?;
    let phase = bell_phase(&reduce_to_qubits(&exact)?)?;
    let reference = BellEstimate {
        analysis: bell_protocol_analysis(&exact, phase)?,
        state: exact.clone(),
        hs_to_reference: 0.0,
    };
    let seed = settings.master_seed;
    let readout = settings.readout.as_ref().map(|r| r.qutrits.clone());
    let record = simulate_tomography(
        &exact,
        &RotationSet::standard(),
        readout.as_ref().map(|r| &r[..]),
        settings.shots,
        task_seed(seed, "fig4_bell/tomography"),
    )?;
    let mitigation = match &settings.readout {
        Some(chain) => Some(joint_matrix(
            &chain.measured(0, task_seed(seed, "fig4_bell/calibration/a"))?,
            &chain.measured(1, task_seed(seed, "fig4_bell/calibration/b"))?,
        )?),
        None => None,
    };
    let analyse = |with: Option<AssignmentMatrix>| -> Result<BellEstimate> {
        let fit = mle_state(&record.clone().with_mitigation(with), &MleOptions::default())?;
        Ok(BellEstimate {
            analysis: bell_protocol_analysis(&fit.state, phase)?,
            hs_to_reference: hs_distance(fit.state.matrix(), exact.matrix())?,
            state: fit.state,
        })
    };
    let (unmitigated, mitigated) = rayon::join(|| analyse(None), || mitigation.map(|r| analyse(Some(r))));
    Ok(BellRun {
        phase,
        reference,
        unmitigated: unmitigated?,
        mitigated: mitigated.transpose()?,
        record,
    })
}
