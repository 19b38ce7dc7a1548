//! Per-command datasets and summaries.

use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::dynamics::{
    lag_sweep, photon_records, run_transfer, truncation_sweep, LagSweep, LinkModel, LinkSystem, NodeLabel, NodeModel,
    PhotonRecord, TWO_TRANSMON_LABELS,
};
use crate::error::Result;
use crate::io::fmt_f64;
use crate::pulse::{target_envelope, PhotonShape};
use crate::quantum::CMatrix;
use crate::tomography::{abs_csv, matrix_json, reduce_to_qubits, PAULI_LABELS};
use crate::waveguide::{
    attenuation, fit_spectrum, loss_budget, q_for_attenuation, read_spectrum_csv, resonance_table_csv,
};

use super::fig4::{
    bell_experiment, process_experiment, BellEstimate, ProcessEstimate, ReadoutChain, TomographySettings,
};
use super::{Artifacts, Command, ExperimentConfig, Format};

const QUTRIT_PAIR_LABELS: [&str; 9] = ["gg", "ge", "gf", "eg", "ee", "ef", "fg", "fe", "ff"];
const QUBIT_PAIR_LABELS: [&str; 4] = ["gg", "ge", "eg", "ee"];

pub(super) fn dispatch(command: Command, cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    match command {
        Command::Fig3 => fig3(cfg, out),
        Command::Fig4Process => fig4_process(cfg, out),
        Command::Fig4Bell => fig4_bell(cfg, out),
        Command::FigS5 => fig_s5(cfg, out),
        Command::LagScan => lag_scan(cfg, out),
        Command::Waveguide => waveguide(cfg, out),
        Command::Projected => projected(cfg, out),
    }
}

fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| start + k as f64 * step).collect()
}

fn populations_json(p: &[f64; 9]) -> Value {
    TWO_TRANSMON_LABELS
        .iter()
        .zip(p)
        .map(|(l, v)| (l.to_string(), Value::from(*v)))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn fig3(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    let sys = cfg.link_system()?;
    let offset = cfg.delay_offset();
    let s = &cfg.sweep;
    let taus: Vec<f64> = grid(s.tau_start_ns, s.tau_stop_ns, s.tau_step_ns)
        .iter()
        .map(|t| t * 1e-9)
        .collect();
    let sweep = truncation_sweep(&sys, offset, &taus)?;
    let full = run_transfer(&sys, offset, None)?;

    if cfg.wants(Format::Csv) {
        let mut csv = String::from("tau_ns");
        for l in TWO_TRANSMON_LABELS {
            let _ = write!(csv, ",P_{l}");
        }
        csv.push('\n');
        for p in &sweep {
            csv.push_str(&fmt_f64(p.tau * 1e9));
            for v in p.populations {
                csv.push(',');
                csv.push_str(&fmt_f64(v));
            }
            csv.push('\n');
        }
        out.write("fig3_truncation.csv", &csv)?;
        out.write("fig3_trace.csv", &full.to_csv())?;
    }
    if cfg.wants(Format::Json) {
        let meta = json!({ "command": "fig3", "delay_offset_ns": cfg.pulse.delay_offset_ns });
        out.write("fig3_trace.json", &full.to_json(meta)?)?;
    }
    let finals = full.final_populations();
    Ok(json!({
        "command": "fig3",
        "delay_offset_ns": cfg.pulse.delay_offset_ns,
        "p_ge": full.final_population("ge"),
        "p_gg": full.final_population("gg"),
        "final_populations": populations_json(&finals),
        "max_trace_error": full.max_trace_error(),
        "truncation_points": sweep.len(),
    }))
}

fn settings(cfg: &ExperimentConfig) -> Result<TomographySettings> {
    let readout = match cfg.readout_models()? {
        Some(models) => Some(ReadoutChain::new(
            models,
            cfg.readout.drifted_error,
            cfg.readout.calibration_shots,
        )?),
        None => None,
    };
    Ok(TomographySettings {
        shots: cfg.shot_budget(),
        readout,
        master_seed: cfg.seeds.master,
    })
}

fn process_summary(e: &ProcessEstimate) -> Value {
    json!({
        "process_fidelity": e.metrics.process_fidelity,
        "state_fidelity": e.metrics.state_fidelity,
        "chi_trace": e.metrics.chi_trace,
        "per_input_fidelity": e.metrics.per_input,
        "hs_to_noiseless": e.hs_to_reference,
    })
}

fn write_chi(cfg: &ExperimentConfig, out: &mut Artifacts, prefix: &str, variant: &str, chi: &CMatrix) -> Result<()> {
    if cfg.wants(Format::Json) {
        let doc = matrix_json(chi, json!({ "basis": PAULI_LABELS, "variant": variant }));
        out.json(&format!("{prefix}_chi_{variant}.json"), &doc)?;
    }
    if cfg.wants(Format::Csv) {
        out.write(&format!("{prefix}_chi_abs_{variant}.csv"), &abs_csv(chi, &PAULI_LABELS))?;
    }
    Ok(())
}

fn process_block(
    cfg: &ExperimentConfig,
    sys: &LinkSystem,
    offset: f64,
    out: &mut Artifacts,
    prefix: &str,
) -> Result<Value> {
    let run = process_experiment(sys, offset, &settings(cfg)?)?;
    write_chi(cfg, out, prefix, "noiseless", run.reference.chi.chi())?;
    write_chi(cfg, out, prefix, "unmitigated", run.unmitigated.chi.chi())?;
    if let Some(m) = &run.mitigated {
        write_chi(cfg, out, prefix, "mitigated", m.chi.chi())?;
    }
    if cfg.wants(Format::Json) {
        let records: Vec<Value> = run
            .records
            .iter()
            .map(|r| serde_json::to_value(r).map_err(|e| crate::Error::Parse(e.to_string())))
            .collect::<Result<_>>()?;
        out.json(&format!("{prefix}_records.json"), &Value::from(records))?;
    }
    let mitigated = run.mitigated.as_ref().filter(|_| cfg.tomography.mitigation);
    let headline = mitigated.unwrap_or(&run.unmitigated);
    Ok(json!({
        "virtual_z_phase_rad": run.phase,
        "process_fidelity": headline.metrics.process_fidelity,
        "state_fidelity": headline.metrics.state_fidelity,
        "mitigated": mitigated.is_some(),
        "noiseless": process_summary(&run.reference),
        "unmitigated": process_summary(&run.unmitigated),
        "readout_mitigated": run.mitigated.as_ref().map(process_summary),
    }))
}

fn bell_summary(e: &BellEstimate) -> Value {
    json!({
        "fidelity": e.analysis.fidelity,
        "concurrence": e.analysis.concurrence,
        "pauli": e.analysis.pauli,
        "qubit_trace": e.analysis.trace,
        "hs_to_noiseless": e.hs_to_reference,
    })
}

fn write_state(
    cfg: &ExperimentConfig,
    out: &mut Artifacts,
    prefix: &str,
    variant: &str,
    e: &BellEstimate,
) -> Result<()> {
    let rho = e.state.matrix();
    if cfg.wants(Format::Json) {
        let doc = matrix_json(rho, json!({ "basis": QUTRIT_PAIR_LABELS, "variant": variant }));
        out.json(&format!("{prefix}_rho_{variant}.json"), &doc)?;
    }
    if cfg.wants(Format::Csv) {
        out.write(
            &format!("{prefix}_rho_abs_{variant}.csv"),
            &abs_csv(rho, &QUTRIT_PAIR_LABELS),
        )?;
        let qubits = reduce_to_qubits(&e.state)?;
        out.write(
            &format!("{prefix}_rho_qubit_abs_{variant}.csv"),
            &abs_csv(qubits.matrix(), &QUBIT_PAIR_LABELS),
        )?;
    }
    Ok(())
}

fn bell_block(
    cfg: &ExperimentConfig,
    sys: &LinkSystem,
    offset: f64,
    out: &mut Artifacts,
    prefix: &str,
) -> Result<Value> {
    let run = bell_experiment(sys, offset, &settings(cfg)?)?;
    write_state(cfg, out, prefix, "noiseless", &run.reference)?;
    write_state(cfg, out, prefix, "unmitigated", &run.unmitigated)?;
    if let Some(m) = &run.mitigated {
        write_state(cfg, out, prefix, "mitigated", m)?;
    }
    if cfg.wants(Format::Json) {
        out.write(&format!("{prefix}_record.json"), &run.record.to_json()?)?;
    }
    let mitigated = run.mitigated.as_ref().filter(|_| cfg.tomography.mitigation);
    let headline = mitigated.unwrap_or(&run.unmitigated);
    Ok(json!({
        "virtual_z_phase_rad": run.phase,
        "fidelity": headline.analysis.fidelity,
        "concurrence": headline.analysis.concurrence,
        "mitigated": mitigated.is_some(),
        "noiseless": bell_summary(&run.reference),
        "unmitigated": bell_summary(&run.unmitigated),
        "readout_mitigated": run.mitigated.as_ref().map(bell_summary),
    }))
}

fn fig4_process(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    let mut s = process_block(cfg, &cfg.link_system()?, cfg.delay_offset(), out, "fig4_process")?;
    s["command"] = "fig4_process".into();
    Ok(s)
}

fn fig4_bell(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    let mut s = bell_block(cfg, &cfg.link_system()?, cfg.delay_offset(), out, "fig4_bell")?;
    s["command"] = "fig4_bell".into();
    Ok(s)
}

fn record_csv(r: &PhotonRecord) -> String {
    let mut csv = String::from("time_ns,power\n");
    for (t, p) in r.times.iter().zip(&r.power) {
        let _ = writeln!(csv, "{},{}", fmt_f64(t * 1e9), fmt_f64(*p));
    }
    csv
}

/// Normalised overlap of the emitted field amplitude with the target sech.
fn sech_overlap(r: &PhotonRecord, gamma: f64) -> Result<f64> {
    let shape = PhotonShape::new(gamma, 0.0)?;
    let target: Vec<f64> = r.times.iter().map(|&t| target_envelope(&shape, t)).collect();
    let field: Vec<f64> = r.power.iter().map(|p| p.max(0.0).sqrt()).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    Ok(dot(&field, &target) / (dot(&field, &field) * dot(&target, &target)).sqrt())
}

fn fig_s5(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    let sys = cfg.link_system()?;
    let rec = photon_records(&sys, cfg.delay_offset())?;
    if cfg.wants(Format::Csv) {
        out.write("figS5_emit_a.csv", &record_csv(&rec.emit_a))?;
        out.write("figS5_emit_b.csv", &record_csv(&rec.emit_b))?;
        out.write("figS5_emit_a_absorb_b.csv", &record_csv(&rec.emit_a_absorb_b))?;
    }
    if cfg.wants(Format::Json) {
        let doc = serde_json::to_value(&rec).map_err(|e| crate::Error::Parse(e.to_string()))?;
        out.json("figS5_records.json", &doc)?;
    }
    Ok(json!({
        "command": "figS5",
        "transmission": rec.transmission,
        "inferred_loss": 1.0 - rec.transmission,
        "absorption_efficiency": rec.absorption_efficiency,
        "emit_b_sech_overlap": sech_overlap(&rec.emit_b, sys.gamma)?,
    }))
}

fn lag_csv(sweep: &LagSweep) -> String {
    let mut csv = String::from("offset_ns,P_ge\n");
    for (o, p) in sweep.offsets.iter().zip(&sweep.p_ge) {
        let _ = writeln!(csv, "{},{}", fmt_f64(o * 1e9), fmt_f64(*p));
    }
    csv
}

fn lag_json(sweep: &LagSweep) -> Value {
    json!({
        "argmax_ns": sweep.argmax * 1e9,
        "refined_argmax_ns": sweep.refined_argmax * 1e9,
        "max_p_ge": sweep.p_ge[sweep.argmax_index],
    })
}

/// Lossless, decoherence-free nodes matched to the photon, with drive
/// windows wide enough that truncation is negligible.
pub fn untruncated_control(sys: &LinkSystem) -> LinkSystem {
    let mut control = LinkSystem::new(
        NodeModel::ideal(NodeLabel::A, sys.gamma),
        NodeModel::ideal(NodeLabel::B, sys.gamma),
        LinkModel::lossless(),
        sys.gamma,
    );
    control.half_window = Some(12.0 / sys.gamma);
    control.ramp = 0.0;
    control
}

fn lag_scan(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    let sys = cfg.link_system()?;
    let s = &cfg.sweep;
    let offsets: Vec<f64> = grid(s.lag_start_ns, s.lag_stop_ns, s.lag_step_ns)
        .iter()
        .map(|o| o * 1e-9)
        .collect();
    let sweep = lag_sweep(&sys, &offsets)?;
    let control_offsets: Vec<f64> = (-6..=6).map(|k| k as f64 * 1e-9).collect();
    let control = lag_sweep(&untruncated_control(&sys), &control_offsets)?;
    if cfg.wants(Format::Csv) {
        out.write("lag_scan.csv", &lag_csv(&sweep))?;
        out.write("lag_scan_control.csv", &lag_csv(&control))?;
    }
    if cfg.wants(Format::Json) {
        let doc = json!({ "truncated": sweep, "untruncated_control": control });
        out.json("lag_scan.json", &doc)?;
    }
    Ok(json!({
        "command": "lag_scan",
        "truncated": lag_json(&sweep),
        "untruncated_control": lag_json(&control),
    }))
}

fn waveguide(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    let w = &cfg.waveguide;
    let geom = cfg.geometry();
    let f0 = w.f0_ghz * 1e9;
    let alpha = attenuation(f0, w.q_loaded, &geom)?;
    let q_threshold = q_for_attenuation(f0, w.target_db_per_km, &geom)?;
    let budget = loss_budget(w.bound_db_per_km, w.length_m)?;
    let mut fitted = Value::Null;
    if let Some(path) = &w.spectrum_csv {
        let fits = fit_spectrum(&read_spectrum_csv(path)?, w.peak_threshold)?;
        out.write("waveguide_resonances.csv", &resonance_table_csv(&fits, &geom)?)?;
        fitted = fits
            .iter()
            .map(|f| {
                Ok(json!({
                    "f0_ghz": f.f0 * 1e-9,
                    "q_loaded": f.q_loaded,
                    "alpha_db_per_km": attenuation(f.f0, f.q_loaded, &geom)?.db_per_km,
                }))
            })
            .collect::<Result<Vec<_>>>()?
            .into();
    }
    Ok(json!({
        "command": "waveguide",
        "cutoff_ghz": geom.cutoff() * 1e-9,
        "alpha_np_per_m": alpha.np_per_m,
        "alpha_db_per_km": alpha.db_per_km,
        "q_for_target": q_threshold,
        "target_db_per_km": w.target_db_per_km,
        "loss_budget": budget,
        "bound_db_per_km": w.bound_db_per_km,
        "length_m": w.length_m,
        "resonances": fitted,
    }))
}

/// Projected-device performance: the physics of the `projected` profile
/// (unless the config already selects it), with the lag re-optimised for
/// the faster photon.
fn projected(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    let mut cfg = cfg.clone();
    if cfg.profile != "projected" {
        let p = ExperimentConfig::profile("projected")?;
        cfg.node_a = p.node_a;
        cfg.node_b = p.node_b;
        cfg.link = p.link;
        cfg.pulse.gamma_2pi_mhz = p.pulse.gamma_2pi_mhz;
        cfg.profile = p.profile;
    }
    let sys = cfg.link_system()?;
    let s = &cfg.sweep;
    let offsets: Vec<f64> = grid(s.lag_start_ns, s.lag_stop_ns, s.lag_step_ns)
        .iter()
        .map(|o| o * 1e-9)
        .collect();
    let lag = lag_sweep(&sys, &offsets)?;
    let offset = lag.refined_argmax;
    let process = process_block(&cfg, &sys, offset, out, "projected_process")?;
    let bell = bell_block(&cfg, &sys, offset, out, "projected_bell")?;
    Ok(json!({
        "command": "projected",
        "delay_offset_ns": offset * 1e9,
        "p_ge": run_transfer(&sys, offset, None)?.final_population("ge"),
        "noiseless_process_fidelity": process["noiseless"]["process_fidelity"],
        "noiseless_bell_fidelity": bell["noiseless"]["fidelity"],
        "process": process,
        "bell": bell,
    }))
}
