use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{EvolveOptions, LinkModel, LinkSystem, NodeLabel, NodeModel, Preparation};
use crate::error::{Error, Result};
use crate::pulse::{DriveFormula, DEFAULT_RAMP, DEFAULT_SAMPLE_DT};
use crate::readout::{solve_geometry, GeometryTargets, TriModalModel};
use crate::tomography::ShotBudget;
use crate::waveguide::{WaveguideGeometry, SPEED_OF_LIGHT, WR90_WIDTH};

pub const DEFAULT_PROFILE: &str = "paper_tableS1";
pub const PROFILES: [&str; 2] = ["paper_tableS1", "projected"];

const MHZ_2PI: f64 = 2.0 * PI * 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub t1_ge_us: f64,
    pub t1_ef_us: f64,
    pub t2e_ge_us: f64,
    pub t2e_ef_us: f64,
    pub kappa_2pi_mhz: f64,
    pub thermal_population: f64,
    pub reset_residual: f64,
    pub fock_cutoff: usize,
}

impl NodeConfig {
    fn from_model(n: &NodeModel) -> Self {
        Self {
            t1_ge_us: n.t1_ge * 1e6,
            t1_ef_us: n.t1_ef * 1e6,
            t2e_ge_us: n.t2e_ge * 1e6,
            t2e_ef_us: n.t2e_ef * 1e6,
            kappa_2pi_mhz: n.kappa / MHZ_2PI,
            thermal_population: n.thermal_population,
            reset_residual: n.reset_residual,
            fock_cutoff: n.fock_cutoff,
        }
    }

    pub fn to_model(&self, label: NodeLabel) -> NodeModel {
        NodeModel {
            label,
            t1_ge: self.t1_ge_us * 1e-6,
            t1_ef: self.t1_ef_us * 1e-6,
            t2e_ge: self.t2e_ge_us * 1e-6,
            t2e_ef: self.t2e_ef_us * 1e-6,
            kappa: self.kappa_2pi_mhz * MHZ_2PI,
            thermal_population: self.thermal_population,
            reset_residual: self.reset_residual,
            fock_cutoff: self.fock_cutoff,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub loss: f64,
    pub propagation_delay_ns: f64,
    pub cascade_phase_rad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseConfig {
    pub gamma_2pi_mhz: f64,
    pub delay_offset_ns: f64,
    pub ramp_ns: f64,
    pub sample_dt_ns: f64,
    /// Omitted: ±4.6/Γ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_window_ns: Option<f64>,
    pub grid_dt_ns: f64,
    pub formula: DriveFormula,
    pub preparation: Preparation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    /// Tri-modal IQ readout with assignment errors and drift.
    Simulated,
    /// Perfect state assignment.
    Ideal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub mode: ReadoutMode,
    pub sigma: f64,
    pub a_ground_error: f64,
    pub a_average_error: f64,
    pub b_ground_error: f64,
    pub b_average_error: f64,
    /// Per-qutrit average error after drift during the experiment; omitted
    /// means the calibrated readout is used unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drifted_error: Option<f64>,
    /// Shots per prepared state when measuring the assignment matrix.
    pub calibration_shots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyConfig {
    pub shots: usize,
    /// Use exact outcome probabilities instead of sampling.
    pub infinite_shots: bool,
    pub mitigation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub tau_start_ns: f64,
    pub tau_stop_ns: f64,
    pub tau_step_ns: f64,
    pub lag_start_ns: f64,
    pub lag_stop_ns: f64,
    pub lag_step_ns: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveguideConfig {
    pub width_mm: f64,
    pub f0_ghz: f64,
    pub q_loaded: f64,
    pub target_db_per_km: f64,
    pub bound_db_per_km: f64,
    pub length_m: f64,
    /// Wide-scan transmission CSV to fit; omitted: only the Q↔α conversion runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum_csv: Option<PathBuf>,
    pub peak_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedConfig {
    pub master: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    pub formats: Vec<Format>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: String,
    pub node_a: NodeConfig,
    pub node_b: NodeConfig,
    pub link: LinkConfig,
    pub pulse: PulseConfig,
    pub readout: ReadoutConfig,
    pub tomography: TomographyConfig,
    pub sweep: SweepConfig,
    pub waveguide: WaveguideConfig,
    pub seeds: SeedConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Built-in parameter sets.
    pub fn profile(name: &str) -> Result<Self> {
        let base = Self::characterised();
        match name {
            "paper_tableS1" => Ok(base),
            "projected" => Ok(Self::projected(base)),
            other => Err(Error::Config(format!(
                "unknown profile `{other}` (available: {})",
                PROFILES.join(", ")
            ))),
        }
    }

    fn characterised() -> Self {
        let reference = LinkModel::reference();
        Self {
            profile: DEFAULT_PROFILE.into(),
            node_a: NodeConfig::from_model(&NodeModel::reference_a()),
            node_b: NodeConfig::from_model(&NodeModel::reference_b()),
            link: LinkConfig {
                loss: reference.loss,
                propagation_delay_ns: reference.propagation_delay * 1e9,
                cascade_phase_rad: reference.cascade_phase,
            },
            pulse: PulseConfig {
                gamma_2pi_mhz: 6.25,
                delay_offset_ns: 10.0,
                ramp_ns: DEFAULT_RAMP * 1e9,
                sample_dt_ns: DEFAULT_SAMPLE_DT * 1e9,
                half_window_ns: None,
                grid_dt_ns: 1.0,
                formula: DriveFormula::ClosedForm,
                preparation: Preparation::Ideal,
            },
            readout: ReadoutConfig {
                mode: ReadoutMode::Simulated,
                sigma: 1.0,
                a_ground_error: 0.013,
                a_average_error: 0.034,
                b_ground_error: 0.006,
                b_average_error: 0.029,
                drifted_error: Some(0.05),
                calibration_shots: 4000,
            },
            tomography: TomographyConfig {
                shots: 4000,
                infinite_shots: false,
                mitigation: true,
            },
            sweep: SweepConfig {
                tau_start_ns: 0.0,
                tau_stop_ns: 240.0,
                tau_step_ns: 5.0,
                lag_start_ns: -10.0,
                lag_stop_ns: 30.0,
                lag_step_ns: 2.0,
            },
            waveguide: WaveguideConfig {
                width_mm: WR90_WIDTH * 1e3,
                f0_ghz: 8.4056,
                q_loaded: 1e6,
                target_db_per_km: 1.0,
                bound_db_per_km: 0.8,
                length_m: 4.9,
                spectrum_csv: None,
                peak_threshold: 0.3,
            },
            seeds: SeedConfig { master: 0 },
            output: OutputConfig {
                directory: None,
                formats: vec![Format::Csv, Format::Json],
            },
        }
    }

    /// Improved coherence and bandwidth with a 5 % link loss.
    fn projected(mut c: Self) -> Self {
        for node in [&mut c.node_a, &mut c.node_b] {
            node.t1_ge_us = 30.0;
            node.t1_ef_us = 30.0;
            node.t2e_ge_us = 30.0;
            node.t2e_ef_us = 30.0;
            node.kappa_2pi_mhz = 12.0;
        }
        c.pulse.gamma_2pi_mhz = 12.0;
        c.link.loss = 0.05;
        c.profile = "projected".into();
        c
    }

    /// Parse TOML text; keys not given fall back to the selected profile
    /// (`profile = "..."`, default `paper_tableS1`).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let name = match user.get("profile") {
            None => DEFAULT_PROFILE,
            Some(toml::Value::String(s)) => s.as_str(),
            Some(_) => return Err(Error::validation("profile", "must be a string")),
        };
        let base = Self::profile(name)?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let mut unknown = Vec::new();
        let cfg: Self = serde_ignored::deserialize(toml::Value::Table(merged), |path| unknown.push(path.to_string()))
            .map_err(|e| Error::Config(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.link_system()?.validate()?;
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(field, format!("must be positive, got {v}")))
            }
        };
        positive("pulse.gamma_2pi_mhz", self.pulse.gamma_2pi_mhz)?;
        positive("pulse.sample_dt_ns", self.pulse.sample_dt_ns)?;
        positive("pulse.grid_dt_ns", self.pulse.grid_dt_ns)?;
        if !(self.pulse.ramp_ns >= 0.0) {
            return Err(Error::validation("pulse.ramp_ns", "must be ≥ 0"));
        }
        if let Some(h) = self.pulse.half_window_ns {
            positive("pulse.half_window_ns", h)?;
        }
        if !self.pulse.delay_offset_ns.is_finite() {
            return Err(Error::validation("pulse.delay_offset_ns", "must be finite"));
        }
        positive("readout.sigma", self.readout.sigma)?;
        for (field, v) in [
            ("readout.a_ground_error", self.readout.a_ground_error),
            ("readout.a_average_error", self.readout.a_average_error),
            ("readout.b_ground_error", self.readout.b_ground_error),
            ("readout.b_average_error", self.readout.b_average_error),
        ] {
            if !(v > 0.0 && v < 0.5) {
                return Err(Error::validation(field, format!("must lie in (0, 0.5), got {v}")));
            }
        }
        if let Some(d) = self.readout.drifted_error {
            let floor = self.readout.a_average_error.max(self.readout.b_average_error);
            if !(d >= floor && d < 0.5) {
                return Err(Error::validation(
                    "readout.drifted_error",
                    format!("must lie in [{floor}, 0.5), got {d}"),
                ));
            }
        }
        if self.readout.calibration_shots == 0 {
            return Err(Error::validation("readout.calibration_shots", "must be > 0"));
        }
        if self.tomography.shots == 0 && !self.tomography.infinite_shots {
            return Err(Error::validation("tomography.shots", "must be > 0"));
        }
        let s = &self.sweep;
        positive("sweep.tau_step_ns", s.tau_step_ns)?;
        positive("sweep.lag_step_ns", s.lag_step_ns)?;
        if !(s.tau_stop_ns >= s.tau_start_ns) {
            return Err(Error::validation("sweep.tau_stop_ns", "must be ≥ tau_start_ns"));
        }
        if !(s.lag_stop_ns >= s.lag_start_ns) {
            return Err(Error::validation("sweep.lag_stop_ns", "must be ≥ lag_start_ns"));
        }
        let w = &self.waveguide;
        positive("waveguide.width_mm", w.width_mm)?;
        positive("waveguide.f0_ghz", w.f0_ghz)?;
        positive("waveguide.q_loaded", w.q_loaded)?;
        positive("waveguide.target_db_per_km", w.target_db_per_km)?;
        positive("waveguide.bound_db_per_km", w.bound_db_per_km)?;
        if !(w.length_m >= 0.0) {
            return Err(Error::validation("waveguide.length_m", "must be ≥ 0"));
        }
        if !(w.peak_threshold > 0.0 && w.peak_threshold < 1.0) {
            return Err(Error::validation("waveguide.peak_threshold", "must lie in (0, 1)"));
        }
        if self.output.formats.is_empty() {
            return Err(Error::validation("output.formats", "needs at least one format"));
        }
        Ok(())
    }

    pub fn link_system(&self) -> Result<LinkSystem> {
        let link = LinkModel {
            loss: self.link.loss,
            propagation_delay: self.link.propagation_delay_ns * 1e-9,
            cascade_phase: self.link.cascade_phase_rad,
        };
        Ok(LinkSystem {
            node_a: self.node_a.to_model(NodeLabel::A),
            node_b: self.node_b.to_model(NodeLabel::B),
            link,
            gamma: self.pulse.gamma_2pi_mhz * MHZ_2PI,
            ramp: self.pulse.ramp_ns * 1e-9,
            sample_dt: self.pulse.sample_dt_ns * 1e-9,
            half_window: self.pulse.half_window_ns.map(|h| h * 1e-9),
            preparation: self.pulse.preparation,
            formula: self.pulse.formula,
            grid_dt: self.pulse.grid_dt_ns * 1e-9,
            evolve: EvolveOptions::default(),
        })
    }

    pub fn delay_offset(&self) -> f64 {
        self.pulse.delay_offset_ns * 1e-9
    }

    /// Calibrated readout models for qutrits A and B; `None` for ideal readout.
    pub fn readout_models(&self) -> Result<Option<[TriModalModel; 2]>> {
        if self.readout.mode == ReadoutMode::Ideal {
            return Ok(None);
        }
        let r = &self.readout;
        let a = solve_geometry(
            &GeometryTargets::from_average(r.a_ground_error, r.a_average_error)?,
            r.sigma,
        )?;
        let b = solve_geometry(
            &GeometryTargets::from_average(r.b_ground_error, r.b_average_error)?,
            r.sigma,
        )?;
        Ok(Some([a, b]))
    }

    pub fn shot_budget(&self) -> ShotBudget {
        if self.tomography.infinite_shots {
            ShotBudget::Infinite
        } else {
            ShotBudget::Finite(self.tomography.shots)
        }
    }

    pub fn geometry(&self) -> WaveguideGeometry {
        WaveguideGeometry {
            width_a: self.waveguide.width_mm * 1e-3,
            light_speed: SPEED_OF_LIGHT,
        }
    }

    pub fn wants(&self, format: Format) -> bool {
        self.output.formats.contains(&format)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text)
}
