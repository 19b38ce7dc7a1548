use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeLabel {
    A,
    B,
}

impl NodeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeLabel::A => "A",
            NodeLabel::B => "B",
        }
    }
}

/// How a qutrit is initialised before the ideal preparation gates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preparation {
    #[default]
    Ideal,
    /// Active reset leaves `reset_residual` in |e⟩.
    ResetResidual,
    /// No reset: thermal population in |e⟩.
    Thermal,
}

/// One transmon qutrit with its transfer resonator. Times in seconds, `kappa` in rad/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeModel {
    pub label: NodeLabel,
    pub t1_ge: f64,
    pub t1_ef: f64,
    pub t2e_ge: f64,
    pub t2e_ef: f64,
    pub kappa: f64,
    pub thermal_population: f64,
    pub reset_residual: f64,
    pub fock_cutoff: usize,
}

/// Pure-dephasing rates of the two diagonal operators used for a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DephasingRates {
    pub ge: f64,
    pub ef: f64,
    /// The requested e-f echo time implied a negative rate and was clipped.
    pub ef_clipped: bool,
}

impl NodeModel {
    /// Chip A as characterised for the two-node experiment.
    pub fn reference_a() -> Self {
        Self {
            label: NodeLabel::A,
            t1_ge: 12.2e-6,
            t1_ef: 4.9e-6,
            t2e_ge: 7.6e-6,
            t2e_ef: 7.1e-6,
            kappa: 2.0 * PI * 8.6e6,
            thermal_population: 0.162,
            reset_residual: 0.0008,
            fock_cutoff: 1,
        }
    }

    pub fn reference_b() -> Self {
        Self {
            label: NodeLabel::B,
            t1_ge: 11.7e-6,
            t1_ef: 5.0e-6,
            t2e_ge: 5.0e-6,
            t2e_ef: 5.0e-6,
            kappa: 2.0 * PI * 6.25e6,
            thermal_population: 0.168,
            reset_residual: 0.0012,
            fock_cutoff: 1,
        }
    }

    /// Decoherence-free node with the given bandwidth.
    pub fn ideal(label: NodeLabel, kappa: f64) -> Self {
        Self {
            label,
            t1_ge: f64::INFINITY,
            t1_ef: f64::INFINITY,
            t2e_ge: f64::INFINITY,
            t2e_ef: f64::INFINITY,
            kappa,
            thermal_population: 0.0,
            reset_residual: 0.0,
            fock_cutoff: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("node {}: {name}", self.label.as_str());
        for (name, v) in [
            ("t1_ge", self.t1_ge),
            ("t1_ef", self.t1_ef),
            ("t2e_ge", self.t2e_ge),
            ("t2e_ef", self.t2e_ef),
        ] {
            if !(v > 0.0) {
                return Err(Error::validation(field(name), format!("must be > 0, got {v}")));
            }
        }
        if self.t2e_ge > 2.0 * self.t1_ge && self.t1_ge.is_finite() {
            return Err(Error::validation(
                field("t2e_ge"),
                format!("{} s exceeds 2·T1 = {} s", self.t2e_ge, 2.0 * self.t1_ge),
            ));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::validation(field("kappa"), "must be finite and > 0"));
        }
        for (name, p) in [
            ("thermal_population", self.thermal_population),
            ("reset_residual", self.reset_residual),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::validation(field(name), format!("must lie in [0, 1), got {p}")));
            }
        }
        if self.fock_cutoff < 1 {
            return Err(Error::validation(field("fock_cutoff"), "must be ≥ 1"));
        }
        Ok(())
    }

    pub fn decay_ge(&self) -> f64 {
        1.0 / self.t1_ge
    }

    pub fn decay_ef(&self) -> f64 {
        1.0 / self.t1_ef
    }

    /// Rates `r_ge`, `r_ef` such that ge coherences decay at `1/T2e_ge` and
    /// ef coherences at `1/T2e_ef` once relaxation is included.
    pub fn dephasing_rates(&self) -> DephasingRates {
        let ge = (1.0 / self.t2e_ge - 0.5 * self.decay_ge()).max(0.0);
        let raw_ef = 1.0 / self.t2e_ef - 0.5 * (self.decay_ge() + self.decay_ef());
        DephasingRates {
            ge,
            ef: raw_ef.max(0.0),
            ef_clipped: raw_ef < 0.0,
        }
    }

    /// Excited-state population before preparation gates.
    pub fn initial_excited_population(&self, prep: Preparation) -> f64 {
        match prep {
            Preparation::Ideal => 0.0,
            Preparation::ResetResidual => self.reset_residual,
            Preparation::Thermal => self.thermal_population,
        }
    }
}

/// Waveguide between the nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub loss: f64,
    pub propagation_delay: f64,
    pub cascade_phase: f64,
}

impl LinkModel {
    pub fn reference() -> Self {
        Self {
            loss: 0.223,
            propagation_delay: 28e-9,
            cascade_phase: 0.0,
        }
    }

    pub fn lossless() -> Self {
        Self {
            loss: 0.0,
            propagation_delay: 0.0,
            cascade_phase: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // l = 1 is kept legal: it is the fully-lossy limiting case.
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(Error::validation(
                "link.loss",
                format!("must lie in [0, 1], got {}", self.loss),
            ));
        }
        if !(self.propagation_delay >= 0.0) {
            return Err(Error::validation("link.propagation_delay", "must be ≥ 0"));
        }
        if !self.cascade_phase.is_finite() {
            return Err(Error::validation("link.cascade_phase", "must be finite"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_nodes_validate() {
        NodeModel::reference_a().validate().unwrap();
        NodeModel::reference_b().validate().unwrap();
        NodeModel::ideal(NodeLabel::A, 1e7).validate().unwrap();
        LinkModel::reference().validate().unwrap();
    }

    #[test]
    fn rejects_unphysical_t2() {
        let mut n = NodeModel::reference_a();
        n.t2e_ge = 2.5 * n.t1_ge;
        assert!(n.validate().is_err());
        n.t2e_ge = -1.0;
        assert!(n.validate().is_err());
    }

    #[test]
    fn rejects_out_of_range_probabilities() {
        let mut n = NodeModel::reference_b();
        n.reset_residual = 1.0;
        assert!(n.validate().is_err());
        let mut l = LinkModel::reference();
        l.loss = 1.5;
        assert!(l.validate().is_err());
        l.loss = 1.0;
        assert!(l.validate().is_ok());
        l.loss = 0.2;
        l.propagation_delay = -1e-9;
        assert!(l.validate().is_err());
    }

    #[test]
    fn chip_a_ef_echo_is_decay_limited() {
        // T2e_ef = 7.1 µs sits just above the 2/(Γge+Γef) ≈ 6.99 µs bound.
        let r = NodeModel::reference_a().dephasing_rates();
        assert!(r.ef_clipped);
        assert_eq!(r.ef, 0.0);
        let r = NodeModel::reference_b().dephasing_rates();
        assert!(!r.ef_clipped);
        assert!(r.ef > 0.0 && r.ge > 0.0);
    }
}
