//! Cascaded two-node master equation: node models, generator, integrator and
//! the transfer experiments built on them.

mod experiments;
mod generator;
mod integrator;
mod model;
mod sparse;
mod trace;

pub use experiments::{
    lag_sweep, link_state, photon_record, photon_records, prepared_qutrit, product_pair, protocol_duration,
    protocol_duration_with_guard, run_protocol, run_sequence, run_transfer, truncation_sweep, Drives, LagSweep,
    LinkSystem, PhotonRecord, PhotonRecords, PhotonScenario, TruncationPoint,
};
pub use generator::{build_generator, link_space, two_transmon_index, Generator, QA, QB, RA, RB, TWO_TRANSMON_LABELS};
pub use integrator::{Dopri5, IntegrationStats, IntegratorOptions};
pub use model::{DephasingRates, LinkModel, NodeLabel, NodeModel, Preparation};
pub use sparse::SparseOp;
pub use trace::{evolve, pair_populations_of, EvolveOptions, ExperimentTrace, STATE_TOLERANCE};
