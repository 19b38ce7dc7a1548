use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::pulse::PulseSchedule;
use crate::quantum::{annihilation, projector, transition, CMatrix, HilbertSpace, Operator, C64};

use super::model::{LinkModel, NodeModel};
use super::sparse::{LindbladKernel, SparseOp};

// Reported once per process; every sweep point rebuilds the generator.
static CLIPPED_WARNED: AtomicBool = AtomicBool::new(false);

pub const QA: &str = "qa";
pub const RA: &str = "ra";
pub const QB: &str = "qb";
pub const RB: &str = "rb";

/// Two-transmon population labels `|AB⟩`, in reporting order.
pub const TWO_TRANSMON_LABELS: [&str; 9] = ["gg", "ge", "eg", "ee", "gf", "fg", "ef", "fe", "ff"];

const LEVELS: [char; 3] = ['g', 'e', 'f'];

pub fn two_transmon_index(qa: usize, qb: usize) -> usize {
    let label: String = [LEVELS[qa], LEVELS[qb]].iter().collect();
    TWO_TRANSMON_LABELS
        .iter()
        .position(|l| *l == label)
        .expect("all level pairs are labelled")
}

/// `qa ⊗ ra ⊗ qb ⊗ rb` with the nodes' Fock truncations.
pub fn link_space(node_a: &NodeModel, node_b: &NodeModel) -> Result<HilbertSpace> {
    HilbertSpace::new([
        (QA, 3),
        (RA, node_a.fock_cutoff + 1),
        (QB, 3),
        (RB, node_b.fock_cutoff + 1),
    ])
}

/// Time-dependent Lindblad generator of the cascaded link, immutable once built.
#[derive(Clone, Debug)]
pub struct Generator {
    space: HilbertSpace,
    static_part: SparseOp,
    drives: Vec<(SparseOp, PulseSchedule)>,
    jumps: Vec<SparseOp>,
    output: SparseOp,
    output_flux: SparseOp,
    pair_index: Vec<usize>,
}

/// Build the cascaded master equation.
///
/// Node B's schedule is shifted by `delay_offset`; the waveguide delay itself
/// is absorbed into B's retarded time frame because the cascade is Markovian.
pub fn build_generator(
    node_a: &NodeModel,
    node_b: &NodeModel,
    link: &LinkModel,
    sched_a: &PulseSchedule,
    sched_b: &PulseSchedule,
    delay_offset: f64,
) -> Result<Generator> {
    node_a.validate()?;
    node_b.validate()?;
    link.validate()?;
    for (node, sched) in [(node_a, sched_a), (node_b, sched_b)] {
        if sched.scale != 0.0 && ((sched.kappa - node.kappa) / node.kappa).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "schedule κ = {:.6e} rad/s inconsistent with node {} κ = {:.6e} rad/s",
                sched.kappa,
                node.label.as_str(),
                node.kappa
            )));
        }
    }
    if !delay_offset.is_finite() {
        return Err(Error::Argument("delay offset must be finite".into()));
    }

    let space = link_space(node_a, node_b)?;
    let embed = |label: &str, m: &CMatrix| -> Result<CMatrix> { Ok(Operator::embed(&space, label, m)?.into_matrix()) };
    let a = embed(RA, &annihilation(node_a.fock_cutoff + 1))?;
    let b = embed(RB, &annihilation(node_b.fock_cutoff + 1))?;
    let d = space.dim();
    let i = C64::new(0.0, 1.0);

    // |g⟩⟨f| ⊗ a† + h.c. exchanges |f,n⟩ ↔ |g,n+1⟩.
    let exchange = |q: &str, r: &CMatrix| -> Result<CMatrix> {
        let gf = embed(q, &transition(3, 0, 2))?;
        let term = &gf * r.adjoint();
        Ok(&term + term.adjoint())
    };
    let h_a = exchange(QA, &a)?;
    let h_b = exchange(QB, &b)?;

    let mut jumps = Vec::new();
    for (node, q) in [(node_a, QA), (node_b, QB)] {
        jumps.push(embed(q, &transition(3, 0, 1))?.scale(node.decay_ge().sqrt()));
        jumps.push(embed(q, &transition(3, 1, 2))?.scale(node.decay_ef().sqrt()));
        let rates = node.dephasing_rates();
        if rates.ef_clipped && !CLIPPED_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!(
                "node {}: T2e_ef is above its relaxation limit; e-f pure dephasing set to 0",
                node.label.as_str()
            );
        }
        let upper = embed(q, &(projector(3, 1) + projector(3, 2)))?;
        jumps.push(upper.scale((2.0 * rates.ge).sqrt()));
        jumps.push(embed(q, &projector(3, 2))?.scale((2.0 * rates.ef).sqrt()));
    }
    let kappa_a_out = (1.0 - link.loss) * node_a.kappa;
    let phase = C64::from_polar(1.0, link.cascade_phase);
    let cascade = a.scale(kappa_a_out.sqrt()) + b.map(|z| z * phase).scale(node_b.kappa.sqrt());
    jumps.push(a.scale((link.loss * node_a.kappa).sqrt()));
    jumps.push(cascade.clone());
    jumps.retain(|m| m.iter().any(|z| z.norm() > 0.0));

    // Cascade Hamiltonian making A drive B but not the reverse.
    let coupling = 0.5 * (kappa_a_out * node_b.kappa).sqrt();
    let ab = (a.adjoint() * &b).map(|z| z * phase);
    let h_cascade = (&ab - ab.adjoint()).map(|z| z * i * coupling);

    let mut m0 = h_cascade.map(|z| -i * z);
    for l in &jumps {
        m0 -= (l.adjoint() * l).unscale(2.0);
    }
    debug_assert_eq!(m0.nrows(), d);

    let sched_b = sched_b.clone().shifted(delay_offset);
    let drives = vec![
        (SparseOp::from_dense(&h_a.map(|z| -i * z)), sched_a.clone()),
        (SparseOp::from_dense(&h_b.map(|z| -i * z)), sched_b),
    ];

    let pair_index = (0..d)
        .map(|k| {
            let dig = space.digits(k);
            two_transmon_index(dig[0], dig[2])
        })
        .collect();

    Ok(Generator {
        output_flux: SparseOp::from_dense(&(cascade.adjoint() * &cascade)),
        output: SparseOp::from_dense(&cascade),
        static_part: SparseOp::from_dense(&m0),
        jumps: jumps.iter().map(SparseOp::from_dense).collect(),
        drives,
        space,
        pair_index,
    })
}

impl Generator {
    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn schedules(&self) -> impl Iterator<Item = &PulseSchedule> {
        self.drives.iter().map(|(_, s)| s)
    }

    /// Kinks and jumps of the drive waveforms, sorted.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .drives
            .iter()
            .filter(|(_, s)| s.scale != 0.0)
            .flat_map(|(_, s)| s.breakpoints())
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// `dρ/dt` with drive rates sampled at `t` clamped into `[lo, hi]`, so a
    /// segment bounded by breakpoints sees the waveform from its interior.
    pub(crate) fn rhs(&self, t: f64, span: (f64, f64), rho: &[C64], out: &mut [C64], scratch: &mut Vec<C64>) {
        let eta = 1e-9 * (span.1 - span.0);
        let ts = t.clamp(span.0 + eta, span.1 - eta);
        let drives: Vec<(f64, &SparseOp)> = self.drives.iter().map(|(op, s)| (s.rate_at(ts), op)).collect();
        LindbladKernel {
            static_part: &self.static_part,
            jumps: &self.jumps,
        }
        .apply(&drives, rho, out, scratch);
    }

    /// `⟨L_cascade⟩` — the field leaving the link after node B.
    pub fn output_field(&self, rho: &[C64]) -> C64 {
        self.output.expectation(rho)
    }

    /// `⟨L†L⟩` — the outgoing photon flux.
    pub fn output_flux(&self, rho: &[C64]) -> f64 {
        self.output_flux.expectation(rho).re
    }

    /// Two-transmon populations in [`TWO_TRANSMON_LABELS`] order.
    pub fn pair_populations(&self, rho: &[C64]) -> [f64; 9] {
        let d = self.dim();
        let mut out = [0.0; 9];
        for (k, &p) in self.pair_index.iter().enumerate() {
            out[p] += rho[k * d + k].re;
        }
        out
    }
}
