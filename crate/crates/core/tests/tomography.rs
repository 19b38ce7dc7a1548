use std::f64::consts::{FRAC_1_SQRT_2, PI};

use proptest::prelude::*;
use qlink::dynamics::{prepared_qutrit, product_pair, run_protocol, LinkSystem};
use qlink::quantum::*;
use qlink::readout::{solve_geometry, GeometryTargets};
use qlink::tomography::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn random_state(rng: &mut impl Rng, d: usize) -> CMatrix {
    let g = CMatrix::from_fn(d, d, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    m.unscale(tr)
}

fn qutrit_state(amps: [C64; 3]) -> DensityMatrix {
    let s = PureState::normalized(HilbertSpace::qutrit("q"), CVector::from_vec(amps.to_vec())).unwrap();
    DensityMatrix::from_pure(&s)
}

fn perfect(rho: &DensityMatrix) -> TomographyRecord {
    simulate_tomography(rho, &RotationSet::standard(), None, ShotBudget::Infinite, 0).unwrap()
}

fn setting(record: &TomographyRecord, name: &str) -> Vec<f64> {
    let k = record.settings.iter().position(|s| s == name).unwrap();
    record.frequencies[k].clone()
}

#[test]
fn ground_state_identity_setting_reads_g() {
    let rho = qutrit_state([c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
    let rec = simulate_tomography(&rho, &RotationSet::standard(), None, ShotBudget::Finite(500), 1).unwrap();
    let k = rec.settings.iter().position(|s| s == "I").unwrap();
    assert_eq!(rec.counts.as_ref().unwrap()[k], vec![500, 0, 0]);
}

#[test]
fn rotation_phase_convention() {
    let s = FRAC_1_SQRT_2;
    let plus_y = perfect(&qutrit_state([c(s, 0.0), c(0.0, s), c(0.0, 0.0)]));
    let f = setting(&plus_y, "X90_ge");
    assert!((f[0] - 1.0).abs() < 1e-12 && f[1].abs() < 1e-12);
    let plus_x = perfect(&qutrit_state([c(s, 0.0), c(s, 0.0), c(0.0, 0.0)]));
    let f = setting(&plus_x, "Y90_ge");
    assert!(f[0].abs() < 1e-12 && (f[1] - 1.0).abs() < 1e-12);
    // e–f rotations leave g untouched
    let g = perfect(&qutrit_state([c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]));
    assert!((setting(&g, "X90_ef")[0] - 1.0).abs() < 1e-12);
    assert!((setting(&g, "X180_ef*X180_ge")[2] - 1.0).abs() < 1e-12);
}

#[test]
fn self_consistency_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let space = HilbertSpace::qutrit("q");
    for _ in 0..25 {
        let rho = DensityMatrix::new(space.clone(), random_state(&mut rng, 3)).unwrap();
        let fit = mle_state(&perfect(&rho), &MleOptions::default()).unwrap();
        assert!(hs_distance(fit.state.matrix(), rho.matrix()).unwrap() < 1e-6);
    }
    let space = HilbertSpace::two_qutrits();
    for _ in 0..25 {
        let rho = DensityMatrix::new(space.clone(), random_state(&mut rng, 9)).unwrap();
        let fit = mle_state(&perfect(&rho), &MleOptions::default()).unwrap();
        assert!(hs_distance(fit.state.matrix(), rho.matrix()).unwrap() < 1e-6);
    }
}

#[test]
fn mitigation_inside_likelihood_is_exact_at_infinite_shots() {
    let model = solve_geometry(&GeometryTargets::uniform(0.05), 1.0).unwrap();
    let readout = [
        QutritReadout::calibrated(model.clone()),
        QutritReadout::calibrated(model),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rho = DensityMatrix::new(HilbertSpace::two_qutrits(), random_state(&mut rng, 9)).unwrap();
    let rec = simulate_tomography(&rho, &RotationSet::standard(), Some(&readout), ShotBudget::Infinite, 0).unwrap();
    let r = qlink::readout::joint_matrix(
        &readout[0].expected_matrix().unwrap(),
        &readout[1].expected_matrix().unwrap(),
    )
    .unwrap();
    let raw = mle_state(&rec, &MleOptions::default()).unwrap();
    assert!(hs_distance(raw.state.matrix(), rho.matrix()).unwrap() > 1e-3);
    let fixed = mle_state(&rec.with_mitigation(Some(r)), &MleOptions::default()).unwrap();
    assert!(hs_distance(fixed.state.matrix(), rho.matrix()).unwrap() < 1e-6);
}

#[test]
fn frequencies_converge_as_inverse_root_shots() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rho = DensityMatrix::new(HilbertSpace::qutrit("q"), random_state(&mut rng, 3)).unwrap();
    let exact = perfect(&rho);
    let rms = |n: usize| {
        let mut acc = 0.0;
        let mut count = 0.0;
        for seed in 0..20 {
            let rec = simulate_tomography(&rho, &RotationSet::standard(), None, ShotBudget::Finite(n), seed).unwrap();
            for (f, p) in rec.frequencies.iter().zip(&exact.frequencies) {
                for (a, b) in f.iter().zip(p) {
                    acc += (a - b).powi(2);
                    count += 1.0;
                }
            }
        }
        (acc / count).sqrt()
    };
    let ratio = rms(1_000) / rms(100_000);
    assert!((7.0..14.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn ground_pair_with_perfect_readout() {
    let mut v = CVector::zeros(9);
    v[0] = c(1.0, 0.0);
    let gg = DensityMatrix::from_pure(&PureState::new(HilbertSpace::two_qutrits(), v).unwrap());
    let rec = simulate_tomography(&gg, &RotationSet::standard(), None, ShotBudget::DEFAULT, 5).unwrap();
    let fit = mle_state(&rec, &MleOptions::default()).unwrap();
    assert!(fit.state.matrix()[(0, 0)].re > 0.999);
    assert!(fit.history.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn log_likelihood_never_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rho = DensityMatrix::new(HilbertSpace::two_qutrits(), random_state(&mut rng, 9)).unwrap();
    let rec = simulate_tomography(&rho, &RotationSet::standard(), None, ShotBudget::Finite(300), 2).unwrap();
    let fit = mle_state(&rec, &MleOptions::default()).unwrap();
    assert!(fit.iterations > 0);
    assert!(fit.history.windows(2).all(|w| w[1] >= w[0]));
    assert!(fit.state.min_eigenvalue() > -1e-12);
    assert!((fit.state.trace() - 1.0).abs() < 1e-12);
}

fn bell_protocol_state() -> DensityMatrix {
    let sys = LinkSystem::reference();
    let u = qutrit_rotation(QutritTransition::Ef, RotationAxis::X, PI / 2.0)
        * qutrit_rotation(QutritTransition::Ge, RotationAxis::X, PI);
    let rho_a = prepared_qutrit(&sys.node_a, sys.preparation, &u);
    let rho_b = prepared_qutrit(&sys.node_b, sys.preparation, &CMatrix::identity(3, 3));
    let trace = run_protocol(&sys, 10e-9, &product_pair(&rho_a, &rho_b)).unwrap();
    partial_trace(&trace.final_state, &["qa", "qb"]).unwrap()
}

#[test]
fn bell_protocol_reconstruction_and_reduction() {
    let rho = bell_protocol_state();
    for seed in 0..3 {
        let rec = simulate_tomography(&rho, &RotationSet::standard(), None, ShotBudget::DEFAULT, seed).unwrap();
        let fit = mle_state(&rec, &MleOptions::default()).unwrap();
        let d = hs_distance(fit.state.matrix(), rho.matrix()).unwrap();
        assert!(d < 0.03, "seed {seed}: {d}");
    }
    // block trace equals the population outside f on both qutrits
    let reduced = reduce_to_qubits(&rho).unwrap();
    assert!(reduced.is_subnormalized());
    let pops = rho.populations();
    let block: f64 = [0, 1, 3, 4].iter().map(|&i| pops[i]).sum();
    assert!((reduced.trace() - block).abs() < 1e-12);
    assert!(reduced.trace() < 1.0);
}

#[test]
fn reduction_preserves_bell_fidelity() {
    let s = FRAC_1_SQRT_2;
    let mut v = CVector::zeros(9);
    v[1] = c(s, 0.0);
    v[3] = c(s, 0.0);
    let psi = DensityMatrix::from_pure(&PureState::new(HilbertSpace::two_qutrits(), v).unwrap());
    let a = bell_protocol_analysis(&psi, 0.0).unwrap();
    assert!((a.fidelity - 1.0).abs() < 1e-12);
    assert!((a.concurrence - 1.0).abs() < 1e-9);
    assert!((a.trace - 1.0).abs() < 1e-12);
    // stabilisers of (|ge⟩+|eg⟩)/√2: XX = YY = +1, ZZ = −1
    assert!((a.pauli[5] - 1.0).abs() < 1e-12);
    assert!((a.pauli[10] - 1.0).abs() < 1e-12);
    assert!((a.pauli[15] + 1.0).abs() < 1e-12);

    let rho = bell_protocol_state();
    let reduced = reduce_to_qubits(&rho).unwrap();
    let mut embedded = CVector::zeros(9);
    embedded[1] = c(s, 0.0);
    embedded[3] = c(s, 0.0);
    let full = (embedded.adjoint() * rho.matrix() * &embedded)[(0, 0)].re;
    let block = state_fidelity(&reduced, &PureState::bell_psi_plus()).unwrap();
    assert!((full - block).abs() < 1e-14);
}

fn random_channel(rng: &mut impl Rng, kraus: usize) -> Vec<CMatrix> {
    let stacked = CMatrix::from_fn(2 * kraus, 2, |_, _| {
        c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    // orthonormalise the columns so that Σ K†K = I
    let q = stacked.qr().q();
    (0..kraus).map(|k| q.rows(2 * k, 2).into_owned()).collect()
}

fn images(kraus: &[CMatrix]) -> (Vec<CVector>, Vec<CMatrix>) {
    let inputs = mub_states().to_vec();
    let outputs = inputs
        .iter()
        .map(|v| {
            let rho = v * v.adjoint();
            kraus
                .iter()
                .map(|k| k * &rho * k.adjoint())
                .fold(CMatrix::zeros(2, 2), |a, b| a + b)
        })
        .collect();
    (inputs, outputs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn average_fidelity_identity_on_exact_images(seed in any::<u64>(), kraus in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (inputs, outputs) = images(&random_channel(&mut rng, kraus));
        let fit = process_tomography(&inputs, &outputs).unwrap();
        let m = transfer_metrics(&fit.chi, &inputs, &outputs).unwrap();
        prop_assert!((m.state_fidelity - (2.0 * m.process_fidelity + 1.0) / 3.0).abs() < 1e-6);
        prop_assert!((m.chi_trace - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fitted_process_reproduces_its_images(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (inputs, outputs) = images(&random_channel(&mut rng, 2));
        let fit = process_tomography(&inputs, &outputs).unwrap();
        for (v, out) in inputs.iter().zip(&outputs) {
            let img = fit.chi.apply(&(v * v.adjoint()));
            prop_assert!((img - out).norm() < 1e-9);
        }
    }

    #[test]
    fn bell_fidelity_survives_leakage(seed in any::<u64>(), leak in 0.0f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = random_state(&mut rng, 9).scale(1.0 - leak);
        m[(8, 8)] += c(leak, 0.0);
        let rho = DensityMatrix::new(HilbertSpace::two_qutrits(), m.clone()).unwrap();
        let reduced = reduce_to_qubits(&rho).unwrap();
        let s = FRAC_1_SQRT_2;
        let mut v = CVector::zeros(9);
        v[1] = c(s, 0.0);
        v[3] = c(s, 0.0);
        let full = (v.adjoint() * &m * &v)[(0, 0)].re;
        let block = state_fidelity(&reduced, &PureState::bell_psi_plus()).unwrap();
        prop_assert!((full - block).abs() < 1e-14);
    }
}

#[test]
fn noisy_channel_fit_is_trace_non_increasing() {
    // lossy images: amplitude damping into a level outside the qubit block
    let loss: f64 = 0.2;
    let kraus = [CMatrix::from_row_slice(
        2,
        2,
        &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c((1.0 - loss).sqrt(), 0.0)],
    )];
    let (inputs, outputs) = images(&kraus);
    let fit = process_tomography(&inputs, &outputs).unwrap();
    assert!(fit.chi.trace() < 1.0);
    assert!((fit.chi.trace() - (1.0 - loss / 2.0)).abs() < 1e-9);
    let m = transfer_metrics(&fit.chi, &inputs, &outputs).unwrap();
    assert!((m.state_fidelity - (2.0 * m.process_fidelity + m.chi_trace) / 3.0).abs() < 1e-9);
}

#[test]
fn records_and_matrices_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rho = DensityMatrix::new(HilbertSpace::qutrit("q"), random_state(&mut rng, 3)).unwrap();
    let rec = simulate_tomography(&rho, &RotationSet::standard(), None, ShotBudget::Finite(200), 9).unwrap();
    let path = dir.path().join("record.json");
    rec.write_json(&path).unwrap();
    let back = TomographyRecord::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, rec);
    for boot in rec.bootstrap(3, 4).unwrap() {
        boot.validate().unwrap();
        assert_ne!(boot.counts, rec.counts);
    }
    let csv = abs_csv(rho.matrix(), &["g", "e", "f"]);
    assert_eq!(csv.lines().count(), 4);
}
