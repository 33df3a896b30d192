use std::f64::consts::PI;
use std::sync::Arc;

use cqed_entangle::dynamics::{build_hamiltonian, evolve, evolve_dense, excitation_number, DriveTerm};
use cqed_entangle::entangle::{
    bell_state, binary_entropy, concurrence, fidelity, ghz_state, von_neumann_entropy, BellVariant, Sign,
};
use cqed_entangle::feasibility::{check_budget, FeasibilityParams, Region, SiTimingPlan};
use cqed_entangle::hilbert::{
    inner_product, partial_trace, CouplingId, DensityMatrix, Layout, ModeSpec, StateVector, Subsystems,
};
use cqed_entangle::interface::{parse_protocol, parse_protocol_bytes, serialize_protocol, run_sweep, SweepConfig, SweepParam};
use cqed_entangle::protocol::{
    bell_system, build_bell_protocol, build_detection_protocol, build_ghz_protocol, ghz_system, half_rabi_time,
    run_protocol, GhzOptions, Protocol, ProtocolStep, TimeExpr,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn complex_vec(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n)
        .prop_filter("nonzero", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3))
        .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
}

fn bell_state_vector(g1: f64, g2: f64, amps: Vec<Complex64>) -> (cqed_entangle::hilbert::SystemSpec, StateVector) {
    let sys = bell_system(g1, g2, 2).unwrap();
    let psi = StateVector::from_amplitudes(sys.layout().clone(), amps).unwrap();
    (sys, psi)
}

fn max_diff(a: &StateVector, b: &StateVector) -> f64 {
    a.amplitudes()
        .iter()
        .zip(b.amplitudes())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evolution_is_unitary(
        g1 in 0.1f64..10.0, g2 in 0.1f64..10.0, omega in 0.0f64..5.0, theta in -PI..PI,
        t in 0.0f64..10.0, amps in complex_vec(27),
    ) {
        let (sys, psi) = bell_state_vector(g1, g2, amps);
        let drives = if omega > 0.0 { vec![DriveTerm::new("b", "c", omega).with_phase(theta)] } else { vec![] };
        let h = build_hamiltonian(&sys, &[CouplingId(0), CouplingId(1)], &drives).unwrap();
        let out = evolve(&psi, &h, t).unwrap();
        prop_assert!((out.norm() - 1.0).abs() < 1e-10);
        prop_assert!(max_diff(&out, &evolve_dense(&psi, &h, t).unwrap()) < 1e-10);
    }

    #[test]
    fn evolution_composes(
        g1 in 0.1f64..10.0, g2 in 0.1f64..10.0, t1 in 0.0f64..5.0, t2 in 0.0f64..5.0, amps in complex_vec(27),
    ) {
        let (sys, psi) = bell_state_vector(g1, g2, amps);
        let h = build_hamiltonian(&sys, &[CouplingId(0), CouplingId(1)], &[DriveTerm::new("a", "b", 0.7)]).unwrap();
        let two_steps = evolve(&evolve(&psi, &h, t1).unwrap(), &h, t2).unwrap();
        let one_step = evolve(&psi, &h, t1 + t2).unwrap();
        prop_assert!(max_diff(&two_steps, &one_step) < 1e-10);
    }

    #[test]
    fn hamiltonian_is_hermitian(
        g1 in 0.1f64..10.0, g2 in 0.1f64..10.0, omega in 0.1f64..5.0, theta in -PI..PI,
        use_a in any::<bool>(), use_b in any::<bool>(),
    ) {
        let sys = bell_system(g1, g2, 3).unwrap();
        let mut active = Vec::new();
        if use_a { active.push(CouplingId(0)); }
        if use_b { active.push(CouplingId(1)); }
        let h = build_hamiltonian(&sys, &active, &[DriveTerm::new("b", "c", omega).with_phase(theta)]).unwrap();
        let m = h.matrix();
        prop_assert_eq!(m.clone(), m.adjoint());
    }

    #[test]
    fn cavity_steps_conserve_excitations(
        g1 in 0.1f64..10.0, g2 in 0.1f64..10.0, t in 0.0f64..10.0, amps in complex_vec(27),
    ) {
        let (sys, psi) = bell_state_vector(g1, g2, amps);
        let h = build_hamiltonian(&sys, &[CouplingId(0), CouplingId(1)], &[]).unwrap();
        let out = evolve(&psi, &h, t).unwrap();
        prop_assert!((excitation_number(&sys, &out) - excitation_number(&sys, &psi)).abs() < 1e-10);
    }

    #[test]
    fn inner_product_is_conjugate_symmetric(x in complex_vec(27), y in complex_vec(27)) {
        let (_, a) = bell_state_vector(1.0, 1.0, x);
        let b = StateVector::from_amplitudes(a.layout().clone(), y).unwrap();
        let xy = inner_product(&a, &b).unwrap();
        let yx = inner_product(&b, &a).unwrap();
        prop_assert!((xy - yx.conj()).norm() < 1e-15);
        prop_assert!((inner_product(&a, &a).unwrap() - 1.0).norm() < 1e-12);
    }

    #[test]
    fn fidelity_ignores_global_phase(alpha in -10.0f64..10.0, phi in 0.0f64..(2.0 * PI), idx in 0usize..4) {
        let target = bell_state(BellVariant::ALL[idx], if BellVariant::ALL[idx].takes_phase() { phi } else { 0.0 }).unwrap();
        let shifted = target.vector.with_global_phase(alpha);
        prop_assert!((fidelity(&shifted, &target).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_state_entropy_matches_concurrence(amps in complex_vec(4)) {
        let layout = Arc::new(Layout::field(vec![ModeSpec::new("A", 1).unwrap(), ModeSpec::new("B", 1).unwrap()]).unwrap());
        let psi = StateVector::from_amplitudes(layout, amps).unwrap();
        let c = concurrence(&DensityMatrix::pure(psi.amplitudes()).unwrap()).unwrap();
        let s = von_neumann_entropy(&partial_trace(&psi, &Subsystems::modes([0])).unwrap()).unwrap();
        let predicted = binary_entropy(0.5 * (1.0 + (1.0 - c * c).max(0.0).sqrt()));
        prop_assert!((s - predicted).abs() < 1e-9, "S={} h={} C={}", s, predicted, c);
    }

    #[test]
    fn half_rabi_times_hit_unit_sine(g in 0.01f64..100.0, k in 0u32..50) {
        let m = 2 * k + 1;
        let t = half_rabi_time(g, m).unwrap();
        prop_assert!(((g * t).sin().abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bell_builder_is_exact(
        g1 in 0.1f64..10.0, g2 in 0.1f64..10.0, phi in 0.0f64..(2.0 * PI), minus in any::<bool>(), k in 0u32..3, j in 0u32..3,
    ) {
        let variant = if minus { Sign::Minus } else { Sign::Plus };
        let m = 4 * k + 1;
        let n = if minus { 4 * j + 3 } else { 4 * j + 1 };
        let p = build_bell_protocol(g1, g2, phi, variant, m, n).unwrap();
        let mut r = run_protocol(&p).unwrap();
        let f = r.add_fidelity(&cqed_entangle::protocol::bell_target(variant, phi).unwrap()).unwrap();
        prop_assert!(f > 1.0 - 1e-9);
        prop_assert!(r.branch_probability > 1.0 - 1e-9);
        for entry in &r.trace {
            prop_assert!(entry.state.multi_photon_weight() < 1e-12);
        }
    }

    #[test]
    fn ghz_builder_is_exact(
        gs in prop::collection::vec(0.2f64..5.0, 2..=3), omega in 0.2f64..5.0, drive_phase in -PI..PI, minus in any::<bool>(),
    ) {
        let sys = ghz_system(&gs, 1).unwrap();
        let sign = if minus { Sign::Minus } else { Sign::Plus };
        let opts = GhzOptions { sign, drive_phase, ..Default::default() };
        let build = build_ghz_protocol(&sys, &vec![omega; gs.len() - 1], &opts).unwrap();
        let r = run_protocol(&build.protocol).unwrap();
        let field = r.field_state.unwrap();
        prop_assert!(fidelity(&field, &ghz_state(gs.len(), sign).unwrap()).unwrap() > 1.0 - 1e-9);
        prop_assert!((r.branch_probability - 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_durations_are_identity(g1 in 0.1f64..10.0, g2 in 0.1f64..10.0, amps in complex_vec(27)) {
        let (sys, psi) = bell_state_vector(g1, g2, amps);
        let steps = vec![
            ProtocolStep::Interact { couplings: vec![CouplingId(0), CouplingId(1)], time: TimeExpr::Literal(0.0) },
            ProtocolStep::Pulse { drive: DriveTerm::new("a", "b", 3.0), time: TimeExpr::Literal(0.0) },
        ];
        let r = run_protocol(&Protocol::new(sys, psi.clone(), steps).unwrap()).unwrap();
        prop_assert!(max_diff(&r.final_state, &psi) < 1e-12);
    }

    #[test]
    fn parser_is_total_on_text(text in "\\PC*") {
        match parse_protocol(&text) {
            Ok(_) => {}
            Err(errors) => prop_assert!(!errors.is_empty() && errors.iter().all(|e| !e.message.is_empty() && e.span.line >= 1)),
        }
    }

    #[test]
    fn parser_is_total_on_bytes(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        if let Err(errors) = parse_protocol_bytes(&bytes) {
            prop_assert!(!errors.is_empty());
        }
    }

    #[test]
    fn parser_is_total_on_near_miss_lines(lines in prop::collection::vec(near_miss_line(), 0..16)) {
        let text = lines.join("\n");
        if let Err(errors) = parse_protocol(&text) {
            prop_assert!(!errors.is_empty());
        }
    }

    #[test]
    fn serialization_reaches_fixpoint(
        g1 in 0.1f64..10.0, g2 in 0.1f64..10.0, phi in -PI..PI, t in 0.0f64..5.0,
    ) {
        for p in [
            build_bell_protocol(g1, g2, phi, Sign::Minus, 1, 3).unwrap(),
            build_detection_protocol(g1, g2, phi, t).unwrap(),
            build_ghz_protocol(&ghz_system(&[g1, g2], 2).unwrap(), &[g1 + g2], &GhzOptions::default()).unwrap().protocol,
        ] {
            let first = serialize_protocol(&p).unwrap();
            let (_, reparsed) = parse_protocol(&first).unwrap();
            prop_assert_eq!(&reparsed, &p);
            prop_assert_eq!(serialize_protocol(&reparsed).unwrap(), first);
        }
    }

    #[test]
    fn budget_margins_and_monotonicity(
        durations in prop::collection::vec(1e-7f64..1e-3, 1..6), life in 1e-5f64..1e-2, scale in 1.0f64..10.0,
    ) {
        let mut plan = SiTimingPlan::default();
        for (i, d) in durations.iter().enumerate() {
            plan.push(format!("s{i}"), *d, if i % 2 == 0 { Region::Cavity } else { Region::Laser });
        }
        let params = FeasibilityParams { atomic_lifetime: life, cavity_lifetime: life * 1.5, ..Default::default() };
        let r = check_budget(&params, &plan).unwrap();
        let total = plan.total();
        prop_assert!((r.atomic_margin - total / life).abs() <= 1e-12 * r.atomic_margin);
        prop_assert!((r.cavity_margin - total / (life * 1.5)).abs() <= 1e-12 * r.cavity_margin);
        let longer = FeasibilityParams { atomic_lifetime: life * scale, cavity_lifetime: life * 1.5 * scale, ..params.clone() };
        prop_assert!(!r.pass || check_budget(&longer, &plan).unwrap().pass);
        let mut slower = plan.clone();
        for s in &mut slower.steps { s.duration *= scale; }
        prop_assert!(r.pass || !check_budget(&params, &slower).unwrap().pass);
    }

    #[test]
    fn sweep_rows_are_finite(g1 in 0.1f64..5.0, g2 in 0.1f64..5.0, steps in 2usize..40, to in 0.1f64..10.0) {
        let p = build_detection_protocol(g1, g2, 0.3, 1.0).unwrap();
        let cfg = SweepConfig::new(SweepParam::StepTime(1), 0.0, to, steps).unwrap()
            .with_targets(vec![bell_state(BellVariant::PsiPlus, 0.0).unwrap()]);
        let csv = run_sweep(&p, &cfg).unwrap();
        prop_assert_eq!(csv.lines().count(), steps + 1);
        for line in csv.lines().skip(1) {
            for cell in line.split(',') {
                prop_assert!(cell.parse::<f64>().unwrap().is_finite());
            }
        }
    }
}

fn near_miss_line() -> impl Strategy<Value = String> {
    let words = prop::sample::select(vec![
        "level", "mode", "couple", "init", "step", "ramsey", "interact", "pulse", "measure", "a", "b", "c", "A", "B",
        "nmax=2", "nmax=0", "g=1", "g=-1", "g=pi", "level=a", "phi=0", "phi=pi/3", "modes=A", "modes=A,B", "modes=",
        "t=half_rabi(1)", "t=quarter_rabi(3)", "t=quarter_rabi(1,any)", "t=pi_pulse", "t=1e308", "t=-1", "omega=2",
        "coeffs=c:1:0", "coeffs=a;c:0:1", "coeffs=::", "outcome=hit", "outcome=maybe", "#", "=", "==", "\u{00e9}",
    ]);
    prop::collection::vec(words, 0..7).prop_map(|w| w.join(" "))
}
