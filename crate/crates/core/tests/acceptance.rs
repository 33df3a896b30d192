//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits nonzero on failure.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use cqed_entangle::dynamics::{analytic_two_mode_amplitudes, build_hamiltonian, evolve, excitation_number};
use cqed_entangle::entangle::{
    binary_entropy, concurrence, entanglement_entropy, fidelity, ghz_state, von_neumann_entropy, Sign,
};
use cqed_entangle::feasibility::{bell_si_plan, check_budget, transit_time, FeasibilityParams};
use cqed_entangle::hilbert::{
    partial_trace, BasisState, CouplingId, DensityMatrix, Layout, LevelId, ModeSpec, StateVector, Subsystems,
};
use cqed_entangle::interface::{emit_result_json, parse_protocol, parse_protocol_bytes};
use cqed_entangle::protocol::{
    apply_step, bell_system, bell_target, build_bell_protocol, build_detection_protocol, build_ghz_protocol,
    ghz_system, run_protocol, AtomProjector, GhzOptions, Outcome, Protocol, ProtocolError, ProtocolStep,
    SimulationResult,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn lvl(name: &str) -> LevelId {
    LevelId::new(name).unwrap()
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn protocols_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("protocols")
}

/// Independent closed form for the two-mode amplitudes with both couplings
/// on: each branch is a two-level Rabi oscillation at its own vacuum Rabi
/// frequency, seeded by the Ramsey amplitudes 1/sqrt2 and e^{i phi}/sqrt2.
fn oracle_amplitudes(g1: f64, g2: f64, phi: f64, t: f64) -> [(BasisState, Complex64); 4] {
    let r = FRAC_1_SQRT_2;
    let ramsey_b = Complex64::from_polar(r, phi);
    let minus_i = Complex64::new(0.0, -1.0);
    [
        (BasisState::new("a", &[0, 0]), Complex64::new(r * (g1 * t).cos(), 0.0)),
        (BasisState::new("c", &[1, 0]), minus_i * r * (g1 * t).sin()),
        (BasisState::new("b", &[0, 0]), ramsey_b * (g2 * t).cos()),
        (BasisState::new("c", &[0, 1]), minus_i * ramsey_b * (g2 * t).sin()),
    ]
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_101);
    let (mut dev, mut lib_dev, mut stray) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let g1 = rng.gen_range(0.1..=10.0);
        let g2 = rng.gen_range(0.1..=10.0);
        let phi = rng.gen_range(0.0..2.0 * PI);
        let t = rng.gen_range(0.0..=10.0);
        let sys = bell_system(g1, g2, 2).map_err(s)?;
        let ground = sys.vacuum_state(&lvl("a")).map_err(s)?;
        let ramsey = ProtocolStep::PrepareSuperposition { from: lvl("a"), to: lvl("b"), phi };
        let (prepared, _) = apply_step(&ground, &ramsey, &sys).map_err(s)?;
        let h = build_hamiltonian(&sys, &[CouplingId(0), CouplingId(1)], &[]).map_err(s)?;
        let out = evolve(&prepared, &h, t).map_err(s)?;

        let oracle = oracle_amplitudes(g1, g2, phi, t);
        let lib = analytic_two_mode_amplitudes(g1, g2, phi, t);
        let mut covered = vec![false; out.dim()];
        for ((label, z), w) in oracle.iter().zip([lib.c_a00, lib.c_c10, lib.c_b00, lib.c_c01]) {
            let i = sys.layout().index_of(label).ok_or("basis state missing")?;
            covered[i] = true;
            dev = dev.max((out.amplitudes()[i] - z).norm());
            lib_dev = lib_dev.max((out.amplitudes()[i] - w).norm());
        }
        for (i, z) in out.amplitudes().iter().enumerate() {
            if !covered[i] {
                stray = stray.max(z.norm());
            }
        }
    }
    let detail = format!("100 draws: max |numeric - independent form| {dev:.1e}, |numeric - library form| {lib_dev:.1e}, stray {stray:.1e}");
    if dev < 1e-10 && lib_dev < 1e-10 && stray < 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_2() -> Verdict {
    let mut worst = 0.0f64;
    for (g1, g2) in [(1.0, 1.0), (0.8, 2.3), (1.0, 2.0f64.sqrt())] {
        for k in 0..201 {
            let t = 3.0 * PI * k as f64 / 200.0;
            let expected = 0.5 * ((g1 * t).sin().powi(2) + (g2 * t).sin().powi(2));
            let p = build_detection_protocol(g1, g2, 1.1, t).map_err(s)?;
            let measure = p.steps.last().unwrap();
            let mut state = p.initial.clone();
            for step in &p.steps[..p.steps.len() - 1] {
                state = apply_step(&state, step, &p.system).map_err(s)?.0;
            }
            let got = match apply_step(&state, measure, &p.system) {
                Ok((_, prob)) => prob,
                Err(ProtocolError::ZeroProbabilityBranch(prob)) => prob,
                Err(e) => return Err(s(e)),
            };
            worst = worst.max((got - expected).abs());
        }
    }
    let peak = run_protocol(&build_detection_protocol(1.0, 1.0, 0.0, PI / 2.0).map_err(s)?).map_err(s)?;
    let peak_dev = (peak.branch_probability - 1.0).abs();
    let detail = format!("3 x 201-point sweeps: max deviation {worst:.1e}; at g t = pi/2: 1 - {peak_dev:.1e}");
    if worst < 1e-10 && peak_dev < 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Expected Bell field written out by hand: `(|1,0> + sign e^{i phi}|0,1>)/sqrt2`.
fn bell_overlap(field: &StateVector, sign: f64, phi: f64) -> Result<f64, String> {
    let amp = |occ: [usize; 2]| field.amplitude(&BasisState::field(&occ)).ok_or("missing basis state".to_string());
    let overlap = (amp([1, 0])? + Complex64::from_polar(sign, -phi) * amp([0, 1])?) * FRAC_1_SQRT_2;
    Ok(overlap.norm_sqr())
}

fn bell_runs() -> Result<Vec<(String, Protocol, SimulationResult)>, String> {
    let mut runs = Vec::new();
    for (g1, g2) in [(1.0, 1.0), (2.0, 0.5)] {
        for (variant, m, n, sign) in [(Sign::Plus, 1, 1, 1.0), (Sign::Minus, 1, 3, -1.0)] {
            for phi in [0.0, PI / 3.0, PI] {
                let p = build_bell_protocol(g1, g2, phi, variant, m, n).map_err(s)?;
                let mut r = run_protocol(&p).map_err(s)?;
                r.add_fidelity(&bell_target(variant, phi).map_err(s)?).map_err(s)?;
                let own = bell_overlap(r.field_state.as_ref().ok_or("no field state")?, sign, phi)?;
                r.fidelities.push(("hand-written".into(), own));
                runs.push((format!("{} phi={phi:.3} g=({g1},{g2})", variant.as_str()), p, r));
            }
        }
    }
    Ok(runs)
}

fn criterion_3() -> Verdict {
    let runs = bell_runs()?;
    let mut min_f = 1.0f64;
    let mut min_p = 1.0f64;
    for (label, _, r) in &runs {
        for (name, f) in &r.fidelities {
            if *f <= 1.0 - 1e-9 {
                return Err(format!("{label}: fidelity ({name}) {f}"));
            }
            min_f = min_f.min(*f);
        }
        if r.branch_probability <= 1.0 - 1e-9 {
            return Err(format!("{label}: branch probability {}", r.branch_probability));
        }
        min_p = min_p.min(r.branch_probability);
    }
    Ok(format!("{} runs ({{plus, minus}} x phi in {{0, pi/3, pi}} x 2 rate pairs): min fidelity 1 - {:.1e}, min branch 1 - {:.1e}", runs.len(), 1.0 - min_f, 1.0 - min_p))
}

const RATES: [f64; 5] = [1.0, 0.6, 1.7, 1.2, 0.9];
const LASERS: [f64; 4] = [1.5, 2.5, 0.8, 3.0];

fn ghz_run(n: usize, sign: Sign) -> Result<(Protocol, SimulationResult, cqed_entangle::protocol::GhzBuild), String> {
    let sys = ghz_system(&RATES[..n], if n >= 4 { 1 } else { 2 }).map_err(s)?;
    let build = build_ghz_protocol(&sys, &LASERS[..n - 1], &GhzOptions { sign, ..Default::default() }).map_err(s)?;
    let r = run_protocol(&build.protocol).map_err(s)?;
    Ok((build.protocol.clone(), r, build))
}

fn criterion_4() -> Verdict {
    let mut notes = Vec::new();
    for (sign, coeff) in [(Sign::Plus, 1.0), (Sign::Minus, -1.0)] {
        let (_, r, build) = ghz_run(2, sign)?;
        let field = r.field_state.as_ref().ok_or("no field state")?;
        let c00 = field.amplitude(&BasisState::field(&[0, 0])).unwrap();
        let c11 = field.amplitude(&BasisState::field(&[1, 1])).unwrap();
        let f = ((c00 + coeff * c11) * FRAC_1_SQRT_2).norm_sqr();
        if f <= 1.0 - 1e-9 || (r.branch_probability - 0.5).abs() > 1e-9 {
            return Err(format!("2 modes {}: fidelity {f}, branch {}", sign.as_str(), r.branch_probability));
        }
        let after_first = &r.trace[0].state;
        let pa = after_first.amplitude(&BasisState::new("a", &[0, 0])).unwrap().norm_sqr();
        let pc = after_first.amplitude(&BasisState::new("c", &[1, 0])).unwrap().norm_sqr();
        if (pa - 0.5).abs() > 1e-10 || (pc - 0.5).abs() > 1e-10 {
            return Err(format!("after first cavity: P(a,0,0)={pa}, P(c,1,0)={pc}"));
        }
        notes.push(format!("{} theta={:.4}", sign.as_str(), build.branch_phase));
    }
    for n in 3..=5 {
        let (_, r, _) = ghz_run(n, Sign::Plus)?;
        let field = r.field_state.as_ref().ok_or("no field state")?;
        let support: Vec<(usize, f64)> = field
            .probabilities()
            .into_iter()
            .enumerate()
            .filter(|(_, p)| *p > 1e-18)
            .collect();
        let zero = field.layout().index_of(&BasisState::field(&vec![0; n])).unwrap();
        let ones = field.layout().index_of(&BasisState::field(&vec![1; n])).unwrap();
        let ok = support.len() == 2
            && support.iter().all(|(i, p)| (*i == zero || *i == ones) && (p - 0.5).abs() < 1e-9);
        if !ok {
            return Err(format!("{n} modes: support {support:?}"));
        }
        for k in 0..n {
            let bits = entanglement_entropy(field, &Subsystems::modes([k])).map_err(s)?;
            if (bits - 1.0).abs() > 1e-9 {
                return Err(format!("{n} modes: entropy of mode {k} = {bits}"));
            }
        }
        let f = fidelity(field, &ghz_state(n, Sign::Plus).map_err(s)?).map_err(s)?;
        if f <= 1.0 - 1e-9 {
            return Err(format!("{n} modes: GHZ fidelity {f}"));
        }
    }
    Ok(format!("2 modes ({}): fidelity 1, branch 1/2, first-cavity populations 1/2; N=3,4,5: two components, 1-bit cuts", notes.join(", ")))
}

fn qubit_block(field: &StateVector) -> Result<DensityMatrix, String> {
    let pure = DensityMatrix::pure(field.amplitudes()).map_err(s)?;
    DensityMatrix::new(field.layout().factor_dims(), pure.matrix().clone())
        .map_err(s)?
        .restrict(2, 1e-12)
        .map_err(s)
}

fn criterion_5() -> Verdict {
    let mut worst_c = 0.0f64;
    let mut count = 0;
    let mut fields = Vec::new();
    for (_, _, r) in bell_runs()? {
        fields.push(r.field_state.ok_or("no field state")?);
    }
    for sign in [Sign::Plus, Sign::Minus] {
        fields.push(ghz_run(2, sign)?.1.field_state.ok_or("no field state")?);
    }
    for f in &fields {
        let c = concurrence(&qubit_block(f)?).map_err(s)?;
        worst_c = worst_c.max((c - 1.0).abs());
        count += 1;
    }
    let layout = Arc::new(Layout::field(vec![ModeSpec::new("A", 1).unwrap(), ModeSpec::new("B", 1).unwrap()]).map_err(s)?);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut worst_rel, mut worst_closed) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let amps: Vec<Complex64> = (0..4).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let psi = StateVector::from_amplitudes(layout.clone(), amps).map_err(s)?;
        let c = concurrence(&DensityMatrix::pure(psi.amplitudes()).map_err(s)?).map_err(s)?;
        let a = psi.amplitudes();
        // pure two-qubit closed form 2|c00 c11 - c01 c10|
        let closed = 2.0 * (a[0] * a[3] - a[1] * a[2]).norm();
        worst_closed = worst_closed.max((c - closed).abs());
        let bits = von_neumann_entropy(&partial_trace(&psi, &Subsystems::modes([0])).map_err(s)?).map_err(s)?;
        let predicted = binary_entropy(0.5 * (1.0 + (1.0 - c * c).max(0.0).sqrt()));
        worst_rel = worst_rel.max((bits - predicted).abs());
    }
    let detail = format!(
        "{count} generated Bell states: |C - 1| <= {worst_c:.1e}; 50 random pure states: entropy relation {worst_rel:.1e}, pure-state closed form {worst_closed:.1e}"
    );
    if worst_c <= 1e-9 && worst_rel < 1e-9 && worst_closed < 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn complementary_sum(state: &StateVector, projector: &AtomProjector, p: &Protocol) -> Result<f64, String> {
    let mut total = 0.0;
    for outcome in [Outcome::Hit, Outcome::Miss] {
        let step = ProtocolStep::MeasureAtom { projector: projector.clone(), outcome };
        total += match apply_step(state, &step, &p.system) {
            Ok((_, prob)) => prob,
            Err(ProtocolError::ZeroProbabilityBranch(prob)) => prob,
            Err(e) => return Err(s(e)),
        };
    }
    Ok(total)
}

fn criterion_6() -> Verdict {
    let mut runs: Vec<(String, Protocol, SimulationResult)> = bell_runs()?;
    for n in 2..=5 {
        for sign in [Sign::Plus, Sign::Minus] {
            let (p, r, _) = ghz_run(n, sign)?;
            runs.push((format!("ghz{n} {}", sign.as_str()), p, r));
        }
    }
    for t in [0.3, 1.0, 2.2] {
        let p = build_detection_protocol(0.9, 1.4, 0.5, t).map_err(s)?;
        let r = run_protocol(&p).map_err(s)?;
        runs.push((format!("detection t={t}"), p, r));
    }
    for name in ["bell.proto", "ghz.proto"] {
        let text = std::fs::read_to_string(protocols_dir().join(name)).map_err(s)?;
        let (_, p) = parse_protocol(&text).map_err(|e| format!("{e:?}"))?;
        let r = run_protocol(&p).map_err(s)?;
        runs.push((name.to_string(), p, r));
    }
    let (mut norm, mut exc, mut sum) = (0.0f64, 0.0f64, 0.0f64);
    for (label, p, r) in &runs {
        let mut before = &p.initial;
        for (step, entry) in p.steps.iter().zip(&r.trace) {
            let after = &entry.state;
            norm = norm.max((after.norm() - 1.0).abs());
            match step {
                ProtocolStep::Interact { .. } => {
                    let d = (excitation_number(&p.system, after) - excitation_number(&p.system, before)).abs();
                    exc = exc.max(d);
                }
                ProtocolStep::MeasureAtom { projector, .. } => {
                    sum = sum.max((complementary_sum(before, projector, p)? - 1.0).abs());
                }
                _ => {}
            }
            before = after;
        }
        if norm >= 1e-10 || exc >= 1e-10 || sum >= 1e-10 {
            return Err(format!("{label}: norm drift {norm:.3e}, excitation drift {exc:.3e}, outcome sum {sum:.3e}"));
        }
    }
    Ok(format!("{} runs: norm drift {norm:.1e}, excitation drift {exc:.1e}, complementary outcome sum drift {sum:.1e}", runs.len()))
}

fn criterion_7() -> Verdict {
    let params = FeasibilityParams::default();
    if (params.cavity_length, params.atom_velocity, params.atomic_lifetime, params.cavity_lifetime) != (0.02, 400.0, 3e-3, 3e-3) {
        return Err("default parameters differ from 0.02 m, 400 m/s, 3 ms".into());
    }
    let transit = transit_time(0.02, 400.0).map_err(s)?;
    if transit != 5.0e-5 {
        return Err(format!("transit time {transit:e} s"));
    }
    let report = check_budget(&params, &bell_si_plan(&params).map_err(s)?).map_err(s)?;
    if !report.pass {
        return Err(format!("verdict FAIL: {:?}", report.reasons));
    }
    let tens_of_us = (1e-5..1e-4).contains(&report.total_protocol_time);
    if !tens_of_us || report.headroom() < 10.0 {
        return Err(format!("total {} s, headroom {}", report.total_protocol_time, report.headroom()));
    }
    Ok(format!("transit 5.0e-5 s exactly; protocol {:.2e} s; lifetimes exceed it {:.0}x; verdict PASS", report.total_protocol_time, report.headroom()))
}

fn criterion_8() -> Verdict {
    // Fuzz: random bytes plus byte-level mutations of the golden files.
    let golden_bell = std::fs::read(protocols_dir().join("bell.proto")).map_err(s)?;
    let golden_ghz = std::fs::read(protocols_dir().join("ghz.proto")).map_err(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    let mut crashes = 0;
    let mut accepted = 0;
    for i in 0..10_000 {
        let input: Vec<u8> = if i % 2 == 0 {
            let len = rng.gen_range(0..256);
            (0..len).map(|_| rng.gen()).collect()
        } else {
            let mut bytes = if i % 4 == 1 { golden_bell.clone() } else { golden_ghz.clone() };
            for _ in 0..rng.gen_range(1..8) {
                let pos = rng.gen_range(0..bytes.len());
                match rng.gen_range(0..3) {
                    0 => bytes[pos] = rng.gen(),
                    1 => {
                        bytes.remove(pos);
                    }
                    _ => bytes.insert(pos, rng.gen()),
                }
            }
            bytes
        };
        match catch_unwind(AssertUnwindSafe(|| parse_protocol_bytes(&input))) {
            Ok(Ok(_)) => accepted += 1,
            Ok(Err(errors)) if !errors.is_empty() => {}
            _ => crashes += 1,
        }
    }
    if crashes > 0 {
        return Err(format!("{crashes} crashes in 10000 fuzz inputs"));
    }

    for (name, target) in [("bell", "psi_plus"), ("ghz", "phi_plus")] {
        let proto = protocols_dir().join(format!("{name}.proto"));
        let golden = std::fs::read_to_string(protocols_dir().join(format!("{name}.json"))).map_err(s)?;
        let text = std::fs::read_to_string(&proto).map_err(s)?;
        let (_, p) = parse_protocol(&text).map_err(|e| format!("{name}: {e:?}"))?;
        let first = emit_result_json(&run_protocol(&p).map_err(s)?);
        let second = emit_result_json(&run_protocol(&p).map_err(s)?);
        if first != second {
            return Err(format!("{name}: JSON differs between runs"));
        }
        let out_path = std::env::temp_dir().join(format!("cqed-acceptance-{}-{name}.json", std::process::id()));
        let status = Command::new(env!("CARGO_BIN_EXE_cqed"))
            .args(["run", proto.to_str().unwrap(), "--target", target, "--json", out_path.to_str().unwrap()])
            .output()
            .map_err(s)?;
        if !status.status.success() {
            return Err(format!("cqed run {name}: {}", String::from_utf8_lossy(&status.stderr)));
        }
        let emitted = std::fs::read_to_string(&out_path).map_err(s)?;
        let _ = std::fs::remove_file(&out_path);
        if emitted != golden {
            return Err(format!("{name}: CLI JSON differs from the golden file"));
        }
    }

    let verify = Command::new(env!("CARGO_BIN_EXE_cqed")).arg("verify").output().map_err(s)?;
    let stdout = String::from_utf8_lossy(&verify.stdout);
    if verify.status.code() != Some(0) {
        return Err(format!("verify exited {:?}:\n{stdout}", verify.status.code()));
    }
    for id in 1..=7 {
        if !stdout.lines().any(|l| l.starts_with(&format!("[PASS] {id} "))) {
            return Err(format!("verify output lacks a passing line for check {id}"));
        }
    }
    Ok(format!("10000 fuzz inputs, 0 crashes ({accepted} accepted); golden JSON byte-stable; verify exit 0 with checks 1-7"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", criterion_1),
        ("detection probability", criterion_2),
        ("Bell generation", criterion_3),
        ("GHZ generation", criterion_4),
        ("entanglement metrics", criterion_5),
        ("conservation properties", criterion_6),
        ("feasibility arithmetic", criterion_7),
        ("interface robustness", criterion_8),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let verdict = catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("acceptance: {} of 8 criteria passed in {:.1}s", 8 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
