//! Self-checks run by `cqed verify`: analytic agreement, Bell and GHZ
//! generation, entanglement measures, conservation laws and the timing
//! budget.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{analytic_two_mode_amplitudes, build_hamiltonian, evolve, excitation_number};
use crate::entangle::{
    binary_entropy, concurrence, entanglement_entropy, fidelity, ghz_state, mode_name, von_neumann_entropy, Sign,
};
use crate::feasibility::{bell_si_plan, check_budget, transit_time, FeasibilityParams};
use crate::hilbert::{
    partial_trace, BasisState, CouplingId, DensityMatrix, Layout, LevelId, ModeSpec, StateVector, Subsystems,
};
use crate::protocol::{
    apply_step, bell_system, bell_target, build_bell_protocol, build_detection_protocol, build_ghz_protocol,
    default_bell_multipliers, ghz_system, run_ghz, run_protocol, GhzOptions, Outcome, Protocol, ProtocolError,
    ProtocolStep, SimulationResult,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "[{mark}] {} {}: {}", self.id, self.name, self.detail)
    }
}

type Check = Result<String, String>;

fn outcome(id: u8, name: &'static str, r: Check) -> CheckOutcome {
    match r {
        Ok(detail) => CheckOutcome {
            id,
            name,
            pass: true,
            detail,
        },
        Err(detail) => CheckOutcome {
            id,
            name,
            pass: false,
            detail,
        },
    }
}

fn level(name: &str) -> LevelId {
    LevelId::new(name).expect("nonempty level")
}

fn e<E: fmt::Display>(err: E) -> String {
    err.to_string()
}

/// Runs every check in order.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        outcome(1, "oracle equivalence", check_oracle()),
        outcome(2, "detection probability", check_detection()),
        outcome(3, "Bell generation", check_bell()),
        outcome(4, "GHZ generation", check_ghz()),
        outcome(5, "entanglement metrics", check_metrics()),
        outcome(6, "conservation", check_conservation()),
        outcome(7, "feasibility arithmetic", check_feasibility()),
    ]
}

fn check_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut worst: f64 = 0.0;
    let mut stray: f64 = 0.0;
    for _ in 0..100 {
        let g1 = rng.gen_range(0.1..=10.0);
        let g2 = rng.gen_range(0.1..=10.0);
        let phi = rng.gen_range(0.0..2.0 * PI);
        let t = rng.gen_range(0.0..=10.0);
        let sys = bell_system(g1, g2, 2).map_err(e)?;
        let ground = sys.vacuum_state(&level("a")).map_err(e)?;
        let ramsey = ProtocolStep::PrepareSuperposition {
            from: level("a"),
            to: level("b"),
            phi,
        };
        let (start, _) = apply_step(&ground, &ramsey, &sys).map_err(e)?;
        let h = build_hamiltonian(&sys, &[CouplingId(0), CouplingId(1)], &[]).map_err(e)?;
        let out = evolve(&start, &h, t).map_err(e)?;
        let want = analytic_two_mode_amplitudes(g1, g2, phi, t);
        let layout = sys.layout();
        let mut expected = vec![Complex64::new(0.0, 0.0); out.dim()];
        for (label, z) in [
            (BasisState::new("a", &[0, 0]), want.c_a00),
            (BasisState::new("c", &[1, 0]), want.c_c10),
            (BasisState::new("b", &[0, 0]), want.c_b00),
            (BasisState::new("c", &[0, 1]), want.c_c01),
        ] {
            expected[layout.index_of(&label).ok_or("missing basis state")?] = z;
        }
        for (got, exp) in out.amplitudes().iter().zip(&expected) {
            if *exp == Complex64::new(0.0, 0.0) {
                stray = stray.max(got.norm());
            } else {
                worst = worst.max((got - exp).norm());
            }
        }
    }
    if worst < 1e-10 && stray < 1e-12 {
        Ok(format!("100 draws, max deviation {worst:.1e}, max stray amplitude {stray:.1e}"))
    } else {
        Err(format!("max deviation {worst:.3e} (tol 1e-10), stray {stray:.3e} (tol 1e-12)"))
    }
}

fn detection_closed_form(g1: f64, g2: f64, t: f64) -> f64 {
    0.5 * ((g1 * t).sin().powi(2) + (g2 * t).sin().powi(2))
}

fn check_detection() -> Check {
    let mut worst: f64 = 0.0;
    for (g1, g2) in [(1.0, 1.0), (1.0, 2.0f64.sqrt()), (0.3, 2.7)] {
        for k in 0..201 {
            let t = 10.0 * k as f64 / 200.0;
            let p = build_detection_protocol(g1, g2, 0.4, t).map_err(e)?;
            let got = crate::protocol::branch_probability(&p).map_err(e)?;
            worst = worst.max((got - detection_closed_form(g1, g2, t)).abs());
        }
    }
    let peak = run_protocol(&build_detection_protocol(1.0, 1.0, 0.0, PI / 2.0).map_err(e)?).map_err(e)?;
    let peak_dev = (peak.branch_probability - 1.0).abs();
    if worst < 1e-10 && peak_dev < 1e-10 {
        Ok(format!("3 x 201 points, max deviation {worst:.1e}; P(pi/2) = 1 - {peak_dev:.1e}"))
    } else {
        Err(format!("max deviation {worst:.3e}, peak deviation {peak_dev:.3e}"))
    }
}

fn bell_runs() -> Result<Vec<(String, SimulationResult)>, String> {
    let mut out = Vec::new();
    for (g1, g2) in [(1.0, 1.0), (0.7, 1.9)] {
        for variant in [Sign::Plus, Sign::Minus] {
            for phi in [0.0, PI / 3.0, PI] {
                let (m, n) = default_bell_multipliers(variant);
                let p = build_bell_protocol(g1, g2, phi, variant, m, n).map_err(e)?;
                let mut r = run_protocol(&p).map_err(e)?;
                r.add_fidelity(&bell_target(variant, phi).map_err(e)?).map_err(e)?;
                out.push((format!("{} phi={phi:.4} g=({g1},{g2})", variant.as_str()), r));
            }
        }
    }
    Ok(out)
}

fn check_bell() -> Check {
    let mut worst_f: f64 = 1.0;
    let mut worst_p: f64 = 1.0;
    for (label, r) in bell_runs()? {
        let f = r.fidelities[0].1;
        if f <= 1.0 - 1e-9 || r.branch_probability <= 1.0 - 1e-9 {
            return Err(format!("{label}: fidelity {f}, branch {}", r.branch_probability));
        }
        worst_f = worst_f.min(f);
        worst_p = worst_p.min(r.branch_probability);
    }
    Ok(format!("12 runs, min fidelity 1 - {:.1e}, min branch 1 - {:.1e}", 1.0 - worst_f, 1.0 - worst_p))
}

const GHZ_RATES: [f64; 5] = [1.0, 1.3, 0.8, 1.1, 0.9];
const GHZ_LASERS: [f64; 4] = [2.0, 1.5, 2.5, 1.7];

fn ghz_run(n: usize, sign: Sign) -> Result<(Protocol, SimulationResult), String> {
    let n_max = if n >= 4 { 1 } else { 2 };
    let sys = ghz_system(&GHZ_RATES[..n], n_max).map_err(e)?;
    let opts = GhzOptions {
        sign,
        ..Default::default()
    };
    let build = build_ghz_protocol(&sys, &GHZ_LASERS[..n - 1], &opts).map_err(e)?;
    let r = run_ghz(&build).map_err(e)?;
    Ok((build.protocol, r))
}

fn check_ghz() -> Check {
    for sign in [Sign::Plus, Sign::Minus] {
        let (_, r) = ghz_run(2, sign)?;
        let f = r.fidelities[0].1;
        if f <= 1.0 - 1e-9 || (r.branch_probability - 0.5).abs() > 1e-9 {
            return Err(format!("2 modes {}: fidelity {f}, branch {}", sign.as_str(), r.branch_probability));
        }
        let first = &r.trace[0].state;
        for label in [BasisState::new("a", &[0, 0]), BasisState::new("c", &[1, 0])] {
            let p = first.amplitude(&label).ok_or("missing basis state")?.norm_sqr();
            if (p - 0.5).abs() > 1e-10 {
                return Err(format!("after first cavity {label} has population {p}"));
            }
        }
    }
    for n in 3..=5 {
        let (_, r) = ghz_run(n, Sign::Plus)?;
        let field = r.field_state.as_ref().ok_or("atom not factored")?;
        let weights: Vec<f64> = field.probabilities().into_iter().filter(|p| *p > 1e-18).collect();
        if weights.len() != 2 || weights.iter().any(|w| (w - 0.5).abs() > 1e-9) {
            return Err(format!("{n} modes: nonzero weights {weights:?}"));
        }
        for k in 0..n {
            let s = entanglement_entropy(field, &Subsystems::modes([k])).map_err(e)?;
            if (s - 1.0).abs() > 1e-9 {
                return Err(format!("{n} modes: entropy of {} is {s}", mode_name(k)));
            }
        }
        let target = ghz_state(n, Sign::Plus).map_err(e)?;
        let f = fidelity(field, &target).map_err(e)?;
        if f <= 1.0 - 1e-9 {
            return Err(format!("{n} modes: fidelity {f}"));
        }
    }
    Ok("2-mode plus/minus fidelity and branch 1/2; 3-5 mode chains two-component with 1-bit cuts".into())
}

fn two_qubit_block(field: &StateVector) -> Result<DensityMatrix, String> {
    let rho = DensityMatrix::pure(field.amplitudes()).map_err(e)?;
    let rho = DensityMatrix::new(field.layout().factor_dims(), rho.matrix().clone()).map_err(e)?;
    rho.restrict(2, 1e-12).map_err(e)
}

fn check_metrics() -> Check {
    let mut worst: f64 = 0.0;
    for (label, r) in bell_runs()? {
        let field = r.field_state.as_ref().ok_or("atom not factored")?;
        let c = concurrence(&two_qubit_block(field)?).map_err(e)?;
        if (c - 1.0).abs() > 1e-9 {
            return Err(format!("{label}: concurrence {c}"));
        }
        worst = worst.max((c - 1.0).abs());
    }
    let layout = std::sync::Arc::new(
        Layout::field(vec![ModeSpec::new("A", 1).map_err(e)?, ModeSpec::new("B", 1).map_err(e)?]).map_err(e)?,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..50 {
        let amps: Vec<Complex64> = (0..4)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let psi = StateVector::from_amplitudes(layout.clone(), amps).map_err(e)?;
        let c = concurrence(&DensityMatrix::pure(psi.amplitudes()).map_err(e)?).map_err(e)?;
        let s = von_neumann_entropy(&partial_trace(&psi, &Subsystems::modes([0])).map_err(e)?).map_err(e)?;
        let predicted = binary_entropy(0.5 * (1.0 + (1.0 - c * c).max(0.0).sqrt()));
        worst_rel = worst_rel.max((s - predicted).abs());
    }
    if worst_rel < 1e-9 {
        Ok(format!("Bell concurrence 1 +- {worst:.1e}; entropy-concurrence relation max deviation {worst_rel:.1e}"))
    } else {
        Err(format!("entropy-concurrence relation deviation {worst_rel:.3e}"))
    }
}

/// Probability of the kept outcome, or 0 for an empty branch.
fn branch_prob(state: &StateVector, step: &ProtocolStep, p: &Protocol) -> Result<f64, String> {
    match apply_step(state, step, &p.system) {
        Ok((_, prob)) => Ok(prob),
        Err(ProtocolError::ZeroProbabilityBranch(_)) => Ok(0.0),
        Err(err) => Err(e(err)),
    }
}

/// Norm drift, excitation drift over cavity steps, complementary outcome
/// sums and multi-photon leakage for one run.
pub fn conservation_defects(p: &Protocol, r: &SimulationResult) -> Result<[f64; 4], String> {
    let mut norm: f64 = 0.0;
    let mut excitation: f64 = 0.0;
    let mut complement: f64 = 0.0;
    let mut leak: f64 = p.initial.multi_photon_weight();
    let mut before = &p.initial;
    for (step, entry) in p.steps.iter().zip(&r.trace) {
        let after = &entry.state;
        norm = norm.max((after.norm() - 1.0).abs());
        leak = leak.max(after.multi_photon_weight());
        match step {
            ProtocolStep::Interact { .. } => {
                let drift = excitation_number(&p.system, after) - excitation_number(&p.system, before);
                excitation = excitation.max(drift.abs());
            }
            ProtocolStep::MeasureAtom { projector, outcome } => {
                let flip = match outcome {
                    Outcome::Hit => Outcome::Miss,
                    Outcome::Miss => Outcome::Hit,
                };
                let other = ProtocolStep::MeasureAtom {
                    projector: projector.clone(),
                    outcome: flip,
                };
                let total = branch_prob(before, step, p)? + branch_prob(before, &other, p)?;
                complement = complement.max((total - 1.0).abs());
            }
            _ => {}
        }
        before = after;
    }
    Ok([norm, excitation, complement, leak])
}

fn check_conservation() -> Check {
    let mut runs: Vec<(String, Protocol, SimulationResult)> = Vec::new();
    for variant in [Sign::Plus, Sign::Minus] {
        for phi in [0.0, PI / 3.0, PI] {
            let (m, n) = default_bell_multipliers(variant);
            let p = build_bell_protocol(0.7, 1.9, phi, variant, m, n).map_err(e)?;
            let r = run_protocol(&p).map_err(e)?;
            runs.push((format!("bell {}", variant.as_str()), p, r));
        }
    }
    for n in 2..=5 {
        for sign in [Sign::Plus, Sign::Minus] {
            let (p, r) = ghz_run(n, sign)?;
            runs.push((format!("ghz{n} {}", sign.as_str()), p, r));
        }
    }
    let p = build_detection_protocol(1.0, 1.0, FRAC_1_SQRT_2, 1.0).map_err(e)?;
    let r = run_protocol(&p).map_err(e)?;
    runs.push(("detection".into(), p, r));

    let mut worst = [0.0f64; 4];
    for (label, p, r) in &runs {
        let d = conservation_defects(p, r)?;
        let limits = [1e-10, 1e-10, 1e-10, 1e-12];
        let names = ["norm drift", "excitation drift", "outcome sum", "multi-photon weight"];
        for i in 0..4 {
            if d[i] >= limits[i] {
                return Err(format!("{label}: {} {:.3e}", names[i], d[i]));
            }
            worst[i] = worst[i].max(d[i]);
        }
    }
    Ok(format!(
        "{} runs; norm {:.1e}, excitation {:.1e}, outcome sum {:.1e}, leakage {:.1e}",
        runs.len(),
        worst[0],
        worst[1],
        worst[2],
        worst[3]
    ))
}

fn check_feasibility() -> Check {
    let params = FeasibilityParams::default();
    let transit = transit_time(params.cavity_length, params.atom_velocity).map_err(e)?;
    if transit != 5.0e-5 {
        return Err(format!("transit time {transit:e} s, expected 5e-5 s"));
    }
    let report = check_budget(&params, &bell_si_plan(&params).map_err(e)?).map_err(e)?;
    if !report.pass {
        return Err(format!("verdict FAIL: {}", report.reasons.join("; ")));
    }
    Ok(format!(
        "transit 5e-5 s, protocol {:.2e} s, headroom {:.0}x, PASS",
        report.total_protocol_time,
        report.headroom()
    ))
}
