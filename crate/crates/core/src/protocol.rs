//! Protocol step machine, interaction-time rules and the canned Bell and GHZ
//! sequences.
//!
//! A protocol is an ordered list of steps applied to an initial state:
//! Ramsey preparation, Stark-switched cavity interactions, classical laser
//! pulses and atomic measurements. Measurements post-select the requested
//! outcome unless a run is sampled with a seeded generator.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{build_hamiltonian, evolve, DriveTerm, DynamicsError};
use crate::entangle::{bell_state, ghz_state, mode_name, BellVariant, EntangleError, Sign, TargetState};
use crate::hilbert::{
    AtomSpec, Coupling, CouplingId, HilbertError, LevelId, ModeSpec, StateVector, SystemSpec,
};

/// Outcome probabilities below this are treated as impossible branches.
pub const MIN_BRANCH_PROBABILITY: f64 = 1e-12;
/// Residual population allowed outside the source level of a Ramsey step.
pub const PURE_LEVEL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("rate must be finite and positive, got {0}")]
    NonPositiveRate(f64),
    #[error("multiplier m = {0} must be an odd positive integer")]
    EvenMultiplier(u32),
    #[error("quarter-period multiplier m = {0} must be 1 mod 4 (use the permissive policy for other odd m)")]
    QuarterMultiplier(u32),
    #[error("duration must be finite and non-negative, got {0}")]
    InvalidDuration(f64),
    #[error("phase must be finite, got {0}")]
    InvalidPhase(f64),
    #[error("symbolic time `{0}` needs a single rate but the step has {1}")]
    AmbiguousRate(TimeExpr, usize),
    #[error("interaction step activates no couplings")]
    EmptyInteraction,
    #[error("unknown level `{0}`")]
    UnknownLevel(String),
    #[error("unknown coupling #{0}")]
    UnknownCoupling(usize),
    #[error("Ramsey step needs two distinct levels, got `{0}` twice")]
    SameLevels(String),
    #[error("atom is not in pure level `{level}` (population {population})")]
    NotPureLevel { level: String, population: f64 },
    #[error("measurement projector is zero")]
    ZeroProjector,
    #[error("measurement outcome has probability {0:e}; branch is empty")]
    ZeroProbabilityBranch(f64),
    #[error("initial state does not belong to the protocol's system")]
    ForeignInitialState,
    #[error("malformed ladder: {0}")]
    BadLadder(String),
    #[error("m = {m}, n = {n} give a {got} Bell state, not {wanted}")]
    BellTiming { m: u32, n: u32, got: &'static str, wanted: &'static str },
    #[error("step {index} ({kind}): {source}")]
    Step {
        index: usize,
        kind: &'static str,
        #[source]
        source: Box<ProtocolError>,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Entangle(#[from] EntangleError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

fn check_rate(rate: f64) -> Result<()> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(ProtocolError::NonPositiveRate(rate))
    }
}

/// `m pi / (2 g)` for odd `m`: the atom-field exchange completes an odd
/// number of half Rabi cycles.
pub fn half_rabi_time(g: f64, m: u32) -> Result<f64> {
    check_rate(g)?;
    if m.is_multiple_of(2) {
        return Err(ProtocolError::EvenMultiplier(m));
    }
    Ok(m as f64 * PI / (2.0 * g))
}

/// Which odd multipliers `quarter_rabi_time` accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuarterPolicy {
    /// `m = 1 mod 4`: `cos(g t) = sin(g t)`, so both branches share a sign.
    #[default]
    FirstQuadrant,
    /// Any odd `m`; branch signs follow `cos`/`sin` at `m pi/4`.
    AnyOdd,
}

/// `m pi / (4 g)` under the default first-quadrant policy.
pub fn quarter_rabi_time(g: f64, m: u32) -> Result<f64> {
    quarter_rabi_time_with(g, m, QuarterPolicy::FirstQuadrant)
}

pub fn quarter_rabi_time_with(g: f64, m: u32, policy: QuarterPolicy) -> Result<f64> {
    check_rate(g)?;
    if m.is_multiple_of(2) {
        return Err(ProtocolError::EvenMultiplier(m));
    }
    if policy == QuarterPolicy::FirstQuadrant && m % 4 != 1 {
        return Err(ProtocolError::QuarterMultiplier(m));
    }
    Ok(m as f64 * PI / (4.0 * g))
}

/// `pi / Omega`: full population transfer by a classical drive.
pub fn pi_pulse_time(omega: f64) -> Result<f64> {
    check_rate(omega)?;
    Ok(PI / omega)
}

/// `pi / (2 Omega)`.
pub fn half_pi_pulse_time(omega: f64) -> Result<f64> {
    check_rate(omega)?;
    Ok(PI / (2.0 * omega))
}

/// Interaction times `t <= max_m pi / (2 min(g1, g2))` at which
/// `sin g1 t = sin g2 t` and the ground-state detection probability
/// `(sin^2 g1 t + sin^2 g2 t)/2` has a local maximum.
///
/// Stationary points of the detection probability on the solution set of
/// `sin g1 t = sin g2 t` require `g1 t` to be a multiple of `pi/2`; maxima
/// need it odd with `sin g2 t` matching the sign of `sin g1 t`.
pub fn equal_amplitude_times(g1: f64, g2: f64, max_m: u32) -> Result<Vec<f64>> {
    check_rate(g1)?;
    check_rate(g2)?;
    let horizon = max_m as f64 * PI / (2.0 * g1.min(g2));
    let mut out = Vec::new();
    let mut j: u64 = 1;
    loop {
        let t = j as f64 * PI / (2.0 * g1);
        if t > horizon * (1.0 + 1e-12) {
            break;
        }
        let (s1, s2) = ((g1 * t).sin(), (g2 * t).sin());
        if (s1 - s2).abs() < 1e-9 {
            out.push(t);
        }
        j += 2;
    }
    Ok(out)
}

/// Duration of an interaction or pulse, possibly expressed in units of the
/// step's own rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeExpr {
    Literal(f64),
    HalfRabi(u32),
    QuarterRabi(u32, QuarterPolicy),
    PiPulse,
    HalfPiPulse,
}

impl TimeExpr {
    pub fn is_symbolic(&self) -> bool {
        !matches!(self, TimeExpr::Literal(_))
    }

    /// Resolves against `rates`, which must hold exactly one entry for
    /// symbolic expressions.
    pub fn resolve(&self, rates: &[f64]) -> Result<f64> {
        let rate = || match rates {
            [r] => Ok(*r),
            _ => Err(ProtocolError::AmbiguousRate(*self, rates.len())),
        };
        match *self {
            TimeExpr::Literal(t) => {
                if t.is_finite() && t >= 0.0 {
                    Ok(t)
                } else {
                    Err(ProtocolError::InvalidDuration(t))
                }
            }
            TimeExpr::HalfRabi(m) => half_rabi_time(rate()?, m),
            TimeExpr::QuarterRabi(m, policy) => quarter_rabi_time_with(rate()?, m, policy),
            TimeExpr::PiPulse => pi_pulse_time(rate()?),
            TimeExpr::HalfPiPulse => half_pi_pulse_time(rate()?),
        }
    }
}

impl fmt::Display for TimeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeExpr::Literal(t) => write!(f, "{t:?}"),
            TimeExpr::HalfRabi(m) => write!(f, "half_rabi({m})"),
            TimeExpr::QuarterRabi(m, QuarterPolicy::FirstQuadrant) => write!(f, "quarter_rabi({m})"),
            TimeExpr::QuarterRabi(m, QuarterPolicy::AnyOdd) => write!(f, "quarter_rabi({m},any)"),
            TimeExpr::PiPulse => f.write_str("pi_pulse"),
            TimeExpr::HalfPiPulse => f.write_str("half_pi_pulse"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Hit,
    Miss,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Hit => "hit",
            Outcome::Miss => "miss",
        }
    }
}

/// Atomic state `sum_l c_l |l>` defining a projective measurement. The
/// coefficients are stored as given and normalized when applied.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomProjector {
    pub coeffs: Vec<(LevelId, Complex64)>,
}

impl AtomProjector {
    pub fn new(coeffs: Vec<(LevelId, Complex64)>) -> Self {
        Self { coeffs }
    }

    /// Projector onto a single level.
    pub fn level(level: &str) -> Self {
        Self::new(vec![(LevelId::new(level).expect("nonempty level"), Complex64::new(1.0, 0.0))])
    }

    /// Normalized atomic vector in the level order of `atom`.
    pub fn vector(&self, atom: &AtomSpec) -> Result<Vec<Complex64>> {
        let mut v = vec![Complex64::new(0.0, 0.0); atom.dim()];
        for (l, c) in &self.coeffs {
            let i = atom.index_of(l).ok_or_else(|| ProtocolError::UnknownLevel(l.to_string()))?;
            v[i] += c;
        }
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(ProtocolError::ZeroProjector);
        }
        v.iter_mut().for_each(|z| *z /= n);
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolStep {
    /// Instantaneous Ramsey rotation `|from> -> (|from> + e^{i phi} |to>)/sqrt 2`.
    PrepareSuperposition { from: LevelId, to: LevelId, phi: f64 },
    /// The listed couplings are resonant for `time`; all others are off.
    Interact { couplings: Vec<CouplingId>, time: TimeExpr },
    /// Square classical pulse.
    Pulse { drive: DriveTerm, time: TimeExpr },
    MeasureAtom { projector: AtomProjector, outcome: Outcome },
}

impl ProtocolStep {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolStep::PrepareSuperposition { .. } => "ramsey",
            ProtocolStep::Interact { .. } => "interact",
            ProtocolStep::Pulse { .. } => "pulse",
            ProtocolStep::MeasureAtom { .. } => "measure",
        }
    }

    /// Rates the step's symbolic durations are expressed against.
    pub fn rates(&self, spec: &SystemSpec) -> Result<Vec<f64>> {
        match self {
            ProtocolStep::Interact { couplings, .. } => couplings
                .iter()
                .map(|id| {
                    spec.coupling(*id)
                        .map(|c| c.g)
                        .ok_or(ProtocolError::UnknownCoupling(id.0))
                })
                .collect(),
            ProtocolStep::Pulse { drive, .. } => Ok(vec![drive.rabi]),
            _ => Ok(Vec::new()),
        }
    }

    /// Resolved duration for interactions and pulses, `None` otherwise.
    pub fn duration(&self, spec: &SystemSpec) -> Result<Option<f64>> {
        match self {
            ProtocolStep::Interact { time, .. } | ProtocolStep::Pulse { time, .. } => {
                Ok(Some(time.resolve(&self.rates(spec)?)?))
            }
            _ => Ok(None),
        }
    }

    pub(crate) fn validate(&self, spec: &SystemSpec) -> Result<()> {
        let level = |l: &LevelId| {
            spec.level_index(l)
                .map(|_| ())
                .ok_or_else(|| ProtocolError::UnknownLevel(l.to_string()))
        };
        match self {
            ProtocolStep::PrepareSuperposition { from, to, phi } => {
                level(from)?;
                level(to)?;
                if from == to {
                    return Err(ProtocolError::SameLevels(from.to_string()));
                }
                if !phi.is_finite() {
                    return Err(ProtocolError::InvalidPhase(*phi));
                }
            }
            ProtocolStep::Interact { couplings, .. } => {
                if couplings.is_empty() {
                    return Err(ProtocolError::EmptyInteraction);
                }
                build_hamiltonian(spec, couplings, &[])?;
                self.duration(spec)?;
            }
            ProtocolStep::Pulse { drive, .. } => {
                build_hamiltonian(spec, &[], std::slice::from_ref(drive))?;
                self.duration(spec)?;
            }
            ProtocolStep::MeasureAtom { projector, .. } => {
                projector.vector(spec.atom())?;
            }
        }
        Ok(())
    }
}

/// Applies one step, returning the new state and the probability of the
/// kept measurement outcome (1 for unitary steps).
pub fn apply_step(state: &StateVector, step: &ProtocolStep, spec: &SystemSpec) -> Result<(StateVector, f64)> {
    match step {
        ProtocolStep::MeasureAtom { projector, outcome } => measure(state, projector, *outcome, spec),
        _ => Ok((apply_unitary(state, step, spec)?, 1.0)),
    }
}

fn apply_unitary(state: &StateVector, step: &ProtocolStep, spec: &SystemSpec) -> Result<StateVector> {
    match step {
        ProtocolStep::PrepareSuperposition { from, to, phi } => ramsey(state, from, to, *phi, spec),
        ProtocolStep::Interact { couplings, .. } => {
            if couplings.is_empty() {
                return Err(ProtocolError::EmptyInteraction);
            }
            let t = step.duration(spec)?.expect("interaction has a duration");
            let h = build_hamiltonian(spec, couplings, &[])?;
            Ok(evolve(state, &h, t)?)
        }
        ProtocolStep::Pulse { drive, .. } => {
            let t = step.duration(spec)?.expect("pulse has a duration");
            let h = build_hamiltonian(spec, &[], std::slice::from_ref(drive))?;
            Ok(evolve(state, &h, t)?)
        }
        ProtocolStep::MeasureAtom { .. } => unreachable!("handled by apply_step"),
    }
}

fn ramsey(state: &StateVector, from: &LevelId, to: &LevelId, phi: f64, spec: &SystemSpec) -> Result<StateVector> {
    let lf = spec.level_index(from).ok_or_else(|| ProtocolError::UnknownLevel(from.to_string()))?;
    let lt = spec.level_index(to).ok_or_else(|| ProtocolError::UnknownLevel(to.to_string()))?;
    if lf == lt {
        return Err(ProtocolError::SameLevels(from.to_string()));
    }
    let population = state.level_population(lf);
    if 1.0 - population > PURE_LEVEL_TOL {
        return Err(ProtocolError::NotPureLevel {
            level: from.to_string(),
            population,
        });
    }
    let f = spec.layout().field_dim();
    let src = &state.amplitudes()[lf * f..(lf + 1) * f];
    let mut amps = vec![Complex64::new(0.0, 0.0); state.dim()];
    let rot = Complex64::from_polar(FRAC_1_SQRT_2, phi);
    for (j, z) in src.iter().enumerate() {
        amps[lf * f + j] = z * FRAC_1_SQRT_2;
        amps[lt * f + j] = z * rot;
    }
    Ok(StateVector::from_amplitudes(state.layout().clone(), amps)?)
}

/// Returns `(post-measurement state, outcome probability)`; errors on an
/// empty branch.
fn measure(state: &StateVector, projector: &AtomProjector, outcome: Outcome, spec: &SystemSpec) -> Result<(StateVector, f64)> {
    let (projected, p) = split_measurement(state, projector, spec)?;
    let (amps, prob) = match outcome {
        Outcome::Hit => (projected, p),
        Outcome::Miss => {
            let rest: Vec<Complex64> = state.amplitudes().iter().zip(&projected).map(|(a, b)| a - b).collect();
            (rest, 1.0 - p)
        }
    };
    if prob < MIN_BRANCH_PROBABILITY {
        return Err(ProtocolError::ZeroProbabilityBranch(prob));
    }
    Ok((StateVector::from_amplitudes(state.layout().clone(), amps)?, prob.min(1.0)))
}

/// `(P|psi>, <psi|P|psi>)` for `P = |chi><chi| (x) 1`.
fn split_measurement(state: &StateVector, projector: &AtomProjector, spec: &SystemSpec) -> Result<(Vec<Complex64>, f64)> {
    let chi = projector.vector(spec.atom())?;
    let f = spec.layout().field_dim();
    let psi = state.amplitudes();
    let mut cond = vec![Complex64::new(0.0, 0.0); f];
    for (l, c) in chi.iter().enumerate() {
        for j in 0..f {
            cond[j] += c.conj() * psi[l * f + j];
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); psi.len()];
    for (l, c) in chi.iter().enumerate() {
        for j in 0..f {
            out[l * f + j] = c * cond[j];
        }
    }
    let p = cond.iter().map(|z| z.norm_sqr()).sum::<f64>();
    Ok((out, p))
}

/// Probability that measuring `projector` on `state` yields a hit.
pub fn hit_probability(state: &StateVector, projector: &AtomProjector, spec: &SystemSpec) -> Result<f64> {
    Ok(split_measurement(state, projector, spec)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub system: SystemSpec,
    pub initial: StateVector,
    pub steps: Vec<ProtocolStep>,
}

impl Protocol {
    pub fn new(system: SystemSpec, initial: StateVector, steps: Vec<ProtocolStep>) -> Result<Self> {
        if **initial.layout() != **system.layout() {
            return Err(ProtocolError::ForeignInitialState);
        }
        for (index, step) in steps.iter().enumerate() {
            step.validate(&system).map_err(|e| ProtocolError::Step {
                index,
                kind: step.kind(),
                source: Box::new(e),
            })?;
        }
        Ok(Self { system, initial, steps })
    }

    pub fn timing_plan(&self) -> Result<TimingPlan> {
        let mut entries = Vec::new();
        for (index, step) in self.steps.iter().enumerate() {
            let time = match step {
                ProtocolStep::Interact { time, .. } | ProtocolStep::Pulse { time, .. } => *time,
                _ => continue,
            };
            let rates = step.rates(&self.system)?;
            entries.push(TimingEntry {
                step: index,
                kind: step.kind(),
                duration: time.resolve(&rates)?,
                rule: time,
                rates,
            });
        }
        Ok(TimingPlan { entries })
    }
}

/// Resolved durations of every timed step together with the rule and rate
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingPlan {
    pub entries: Vec<TimingEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingEntry {
    pub step: usize,
    pub kind: &'static str,
    pub duration: f64,
    pub rule: TimeExpr,
    pub rates: Vec<f64>,
}

impl TimingPlan {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.duration).sum()
    }
}

/// One row of a run's trace: the state after the step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub index: usize,
    pub kind: &'static str,
    pub duration: Option<f64>,
    /// Probability of the kept outcome for measurements; `None` otherwise.
    pub outcome_probability: Option<f64>,
    pub outcome: Option<Outcome>,
    pub state: StateVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub initial: StateVector,
    /// Post-selected, renormalized composite state.
    pub final_state: StateVector,
    /// Product of the probabilities of every kept measurement outcome.
    pub branch_probability: f64,
    pub trace: Vec<TraceEntry>,
    /// Field state with the atom factored out, when the final state is a
    /// product of atom and field.
    pub field_state: Option<StateVector>,
    pub fidelities: Vec<(String, f64)>,
    /// Relative phase of the `|1...1>` branch for GHZ runs.
    pub ghz_phase: Option<f64>,
}

impl SimulationResult {
    /// Records the fidelity of the field state against `target`.
    pub fn add_fidelity(&mut self, target: &TargetState) -> Result<f64> {
        let field = self.field_state.as_ref().ok_or(EntangleError::AtomNotProjected)?;
        let f = crate::entangle::fidelity(field, target)?;
        self.fidelities.push((target.name.clone(), f));
        Ok(f)
    }
}

/// Runs every step in order, post-selecting each measurement's requested
/// outcome.
pub fn run_protocol(p: &Protocol) -> Result<SimulationResult> {
    run(p, None)
}

/// Like [`run_protocol`], but draws each measurement outcome from its Born
/// probability with a generator seeded by `seed`.
pub fn run_protocol_sampled(p: &Protocol, seed: u64) -> Result<SimulationResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run(p, Some(&mut rng))
}

fn run(p: &Protocol, mut rng: Option<&mut ChaCha8Rng>) -> Result<SimulationResult> {
    let mut state = p.initial.clone();
    let mut branch = 1.0;
    let mut trace = Vec::with_capacity(p.steps.len());
    for (index, step) in p.steps.iter().enumerate() {
        let wrap = |e: ProtocolError| ProtocolError::Step {
            index,
            kind: step.kind(),
            source: Box::new(e),
        };
        let duration = step.duration(&p.system).map_err(wrap)?;
        let (next, prob, outcome) = match step {
            ProtocolStep::MeasureAtom { projector, outcome } => {
                let outcome = match rng.as_deref_mut() {
                    Some(rng) => {
                        let hit = hit_probability(&state, projector, &p.system).map_err(wrap)?;
                        if rng.gen::<f64>() < hit {
                            Outcome::Hit
                        } else {
                            Outcome::Miss
                        }
                    }
                    None => *outcome,
                };
                let (s, prob) = measure(&state, projector, outcome, &p.system).map_err(wrap)?;
                (s, Some(prob), Some(outcome))
            }
            _ => (apply_unitary(&state, step, &p.system).map_err(wrap)?, None, None),
        };
        if let Some(prob) = prob {
            branch *= prob;
        }
        trace.push(TraceEntry {
            index,
            kind: step.kind(),
            duration,
            outcome_probability: prob,
            outcome,
            state: next.clone(),
        });
        state = next;
    }
    let field_state = state.factor_atom().map(|(_, f)| f);
    Ok(SimulationResult {
        initial: p.initial.clone(),
        final_state: state,
        branch_probability: branch,
        trace,
        field_state,
        fidelities: Vec::new(),
        ghz_phase: None,
    })
}

/// Product of the kept-outcome probabilities. Unlike [`run_protocol`], an
/// empty branch is not an error: the walk stops there and returns the
/// product so far times that branch's probability.
pub fn branch_probability(p: &Protocol) -> Result<f64> {
    let mut state = p.initial.clone();
    let mut branch = 1.0;
    for (index, step) in p.steps.iter().enumerate() {
        let wrap = |e: ProtocolError| ProtocolError::Step {
            index,
            kind: step.kind(),
            source: Box::new(e),
        };
        if let ProtocolStep::MeasureAtom { projector, outcome } = step {
            let hit = hit_probability(&state, projector, &p.system).map_err(wrap)?;
            let prob = match outcome {
                Outcome::Hit => hit,
                Outcome::Miss => 1.0 - hit,
            };
            if prob < MIN_BRANCH_PROBABILITY {
                return Ok(branch * prob.max(0.0));
            }
        }
        let (next, prob) = apply_step(&state, step, &p.system).map_err(wrap)?;
        branch *= prob;
        state = next;
    }
    Ok(branch)
}

/// Default photon truncation: one above the single-excitation sector so that
/// leakage would be visible.
pub const DEFAULT_NMAX: usize = 2;

/// Three-level V atom (`a`, `b` upper; `c` lower) with mode `A` on `a <-> c`
/// and mode `B` on `b <-> c`.
pub fn bell_system(g1: f64, g2: f64, n_max: usize) -> Result<SystemSpec> {
    Ok(SystemSpec::new(
        AtomSpec::new(["a", "b", "c"])?,
        vec![ModeSpec::new("A", n_max)?, ModeSpec::new("B", n_max)?],
        vec![Coupling::new("A", "a", "c", g1)?, Coupling::new("B", "b", "c", g2)?],
    )?)
}

fn level(name: &str) -> LevelId {
    LevelId::new(name).expect("nonempty level")
}

/// Ramsey preparation of `(|a> + e^{i phi}|b>)/sqrt 2`, interaction with mode
/// `A` for `m pi/(2 g1)`, then mode `B` for `n pi/(2 g2)`, then detection of
/// the atom in `|c>`.
///
/// The field is left in `(sin(m pi/2)|1,0> + e^{i phi} sin(n pi/2)|0,1>)`
/// up to a global `-i/sqrt 2`, so `variant` fixes whether `m` and `n` must
/// agree mod 4 (plus) or differ (minus).
pub fn build_bell_protocol(g1: f64, g2: f64, phi: f64, variant: Sign, m: u32, n: u32) -> Result<Protocol> {
    build_bell_protocol_in(bell_system(g1, g2, DEFAULT_NMAX)?, phi, variant, m, n)
}

/// As [`build_bell_protocol`] on a caller-supplied Bell system.
pub fn build_bell_protocol_in(system: SystemSpec, phi: f64, variant: Sign, m: u32, n: u32) -> Result<Protocol> {
    let ga = system.coupling(CouplingId(0)).map(|c| c.g).unwrap_or(0.0);
    let gb = system.coupling(CouplingId(1)).map(|c| c.g).unwrap_or(0.0);
    half_rabi_time(ga, m)?;
    half_rabi_time(gb, n)?;
    let got = if (m % 4 == 1) == (n % 4 == 1) { Sign::Plus } else { Sign::Minus };
    if got != variant {
        return Err(ProtocolError::BellTiming {
            m,
            n,
            got: got.as_str(),
            wanted: variant.as_str(),
        });
    }
    let initial = system.vacuum_state(&level("a"))?;
    let steps = vec![
        ProtocolStep::PrepareSuperposition {
            from: level("a"),
            to: level("b"),
            phi,
        },
        ProtocolStep::Interact {
            couplings: vec![CouplingId(0)],
            time: TimeExpr::HalfRabi(m),
        },
        ProtocolStep::Interact {
            couplings: vec![CouplingId(1)],
            time: TimeExpr::HalfRabi(n),
        },
        ProtocolStep::MeasureAtom {
            projector: AtomProjector::level("c"),
            outcome: Outcome::Hit,
        },
    ];
    Protocol::new(system, initial, steps)
}

/// Default `(m, n)` for each Bell variant: `(1, 1)` and `(1, 3)`.
pub fn default_bell_multipliers(variant: Sign) -> (u32, u32) {
    match variant {
        Sign::Plus => (1, 1),
        Sign::Minus => (1, 3),
    }
}

/// Field state produced by the Bell protocol. The Ramsey phase rides on the
/// photon in mode `B`, so the result is the `psi` state at phase `-phi` up to
/// a global phase.
pub fn bell_target(variant: Sign, phi: f64) -> Result<TargetState> {
    let v = match variant {
        Sign::Plus => BellVariant::PsiPlus,
        Sign::Minus => BellVariant::PsiMinus,
    };
    Ok(bell_state(v, -phi)?)
}

/// Ramsey preparation followed by one shared interaction with both modes
/// for `t`, then detection in `|c>`. The hit probability is
/// `(sin^2 g1 t + sin^2 g2 t)/2`.
pub fn build_detection_protocol(g1: f64, g2: f64, phi: f64, t: f64) -> Result<Protocol> {
    let system = bell_system(g1, g2, DEFAULT_NMAX)?;
    let initial = system.vacuum_state(&level("a"))?;
    let steps = vec![
        ProtocolStep::PrepareSuperposition {
            from: level("a"),
            to: level("b"),
            phi,
        },
        ProtocolStep::Interact {
            couplings: vec![CouplingId(0), CouplingId(1)],
            time: TimeExpr::Literal(t),
        },
        ProtocolStep::MeasureAtom {
            projector: AtomProjector::level("c"),
            outcome: Outcome::Hit,
        },
    ];
    Protocol::new(system, initial, steps)
}

/// Ladder system for an `n`-mode GHZ chain: levels `a, b, c, b1, b2, ...`,
/// modes `A, B, B1, ...`, with mode `A` on `a <-> c`, `B` on `b <-> c` and
/// `Bk` on `bk <-> c`. `gs[k]` is the vacuum Rabi frequency of mode `k`.
pub fn ghz_system(gs: &[f64], n_max: usize) -> Result<SystemSpec> {
    if gs.len() < 2 {
        return Err(ProtocolError::BadLadder(format!("need at least 2 modes, got {}", gs.len())));
    }
    let uppers: Vec<String> = (0..gs.len())
        .map(|k| match k {
            0 => "a".to_string(),
            1 => "b".to_string(),
            _ => format!("b{}", k - 1),
        })
        .collect();
    let mut levels = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    levels.extend(uppers.iter().skip(2).cloned());
    let modes = (0..gs.len())
        .map(|k| ModeSpec::new(mode_name(k), n_max))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let couplings = gs
        .iter()
        .enumerate()
        .map(|(k, g)| Coupling::new(&mode_name(k), &uppers[k], "c", *g))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(SystemSpec::new(AtomSpec::new(levels)?, modes, couplings)?)
}

/// Pulse area of the lasers that re-excite the atom before modes after `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtraPulseArea {
    /// `pi`: unit transfer `|c> -> |bk>`.
    #[default]
    Pi,
    /// `pi/2`: duration `pi/(2 Omega)`; transfers half the population.
    HalfPi,
}

/// How the final atomic measurement basis is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseReference {
    /// Measure `(|a> +- e^{i theta}|c>)/sqrt 2` with `theta` the tracked
    /// branch phase, leaving the field in `(|0..0> +- |1..1>)/sqrt 2`.
    #[default]
    Compensated,
    /// Measure `(|a> +- |c>)/sqrt 2`; the field keeps `e^{i theta}`.
    Bare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GhzOptions {
    pub sign: Sign,
    pub quarter_m: u32,
    pub quarter_policy: QuarterPolicy,
    pub drive_phase: f64,
    pub extra_pulse_area: ExtraPulseArea,
    pub phase_reference: PhaseReference,
}

impl Default for GhzOptions {
    fn default() -> Self {
        Self {
            sign: Sign::Plus,
            quarter_m: 1,
            quarter_policy: QuarterPolicy::FirstQuadrant,
            drive_phase: 0.0,
            extra_pulse_area: ExtraPulseArea::Pi,
            phase_reference: PhaseReference::Compensated,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GhzBuild {
    pub protocol: Protocol,
    /// `arg(C_{c,1..1} / C_{a,0..0})` just before the final measurement.
    pub branch_phase: f64,
    /// Expected field state after a successful measurement.
    pub target: TargetState,
}

/// Builds the GHZ chain on a ladder system (see [`ghz_system`]).
///
/// Sequence: quarter Rabi period on mode 0 from the initial upper level,
/// then for every further mode `k` a laser pulse `lower -> upper_k` followed
/// by a half Rabi period on mode `k`, then a measurement of the atom in
/// `(|upper_0> +- e^{i theta}|lower>)/sqrt 2`. `omegas[k-1]` is the Rabi
/// frequency of the laser before mode `k`.
pub fn build_ghz_protocol(system: &SystemSpec, omegas: &[f64], opts: &GhzOptions) -> Result<GhzBuild> {
    let n = system.modes().len();
    if n < 2 {
        return Err(ProtocolError::BadLadder(format!("need at least 2 modes, got {n}")));
    }
    if omegas.len() != n - 1 {
        return Err(ProtocolError::BadLadder(format!(
            "need {} laser Rabi frequencies, got {}",
            n - 1,
            omegas.len()
        )));
    }
    if !opts.drive_phase.is_finite() {
        return Err(ProtocolError::InvalidPhase(opts.drive_phase));
    }
    let mut chain = Vec::with_capacity(n);
    for mode in system.modes() {
        let ids = system.couplings_on_mode(&mode.id);
        if ids.len() != 1 {
            return Err(ProtocolError::BadLadder(format!(
                "mode `{}` must have exactly one coupling, has {}",
                mode.id,
                ids.len()
            )));
        }
        let c = system.coupling(ids[0]).expect("id from spec").clone();
        chain.push((ids[0], c));
    }
    let lower = chain[0].1.lower.clone();
    for (_, c) in &chain {
        if c.lower != lower {
            return Err(ProtocolError::BadLadder(format!(
                "mode `{}` ends on `{}`, expected shared lower level `{lower}`",
                c.mode, c.lower
            )));
        }
        if c.g.is_nan() || c.g <= 0.0 {
            return Err(ProtocolError::NonPositiveRate(c.g));
        }
    }
    let mut uppers: Vec<&LevelId> = chain.iter().map(|(_, c)| &c.upper).collect();
    uppers.sort();
    uppers.dedup();
    if uppers.len() != n {
        return Err(ProtocolError::BadLadder("modes must couple distinct upper levels".into()));
    }

    let first = &chain[0].1;
    let t0 = quarter_rabi_time_with(first.g, opts.quarter_m, opts.quarter_policy)?;
    let mut steps = vec![ProtocolStep::Interact {
        couplings: vec![chain[0].0],
        time: TimeExpr::QuarterRabi(opts.quarter_m, opts.quarter_policy),
    }];
    // ratio C_{lower,1..1} / C_{upper0,0..0}
    let mi = Complex64::new(0.0, -1.0);
    let mut ratio = mi * (first.g * t0).sin() / (first.g * t0).cos();
    for (k, (id, c)) in chain.iter().enumerate().skip(1) {
        let omega = omegas[k - 1];
        let (time, area) = match (k, opts.extra_pulse_area) {
            (1, _) | (_, ExtraPulseArea::Pi) => (TimeExpr::PiPulse, PI),
            (_, ExtraPulseArea::HalfPi) => (TimeExpr::HalfPiPulse, PI / 2.0),
        };
        time.resolve(&[omega])?;
        steps.push(ProtocolStep::Pulse {
            drive: DriveTerm {
                upper: c.upper.clone(),
                lower: lower.clone(),
                rabi: omega,
                phase: opts.drive_phase,
            },
            time,
        });
        ratio *= mi * Complex64::from_polar(1.0, opts.drive_phase) * (area / 2.0).sin();
        let tk = half_rabi_time(c.g, 1)?;
        steps.push(ProtocolStep::Interact {
            couplings: vec![*id],
            time: TimeExpr::HalfRabi(1),
        });
        ratio *= mi * (c.g * tk).sin();
    }
    let theta = ratio.arg();
    let s = opts.sign.factor();
    let lower_coeff = match opts.phase_reference {
        PhaseReference::Compensated => Complex64::from_polar(s, theta),
        PhaseReference::Bare => Complex64::new(s, 0.0),
    };
    steps.push(ProtocolStep::MeasureAtom {
        projector: AtomProjector::new(vec![
            (first.upper.clone(), Complex64::new(1.0, 0.0)),
            (lower.clone(), lower_coeff),
        ]),
        outcome: Outcome::Hit,
    });

    let target = match opts.phase_reference {
        PhaseReference::Compensated => ghz_state(n, opts.sign)?,
        PhaseReference::Bare => {
            let base = ghz_state(n, Sign::Plus)?;
            let mut amps = base.vector.amplitudes().to_vec();
            let last = amps.len() - 1;
            amps[last] = amps[0] * Complex64::from_polar(s, theta);
            TargetState {
                name: format!("ghz{n}_{}_bare", opts.sign.as_str()),
                vector: StateVector::from_amplitudes(base.vector.layout().clone(), amps)?,
            }
        }
    };
    let initial = system.vacuum_state(&first.upper)?;
    Ok(GhzBuild {
        protocol: Protocol::new(system.clone(), initial, steps)?,
        branch_phase: theta,
        target,
    })
}

/// Runs a GHZ build and records the branch phase and target fidelity.
pub fn run_ghz(build: &GhzBuild) -> Result<SimulationResult> {
    let mut result = run_protocol(&build.protocol)?;
    result.ghz_phase = Some(build.branch_phase);
    result.add_fidelity(&build.target)?;
    Ok(result)
}
