//! One-parameter sweeps emitted as CSV.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::entangle::{field_fidelity, TargetState};
use crate::hilbert::StateVector;
use crate::interface::json::fmt_f64;
use crate::protocol::{branch_probability, run_protocol, Protocol, ProtocolError, ProtocolStep, TimeExpr, MIN_BRANCH_PROBABILITY};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("unknown parameter path `{0}` (expected step.<i>.t|phi|omega|phase or coupling.<mode>.g)")]
    BadPath(String),
    #[error("parameter `{path}`: {reason}")]
    Unresolved { path: String, reason: String },
    #[error("sweep needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("sweep range must be finite with from < to, got [{0}, {1}]")]
    BadRange(f64, f64),
    #[error("at {path} = {value}: {source}")]
    Run {
        path: String,
        value: f64,
        #[source]
        source: ProtocolError,
    },
}

/// Which protocol number a sweep varies. Step indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepParam {
    StepTime(usize),
    StepPhi(usize),
    StepOmega(usize),
    StepPhase(usize),
    CouplingRate(String),
}

impl FromStr for SweepParam {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, SweepError> {
        let bad = || SweepError::BadPath(s.to_string());
        let parts: Vec<&str> = s.split('.').collect();
        match parts.as_slice() {
            ["step", i, field] => {
                let i: usize = i.parse().map_err(|_| bad())?;
                match *field {
                    "t" => Ok(SweepParam::StepTime(i)),
                    "phi" => Ok(SweepParam::StepPhi(i)),
                    "omega" => Ok(SweepParam::StepOmega(i)),
                    "phase" => Ok(SweepParam::StepPhase(i)),
                    _ => Err(bad()),
                }
            }
            ["coupling", mode, "g"] if !mode.is_empty() => Ok(SweepParam::CouplingRate(mode.to_string())),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepParam::StepTime(i) => write!(f, "step.{i}.t"),
            SweepParam::StepPhi(i) => write!(f, "step.{i}.phi"),
            SweepParam::StepOmega(i) => write!(f, "step.{i}.omega"),
            SweepParam::StepPhase(i) => write!(f, "step.{i}.phase"),
            SweepParam::CouplingRate(m) => write!(f, "coupling.{m}.g"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
    /// Extra fidelity columns, one per target.
    pub targets: Vec<TargetState>,
}

impl SweepConfig {
    pub fn new(param: SweepParam, from: f64, to: f64, steps: usize) -> Result<Self, SweepError> {
        if steps < 2 {
            return Err(SweepError::TooFewSteps(steps));
        }
        if !(from.is_finite() && to.is_finite() && from < to) {
            return Err(SweepError::BadRange(from, to));
        }
        Ok(Self {
            param,
            from,
            to,
            steps,
            targets: Vec::new(),
        })
    }

    pub fn with_targets(mut self, targets: Vec<TargetState>) -> Self {
        self.targets = targets;
        self
    }

    /// Grid point `k`; the last point is exactly `to`.
    pub fn value(&self, k: usize) -> f64 {
        if k + 1 == self.steps {
            self.to
        } else {
            self.from + (self.to - self.from) * k as f64 / (self.steps - 1) as f64
        }
    }
}

/// Copy of `p` with the swept number set to `value`.
pub fn apply_param(p: &Protocol, param: &SweepParam, value: f64) -> Result<Protocol, SweepError> {
    let unresolved = |reason: String| SweepError::Unresolved {
        path: param.to_string(),
        reason,
    };
    let mut system = p.system.clone();
    let mut steps = p.steps.clone();
    match param {
        SweepParam::CouplingRate(mode) => {
            let ids = system.couplings_on_mode(mode);
            if ids.len() != 1 {
                return Err(unresolved(format!("mode `{mode}` has {} couplings, need exactly 1", ids.len())));
            }
            system = system.with_coupling_rate(ids[0], value).map_err(|e| unresolved(e.to_string()))?;
        }
        SweepParam::StepTime(i) | SweepParam::StepPhi(i) | SweepParam::StepOmega(i) | SweepParam::StepPhase(i) => {
            let len = steps.len();
            let step = steps
                .get_mut(*i)
                .ok_or_else(|| unresolved(format!("protocol has {len} steps")))?;
            match (param, step) {
                (SweepParam::StepTime(_), ProtocolStep::Interact { time, .. } | ProtocolStep::Pulse { time, .. }) => {
                    *time = TimeExpr::Literal(value)
                }
                (SweepParam::StepPhi(_), ProtocolStep::PrepareSuperposition { phi, .. }) => *phi = value,
                (SweepParam::StepOmega(_), ProtocolStep::Pulse { drive, .. }) => drive.rabi = value,
                (SweepParam::StepPhase(_), ProtocolStep::Pulse { drive, .. }) => drive.phase = value,
                (_, s) => return Err(unresolved(format!("step {i} is a {} step", s.kind()))),
            }
        }
    }
    let initial = StateVector::from_amplitudes(system.layout().clone(), p.initial.amplitudes().to_vec())
        .map_err(|e| unresolved(e.to_string()))?;
    Protocol::new(system, initial, steps).map_err(|e| unresolved(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub branch_probability: f64,
    /// Fidelity of the field to each target; 0 on an empty branch.
    pub fidelities: Vec<f64>,
}

fn row(p: &Protocol, cfg: &SweepConfig, k: usize) -> Result<SweepRow, SweepError> {
    let value = cfg.value(k);
    let run_err = |source: ProtocolError| SweepError::Run {
        path: cfg.param.to_string(),
        value,
        source,
    };
    let q = apply_param(p, &cfg.param, value)?;
    let prob = branch_probability(&q).map_err(run_err)?;
    let fidelities = if cfg.targets.is_empty() || prob < MIN_BRANCH_PROBABILITY {
        vec![0.0; cfg.targets.len()]
    } else {
        let r = run_protocol(&q).map_err(run_err)?;
        cfg.targets
            .iter()
            .map(|t| field_fidelity(&r.final_state, t).map_err(|e| run_err(e.into())))
            .collect::<Result<_, _>>()?
    };
    Ok(SweepRow {
        value,
        branch_probability: prob,
        fidelities,
    })
}

/// Evaluates every grid point in parallel; rows come back in grid order.
pub fn sweep_rows(p: &Protocol, cfg: &SweepConfig) -> Result<Vec<SweepRow>, SweepError> {
    apply_param(p, &cfg.param, cfg.from)?;
    (0..cfg.steps).into_par_iter().map(|k| row(p, cfg, k)).collect()
}

/// CSV with a header row, `,` delimiters and `\n` line endings.
pub fn run_sweep(p: &Protocol, cfg: &SweepConfig) -> Result<String, SweepError> {
    let rows = sweep_rows(p, cfg)?;
    let mut out = format!("{},branch_probability", cfg.param);
    for t in &cfg.targets {
        out.push_str(&format!(",fidelity_{}", t.name));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&fmt_f64(r.value));
        out.push(',');
        out.push_str(&fmt_f64(r.branch_probability));
        for f in r.fidelities {
            out.push(',');
            out.push_str(&fmt_f64(f));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interface::parser::parse_protocol;
    use crate::protocol::build_detection_protocol;
    use std::f64::consts::PI;

    const ONE_MODE: &str = "\
level a
level c
mode A nmax=2
couple A a c g=1
init level=a
step interact modes=A t=0.5
step measure coeffs=c outcome=hit
";

    fn column(csv: &str, col: usize) -> Vec<f64> {
        csv.lines().skip(1).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
    }

    #[test]
    fn one_mode_rabi_curve() {
        let (_, p) = parse_protocol(ONE_MODE).unwrap();
        let cfg = SweepConfig::new("step.0.t".parse().unwrap(), 0.0, PI, 201).unwrap();
        let csv = run_sweep(&p, &cfg).unwrap();
        assert!(csv.starts_with("step.0.t,branch_probability\n"));
        assert_eq!(csv.lines().count(), 202);
        let ts = column(&csv, 0);
        let ps = column(&csv, 1);
        assert_eq!(ts.last(), Some(&PI));
        for (t, p) in ts.iter().zip(&ps) {
            assert!((p - t.sin().powi(2)).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn two_mode_peak() {
        let p = build_detection_protocol(1.0, 1.0, 0.0, 0.1).unwrap();
        let cfg = SweepConfig::new(SweepParam::StepTime(1), 0.0, PI, 201).unwrap();
        let rows = sweep_rows(&p, &cfg).unwrap();
        let peak = rows.iter().max_by(|a, b| a.branch_probability.total_cmp(&b.branch_probability)).unwrap();
        assert!((peak.value - PI / 2.0).abs() < 1e-15);
        assert!((peak.branch_probability - 1.0).abs() < 1e-10);
    }

    #[test]
    fn coupling_sweep_keeps_symbolic_times() {
        let text = ONE_MODE.replace("t=0.5", "t=half_rabi(1)");
        let (_, p) = parse_protocol(&text).unwrap();
        let cfg = SweepConfig::new("coupling.A.g".parse().unwrap(), 0.5, 3.0, 6).unwrap();
        let rows = sweep_rows(&p, &cfg).unwrap();
        assert!(rows.iter().all(|r| (r.branch_probability - 1.0).abs() < 1e-10));
    }

    #[test]
    fn config_errors() {
        assert_eq!(SweepConfig::new(SweepParam::StepTime(0), 0.0, 1.0, 1).unwrap_err(), SweepError::TooFewSteps(1));
        assert!(SweepConfig::new(SweepParam::StepTime(0), 1.0, 1.0, 5).is_err());
        assert!("step.x.t".parse::<SweepParam>().is_err());
        assert!("coupling.A.h".parse::<SweepParam>().is_err());
        let (_, p) = parse_protocol(ONE_MODE).unwrap();
        for path in ["step.7.t", "step.1.t", "step.0.phi", "coupling.Z.g"] {
            let cfg = SweepConfig::new(path.parse().unwrap(), 0.0, 1.0, 3).unwrap();
            assert!(matches!(run_sweep(&p, &cfg), Err(SweepError::Unresolved { .. })), "{path}");
        }
    }
}
