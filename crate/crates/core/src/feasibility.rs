//! Laboratory-unit timing budget: atom transit through the cavity, per-step
//! interaction times and their fit against atomic and cavity lifetimes.

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

use crate::protocol::{half_rabi_time, pi_pulse_time, quarter_rabi_time, ProtocolError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeasibilityError {
    #[error("{name} must be finite and positive, got {value}")]
    NonPositive { name: String, value: f64 },
    #[error("plan needs {needed} cavity couplings, parameters list {got}")]
    NotEnoughCouplings { needed: usize, got: usize },
    #[error("plan needs a laser Rabi frequency (`drive=`)")]
    MissingDrive,
    #[error("GHZ plan needs at least 2 modes, got {0}")]
    TooFewModes(usize),
    #[error("line {line}: {message}")]
    Params { line: usize, message: String },
    #[error(transparent)]
    Timing(#[from] ProtocolError),
}

pub type Result<T> = std::result::Result<T, FeasibilityError>;

fn positive(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(FeasibilityError::NonPositive {
            name: name.to_string(),
            value,
        })
    }
}

/// Time of flight across a region of `length` metres at `velocity` m/s.
pub fn transit_time(length: f64, velocity: f64) -> Result<f64> {
    Ok(positive("length", length)? / positive("velocity", velocity)?)
}

/// Experimental parameters in SI units. Rates are angular (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityParams {
    pub atom_velocity: f64,
    pub cavity_length: f64,
    pub atomic_lifetime: f64,
    pub cavity_lifetime: f64,
    pub couplings_si: Vec<(String, f64)>,
    pub drive_si: Option<f64>,
}

/// Illustrative vacuum Rabi frequency: `2 pi x 10 kHz`, which puts a half
/// Rabi period at 25 microseconds.
pub const DEFAULT_COUPLING_SI: f64 = 2.0 * PI * 1.0e4;

impl Default for FeasibilityParams {
    fn default() -> Self {
        Self {
            atom_velocity: 400.0,
            cavity_length: 0.02,
            atomic_lifetime: 3.0e-3,
            cavity_lifetime: 3.0e-3,
            couplings_si: vec![
                ("A".to_string(), DEFAULT_COUPLING_SI),
                ("B".to_string(), DEFAULT_COUPLING_SI),
            ],
            drive_si: None,
        }
    }
}

impl FeasibilityParams {
    pub fn validate(&self) -> Result<()> {
        positive("atom_velocity", self.atom_velocity)?;
        positive("cavity_length", self.cavity_length)?;
        positive("atomic_lifetime", self.atomic_lifetime)?;
        positive("cavity_lifetime", self.cavity_lifetime)?;
        for (label, g) in &self.couplings_si {
            positive(&format!("coupling {label}"), *g)?;
        }
        if let Some(d) = self.drive_si {
            positive("drive", d)?;
        }
        Ok(())
    }

    pub fn transit_time(&self) -> Result<f64> {
        transit_time(self.cavity_length, self.atom_velocity)
    }

    /// Parses `key=value` lines. Recognized keys: `velocity`,
    /// `cavity_length`, `atomic_lifetime`, `cavity_lifetime`, `lifetime`
    /// (sets both), `drive`, and `coupling.<label>`. Any coupling line
    /// replaces the default coupling list. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Self::default();
        let mut couplings: Vec<(String, f64)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| FeasibilityError::Params { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let num: f64 = value
                .parse()
                .map_err(|_| err(format!("`{value}` is not a number")))?;
            positive(key, num).map_err(|e| err(e.to_string()))?;
            match key {
                "velocity" | "atom_velocity" => p.atom_velocity = num,
                "cavity_length" | "length" => p.cavity_length = num,
                "atomic_lifetime" => p.atomic_lifetime = num,
                "cavity_lifetime" => p.cavity_lifetime = num,
                "lifetime" => {
                    p.atomic_lifetime = num;
                    p.cavity_lifetime = num;
                }
                "drive" => p.drive_si = Some(num),
                _ => match key.strip_prefix("coupling.") {
                    Some(label) if !label.is_empty() => {
                        if couplings.iter().any(|(l, _)| l == label) {
                            return Err(err(format!("duplicate coupling `{label}`")));
                        }
                        couplings.push((label.to_string(), num));
                    }
                    _ => return Err(err(format!("unknown key `{key}`"))),
                },
            }
        }
        if !couplings.is_empty() {
            p.couplings_si = couplings;
        }
        Ok(p)
    }
}

/// Where a step happens: inside the cavity (bounded by the transit time)
/// or in a laser zone outside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Cavity,
    Laser,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiStep {
    pub label: String,
    pub duration: f64,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SiTimingPlan {
    pub steps: Vec<SiStep>,
}

impl SiTimingPlan {
    pub fn total(&self) -> f64 {
        self.steps.iter().map(|s| s.duration).sum()
    }

    pub fn push(&mut self, label: impl Into<String>, duration: f64, region: Region) {
        self.steps.push(SiStep {
            label: label.into(),
            duration,
            region,
        });
    }
}

/// Half Rabi period on each of the first two couplings.
pub fn bell_si_plan(params: &FeasibilityParams) -> Result<SiTimingPlan> {
    if params.couplings_si.len() < 2 {
        return Err(FeasibilityError::NotEnoughCouplings {
            needed: 2,
            got: params.couplings_si.len(),
        });
    }
    let mut plan = SiTimingPlan::default();
    for (label, g) in &params.couplings_si[..2] {
        let t = half_rabi_time(positive(label, *g)?, 1)?;
        plan.push(format!("interact {label}"), t, Region::Cavity);
    }
    Ok(plan)
}

/// Quarter Rabi period on the first mode, then a `pi` laser pulse and a
/// half Rabi period for each further mode.
pub fn ghz_si_plan(params: &FeasibilityParams, n_modes: usize) -> Result<SiTimingPlan> {
    if n_modes < 2 {
        return Err(FeasibilityError::TooFewModes(n_modes));
    }
    if params.couplings_si.len() < n_modes {
        return Err(FeasibilityError::NotEnoughCouplings {
            needed: n_modes,
            got: params.couplings_si.len(),
        });
    }
    let omega = params.drive_si.ok_or(FeasibilityError::MissingDrive)?;
    positive("drive", omega)?;
    let mut plan = SiTimingPlan::default();
    let (label, g) = &params.couplings_si[0];
    plan.push(
        format!("interact {label}"),
        quarter_rabi_time(positive(label, *g)?, 1)?,
        Region::Cavity,
    );
    for (label, g) in &params.couplings_si[1..n_modes] {
        plan.push(
            format!("pulse before {label}"),
            pi_pulse_time(omega)?,
            Region::Laser,
        );
        plan.push(
            format!("interact {label}"),
            half_rabi_time(positive(label, *g)?, 1)?,
            Region::Cavity,
        );
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepBudget {
    pub label: String,
    pub duration: f64,
    /// Transit time bounding the step, for cavity steps.
    pub limit: Option<f64>,
    pub fits: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub transit_time: f64,
    pub steps: Vec<StepBudget>,
    pub total_protocol_time: f64,
    /// `total / atomic_lifetime`.
    pub atomic_margin: f64,
    /// `total / cavity_lifetime`.
    pub cavity_margin: f64,
    pub pass: bool,
    pub reasons: Vec<String>,
}

impl FeasibilityReport {
    /// How many protocol durations fit into the shorter lifetime.
    pub fn headroom(&self) -> f64 {
        1.0 / self.atomic_margin.max(self.cavity_margin)
    }
}

/// Checks every cavity step against the transit time and the total
/// against both lifetimes. Failures are reported, not returned as errors.
pub fn check_budget(params: &FeasibilityParams, plan: &SiTimingPlan) -> Result<FeasibilityReport> {
    params.validate()?;
    let transit = params.transit_time()?;
    let mut reasons = Vec::new();
    let steps: Vec<StepBudget> = plan
        .steps
        .iter()
        .map(|s| {
            let limit = (s.region == Region::Cavity).then_some(transit);
            let fits = s.duration.is_finite() && s.duration >= 0.0 && limit.is_none_or(|l| s.duration <= l);
            if !fits {
                reasons.push(format!(
                    "transit: {} lasts {:.3e} s but the atom crosses the cavity in {:.3e} s",
                    s.label, s.duration, transit
                ));
            }
            StepBudget {
                label: s.label.clone(),
                duration: s.duration,
                limit,
                fits,
            }
        })
        .collect();
    let total = plan.total();
    let atomic_margin = total / params.atomic_lifetime;
    let cavity_margin = total / params.cavity_lifetime;
    if total.is_nan() || total >= params.atomic_lifetime {
        reasons.push(format!(
            "atom: protocol takes {total:.3e} s, atomic lifetime is {:.3e} s",
            params.atomic_lifetime
        ));
    }
    if total.is_nan() || total >= params.cavity_lifetime {
        reasons.push(format!(
            "cavity: protocol takes {total:.3e} s, cavity lifetime is {:.3e} s",
            params.cavity_lifetime
        ));
    }
    Ok(FeasibilityReport {
        transit_time: transit,
        steps,
        total_protocol_time: total,
        atomic_margin,
        cavity_margin,
        pass: reasons.is_empty(),
        reasons,
    })
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "transit time        {:.6e} s", self.transit_time)?;
        for s in &self.steps {
            let limit = s.limit.map_or("laser zone".to_string(), |l| format!("limit {l:.6e} s"));
            let mark = if s.fits { "ok" } else { "FAIL" };
            writeln!(f, "  {:<22}{:.6e} s  ({limit}) {mark}", s.label, s.duration)?;
        }
        writeln!(f, "total protocol time {:.6e} s", self.total_protocol_time)?;
        writeln!(f, "total/atomic life   {:.6e}", self.atomic_margin)?;
        writeln!(f, "total/cavity life   {:.6e}", self.cavity_margin)?;
        writeln!(f, "headroom            {:.1}x", self.headroom())?;
        if self.pass {
            write!(f, "verdict             PASS")
        } else {
            write!(f, "verdict             FAIL ({})", self.reasons.join("; "))
        }
    }
}
