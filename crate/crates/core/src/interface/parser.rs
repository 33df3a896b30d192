//! Line-oriented protocol language.
//!
//! ```text
//! level a
//! mode A nmax=2
//! couple A a c g=1
//! init level=a
//! step ramsey a b phi=pi/3
//! step interact modes=A t=half_rabi(1)
//! step pulse b c omega=2 phase=0 t=pi_pulse
//! step measure coeffs=a:1:0;c:0:1 outcome=hit
//! ```
//!
//! Declarations may appear in any order; steps run in file order. Every
//! problem in a file is reported, not just the first.

use std::collections::{HashMap, HashSet};
use std::fmt;

use num_complex::Complex64;

use crate::dynamics::DriveTerm;
use crate::hilbert::{AtomSpec, Coupling, CouplingId, LevelId, ModeSpec, SystemSpec};
use crate::protocol::{AtomProjector, Outcome, Protocol, ProtocolStep, QuarterPolicy, TimeExpr, DEFAULT_NMAX};

/// 1-based line and column range (end exclusive), in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceSpan {
    pub line: usize,
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.start)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub span: SourceSpan,
    pub message: String,
    pub token: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.token.is_empty() {
            write!(f, "{}: {}", self.span, self.message)
        } else {
            write!(f, "{}: {} (at `{}`)", self.span, self.message, self.token)
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy)]
struct Tok<'a> {
    text: &'a str,
    span: SourceSpan,
}

impl<'a> Tok<'a> {
    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            span: self.span,
            message: message.into(),
            token: self.text.to_string(),
        }
    }

    /// Sub-token covering `part`, which must be a slice of `self.text`.
    fn sub(&self, part: &'a str) -> Tok<'a> {
        let offset = part.as_ptr() as usize - self.text.as_ptr() as usize;
        let start = self.span.start + self.text[..offset].chars().count();
        Tok {
            text: part,
            span: SourceSpan {
                line: self.span.line,
                start,
                end: start + part.chars().count(),
            },
        }
    }
}

fn tokenize(line_no: usize, line: &str) -> Vec<Tok<'_>> {
    let content = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    let mut col = 0;
    for (byte, ch) in content.char_indices() {
        col += 1;
        if ch.is_whitespace() {
            if let Some((b, c)) = start.take() {
                out.push(Tok {
                    text: &content[b..byte],
                    span: SourceSpan {
                        line: line_no,
                        start: c,
                        end: col,
                    },
                });
            }
        } else if start.is_none() {
            start = Some((byte, col));
        }
    }
    if let Some((b, c)) = start {
        out.push(Tok {
            text: &content[b..],
            span: SourceSpan {
                line: line_no,
                start: c,
                end: col + 1,
            },
        });
    }
    out
}

/// Positional arguments and `key=value` pairs of one directive.
struct Args<'a> {
    head: Tok<'a>,
    positional: Vec<Tok<'a>>,
    keys: Vec<(Tok<'a>, Tok<'a>)>,
}

impl<'a> Args<'a> {
    fn split(head: Tok<'a>, rest: &[Tok<'a>], errors: &mut Vec<ParseError>) -> Self {
        let mut positional = Vec::new();
        let mut keys: Vec<(Tok<'a>, Tok<'a>)> = Vec::new();
        for t in rest {
            match t.text.split_once('=') {
                Some((k, v)) => {
                    let (k, v) = (t.sub(k), t.sub(v));
                    if k.text.is_empty() {
                        errors.push(t.err("missing key before `=`"));
                    } else if keys.iter().any(|(seen, _)| seen.text == k.text) {
                        errors.push(k.err(format!("duplicate key `{}`", k.text)));
                    } else {
                        keys.push((k, v));
                    }
                }
                None => positional.push(*t),
            }
        }
        Self { head, positional, keys }
    }

    /// Checks arity and key names; returns false if anything was reported.
    fn expect(&self, positional: &[&str], allowed: &[&str], errors: &mut Vec<ParseError>) -> bool {
        let mut ok = true;
        if self.positional.len() != positional.len() {
            ok = false;
            let msg = if positional.is_empty() {
                format!("`{}` takes no positional arguments", self.head.text)
            } else {
                format!("`{}` expects {}", self.head.text, positional.join(" "))
            };
            let at = self.positional.get(positional.len()).unwrap_or(&self.head);
            errors.push(at.err(msg));
        }
        for (k, _) in &self.keys {
            if !allowed.contains(&k.text) {
                ok = false;
                errors.push(k.err(format!("unknown key `{}` for `{}`", k.text, self.head.text)));
            }
        }
        ok
    }

    fn get(&self, key: &str) -> Option<Tok<'a>> {
        self.keys.iter().find(|(k, _)| k.text == key).map(|(_, v)| *v)
    }

    fn require(&self, key: &str, errors: &mut Vec<ParseError>) -> Option<Tok<'a>> {
        let v = self.get(key);
        if v.is_none() {
            errors.push(self.head.err(format!("`{}` requires `{key}=`", self.head.text)));
        }
        v
    }
}

/// Accepts decimal floats and multiples of pi: `pi`, `-pi/2`, `2*pi/3`,
/// `0.5pi`. Non-finite values are rejected.
pub fn parse_real(text: &str) -> Option<f64> {
    if let Ok(x) = text.parse::<f64>() {
        return x.is_finite().then_some(x);
    }
    if !text.contains("pi") || text.contains("inf") {
        return None;
    }
    let (num, den) = match text.split_once('/') {
        Some((n, d)) => (n, Some(d.parse::<f64>().ok().filter(|d| d.is_finite() && *d != 0.0)?)),
        None => (text, None),
    };
    let factor = num.strip_suffix("pi")?;
    let factor = factor.strip_suffix('*').unwrap_or(factor);
    let scale = match factor {
        "" | "+" => 1.0,
        "-" => -1.0,
        f => f.parse::<f64>().ok().filter(|x| x.is_finite())?,
    };
    let x = scale * std::f64::consts::PI / den.unwrap_or(1.0);
    x.is_finite().then_some(x)
}

fn real(tok: Tok<'_>, errors: &mut Vec<ParseError>) -> Option<f64> {
    let x = parse_real(tok.text);
    if x.is_none() {
        errors.push(tok.err(format!("malformed number `{}`", tok.text)));
    }
    x
}

fn time_expr(tok: Tok<'_>, errors: &mut Vec<ParseError>) -> Option<TimeExpr> {
    let call = |name: &str| {
        tok.text
            .strip_prefix(name)
            .and_then(|r| r.strip_prefix('('))
            .and_then(|r| r.strip_suffix(')'))
    };
    let multiplier = |arg: &str, errors: &mut Vec<ParseError>| {
        let m = arg.trim().parse::<u32>().ok();
        if m.is_none() {
            errors.push(tok.err(format!("malformed multiplier `{arg}`")));
        }
        m
    };
    match tok.text {
        "pi_pulse" => Some(TimeExpr::PiPulse),
        "half_pi_pulse" => Some(TimeExpr::HalfPiPulse),
        _ => {
            if let Some(arg) = call("half_rabi") {
                multiplier(arg, errors).map(TimeExpr::HalfRabi)
            } else if let Some(arg) = call("quarter_rabi") {
                let (m, policy) = match arg.split_once(',') {
                    Some((m, p)) if p.trim() == "any" => (m, QuarterPolicy::AnyOdd),
                    Some((_, p)) => {
                        errors.push(tok.err(format!("unknown quarter_rabi policy `{}`", p.trim())));
                        return None;
                    }
                    None => (arg, QuarterPolicy::FirstQuadrant),
                };
                multiplier(m, errors).map(|m| TimeExpr::QuarterRabi(m, policy))
            } else if let Some(t) = parse_real(tok.text) {
                Some(TimeExpr::Literal(t))
            } else {
                errors.push(tok.err(format!("malformed time `{}`", tok.text)));
                None
            }
        }
    }
}

enum RawStep<'a> {
    Ramsey { from: Tok<'a>, to: Tok<'a>, phi: f64 },
    Interact { modes: Vec<Tok<'a>>, time: TimeExpr },
    Pulse { upper: Tok<'a>, lower: Tok<'a>, omega: f64, phase: f64, time: TimeExpr },
    Measure { coeffs: Vec<(Tok<'a>, Complex64)>, outcome: Outcome },
}

#[derive(Default)]
struct Collected<'a> {
    levels: Vec<Tok<'a>>,
    modes: Vec<(Tok<'a>, usize)>,
    couples: Vec<(Tok<'a>, Tok<'a>, Tok<'a>, f64)>,
    init: Option<Tok<'a>>,
    steps: Vec<(Tok<'a>, RawStep<'a>)>,
}

fn parse_step<'a>(args: &Args<'a>, kind: Tok<'a>, errors: &mut Vec<ParseError>) -> Option<RawStep<'a>> {
    match kind.text {
        "ramsey" => {
            if !args.expect(&["<from>", "<to>"], &["phi"], errors) {
                return None;
            }
            let phi = match args.get("phi") {
                Some(v) => real(v, errors)?,
                None => 0.0,
            };
            Some(RawStep::Ramsey {
                from: args.positional[0],
                to: args.positional[1],
                phi,
            })
        }
        "interact" => {
            if !args.expect(&[], &["modes", "t"], errors) {
                return None;
            }
            let modes = args.require("modes", errors);
            let t = args.require("t", errors);
            let (modes, t) = (modes?, t?);
            let time = time_expr(t, errors)?;
            let list: Vec<Tok<'a>> = modes.text.split(',').map(|m| modes.sub(m)).collect();
            if list.iter().any(|m| m.text.is_empty()) {
                errors.push(modes.err("empty mode name in list"));
                return None;
            }
            Some(RawStep::Interact { modes: list, time })
        }
        "pulse" => {
            if !args.expect(&["<upper>", "<lower>"], &["omega", "phase", "t"], errors) {
                return None;
            }
            let omega = args.require("omega", errors);
            let t = args.require("t", errors);
            let (omega, t) = (omega?, t?);
            let omega = real(omega, errors);
            let phase = match args.get("phase") {
                Some(v) => real(v, errors),
                None => Some(0.0),
            };
            let time = time_expr(t, errors);
            Some(RawStep::Pulse {
                upper: args.positional[0],
                lower: args.positional[1],
                omega: omega?,
                phase: phase?,
                time: time?,
            })
        }
        "measure" => {
            if !args.expect(&[], &["coeffs", "outcome"], errors) {
                return None;
            }
            let outcome = match args.get("outcome") {
                None => Outcome::Hit,
                Some(v) if v.text == "hit" => Outcome::Hit,
                Some(v) if v.text == "miss" => Outcome::Miss,
                Some(v) => {
                    errors.push(v.err("outcome must be `hit` or `miss`"));
                    return None;
                }
            };
            let coeffs_tok = args.require("coeffs", errors)?;
            let mut coeffs = Vec::new();
            let mut ok = true;
            for entry in coeffs_tok.text.split(';') {
                let entry = coeffs_tok.sub(entry);
                let mut parts = entry.text.split(':');
                let level = entry.sub(parts.next().unwrap_or(""));
                let rest: Vec<&str> = parts.collect();
                if level.text.is_empty() || rest.len() > 2 {
                    errors.push(entry.err("coefficient must be `level`, `level:re` or `level:re:im`"));
                    ok = false;
                    continue;
                }
                let re = rest.first().map_or(Some(1.0), |r| real(entry.sub(r), errors));
                let im = rest.get(1).map_or(Some(0.0), |r| real(entry.sub(r), errors));
                match (re, im) {
                    (Some(re), Some(im)) => coeffs.push((level, Complex64::new(re, im))),
                    _ => ok = false,
                }
            }
            ok.then_some(RawStep::Measure { coeffs, outcome })
        }
        other => {
            errors.push(kind.err(format!("unknown step kind `{other}` (expected ramsey, interact, pulse or measure)")));
            None
        }
    }
}

fn collect<'a>(lines: &'a [(usize, &'a str)], errors: &mut Vec<ParseError>) -> Collected<'a> {
    let mut c = Collected::default();
    for &(line_no, line) in lines {
        let toks = tokenize(line_no, line);
        let Some(head) = toks.first().copied() else {
            continue;
        };
        match head.text {
            "level" => {
                let args = Args::split(head, &toks[1..], errors);
                if args.expect(&["<id>"], &[], errors) {
                    c.levels.push(args.positional[0]);
                }
            }
            "mode" => {
                let args = Args::split(head, &toks[1..], errors);
                if args.expect(&["<id>"], &["nmax"], errors) {
                    let n_max = match args.get("nmax") {
                        Some(v) => match v.text.parse::<usize>() {
                            Ok(n) if n >= 1 => Some(n),
                            _ => {
                                errors.push(v.err("nmax must be a positive integer"));
                                None
                            }
                        },
                        None => Some(DEFAULT_NMAX),
                    };
                    if let Some(n) = n_max {
                        c.modes.push((args.positional[0], n));
                    }
                }
            }
            "couple" => {
                let args = Args::split(head, &toks[1..], errors);
                if args.expect(&["<mode>", "<upper>", "<lower>"], &["g"], errors) {
                    if let Some(g) = args.require("g", errors).and_then(|v| real(v, errors)) {
                        if g > 0.0 {
                            let p = &args.positional;
                            c.couples.push((p[0], p[1], p[2], g));
                        } else {
                            errors.push(args.get("g").unwrap_or(head).err("coupling rate must be positive"));
                        }
                    }
                }
            }
            "init" => {
                let args = Args::split(head, &toks[1..], errors);
                if args.expect(&[], &["level"], errors) {
                    if let Some(v) = args.require("level", errors) {
                        if c.init.is_some() {
                            errors.push(head.err("duplicate `init`"));
                        } else {
                            c.init = Some(v);
                        }
                    }
                }
            }
            "step" => {
                let Some(kind) = toks.get(1).copied() else {
                    errors.push(head.err("`step` needs a kind"));
                    continue;
                };
                let args = Args::split(kind, &toks[2..], errors);
                if let Some(step) = parse_step(&args, kind, errors) {
                    c.steps.push((head, step));
                }
            }
            other => errors.push(head.err(format!("unknown directive `{other}`"))),
        }
    }
    c
}

fn end_of_file(lines: &[(usize, &str)]) -> SourceSpan {
    let line = lines.last().map_or(1, |(n, _)| *n);
    SourceSpan { line, start: 1, end: 1 }
}

/// Parses protocol text into its system and protocol, or every error found.
pub fn parse_protocol(text: &str) -> Result<(SystemSpec, Protocol), Vec<ParseError>> {
    let lines: Vec<(usize, &str)> = text.lines().enumerate().map(|(i, l)| (i + 1, l)).collect();
    let mut errors = Vec::new();
    let c = collect(&lines, &mut errors);

    if c.levels.is_empty() && c.modes.is_empty() && c.couples.is_empty() {
        errors.insert(
            0,
            ParseError {
                span: end_of_file(&lines),
                message: "no system defined".into(),
                token: String::new(),
            },
        );
        return Err(errors);
    }

    let mut level_names: HashSet<&str> = HashSet::new();
    for l in &c.levels {
        if !level_names.insert(l.text) {
            errors.push(l.err(format!("duplicate level `{}`", l.text)));
        }
    }
    if c.levels.is_empty() {
        errors.push(ParseError {
            span: end_of_file(&lines),
            message: "no levels declared".into(),
            token: String::new(),
        });
    }
    let mut mode_names: HashSet<&str> = HashSet::new();
    for (m, _) in &c.modes {
        if !mode_names.insert(m.text) {
            errors.push(m.err(format!("duplicate mode `{}`", m.text)));
        }
    }
    let known_level = |t: &Tok<'_>, errors: &mut Vec<ParseError>| {
        let ok = level_names.contains(t.text);
        if !ok {
            errors.push(t.err(format!("unknown level `{}`", t.text)));
        }
        ok
    };

    let mut couplings_of: HashMap<&str, Vec<CouplingId>> = HashMap::new();
    let mut seen_couplings = HashSet::new();
    for (i, (mode, upper, lower, _)) in c.couples.iter().enumerate() {
        let mut ok = true;
        if !mode_names.contains(mode.text) {
            errors.push(mode.err(format!("unknown mode `{}`", mode.text)));
            ok = false;
        }
        ok &= known_level(upper, &mut errors);
        ok &= known_level(lower, &mut errors);
        if upper.text == lower.text {
            errors.push(lower.err("a coupling needs two distinct levels"));
            ok = false;
        }
        if !seen_couplings.insert((mode.text, upper.text, lower.text)) {
            errors.push(mode.err("duplicate coupling"));
            ok = false;
        }
        if ok {
            couplings_of.entry(mode.text).or_default().push(CouplingId(i));
        }
    }

    let init_level = match c.init {
        Some(t) => known_level(&t, &mut errors).then_some(t),
        None => {
            errors.push(ParseError {
                span: end_of_file(&lines),
                message: "missing `init level=<id>`".into(),
                token: String::new(),
            });
            None
        }
    };

    let mut steps = Vec::with_capacity(c.steps.len());
    for (head, raw) in &c.steps {
        let step = match raw {
            RawStep::Ramsey { from, to, phi } => {
                let ok = known_level(from, &mut errors) & known_level(to, &mut errors);
                ok.then(|| ProtocolStep::PrepareSuperposition {
                    from: LevelId::new(from.text).expect("nonempty token"),
                    to: LevelId::new(to.text).expect("nonempty token"),
                    phi: *phi,
                })
            }
            RawStep::Interact { modes, time } => {
                let mut ids = Vec::new();
                let mut ok = true;
                let mut listed = HashSet::new();
                for m in modes {
                    if !listed.insert(m.text) {
                        errors.push(m.err(format!("mode `{}` listed twice", m.text)));
                        ok = false;
                    } else if !mode_names.contains(m.text) {
                        errors.push(m.err(format!("unknown mode `{}`", m.text)));
                        ok = false;
                    } else if let Some(found) = couplings_of.get(m.text) {
                        ids.extend(found.iter().copied());
                    } else {
                        errors.push(m.err(format!("mode `{}` has no coupling", m.text)));
                        ok = false;
                    }
                }
                ids.sort();
                ok.then_some(ProtocolStep::Interact {
                    couplings: ids,
                    time: *time,
                })
            }
            RawStep::Pulse {
                upper,
                lower,
                omega,
                phase,
                time,
            } => {
                let ok = known_level(upper, &mut errors) & known_level(lower, &mut errors);
                ok.then(|| ProtocolStep::Pulse {
                    drive: DriveTerm::new(upper.text, lower.text, *omega).with_phase(*phase),
                    time: *time,
                })
            }
            RawStep::Measure { coeffs, outcome } => {
                let mut ok = true;
                for (l, _) in coeffs {
                    ok &= known_level(l, &mut errors);
                }
                ok.then(|| ProtocolStep::MeasureAtom {
                    projector: AtomProjector::new(
                        coeffs
                            .iter()
                            .map(|(l, z)| (LevelId::new(l.text).expect("nonempty token"), *z))
                            .collect(),
                    ),
                    outcome: *outcome,
                })
            }
        };
        if let Some(step) = step {
            steps.push((*head, step));
        }
    }

    if !errors.is_empty() {
        return Err(errors);
    }

    let system_span = c.levels.first().copied().unwrap_or_else(|| c.modes[0].0);
    let build = || -> Result<SystemSpec, crate::hilbert::HilbertError> {
        let atom = AtomSpec::new(c.levels.iter().map(|t| t.text))?;
        let modes = c
            .modes
            .iter()
            .map(|(t, n)| ModeSpec::new(t.text, *n))
            .collect::<Result<Vec<_>, _>>()?;
        let couplings = c
            .couples
            .iter()
            .map(|(m, u, l, g)| Coupling::new(m.text, u.text, l.text, *g))
            .collect::<Result<Vec<_>, _>>()?;
        SystemSpec::new(atom, modes, couplings)
    };
    let system = build().map_err(|e| vec![system_span.err(e.to_string())])?;

    for (head, step) in &steps {
        if let Err(e) = step.validate(&system) {
            errors.push(head.err(format!("step {}: {e}", step.kind())));
        }
    }
    let init_tok = init_level.expect("checked above");
    let initial = system
        .vacuum_state(&LevelId::new(init_tok.text).expect("nonempty token"))
        .map_err(|e| vec![init_tok.err(e.to_string())])?;
    if !errors.is_empty() {
        return Err(errors);
    }
    let protocol = Protocol::new(system.clone(), initial, steps.into_iter().map(|(_, s)| s).collect())
        .map_err(|e| vec![system_span.err(e.to_string())])?;
    Ok((system, protocol))
}

/// Like [`parse_protocol`] on raw bytes; invalid UTF-8 is a parse error.
pub fn parse_protocol_bytes(bytes: &[u8]) -> Result<(SystemSpec, Protocol), Vec<ParseError>> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_protocol(text),
        Err(e) => {
            let valid = &bytes[..e.valid_up_to()];
            let line = 1 + valid.iter().filter(|b| **b == b'\n').count();
            let line_start = valid.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
            let col = 1 + String::from_utf8_lossy(&valid[line_start..]).chars().count();
            Err(vec![ParseError {
                span: SourceSpan {
                    line,
                    start: col,
                    end: col + 1,
                },
                message: "invalid UTF-8".into(),
                token: String::new(),
            }])
        }
    }
}
