//! Deterministic JSON for simulation results.
//!
//! Keys are emitted in a fixed order and every float uses 17 significant
//! digits, so identical runs give byte-identical output and doubles survive
//! a round trip exactly. Non-finite numbers become `null`.

use std::fmt::Write;

use num_complex::Complex64;

use crate::hilbert::StateVector;
use crate::protocol::SimulationResult;

pub const SCHEMA_VERSION: u32 = 1;

/// `x` with 17 significant digits, or `null` when not finite.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "null".to_string(), fmt_f64)
}

fn string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

fn complex(z: Complex64) -> String {
    format!("[{}, {}]", fmt_f64(z.re), fmt_f64(z.im))
}

fn state_block(out: &mut String, indent: &str, state: &StateVector) {
    let layout = state.layout();
    let labels: Vec<String> = (0..state.dim()).map(|i| string(&layout.label(i))).collect();
    writeln!(out, "{{").unwrap();
    writeln!(out, "{indent}  \"basis\": [{}],", labels.join(", ")).unwrap();
    writeln!(out, "{indent}  \"amplitudes\": [").unwrap();
    let n = state.dim();
    for (i, z) in state.amplitudes().iter().enumerate() {
        let sep = if i + 1 < n { "," } else { "" };
        writeln!(out, "{indent}    {}{sep}", complex(*z)).unwrap();
    }
    writeln!(out, "{indent}  ]").unwrap();
    write!(out, "{indent}}}").unwrap();
}

pub fn emit_result_json(result: &SimulationResult) -> String {
    let layout = result.final_state.layout();
    let mut out = String::new();
    writeln!(out, "{{").unwrap();
    writeln!(out, "  \"schema_version\": {SCHEMA_VERSION},").unwrap();
    let levels: Vec<String> = layout
        .atom()
        .map(|a| a.levels().iter().map(|l| string(l.as_str())).collect())
        .unwrap_or_default();
    writeln!(out, "  \"levels\": [{}],", levels.join(", ")).unwrap();
    let modes: Vec<String> = layout
        .modes()
        .iter()
        .map(|m| format!("{{\"id\": {}, \"nmax\": {}}}", string(&m.id), m.n_max))
        .collect();
    writeln!(out, "  \"modes\": [{}],", modes.join(", ")).unwrap();
    write!(out, "  \"final_state\": ").unwrap();
    state_block(&mut out, "  ", &result.final_state);
    writeln!(out, ",").unwrap();
    writeln!(out, "  \"branch_probability\": {},", fmt_f64(result.branch_probability)).unwrap();

    writeln!(out, "  \"trace\": [").unwrap();
    let n = result.trace.len();
    for (i, t) in result.trace.iter().enumerate() {
        let sep = if i + 1 < n { "," } else { "" };
        let outcome = t.outcome.map_or_else(|| "null".to_string(), |o| string(o.as_str()));
        writeln!(
            out,
            "    {{\"step\": {}, \"kind\": {}, \"duration\": {}, \"outcome\": {outcome}, \"outcome_probability\": {}, \"norm\": {}}}{sep}",
            t.index,
            string(t.kind),
            fmt_opt(t.duration),
            fmt_opt(t.outcome_probability),
            fmt_f64(t.state.norm()),
        )
        .unwrap();
    }
    writeln!(out, "  ],").unwrap();

    write!(out, "  \"field_state\": ").unwrap();
    match &result.field_state {
        Some(f) => state_block(&mut out, "  ", f),
        None => out.push_str("null"),
    }
    writeln!(out, ",").unwrap();

    let fids: Vec<String> = result
        .fidelities
        .iter()
        .map(|(name, f)| format!("{{\"target\": {}, \"fidelity\": {}}}", string(name), fmt_f64(*f)))
        .collect();
    if fids.is_empty() {
        writeln!(out, "  \"fidelities\": [],").unwrap();
    } else {
        writeln!(out, "  \"fidelities\": [\n    {}\n  ],", fids.join(",\n    ")).unwrap();
    }
    writeln!(out, "  \"ghz_phase\": {}", fmt_opt(result.ghz_phase)).unwrap();
    out.push_str("}\n");
    out
}
