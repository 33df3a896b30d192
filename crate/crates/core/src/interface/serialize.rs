//! Protocol to text, in the format read by the parser.

use std::fmt::Write;

use thiserror::Error;

use crate::hilbert::CouplingId;
use crate::protocol::{Outcome, Protocol, ProtocolStep};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SerializeError {
    #[error("initial state is not the vacuum of a single atomic level")]
    UnsupportedInitial,
    #[error("step {0}: active couplings are not the full coupling set of some modes")]
    PartialModeSet(usize),
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Inverse of `parse_protocol` up to formatting: parsing the output yields
/// an equal protocol, and serializing that again yields identical text.
pub fn serialize_protocol(p: &Protocol) -> Result<String, SerializeError> {
    let sys = &p.system;
    let layout = sys.layout();
    let mut out = String::new();
    for l in sys.atom().levels() {
        writeln!(out, "level {l}").unwrap();
    }
    for m in sys.modes() {
        writeln!(out, "mode {} nmax={}", m.id, m.n_max).unwrap();
    }
    for c in sys.couplings() {
        writeln!(out, "couple {} {} {} g={}", c.mode, c.upper, c.lower, num(c.g)).unwrap();
    }

    let amps = p.initial.amplitudes();
    let nonzero: Vec<usize> = (0..amps.len()).filter(|&i| amps[i].norm_sqr() > 0.0).collect();
    let level = match nonzero.as_slice() {
        [i] if layout.photon_count(*i) == 0 && amps[*i].im == 0.0 && amps[*i].re > 0.0 => layout.decompose(*i).0,
        _ => return Err(SerializeError::UnsupportedInitial),
    };
    writeln!(out, "init level={}", sys.atom().levels()[level]).unwrap();

    for (index, step) in p.steps.iter().enumerate() {
        match step {
            ProtocolStep::PrepareSuperposition { from, to, phi } => {
                writeln!(out, "step ramsey {from} {to} phi={}", num(*phi)).unwrap();
            }
            ProtocolStep::Interact { couplings, time } => {
                let mut modes: Vec<&str> = Vec::new();
                for id in couplings {
                    let c = sys.coupling(*id).ok_or(SerializeError::PartialModeSet(index))?;
                    if !modes.contains(&c.mode.as_str()) {
                        modes.push(&c.mode);
                    }
                }
                let mut implied: Vec<CouplingId> = modes.iter().flat_map(|m| sys.couplings_on_mode(m)).collect();
                implied.sort();
                let mut given = couplings.clone();
                given.sort();
                if implied != given {
                    return Err(SerializeError::PartialModeSet(index));
                }
                writeln!(out, "step interact modes={} t={time}", modes.join(",")).unwrap();
            }
            ProtocolStep::Pulse { drive, time } => {
                writeln!(
                    out,
                    "step pulse {} {} omega={} phase={} t={time}",
                    drive.upper,
                    drive.lower,
                    num(drive.rabi),
                    num(drive.phase)
                )
                .unwrap();
            }
            ProtocolStep::MeasureAtom { projector, outcome } => {
                let coeffs: Vec<String> = projector
                    .coeffs
                    .iter()
                    .map(|(l, z)| format!("{l}:{}:{}", num(z.re), num(z.im)))
                    .collect();
                let outcome = match outcome {
                    Outcome::Hit => "hit",
                    Outcome::Miss => "miss",
                };
                writeln!(out, "step measure coeffs={} outcome={outcome}", coeffs.join(";")).unwrap();
            }
        }
    }
    Ok(out)
}
