//! `cqed` command line: run, sweep, verify and feasibility.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::entangle::{field_fidelity, TargetState};
use crate::feasibility::{bell_si_plan, check_budget, ghz_si_plan, FeasibilityParams, SiTimingPlan};
use crate::interface::json::emit_result_json;
use crate::interface::parser::parse_protocol;
use crate::interface::sweep::{run_sweep, SweepConfig, SweepParam};
use crate::protocol::{run_protocol, run_protocol_sampled, Protocol, SimulationResult};
use crate::verify::run_all;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VERIFY_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cqed", version, about = "Cavity QED entanglement protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a protocol file and print a summary.
    Run {
        file: PathBuf,
        /// Target state for a fidelity line (psi_plus[:phi], phi_minus, ghz3_plus, ...). Repeatable.
        #[arg(long = "target")]
        targets: Vec<String>,
        /// Write the result as JSON (`-` for stdout).
        #[arg(long)]
        json: Option<PathBuf>,
        /// Sample measurement outcomes with this seed instead of post-selecting.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep one protocol parameter and emit CSV.
    Sweep {
        file: PathBuf,
        /// step.<i>.t|phi|omega|phase (0-based) or coupling.<mode>.g
        #[arg(long)]
        param: String,
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long)]
        steps: usize,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long = "target")]
        targets: Vec<String>,
    },
    /// Run the built-in checks and print one line per check.
    Verify,
    /// Print the laboratory timing budget.
    Feasibility {
        /// key=value parameter file.
        #[arg(long)]
        params: Option<PathBuf>,
        /// `bell` or `ghz<N>`.
        #[arg(long, default_value = "bell")]
        plan: String,
    },
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_ERROR,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| fail(format!("cannot read {}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Protocol, Failure> {
    let text = read(path)?;
    parse_protocol(&text).map(|(_, p)| p).map_err(|errors| {
        let lines: Vec<String> = errors.iter().map(|e| format!("{}:{e}", path.display())).collect();
        fail(lines.join("\n"))
    })
}

fn targets(names: &[String]) -> Result<Vec<TargetState>, Failure> {
    names
        .iter()
        .map(|n| n.parse::<TargetState>().map_err(|e| fail(e.to_string())))
        .collect()
}

fn write_output(path: &Path, text: &str, out: &mut dyn Write) -> Result<(), Failure> {
    if path.as_os_str() == "-" {
        out.write_all(text.as_bytes()).map_err(|e| fail(e.to_string()))
    } else {
        std::fs::write(path, text).map_err(|e| fail(format!("cannot write {}: {e}", path.display())))
    }
}

/// Phase of `|1..1>` relative to `|0..0>` when those are the field's only
/// components.
fn two_component_phase(result: &SimulationResult) -> Option<f64> {
    let field = result.field_state.as_ref()?;
    let amps = field.amplitudes();
    let layout = field.layout();
    let n = layout.modes().len();
    let zero = layout.compose(0, &vec![0; n])?;
    let ones = layout.compose(0, &vec![1; n])?;
    let support = amps.iter().filter(|z| z.norm_sqr() > 1e-18).count();
    (support == 2 && amps[zero].norm_sqr() > 1e-18 && amps[ones].norm_sqr() > 1e-18)
        .then(|| (amps[ones] / amps[zero]).arg())
}

fn cmd_run(
    file: &Path,
    target_names: &[String],
    json: Option<&Path>,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let p = load(file)?;
    let wanted = targets(target_names)?;
    let mut r = match seed {
        Some(s) => run_protocol_sampled(&p, s),
        None => run_protocol(&p),
    }
    .map_err(|e| fail(e.to_string()))?;
    for t in &wanted {
        let f = field_fidelity(&r.final_state, t).map_err(|e| fail(e.to_string()))?;
        r.fidelities.push((t.name.clone(), f));
    }
    if r.ghz_phase.is_none() {
        r.ghz_phase = two_component_phase(&r);
    }
    let w = |e: std::io::Error| fail(e.to_string());
    writeln!(out, "protocol {} ({} steps, dimension {})", file.display(), p.steps.len(), p.system.dim()).map_err(w)?;
    for t in &r.trace {
        let dur = t.duration.map_or(String::new(), |d| format!(" t={d:.9}"));
        let prob = match (t.outcome, t.outcome_probability) {
            (Some(o), Some(pr)) => format!(" {} p={pr:.9}", o.as_str()),
            _ => String::new(),
        };
        writeln!(out, "  step {} {}{dur}{prob}", t.index, t.kind).map_err(w)?;
    }
    writeln!(out, "branch probability {:.9}", r.branch_probability).map_err(w)?;
    let (state, label) = match &r.field_state {
        Some(f) => (f, "field"),
        None => (&r.final_state, "state"),
    };
    for (i, z) in state.amplitudes().iter().enumerate() {
        if z.norm_sqr() > 1e-18 {
            writeln!(out, "  {label} {} {:+.9}{:+.9}i", state.layout().label(i), z.re, z.im).map_err(w)?;
        }
    }
    if let Some(theta) = r.ghz_phase {
        writeln!(out, "ghz phase {theta:.9}").map_err(w)?;
    }
    for (name, f) in &r.fidelities {
        writeln!(out, "{name} fidelity {f:.9}").map_err(w)?;
    }
    if let Some(path) = json {
        write_output(path, &emit_result_json(&r), out)?;
    }
    Ok(())
}

fn cmd_sweep(
    file: &Path,
    param: &str,
    range: (f64, f64, usize),
    csv: Option<&Path>,
    target_names: &[String],
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let p = load(file)?;
    let param: SweepParam = param.parse().map_err(|e: crate::interface::sweep::SweepError| fail(e.to_string()))?;
    let cfg = SweepConfig::new(param, range.0, range.1, range.2)
        .map_err(|e| fail(e.to_string()))?
        .with_targets(targets(target_names)?);
    let text = run_sweep(&p, &cfg).map_err(|e| fail(e.to_string()))?;
    match csv {
        Some(path) => write_output(path, &text, out),
        None => out.write_all(text.as_bytes()).map_err(|e| fail(e.to_string())),
    }
}

fn cmd_verify(out: &mut dyn Write) -> Result<(), Failure> {
    let checks = run_all();
    for c in &checks {
        writeln!(out, "{c}").map_err(|e| fail(e.to_string()))?;
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed == 0 {
        writeln!(out, "all {} checks passed", checks.len()).map_err(|e| fail(e.to_string()))?;
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY_FAILED,
            message: format!("{failed} of {} checks failed", checks.len()),
        })
    }
}

fn cmd_feasibility(params: Option<&Path>, plan: &str, out: &mut dyn Write) -> Result<(), Failure> {
    let p = match params {
        Some(path) => FeasibilityParams::parse(&read(path)?).map_err(|e| fail(format!("{}:{e}", path.display())))?,
        None => FeasibilityParams::default(),
    };
    let si: SiTimingPlan = match plan {
        "bell" => bell_si_plan(&p),
        other => match other.strip_prefix("ghz").and_then(|n| n.parse::<usize>().ok()) {
            Some(n) => ghz_si_plan(&p, n),
            None => return Err(fail(format!("unknown plan `{other}` (expected bell or ghz<N>)"))),
        },
    }
    .map_err(|e| fail(e.to_string()))?;
    let report = check_budget(&p, &si).map_err(|e| fail(e.to_string()))?;
    writeln!(out, "{report}").map_err(|e| fail(e.to_string()))?;
    if report.pass {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY_FAILED,
            message: "timing budget not met".into(),
        })
    }
}

/// Runs the CLI against explicit output streams and returns the exit code.
pub fn cli_main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run {
            file,
            targets,
            json,
            seed,
        } => cmd_run(file, targets, json.as_deref(), *seed, out),
        Command::Sweep {
            file,
            param,
            from,
            to,
            steps,
            csv,
            targets,
        } => cmd_sweep(file, param, (*from, *to, *steps), csv.as_deref(), targets, out),
        Command::Verify => cmd_verify(out),
        Command::Feasibility { params, plan } => cmd_feasibility(params.as_deref(), plan, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

/// Entry point used by the `cqed` binary.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    cli_main_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = cli_main_with(std::iter::once("cqed").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    fn temp_file(name: &str, text: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("cqed-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    const BELL: &str = "level a\nlevel b\nlevel c\nmode A nmax=2\nmode B nmax=2\ncouple A a c g=1\ncouple B b c g=1\ninit level=a\nstep ramsey a b phi=0\nstep interact modes=A t=half_rabi(1)\nstep interact modes=B t=half_rabi(1)\nstep measure coeffs=c:1:0 outcome=hit\n";

    #[test]
    fn run_prints_fidelity() {
        let path = temp_file("bell.proto", BELL);
        let (code, out, err) = run(&["run", path.to_str().unwrap(), "--target", "psi_plus"]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("psi_plus fidelity 1.000000000"), "{out}");
        assert!(out.contains("branch probability 1.000000000"));
    }

    #[test]
    fn missing_file() {
        let (code, _, err) = run(&["run", "/nonexistent/missing.proto"]);
        assert_eq!(code, 1);
        assert!(err.contains("cannot read"), "{err}");
    }

    #[test]
    fn parse_errors_carry_location() {
        let path = temp_file("broken.proto", "level a\nfrobnicate\n");
        let (code, _, err) = run(&["run", path.to_str().unwrap()]);
        assert_eq!(code, 1);
        assert!(err.contains("broken.proto:2:1: unknown directive"), "{err}");
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(&["bogus"]).0, 1);
        assert_eq!(run(&[]).0, 1);
        assert_eq!(run(&["--help"]).0, 0);
    }

    #[test]
    fn sweep_to_stdout() {
        let path = temp_file("sweep.proto", BELL);
        let (code, out, err) = run(&[
            "sweep",
            path.to_str().unwrap(),
            "--param",
            "step.0.phi",
            "--from",
            "-1",
            "--to",
            "1",
            "--steps",
            "3",
            "--target",
            "psi_plus",
        ]);
        assert_eq!(code, 0, "{err}");
        assert_eq!(out.lines().count(), 4);
        assert!(out.starts_with("step.0.phi,branch_probability,fidelity_psi_plus\n"));
        let (code, _, _) = run(&["sweep", path.to_str().unwrap(), "--param", "step.0.phi", "--from", "0", "--to", "1", "--steps", "1"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn feasibility_report() {
        let (code, out, _) = run(&["feasibility"]);
        assert_eq!(code, 0);
        assert!(out.contains("transit time        5.000000e-5 s"), "{out}");
        assert!(out.contains("PASS"));
        let params = temp_file("slow.params", "lifetime=1e-5\n");
        let (code, out, _) = run(&["feasibility", "--params", params.to_str().unwrap()]);
        assert_eq!(code, 2);
        assert!(out.contains("FAIL"));
    }
}
