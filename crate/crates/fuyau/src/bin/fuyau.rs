use clap::{Parser, Subcommand};
use fuyau::anomaly_flow::{initial_state, run_from, ExitReason, FlowState, RunReport};
use fuyau::cli_io::{
    check_snapshot_compat, emit_records, exit_code_for, parse_config, read_snapshot, selftest,
    write_snapshot, CliError, ParsedConfig,
};
use fuyau::diagnostics::{m_sweep, verify_state, SweepOutcome};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fuyau",
    version,
    about = "Pseudo-spectral laboratory for the anomaly flow on the Fu-Yau ansatz over the flat four-torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a configured flow until convergence, t_max, or a guard stop.
    Run {
        config: PathBuf,
        /// Continue from a snapshot instead of the configured initial data.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Re-certify a snapshot against a config's data and tolerances.
    Verify { snapshot: PathBuf, config: PathBuf },
    /// Run the flow once per mass value and test the scaling bounds.
    Sweep {
        config: PathBuf,
        /// Comma-separated mass levels, e.g. --M 100,1000,10000.
        #[arg(long = "M", value_delimiter = ',', required = true)]
        masses: Vec<f64>,
    },
    /// Execute every built-in oracle with deterministic draws.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, resume } => cmd_run(&config, resume.as_deref()),
        Command::Verify { snapshot, config } => cmd_verify(&snapshot, &config),
        Command::Sweep { config, masses } => cmd_sweep(&config, &masses),
        Command::Selftest => Ok(cmd_selftest()),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load(config_path: &Path) -> Result<ParsedConfig, CliError> {
    let parsed = parse_config(config_path)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    Ok(parsed)
}

fn describe_reason(reason: ExitReason) -> &'static str {
    match reason {
        ExitReason::Converged => "converged to a stationary state",
        ExitReason::ReachedTMax => "reached t_max without meeting the convergence threshold",
        ExitReason::BlowUp => "stopped: conformal density left the positive finite range",
        ExitReason::EllipticityLoss => "stopped: ellipticity window lost",
    }
}

fn print_run_summary(report: &RunReport) {
    let s = &report.final_state;
    println!(
        "flow {} at t = {:.6} after {} steps",
        describe_reason(report.reason),
        s.t,
        s.step_count
    );
    if report.outside_theorem_hypotheses {
        println!("note: non-constant initial density, outside the stationary-limit hypotheses");
    }
    if let Some(last) = report.records.last() {
        println!(
            "monitors: sup|du/dt| = {:.3e}, residual sup|D| = {:.3e}, |mean(e^u) - M|/M = {:.3e}",
            last.sup_rhs, last.elliptic_residual, last.conservation_error
        );
        println!(
            "geometry: sup|T|^2 = {:.3e}, sup|a'Ric| = {:.3e}, lambda(F) in [{:.4}, {:.4}], min eig omega' = {:.3e}",
            last.geometry.sup_t2,
            last.geometry.sup_alpha_ric,
            last.geometry.lambda_min_f,
            last.geometry.lambda_max_f,
            last.geometry.omega_prime_min_eig
        );
    }
    match &report.certificate {
        Some(c) => println!(
            "certificate: sup|du/dt| = {:.3e}, residual = {:.3e}, conservation = {:.3e}, identity = {:.3e} -> {}",
            c.sup_rhs,
            c.elliptic_residual,
            c.conservation_error,
            c.residual_identity_error,
            if c.satisfied { "satisfied" } else { "NOT satisfied" }
        ),
        None => println!("certificate: none (run did not converge)"),
    }
}

fn cmd_run(config_path: &Path, resume: Option<&Path>) -> Result<u8, CliError> {
    let parsed = load(config_path)?;
    let state = match resume {
        Some(snap_path) => {
            let snap = read_snapshot(snap_path)?;
            check_snapshot_compat(&snap.header, &parsed.flow)?;
            println!(
                "resuming from {} at t = {:.6}, step {}",
                snap_path.display(),
                snap.header.t,
                snap.header.step_count
            );
            FlowState {
                u: snap.u,
                t: snap.header.t,
                step_count: snap.header.step_count,
                dt_current: parsed.flow.dt,
            }
        }
        None => initial_state(&parsed.flow)?,
    };
    let report = run_from(&parsed.flow, state)?;

    fs::create_dir_all(&parsed.out_dir)?;
    let (jsonl, csv) = emit_records(&report.records, &parsed.out_dir)?;
    let snap_path = parsed.out_dir.join("final.snap");
    write_snapshot(&report.final_state, &parsed.flow, &snap_path)?;

    print_run_summary(&report);
    println!(
        "wrote {}, {}, {}",
        jsonl.display(),
        csv.display(),
        snap_path.display()
    );
    Ok(exit_code_for(report.reason))
}

fn cmd_verify(snapshot_path: &Path, config_path: &Path) -> Result<u8, CliError> {
    let parsed = load(config_path)?;
    let snap = read_snapshot(snapshot_path)?;
    check_snapshot_compat(&snap.header, &parsed.flow)?;
    let report = verify_state(&snap.u, &parsed.flow)?;
    let f = &parsed.flow;

    println!(
        "state at t = {:.6}, step {} (n = {}, M = {}, alpha' = {})",
        snap.header.t, snap.header.step_count, snap.header.n, snap.header.m, snap.header.alpha_prime
    );
    println!(
        "sup|du/dt|        = {:.6e}  (threshold {:.1e})",
        report.sup_rhs, f.eps_rhs
    );
    println!(
        "residual sup|D|   = {:.6e}  (threshold {:.1e})",
        report.elliptic_residual, f.eps_residual
    );
    println!(
        "conservation      = {:.6e}  (threshold {:.1e})",
        report.conservation_error, f.conservation_tol
    );
    println!(
        "identity check    = {:.6e}  (residual vs. parabolic rhs)",
        report.residual_identity_error
    );
    let g = &report.geometry;
    println!(
        "e^u range         = [{:.6}, {:.6}]",
        g.inf_e_u, g.sup_e_u
    );
    println!("sup|T|^2          = {:.6e}", g.sup_t2);
    println!("sup|a'Ric|        = {:.6e}", g.sup_alpha_ric);
    println!(
        "lambda(F) window  = [{:.6}, {:.6}], min eig omega' = {:.6e}",
        g.lambda_min_f, g.lambda_max_f, g.omega_prime_min_eig
    );
    println!(
        "identities        = torsion {:.3e}, curvature {:.3e}",
        report.torsion_identity, report.curvature_identity
    );
    if report.passes {
        println!("verdict: PASS");
        Ok(0)
    } else {
        println!("verdict: FAIL");
        Ok(5)
    }
}

fn cmd_sweep(config_path: &Path, masses: &[f64]) -> Result<u8, CliError> {
    let parsed = load(config_path)?;
    let result = m_sweep(&parsed.flow, masses)?;

    for run in &result.runs {
        let eta = run
            .eta
            .as_ref()
            .map(|f| format!("{:.4} (R^2 {:.4})", f.eta, f.r_squared))
            .unwrap_or_else(|| "-".into());
        println!(
            "M = {:<10} {:<12} eta = {:<22} sup|T|^2 = {:.3e}  sup|a'Ric| = {:.3e}",
            run.m,
            format!("{:?}", run.reason),
            eta,
            run.final_record.geometry.sup_t2,
            run.final_record.geometry.sup_alpha_ric
        );
    }
    if let Some(m0) = result.m0_empirical {
        println!("empirical mass threshold: M0 = {m0}");
    }
    match &result.outcome {
        SweepOutcome::Conclusive(checks) => {
            let flag = |ok: bool| if ok { "ok" } else { "FAILED" };
            if let Some(fit) = &checks.t2_fit {
                println!(
                    "sup|T|^2 ~ M^{:.3} (R^2 {:.4}), slope <= -0.7: {}",
                    fit.exponent,
                    fit.r_squared,
                    flag(checks.t2_exponent_ok)
                );
            } else {
                println!("sup|T|^2 at numerical floor for every M (torsion-free family)");
            }
            if let Some(fit) = &checks.ric_fit {
                println!(
                    "sup|a'Ric| ~ M^{:.3} (R^2 {:.4}), slope <= -0.2: {}",
                    fit.exponent,
                    fit.r_squared,
                    flag(checks.ric_exponent_ok)
                );
            } else {
                println!("sup|a'Ric| at numerical floor for every M");
            }
            println!(
                "bound constants: C_T growth {:.3}, C_R growth {:.3} (<= 4): {}",
                checks.c_t2_growth,
                checks.c_ric_growth,
                flag(checks.growth_ok)
            );
            println!(
                "C0 estimate: fitted c = {:.4}, band spread {:.3} (<= 4): {}",
                checks.c0_constant,
                checks.c0_band,
                flag(checks.c0_ok)
            );
            println!(
                "sweep verdict: {}",
                if checks.all_ok {
                    "all scaling bounds confirmed"
                } else {
                    "SCALING BOUNDS NOT CONFIRMED"
                }
            );
        }
        SweepOutcome::Inconclusive { reason } => {
            println!("sweep inconclusive: {reason}");
        }
    }

    fs::create_dir_all(&parsed.out_dir)?;
    let json_path = parsed.out_dir.join("sweep.json");
    let json = serde_json::to_string_pretty(&result)
        .map_err(|e| CliError::Snapshot(format!("sweep serialization failed: {e}")))?;
    fs::write(&json_path, json)?;
    println!("wrote {}", json_path.display());
    Ok(0)
}

fn cmd_selftest() -> u8 {
    let checks = selftest();
    let mut all = true;
    for c in &checks {
        all &= c.pass;
        println!(
            "{}  {:<38} measured {:.3e}  bound {:.3e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.bound
        );
    }
    println!(
        "{} of {} oracles passed",
        checks.iter().filter(|c| c.pass).count(),
        checks.len()
    );
    if all {
        0
    } else {
        1
    }
}
