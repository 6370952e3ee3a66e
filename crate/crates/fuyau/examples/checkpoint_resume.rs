//! Interrupts a run halfway, persists the state to a checksummed snapshot,
//! resumes from disk, and compares against the uninterrupted trajectory.

use fuyau::anomaly_flow::{run, run_from, FlowConfig, FlowState};
use fuyau::cli_io::{read_snapshot, write_snapshot};
use fuyau::forms_calculus::normalize_mu;
use fuyau::torus_grid::{build_grid, RealField};

fn main() {
    let g = build_grid(8).expect("grid");
    let mut cfg = FlowConfig::new(g, 1e-3, 20.0);
    let (mu, _) = normalize_mu(&RealField::from_fn(g, |p| 0.5 * p[0].cos()));
    cfg.mu = mu;
    cfg.dt = 0.125;
    cfg.t_max = 2.0;
    cfg.eps_rhs = 1e-30;

    let straight = run(&cfg).expect("uninterrupted run");

    let mut first_leg = cfg.clone();
    first_leg.t_max = 1.0;
    let half = run(&first_leg).expect("first leg");

    let path = std::env::temp_dir().join(format!("fuyau-resume-{}.snap", std::process::id()));
    write_snapshot(&half.final_state, &cfg, &path).expect("snapshot write");
    let loaded = read_snapshot(&path).expect("snapshot read");
    println!(
        "snapshot: n = {}, t = {}, step {} ({} bytes on disk)",
        loaded.header.n,
        loaded.header.t,
        loaded.header.step_count,
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0)
    );

    let resumed = run_from(
        &cfg,
        FlowState {
            u: loaded.u,
            t: loaded.header.t,
            step_count: loaded.header.step_count,
            dt_current: cfg.dt,
        },
    )
    .expect("second leg");
    std::fs::remove_file(&path).ok();

    let dev = (0..g.points()).fold(0.0f64, |a, i| {
        a.max((resumed.final_state.u.data[i] - straight.final_state.u.data[i]).abs())
    });
    println!(
        "straight t = {}, resumed t = {}",
        straight.final_state.t, resumed.final_state.t
    );
    println!("sup |u_resumed - u_straight| = {dev:.3e}");
}
