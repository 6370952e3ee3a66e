//! A hostile source form pushes the linearization eigenvalues below the
//! ellipticity floor, and the run halts immediately instead of stepping a
//! degenerate equation.

use fuyau::anomaly_flow::{run, FlowConfig};
use fuyau::torus_grid::{build_grid, ComplexField, RealField};
use fuyau::forms_calculus::HermitianField;

fn main() {
    let g = build_grid(8).expect("grid");
    let mut cfg = FlowConfig::new(g, -1.0, 1.0);
    let rho = HermitianField {
        h11: RealField::constant(g, 10.0),
        h22: RealField::zeros(g),
        h12: ComplexField::zeros(g),
    };
    cfg.set_rho(rho).expect("source form");
    cfg.t_max = 1.0;

    let report = run(&cfg).expect("run returns a report");
    println!("exit reason : {:?}", report.reason);
    println!("steps taken : {}", report.final_state.step_count);
    let r = report.records.last().expect("halting record");
    println!(
        "lambda(F)   : [{:.4}, {:.4}] (floor 0.05)",
        r.geometry.lambda_min_f, r.geometry.lambda_max_f
    );
    println!(
        "omega' eig  : {:.4} (must stay positive)",
        r.geometry.omega_prime_min_eig
    );
}
