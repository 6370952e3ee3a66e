//! The flow density can be assembled two ways: geometrically from wedge
//! products of i del-delbar forms, or from the expanded scalar equation
//! through the source-form decomposition. The two routes share no code
//! path, so their agreement pins every sign and factor at once.

use fuyau::anomaly_flow::{rhs, rhs_geometric, FlowConfig};
use fuyau::forms_calculus::{normalize_mu, HermitianField};
use fuyau::torus_grid::{build_grid, ComplexField, RealField};
use num_complex::Complex64;

fn main() {
    let g = build_grid(16).expect("grid");

    let rho = HermitianField {
        h11: RealField::from_fn(g, |p| p[2].cos()),
        h22: RealField::from_fn(g, |p| 0.5 * (p[0] + p[3]).sin()),
        h12: ComplexField::from_fn(g, |p| Complex64::new(0.4 * p[1].cos(), 0.3 * p[2].sin())),
    };
    let mu_raw = RealField::from_fn(g, |p| p[0].cos() + 0.5 * (p[1] - p[2]).cos());
    let w = RealField::from_fn(g, |p| 0.03 * p[0].cos() + 0.02 * (p[2] + p[3]).sin());

    println!(
        "{:>8}  {:>8}  {:>14}  {:>14}",
        "alpha'", "M", "sup |rhs|", "sup difference"
    );
    for (alpha, m) in [(1.0, 2.0), (-1.0, 2.0), (0.4, 1.5), (0.0, 3.0)] {
        let mut cfg = FlowConfig::new(g, alpha, m);
        cfg.set_rho(rho.clone()).expect("source form");
        let (mu, _) = normalize_mu(&mu_raw);
        cfg.mu = mu;

        let u = RealField {
            grid: g,
            data: w.data.iter().map(|v| m.ln() + v).collect(),
        };
        let expanded = rhs(&u, &cfg).expect("expanded route");
        let geometric = rhs_geometric(&u, &cfg).expect("geometric route");
        let sup = (0..g.points()).fold(0.0f64, |a, i| a.max(expanded.data[i].abs()));
        let diff = (0..g.points())
            .fold(0.0f64, |a, i| a.max((expanded.data[i] - geometric.data[i]).abs()));
        println!("{alpha:>8}  {m:>8}  {sup:>14.6e}  {diff:>14.3e}");
    }
}
