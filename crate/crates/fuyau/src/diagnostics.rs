//! Convergence analysis and cross-M scaling sweeps.
//!
//! Three layers sit on top of the flow: the dissipation functional
//! J(t) = mean((∂ₜe^u)²) with its log-linear decay-rate fit, the elliptic
//! residual certificate for stationary states, and sweeps over the total
//! mass M that measure how the geometric monitors scale. All scaling
//! assessments are one-sided bound confirmations: a monitored quantity may
//! decay faster than its a-priori bound, never slower, so fitted constants
//! are checked for bounded growth rather than equality of exponents.

use crate::anomaly_flow::{
    assemble_density, run, ExitReason, FlowConfig, FlowError, StepRecord,
};
use crate::conformal_geometry::{
    curvature_trace_residual, ellipticity_bounds, f_hat, omega_prime, torsion_identity_residual,
    GeometryReport,
};
use crate::forms_calculus::{eigenvalue_window, HermitianField};
use crate::torus_grid::{complex_hessian_spec, mean, to_spectral, RealField};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-slice diagnostic record; the run loop emits one per recorded step.
pub use crate::anomaly_flow::StepRecord as DiagnosticsRecord;

/// Values below this are treated as identically zero when fitting scaling
/// exponents in logarithmic coordinates.
pub const SCALE_FLOOR: f64 = 1e-280;

/// Minimum sample count a decay fit needs after the transient cut.
pub const FIT_MIN_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("mean of v = ∂ₜ(e^u) must vanish: |mean v| = {mean_v:e} exceeds {bound:e}")]
    StokesViolation { mean_v: f64, bound: f64 },
    #[error("decay fit needs at least {need} usable samples after the transient cut, got {got}")]
    NotEnoughSamples { got: usize, need: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// J = mean(v²) with v = ∂ₜ(e^u) = e^u · ∂ₜu, guarded by the cohomological
/// constraint mean(v) = 0 that conservation of mean(e^u) rests on.
pub fn j_functional(u: &RealField, config: &FlowConfig) -> Result<f64, DiagnosticsError> {
    let parts = assemble_density(&u.map(f64::exp), config)?;
    let v = parts.v_field();
    let mean_v = mean(&v);
    let bound = 1e-9 * config.m;
    if mean_v.abs() > bound {
        return Err(DiagnosticsError::StokesViolation {
            mean_v: mean_v.abs(),
            bound,
        });
    }
    let sq = v.map(|x| x * x);
    Ok(mean(&sq))
}

/// sup |D(u)| over the grid: the residual of the elliptic Fu-Yau equation
/// that a converged state is certified against.
pub fn elliptic_residual(u: &RealField, config: &FlowConfig) -> Result<f64, FlowError> {
    Ok(assemble_density(&u.map(f64::exp), config)?.elliptic_residual())
}

/// (t, J) series of a record trail.
pub fn j_series(records: &[StepRecord]) -> Vec<(f64, f64)> {
    records.iter().map(|r| (r.t, r.j)).collect()
}

/// Least-squares decay fit of log J against t.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayFit {
    /// η in J ≈ C e^{−ηt}; +∞ when every usable sample sits at zero.
    pub eta: f64,
    pub r_squared: f64,
    pub samples_used: usize,
}

fn linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let pred = my + slope * (p.0 - mx);
            (p.1 - pred) * (p.1 - pred)
        })
        .sum();
    let r2 = if ss_tot <= f64::MIN_POSITIVE {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some((slope, r2))
}

/// Fits J(t) ≈ C e^{−ηt} on a (t, J) series. The first 20% of samples are
/// dropped as transient; a series whose usable tail is entirely at zero
/// reports η = +∞ (the functional has already converged).
pub fn fit_decay_rate(series: &[(f64, f64)]) -> Result<DecayFit, DiagnosticsError> {
    let drop = series.len() / 5;
    let tail = &series[drop..];
    let usable: Vec<(f64, f64)> = tail
        .iter()
        .filter(|(_, j)| *j > SCALE_FLOOR)
        .map(|&(t, j)| (t, j.ln()))
        .collect();
    if usable.is_empty() && tail.len() >= FIT_MIN_SAMPLES {
        return Ok(DecayFit {
            eta: f64::INFINITY,
            r_squared: 1.0,
            samples_used: tail.len(),
        });
    }
    if usable.len() < FIT_MIN_SAMPLES {
        return Err(DiagnosticsError::NotEnoughSamples {
            got: usable.len(),
            need: FIT_MIN_SAMPLES,
        });
    }
    let (slope, r2) = linear_fit(&usable).ok_or(DiagnosticsError::NotEnoughSamples {
        got: usable.len(),
        need: FIT_MIN_SAMPLES,
    })?;
    Ok(DecayFit {
        eta: -slope,
        r_squared: r2,
        samples_used: usable.len(),
    })
}

/// First post-transient index at which J increases beyond relative
/// tolerance `rel_tol`, the discrete violation of dJ/dt ≤ −ηJ that flags a
/// step size as too large. Returns None when J is non-increasing.
pub fn first_j_increase(series: &[(f64, f64)], rel_tol: f64) -> Option<usize> {
    let drop = series.len() / 5;
    for i in drop..series.len().saturating_sub(1) {
        if series[i + 1].1 > series[i].1 * (1.0 + rel_tol) {
            return Some(i + 1);
        }
    }
    None
}

/// Stationarity audit of a single state against the config tolerances;
/// the `verify` entry point of the command line maps `passes` to its exit
/// status.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub sup_rhs: f64,
    pub elliptic_residual: f64,
    pub conservation_error: f64,
    pub geometry: GeometryReport,
    pub torsion_identity: f64,
    pub curvature_identity: f64,
    /// sup |D − 2 e^u ∂ₜu|, the internal consistency of the two residual
    /// normalizations.
    pub residual_identity_error: f64,
    pub passes: bool,
}

pub fn verify_state(u: &RealField, config: &FlowConfig) -> Result<VerifyReport, FlowError> {
    let parts = assemble_density(&u.map(f64::exp), config)?;
    let geometry = crate::conformal_geometry::geometry_report(
        u,
        config.alpha_prime,
        &config.rho,
        &config.rho_decomp.rho_tilde,
    )?;
    let sup_rhs = parts.sup_rhs();
    let residual = parts.elliptic_residual();
    let cons = crate::anomaly_flow::conservation_error(&parts.phi, config.m);
    let rhs_f = parts.rhs_field();
    let g = u.grid;
    let identity = (0..g.points()).fold(0.0f64, |a, i| {
        a.max((parts.density.data[i] - 2.0 * parts.phi.data[i] * rhs_f.data[i]).abs())
    });
    let window_ok = {
        let mut u_spec = to_spectral(u);
        if config.dealias {
            u_spec.dealias();
        }
        let hess: HermitianField = complex_hessian_spec(&u_spec)?.into();
        let fh = f_hat(u, &hess, &config.rho_decomp.rho_tilde, config.alpha_prime);
        let lost = ellipticity_bounds(&fh).is_lost();
        let op = omega_prime(u, &hess, &config.rho, config.alpha_prime);
        let (op_min, _) = eigenvalue_window(&op);
        !lost && op_min > 0.0
    };
    let passes = sup_rhs <= config.eps_rhs
        && residual <= config.eps_residual
        && cons <= config.conservation_tol
        && window_ok;
    Ok(VerifyReport {
        sup_rhs,
        elliptic_residual: residual,
        conservation_error: cons,
        geometry,
        torsion_identity: torsion_identity_residual(u)?,
        curvature_identity: curvature_trace_residual(u)?,
        residual_identity_error: identity,
        passes,
    })
}

/// One run of a mass sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRunSummary {
    pub m: f64,
    pub reason: ExitReason,
    pub converged: bool,
    /// Fitted decay of J over the run, when enough records exist.
    pub eta: Option<DecayFit>,
    pub final_record: StepRecord,
    /// max over recorded slices of sup e^u / M.
    pub max_sup_ratio: f64,
    /// max over recorded slices of M / inf e^u = M · sup e^{−u}.
    pub max_inf_ratio: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub r_squared: f64,
}

/// Bound confirmations extracted from the converged runs of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepChecks {
    /// log-log slope of sup|T|² against M; None when every value sits at
    /// the numerical floor (identically torsion-free states).
    pub t2_fit: Option<ScalingFit>,
    pub ric_fit: Option<ScalingFit>,
    /// sup|T|² must decay at least like C₃/M: slope ≤ −0.7.
    pub t2_exponent_ok: bool,
    /// sup|α′Ric| must decay at least like C₅/√M: slope ≤ −0.2.
    pub ric_exponent_ok: bool,
    /// Growth of the fitted constant C_T = sup|T|²·M relative to the
    /// smallest converged M; values below 1 mean decay faster than the
    /// bound, which confirms it.
    pub c_t2_growth: f64,
    /// Growth of C_R = sup|α′Ric|·√M relative to the smallest converged M.
    pub c_ric_growth: f64,
    pub growth_ok: bool,
    /// Smallest single constant c with sup e^u/M ∈ [1/c, c] and
    /// M·sup e^{−u} ≤ c across every converged run and every recorded time.
    pub c0_constant: f64,
    /// Largest max/min spread among the two C0 ratio families.
    pub c0_band: f64,
    pub c0_ok: bool,
    pub all_ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SweepOutcome {
    Conclusive(SweepChecks),
    Inconclusive { reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub m_values: Vec<f64>,
    pub runs: Vec<SweepRunSummary>,
    /// Smallest M that converged: the empirical threshold standing in for
    /// the non-constructive largeness assumption on M.
    pub m0_empirical: Option<f64>,
    pub outcome: SweepOutcome,
}

/// Runs the flow once per mass value and assesses the a-priori-estimate
/// scalings on the converged subset. The template config supplies data,
/// tolerances, and integrator; only M varies.
pub fn m_sweep(template: &FlowConfig, ms: &[f64]) -> Result<SweepResult, FlowError> {
    let mut runs = Vec::new();
    let valid_input = ms.len() >= 2
        && ms.iter().all(|m| m.is_finite() && *m > 0.0)
        && ms.windows(2).all(|w| w[0] < w[1]);
    if valid_input {
        for &m in ms {
            let mut cfg = template.clone();
            cfg.m = m;
            let report = run(&cfg)?;
            let final_record = report
                .records
                .last()
                .cloned()
                .expect("a run always records at least its initial slice");
            let eta = fit_decay_rate(&j_series(&report.records)).ok();
            let max_sup_ratio = report
                .records
                .iter()
                .map(|r| r.geometry.sup_e_u / m)
                .fold(0.0f64, f64::max);
            let max_inf_ratio = report
                .records
                .iter()
                .map(|r| m / r.geometry.inf_e_u)
                .fold(0.0f64, f64::max);
            runs.push(SweepRunSummary {
                m,
                reason: report.reason,
                converged: report.reason == ExitReason::Converged,
                eta,
                final_record,
                max_sup_ratio,
                max_inf_ratio,
            });
        }
    }
    let outcome = if valid_input {
        assess_sweep(&runs)
    } else {
        SweepOutcome::Inconclusive {
            reason: "need at least two positive, strictly increasing M values".into(),
        }
    };
    let m0_empirical = runs
        .iter()
        .filter(|r| r.converged)
        .map(|r| r.m)
        .fold(None, |acc: Option<f64>, m| {
            Some(acc.map_or(m, |a| a.min(m)))
        });
    Ok(SweepResult {
        m_values: ms.to_vec(),
        runs,
        m0_empirical,
        outcome,
    })
}

fn scaling_fit(pairs: &[(f64, f64)]) -> Result<Option<ScalingFit>, String> {
    let floored = pairs.iter().filter(|(_, v)| *v <= SCALE_FLOOR).count();
    if floored == pairs.len() {
        return Ok(None);
    }
    if floored > 0 {
        return Err("scaling data at the numerical floor for a strict subset of runs".into());
    }
    let log_pairs: Vec<(f64, f64)> = pairs.iter().map(|&(m, v)| (m.ln(), v.ln())).collect();
    let (slope, r2) =
        linear_fit(&log_pairs).ok_or_else(|| "degenerate scaling fit".to_string())?;
    if r2 < 0.9 {
        return Err(format!(
            "scaling fit R² = {r2:.3} below 0.9; exponent not trustworthy"
        ));
    }
    Ok(Some(ScalingFit {
        exponent: slope,
        r_squared: r2,
    }))
}

fn growth_factor(constants: &[f64]) -> f64 {
    let base = constants[0];
    if base <= SCALE_FLOOR {
        return 1.0;
    }
    constants.iter().fold(0.0f64, |a, c| a.max(c / base))
}

fn assess_sweep(runs: &[SweepRunSummary]) -> SweepOutcome {
    let converged: Vec<&SweepRunSummary> = runs.iter().filter(|r| r.converged).collect();
    if converged.len() < 2 {
        return SweepOutcome::Inconclusive {
            reason: format!(
                "only {} of {} runs converged; at least 2 needed",
                converged.len(),
                runs.len()
            ),
        };
    }
    let t2_pairs: Vec<(f64, f64)> = converged
        .iter()
        .map(|r| (r.m, r.final_record.geometry.sup_t2))
        .collect();
    let ric_pairs: Vec<(f64, f64)> = converged
        .iter()
        .map(|r| (r.m, r.final_record.geometry.sup_alpha_ric))
        .collect();
    let t2_fit = match scaling_fit(&t2_pairs) {
        Ok(f) => f,
        Err(reason) => return SweepOutcome::Inconclusive { reason },
    };
    let ric_fit = match scaling_fit(&ric_pairs) {
        Ok(f) => f,
        Err(reason) => return SweepOutcome::Inconclusive { reason },
    };
    let t2_exponent_ok = t2_fit.map_or(true, |f| f.exponent <= -0.7);
    let ric_exponent_ok = ric_fit.map_or(true, |f| f.exponent <= -0.2);

    let c_t2: Vec<f64> = t2_pairs.iter().map(|&(m, v)| v * m).collect();
    let c_ric: Vec<f64> = ric_pairs.iter().map(|&(m, v)| v * m.sqrt()).collect();
    let c_t2_growth = growth_factor(&c_t2);
    let c_ric_growth = growth_factor(&c_ric);
    let growth_ok = c_t2_growth <= 4.0 && c_ric_growth <= 4.0;

    let sup_ratios: Vec<f64> = converged.iter().map(|r| r.max_sup_ratio).collect();
    let inf_ratios: Vec<f64> = converged.iter().map(|r| r.max_inf_ratio).collect();
    let band = |vals: &[f64]| -> f64 {
        let max = vals.iter().fold(f64::MIN, |a, &v| a.max(v));
        let min = vals.iter().fold(f64::MAX, |a, &v| a.min(v));
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    };
    let c0_band = band(&sup_ratios).max(band(&inf_ratios));
    let c0_constant = sup_ratios
        .iter()
        .chain(inf_ratios.iter())
        .fold(1.0f64, |a, &v| a.max(v).max(1.0 / v.max(SCALE_FLOOR)));
    let c0_ok = c0_band <= 4.0;

    let all_ok = t2_exponent_ok && ric_exponent_ok && growth_ok && c0_ok;
    SweepOutcome::Conclusive(SweepChecks {
        t2_fit,
        ric_fit,
        t2_exponent_ok,
        ric_exponent_ok,
        c_t2_growth,
        c_ric_growth,
        growth_ok,
        c0_constant,
        c0_band,
        c0_ok,
        all_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly_flow::{CosMode, DtPolicy, Integrator};
    use crate::forms_calculus::normalize_mu;
    use crate::torus_grid::{build_grid, GridSpec};

    fn coarse() -> GridSpec {
        build_grid(8).unwrap()
    }

    #[test]
    fn decay_fit_recovers_synthetic_rate() {
        let series: Vec<(f64, f64)> = (0..60)
            .map(|i| {
                let t = 0.1 * i as f64;
                (t, (-3.0 * t).exp())
            })
            .collect();
        let fit = fit_decay_rate(&series).unwrap();
        assert!((fit.eta - 3.0).abs() < 1e-10, "eta {}", fit.eta);
        assert!(fit.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn decay_fit_rejects_short_series() {
        let series: Vec<(f64, f64)> = (0..8).map(|i| (i as f64, (-(i as f64)).exp())).collect();
        assert!(matches!(
            fit_decay_rate(&series),
            Err(DiagnosticsError::NotEnoughSamples { .. })
        ));
    }

    #[test]
    fn decay_fit_reports_infinity_when_already_converged() {
        let series: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 0.0)).collect();
        let fit = fit_decay_rate(&series).unwrap();
        assert!(fit.eta.is_infinite() && fit.eta > 0.0);
    }

    #[test]
    fn j_increase_detector_finds_upticks() {
        let mut series: Vec<(f64, f64)> = (0..30)
            .map(|i| (i as f64, (-(i as f64) / 4.0).exp()))
            .collect();
        assert_eq!(first_j_increase(&series, 1e-12), None);
        series[20].1 = series[19].1 * 1.5;
        assert_eq!(first_j_increase(&series, 1e-12), Some(20));
    }

    #[test]
    fn j_functional_matches_heat_profile() {
        let g = coarse();
        let m = 100.0;
        let eps = 0.5;
        let mut cfg = FlowConfig::new(g, 0.0, m);
        cfg.initial_e_u_modes.push(CosMode {
            k: [1, 0, 0, 0],
            amplitude: eps,
        });
        let state = crate::anomaly_flow::initial_state(&cfg).unwrap();
        let j = j_functional(&state.u, &cfg).unwrap();
        let want = eps * eps / 128.0;
        assert!(
            (j - want).abs() < 1e-15 * want.max(1.0),
            "J {j:e} vs {want:e}"
        );
    }

    #[test]
    fn heat_run_decay_rate_is_one_quarter() {
        let g = coarse();
        let mut cfg = FlowConfig::new(g, 0.0, 100.0);
        cfg.initial_e_u_modes.push(CosMode {
            k: [1, 0, 0, 0],
            amplitude: 0.5,
        });
        cfg.dt = 0.25;
        cfg.t_max = 20.0;
        cfg.record_every = 2;
        cfg.eps_rhs = 1e-300;
        let report = run(&cfg).unwrap();
        assert_eq!(report.reason, ExitReason::ReachedTMax);
        let fit = fit_decay_rate(&j_series(&report.records)).unwrap();
        assert!((fit.eta - 0.25).abs() < 1e-3, "eta {}", fit.eta);
        assert!(fit.r_squared > 0.9999);
        assert_eq!(first_j_increase(&j_series(&report.records), 1e-12), None);
    }

    #[test]
    fn elliptic_residual_equals_twice_density_normalized_rhs() {
        let g = coarse();
        let m = 7.0;
        let mut cfg = FlowConfig::new(g, 1.0, m);
        let (mu, _) = normalize_mu(&RealField::from_fn(g, |p| 0.4 * p[0].cos()));
        cfg.mu = mu;
        let u = RealField::from_fn(g, |p| m.ln() + 0.05 * p[2].cos());
        let res = elliptic_residual(&u, &cfg).unwrap();
        let rhs = crate::anomaly_flow::rhs_geometric(&u, &cfg).unwrap();
        let e_u = u.map(f64::exp);
        let via_rhs = (0..g.points()).fold(0.0f64, |a, i| {
            a.max(2.0 * (e_u.data[i] * rhs.data[i]).abs())
        });
        assert!(
            (res - via_rhs).abs() <= 1e-12 * res.max(1.0),
            "residual {res:e} vs 2 sup|e^u rhs| {via_rhs:e}"
        );
    }

    fn source_sweep_template() -> FlowConfig {
        let g = coarse();
        let mut cfg = FlowConfig::new(g, 1e-3, 1.0);
        let (mu, _) = normalize_mu(&RealField::from_fn(g, |p| 0.5 * p[0].cos()));
        cfg.mu = mu;
        cfg.integrator = Integrator::Imex;
        cfg.dt_policy = DtPolicy::Adaptive;
        cfg.dt = 0.1;
        cfg.t_max = 400.0;
        cfg.eps_rhs = 1e-9;
        cfg.record_every = 10;
        cfg
    }

    #[test]
    fn mass_sweep_confirms_scaling_bounds_on_coarse_grid() {
        let template = source_sweep_template();
        let result = m_sweep(&template, &[20.0, 200.0, 2000.0]).unwrap();
        assert_eq!(result.m0_empirical, Some(20.0));
        for r in &result.runs {
            assert!(r.converged, "M = {} exited {:?}", r.m, r.reason);
            let eta = r.eta.expect("enough records for a decay fit");
            assert!(eta.eta > 0.0);
        }
        match &result.outcome {
            SweepOutcome::Conclusive(checks) => {
                let t2 = checks.t2_fit.expect("nonzero torsion data");
                assert!(t2.exponent <= -0.7, "t2 exponent {}", t2.exponent);
                assert!(checks.ric_exponent_ok);
                assert!(checks.growth_ok, "growth {:?}", checks.c_t2_growth);
                assert!(checks.c0_ok, "c0 band {}", checks.c0_band);
                assert!(checks.all_ok);
            }
            SweepOutcome::Inconclusive { reason } => panic!("inconclusive: {reason}"),
        }
    }

    #[test]
    fn mass_sweep_is_inconclusive_without_convergence() {
        let mut template = source_sweep_template();
        template.t_max = 0.5;
        template.eps_rhs = 1e-300;
        let result = m_sweep(&template, &[20.0, 200.0]).unwrap();
        assert!(result.m0_empirical.is_none());
        match result.outcome {
            SweepOutcome::Inconclusive { reason } => {
                assert!(reason.contains("converged"), "{reason}")
            }
            SweepOutcome::Conclusive(_) => panic!("must be inconclusive"),
        }
    }

    #[test]
    fn mass_sweep_rejects_bad_mass_lists() {
        let template = source_sweep_template();
        let result = m_sweep(&template, &[100.0]).unwrap();
        assert!(matches!(
            result.outcome,
            SweepOutcome::Inconclusive { .. }
        ));
        let result = m_sweep(&template, &[100.0, 50.0]).unwrap();
        assert!(matches!(
            result.outcome,
            SweepOutcome::Inconclusive { .. }
        ));
    }

    /// With α′ = 0 and no data every state u = log M is exactly stationary:
    /// each sweep run converges immediately with exactly zero torsion.
    #[test]
    fn zero_data_sweep_has_exactly_torsion_free_limits() {
        let g = coarse();
        let cfg = FlowConfig::new(g, 0.0, 1.0);
        let result = m_sweep(&cfg, &[10.0, 100.0, 1000.0]).unwrap();
        for r in &result.runs {
            assert!(r.converged);
            assert_eq!(r.final_record.geometry.sup_t2, 0.0);
        }
        match &result.outcome {
            SweepOutcome::Conclusive(checks) => {
                assert!(checks.t2_fit.is_none());
                assert!(checks.all_ok);
            }
            SweepOutcome::Inconclusive { reason } => panic!("inconclusive: {reason}"),
        }
    }

    #[test]
    fn verify_report_separates_stationary_from_perturbed_states() {
        let g = coarse();
        let m = 50.0;
        let mut cfg = FlowConfig::new(g, 0.0, m);
        let (mu, _) = normalize_mu(&RealField::from_fn(g, |p| 0.5 * p[0].cos()));
        cfg.mu = mu;
        cfg.dt = 0.25;
        cfg.t_max = 400.0;
        cfg.eps_rhs = 1e-12;
        cfg.eps_residual = 1e-9;
        let report = run(&cfg).unwrap();
        assert_eq!(report.reason, ExitReason::Converged);
        let good = verify_state(&report.final_state.u, &cfg).unwrap();
        assert!(good.passes, "converged state must verify: {good:?}");
        assert!(good.residual_identity_error < 1e-12);
        let bad_u = RealField {
            grid: g,
            data: report
                .final_state
                .u
                .data
                .iter()
                .enumerate()
                .map(|(i, v)| v + 0.05 * g.point(i)[1].cos())
                .collect(),
        };
        let bad = verify_state(&bad_u, &cfg).unwrap();
        assert!(!bad.passes);
        assert!(bad.sup_rhs > cfg.eps_rhs);
    }
}
