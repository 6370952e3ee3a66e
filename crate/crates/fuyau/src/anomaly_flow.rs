//! The scalar anomaly flow in its Fu-Yau reduction, its two independent
//! right-hand-side assemblies, and guarded time stepping.
//!
//! The evolution is written for the conformal density e^u:
//!
//!   ∂ₜ(e^u) = ½ D(u),
//!   D(u) = i∂∂̄(e^u ĝ − α′ e^{−u} ρ)/(ω̂²/2!) + α′ σ̂₂(i∂∂̄u) + μ̃ ,
//!
//! so that ∂ₜu = ½ e^{−u} D(u). Every operator in D annihilates the zero
//! mode exactly on the dealiased grid, which is the discrete form of the
//! conservation law mean(e^u) = M. Both steppers therefore advance the
//! density e^u spectrally and recover u afterwards; the heat part of D is
//! exactly linear in e^u, and the behavior the integrators promise in the
//! heat limit (exact semigroup ratios, untouched zero mode) is meaningful
//! only in this variable.
//!
//! Two assemblies of ∂ₜu exist side by side and are never merged:
//! [`rhs_geometric`] divides the density through by e^u, while [`rhs`]
//! expands the same expression by the product rule into
//!
//!   ½ ( Δ_ω̂ u + |Du|² + α′ e^{−u} σ̂₂(i∂∂̄u)
//!       + α′ e^{−2u} ( −ψ_ρ + Re{b^i_ρ u_i} + ρ̃^{jk̄}u_{k̄j} − ρ̃^{pq̄}u_p ū_{q̄} )
//!       + e^{−u} μ̃ ) .
//!
//! Their pointwise agreement on random data is the standing oracle for
//! every sign and factor in the ρ-decomposition and in the flow itself.

use crate::conformal_geometry::{
    ellipticity_bounds, f_hat, geometry_report, omega_prime, GeometryReport,
};
use crate::forms_calculus::{
    eigenvalue_window, i_ddbar_form_spec, sigma2_hat, trace_pairing, HermitianField, MuData,
    RhoDecomposition,
};
use crate::torus_grid::{
    complex_hessian_spec, deriv_z_spec, from_spectral, from_spectral_real, inf, mean, sup, sup_abs,
    to_spectral, ComplexField, GridError, GridSpec, RealField, SpectralField,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-step relative drift of the conserved mean that triggers adaptive
/// step halving.
pub const DRIFT_HALVING_THRESHOLD: f64 = 1e-11;

/// Conformal exponents beyond this magnitude have left the regime where
/// e^{±u} is representable with any accuracy; the run is declared blown up.
pub const EXPONENT_OVERFLOW: f64 = 700.0;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("initial conformal density must be positive everywhere (min {0:e})")]
    NonPositiveInitialData(f64),
    #[error("time step must be positive and finite")]
    BadDt,
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Rk4,
    Imex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtPolicy {
    Fixed,
    Adaptive,
}

/// One cosine mode amplitude · cos(k·x) of real grid data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CosMode {
    pub k: [i64; 4],
    pub amplitude: f64,
}

/// Full problem statement for one flow run.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub grid: GridSpec,
    pub alpha_prime: f64,
    pub m: f64,
    pub rho: HermitianField,
    pub rho_decomp: RhoDecomposition,
    pub mu: MuData,
    pub integrator: Integrator,
    pub dt_policy: DtPolicy,
    /// Fixed step size, or the initial step under the adaptive policy.
    pub dt: f64,
    pub dt_max: f64,
    pub safety: f64,
    pub t_max: f64,
    /// Convergence threshold on sup |∂ₜu|.
    pub eps_rhs: f64,
    /// Certificate threshold on the elliptic residual sup |D(u)|.
    pub eps_residual: f64,
    pub conservation_tol: f64,
    pub dealias: bool,
    /// Optional non-constant start e^{u₀} = M + Σ amplitude·cos(k·x).
    /// Anything here leaves the hypotheses of the stationary-limit
    /// theorems; runs are still well-defined and the flag is recorded.
    pub initial_e_u_modes: Vec<CosMode>,
    pub record_every: usize,
}

impl FlowConfig {
    /// Data-free config (ρ = 0, μ = 0) with conservative defaults.
    pub fn new(grid: GridSpec, alpha_prime: f64, m: f64) -> Self {
        let rho = HermitianField::zeros(grid);
        let rho_decomp = crate::forms_calculus::decompose_rho(&rho)
            .expect("decomposition of the zero form cannot fail");
        FlowConfig {
            grid,
            alpha_prime,
            m,
            rho,
            rho_decomp,
            mu: MuData {
                field: RealField::zeros(grid),
            },
            integrator: Integrator::Imex,
            dt_policy: DtPolicy::Fixed,
            dt: 0.05,
            dt_max: 0.25,
            safety: 0.5,
            t_max: 10.0,
            eps_rhs: 1e-11,
            eps_residual: 1e-9,
            conservation_tol: 1e-9,
            dealias: true,
            initial_e_u_modes: Vec::new(),
            record_every: 10,
        }
    }

    /// Installs a source form and refreshes its decomposition.
    pub fn set_rho(&mut self, rho: HermitianField) -> Result<(), FlowError> {
        self.rho_decomp = crate::forms_calculus::decompose_rho(&rho)?;
        self.rho = rho;
        Ok(())
    }

    fn rho_is_zero(&self) -> bool {
        self.rho.sup_norm() == 0.0
    }

    /// e^{u₀} = M plus the configured cosine modes.
    pub fn initial_density(&self) -> RealField {
        let modes = self.initial_e_u_modes.clone();
        let m = self.m;
        RealField::from_fn(self.grid, |p| {
            let mut v = m;
            for mode in &modes {
                let phase = mode.k[0] as f64 * p[0]
                    + mode.k[1] as f64 * p[1]
                    + mode.k[2] as f64 * p[2]
                    + mode.k[3] as f64 * p[3];
                v += mode.amplitude * phase.cos();
            }
            v
        })
    }
}

/// State of the flow at one instant.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub u: RealField,
    pub t: f64,
    pub step_count: u64,
    pub dt_current: f64,
}

/// Builds the initial state, validating positivity of e^{u₀}.
pub fn initial_state(config: &FlowConfig) -> Result<FlowState, FlowError> {
    let phi = config.initial_density();
    let lo = inf(&phi);
    if !(lo > 0.0) {
        return Err(FlowError::NonPositiveInitialData(lo));
    }
    Ok(FlowState {
        u: phi.map(f64::ln),
        t: 0.0,
        step_count: 0,
        dt_current: config.dt,
    })
}

/// One full evaluation of the flow density D and its ingredients, assembled
/// from the conformal density φ = e^u so the stepping path never round-trips
/// through logarithms.
pub struct DensityParts {
    pub u: RealField,
    pub phi: RealField,
    pub e_neg: RealField,
    pub phi_spec: SpectralField,
    /// D(u) = 2 ∂ₜ(e^u).
    pub density: RealField,
    /// D minus its exactly-linear heat part Δ_ω̂ e^u.
    pub nonlinear: RealField,
}

impl DensityParts {
    /// ∂ₜu = ½ e^{−u} D, the geometric right-hand side.
    pub fn rhs_field(&self) -> RealField {
        let g = self.u.grid;
        let data = (0..g.points())
            .map(|i| 0.5 * self.e_neg.data[i] * self.density.data[i])
            .collect();
        RealField { grid: g, data }
    }

    /// v = ∂ₜ(e^u) = ½ D.
    pub fn v_field(&self) -> RealField {
        self.density.map(|d| 0.5 * d)
    }

    pub fn sup_rhs(&self) -> f64 {
        let g = self.u.grid;
        (0..g.points()).fold(0.0f64, |a, i| {
            a.max((0.5 * self.e_neg.data[i] * self.density.data[i]).abs())
        })
    }

    /// Elliptic residual sup |D(u)| certifying stationarity.
    pub fn elliptic_residual(&self) -> f64 {
        sup_abs(&self.density)
    }
}

fn laplace_symbol(g: GridSpec, idx: usize) -> f64 {
    let i = g.unindex(idx);
    let k = [
        g.freq_zeroed(i[0]) as f64,
        g.freq_zeroed(i[1]) as f64,
        g.freq_zeroed(i[2]) as f64,
        g.freq_zeroed(i[3]) as f64,
    ];
    -0.25 * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2] + k[3] * k[3])
}

/// Assembles D(u) and friends from φ = e^u.
pub fn assemble_density(phi: &RealField, config: &FlowConfig) -> Result<DensityParts, FlowError> {
    let g = phi.grid;
    let lo = inf(phi);
    if !(lo > 0.0) || !phi.is_finite() {
        return Err(FlowError::NonPositiveInitialData(lo));
    }
    let u = phi.map(f64::ln);
    let e_neg = phi.map(|v| 1.0 / v);
    let phi_spec = to_spectral(phi);

    let alpha = config.alpha_prime;
    let sigma2 = if alpha != 0.0 {
        let mut u_spec = to_spectral(&u);
        if config.dealias {
            u_spec.dealias();
        }
        let hess: HermitianField = complex_hessian_spec(&u_spec)?.into();
        Some(sigma2_hat(&hess))
    } else {
        None
    };

    let rho_term = if alpha != 0.0 && !config.rho_is_zero() {
        let scaled = HermitianField {
            h11: RealField {
                grid: g,
                data: (0..g.points())
                    .map(|i| e_neg.data[i] * config.rho.h11.data[i])
                    .collect(),
            },
            h22: RealField {
                grid: g,
                data: (0..g.points())
                    .map(|i| e_neg.data[i] * config.rho.h22.data[i])
                    .collect(),
            },
            h12: ComplexField {
                grid: g,
                data: (0..g.points())
                    .map(|i| e_neg.data[i] * config.rho.h12.data[i])
                    .collect(),
            },
        };
        Some(from_spectral_real(&i_ddbar_form_spec(&scaled))?)
    } else {
        None
    };

    let mu = &config.mu.field;
    let nonlinear = RealField {
        grid: g,
        data: (0..g.points())
            .map(|i| {
                let s2 = sigma2.as_ref().map_or(0.0, |s| s.data[i]);
                let rho_part = rho_term.as_ref().map_or(0.0, |r| r.data[i]);
                alpha * (s2 - rho_part) + mu.data[i]
            })
            .collect(),
    };

    let lin_spec = SpectralField {
        grid: g,
        data: (0..g.points())
            .map(|i| phi_spec.data[i] * laplace_symbol(g, i))
            .collect(),
    };
    let lin = from_spectral_real(&lin_spec)?;
    let density = RealField {
        grid: g,
        data: (0..g.points())
            .map(|i| lin.data[i] + nonlinear.data[i])
            .collect(),
    };

    Ok(DensityParts {
        u,
        phi: phi.clone(),
        e_neg,
        phi_spec,
        density,
        nonlinear,
    })
}

/// Geometric assembly of ∂ₜu: the density divided through by e^u. No
/// product rule is applied anywhere; this is the route the steppers use.
pub fn rhs_geometric(u: &RealField, config: &FlowConfig) -> Result<RealField, FlowError> {
    let parts = assemble_density(&u.map(f64::exp), config)?;
    Ok(parts.rhs_field())
}

/// Hand-expanded scalar assembly of ∂ₜu through the ρ-decomposition. Kept
/// deliberately independent of [`rhs_geometric`]; their agreement on random
/// draws is the oracle for the whole right-hand side.
pub fn rhs(u: &RealField, config: &FlowConfig) -> Result<RealField, FlowError> {
    let g = u.grid;
    let mut u_spec = to_spectral(u);
    if config.dealias {
        u_spec.dealias();
    }
    let hess: HermitianField = complex_hessian_spec(&u_spec)?.into();
    let u1 = from_spectral(&deriv_z_spec(1, &u_spec));
    let u2 = from_spectral(&deriv_z_spec(2, &u_spec));
    let sigma2 = sigma2_hat(&hess);
    let alpha = config.alpha_prime;
    let d = &config.rho_decomp;
    let hess_pair = trace_pairing(&d.rho_tilde, &hess);
    let grad_pair = d.pair_gradient(&u1, &u2);
    let mu = &config.mu.field;
    let data = (0..g.points())
        .map(|i| {
            let lap = hess.h11.data[i] + hess.h22.data[i];
            let grad_sq = u1.data[i].norm_sqr() + u2.data[i].norm_sqr();
            let s = (-u.data[i]).exp();
            let lin_b = (d.b1.data[i] * u1.data[i] + d.b2.data[i] * u2.data[i]).re;
            let rho_part =
                s * s * (-d.psi.data[i] + lin_b + hess_pair.data[i] - grad_pair.data[i]);
            0.5 * (lap + grad_sq + alpha * s * sigma2.data[i] + alpha * rho_part + s * mu.data[i])
        })
        .collect();
    Ok(RealField { grid: g, data })
}

fn phi1(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z.exp_m1() / z
    }
}

/// One exponential-Euler step for φ = e^u: the heat multiplier is applied
/// exactly and the remaining terms enter through the φ₁ weight,
///
///   φ̂'(k) = e^{−|k|²dt/8} φ̂(k) + dt·φ₁(−|k|²dt/8) N̂(k),  N = ½(D − Δ_ω̂ e^u).
///
/// Fixed points of this map are exactly the discrete stationary states
/// D = 0, so a converged run certifies a genuine zero of the elliptic
/// operator and not an artifact of the splitting. |k|² uses the same
/// Nyquist-zeroed frequencies as every derivative.
pub fn step_imex(state: &FlowState, config: &FlowConfig, dt: f64) -> Result<FlowState, FlowError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlowError::BadDt);
    }
    let phi = state.u.map(f64::exp);
    let parts = assemble_density(&phi, config)?;
    let phi_new = imex_update(&parts, dt)?;
    advance_state(state, &phi_new, dt)
}

fn imex_update(parts: &DensityParts, dt: f64) -> Result<RealField, FlowError> {
    let g = parts.phi.grid;
    let n_spec = to_spectral(&parts.nonlinear.map(|v| 0.5 * v));
    let data = (0..g.points())
        .map(|i| {
            let z = 0.5 * laplace_symbol(g, i) * dt;
            parts.phi_spec.data[i] * z.exp() + n_spec.data[i] * (dt * phi1(z))
        })
        .collect();
    let phi_new = from_spectral_real(&SpectralField { grid: g, data })?;
    Ok(phi_new)
}

/// One classical four-stage Runge-Kutta step for φ = e^u with stage
/// derivative G(φ) = ½ D. The stage combination preserves the grid mean to
/// roundoff because every G has exact zero mean.
pub fn step_rk4(state: &FlowState, config: &FlowConfig, dt: f64) -> Result<FlowState, FlowError> {
    if !(dt.is_finite() && dt != 0.0) {
        return Err(FlowError::BadDt);
    }
    let phi = state.u.map(f64::exp);
    let phi_new = rk4_update(&phi, config, dt)?;
    advance_state(state, &phi_new, dt)
}

fn rk4_update(phi: &RealField, config: &FlowConfig, dt: f64) -> Result<RealField, FlowError> {
    let g = phi.grid;
    let stage = |base: &RealField, k: Option<(&RealField, f64)>| -> Result<RealField, FlowError> {
        let arg = match k {
            None => base.clone(),
            Some((kf, c)) => RealField {
                grid: g,
                data: (0..g.points())
                    .map(|i| base.data[i] + c * kf.data[i])
                    .collect(),
            },
        };
        Ok(assemble_density(&arg, config)?.v_field())
    };
    let k1 = stage(phi, None)?;
    let k2 = stage(phi, Some((&k1, 0.5 * dt)))?;
    let k3 = stage(phi, Some((&k2, 0.5 * dt)))?;
    let k4 = stage(phi, Some((&k3, dt)))?;
    let data = (0..g.points())
        .map(|i| {
            phi.data[i]
                + dt / 6.0 * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i])
        })
        .collect();
    Ok(RealField { grid: g, data })
}

fn advance_state(
    state: &FlowState,
    phi_new: &RealField,
    dt: f64,
) -> Result<FlowState, FlowError> {
    let lo = inf(phi_new);
    if !(lo > 0.0) || !phi_new.is_finite() {
        return Err(FlowError::NonPositiveInitialData(lo));
    }
    Ok(FlowState {
        u: phi_new.map(f64::ln),
        t: state.t + dt,
        step_count: state.step_count + 1,
        dt_current: dt,
    })
}

/// Step-size proposal. For rk4 the bound comes from the stiffest heat mode
/// through the ellipticity ceiling, dt = safety · 2.8 / (½ (n/2)² λ_max(F̂)),
/// 2.8 being the real-axis stability reach of the classical scheme. For the
/// exponential integrator the linear part imposes no limit at all; the step
/// is restrained only by the nonlinear terms, dt = safety / sup|∂ₜu − ½Δ_ω̂u|,
/// capped at dt_max (a vanishing nonlinearity proposes dt_max itself).
pub fn suggest_dt(state: &FlowState, config: &FlowConfig) -> Result<f64, FlowError> {
    let phi = state.u.map(f64::exp);
    let parts = assemble_density(&phi, config)?;
    match config.integrator {
        Integrator::Rk4 => {
            let mut u_spec = to_spectral(&state.u);
            if config.dealias {
                u_spec.dealias();
            }
            let hess: HermitianField = complex_hessian_spec(&u_spec)?.into();
            let fh = f_hat(
                &state.u,
                &hess,
                &config.rho_decomp.rho_tilde,
                config.alpha_prime,
            );
            let (_, lambda_max) = eigenvalue_window(&fh);
            let half_n = (config.grid.n() / 2) as f64;
            let stiff = 0.5 * half_n * half_n * lambda_max.max(0.0);
            if stiff <= 0.0 {
                return Ok(config.dt_max);
            }
            Ok((config.safety * 2.8 / stiff).min(config.dt_max))
        }
        Integrator::Imex => {
            let g = config.grid;
            let mut nl_sup = 0.0f64;
            for i in 0..g.points() {
                // ∂ₜu minus its exactly-integrated part, in u-units.
                let nl = 0.5 * parts.e_neg.data[i] * parts.nonlinear.data[i];
                nl_sup = nl_sup.max(nl.abs());
            }
            if nl_sup == 0.0 {
                return Ok(config.dt_max);
            }
            Ok((config.safety / nl_sup).min(config.dt_max))
        }
    }
}

/// Step response to a conservation drift violation: halve.
pub fn dt_after_drift_violation(dt: f64) -> f64 {
    0.5 * dt
}

/// Relative error of the conserved mean.
pub fn conservation_error(phi: &RealField, m: f64) -> f64 {
    (mean(phi) - m).abs() / m
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitReason {
    Converged,
    ReachedTMax,
    BlowUp,
    EllipticityLoss,
}

/// Stationarity certificate attached to converged runs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Certificate {
    pub sup_rhs: f64,
    pub elliptic_residual: f64,
    /// sup |D − 2 e^u ∂ₜu| over the grid: the exactness of the relation
    /// tying the residual to the parabolic right-hand side.
    pub residual_identity_error: f64,
    pub conservation_error: f64,
    pub satisfied: bool,
}

/// Everything recorded at one diagnostic slice of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub step_count: u64,
    pub conservation_error: f64,
    pub geometry: GeometryReport,
    /// Dissipation functional J = mean((∂ₜ e^u)²).
    pub j: f64,
    pub sup_rhs: f64,
    pub elliptic_residual: f64,
    /// |mean(∂ₜ e^u)| at this slice; Stokes says it vanishes.
    pub v_mean_abs: f64,
    /// Residual of |i∂ω|² = 2|T|² assembled through independent routes.
    pub torsion_identity: f64,
    /// Residual of the scalar curvature trace identity.
    pub curvature_identity: f64,
}

/// Result of a guarded run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub final_state: FlowState,
    pub reason: ExitReason,
    pub records: Vec<StepRecord>,
    pub certificate: Option<Certificate>,
    /// Set when the run used a non-constant initial density, which leaves
    /// the hypotheses of the stationary-limit theorems.
    pub outside_theorem_hypotheses: bool,
}

fn record_slice(
    state_t: f64,
    dt: f64,
    step_count: u64,
    parts: &DensityParts,
    config: &FlowConfig,
) -> Result<StepRecord, FlowError> {
    let geometry = geometry_report(
        &parts.u,
        config.alpha_prime,
        &config.rho,
        &config.rho_decomp.rho_tilde,
    )?;
    let v = parts.v_field();
    let j = {
        let sq = v.map(|x| x * x);
        mean(&sq)
    };
    Ok(StepRecord {
        t: state_t,
        dt,
        step_count,
        conservation_error: conservation_error(&parts.phi, config.m),
        geometry,
        j,
        sup_rhs: parts.sup_rhs(),
        elliptic_residual: parts.elliptic_residual(),
        v_mean_abs: mean(&v).abs(),
        torsion_identity: crate::conformal_geometry::torsion_identity_residual(&parts.u)?,
        curvature_identity: crate::conformal_geometry::curvature_trace_residual(&parts.u)?,
    })
}

fn ellipticity_guard(parts: &DensityParts, config: &FlowConfig) -> Result<bool, FlowError> {
    let mut u_spec = to_spectral(&parts.u);
    if config.dealias {
        u_spec.dealias();
    }
    let hess: HermitianField = complex_hessian_spec(&u_spec)?.into();
    let fh = f_hat(
        &parts.u,
        &hess,
        &config.rho_decomp.rho_tilde,
        config.alpha_prime,
    );
    let window = ellipticity_bounds(&fh);
    if window.is_lost() {
        return Ok(true);
    }
    let op = omega_prime(&parts.u, &hess, &config.rho, config.alpha_prime);
    let (op_min, _) = eigenvalue_window(&op);
    Ok(op_min <= 0.0)
}

/// Runs the flow from its configured initial data.
pub fn run(config: &FlowConfig) -> Result<RunReport, FlowError> {
    let state = initial_state(config)?;
    run_from(config, state)
}

/// Runs the flow from an explicit state (used for snapshot resume). The
/// loop evaluates the density once per step and reuses it for stepping,
/// convergence tests, and records. Guards:
///
/// * every step: positivity and finiteness of e^u (else blow-up, with the
///   last valid state preserved in the report);
/// * recorded steps: ellipticity window of F̂ above the halting floor and
///   positivity of ω′ (else ellipticity-loss);
/// * adaptive policy: per-step conservation drift beyond
///   `DRIFT_HALVING_THRESHOLD · M` retries the step with dt halved.
pub fn run_from(config: &FlowConfig, state: FlowState) -> Result<RunReport, FlowError> {
    let outside = !config.initial_e_u_modes.is_empty();
    let mut phi = state.u.map(f64::exp);
    let mut t = state.t;
    let mut step_count = state.step_count;
    let mut dt = if state.dt_current > 0.0 {
        state.dt_current
    } else {
        config.dt
    };
    let mut records: Vec<StepRecord> = Vec::new();
    let record_every = config.record_every.max(1) as u64;
    let mut last_recorded: Option<u64> = None;

    let mut last_valid = FlowState {
        u: phi.map(f64::ln),
        t,
        step_count,
        dt_current: dt,
    };

    loop {
        let parts = match assemble_density(&phi, config) {
            Ok(p) => p,
            Err(_) => {
                return Ok(RunReport {
                    final_state: last_valid,
                    reason: ExitReason::BlowUp,
                    records,
                    certificate: None,
                    outside_theorem_hypotheses: outside,
                });
            }
        };
        last_valid = FlowState {
            u: parts.u.clone(),
            t,
            step_count,
            dt_current: dt,
        };

        let recorded_now =
            step_count % record_every == 0 && last_recorded != Some(step_count);
        if recorded_now {
            last_recorded = Some(step_count);
            records.push(record_slice(t, dt, step_count, &parts, config)?);
            if ellipticity_guard(&parts, config)? {
                return Ok(RunReport {
                    final_state: last_valid,
                    reason: ExitReason::EllipticityLoss,
                    records,
                    certificate: None,
                    outside_theorem_hypotheses: outside,
                });
            }
            if config.dt_policy == DtPolicy::Adaptive {
                let st = FlowState {
                    u: parts.u.clone(),
                    t,
                    step_count,
                    dt_current: dt,
                };
                dt = suggest_dt(&st, config)?.min(config.dt_max);
            }
        }

        let sup_rhs = parts.sup_rhs();
        if sup_rhs < config.eps_rhs {
            if last_recorded != Some(step_count) {
                records.push(record_slice(t, dt, step_count, &parts, config)?);
            }
            let residual = parts.elliptic_residual();
            let cons = conservation_error(&parts.phi, config.m);
            let identity = {
                let g = parts.u.grid;
                let rhs_f = parts.rhs_field();
                (0..g.points()).fold(0.0f64, |a, i| {
                    a.max(
                        (parts.density.data[i]
                            - 2.0 * parts.phi.data[i] * rhs_f.data[i])
                            .abs(),
                    )
                })
            };
            let certificate = Certificate {
                sup_rhs,
                elliptic_residual: residual,
                residual_identity_error: identity,
                conservation_error: cons,
                satisfied: residual <= config.eps_residual && cons <= config.conservation_tol,
            };
            return Ok(RunReport {
                final_state: last_valid,
                reason: ExitReason::Converged,
                records,
                certificate: Some(certificate),
                outside_theorem_hypotheses: outside,
            });
        }

        if t >= config.t_max {
            if last_recorded != Some(step_count) {
                records.push(record_slice(t, dt, step_count, &parts, config)?);
            }
            return Ok(RunReport {
                final_state: last_valid,
                reason: ExitReason::ReachedTMax,
                records,
                certificate: None,
                outside_theorem_hypotheses: outside,
            });
        }

        let dt_step = dt.min(config.t_max - t).max(f64::MIN_POSITIVE);
        let prev_mean = mean(&phi);
        let phi_next = match config.integrator {
            Integrator::Imex => imex_update(&parts, dt_step),
            Integrator::Rk4 => rk4_update(&phi, config, dt_step),
        };
        let phi_next = match phi_next {
            Ok(p) => p,
            Err(_) => {
                return Ok(RunReport {
                    final_state: last_valid,
                    reason: ExitReason::BlowUp,
                    records,
                    certificate: None,
                    outside_theorem_hypotheses: outside,
                });
            }
        };
        if !phi_next.is_finite() || !(inf(&phi_next) > 0.0) || sup(&phi_next).ln() > EXPONENT_OVERFLOW
        {
            return Ok(RunReport {
                final_state: last_valid,
                reason: ExitReason::BlowUp,
                records,
                certificate: None,
                outside_theorem_hypotheses: outside,
            });
        }
        let drift = (mean(&phi_next) - prev_mean).abs();
        if config.dt_policy == DtPolicy::Adaptive
            && drift > DRIFT_HALVING_THRESHOLD * config.m
            && dt_step > 16.0 * f64::EPSILON
        {
            dt = dt_after_drift_violation(dt_step);
            continue;
        }
        phi = phi_next;
        t += dt_step;
        step_count += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms_calculus::normalize_mu;
    use crate::torus_grid::build_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> GridSpec {
        build_grid(16).unwrap()
    }

    fn heat_config(m: f64) -> FlowConfig {
        FlowConfig::new(grid(), 0.0, m)
    }

    #[test]
    fn constant_factor_with_reference_rho_is_stationary() {
        let g = grid();
        for alpha in [1.0, -1.0] {
            let mut cfg = FlowConfig::new(g, alpha, 1000.0);
            cfg.set_rho(HermitianField::identity(g)).unwrap();
            let u = RealField::constant(g, 1000.0f64.ln());
            assert!(sup_abs(&rhs_geometric(&u, &cfg).unwrap()) < 1e-13);
            assert!(sup_abs(&rhs(&u, &cfg).unwrap()) < 1e-13);
        }
    }

    #[test]
    fn rhs_of_pure_source_term_matches_closed_form() {
        let g = grid();
        let m = 40.0f64;
        let mut cfg = FlowConfig::new(g, 1.0, m);
        let (mu, _) = normalize_mu(&RealField::from_fn(g, |p| p[0].cos()));
        cfg.mu = mu;
        let u = RealField::constant(g, m.ln());
        let r = rhs(&u, &cfg).unwrap();
        let want = RealField::from_fn(g, |p| p[0].cos() / (2.0 * m));
        let err = (0..g.points()).fold(0.0f64, |a, i| a.max((r.data[i] - want.data[i]).abs()));
        assert!(err < 1e-14, "source rhs error {err:e}");
        let rg = rhs_geometric(&u, &cfg).unwrap();
        let err = (0..g.points()).fold(0.0f64, |a, i| a.max((rg.data[i] - want.data[i]).abs()));
        assert!(err < 1e-14, "geometric source rhs error {err:e}");
    }

    /// The dual-assembly oracle: twenty random draws of (u, ρ, μ, α′) must
    /// agree pointwise between the geometric and expanded routes.
    #[test]
    fn dual_assembly_agreement_on_random_draws() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let m: f64 = rng.gen_range(1.0..3.0);
            let alpha = *[1.0, -1.0, 0.4, -0.4, 0.0].get(trial % 5).unwrap();
            let mut cfg = FlowConfig::new(g, alpha, m);
            cfg.set_rho(random_hermitian(g, &mut rng, 1.0)).unwrap();
            let (mu, _) = normalize_mu(&random_field(g, &mut rng, 1.0, 2));
            cfg.mu = mu;
            let u = {
                let w = random_field(g, &mut rng, 0.05, 1);
                RealField {
                    grid: g,
                    data: w.data.iter().map(|v| m.ln() + v).collect(),
                }
            };
            let a = rhs(&u, &cfg).unwrap();
            let b = rhs_geometric(&u, &cfg).unwrap();
            let err = (0..g.points()).fold(0.0f64, |x, i| x.max((a.data[i] - b.data[i]).abs()));
            assert!(err < 1e-10, "draw {trial}: assembly disagreement {err:e}");
        }
    }

    fn random_field(g: GridSpec, rng: &mut ChaCha8Rng, amplitude: f64, max_mode: i64) -> RealField {
        let mut modes = Vec::new();
        for _ in 0..4 {
            let k = [
                rng.gen_range(-max_mode..=max_mode),
                rng.gen_range(-max_mode..=max_mode),
                rng.gen_range(-max_mode..=max_mode),
                rng.gen_range(-max_mode..=max_mode),
            ];
            let a: f64 = rng.gen_range(-1.0..1.0);
            let ph: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            modes.push((k, a, ph));
        }
        let norm: f64 = modes.iter().map(|(_, a, _)| a.abs()).sum::<f64>().max(1.0);
        RealField::from_fn(g, |p| {
            modes
                .iter()
                .map(|(k, a, ph)| {
                    let phase = k[0] as f64 * p[0]
                        + k[1] as f64 * p[1]
                        + k[2] as f64 * p[2]
                        + k[3] as f64 * p[3];
                    amplitude * a / norm * (phase + ph).cos()
                })
                .sum()
        })
    }

    fn random_hermitian(g: GridSpec, rng: &mut ChaCha8Rng, amplitude: f64) -> HermitianField {
        HermitianField {
            h11: random_field(g, rng, amplitude, 2),
            h22: random_field(g, rng, amplitude, 2),
            h12: {
                let re = random_field(g, rng, amplitude, 2);
                let im = random_field(g, rng, amplitude, 2);
                ComplexField {
                    grid: g,
                    data: (0..g.points())
                        .map(|i| num_complex::Complex64::new(re.data[i], im.data[i]))
                        .collect(),
                }
            },
        }
    }

    #[test]
    fn imex_heat_mode_ratio_is_exact_for_any_dt() {
        let g = grid();
        let m = 100.0f64;
        let eps = 0.1;
        let cfg = heat_config(m);
        let phi0 = RealField::from_fn(g, |p| m + eps * p[0].cos());
        let state = FlowState {
            u: phi0.map(f64::ln),
            t: 0.0,
            step_count: 0,
            dt_current: 0.0,
        };
        for dt in [0.37, 1.0, 5.0] {
            let next = step_imex(&state, &cfg, dt).unwrap();
            let want = RealField::from_fn(g, |p| m + eps * (-dt / 8.0).exp() * p[0].cos());
            let phi_next = next.u.map(f64::exp);
            let err = (0..g.points()).fold(0.0f64, |a, i| {
                a.max((phi_next.data[i] - want.data[i]).abs())
            });
            assert!(err < 1e-12, "dt {dt}: imex heat error {err:e}");
            assert!((mean(&phi_next) - m).abs() < 1e-11);
        }
    }

    #[test]
    fn imex_leaves_stationary_state_unchanged_except_time() {
        let g = grid();
        let cfg = heat_config(50.0);
        let state = initial_state(&cfg).unwrap();
        let next = step_imex(&state, &cfg, 0.3).unwrap();
        assert_eq!(next.t, 0.3);
        assert_eq!(next.step_count, 1);
        let err = (0..g.points()).fold(0.0f64, |a, i| {
            a.max((next.u.data[i] - state.u.data[i]).abs())
        });
        assert!(err < 1e-14, "stationary state moved by {err:e}");
    }

    #[test]
    fn rk4_heat_mode_matches_stability_polynomial() {
        let g = grid();
        let m = 100.0f64;
        let eps = 0.1;
        let cfg = heat_config(m);
        let phi0 = RealField::from_fn(g, |p| m + eps * p[0].cos());
        let state = FlowState {
            u: phi0.map(f64::ln),
            t: 0.0,
            step_count: 0,
            dt_current: 0.0,
        };
        let dt = 0.01;
        let next = step_rk4(&state, &cfg, dt).unwrap();
        let z: f64 = -dt / 8.0;
        let r = 1.0 + z + z * z / 2.0 + z * z * z / 6.0 + z * z * z * z / 24.0;
        let phi_next = next.u.map(f64::exp);
        let want = RealField::from_fn(g, |p| m + eps * r * p[0].cos());
        let err = (0..g.points()).fold(0.0f64, |a, i| {
            a.max((phi_next.data[i] - want.data[i]).abs())
        });
        assert!(err < 1e-13, "rk4 stability polynomial error {err:e}");
        assert!((r - z.exp()).abs() < dt.powi(5), "local order check");
    }

    #[test]
    fn rk4_step_is_time_reversible_to_scheme_order() {
        let g = grid();
        let m = 10.0f64;
        let mut cfg = FlowConfig::new(g, 1.0, m);
        let (mu, _) = normalize_mu(&RealField::from_fn(g, |p| 0.5 * p[0].cos()));
        cfg.mu = mu;
        let phi0 = RealField::from_fn(g, |p| m + 0.2 * p[2].cos());
        let state = FlowState {
            u: phi0.map(f64::ln),
            t: 0.0,
            step_count: 0,
            dt_current: 0.0,
        };
        let dt = 0.01;
        let fwd = step_rk4(&state, &cfg, dt).unwrap();
        let back = step_rk4(&fwd, &cfg, -dt).unwrap();
        let err = (0..g.points()).fold(0.0f64, |a, i| {
            a.max((back.u.data[i] - state.u.data[i]).abs())
        });
        assert!(err < 1e-10, "time reversal error {err:e}");
    }

    #[test]
    fn suggested_steps_match_stability_heuristics() {
        let g = grid();
        let mut cfg = FlowConfig::new(g, 1e-9, 1000.0);
        cfg.integrator = Integrator::Rk4;
        cfg.safety = 0.5;
        let state = initial_state(&cfg).unwrap();
        let dt = suggest_dt(&state, &cfg).unwrap();
        assert!(
            (dt - 0.04375).abs() < 1e-3,
            "rk4 suggestion {dt} should be near 0.044"
        );
        let mut cfg = heat_config(1000.0);
        cfg.integrator = Integrator::Imex;
        cfg.dt_max = 0.25;
        let state = initial_state(&cfg).unwrap();
        let dt = suggest_dt(&state, &cfg).unwrap();
        assert_eq!(dt, 0.25, "pure heat must cap at dt_max");
        assert_eq!(dt_after_drift_violation(dt), 0.125);
    }

    #[test]
    fn initial_data_must_stay_positive() {
        let g = grid();
        let mut cfg = FlowConfig::new(g, 0.0, 1.0);
        cfg.initial_e_u_modes.push(CosMode {
            k: [1, 0, 0, 0],
            amplitude: 2.0,
        });
        assert!(matches!(
            initial_state(&cfg),
            Err(FlowError::NonPositiveInitialData(_))
        ));
    }

    #[test]
    fn rk4_heat_run_conserves_mean_to_roundoff() {
        let g = grid();
        let m = 100.0f64;
        let mut cfg = heat_config(m);
        cfg.integrator = Integrator::Rk4;
        cfg.initial_e_u_modes.push(CosMode {
            k: [1, 0, 0, 0],
            amplitude: 0.1,
        });
        let mut state = initial_state(&cfg).unwrap();
        let dt = 1e-3;
        let mut phi = state.u.map(f64::exp);
        for _ in 0..1000 {
            phi = rk4_update(&phi, &cfg, dt).unwrap();
        }
        state.u = phi.map(f64::ln);
        let err = conservation_error(&phi, m);
        assert!(err < 1e-12, "heat conservation error {err:e}");
        let want = RealField::from_fn(g, |p| m + 0.1 * (-1.0f64 / 8.0).exp() * p[0].cos());
        let sol_err = (0..g.points()).fold(0.0f64, |a, i| a.max((phi.data[i] - want.data[i]).abs()));
        assert!(sol_err < 1e-12, "heat solution error {sol_err:e}");
    }
}
