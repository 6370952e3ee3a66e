//! Numerical laboratory for the anomaly flow restricted to the Fu-Yau ansatz.
//!
//! The flow lives on the flat complex 2-torus X = C^2 / (2π Z)^4 with
//! reference Kähler form ω̂ = i Σ dz^j ∧ dz̄^j and evolving metric
//! ω = e^u ω̂. Under the ansatz the anomaly flow collapses to a scalar
//! parabolic equation for the conformal factor u(x, t):
//!
//!   ∂ₜ(e^u) ω̂²/2! = ½ { i∂∂̄(e^u ω̂ − α′ e^{−u} ρ) + α′ (i∂∂̄u)² + μ } ,
//!
//! where ρ is a fixed smooth (1,1)-form, μ a fixed (2,2)-form with zero
//! average, and α′ the slope parameter (either sign). Stationary points are
//! Fu-Yau solutions of the Hull-Strominger system; the flow conserves the
//! total conformal volume mean(e^u) = M.
//!
//! The crate is organised in layers:
//!
//! * [`torus_grid`]: the periodic grid, FFT-backed spectral transforms,
//!   complex derivatives, Hessians, and reductions.
//! * [`forms_calculus`]: pointwise (1,1)-form algebra (wedge quotients,
//!   σ̂₂, i∂∂̄ of a form) and the ρ-decomposition into (ψ_ρ, b_ρ, ρ̃).
//! * [`conformal_geometry`]: torsion, curvature, the second-order
//!   coefficient form F̂, ellipticity windows, and higher-order norms.
//! * [`anomaly_flow`]: the right-hand side in two independently assembled
//!   routes, RK4 and exponential-Euler steppers, and the run loop with
//!   conservation and ellipticity guards.
//! * [`diagnostics`]: the dissipation functional J, decay-rate fits,
//!   elliptic residual certificates, and M-sweeps for a-priori scalings.
//! * [`cli_io`]: TOML configs, bit-exact snapshots, record/CSV emission.

pub mod anomaly_flow;
pub mod cli_io;
pub mod conformal_geometry;
pub mod diagnostics;
pub mod forms_calculus;
pub mod torus_grid;
