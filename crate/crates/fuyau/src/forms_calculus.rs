//! Pointwise algebra of real (1,1)-forms on the torus and the structure
//! decomposition of the fixed source form ρ.
//!
//! A real (1,1)-form A = i A_{k̄j} dz^j ∧ dz̄^k is stored through the three
//! independent entries of its Hermitian coefficient matrix. All wedge
//! identities below are normalized against the reference volume form
//! ω̂²/2! = −dz¹∧dz̄¹∧dz²∧dz̄², so that for Hermitian A, B
//!
//!   A ∧ B / (ω̂²/2!) = A_{1̄1}B_{2̄2} + A_{2̄2}B_{1̄1} − A_{1̄2}B_{2̄1} − A_{2̄1}B_{1̄2},
//!
//!   σ̂₂(A) = A²/ω̂² = det A_{k̄j},
//!
//!   i∂∂̄A / (ω̂²/2!) = ∂_1∂_{1̄}A_{2̄2} + ∂_2∂_{2̄}A_{1̄1}
//!                      − ∂_1∂_{2̄}A_{1̄2} − ∂_2∂_{1̄}A_{2̄1}.
//!
//! The last operator annihilates constants and has exact zero mean, the
//! discrete Stokes identity the conservation law of the flow rests on.
//!
//! For the source form ρ the flow needs the quantities (ψ_ρ, b_ρ, ρ̃) with
//!
//!   ψ_ρ = i∂∂̄ρ / (ω̂²/2!),   b¹_ρ = 2(∂_{1̄}ρ_{2̄2} − ∂_{2̄}ρ_{1̄2}),
//!   b²_ρ = 2(∂_{2̄}ρ_{1̄1} − ∂_{1̄}ρ_{2̄1}),   ρ̃ = adj(ρ_{k̄j}),
//!
//! which reassemble i∂∂̄(e^{−w}ρ) for any conformal weight w. The
//! reconstruction identity is enforced at runtime rather than trusted.

use crate::torus_grid::{
    complex_hessian, conj_reflect, deriv_z_multiplier, deriv_zbar_multiplier, deriv_zbar_spec,
    from_spectral, from_spectral_real, kahan_sum, mean, to_spectral, to_spectral_c, ComplexField,
    GridError, GridSpec, RealField, SpectralField,
};

/// Hermitian coefficient field of a real (1,1)-form: h11 = A_{1̄1},
/// h22 = A_{2̄2}, h12 = A_{1̄2}; the remaining entry A_{2̄1} = conj(A_{1̄2})
/// is implied and never stored.
#[derive(Debug, Clone)]
pub struct HermitianField {
    pub h11: RealField,
    pub h22: RealField,
    pub h12: ComplexField,
}

impl HermitianField {
    pub fn grid(&self) -> GridSpec {
        self.h11.grid
    }

    pub fn zeros(grid: GridSpec) -> Self {
        HermitianField {
            h11: RealField::zeros(grid),
            h22: RealField::zeros(grid),
            h12: ComplexField::zeros(grid),
        }
    }

    /// The reference metric form ĝ = identity coefficients.
    pub fn identity(grid: GridSpec) -> Self {
        HermitianField {
            h11: RealField::constant(grid, 1.0),
            h22: RealField::constant(grid, 1.0),
            h12: ComplexField::zeros(grid),
        }
    }

    /// Adjugate matrix field: adj [[a, b], [b̄, d]] = [[d, −b], [−b̄, a]],
    /// so A · adj(A) = det(A) · Id pointwise.
    pub fn adjugate(&self) -> Self {
        HermitianField {
            h11: self.h22.clone(),
            h22: self.h11.clone(),
            h12: ComplexField {
                grid: self.h12.grid,
                data: self.h12.data.iter().map(|v| -v).collect(),
            },
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        HermitianField {
            h11: self.h11.map(|v| c * v),
            h22: self.h22.map(|v| c * v),
            h12: ComplexField {
                grid: self.h12.grid,
                data: self.h12.data.iter().map(|v| c * v).collect(),
            },
        }
    }

    /// Largest entry modulus over the grid.
    pub fn sup_norm(&self) -> f64 {
        let d = self
            .h11
            .data
            .iter()
            .zip(self.h22.data.iter())
            .fold(0.0f64, |a, (x, y)| a.max(x.abs()).max(y.abs()));
        self.h12.data.iter().fold(d, |a, v| a.max(v.norm()))
    }
}

impl From<crate::torus_grid::ComplexHessian> for HermitianField {
    fn from(h: crate::torus_grid::ComplexHessian) -> Self {
        HermitianField {
            h11: h.h11,
            h22: h.h22,
            h12: h.h12,
        }
    }
}

/// A ∧ B / (ω̂²/2!) for Hermitian A, B; symmetric in its arguments.
pub fn wedge_quotient(a: &HermitianField, b: &HermitianField) -> RealField {
    let g = a.grid();
    let data = (0..g.points())
        .map(|i| {
            a.h11.data[i] * b.h22.data[i] + a.h22.data[i] * b.h11.data[i]
                - 2.0 * (a.h12.data[i] * b.h12.data[i].conj()).re
        })
        .collect();
    RealField { grid: g, data }
}

/// σ̂₂(A) = A ∧ A / ω̂² = det of the coefficient matrix, pointwise.
pub fn sigma2_hat(a: &HermitianField) -> RealField {
    let g = a.grid();
    let data = (0..g.points())
        .map(|i| a.h11.data[i] * a.h22.data[i] - a.h12.data[i].norm_sqr())
        .collect();
    RealField { grid: g, data }
}

/// Frobenius-type pairing tr(A · B) = A_{1̄1}B_{1̄1} + A_{2̄2}B_{2̄2}
/// + 2 Re(A_{1̄2} conj(B_{1̄2})) of two Hermitian coefficient fields. With
/// A = adj(ρ) this realizes the contraction ρ̃^{jk̄} B_{k̄j}.
pub fn trace_pairing(a: &HermitianField, b: &HermitianField) -> RealField {
    let g = a.grid();
    let data = (0..g.points())
        .map(|i| {
            a.h11.data[i] * b.h11.data[i]
                + a.h22.data[i] * b.h22.data[i]
                + 2.0 * (a.h12.data[i] * b.h12.data[i].conj()).re
        })
        .collect();
    RealField { grid: g, data }
}

/// Pointwise eigenvalue window of the Hermitian coefficient matrix,
/// returned as (min over grid of λ_min, max over grid of λ_max). Uses the
/// stable closed form λ = m ± √(δ² + |b|²) with m the midpoint and δ the
/// half-gap, which is exact on diagonal constants.
pub fn eigenvalue_window(a: &HermitianField) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..a.grid().points() {
        let m = 0.5 * (a.h11.data[i] + a.h22.data[i]);
        let delta = 0.5 * (a.h11.data[i] - a.h22.data[i]);
        let r = (delta * delta + a.h12.data[i].norm_sqr()).sqrt();
        lo = lo.min(m - r);
        hi = hi.max(m + r);
    }
    (lo, hi)
}

/// i∂∂̄A / (ω̂²/2!) as a real field. Linear, annihilates constants, and
/// its grid mean vanishes identically because every spectral multiplier
/// vanishes at k = 0.
pub fn i_ddbar_form(a: &HermitianField) -> Result<RealField, GridError> {
    from_spectral_real(&i_ddbar_form_spec(a))
}

/// Spectral-side assembly of `i_ddbar_form`, exposed for operator splits
/// that combine it with other multipliers before inverting.
pub fn i_ddbar_form_spec(a: &HermitianField) -> SpectralField {
    let c11 = to_spectral(&a.h11);
    let c22 = to_spectral(&a.h22);
    let c12 = to_spectral_c(&a.h12);
    let c21 = conj_reflect(&c12);
    let g = a.grid();
    let mut out = SpectralField::zeros(g);
    for idx in 0..out.data.len() {
        let i = g.unindex(idx);
        let k = [
            g.freq_zeroed(i[0]),
            g.freq_zeroed(i[1]),
            g.freq_zeroed(i[2]),
            g.freq_zeroed(i[3]),
        ];
        let dz = [deriv_z_multiplier(1, k), deriv_z_multiplier(2, k)];
        let dzb = [deriv_zbar_multiplier(1, k), deriv_zbar_multiplier(2, k)];
        out.data[idx] = dz[0] * dzb[0] * c22.data[idx] + dz[1] * dzb[1] * c11.data[idx]
            - dz[0] * dzb[1] * c12.data[idx]
            - dz[1] * dzb[0] * c21.data[idx];
    }
    out
}

/// The structure data (ψ_ρ, b_ρ, ρ̃) extracted from a fixed source form ρ.
#[derive(Debug, Clone)]
pub struct RhoDecomposition {
    pub psi: RealField,
    pub b1: ComplexField,
    pub b2: ComplexField,
    /// Adjugate coefficient field adj(ρ_{k̄j}); contract against Hermitian
    /// data with [`trace_pairing`].
    pub rho_tilde: HermitianField,
}

/// Splits ρ into the pieces through which it enters the scalar flow.
pub fn decompose_rho(rho: &HermitianField) -> Result<RhoDecomposition, GridError> {
    let psi = i_ddbar_form(rho)?;
    let c11 = to_spectral(&rho.h11);
    let c22 = to_spectral(&rho.h22);
    let c12 = to_spectral_c(&rho.h12);
    let c21 = conj_reflect(&c12);
    let two = |f: &ComplexField| ComplexField {
        grid: f.grid,
        data: f.data.iter().map(|v| 2.0 * v).collect(),
    };
    let sub = |a: &ComplexField, b: &ComplexField| ComplexField {
        grid: a.grid,
        data: a
            .data
            .iter()
            .zip(b.data.iter())
            .map(|(x, y)| x - y)
            .collect(),
    };
    let b1 = two(&sub(
        &from_spectral(&deriv_zbar_spec(1, &c22)),
        &from_spectral(&deriv_zbar_spec(2, &c12)),
    ));
    let b2 = two(&sub(
        &from_spectral(&deriv_zbar_spec(2, &c11)),
        &from_spectral(&deriv_zbar_spec(1, &c21)),
    ));
    Ok(RhoDecomposition {
        psi,
        b1,
        b2,
        rho_tilde: rho.adjugate(),
    })
}

impl RhoDecomposition {
    /// ρ̃^{pq̄} w_p w̄_{q̄} for the gradient (w₁, w₂) of a real weight.
    pub fn pair_gradient(&self, w1: &ComplexField, w2: &ComplexField) -> RealField {
        let g = self.rho_tilde.grid();
        let rt = &self.rho_tilde;
        let data = (0..g.points())
            .map(|i| {
                rt.h11.data[i] * w1.data[i].norm_sqr()
                    + rt.h22.data[i] * w2.data[i].norm_sqr()
                    + 2.0 * (rt.h12.data[i] * (w2.data[i] * w1.data[i].conj()).conj()).re
            })
            .collect();
        RealField { grid: g, data }
    }

    /// Reassembles −i∂∂̄(e^{−w}ρ)/(ω̂²/2!) from the decomposition:
    ///
    ///   e^{−w} ( −ψ_ρ + Re{b^i_ρ w_i} + ρ̃^{jk̄} w_{k̄j} − ρ̃^{pq̄} w_p w̄_{q̄} ).
    pub fn reassemble(&self, w: &RealField) -> Result<RealField, GridError> {
        let g = w.grid;
        let cw = to_spectral(w);
        let w1 = from_spectral(&crate::torus_grid::deriv_z_spec(1, &cw));
        let w2 = from_spectral(&crate::torus_grid::deriv_z_spec(2, &cw));
        let hess: HermitianField = complex_hessian(w, false)?.into();
        let hess_pair = trace_pairing(&self.rho_tilde, &hess);
        let grad_pair = self.pair_gradient(&w1, &w2);
        let data = (0..g.points())
            .map(|i| {
                let lin = (self.b1.data[i] * w1.data[i] + self.b2.data[i] * w2.data[i]).re;
                (-w.data[i]).exp()
                    * (-self.psi.data[i] + lin + hess_pair.data[i] - grad_pair.data[i])
            })
            .collect();
        Ok(RealField { grid: g, data })
    }
}

/// Sup-norm mismatch between the direct evaluation of
/// −i∂∂̄(e^{−w}ρ)/(ω̂²/2!) and its reassembly from (ψ_ρ, b_ρ, ρ̃). This is
/// the runtime oracle that pins every sign in the decomposition.
pub fn reconstruction_residual(
    rho: &HermitianField,
    decomp: &RhoDecomposition,
    w: &RealField,
) -> Result<f64, GridError> {
    let g = w.grid;
    let ew: Vec<f64> = w.data.iter().map(|v| (-v).exp()).collect();
    let scaled = HermitianField {
        h11: RealField {
            grid: g,
            data: (0..g.points()).map(|i| ew[i] * rho.h11.data[i]).collect(),
        },
        h22: RealField {
            grid: g,
            data: (0..g.points()).map(|i| ew[i] * rho.h22.data[i]).collect(),
        },
        h12: ComplexField {
            grid: g,
            data: (0..g.points()).map(|i| ew[i] * rho.h12.data[i]).collect(),
        },
    };
    let direct = i_ddbar_form(&scaled)?;
    let rebuilt = decomp.reassemble(w)?;
    let err = (0..g.points()).fold(0.0f64, |a, i| {
        a.max((-direct.data[i] - rebuilt.data[i]).abs())
    });
    Ok(err)
}

/// Source (2,2)-form data μ = μ̃ ω̂²/2!, carried by the scalar μ̃ with grid
/// mean removed exactly; a nonzero mean would violate the Stokes constraint
/// ∫ μ = 0 and silently break volume conservation.
#[derive(Debug, Clone)]
pub struct MuData {
    pub field: RealField,
}

/// Projects out the grid mean in two compensated passes; the survivor is
/// below one ulp of the field scale.
pub fn normalize_mu(f: &RealField) -> (MuData, f64) {
    let mut data = f.data.clone();
    let original_mean = mean(f);
    for _ in 0..2 {
        let m = kahan_sum(data.iter().copied()) / data.len() as f64;
        for v in data.iter_mut() {
            *v -= m;
        }
    }
    (
        MuData {
            field: RealField { grid: f.grid, data },
        },
        original_mean,
    )
}
