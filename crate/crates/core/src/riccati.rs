//! Closed-form solution of the Riccati system for the value-function
//! coefficients `A(τ)`, `B(τ)`, `C(τ)` and the terminal-variance components
//! `L`, `M`, `N`.
//!
//! With `D² = (λ/2) Γ^{-1/2} Σ Σ' Γ^{-1/2}` and `E = Γ^{-1/2} (Λ/2) Γ^{-1/2}`
//! the fundamental solutions are
//!
//! ```text
//! U(τ) = cosh(Dτ) − D⁻¹ sinh(Dτ) E
//! V(τ) = −sinh(Dτ) D + cosh(Dτ) E
//! ```
//!
//! and `A = Γ^{1/2}(V U⁻¹ − E)Γ^{1/2}`. Internally `U` and `V` are carried
//! as `e^{-ρτ}U`, `e^{-ρτ}V` with `ρ` the largest eigenvalue of `D`, so
//! that ratios such as `U(τ₁)U(τ₂)⁻¹` stay finite when `Dτ` is large.

use nalgebra::{DMatrix, DVector, LU, Dyn};

use crate::error::{Error, Result};
use crate::matfun::{self, SpdFactorization, SymMatrix, SINGULAR_TOL};
use crate::model::{MarketParams, Preferences};
use crate::quadrature::{self, Panels, Quantity, DEFAULT_RTOL};

/// Asymmetry of `A(τ)` tolerated before symmetrizing.
pub const A_SYMMETRY_TOL: f64 = 1e-9;
/// Relative distance below `T*` at which evaluation is refused.
pub const TSTAR_GUARD: f64 = 1e-8;
const SCAN_POINTS: usize = 256;
const BISECTION_RTOL: f64 = 1e-10;

/// Reduced matrices driving every closed form.
#[derive(Debug, Clone)]
pub struct ReducedPair {
    /// `D`, 1/years.
    pub dmat: SymMatrix,
    /// `E`, 1/years.
    pub emat: SymMatrix,
    pub gamma_half: SymMatrix,
    pub gamma_half_inv: SymMatrix,
    /// `μ̄ = D⁻² Γ^{-1/2} μ`.
    pub mu_bar: DVector<f64>,
    pub risk_aversion: f64,
    d_eig: SpdFactorization,
    rate: f64,
    mu: DVector<f64>,
    gamma_inv: DMatrix<f64>,
    lambda_half: DMatrix<f64>,
    covariance: DMatrix<f64>,
    /// `Γ^{-1/2} Σ Σ' Γ^{-1/2}`
    cov_reduced: DMatrix<f64>,
}

pub fn reduce(market: &MarketParams, prefs: &Preferences) -> Result<ReducedPair> {
    let lam = prefs.risk_aversion;
    if !(lam > 0.0 && lam.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "the matrix closed form needs risk aversion > 0, got {lam}"
        )));
    }
    let gamma = SpdFactorization::new(&market.gamma)?;
    let gamma_half = gamma.sqrt();
    let gamma_half_inv = gamma.inv_sqrt();
    let gh = gamma_half_inv.as_matrix();

    let lambda_half = market.lambda_perm.as_matrix() * 0.5;
    let emat = SymMatrix::with_tolerance(gh * &lambda_half * gh, 1e-10)?;
    let covariance = market.covariance();
    let cov_reduced = gh * &covariance * gh;
    let d_squared = SymMatrix::with_tolerance(&cov_reduced * (0.5 * lam), 1e-10)?;
    let dmat = matfun::sqrtm_spd(&d_squared)?;
    let d_eig = SpdFactorization::new(&dmat)?;
    let rate = d_eig.eigenvalues().max();
    let mu_bar = d_eig.map(|x| 1.0 / (x * x)) * (gh * &market.mu);

    Ok(ReducedPair {
        dmat,
        emat,
        gamma_half,
        gamma_half_inv,
        mu_bar,
        risk_aversion: lam,
        d_eig,
        rate,
        mu: market.mu.clone(),
        gamma_inv: gamma.inverse().into_inner(),
        lambda_half,
        covariance,
        cov_reduced,
    })
}

/// `U`, `V` and `E − V'` scaled by `e^{-shift}`.
#[derive(Debug, Clone)]
pub(crate) struct ScaledUv {
    pub shift: f64,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// `e^{-shift}(E − V')`, formed without cancellation at small `τ`.
    pub e_minus_vt: DMatrix<f64>,
}

/// Everything the closed forms need at one time-to-go `σ`.
#[derive(Debug, Clone)]
pub(crate) struct Pointwise {
    pub uv: ScaledUv,
    pub u_lu: LU<f64, Dyn, Dyn>,
    /// `Ã = V U⁻¹ = Γ^{-1/2}(A + Λ/2)Γ^{-1/2}`
    pub a_tilde: DMatrix<f64>,
    /// `Γ^{-1/2} B(σ)'`
    pub w: DVector<f64>,
    /// `(e^{-ρσ}U)⁻¹ w`
    pub h_bar: DVector<f64>,
}

fn scaled_cosh(x: f64, shift: f64) -> f64 {
    if x < 1.0 {
        x.cosh() * (-shift).exp()
    } else {
        0.5 * ((x - shift).exp() + (-x - shift).exp())
    }
}

fn scaled_sinh(x: f64, shift: f64) -> f64 {
    if x < 1.0 {
        x.sinh() * (-shift).exp()
    } else {
        0.5 * ((x - shift).exp() - (-x - shift).exp())
    }
}

impl ReducedPair {
    pub fn dim(&self) -> usize {
        self.dmat.dim()
    }

    /// Largest eigenvalue of `D`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub(crate) fn scaled_uv(&self, sigma: f64) -> ScaledUv {
        let shift = self.rate * sigma;
        let c = self.d_eig.map(|x| scaled_cosh(x * sigma, shift));
        let s_over_d = self.d_eig.map(|x| {
            if x * sigma < 1.0 {
                (x * sigma).sinh() / x * (-shift).exp()
            } else {
                scaled_sinh(x * sigma, shift) / x
            }
        });
        let s_times_d = self.d_eig.map(|x| scaled_sinh(x * sigma, shift) * x);
        // cosh x − 1 = 2 sinh²(x/2)
        let cosh_m1 = self.d_eig.map(|x| {
            let y = x * sigma;
            if y < 1.0 {
                2.0 * (0.5 * y).sinh().powi(2) * (-shift).exp()
            } else {
                scaled_cosh(y, shift) - (-shift).exp()
            }
        });
        let e = self.emat.as_matrix();
        let u = &c - s_over_d * e;
        let v = -&s_times_d + c * e;
        let e_minus_vt = s_times_d - e * cosh_m1;
        ScaledUv { shift, u, v, e_minus_vt }
    }

    pub(crate) fn pointwise(&self, sigma: f64) -> Result<Pointwise> {
        let uv = self.scaled_uv(sigma);
        let singular = || Error::NearSingular {
            condition: f64::INFINITY,
        };
        let u_lu = uv.u.clone().lu();
        let ut_lu = uv.u.transpose().lu();
        // Ã' = U⁻ᵀ V'
        let a_tilde_t = ut_lu.solve(&uv.v.transpose()).ok_or_else(singular)?;
        let rhs = &uv.e_minus_vt * &self.mu_bar;
        let w = ut_lu.solve(&rhs).ok_or_else(singular)?;
        let h_bar = u_lu.solve(&w).ok_or_else(singular)?;
        if !(Quantity::is_finite(&a_tilde_t) && Quantity::is_finite(&h_bar)) {
            return Err(singular());
        }
        Ok(Pointwise {
            a_tilde: symmetrize(a_tilde_t.transpose())?,
            uv,
            u_lu,
            w,
            h_bar,
        })
    }

    pub(crate) fn a_from(&self, p: &Pointwise) -> DMatrix<f64> {
        let gh = self.gamma_half.as_matrix();
        let a = gh * (&p.a_tilde - self.emat.as_matrix()) * gh;
        (&a + a.transpose()) * 0.5
    }

    pub(crate) fn b_from(&self, p: &Pointwise) -> DVector<f64> {
        self.gamma_half.as_matrix() * &p.w
    }

    /// Optimal velocity `Γ⁻¹(A + Λ/2)q + ½Γ⁻¹B'` at time-to-go of `p`.
    pub(crate) fn velocity(&self, p: &Pointwise, q: &DVector<f64>) -> DVector<f64> {
        let gh = self.gamma_half.as_matrix();
        let ghi = self.gamma_half_inv.as_matrix();
        ghi * (&p.a_tilde * (gh * q)) + ghi * &p.w * 0.5
    }

    /// `C(τ) = ¼ ∫₀^τ B Γ⁻¹ B' dσ`.
    pub(crate) fn c_value(&self, tau: f64) -> Result<f64> {
        if tau == 0.0 || self.mu_bar.iter().all(|&x| x == 0.0) {
            return Ok(0.0);
        }
        let integral = quadrature::integrate_graded(
            |s| self.pointwise(s).map(|p| p.w.norm_squared()),
            0.0,
            tau,
            self.rate,
            DEFAULT_RTOL,
        )?;
        Ok(0.25 * integral)
    }
}

fn symmetrize(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.amax();
    if scale > 0.0 {
        let asym = (&m - m.transpose()).amax() / scale;
        if asym > A_SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// `(U(τ), V(τ))` unscaled. Entries overflow to infinity once `Dτ` exceeds
/// roughly 709.
pub fn fundamental_uv(red: &ReducedPair, tau: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_tau(tau)?;
    let uv = red.scaled_uv(tau);
    let k = uv.shift.exp();
    Ok((uv.u * k, uv.v * k))
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be finite and >= 0, got {tau}")));
    }
    Ok(())
}

/// First time-to-go at which `U` becomes singular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaximalHorizon {
    Finite(f64),
    /// `D − E` positive definite: `U` is never singular.
    Infinite,
    /// Nothing found up to the scanned bound, and finiteness is undecided.
    BeyondScan(f64),
}

impl MaximalHorizon {
    pub fn value(self) -> Option<f64> {
        match self {
            MaximalHorizon::Finite(t) => Some(t),
            _ => None,
        }
    }

    /// Whether a period of length `tau` is admissible.
    pub fn admits(self, tau: f64) -> bool {
        match self {
            MaximalHorizon::Finite(t) => tau <= t * (1.0 - TSTAR_GUARD),
            _ => true,
        }
    }
}

fn u_is_singular(red: &ReducedPair, sigma: f64, tol: f64) -> bool {
    let u = red.scaled_uv(sigma).u;
    if u.iter().any(|x| !x.is_finite()) {
        return true;
    }
    let det = u.determinant();
    if det <= 0.0 {
        return true;
    }
    let sv = u.singular_values();
    sv.min() < tol * sv.max()
}

/// Locates `T*` on `(0, tau_max]` by a 256-point scan followed by bisection.
pub fn maximal_horizon(red: &ReducedPair, tau_max: f64, tol: f64) -> MaximalHorizon {
    let step = tau_max / SCAN_POINTS as f64;
    let mut lo = 0.0;
    for i in 1..=SCAN_POINTS {
        let hi = step * i as f64;
        if u_is_singular(red, hi, tol) {
            let mut hi = hi;
            while hi - lo > BISECTION_RTOL * hi {
                let mid = 0.5 * (lo + hi);
                if u_is_singular(red, mid, tol) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return MaximalHorizon::Finite(0.5 * (lo + hi));
        }
        lo = hi;
    }
    let diff = SymMatrix::with_tolerance(red.dmat.as_matrix() - red.emat.as_matrix(), 1e-9)
        .map(|m| m.min_eigenvalue())
        .unwrap_or(f64::NEG_INFINITY);
    if diff > 0.0 {
        MaximalHorizon::Infinite
    } else {
        MaximalHorizon::BeyondScan(tau_max)
    }
}

/// Errors with [`Error::HorizonBeyondTstar`] when a period of length `tau`
/// reaches `T*`.
pub fn ensure_admissible(red: &ReducedPair, tau: f64) -> Result<MaximalHorizon> {
    let t_star = maximal_horizon(red, tau, SINGULAR_TOL);
    if !t_star.admits(tau) {
        return Err(Error::HorizonBeyondTstar {
            tau,
            t_star: t_star.value().unwrap_or(tau),
        });
    }
    Ok(t_star)
}

/// `A`, `B`, `C` and the fundamental solutions at one time-to-go.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiCoefficients {
    pub tau: f64,
    /// dollars / unit²
    pub a: SymMatrix,
    /// dollars / unit (row vector stored as a column)
    pub b: DVector<f64>,
    /// dollars
    pub c: f64,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl RiccatiCoefficients {
    /// `q'Aq + Bq + C`.
    pub fn quadratic_value(&self, q: &DVector<f64>) -> f64 {
        q.dot(&(self.a.as_matrix() * q)) + self.b.dot(q) + self.c
    }
}

pub fn coefficients(red: &ReducedPair, tau: f64) -> Result<RiccatiCoefficients> {
    check_tau(tau)?;
    let p = red.pointwise(tau)?;
    let a = SymMatrix::with_tolerance(red.a_from(&p), A_SYMMETRY_TOL)?;
    let b = red.b_from(&p);
    let c = red.c_value(tau)?;
    let k = p.uv.shift.exp();
    Ok(RiccatiCoefficients {
        tau,
        a,
        b,
        c,
        u: p.uv.u * k,
        v: p.uv.v * k,
    })
}

/// Maximum relative finite-difference residual of each Riccati equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.a.max(self.b).max(self.c)
    }
}

/// Default finite-difference step, years.
pub const FD_STEP: f64 = 1e-5;

/// Residuals of the closed-form coefficients on `tau_grid`.
pub fn riccati_residual(red: &ReducedPair, tau_grid: &[f64]) -> Result<ResidualReport> {
    riccati_residual_with(red, tau_grid, FD_STEP, |tau| {
        let c = coefficients(red, tau)?;
        Ok((c.a.into_inner(), c.b, c.c))
    })
}

/// Residuals of arbitrary candidate coefficient functions, measured against
/// the Riccati right-hand sides built from `red`.
///
/// Each residual is the largest finite-difference mismatch over the grid
/// divided by the largest magnitude of that equation's terms over the grid,
/// so equations whose sides both vanish at `τ = 0` stay well defined.
pub fn riccati_residual_with(
    red: &ReducedPair,
    tau_grid: &[f64],
    h: f64,
    eval: impl Fn(f64) -> Result<(DMatrix<f64>, DVector<f64>, f64)>,
) -> Result<ResidualReport> {
    let half_cov = &red.covariance * (0.5 * red.risk_aversion);
    let (mut diff, mut scale) = ([0.0f64; 3], [0.0f64; 3]);
    for &tau in tau_grid {
        let (a, b, c) = eval(tau)?;
        // fourth-order stencils: central where possible, one-sided at the origin
        let (offsets, weights): (&[f64], &[f64]) = if tau - 2.0 * h >= 0.0 {
            (&[-2.0, -1.0, 1.0, 2.0], &[1.0, -8.0, 8.0, -1.0])
        } else {
            (&[0.0, 1.0, 2.0, 3.0, 4.0], &[-25.0, 48.0, -36.0, 16.0, -3.0])
        };
        let mut da = DMatrix::zeros(a.nrows(), a.ncols());
        let mut db = DVector::zeros(b.len());
        let mut dc = 0.0;
        for (&o, &w) in offsets.iter().zip(weights) {
            let (ai, bi, ci) = if o == 0.0 { (a.clone(), b.clone(), c) } else { eval(tau + o * h)? };
            da += ai * (w / (12.0 * h));
            db += bi * (w / (12.0 * h));
            dc += ci * w / (12.0 * h);
        }
        let shifted = &a + &red.lambda_half;
        let quad = shifted.transpose() * &red.gamma_inv * &shifted;
        diff[0] = diff[0].max((&da - &quad + &half_cov).norm());
        scale[0] = scale[0].max(quad.norm() + half_cov.norm()).max(da.norm());

        // B is a row vector: ∂B = μ' + B Γ⁻¹ (A + Λ/2)
        let coupling = (&red.gamma_inv * &shifted).transpose() * &b;
        diff[1] = diff[1].max((&db - &red.mu - &coupling).norm());
        scale[1] = scale[1].max(red.mu.norm() + coupling.norm()).max(db.norm());

        let rhs_c = 0.25 * b.dot(&(&red.gamma_inv * &b));
        diff[2] = diff[2].max((dc - rhs_c).abs());
        scale[2] = scale[2].max(rhs_c.abs()).max(dc.abs());
    }
    let rel = |k: usize| if diff[k] == 0.0 { 0.0 } else { diff[k] / scale[k].max(f64::MIN_POSITIVE) };
    Ok(ResidualReport {
        a: rel(0),
        b: rel(1),
        c: rel(2),
    })
}

/// Terminal variance `q'Lq + Mq + N` of the optimal strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceComponents {
    /// dollars² / unit²
    pub l: SymMatrix,
    /// dollars² / unit
    pub m: DVector<f64>,
    /// dollars²
    pub n: f64,
}

impl VarianceComponents {
    pub fn variance(&self, q: &DVector<f64>) -> f64 {
        q.dot(&(self.l.as_matrix() * q)) + self.m.dot(q) + self.n
    }
}

/// `L`, `M`, `N` for a period of length `tau`.
///
/// With `K(σ) = U'(σ) Γ^{-1/2}ΣΣ'Γ^{-1/2} U(σ)`, `P(σ) = ∫₀^σ K` and
/// `h(σ) = U⁻¹(σ) Γ^{-1/2} B'(σ)`:
///
/// ```text
/// L  = Γ^{1/2} U⁻ᵀ(τ) P(τ) U⁻¹(τ) Γ^{1/2}
/// M' = Γ^{1/2} U⁻ᵀ(τ) ∫₀^τ P h dσ
/// N  = ½ ∫₀^τ M(σ) Γ⁻¹ B'(σ) dσ
/// ```
///
/// evaluated with spectral cumulative quadrature, doubling panels until
/// all three agree to `rtol`.
pub fn variance_components(red: &ReducedPair, tau: f64) -> Result<VarianceComponents> {
    variance_components_with(red, tau, DEFAULT_RTOL)
}

pub fn variance_components_with(red: &ReducedPair, tau: f64, rtol: f64) -> Result<VarianceComponents> {
    check_tau(tau)?;
    let d = red.dim();
    if tau == 0.0 {
        return Ok(VarianceComponents {
            l: SymMatrix::zeros(d),
            m: DVector::zeros(d),
            n: 0.0,
        });
    }
    let mut panels = quadrature::initial_panels(2.0 * red.rate, 0.0, tau);
    let mut prev = variance_on_panels(red, tau, panels)?;
    for _ in 0..16 {
        panels *= 2;
        let next = variance_on_panels(red, tau, panels)?;
        let done = close(prev.l.as_matrix(), next.l.as_matrix(), rtol)
            && close(&prev.m, &next.m, rtol)
            && close(&prev.n, &next.n, rtol);
        prev = next;
        if done {
            break;
        }
    }
    Ok(prev)
}

fn close<T: Quantity>(a: &T, b: &T, rtol: f64) -> bool {
    let mut diff = b.clone();
    diff.add_scaled(a, -1.0);
    b.is_finite() && diff.magnitude() <= rtol * b.magnitude().max(a.magnitude()) || diff.magnitude() == 0.0
}

fn variance_on_panels(red: &ReducedPair, tau: f64, count: usize) -> Result<VarianceComponents> {
    let grid = Panels::new(0.0, tau, count);
    let nodes = grid.nodes();
    let points = nodes.iter().map(|&s| red.pointwise(s)).collect::<Result<Vec<_>>>()?;
    let d = red.dim();

    let k_bar: Vec<DMatrix<f64>> = points
        .iter()
        .map(|p| p.uv.u.transpose() * &red.cov_reduced * &p.uv.u)
        .collect();
    let (p_bar, p_end) = grid.discounted_cumulative(2.0 * red.rate, &k_bar, DMatrix::zeros(d, d));

    let ph: Vec<DVector<f64>> = p_bar.iter().zip(&points).map(|(p, pt)| p * &pt.h_bar).collect();
    let (r_bar, r_end) = grid.discounted_cumulative(red.rate, &ph, DVector::zeros(d));

    let n_integrand: Vec<f64> = r_bar.iter().zip(&points).map(|(r, pt)| 0.5 * r.dot(&pt.h_bar)).collect();
    let n = grid.integrate_values(&n_integrand);

    let end = red.pointwise(tau)?;
    let gh = red.gamma_half.as_matrix();
    let ut = end.uv.u.transpose();
    // U⁻ᵀ P U⁻¹ = (U⁻ᵀ (U⁻ᵀ P)ᵀ)ᵀ
    let left = ut.clone().lu().solve(&p_end).ok_or(Error::NearSingular {
        condition: f64::INFINITY,
    })?;
    let core = ut.clone().lu().solve(&left.transpose()).ok_or(Error::NearSingular {
        condition: f64::INFINITY,
    })?;
    let l = gh * core.transpose() * gh;
    let m = gh * ut.lu().solve(&r_end).ok_or(Error::NearSingular {
        condition: f64::INFINITY,
    })?;
    Ok(VarianceComponents {
        l: SymMatrix::with_tolerance(l, A_SYMMETRY_TOL)?,
        m,
        n,
    })
}
