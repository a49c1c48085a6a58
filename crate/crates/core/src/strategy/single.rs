//! Scalar closed forms for one risky asset.
//!
//! With `D = Σ√(λ/2Γ)`, `E = Λ/2Γ`, `x(σ) = Dσ − K` and
//! `q^M = μ/(λΣ²)` the four regimes are
//!
//! | case        | condition | `U(σ)`              |
//! |-------------|-----------|---------------------|
//! | tanh        | `D > E`   | `cosh x / cosh K`   |
//! | exponential | `D = E`   | `e^{−Dσ}`           |
//! | coth        | `D < E`   | `−sinh x / sinh K`  |
//! | lambda-zero | `λ = 0`   | `1 − Eσ`            |

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matfun::SymMatrix;
use crate::model::{validate, Horizon, MarketParams, Preferences, StrategyProcess};
use crate::quadrature::{self, DEFAULT_RTOL};
use crate::riccati::{RiccatiCoefficients, TSTAR_GUARD};

/// `|D − E| ≤ tol·D` selects the exponential forms.
pub const EXPONENTIAL_CASE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseId {
    Tanh,
    Exponential,
    Coth,
    LambdaZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleAssetCase {
    pub case_id: CaseId,
    /// `atanh(E/D)` for tanh, `acoth(E/D)` for coth.
    pub k: Option<f64>,
    /// 1/years
    pub d: f64,
    /// 1/years
    pub e: f64,
    /// Maximal horizon, years; infinite when `U` never vanishes.
    pub t_star: f64,
}

#[derive(Debug, Clone, Copy)]
struct Scalar {
    mu: f64,
    gamma: f64,
    lambda_perm: f64,
    case: SingleAssetCase,
    /// `μ/(2ΓD²)`, units.
    q_merton: f64,
}

fn scalars(market: &MarketParams, prefs: &Preferences) -> Result<Scalar> {
    if market.dim() != 1 {
        return Err(Error::DimensionMismatch {
            what: "single-asset market",
            expected: 1,
            got: market.dim(),
        });
    }
    let case = single_asset_case(market, prefs)?;
    let mu = market.mu[0];
    let gamma = market.gamma.as_matrix()[(0, 0)];
    Ok(Scalar {
        mu,
        gamma,
        lambda_perm: market.lambda_perm.as_matrix()[(0, 0)],
        case,
        q_merton: if case.d > 0.0 { mu / (2.0 * gamma * case.d * case.d) } else { f64::NAN },
    })
}

pub fn single_asset_case(market: &MarketParams, prefs: &Preferences) -> Result<SingleAssetCase> {
    let gamma = market.gamma.as_matrix()[(0, 0)];
    let sig2 = market.covariance()[(0, 0)];
    let lam = prefs.risk_aversion;
    let e = market.lambda_perm.as_matrix()[(0, 0)] / (2.0 * gamma);
    let d = (0.5 * lam * sig2 / gamma).sqrt();
    if !(gamma > 0.0 && e >= 0.0 && lam >= 0.0 && d.is_finite()) {
        return Err(Error::InvalidArgument("single-asset closed form needs Γ > 0, Λ ≥ 0, λ ≥ 0".into()));
    }
    let case = if lam == 0.0 {
        SingleAssetCase {
            case_id: CaseId::LambdaZero,
            k: None,
            d: 0.0,
            e,
            t_star: if e > 0.0 { 1.0 / e } else { f64::INFINITY },
        }
    } else if (d - e).abs() <= EXPONENTIAL_CASE_TOL * d {
        SingleAssetCase {
            case_id: CaseId::Exponential,
            k: None,
            d,
            e,
            t_star: f64::INFINITY,
        }
    } else if d > e {
        SingleAssetCase {
            case_id: CaseId::Tanh,
            k: Some((e / d).atanh()),
            d,
            e,
            t_star: f64::INFINITY,
        }
    } else {
        let k = (d / e).atanh();
        SingleAssetCase {
            case_id: CaseId::Coth,
            k: Some(k),
            d,
            e,
            t_star: k / d,
        }
    };
    Ok(case)
}

/// `cosh a / cosh b` without overflow.
fn cosh_ratio(a: f64, b: f64) -> f64 {
    let (a, b) = (a.abs(), b.abs());
    (a - b).exp() * (1.0 + (-2.0 * a).exp()) / (1.0 + (-2.0 * b).exp())
}

/// `sinh a / cosh b` for `a ≥ 0` without overflow.
fn sinh_over_cosh(a: f64, b: f64) -> f64 {
    let b = b.abs();
    (a - b).exp() * -(-2.0 * a).exp_m1() / (1.0 + (-2.0 * b).exp())
}

impl Scalar {
    fn check_horizon(&self, tau: f64) -> Result<()> {
        let t_star = self.case.t_star;
        if t_star.is_finite() && tau > t_star * (1.0 - TSTAR_GUARD) {
            return Err(Error::HorizonBeyondTstar { tau, t_star });
        }
        Ok(())
    }

    /// `(U, V, A, B, C)` at time-to-go `s`.
    fn coefficients(&self, s: f64) -> (f64, f64, f64, f64, f64) {
        let SingleAssetCase { d, e, .. } = self.case;
        let (g, mu) = (self.gamma, self.mu);
        let c_scale = mu * mu / (4.0 * g * d * d * d);
        match self.case.case_id {
            CaseId::Tanh => {
                let k = self.case.k.unwrap_or(0.0);
                let x = d * s - k;
                let (th, thk, sech) = (x.tanh(), k.tanh(), 1.0 / x.cosh());
                let u = x.cosh() / k.cosh();
                let v = -d * x.sinh() / k.cosh();
                let a = -g * d * (th + thk);
                let b = mu / d * (k.sinh() * sech + th);
                let c = c_scale
                    * ((k.sinh().powi(2) - 1.0) * (th + thk) - 2.0 * k.sinh() * (sech - 1.0 / k.cosh()) + d * s);
                (u, v, a, b, c)
            }
            CaseId::Exponential => {
                let grow = (d * s).exp();
                let b = mu / d * (d * s).exp_m1();
                let c = c_scale * (0.5 * grow * grow - 2.0 * grow + d * s + 1.5);
                (1.0 / grow, d / grow, 0.0, b, c)
            }
            CaseId::Coth => {
                let k = self.case.k.unwrap_or(0.0);
                let x = d * s - k;
                let (cth, cthk) = (1.0 / x.tanh(), 1.0 / k.tanh());
                let u = -x.sinh() / k.sinh();
                let v = d * x.cosh() / k.sinh();
                let a = -g * d * (cth + cthk);
                let b = mu / d * (cth - k.cosh() / x.sinh());
                let c = c_scale
                    * (d * s - (1.0 + k.cosh().powi(2)) * (cth + cthk)
                        + 2.0 * k.cosh() * (1.0 / x.sinh() + 1.0 / k.sinh()));
                (u, v, a, b, c)
            }
            CaseId::LambdaZero => {
                let r = e * s;
                let u = 1.0 - r;
                let a = 0.5 * self.lambda_perm * r / u;
                let b = mu * s * (1.0 - 0.5 * r) / u;
                let c = mu * mu * s.powi(3) * (4.0 - r) / (48.0 * g * u);
                (u, e, a, b, c)
            }
        }
    }

    /// Holdings at time-to-go `s` starting from `q0` with `tau` to go.
    fn holding(&self, tau: f64, s: f64, q0: f64) -> f64 {
        let SingleAssetCase { d, e, .. } = self.case;
        let qm = self.q_merton;
        match self.case.case_id {
            CaseId::Tanh => {
                let k = self.case.k.unwrap_or(0.0);
                let (xt, xu) = (d * tau - k, d * s - k);
                let r = cosh_ratio(xu, xt);
                r * q0 + qm * (1.0 - r) + qm * k.sinh() * sinh_over_cosh(xt - xu, xt)
            }
            CaseId::Exponential => {
                let lag = (d * (tau - s)).exp();
                lag * q0 + qm * (0.5 * ((d * (2.0 * tau - s)).exp() - (d * s).exp()) - lag + 1.0)
            }
            CaseId::Coth => {
                let k = self.case.k.unwrap_or(0.0);
                let (xt, xu) = (d * tau - k, d * s - k);
                let r = xu.sinh() / xt.sinh();
                r * q0 + qm * (1.0 - r) + qm * k.cosh() * (xu - xt).sinh() / xt.sinh()
            }
            CaseId::LambdaZero => {
                let (ut, uu) = (1.0 - e * tau, 1.0 - e * s);
                uu * (q0 / ut + self.mu / (4.0 * self.gamma) * (tau * tau / ut - s * s / uu))
            }
        }
    }

    fn velocity(&self, s: f64, q: f64) -> f64 {
        let (_, _, a, b, _) = self.coefficients(s);
        ((a + 0.5 * self.lambda_perm) * q + 0.5 * b) / self.gamma
    }
}

/// Scalar `A`, `B`, `C`, `U`, `V` at time-to-go `tau`.
pub fn single_asset_coefficients(market: &MarketParams, prefs: &Preferences, tau: f64) -> Result<RiccatiCoefficients> {
    let sc = scalars(market, prefs)?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be finite and >= 0, got {tau}")));
    }
    sc.check_horizon(tau)?;
    let (u, v, a, b, c) = sc.coefficients(tau);
    Ok(RiccatiCoefficients {
        tau,
        a: SymMatrix::scalar(a),
        b: DVector::from_element(1, b),
        c,
        u: DMatrix::from_element(1, 1, u),
        v: DMatrix::from_element(1, 1, v),
    })
}

pub fn single_asset_curve(
    market: &MarketParams,
    prefs: &Preferences,
    horizon: &Horizon,
    q0: f64,
    grid_size: usize,
) -> Result<StrategyProcess> {
    single_asset_curve_on(market, prefs, horizon, q0, &horizon.uniform_grid(grid_size))
}

pub fn single_asset_curve_on(
    market: &MarketParams,
    prefs: &Preferences,
    horizon: &Horizon,
    q0: f64,
    times: &[f64],
) -> Result<StrategyProcess> {
    validate(market, prefs, horizon).into_result()?;
    let sc = scalars(market, prefs)?;
    let tau = horizon.tau();
    sc.check_horizon(tau)?;
    let mut holdings = Vec::with_capacity(times.len());
    let mut velocities = Vec::with_capacity(times.len());
    for &u in times {
        let s = (horizon.end - u).clamp(0.0, tau);
        let q = if u <= horizon.start { q0 } else { sc.holding(tau, s, q0) };
        holdings.push(DVector::from_element(1, q));
        velocities.push(DVector::from_element(1, sc.velocity(s, q)));
    }
    Ok(StrategyProcess {
        grid: times.to_vec(),
        holdings,
        velocities,
    })
}

/// `∫ Σ² q(u)² du` along the `λ = 0` curve.
pub(crate) fn lambda_zero_variance(market: &MarketParams, horizon: &Horizon, q0: f64) -> Result<f64> {
    let sc = scalars(market, &Preferences::new(0.0))?;
    let tau = horizon.tau();
    sc.check_horizon(tau)?;
    let sig2 = market.covariance()[(0, 0)];
    quadrature::integrate(
        |s| Ok(sig2 * sc.holding(tau, s, q0).powi(2)),
        0.0,
        tau,
        1,
        DEFAULT_RTOL,
    )
}
