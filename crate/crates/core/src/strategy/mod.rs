//! Optimal trading curve, value function and terminal equity statistics.

mod single;

pub use single::{
    single_asset_case, single_asset_coefficients, single_asset_curve, single_asset_curve_on, CaseId,
    SingleAssetCase, EXPONENTIAL_CASE_TOL,
};

use nalgebra::DVector;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::matfun;
use crate::model::{validate, Horizon, MarketParams, Preferences, StrategyProcess};
use crate::quadrature::{self, DEFAULT_RTOL};
use crate::riccati::{self, ReducedPair, RiccatiCoefficients};

/// Uniform grid size used when none is given.
pub const DEFAULT_GRID: usize = 501;
/// Variance below which default probability is undefined, dollars².
pub const DEGENERATE_VARIANCE: f64 = 1e-18;

fn check_inputs(market: &MarketParams, prefs: &Preferences, horizon: &Horizon, q0: &DVector<f64>) -> Result<()> {
    validate(market, prefs, horizon).into_result()?;
    if q0.len() != market.dim() {
        return Err(Error::DimensionMismatch {
            what: "initial holdings",
            expected: market.dim(),
            got: q0.len(),
        });
    }
    Ok(())
}

/// Reduced pair for a validated `λ > 0` problem whose horizon is below `T*`.
pub fn admissible_pair(market: &MarketParams, prefs: &Preferences, horizon: &Horizon) -> Result<ReducedPair> {
    let red = riccati::reduce(market, prefs)?;
    riccati::ensure_admissible(&red, horizon.tau())?;
    Ok(red)
}

/// Optimal holdings and velocities on `grid_size` uniform times in `[t, T]`.
pub fn trading_curve(
    market: &MarketParams,
    prefs: &Preferences,
    horizon: &Horizon,
    q0: &DVector<f64>,
    grid_size: usize,
) -> Result<StrategyProcess> {
    trading_curve_on(market, prefs, horizon, q0, &horizon.uniform_grid(grid_size))
}

/// Optimal holdings and velocities at ascending `times` within `[t, T]`.
pub fn trading_curve_on(
    market: &MarketParams,
    prefs: &Preferences,
    horizon: &Horizon,
    q0: &DVector<f64>,
    times: &[f64],
) -> Result<StrategyProcess> {
    check_inputs(market, prefs, horizon, q0)?;
    if prefs.risk_aversion == 0.0 {
        return single_asset_curve_on(market, prefs, horizon, q0[0], times);
    }
    let red = admissible_pair(market, prefs, horizon)?;
    curve_with_pair(&red, horizon, q0, times)
}

fn check_times(horizon: &Horizon, times: &[f64]) -> Result<()> {
    let slack = 1e-12 * horizon.end.abs().max(1.0);
    let inside = times
        .iter()
        .all(|&u| u.is_finite() && u >= horizon.start - slack && u <= horizon.end + slack);
    let ascending = times.windows(2).all(|w| w[0] <= w[1]);
    if times.is_empty() || !inside || !ascending {
        return Err(Error::InvalidArgument(
            "curve times must be ascending and inside the horizon".into(),
        ));
    }
    Ok(())
}

/// Curve from the closed form
/// `q(u) = Γ^{-1/2}[U(σ)U⁻¹(τ)Γ^{1/2}q0 + ½ U(σ)∫_σ^τ U⁻¹(s)Γ^{-1/2}B'(s) ds]`
/// with `σ = T − u`.
pub(crate) fn curve_with_pair(
    red: &ReducedPair,
    horizon: &Horizon,
    q0: &DVector<f64>,
    times: &[f64],
) -> Result<StrategyProcess> {
    check_times(horizon, times)?;
    let tau = horizon.tau();
    let rho = red.rate();
    let sigmas: Vec<f64> = times.iter().map(|&u| (horizon.end - u).clamp(0.0, tau)).collect();

    let start = red.pointwise(tau)?;
    let p0 = red.gamma_half.as_matrix() * q0;
    let base = start.u_lu.solve(&p0).ok_or(Error::NearSingular {
        condition: f64::INFINITY,
    })?;

    // ∫_{σ_k}^{σ_{k-1}} e^{-ρ(s − σ_k)} h(s) ds, with σ_{-1} = τ
    let pieces = sigmas
        .par_iter()
        .enumerate()
        .map(|(k, &lo)| {
            let hi = if k == 0 { tau } else { sigmas[k - 1] };
            if hi <= lo {
                return Ok(DVector::zeros(red.dim()));
            }
            quadrature::integrate(
                |s| red.pointwise(s).map(|p| p.h_bar * (-rho * (s - lo)).exp()),
                lo,
                hi,
                quadrature::initial_panels(rho, lo, hi),
                DEFAULT_RTOL,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let points = sigmas.par_iter().map(|&s| red.pointwise(s)).collect::<Result<Vec<_>>>()?;

    let ghi = red.gamma_half_inv.as_matrix();
    let mut z = DVector::zeros(red.dim());
    let mut prev = tau;
    let mut holdings = Vec::with_capacity(times.len());
    let mut velocities = Vec::with_capacity(times.len());
    for (k, (&s, pt)) in sigmas.iter().zip(&points).enumerate() {
        z = z * (-rho * (prev - s)).exp() + &pieces[k];
        prev = s;
        let p = &pt.uv.u * (&base * (rho * (s - tau)).exp() + &z * 0.5);
        let q = if times[k] <= horizon.start { q0.clone() } else { ghi * p };
        velocities.push(red.velocity(pt, &q));
        holdings.push(q);
    }
    Ok(StrategyProcess {
        grid: times.to_vec(),
        holdings,
        velocities,
    })
}

/// Certainty equivalent `W = x + q'A(τ)q + B(τ)q + C(τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    /// dollars
    pub x: f64,
    pub coeffs: RiccatiCoefficients,
    /// dollars
    pub value: f64,
}

pub fn value(
    market: &MarketParams,
    prefs: &Preferences,
    horizon: &Horizon,
    q0: &DVector<f64>,
    x0: f64,
) -> Result<ValueFunction> {
    check_inputs(market, prefs, horizon, q0)?;
    let coeffs = if prefs.risk_aversion == 0.0 {
        single_asset_coefficients(market, prefs, horizon.tau())?
    } else {
        let red = admissible_pair(market, prefs, horizon)?;
        riccati::coefficients(&red, horizon.tau())?
    };
    Ok(ValueFunction {
        x: x0,
        value: x0 + coeffs.quadratic_value(q0),
        coeffs,
    })
}

/// Mean, variance, return rate and default probability of terminal equity
/// under the optimal strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalStats {
    /// dollars
    pub mean: f64,
    /// dollars²
    pub variance: f64,
    /// Expected rate of return on equity, 1/year.
    pub err: f64,
    /// Probability that terminal equity is negative.
    pub dp: f64,
}

impl TerminalStats {
    pub fn from_moments(mean: f64, variance: f64, x0: f64, tau: f64) -> Result<Self> {
        if !(variance >= DEGENERATE_VARIANCE) {
            return Err(Error::DegenerateVariance { mean, variance });
        }
        Ok(Self {
            mean,
            variance,
            err: (mean / x0 - 1.0) / tau,
            dp: default_probability(mean, variance),
        })
    }

    /// Whether the mean/default-probability reading applies (`mean > 0`).
    pub fn mean_positive(&self) -> bool {
        self.mean > 0.0
    }
}

/// `Φ(−mean/√variance)`.
pub fn default_probability(mean: f64, variance: f64) -> f64 {
    normal_cdf(-mean / variance.sqrt())
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn terminal_stats(
    market: &MarketParams,
    prefs: &Preferences,
    horizon: &Horizon,
    q0: &DVector<f64>,
    x0: f64,
) -> Result<TerminalStats> {
    check_inputs(market, prefs, horizon, q0)?;
    if prefs.risk_aversion == 0.0 {
        let w = value(market, prefs, horizon, q0, x0)?.value;
        let var = single::lambda_zero_variance(market, horizon, q0[0])?;
        return TerminalStats::from_moments(w, var, x0, horizon.tau());
    }
    let red = admissible_pair(market, prefs, horizon)?;
    stats_with_pair(&red, horizon.tau(), q0, x0)
}

/// Terminal statistics from `mean = W + (λ/2)·Var`, the certainty
/// equivalent of a normal terminal equity.
pub(crate) fn stats_with_pair(red: &ReducedPair, tau: f64, q0: &DVector<f64>, x0: f64) -> Result<TerminalStats> {
    let coeffs = riccati::coefficients(red, tau)?;
    let var = riccati::variance_components(red, tau)?.variance(q0);
    let w = x0 + coeffs.quadratic_value(q0);
    TerminalStats::from_moments(w + 0.5 * red.risk_aversion * var, var, x0, tau)
}

/// Frictionless optimum `(1/λ)(ΣΣ')⁻¹μ`, units.
pub fn merton_portfolio(market: &MarketParams, prefs: &Preferences) -> Result<DVector<f64>> {
    let lam = prefs.risk_aversion;
    if !(lam > 0.0) {
        return Err(Error::InvalidArgument("Merton portfolio needs risk aversion > 0".into()));
    }
    Ok(matfun::solve_vec(&market.covariance(), &market.mu)? / lam)
}

/// One row of the small-impact expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationRow {
    pub epsilon: f64,
    /// Certainty equivalent with impact scaled by `epsilon`, dollars.
    pub w: f64,
    /// Frictionless certainty equivalent `x + μ²τ/(2λΣ²)`, dollars.
    pub w_merton: f64,
    /// `w − w_merton`, dollars.
    pub correction: f64,
    /// Leading-order prediction `−ε^{1/2} Γ₁D₁(q − q^M)²`, dollars.
    pub predicted: f64,
    /// `ε^{1/2}(Γ₁D₁q² + μq/D₁ + (2E−1)D₁)`, reported for comparison.
    pub q_form: f64,
    pub terminal_holding: f64,
    pub initial_velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub rows: Vec<PerturbationRow>,
    /// Least-squares slope of `ln|correction|` against `ln ε`.
    pub fitted_exponent: f64,
    /// `exp` of the fitted intercept, dollars.
    pub fitted_coefficient: f64,
    pub merton_holding: f64,
}

/// Certainty equivalent and curve endpoints as both impact parameters
/// shrink by `epsilons`.
pub fn perturbation_report(
    market_base: &MarketParams,
    prefs: &Preferences,
    horizon: &Horizon,
    q0: f64,
    x0: f64,
    epsilons: &[f64],
) -> Result<PerturbationReport> {
    if market_base.dim() != 1 {
        return Err(Error::InvalidArgument("perturbation report is single-asset".into()));
    }
    let lam = prefs.risk_aversion;
    let mu = market_base.mu[0];
    let sig2 = market_base.covariance()[(0, 0)];
    let g1 = market_base.gamma.as_matrix()[(0, 0)];
    let l1 = market_base.lambda_perm.as_matrix()[(0, 0)];
    let d1 = (0.5 * lam * sig2 / g1).sqrt();
    let e = l1 / (2.0 * g1);
    let tau = horizon.tau();
    let qm = mu / (lam * sig2);
    let w_merton = x0 + mu * mu * tau / (2.0 * lam * sig2);
    let q = DVector::from_element(1, q0);

    let rows = epsilons
        .iter()
        .map(|&eps| {
            if !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {eps}")));
            }
            let market = market_base.with_impact_scaled(eps);
            let w = value(&market, prefs, horizon, &q, x0)?.value;
            let curve = trading_curve_on(&market, prefs, horizon, &q, &[horizon.start, horizon.end])?;
            let root = eps.sqrt();
            Ok(PerturbationRow {
                epsilon: eps,
                w,
                w_merton,
                correction: w - w_merton,
                predicted: -root * g1 * d1 * (q0 - qm).powi(2),
                q_form: root * (g1 * d1 * q0 * q0 + mu * q0 / d1 + (2.0 * e - 1.0) * d1),
                terminal_holding: curve.terminal_holdings()[0],
                initial_velocity: curve.velocities[0][0],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (slope, intercept) = log_log_fit(&rows);
    Ok(PerturbationReport {
        rows,
        fitted_exponent: slope,
        fitted_coefficient: intercept.exp(),
        merton_holding: qm,
    })
}

fn log_log_fit(rows: &[PerturbationRow]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.correction != 0.0)
        .map(|r| (r.epsilon.ln(), r.correction.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Restarting the optimal curve at `s` from `q*(s)` reproduces its tail on
/// `[s, T]`. Returns the relative sup-norm deviation between the two.
pub fn time_consistency_check(
    market: &MarketParams,
    prefs: &Preferences,
    t: f64,
    s: f64,
    end: f64,
    q0: &DVector<f64>,
) -> Result<f64> {
    restart_deviation(market, prefs, t, s, end, q0, 0.0)
}

/// As [`time_consistency_check`] with the restart state scaled by
/// `1 + perturbation`.
pub fn restart_deviation(
    market: &MarketParams,
    prefs: &Preferences,
    t: f64,
    s: f64,
    end: f64,
    q0: &DVector<f64>,
    perturbation: f64,
) -> Result<f64> {
    if !(t <= s && s < end) {
        return Err(Error::InvalidArgument(format!("need t <= s < T, got {t}, {s}, {end}")));
    }
    let full_horizon = Horizon::new(t, end)?;
    let tail = Horizon::new(s, end)?.uniform_grid(DEFAULT_GRID);
    let full = trading_curve_on(market, prefs, &full_horizon, q0, &tail)?;
    let restart_state = full.initial_holdings() * (1.0 + perturbation);
    let restart = trading_curve_on(market, prefs, &Horizon::new(s, end)?, &restart_state, &tail)?;
    Ok(full.sup_distance(&restart))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{benchmark_table1, Firm};

    fn medium() -> (MarketParams, Preferences, Horizon, DVector<f64>, f64) {
        let (market, state, horizon) = benchmark_table1(Firm::Medium);
        (market, Preferences::new(6.7e-8), horizon, state.q0.clone(), state.x0())
    }

    #[test]
    fn curve_starts_at_initial_holdings() {
        let (market, prefs, horizon, q0, _) = medium();
        let curve = trading_curve(&market, &prefs, &horizon, &q0, DEFAULT_GRID).unwrap();
        assert_eq!(curve.len(), DEFAULT_GRID);
        assert_eq!(curve.holdings[0], q0);
    }

    #[test]
    fn terminal_velocity_is_half_impact_ratio_times_holding() {
        let (market, prefs, horizon, q0, _) = medium();
        let curve = trading_curve(&market, &prefs, &horizon, &q0, 101).unwrap();
        let q_t = curve.terminal_holdings()[0];
        let expected = 0.5 * 4e-8 / 1e-7 * q_t;
        let v_t = curve.terminal_velocity()[0];
        assert!(((v_t - expected) / expected).abs() < 1e-8);
        assert!(v_t > 0.0);
    }

    #[test]
    fn merton_fixed_point_without_permanent_impact() {
        let market = MarketParams::scalar(4.0, 20.0, 1e-7, 0.0).unwrap();
        let prefs = Preferences::new(6.7e-8);
        let qm = merton_portfolio(&market, &prefs).unwrap();
        assert!((qm[0] - 4.0 / (6.7e-8 * 400.0)).abs() < 1e-6);
        let horizon = Horizon::new(0.0, 0.5).unwrap();
        let curve = trading_curve(&market, &prefs, &horizon, &qm, 51).unwrap();
        for q in &curve.holdings {
            assert!(((q[0] - qm[0]) / qm[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn value_at_tiny_horizon_and_merton_limit() {
        let (market, prefs, _, q0, x0) = medium();
        let short = Horizon::new(0.0, 1e-12).unwrap();
        let w = value(&market, &prefs, &short, &q0, x0).unwrap();
        assert!((w.value - x0).abs() < 1e-6 * x0);

        let horizon = Horizon::new(0.0, 0.5).unwrap();
        let qm = merton_portfolio(&market, &prefs).unwrap();
        let tiny = market.with_impact_scaled(1e-8);
        let w = value(&tiny, &prefs, &horizon, &qm, x0).unwrap().value;
        let limit = x0 + 16.0 * 0.5 / (2.0 * 6.7e-8 * 400.0);
        assert!(((w - limit) / (limit - x0)).abs() < 1e-3, "{w} vs {limit}");
    }

    #[test]
    fn mean_exceeds_value_by_half_lambda_variance() {
        let (market, prefs, horizon, q0, x0) = medium();
        let stats = terminal_stats(&market, &prefs, &horizon, &q0, x0).unwrap();
        let w = value(&market, &prefs, &horizon, &q0, x0).unwrap().value;
        let identity = w + 0.5 * prefs.risk_aversion * stats.variance;
        assert!(((stats.mean - identity) / stats.mean).abs() < 1e-9);
        assert!((stats.dp - 0.01).abs() < 0.002, "dp {}", stats.dp);
        assert!(stats.mean_positive());
    }

    #[test]
    fn empty_portfolio_without_drift_is_degenerate() {
        let (mut market, prefs, horizon, _, x0) = medium();
        market.mu[0] = 0.0;
        let err = terminal_stats(&market, &prefs, &horizon, &DVector::zeros(1), x0).unwrap_err();
        assert!(matches!(err, Error::DegenerateVariance { .. }));
    }

    #[test]
    fn restart_from_midpoint_reproduces_tail() {
        let (market, prefs, _, q0, _) = medium();
        assert!(time_consistency_check(&market, &prefs, 0.0, 0.25, 0.5, &q0).unwrap() < 1e-8);
        assert_eq!(time_consistency_check(&market, &prefs, 0.0, 0.0, 0.5, &q0).unwrap(), 0.0);
        let off = restart_deviation(&market, &prefs, 0.0, 0.25, 0.5, &q0, 0.01).unwrap();
        assert!(off > 1e-3 && off < 0.05, "{off}");
    }

    #[test]
    fn normal_cdf_tails() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(-2.326347874040841) - 0.01).abs() < 1e-12);
        assert!(normal_cdf(-30.0) > 0.0);
    }
}
