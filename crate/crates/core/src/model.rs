//! Market, investor and horizon types, input validation and the JSON
//! parameter file.
//!
//! Units throughout: dollars, units of the risky asset, and years. The
//! risk-free rate is zero.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matfun::SymMatrix;

/// Drift, volatility and linear impact matrices of the traded assets.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    /// Drift, dollars / unit / year.
    pub mu: DVector<f64>,
    /// Volatility, dollars / unit / √year. Only `Σ Σ'` enters the model.
    pub sigma: DMatrix<f64>,
    /// Temporary impact, dollar·years / unit².
    pub gamma: SymMatrix,
    /// Permanent impact, dollars / unit².
    pub lambda_perm: SymMatrix,
}

impl MarketParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, gamma: SymMatrix, lambda_perm: SymMatrix) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::InvalidArgument("market needs at least one asset".into()));
        }
        check_dim("sigma", d, sigma.nrows(), sigma.ncols())?;
        check_dim("gamma", d, gamma.dim(), gamma.dim())?;
        check_dim("lambda_perm", d, lambda_perm.dim(), lambda_perm.dim())?;
        if mu.iter().chain(sigma.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("market parameters"));
        }
        Ok(Self {
            mu,
            sigma,
            gamma,
            lambda_perm,
        })
    }

    /// Single-asset market from scalars.
    pub fn scalar(mu: f64, sigma: f64, gamma: f64, lambda_perm: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mu),
            DMatrix::from_element(1, 1, sigma),
            SymMatrix::scalar(gamma),
            SymMatrix::scalar(lambda_perm),
        )
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `Σ Σ'`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let c = &self.sigma * self.sigma.transpose();
        (&c + c.transpose()) * 0.5
    }

    /// Copy with both impact matrices multiplied by `eps`.
    pub fn with_impact_scaled(&self, eps: f64) -> Self {
        Self {
            gamma: self.gamma.scale(eps),
            lambda_perm: self.lambda_perm.scale(eps),
            ..self.clone()
        }
    }
}

fn check_dim(what: &'static str, d: usize, rows: usize, cols: usize) -> Result<()> {
    if rows != d || cols != d {
        return Err(Error::DimensionMismatch {
            what,
            expected: d,
            got: if rows != d { rows } else { cols },
        });
    }
    Ok(())
}

/// CARA risk aversion λ, 1 / dollars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preferences {
    pub risk_aversion: f64,
}

impl Preferences {
    pub fn new(risk_aversion: f64) -> Self {
        Self { risk_aversion }
    }
}

/// Initial holdings, prices, cash and equity. Equity is always derived as
/// `x0 = c0 + q0' s0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub q0: DVector<f64>,
    pub s0: DVector<f64>,
    pub c0: f64,
    x0: f64,
}

impl PortfolioState {
    pub fn new(q0: DVector<f64>, s0: DVector<f64>, c0: f64) -> Result<Self> {
        if q0.len() != s0.len() {
            return Err(Error::DimensionMismatch {
                what: "initial prices",
                expected: q0.len(),
                got: s0.len(),
            });
        }
        let x0 = c0 + q0.dot(&s0);
        Ok(Self { q0, s0, c0, x0 })
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn dim(&self) -> usize {
        self.q0.len()
    }

    /// Same holdings and prices with cash shifted so that equity is `x0`.
    pub fn with_equity(&self, x0: f64) -> Self {
        let c0 = x0 - self.q0.dot(&self.s0);
        Self {
            q0: self.q0.clone(),
            s0: self.s0.clone(),
            c0,
            x0: c0 + self.q0.dot(&self.s0),
        }
    }
}

/// Trading period `[start, end]` in years.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon {
    pub start: f64,
    pub end: f64,
}

impl Horizon {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || start >= end {
            return Err(Error::InvalidArgument(format!(
                "horizon requires 0 <= t < T, got t = {start}, T = {end}"
            )));
        }
        Ok(Self { start, end })
    }

    /// Time to go `τ = T - t`.
    pub fn tau(&self) -> f64 {
        self.end - self.start
    }

    /// `n` uniformly spaced times covering `[start, end]`.
    pub fn uniform_grid(&self, n: usize) -> Vec<f64> {
        let n = n.max(2);
        let h = self.tau() / (n - 1) as f64;
        (0..n)
            .map(|i| if i + 1 == n { self.end } else { self.start + h * i as f64 })
            .collect()
    }
}

/// Deterministic holdings and trading velocities on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProcess {
    pub grid: Vec<f64>,
    pub holdings: Vec<DVector<f64>>,
    pub velocities: Vec<DVector<f64>>,
}

impl StrategyProcess {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.holdings.first().map_or(0, |q| q.len())
    }

    pub fn initial_holdings(&self) -> &DVector<f64> {
        &self.holdings[0]
    }

    pub fn terminal_holdings(&self) -> &DVector<f64> {
        self.holdings.last().expect("non-empty strategy")
    }

    pub fn terminal_velocity(&self) -> &DVector<f64> {
        self.velocities.last().expect("non-empty strategy")
    }

    /// Holdings at `u` by cubic Hermite interpolation of holdings and
    /// velocities (exact at grid times).
    pub fn holdings_at(&self, u: f64) -> DVector<f64> {
        let n = self.grid.len();
        if u <= self.grid[0] {
            return self.holdings[0].clone();
        }
        if u >= self.grid[n - 1] {
            return self.holdings[n - 1].clone();
        }
        let k = match self.grid.binary_search_by(|g| g.partial_cmp(&u).expect("finite grid")) {
            Ok(i) => return self.holdings[i].clone(),
            Err(i) => i - 1,
        };
        let (t0, t1) = (self.grid[k], self.grid[k + 1]);
        let h = t1 - t0;
        let s = (u - t0) / h;
        let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
        let h10 = s.powi(3) - 2.0 * s * s + s;
        let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
        let h11 = s.powi(3) - s * s;
        &self.holdings[k] * h00
            + &self.velocities[k] * (h10 * h)
            + &self.holdings[k + 1] * h01
            + &self.velocities[k + 1] * (h11 * h)
    }

    /// Relative sup-norm distance of holdings at common grid positions.
    pub fn sup_distance(&self, other: &StrategyProcess) -> f64 {
        let scale = self
            .holdings
            .iter()
            .map(|q| q.amax())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        self.holdings
            .iter()
            .zip(&other.holdings)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
            / scale
    }
}

/// Violated modelling assumptions; empty means the inputs are solvable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.contains(needle))
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "no violations")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

const SEMIDEFINITE_TOL: f64 = 1e-12;

pub fn validate(market: &MarketParams, prefs: &Preferences, horizon: &Horizon) -> ValidationReport {
    let mut violations = Vec::new();
    let d = market.dim();

    let gamma = market.gamma.eigen().values;
    if !(gamma.min() > crate::matfun::PD_TOL * gamma.max().max(0.0)) || !(gamma.max() > 0.0) {
        violations.push("gamma not positive definite".to_string());
    }
    let lambda = market.lambda_perm.eigen().values;
    if lambda.min() < -SEMIDEFINITE_TOL * lambda.amax().max(f64::MIN_POSITIVE) {
        violations.push("lambda_perm not positive semi-definite".to_string());
    }

    let lam = prefs.risk_aversion;
    if !lam.is_finite() || lam < 0.0 {
        violations.push(format!("risk aversion must be finite and >= 0, got {lam}"));
    } else if lam == 0.0 && d > 1 {
        violations.push("λ=0 unsupported for d>1".to_string());
    } else if lam > 0.0 {
        let cov = SymMatrix::with_tolerance(market.covariance(), 1e-9)
            .map(|c| c.eigen().values)
            .ok();
        match cov {
            Some(ev) if ev.max() > 0.0 && ev.min() > crate::matfun::PD_TOL * ev.max() => {}
            _ => violations.push("sigma*sigma' not positive definite".to_string()),
        }
    }

    if !(horizon.start.is_finite() && horizon.end.is_finite()) || horizon.start < 0.0 || horizon.start >= horizon.end {
        violations.push(format!(
            "horizon requires 0 <= t < T, got t = {}, T = {}",
            horizon.start, horizon.end
        ));
    }

    ValidationReport { violations }
}

/// Balance-sheet sizes of the benchmark firms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Firm {
    Small,
    Medium,
    Large,
}

impl Firm {
    pub const ALL: [Firm; 3] = [Firm::Small, Firm::Medium, Firm::Large];

    pub fn initial_holdings(self) -> f64 {
        match self {
            Firm::Small => 50_000.0,
            Firm::Medium => 200_000.0,
            Firm::Large => 800_000.0,
        }
    }

    /// Risk aversion reported for a 1% default probability target.
    pub fn reported_risk_aversion(self) -> f64 {
        match self {
            Firm::Small => 2.56e-7,
            Firm::Medium => 6.7e-8,
            Firm::Large => 1.83e-8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Firm::Small => "small",
            Firm::Medium => "medium",
            Firm::Large => "large",
        }
    }
}

impl std::str::FromStr for Firm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Firm::Small),
            "medium" => Ok(Firm::Medium),
            "large" => Ok(Firm::Large),
            other => Err(Error::InvalidArgument(format!("unknown firm {other:?}"))),
        }
    }
}

pub const BENCHMARK_S0: f64 = 100.0;
pub const BENCHMARK_T: f64 = 0.5;
pub const BENCHMARK_MU: f64 = 4.0;
pub const BENCHMARK_SIGMA: f64 = 20.0;
pub const BENCHMARK_GAMMA: f64 = 1e-7;
pub const BENCHMARK_LAMBDA: f64 = 4e-8;
/// Default target default probability for calibration.
pub const DEFAULT_TARGET_DP: f64 = 0.01;

/// Single-asset benchmark: 4:1 asset-to-equity, half-year period.
pub fn benchmark_table1(firm: Firm) -> (MarketParams, PortfolioState, Horizon) {
    let market = MarketParams::scalar(BENCHMARK_MU, BENCHMARK_SIGMA, BENCHMARK_GAMMA, BENCHMARK_LAMBDA)
        .expect("benchmark market is well formed");
    let q0 = firm.initial_holdings();
    let c0 = -0.75 * q0 * BENCHMARK_S0;
    let state = PortfolioState::new(DVector::from_element(1, q0), DVector::from_element(1, BENCHMARK_S0), c0)
        .expect("benchmark state is well formed");
    let horizon = Horizon::new(0.0, BENCHMARK_T).expect("benchmark horizon is well formed");
    (market, state, horizon)
}

/// Flat JSON parameter document; matrices are row-major arrays of arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamFile {
    pub d: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub lambda_perm: Vec<Vec<f64>>,
    pub risk_aversion: f64,
    pub q0: Vec<f64>,
    pub s0: Vec<f64>,
    pub c0: f64,
    pub t: f64,
    #[serde(rename = "T")]
    pub end: f64,
}

/// Keys accepted by [`ParamFile::apply_override`].
pub const PARAM_KEYS: [&str; 11] = [
    "d",
    "mu",
    "sigma",
    "gamma",
    "lambda_perm",
    "risk_aversion",
    "q0",
    "s0",
    "c0",
    "t",
    "T",
];

impl ParamFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("parameter file: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("parameter file serializes")
    }

    pub fn benchmark(firm: Firm) -> Self {
        let (market, state, horizon) = benchmark_table1(firm);
        Self::from_model(&market, &Preferences::new(firm.reported_risk_aversion()), &state, &horizon)
    }

    pub fn from_model(market: &MarketParams, prefs: &Preferences, state: &PortfolioState, horizon: &Horizon) -> Self {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
        Self {
            d: market.dim(),
            mu: market.mu.iter().copied().collect(),
            sigma: rows(&market.sigma),
            gamma: market.gamma.to_rows(),
            lambda_perm: market.lambda_perm.to_rows(),
            risk_aversion: prefs.risk_aversion,
            q0: state.q0.iter().copied().collect(),
            s0: state.s0.iter().copied().collect(),
            c0: state.c0,
            t: horizon.start,
            end: horizon.end,
        }
    }

    pub fn to_model(&self) -> Result<(MarketParams, Preferences, PortfolioState, Horizon)> {
        let d = self.d;
        let vec_of = |what: &'static str, v: &[f64]| -> Result<DVector<f64>> {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: d,
                    got: v.len(),
                });
            }
            Ok(DVector::from_column_slice(v))
        };
        let mat_of = |what: &'static str, rows: &[Vec<f64>]| -> Result<DMatrix<f64>> {
            if rows.len() != d {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: d,
                    got: rows.len(),
                });
            }
            for r in rows {
                if r.len() != d {
                    return Err(Error::DimensionMismatch {
                        what,
                        expected: d,
                        got: r.len(),
                    });
                }
            }
            Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
        };
        let market = MarketParams::new(
            vec_of("mu", &self.mu)?,
            mat_of("sigma", &self.sigma)?,
            SymMatrix::new(mat_of("gamma", &self.gamma)?)?,
            SymMatrix::new(mat_of("lambda_perm", &self.lambda_perm)?)?,
        )?;
        let state = PortfolioState::new(vec_of("q0", &self.q0)?, vec_of("s0", &self.s0)?, self.c0)?;
        let horizon = Horizon::new(self.t, self.end)?;
        Ok((market, Preferences::new(self.risk_aversion), state, horizon))
    }

    /// Applies `key=value`. Values are JSON; a bare number given for a
    /// vector key is broadcast to every entry and for a matrix key means
    /// that multiple of the identity.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |msg: String| Error::InvalidArgument(format!("override {key}: {msg}"));
        let json: serde_json::Value = serde_json::from_str(value).map_err(|e| bad(e.to_string()))?;
        let number = || json.as_f64().ok_or_else(|| bad(format!("expected a number, got {value}")));
        let d = self.d;
        let vector = |json: &serde_json::Value| -> Result<Vec<f64>> {
            if let Some(x) = json.as_f64() {
                return Ok(vec![x; d]);
            }
            serde_json::from_value(json.clone()).map_err(|e| bad(e.to_string()))
        };
        let matrix = |json: &serde_json::Value| -> Result<Vec<Vec<f64>>> {
            if let Some(x) = json.as_f64() {
                return Ok((0..d).map(|i| (0..d).map(|j| if i == j { x } else { 0.0 }).collect()).collect());
            }
            serde_json::from_value(json.clone()).map_err(|e| bad(e.to_string()))
        };
        match key {
            "d" => {
                self.d = json
                    .as_u64()
                    .ok_or_else(|| bad(format!("expected a positive integer, got {value}")))?
                    as usize
            }
            "mu" => self.mu = vector(&json)?,
            "q0" => self.q0 = vector(&json)?,
            "s0" => self.s0 = vector(&json)?,
            "sigma" => self.sigma = matrix(&json)?,
            "gamma" => self.gamma = matrix(&json)?,
            "lambda_perm" => self.lambda_perm = matrix(&json)?,
            "risk_aversion" => self.risk_aversion = number()?,
            "c0" => self.c0 = number()?,
            "t" => self.t = number()?,
            "T" => self.end = number()?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown override key {other:?} (known: {})",
                    PARAM_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_firms_validate() {
        for firm in Firm::ALL {
            let (market, state, horizon) = benchmark_table1(firm);
            let report = validate(&market, &Preferences::new(firm.reported_risk_aversion()), &horizon);
            assert!(report.is_empty(), "{firm:?}: {report}");
            assert_eq!(state.q0[0], firm.initial_holdings());
            assert_eq!(horizon.end, 0.5);
        }
    }

    #[test]
    fn benchmark_balance_sheets() {
        let (_, medium, _) = benchmark_table1(Firm::Medium);
        assert_eq!(medium.q0[0], 200_000.0);
        assert_eq!(medium.x0(), 5_000_000.0);
        assert_eq!(medium.c0, -15_000_000.0);
        let (_, small, _) = benchmark_table1(Firm::Small);
        assert_eq!(small.x0(), 1_250_000.0);
        let (_, large, horizon) = benchmark_table1(Firm::Large);
        assert_eq!(large.q0[0], 800_000.0);
        assert_eq!(horizon.tau(), 0.5);
    }

    #[test]
    fn equity_identity_holds_on_construction() {
        let s = PortfolioState::new(
            DVector::from_vec(vec![3.0, -2.5]),
            DVector::from_vec(vec![101.25, 47.0]),
            -17.75,
        )
        .unwrap();
        assert_eq!(s.x0(), -17.75 + (3.0 * 101.25 + -2.5 * 47.0));
        let t = s.with_equity(1000.0);
        assert_eq!(t.x0(), t.c0 + t.q0.dot(&t.s0));
    }

    #[test]
    fn zero_gamma_is_rejected() {
        let (mut market, _, horizon) = benchmark_table1(Firm::Medium);
        market.gamma = SymMatrix::scalar(0.0);
        let report = validate(&market, &Preferences::new(6.7e-8), &horizon);
        assert!(report.contains("gamma not positive definite"), "{report}");
    }

    #[test]
    fn lambda_zero_needs_single_asset() {
        let market = MarketParams::new(
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::identity(2, 2),
            SymMatrix::identity(2),
            SymMatrix::zeros(2),
        )
        .unwrap();
        let horizon = Horizon::new(0.0, 1.0).unwrap();
        let report = validate(&market, &Preferences::new(0.0), &horizon);
        assert!(report.contains("λ=0 unsupported for d>1"), "{report}");
        let (single, _, h) = benchmark_table1(Firm::Medium);
        assert!(validate(&single, &Preferences::new(0.0), &h).is_empty());
    }

    #[test]
    fn indefinite_permanent_impact_and_rank_deficient_sigma() {
        let market = MarketParams::new(
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            SymMatrix::identity(2),
            SymMatrix::from_diagonal(&[1.0, -0.5]),
        )
        .unwrap();
        let report = validate(&market, &Preferences::new(1.0), &Horizon::new(0.0, 1.0).unwrap());
        assert!(report.contains("lambda_perm not positive semi-definite"));
        assert!(report.contains("sigma*sigma' not positive definite"));
    }

    #[test]
    fn param_file_round_trip_and_overrides() {
        let mut file = ParamFile::benchmark(Firm::Medium);
        let parsed = ParamFile::from_json(&file.to_json()).unwrap();
        assert_eq!(parsed, file);
        file.apply_override("lambda_perm", "8e-8").unwrap();
        assert_eq!(file.lambda_perm, vec![vec![8e-8]]);
        file.apply_override("T", "0.25").unwrap();
        assert_eq!(file.end, 0.25);
        file.apply_override("mu", "[5.0]").unwrap();
        assert_eq!(file.mu, vec![5.0]);
        assert!(file.apply_override("volatility", "1").is_err());
        assert!(file.apply_override("c0", "\"x\"").is_err());
        let (_, prefs, state, horizon) = file.to_model().unwrap();
        assert_eq!(prefs.risk_aversion, 6.7e-8);
        assert_eq!(state.x0(), 5e6);
        assert_eq!(horizon.end, 0.25);
    }

    #[test]
    fn param_file_rejects_unknown_keys_and_bad_shapes() {
        let mut text = ParamFile::benchmark(Firm::Small).to_json();
        text.insert_str(1, "\"extra\":1,");
        assert!(ParamFile::from_json(&text).is_err());
        let mut file = ParamFile::benchmark(Firm::Small);
        file.mu = vec![1.0, 2.0];
        assert!(matches!(file.to_model(), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn hermite_interpolation_is_exact_for_cubics() {
        let f = |u: f64| u.powi(3) - 2.0 * u;
        let df = |u: f64| 3.0 * u * u - 2.0;
        let grid = vec![0.0, 0.3, 1.0];
        let s = StrategyProcess {
            holdings: grid.iter().map(|&u| DVector::from_element(1, f(u))).collect(),
            velocities: grid.iter().map(|&u| DVector::from_element(1, df(u))).collect(),
            grid,
        };
        for u in [0.1, 0.3, 0.55, 0.9] {
            assert!((s.holdings_at(u)[0] - f(u)).abs() < 1e-14);
        }
    }
}
