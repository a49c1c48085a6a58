//! Discrete-time oracle: the best deterministic strategy whose holdings are
//! piecewise linear on a uniform grid.
//!
//! With `q` linear on each step the mean and variance integrals are exact
//! polynomials in the step endpoints:
//!
//! ```text
//! E[X_T] − x0 = ½(q_n'Λq_n − q_0'Λq_0) + Σ_k [ dt μ'(q_k + q_{k+1})/2 − Δq_k'ΓΔq_k/dt ]
//! Var[X_T]    = Σ_k dt/3 (q_k'Sq_k + q_k'Sq_{k+1} + q_{k+1}'Sq_{k+1}),  S = ΣΣ'
//! ```
//!
//! so the certainty equivalent is a quadratic in `(q_1, …, q_n)` with a
//! block-tridiagonal Hessian.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::{validate, Horizon, MarketParams, Preferences, StrategyProcess};

#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    pub n_steps: usize,
    /// years
    pub dt: f64,
    pub horizon: Horizon,
    pub q0: DVector<f64>,
    pub x0: f64,
    risk_aversion: f64,
    mu: DVector<f64>,
    gamma: DMatrix<f64>,
    lambda_perm: DMatrix<f64>,
    covariance: DMatrix<f64>,
}

/// Mean and variance of terminal equity for one discrete strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteMoments {
    /// dollars
    pub mean: f64,
    /// dollars²
    pub variance: f64,
    /// `mean − (λ/2)·variance`, dollars.
    pub certainty_equivalent: f64,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    /// Velocity on each step, units / year.
    pub velocities: Vec<DVector<f64>>,
    /// Certainty equivalent of the discrete optimum, dollars.
    pub objective: f64,
    pub moments: DiscreteMoments,
    /// Holdings at the `n_steps + 1` grid times; node velocities average the
    /// adjacent step velocities.
    pub curve: StrategyProcess,
}

impl DiscreteProblem {
    pub fn new(
        market: &MarketParams,
        prefs: &Preferences,
        horizon: &Horizon,
        q0: &DVector<f64>,
        x0: f64,
        n_steps: usize,
    ) -> Result<Self> {
        validate(market, prefs, horizon).into_result()?;
        if n_steps < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 steps, got {n_steps}")));
        }
        if q0.len() != market.dim() {
            return Err(Error::DimensionMismatch {
                what: "initial holdings",
                expected: market.dim(),
                got: q0.len(),
            });
        }
        Ok(Self {
            n_steps,
            dt: horizon.tau() / n_steps as f64,
            horizon: *horizon,
            q0: q0.clone(),
            x0,
            risk_aversion: prefs.risk_aversion,
            mu: market.mu.clone(),
            gamma: market.gamma.as_matrix().clone(),
            lambda_perm: market.lambda_perm.as_matrix().clone(),
            covariance: market.covariance(),
        })
    }

    pub fn grid(&self) -> Vec<f64> {
        self.horizon.uniform_grid(self.n_steps + 1)
    }

    /// Exact moments of the piecewise-linear strategy through `holdings`
    /// (`n_steps + 1` points starting at `q0`).
    pub fn moments(&self, holdings: &[DVector<f64>]) -> Result<DiscreteMoments> {
        if holdings.len() != self.n_steps + 1 {
            return Err(Error::DimensionMismatch {
                what: "strategy holdings",
                expected: self.n_steps + 1,
                got: holdings.len(),
            });
        }
        let dt = self.dt;
        let s = &self.covariance;
        let (first, last) = (&holdings[0], &holdings[self.n_steps]);
        let mut mean = self.x0
            + 0.5 * (last.dot(&(&self.lambda_perm * last)) - first.dot(&(&self.lambda_perm * first)));
        let mut variance = 0.0;
        for w in holdings.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let dq = b - a;
            mean += dt * 0.5 * self.mu.dot(&(a + b)) - dq.dot(&(&self.gamma * &dq)) / dt;
            variance += dt / 3.0 * (a.dot(&(s * a)) + a.dot(&(s * b)) + b.dot(&(s * b)));
        }
        Ok(DiscreteMoments {
            mean,
            variance,
            certainty_equivalent: mean - 0.5 * self.risk_aversion * variance,
        })
    }

    /// Moments of `strategy` sampled at this problem's grid times.
    pub fn moments_of(&self, strategy: &StrategyProcess) -> Result<DiscreteMoments> {
        let holdings: Vec<DVector<f64>> = self.grid().iter().map(|&u| strategy.holdings_at(u)).collect();
        self.moments(&holdings)
    }

    /// Maximizes the certainty equivalent by a block Thomas solve of the
    /// stationarity system.
    pub fn solve(&self) -> Result<QpSolution> {
        let n = self.n_steps;
        let dt = self.dt;
        let lam = self.risk_aversion;
        let s = &self.covariance;
        // Hessian of the negated objective in (q_1, …, q_n)
        let diag_inner = &self.gamma * (4.0 / dt) + s * (2.0 * lam * dt / 3.0);
        let diag_last = &self.gamma * (2.0 / dt) + s * (lam * dt / 3.0) - &self.lambda_perm;
        let off = &self.gamma * (-2.0 / dt) + s * (lam * dt / 6.0);

        let mut rhs: Vec<DVector<f64>> = (1..=n)
            .map(|k| if k == n { &self.mu * (0.5 * dt) } else { &self.mu * dt })
            .collect();
        rhs[0] -= &off * &self.q0;

        // forward elimination
        let mut factors: Vec<Cholesky<f64, Dyn>> = Vec::with_capacity(n);
        let mut carried: Vec<DVector<f64>> = Vec::with_capacity(n);
        for k in 0..n {
            let base = if k + 1 == n { &diag_last } else { &diag_inner };
            let (pivot, r) = if k == 0 {
                (base.clone(), rhs[0].clone())
            } else {
                let prev = &factors[k - 1];
                let pivot = base - &off * prev.solve(&off);
                let r = &rhs[k] - &off * prev.solve(&carried[k - 1]);
                (pivot, r)
            };
            let sym = (&pivot + pivot.transpose()) * 0.5;
            let chol = Cholesky::new(sym).ok_or(Error::NotConcave { step: k + 1 })?;
            factors.push(chol);
            carried.push(r);
        }
        // back substitution
        let mut q = vec![DVector::zeros(self.q0.len()); n];
        q[n - 1] = factors[n - 1].solve(&carried[n - 1]);
        for k in (0..n - 1).rev() {
            q[k] = factors[k].solve(&(&carried[k] - &off * &q[k + 1]));
        }

        let mut holdings = Vec::with_capacity(n + 1);
        holdings.push(self.q0.clone());
        holdings.extend(q);
        let velocities: Vec<DVector<f64>> = holdings.windows(2).map(|w| (&w[1] - &w[0]) / dt).collect();
        let node_velocities = (0..=n)
            .map(|k| match k {
                0 => velocities[0].clone(),
                k if k == n => velocities[n - 1].clone(),
                k => (&velocities[k - 1] + &velocities[k]) * 0.5,
            })
            .collect();
        let moments = self.moments(&holdings)?;
        Ok(QpSolution {
            velocities,
            objective: moments.certainty_equivalent,
            moments,
            curve: StrategyProcess {
                grid: self.grid(),
                holdings,
                velocities: node_velocities,
            },
        })
    }
}

/// Discrete optimum on `n_steps` uniform steps. The objective is the
/// certainty equivalent including the initial equity `x0`.
pub fn qp_oracle(
    market: &MarketParams,
    prefs: &Preferences,
    horizon: &Horizon,
    q0: &DVector<f64>,
    x0: f64,
    n_steps: usize,
) -> Result<QpSolution> {
    DiscreteProblem::new(market, prefs, horizon, q0, x0, n_steps)?.solve()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_to_trade_without_drift_or_holdings() {
        let market = MarketParams::scalar(0.0, 20.0, 1e-7, 4e-8).unwrap();
        let h = Horizon::new(0.0, 0.5).unwrap();
        let sol = qp_oracle(&market, &Preferences::new(6.7e-8), &h, &DVector::zeros(1), 0.0, 50).unwrap();
        assert!(sol.velocities.iter().all(|v| v[0] == 0.0));
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn hold_strategy_moments_are_exact() {
        let market = MarketParams::scalar(4.0, 20.0, 1e-7, 4e-8).unwrap();
        let h = Horizon::new(0.0, 0.5).unwrap();
        let q0 = DVector::from_element(1, 200_000.0);
        let p = DiscreteProblem::new(&market, &Preferences::new(0.0), &h, &q0, 5e6, 10).unwrap();
        let m = p.moments(&vec![q0.clone(); 11]).unwrap();
        assert!((m.mean - 5.4e6).abs() < 1e-6);
        assert!((m.variance - 8e12).abs() < 1e-2);
    }

    #[test]
    fn stationarity_residual_vanishes() {
        let market = MarketParams::scalar(4.0, 20.0, 1e-7, 4e-8).unwrap();
        let h = Horizon::new(0.0, 0.5).unwrap();
        let q0 = DVector::from_element(1, 200_000.0);
        let p = DiscreteProblem::new(&market, &Preferences::new(6.7e-8), &h, &q0, 5e6, 40).unwrap();
        let sol = p.solve().unwrap();
        // perturbing any node lowers the objective
        for k in 1..=40 {
            for bump in [-1.0, 1.0] {
                let mut hold = sol.curve.holdings.clone();
                hold[k][0] += bump;
                assert!(p.moments(&hold).unwrap().certainty_equivalent <= sol.objective);
            }
        }
    }

    #[test]
    fn large_permanent_impact_is_not_concave() {
        let market = MarketParams::scalar(4.0, 20.0, 1e-7, 1.0).unwrap();
        let h = Horizon::new(0.0, 0.5).unwrap();
        let err = qp_oracle(&market, &Preferences::new(0.0), &h, &DVector::zeros(1), 0.0, 100).unwrap_err();
        assert!(matches!(err, Error::NotConcave { .. }));
    }
}
