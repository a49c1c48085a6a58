//! Monte Carlo simulation of the impacted price and the equity of a
//! deterministic strategy.
//!
//! Each step applies the Euler–Maruyama update
//! `ΔS = (Λv + μ)dt + Σ√dt Z` with the step velocity `v = Δq/dt` and
//! accumulates `ΔX = q̄'ΔS − v'Γv dt` at the step midpoint holding `q̄`.
//! Paths draw from independent ChaCha streams keyed by path index, so
//! results do not depend on thread scheduling.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{MarketParams, PortfolioState, StrategyProcess};

pub const DEFAULT_MC_STEPS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub n_paths: usize,
    pub n_steps: usize,
    /// dollars
    pub sample_mean: f64,
    /// dollars²
    pub sample_var: f64,
    /// Fraction of paths ending with negative equity.
    pub sample_dp: f64,
    /// `√(sample_var / n_paths)`
    pub std_error_mean: f64,
    /// From the sample fourth central moment.
    pub std_error_var: f64,
    pub skewness: f64,
    /// `√(6/n_paths)`
    pub std_error_skewness: f64,
    pub seed: u64,
}

impl McReport {
    pub fn z_mean(&self, expected: f64) -> f64 {
        (self.sample_mean - expected) / self.std_error_mean
    }

    pub fn z_var(&self, expected: f64) -> f64 {
        (self.sample_var - expected) / self.std_error_var
    }

    /// Binomial z-score of the default frequency against probability `p`.
    pub fn z_dp(&self, p: f64) -> f64 {
        (self.sample_dp - p) / (p * (1.0 - p) / self.n_paths as f64).sqrt()
    }
}

/// Simulates `n_paths` equity paths under `strategy` on `n_steps` uniform
/// steps spanning the strategy's grid.
pub fn mc_simulate(
    market: &MarketParams,
    state: &PortfolioState,
    strategy: &StrategyProcess,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<McReport> {
    if n_paths < 2 || n_steps < 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 paths and 1 step, got {n_paths} paths, {n_steps} steps"
        )));
    }
    if strategy.len() < 2 || strategy.dim() != market.dim() {
        return Err(Error::DimensionMismatch {
            what: "strategy",
            expected: market.dim(),
            got: strategy.dim(),
        });
    }
    let (t0, t1) = (strategy.grid[0], strategy.grid[strategy.len() - 1]);
    let dt = (t1 - t0) / n_steps as f64;
    let root_dt = dt.sqrt();
    let d = market.dim();

    // deterministic part of each step and the loading of its shocks
    let times: Vec<f64> = (0..=n_steps)
        .map(|j| if j == n_steps { t1 } else { t0 + dt * j as f64 })
        .collect();
    let q: Vec<DVector<f64>> = times.iter().map(|&u| strategy.holdings_at(u)).collect();
    let gamma = market.gamma.as_matrix();
    let lambda = market.lambda_perm.as_matrix();
    let mut drift = 0.0;
    let mut loadings = Vec::with_capacity(n_steps * d);
    for w in q.windows(2) {
        let mid = (&w[0] + &w[1]) * 0.5;
        let v = (&w[1] - &w[0]) / dt;
        let ds_drift = (lambda * &v + &market.mu) * dt;
        drift += mid.dot(&ds_drift) - v.dot(&(gamma * &v)) * dt;
        let load = market.sigma.transpose() * &mid * root_dt;
        loadings.extend(load.iter().copied());
    }
    let x0 = state.x0();

    let finals: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path as u64);
            let mut noise = 0.0;
            for l in &loadings {
                let z: f64 = StandardNormal.sample(&mut rng);
                noise += l * z;
            }
            x0 + drift + noise
        })
        .collect();

    let n = n_paths as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    let mut defaults = 0usize;
    for &x in &finals {
        let c = x - mean;
        m2 += c * c;
        m3 += c * c * c;
        m4 += c * c * c * c;
        if x < 0.0 {
            defaults += 1;
        }
    }
    let var = m2 / (n - 1.0);
    let (m2n, m3n, m4n) = (m2 / n, m3 / n, m4 / n);
    let skewness = if m2n > 0.0 { m3n / m2n.powf(1.5) } else { 0.0 };
    Ok(McReport {
        n_paths,
        n_steps,
        sample_mean: mean,
        sample_var: var,
        sample_dp: defaults as f64 / n,
        std_error_mean: (var / n).sqrt(),
        std_error_var: ((m4n - m2n * m2n).max(0.0) / n).sqrt(),
        skewness,
        std_error_skewness: (6.0 / n).sqrt(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{benchmark_table1, Firm, Horizon};

    fn hold(q: f64, horizon: &Horizon) -> StrategyProcess {
        StrategyProcess {
            grid: vec![horizon.start, horizon.end],
            holdings: vec![DVector::from_element(1, q); 2],
            velocities: vec![DVector::zeros(1); 2],
        }
    }

    #[test]
    fn hold_strategy_matches_gaussian_moments() {
        let (market, state, horizon) = benchmark_table1(Firm::Medium);
        let r = mc_simulate(&market, &state, &hold(200_000.0, &horizon), 20_000, 50, 7).unwrap();
        assert!(r.z_mean(5.4e6).abs() < 3.0);
        assert!(r.z_var(8e12).abs() < 3.0);
        assert!((r.skewness / r.std_error_skewness).abs() < 4.0);
    }

    #[test]
    fn no_volatility_is_deterministic() {
        let (mut market, state, horizon) = benchmark_table1(Firm::Medium);
        market.sigma[(0, 0)] = 0.0;
        let r = mc_simulate(&market, &state, &hold(200_000.0, &horizon), 100, 10, 1).unwrap();
        assert_eq!(r.sample_var, 0.0);
        assert!((r.sample_mean - 5.4e6).abs() < 1e-6);
    }

    #[test]
    fn same_seed_same_report() {
        let (market, state, horizon) = benchmark_table1(Firm::Medium);
        let s = hold(200_000.0, &horizon);
        let a = mc_simulate(&market, &state, &s, 5000, 20, 42).unwrap();
        let b = mc_simulate(&market, &state, &s, 5000, 20, 42).unwrap();
        let c = mc_simulate(&market, &state, &s, 5000, 20, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.sample_mean, c.sample_mean);
    }
}
