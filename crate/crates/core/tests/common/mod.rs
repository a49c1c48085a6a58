#![allow(dead_code)]

use illiquid_core::matfun::{SpdFactorization, SymMatrix};
use illiquid_core::model::{Horizon, MarketParams, Preferences};
use illiquid_core::riccati::{self, MaximalHorizon};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random SPD matrix with eigenvalues of order `scale`.
pub fn spd(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> SymMatrix {
    let a = normal_matrix(rng, d, d);
    let m = (&a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5) * scale;
    SymMatrix::new((&m + m.transpose()) * 0.5).unwrap()
}

/// Random market whose reduced pair has `max eig D = rho` and
/// `max eig E = e_ratio · rho`.
pub fn random_market(rng: &mut ChaCha8Rng, d: usize, rho: f64, e_ratio: f64) -> (MarketParams, Preferences) {
    let gamma = spd(rng, d, 1e-7);
    let sigma = normal_matrix(rng, d, d) * 5.0 + DMatrix::identity(d, d) * 20.0;
    let mu = DVector::from_fn(d, |_, _| 4.0 + 2.0 * rng.sample::<f64, _>(StandardNormal));
    let shape = spd(rng, d, 1.0);

    let gh = SpdFactorization::new(&gamma).unwrap().inv_sqrt();
    let ghm = gh.as_matrix();
    let cov = &sigma * sigma.transpose();
    let reduced = SymMatrix::with_tolerance(ghm * cov * ghm * 0.5, 1e-9).unwrap();
    let lam = rho * rho / reduced.max_eigenvalue();

    let e_unit = SymMatrix::with_tolerance(ghm * shape.as_matrix() * ghm * 0.5, 1e-9).unwrap();
    let ell = if e_ratio > 0.0 { e_ratio * rho / e_unit.max_eigenvalue() } else { 0.0 };
    let lambda_perm = shape.scale(ell);

    (
        MarketParams::new(mu, sigma, gamma, lambda_perm).unwrap(),
        Preferences::new(lam),
    )
}

/// Largest admissible horizon up to `cap`, kept 5% clear of `T*`.
pub fn safe_tau(market: &MarketParams, prefs: &Preferences, cap: f64) -> f64 {
    let red = riccati::reduce(market, prefs).unwrap();
    match riccati::maximal_horizon(&red, cap, 1e-12) {
        MaximalHorizon::Finite(t) => (0.95 * t).min(cap),
        _ => cap,
    }
}

pub fn horizon(tau: f64) -> Horizon {
    Horizon::new(0.0, tau).unwrap()
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Relative sup-norm distance of two scalar curves.
pub fn rel_sup(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
