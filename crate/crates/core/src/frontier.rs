//! Efficient frontier over the risk aversion λ and calibration of λ to a
//! target default probability.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{validate, Horizon, MarketParams, PortfolioState, Preferences};
use crate::strategy::{self, TerminalStats};

/// Bisection stops once the default probability is this close to target.
pub const CALIBRATION_TOL: f64 = 1e-6;
pub const MAX_BISECTIONS: usize = 100;
/// Decades the bracket may grow by when the target is not bracketed.
pub const MAX_EXPANSION_DECADES: u32 = 40;
const SCAN_PER_DECADE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint {
    /// 1/dollars
    pub lambda: f64,
    /// dollars
    pub mean: f64,
    /// dollars²
    pub variance: f64,
    /// 1/year
    pub err: f64,
    pub dp: f64,
    /// `mean ≤ 0`: the default probability no longer ranks strategies.
    pub nonpositive_mean: bool,
}

impl FrontierPoint {
    fn new(lambda: f64, stats: TerminalStats) -> Self {
        Self {
            lambda,
            mean: stats.mean,
            variance: stats.variance,
            err: stats.err,
            dp: stats.dp,
            nonpositive_mean: !stats.mean_positive(),
        }
    }
}

/// A λ left out of a sweep and why.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPoint {
    pub lambda: f64,
    pub reason: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub points: Vec<FrontierPoint>,
    pub skipped: Vec<SkippedPoint>,
}

impl Sweep {
    /// Indices `i` with `dp[i+1] > dp[i]` along increasing λ.
    pub fn dp_increases(&self) -> Vec<usize> {
        self.points
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].dp > w[0].dp)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `n` log-spaced values on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| match i {
            0 => lo,
            i if i + 1 == n => hi,
            i => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

/// 61 log-spaced λ on `[1e-9, 1e-5]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-9, 1e-5, 61)
}

fn stats_at(market: &MarketParams, state: &PortfolioState, horizon: &Horizon, lambda: f64) -> Result<TerminalStats> {
    strategy::terminal_stats(market, &Preferences::new(lambda), horizon, &state.q0, state.x0())
}

/// Terminal statistics at each λ; λ for which the horizon reaches `T*`
/// or the variance degenerates are skipped.
pub fn sweep(market: &MarketParams, state: &PortfolioState, horizon: &Horizon, lambda_grid: &[f64]) -> Sweep {
    let results: Vec<(f64, Result<TerminalStats>)> = lambda_grid
        .par_iter()
        .map(|&lam| {
            let res = if lam > 0.0 {
                stats_at(market, state, horizon, lam)
            } else {
                Err(Error::InvalidArgument(format!("risk aversion must be > 0, got {lam}")))
            };
            (lam, res)
        })
        .collect();
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for (lambda, res) in results {
        match res {
            Ok(stats) => points.push(FrontierPoint::new(lambda, stats)),
            Err(reason) => skipped.push(SkippedPoint { lambda, reason }),
        }
    }
    Sweep { points, skipped }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// 1/dollars
    pub lambda_star: f64,
    pub achieved_dp: f64,
    pub iterations: usize,
    /// Final bisection bracket.
    pub bracket: (f64, f64),
    /// Default probability changed direction more than once while scanning.
    pub non_monotone: bool,
    /// Mean terminal equity at `lambda_star` is not positive.
    pub nonpositive_mean: bool,
}

/// Finds λ whose optimal strategy has default probability `target_dp`.
///
/// `[lambda_lo, lambda_hi]` is scanned on a log grid. While the target is
/// not bracketed the scan is extended one decade at a time, towards smaller
/// λ when every default probability is below target and towards larger λ
/// when every one is above, for at most 40 decades. The sign change at the
/// smallest λ is then bisected in `ln λ`.
pub fn calibrate(
    market: &MarketParams,
    state: &PortfolioState,
    horizon: &Horizon,
    target_dp: f64,
    lambda_lo: f64,
    lambda_hi: f64,
) -> Result<CalibrationResult> {
    if !(target_dp > 0.0 && target_dp < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target default probability must be in (0, 1), got {target_dp}"
        )));
    }
    if !(lambda_lo > 0.0 && lambda_hi > lambda_lo && lambda_hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < lambda_lo < lambda_hi, got [{lambda_lo}, {lambda_hi}]"
        )));
    }
    validate(market, &Preferences::new(lambda_lo), horizon).into_result()?;

    let gap = |lam: f64| stats_at(market, state, horizon, lam).map(|s| s.dp - target_dp);
    let scan = |grid: Vec<f64>| -> Vec<(f64, f64)> {
        grid.par_iter()
            .map(|&lam| (lam, gap(lam)))
            .collect::<Vec<_>>()
            .into_iter()
            .filter_map(|(lam, g)| g.ok().map(|g| (lam, g)))
            .collect()
    };

    let span = (lambda_hi / lambda_lo).log10().ceil().max(1.0) as usize;
    let (mut lo, mut hi) = (lambda_lo, lambda_hi);
    let mut scanned = scan(log_grid(lo, hi, span * SCAN_PER_DECADE + 1));
    let mut decades = 0;
    let bracket = loop {
        if let Some(pair) = scanned.windows(2).find(|w| w[0].1 * w[1].1 <= 0.0) {
            break (pair[0], pair[1]);
        }
        if decades >= MAX_EXPANSION_DECADES {
            if scanned.is_empty() {
                return Err(Error::InfeasibleHorizon);
            }
            return Err(Error::NoBracket { target: target_dp, lo, hi });
        }
        let too_safe = !scanned.is_empty() && scanned.iter().all(|p| p.1 < 0.0);
        let too_risky = !scanned.is_empty() && scanned.iter().all(|p| p.1 > 0.0);
        if !too_risky {
            let grid = log_grid(lo / 10.0, lo, SCAN_PER_DECADE + 1);
            let mut fresh = scan(grid[..SCAN_PER_DECADE].to_vec());
            fresh.append(&mut scanned);
            scanned = fresh;
            lo /= 10.0;
            decades += 1;
        }
        if !too_safe {
            let grid = log_grid(hi, hi * 10.0, SCAN_PER_DECADE + 1);
            scanned.extend(scan(grid[1..].to_vec()));
            hi *= 10.0;
            decades += 1;
        }
    };
    let sign_changes = scanned.windows(2).filter(|w| w[0].1 * w[1].1 < 0.0).count();

    let ((mut a, mut fa), (mut b, fb)) = bracket;
    let (mut star, mut star_gap) = if fa.abs() <= fb.abs() { (a, fa) } else { (b, fb) };
    let mut iterations = 0;
    while star_gap.abs() >= CALIBRATION_TOL && iterations < MAX_BISECTIONS {
        iterations += 1;
        let mid = (0.5 * (a.ln() + b.ln())).exp();
        let fm = gap(mid)?;
        star = mid;
        star_gap = fm;
        if fa * fm <= 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    let stats = stats_at(market, state, horizon, star)?;
    Ok(CalibrationResult {
        lambda_star: star,
        achieved_dp: stats.dp,
        iterations,
        bracket: (a, b),
        non_monotone: sign_changes > 1,
        nonpositive_mean: !stats.mean_positive(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{benchmark_table1, Firm};

    #[test]
    fn default_grid_shape() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 61);
        assert_eq!(g[0], 1e-9);
        assert_eq!(g[60], 1e-5);
        assert!((g[15] / 1e-8 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_monotone_samples() {
        let (market, state, horizon) = benchmark_table1(Firm::Medium);
        let s = sweep(&market, &state, &horizon, &[6.7e-8, 1e-4]);
        assert_eq!(s.points.len(), 2);
        assert!((s.points[0].dp - 0.01).abs() < 2e-3);
        assert!(s.points[1].err < s.points[0].err);
        assert!(s.points[1].variance <= s.points[0].variance);
    }

    #[test]
    fn calibration_round_trip_and_no_bracket() {
        let (market, state, horizon) = benchmark_table1(Firm::Medium);
        let c = calibrate(&market, &state, &horizon, 0.01, 1e-9, 1e-5).unwrap();
        assert!(c.bracket.0 <= c.lambda_star && c.lambda_star <= c.bracket.1);
        let dp = stats_at(&market, &state, &horizon, c.lambda_star).unwrap().dp;
        assert!((dp - 0.01).abs() < 1e-5);
        let err = calibrate(&market, &state, &horizon, 0.5, 1e-9, 1e-5).unwrap_err();
        assert!(matches!(err, Error::NoBracket { .. }));
    }
}
