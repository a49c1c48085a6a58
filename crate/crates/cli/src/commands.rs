use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use illiquid_core::frontier::{self, log_grid, FrontierPoint, Sweep};
use illiquid_core::matfun::SINGULAR_TOL;
use illiquid_core::model::{Firm, Horizon, MarketParams, ParamFile, PortfolioState, Preferences};
use illiquid_core::riccati::{self, MaximalHorizon};
use illiquid_core::strategy::{self, DEFAULT_GRID};
use illiquid_core::verify::{self, DEFAULT_MC_STEPS};
use serde_json::{json, Value};

use crate::output::{fmt_num, num, write_json, Table};
use crate::{CliError, Command, Options};

const DEFAULT_FRONTIER_POINTS: usize = 61;
const DEFAULT_ORACLE_STEPS: usize = 2000;
const ORACLE_VALUE_TOL: f64 = 1e-3;
const ORACLE_CURVE_TOL: f64 = 5e-3;
const MC_Z_LIMIT: f64 = 3.0;

struct Run<'a> {
    opts: &'a Options,
    params: ParamFile,
    market: MarketParams,
    prefs: Preferences,
    state: PortfolioState,
    horizon: Horizon,
}

fn load_params(opts: &Options) -> Result<ParamFile> {
    let mut params = match &opts.input {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("reading {}: {e}", path.display())))?;
            ParamFile::from_json(&text)?
        }
        None => ParamFile::benchmark(opts.firm.unwrap_or(Firm::Medium)),
    };
    for item in &opts.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("override {item:?} is not key=value")))?;
        params.apply_override(key.trim(), value.trim())?;
    }
    Ok(params)
}

pub fn run(command: &Command, opts: &Options) -> Result<()> {
    let params = load_params(opts)?;
    let (market, prefs, state, horizon) = params.to_model()?;
    fs::create_dir_all(&opts.output).with_context(|| format!("creating {}", opts.output.display()))?;
    let run = Run {
        opts,
        params,
        market,
        prefs,
        state,
        horizon,
    };
    match command {
        Command::Curve => run.curve(),
        Command::Frontier => run.frontier(),
        Command::Calibrate => run.calibrate(),
        Command::Simulate => run.simulate(),
        Command::OracleCheck => run.oracle_check(),
        Command::Perturbation { epsilons } => run.perturbation(epsilons),
        Command::Plots => run.plots(),
    }
}

fn numbered(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |i| format!("{prefix}_{i}"))
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.opts.output.join(name)
    }

    fn written(&self, path: &Path) {
        println!("wrote {}", path.display());
    }

    fn comments(&self, settings: String) -> Vec<String> {
        vec![format!("params {}", self.params.to_json()), format!("run {settings}")]
    }

    fn grid_size(&self) -> usize {
        self.opts.grid.unwrap_or(DEFAULT_GRID)
    }

    fn lambda(&self) -> f64 {
        self.prefs.risk_aversion
    }

    /// `T*` and whether it is finite, unbounded or beyond the scanned range.
    fn t_star(&self) -> Result<(Option<f64>, &'static str)> {
        if self.lambda() == 0.0 {
            let t = strategy::single_asset_case(&self.market, &self.prefs)?.t_star;
            return Ok(if t.is_finite() { (Some(t), "finite") } else { (None, "infinite") });
        }
        let red = riccati::reduce(&self.market, &self.prefs)?;
        let bound = (10.0 * self.horizon.tau()).max(1.0);
        Ok(match riccati::maximal_horizon(&red, bound, SINGULAR_TOL) {
            MaximalHorizon::Finite(t) => (Some(t), "finite"),
            MaximalHorizon::Infinite => (None, "infinite"),
            MaximalHorizon::BeyondScan(_) => (None, "beyond_scan"),
        })
    }

    fn curve_table(&self, gnuplot: bool) -> Result<Table> {
        let n = self.grid_size();
        let d = self.market.dim();
        let curve = strategy::trading_curve(&self.market, &self.prefs, &self.horizon, &self.state.q0, n)?;
        let merton = if gnuplot && self.lambda() > 0.0 {
            Some(strategy::merton_portfolio(&self.market, &self.prefs)?)
        } else {
            None
        };
        let mut columns: Vec<String> = vec!["time_years".into()];
        columns.extend(numbered("q", d));
        columns.extend(numbered("v", d));
        if merton.is_some() {
            columns.extend(numbered("merton", d));
        }
        let comments = self.comments(format!("curve grid={n}"));
        let mut table = if gnuplot { Table::dat(&comments, &columns) } else { Table::csv(&comments, &columns) };
        for k in 0..curve.len() {
            let mut row = vec![curve.grid[k]];
            row.extend(curve.holdings[k].iter());
            row.extend(curve.velocities[k].iter());
            if let Some(m) = &merton {
                row.extend(m.iter());
            }
            table.numbers(&row);
        }
        Ok(table)
    }

    fn curve(&self) -> Result<()> {
        let table = self.curve_table(false)?;
        let (q0, x0) = (&self.state.q0, self.state.x0());
        let w = strategy::value(&self.market, &self.prefs, &self.horizon, q0, x0)?.value;
        let stats = strategy::terminal_stats(&self.market, &self.prefs, &self.horizon, q0, x0)?;
        let (t_star, status) = self.t_star()?;
        let csv = self.path("curve.csv");
        table.write(&csv)?;
        self.written(&csv);
        let sidecar = self.path("curve.json");
        write_json(
            &sidecar,
            json!({
                "W": num(w),
                "mean": num(stats.mean),
                "variance": num(stats.variance),
                "err": num(stats.err),
                "dp": num(stats.dp),
                "T*": t_star.map_or(Value::Null, num),
                "T*_status": status,
                "grid": self.grid_size(),
                "params": serde_json::to_value(&self.params)?,
            }),
        )?;
        self.written(&sidecar);
        Ok(())
    }

    fn sweep(&self) -> (Vec<f64>, Sweep) {
        let n = self.opts.grid.unwrap_or(DEFAULT_FRONTIER_POINTS);
        let grid = log_grid(self.opts.lambda_min, self.opts.lambda_max, n);
        let sweep = frontier::sweep(&self.market, &self.state, &self.horizon, &grid);
        (grid, sweep)
    }

    fn frontier(&self) -> Result<()> {
        let (grid, sweep) = self.sweep();
        let columns: Vec<String> = ["lambda", "mean", "variance", "err", "dp", "flags"].map(String::from).to_vec();
        let comments = self.comments(format!(
            "frontier points={} lambda_min={} lambda_max={}",
            grid.len(),
            fmt_num(self.opts.lambda_min),
            fmt_num(self.opts.lambda_max)
        ));
        let mut table = Table::csv(&comments, &columns);
        let mut prev: Option<&FrontierPoint> = None;
        let (mut points, mut skipped) = (sweep.points.iter().peekable(), sweep.skipped.iter().peekable());
        for &lam in &grid {
            if let Some(p) = points.next_if(|p| p.lambda == lam) {
                let mut flags = Vec::new();
                if p.nonpositive_mean {
                    flags.push("nonpositive_mean".to_string());
                }
                if prev.is_some_and(|q| p.dp > q.dp) {
                    flags.push("dp_increase".to_string());
                    eprintln!("warning: default probability increases at lambda {}", fmt_num(lam));
                }
                let mut row: Vec<String> = [p.lambda, p.mean, p.variance, p.err, p.dp].map(fmt_num).to_vec();
                row.push(flags.join("|"));
                table.row(&row);
                prev = Some(p);
            } else if let Some(s) = skipped.next_if(|s| s.lambda == lam) {
                let reason = s.reason.to_string().replace(',', ";");
                eprintln!("warning: lambda {} skipped: {reason}", fmt_num(lam));
                let mut row = vec![fmt_num(lam)];
                row.extend(std::iter::repeat_n(String::new(), 4));
                row.push(format!("skipped: {reason}"));
                table.row(&row);
            }
        }
        let csv = self.path("frontier.csv");
        table.write(&csv)?;
        self.written(&csv);
        Ok(())
    }

    fn calibrate(&self) -> Result<()> {
        let c = frontier::calibrate(
            &self.market,
            &self.state,
            &self.horizon,
            self.opts.target_dp,
            self.opts.lambda_min,
            self.opts.lambda_max,
        )?;
        if c.non_monotone {
            eprintln!("warning: default probability is not monotone in lambda over the scanned range");
        }
        let path = self.path("calibration.json");
        write_json(
            &path,
            json!({
                "lambda_star": num(c.lambda_star),
                "achieved_dp": num(c.achieved_dp),
                "target_dp": num(self.opts.target_dp),
                "bracket": [num(c.bracket.0), num(c.bracket.1)],
                "iterations": c.iterations,
                "non_monotone": c.non_monotone,
                "nonpositive_mean": c.nonpositive_mean,
                "params": serde_json::to_value(&self.params)?,
            }),
        )?;
        self.written(&path);
        Ok(())
    }

    fn simulate(&self) -> Result<()> {
        let (q0, x0) = (&self.state.q0, self.state.x0());
        let curve = strategy::trading_curve(&self.market, &self.prefs, &self.horizon, q0, self.grid_size())?;
        let stats = strategy::terminal_stats(&self.market, &self.prefs, &self.horizon, q0, x0)?;
        let steps = self.opts.steps.unwrap_or(DEFAULT_MC_STEPS);
        let r = verify::mc_simulate(&self.market, &self.state, &curve, self.opts.paths, steps, self.opts.seed)?;
        let (z_mean, z_var, z_dp) = (r.z_mean(stats.mean), r.z_var(stats.variance), r.z_dp(stats.dp));
        let pass = z_mean.abs() < MC_Z_LIMIT && z_var.abs() < MC_Z_LIMIT;
        let path = self.path("simulation.json");
        write_json(
            &path,
            json!({
                "n_paths": r.n_paths,
                "n_steps": r.n_steps,
                "seed": r.seed,
                "grid": self.grid_size(),
                "sample_mean": num(r.sample_mean),
                "sample_var": num(r.sample_var),
                "sample_dp": num(r.sample_dp),
                "std_error_mean": num(r.std_error_mean),
                "std_error_var": num(r.std_error_var),
                "skewness": num(r.skewness),
                "std_error_skewness": num(r.std_error_skewness),
                "analytic_mean": num(stats.mean),
                "analytic_variance": num(stats.variance),
                "analytic_dp": num(stats.dp),
                "z_mean": num(z_mean),
                "z_var": num(z_var),
                "z_dp": num(z_dp),
                "pass": pass,
                "params": serde_json::to_value(&self.params)?,
            }),
        )?;
        self.written(&path);
        if !pass {
            return Err(CliError::Oracle(format!(
                "Monte Carlo z-scores mean {} variance {} exceed {MC_Z_LIMIT}",
                fmt_num(z_mean),
                fmt_num(z_var)
            ))
            .into());
        }
        Ok(())
    }

    fn oracle_check(&self) -> Result<()> {
        let (q0, x0) = (&self.state.q0, self.state.x0());
        let n = self.opts.steps.unwrap_or(DEFAULT_ORACLE_STEPS);
        let w = strategy::value(&self.market, &self.prefs, &self.horizon, q0, x0)?.value;
        let qp = verify::qp_oracle(&self.market, &self.prefs, &self.horizon, q0, x0, n)?;
        let closed = strategy::trading_curve_on(&self.market, &self.prefs, &self.horizon, q0, &qp.curve.grid)?;
        let gap = (w - qp.objective).abs() / w.abs();
        let sup = closed.sup_distance(&qp.curve);
        let pass = gap < ORACLE_VALUE_TOL && sup < ORACLE_CURVE_TOL;
        let path = self.path("oracle-check.json");
        write_json(
            &path,
            json!({
                "W": num(w),
                "qp_objective": num(qp.objective),
                "relative_gap": num(gap),
                "curve_sup_gap": num(sup),
                "n_steps": n,
                "value_tolerance": num(ORACLE_VALUE_TOL),
                "curve_tolerance": num(ORACLE_CURVE_TOL),
                "pass": pass,
                "params": serde_json::to_value(&self.params)?,
            }),
        )?;
        self.written(&path);
        if !pass {
            return Err(CliError::Oracle(format!(
                "relative gap {} or curve gap {} above tolerance",
                fmt_num(gap),
                fmt_num(sup)
            ))
            .into());
        }
        Ok(())
    }

    fn perturbation_rows(&self, epsilons: &[f64]) -> Result<strategy::PerturbationReport> {
        if self.market.dim() != 1 {
            return Err(CliError::Input(format!(
                "perturbation needs a single asset, got d = {}",
                self.market.dim()
            ))
            .into());
        }
        Ok(strategy::perturbation_report(
            &self.market,
            &self.prefs,
            &self.horizon,
            self.state.q0[0],
            self.state.x0(),
            epsilons,
        )?)
    }

    fn perturbation(&self, epsilons: &[f64]) -> Result<()> {
        let report = self.perturbation_rows(epsilons)?;
        let columns: Vec<String> = [
            "epsilon",
            "W",
            "W_merton",
            "correction",
            "fitted_exponent",
            "predicted",
            "terminal_holding",
        ]
        .map(String::from)
        .to_vec();
        let listed: Vec<String> = epsilons.iter().map(|&e| fmt_num(e)).collect();
        let mut table = Table::csv(&self.comments(format!("perturbation epsilons={}", listed.join(";"))), &columns);
        for r in &report.rows {
            table.numbers(&[
                r.epsilon,
                r.w,
                r.w_merton,
                r.correction,
                report.fitted_exponent,
                r.predicted,
                r.terminal_holding,
            ]);
        }
        let csv = self.path("perturbation.csv");
        table.write(&csv)?;
        self.written(&csv);
        println!("fitted exponent {}", fmt_num(report.fitted_exponent));
        Ok(())
    }

    fn plots(&self) -> Result<()> {
        let dir = self.path("plots");
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

        let curve = dir.join("curve.dat");
        self.curve_table(true)?.write(&curve)?;
        self.written(&curve);

        let (grid, sweep) = self.sweep();
        let columns: Vec<String> = ["lambda", "variance", "mean", "dp", "err"].map(String::from).to_vec();
        let comments = self.comments(format!("frontier points={}", grid.len()));
        let mut table = Table::dat(&comments, &columns);
        for p in &sweep.points {
            table.numbers(&[p.lambda, p.variance, p.mean, p.dp, p.err]);
        }
        let path = dir.join("frontier.dat");
        table.write(&path)?;
        self.written(&path);

        if self.market.dim() == 1 {
            let eps = log_grid(1e-4, 1e-1, 13);
            let report = self.perturbation_rows(&eps)?;
            let columns: Vec<String> = ["epsilon", "abs_correction", "abs_predicted"].map(String::from).to_vec();
            let mut table = Table::dat(&self.comments("perturbation".into()), &columns);
            for r in &report.rows {
                table.numbers(&[r.epsilon, r.correction.abs(), r.predicted.abs()]);
            }
            let path = dir.join("perturbation.dat");
            table.write(&path)?;
            self.written(&path);
        }
        Ok(())
    }
}
