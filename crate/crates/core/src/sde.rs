//! Seeded Euler–Maruyama simulation of `dX = b dt + sqrt(2a) dW` with running
//! integrals of a potential, Feynman–Kac log-mean-exp estimates, hitting-time
//! statistics and occupation measures.
//!
//! Path `i` draws from ChaCha8 seeded with the run seed on stream `i`, and
//! every reduction runs in path order, so results do not depend on the
//! number of worker threads.

use std::io::{self, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::EvalError;
use crate::field::{ScalarField, VectorField};
use crate::grid::{CoefficientSet, Grid};
use crate::stats::{self, LinearFit, LogMean};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("state became non-finite on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },
    #[error("effective sample size {ess:.2} below 10 at t = {t}")]
    DegenerateWeights { t: f64, ess: f64 },
    #[error("no path reached the target ball ({n_paths} paths)")]
    NoReturns { n_paths: usize },
    #[error("invalid simulation setup: {0}")]
    BadConfig(String),
    #[error("ensemble was simulated without {0}")]
    Missing(&'static str),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExplosionPolicy {
    /// Mark the path dead and exclude it from every statistic.
    #[default]
    Drop,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetBall {
    pub center: [f64; 2],
    pub radius: f64,
}

impl TargetBall {
    pub fn centered(radius: f64) -> Self {
        TargetBall {
            center: [0.0; 2],
            radius,
        }
    }

    fn contains(&self, x: &[f64; 2]) -> bool {
        let d0 = x[0] - self.center[0];
        let d1 = x[1] - self.center[1];
        d0 * d0 + d1 * d1 <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Excursions beyond this radius are timed; a grid drift is extrapolated
    /// by nearest-node values there.
    pub box_radius: Option<f64>,
    /// Keep every `record_stride`-th state (0 keeps none).
    pub record_stride: usize,
    /// Checkpoint times; empty means `horizon·{0.1, …, 1.0}`.
    pub checkpoints: Vec<f64>,
    pub on_explosion: ExplosionPolicy,
    pub target: Option<TargetBall>,
    /// Freeze a path once it enters the target.
    pub stop_at_target: bool,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            dt,
            horizon,
            n_paths,
            seed,
            box_radius: None,
            record_stride: 0,
            checkpoints: Vec::new(),
            on_explosion: ExplosionPolicy::Drop,
            target: None,
            stop_at_target: false,
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn checkpoint_steps(&self) -> Vec<usize> {
        let times: Vec<f64> = if self.checkpoints.is_empty() {
            (1..=10).map(|k| self.horizon * k as f64 / 10.0).collect()
        } else {
            self.checkpoints.clone()
        };
        times.iter().map(|t| (t / self.dt).round() as usize).collect()
    }

    fn validate(&self, process: &Process) -> Result<(), SimError> {
        if !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(SimError::BadConfig("dt and horizon must be positive".into()));
        }
        if self.n_paths == 0 {
            return Err(SimError::BadConfig("n_paths must be at least 1".into()));
        }
        if let (Some(b), Some(r)) = (self.box_radius, process.drift.grid_radius()) {
            if b > r {
                return Err(SimError::BadConfig(format!(
                    "box radius {b} exceeds the drift grid radius {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Drift, diagonal diffusion `a` (`σ = sqrt(2a)` per axis) and the potential
/// whose running integral is accumulated.
#[derive(Debug, Clone)]
pub struct Process {
    pub dim: usize,
    pub drift: VectorField,
    pub a: Vec<ScalarField>,
    pub integrand: Option<ScalarField>,
}

impl Process {
    /// Base process of a coefficient set, integrating `f`.
    pub fn from_coefficients(c: &CoefficientSet) -> Self {
        Process {
            dim: c.dim,
            drift: VectorField::from_expressions(&c.b),
            a: c.a.iter().map(ScalarField::from_expression).collect(),
            integrand: Some(ScalarField::from_expression(&c.f)),
        }
    }

    pub fn with_drift(mut self, drift: VectorField) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_integrand(mut self, f: Option<ScalarField>) -> Self {
        self.integrand = f;
        self
    }
}

/// States beyond this magnitude count as explosions.
pub const EXPLOSION: f64 = 1e100;

/// What a single path did, beyond the visited states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEnd {
    /// `(τ, X_τ, S_τ)` at the first entrance into the target.
    pub hit: Option<(f64, [f64; 2], f64)>,
    pub steps_outside: usize,
    pub steps: usize,
    pub exploded_at: Option<usize>,
}

/// Simulates path `path`, calling `visit(step, t, x, s)` at step 0 and after
/// each Euler step.
pub fn run_path<F>(
    process: &Process,
    x0: &[f64],
    cfg: &SimConfig,
    path: usize,
    mut visit: F,
) -> Result<PathEnd, EvalError>
where
    F: FnMut(usize, f64, &[f64; 2], f64),
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(path as u64);
    let dim = process.dim;
    let dt = cfg.dt;
    let sqdt = dt.sqrt();
    let n_steps = cfg.n_steps();
    let box2 = cfg.box_radius.map(|r| r * r);
    let mut x = [0.0; 2];
    x[..dim].copy_from_slice(&x0[..dim]);
    let mut s = 0.0;
    let mut b = [0.0; 2];
    let mut end = PathEnd {
        hit: None,
        steps_outside: 0,
        steps: 0,
        exploded_at: None,
    };
    visit(0, 0.0, &x, s);
    if let Some(t) = &cfg.target {
        if t.contains(&x) {
            end.hit = Some((0.0, x, 0.0));
            if cfg.stop_at_target {
                return Ok(end);
            }
        }
    }
    for step in 1..=n_steps {
        if let Some(f) = &process.integrand {
            s += f.eval(&x)? * dt;
        }
        process.drift.eval(&x, &mut b)?;
        for ax in 0..dim {
            let a = process.a[ax].eval(&x)?;
            let z: f64 = StandardNormal.sample(&mut rng);
            x[ax] += b[ax] * dt + (2.0 * a).sqrt() * sqdt * z;
        }
        end.steps = step;
        if !(x[0].abs() < EXPLOSION && x[1].abs() < EXPLOSION && s.is_finite()) {
            end.exploded_at = Some(step);
            return Ok(end);
        }
        if let Some(b2) = box2 {
            if x[0] * x[0] + x[1] * x[1] > b2 {
                end.steps_outside += 1;
            }
        }
        let t = step as f64 * dt;
        visit(step, t, &x, s);
        if end.hit.is_none() {
            if let Some(target) = &cfg.target {
                if target.contains(&x) {
                    end.hit = Some((t, x, s));
                    if cfg.stop_at_target {
                        return Ok(end);
                    }
                }
            }
        }
    }
    Ok(end)
}

/// Runs `per_path` for every path (in parallel) and returns the results in
/// path order.
pub fn map_paths<T, F>(n_paths: usize, per_path: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n_paths).into_par_iter().map(per_path).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: f64,
    pub path: usize,
    pub x: [f64; 2],
    pub s: f64,
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub dim: usize,
    pub n_paths: usize,
    pub checkpoints: Vec<f64>,
    /// `states[p * checkpoints.len() + k]`
    pub states: Vec<[f64; 2]>,
    /// Running integrals, same layout as `states`.
    pub integrals: Vec<f64>,
    pub alive: Vec<bool>,
    pub has_integrals: bool,
    /// Whether each path ever left the box.
    pub exited_box: Vec<bool>,
    pub excursion_fraction: f64,
    pub hits: Vec<Option<(f64, [f64; 2], f64)>>,
    pub records: Vec<Record>,
    pub horizon: f64,
    pub target: Option<TargetBall>,
}

struct PathOut {
    states: Vec<[f64; 2]>,
    integrals: Vec<f64>,
    records: Vec<Record>,
    end: PathEnd,
}

pub fn simulate(process: &Process, x0: &[f64], cfg: &SimConfig) -> Result<PathEnsemble, SimError> {
    cfg.validate(process)?;
    if x0.len() != process.dim {
        return Err(SimError::BadConfig(format!(
            "start point has {} coordinates, process is {}-dimensional",
            x0.len(),
            process.dim
        )));
    }
    if let Some(b) = cfg.box_radius {
        if x0.iter().map(|v| v * v).sum::<f64>().sqrt() > b {
            return Err(SimError::BadConfig("start point lies outside the box".into()));
        }
    }
    let ck = cfg.checkpoint_steps();
    let ncp = ck.len();
    let stride = cfg.record_stride;
    let outs: Vec<Result<PathOut, EvalError>> = map_paths(cfg.n_paths, |p| {
        let mut states = vec![[0.0; 2]; ncp];
        let mut integrals = vec![0.0; ncp];
        let mut records = Vec::new();
        let mut next = 0;
        let mut last = ([0.0; 2], 0.0);
        let end = run_path(process, x0, cfg, p, |step, t, x, s| {
            last = (*x, s);
            while next < ncp && ck[next] == step {
                states[next] = *x;
                integrals[next] = s;
                next += 1;
            }
            if stride > 0 && step % stride == 0 {
                records.push(Record { t, path: p, x: *x, s });
            }
        })?;
        // frozen after stopping at the target
        for k in next..ncp {
            states[k] = last.0;
            integrals[k] = last.1;
        }
        Ok(PathOut {
            states,
            integrals,
            records,
            end,
        })
    });
    let mut ens = PathEnsemble {
        dim: process.dim,
        n_paths: cfg.n_paths,
        checkpoints: ck.iter().map(|&k| k as f64 * cfg.dt).collect(),
        states: Vec::with_capacity(cfg.n_paths * ncp),
        integrals: Vec::with_capacity(cfg.n_paths * ncp),
        alive: Vec::with_capacity(cfg.n_paths),
        has_integrals: process.integrand.is_some(),
        exited_box: Vec::with_capacity(cfg.n_paths),
        excursion_fraction: 0.0,
        hits: Vec::with_capacity(cfg.n_paths),
        records: Vec::new(),
        horizon: cfg.n_steps() as f64 * cfg.dt,
        target: cfg.target,
    };
    let mut outside = 0usize;
    let mut total = 0usize;
    for (p, out) in outs.into_iter().enumerate() {
        let out = out?;
        if let Some(step) = out.end.exploded_at {
            if cfg.on_explosion == ExplosionPolicy::Abort {
                return Err(SimError::NonFiniteState { path: p, step });
            }
        }
        ens.alive.push(out.end.exploded_at.is_none());
        ens.states.extend(out.states);
        ens.integrals.extend(out.integrals);
        ens.exited_box.push(out.end.steps_outside > 0);
        ens.hits.push(out.end.hit);
        ens.records.extend(out.records);
        outside += out.end.steps_outside;
        total += out.end.steps;
    }
    ens.excursion_fraction = if total > 0 { outside as f64 / total as f64 } else { 0.0 };
    Ok(ens)
}

impl PathEnsemble {
    pub fn n_checkpoints(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn state(&self, path: usize, k: usize) -> [f64; 2] {
        self.states[path * self.n_checkpoints() + k]
    }

    pub fn integral(&self, path: usize, k: usize) -> f64 {
        self.integrals[path * self.n_checkpoints() + k]
    }

    pub fn alive_paths(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_paths).filter(move |&p| self.alive[p])
    }

    /// Whether more than 5% of simulated time was spent outside the box.
    pub fn unreliable(&self) -> bool {
        self.excursion_fraction > 0.05
    }

    /// Terminal states at checkpoint `k` for the live paths.
    pub fn terminal_component(&self, k: usize, axis: usize) -> Vec<f64> {
        self.alive_paths().map(|p| self.state(p, k)[axis]).collect()
    }

    /// CSV with columns `t,path_id,x1[,x2],S` from the thinned records.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        if self.dim == 1 {
            writeln!(w, "t,path_id,x1,S")?;
        } else {
            writeln!(w, "t,path_id,x1,x2,S")?;
        }
        for r in &self.records {
            if self.dim == 1 {
                writeln!(w, "{},{},{},{}", r.t, r.path, r.x[0], r.s)?;
            } else {
                writeln!(w, "{},{},{},{},{}", r.t, r.path, r.x[0], r.x[1], r.s)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkPoint {
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkEstimate {
    pub lambda_shift: f64,
    pub points: Vec<FkPoint>,
    /// Least-squares slope of `L(T)` over the last half of the checkpoints.
    pub slope: f64,
    pub slope_stderr: f64,
    /// Slopes over the first and second part of that window.
    pub window_slopes: (f64, f64),
    /// The two window slopes disagree by more than three standard errors.
    pub unstable: bool,
}

/// `L(T) = log mean exp(S_i(T) − λT) g(X_T)` at every checkpoint.
pub fn feynman_kac(
    ens: &PathEnsemble,
    lambda_shift: f64,
    g: Option<&ScalarField>,
) -> Result<FkEstimate, SimError> {
    if !ens.has_integrals {
        return Err(SimError::Missing("a running integral"));
    }
    let alive: Vec<usize> = ens.alive_paths().collect();
    let ncp = ens.n_checkpoints();
    let mut points = Vec::with_capacity(ncp);
    let mut logw_all = Vec::with_capacity(ncp);
    for k in 0..ncp {
        let t = ens.checkpoints[k];
        let mut logw = Vec::with_capacity(alive.len());
        for &p in &alive {
            let mut v = ens.integral(p, k) - lambda_shift * t;
            if let Some(g) = g {
                let gv = g.eval(&ens.state(p, k))?;
                if gv < 0.0 {
                    return Err(SimError::BadConfig("weight function must be nonnegative".into()));
                }
                v += gv.ln();
            }
            logw.push(v);
        }
        let LogMean { value, stderr, ess } = stats::log_mean_exp(&logw);
        if ess < 10.0 {
            return Err(SimError::DegenerateWeights { t, ess });
        }
        points.push(FkPoint { t, value, stderr, ess });
        logw_all.push(logw);
    }
    let first = ncp / 2;
    let window: Vec<usize> = (first..ncp).collect();
    let (slope, slope_stderr) = if window.len() >= 2 {
        slope_with_influence(&points, &logw_all, &window)
    } else {
        (f64::NAN, f64::NAN)
    };
    let (window_slopes, unstable) = if window.len() >= 4 {
        let mid = window.len() / 2;
        let a: Vec<usize> = window[..=mid].to_vec();
        let b: Vec<usize> = window[mid..].to_vec();
        let (sa, ea) = slope_with_influence(&points, &logw_all, &a);
        let (sb, eb) = slope_with_influence(&points, &logw_all, &b);
        ((sa, sb), (sa - sb).abs() > 3.0 * (ea * ea + eb * eb).sqrt())
    } else {
        ((slope, slope), false)
    };
    Ok(FkEstimate {
        lambda_shift,
        points,
        slope,
        slope_stderr,
        window_slopes,
        unstable,
    })
}

// Slope of L over `window` and its standard error from the per-path
// influence `Σ_k c_k (w_ik / mean_k − 1)`.
fn slope_with_influence(points: &[FkPoint], logw: &[Vec<f64>], window: &[usize]) -> (f64, f64) {
    let x: Vec<f64> = window.iter().map(|&k| points[k].t).collect();
    let y: Vec<f64> = window.iter().map(|&k| points[k].value).collect();
    let c = stats::slope_weights(&x);
    let slope: f64 = c.iter().zip(&y).map(|(a, b)| a * b).sum();
    let n = logw[window[0]].len();
    let mut infl = vec![0.0; n];
    for (ci, &k) in c.iter().zip(window) {
        let l = points[k].value;
        for (i, v) in logw[k].iter().enumerate() {
            infl[i] += ci * ((v - l).exp() - 1.0);
        }
    }
    let nf = n as f64;
    let var = infl.iter().map(|v| v * v).sum::<f64>() / (nf * (nf - 1.0).max(1.0));
    (slope, var.sqrt())
}

/// Mean over paths of the time average `S_i(T)/T` at the last checkpoint.
pub fn ergodic_average(ens: &PathEnsemble) -> Result<(f64, f64), SimError> {
    if !ens.has_integrals {
        return Err(SimError::Missing("a running integral"));
    }
    let k = ens.n_checkpoints() - 1;
    let t = ens.checkpoints[k];
    let v: Vec<f64> = ens.alive_paths().map(|p| ens.integral(p, k) / t).collect();
    Ok(stats::mean_stderr(&v))
}

/// `E[exp(∫_0^τ (f − λ)) g(X_τ); τ ≤ T]` for the first entrance time `τ`
/// into the target ball, with its standard error.
pub fn stopped_feynman_kac(
    ens: &PathEnsemble,
    lambda: f64,
    g: &ScalarField,
) -> Result<(f64, f64), SimError> {
    if ens.target.is_none() {
        return Err(SimError::Missing("a target ball"));
    }
    let mut v = Vec::with_capacity(ens.n_paths);
    for p in ens.alive_paths() {
        v.push(match ens.hits[p] {
            Some((tau, x, s)) => (s - lambda * tau).exp() * g.eval(&x)?,
            None => 0.0,
        });
    }
    Ok(stats::mean_stderr(&v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HittingStats {
    pub times: Vec<f64>,
    /// Kaplan–Meier estimate of `P(τ > t)`.
    pub survival: Vec<f64>,
    pub hits: usize,
    pub n_paths: usize,
    pub fitted_rate: f64,
    pub exp_fit: LinearFit,
    pub power_fit: Option<LinearFit>,
    pub geometric: bool,
    pub delta: f64,
    /// Empirical `E[e^{δ min(τ, T)}]`, a lower bound for `E[e^{δτ}]`.
    pub e_delta_tau: f64,
}

pub fn hitting_stats(ens: &PathEnsemble) -> Result<HittingStats, SimError> {
    if ens.target.is_none() {
        return Err(SimError::Missing("a target ball"));
    }
    let horizon = ens.horizon;
    // (time, event) with dropped paths censored at the horizon of their life
    let mut events: Vec<(f64, bool)> = Vec::with_capacity(ens.n_paths);
    for p in 0..ens.n_paths {
        match (ens.alive[p], ens.hits[p]) {
            (true, Some((t, _, _))) => events.push((t, true)),
            (true, None) => events.push((horizon, false)),
            (false, Some((t, _, _))) => events.push((t, true)),
            (false, None) => events.push((0.0, false)),
        }
    }
    let hits = events.iter().filter(|e| e.1).count();
    if hits == 0 {
        return Err(SimError::NoReturns {
            n_paths: ens.n_paths,
        });
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    let n_grid = 50;
    let times: Vec<f64> = (1..=n_grid).map(|j| horizon * j as f64 / n_grid as f64).collect();
    let mut survival = Vec::with_capacity(n_grid);
    let mut at_risk = events.len() as f64;
    let mut s = 1.0;
    let mut idx = 0;
    let mut at_risk_at = Vec::with_capacity(n_grid);
    for &t in &times {
        while idx < events.len() && events[idx].0 <= t {
            if events[idx].1 && at_risk > 0.0 {
                s *= 1.0 - 1.0 / at_risk;
            }
            at_risk -= 1.0;
            idx += 1;
        }
        survival.push(s);
        at_risk_at.push(at_risk);
    }
    // past the bulk of the returns, while enough paths remain at risk
    let tail: Vec<usize> = (0..n_grid)
        .filter(|&j| survival[j] <= 0.5 && survival[j] > 0.0 && at_risk_at[j] >= 20.0)
        .collect();
    let (exp_fit, power_fit) = if tail.len() >= 4 {
        let t: Vec<f64> = tail.iter().map(|&j| times[j]).collect();
        let ls: Vec<f64> = tail.iter().map(|&j| survival[j].ln()).collect();
        let lt: Vec<f64> = t.iter().map(|v| v.ln()).collect();
        (stats::linear_fit(&t, &ls), Some(stats::linear_fit(&lt, &ls)))
    } else {
        (
            LinearFit {
                slope: 0.0,
                intercept: 0.0,
                r_squared: 0.0,
                rss: f64::INFINITY,
            },
            None,
        )
    };
    let fitted_rate = -exp_fit.slope;
    let geometric = fitted_rate > 0.0
        && exp_fit.r_squared >= 0.95
        && power_fit.is_some_and(|p| exp_fit.rss < p.rss);
    let delta = 0.5 * fitted_rate.max(0.0);
    let live: Vec<f64> = events
        .iter()
        .map(|&(t, hit)| (delta * if hit { t } else { horizon }).exp())
        .collect();
    let e_delta_tau = live.iter().sum::<f64>() / live.len() as f64;
    Ok(HittingStats {
        times,
        survival,
        hits,
        n_paths: ens.n_paths,
        fitted_rate,
        exp_fit,
        power_fit,
        geometric,
        delta,
        e_delta_tau,
    })
}

/// Time-averaged occupation of grid cells after `burn_in`, from the thinned
/// records.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupation {
    pub grid: Arc<Grid>,
    /// Probability mass per node cell (sums to 1 over the grid).
    pub mass: Vec<f64>,
    /// Fraction of records that fell outside the grid.
    pub outside: f64,
}

impl Occupation {
    pub fn density(&self) -> Vec<f64> {
        let v = self.grid.cell_volume();
        self.mass.iter().map(|m| m / v).collect()
    }

    /// `∫ φ dμ̂`
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.mass.iter().zip(values).map(|(m, v)| m * v).sum()
    }
}

pub fn occupation_measure(ens: &PathEnsemble, grid: Arc<Grid>, burn_in: f64) -> Result<Occupation, SimError> {
    if ens.records.is_empty() {
        return Err(SimError::Missing("recorded states (record_stride = 0)"));
    }
    let h = grid.h();
    let mut counts = vec![0.0; grid.len()];
    let mut inside = 0.0;
    let mut outside = 0.0;
    for r in &ens.records {
        if r.t < burn_in || !ens.alive[r.path] {
            continue;
        }
        let k = [(r.x[0] / h).round() as i64, (r.x[1] / h).round() as i64];
        match grid.index_of(k) {
            Some(i) => {
                counts[i] += 1.0;
                inside += 1.0;
            }
            None => outside += 1.0,
        }
    }
    if inside == 0.0 {
        return Err(SimError::Missing("records inside the grid after burn-in"));
    }
    counts.iter_mut().for_each(|c| *c /= inside);
    Ok(Occupation {
        grid,
        mass: counts,
        outside: outside / (inside + outside),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;

    fn process(a: &str, b: &str, f: &str) -> Process {
        Process::from_coefficients(&CoefficientSet::parse(&[a], &[b], f).unwrap())
    }

    #[test]
    fn brownian_variance_scales_with_time() {
        let cfg = SimConfig::new(1e-2, 1.0, 10_000, 7);
        let ens = simulate(&process("1", "0", "0"), &[0.0], &cfg).unwrap();
        let xs = ens.terminal_component(9, 0);
        let n = xs.len() as f64;
        let var = xs.iter().map(|v| v * v).sum::<f64>() / n;
        // Var of the sample second moment for N(0, 2): 2·4/n
        let se = (8.0 / n).sqrt();
        assert!((var - 2.0).abs() < 3.0 * se, "{var}");
    }

    #[test]
    fn constant_integrand_has_exact_fk_value() {
        let mut cfg = SimConfig::new(1e-2, 2.0, 200, 1);
        cfg.checkpoints = vec![0.5, 1.0, 1.5, 2.0];
        let ens = simulate(&process("1", "-x", "0.75"), &[0.3], &cfg).unwrap();
        let fk = feynman_kac(&ens, 0.25, None).unwrap();
        for p in &fk.points {
            assert!((p.value - 0.5 * p.t).abs() < 1e-12);
            assert!(p.stderr < 1e-12);
        }
        assert!((fk.slope - 0.5).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_ensemble() {
        let mut cfg = SimConfig::new(1e-2, 1.0, 50, 99);
        cfg.record_stride = 10;
        let p = process("0.5", "-x", "exp(-x^2)");
        let a = simulate(&p, &[0.1], &cfg).unwrap();
        let b = simulate(&p, &[0.1], &cfg).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.integrals, b.integrals);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert!(String::from_utf8(ca).unwrap().starts_with("t,path_id,x1,S\n0,0,0.1,0\n"));
        cfg.seed = 100;
        let c = simulate(&p, &[0.1], &cfg).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn explosive_drift_is_dropped_or_aborts() {
        let mut cfg = SimConfig::new(0.1, 20.0, 4, 3);
        let p = process("1", "x^3", "0");
        let ens = simulate(&p, &[2.0], &cfg).unwrap();
        assert!(ens.alive.iter().all(|a| !a));
        cfg.on_explosion = ExplosionPolicy::Abort;
        assert!(matches!(simulate(&p, &[2.0], &cfg), Err(SimError::NonFiniteState { path: 0, .. })));
    }

    #[test]
    fn outward_linear_drift_escapes() {
        // X_t = e^{2t}(x + martingale): |X_5| > 10 almost surely
        let cfg = SimConfig::new(1e-3, 5.0, 1000, 5);
        let ens = simulate(&process("1", "2*x", "0"), &[0.0], &cfg).unwrap();
        let far = ens.terminal_component(9, 0).iter().filter(|v| v.abs() > 10.0).count();
        assert!(far as f64 / 1000.0 > 0.99);
    }

    #[test]
    fn transient_base_never_returns() {
        let mut cfg = SimConfig::new(1e-3, 10.0, 2000, 11);
        cfg.target = Some(TargetBall::centered(1.0));
        cfg.stop_at_target = true;
        let ens = simulate(&process("1", "2*x", "0"), &[3.5], &cfg).unwrap();
        assert!(matches!(hitting_stats(&ens), Err(SimError::NoReturns { .. })));
    }

    #[test]
    fn stable_drift_has_geometric_return_tail() {
        let mut cfg = SimConfig::new(1e-2, 20.0, 4000, 2);
        cfg.target = Some(TargetBall::centered(1.0));
        cfg.stop_at_target = true;
        let ens = simulate(&process("1", "-0.5*x", "0"), &[4.0], &cfg).unwrap();
        let hs = hitting_stats(&ens).unwrap();
        assert!(hs.geometric, "{hs:?}");
        assert!(hs.e_delta_tau.is_finite());
    }

    #[test]
    fn brownian_return_tail_is_not_geometric() {
        let mut cfg = SimConfig::new(1e-2, 100.0, 4000, 2);
        cfg.target = Some(TargetBall::centered(1.0));
        cfg.stop_at_target = true;
        let ens = simulate(&process("1", "0", "0"), &[2.0], &cfg).unwrap();
        let hs = hitting_stats(&ens).unwrap();
        assert!(hs.hits > 0 && !hs.geometric, "{hs:?}");
    }

    #[test]
    fn occupation_of_ou_is_gaussian() {
        let mut cfg = SimConfig::new(1e-2, 40.0, 400, 4);
        cfg.record_stride = 5;
        let ens = simulate(&process("1", "-2*x", "0"), &[0.0], &cfg).unwrap();
        let grid = Arc::new(Grid::ball_with_spacing(1, 4.0, 10.0).unwrap());
        let occ = occupation_measure(&ens, grid.clone(), 2.0).unwrap();
        let dens = occ.density();
        let l1: f64 = (0..grid.len())
            .map(|i| (dens[i] - stats::normal_pdf(grid.point(i)[0], 0.0, 0.5)).abs() * grid.h())
            .sum();
        assert!(l1 < 0.05, "{l1}");
    }

    #[test]
    fn stopped_functional_needs_target() {
        let cfg = SimConfig::new(1e-2, 1.0, 5, 1);
        let ens = simulate(&process("1", "0", "0"), &[0.0], &cfg).unwrap();
        let g = ScalarField::from_expression(&"1".parse::<Expression>().unwrap());
        assert!(matches!(stopped_feynman_kac(&ens, 0.0, &g), Err(SimError::Missing(_))));
    }
}
