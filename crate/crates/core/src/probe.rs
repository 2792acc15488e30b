//! Diagnostics built on the exhaustion ladder and the path simulator:
//! strict-monotonicity probes, ground-state classification, Green-measure
//! and pinned ergodic checks, and Lyapunov certificates.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::exhaustion::{gradient_field, lambda_star, twisted_drift, ExhaustionError, GroundState, LadderConfig};
use crate::expr::{EvalError, Expression};
use crate::field::{GridField, ScalarField, VectorField};
use crate::grid::{AssemblyError, CoefficientSet, Control, DiscreteOperator, Grid, GridError};
use crate::sde::{
    feynman_kac, hitting_stats, map_paths, run_path, simulate, ExplosionPolicy, HittingStats, Process, SimConfig,
    SimError, TargetBall,
};
use crate::sparse::{FactorError, Symbolic};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("bump does not vanish at the grid boundary: ring max {boundary_max:e} vs max {max:e}")]
    NonVanishingBump { boundary_max: f64, max: f64 },
    #[error("bump must be nonnegative and nontrivial: {0}")]
    InvalidBump(String),
    #[error("Lyapunov function not positive: minimum {min:e} at {at:?}")]
    NotPositive { min: f64, at: Vec<f64> },
    #[error("shifted Dirichlet problem is not solvable at lambda = {lambda}: {source}")]
    BelowSpectrum { lambda: f64, source: FactorError },
    #[error("{0}")]
    BadInput(String),
    #[error(transparent)]
    Exhaustion(#[from] ExhaustionError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Default bump `exp(−|x|²)`.
pub fn default_bump(dim: usize) -> Expression {
    let src = if dim == 1 { "exp(-(x1^2))" } else { "exp(-(x1^2 + x2^2))" };
    src.parse().expect("static bump parses")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub bump: Expression,
    pub eps: Vec<f64>,
    pub tol_mono: f64,
    /// Ladder shared by every run of the probe; early stopping is disabled.
    pub ladder: LadderConfig,
}

impl ProbeConfig {
    pub fn for_dim(dim: usize) -> Self {
        ProbeConfig {
            bump: default_bump(dim),
            eps: vec![0.5, 0.25, 0.125],
            tol_mono: 1e-3,
            ladder: LadderConfig::for_dim(dim),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MonotonicityVerdict {
    StrictAtF,
    StrictOnRightOnly,
    Flat,
    Inconclusive,
}

/// One `ε` rung of a monotonicity probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpProbe {
    pub eps: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub left_slope: f64,
    pub right_slope: f64,
    /// Slopes of the `1/r²`-extrapolated values, used for the verdict.
    pub left_extrapolated: f64,
    pub right_extrapolated: f64,
    pub sandwich: bool,
    pub lipschitz: bool,
    pub convex: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub lambda_star_f: f64,
    pub lambda_star_f_extrapolated: f64,
    pub probes: Vec<BumpProbe>,
    pub bump: String,
    pub bump_sup: f64,
    pub tol_mono: f64,
    pub verdict: MonotonicityVerdict,
}

impl MonotonicityReport {
    pub fn left_slopes(&self) -> Vec<f64> {
        self.probes.iter().map(|p| p.left_slope).collect()
    }

    pub fn right_slopes(&self) -> Vec<f64> {
        self.probes.iter().map(|p| p.right_slope).collect()
    }

    pub fn sandwich_ok(&self) -> bool {
        self.probes.iter().all(|p| p.sandwich)
    }

    pub fn lipschitz_ok(&self) -> bool {
        self.probes.iter().all(|p| p.lipschitz)
    }

    pub fn convex_ok(&self) -> bool {
        self.probes.iter().all(|p| p.convex)
    }
}

fn check_bump(bump: &Expression, grid: &Grid) -> Result<f64, ProbeError> {
    let mut max = f64::NEG_INFINITY;
    let mut ring = 0.0f64;
    for i in 0..grid.len() {
        let v = bump.eval_at(grid.point(i), None)?;
        if v < 0.0 {
            return Err(ProbeError::InvalidBump(format!(
                "value {v:e} at {:?}",
                grid.point(i)
            )));
        }
        max = max.max(v);
        if grid.on_boundary_ring(i) {
            ring = ring.max(v);
        }
    }
    if !(max > 0.0) {
        return Err(ProbeError::InvalidBump("identically zero on the grid".into()));
    }
    if ring >= 0.01 * max {
        return Err(ProbeError::NonVanishingBump {
            boundary_max: ring,
            max,
        });
    }
    Ok(max)
}

fn extrapolated(gs: &GroundState) -> f64 {
    gs.extrapolated.unwrap_or(gs.lambda_star)
}

fn verdict_of(left: f64, right: f64, tol: f64) -> MonotonicityVerdict {
    match (left > tol, right > tol) {
        (true, _) => MonotonicityVerdict::StrictAtF,
        (false, true) => MonotonicityVerdict::StrictOnRightOnly,
        (false, false) => MonotonicityVerdict::Flat,
    }
}

/// Probes `λ*` at `coeffs.f` in the directions `±ε·h`. Returns the report
/// and the ground state of the unperturbed run.
pub fn monotonicity_probe_with_ground_state(
    coeffs: &CoefficientSet,
    cfg: &ProbeConfig,
) -> Result<(MonotonicityReport, GroundState), ProbeError> {
    if cfg.eps.is_empty() || cfg.eps.iter().any(|e| !(*e > 0.0)) {
        return Err(ProbeError::BadInput("eps ladder must be nonempty and positive".into()));
    }
    let ladder = cfg.ladder.clone().fixed_rungs(cfg.ladder.max_rungs);
    let mut potentials = vec![coeffs.f.clone()];
    for &e in &cfg.eps {
        potentials.push(coeffs.f.plus_scaled(-e, &cfg.bump));
        potentials.push(coeffs.f.plus_scaled(e, &cfg.bump));
    }
    let runs: Vec<GroundState> = potentials
        .par_iter()
        .map(|f| lambda_star(&coeffs.with_f(f.clone()), &ladder))
        .collect::<Result<_, _>>()?;
    let base = &runs[0];
    let bump_sup = check_bump(&cfg.bump, &base.grid)?;
    let l0 = base.lambda_star;
    let x0 = extrapolated(base);
    let probes: Vec<BumpProbe> = cfg
        .eps
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let lm = runs[1 + 2 * k].lambda_star;
            let lp = runs[2 + 2 * k].lambda_star;
            let left = (l0 - lm) / eps;
            let right = (lp - l0) / eps;
            let cap = bump_sup + 1e-6;
            BumpProbe {
                eps,
                lambda_minus: lm,
                lambda_plus: lp,
                left_slope: left,
                right_slope: right,
                left_extrapolated: (x0 - extrapolated(&runs[1 + 2 * k])) / eps,
                right_extrapolated: (extrapolated(&runs[2 + 2 * k]) - x0) / eps,
                sandwich: lm <= l0 && l0 <= lp,
                lipschitz: left.abs() <= cap && right.abs() <= cap,
                convex: l0 <= 0.5 * (lm + lp) + 1e-8,
            }
        })
        .collect();
    let verdicts: Vec<_> = probes
        .iter()
        .map(|p| verdict_of(p.left_extrapolated, p.right_extrapolated, cfg.tol_mono))
        .collect();
    let verdict = if verdicts.iter().all(|v| *v == verdicts[0]) {
        verdicts[0]
    } else {
        MonotonicityVerdict::Inconclusive
    };
    let report = MonotonicityReport {
        lambda_star_f: l0,
        lambda_star_f_extrapolated: x0,
        probes,
        bump: cfg.bump.to_string(),
        bump_sup,
        tol_mono: cfg.tol_mono,
        verdict,
    };
    Ok((report, runs.into_iter().next().expect("base run")))
}

pub fn monotonicity_probe(coeffs: &CoefficientSet, cfg: &ProbeConfig) -> Result<MonotonicityReport, ProbeError> {
    monotonicity_probe_with_ground_state(coeffs, cfg).map(|(r, _)| r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroundStateVerdict {
    ExponentiallyErgodic,
    RecurrentNotExpErgodic,
    Transient,
    Inconclusive,
}

/// Return behaviour of the twisted process started outside the target.
#[derive(Debug, Clone, PartialEq)]
pub enum ReturnEvidence {
    Hitting(HittingStats),
    NoReturns { n_paths: usize },
}

impl ReturnEvidence {
    pub fn returns_observed(&self) -> bool {
        matches!(self, ReturnEvidence::Hitting(h) if h.hits > 0)
    }

    pub fn geometric(&self) -> bool {
        matches!(self, ReturnEvidence::Hitting(h) if h.geometric)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub verdict: GroundStateVerdict,
    /// Eigenvalue whose positive solution defines the twisted process.
    pub lambda: f64,
    pub lambda_star: f64,
    pub monotonicity: Option<MonotonicityReport>,
    pub returns: ReturnEvidence,
    /// Fraction of simulated time spent beyond the box radius.
    pub excursion_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyConfig {
    pub probe: ProbeConfig,
    /// Target, horizon and path count of the twisted simulation.
    pub sim: SimConfig,
    pub x0: Vec<f64>,
}

impl ClassifyConfig {
    pub fn for_dim(dim: usize) -> Self {
        let mut sim = SimConfig::new(1e-3, 20.0, 2000, 1);
        sim.target = Some(TargetBall::centered(1.0));
        sim.stop_at_target = true;
        let mut x0 = vec![0.0; dim];
        x0[0] = 3.0;
        ClassifyConfig {
            probe: ProbeConfig::for_dim(dim),
            sim,
            x0,
        }
    }
}

/// Combines the probe verdict with the twisted-process returns.
pub fn combine(mono: MonotonicityVerdict, returns: &ReturnEvidence) -> GroundStateVerdict {
    use GroundStateVerdict as G;
    use MonotonicityVerdict as M;
    match (mono, returns.returns_observed(), returns.geometric()) {
        (M::StrictAtF, _, true) => G::ExponentiallyErgodic,
        (M::StrictOnRightOnly, true, _) => G::RecurrentNotExpErgodic,
        (M::Flat, _, false) => G::Transient,
        (M::Inconclusive, false, _) => G::Transient,
        _ => G::Inconclusive,
    }
}

fn twisted_process(coeffs: &CoefficientSet, grid: Arc<Grid>, drift: &[[f64; 2]]) -> Process {
    Process::from_coefficients(coeffs)
        .with_drift(VectorField::Grid(GridField::vector(grid, drift)))
        .with_integrand(None)
}

fn observe_returns(process: &Process, x0: &[f64], sim: &SimConfig, grid: &Grid) -> Result<(ReturnEvidence, f64), ProbeError> {
    let mut sim = sim.clone();
    if sim.target.is_none() {
        return Err(ProbeError::BadInput("classification needs a target ball".into()));
    }
    if sim.box_radius.is_none() {
        sim.box_radius = Some(grid.radius() - 2.0 * grid.h());
    }
    let ens = simulate(process, x0, &sim)?;
    let evidence = match hitting_stats(&ens) {
        Ok(h) => ReturnEvidence::Hitting(h),
        Err(SimError::NoReturns { n_paths }) => ReturnEvidence::NoReturns { n_paths },
        Err(e) => return Err(e.into()),
    };
    Ok((evidence, ens.excursion_fraction))
}

/// Classifies the ground-state process of `coeffs` from the monotonicity
/// probe and the return behaviour of the twisted diffusion.
pub fn classify_ground_state(coeffs: &CoefficientSet, cfg: &ClassifyConfig) -> Result<Classification, ProbeError> {
    let (report, gs) = monotonicity_probe_with_ground_state(coeffs, &cfg.probe)?;
    let process = twisted_process(coeffs, gs.grid.clone(), &gs.twisted_drift);
    let (returns, excursion_fraction) = observe_returns(&process, &cfg.x0, &cfg.sim, &gs.grid)?;
    Ok(Classification {
        verdict: combine(report.verdict, &returns),
        lambda: gs.lambda_star,
        lambda_star: gs.lambda_star,
        monotonicity: Some(report),
        returns,
        excursion_fraction,
    })
}

/// Positive solution of `Lφ + (f − λ)φ = 0` on `grid` with `φ = 1` outside,
/// for `λ` above the Dirichlet eigenvalue of the grid.
pub fn shifted_dirichlet_solution(
    coeffs: &CoefficientSet,
    grid: Arc<Grid>,
    lambda: f64,
) -> Result<(DiscreteOperator, Vec<f64>), ProbeError> {
    let op = DiscreteOperator::assemble(grid.clone(), coeffs, Control::None)?;
    let outside = |k: [i64; 2]| if grid.index_of(k).is_none() { 1.0 } else { 0.0 };
    let rhs = op.apply_stencil(outside, false);
    let order = grid.elimination_order();
    let lu = Symbolic::analyze(&op.matrix, Some(&order))
        .factor(&op.matrix, lambda)
        .map_err(|source| ProbeError::BelowSpectrum { lambda, source })?;
    let phi = lu.solve(&rhs);
    if phi.iter().any(|v| !(*v > 0.0)) {
        return Err(ProbeError::BadInput(format!(
            "shifted Dirichlet solution at lambda = {lambda} is not positive"
        )));
    }
    Ok((op, phi))
}

/// Classifies the twisted process of the positive solution at `lambda`
/// (built on the largest ladder ball); above `λ*` only transience is
/// possible, so returns make the verdict inconclusive.
pub fn classify_at_lambda(
    coeffs: &CoefficientSet,
    lambda: f64,
    cfg: &ClassifyConfig,
) -> Result<Classification, ProbeError> {
    let gs = lambda_star(coeffs, &cfg.probe.ladder)?;
    if lambda <= gs.lambda_star {
        return Err(ProbeError::BadInput(format!(
            "lambda {lambda} must exceed the principal eigenvalue {}",
            gs.lambda_star
        )));
    }
    let (op, phi) = shifted_dirichlet_solution(coeffs, gs.grid.clone(), lambda)?;
    let log_phi: Vec<f64> = phi.iter().map(|v| v.ln()).collect();
    let grad = gradient_field(&gs.grid, &log_phi);
    let drift = twisted_drift(&op.nodal.a, &op.nodal.b, &grad, gs.grid.dim());
    let process = twisted_process(coeffs, gs.grid.clone(), &drift);
    let (returns, excursion_fraction) = observe_returns(&process, &cfg.x0, &cfg.sim, &gs.grid)?;
    let verdict = match returns {
        ReturnEvidence::NoReturns { .. } => GroundStateVerdict::Transient,
        ReturnEvidence::Hitting(_) => GroundStateVerdict::Inconclusive,
    };
    Ok(Classification {
        verdict,
        lambda,
        lambda_star: gs.lambda_star,
        monotonicity: None,
        returns,
        excursion_fraction,
    })
}

/// How Green-probe paths are drawn.
#[derive(Debug, Clone)]
pub enum GreenSampler {
    /// The base diffusion with weights `exp(∫(f − λ))`.
    Base,
    /// The ground-state diffusion of `gs` with the deterministic weight
    /// `e^{−(λ−λ*)t} Ψ*(x0)/Ψ*(Y_t)`.
    GroundState(GroundState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreenWindow {
    pub t0: f64,
    pub t1: f64,
    /// `∫_{t0}^{t1} E[e^{∫(f−λ)} g(X_t)] dt`
    pub value: f64,
    /// Relative standard error.
    pub rel_stderr: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreenReport {
    pub lambda: f64,
    pub windows: Vec<GreenWindow>,
    /// Running integrals up to each ladder time.
    pub cumulative: Vec<f64>,
    /// Ratios of successive window values per unit time.
    pub ratios: Vec<f64>,
    pub divergence_flag: bool,
}

/// Time-integrated Feynman–Kac values of `g` on the windows of `t_ladder`.
pub fn green_probe(
    coeffs: &CoefficientSet,
    lambda: f64,
    g: &ScalarField,
    t_ladder: &[f64],
    x0: &[f64],
    sampler: &GreenSampler,
    sim: &SimConfig,
) -> Result<GreenReport, ProbeError> {
    if t_ladder.len() < 2 || t_ladder.windows(2).any(|w| !(w[1] > w[0])) || !(t_ladder[0] > 0.0) {
        return Err(ProbeError::BadInput("T ladder must be positive and increasing with at least two times".into()));
    }
    let mut sim = sim.clone();
    sim.horizon = *t_ladder.last().expect("nonempty");
    sim.checkpoints = vec![sim.horizon];
    sim.target = None;
    let (process, log_shift, psi) = match sampler {
        GreenSampler::Base => (Process::from_coefficients(coeffs), 0.0, None),
        GreenSampler::GroundState(gs) => {
            let psi = GridField::scalar(gs.grid.clone(), gs.psi_star.clone());
            let start = psi.sample_scalar(&point(x0));
            let p = twisted_process(coeffs, gs.grid.clone(), &gs.twisted_drift);
            (p, start.ln(), Some((psi, gs.lambda_star)))
        }
    };
    let rate = match &psi {
        Some((_, l)) => lambda - l,
        None => lambda,
    };
    let nw = t_ladder.len();
    let log_dt = sim.dt.ln();
    let per_path = map_paths(sim.n_paths, |p| -> Result<(Vec<f64>, bool), EvalError> {
        let mut acc = vec![(f64::NEG_INFINITY, 0.0f64); nw];
        let mut slot = 0;
        let mut err = None;
        let end = run_path(&process, x0, &sim, p, |_, t, x, s| {
            if err.is_some() {
                return;
            }
            while slot < nw && t >= t_ladder[slot] {
                slot += 1;
            }
            if slot == nw {
                return;
            }
            let gv = match g.eval(x) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            };
            if gv <= 0.0 {
                return;
            }
            let mut v = gv.ln() + log_dt - rate * t;
            match &psi {
                Some((field, _)) => v -= field.sample_scalar(x).ln(),
                None => v += s,
            }
            let (m, sum) = &mut acc[slot];
            if v > *m {
                *sum = *sum * (*m - v).exp() + 1.0;
                *m = v;
            } else {
                *sum += (v - *m).exp();
            }
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        let logs = acc
            .iter()
            .map(|&(m, s)| if s > 0.0 { m + s.ln() } else { f64::NEG_INFINITY })
            .collect();
        Ok((logs, end.exploded_at.is_none()))
    });
    let mut columns = vec![Vec::with_capacity(sim.n_paths); nw];
    for (p, out) in per_path.into_iter().enumerate() {
        let (logs, alive) = out?;
        if !alive {
            if sim.on_explosion == ExplosionPolicy::Abort {
                return Err(SimError::NonFiniteState { path: p, step: 0 }.into());
            }
            continue;
        }
        for (c, v) in columns.iter_mut().zip(logs) {
            c.push(v);
        }
    }
    let mut windows = Vec::with_capacity(nw);
    for (k, col) in columns.iter().enumerate() {
        let t0 = if k == 0 { 0.0 } else { t_ladder[k - 1] };
        let lm = stats::log_mean_exp(col);
        if lm.ess < 10.0 {
            return Err(SimError::DegenerateWeights { t: t_ladder[k], ess: lm.ess }.into());
        }
        windows.push(GreenWindow {
            t0,
            t1: t_ladder[k],
            value: (lm.value + log_shift).exp(),
            rel_stderr: lm.stderr,
            ess: lm.ess,
        });
    }
    let cumulative = windows
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w.value;
            Some(*acc)
        })
        .collect();
    let ratios: Vec<f64> = windows
        .windows(2)
        .map(|w| (w[1].value / (w[1].t1 - w[1].t0)) / (w[0].value / (w[0].t1 - w[0].t0)))
        .collect();
    let divergence_flag = ratios.last().is_some_and(|r| *r >= 0.9);
    Ok(GreenReport {
        lambda,
        windows,
        cumulative,
        ratios,
        divergence_flag,
    })
}

fn point(x: &[f64]) -> [f64; 2] {
    [x[0], x.get(1).copied().unwrap_or(0.0)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinnedRow {
    pub x: Vec<f64>,
    pub psi: f64,
    pub ratio: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinnedMet {
    pub horizon: f64,
    pub rows: Vec<PinnedRow>,
    /// `max/min − 1` over the ratios.
    pub dispersion: f64,
}

/// `E_x[e^{∫_0^T (f−λ*)} g(X_T)] / Ψ*(x)` for every start in `xs`.
pub fn pinned_met_check(
    coeffs: &CoefficientSet,
    gs: &GroundState,
    g: &ScalarField,
    xs: &[Vec<f64>],
    sim: &SimConfig,
) -> Result<PinnedMet, ProbeError> {
    if xs.is_empty() {
        return Err(ProbeError::BadInput("empty start list".into()));
    }
    let mut sim = sim.clone();
    sim.checkpoints = vec![sim.horizon];
    sim.target = None;
    let process = Process::from_coefficients(coeffs);
    let psi = GridField::scalar(gs.grid.clone(), gs.psi_star.clone());
    let mut rows = Vec::with_capacity(xs.len());
    for x in xs {
        let ens = simulate(&process, x, &sim)?;
        let fk = feynman_kac(&ens, gs.lambda_star, Some(g))?;
        let last = fk.points.last().expect("one checkpoint");
        let psi_x = psi.sample_scalar(&point(x));
        let ratio = last.value.exp() / psi_x;
        rows.push(PinnedRow {
            x: x.clone(),
            psi: psi_x,
            ratio,
            stderr: ratio * last.stderr,
        });
    }
    let max = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Ok(PinnedMet {
        horizon: sim.n_steps() as f64 * sim.dt,
        rows,
        dispersion: max / min - 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LyapunovMode {
    /// `LgV ≤ −δV` outside the ball for the requested `δ`.
    RateDelta(f64),
    /// `ℓ = −LgV/V` positive outside the ball and growing outward.
    InfCompactEll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovConfig {
    pub grid_radius: f64,
    pub points_per_unit: f64,
}

#[derive(Debug, Clone)]
pub struct LyapunovReport {
    pub grid: Arc<Grid>,
    /// `LgV` at every node.
    pub generator: Vec<f64>,
    /// `−LgV/V` at every node.
    pub margin: Vec<f64>,
    /// Smallest margin outside the ball.
    pub best_delta: f64,
    pub min_v: f64,
    pub boundary_min_v: f64,
    /// Largest margin on the innermost quarter of the region outside the ball.
    pub ell_inner: f64,
    /// Smallest margin on the outermost quarter.
    pub ell_outer: f64,
    pub pass: bool,
}

/// Checks a Foster–Lyapunov inequality for the drift and diffusion of
/// `coeffs` by applying the assembled stencil to samples of `v`.
pub fn lyapunov_check(
    coeffs: &CoefficientSet,
    v: &Expression,
    ball_radius: f64,
    mode: LyapunovMode,
    cfg: &LyapunovConfig,
) -> Result<LyapunovReport, ProbeError> {
    if !(ball_radius >= 0.0 && ball_radius < cfg.grid_radius) {
        return Err(ProbeError::BadInput("ball must lie inside the grid".into()));
    }
    let grid = Arc::new(Grid::ball_with_spacing(coeffs.dim, cfg.grid_radius, cfg.points_per_unit)?);
    let op = DiscreteOperator::assemble(grid.clone(), coeffs, Control::None)?;
    let h = grid.h();
    let at = |k: [i64; 2]| -> Vec<f64> { (0..grid.dim()).map(|ax| k[ax] as f64 * h).collect() };
    let mut values = Vec::with_capacity(grid.len());
    let mut min_v = f64::INFINITY;
    let mut min_at = Vec::new();
    let mut boundary_min_v = f64::INFINITY;
    for i in 0..grid.len() {
        let val = v.eval_at(grid.point(i), None)?;
        if val < min_v {
            min_v = val;
            min_at = grid.point(i).to_vec();
        }
        if grid.on_boundary_ring(i) {
            boundary_min_v = boundary_min_v.min(val);
        }
        values.push(val);
    }
    if !(min_v > 0.0) {
        return Err(ProbeError::NotPositive { min: min_v, at: min_at });
    }
    let mut err = None;
    let generator = op.apply_stencil(
        |k| match v.eval_at(&at(k), None) {
            Ok(x) => x,
            Err(e) => {
                err = Some(e);
                f64::NAN
            }
        },
        false,
    );
    if let Some(e) = err {
        return Err(e.into());
    }
    let margin: Vec<f64> = generator.iter().zip(&values).map(|(l, v)| -l / v).collect();
    let outer_band = (cfg.grid_radius - ball_radius) / 4.0;
    let mut best_delta = f64::INFINITY;
    let mut ell_inner = f64::NEG_INFINITY;
    let mut ell_outer = f64::INFINITY;
    for i in 0..grid.len() {
        let r = grid.norm(i);
        if r < ball_radius {
            continue;
        }
        best_delta = best_delta.min(margin[i]);
        if r <= ball_radius + outer_band {
            ell_inner = ell_inner.max(margin[i]);
        }
        if r >= cfg.grid_radius - outer_band {
            ell_outer = ell_outer.min(margin[i]);
        }
    }
    let pass = match mode {
        LyapunovMode::RateDelta(delta) => best_delta > 0.0 && best_delta >= delta,
        LyapunovMode::InfCompactEll => best_delta > 0.0 && ell_outer > ell_inner,
    };
    Ok(LyapunovReport {
        grid,
        generator,
        margin,
        best_delta,
        min_v,
        boundary_min_v,
        ell_inner,
        ell_outer,
        pass,
    })
}
