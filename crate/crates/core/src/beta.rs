//! The curve `β ↦ λ*(βf)`, its flat breakpoint, discrete stationary
//! densities of ground-state drifts, and the ergodic identities that tie
//! them together.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::eigen::{perron, EigenError, EigenOptions};
use crate::exhaustion::{lambda_star, ExhaustionError, GroundState, LadderConfig};
use crate::expr::{EvalError, Expression};
use crate::grid::{CoefficientSet, DiscreteOperator, DriftScheme, Grid, NodalCoefficients};
use crate::sde::{hitting_stats, simulate, Process, SimConfig, SimError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BetaError {
    #[error("potential does not vanish at the grid boundary: ring max {boundary_max:e} vs max {max:e}")]
    NonVanishingPotential { boundary_max: f64, max: f64 },
    #[error("{0}")]
    BadInput(String),
    #[error(transparent)]
    Exhaustion(#[from] ExhaustionError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveConfig {
    pub ladder: LadderConfig,
    pub slope_tol: f64,
    pub bisection_depth: usize,
    /// Skip the vanishing-at-infinity check on `f`.
    pub allow_nonvanishing: bool,
}

impl CurveConfig {
    pub fn for_dim(dim: usize) -> Self {
        CurveConfig {
            ladder: LadderConfig::for_dim(dim),
            slope_tol: 1e-3,
            bisection_depth: 20,
            allow_nonvanishing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaCurve {
    pub betas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub converged: Vec<bool>,
    /// Centered differences inside, one-sided at the ends.
    pub slopes: Vec<f64>,
    /// `−∞` when no computed slope is below the tolerance.
    pub beta_c_estimate: f64,
    /// Whether a computed β above the estimate has a slope over tolerance.
    pub beta_c_bracketed: bool,
    pub lambda_c: f64,
    pub convex: bool,
    /// `None` unless `f ≥ 0` on the grid.
    pub nondecreasing: Option<bool>,
}

impl BetaCurve {
    /// Columns `beta,lambda,converged,slope`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "beta,lambda,converged,slope")?;
        for i in 0..self.betas.len() {
            writeln!(
                w,
                "{},{},{},{}",
                self.betas[i], self.lambdas[i], self.converged[i], self.slopes[i]
            )?;
        }
        Ok(())
    }
}

fn curve_slopes(betas: &[f64], lambdas: &[f64]) -> Vec<f64> {
    let n = betas.len();
    (0..n)
        .map(|i| {
            let (l, r) = (i.saturating_sub(1), (i + 1).min(n - 1));
            if l == r {
                0.0
            } else {
                (lambdas[r] - lambdas[l]) / (betas[r] - betas[l])
            }
        })
        .collect()
}

fn check_vanishing(f: &Expression, grid: &Grid) -> Result<bool, BetaError> {
    let mut max = 0.0f64;
    let mut ring = 0.0f64;
    let mut nonneg = true;
    for i in 0..grid.len() {
        let v = f.eval_at(grid.point(i), None)?;
        nonneg &= v >= 0.0;
        max = max.max(v.abs());
        if grid.on_boundary_ring(i) {
            ring = ring.max(v.abs());
        }
    }
    if max > 0.0 && ring >= 0.01 * max {
        return Err(BetaError::NonVanishingPotential {
            boundary_max: ring,
            max,
        });
    }
    Ok(nonneg)
}

fn lambda_at(coeffs: &CoefficientSet, beta: f64, ladder: &LadderConfig) -> Result<GroundState, BetaError> {
    Ok(lambda_star(&coeffs.with_f(coeffs.f.scaled(beta)), ladder)?)
}

/// `Λ_β = λ*(β·coeffs.f)` for every β, with the flat breakpoint `β_c`.
pub fn lambda_curve(coeffs: &CoefficientSet, betas: &[f64], cfg: &CurveConfig) -> Result<BetaCurve, BetaError> {
    if betas.len() < 2 || betas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(BetaError::BadInput("betas must be strictly increasing with at least two values".into()));
    }
    let ladder = cfg.ladder.clone().fixed_rungs(cfg.ladder.max_rungs);
    let runs: Vec<GroundState> = betas
        .par_iter()
        .map(|&b| lambda_at(coeffs, b, &ladder))
        .collect::<Result<_, _>>()?;
    let nonneg = match check_vanishing(&coeffs.f, &runs[0].grid) {
        Ok(n) => n,
        Err(e) if !cfg.allow_nonvanishing => return Err(e),
        Err(_) => false,
    };
    let lambdas: Vec<f64> = runs.iter().map(|g| g.lambda_star).collect();
    let converged = runs.iter().map(|g| g.converged).collect();
    let slopes = curve_slopes(betas, &lambdas);

    let below = slopes.iter().rposition(|s| *s < cfg.slope_tol);
    let (beta_c_estimate, beta_c_bracketed) = match below {
        None => (f64::NEG_INFINITY, false),
        Some(j) if j + 1 == betas.len() => (betas[j], false),
        Some(j) => {
            let (mut lo, mut hi) = (betas[j], betas[j + 1]);
            let step = (hi - lo) / 8.0;
            for _ in 0..cfg.bisection_depth {
                let mid = 0.5 * (lo + hi);
                let pair: Vec<f64> = [mid - step, mid + step]
                    .par_iter()
                    .map(|&b| lambda_at(coeffs, b, &ladder).map(|g| g.lambda_star))
                    .collect::<Result<_, _>>()?;
                if (pair[1] - pair[0]) / (2.0 * step) < cfg.slope_tol {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (0.5 * (lo + hi), true)
        }
    };
    let lambda_c = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let convex = (1..betas.len().saturating_sub(1)).all(|i| {
        let left = (lambdas[i] - lambdas[i - 1]) / (betas[i] - betas[i - 1]);
        let right = (lambdas[i + 1] - lambdas[i]) / (betas[i + 1] - betas[i]);
        right - left >= -1e-8
    });
    let nondecreasing = nonneg.then(|| lambdas.windows(2).all(|w| w[1] - w[0] >= -1e-8));
    Ok(BetaCurve {
        betas: betas.to_vec(),
        lambdas,
        converged,
        slopes,
        beta_c_estimate,
        beta_c_bracketed,
        lambda_c,
        convex,
        nondecreasing,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDensity {
    pub grid: Arc<Grid>,
    /// Density per unit volume; `Σ eta·h^d = 1`.
    pub eta: Vec<f64>,
    /// `‖Qᵀη‖_∞` for the reflected generator `Q`.
    pub residual: f64,
    /// Share of the mass in the outer tenth of the radius.
    pub outer_mass: f64,
    /// More than a quarter of the mass sits in the outer shell.
    pub transience_suspected: bool,
}

impl StationaryDensity {
    /// `∫ φ η dx` by midpoint quadrature.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let v = self.grid.cell_volume();
        self.eta.iter().zip(values).map(|(e, f)| e * f * v).sum()
    }
}

/// Invariant density of the chain generated by `diffusion` and `drift`
/// on `grid` with reflection at the boundary.
pub fn stationary_density(
    grid: Arc<Grid>,
    diffusion: &[[f64; 2]],
    drift: &[[f64; 2]],
    scheme: DriftScheme,
    opts: &EigenOptions,
) -> Result<StationaryDensity, BetaError> {
    let n = grid.len();
    if diffusion.len() != n || drift.len() != n {
        return Err(BetaError::BadInput("nodal coefficients do not match the grid".into()));
    }
    let nodal = NodalCoefficients {
        a: diffusion.to_vec(),
        b: drift.to_vec(),
        f: vec![0.0; n],
        scheme,
    };
    let q = DiscreteOperator::reflected_generator(grid.clone(), &nodal);
    let qt = q.matrix.transpose();
    let order = grid.elimination_order();
    let sol = perron(&qt, Some(&order), None, opts)?;
    let vol = grid.cell_volume();
    let total: f64 = sol.vector.iter().sum::<f64>() * vol;
    let eta: Vec<f64> = sol.vector.iter().map(|v| v / total).collect();
    let residual = qt.mul_vec(&eta).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let shell = 0.9 * grid.radius();
    let outer_mass: f64 = (0..n).filter(|&i| grid.norm(i) >= shell).map(|i| eta[i] * vol).sum();
    Ok(StationaryDensity {
        grid,
        eta,
        residual,
        outer_mass,
        transience_suspected: outer_mass > 0.25,
    })
}

/// Stationary density of the twisted drift of a ground state.
pub fn ground_state_density(gs: &GroundState, scheme: DriftScheme, opts: &EigenOptions) -> Result<StationaryDensity, BetaError> {
    stationary_density(gs.grid.clone(), &gs.diffusion, &gs.twisted_drift, scheme, opts)
}

fn norm_a(a: &[f64; 2], v: &[f64; 2], dim: usize) -> f64 {
    (0..dim).map(|ax| a[ax] * v[ax] * v[ax]).sum()
}

fn potential_values(f: &Expression, grid: &Grid) -> Result<Vec<f64>, BetaError> {
    grid.points()
        .map(|p| f.eval_at(p, None).map_err(BetaError::from))
        .collect()
}

/// Base-process return check used for the recurrence hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceCheck {
    pub sim: SimConfig,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityConfig {
    pub ladder: LadderConfig,
    /// Run when `Λ_β ≤ 0`; `None` skips the check.
    pub recurrence: Option<RecurrenceCheck>,
    /// Known breakpoint; `β ≤ beta_c` is flagged.
    pub beta_c: Option<f64>,
}

impl IdentityConfig {
    pub fn for_dim(dim: usize) -> Self {
        IdentityConfig {
            ladder: LadderConfig::for_dim(dim).fixed_rungs(LadderConfig::for_dim(dim).max_rungs),
            recurrence: None,
            beta_c: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicIdentity {
    pub beta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// Why the identity is not binding, when a hypothesis fails.
    pub hypothesis_violated: Option<String>,
}

fn base_returns(coeffs: &CoefficientSet, check: &RecurrenceCheck) -> Result<bool, BetaError> {
    if check.sim.target.is_none() {
        return Err(BetaError::BadInput("recurrence check needs a target ball".into()));
    }
    let process = Process::from_coefficients(coeffs).with_integrand(None);
    let ens = simulate(&process, &check.x0, &check.sim)?;
    match hitting_stats(&ens) {
        Ok(_) => Ok(true),
        Err(SimError::NoReturns { .. }) => Ok(false),
        Err(e) => Err(e.into()),
    }
}

/// `Λ_β` against `∫(βf − ‖∇ψ*_β‖²_a) dμ*_β`.
pub fn ergodic_identity_check(
    coeffs: &CoefficientSet,
    beta: f64,
    cfg: &IdentityConfig,
) -> Result<ErgodicIdentity, BetaError> {
    let gs = lambda_at(coeffs, beta, &cfg.ladder)?;
    let mu = ground_state_density(&gs, coeffs.scheme, &cfg.ladder.eigen)?;
    let f = potential_values(&coeffs.f, &gs.grid)?;
    let dim = gs.grid.dim();
    let integrand: Vec<f64> = (0..gs.grid.len())
        .map(|i| beta * f[i] - norm_a(&gs.diffusion[i], &gs.grad_log_psi[i], dim))
        .collect();
    let rhs = mu.integrate(&integrand);
    let mut reasons = Vec::new();
    if let Some(bc) = cfg.beta_c {
        if beta <= bc {
            reasons.push(format!("beta {beta} is not above beta_c {bc}"));
        }
    }
    if gs.lambda_star <= 0.0 {
        if let Some(check) = &cfg.recurrence {
            if !base_returns(coeffs, check)? {
                reasons.push("base process transient (no returns) while Λ_β ≤ 0".into());
            }
        }
    }
    if mu.transience_suspected {
        reasons.push(format!("stationary mass {:.2} in the outer shell", mu.outer_mass));
    }
    Ok(ErgodicIdentity {
        beta,
        lhs: gs.lambda_star,
        rhs,
        residual: (gs.lambda_star - rhs).abs(),
        hypothesis_violated: (!reasons.is_empty()).then(|| reasons.join("; ")),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub beta: f64,
    pub d_beta: f64,
    pub fd_slope: f64,
    pub mu_f: f64,
    pub residual: f64,
    /// `ε μ(fΨ̃)/μ(Ψ̃)` with `Ψ̃ = Ψ*_{β−ε}/Ψ*_β`.
    pub sandwich_lower: f64,
    /// `Λ_β − Λ_{β−ε}`
    pub increment: f64,
    /// `ε μ*_β(f)`
    pub sandwich_upper: f64,
    pub sandwich_ok: bool,
}

/// Finite-difference `dΛ/dβ` against `μ*_β(f)`, with the one-sided bounds
/// on `Λ_β − Λ_{β−ε}`. `slack` loosens the bound comparisons.
pub fn derivative_check(
    coeffs: &CoefficientSet,
    beta: f64,
    d_beta: f64,
    slack: f64,
    cfg: &IdentityConfig,
) -> Result<DerivativeCheck, BetaError> {
    if !(d_beta > 0.0) {
        return Err(BetaError::BadInput("d_beta must be positive".into()));
    }
    let ladder = cfg.ladder.clone().fixed_rungs(cfg.ladder.max_rungs);
    let runs: Vec<GroundState> = [beta - d_beta, beta, beta + d_beta]
        .par_iter()
        .map(|&b| lambda_at(coeffs, b, &ladder))
        .collect::<Result<_, _>>()?;
    let (lower, mid, upper) = (&runs[0], &runs[1], &runs[2]);
    let mu = ground_state_density(mid, coeffs.scheme, &ladder.eigen)?;
    let f = potential_values(&coeffs.f, &mid.grid)?;
    let mu_f = mu.integrate(&f);
    let fd_slope = (upper.lambda_star - lower.lambda_star) / (2.0 * d_beta);
    let ratio: Vec<f64> = lower.psi_star.iter().zip(&mid.psi_star).map(|(a, b)| a / b).collect();
    let f_ratio: Vec<f64> = f.iter().zip(&ratio).map(|(a, b)| a * b).collect();
    let sandwich_lower = d_beta * mu.integrate(&f_ratio) / mu.integrate(&ratio);
    let increment = mid.lambda_star - lower.lambda_star;
    let sandwich_upper = d_beta * mu_f;
    Ok(DerivativeCheck {
        beta,
        d_beta,
        fd_slope,
        mu_f,
        residual: (fd_slope - mu_f).abs(),
        sandwich_lower,
        increment,
        sandwich_upper,
        sandwich_ok: sandwich_lower <= increment + slack && increment <= sandwich_upper + slack,
    })
}

/// A stationary Markov control `v`, entering as the drift `b + 2av`.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSpec {
    /// `v = ∇ψ*_β`
    GroundState,
    /// `v = ∇ψ*_β + w(x)`
    GroundStatePlus(Vec<Expression>),
    Expr(Vec<Expression>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityResidual {
    pub beta: f64,
    pub lambda: f64,
    /// `∫ (‖v‖²_a − βf) dη_v`
    pub cost: f64,
    /// `−Λ_β + excess`
    pub identity_rhs: f64,
    pub residual: f64,
    /// `∫ ‖v − ∇ψ*_β‖²_a dη_v`
    pub excess: f64,
    pub hypothesis_violated: Option<String>,
}

fn eval_vector(es: &[Expression], grid: &Grid) -> Result<Vec<[f64; 2]>, BetaError> {
    if es.len() != grid.dim() {
        return Err(BetaError::BadInput(format!(
            "control has {} components on a {}-dimensional grid",
            es.len(),
            grid.dim()
        )));
    }
    grid.points()
        .map(|p| {
            let mut v = [0.0; 2];
            for (slot, e) in v.iter_mut().zip(es) {
                *slot = e.eval_at(p, None)?;
            }
            Ok(v)
        })
        .collect()
}

pub fn duality_residual(
    coeffs: &CoefficientSet,
    beta: f64,
    control: &ControlSpec,
    cfg: &IdentityConfig,
) -> Result<DualityResidual, BetaError> {
    let gs = lambda_at(coeffs, beta, &cfg.ladder)?;
    let grid = gs.grid.clone();
    let dim = grid.dim();
    let v: Vec<[f64; 2]> = match control {
        ControlSpec::GroundState => gs.grad_log_psi.clone(),
        ControlSpec::GroundStatePlus(w) => eval_vector(w, &grid)?
            .iter()
            .zip(&gs.grad_log_psi)
            .map(|(w, g)| [g[0] + w[0], g[1] + w[1]])
            .collect(),
        ControlSpec::Expr(es) => eval_vector(es, &grid)?,
    };
    let drift: Vec<[f64; 2]> = (0..grid.len())
        .map(|i| {
            let mut d = [0.0; 2];
            for ax in 0..dim {
                d[ax] = gs.drift[i][ax] + 2.0 * gs.diffusion[i][ax] * v[i][ax];
            }
            d
        })
        .collect();
    let eta = stationary_density(grid.clone(), &gs.diffusion, &drift, coeffs.scheme, &cfg.ladder.eigen)?;
    let f = potential_values(&coeffs.f, &grid)?;
    let running: Vec<f64> = (0..grid.len())
        .map(|i| norm_a(&gs.diffusion[i], &v[i], dim) - beta * f[i])
        .collect();
    let gap: Vec<f64> = (0..grid.len())
        .map(|i| {
            let d = [v[i][0] - gs.grad_log_psi[i][0], v[i][1] - gs.grad_log_psi[i][1]];
            norm_a(&gs.diffusion[i], &d, dim)
        })
        .collect();
    let cost = eta.integrate(&running);
    let excess = eta.integrate(&gap);
    let identity_rhs = -gs.lambda_star + excess;
    Ok(DualityResidual {
        beta,
        lambda: gs.lambda_star,
        cost,
        identity_rhs,
        residual: (cost - identity_rhs).abs(),
        excess,
        hypothesis_violated: eta
            .transience_suspected
            .then(|| format!("stationary mass {:.2} in the outer shell", eta.outer_mass)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::normal_pdf;

    fn grid1(r: f64, n: usize) -> Arc<Grid> {
        Arc::new(Grid::build(1, r, 0.0, n).unwrap())
    }

    fn l1_to_normal(d: &StationaryDensity, var: f64) -> f64 {
        let h = d.grid.h();
        d.grid
            .points()
            .zip(&d.eta)
            .map(|(p, e)| (e - normal_pdf(p[0], 0.0, var)).abs() * h)
            .sum()
    }

    fn density(a: f64, b: impl Fn(f64) -> f64, g: &Arc<Grid>) -> StationaryDensity {
        let diff = vec![[a, 0.0]; g.len()];
        let drift: Vec<[f64; 2]> = g.points().map(|p| [b(p[0]), 0.0]).collect();
        stationary_density(g.clone(), &diff, &drift, DriftScheme::Upwind, &EigenOptions::default()).unwrap()
    }

    #[test]
    fn ou_densities_are_gaussian() {
        let g = grid1(6.0, 401);
        let d = density(1.0, |x| -2.0 * x, &g);
        assert!(l1_to_normal(&d, 0.5) <= 0.03, "{}", l1_to_normal(&d, 0.5));
        assert!(d.residual < 1e-8 && d.eta.iter().all(|e| *e >= 0.0));
        let d = density(0.5, |x| -x, &g);
        assert!(l1_to_normal(&d, 0.5) <= 0.03);
        assert!(!d.transience_suspected);
    }

    #[test]
    fn symmetric_drift_gives_symmetric_density() {
        let g = grid1(4.0, 161);
        let d = density(0.7, |x| -x.powi(3), &g);
        let n = d.eta.len();
        for i in 0..n {
            assert!((d.eta[i] - d.eta[n - 1 - i]).abs() < 1e-10 * d.eta[i].max(1.0));
        }
    }

    #[test]
    fn outward_drift_piles_mass_on_the_boundary() {
        let g = grid1(5.0, 201);
        let d = density(1.0, |x| 2.0 * x, &g);
        assert!(d.transience_suspected);
    }

    #[test]
    fn zero_potential_identities_are_trivial() {
        let c = CoefficientSet::parse(&["0.5"], &["-x"], "0").unwrap();
        let mut cfg = IdentityConfig::for_dim(1);
        cfg.ladder = LadderConfig::for_dim(1).fixed_rungs(3);
        cfg.ladder.points_per_unit = 20.0;
        let e = ergodic_identity_check(&c, 1.0, &cfg).unwrap();
        assert!(e.lhs.abs() < 1e-6 && e.rhs.abs() < 1e-6, "{e:?}");
        let d = derivative_check(&c, 1.0, 0.1, 1e-9, &cfg).unwrap();
        assert!(d.fd_slope.abs() < 1e-8 && d.mu_f == 0.0 && d.sandwich_ok);
    }

    #[test]
    fn centered_slopes_on_uneven_betas() {
        let s = curve_slopes(&[0.0, 1.0, 3.0], &[0.0, 1.0, 5.0]);
        assert_eq!(s[0], 1.0);
        assert!((s[1] - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(s[2], 2.0);
    }
}
