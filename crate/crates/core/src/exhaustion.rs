//! Principal eigenvalue on the whole space as the limit of Dirichlet
//! eigenvalues over a growing ladder of balls with fixed spacing, and the
//! ground state read off the largest ball.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::eigen::{principal_eigenpair_from, EigenError, EigenOptions, EigenPair};
use crate::grid::{AssemblyError, CoefficientSet, Control, DiscreteOperator, Grid, GridError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExhaustionError {
    #[error("ladder diverged: last increment {last_increment:e} with increment ratio {ratio:.3}")]
    LadderDiverged { last_increment: f64, ratio: f64 },
    #[error("grid has no origin node")]
    NoOrigin,
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderConfig {
    pub r0: f64,
    pub growth: f64,
    pub max_rungs: usize,
    pub points_per_unit: f64,
    pub tol_outer: f64,
    /// Stop as soon as two consecutive rungs agree within `tol_outer`.
    pub early_stop: bool,
    /// Solve rungs independently in parallel (no warm start).
    pub parallel: bool,
    pub eigen: EigenOptions,
}

impl LadderConfig {
    pub fn for_dim(dim: usize) -> Self {
        LadderConfig {
            r0: 2.0,
            growth: 1.5,
            max_rungs: 8,
            points_per_unit: if dim == 1 { 50.0 } else { 12.0 },
            tol_outer: 1e-3,
            early_stop: true,
            parallel: false,
            eigen: EigenOptions::default(),
        }
    }

    pub fn fixed_rungs(mut self, rungs: usize) -> Self {
        self.max_rungs = rungs;
        self.early_stop = false;
        self
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..self.max_rungs)
            .map(|k| self.r0 * self.growth.powi(k as i32))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rung {
    pub radius: f64,
    pub n_per_axis: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub lambda_star: f64,
    pub grid: Arc<Grid>,
    pub psi_star: Vec<f64>,
    pub log_psi: Vec<f64>,
    pub grad_log_psi: Vec<[f64; 2]>,
    /// `b + 2a∇ψ*` at the nodes.
    pub twisted_drift: Vec<[f64; 2]>,
    /// Nodal diffusion and drift on the largest grid.
    pub diffusion: Vec<[f64; 2]>,
    pub drift: Vec<[f64; 2]>,
    pub ladder: Vec<Rung>,
    pub converged: bool,
    /// Richardson value in `1/r²` from the last two rungs.
    pub extrapolated: Option<f64>,
    /// Every increment positive or below the solver's resolution.
    pub monotone: bool,
    /// Relative eigen-residual on the largest grid.
    pub residual: f64,
}

impl GroundState {
    pub fn lambdas(&self) -> Vec<f64> {
        self.ladder.iter().map(|r| r.lambda).collect()
    }

    pub fn origin(&self) -> usize {
        self.grid.origin().expect("ball grids contain the origin")
    }
}

/// `λ∞` from `λ(r) ≈ λ∞ − C/r²` through two rungs.
pub fn richardson(r1: f64, l1: f64, r2: f64, l2: f64) -> f64 {
    let (s1, s2) = (r1 * r1, r2 * r2);
    (s2 * l2 - s1 * l1) / (s2 - s1)
}

fn ladder_grids(dim: usize, cfg: &LadderConfig) -> Result<Vec<Arc<Grid>>, GridError> {
    let mut out: Vec<Arc<Grid>> = Vec::new();
    for r in cfg.radii() {
        let g = Grid::ball_with_spacing(dim, r, cfg.points_per_unit)?;
        // rounding can repeat a radius on short ladders
        if out.last().is_some_and(|p| p.n_per_axis() >= g.n_per_axis()) {
            continue;
        }
        out.push(Arc::new(g));
    }
    Ok(out)
}

/// Previous eigenvector injected onto a larger nested grid; new nodes get the
/// smallest previous value.
fn inject(prev: &Grid, psi: &[f64], next: &Grid) -> Vec<f64> {
    let floor = psi.iter().copied().fold(f64::INFINITY, f64::min).max(f64::MIN_POSITIVE);
    (0..next.len())
        .map(|i| prev.index_of(next.lattice(i)).map_or(floor, |j| psi[j]))
        .collect()
}

/// Runs the exhaustion ladder with the potential `coeffs.f` and drift
/// evaluated under `control`.
pub fn lambda_star(coeffs: &CoefficientSet, cfg: &LadderConfig) -> Result<GroundState, ExhaustionError> {
    lambda_star_controlled(coeffs, Control::None, cfg)
}

pub fn lambda_star_controlled(
    coeffs: &CoefficientSet,
    control: Control<'_>,
    cfg: &LadderConfig,
) -> Result<GroundState, ExhaustionError> {
    let grids = ladder_grids(coeffs.dim, cfg)?;
    let mut ladder = Vec::with_capacity(grids.len());
    let mut last: Option<(DiscreteOperator, EigenPair)> = None;
    let mut converged = false;

    if cfg.parallel && !cfg.early_stop {
        let solved: Vec<_> = grids
            .par_iter()
            .map(|g| -> Result<_, ExhaustionError> {
                let op = DiscreteOperator::assemble(g.clone(), coeffs, control)?;
                let pair = principal_eigenpair_from(&op, None, &cfg.eigen)?;
                Ok((op, pair))
            })
            .collect::<Result<_, _>>()?;
        for (op, pair) in solved {
            ladder.push(Rung {
                radius: op.grid.radius(),
                n_per_axis: op.grid.n_per_axis(),
                lambda: pair.lambda,
            });
            last = Some((op, pair));
        }
    } else {
        for g in &grids {
            let op = DiscreteOperator::assemble(g.clone(), coeffs, control)?;
            let start = last.as_ref().map(|(o, p)| inject(&o.grid, &p.psi, g));
            let pair = principal_eigenpair_from(&op, start.as_deref(), &cfg.eigen)?;
            ladder.push(Rung {
                radius: g.radius(),
                n_per_axis: g.n_per_axis(),
                lambda: pair.lambda,
            });
            last = Some((op, pair));
            let k = ladder.len();
            if k >= 2 && (ladder[k - 1].lambda - ladder[k - 2].lambda).abs() < cfg.tol_outer {
                converged = true;
                if cfg.early_stop {
                    break;
                }
            } else {
                converged = false;
            }
        }
    }
    let k = ladder.len();
    if cfg.parallel && !cfg.early_stop {
        converged = k >= 2 && (ladder[k - 1].lambda - ladder[k - 2].lambda).abs() < cfg.tol_outer;
    }
    if !converged && k >= 3 {
        let d1 = ladder[k - 1].lambda - ladder[k - 2].lambda;
        let d0 = ladder[k - 2].lambda - ladder[k - 3].lambda;
        let ratio = if d0 > 0.0 { d1 / d0 } else { 0.0 };
        if d1 > 10.0 * cfg.tol_outer && ratio >= 0.9 {
            return Err(ExhaustionError::LadderDiverged {
                last_increment: d1,
                ratio,
            });
        }
    }
    let (op, pair) = last.ok_or(EigenError::Empty)?;
    if op.grid.origin().is_none() {
        return Err(ExhaustionError::NoOrigin);
    }
    let monotone = ladder.windows(2).all(|w| {
        let resolution = 1e-12 * (1.0 + w[1].lambda.abs()) + cfg.eigen.tol * (1.0 + w[1].lambda.abs());
        w[1].lambda - w[0].lambda > -resolution
    });
    let extrapolated = (k >= 2).then(|| {
        richardson(
            ladder[k - 2].radius,
            ladder[k - 2].lambda,
            ladder[k - 1].radius,
            ladder[k - 1].lambda,
        )
    });
    Ok(build_ground_state(&op, pair, ladder, converged, extrapolated, monotone))
}

fn build_ground_state(
    op: &DiscreteOperator,
    pair: EigenPair,
    ladder: Vec<Rung>,
    converged: bool,
    extrapolated: Option<f64>,
    monotone: bool,
) -> GroundState {
    let log_psi: Vec<f64> = pair.psi.iter().map(|v| v.ln()).collect();
    let grad_log_psi = gradient_field(&op.grid, &log_psi);
    let twisted_drift = twisted_drift(&op.nodal.a, &op.nodal.b, &grad_log_psi, op.grid.dim());
    GroundState {
        lambda_star: pair.lambda,
        grid: op.grid.clone(),
        psi_star: pair.psi,
        log_psi,
        grad_log_psi,
        twisted_drift,
        diffusion: op.nodal.a.clone(),
        drift: op.nodal.b.clone(),
        ladder,
        converged,
        extrapolated,
        monotone,
        residual: pair.residual,
    }
}

/// Gradient of nodal values: central differences where both axis neighbours
/// are interior, one-sided next to the exterior.
pub fn gradient_field(grid: &Grid, values: &[f64]) -> Vec<[f64; 2]> {
    let h = grid.h();
    (0..grid.len())
        .map(|i| {
            let mut g = [0.0; 2];
            for (ax, slot) in g.iter_mut().enumerate().take(grid.dim()) {
                *slot = match (grid.neighbor(i, ax, -1), grid.neighbor(i, ax, 1)) {
                    (Some(m), Some(p)) => (values[p] - values[m]) / (2.0 * h),
                    (None, Some(p)) => (values[p] - values[i]) / h,
                    (Some(m), None) => (values[i] - values[m]) / h,
                    (None, None) => 0.0,
                };
            }
            g
        })
        .collect()
}

pub fn twisted_drift(a: &[[f64; 2]], b: &[[f64; 2]], grad: &[[f64; 2]], dim: usize) -> Vec<[f64; 2]> {
    a.iter()
        .zip(b)
        .zip(grad)
        .map(|((a, b), g)| {
            let mut t = [0.0; 2];
            for ax in 0..dim {
                t[ax] = b[ax] + 2.0 * a[ax] * g[ax];
            }
            t
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DriftScheme;

    fn coeffs(a: &str, b: &str, f: &str) -> CoefficientSet {
        CoefficientSet::parse(&[a], &[b], f).unwrap()
    }

    #[test]
    fn quadratic_potential_with_outward_drift() {
        let c = coeffs("0.5", "1.5*x", "x^2").with_scheme(DriftScheme::ExponentialFitting);
        let mut cfg = LadderConfig::for_dim(1);
        cfg.max_rungs = 4;
        let gs = lambda_star(&c, &cfg).unwrap();
        assert!((gs.lambda_star + 1.0).abs() < 2e-2, "{}", gs.lambda_star);
        assert!(gs.monotone);
        assert_eq!(gs.psi_star[gs.origin()], 1.0);
        let mut worst: f64 = 0.0;
        for i in 0..gs.grid.len() {
            let x = gs.grid.point(i)[0];
            if x.abs() <= 3.0 {
                worst = worst.max((gs.twisted_drift[i][0] + 0.5 * x).abs());
            }
        }
        assert!(worst < 5e-2, "{worst}");
        assert!(gs.residual < 1e-8);
    }

    #[test]
    fn upwind_scheme_grows_a_spurious_boundary_mode_on_the_quadratic_case() {
        // artificial diffusion |b|h/2 lowers the drift cost below x^2 near r
        let c = coeffs("0.5", "1.5*x", "x^2");
        let cfg = LadderConfig::for_dim(1).fixed_rungs(4);
        assert!(matches!(lambda_star(&c, &cfg), Err(ExhaustionError::LadderDiverged { .. })));
    }

    #[test]
    fn gaussian_ground_state_of_outward_ou() {
        // e^{-x^2} solves φ'' + 2xφ' = -2φ
        let c = coeffs("1", "2*x", "0").with_scheme(DriftScheme::ExponentialFitting);
        let gs = lambda_star(&c, &LadderConfig::for_dim(1)).unwrap();
        assert!((gs.lambda_star + 2.0).abs() < 2e-2, "{}", gs.lambda_star);
        for i in 0..gs.grid.len() {
            let x = gs.grid.point(i)[0];
            if x.abs() <= 2.0 {
                assert!((gs.twisted_drift[i][0] + 2.0 * x).abs() < 0.1);
            }
        }
    }

    #[test]
    fn constant_shift_is_exact_rung_by_rung() {
        let c = coeffs("0.5", "-x", "exp(-x^2)");
        let cfg = LadderConfig::for_dim(1).fixed_rungs(3);
        let g0 = lambda_star(&c, &cfg).unwrap();
        let g1 = lambda_star(&c.with_f("exp(-x^2) + 0.7".parse().unwrap()), &cfg).unwrap();
        for (a, b) in g0.ladder.iter().zip(&g1.ladder) {
            assert!((b.lambda - a.lambda - 0.7).abs() < 1e-10);
        }
    }

    #[test]
    fn driftless_ground_state_flattens() {
        let mut cfg = LadderConfig::for_dim(1).fixed_rungs(8);
        cfg.points_per_unit = 10.0;
        let gs = lambda_star(&coeffs("1", "0", "0"), &cfg).unwrap();
        let r = gs.grid.radius();
        for i in 0..gs.grid.len() {
            if gs.grid.norm(i) <= 0.5 * r / 4.0 {
                assert!(gs.grad_log_psi[i][0].abs() < 5e-2);
            }
        }
        assert!(gs.lambda_star < 0.0 && gs.lambda_star > -0.01);
    }

    #[test]
    fn unbounded_potential_diverges() {
        let mut cfg = LadderConfig::for_dim(1);
        cfg.max_rungs = 5;
        cfg.points_per_unit = 10.0;
        let err = lambda_star(&coeffs("1", "0", "x^2"), &cfg).unwrap_err();
        assert!(matches!(err, ExhaustionError::LadderDiverged { .. }), "{err:?}");
    }

    #[test]
    fn richardson_recovers_inverse_square_law() {
        let law = |r: f64| 3.0 - 2.0 / (r * r);
        assert!((richardson(2.0, law(2.0), 3.0, law(3.0)) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let c = coeffs("0.5", "-x", "0");
        let mut cfg = LadderConfig::for_dim(1).fixed_rungs(3);
        let a = lambda_star(&c, &cfg).unwrap();
        cfg.parallel = true;
        let b = lambda_star(&c, &cfg).unwrap();
        for (x, y) in a.ladder.iter().zip(&b.ladder) {
            assert!((x.lambda - y.lambda).abs() < 1e-9);
        }
    }
}
