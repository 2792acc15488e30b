//! Principal (Perron) eigenpairs of discretized operators on bounded
//! domains.
//!
//! The assembled matrix `A` has nonnegative off-diagonals, so its eigenvalue
//! of maximal real part is real, simple on a connected grid, and carries a
//! positive eigenvector. For any positive `x` the Collatz–Wielandt quotients
//! `(Ax)_i / x_i` bracket it:
//!
//! ```text
//! min_i (Ax)_i/x_i  <=  λ  <=  max_i (Ax)_i/x_i
//! ```
//!
//! Both solvers below iterate until that bracket is narrower than
//! `tol·|λ| + tol`.

use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::grid::{AssemblyError, CoefficientSet, Control, DiscreteOperator, Grid, GridError};
use crate::sparse::{CsrMatrix, Symbolic};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EigenError {
    #[error("eigensolver did not converge in {max_iter} iterations (bracket width {last_residual:e})")]
    NotConverged { max_iter: usize, last_residual: f64 },
    #[error("interior graph has {0} connected components")]
    DisconnectedInterior(usize),
    #[error("operator is empty")]
    Empty,
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenMethod {
    /// Inverse iteration with a shift kept above the Collatz–Wielandt upper
    /// bound; `sI - A` stays a nonsingular M-matrix so iterates stay positive.
    #[default]
    ShiftInvert,
    /// Power iteration on `A + σI`, `σ = 1 + max(-A_ii)`, followed by one
    /// shifted inverse-iteration step.
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: EigenMethod,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-10,
            max_iter: 200_000,
            method: EigenMethod::ShiftInvert,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    pub psi: Vec<f64>,
    /// `‖AΨ − λΨ‖∞ / ‖Ψ‖∞`
    pub residual: f64,
    /// Width of the final Collatz–Wielandt bracket.
    pub bracket: f64,
    pub iterations: usize,
    pub normalization_node: usize,
}

/// Collatz–Wielandt bracket `(min, max)` of `(Ax)_i / x_i`.
pub fn collatz_wielandt(a: &CsrMatrix, x: &[f64], ax: &mut [f64]) -> (f64, f64) {
    a.matvec(x, ax);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (v, xi) in ax.iter().zip(x) {
        let q = v / xi;
        lo = lo.min(q);
        hi = hi.max(q);
    }
    (lo, hi)
}

fn normalize_max(x: &mut [f64]) {
    let m = x.iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v /= m);
    }
}

// The quotients carry rounding noise of order eps·max|A_ii|; brackets
// below that floor are accepted.
fn converged(lo: f64, hi: f64, tol: f64, floor: f64) -> bool {
    hi - lo <= (tol * (0.5 * (lo + hi)).abs() + tol).max(floor)
}

fn precision_floor(a: &CsrMatrix) -> f64 {
    64.0 * f64::EPSILON * diag_scale(a)
}

/// Raw Perron value and vector of an irreducible essentially nonnegative
/// matrix; the vector is scaled to unit maximum.
pub struct PerronSolution {
    pub lambda: f64,
    pub vector: Vec<f64>,
    pub bracket: f64,
    pub iterations: usize,
}

pub fn perron(
    a: &CsrMatrix,
    order: Option<&[usize]>,
    start: Option<&[f64]>,
    opts: &EigenOptions,
) -> Result<PerronSolution, EigenError> {
    let n = a.n();
    if n == 0 {
        return Err(EigenError::Empty);
    }
    let (components, _) = a.components();
    if components > 1 {
        return Err(EigenError::DisconnectedInterior(components));
    }
    let mut x: Vec<f64> = match start {
        Some(s) if s.len() == n && s.iter().all(|v| *v > 0.0 && v.is_finite()) => s.to_vec(),
        _ => vec![1.0; n],
    };
    normalize_max(&mut x);
    match opts.method {
        EigenMethod::ShiftInvert => shift_invert(a, order, x, opts),
        EigenMethod::Power => power(a, order, x, opts),
    }
}

fn diag_scale(a: &CsrMatrix) -> f64 {
    (0..a.n()).map(|i| a.diag(i).abs()).fold(1.0, f64::max)
}

// A pivot-free LU of the Z-matrix `sI - A` has only positive pivots exactly
// when `s` exceeds the Perron root, so a successful factorization certifies
// the shift. The shift then tracks `s - 1/max(y)`, the eigenvalue estimate
// from the growth of the solve.
fn shift_invert(
    a: &CsrMatrix,
    order: Option<&[usize]>,
    mut x: Vec<f64>,
    opts: &EigenOptions,
) -> Result<PerronSolution, EigenError> {
    let n = a.n();
    let mut ax = vec![0.0; n];
    let eps_floor = precision_floor(a);
    let (mut lo, mut hi) = collatz_wielandt(a, &x, &mut ax);
    if converged(lo, hi, opts.tol, eps_floor) {
        return Ok(PerronSolution {
            lambda: 0.5 * (lo + hi),
            vector: x,
            bracket: hi - lo,
            iterations: 0,
        });
    }
    let symbolic = Symbolic::analyze(a, order);
    let floor = (1e-10 * (1.0 + hi.abs())).max(1e-13 * diag_scale(a));
    let certify = |target: f64, mut margin: f64| loop {
        match symbolic.factor(a, target + margin) {
            Ok(lu) => break (lu, target + margin, margin),
            Err(_) => margin *= 4.0,
        }
    };
    let (mut lu, mut shift, mut margin) = certify(hi, (hi - lo).max(floor));
    let mut work = Vec::with_capacity(n);
    let mut y = x.clone();
    for it in 1..=opts.max_iter {
        y.copy_from_slice(&x);
        lu.solve_in_place(&mut y, &mut work);
        let ymax = y.iter().copied().fold(0.0, f64::max);
        if !(ymax > 0.0) || y.iter().any(|v| !(*v > 0.0)) {
            // rounding let a shift below the root through
            margin *= 4.0;
            (lu, shift, margin) = certify(hi, margin);
            continue;
        }
        y.iter_mut().for_each(|v| *v /= ymax);
        std::mem::swap(&mut x, &mut y);
        (lo, hi) = collatz_wielandt(a, &x, &mut ax);
        if converged(lo, hi, opts.tol, eps_floor) {
            return Ok(PerronSolution {
                lambda: 0.5 * (lo + hi),
                vector: x,
                bracket: hi - lo,
                iterations: it,
            });
        }
        let estimate = (shift - 1.0 / ymax).clamp(lo, hi);
        let wanted = (0.01 * (hi - lo)).max(floor);
        if shift - estimate > 4.0 * wanted {
            (lu, shift, margin) = certify(estimate, wanted);
        }
    }
    Err(EigenError::NotConverged {
        max_iter: opts.max_iter,
        last_residual: hi - lo,
    })
}

fn power(
    a: &CsrMatrix,
    order: Option<&[usize]>,
    mut x: Vec<f64>,
    opts: &EigenOptions,
) -> Result<PerronSolution, EigenError> {
    let n = a.n();
    let sigma = 1.0 + (0..n).map(|i| -a.diag(i)).fold(f64::NEG_INFINITY, f64::max);
    let mut ax = vec![0.0; n];
    let eps_floor = precision_floor(a);
    let (mut lo, mut hi) = collatz_wielandt(a, &x, &mut ax);
    let mut iterations = 0;
    while !converged(lo, hi, opts.tol, eps_floor) && iterations < opts.max_iter {
        // x <- (A + σI) x, all terms nonnegative
        for (v, xi) in ax.iter_mut().zip(&x) {
            *v += sigma * xi;
        }
        std::mem::swap(&mut x, &mut ax);
        normalize_max(&mut x);
        (lo, hi) = collatz_wielandt(a, &x, &mut ax);
        iterations += 1;
    }
    // one shifted inverse-iteration step
    let symbolic = Symbolic::analyze(a, order);
    let mut margin = (hi - lo).max((1e-10 * (1.0 + hi.abs())).max(1e-13 * diag_scale(a)));
    let lu = loop {
        match symbolic.factor(a, hi + margin) {
            Ok(lu) => break lu,
            Err(_) => margin *= 4.0,
        }
    };
    let mut refined = lu.solve(&x);
    normalize_max(&mut refined);
    let (rlo, rhi) = collatz_wielandt(a, &refined, &mut ax);
    if rhi - rlo <= hi - lo && refined.iter().all(|v| *v > 0.0) {
        x = refined;
        (lo, hi) = (rlo, rhi);
    }
    if !converged(lo, hi, opts.tol, eps_floor) {
        return Err(EigenError::NotConverged {
            max_iter: opts.max_iter,
            last_residual: hi - lo,
        });
    }
    Ok(PerronSolution {
        lambda: 0.5 * (lo + hi),
        vector: x,
        bracket: hi - lo,
        iterations: iterations + 1,
    })
}

/// Principal Dirichlet eigenpair of an assembled operator, normalized to 1
/// at the origin (balls) or at the node of maximal Ψ (annuli).
pub fn principal_eigenpair(
    op: &DiscreteOperator,
    opts: &EigenOptions,
) -> Result<EigenPair, EigenError> {
    principal_eigenpair_from(op, None, opts)
}

/// As [`principal_eigenpair`], starting from `start` when it is a positive
/// vector of the right length.
pub fn principal_eigenpair_from(
    op: &DiscreteOperator,
    start: Option<&[f64]>,
    opts: &EigenOptions,
) -> Result<EigenPair, EigenError> {
    let order = op.grid.elimination_order();
    let sol = perron(&op.matrix, Some(&order), start, opts)?;
    Ok(finish(&op.matrix, &op.grid, sol))
}

fn finish(a: &CsrMatrix, grid: &Grid, sol: PerronSolution) -> EigenPair {
    let mut psi = sol.vector;
    let node = match grid.origin() {
        Some(o) => o,
        None => psi
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0,
    };
    let scale = psi[node];
    psi.iter_mut().for_each(|v| *v /= scale);
    let ap = a.mul_vec(&psi);
    let max_psi = psi.iter().copied().fold(0.0, f64::max);
    let residual = ap
        .iter()
        .zip(&psi)
        .map(|(y, p)| (y - sol.lambda * p).abs())
        .fold(0.0, f64::max)
        / max_psi;
    EigenPair {
        lambda: sol.lambda,
        psi,
        residual,
        bracket: sol.bracket,
        iterations: sol.iterations,
        normalization_node: node,
    }
}

/// Largest real part over the full spectrum of a dense matrix (Schur
/// decomposition); used as an independent check on small problems.
pub fn dense_max_real_eigenvalue(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Principal eigenvalue on an exterior domain `{|x| > r}` approximated by
/// annuli `r < |x| < R` for each `R` in the ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct ExteriorEstimate {
    pub inner_radius: f64,
    /// `(R, λ̂)` per rung.
    pub ladder: Vec<(f64, f64)>,
    /// Value on the largest annulus.
    pub value: f64,
}

/// On a disconnected annulus (two segments in one dimension) the principal
/// eigenvalue is the largest over the components.
pub fn exterior_eigenvalue(
    coeffs: &CoefficientSet,
    r: f64,
    outer_ladder: &[f64],
    points_per_unit: f64,
    opts: &EigenOptions,
) -> Result<ExteriorEstimate, EigenError> {
    let mut ladder = Vec::with_capacity(outer_ladder.len());
    for &outer in outer_ladder {
        let grid = Arc::new(Grid::annulus_with_spacing(coeffs.dim, r, outer, points_per_unit)?);
        let op = DiscreteOperator::assemble(grid.clone(), coeffs, Control::None)?;
        let lambda = max_over_components(&op, opts)?;
        ladder.push((grid.radius(), lambda));
    }
    let value = ladder.last().map(|p| p.1).ok_or(EigenError::Empty)?;
    Ok(ExteriorEstimate {
        inner_radius: r,
        ladder,
        value,
    })
}

pub fn max_over_components(op: &DiscreteOperator, opts: &EigenOptions) -> Result<f64, EigenError> {
    let (count, label) = op.matrix.components();
    let mut best = f64::NEG_INFINITY;
    for c in 0..count {
        let keep: Vec<usize> = (0..op.len()).filter(|&i| label[i] == c).collect();
        let sub = op.matrix.submatrix(&keep);
        best = best.max(perron(&sub, None, None, opts)?.lambda);
    }
    Ok(best)
}
