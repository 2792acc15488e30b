//! Origin-centred lattices on balls and annuli, coefficient sets, and the
//! monotone (upwind) finite-difference discretization of
//! `a_i ∂_ii + b_i ∂_i + f` with a zero Dirichlet exterior.

use std::sync::Arc;

use thiserror::Error;

use crate::expr::{EvalError, Expression, ParseError, Var};
use crate::sparse::CsrMatrix;

pub const DEFAULT_ELLIPTICITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("radius {radius} must exceed inner radius {inner} >= 0")]
    BadRadius { radius: f64, inner: f64 },
    #[error("node count per axis must be odd, got {0}")]
    EvenNodeCount(usize),
    #[error("node count per axis must be at least 5, got {0}")]
    TooFewNodes(usize),
    #[error("dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("grid has no interior nodes")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssemblyError {
    #[error("diffusion coefficient {value} at node {node} ({x:?}) is below the ellipticity floor")]
    EllipticityViolation { node: usize, x: Vec<f64>, value: f64 },
    #[error("potential {value} at node {node} is below the declared lower bound")]
    UnboundedBelow { node: usize, value: f64 },
    #[error("off-diagonal diffusion is not supported in two dimensions")]
    NonDiagonalDiffusion2D,
    #[error("coefficients are {coeffs}-dimensional but the grid is {grid}-dimensional")]
    DimensionMismatch { coeffs: usize, grid: usize },
    #[error("evaluating {what} at node {node}: {source}")]
    Eval {
        what: &'static str,
        node: usize,
        source: EvalError,
    },
    #[error("policy has {got} entries, grid has {want} nodes")]
    PolicyLength { got: usize, want: usize },
}

/// Interior nodes of an origin-centred lattice restricted to a ball or an
/// annulus.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    radius: f64,
    inner_radius: f64,
    n_per_axis: usize,
    h: f64,
    half: i64,
    nodes: Vec<[f64; 2]>,
    lattice: Vec<[i64; 2]>,
    lookup: Vec<u32>,
    origin: Option<usize>,
}

const ABSENT: u32 = u32::MAX;

impl Grid {
    pub fn build(
        dim: usize,
        radius: f64,
        inner_radius: f64,
        n_per_axis: usize,
    ) -> Result<Grid, GridError> {
        if dim != 1 && dim != 2 {
            return Err(GridError::BadDimension(dim));
        }
        if !(radius.is_finite() && inner_radius >= 0.0 && radius > inner_radius) {
            return Err(GridError::BadRadius {
                radius,
                inner: inner_radius,
            });
        }
        if n_per_axis % 2 == 0 {
            return Err(GridError::EvenNodeCount(n_per_axis));
        }
        if n_per_axis < 5 {
            return Err(GridError::TooFewNodes(n_per_axis));
        }
        let half = ((n_per_axis - 1) / 2) as i64;
        let h = 2.0 * radius / (n_per_axis - 1) as f64;
        // |x| < r  <=>  |k|^2 < half^2 exactly on the lattice
        let outer2 = half * half;
        let inner2 = (inner_radius / h).powi(2);
        let span = if dim == 1 { 0..=0 } else { -half..=half };
        let side = n_per_axis;
        let mut lookup = vec![ABSENT; if dim == 1 { side } else { side * side }];
        let mut nodes = Vec::new();
        let mut lattice = Vec::new();
        let mut origin = None;
        for j in span {
            for i in -half..=half {
                let r2 = i * i + j * j;
                if r2 >= outer2 {
                    continue;
                }
                if inner_radius > 0.0 && (r2 as f64) <= inner2 * (1.0 + 1e-12) {
                    continue;
                }
                let idx = nodes.len();
                if r2 == 0 {
                    origin = Some(idx);
                }
                let slot = Self::slot_of(dim, side, half, [i, j]);
                lookup[slot] = idx as u32;
                nodes.push([i as f64 * h, j as f64 * h]);
                lattice.push([i, j]);
            }
        }
        if nodes.is_empty() {
            return Err(GridError::Empty);
        }
        Ok(Grid {
            dim,
            radius,
            inner_radius,
            n_per_axis,
            h,
            half,
            nodes,
            lattice,
            lookup,
            origin,
        })
    }

    /// Ball of radius `≈ radius` on the lattice of spacing `1/points_per_unit`;
    /// the radius is rounded to a whole number of cells so nested balls
    /// share nodes.
    pub fn ball_with_spacing(
        dim: usize,
        radius: f64,
        points_per_unit: f64,
    ) -> Result<Grid, GridError> {
        let half = (radius * points_per_unit).round().max(2.0) as usize;
        Grid::build(dim, half as f64 / points_per_unit, 0.0, 2 * half + 1)
    }

    pub fn annulus_with_spacing(
        dim: usize,
        inner: f64,
        outer: f64,
        points_per_unit: f64,
    ) -> Result<Grid, GridError> {
        let half = (outer * points_per_unit).round().max(2.0) as usize;
        Grid::build(dim, half as f64 / points_per_unit, inner, 2 * half + 1)
    }

    fn slot_of(dim: usize, side: usize, half: i64, k: [i64; 2]) -> usize {
        let i = (k[0] + half) as usize;
        if dim == 1 {
            i
        } else {
            (k[1] + half) as usize * side + i
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn origin(&self) -> Option<usize> {
        self.origin
    }

    /// Coordinates of node `i` (length `dim`).
    pub fn point(&self, i: usize) -> &[f64] {
        &self.nodes[i][..self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.nodes.iter().map(move |p| &p[..self.dim])
    }

    pub fn lattice(&self, i: usize) -> [i64; 2] {
        self.lattice[i]
    }

    pub fn norm(&self, i: usize) -> f64 {
        let p = self.nodes[i];
        (p[0] * p[0] + p[1] * p[1]).sqrt()
    }

    pub fn index_of(&self, k: [i64; 2]) -> Option<usize> {
        if k[0].abs() > self.half || k[1].abs() > self.half || (self.dim == 1 && k[1] != 0) {
            return None;
        }
        let v = self.lookup[Self::slot_of(self.dim, self.n_per_axis, self.half, k)];
        (v != ABSENT).then_some(v as usize)
    }

    /// Neighbour of node `i` one step along `axis` in direction `dir` (±1).
    pub fn neighbor(&self, i: usize, axis: usize, dir: i64) -> Option<usize> {
        let mut k = self.lattice[i];
        k[axis] += dir;
        self.index_of(k)
    }

    /// Whether node `i` has a missing axis neighbour (sits next to the
    /// Dirichlet exterior).
    pub fn on_boundary_ring(&self, i: usize) -> bool {
        (0..self.dim).any(|ax| self.neighbor(i, ax, 1).is_none() || self.neighbor(i, ax, -1).is_none())
    }

    /// Node whose lattice position is closest to `x`, searching outward if
    /// the rounded position is not an interior node.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let k = [
            (x[0] / self.h).round() as i64,
            if self.dim > 1 { (x[1] / self.h).round() as i64 } else { 0 },
        ];
        let clamp = |v: i64| v.clamp(-self.half, self.half);
        let k = [clamp(k[0]), clamp(k[1])];
        if let Some(i) = self.index_of(k) {
            return i;
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points().enumerate() {
            let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Whether `other` is a sub-lattice of `self` with the same spacing.
    pub fn same_spacing(&self, other: &Grid) -> bool {
        self.dim == other.dim && (self.h - other.h).abs() <= 1e-12 * self.h
    }

    /// Fill-reducing elimination order: natural in one dimension, geometric
    /// nested dissection in two.
    pub fn elimination_order(&self) -> Vec<usize> {
        let n = self.len();
        if self.dim == 1 || n < 256 {
            return (0..n).collect();
        }
        let mut order = Vec::with_capacity(n);
        let all: Vec<usize> = (0..n).collect();
        self.dissect(all, &mut order);
        order
    }

    fn dissect(&self, set: Vec<usize>, order: &mut Vec<usize>) {
        if set.len() <= 64 {
            order.extend(set);
            return;
        }
        let (mut lo, mut hi) = ([i64::MAX; 2], [i64::MIN; 2]);
        for &i in &set {
            for ax in 0..2 {
                lo[ax] = lo[ax].min(self.lattice[i][ax]);
                hi[ax] = hi[ax].max(self.lattice[i][ax]);
            }
        }
        let ax = if hi[0] - lo[0] >= hi[1] - lo[1] { 0 } else { 1 };
        let mid = (lo[ax] + hi[ax]) / 2;
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut sep = Vec::new();
        for i in set {
            match self.lattice[i][ax].cmp(&mid) {
                std::cmp::Ordering::Less => left.push(i),
                std::cmp::Ordering::Greater => right.push(i),
                std::cmp::Ordering::Equal => sep.push(i),
            }
        }
        if left.is_empty() || right.is_empty() {
            order.extend(left);
            order.extend(right);
            order.extend(sep);
            return;
        }
        self.dissect(left, order);
        self.dissect(right, order);
        order.extend(sep);
    }
}

/// Operator data: diagonal diffusion `a`, drift `b` (possibly depending on
/// the control `u`), potential `f` and optional running cost `c(x, u)`.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub dim: usize,
    pub a: Vec<Expression>,
    pub a_offdiag: Option<Expression>,
    pub b: Vec<Expression>,
    pub f: Expression,
    pub c: Option<Expression>,
    pub f_lower_bound: Option<f64>,
    pub ellipticity_floor: f64,
    pub scheme: DriftScheme,
}

/// Discretization of the first-order term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftScheme {
    /// Central second differences plus one-sided drift in the upwind
    /// direction.
    #[default]
    Upwind,
    /// Exponentially fitted (Scharfetter–Gummel) weights
    /// `(a/h²)·B(∓bh/a)` with `B(z) = z/(e^z − 1)`: exact for constant
    /// coefficients, nonnegative for every `h`.
    ExponentialFitting,
}

impl CoefficientSet {
    pub fn new(a: Vec<Expression>, b: Vec<Expression>, f: Expression) -> Self {
        assert_eq!(a.len(), b.len(), "a and b must have one entry per axis");
        CoefficientSet {
            dim: a.len(),
            a,
            a_offdiag: None,
            b,
            f,
            c: None,
            f_lower_bound: None,
            ellipticity_floor: DEFAULT_ELLIPTICITY_FLOOR,
            scheme: DriftScheme::Upwind,
        }
    }

    /// Parses one expression per axis for `a` and `b`, and `f`.
    pub fn parse(a: &[&str], b: &[&str], f: &str) -> Result<Self, ParseError> {
        let p = |s: &&str| s.parse::<Expression>();
        Ok(CoefficientSet::new(
            a.iter().map(p).collect::<Result<_, _>>()?,
            b.iter().map(p).collect::<Result<_, _>>()?,
            f.parse()?,
        ))
    }

    pub fn with_f(&self, f: Expression) -> Self {
        CoefficientSet { f, ..self.clone() }
    }

    pub fn with_b(&self, b: Vec<Expression>) -> Self {
        CoefficientSet { b, ..self.clone() }
    }

    pub fn with_scheme(mut self, scheme: DriftScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_cost(mut self, c: Expression) -> Self {
        self.c = Some(c);
        self
    }

    pub fn uses_control(&self) -> bool {
        self.b.iter().any(|e| e.depends_on(Var::U))
            || self.c.as_ref().is_some_and(|c| c.depends_on(Var::U))
    }

    /// Samples `a`, `b` and `f` at the grid nodes; `b` sees control `u[i]`.
    pub fn sample(&self, grid: &Grid, control: Control<'_>) -> Result<NodalCoefficients, AssemblyError> {
        if self.dim != grid.dim() {
            return Err(AssemblyError::DimensionMismatch {
                coeffs: self.dim,
                grid: grid.dim(),
            });
        }
        if let Control::Policy(p) = control {
            if p.len() != grid.len() {
                return Err(AssemblyError::PolicyLength {
                    got: p.len(),
                    want: grid.len(),
                });
            }
        }
        let n = grid.len();
        let mut nodal = NodalCoefficients {
            a: vec![[0.0; 2]; n],
            b: vec![[0.0; 2]; n],
            f: vec![0.0; n],
            scheme: self.scheme,
        };
        for i in 0..n {
            let x = grid.point(i);
            let u = control.at(i);
            let ev = |what: &'static str, e: &Expression| {
                e.eval_at(x, u)
                    .map_err(|source| AssemblyError::Eval { what, node: i, source })
            };
            if let Some(off) = &self.a_offdiag {
                if ev("a12", off)? != 0.0 {
                    return Err(AssemblyError::NonDiagonalDiffusion2D);
                }
            }
            for ax in 0..self.dim {
                nodal.a[i][ax] = ev("a", &self.a[ax])?;
                nodal.b[i][ax] = ev("b", &self.b[ax])?;
            }
            nodal.f[i] = ev("f", &self.f)?;
        }
        nodal.validate(grid, self.ellipticity_floor, self.f_lower_bound)?;
        Ok(nodal)
    }
}

/// How the control variable `u` is bound during assembly.
#[derive(Debug, Clone, Copy)]
pub enum Control<'a> {
    None,
    Fixed(f64),
    Policy(&'a [f64]),
}

impl Control<'_> {
    fn at(&self, i: usize) -> Option<f64> {
        match self {
            Control::None => None,
            Control::Fixed(u) => Some(*u),
            Control::Policy(p) => Some(p[i]),
        }
    }
}

/// Coefficient values at grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalCoefficients {
    pub a: Vec<[f64; 2]>,
    pub b: Vec<[f64; 2]>,
    pub f: Vec<f64>,
    pub scheme: DriftScheme,
}

impl NodalCoefficients {
    pub fn validate(
        &self,
        grid: &Grid,
        floor: f64,
        f_lower_bound: Option<f64>,
    ) -> Result<(), AssemblyError> {
        for i in 0..grid.len() {
            for ax in 0..grid.dim() {
                let a = self.a[i][ax];
                if !(a > floor) || !a.is_finite() {
                    return Err(AssemblyError::EllipticityViolation {
                        node: i,
                        x: grid.point(i).to_vec(),
                        value: a,
                    });
                }
            }
            if let Some(lb) = f_lower_bound {
                if self.f[i] < lb {
                    return Err(AssemblyError::UnboundedBelow {
                        node: i,
                        value: self.f[i],
                    });
                }
            }
        }
        Ok(())
    }

    pub fn with_potential(&self, f: Vec<f64>) -> Self {
        NodalCoefficients {
            f,
            ..self.clone()
        }
    }
}

/// Sparse discretization of `L^f` on a grid.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub matrix: CsrMatrix,
    pub grid: Arc<Grid>,
    pub nodal: NodalCoefficients,
    /// Largest diagonal magnitude.
    pub diag_max: f64,
    pub irreducible: bool,
}

fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Stencil weights toward the (−, +) neighbours along one axis.
#[inline]
pub fn axis_weights(scheme: DriftScheme, a: f64, b: f64, h: f64) -> (f64, f64) {
    let diff = a / (h * h);
    match scheme {
        DriftScheme::Upwind => (diff + b.min(0.0).abs() / h, diff + b.max(0.0) / h),
        DriftScheme::ExponentialFitting => {
            let p = b * h / a;
            (diff * bernoulli(p), diff * bernoulli(-p))
        }
    }
}

impl DiscreteOperator {
    pub fn assemble(
        grid: Arc<Grid>,
        coeffs: &CoefficientSet,
        control: Control<'_>,
    ) -> Result<DiscreteOperator, AssemblyError> {
        let nodal = coeffs.sample(&grid, control)?;
        Ok(DiscreteOperator::from_nodal(grid, nodal))
    }

    /// Assembles from already-validated nodal values.
    pub fn from_nodal(grid: Arc<Grid>, nodal: NodalCoefficients) -> DiscreteOperator {
        let n = grid.len();
        let h = grid.h();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(1 + 2 * grid.dim());
            let mut diag = nodal.f[i];
            for ax in 0..grid.dim() {
                let (wm, wp) = axis_weights(nodal.scheme, nodal.a[i][ax], nodal.b[i][ax], h);
                diag -= wm + wp;
                if let Some(j) = grid.neighbor(i, ax, -1) {
                    row.push((j, wm));
                }
                if let Some(j) = grid.neighbor(i, ax, 1) {
                    row.push((j, wp));
                }
            }
            row.push((i, diag));
            rows.push(row);
        }
        let matrix = CsrMatrix::from_rows(rows);
        let diag_max = (0..n).map(|i| matrix.diag(i).abs()).fold(0.0, f64::max);
        let irreducible = matrix.components().0 == 1;
        DiscreteOperator {
            matrix,
            grid,
            nodal,
            diag_max,
            irreducible,
        }
    }

    /// Generator of the chain reflected at the grid boundary: the potential
    /// is dropped and flow toward the exterior is removed, so every row sums
    /// to zero.
    pub fn reflected_generator(grid: Arc<Grid>, nodal: &NodalCoefficients) -> DiscreteOperator {
        let n = grid.len();
        let h = grid.h();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(1 + 2 * grid.dim());
            let mut diag = 0.0;
            for ax in 0..grid.dim() {
                let (wm, wp) = axis_weights(nodal.scheme, nodal.a[i][ax], nodal.b[i][ax], h);
                if let Some(j) = grid.neighbor(i, ax, -1) {
                    row.push((j, wm));
                    diag -= wm;
                }
                if let Some(j) = grid.neighbor(i, ax, 1) {
                    row.push((j, wp));
                    diag -= wp;
                }
            }
            row.push((i, diag));
            rows.push(row);
        }
        let matrix = CsrMatrix::from_rows(rows);
        let diag_max = (0..n).map(|i| matrix.diag(i).abs()).fold(0.0, f64::max);
        let irreducible = matrix.components().0 == 1;
        let nodal = nodal.with_potential(vec![0.0; n]);
        DiscreteOperator {
            matrix,
            grid,
            nodal,
            diag_max,
            irreducible,
        }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Same operator with `f` replaced nodewise.
    pub fn with_potential(&self, f: Vec<f64>) -> DiscreteOperator {
        DiscreteOperator::from_nodal(self.grid.clone(), self.nodal.with_potential(f))
    }

    /// Applies the stencil at every interior node with neighbour values read
    /// from `value_at` (called with lattice coordinates), so exterior
    /// neighbours see the function rather than zero.
    pub fn apply_stencil<F>(&self, mut value_at: F, include_potential: bool) -> Vec<f64>
    where
        F: FnMut([i64; 2]) -> f64,
    {
        let g = &self.grid;
        let h = g.h();
        (0..g.len())
            .map(|i| {
                let k = g.lattice(i);
                let v0 = value_at(k);
                let mut s = if include_potential { self.nodal.f[i] * v0 } else { 0.0 };
                for ax in 0..g.dim() {
                    let (wm, wp) = axis_weights(self.nodal.scheme, self.nodal.a[i][ax], self.nodal.b[i][ax], h);
                    let mut km = k;
                    km[ax] -= 1;
                    let mut kp = k;
                    kp[ax] += 1;
                    s += wm * (value_at(km) - v0) + wp * (value_at(kp) - v0);
                }
                s
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeffs(a: &[&str], b: &[&str], f: &str) -> CoefficientSet {
        CoefficientSet::parse(a, b, f).unwrap()
    }

    #[test]
    fn one_dimensional_ball() {
        let g = Grid::build(1, 2.0, 0.0, 5).unwrap();
        assert_eq!(g.h(), 1.0);
        let xs: Vec<f64> = g.points().map(|p| p[0]).collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);
        assert_eq!(g.origin(), Some(1));
    }

    #[test]
    fn two_dimensional_ball_counts_lattice_points_inside_unit_disk() {
        let g = Grid::build(2, 1.0, 0.0, 5).unwrap();
        // brute force: points (i/2, j/2), i,j in -2..=2 with i^2+j^2 < 4
        let mut count = 0;
        for i in -2i32..=2 {
            for j in -2i32..=2 {
                let (x, y) = (i as f64 * 0.5, j as f64 * 0.5);
                if x * x + y * y < 1.0 - 1e-12 {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 9);
        assert_eq!(g.len(), 9);
        assert!(g.origin().is_some());
    }

    #[test]
    fn annulus_has_two_segments_in_one_dimension() {
        let g = Grid::build(1, 3.0, 1.0, 13).unwrap();
        let xs: Vec<f64> = g.points().map(|p| p[0]).collect();
        assert_eq!(xs, vec![-2.5, -2.0, -1.5, 1.5, 2.0, 2.5]);
        assert_eq!(g.origin(), None);
        let op = DiscreteOperator::assemble(
            Arc::new(g),
            &coeffs(&["1"], &["0"], "0"),
            Control::None,
        )
        .unwrap();
        assert_eq!(op.matrix.components().0, 2);
        assert!(!op.irreducible);
    }

    #[test]
    fn exponential_fitting_weights() {
        let (a, b, h) = (0.5, 2.0, 0.5);
        let (wm, wp) = axis_weights(DriftScheme::ExponentialFitting, a, b, h);
        assert!(wm > 0.0 && wp > 0.0);
        assert!((wp - wm - b / h).abs() < 1e-12);
        let (cm, cp) = axis_weights(DriftScheme::ExponentialFitting, a, 0.0, h);
        assert_eq!((cm, cp), (a / (h * h), a / (h * h)));
        // exact on e^{-bx/a}, which solves a v'' + b v' = 0
        let v = |x: f64| (-b * x / a).exp();
        let r = wm * (v(-h) - v(0.0)) + wp * (v(h) - v(0.0));
        assert!(r.abs() < 1e-12, "{r}");
    }

    #[test]
    fn build_errors() {
        assert_eq!(Grid::build(1, 2.0, 0.0, 6), Err(GridError::EvenNodeCount(6)));
        assert!(matches!(Grid::build(1, 1.0, 2.0, 7), Err(GridError::BadRadius { .. })));
        assert_eq!(Grid::build(1, 1.0, 0.0, 3), Err(GridError::TooFewNodes(3)));
    }

    #[test]
    fn laplacian_row_stencil() {
        let g = Arc::new(Grid::build(1, 2.0, 0.0, 5).unwrap());
        let op = DiscreteOperator::assemble(g, &coeffs(&["1"], &["0"], "0"), Control::None).unwrap();
        assert_eq!(op.matrix.get(1, 0), 1.0);
        assert_eq!(op.matrix.get(1, 1), -2.0);
        assert_eq!(op.matrix.get(1, 2), 1.0);
    }

    #[test]
    fn upwind_row_by_hand() {
        // a = 1/2, b = 2, h = 0.5: backward a/h^2 = 2, forward a/h^2 + b/h = 6
        let g = Arc::new(Grid::build(1, 1.0, 0.0, 5).unwrap());
        assert_eq!(g.h(), 0.5);
        let op =
            DiscreteOperator::assemble(g, &coeffs(&["1/2"], &["2"], "0"), Control::None).unwrap();
        let c = 1;
        assert_eq!(op.matrix.get(c, c - 1), 2.0);
        assert_eq!(op.matrix.get(c, c + 1), 6.0);
        assert_eq!(op.matrix.get(c, c), -8.0);
        let row_sum: f64 = op.matrix.row(c).map(|(_, v)| v).sum();
        assert_eq!(row_sum, 0.0);
    }

    #[test]
    fn negative_drift_uses_backward_difference() {
        let g = Arc::new(Grid::build(1, 1.0, 0.0, 5).unwrap());
        let op =
            DiscreteOperator::assemble(g, &coeffs(&["1/2"], &["-2"], "0"), Control::None).unwrap();
        assert_eq!(op.matrix.get(1, 0), 6.0);
        assert_eq!(op.matrix.get(1, 2), 2.0);
    }

    #[test]
    fn ellipticity_and_lower_bound_violations() {
        let g = Arc::new(Grid::build(1, 2.0, 0.0, 5).unwrap());
        let err = DiscreteOperator::assemble(g.clone(), &coeffs(&["0"], &["0"], "0"), Control::None);
        assert!(matches!(err, Err(AssemblyError::EllipticityViolation { .. })));
        let mut c = coeffs(&["1"], &["0"], "x1");
        c.f_lower_bound = Some(-0.5);
        let err = DiscreteOperator::assemble(g.clone(), &c, Control::None);
        assert!(matches!(err, Err(AssemblyError::UnboundedBelow { node: 0, .. })));
        let mut c = coeffs(&["1", "1"], &["0", "0"], "0");
        c.a_offdiag = Some("0.1".parse().unwrap());
        let g2 = Arc::new(Grid::build(2, 1.0, 0.0, 5).unwrap());
        assert_eq!(
            DiscreteOperator::assemble(g2, &c, Control::None).unwrap_err(),
            AssemblyError::NonDiagonalDiffusion2D
        );
        let err = DiscreteOperator::assemble(g, &coeffs(&["1"], &["1/x1"], "0"), Control::None);
        assert!(matches!(err, Err(AssemblyError::Eval { what: "b", .. })));
    }

    #[test]
    fn nested_dissection_is_a_permutation() {
        let g = Grid::build(2, 6.0, 0.0, 61).unwrap();
        let mut order = g.elimination_order();
        assert_eq!(order.len(), g.len());
        order.sort_unstable();
        assert!(order.iter().enumerate().all(|(i, &v)| i == v));
    }

    #[test]
    fn reflected_generator_rows_sum_to_zero() {
        let g = Arc::new(Grid::build(2, 2.0, 0.0, 9).unwrap());
        let c = coeffs(&["1", "0.5"], &["-x1", "sin(x2)"], "3");
        let nodal = c.sample(&g, Control::None).unwrap();
        let op = DiscreteOperator::reflected_generator(g, &nodal);
        for i in 0..op.len() {
            let s: f64 = op.matrix.row(i).map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-12);
        }
    }
}
