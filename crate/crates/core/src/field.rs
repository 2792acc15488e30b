//! Scalar and vector fields given either as expressions or as nodal values
//! on a grid.

use std::sync::Arc;

use crate::expr::{EvalError, Expression, Program};
use crate::grid::Grid;

/// Nodal values with `comps` components per node.
#[derive(Debug, Clone)]
pub struct GridField {
    grid: Arc<Grid>,
    comps: usize,
    values: Vec<f64>,
    // nodes are projected inside this radius before rounding
    inner: f64,
}

impl GridField {
    pub fn scalar(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len());
        let inner = grid.radius() - 1.5 * grid.h();
        GridField {
            grid,
            comps: 1,
            values,
            inner,
        }
    }

    pub fn vector(grid: Arc<Grid>, values: &[[f64; 2]]) -> Self {
        assert_eq!(values.len(), grid.len());
        let comps = grid.dim();
        let flat = values.iter().flat_map(|v| v[..comps].to_vec()).collect();
        let inner = grid.radius() - 1.5 * grid.h();
        GridField {
            grid,
            comps,
            values: flat,
            inner,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    pub fn node_value(&self, i: usize, c: usize) -> f64 {
        self.values[i * self.comps + c]
    }

    fn nearest(&self, x: &[f64; 2]) -> usize {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let p = if r > self.inner && r > 0.0 {
            let s = self.inner / r;
            [x[0] * s, x[1] * s]
        } else {
            *x
        };
        let h = self.grid.h();
        let k = [(p[0] / h).round() as i64, (p[1] / h).round() as i64];
        match self.grid.index_of(k) {
            Some(i) => i,
            None => self.grid.nearest_node(&p[..self.grid.dim()]),
        }
    }

    /// Multilinear interpolation where every surrounding lattice corner is
    /// an interior node, nearest-node value otherwise.
    pub fn sample(&self, x: &[f64; 2], out: &mut [f64]) {
        let h = self.grid.h();
        let dim = self.grid.dim();
        let s = [x[0] / h, x[1] / h];
        let k0 = [s[0].floor() as i64, if dim > 1 { s[1].floor() as i64 } else { 0 }];
        let t = [s[0] - k0[0] as f64, if dim > 1 { s[1] - k0[1] as f64 } else { 0.0 }];
        let corners: &[[i64; 2]] = if dim == 1 {
            &[[0, 0], [1, 0]]
        } else {
            &[[0, 0], [1, 0], [0, 1], [1, 1]]
        };
        out[..self.comps].iter_mut().for_each(|v| *v = 0.0);
        for c in corners {
            let w = (if c[0] == 1 { t[0] } else { 1.0 - t[0] })
                * (if c[1] == 1 { t[1] } else { 1.0 - t[1] });
            match self.grid.index_of([k0[0] + c[0], k0[1] + c[1]]) {
                Some(i) => {
                    for (j, o) in out[..self.comps].iter_mut().enumerate() {
                        *o += w * self.values[i * self.comps + j];
                    }
                }
                None => {
                    let i = self.nearest(x);
                    for (j, o) in out[..self.comps].iter_mut().enumerate() {
                        *o = self.values[i * self.comps + j];
                    }
                    return;
                }
            }
        }
    }

    pub fn sample_scalar(&self, x: &[f64; 2]) -> f64 {
        let mut v = [0.0];
        self.sample(x, &mut v);
        v[0]
    }
}

/// A real-valued field.
#[derive(Debug, Clone)]
pub enum ScalarField {
    Const(f64),
    Expr(Program),
    Grid(GridField),
}

impl ScalarField {
    pub fn from_expression(e: &Expression) -> Self {
        if e.free_vars().is_empty() {
            if let Ok(v) = e.eval_at(&[0.0, 0.0], None) {
                return ScalarField::Const(v);
            }
        }
        ScalarField::Expr(e.program().clone())
    }

    #[inline]
    pub fn eval(&self, x: &[f64; 2]) -> Result<f64, EvalError> {
        match self {
            ScalarField::Const(c) => Ok(*c),
            ScalarField::Expr(p) => p.eval(&[x[0], x[1], 0.0]),
            ScalarField::Grid(g) => Ok(g.sample_scalar(x)),
        }
    }
}

/// A drift field in `d` components.
#[derive(Debug, Clone)]
pub enum VectorField {
    Expr(Vec<ScalarField>),
    Grid(GridField),
    /// `b(x, u)` with `u` read from a nodal control at the nearest node.
    Controlled { b: Vec<Program>, control: GridField },
}

impl VectorField {
    pub fn from_expressions(es: &[Expression]) -> Self {
        VectorField::Expr(es.iter().map(ScalarField::from_expression).collect())
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorField::Expr(v) => v.len(),
            VectorField::Grid(g) => g.comps(),
            VectorField::Controlled { b, .. } => b.len(),
        }
    }

    /// Radius of the grid backing the field, if any.
    pub fn grid_radius(&self) -> Option<f64> {
        match self {
            VectorField::Expr(_) => None,
            VectorField::Grid(g) => Some(g.grid().radius()),
            VectorField::Controlled { control, .. } => Some(control.grid().radius()),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64; 2], out: &mut [f64; 2]) -> Result<(), EvalError> {
        match self {
            VectorField::Expr(v) => {
                for (o, f) in out.iter_mut().zip(v) {
                    *o = f.eval(x)?;
                }
            }
            VectorField::Grid(g) => g.sample(x, out),
            VectorField::Controlled { b, control } => {
                let u = control.node_value(control.nearest(x), 0);
                for (o, p) in out.iter_mut().zip(b) {
                    *o = p.eval(&[x[0], x[1], u])?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_exact_on_linear_data_and_clamps_outside() {
        let g = Arc::new(Grid::build(2, 2.0, 0.0, 21).unwrap());
        let vals: Vec<f64> = g.points().map(|p| 1.0 + 2.0 * p[0] - p[1]).collect();
        let f = GridField::scalar(g.clone(), vals);
        let v = f.sample_scalar(&[0.33, -0.71]);
        assert!((v - (1.0 + 0.66 + 0.71)).abs() < 1e-12);
        // far outside: value at a boundary node
        let far = f.sample_scalar(&[50.0, 0.0]);
        let i = g.nearest_node(&[1.7, 0.0]);
        assert!((far - (1.0 + 2.0 * g.point(i)[0] - g.point(i)[1])).abs() < 1e-12);
    }

    #[test]
    fn constant_expressions_are_folded() {
        let e: Expression = "2*3".parse().unwrap();
        assert!(matches!(ScalarField::from_expression(&e), ScalarField::Const(v) if v == 6.0));
    }
}
