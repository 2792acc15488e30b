//! Risk-sensitive ergodic control over a finite action set: policy
//! iteration for `min_u [L_u V + c(·,u) V] = Λ* V` on a fixed grid, a
//! brute-force policy oracle, and a continuity probe for `v ↦ λ*_v`.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::eigen::{dense_max_real_eigenvalue, principal_eigenpair, EigenError, EigenOptions};
use crate::expr::Expression;
use crate::grid::{axis_weights, AssemblyError, CoefficientSet, Control, DiscreteOperator, Grid, GridError, NodalCoefficients};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("policy iteration did not settle within {iterations} iterations")]
    NotConverged { iterations: usize, best: Box<HjbSolution> },
    #[error("{policies} policies exceed the enumeration limit of 600000 (or more than 12 nodes / 3 actions)")]
    TooLarge { policies: f64 },
    #[error("running cost is negative ({value:e}) at node {node} for action {action}")]
    NegativeCost { node: usize, action: usize, value: f64 },
    #[error("{0}")]
    BadInput(String),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Drift `b(x,u)` and cost `c(x,u)` of `coeffs` (the potential slot is
/// ignored) on a fixed grid with a finite action list.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub coeffs: CoefficientSet,
    pub cost: Expression,
    pub actions: Vec<f64>,
    pub grid: Arc<Grid>,
    pub eigen: EigenOptions,
    pub max_iter: usize,
}

/// Action index per grid node.
pub type Policy = Vec<usize>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub iteration: usize,
    pub lambda: f64,
    pub changed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjbSolution {
    /// Positive, 1 at the origin.
    pub v: Vec<f64>,
    pub lambda_star: f64,
    pub policy: Policy,
    pub trace: Vec<TraceStep>,
    pub converged: bool,
    /// Whether λ never increased along the trace.
    pub monotone_trace: bool,
}

/// Initial policy of policy iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartPolicy {
    /// `argmin_u c(x,u)`
    #[default]
    CheapestCost,
    /// `argmax_u c(x,u)`
    CostliestCost,
}

impl ControlProblem {
    /// Problem on the ball of `radius` with the ladder spacing convention.
    pub fn on_ball(
        coeffs: CoefficientSet,
        cost: Expression,
        actions: Vec<f64>,
        radius: f64,
        points_per_unit: f64,
    ) -> Result<Self, ControlError> {
        let grid = Arc::new(Grid::ball_with_spacing(coeffs.dim, radius, points_per_unit)?);
        ControlProblem::new(coeffs, cost, actions, grid)
    }

    pub fn new(coeffs: CoefficientSet, cost: Expression, actions: Vec<f64>, grid: Arc<Grid>) -> Result<Self, ControlError> {
        if actions.is_empty() {
            return Err(ControlError::BadInput("empty action set".into()));
        }
        if grid.origin().is_none() {
            return Err(ControlError::BadInput("control grid must contain the origin".into()));
        }
        let p = ControlProblem {
            coeffs,
            cost,
            actions,
            grid,
            eigen: EigenOptions {
                tol: 1e-13,
                ..EigenOptions::default()
            },
            max_iter: 100,
        };
        for (k, _) in p.actions.iter().enumerate() {
            let nodal = p.nodal(&vec![k; p.grid.len()])?;
            if let Some(node) = nodal.f.iter().position(|c| *c < 0.0) {
                return Err(ControlError::NegativeCost {
                    node,
                    action: k,
                    value: nodal.f[node],
                });
            }
        }
        Ok(p)
    }

    fn action_values(&self, policy: &[usize]) -> Vec<f64> {
        policy.iter().map(|&k| self.actions[k]).collect()
    }

    /// Nodal drift and cost (as the potential) under `policy`.
    pub fn nodal(&self, policy: &[usize]) -> Result<NodalCoefficients, ControlError> {
        let u = self.action_values(policy);
        let c = self.coeffs.with_f(self.cost.clone());
        Ok(c.sample(&self.grid, Control::Policy(&u))?)
    }

    pub fn operator(&self, policy: &[usize]) -> Result<DiscreteOperator, ControlError> {
        Ok(DiscreteOperator::from_nodal(self.grid.clone(), self.nodal(policy)?))
    }

    fn start(&self, start: StartPolicy) -> Result<Policy, ControlError> {
        let per_action: Vec<Vec<f64>> = (0..self.actions.len())
            .map(|k| self.nodal(&vec![k; self.grid.len()]).map(|n| n.f))
            .collect::<Result<_, _>>()?;
        Ok((0..self.grid.len())
            .map(|i| {
                let mut best = 0;
                for k in 1..self.actions.len() {
                    let (cand, cur) = (per_action[k][i], per_action[best][i]);
                    let better = match start {
                        StartPolicy::CheapestCost => cand < cur,
                        StartPolicy::CostliestCost => cand > cur,
                    };
                    if better {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }

    /// Row actions `[L_u V + c(·,u)V]_i` for every action, exterior `V = 0`.
    fn row_actions(&self, v: &[f64]) -> Result<Vec<Vec<f64>>, ControlError> {
        let g = &self.grid;
        let h = g.h();
        (0..self.actions.len())
            .map(|k| {
                let nodal = self.nodal(&vec![k; g.len()])?;
                Ok((0..g.len())
                    .map(|i| {
                        let mut s = nodal.f[i] * v[i];
                        for ax in 0..g.dim() {
                            let (wm, wp) = axis_weights(nodal.scheme, nodal.a[i][ax], nodal.b[i][ax], h);
                            let vm = g.neighbor(i, ax, -1).map_or(0.0, |j| v[j]);
                            let vp = g.neighbor(i, ax, 1).map_or(0.0, |j| v[j]);
                            s += wm * (vm - v[i]) + wp * (vp - v[i]);
                        }
                        s
                    })
                    .collect())
            })
            .collect()
    }

    /// Principal eigenvalue and eigenvector of the frozen-policy operator.
    pub fn policy_eigenpair(&self, policy: &[usize]) -> Result<(f64, Vec<f64>), ControlError> {
        let op = self.operator(policy)?;
        let pair = principal_eigenpair(&op, &self.eigen)?;
        Ok((pair.lambda, pair.psi))
    }

    /// Policy CSV: `x1[,x2],action,V`.
    pub fn write_policy_csv<W: Write>(&self, sol: &HjbSolution, mut w: W) -> io::Result<()> {
        if self.grid.dim() == 1 {
            writeln!(w, "x1,action,V")?;
        } else {
            writeln!(w, "x1,x2,action,V")?;
        }
        for i in 0..self.grid.len() {
            let p = self.grid.point(i);
            let coords: Vec<String> = p.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{},{},{}", coords.join(","), self.actions[sol.policy[i]], sol.v[i])?;
        }
        Ok(())
    }
}

fn improve(rows: &[Vec<f64>], current: &[usize]) -> Policy {
    (0..current.len())
        .map(|i| {
            let mut best = 0;
            for k in 1..rows.len() {
                let (cand, cur) = (rows[k][i], rows[best][i]);
                if cand < cur - 1e-12 * cur.abs() {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn solve_hjb(problem: &ControlProblem) -> Result<HjbSolution, ControlError> {
    solve_hjb_from(problem, StartPolicy::CheapestCost)
}

/// Policy iteration from the given start; ties go to the lowest action
/// index.
pub fn solve_hjb_from(problem: &ControlProblem, start: StartPolicy) -> Result<HjbSolution, ControlError> {
    let mut policy = problem.start(start)?;
    let mut trace = Vec::new();
    let mut best: Option<HjbSolution> = None;
    let mut prev_lambda = f64::INFINITY;
    for iteration in 1..=problem.max_iter {
        let (lambda, v) = problem.policy_eigenpair(&policy)?;
        let rows = problem.row_actions(&v)?;
        let next = improve(&rows, &policy);
        let changed = next.iter().zip(&policy).filter(|(a, b)| a != b).count();
        trace.push(TraceStep {
            iteration,
            lambda,
            changed,
        });
        let monotone_trace = trace.windows(2).all(|w| w[1].lambda <= w[0].lambda + 1e-12 * w[0].lambda.abs().max(1.0));
        let settled = changed == 0 || (lambda - prev_lambda).abs() < 1e-10;
        let sol = HjbSolution {
            v,
            lambda_star: lambda,
            policy: policy.clone(),
            trace: trace.clone(),
            converged: settled,
            monotone_trace,
        };
        if settled {
            return Ok(sol);
        }
        if best.as_ref().is_none_or(|b| lambda < b.lambda_star) {
            best = Some(sol);
        }
        prev_lambda = lambda;
        policy = next;
    }
    let mut best = best.expect("at least one iteration");
    best.trace = trace;
    Err(ControlError::NotConverged {
        iterations: problem.max_iter,
        best: Box::new(best),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub lambda: f64,
    pub policy: Policy,
    pub evaluated: usize,
}

/// Minimum of the principal eigenvalue over every policy by dense
/// eigensolves.
pub fn enumerate_policies_oracle(problem: &ControlProblem) -> Result<OracleResult, ControlError> {
    let n = problem.grid.len();
    let m = problem.actions.len();
    let count = (m as f64).powi(n as i32);
    if n > 12 || m > 3 || count > 600_000.0 {
        return Err(ControlError::TooLarge { policies: count });
    }
    let count = count as usize;
    let per_action: Vec<NodalCoefficients> = (0..m)
        .map(|k| problem.nodal(&vec![k; n]))
        .collect::<Result<_, _>>()?;
    let decode = |mut idx: usize| -> Policy {
        let mut p = vec![0; n];
        for slot in p.iter_mut().rev() {
            *slot = idx % m;
            idx /= m;
        }
        p
    };
    let values: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let p = decode(idx);
            let mut nodal = per_action[0].clone();
            for (i, &k) in p.iter().enumerate() {
                nodal.b[i] = per_action[k].b[i];
                nodal.f[i] = per_action[k].f[i];
            }
            let op = DiscreteOperator::from_nodal(problem.grid.clone(), nodal);
            dense_max_real_eigenvalue(&op.matrix.to_dense())
        })
        .collect();
    let (arg, lambda) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    Ok(OracleResult {
        lambda,
        policy: decode(arg),
        evaluated: count,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    pub ts: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub max_jump: f64,
}

/// `λ*` along the blend `(1−t)·(b,c)_base + t·(b,c)_new` applied at
/// `nodes`.
pub fn continuity_probe(
    problem: &ControlProblem,
    base: &[usize],
    nodes: &[usize],
    new_actions: &[usize],
    ts: &[f64],
) -> Result<ContinuityReport, ControlError> {
    if nodes.len() != new_actions.len() {
        return Err(ControlError::BadInput("one new action per perturbed node".into()));
    }
    if ts.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(ControlError::BadInput("mixing weights must lie in [0, 1]".into()));
    }
    let mut other = base.to_vec();
    for (&i, &k) in nodes.iter().zip(new_actions) {
        if i >= other.len() || k >= problem.actions.len() {
            return Err(ControlError::BadInput(format!("node {i} or action {k} out of range")));
        }
        other[i] = k;
    }
    let n0 = problem.nodal(base)?;
    let n1 = problem.nodal(&other)?;
    let lambdas: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let mut nodal = n0.clone();
            for &i in nodes {
                for ax in 0..problem.grid.dim() {
                    nodal.b[i][ax] = (1.0 - t) * n0.b[i][ax] + t * n1.b[i][ax];
                }
                nodal.f[i] = (1.0 - t) * n0.f[i] + t * n1.f[i];
            }
            let op = DiscreteOperator::from_nodal(problem.grid.clone(), nodal);
            principal_eigenpair(&op, &problem.eigen).map(|p| p.lambda)
        })
        .collect::<Result<_, _>>()?;
    let max_jump = lambdas.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    Ok(ContinuityReport {
        ts: ts.to_vec(),
        lambdas,
        max_jump,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exhaustion::{lambda_star, LadderConfig};

    fn bang_bang(n: usize) -> ControlProblem {
        let coeffs = CoefficientSet::parse(&["0.5"], &["u"], "0").unwrap();
        let grid = Arc::new(Grid::build(1, 2.0, 0.0, n + 2).unwrap());
        ControlProblem::new(coeffs, "x^2".parse().unwrap(), vec![-1.0, 1.0], grid).unwrap()
    }

    #[test]
    fn singleton_action_reduces_to_the_uncontrolled_problem() {
        let coeffs = CoefficientSet::parse(&["0.5"], &["-x + 0*u"], "0").unwrap();
        let p = ControlProblem::on_ball(coeffs, "0.3*exp(-(x^2))".parse().unwrap(), vec![0.0], 3.0, 10.0).unwrap();
        let sol = solve_hjb(&p).unwrap();
        let direct_coeffs = CoefficientSet::parse(&["0.5"], &["-x"], "0.3*exp(-(x^2))").unwrap();
        let mut ladder = LadderConfig::for_dim(1).fixed_rungs(1);
        ladder.r0 = 3.0;
        ladder.points_per_unit = 10.0;
        ladder.eigen = p.eigen.clone();
        let gs = lambda_star(&direct_coeffs, &ladder).unwrap();
        assert!((sol.lambda_star - gs.lambda_star).abs() <= 1e-12);
        for (a, b) in sol.v.iter().zip(&gs.psi_star) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(sol.converged);
    }

    #[test]
    fn policy_iteration_matches_the_oracle() {
        let p = bang_bang(9);
        let sol = solve_hjb(&p).unwrap();
        let oracle = enumerate_policies_oracle(&p).unwrap();
        assert_eq!(oracle.evaluated, 512);
        assert!((sol.lambda_star - oracle.lambda).abs() <= 1e-10, "{} vs {}", sol.lambda_star, oracle.lambda);
        let worst = solve_hjb_from(&p, StartPolicy::CostliestCost).unwrap();
        assert!((worst.lambda_star - sol.lambda_star).abs() <= 1e-8);
        let vmax = sol.v.iter().copied().fold(0.0, f64::max);
        for (a, b) in worst.v.iter().zip(&sol.v) {
            assert!((a - b).abs() <= 1e-6 * vmax);
        }
    }

    #[test]
    fn bounded_cost_policy_points_to_the_origin_away_from_the_boundary() {
        let coeffs = CoefficientSet::parse(&["0.5"], &["u"], "0").unwrap();
        let p = ControlProblem::on_ball(coeffs, "min(x^2, 1)".parse().unwrap(), vec![-1.0, 1.0], 6.0, 10.0).unwrap();
        let sol = solve_hjb(&p).unwrap();
        assert!(sol.converged && sol.monotone_trace);
        for i in 0..p.grid.len() {
            let x = p.grid.point(i)[0];
            if x.abs() > 1e-12 && x.abs() < 1.5 {
                assert_eq!(p.actions[sol.policy[i]], -x.signum(), "x = {x}");
            }
        }
    }

    #[test]
    fn oracle_rejects_large_instances() {
        let p = bang_bang(21);
        assert!(matches!(enumerate_policies_oracle(&p), Err(ControlError::TooLarge { .. })));
    }

    #[test]
    fn duplicated_action_changes_nothing() {
        let coeffs = CoefficientSet::parse(&["0.5"], &["u"], "0").unwrap();
        let grid = Arc::new(Grid::build(1, 2.0, 0.0, 9).unwrap());
        let cost: Expression = "x^2".parse().unwrap();
        let single = ControlProblem::new(coeffs.clone(), cost.clone(), vec![1.0], grid.clone()).unwrap();
        let double = ControlProblem::new(coeffs, cost, vec![1.0, 1.0], grid).unwrap();
        let a = solve_hjb(&single).unwrap();
        let b = solve_hjb(&double).unwrap();
        assert_eq!(a.lambda_star, b.lambda_star);
        assert!(b.policy.iter().all(|&k| k == 0));
        let oa = enumerate_policies_oracle(&single).unwrap();
        let ob = enumerate_policies_oracle(&double).unwrap();
        assert!((oa.lambda - ob.lambda).abs() < 1e-12);
    }

    #[test]
    fn continuity_endpoints_are_exact() {
        let p = bang_bang(9);
        let base = vec![0; 9];
        let mut other = base.clone();
        other[2] = 1;
        other[3] = 1;
        let r = continuity_probe(&p, &base, &[2, 3], &[1, 1], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(r.lambdas[0], p.policy_eigenpair(&base).unwrap().0);
        assert_eq!(r.lambdas[2], p.policy_eigenpair(&other).unwrap().0);
    }

    #[test]
    fn negative_costs_are_rejected() {
        let coeffs = CoefficientSet::parse(&["0.5"], &["u"], "0").unwrap();
        let grid = Arc::new(Grid::build(1, 2.0, 0.0, 9).unwrap());
        let err = ControlProblem::new(coeffs, "x - 0.5".parse().unwrap(), vec![1.0], grid).unwrap_err();
        assert!(matches!(err, ControlError::NegativeCost { .. }));
    }
}
