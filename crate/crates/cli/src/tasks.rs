//! One function per command: run the library, collect report fields,
//! CSV tables and plots.

use std::fmt::Write as _;

use serde_json::{json, Map, Value};

use eigendrift::beta::{
    derivative_check, duality_residual, ergodic_identity_check, lambda_curve, ControlSpec, CurveConfig, IdentityConfig,
    RecurrenceCheck,
};
use eigendrift::control::{solve_hjb_from, ControlError, ControlProblem, HjbSolution, StartPolicy};
use eigendrift::exhaustion::{lambda_star, GroundState};
use eigendrift::field::{GridField, VectorField};
use eigendrift::grid::CoefficientSet;
use eigendrift::probe::{
    classify_at_lambda, classify_ground_state, ClassifyConfig, GroundStateVerdict, MonotonicityReport,
    MonotonicityVerdict, ReturnEvidence,
};
use eigendrift::sde::{ergodic_average, feynman_kac, hitting_stats, simulate, HittingStats, Process, SimError, TargetBall};

use crate::config::{parse_expression, ConfigError, Format, ProcessKind, RunConfig, Start, TaskBlock};
use crate::report::{num, nums};
use crate::svg::{bin, histogram, Plot, Series, Style};

#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub format: Format,
    pub contents: String,
}

#[derive(Debug, Default)]
pub struct TaskOutput {
    pub outputs: Map<String, Value>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

impl TaskOutput {
    fn set(&mut self, key: &str, v: Value) {
        self.outputs.insert(key.into(), v);
    }

    fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    fn csv(&mut self, name: &str, contents: String) {
        self.artifacts.push(Artifact {
            name: name.into(),
            format: Format::Csv,
            contents,
        });
    }

    fn svg(&mut self, name: &str, contents: String) {
        self.artifacts.push(Artifact {
            name: name.into(),
            format: Format::Svg,
            contents,
        });
    }
}

/// A numeric failure; `partial` keeps whatever was computed before it.
#[derive(Debug)]
pub struct TaskFailure {
    pub message: String,
    pub partial: TaskOutput,
}

#[derive(Debug)]
pub enum TaskError {
    Config(ConfigError),
    Numeric(TaskFailure),
}

impl From<ConfigError> for TaskError {
    fn from(e: ConfigError) -> Self {
        TaskError::Config(e)
    }
}

fn numeric<E: std::fmt::Display>(partial: TaskOutput) -> impl FnOnce(E) -> TaskError {
    move |e| {
        TaskError::Numeric(TaskFailure {
            message: e.to_string(),
            partial,
        })
    }
}

fn fail<E: std::fmt::Display>(e: E) -> TaskError {
    TaskError::Numeric(TaskFailure {
        message: e.to_string(),
        partial: TaskOutput::default(),
    })
}

pub fn run_task(cfg: &RunConfig) -> Result<TaskOutput, TaskError> {
    let coeffs = cfg.coefficients()?;
    match &cfg.task {
        TaskBlock::Eigen(_) => eigen(cfg, &coeffs),
        TaskBlock::Curve(_) => curve(cfg, &coeffs),
        TaskBlock::Simulate(_) => simulate_task(cfg, &coeffs),
        TaskBlock::Classify(_) => classify(cfg, &coeffs),
        TaskBlock::Hjb(_) => hjb(cfg, &coeffs),
        TaskBlock::Identities(_) => identities(cfg, &coeffs),
    }
}

fn coords_header(dim: usize) -> &'static str {
    if dim == 1 {
        "x1"
    } else {
        "x1,x2"
    }
}

fn coords(p: &[f64]) -> String {
    p.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

fn ground_state_json(gs: &GroundState) -> Value {
    let ladder: Vec<Value> = gs
        .ladder
        .iter()
        .map(|r| json!({"radius": num(r.radius), "n_per_axis": r.n_per_axis, "lambda": num(r.lambda)}))
        .collect();
    json!({
        "lambda_star": num(gs.lambda_star),
        "converged": gs.converged,
        "extrapolated": gs.extrapolated.map_or(Value::Null, num),
        "monotone": gs.monotone,
        "residual": num(gs.residual),
        "ladder": ladder,
        "grid": {"radius": num(gs.grid.radius()), "h": num(gs.grid.h()), "nodes": gs.grid.len()},
    })
}

fn ground_state_warnings(gs: &GroundState, out: &mut TaskOutput) {
    if !gs.converged {
        out.warn("exhaustion ladder did not converge within the configured rungs; lambda_star is the last rung");
    }
    if !gs.monotone {
        out.warn("exhaustion ladder is not monotone");
    }
}

fn eigen(cfg: &RunConfig, coeffs: &CoefficientSet) -> Result<TaskOutput, TaskError> {
    let gs = lambda_star(coeffs, &cfg.ladder()).map_err(fail)?;
    let mut out = TaskOutput::default();
    if let Value::Object(m) = ground_state_json(&gs) {
        out.outputs.extend(m);
    }
    ground_state_warnings(&gs, &mut out);

    let mut csv = String::from("radius,n_per_axis,lambda\n");
    for r in &gs.ladder {
        let _ = writeln!(csv, "{},{},{}", r.radius, r.n_per_axis, r.lambda);
    }
    out.csv("ladder.csv", csv);

    let dim = gs.grid.dim();
    let mut csv = format!("{},psi,log_psi,", coords_header(dim));
    csv.push_str(if dim == 1 { "twisted_drift1\n" } else { "twisted_drift1,twisted_drift2\n" });
    for i in 0..gs.grid.len() {
        let d = gs.twisted_drift[i];
        let drift = if dim == 1 { d[0].to_string() } else { format!("{},{}", d[0], d[1]) };
        let _ = writeln!(csv, "{},{},{},{}", coords(gs.grid.point(i)), gs.psi_star[i], gs.log_psi[i], drift);
    }
    out.csv("ground_state.csv", csv);

    let pts: Vec<(f64, f64)> = gs.ladder.iter().map(|r| (r.radius, r.lambda)).collect();
    let mut plot = Plot::new("Dirichlet exhaustion", "radius r", "principal eigenvalue on B_r")
        .series(Series::new("rung eigenvalue", pts, Style::LineMarkers));
    if let Some(x) = gs.extrapolated {
        let r = gs.ladder.last().map_or(1.0, |r| r.radius);
        plot = plot.series(Series::new("extrapolated", vec![(gs.ladder[0].radius, x), (r, x)], Style::Line));
    }
    out.svg("ladder.svg", plot.render());
    Ok(out)
}

fn curve(cfg: &RunConfig, coeffs: &CoefficientSet) -> Result<TaskOutput, TaskError> {
    let TaskBlock::Curve(task) = &cfg.task else { unreachable!() };
    let mut cc = CurveConfig::for_dim(coeffs.dim);
    cc.ladder = cfg.ladder();
    if let Some(v) = task.slope_tol {
        cc.slope_tol = v;
    }
    if let Some(v) = task.bisection_depth {
        cc.bisection_depth = v;
    }
    cc.allow_nonvanishing = task.allow_nonvanishing;
    let c = lambda_curve(coeffs, &task.betas, &cc).map_err(fail)?;
    let mut out = TaskOutput::default();
    out.set("betas", nums(&c.betas));
    out.set("lambdas", nums(&c.lambdas));
    out.set("converged", json!(c.converged));
    out.set("slopes", nums(&c.slopes));
    out.set("beta_c_estimate", num(c.beta_c_estimate));
    out.set("beta_c_bracketed", json!(c.beta_c_bracketed));
    out.set("lambda_c", num(c.lambda_c));
    out.set("convex", json!(c.convex));
    out.set("nondecreasing", c.nondecreasing.map_or(Value::Null, Value::Bool));
    if c.converged.iter().any(|c| !c) {
        out.warn("some curve points come from unconverged ladders");
    }
    if !c.convex {
        out.warn("computed curve is not convex within tolerance");
    }
    if !c.beta_c_estimate.is_finite() {
        out.warn("no flat section found on the computed betas");
    }
    let mut csv = Vec::new();
    c.write_csv(&mut csv).map_err(fail)?;
    out.csv("curve.csv", String::from_utf8(csv).expect("utf-8 csv"));
    let pts: Vec<(f64, f64)> = c.betas.iter().copied().zip(c.lambdas.iter().copied()).collect();
    let mut plot = Plot::new("Eigenvalue curve", "beta", "lambda*(beta f)").series(Series::new(
        "Lambda_beta",
        pts,
        Style::LineMarkers,
    ));
    if c.beta_c_estimate.is_finite() {
        plot = plot.marker(c.beta_c_estimate, &format!("beta_c = {:.4}", c.beta_c_estimate));
    }
    out.svg("curve.svg", plot.render());
    Ok(out)
}

fn hitting_json(h: &HittingStats) -> Value {
    json!({
        "hits": h.hits,
        "n_paths": h.n_paths,
        "fitted_rate": num(h.fitted_rate),
        "fit_r_squared": num(h.exp_fit.r_squared),
        "geometric": h.geometric,
        "delta": num(h.delta),
        "e_delta_tau": num(h.e_delta_tau),
        "times": nums(&h.times),
        "survival": nums(&h.survival),
    })
}

fn survival_artifacts(h: &HittingStats, out: &mut TaskOutput, bins: usize) {
    let mut csv = String::from("t,survival\n");
    for (t, s) in h.times.iter().zip(&h.survival) {
        let _ = writeln!(csv, "{t},{s}");
    }
    out.csv("survival.csv", csv);
    let pts: Vec<(f64, f64)> = h.times.iter().copied().zip(h.survival.iter().copied()).collect();
    let plot = Plot::new("Return to the target ball", "t", "P(tau > t)")
        .series(Series::new("Kaplan-Meier", pts, Style::LineMarkers))
        .log_y();
    out.svg("survival.svg", plot.render());
    // return-time mass per survival-grid interval, regrouped into `bins`
    let n = h.times.len();
    let group = n.div_ceil(bins.max(1)).max(1);
    let mut edges = vec![0.0];
    let mut counts = Vec::new();
    let mut prev = 1.0;
    for chunk in (0..n).collect::<Vec<_>>().chunks(group) {
        let last = *chunk.last().expect("nonempty chunk");
        counts.push((prev - h.survival[last]) * h.n_paths as f64);
        prev = h.survival[last];
        edges.push(h.times[last]);
    }
    out.svg("return_times.svg", histogram("Return times", "tau", &edges, &counts));
}

fn simulate_task(cfg: &RunConfig, coeffs: &CoefficientSet) -> Result<TaskOutput, TaskError> {
    let TaskBlock::Simulate(task) = &cfg.task else { unreachable!() };
    let mut sim = cfg.sim(1e-3, 10.0, 1000);
    sim.record_stride = task.record_stride;
    if let Some(cp) = &task.checkpoints {
        sim.checkpoints = cp.clone();
    }
    if let Some(r) = task.target_radius {
        sim.target = Some(TargetBall::centered(r));
    }
    let mut out = TaskOutput::default();
    let process = match task.process {
        ProcessKind::Base => Process::from_coefficients(coeffs),
        ProcessKind::Twisted => {
            let gs = lambda_star(coeffs, &cfg.ladder()).map_err(fail)?;
            ground_state_warnings(&gs, &mut out);
            out.set("ground_state", ground_state_json(&gs));
            if sim.box_radius.is_none() {
                sim.box_radius = Some(gs.grid.radius() - 2.0 * gs.grid.h());
            }
            Process::from_coefficients(coeffs)
                .with_drift(VectorField::Grid(GridField::vector(gs.grid.clone(), &gs.twisted_drift)))
        }
    };
    out.set(
        "sim",
        json!({"dt": num(sim.dt), "horizon": num(sim.horizon), "n_paths": sim.n_paths, "seed": sim.seed}),
    );
    let ens = match simulate(&process, &task.x0, &sim) {
        Ok(e) => e,
        Err(e) => return Err(numeric(out)(e)),
    };
    let alive = ens.alive_paths().count();
    out.set("alive_paths", json!(alive));
    out.set("excursion_fraction", num(ens.excursion_fraction));
    if ens.unreliable() {
        out.warn(format!(
            "paths spent {:.1}% of the time outside the box; grid drift was extrapolated",
            100.0 * ens.excursion_fraction
        ));
    }
    if alive < ens.n_paths {
        out.warn(format!("{} paths exploded and were dropped", ens.n_paths - alive));
    }
    let last = ens.n_checkpoints() - 1;
    let mut moments = Vec::new();
    for axis in 0..ens.dim {
        let x = ens.terminal_component(last, axis);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        moments.push(json!({"mean": num(mean), "variance": num(var)}));
    }
    out.set("terminal", Value::Array(moments));

    let fk = feynman_kac(&ens, task.lambda_shift, None);
    match fk {
        Ok(fk) => {
            let pts: Vec<Value> = fk
                .points
                .iter()
                .map(|p| json!({"t": num(p.t), "value": num(p.value), "stderr": num(p.stderr), "ess": num(p.ess)}))
                .collect();
            out.set(
                "feynman_kac",
                json!({
                    "lambda_shift": num(fk.lambda_shift),
                    "slope": num(fk.slope),
                    "slope_stderr": num(fk.slope_stderr),
                    "window_slopes": [num(fk.window_slopes.0), num(fk.window_slopes.1)],
                    "unstable": fk.unstable,
                    "points": pts,
                }),
            );
            if fk.unstable {
                out.warn("Feynman-Kac window slopes disagree by more than three standard errors");
            }
            let mut csv = String::from("t,value,stderr,ess\n");
            for p in &fk.points {
                let _ = writeln!(csv, "{},{},{},{}", p.t, p.value, p.stderr, p.ess);
            }
            out.csv("feynman_kac.csv", csv);
        }
        Err(SimError::DegenerateWeights { t, ess }) => {
            out.warn(format!("importance weights collapsed (ESS {ess:.2} at t = {t})"));
        }
        Err(e) => return Err(numeric(out)(e)),
    }
    if let Ok((mean, se)) = ergodic_average(&ens) {
        out.set("ergodic_average", json!({"value": num(mean), "stderr": num(se)}));
    }
    if sim.target.is_some() {
        match hitting_stats(&ens) {
            Ok(h) => {
                survival_artifacts(&h, &mut out, task.histogram_bins);
                out.set("hitting", hitting_json(&h));
            }
            Err(SimError::NoReturns { n_paths }) => {
                out.set("hitting", json!({"no_returns": true, "n_paths": n_paths}));
                out.warn("no path reached the target ball");
            }
            Err(e) => return Err(numeric(out)(e)),
        }
    }

    let mut csv = format!("path_id,{},S,alive\n", coords_header(ens.dim));
    for p in 0..ens.n_paths {
        let x = ens.state(p, last);
        let _ = writeln!(csv, "{},{},{},{}", p, coords(&x[..ens.dim]), ens.integral(p, last), ens.alive[p]);
    }
    out.csv("terminal.csv", csv);
    if sim.record_stride > 0 {
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).map_err(fail)?;
        out.csv("paths.csv", String::from_utf8(buf).expect("utf-8 csv"));
    }
    let x1 = ens.terminal_component(last, 0);
    let (edges, counts) = bin(&x1, task.histogram_bins);
    out.svg(
        "terminal_histogram.svg",
        histogram(&format!("Terminal states at T = {}", sim.horizon), "x1", &edges, &counts),
    );
    Ok(out)
}

fn verdict_name(v: GroundStateVerdict) -> &'static str {
    match v {
        GroundStateVerdict::ExponentiallyErgodic => "ExponentiallyErgodic",
        GroundStateVerdict::RecurrentNotExpErgodic => "RecurrentNotExpErgodic",
        GroundStateVerdict::Transient => "Transient",
        GroundStateVerdict::Inconclusive => "Inconclusive",
    }
}

fn mono_name(v: MonotonicityVerdict) -> &'static str {
    match v {
        MonotonicityVerdict::StrictAtF => "StrictAtF",
        MonotonicityVerdict::StrictOnRightOnly => "StrictOnRightOnly",
        MonotonicityVerdict::Flat => "Flat",
        MonotonicityVerdict::Inconclusive => "Inconclusive",
    }
}

fn monotonicity_json(m: &MonotonicityReport) -> Value {
    let probes: Vec<Value> = m
        .probes
        .iter()
        .map(|p| {
            json!({
                "eps": num(p.eps),
                "lambda_minus": num(p.lambda_minus),
                "lambda_plus": num(p.lambda_plus),
                "left_slope": num(p.left_slope),
                "right_slope": num(p.right_slope),
                "left_extrapolated": num(p.left_extrapolated),
                "right_extrapolated": num(p.right_extrapolated),
                "sandwich": p.sandwich,
                "lipschitz": p.lipschitz,
                "convex": p.convex,
            })
        })
        .collect();
    json!({
        "verdict": mono_name(m.verdict),
        "lambda_star_f": num(m.lambda_star_f),
        "lambda_star_f_extrapolated": num(m.lambda_star_f_extrapolated),
        "bump": m.bump,
        "bump_sup": num(m.bump_sup),
        "tol_mono": num(m.tol_mono),
        "probes": probes,
    })
}

fn classify(cfg: &RunConfig, coeffs: &CoefficientSet) -> Result<TaskOutput, TaskError> {
    let TaskBlock::Classify(task) = &cfg.task else { unreachable!() };
    let mut cc = ClassifyConfig::for_dim(coeffs.dim);
    cc.probe.ladder = cfg.ladder();
    if let Some(eps) = &task.eps {
        cc.probe.eps = eps.clone();
    }
    if let Some(b) = &task.bump {
        cc.probe.bump = parse_expression("task.classify.bump", b)?;
    }
    if let Some(t) = task.tol_mono {
        cc.probe.tol_mono = t;
    }
    cc.sim = cfg.sim(1e-3, 20.0, 2000);
    cc.sim.target = Some(TargetBall::centered(task.target_radius));
    cc.sim.stop_at_target = true;
    if let Some(x0) = &task.x0 {
        cc.x0 = x0.clone();
    }
    let c = match task.lambda {
        Some(l) => classify_at_lambda(coeffs, l, &cc),
        None => classify_ground_state(coeffs, &cc),
    }
    .map_err(fail)?;
    let mut out = TaskOutput::default();
    out.set("verdict", json!(verdict_name(c.verdict)));
    out.set("lambda", num(c.lambda));
    out.set("lambda_star", num(c.lambda_star));
    out.set("x0", nums(&cc.x0));
    out.set("excursion_fraction", num(c.excursion_fraction));
    if c.verdict == GroundStateVerdict::Inconclusive {
        out.warn("monotonicity probe and return statistics do not combine into a verdict");
    }
    if c.excursion_fraction > 0.05 {
        out.warn("twisted paths spent more than 5% of the time outside the box");
    }
    if let Some(m) = &c.monotonicity {
        out.set("monotonicity", monotonicity_json(m));
        if !(m.sandwich_ok() && m.lipschitz_ok() && m.convex_ok()) {
            out.warn("probe values violate the sandwich, Lipschitz or convexity checks");
        }
        let mut csv = String::from(
            "eps,lambda_minus,lambda_plus,left_slope,right_slope,left_extrapolated,right_extrapolated\n",
        );
        for p in &m.probes {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                p.eps, p.lambda_minus, p.lambda_plus, p.left_slope, p.right_slope, p.left_extrapolated, p.right_extrapolated
            );
        }
        out.csv("probes.csv", csv);
    }
    match &c.returns {
        ReturnEvidence::Hitting(h) => {
            out.set("returns", hitting_json(h));
            survival_artifacts(h, &mut out, task.histogram_bins);
        }
        ReturnEvidence::NoReturns { n_paths } => {
            out.set("returns", json!({"no_returns": true, "n_paths": n_paths}));
        }
    }
    Ok(out)
}

fn hjb_json(sol: &HjbSolution, actions: &[f64]) -> Value {
    let trace: Vec<Value> = sol
        .trace
        .iter()
        .map(|s| json!({"iteration": s.iteration, "lambda": num(s.lambda), "changed": s.changed}))
        .collect();
    let counts: Vec<Value> = (0..actions.len())
        .map(|k| json!({"action": num(actions[k]), "nodes": sol.policy.iter().filter(|&&p| p == k).count()}))
        .collect();
    json!({
        "lambda_star": num(sol.lambda_star),
        "converged": sol.converged,
        "monotone_trace": sol.monotone_trace,
        "iterations": sol.trace.len(),
        "trace": trace,
        "policy_counts": counts,
    })
}

fn hjb_artifacts(problem: &ControlProblem, sol: &HjbSolution, out: &mut TaskOutput) {
    let mut buf = Vec::new();
    if problem.write_policy_csv(sol, &mut buf).is_ok() {
        out.csv("policy.csv", String::from_utf8(buf).expect("utf-8 csv"));
    }
    let mut csv = String::from("iteration,lambda,changed\n");
    for s in &sol.trace {
        let _ = writeln!(csv, "{},{},{}", s.iteration, s.lambda, s.changed);
    }
    out.csv("trace.csv", csv);
    let pts: Vec<(f64, f64)> = sol.trace.iter().map(|s| (s.iteration as f64, s.lambda)).collect();
    let plot = Plot::new("Policy iteration", "iteration", "frozen-policy eigenvalue")
        .series(Series::new("lambda_k", pts, Style::LineMarkers));
    out.svg("trace.svg", plot.render());
}

fn hjb(cfg: &RunConfig, coeffs: &CoefficientSet) -> Result<TaskOutput, TaskError> {
    let TaskBlock::Hjb(task) = &cfg.task else { unreachable!() };
    let cost = coeffs.c.clone().expect("validated cost");
    let actions = cfg.problem.actions.clone().expect("validated actions");
    let ppu = cfg.ladder().points_per_unit;
    let mut problem = match ControlProblem::on_ball(coeffs.clone(), cost, actions, task.radius, ppu) {
        Ok(p) => p,
        Err(e @ ControlError::NegativeCost { .. }) => {
            return Err(TaskError::Config(ConfigError::Invalid {
                key: "problem.cost".into(),
                message: e.to_string(),
            }))
        }
        Err(e) => return Err(fail(e)),
    };
    if let Some(t) = cfg.numerics.eigen_tol {
        problem.eigen.tol = t;
    }
    if let Some(m) = cfg.numerics.eigen_max_iter {
        problem.eigen.max_iter = m;
    }
    if let Some(m) = task.max_iter {
        problem.max_iter = m;
    }
    let start = match task.start {
        Start::Cheapest => StartPolicy::CheapestCost,
        Start::Costliest => StartPolicy::CostliestCost,
    };
    let mut out = TaskOutput::default();
    out.set("nodes", json!(problem.grid.len()));
    match solve_hjb_from(&problem, start) {
        Ok(sol) => {
            if let Value::Object(m) = hjb_json(&sol, &problem.actions) {
                out.outputs.extend(m);
            }
            if !sol.monotone_trace {
                out.warn("policy iteration trace is not monotone");
            }
            hjb_artifacts(&problem, &sol, &mut out);
            Ok(out)
        }
        Err(ControlError::NotConverged { iterations, best }) => {
            out.set("best", hjb_json(&best, &problem.actions));
            hjb_artifacts(&problem, &best, &mut out);
            Err(numeric(out)(format!(
                "policy iteration did not settle within {iterations} iterations"
            )))
        }
        Err(e) => Err(numeric(out)(e)),
    }
}

fn identities(cfg: &RunConfig, coeffs: &CoefficientSet) -> Result<TaskOutput, TaskError> {
    let TaskBlock::Identities(task) = &cfg.task else { unreachable!() };
    let mut ic = IdentityConfig::for_dim(coeffs.dim);
    ic.ladder = cfg.ladder();
    ic.beta_c = task.beta_c;
    if let Some(r) = &task.recurrence {
        let mut sim = cfg.sim(1e-2, 10.0, 2000);
        sim.target = Some(TargetBall::centered(r.target_radius));
        sim.stop_at_target = true;
        ic.recurrence = Some(RecurrenceCheck { sim, x0: r.x0.clone() });
    }
    let mut out = TaskOutput::default();
    let mut csv = String::from("identity,lhs,rhs,residual\n");

    let e = ergodic_identity_check(coeffs, task.beta, &ic).map_err(numeric(TaskOutput::default()))?;
    out.set(
        "ergodic_value",
        json!({"beta": num(e.beta), "lhs": num(e.lhs), "rhs": num(e.rhs), "residual": num(e.residual),
               "hypothesis_violated": e.hypothesis_violated}),
    );
    if let Some(why) = &e.hypothesis_violated {
        out.warn(format!("ergodic value identity not binding: {why}"));
    }
    let _ = writeln!(csv, "ergodic_value,{},{},{}", e.lhs, e.rhs, e.residual);

    let d = match derivative_check(coeffs, task.beta, task.d_beta, task.slack, &ic) {
        Ok(d) => d,
        Err(err) => return Err(numeric(out)(err)),
    };
    out.set(
        "derivative",
        json!({"beta": num(d.beta), "d_beta": num(d.d_beta), "fd_slope": num(d.fd_slope), "mu_f": num(d.mu_f),
               "residual": num(d.residual), "sandwich_lower": num(d.sandwich_lower), "increment": num(d.increment),
               "sandwich_upper": num(d.sandwich_upper), "sandwich_ok": d.sandwich_ok}),
    );
    if !d.sandwich_ok {
        out.warn("derivative sandwich bounds do not hold at the configured slack");
    }
    let _ = writeln!(csv, "derivative,{},{},{}", d.fd_slope, d.mu_f, d.residual);

    let mut specs = vec![("ground_state".to_string(), ControlSpec::GroundState)];
    for (k, c) in task.controls.iter().enumerate() {
        let exprs = c
            .iter()
            .enumerate()
            .map(|(j, s)| parse_expression(&format!("task.identities.controls[{k}][{j}]"), s))
            .collect::<Result<Vec<_>, _>>()?;
        specs.push((format!("control_{k}"), ControlSpec::Expr(exprs)));
    }
    let mut duality = Vec::new();
    for (name, spec) in &specs {
        let r = match duality_residual(coeffs, task.beta, spec, &ic) {
            Ok(r) => r,
            Err(err) => return Err(numeric(out)(err)),
        };
        if let Some(why) = &r.hypothesis_violated {
            out.warn(format!("duality identity for {name} not binding: {why}"));
        }
        let _ = writeln!(csv, "duality_{name},{},{},{}", r.cost, r.identity_rhs, r.residual);
        duality.push(json!({"control": name, "lambda": num(r.lambda), "cost": num(r.cost),
            "identity_rhs": num(r.identity_rhs), "residual": num(r.residual), "excess": num(r.excess),
            "hypothesis_violated": r.hypothesis_violated}));
    }
    out.set("duality", Value::Array(duality));
    out.csv("identities.csv", csv);
    Ok(out)
}
