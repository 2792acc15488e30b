use eigendrift::exhaustion::{lambda_star, LadderConfig};
use eigendrift::field::{GridField, ScalarField};
use eigendrift::grid::{CoefficientSet, DriftScheme};
use eigendrift::probe::*;
use eigendrift::sde::{SimConfig, TargetBall};

fn quadratic() -> CoefficientSet {
    CoefficientSet::parse(&["0.5"], &["1.5*x"], "x^2")
        .unwrap()
        .with_scheme(DriftScheme::ExponentialFitting)
}

fn quadratic_classify() -> ClassifyConfig {
    let mut cfg = ClassifyConfig::for_dim(1);
    cfg.probe.ladder = LadderConfig::for_dim(1).fixed_rungs(4);
    cfg.probe.ladder.points_per_unit = 25.0;
    cfg.sim = SimConfig::new(1e-2, 20.0, 2000, 11);
    cfg.sim.target = Some(TargetBall::centered(1.0));
    cfg.sim.stop_at_target = true;
    cfg
}

#[test]
fn quadratic_ground_state_is_exponentially_ergodic() {
    let c = classify_ground_state(&quadratic(), &quadratic_classify()).unwrap();
    assert_eq!(c.verdict, GroundStateVerdict::ExponentiallyErgodic, "{:?}", c.returns);
    assert!((c.lambda_star + 1.0).abs() < 2e-2);
}

#[test]
fn twisted_process_above_the_principal_eigenvalue_is_transient() {
    let mut cfg = quadratic_classify();
    cfg.x0 = vec![5.0];
    let gs = lambda_star(&quadratic(), &cfg.probe.ladder).unwrap();
    let c = classify_at_lambda(&quadratic(), gs.lambda_star + 0.5, &cfg).unwrap();
    assert_eq!(c.verdict, GroundStateVerdict::Transient, "{:?}", c.returns);
    assert!(matches!(c.returns, ReturnEvidence::NoReturns { .. }));
}

#[test]
fn planar_brownian_motion_is_recurrent_but_not_exponentially_ergodic() {
    let coeffs = CoefficientSet::parse(&["1", "1"], &["0", "0"], "0").unwrap();
    let mut cfg = ClassifyConfig::for_dim(2);
    cfg.probe.eps = vec![4.0, 2.0, 1.0];
    cfg.probe.ladder = LadderConfig::for_dim(2).fixed_rungs(8);
    cfg.probe.ladder.points_per_unit = 3.0;
    cfg.sim = SimConfig::new(1e-2, 20.0, 1000, 5);
    cfg.sim.target = Some(TargetBall::centered(1.0));
    cfg.sim.stop_at_target = true;
    cfg.x0 = vec![2.0, 0.0];
    let c = classify_ground_state(&coeffs, &cfg).unwrap();
    let m = c.monotonicity.as_ref().unwrap();
    assert!(m.sandwich_ok() && m.lipschitz_ok() && m.convex_ok());
    assert_eq!(c.verdict, GroundStateVerdict::RecurrentNotExpErgodic, "{m:#?} {:?}", c.returns);
}

#[test]
fn green_measure_diverges_exactly_at_the_principal_eigenvalue() {
    let mut ladder = LadderConfig::for_dim(1).fixed_rungs(4);
    ladder.points_per_unit = 25.0;
    let gs = lambda_star(&quadratic(), &ladder).unwrap();
    let g = ScalarField::from_expression(&"max(0, 1 - x^2)".parse().unwrap());
    let sim = SimConfig::new(1e-2, 1.0, 2000, 8);
    let t = [5.0, 10.0, 15.0, 20.0];
    let sampler = GreenSampler::GroundState(gs.clone());
    let at = green_probe(&quadratic(), gs.lambda_star, &g, &t, &[0.0], &sampler, &sim).unwrap();
    assert!(at.divergence_flag, "{:?}", at.ratios);
    let above = green_probe(&quadratic(), gs.lambda_star + 1.0, &g, &t, &[0.0], &sampler, &sim).unwrap();
    assert!(!above.divergence_flag);
    // e^{-δ·Δ} with δ = 1 and windows 5 apart
    for r in &above.ratios[1..] {
        assert!((r.ln() + 5.0).abs() < 0.5, "{r}");
    }
}

#[test]
fn pinned_ratios_with_the_ground_state_itself_are_one() {
    let coeffs = CoefficientSet::parse(&["0.5"], &["-x"], "0.5*exp(-(x^2))").unwrap();
    let mut ladder = LadderConfig::for_dim(1).fixed_rungs(4);
    ladder.points_per_unit = 25.0;
    let gs = lambda_star(&coeffs, &ladder).unwrap();
    let psi = ScalarField::Grid(GridField::scalar(gs.grid.clone(), gs.psi_star.clone()));
    let xs = vec![vec![-1.0], vec![0.0], vec![1.0]];
    let sim = SimConfig::new(1e-2, 5.0, 4000, 21);
    let r = pinned_met_check(&coeffs, &gs, &psi, &xs, &sim).unwrap();
    for row in &r.rows {
        assert!((row.ratio - 1.0).abs() < 4.0 * row.stderr + 2e-2, "{row:?}");
    }
    let g = ScalarField::from_expression(&"exp(-(x^2))".parse().unwrap());
    let g2 = ScalarField::from_expression(&"2*exp(-(x^2))".parse().unwrap());
    let a = pinned_met_check(&coeffs, &gs, &g, &xs, &sim).unwrap();
    let b = pinned_met_check(&coeffs, &gs, &g2, &xs, &sim).unwrap();
    for (p, q) in a.rows.iter().zip(&b.rows) {
        assert!((q.ratio / p.ratio - 2.0).abs() < 1e-12);
    }
}
