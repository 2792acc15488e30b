//! Coefficient generators shared by the property and acceptance suites.
#![allow(dead_code)]

use proptest::prelude::*;

use eigendrift::exhaustion::LadderConfig;
use eigendrift::grid::{CoefficientSet, DriftScheme};

pub fn scheme() -> impl Strategy<Value = DriftScheme> {
    prop_oneof![Just(DriftScheme::Upwind), Just(DriftScheme::ExponentialFitting)]
}

/// `a = a0(1 + 0.3 sin x)`, `b = k x + m`, `f = c exp(−x²)` in 1-D.
pub fn coeffs_1d() -> impl Strategy<Value = CoefficientSet> {
    (0.3f64..2.0, -2.0f64..1.0, -0.5f64..0.5, -1.0f64..1.0, scheme()).prop_map(|(a0, k, m, c, s)| {
        CoefficientSet::parse(
            &[&format!("{a0}*(1 + 0.3*sin(x1))")],
            &[&format!("{k}*x1 + {m}")],
            &format!("{c}*exp(-(x1^2))"),
        )
        .unwrap()
        .with_scheme(s)
    })
}

pub fn coeffs_2d() -> impl Strategy<Value = CoefficientSet> {
    (0.3f64..2.0, 0.3f64..2.0, -1.5f64..1.5, -1.5f64..1.5, -1.0f64..1.0, scheme()).prop_map(
        |(a1, a2, k1, k2, c, s)| {
            CoefficientSet::parse(
                &[&a1.to_string(), &format!("{a2}*(1 + 0.2*cos(x1*x2))")],
                &[&format!("{k1}*x1 + 0.3*x2"), &format!("{k2}*x2 - 0.2*x1")],
                &format!("{c}*exp(-(x1^2 + x2^2))"),
            )
            .unwrap()
            .with_scheme(s)
        },
    )
}

pub fn small_ladder(dim: usize) -> LadderConfig {
    let mut l = LadderConfig::for_dim(dim).fixed_rungs(4);
    l.points_per_unit = if dim == 1 { 10.0 } else { 3.0 };
    l
}
