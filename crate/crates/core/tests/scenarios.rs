//! Cross-module scenarios: reachable sets seeding connections, the two solver
//! routes agreeing, degenerate problems, and re-integration of closed loops.

mod common;

use std::f64::consts::{FRAC_PI_4, TAU};

use common::{model, v};
use kropina_nav::closed::{closed_geodesic_in_class, LoopProblem};
use kropina_nav::connect::{epsilon_homotopy, minimize_length, ConnectProblem, ConnectStatus, SeedKind, SeedSpec};
use kropina_nav::geodesic_flow::{integrate_with, DiscretePath, FlowKind, IntegrateOptions, Parametrization};
use kropina_nav::manifold::{BuiltinGeometry, ManifoldModel};
use kropina_nav::reachable::{propagate, GridBox, PropagateOptions};
use nalgebra::DVector;

fn straight() -> SeedSpec {
    SeedSpec::Named(SeedKind::Straight)
}

#[test]
fn dijkstra_paths_seed_shorter_connections() {
    let m = model(BuiltinGeometry::heisenberg());
    let h = 0.1;
    let rs = propagate(&m, &v(&[0.0, 0.0, 0.0]), &GridBox::cube(3, 0.5), &PropagateOptions::with_h(h)).unwrap();
    for target in [[0.3, 0.2, -0.2], [-0.4, 0.1, 0.3], [0.0, 0.0, -0.3]] {
        let k = rs.nearest(&target).unwrap();
        let seed = rs.path_to(k).unwrap();
        let p = ConnectProblem::from_seed_path(m.clone(), seed).unwrap();
        let r = minimize_length(&p).unwrap();
        assert!(r.is_converged(), "{target:?}: {:?}", r.reason);
        assert!(r.length <= rs.cost[k] + h, "{target:?}: {} vs {}", r.length, rs.cost[k]);
    }
}

#[test]
fn straight_homotopy_to_the_result_stays_in_the_chart() {
    let cases: Vec<(ManifoldModel, DVector<f64>, DVector<f64>)> = vec![
        (model(BuiltinGeometry::flat(&[-1.0, 0.0])), v(&[0.0, 0.0]), v(&[1.0, 0.3])),
        (model(BuiltinGeometry::heisenberg()), v(&[0.0, 0.0, 0.0]), v(&[0.0, 0.0, 1.0])),
        (model(BuiltinGeometry::heisenberg()), v(&[0.0, 0.0, 0.0]), v(&[0.0, 0.0, -1.0])),
    ];
    for (m, a, b) in cases {
        let p = ConnectProblem::new(m.clone(), a, b, &straight()).unwrap();
        let r = minimize_length(&p).unwrap();
        assert!(r.is_converged(), "{:?}", r.reason);
        let res = r.path.unwrap().path.resample(p.seed_path.len());
        for (x, y) in p.seed_path.points.iter().zip(&res.points) {
            for t in [0.25, 0.5, 0.75] {
                assert!(m.domain().contains((x * (1.0 - t) + y * t).as_slice()));
            }
        }
    }
}

#[test]
fn direct_and_homotopy_routes_agree() {
    let cases: Vec<(ManifoldModel, DVector<f64>, DVector<f64>)> = vec![
        (model(BuiltinGeometry::flat(&[-1.0, 0.0])), v(&[0.0, 0.0]), v(&[1.0, 0.0])),
        (model(BuiltinGeometry::flat(&[0.3, 0.0, -1.0])), v(&[0.0, 0.0, 0.0]), v(&[0.2, 0.4, 1.0])),
        (model(BuiltinGeometry::heisenberg()), v(&[0.0, 0.0, 0.0]), v(&[0.3, 0.2, 1.0])),
        (model(BuiltinGeometry::hopf_sphere(2)), v(&[FRAC_PI_4, 0.0, 0.0]), v(&[FRAC_PI_4, 1.0, 1.0])),
        (model(BuiltinGeometry::torus(&[-1.0, 0.5])), v(&[0.1, 0.1]), v(&[0.6, 0.2])),
    ];
    for (m, a, b) in cases {
        let p = ConnectProblem::new(m.clone(), a, b, &straight()).unwrap();
        let direct = minimize_length(&p).unwrap();
        let homotopy = epsilon_homotopy(&p).unwrap();
        assert!(direct.is_converged() && homotopy.is_converged(), "{}", m.name());
        assert!((direct.length - homotopy.length).abs() < 1e-3, "{}: {} vs {}", m.name(), direct.length, homotopy.length);
        // the continuation values stay below the limit
        for st in &homotopy.eps_trace {
            assert!(st.delta <= homotopy.length + 1e-6);
        }
    }
}

#[test]
fn coincident_endpoints_do_not_produce_a_geodesic() {
    for m in [model(BuiltinGeometry::heisenberg()), model(BuiltinGeometry::flat(&[-1.0, 0.0, 0.0]))] {
        let x = DVector::from_element(m.dim(), 0.1);
        let r = match ConnectProblem::new(m.clone(), x.clone(), x, &straight()) {
            Ok(p) => minimize_length(&p).unwrap(),
            Err(e) => panic!("{}: {e}", m.name()),
        };
        assert!(matches!(r.status, ConnectStatus::Collapsed | ConnectStatus::NoAdmissibleSeed), "{}: {:?}", m.name(), r.status);
        assert!(r.path.is_none());
    }
}

fn reintegrates(m: &ManifoldModel, seed: DiscretePath) {
    let r = closed_geodesic_in_class(&LoopProblem::new(m.clone(), seed.clone()).unwrap()).unwrap();
    assert!(r.is_converged(), "{:?}", r.reason);
    let sol = r.path.unwrap();
    let vel = sol.path.velocities.as_ref().unwrap();
    let n = sol.path.len() - 1;
    let opts = IntegrateOptions::new(1e-12).parametrization(Parametrization::ConstantSpeed).samples(65);
    for k in (0..n).step_by(n / 8) {
        let x = &sol.path.points[k];
        let again = integrate_with(m, FlowKind::Kropina, x, &vel[k], 1.0, &opts).unwrap();
        let closure = m.domain().distance(again.endpoint().as_slice(), (x + &seed.shift).as_slice());
        assert!(closure < 1e-6, "phase {k}: {closure}");
        assert!(again.residuals.omega_drift < 1e-6, "phase {k}: {}", again.residuals.omega_drift);
    }
}

#[test]
fn closed_loops_close_from_every_phase() {
    let torus = model(BuiltinGeometry::torus(&[-1.0, 0.5]));
    let pts = (0..32).map(|k| {
        let s = k as f64 / 32.0;
        v(&[s, 0.3 + 0.05 * (TAU * s).sin()])
    });
    reintegrates(&torus, DiscretePath::closed_loop(pts.collect(), v(&[1.0, 0.0])).unwrap());

    let s3 = model(BuiltinGeometry::hopf_sphere(2));
    let pts = (0..32).map(|k| {
        let s = k as f64 / 32.0;
        v(&[0.7 + 0.05 * (TAU * s).cos(), TAU * s, TAU * s])
    });
    reintegrates(&s3, DiscretePath::closed_loop(pts.collect(), v(&[0.0, TAU, TAU])).unwrap());
}
