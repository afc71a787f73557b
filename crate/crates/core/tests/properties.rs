use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;

use ocpde_core::continuation::{newton_correct, ContinuationSettings, PointType};
use ocpde_core::fem1d::{FemOps, Mesh1D};
use ocpde_core::io::{self, PointMeta};
use ocpde_core::models::{Model, Problem, Sloc, SystemState, VegOc};
use ocpde_core::spectral;
use ocpde_core::tbvp::{CanonicalPath, TimeMesh};
use ocpde_core::value::discounted_integral;

const SLOC_PARAMS: [f64; 4] = [0.03, 0.65, 0.5, 0.5];

/// Sorted nodes on `[0, 1]` from positive increments.
fn nodes() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, 3..12).prop_map(|w| {
        let total: f64 = w.iter().sum();
        let mut x = vec![0.0];
        let mut acc = 0.0;
        for h in &w {
            acc += h;
            x.push(acc / total);
        }
        *x.last_mut().unwrap() = 1.0;
        x
    })
}

fn sloc_problem(x: Vec<f64>) -> Problem {
    Problem::new(Arc::new(Sloc), FemOps::assemble(Mesh1D::from_nodes(x).unwrap()))
}

/// Golden-section maximizer on `[a, b]`.
fn argmax(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

proptest! {
    #[test]
    fn stiffness_annihilates_constants(x in nodes()) {
        let fem = FemOps::assemble(Mesh1D::from_nodes(x).unwrap());
        let n = fem.n_nodes();
        let mut out = vec![0.0; n];
        fem.stiffness().apply(&vec![1.0; n], &mut out);
        prop_assert!(out.iter().all(|v| v.abs() < 1e-9));
        let m = fem.mass().to_dense();
        prop_assert!((&m - m.transpose()).amax() == 0.0);
        let total: f64 = m.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integration_is_exact_for_linear_functions(x in nodes(), a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let fem = FemOps::assemble(Mesh1D::from_nodes(x.clone()).unwrap());
        let w: Vec<f64> = x.iter().map(|t| a + b * t).collect();
        prop_assert!((fem.integrate(&w).unwrap() - (a + 0.5 * b)).abs() < 1e-12);
        prop_assert!((fem.average(&w).unwrap() - (a + 0.5 * b)).abs() < 1e-12);
    }

    #[test]
    fn constant_fields_round_trip(x in nodes(), p in 0.1f64..2.0, q in -20.0f64..-0.5) {
        let pb = sloc_problem(x);
        let u = pb.constant_field(&[p, q]).unwrap();
        prop_assert!(pb.component(&u, 0).iter().all(|&v| v == p));
        prop_assert!(pb.component(&u, 1).iter().all(|&v| v == q));
        prop_assert_eq!(pb.reflect(&pb.reflect(&u)), u);
    }

    #[test]
    fn jacobian_matches_differences(x in nodes(), seed in prop::collection::vec(-1.0f64..1.0, 24)) {
        let pb = sloc_problem(x);
        let n = pb.n_nodes();
        let u = DVector::from_fn(2 * n, |k, _| {
            let s = seed[k % seed.len()];
            if k < n { 0.8 + 0.5 * s } else { -6.0 + 3.0 * s }
        });
        let jac = pb.jacobian(&u, &SLOC_PARAMS).unwrap();
        for k in 0..2 * n {
            let h = 1e-6 * u[k].abs().max(1.0);
            let mut up = u.clone();
            let mut um = u.clone();
            up[k] += h;
            um[k] -= h;
            let col = (pb.residual(&up, &SLOC_PARAMS).unwrap() - pb.residual(&um, &SLOC_PARAMS).unwrap()) / (2.0 * h);
            prop_assert!((col - jac.column(k)).amax() < 1e-5 * (1.0 + jac.column(k).amax()));
        }
    }

    #[test]
    fn flat_spectra_are_mirror_symmetric(x in nodes(), p in 0.1f64..2.0, q in -20.0f64..-0.5, rho in 0.0f64..0.2) {
        let pb = sloc_problem(x);
        let params = [rho, 0.65, 0.5, 0.5];
        let u = pb.constant_field(&[p, q]).unwrap();
        let ev = spectral::pencil_eigenvalues(&pb.jacobian(&u, &params).unwrap(), &pb.mass_matrix()).unwrap();
        prop_assert!(spectral::symmetry_error(&ev, rho) < 1e-8);
    }

    #[test]
    fn sloc_control_maximizes_hamiltonian(p in 0.1f64..2.0, q in -20.0f64..-0.2) {
        let u = [p, q];
        let k = Sloc.control(&u, &SLOC_PARAMS).unwrap();
        let best = argmax(|k| Sloc.hamiltonian(&u, &SLOC_PARAMS, k), 1e-6, 20.0);
        prop_assert!((k - best).abs() < 1e-5 * (1.0 + k));
    }

    #[test]
    fn vegoc_effort_maximizes_hamiltonian(
        v in 0.5f64..20.0,
        w in 0.5f64..10.0,
        lam in -1.0f64..0.35,
        mu in -0.5f64..0.5,
    ) {
        let m = VegOc::default();
        let par = VegOc::demo_params(0.03);
        let u = [v, w, lam, mu];
        let e = m.control(&u, &par).unwrap();
        let best = argmax(|e| m.hamiltonian(&u, &par, e), 1e-9, 50.0 * v);
        prop_assert!((e - best).abs() < 1e-4 * (1.0 + e), "{} vs {}", e, best);
        let jc = m.local_value(&u, &par).unwrap();
        let h = v.powf(par[VegOc::ALPHA]) * e.powf(1.0 - par[VegOc::ALPHA]);
        prop_assert!((jc - (par[VegOc::P] * h - par[VegOc::C] * e)).abs() < 1e-10 * (1.0 + jc.abs()));
    }

    #[test]
    fn discounted_integral_of_constant(t in 0.5f64..200.0, m in 2usize..30, rho in 0.0f64..0.5, j in -5.0f64..5.0) {
        let times: Vec<f64> = (0..m).map(|i| t * (i as f64 / (m - 1) as f64).powi(2)).collect();
        let got = discounted_integral(&times, &vec![j; m], rho);
        let want = if rho == 0.0 { j * t } else { j * -(-rho * t).exp_m1() / rho };
        prop_assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()));
    }

    #[test]
    fn discounted_integral_is_exact_for_linear_data(t in 0.5f64..50.0, rho in 0.01f64..0.5, a in -3.0f64..3.0, b in -1.0f64..1.0) {
        let times: Vec<f64> = (0..7).map(|i| t * i as f64 / 6.0).collect();
        let vals: Vec<f64> = times.iter().map(|s| a + b * s).collect();
        let e = (-rho * t).exp();
        let want = a * (1.0 - e) / rho + b * (1.0 - e * (1.0 + rho * t)) / (rho * rho);
        prop_assert!((discounted_integral(&times, &vals, rho) - want).abs() < 1e-9 * (1.0 + want.abs()));
    }
}

/// `P` of the lower flat root at `b`: first sign change of the 0D equation
/// on a fine scan, then bisection.
fn sloc_lower_root(b: f64) -> f64 {
    let (rho, gamma) = (SLOC_PARAMS[0], SLOC_PARAMS[2]);
    let g = |p: f64| {
        let s = 1.0 + p * p;
        let q = -2.0 * gamma * p / (rho + b - 2.0 * p / (s * s));
        -1.0 / q - b * p + p * p / s
    };
    let grid: Vec<f64> = (0..4000).map(|i| 0.01 + i as f64 * 5e-4).collect();
    let w = grid.windows(2).find(|w| g(w[0]) * g(w[1]) < 0.0).expect("sign change");
    let (mut lo, mut hi) = (w[0], w[1]);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (g(mid) > 0.0) == (g(lo) > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn newton_agrees_with_bisection_oracle() {
    let pb = sloc_problem((0..=8).map(|i| i as f64 / 8.0).collect());
    for b in [0.55, 0.6, 0.65, 0.7] {
        let params = vec![0.03, b, 0.5, 0.5];
        let guess = SystemState::new(pb.constant_field(&[0.4, -10.0]).unwrap(), params, Sloc::B);
        let (st, _) = newton_correct(&pb, &guess, &ContinuationSettings::default()).unwrap();
        let p = pb.component(&st.u, 0);
        assert!((p[3] - sloc_lower_root(b)).abs() < 1e-9, "b = {b}: {} vs {}", p[3], sloc_lower_root(b));
    }
}

#[test]
fn point_and_path_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pb = sloc_problem(vec![0.0, 0.2, 0.5, 1.0]);
    let u = DVector::from_vec(vec![0.3, 0.31, 0.32, 1.0 / 3.0, -9.0, -9.5, -1e-7, -12.25]);
    let st = SystemState::new(u.clone(), SLOC_PARAMS.to_vec(), Sloc::B);
    let meta = PointMeta {
        point_type: PointType::Fold,
        n_unstable: 3,
        j_ca: -2.5,
        residual: 1e-12,
    };
    let file = dir.path().join("pt1");
    io::save_point(&file, &pb, &st, &meta).unwrap();
    let back = io::read_point(&file).unwrap();
    assert_eq!(back.state, st);
    assert_eq!(back.meta, meta);
    assert_eq!(back.problem.fem().mesh().nodes(), pb.fem().mesh().nodes());

    let mesh = TimeMesh::new(vec![0.0, 0.1, 1.5, 10.0]).unwrap();
    let mut path = CanonicalPath::constant(mesh, &u, 0.75);
    path.values[(2, 1)] = std::f64::consts::PI;
    path.value = Some(-70.125);
    let pfile = dir.path().join("path1");
    io::save_path(&pfile, &pb, &SLOC_PARAMS, &path).unwrap();
    let lp = io::load_path(&pfile).unwrap();
    assert_eq!(lp.path.values, path.values);
    assert_eq!(lp.path.mesh, path.mesh);
    assert_eq!((lp.path.alpha, lp.path.value), (0.75, Some(-70.125)));
    assert_eq!(lp.params, SLOC_PARAMS.to_vec());
}

#[test]
fn stale_points_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let pb = sloc_problem(vec![0.0, 0.5, 1.0]);
    let st = SystemState::new(pb.constant_field(&[0.4, -10.0]).unwrap(), SLOC_PARAMS.to_vec(), Sloc::B);
    let meta = PointMeta {
        point_type: PointType::Regular,
        n_unstable: 0,
        j_ca: 0.0,
        residual: 0.0,
    };
    let file = dir.path().join("pt0");
    io::save_point(&file, &pb, &st, &meta).unwrap();
    assert!(io::load_point(&file, 1e-10).is_err());
    assert!(io::read_point(&dir.path().join("missing")).is_err());
}
