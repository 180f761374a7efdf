use super::*;
use crate::network::Layer;
use NormOrder::{Infinity, One, Two};

fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = crate::rng::rng(seed);
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn global_step_on_identity_is_fixed() {
    let w = Mat::identity(3);
    let mut s = global_snr_init(&w, 1);
    let v0 = s.v.clone();
    s = global_snr_power_step(&w, &s).unwrap();
    assert!((s.sigma - 1.0).abs() < 1e-12);
    for (a, b) in s.v.iter().zip(&v0) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn global_step_finds_dominant_direction() {
    let w = Mat::diag(&[3.0, 1.0]);
    let h = 1.0 / 2f64.sqrt();
    let mut s = PowerIterState {
        u: vec![0.0; 2],
        v: vec![h, h],
        u_raw: vec![],
        v_raw: vec![],
        sigma: 0.0,
        iteration: 0,
        converged: false,
    };
    for _ in 0..50 {
        s = global_snr_power_step(&w, &s).unwrap();
    }
    assert!((s.sigma - 3.0).abs() < 1e-9);
}

#[test]
fn global_step_matches_svd() {
    let w = random_mat(10, 8, 3);
    let top = svd(&w).unwrap().top();
    let mut s = global_snr_init(&w, 4);
    for _ in 0..500 {
        s = global_snr_power_step(&w, &s).unwrap();
    }
    assert!(rel(s.sigma, top) < 1e-8);
    assert!(matches!(global_snr_power_step(&Mat::zeros(10, 8), &s), Err(Error::ZeroVector)));
}

#[test]
fn dd_power_on_diagonal_layer() {
    let net = Network::affine(Mat::diag(&[2.0, 1.0]), vec![0.0, 0.0]).unwrap();
    let cfg = OpNormConfig { iterations: 60, ..OpNormConfig::default() };
    let s = dd_spectral_power(&net, &[0.3, 0.1], &cfg).unwrap();
    assert!((s.sigma - 2.0).abs() < 1e-9);
    assert!((s.v[0].abs() - 1.0).abs() < 1e-9);
}

#[test]
fn dd_power_matches_svd_and_scales_with_last_layer() {
    let mut net = Network::random_with_bias(&[6, 12, 10, 4], 0.2, 9);
    let x = [0.2, -0.4, 0.1, 0.9, -0.3, 0.5];
    let cfg = OpNormConfig { iterations: 100, seed: 2, ..OpNormConfig::default() };
    let s = dd_spectral_power(&net, &x, &cfg).unwrap();
    let top = svd(&net.jacobian(&x).unwrap()).unwrap().top();
    assert!(rel(s.sigma, top) < 1e-8);
    net.scale_output(2.5);
    let scaled = dd_spectral_power(&net, &x, &cfg).unwrap();
    assert!(rel(scaled.sigma, 2.5 * s.sigma) < 1e-14);
}

#[test]
fn two_two_power_is_monotone() {
    let m = random_mat(7, 9, 5);
    let v0 = random_start(9, Two, 6);
    let states = power_limit_iterates(&m, &v0, Two, Two, 40, false).unwrap();
    for w in states.windows(2) {
        assert!(w[1].sigma >= w[0].sigma - 1e-12);
    }
    for s in &states {
        assert!((norm2(&s.u) - 1.0).abs() < 1e-10 && (norm2(&s.v) - 1.0).abs() < 1e-10);
    }
}

#[test]
fn power_limit_hand_examples() {
    let m = Mat::from_rows(&[vec![1.0, -2.0], vec![3.0, 4.0]]);
    let cfg = OpNormConfig { iterations: 50, ..OpNormConfig::new(Infinity, Infinity) };
    assert!((estimate_opnorm(&m, &cfg).unwrap().sigma - 7.0).abs() < 1e-12);
    let m = Mat::from_rows(&[vec![1.0, 3.0], vec![-3.0, 2.0]]);
    let cfg = OpNormConfig { iterations: 50, ..OpNormConfig::new(One, Two) };
    assert!((estimate_opnorm(&m, &cfg).unwrap().sigma - 13f64.sqrt()).abs() < 1e-12);
}

#[test]
fn closed_forms_by_hand() {
    let m = Mat::from_rows(&[vec![1.0, -2.0], vec![3.0, 4.0]]);
    assert_eq!(closed_form_opnorm(&m, Infinity, Infinity).unwrap(), 7.0);
    assert_eq!(closed_form_opnorm(&m, One, One).unwrap(), 6.0);
    assert_eq!(closed_form_opnorm(&m, One, Infinity).unwrap(), 4.0);
    assert_eq!(closed_form_opnorm(&m, Two, Infinity).unwrap(), 5.0);
    assert!((closed_form_opnorm(&m, One, Two).unwrap() - 20f64.sqrt()).abs() < 1e-15);
    let id = Mat::identity(4);
    for p in NormOrder::STANDARD {
        assert!((closed_form_opnorm(&id, p, p).unwrap() - 1.0).abs() < 1e-12);
    }
    for (p, q) in [(Two, One), (Infinity, One), (Infinity, Two)] {
        assert_eq!(closed_form_opnorm(&id, p, q), Err(Error::NpHardCombination { p, q }));
    }
}

#[test]
fn infinity_closed_form_matches_sign_vector_search() {
    // ‖Mv‖_∞ over the ℓ∞ ball is maximized at a vertex.
    let m = random_mat(5, 7, 12);
    let mut best = 0.0f64;
    for mask in 0..(1u32 << 7) {
        let v: Vec<f64> = (0..7).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
        best = best.max(p_norm(&m.matvec(&v).unwrap(), Infinity));
    }
    assert!((closed_form_opnorm(&m, Infinity, Infinity).unwrap() - best).abs() < 1e-12);
}

#[test]
fn iteration_never_exceeds_closed_form() {
    for seed in 0..10 {
        let m = random_mat(6, 8, 100 + seed);
        for (p, q) in [(One, One), (One, Two), (One, Infinity), (Two, Two), (Two, Infinity), (Infinity, Infinity)] {
            let exact = closed_form_opnorm(&m, p, q).unwrap();
            let v0 = random_start(8, p, seed);
            let s = power_limit(&m, &v0, p, q, 30, false).unwrap();
            assert!(s.sigma <= exact + 1e-6, "({p},{q}) {} > {exact}", s.sigma);
            assert!((p_norm(&s.v, p) - 1.0).abs() < 1e-10);
            if q != Infinity {
                let qs = crate::linalg::holder_conjugate(q);
                assert!((p_norm(&s.u, qs) - 1.0).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn pga_with_huge_alpha_tracks_power_method() {
    let net = Network::random_with_bias(&[5, 9, 4], 0.1, 21);
    let x = [0.1, 0.2, -0.3, 0.4, 0.0];
    let op = net.jacobian_operator(&x).unwrap();
    let v0 = random_start(5, Two, 3);
    let pga = pga_iterates(&op, &v0, Two, 1e12, 15, false).unwrap();
    let pow = power_limit_iterates(&op, &v0, Two, Two, 15, false).unwrap();
    for (a, b) in pga.iter().zip(&pow) {
        for (x, y) in a.v.iter().zip(&b.v) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn pga_on_identity_is_stationary() {
    let net = Network::affine(Mat::identity(3), vec![0.0; 3]).unwrap();
    let v0 = random_start(3, Two, 8);
    let cfg = OpNormConfig { alpha: Alpha::Finite(0.3), iterations: 5, ..OpNormConfig::default() };
    let s = opnorm_pga_iteration(&net, &[0.0; 3], &cfg, &v0).unwrap();
    assert!((s.sigma - 1.0).abs() < 1e-12);
    for (a, b) in s.v.iter().zip(&v0) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn pga_two_inf_reaches_closed_form() {
    let net = Network::random_with_bias(&[6, 10, 5], 0.1, 31);
    let x = [0.3, -0.1, 0.2, 0.5, -0.4, 0.1];
    let exact = closed_form_opnorm(&net.jacobian(&x).unwrap(), Two, Infinity).unwrap();
    let best = (0..8)
        .map(|r| {
            let cfg = OpNormConfig {
                q: Infinity,
                alpha: Alpha::Finite(0.5),
                iterations: 200,
                ..OpNormConfig::default()
            };
            opnorm_pga_iteration(&net, &x, &cfg, &random_start(6, Two, r)).unwrap().sigma
        })
        .fold(0.0, f64::max);
    assert!(rel(best, exact) < 1e-4, "{best} vs {exact}");
    let cfg = OpNormConfig { p: Infinity, alpha: Alpha::Finite(0.5), ..OpNormConfig::default() };
    assert_eq!(
        opnorm_pga_iteration(&net, &x, &cfg, &random_start(6, Infinity, 0)),
        Err(Error::UnsupportedNorm(Infinity))
    );
}

#[test]
fn zero_jacobian_is_reported() {
    let w = Mat::from_rows(&[vec![1.0, 0.0]]);
    let net = Network::new(vec![
        Layer::new(w, vec![-10.0], true).unwrap(),
        Layer::new(Mat::from_rows(&[vec![1.0]]), vec![0.0], false).unwrap(),
    ])
    .unwrap();
    let cfg = OpNormConfig::default();
    assert!(matches!(
        opnorm_power_limit(&net, &[0.0, 0.0], &cfg, &[1.0, 0.0]),
        Err(Error::ZeroJacobianProduct { iteration: 1 })
    ));
}

#[test]
fn q_power_changes_only_u_scale() {
    let m = random_mat(4, 6, 41);
    let v0 = random_start(6, One, 2);
    for q in [One, Two, NormOrder::Finite(3.0)] {
        let a = power_limit_iterates(&m, &v0, One, q, 8, false).unwrap();
        let b = power_limit_iterates(&m, &v0, One, q, 8, true).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.v.len(), y.v.len());
            for (s, t) in x.v.iter().zip(&y.v) {
                assert!((s - t).abs() < 1e-12);
            }
        }
    }
    let cfg = OpNormConfig { q: Infinity, q_power: true, ..OpNormConfig::default() };
    assert!(matches!(estimate_opnorm(&m, &cfg), Err(Error::UnsupportedNorm(Infinity))));
}

#[test]
fn degenerate_gap_detection() {
    assert!(top_singular_degenerate(&[1.0, 1.0 - 1e-10]));
    assert!(!top_singular_degenerate(&[2.0, 1.0]));
    assert!(!top_singular_degenerate(&[2.0]));
}
