use super::*;
use crate::linalg::vector::cosine;
use crate::linalg::Mat;
use crate::opnorm::{power_limit_iterates, random_start};
use NormOrder::{Infinity, One, Two};

#[test]
fn cross_entropy_directions() {
    let z = [0.0, 0.0];
    let ce = AdvLoss::default();
    assert_eq!(logit_direction(ce, 0, None, &z, &z).unwrap(), vec![-0.5, 0.5]);
    assert_eq!(logit_direction(ce, 0, Some(1), &z, &z).unwrap(), vec![-0.5, 0.5]);
    let hot = AdvLoss::CrossEntropy { temperature: 1e6 };
    let d = logit_direction(hot, 0, Some(1), &[2.0, 1.0], &z).unwrap();
    assert!((d[0] + 1.0).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12);
}

#[test]
fn targeted_at_true_label_negates_untargeted() {
    let z = [0.3, -1.0, 2.2];
    for y in 0..3 {
        let a = logit_direction(AdvLoss::default(), y, None, &z, &z).unwrap();
        let b = logit_direction(AdvLoss::default(), 0, Some(y), &z, &z).unwrap();
        for (s, t) in a.iter().zip(&b) {
            assert_eq!(*s, -t);
        }
    }
}

#[test]
fn logit_lq_needs_a_displacement() {
    let z = [1.0, 2.0];
    let lq = AdvLoss::LogitLq { q: Two };
    assert_eq!(logit_direction(lq, 0, None, &z, &z), Err(Error::ZeroVector));
    assert_eq!(logit_direction(lq, 0, None, &[4.0, 6.0], &z).unwrap(), vec![0.6, 0.8]);
    assert!(logit_direction(AdvLoss::default(), 5, None, &z, &z).is_err());
}

#[test]
fn linear_model_single_step() {
    let w = vec![0.5, -2.0, 1.0];
    let net = Network::affine(Mat::from_rows(&[w.clone(), vec![0.0; 3]]), vec![0.0, 0.0]).unwrap();
    let x = [1.0, 0.2, -0.3];
    let eps = 0.1;
    let cfg = AttackConfig { alpha: Alpha::Finite(0.5), init: AttackInit::Clean, ..AttackConfig::new(Infinity, eps, 1) };
    let r = pga_attack(&net, &x, 0, &cfg).unwrap();
    for i in 0..3 {
        assert!((r.x_star[i] - (x[i] - eps * w[i].signum())).abs() < 1e-15);
    }
}

#[test]
fn zero_radius_leaves_input() {
    let net = Network::random_with_bias(&[3, 6, 2], 0.1, 4);
    let x = [0.4, -0.2, 0.9];
    let y = net.predict(&x).unwrap();
    for p in NormOrder::STANDARD {
        let r = pga_attack(&net, &x, y, &AttackConfig::new(p, 0.0, 5)).unwrap();
        assert_eq!(r.x_star, x.to_vec());
        assert!(!r.success);
        let r = pga_attack(&net, &x, 1 - y, &AttackConfig::new(p, 0.0, 5)).unwrap();
        assert!(r.success);
    }
}

#[test]
fn iterates_stay_in_ball() {
    let net = Network::random_with_bias(&[4, 16, 16, 3], 0.2, 7);
    let x = [0.3, -0.5, 0.2, 0.1];
    for p in NormOrder::STANDARD {
        for alpha in [Alpha::Finite(0.3), Alpha::Infinity] {
            for init in [AttackInit::Clean, AttackInit::Uniform] {
                let cfg = AttackConfig { alpha, init, seed: 3, ..AttackConfig::new(p, 0.7, 12) };
                let r = pga_attack(&net, &x, 1, &cfg).unwrap();
                assert_eq!(r.trace.len(), 12);
                for s in &r.trace {
                    let d: Vec<f64> = s.x.iter().zip(&x).map(|(a, b)| a - b).collect();
                    assert!(p_norm(&d, p) <= 0.7 + 1e-9);
                    if alpha.is_infinite() {
                        assert!((p_norm(&s.v, p) - 1.0).abs() < 1e-10);
                        for (di, vi) in d.iter().zip(&s.v) {
                            assert!((di - 0.7 * vi).abs() < 1e-15);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn small_steps_ascend_cross_entropy_within_a_cell() {
    let net = Network::random_with_bias(&[5, 12, 3], 0.3, 8);
    let x = [0.2, 0.1, -0.4, 0.3, 0.05];
    let eps = 1e-3;
    let cfg = AttackConfig { alpha: Alpha::Finite(eps / 100.0), init: AttackInit::Clean, ..AttackConfig::new(Two, eps, 20) };
    let r = pga_attack(&net, &x, 0, &cfg).unwrap();
    assert_eq!(r.cells_crossed, 0);
    let mut prev = cross_entropy(&net.eval(&x).unwrap(), 0, 1.0);
    for s in &r.trace {
        assert!(s.loss >= prev - 1e-10);
        prev = s.loss;
    }
}

#[test]
fn infinite_step_logit_attack_tracks_power_method() {
    let net = Network::random_with_bias(&[6, 16, 12, 4], 0.3, 9);
    let x = [0.1, -0.2, 0.3, 0.25, -0.15, 0.05];
    let v0 = random_start(6, Two, 2);
    let eps = 1e-7;
    let x0: Vec<f64> = x.iter().zip(&v0).map(|(a, b)| a + eps * b).collect();
    let cfg = AttackConfig {
        alpha: Alpha::Infinity,
        loss: AdvLoss::LogitLq { q: Two },
        init: AttackInit::Explicit(x0),
        ..AttackConfig::new(Two, eps, 10)
    };
    let r = pga_attack(&net, &x, 0, &cfg).unwrap();
    assert_eq!(r.cells_crossed, 0);
    let op = net.jacobian_operator(&x).unwrap();
    let pow = power_limit_iterates(&op, &v0, Two, Two, 10, false).unwrap();
    let last = cosine(&r.trace[9].v, &pow[9].v).unwrap();
    assert!(last >= 1.0 - 1e-9, "cosine {last}");
}

#[test]
fn logit_loss_forces_random_start() {
    let net = Network::random_with_bias(&[3, 8, 2], 0.1, 10);
    let x = [0.1, 0.2, 0.3];
    let cfg = AttackConfig { loss: AdvLoss::LogitLq { q: Two }, init: AttackInit::Clean, ..AttackConfig::new(Two, 0.1, 3) };
    let r = pga_attack(&net, &x, 0, &cfg).unwrap();
    assert_ne!(r.x_start, x.to_vec());
    assert!(!r.terminated_early);
}

#[test]
fn flat_network_terminates_early() {
    let net = Network::affine(Mat::zeros(2, 3), vec![1.0, 0.0]).unwrap();
    let r = pga_attack(&net, &[0.0; 3], 0, &AttackConfig::new(Two, 0.1, 4)).unwrap();
    assert!(r.terminated_early && !r.success && r.trace.is_empty());
}

#[test]
fn predicted_label_mode() {
    let net = Network::random_with_bias(&[3, 8, 3], 0.1, 12);
    let x = [0.3, 0.1, -0.2];
    let pred = net.predict(&x).unwrap();
    let wrong = (pred + 1) % 3;
    let a = AttackConfig { label_mode: LabelMode::Predicted, seed: 1, ..AttackConfig::new(Infinity, 0.2, 5) };
    let b = AttackConfig { seed: 1, ..AttackConfig::new(Infinity, 0.2, 5) };
    assert_eq!(pga_attack(&net, &x, wrong, &a).unwrap().trace, pga_attack(&net, &x, pred, &b).unwrap().trace);
}

#[test]
fn ball_samples_are_feasible_and_deterministic() {
    let c = [1.0, -1.0, 0.5];
    for p in NormOrder::STANDARD {
        for seed in 0..200 {
            let s = sample_ball_uniform(&c, 0.3, p, seed).unwrap();
            let d: Vec<f64> = s.iter().zip(&c).map(|(a, b)| a - b).collect();
            assert!(p_norm(&d, p) <= 0.3 + 1e-12);
        }
        assert_eq!(sample_ball_uniform(&c, 0.3, p, 5), sample_ball_uniform(&c, 0.3, p, 5));
        assert_eq!(sample_ball_uniform(&c, 0.0, p, 5).unwrap(), c.to_vec());
    }
    assert!(sample_ball_uniform(&c, 1.0, NormOrder::Finite(3.0), 0).is_err());
}

#[test]
fn infinity_ball_samples_are_centered() {
    let mut rng = crate::rng::rng(77);
    let n = 100_000;
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let s = sample_ball_with(&[0.0, 0.0], 1.0, Infinity, &mut rng).unwrap();
        sum[0] += s[0];
        sum[1] += s[1];
    }
    // Uniform(−1, 1) has standard deviation 1/√3.
    let se = (1.0 / 3.0f64).sqrt() / (n as f64).sqrt();
    for s in sum {
        assert!((s / n as f64).abs() < 3.0 * se);
    }
}

#[test]
fn ball_samples_follow_volume_ratio() {
    // P(‖z‖ ≤ ε/2) = 2^{-n} for any norm ball.
    let dim = 3;
    let draws = 100_000;
    let expected = 0.5f64.powi(dim as i32);
    let se = (expected * (1.0 - expected) / draws as f64).sqrt();
    for p in [Two, One] {
        let mut rng = crate::rng::rng(88);
        let inner = (0..draws)
            .filter(|_| p_norm(&sample_ball_with(&vec![0.0; dim], 1.0, p, &mut rng).unwrap(), p) <= 0.5)
            .count();
        let frac = inner as f64 / draws as f64;
        assert!((frac - expected).abs() < 4.0 * se, "p={p}: {frac}");
    }
}

#[test]
fn one_ball_attack_moves_single_coordinates() {
    let net = Network::random_with_bias(&[4, 10, 2], 0.1, 14);
    let cfg = AttackConfig { alpha: Alpha::Infinity, init: AttackInit::Clean, ..AttackConfig::new(One, 0.5, 3) };
    let r = pga_attack(&net, &[0.1, 0.2, 0.3, 0.4], 0, &cfg).unwrap();
    for s in &r.trace {
        assert_eq!(s.v.iter().filter(|x| **x != 0.0).count(), 1);
    }
}
