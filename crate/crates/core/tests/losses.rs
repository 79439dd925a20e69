//! Loss terms, window sampling and the learning-rate schedule.

use proptest::prelude::*;
use relnet_core::losses::{
    centrality_loss, kl_divergence, kl_loss, low_quantile_mask, node_prediction_loss, relation_sd_loss,
    total_loss, KlSign, LossParts, LossWeights,
};
use relnet_core::rng;
use relnet_core::schedule::{one_cycle_lr, one_cycle_peak, sample_windows};
use relnet_core::{Error, Tape, Tensor};

fn value(tape: &Tape, v: relnet_core::Var) -> f64 {
    tape.data(v)[0]
}

#[test]
fn prediction_loss_examples() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let z = node_prediction_loss(&mut t, a, a).unwrap();
    assert_eq!(value(&t, z), 0.0);
    let b = t.constant(Tensor::new(&[2, 3], vec![1.5, 2.5, 3.5, 4.5, 5.5, 6.5]).unwrap());
    let l = node_prediction_loss(&mut t, a, b).unwrap();
    assert_eq!(value(&t, l), 0.25);
    let c = t.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(node_prediction_loss(&mut t, a, c), Err(Error::Shape { .. })));
}

#[test]
fn prediction_loss_ignores_joint_node_permutation() {
    let mut r = rng::stream(1, 0);
    let p: Vec<f64> = (0..3 * 4).map(|_| rng::normal(&mut r)).collect();
    let q: Vec<f64> = (0..3 * 4).map(|_| rng::normal(&mut r)).collect();
    let permute = |v: &[f64]| [&v[8..12], &v[0..4], &v[4..8]].concat();
    let mut t = Tape::new();
    let (a, b) = (
        t.constant(Tensor::new(&[3, 4], p.clone()).unwrap()),
        t.constant(Tensor::new(&[3, 4], q.clone()).unwrap()),
    );
    let (pa, pb) = (
        t.constant(Tensor::new(&[3, 4], permute(&p)).unwrap()),
        t.constant(Tensor::new(&[3, 4], permute(&q)).unwrap()),
    );
    let l1 = node_prediction_loss(&mut t, a, b).unwrap();
    let l2 = node_prediction_loss(&mut t, pa, pb).unwrap();
    assert!((value(&t, l1) - value(&t, l2)).abs() < 1e-15);
}

#[test]
fn kl_closed_form_examples() {
    let mut t = Tape::new();
    let mu = t.constant(Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap());
    let sd = t.constant(Tensor::full(&[1, 2], 1.0));
    let k = kl_loss(&mut t, mu, sd).unwrap();
    assert_eq!(value(&t, k), 0.25);
    assert_eq!(kl_divergence(0.0, 1.0).unwrap(), 0.0);
    assert_eq!(kl_divergence(1.0, 1.0).unwrap(), 0.5);
    let bad = t.constant(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
    assert!(matches!(kl_loss(&mut t, mu, bad), Err(Error::Contract(_))));
}

/// `E_q[ln q(x) − ln p(x)]` estimated from `n` draws of `q = N(μ, σ²)`.
pub fn monte_carlo_kl(mu: f64, sigma: f64, n: usize, seed: u64) -> f64 {
    let mut r = rng::stream(seed, 0);
    let mut acc = 0.0;
    for _ in 0..n {
        let e = rng::normal(&mut r);
        let x = mu + sigma * e;
        acc += -sigma.ln() - 0.5 * e * e + 0.5 * x * x;
    }
    acc / n as f64
}

#[test]
fn kl_matches_monte_carlo() {
    let mut r = rng::stream(2, 0);
    for k in 0..5 {
        let mu = rng::uniform(&mut r, -2.0, 2.0);
        let sigma = rng::uniform(&mut r, 0.3, 2.0);
        let exact = kl_divergence(mu, sigma).unwrap();
        let mc = monte_carlo_kl(mu, sigma, 1_000_000, k);
        assert!((mc - exact).abs() <= 0.02 * exact.abs().max(0.05), "{mu} {sigma}: {mc} vs {exact}");
    }
}

#[test]
fn sd_loss_examples() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(&[2, 2], vec![0.1, 0.7, -3.3, 1e-3]).unwrap());
    let same = relation_sd_loss(&mut t, &[x, x, x, x, x]).unwrap();
    assert_eq!(value(&t, same), 0.0);
    let one = relation_sd_loss(&mut t, &[x]).unwrap();
    assert_eq!(value(&t, one), 0.0);
    let a = t.constant(Tensor::zeros(&[1, 3]));
    let b = t.constant(Tensor::full(&[1, 3], 2.0));
    let two = relation_sd_loss(&mut t, &[a, b]).unwrap();
    assert_eq!(value(&t, two), 1.0);
    assert!(matches!(relation_sd_loss(&mut t, &[]), Err(Error::Contract(_))));
}

#[test]
fn centrality_loss_examples() {
    let mut t = Tape::new();
    let half = t.constant(Tensor::new(&[1], vec![0.5]).unwrap());
    let l = centrality_loss(&mut t, half, None).unwrap();
    assert!((value(&t, l) - std::f64::consts::LN_2).abs() < 1e-12);
    let tiny = t.constant(Tensor::new(&[1], vec![1e-12]).unwrap());
    let l = centrality_loss(&mut t, tiny, None).unwrap();
    assert!(value(&t, l) < 1e-11);
    let batch = t.constant(Tensor::new(&[2], vec![0.2, 0.8]).unwrap());
    let l = centrality_loss(&mut t, batch, Some(0.5)).unwrap();
    assert!((value(&t, l) - (-(0.8f64).ln())).abs() < 1e-12);
    for bad in [0.0, 1.0, -0.1] {
        let b = t.constant(Tensor::new(&[1], vec![bad]).unwrap());
        assert!(matches!(centrality_loss(&mut t, b, None), Err(Error::Contract(_))));
    }
}

#[test]
fn low_quantile_entries_agree_with_plain_loss() {
    let c = [0.9, 0.1, 0.4, 0.6, 0.3, 0.2];
    let mask = low_quantile_mask(&c, 0.5);
    assert_eq!(mask, [0.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    for (k, &ck) in c.iter().enumerate().filter(|(k, _)| mask[*k] == 1.0) {
        let mut t = Tape::new();
        let one = t.constant(Tensor::new(&[1], vec![ck]).unwrap());
        let plain = centrality_loss(&mut t, one, None).unwrap();
        let gated = centrality_loss(&mut t, one, Some(1.0)).unwrap();
        assert_eq!(value(&t, plain), value(&t, gated), "{k}");
    }
}

#[test]
fn total_loss_weights() {
    let mut t = Tape::new();
    let one = t.constant(Tensor::scalar(1.0));
    let zero = t.constant(Tensor::scalar(0.0));
    let unit = LossParts {
        np: one,
        kl: one,
        sd: one,
        centrality: one,
    };
    let l = total_loss(&mut t, &unit, &LossWeights::default(), KlSign::Divergence).unwrap();
    assert!((value(&t, l) - 2.101).abs() < 1e-15);
    let none = LossParts {
        np: zero,
        kl: zero,
        sd: zero,
        centrality: zero,
    };
    let l = total_loss(&mut t, &none, &LossWeights::default(), KlSign::Divergence).unwrap();
    assert_eq!(value(&t, l), 0.0);
    let l = total_loss(&mut t, &unit, &LossWeights::default(), KlSign::Negated).unwrap();
    assert!((value(&t, l) - 1.901).abs() < 1e-15);
}

#[test]
fn total_gradient_is_weighted_sum_of_parts() {
    let x0 = Tensor::new(&[2, 2], vec![0.3, -0.4, 0.5, 0.9]).unwrap().with_requires_grad(true);
    let w = LossWeights {
        np: 0.7,
        kl: 0.2,
        sd: 1.3,
        centrality: 0.05,
    };
    let build = |t: &mut Tape, x| {
        let truth = t.constant(Tensor::zeros(&[2, 2]));
        let np = node_prediction_loss(t, x, truth).unwrap();
        let sd_ = t.exp(x).unwrap();
        let kl = kl_loss(t, x, sd_).unwrap();
        let shifted = t.add_scalar(x, 0.2).unwrap();
        let sd = relation_sd_loss(t, &[x, shifted]).unwrap();
        let sig = t.sigmoid(x).unwrap();
        let c = centrality_loss(t, sig, None).unwrap();
        LossParts {
            np,
            kl,
            sd,
            centrality: c,
        }
    };
    let mut t = Tape::new();
    let x = t.leaf(x0.clone());
    let parts = build(&mut t, x);
    let total = total_loss(&mut t, &parts, &w, KlSign::Divergence).unwrap();
    t.backward(total).unwrap();
    let g_total = t.grad(x).unwrap().to_vec();
    let mut expect = [0.0; 4];
    for (k, weight) in [w.np, w.kl, w.sd, w.centrality].into_iter().enumerate() {
        let mut t = Tape::new();
        let x = t.leaf(x0.clone());
        let p = build(&mut t, x);
        let part = [p.np, p.kl, p.sd, p.centrality][k];
        t.backward(part).unwrap();
        for (e, g) in expect.iter_mut().zip(t.grad(x).unwrap_or(&[0.0; 4])) {
            *e += weight * g;
        }
    }
    for (a, b) in g_total.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn window_starts_are_uniform() {
    // 1% critical values of χ² with 9 and 5 degrees of freedom.
    let (t, t_e, t_d) = (20, 11, 15);
    let mut r = rng::stream(3, 0);
    let draws = 100_000;
    let mut enc = [0usize; 10];
    let mut dec = [0usize; 6];
    for _ in 0..draws {
        let w = sample_windows(&mut r, t, t_e, t_d, 1).unwrap();
        enc[w.encoder_starts[0]] += 1;
        dec[w.decoder_start] += 1;
    }
    let chi2 = |c: &[usize]| {
        let e = draws as f64 / c.len() as f64;
        c.iter().map(|&o| (o as f64 - e).powi(2) / e).sum::<f64>()
    };
    assert!(chi2(&enc) < 21.666, "{}", chi2(&enc));
    assert!(chi2(&dec) < 15.086, "{}", chi2(&dec));
}

proptest! {
    #[test]
    fn windows_fit(t in 1usize..120, a in 1usize..120, b in 1usize..120, m in 1usize..6, seed in 0u64..1000) {
        let mut r = rng::stream(seed, 0);
        match sample_windows(&mut r, t, a, b, m) {
            Ok(w) => {
                prop_assert!(w.encoder_starts.iter().all(|&s| s + a <= t));
                prop_assert!(w.decoder_start + b <= t);
                prop_assert_eq!(w.encoder_starts.len(), m);
            }
            Err(_) => prop_assert!(a > t || b > t),
        }
    }

    #[test]
    fn one_cycle_is_unimodal(total in 1usize..3000, lr in 1e-5f64..1.0) {
        let peak = one_cycle_peak(total);
        let lrs: Vec<f64> = (0..total).map(|s| one_cycle_lr(s, total, lr).unwrap()).collect();
        for s in 1..total {
            if s <= peak {
                prop_assert!(lrs[s] >= lrs[s - 1]);
            } else {
                prop_assert!(lrs[s] <= lrs[s - 1]);
            }
        }
        prop_assert!((lrs[peak.min(total - 1)] - lr).abs() <= 1e-15 * lr);
        prop_assert!(one_cycle_lr(total, total, lr).is_err());
    }

    #[test]
    fn kl_is_non_negative(mu in -5.0f64..5.0, sigma in 0.01f64..5.0) {
        prop_assert!(kl_divergence(mu, sigma).unwrap() >= -1e-15);
    }
}
