//! Simulator properties: conservation, convergence, force law, dataset
//! contents and determinism.

use std::collections::HashSet;

use proptest::prelude::*;
use relnet_core::physics::{
    generate_dataset, generate_trajectory, integrate, pair_force, relation_vocabulary, Combo, DatasetSizes,
    IntegrateOptions, RelationGraph, RelationKind, RelationSpec, SimConfig, Split,
};
use relnet_core::rng;

fn momentum(frame: &[f64]) -> (f64, f64) {
    frame.chunks_exact(4).fold((0.0, 0.0), |(px, py), s| (px + s[2], py + s[3]))
}

fn random_graph(seed: u64, n: usize, vocab: &[RelationSpec]) -> RelationGraph {
    let mut r = rng::stream(seed, 1);
    RelationGraph::from_fn(n, |_, _| vocab[rng::below(&mut r, vocab.len())]).unwrap()
}

fn random_initial(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, 2);
    (0..n)
        .flat_map(|_| {
            [
                rng::uniform(&mut r, -1.5, 1.5),
                rng::uniform(&mut r, -1.5, 1.5),
                0.5 * rng::normal(&mut r),
                0.5 * rng::normal(&mut r),
            ]
        })
        .collect()
}

#[test]
fn momentum_is_conserved_for_every_combo() {
    let cfg = SimConfig::default();
    for (k, combo) in Combo::ALL.into_iter().enumerate() {
        let vocab = relation_vocabulary(combo, &cfg).unwrap();
        let g = random_graph(k as u64, 5, &vocab);
        let init = random_initial(k as u64, 5);
        let opts = IntegrateOptions {
            substeps: cfg.substeps,
            ..Default::default()
        };
        let out = integrate(&g, &init, cfg.dt, 99, &opts).unwrap();
        let mut prev = momentum(&init);
        for t in 0..99 {
            let p = momentum(out.trajectory.frame(t));
            assert!((p.0 - prev.0).abs() < 1e-9 && (p.1 - prev.1).abs() < 1e-9, "{combo} step {t}");
            prev = p;
        }
    }
}

#[test]
fn two_body_spring_energy_drift_is_small() {
    let k = 1.0;
    let r0 = 0.5;
    let g = RelationGraph::uniform(2, RelationSpec::spring(k, r0).unwrap()).unwrap();
    let init = [0.0, 0.0, 0.3, 0.1, 1.2, 0.4, -0.3, 0.25];
    let energy = |f: &[f64]| {
        let kin: f64 = f.chunks_exact(4).map(|s| 0.5 * (s[2] * s[2] + s[3] * s[3])).sum();
        let r = ((f[0] - f[4]).powi(2) + (f[1] - f[5]).powi(2)).sqrt();
        kin + 0.5 * k * (r - r0).powi(2)
    };
    let cfg = SimConfig::default();
    let opts = IntegrateOptions {
        substeps: cfg.substeps,
        ..Default::default()
    };
    let out = integrate(&g, &init, cfg.dt, 99, &opts).unwrap();
    let e0 = energy(&init);
    for t in 0..99 {
        let drift = (energy(out.trajectory.frame(t)) - e0).abs() / e0;
        assert!(drift < 1e-3, "step {t}: {drift}");
    }
}

#[test]
fn halving_dt_barely_moves_final_positions() {
    let cfg = SimConfig::default();
    for combo in [Combo::A, Combo::B, Combo::D, Combo::F] {
        let vocab = relation_vocabulary(combo, &cfg).unwrap();
        let g = random_graph(17, 5, &vocab);
        let init = random_initial(17, 5);
        let coarse = IntegrateOptions {
            substeps: cfg.substeps,
            softening: cfg.softening,
            ..Default::default()
        };
        let fine = IntegrateOptions {
            substeps: 2 * cfg.substeps,
            ..coarse
        };
        let a = integrate(&g, &init, cfg.dt, 99, &coarse).unwrap().trajectory;
        let b = integrate(&g, &init, cfg.dt, 99, &fine).unwrap().trajectory;
        let fa = a.frame(98);
        let fb = b.frame(98);
        let mut diff = 0.0;
        let mut size = 0.0;
        for i in 0..5 {
            diff += (fa[4 * i] - fb[4 * i]).powi(2) + (fa[4 * i + 1] - fb[4 * i + 1]).powi(2);
            size += fb[4 * i].powi(2) + fb[4 * i + 1].powi(2);
        }
        assert!((diff / size).sqrt() < 0.01, "{combo}: {}", (diff / size).sqrt());
    }
}

#[test]
fn gravity_force_halves_when_distance_doubles() {
    let g = RelationSpec::gravity(3.0).unwrap();
    for d in [0.25, 1.0, 1.5, 7.0] {
        let near = pair_force(&g, [0.0, 0.0], [d, 0.0], 1e-2).force;
        let far = pair_force(&g, [0.0, 0.0], [2.0 * d, 0.0], 1e-2).force;
        assert_eq!(far[0], near[0] / 2.0);
        assert_eq!(far[1], 0.0);
    }
}

#[test]
fn fine_grained_mix_uses_200_types() {
    let cfg = SimConfig::default();
    let sizes = DatasetSizes {
        train: 300,
        valid: 1,
        test: 1,
    };
    let d = generate_dataset(Combo::H, &cfg, sizes, 4).unwrap();
    let mut seen = HashSet::new();
    for t in &d.train {
        let g = t.graph.as_ref().unwrap();
        for i in 0..t.n_nodes {
            for j in i + 1..t.n_nodes {
                let s = g.get(i, j);
                seen.insert((s.kind == RelationKind::Spring, s.coefficient.to_bits()));
            }
        }
    }
    assert_eq!(seen.len(), 200);
}

#[test]
fn generation_order_does_not_matter() {
    let cfg = SimConfig::default();
    let forward: Vec<_> = (0..6)
        .map(|i| generate_trajectory(Combo::D, &cfg, 8, Split::Valid, i).unwrap())
        .collect();
    for i in (0..6).rev() {
        assert_eq!(generate_trajectory(Combo::D, &cfg, 8, Split::Valid, i).unwrap(), forward[i]);
    }
    let other = generate_trajectory(Combo::D, &cfg, 8, Split::Test, 0).unwrap();
    assert_ne!(other.0.states, forward[0].0.states);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn third_law_holds(kind in 0usize..3, k in 0.1f64..5.0, xi in -3.0f64..3.0, yi in -3.0f64..3.0,
                       xj in -3.0f64..3.0, yj in -3.0f64..3.0) {
        let spec = match kind {
            0 => RelationSpec::spring(k, 0.7).unwrap(),
            1 => RelationSpec::gravity(k).unwrap(),
            _ => RelationSpec::none(),
        };
        let a = pair_force(&spec, [xi, yi], [xj, yj], 1e-2).force;
        let b = pair_force(&spec, [xj, yj], [xi, yi], 1e-2).force;
        prop_assert_eq!(a[0], -b[0]);
        prop_assert_eq!(a[1], -b[1]);
    }

    #[test]
    fn labels_symmetric_for_any_seed(seed in 0u64..1000, combo in 0usize..8) {
        let cfg = SimConfig::default();
        let (t, _) = generate_trajectory(Combo::ALL[combo], &cfg, seed, Split::Train, 0).unwrap();
        let pairs = relnet_core::physics::directed_pairs(t.n_nodes);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            prop_assert_eq!(t.labels[k], t.labels[relnet_core::physics::pair_index(t.n_nodes, j, i)]);
        }
    }
}
