//! Acceptance suite. Every test checks one criterion at its stated
//! tolerance and writes a `criterion N: PASS|FAIL` line straight to the
//! terminal, so the verdicts show up even when test output is captured.
//!
//! Criteria 7 and 8 train twelve desk-scale models between them and are
//! ignored by default: `cargo test -p relnet --test acceptance -- --ignored`.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use relnet::config::{Ablation, Profile, RunConfig};
use relnet::pipeline::{self, AccuracyReport, Quiet, TrainOptions};
use relnet_core::analysis::{cluster_accuracy, kmeans, KMeansOptions};
use relnet_core::decoder::NoiseConfig;
use relnet_core::gradcheck::{max_rel_error, param_rel_errors};
use relnet_core::losses::{centrality_loss, kl_divergence, kl_loss, relation_sd_loss};
use relnet_core::model::{Model, ModelConfig};
use relnet_core::physics::{
    generate_trajectory, pair_force, Combo, RelationSpec, SimConfig, Split,
};
use relnet_core::rng;
use relnet_core::schedule::SampledWindows;
use relnet_core::tape::{Elementwise, Reduction};
use relnet_core::train::{batch_loss, TrainingConfig};
use relnet_core::{Tape, Tensor, Var};

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {n} ({name}): {} | {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut err = std::io::stderr();
    let _ = err.write_all(line.as_bytes());
    let _ = err.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn minutes(d: Duration) -> f64 {
    d.as_secs_f64() / 60.0
}

fn random_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = rng::stream(seed, 7);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect()).unwrap()
}

fn weighted_sum(tape: &mut Tape, v: Var) -> relnet_core::Result<Var> {
    let n = tape.value(v).len();
    let shape = tape.shape(v).to_vec();
    let w = tape.constant(Tensor::new(&shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect())?);
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

type OpCheck = Box<dyn Fn(&mut Tape, &[Var]) -> relnet_core::Result<Var>>;

fn op_cases() -> Vec<(String, Vec<Tensor>, OpCheck)> {
    let mut cases: Vec<(String, Vec<Tensor>, OpCheck)> = Vec::new();
    let m = random_tensor(1, &[3, 4]);
    let k = random_tensor(2, &[4, 2]);
    cases.push((
        "matmul".into(),
        vec![m.clone(), k],
        Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
    ));
    for (i, op) in [Elementwise::Sigmoid, Elementwise::Tanh, Elementwise::Relu, Elementwise::Exp, Elementwise::Square]
        .into_iter()
        .enumerate()
    {
        cases.push((
            format!("{op:?}"),
            vec![random_tensor(10 + i as u64, &[3, 3])],
            Box::new(move |t, v| {
                let y = t.elementwise(op, &[v[0]])?;
                weighted_sum(t, y)
            }),
        ));
    }
    let mut pos = random_tensor(20, &[5]);
    pos.data_mut().iter_mut().for_each(|x| *x = x.abs() + 0.1);
    cases.push((
        "Log".into(),
        vec![pos.clone()],
        Box::new(|t, v| {
            let y = t.elementwise(Elementwise::Log, &[v[0]])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "sqrt".into(),
        vec![pos],
        Box::new(|t, v| {
            let y = t.sqrt(v[0])?;
            weighted_sum(t, y)
        }),
    ));
    for (i, op) in [Elementwise::Add, Elementwise::Sub, Elementwise::Mul].into_iter().enumerate() {
        for (shape_b, tag) in [(vec![2, 3], ""), (vec![1], " broadcast")] {
            cases.push((
                format!("{op:?}{tag}"),
                vec![random_tensor(30 + i as u64, &[2, 3]), random_tensor(40 + i as u64, &shape_b)],
                Box::new(move |t, v| {
                    let y = t.elementwise(op, &[v[0], v[1]])?;
                    weighted_sum(t, y)
                }),
            ));
        }
    }
    let a = random_tensor(70, &[2, 3]);
    cases.push((
        "concat".into(),
        vec![a.clone(), random_tensor(71, &[2, 2])],
        Box::new(|t, v| {
            let y = t.concat(&[v[0], v[1]], 1)?;
            weighted_sum(t, y)
        }),
    ));
    let unary: Vec<(&str, OpCheck)> = vec![
        ("narrow", Box::new(|t, v| {
            let y = t.narrow(v[0], 1, 1, 2)?;
            weighted_sum(t, y)
        })),
        ("reshape", Box::new(|t, v| {
            let y = t.reshape(v[0], &[3, 2])?;
            weighted_sum(t, y)
        })),
        ("gather_rows", Box::new(|t, v| {
            let y = t.gather_rows(v[0], &[1, 0, 1])?;
            weighted_sum(t, y)
        })),
        ("scatter_add_rows", Box::new(|t, v| {
            let y = t.scatter_add_rows(v[0], &[2, 2], 3)?;
            weighted_sum(t, y)
        })),
        ("clamp", Box::new(|t, v| {
            let y = t.clamp(v[0], -1.0, 1.0)?;
            weighted_sum(t, y)
        })),
        ("scale/add_scalar", Box::new(|t, v| {
            let y = t.scale(v[0], -1.7)?;
            let y = t.add_scalar(y, 0.4)?;
            weighted_sum(t, y)
        })),
    ];
    for (name, f) in unary {
        cases.push((name.into(), vec![a.clone()], f));
    }
    for kind in [Reduction::Sum, Reduction::Mean] {
        for axis in [None, Some(0), Some(1)] {
            cases.push((
                format!("{kind:?} axis {axis:?}"),
                vec![a.clone()],
                Box::new(move |t, v| {
                    let y = t.reduce(kind, v[0], axis)?;
                    weighted_sum(t, y)
                }),
            ));
        }
    }
    cases.push((
        "add_bias/scale_rows".into(),
        vec![a, random_tensor(72, &[3]), random_tensor(73, &[2])],
        Box::new(|t, v| {
            let y = t.add_bias(v[0], v[1])?;
            let y = t.scale_rows(y, v[2])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "gru_cell".into(),
        vec![
            random_tensor(80, &[3, 4]),
            random_tensor(81, &[3, 5]),
            random_tensor(82, &[4, 15]),
            random_tensor(83, &[5, 15]),
            random_tensor(84, &[15]),
        ],
        Box::new(|t, v| {
            let s1 = t.gru_cell(v[0], v[1], v[2], v[3], v[4])?;
            let s2 = t.gru_cell(v[0], s1, v[2], v[3], v[4])?;
            weighted_sum(t, s2)
        }),
    ));
    cases
}

fn two_node_model_errors() -> Vec<(String, f64)> {
    let sim = SimConfig {
        n_nodes: 2,
        steps: 12,
        ..SimConfig::default()
    };
    let trajs: Vec<_> = (0..2)
        .map(|i| generate_trajectory(Combo::B, &sim, 3, Split::Train, i).unwrap().0)
        .collect();
    let refs: Vec<_> = trajs.iter().collect();
    let cfg = TrainingConfig {
        m: 2,
        encoder_window: 3,
        decoder_horizon: 3,
        sparsity_p: Some(0.5),
        noise: NoiseConfig::gaussian(1.0),
        ..TrainingConfig::desk()
    };
    let windows = vec![
        SampledWindows {
            encoder_starts: vec![0, 5],
            decoder_start: 2,
        },
        SampledWindows {
            encoder_starts: vec![4, 1],
            decoder_start: 7,
        },
    ];
    let config = ModelConfig {
        node_dim: 4,
        edge_hidden: 3,
        mlp_hidden: 4,
        relation_dim: 2,
        influence_dim: 3,
    };
    let mut model = Model::new(config, 5).unwrap();
    // Zero-initialised biases put ReLU inputs exactly on the kink; move
    // every weight to a generic point first.
    let mut jitter = rng::stream(5, 1);
    for t in model.params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng::uniform(&mut jitter, -0.1, 0.1));
    }
    let errs = param_rel_errors(&model.params, 1e-5, |tape, p| {
        let mut r = rng::stream(9, 0);
        Ok(batch_loss(&model, tape, p, &refs, &windows, &cfg, &mut r)?.0)
    })
    .unwrap();
    model.params.names().iter().cloned().zip(errs).collect()
}

#[test]
fn criterion_1_gradient_integrity() {
    let start = Instant::now();
    let mut worst_op = (String::new(), 0.0f64);
    for (name, inputs, f) in op_cases() {
        let e = max_rel_error(&inputs, 1e-5, f).unwrap();
        if e >= worst_op.1 {
            worst_op = (name, e);
        }
    }
    let model = two_node_model_errors();
    let worst_model = model.iter().cloned().fold((String::new(), 0.0f64), |a, b| if b.1 >= a.1 { b } else { a });
    let elapsed = start.elapsed();
    let pass = worst_op.1 < 1e-4 && worst_model.1 < 1e-3 && elapsed < Duration::from_secs(120);
    verdict(
        1,
        "gradient integrity",
        pass,
        &format!(
            "worst op {} rel err {:.2e} (< 1e-4); full 2-node model worst {} rel err {:.2e} over {} tensors (< 1e-3); {:.1} s",
            worst_op.0,
            worst_op.1,
            worst_model.0,
            worst_model.1,
            model.len(),
            elapsed.as_secs_f64()
        ),
    );
}

fn momentum(frame: &[f64]) -> (f64, f64) {
    frame.chunks_exact(4).fold((0.0, 0.0), |(px, py), s| (px + s[2], py + s[3]))
}

#[test]
fn criterion_2_simulator_physics() {
    let start = Instant::now();
    let cfg = SimConfig::default();
    let fine_cfg = SimConfig {
        substeps: 2 * cfg.substeps,
        ..cfg.clone()
    };
    let mut worst_dp = 0.0f64;
    let mut worst_dt = 0.0f64;
    let mut checked = 0;
    for combo in Combo::ALL {
        for index in 0..10 {
            // the sampled graph and initial state do not depend on the step size
            let coarse = generate_trajectory(combo, &cfg, 11, Split::Test, index).unwrap().0;
            let fine = generate_trajectory(combo, &fine_cfg, 11, Split::Test, index).unwrap().0;
            assert_eq!(coarse.labels, fine.labels);
            let mut prev = momentum(coarse.frame(0));
            for t in 1..coarse.steps {
                let p = momentum(coarse.frame(t));
                worst_dp = worst_dp.max((p.0 - prev.0).abs()).max((p.1 - prev.1).abs());
                prev = p;
            }
            let last = coarse.steps - 1;
            let (a, b) = (coarse.frame(last), fine.frame(last));
            let (mut diff, mut size) = (0.0, 0.0);
            for i in 0..coarse.n_nodes {
                diff += (a[4 * i] - b[4 * i]).powi(2) + (a[4 * i + 1] - b[4 * i + 1]).powi(2);
                size += b[4 * i].powi(2) + b[4 * i + 1].powi(2);
            }
            worst_dt = worst_dt.max((diff / size).sqrt());
            checked += 1;
        }
    }
    let mut halves = true;
    for k in [0.5, 1.0, 3.0] {
        let g = RelationSpec::gravity(k).unwrap();
        for d in [0.25, 1.0, 1.5, 7.0] {
            let near = pair_force(&g, [0.0, 0.0], [d, 0.0], cfg.softening).force;
            let far = pair_force(&g, [0.0, 0.0], [2.0 * d, 0.0], cfg.softening).force;
            halves &= far[0] == near[0] / 2.0 && far[1] == 0.0 && near[0] != 0.0;
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_dp < 1e-9 && worst_dt < 0.01 && halves && elapsed < Duration::from_secs(60);
    verdict(
        2,
        "simulator physics",
        pass,
        &format!(
            "{checked} trajectories over all combos: max per-step |dp| {worst_dp:.2e} (< 1e-9); \
             halving dt moves final positions by at most {:.3}% (< 1%); gravity halves exactly: {halves}; {:.1} s",
            100.0 * worst_dt,
            elapsed.as_secs_f64()
        ),
    );
}

/// One complete desk-scale experiment: generate, train, analyze.
struct DeskRun {
    seed: u64,
    report: AccuracyReport,
    elapsed: Duration,
}

fn desk_run(combo: Combo, seed: u64, tweak: impl FnOnce(&mut RunConfig)) -> DeskRun {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::profile(Profile::Desk);
    cfg.combo = combo;
    cfg.set_seed(seed);
    tweak(&mut cfg);
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    pipeline::generate(&cfg, &data).unwrap();
    pipeline::train(&cfg, &data, &run, TrainOptions::default(), &mut Quiet).unwrap();
    let report = pipeline::analyze(&cfg, &run, &data, &run.join("analysis")).unwrap();
    DeskRun {
        seed,
        report,
        elapsed: start.elapsed(),
    }
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn combo_a_runs() -> &'static [DeskRun] {
    static RUNS: OnceLock<Vec<DeskRun>> = OnceLock::new();
    RUNS.get_or_init(|| SEEDS.iter().map(|&s| desk_run(Combo::A, s, |_| {})).collect())
}

#[test]
fn criterion_3_relation_recovery_desk_scale() {
    let runs = combo_a_runs();
    let total: Duration = runs.iter().map(|r| r.elapsed).sum();
    let hits = runs.iter().filter(|r| r.report.accuracy >= 0.85).count();
    let accs: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {}: {:.4}", r.seed, r.report.accuracy))
        .collect();
    let pass = hits >= 2 && minutes(total) <= 45.0;
    verdict(
        3,
        "relation recovery, combo a, desk",
        pass,
        &format!(
            "test accuracy [{}]; {hits}/3 seeds >= 0.85 (need 2); {:.1} min (<= 45)",
            accs.join(", "),
            minutes(total)
        ),
    );
}

#[test]
fn criterion_4_relation_count_inference() {
    let runs = combo_a_runs();
    let mut ok = 0;
    let mut parts = Vec::new();
    for r in runs {
        let s = |k: usize| r.report.silhouette.iter().find(|(kk, _)| *kk == k).map(|x| x.1).unwrap();
        let gap = s(2) - s(5);
        let good = r.report.chosen_k == 2 && gap >= 0.05;
        ok += usize::from(good);
        let scores: Vec<String> = r.report.silhouette.iter().map(|(k, v)| format!("{k}:{v:.3}")).collect();
        parts.push(format!("seed {}: k*={} sil [{}] gap {gap:.3}", r.seed, r.report.chosen_k, scores.join(" ")));
    }
    verdict(
        4,
        "relation count inference",
        ok >= 2,
        &format!("{}; {ok}/3 seeds with k*=2 and gap >= 0.05 (need 2)", parts.join("; ")),
    );
}

#[test]
fn criterion_5_losses_analytic() {
    let start = Instant::now();
    let mut t = Tape::new();
    let mu = t.constant(Tensor::full(&[3, 4], 1.0));
    let sd = t.constant(Tensor::full(&[3, 4], 1.0));
    let k = kl_loss(&mut t, mu, sd).unwrap();
    let closed = t.data(k)[0];
    let mut worst_mc = 0.0f64;
    let mut r = rng::stream(2, 0);
    for seed in 0..3u64 {
        let (m, s) = (rng::uniform(&mut r, -2.0, 2.0), rng::uniform(&mut r, 0.3, 2.0));
        let exact = kl_divergence(m, s).unwrap();
        let mut draws = rng::stream(seed, 0);
        let n = 1_000_000;
        let mc = (0..n)
            .map(|_| {
                let e = rng::normal(&mut draws);
                let x = m + s * e;
                -s.ln() - 0.5 * e * e + 0.5 * x * x
            })
            .sum::<f64>()
            / n as f64;
        worst_mc = worst_mc.max((mc - exact).abs() / exact);
    }
    let half = t.constant(Tensor::full(&[4], 0.5));
    let c = centrality_loss(&mut t, half, None).unwrap();
    let c_err = (t.data(c)[0] - std::f64::consts::LN_2).abs();
    let x = t.constant(random_tensor(5, &[6, 3]));
    let sdl = relation_sd_loss(&mut t, &[x, x, x, x, x]).unwrap();
    let sd_val = t.data(sdl)[0];
    let elapsed = start.elapsed();
    let pass = closed == 0.5 && worst_mc < 0.02 && c_err < 1e-12 && sd_val == 0.0 && elapsed < Duration::from_secs(60);
    verdict(
        5,
        "losses analytic",
        pass,
        &format!(
            "KL(mu=1,sigma=1) per dim {closed}; worst 1e6-sample MC rel. gap {:.3}% (< 2%); \
             |centrality(0.5) - ln 2| {c_err:.1e}; SD loss of identical samples {sd_val}; {:.1} s",
            100.0 * worst_mc,
            elapsed.as_secs_f64()
        ),
    );
}

/// Minimum within-cluster sum of squares over every split into two
/// non-empty groups.
fn exhaustive_two_means(pts: &[f64], dim: usize) -> f64 {
    let n = pts.len() / dim;
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << n) - 1 {
        let mut cost = 0.0;
        for side in [true, false] {
            let rows: Vec<&[f64]> = (0..n)
                .filter(|&i| ((mask >> i) & 1 == 1) == side)
                .map(|i| &pts[i * dim..(i + 1) * dim])
                .collect();
            let mut mean = vec![0.0; dim];
            for r in &rows {
                for j in 0..dim {
                    mean[j] += r[j] / rows.len() as f64;
                }
            }
            for r in &rows {
                cost += (0..dim).map(|j| (r[j] - mean[j]).powi(2)).sum::<f64>();
            }
        }
        best = best.min(cost);
    }
    best
}

#[test]
fn criterion_6_clustering_oracles() {
    let start = Instant::now();
    let mut r = rng::stream(42, 0);
    let mut optimal = 0;
    let mut worst_gap = 0.0f64;
    for instance in 0..100u64 {
        let n = 3 + rng::below(&mut r, 6);
        let dim = 1 + rng::below(&mut r, 3);
        let pts: Vec<f64> = (0..n * dim).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let fit = kmeans(&pts, dim, 2, instance, KMeansOptions::default()).unwrap();
        let opt = exhaustive_two_means(&pts, dim);
        let gap = (fit.inertia - opt).abs();
        worst_gap = worst_gap.max(gap);
        optimal += usize::from(gap <= 1e-9 * opt.max(1.0));
    }
    let n = 200;
    let labels: Vec<usize> = (0..n).map(|_| rng::below(&mut r, 4)).collect();
    let assign: Vec<usize> = labels
        .iter()
        .map(|&l| if rng::uniform(&mut r, 0.0, 1.0) < 0.7 { l } else { rng::below(&mut r, 4) })
        .collect();
    let base = cluster_accuracy(&assign, &labels).unwrap();
    let mut invariant = 0;
    for _ in 0..100 {
        let mut perm: Vec<usize> = (0..4).collect();
        for i in (1..4).rev() {
            perm.swap(i, rng::below(&mut r, i + 1));
        }
        let relabeled: Vec<usize> = assign.iter().map(|&a| perm[a]).collect();
        invariant += usize::from(cluster_accuracy(&relabeled, &labels).unwrap() == base);
    }
    let elapsed = start.elapsed();
    let pass = optimal == 100 && invariant == 100 && elapsed < Duration::from_secs(60);
    verdict(
        6,
        "clustering oracles",
        pass,
        &format!(
            "k-means at exhaustive optimum on {optimal}/100 instances (worst gap {worst_gap:.1e}); \
             accuracy {base:.4} unchanged under {invariant}/100 relabelings; {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
#[ignore = "trains nine desk-scale models (about 2 h on one core)"]
fn criterion_7_ablation_direction() {
    let start = Instant::now();
    let mean = |runs: &[DeskRun]| runs.iter().map(|r| r.report.accuracy).sum::<f64>() / runs.len() as f64;
    let full = mean(combo_a_runs());
    let arm = |a: Ablation| -> Vec<DeskRun> { SEEDS.iter().map(|&s| desk_run(Combo::A, s, |c| c.ablate(a))).collect() };
    let no_rst = mean(&arm(Ablation::Rst));
    let no_rsdl = mean(&arm(Ablation::Rsdl));
    let elapsed = start.elapsed();
    let pass = full >= no_rst && full >= no_rsdl && minutes(elapsed) <= 180.0;
    verdict(
        7,
        "ablation direction",
        pass,
        &format!(
            "mean accuracy over 3 seeds: full {full:.4}, without random sampling {no_rst:.4}, \
             without SD loss {no_rsdl:.4}; {:.1} min (<= 180)",
            minutes(elapsed)
        ),
    );
}

#[test]
#[ignore = "trains a desk-scale model on combo e with gate noise"]
fn criterion_8_centrality_ordering() {
    let start = Instant::now();
    let run = desk_run(Combo::E, 0, RunConfig::gaussian_epsilon);
    let elapsed = start.elapsed();
    let c: Vec<(String, f64)> = run
        .report
        .centrality_by_type
        .iter()
        .map(|t| (t.name.clone(), t.mean.unwrap_or(f64::NAN)))
        .collect();
    let increasing = c.windows(2).all(|w| w[0].1 < w[1].1);
    let listing: Vec<String> = c.iter().map(|(n, v)| format!("{n} {v:.4}")).collect();
    let pass = increasing && minutes(elapsed) <= 120.0;
    verdict(
        8,
        "centrality ordering",
        pass,
        &format!(
            "mean test centrality [{}] (must increase); accuracy {:.4}; {:.1} min (<= 120)",
            listing.join(", "),
            run.report.accuracy,
            minutes(elapsed)
        ),
    );
}
