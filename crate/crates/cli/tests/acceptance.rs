//! Acceptance suite: one PASS/FAIL line per criterion, each with a runtime budget.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use msr::autograd::{ParamId, ParamStore, Tape, Var};
use msr::data::{kfold_split, DatasetManifest, SensorSpec, Task};
use msr::harness::{run_cv_experiment, simulate_missingness, DatasetSource, ExperimentConfig, MissingnessScenario};
use msr::layers::{conv1d_forward, dense_forward, layernorm_forward};
use msr::metrics::{f1_macro, prs_from_rmse, r2};
use msr::models::{
    build_model, Combine, EncoderConfig, EsensiOptions, FusionStrategy, ModelBundle, ModelTargets, TrainConfig,
};
use msr::optim::{AdamConfig, AdamState};
use msr::robustness::{
    cca_fit, enumerate_missing_combinations, exemplar_lookup, ExemplarOptions, Gallery, MaskVector, SharedSpace,
};
use msr::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn f1_oracle(y: &[usize], yhat: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..classes {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (a, b) in y.iter().zip(yhat) {
            match (*a == c, *b == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                _ => {}
            }
        }
        if tp > 0.0 {
            total += 2.0 * tp / (2.0 * tp + fp + fn_);
        }
    }
    total / classes as f64
}

fn metric_exactness() -> Result<String, String> {
    let e = |r: Result<f64, msr::Error>| r.map_err(|e| e.to_string());
    ensure!(e(prs_from_rmse(1.0, 1.0))? == 1.0, "prs(1,1) != 1");
    ensure!(
        (e(prs_from_rmse(2.0, 1.0))? - (-1.0f64).exp()).abs() <= 1e-12,
        "prs ratio 2"
    );
    ensure!(e(prs_from_rmse(0.5, 1.0))? == 1.0, "prs ratio 0.5 not clipped");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..80);
        let classes = rng.gen_range(2..6);
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let yhat: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        worst = worst.max((e(f1_macro(&y, &yhat, classes))? - f1_oracle(&y, &yhat, classes)).abs());

        let n = rng.gen_range(2..80);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let yhat: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mean = y.iter().sum::<f64>() / n as f64;
        let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = y.iter().zip(&yhat).map(|(a, b)| (a - b).powi(2)).sum();
        worst = worst.max((e(r2(&y, &yhat))? - (1.0 - ss_res / ss_tot)).abs());
    }
    ensure!(worst <= 1e-12, "oracle deviation {worst:e}");
    Ok(format!("max oracle deviation {worst:.1e} over 2000 instances"))
}

fn mask_combinatorics() -> Result<String, String> {
    let mut counts = Vec::new();
    for n in 1..=6 {
        let combos = enumerate_missing_combinations(n).map_err(|e| e.to_string())?;
        let distinct: std::collections::BTreeSet<_> = combos.iter().map(|m| m.0.clone()).collect();
        ensure!(distinct.len() == combos.len(), "duplicates for n={n}");
        ensure!(combos.len() == (1 << n) - 1, "n={n}: {} masks", combos.len());
        ensure!(
            combos.iter().all(|m| m.available_count() > 0),
            "all-zero mask for n={n}"
        );
        counts.push(combos.len().to_string());
    }
    Ok(format!("counts {}", counts.join(",")))
}

const H: f64 = 1e-6;

fn max_rel_err(store: &mut ParamStore, f: &dyn Fn(&ParamStore, &mut Tape) -> Var) -> f64 {
    let mut tape = Tape::new();
    let loss = f(store, &mut tape);
    store.zero_grad();
    tape.backward(loss, store).unwrap();
    let ids: Vec<ParamId> = store.ids().collect();
    let grads: Vec<Tensor> = ids.iter().map(|&id| store.get(id).grad.clone().unwrap()).collect();
    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let l = f(s, &mut t);
        t.value(l).data()[0]
    };
    let mut worst = 0.0_f64;
    for (k, &id) in ids.iter().enumerate() {
        for j in 0..store.value(id).len() {
            let orig = store.value(id).data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + H;
            let up = eval(store);
            store.get_mut(id).value.data_mut()[j] = orig - H;
            let down = eval(store);
            store.get_mut(id).value.data_mut()[j] = orig;
            let (a, n) = (grads[k].data()[j], (up - down) / (2.0 * H));
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
        }
    }
    worst
}

fn reduce(tape: &mut Tape, y: Var) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let w = random(tape.value(y).shape(), &mut rng);
    let z = tape.mul_const(y, w).unwrap();
    tape.sum_all(z).unwrap()
}

fn layer_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();

    let mut s = ParamStore::new();
    let x = s.insert("x", random(&[4, 3], &mut rng)).unwrap();
    let w = s.insert("w", random(&[3, 5], &mut rng)).unwrap();
    let b = s.insert("b", random(&[5], &mut rng)).unwrap();
    out.push((
        "dense",
        max_rel_err(&mut s, &|s, t| {
            let (xv, wv, bv) = (t.param(s, x), t.param(s, w), t.param(s, b));
            let y = dense_forward(t, xv, wv, bv).unwrap();
            reduce(t, y)
        }),
    ));

    let mut s = ParamStore::new();
    let x = s.insert("x", random(&[3, 6, 2], &mut rng)).unwrap();
    let k = s.insert("k", random(&[3, 2, 4], &mut rng)).unwrap();
    let b = s.insert("b", random(&[4], &mut rng)).unwrap();
    out.push((
        "conv1d+mean",
        max_rel_err(&mut s, &|s, t| {
            let (xv, kv, bv) = (t.param(s, x), t.param(s, k), t.param(s, b));
            let y = conv1d_forward(t, xv, kv, bv).unwrap();
            let y = t.relu(y);
            let y = t.mean_time(y).unwrap();
            reduce(t, y)
        }),
    ));

    let mut s = ParamStore::new();
    let x = s.insert("x", random(&[4, 5], &mut rng)).unwrap();
    let g = s.insert("g", random(&[5], &mut rng)).unwrap();
    let sh = s.insert("s", random(&[5], &mut rng)).unwrap();
    out.push((
        "layernorm",
        max_rel_err(&mut s, &|s, t| {
            let (xv, gv, sv) = (t.param(s, x), t.param(s, g), t.param(s, sh));
            let y = layernorm_forward(t, xv, gv, sv, 1e-5).unwrap();
            reduce(t, y)
        }),
    ));

    let mut s = ParamStore::new();
    let x = s.insert("x", random(&[4, 6], &mut rng)).unwrap();
    out.push((
        "dropout",
        max_rel_err(&mut s, &|s, t| {
            let xv = t.param(s, x);
            let y = t.dropout(xv, 0.3, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            reduce(t, y)
        }),
    ));
    out
}

fn architecture_error(model: &ModelBundle, targets: &ModelTargets) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let blocks = vec![
        random(&[4, 5, 3], &mut rng),
        random(&[4, 5, 2], &mut rng),
        random(&[4, 2], &mut rng),
    ];
    let mut worst = 0.0_f64;
    for m in 0..model.members.len() {
        let inputs = model.member_inputs(m, &blocks).unwrap();
        let mut store = model.members[m].params.clone();
        // keep ReLU inputs away from the kink at zero bias
        for p in store.iter_mut() {
            p.value = random(p.value.shape(), &mut rng);
        }
        worst = worst.max(max_rel_err(&mut store, &|s, t| {
            let mut probe = model.clone();
            probe.members[m].params = s.clone();
            probe
                .member_loss(m, t, &inputs, targets, true, &mut ChaCha8Rng::seed_from_u64(5))
                .unwrap()
        }));
    }
    worst
}

fn gradient_soundness() -> Result<String, String> {
    let mut worst = 0.0_f64;
    for (name, err) in layer_errors() {
        ensure!(err < 1e-4, "{name}: relative error {err:e}");
        worst = worst.max(err);
    }
    let enc = EncoderConfig {
        embedding_dim: 6,
        layers: 2,
        dropout: 0.2,
        kernel_width: 3,
    };
    let mut cases = vec![
        ("input".to_string(), FusionStrategy::Input, None),
        ("feature".to_string(), FusionStrategy::Feature, None),
        ("ensemble".to_string(), FusionStrategy::Ensemble, None),
    ];
    for (e, n, c) in [
        (false, false, Combine::Addition),
        (true, false, Combine::Addition),
        (true, true, Combine::Addition),
        (true, true, Combine::Concatenation),
    ] {
        let opts = EsensiOptions {
            use_encoding: e,
            use_normalization: n,
            combine: c,
        };
        cases.push((format!("esensi {opts:?}"), FusionStrategy::Esensi, Some(opts)));
    }
    for (task, targets) in [
        (
            Task::Classification { classes: 3 },
            ModelTargets::Classes(vec![0, 2, 1, 2]),
        ),
        (Task::Regression, ModelTargets::Values(vec![0.3, -1.0, 0.8, 0.1])),
    ] {
        let manifest = DatasetManifest {
            name: "fd".into(),
            task,
            sensors: vec![
                SensorSpec::temporal("a", 3, 5),
                SensorSpec::temporal("b", 2, 5),
                SensorSpec::static_("c", 2),
            ],
            n_samples: 0,
        };
        for (name, strategy, opts) in &cases {
            let model = build_model(&manifest, *strategy, &enc, *opts, 21).map_err(|e| e.to_string())?;
            let err = architecture_error(&model, &targets);
            ensure!(err < 1e-4, "{name} {task:?}: relative error {err:e}");
            worst = worst.max(err);
        }
    }
    Ok(format!("4 layers, 14 architectures, max relative error {worst:.1e}"))
}

fn optimizer_sanity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let target: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let curvature: Vec<f64> = (0..10).map(|_| rng.gen_range(0.5..5.0)).collect();
    let roots: Vec<f64> = curvature.iter().map(|c| c.sqrt()).collect();
    let scaled_target: Vec<f64> = target.iter().zip(&roots).map(|(t, r)| t * r).collect();
    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::zeros(&[1, 10])).unwrap();
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        },
        &store,
    );
    let distance = |s: &ParamStore| {
        s.value(w)
            .data()
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    for step in 1..=2000 {
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        // sum_i c_i (w_i - w*_i)^2 as a mean over sqrt(c)-scaled coordinates
        let scaled = tape
            .mul_const(wv, Tensor::new(vec![1, 10], roots.clone()).unwrap())
            .unwrap();
        let loss = tape.mse(scaled, &scaled_target).unwrap();
        store.zero_grad();
        tape.backward(loss, &mut store).map_err(|e| e.to_string())?;
        adam.update(&mut store).map_err(|e| e.to_string())?;
        if distance(&store) < 1e-3 {
            return Ok(format!("|w - w*| < 1e-3 after {step} steps"));
        }
    }
    Err(format!("|w - w*| = {:e} after 2000 steps", distance(&store)))
}

fn tiny_config(methods: &[&str]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        DatasetSource::Preset {
            preset: "synthetic-3".into(),
            n_samples: 60,
            seed: 5,
        },
        methods.iter().map(|m| m.to_string()).collect(),
    );
    cfg.k = 3;
    cfg.percents = vec![0.0, 0.5];
    cfg.encoder = EncoderConfig {
        embedding_dim: 8,
        layers: 1,
        dropout: 0.0,
        kernel_width: 3,
    };
    cfg.train = TrainConfig {
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    cfg
}

fn protocol_invariants() -> Result<String, String> {
    for n in [25, 100, 1000] {
        let split = kfold_split(n, 10, 7).map_err(|e| e.to_string())?;
        let mut seen = vec![false; n];
        for f in 0..10 {
            for &i in split.validation(f) {
                ensure!(!seen[i], "N={n}: index {i} in two folds");
                seen[i] = true;
            }
            ensure!(
                split.training(f).len() + split.validation(f).len() == n,
                "N={n}: fold {f} sizes"
            );
        }
        ensure!(seen.iter().all(|&s| s), "N={n}: not a cover");
        let sizes: Vec<usize> = split.folds.iter().map(Vec::len).collect();
        ensure!(
            sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1,
            "N={n}: unbalanced {sizes:?}"
        );
    }

    let manifest = DatasetManifest {
        name: "p".into(),
        task: Task::Regression,
        sensors: vec![
            SensorSpec::temporal("a", 2, 4),
            SensorSpec::static_("s", 1),
            SensorSpec::temporal("b", 2, 4),
        ],
        n_samples: 0,
    };
    for n in [10, 37, 100] {
        for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let scenario = MissingnessScenario {
                sensors: vec![0, 2],
                percent: p,
                seed: 3,
            };
            let masks = simulate_missingness(&manifest, n, &scenario, &mut ChaCha8Rng::seed_from_u64(3))
                .map_err(|e| e.to_string())?;
            let hit = masks.iter().filter(|m| !m.is_full()).count();
            ensure!(hit == (p * n as f64).round() as usize, "n={n} p={p}: {hit} affected");
            ensure!(masks.iter().all(|m| m.is_available(1)), "static sensor masked");
        }
    }
    let static_scenario = MissingnessScenario {
        sensors: vec![1],
        percent: 0.5,
        seed: 0,
    };
    ensure!(static_scenario.validate(&manifest).is_err(), "static scenario accepted");

    let all = [
        "input",
        "itempd",
        "feature",
        "ensemble",
        "isensd",
        "isensd-nr",
        "esensi",
    ];
    let cfg = tiny_config(&all);
    let data = cfg.load_dataset().map_err(|e| e.to_string())?;
    let report = run_cv_experiment(&cfg, &data).map_err(|e| e.to_string())?;
    ensure!(report.complete, "experiment incomplete: {:?}", report.error);
    let at_zero: Vec<_> = report.results.iter().filter(|r| r.percent == 0.0).collect();
    ensure!(at_zero.len() == all.len() * 3 * 3, "{} rows at p=0", at_zero.len());
    ensure!(at_zero.iter().all(|r| r.prs == 1.0), "PRS at p=0 not exactly 1");
    Ok("folds, affected counts, static sensors and PRS(p=0) for 7 methods".into())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn first_best(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// Exhaustive scan written against the gallery contents only.
fn scan(query: &[Vec<f64>], mask: &MaskVector, gallery: &Gallery, missing: usize) -> usize {
    let avail: Vec<usize> = (0..query.len()).filter(|&s| mask.is_available(s)).collect();
    let rows = gallery.embeddings[0].rows();
    if gallery.pairs.is_empty() {
        let q: Vec<f64> = avail.iter().flat_map(|&s| query[s].clone()).collect();
        first_best((0..rows).map(|i| {
            let g: Vec<f64> = avail
                .iter()
                .flat_map(|&s| gallery.embeddings[s].row(i).to_vec())
                .collect();
            cosine(&q, &g)
        }))
    } else {
        first_best((0..rows).map(|i| {
            avail
                .iter()
                .map(|&a| {
                    let p = &gallery
                        .pairs
                        .iter()
                        .find(|p| p.from == a && p.to == missing)
                        .unwrap()
                        .projection;
                    cosine(
                        &p.project_a(&query[a]),
                        &p.project_b(gallery.embeddings[missing].row(i)),
                    )
                })
                .sum()
        }))
    }
}

fn exemplar_correctness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = 150;
    let sensors = 3;
    let embeddings: Vec<Tensor> = (0..sensors).map(|_| random(&[g, 4], &mut rng)).collect();
    let ids: Vec<String> = (0..g).map(|i| i.to_string()).collect();
    for space in [SharedSpace::Raw, SharedSpace::Cca { components: Some(2) }] {
        let opts = ExemplarOptions {
            gallery_size: None,
            shared_space: space,
        };
        let gallery = Gallery::build(embeddings.clone(), ids.clone(), opts).map_err(|e| e.to_string())?;
        for q in 0..200 {
            let query: Vec<Vec<f64>> = (0..sensors).map(|_| random(&[4], &mut rng).data().to_vec()).collect();
            let keep = rng.gen_range(1..(1 << sensors) - 1);
            let mask = MaskVector((0..sensors).map(|s| keep & (1 << s) != 0).collect());
            let found = exemplar_lookup(&query, &mask, &gallery).map_err(|e| e.to_string())?;
            for s in (0..sensors).filter(|&s| !mask.is_available(s)) {
                let expect = scan(&query, &mask, &gallery, s);
                ensure!(found.neighbors[s] == Some(expect), "{space:?} query {q} sensor {s}");
                ensure!(
                    found.embeddings[s] == gallery.embeddings[s].row(expect),
                    "{space:?} query {q}: embedding"
                );
            }
        }
    }

    let view = random(&[500, 4], &mut rng);
    let same = cca_fit(&view, &view, 4).map_err(|e| e.to_string())?;
    ensure!(
        same.correlations.iter().all(|c| (c - 1.0).abs() <= 1e-6),
        "identical views: {:?}",
        same.correlations
    );
    let mut tops = Vec::new();
    for seed in 0..5 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let a = random(&[500, 4], &mut r);
        let b = random(&[500, 4], &mut r);
        tops.push(cca_fit(&a, &b, 4).map_err(|e| e.to_string())?.correlations[0]);
    }
    tops.sort_by(f64::total_cmp);
    ensure!(tops[2] < 0.25, "independent views median correlation {}", tops[2]);
    Ok(format!(
        "400 lookups match the scan; identical views rho={:.9}, independent median {:.3}",
        same.correlations[0], tops[2]
    ))
}

fn trend_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        DatasetSource::Preset {
            preset: "synthetic-3".into(),
            n_samples: 600,
            seed,
        },
        vec!["input".into(), "isensd".into(), "ensemble".into()],
    );
    cfg.seed = seed;
    cfg.k = 5;
    cfg.percents = vec![0.25, 1.0];
    cfg.scenarios = Some(vec![vec!["primary".into()]]);
    cfg.encoder = EncoderConfig {
        embedding_dim: 16,
        ..EncoderConfig::default()
    };
    cfg.train = TrainConfig {
        epochs: 60,
        batch_size: 64,
        ..TrainConfig::default()
    };
    cfg
}

fn robustness_trend() -> Result<String, String> {
    let (mut a, mut b, mut c) = (0, 0, 0);
    let mut lines = Vec::new();
    for seed in 0..5 {
        let cfg = trend_config(seed);
        let data = cfg.load_dataset().map_err(|e| e.to_string())?;
        let report = run_cv_experiment(&cfg, &data).map_err(|e| e.to_string())?;
        ensure!(report.complete, "seed {seed}: {:?}", report.error);
        let prs = |method: &str, percent: f64| {
            report
                .aggregates
                .iter()
                .find(|x| x.method == method && x.percent == percent)
                .map(|x| x.prs_mean)
                .unwrap()
        };
        let (input, isensd, ensemble) = (prs("input", 100.0), prs("isensd", 100.0), prs("ensemble", 100.0));
        a += usize::from(isensd >= input);
        b += usize::from(ensemble >= input);
        c += usize::from(
            ["input", "isensd", "ensemble"]
                .iter()
                .all(|m| prs(m, 100.0) <= prs(m, 25.0)),
        );
        lines.push(format!(
            "seed {seed}: input {input:.3} isensd {isensd:.3} ensemble {ensemble:.3}"
        ));
    }
    let summary = format!("(a) {a}/5 (b) {b}/5 (c) {c}/5; {}", lines.join("; "));
    ensure!(a >= 4 && b >= 4 && c >= 4, "{summary}");
    Ok(summary)
}

fn esensi_structure() -> Result<String, String> {
    let manifest = DatasetManifest {
        name: "s".into(),
        task: Task::Classification { classes: 3 },
        sensors: vec![SensorSpec::temporal("a", 2, 6), SensorSpec::temporal("b", 3, 6)],
        n_samples: 0,
    };
    let enc = EncoderConfig {
        embedding_dim: 8,
        layers: 2,
        dropout: 0.0,
        kernel_width: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let blocks = vec![random(&[4, 6, 2], &mut rng), random(&[4, 6, 3], &mut rng)];
    let err = |e: msr::Error| e.to_string();

    let mut model = build_model(&manifest, FusionStrategy::Esensi, &enc, None, 1).map_err(err)?;
    let before = model.sensor_outputs(&blocks).map_err(err)?;
    let inputs = model.member_inputs(0, &blocks).map_err(err)?;
    let mut tape = Tape::new();
    let outs = model
        .forward_member(0, &mut tape, &inputs, false, &mut rng)
        .map_err(err)?;
    let loss = tape.softmax_cross_entropy(outs[0], &[0, 1, 2, 0]).map_err(err)?;
    let params = &mut model.members[0].params;
    let mut adam = AdamState::new(AdamConfig::default(), params);
    params.zero_grad();
    tape.backward(loss, params).map_err(err)?;
    adam.update(params).map_err(err)?;
    let after = model.sensor_outputs(&blocks).map_err(err)?;
    ensure!(
        before[1] != after[1],
        "sensor-a training left sensor-b predictions unchanged"
    );

    let model = build_model(&manifest, FusionStrategy::Esensi, &enc, None, 3).map_err(err)?;
    let mut swapped = model.clone();
    let member = &mut swapped.members[0];
    let (ra, rb) = (member.encodings[0], member.encodings[1]);
    let (va, vb) = (member.params.value(ra).clone(), member.params.value(rb).clone());
    member.params.get_mut(ra).value = vb;
    member.params.get_mut(rb).value = va;
    ensure!(
        model.sensor_outputs(&blocks).map_err(err)? != swapped.sensor_outputs(&blocks).map_err(err)?,
        "swapping sensor encodings changed nothing"
    );

    for d in [4, 8, 32] {
        let opts = EsensiOptions {
            use_encoding: true,
            use_normalization: true,
            combine: Combine::Concatenation,
        };
        let enc = EncoderConfig {
            embedding_dim: d,
            ..enc
        };
        let model = build_model(&manifest, FusionStrategy::Esensi, &enc, Some(opts), 0).map_err(err)?;
        ensure!(model.members[0].head.input_dim() == 2 * d, "head width for d={d}");
    }
    Ok("coupling, encoding swap and 2d head width".into())
}

fn end_to_end_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("exp.json");
    fs::write(
        &config,
        r#"{
  "dataset": {"source": "preset", "preset": "cropharvest-like", "n_samples": 80, "seed": 4},
  "methods": ["input", "isensd", "ensemble", "esensi"],
  "k": 4,
  "seed": 12,
  "encoder": {"embedding_dim": 8},
  "train": {"epochs": 4, "batch_size": 32}
}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_msr"))
            .args(["-q", "run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            status.status.success(),
            "run {run} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        outputs.push(fs::read(out.join("results.csv")).map_err(|e| e.to_string())?);
    }
    ensure!(outputs[0] == outputs[1], "results.csv differs between runs");
    Ok(format!("results.csv identical ({} bytes)", outputs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check, u64); 9] = [
        ("metric exactness", metric_exactness, 10),
        ("mask combinatorics", mask_combinatorics, 1),
        ("gradient soundness", gradient_soundness, 60),
        ("optimizer sanity", optimizer_sanity, 5),
        ("protocol invariants", protocol_invariants, 120),
        ("exemplar correctness", exemplar_correctness, 60),
        ("robustness trend", robustness_trend, 600),
        ("esensi structure", esensi_structure, 30),
        ("end-to-end determinism", end_to_end_determinism, 300),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(note) if elapsed > Duration::from_secs(*budget) => Err(format!("over budget ({budget} s); {note}")),
            other => other,
        };
        match outcome {
            Ok(note) => println!(
                "criterion {} ({name}): PASS [{:.2}s] {note}",
                i + 1,
                elapsed.as_secs_f64()
            ),
            Err(why) => {
                failed += 1;
                println!(
                    "criterion {} ({name}): FAIL [{:.2}s] {why}",
                    i + 1,
                    elapsed.as_secs_f64()
                );
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
