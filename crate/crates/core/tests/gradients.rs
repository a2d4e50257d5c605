use msr::autograd::{ParamId, ParamStore, Tape, Var};
use msr::data::{DatasetManifest, SensorSpec, Task};
use msr::layers::{conv1d_forward, dense_forward, layernorm_forward};
use msr::models::{build_model, Combine, EncoderConfig, EsensiOptions, FusionStrategy, ModelBundle, ModelTargets};
use msr::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Largest relative error between backprop and central differences over
/// every parameter entry of `store`.
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
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(grads[k].data()[j], numeric));
        }
    }
    worst
}

/// Weighted sum so that every output entry gets a distinct upstream gradient.
fn reduce(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(tape.value(y).shape(), &mut rng);
    let z = tape.mul_const(y, w).unwrap();
    tape.sum_all(z).unwrap()
}

#[test]
fn dense_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = ParamStore::new();
    let x = s.insert("x", random(&[4, 3], &mut rng)).unwrap();
    let w = s.insert("w", random(&[3, 5], &mut rng)).unwrap();
    let b = s.insert("b", random(&[5], &mut rng)).unwrap();
    let err = max_rel_err(&mut s, &|s, t| {
        let (xv, wv, bv) = (t.param(s, x), t.param(s, w), t.param(s, b));
        let y = dense_forward(t, xv, wv, bv).unwrap();
        reduce(t, y, 9)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn conv1d_and_mean_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = ParamStore::new();
    let x = s.insert("x", random(&[3, 6, 2], &mut rng)).unwrap();
    let k = s.insert("k", random(&[3, 2, 4], &mut rng)).unwrap();
    let b = s.insert("b", random(&[4], &mut rng)).unwrap();
    let err = max_rel_err(&mut s, &|s, t| {
        let (xv, kv, bv) = (t.param(s, x), t.param(s, k), t.param(s, b));
        let y = conv1d_forward(t, xv, kv, bv).unwrap();
        let y = t.relu(y);
        let y = t.mean_time(y).unwrap();
        reduce(t, y, 8)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn layernorm_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = ParamStore::new();
    let x = s.insert("x", random(&[4, 5], &mut rng)).unwrap();
    let g = s.insert("g", random(&[5], &mut rng)).unwrap();
    let sh = s.insert("s", random(&[5], &mut rng)).unwrap();
    let err = max_rel_err(&mut s, &|s, t| {
        let (xv, gv, sv) = (t.param(s, x), t.param(s, g), t.param(s, sh));
        let y = layernorm_forward(t, xv, gv, sv, 1e-5).unwrap();
        reduce(t, y, 7)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn dropout_with_fixed_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = ParamStore::new();
    let x = s.insert("x", random(&[4, 6], &mut rng)).unwrap();
    let err = max_rel_err(&mut s, &|s, t| {
        let xv = t.param(s, x);
        let mut mask_rng = ChaCha8Rng::seed_from_u64(99);
        let y = t.dropout(xv, 0.3, true, &mut mask_rng).unwrap();
        reduce(t, y, 6)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn combinators_and_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParamStore::new();
    let a = s.insert("a", random(&[3, 2], &mut rng)).unwrap();
    let b = s.insert("b", random(&[3, 2], &mut rng)).unwrap();
    let r = s.insert("r", random(&[4], &mut rng)).unwrap();
    let err = max_rel_err(&mut s, &|s, t| {
        let (av, bv, rv) = (t.param(s, a), t.param(s, b), t.param(s, r));
        let sum = t.add(av, bv).unwrap();
        let cat = t.concat(&[sum, av]).unwrap();
        let rows = t.repeat_row(rv, 3).unwrap();
        let z = t.add(cat, rows).unwrap();
        let z = t.scale(z, 0.7);
        let ce = t.softmax_cross_entropy(z, &[0, 3, 1]).unwrap();
        let m = t.mse(sum, &[0.5, -0.2, 0.1, 0.0, 0.9, -0.4]).unwrap();
        t.sum_scalars(&[ce, m]).unwrap()
    });
    assert!(err < TOL, "{err}");
}

fn manifest(task: Task) -> DatasetManifest {
    DatasetManifest {
        name: "grad".into(),
        task,
        sensors: vec![
            SensorSpec::temporal("a", 3, 5),
            SensorSpec::temporal("b", 2, 5),
            SensorSpec::static_("c", 2),
        ],
        n_samples: 0,
    }
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
        let frozen = model.clone();
        // zero-initialized biases put ReLU inputs exactly on the kink
        let mut store = model.members[m].params.clone();
        for p in store.iter_mut() {
            p.value = random(p.value.shape(), &mut rng);
        }
        let err = max_rel_err(&mut store, &|s, t| {
            let mut probe = frozen.clone();
            probe.members[m].params = s.clone();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(5);
            probe.member_loss(m, t, &inputs, targets, true, &mut drop_rng).unwrap()
        });
        worst = worst.max(err);
    }
    worst
}

#[test]
fn every_architecture() {
    let enc = EncoderConfig {
        embedding_dim: 6,
        layers: 2,
        dropout: 0.2,
        kernel_width: 3,
    };
    let combos = [
        (false, false, Combine::Addition),
        (true, false, Combine::Addition),
        (true, true, Combine::Addition),
        (true, true, Combine::Concatenation),
    ];
    let mut cases: Vec<(String, FusionStrategy, Option<EsensiOptions>)> = vec![
        ("input".into(), FusionStrategy::Input, None),
        ("feature".into(), FusionStrategy::Feature, None),
        ("ensemble".into(), FusionStrategy::Ensemble, None),
    ];
    for (e, n, c) in combos {
        cases.push((
            format!("esensi enc={e} norm={n} {c:?}"),
            FusionStrategy::Esensi,
            Some(EsensiOptions {
                use_encoding: e,
                use_normalization: n,
                combine: c,
            }),
        ));
    }
    for (task, targets) in [
        (
            Task::Classification { classes: 3 },
            ModelTargets::Classes(vec![0, 2, 1, 2]),
        ),
        (Task::Regression, ModelTargets::Values(vec![0.3, -1.0, 0.8, 0.1])),
    ] {
        for (name, strategy, opts) in &cases {
            let model = build_model(&manifest(task), *strategy, &enc, *opts, 21).unwrap();
            let err = architecture_error(&model, &targets);
            assert!(err < TOL, "{name} {task:?}: {err}");
        }
    }
}
