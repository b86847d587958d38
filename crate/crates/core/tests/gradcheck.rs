//! Central finite differences in f64 against the tape's reverse mode.

use headlab::importance::gate_gradients;
use headlab::tasks::train::batch_loss;
use headlab::tasks::{mask_tokens, synth_corpus, Batch, CorpusSpec, Dataset, GrammarSpec, SynthTask};
use headlab::tensor::{Tape, Tensor, Var};
use headlab::transformer::{ForwardOptions, HeadId, ModelConfig, Transformer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Reduces an op output to a scalar with fixed random weights, then compares
/// the gradient of every input element with a central difference.
fn check(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let eval = |xs: &[Tensor<f64>], rng: &mut ChaCha8Rng, grads: bool| -> (f64, Vec<Option<Vec<f64>>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let out = build(&mut tape, &vars);
        let shape = tape.value(out).shape().to_vec();
        let w = tape.constant(random(&shape, rng));
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        let value = tape.value(loss).data()[0];
        if !grads {
            return (value, Vec::new());
        }
        let g = tape.backward(loss).unwrap();
        (value, vars.iter().map(|&v| g.get(v).map(|t| t.into_data())).collect())
    };
    let seed_rng = ChaCha8Rng::seed_from_u64(99);
    let (_, analytic) = eval(inputs, &mut seed_rng.clone(), true);
    for (i, x) in inputs.iter().enumerate() {
        let Some(a) = &analytic[i] else { continue };
        for j in 0..x.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let fd = (eval(&plus, &mut seed_rng.clone(), false).0 - eval(&minus, &mut seed_rng.clone(), false).0)
                / (2.0 * H);
            let err = (a[j] - fd).abs();
            assert!(
                err <= 1e-6 * fd.abs().max(1.0),
                "input {i} element {j}: analytic {} vs fd {fd}",
                a[j]
            );
        }
    }
}

#[test]
fn matmul_family() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let (a, b, c) = (random(&[3, 4], &mut r), random(&[4, 5], &mut r), random(&[5, 4], &mut r));
    check(&[a.clone(), b], |t, v| t.matmul(v[0], v[1]).unwrap());
    check(&[a, c], |t, v| t.matmul_t(v[0], v[1]).unwrap());
}

#[test]
fn elementwise_ops() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let (a, b, bias) = (random(&[3, 4], &mut r), random(&[3, 4], &mut r), random(&[4], &mut r));
    check(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap());
    check(&[a.clone(), b], |t, v| t.mul(v[0], v[1]).unwrap());
    check(&[a.clone(), bias], |t, v| t.add_bias(v[0], v[1]).unwrap());
    check(&[a.clone()], |t, v| t.scale(v[0], -0.37).unwrap());
    check(&[a], |t, v| t.gelu(v[0]).unwrap());
}

#[test]
fn gate_mul_differentiates_both_inputs() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let (x, g) = (random(&[2, 3], &mut r), random(&[4], &mut r));
    check(&[x, g], |t, v| t.gate_mul(v[0], v[1], 2).unwrap());
}

#[test]
fn softmax_both_axes() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[3, 5], &mut r);
    check(&[x.clone()], |t, v| t.softmax(v[0], 1).unwrap());
    check(&[x], |t, v| t.softmax(v[0], 0).unwrap());
}

#[test]
fn layer_norm_all_inputs() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let (x, g, b) = (random(&[3, 6], &mut r), random(&[6], &mut r), random(&[6], &mut r));
    check(&[x, g, b], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap());
}

#[test]
fn row_ops() {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let (table, x, y) = (random(&[5, 3], &mut r), random(&[4, 3], &mut r), random(&[2, 3], &mut r));
    check(&[table.clone()], |t, v| t.gather_rows(v[0], &[4, 0, 4, 2]).unwrap());
    check(&[table], |t, v| t.embedding(v[0], &[1, 1, 3]).unwrap());
    check(&[x.clone()], |t, v| t.slice_rows(v[0], 1, 2).unwrap());
    check(&[x, y], |t, v| t.concat_rows(&[v[0], v[1], v[0]]).unwrap());
}

#[test]
fn cross_entropy_with_skipped_rows() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let logits = random(&[4, 5], &mut r);
    check(&[logits], |t, v| t.cross_entropy(v[0], &[Some(1), None, Some(4), Some(0)], 3.0).unwrap());
}

fn data(task: SynthTask) -> Dataset {
    synth_corpus(
        21,
        &CorpusSpec {
            grammar: GrammarSpec::default(),
            task,
            n_train: 12,
            n_dev: 2,
        },
    )
    .unwrap()
}

fn model_and_batch(task: SynthTask, layers: usize, shared: bool) -> (Transformer<f64>, Batch) {
    let d = data(task);
    let mut cfg = ModelConfig::tiny(layers, 2, 4, d.vocab.len()).shared(shared);
    cfg.max_seq_len = 32;
    let mut m: Transformer = Transformer::new(cfg, 3).unwrap();
    let batch = match d.spec.n_classes() {
        Some(c) => {
            m.attach_classifier(c, 4);
            Batch::classification(&d.train[..9]).unwrap()
        }
        None => {
            m.attach_mlm_head(4);
            mask_tokens(&d.train[..9], d.vocab.len(), 0.3, 5).unwrap()
        }
    };
    (m.cast(), batch)
}

fn loss(m: &Transformer<f64>, b: &Batch) -> f64 {
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape, false);
    let (l, _) = batch_loss(m, &mut tape, &vars, b, ForwardOptions::default(), b.n_targets() as f64).unwrap();
    tape.value(l).data()[0]
}

#[test]
fn gate_gradients_shared_and_unshared_depths() {
    let eps = 2f64.powi(-10);
    for layers in 1..=4 {
        for shared in [false, true] {
            let (m, b) = model_and_batch(SynthTask::Grammar, layers, shared);
            let g = gate_gradients(&m, &b).unwrap();
            for id in m.gates.all_heads() {
                let mut p = m.clone();
                p.gates.set_value(id, (1.0 + eps) as f32);
                let mut q = m.clone();
                q.gates.set_value(id, (1.0 - eps) as f32);
                let fd = (loss(&p, &b) - loss(&q, &b)) / (2.0 * eps);
                let an = g.data()[id.layer * 2 + id.head];
                assert!(
                    (an - fd).abs() <= (1e-4 * fd.abs()).max(1e-6),
                    "{layers} layers shared={shared} {id}: {an} vs {fd}"
                );
            }
        }
    }
}

#[test]
fn masked_gate_still_has_a_gradient_and_zero_effect() {
    let (mut m, b) = model_and_batch(SynthTask::Polarity, 2, false);
    let id = HeadId::new(1, 0);
    m.gates.mask(id);
    let g = gate_gradients(&m, &b).unwrap();
    assert!(g.data()[2].is_finite());
    let mut p = m.clone();
    p.gates.set_value(id, 5.0);
    assert_eq!(loss(&p, &b), loss(&m, &b));
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let (m, b) = model_and_batch(SynthTask::MaskedLm, 2, true);
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape, true);
    let (l, _) = batch_loss(&m, &mut tape, &vars, &b, ForwardOptions::default(), b.n_targets() as f64).unwrap();
    let grads = tape.backward(l).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n_params = m.named_params().len();
    assert_eq!(n_params, vars.all.len());
    for (i, &var) in vars.all.iter().enumerate() {
        let g = grads.get(var).expect("trainable").into_data();
        for _ in 0..3 {
            let j = rng.random_range(0..g.len());
            let shift = |delta: f64| {
                let mut p = m.clone();
                p.named_params_mut()[i].2.data_mut()[j] += delta;
                loss(&p, &b)
            };
            let fd = (shift(H) - shift(-H)) / (2.0 * H);
            let name = &m.named_params()[i].0;
            assert!(
                (g[j] - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                "{name}[{j}]: analytic {} vs fd {fd}",
                g[j]
            );
        }
    }
}

#[test]
fn frozen_topic_reference() {
    let (m, b) = model_and_batch(SynthTask::Topic, 2, false);
    assert!((loss(&m, &b) - 1.1041748049497815).abs() <= 1e-9);
    let want = [
        -1.3638620375786559e-3,
        -1.3209519560177796e-3,
        2.2175553199303977e-3,
        5.424197865409042e-3,
    ];
    let g = gate_gradients(&m, &b).unwrap();
    for (an, fd) in g.data().iter().zip(want) {
        assert!((an - fd).abs() <= 1e-4 * fd.abs(), "{an} vs {fd}");
    }
}
