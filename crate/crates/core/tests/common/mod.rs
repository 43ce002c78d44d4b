//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use fusionet_core::autodiff::{Graph, Var};
use fusionet_core::data::{clean_caption, tokens_to_ids, Split, Vocabulary, IMAGE_SIZE, SEQ_LEN};
use fusionet_core::synthetic::{generate_synthetic, DEFAULT_TRIGGERS};
use fusionet_core::training::{Example, ImageData};
use fusionet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

/// Denominator floor for relative errors. Central differences with
/// `FD_STEP` on an O(1) loss carry roughly 1e-10 of rounding noise, so
/// entries below this magnitude are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst relative error between backprop and central differences for
/// `sum(build(inputs) ⊙ R)` with a fixed random `R`, over every input entry.
pub fn check_op(inputs: &[Tensor<f64>], build: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var) -> f64 {
    let eval = |ins: &[Tensor<f64>], want_grads: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &vars);
        let shape = g.shape(out).to_vec();
        let mut r = rng(99);
        let weights = random_tensor(&mut r, &shape, -1.0, 1.0);
        let w = g.constant(weights);
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum(prod);
        let value = g.value(loss).data()[0];
        let grads = want_grads.then(|| {
            g.backward(loss).unwrap();
            vars.iter()
                .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
                .collect::<Vec<_>>()
        });
        (value, grads)
    };
    let (_, grads) = eval(inputs, true);
    let grads = grads.unwrap();
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let numeric = central_difference(
                |x| {
                    let mut ins = inputs.to_vec();
                    ins[i].data_mut()[k] = x;
                    eval(&ins, false).0
                },
                input.data()[k],
            );
            worst = worst.max(rel_err(grads[i].data()[k], numeric));
        }
    }
    worst
}

pub struct SyntheticSplits {
    pub train: Vec<Example<f32>>,
    pub validation: Vec<Example<f32>>,
    pub test: Vec<Example<f32>>,
    pub vocab_size: usize,
}

/// The synthetic XOR dataset rendered at 150 px, with a vocabulary built from
/// the training captions.
pub fn synthetic_splits(n: usize, seed: u64) -> SyntheticSplits {
    let items = generate_synthetic(n, seed, DEFAULT_TRIGGERS).unwrap();
    let tokens: Vec<Vec<String>> = items.iter().map(|i| clean_caption(&i.caption)).collect();
    let vocab = Vocabulary::build(
        items
            .iter()
            .zip(&tokens)
            .filter(|(i, _)| i.split == Split::Train)
            .map(|(_, t)| t.as_slice()),
        1,
    );
    let mut out = SyntheticSplits {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        vocab_size: vocab.len(),
    };
    for (item, toks) in items.iter().zip(&tokens) {
        let pixels = item
            .render_rgb8(IMAGE_SIZE)
            .into_iter()
            .map(|b| f32::from(b) / 255.0)
            .collect();
        let example = Example {
            image: ImageData::Pixels(Tensor::new(vec![IMAGE_SIZE, IMAGE_SIZE, 3], pixels).unwrap()),
            tokens: tokens_to_ids(toks, &vocab, SEQ_LEN),
            label: item.label,
        };
        match item.split {
            Split::Train => out.train.push(example),
            Split::Validation => out.validation.push(example),
            Split::Test => out.test.push(example),
        }
    }
    out
}
