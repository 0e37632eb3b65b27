//! Linear layers and the gradient-descent trainers behind every model in
//! the crate: encoder + classifier stacks, shared encoders with per-task
//! heads, and metric encoders trained on class-mean anchors.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::seed::Rng;

/// Dense affine map `x -> W x + b` with a row-major `out x in` weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut layer = Linear::zeros(in_dim, out_dim);
        for w in &mut layer.weight {
            *w = rng.random_range(-a..a);
        }
        layer
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        assert_eq!(weight.len(), in_dim * out_dim);
        assert_eq!(bias.len(), out_dim);
        Linear {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + dot(row, x))
            .collect()
    }

    /// `W^T g`
    fn backward_input(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.in_dim];
        for (row, &gi) in self.weight.chunks_exact(self.in_dim).zip(g) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += gi * w;
            }
        }
        out
    }

    fn step(&mut self, grad: &Linear, lr: f64, scale: f64, weight_decay: f64) {
        for (w, g) in self.weight.iter_mut().zip(&grad.weight) {
            *w -= lr * (g * scale + weight_decay * *w);
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g * scale;
        }
    }

    /// Accumulates the outer product `g x^T` into the weight and `g` into the bias.
    fn accumulate(&mut self, g: &[f64], x: &[f64]) {
        for (row, &gi) in self.weight.chunks_exact_mut(self.in_dim).zip(g) {
            if gi == 0.0 {
                continue;
            }
            for (w, xv) in row.iter_mut().zip(x) {
                *w += gi * xv;
            }
        }
        for (b, gi) in self.bias.iter_mut().zip(g) {
            *b += gi;
        }
    }

    fn clear(&mut self) {
        self.weight.iter_mut().for_each(|w| *w = 0.0);
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Optimizer settings shared by every trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Encoder output width.
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs used to fit a fresh classifier over a frozen encoder.
    pub transfer_epochs: usize,
    /// L2 penalty on weights (not biases). Without it the untrained random
    /// directions of a narrow encoder survive and every source transfers.
    pub weight_decay: f64,
    pub seed: u64,
    /// Score transfer by evaluating the source model directly on the
    /// target's training set instead of retraining a classifier.
    pub identical_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 4,
            learning_rate: 0.1,
            epochs: 100,
            batch_size: 16,
            transfer_epochs: 50,
            weight_decay: 0.1,
            seed: 0,
            identical_labels: false,
        }
    }
}

/// Training data of one head: the examples and the size of its label space.
#[derive(Debug, Clone, Copy)]
pub struct HeadData<'a> {
    pub examples: &'a [Example],
    pub label_count: usize,
}

/// Mini-batch schedule: every task's examples are shuffled and chunked,
/// then the batches of all tasks are interleaved in random order.
fn epoch_batches(sizes: &[usize], batch_size: usize, rng: &mut Rng) -> Vec<(usize, Vec<usize>)> {
    let batch_size = batch_size.max(1);
    let mut batches = Vec::new();
    for (t, &n) in sizes.iter().enumerate() {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        for chunk in idx.chunks(batch_size) {
            batches.push((t, chunk.to_vec()));
        }
    }
    batches.shuffle(rng);
    batches
}

/// Softmax cross-entropy gradient with respect to logits: `p - onehot(y)`.
fn ce_grad(logits: &[f64], y: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[y] -= 1.0;
    g
}

/// Jointly trains one shared encoder and one classifier head per entry of
/// `heads` by mini-batch gradient descent on cross-entropy.
pub fn train_encoder_heads(
    heads: &[HeadData<'_>],
    input_dim: usize,
    config: &TrainConfig,
    rng: &mut Rng,
) -> (Linear, Vec<Linear>) {
    let mut encoder = Linear::glorot(input_dim, config.hidden, rng);
    let mut classifiers: Vec<Linear> = heads
        .iter()
        .map(|h| Linear::glorot(config.hidden, h.label_count, rng))
        .collect();
    let mut enc_grad = Linear::zeros(input_dim, config.hidden);
    let mut cls_grads: Vec<Linear> = heads
        .iter()
        .map(|h| Linear::zeros(config.hidden, h.label_count))
        .collect();
    let sizes: Vec<usize> = heads.iter().map(|h| h.examples.len()).collect();

    for _ in 0..config.epochs {
        for (t, batch) in epoch_batches(&sizes, config.batch_size, rng) {
            enc_grad.clear();
            cls_grads[t].clear();
            for &i in &batch {
                let ex = &heads[t].examples[i];
                let z = encoder.forward(&ex.x);
                let o = classifiers[t].forward(&z);
                let g_o = ce_grad(&o, ex.y);
                cls_grads[t].accumulate(&g_o, &z);
                let g_z = classifiers[t].backward_input(&g_o);
                enc_grad.accumulate(&g_z, &ex.x);
            }
            let scale = 1.0 / batch.len() as f64;
            classifiers[t].step(
                &cls_grads[t],
                config.learning_rate,
                scale,
                config.weight_decay,
            );
            encoder.step(&enc_grad, config.learning_rate, scale, config.weight_decay);
        }
    }
    (encoder, classifiers)
}

/// Trains a classifier alone on precomputed features (a frozen encoder's outputs).
pub fn train_classifier(
    features: &[(Vec<f64>, usize)],
    in_dim: usize,
    label_count: usize,
    epochs: usize,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Linear {
    let mut cls = Linear::glorot(in_dim, label_count, rng);
    let mut grad = Linear::zeros(in_dim, label_count);
    for _ in 0..epochs {
        for (_, batch) in epoch_batches(&[features.len()], config.batch_size, rng) {
            grad.clear();
            for &i in &batch {
                let (z, y) = &features[i];
                let g = ce_grad(&cls.forward(z), *y);
                grad.accumulate(&g, z);
            }
            cls.step(
                &grad,
                config.learning_rate,
                1.0 / batch.len() as f64,
                config.weight_decay,
            );
        }
    }
    cls
}

/// Per-label mean feature vectors; `None` for labels without examples.
pub fn class_means(examples: &[Example], label_count: usize, dim: usize) -> Vec<Option<Vec<f64>>> {
    let mut sums = vec![vec![0.0; dim]; label_count];
    let mut counts = vec![0usize; label_count];
    for e in examples {
        counts[e.y] += 1;
        for (s, v) in sums[e.y].iter_mut().zip(&e.x) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect()
}

/// Trains an encoder so that each example's encoding has a larger inner
/// product with its own label's anchor than with other labels' anchors.
/// Anchors are the encoded per-label means of the task's training set;
/// the loss is softmax cross-entropy over anchor inner products.
pub fn train_metric_encoder(
    heads: &[HeadData<'_>],
    input_dim: usize,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Linear {
    let mut encoder = Linear::glorot(input_dim, config.hidden, rng);
    let mut grad = Linear::zeros(input_dim, config.hidden);
    // means of the raw inputs; the encoder is affine so enc(mean) = mean(enc)
    let means: Vec<Vec<(usize, Vec<f64>)>> = heads
        .iter()
        .map(|h| {
            class_means(h.examples, h.label_count, input_dim)
                .into_iter()
                .enumerate()
                .filter_map(|(l, m)| m.map(|m| (l, m)))
                .collect()
        })
        .collect();
    let sizes: Vec<usize> = heads.iter().map(|h| h.examples.len()).collect();

    for _ in 0..config.epochs {
        for (t, batch) in epoch_batches(&sizes, config.batch_size, rng) {
            let anchors = &means[t];
            if anchors.len() < 2 {
                continue;
            }
            let encoded: Vec<Vec<f64>> = anchors.iter().map(|(_, m)| encoder.forward(m)).collect();
            grad.clear();
            for &i in &batch {
                let ex = &heads[t].examples[i];
                let e = encoder.forward(&ex.x);
                let logits: Vec<f64> = encoded.iter().map(|a| dot(a, &e)).collect();
                let Some(target) = anchors.iter().position(|(l, _)| *l == ex.y) else {
                    continue;
                };
                let g = ce_grad(&logits, target);
                // d/d e = sum_l g_l a_l ; d/d a_l = g_l e
                let mut g_e = vec![0.0; e.len()];
                for (gl, a) in g.iter().zip(&encoded) {
                    for (ge, av) in g_e.iter_mut().zip(a) {
                        *ge += gl * av;
                    }
                }
                grad.accumulate(&g_e, &ex.x);
                for (gl, (_, m)) in g.iter().zip(anchors) {
                    let g_a: Vec<f64> = e.iter().map(|v| gl * v).collect();
                    grad.accumulate(&g_a, m);
                }
            }
            encoder.step(
                &grad,
                config.learning_rate,
                1.0 / batch.len() as f64,
                config.weight_decay,
            );
        }
    }
    encoder
}
