//! Loop-level reference implementation of the attention model and a
//! finite-difference gradient checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use remi::seqmodel::{forward, loss_and_grads_with, BatchItem, DropoutSpec, Matrix, Memory, ModelConfig, ModelParams};

pub fn tiny(n_layers: usize, memory_len: usize, tie: bool) -> ModelConfig {
    ModelConfig {
        n_layers,
        n_heads: 2,
        model_dim: 8,
        ffn_dim: 16,
        vocab_size: 11,
        segment_len: 4,
        memory_len,
        tie_embeddings: tie,
        seed: 5,
    }
}

/// Parameters with every entry perturbed so that no gradient is trivially
/// zero.
pub fn noisy_params(config: ModelConfig, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 0.4).unwrap();
    for (_, m) in p.tensors_mut() {
        for x in m.data.iter_mut() {
            *x += n.sample(&mut rng);
        }
    }
    p
}

pub fn random_tokens(n: usize, v: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..v as u32)).collect()
}

// ---------------------------------------------------------------------------
// Loop-level reference model. Every position attends to the positions in
// `start(t)..=t` of the same sequence, layer by layer.

fn vec_mat(x: &[f64], w: &Matrix) -> Vec<f64> {
    (0..w.cols).map(|c| (0..w.rows).map(|r| x[r] * w.data[r * w.cols + c]).sum()).collect()
}

fn norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().enumerate().map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * gain[i] + bias[i]).collect()
}

fn encoding(dist: usize, d: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    for k in 0..d / 2 {
        let a = dist as f64 * (-(2.0 * k as f64 / d as f64) * 10_000f64.ln()).exp();
        e[k] = a.sin();
        e[d / 2 + k] = a.cos();
    }
    e
}

#[allow(clippy::needless_range_loop)]
pub fn reference_logits(p: &ModelParams, tokens: &[u32], start: impl Fn(usize) -> usize) -> Vec<Vec<f64>> {
    let c = p.config;
    let (d, nh) = (c.model_dim, c.n_heads);
    let dh = d / nh;
    let mut h: Vec<Vec<f64>> = tokens.iter().map(|&t| p.embedding.row(t as usize).to_vec()).collect();
    for lp in &p.layers {
        let keys: Vec<Vec<f64>> = h.iter().map(|x| vec_mat(x, &lp.w_k)).collect();
        let vals: Vec<Vec<f64>> = h.iter().map(|x| vec_mat(x, &lp.w_v)).collect();
        let mut next = Vec::with_capacity(h.len());
        for t in 0..h.len() {
            let q = vec_mat(&h[t], &lp.w_q);
            let mut att = vec![0.0; d];
            for head in 0..nh {
                let js: Vec<usize> = (start(t)..=t).collect();
                let scores: Vec<f64> = js
                    .iter()
                    .map(|&j| {
                        let r = vec_mat(&encoding(t - j, d), &lp.w_r);
                        (0..dh)
                            .map(|e| {
                                let i = head * dh + e;
                                (q[i] + lp.bias_u.data[i]) * keys[j][i] + (q[i] + lp.bias_w.data[i]) * r[i]
                            })
                            .sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for (s, &j) in scores.iter().zip(&js) {
                    let a = (s - m).exp() / z;
                    for e in 0..dh {
                        att[head * dh + e] += a * vals[j][head * dh + e];
                    }
                }
            }
            let o = vec_mat(&att, &lp.w_o);
            let s1: Vec<f64> = h[t].iter().zip(&o).map(|(a, b)| a + b).collect();
            let y1 = norm(&s1, &lp.ln1_gain.data, &lp.ln1_bias.data);
            let z1: Vec<f64> =
                vec_mat(&y1, &lp.w_1).iter().zip(&lp.b_1.data).map(|(a, b)| (a + b).max(0.0)).collect();
            let f = vec_mat(&z1, &lp.w_2);
            let s2: Vec<f64> = (0..d).map(|i| y1[i] + f[i] + lp.b_2.data[i]).collect();
            next.push(norm(&s2, &lp.ln2_gain.data, &lp.ln2_bias.data));
        }
        h = next;
    }
    h.iter()
        .map(|x| match &p.output {
            Some(w) => vec_mat(x, w),
            None => (0..c.vocab_size).map(|v| (0..d).map(|i| x[i] * p.embedding.row(v)[i]).sum()).collect(),
        })
        .collect()
}

pub fn chunked_logits(p: &ModelParams, tokens: &[u32]) -> Vec<Vec<f64>> {
    let mut mem = Memory::empty(&p.config);
    let mut out = Vec::new();
    for seg in tokens.chunks(p.config.segment_len) {
        let (logits, next) = forward(p, seg, &mem).unwrap();
        out.extend((0..logits.rows).map(|r| logits.row(r).to_vec()));
        mem = next;
    }
    out
}

pub fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs())).fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor: below this magnitude a gradient is compared in
/// absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn batch_loss(p: &ModelParams, items: &[(Vec<u32>, Vec<u32>, Memory)], dropout: Option<DropoutSpec>) -> f64 {
    let batch: Vec<BatchItem<'_>> =
        items.iter().map(|(i, t, m)| BatchItem { inputs: i, targets: t, memory: m }).collect();
    loss_and_grads_with(p, &batch, dropout).unwrap().loss
}

/// Largest relative error between analytic and central-difference
/// gradients over every entry of every tensor, with the tensor name.
/// Dropout masks depend only on the seed, so they stay fixed across the
/// perturbed evaluations.
pub fn gradient_check(config: ModelConfig, dropout: Option<DropoutSpec>) -> (f64, String) {
    let p = noisy_params(config, 23);
    let v = config.vocab_size;
    let first = random_tokens(5, v, 30);
    let memory = forward(&p, &first[..4], &Memory::empty(&config)).unwrap().1;
    let second = random_tokens(5, v, 31);
    let items = vec![
        (first[..4].to_vec(), first[1..].to_vec(), Memory::empty(&config)),
        (second[..4].to_vec(), second[1..].to_vec(), memory),
    ];
    let batch: Vec<BatchItem<'_>> =
        items.iter().map(|(i, t, m)| BatchItem { inputs: i, targets: t, memory: m }).collect();
    let analytic = loss_and_grads_with(&p, &batch, dropout).unwrap().grads;
    let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
    let mut worst = (0.0f64, String::new());
    for (ti, name) in names.iter().enumerate() {
        let len = p.tensors()[ti].1.data.len();
        for e in 0..len {
            let mut plus = p.clone();
            plus.tensors_mut()[ti].1.data[e] += FD_STEP;
            let mut minus = p.clone();
            minus.tensors_mut()[ti].1.data[e] -= FD_STEP;
            let numeric = (batch_loss(&plus, &items, dropout) - batch_loss(&minus, &items, dropout)) / (2.0 * FD_STEP);
            let a = analytic.tensors()[ti].1.data[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{e}]"));
            }
        }
    }
    worst
}

