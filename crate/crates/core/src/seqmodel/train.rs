//! Teacher-forced training with Adam.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ModelConfig;
use super::params::ModelParams;
use super::transformer::{backward, cross_entropy, forward_cached, Dropout};
use super::{Memory, ModelError};
use crate::tokens::{Representation, TokenKind, TokenSequence};

/// One segment with its next-token targets and the memory it continues.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub inputs: &'a [u32],
    pub targets: &'a [u32],
    pub memory: &'a Memory,
}

#[derive(Debug, Clone)]
pub struct LossAndGrads {
    /// Mean cross-entropy over every position of the batch.
    pub loss: f64,
    pub grads: ModelParams,
    /// Per item, per position.
    pub token_losses: Vec<Vec<f64>>,
    /// Memory to carry after each item.
    pub memories: Vec<Memory>,
}

/// Dropout for one training step. Item `i` of the batch draws its masks
/// from stream `i` of a generator seeded with `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub seed: u64,
}

/// Mean next-token cross-entropy of a batch and its parameter gradients.
/// Items run in parallel; gradients are summed in batch order.
pub fn loss_and_grads(params: &ModelParams, batch: &[BatchItem<'_>]) -> Result<LossAndGrads, ModelError> {
    loss_and_grads_with(params, batch, None)
}

/// Per-token losses, gradients and final memory of one batch item.
type ItemGrads = (Vec<f64>, ModelParams, Memory);

/// [`loss_and_grads`] with optional dropout.
pub fn loss_and_grads_with(
    params: &ModelParams,
    batch: &[BatchItem<'_>],
    dropout: Option<DropoutSpec>,
) -> Result<LossAndGrads, ModelError> {
    if let Some(spec) = dropout {
        if !(0.0..1.0).contains(&spec.rate) {
            return Err(ModelError::InvalidArgument(format!("dropout rate {} outside [0, 1)", spec.rate)));
        }
    }
    let total: usize = batch.iter().map(|b| b.targets.len()).sum();
    if total == 0 {
        return Err(ModelError::InvalidArgument("batch has no targets".into()));
    }
    for (i, b) in batch.iter().enumerate() {
        if b.inputs.len() != b.targets.len() {
            return Err(ModelError::InvalidArgument(format!(
                "item {i}: {} inputs but {} targets",
                b.inputs.len(),
                b.targets.len()
            )));
        }
        if let Some(&t) = b.targets.iter().find(|&&t| t as usize >= params.config.vocab_size) {
            return Err(ModelError::InvalidArgument(format!("item {i}: target {t} outside vocabulary")));
        }
    }
    let weight = 1.0 / total as f64;
    let results: Vec<Result<ItemGrads, ModelError>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let mut drop = dropout.filter(|d| d.rate > 0.0).map(|d| {
                let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
                rng.set_stream(i as u64);
                Dropout::new(d.rate, rng)
            });
            let (logits, memory, cache) = forward_cached(params, b.inputs, b.memory, drop.as_mut())?;
            let (losses, dlogits) = cross_entropy(&logits, b.targets, weight);
            let mut grads = params.zeros_like();
            backward(params, &cache, &dlogits, &mut grads);
            Ok((losses, grads, memory))
        })
        .collect();

    let mut grads = params.zeros_like();
    let mut token_losses = Vec::with_capacity(batch.len());
    let mut memories = Vec::with_capacity(batch.len());
    let mut sum = 0.0;
    for (i, r) in results.into_iter().enumerate() {
        let (losses, g, m) = r?;
        if let Some(pos) = losses.iter().position(|l| !l.is_finite()) {
            return Err(ModelError::Training(format!("non-finite loss at batch item {i}, position {pos}")));
        }
        sum += losses.iter().sum::<f64>();
        grads.add_assign(&g);
        token_losses.push(losses);
        memories.push(m);
    }
    Ok(LossAndGrads { loss: sum * weight, grads, token_losses, memories })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Number of pieces advanced in parallel per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// Stop once an epoch's mean loss falls below this.
    pub stop_below: Option<f64>,
    /// Dropout rate on embeddings and sublayer outputs.
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            batch_size: 4,
            learning_rate: 2e-4,
            warmup_steps: 200,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(1.0),
            stop_below: None,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: u64,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        Adam { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
        let moments = self.m.tensors_mut().into_iter().zip(self.v.tensors_mut());
        for (((_, p), (_, g)), ((_, m), (_, v))) in tensors.zip(moments) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
                v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Mean loss over one pass of the corpus, overall and per target kind.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps completed at the end of this epoch.
    pub step: usize,
    pub mean_loss: f64,
    pub per_kind: Vec<(TokenKind, f64)>,
}

impl EpochLog {
    pub fn kind_loss(&self, kind: TokenKind) -> Option<f64> {
        self.per_kind.iter().find(|(k, _)| *k == kind).map(|(_, l)| *l)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParams,
    pub curve: Vec<EpochLog>,
    pub steps: usize,
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, Copy)]
struct SegmentRef {
    piece: usize,
    start: usize,
}

fn corpus_representation(corpus: &[TokenSequence]) -> Result<Representation, ModelError> {
    let first = corpus.first().ok_or_else(|| ModelError::InvalidArgument("empty corpus".into()))?;
    if let Some(other) = corpus.iter().find(|s| s.repr != first.repr) {
        return Err(ModelError::InvalidArgument(format!(
            "corpus mixes representations {} and {}",
            first.repr, other.repr
        )));
    }
    Ok(first.repr)
}

/// Train from a fresh initialization of `config`.
pub fn train(corpus: &[TokenSequence], config: ModelConfig, hp: &TrainConfig) -> Result<TrainReport, ModelError> {
    train_from(ModelParams::init(config)?, corpus, hp, |_| {})
}

/// Continue training `params`, calling `on_epoch` after every epoch.
///
/// Pieces are dealt round-robin to `batch_size` streams. Each step
/// advances every stream by one segment of at most `segment_len` tokens;
/// memory carries across segments of a piece and resets at piece starts.
/// The last segment of a piece may be shorter.
pub fn train_from(
    mut params: ModelParams,
    corpus: &[TokenSequence],
    hp: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport, ModelError> {
    let repr = corpus_representation(corpus)?;
    let vocab = repr.vocab();
    let c = params.config;
    if vocab.size() as usize != c.vocab_size {
        return Err(ModelError::InvalidArgument(format!(
            "model vocabulary {} does not match {} vocabulary {}",
            c.vocab_size,
            repr,
            vocab.size()
        )));
    }
    if hp.batch_size == 0 || hp.learning_rate.is_nan() || hp.learning_rate <= 0.0 {
        return Err(ModelError::InvalidArgument("batch_size and learning_rate must be positive".into()));
    }
    let pieces: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].len() >= 2).collect();
    if pieces.is_empty() {
        return Err(ModelError::InvalidArgument("no sequence has two or more tokens".into()));
    }
    let n_streams = hp.batch_size.min(pieces.len());
    let streams: Vec<Vec<SegmentRef>> = (0..n_streams)
        .map(|s| {
            pieces
                .iter()
                .skip(s)
                .step_by(n_streams)
                .flat_map(|&piece| {
                    let n = corpus[piece].len();
                    (0..n - 1).step_by(c.segment_len).map(move |start| SegmentRef { piece, start })
                })
                .collect()
        })
        .collect();
    let steps_per_epoch = streams.iter().map(Vec::len).max().unwrap_or(1);
    let kind_of: Vec<TokenKind> = (0..vocab.size()).map(|i| vocab.kind_of(i).expect("in range")).collect();

    let mut adam = Adam::new(&params);
    let mut memories: Vec<Memory> = (0..n_streams).map(|_| Memory::empty(&c)).collect();
    let mut curve = Vec::new();
    let mut epoch_sum = 0.0;
    let mut epoch_count = 0usize;
    let mut kind_sum = [0.0f64; TokenKind::ALL.len()];
    let mut kind_count = [0usize; TokenKind::ALL.len()];
    let mut step = 0;
    while step < hp.steps {
        let cursor = step % steps_per_epoch;
        let refs: Vec<SegmentRef> = streams.iter().map(|s| s[cursor % s.len()]).collect();
        for (mem, r) in memories.iter_mut().zip(&refs) {
            if r.start == 0 {
                *mem = Memory::empty(&c);
            }
        }
        let windows: Vec<(&[u32], &[u32])> = refs
            .iter()
            .map(|r| {
                let idx = &corpus[r.piece].indices;
                let end = (r.start + c.segment_len).min(idx.len() - 1);
                (&idx[r.start..end], &idx[r.start + 1..end + 1])
            })
            .collect();
        let batch: Vec<BatchItem<'_>> = windows
            .iter()
            .zip(&memories)
            .map(|(&(inputs, targets), memory)| BatchItem { inputs, targets, memory })
            .collect();
        let spec = DropoutSpec { rate: hp.dropout, seed: step_seed(c.seed, step) };
        let mut out = loss_and_grads_with(&params, &batch, Some(spec))?;
        for ((_, targets), losses) in windows.iter().zip(&out.token_losses) {
            for (&t, &l) in targets.iter().zip(losses) {
                let k = kind_of[t as usize] as usize;
                kind_sum[k] += l;
                kind_count[k] += 1;
                epoch_sum += l;
                epoch_count += 1;
            }
        }
        memories = std::mem::take(&mut out.memories);

        if let Some(max_norm) = hp.clip_norm {
            let norm = out.grads.squared_norm().sqrt();
            if norm > max_norm {
                out.grads.scale(max_norm / norm);
            }
        }
        let warm = if hp.warmup_steps == 0 { 1.0 } else { ((step + 1) as f64 / hp.warmup_steps as f64).min(1.0) };
        adam.step(&mut params, &out.grads, hp.learning_rate * warm, hp);
        if !params.is_finite() {
            return Err(ModelError::Training(format!("non-finite parameters after step {}", step + 1)));
        }
        step += 1;

        if cursor + 1 == steps_per_epoch || step == hp.steps {
            let log = EpochLog {
                epoch: curve.len(),
                step,
                mean_loss: epoch_sum / epoch_count.max(1) as f64,
                per_kind: TokenKind::ALL
                    .iter()
                    .filter(|k| kind_count[**k as usize] > 0)
                    .map(|k| (*k, kind_sum[*k as usize] / kind_count[*k as usize] as f64))
                    .collect(),
            };
            log::info!("epoch {} step {} loss {:.4}", log.epoch, log.step, log.mean_loss);
            on_epoch(&log);
            let done = hp.stop_below.is_some_and(|t| log.mean_loss < t);
            curve.push(log);
            epoch_sum = 0.0;
            epoch_count = 0;
            kind_sum = [0.0; TokenKind::ALL.len()];
            kind_count = [0; TokenKind::ALL.len()];
            if done {
                break;
            }
        }
    }
    Ok(TrainReport { params, curve, steps: step })
}

/// Mean next-token cross-entropy of a sequence, scored segment by segment
/// with memory carried through.
pub fn evaluate(params: &ModelParams, seq: &TokenSequence) -> Result<f64, ModelError> {
    let idx = &seq.indices;
    if idx.len() < 2 {
        return Err(ModelError::InvalidArgument("need at least two tokens".into()));
    }
    let t = params.config.segment_len;
    let mut memory = Memory::empty(&params.config);
    let mut sum = 0.0;
    for start in (0..idx.len() - 1).step_by(t) {
        let end = (start + t).min(idx.len() - 1);
        let (logits, next, _) = forward_cached(params, &idx[start..end], &memory, None)?;
        let (losses, _) = cross_entropy(&logits, &idx[start + 1..end + 1], 0.0);
        sum += losses.iter().sum::<f64>();
        memory = next;
    }
    Ok(sum / (idx.len() - 1) as f64)
}
