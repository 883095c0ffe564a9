//! Token-by-token decoding with cached keys and values, and constrained
//! temperature / top-k sampling.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ModelParams;
use super::tensor::{matmul, Matrix};
use super::transformer::{layer_norm, sinusoid_table, softmax_in_place};
use super::ModelError;
use crate::tokens::{validate_grammar, GrammarRule, Representation, TokenSequence};

/// Below this temperature sampling becomes greedy.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

struct LayerState {
    keys: VecDeque<Vec<f64>>,
    values: VecDeque<Vec<f64>>,
    /// Projected relative-position rows, indexed by distance.
    rel: Matrix,
}

/// Which earlier positions a decoding step attends to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeContext {
    /// The last `n` positions, as with length-1 segments and a memory of `n`.
    Sliding(usize),
    /// The contexts seen in training: positions are grouped into segments of
    /// `segment_len` from the start, and each attends to its own segment's
    /// prefix plus `memory_len` positions before the segment.
    Segmented { segment_len: usize, memory_len: usize },
}

impl DecodeContext {
    /// The training layout of a model.
    pub fn of(params: &ModelParams) -> Self {
        DecodeContext::Segmented { segment_len: params.config.segment_len, memory_len: params.config.memory_len }
    }

    fn longest(self) -> usize {
        match self {
            DecodeContext::Sliding(n) => n + 1,
            DecodeContext::Segmented { segment_len, memory_len } => segment_len + memory_len,
        }
    }

    /// Number of cached positions position `pos` may see, itself excluded.
    fn visible(self, pos: usize) -> usize {
        match self {
            DecodeContext::Sliding(n) => pos.min(n),
            DecodeContext::Segmented { segment_len, memory_len } => {
                let start = (pos / segment_len.max(1) * segment_len).saturating_sub(memory_len);
                pos - start
            }
        }
    }
}

/// Incremental decoder. Each fed token attends to the earlier positions
/// its [`DecodeContext`] allows, giving the same logits as the segment-wise
/// forward pass over that context.
pub struct Decoder<'a> {
    params: &'a ModelParams,
    context: DecodeContext,
    fed: usize,
    layers: Vec<LayerState>,
}

impl<'a> Decoder<'a> {
    /// Sliding window over the last `memory_len` positions.
    pub fn new(params: &'a ModelParams, memory_len: usize) -> Self {
        Self::with_context(params, DecodeContext::Sliding(memory_len))
    }

    pub fn with_context(params: &'a ModelParams, context: DecodeContext) -> Self {
        let d = params.config.model_dim;
        let cap = context.longest();
        let table = sinusoid_table(cap, d);
        let layers = params
            .layers
            .iter()
            .map(|lp| LayerState {
                keys: VecDeque::with_capacity(cap),
                values: VecDeque::with_capacity(cap),
                rel: matmul(table.view(), lp.w_r.view()),
            })
            .collect();
        Decoder { params, context, fed: 0, layers }
    }

    /// Logits for the token following `token`.
    pub fn feed(&mut self, token: u32) -> Result<Vec<f64>, ModelError> {
        let c = &self.params.config;
        if token as usize >= c.vocab_size {
            return Err(ModelError::InvalidArgument(format!("token index {token} outside vocabulary")));
        }
        let (d, nh) = (c.model_dim, c.n_heads);
        let dh = d / nh;
        let scale = 1.0 / (dh as f64).sqrt();
        let keep = self.context.visible(self.fed);
        self.fed += 1;
        let mut x = Matrix::from_vec(1, d, self.params.embedding.row(token as usize).to_vec());
        for (lp, st) in self.params.layers.iter().zip(self.layers.iter_mut()) {
            while st.keys.len() > keep {
                st.keys.pop_front();
                st.values.pop_front();
            }
            let q = matmul(x.view(), lp.w_q.view());
            st.keys.push_back(matmul(x.view(), lp.w_k.view()).data);
            st.values.push_back(matmul(x.view(), lp.w_v.view()).data);
            let kk = st.keys.len();
            let mut att = Matrix::zeros(1, d);
            let mut scores = vec![0.0; kk];
            for h in 0..nh {
                let hs = h * dh..(h + 1) * dh;
                let qh = &q.data[hs.clone()];
                let (u, w) = (&lp.bias_u.data[hs.clone()], &lp.bias_w.data[hs.clone()]);
                for (j, key) in st.keys.iter().enumerate() {
                    let rel = &st.rel.row(kk - 1 - j)[hs.clone()];
                    let kh = &key[hs.clone()];
                    let mut s = 0.0;
                    for e in 0..dh {
                        s += (qh[e] + u[e]) * kh[e] + (qh[e] + w[e]) * rel[e];
                    }
                    scores[j] = s * scale;
                }
                softmax_in_place(&mut scores);
                let out = &mut att.data[hs.clone()];
                for (a, val) in scores.iter().zip(&st.values) {
                    for (o, vv) in out.iter_mut().zip(&val[hs.clone()]) {
                        *o += a * vv;
                    }
                }
            }
            let mut s1 = matmul(att.view(), lp.w_o.view());
            s1.add_assign(&x);
            let y1 = layer_norm(&s1, &lp.ln1_gain.data, &lp.ln1_bias.data).y;
            let mut z1 = matmul(y1.view(), lp.w_1.view());
            z1.add_row_vector(&lp.b_1.data);
            z1.data.iter_mut().for_each(|v| *v = v.max(0.0));
            let mut s2 = matmul(z1.view(), lp.w_2.view());
            s2.add_row_vector(&lp.b_2.data);
            s2.add_assign(&y1);
            x = layer_norm(&s2, &lp.ln2_gain.data, &lp.ln2_bias.data).y;
        }
        let logits = match &self.params.output {
            Some(w) => matmul(x.view(), w.view()),
            None => matmul(x.view(), self.params.embedding.view().t()),
        };
        Ok(logits.data)
    }
}

/// Categorical distribution used for one sampling step: logits divided by
/// the temperature, forbidden indices removed, the `top_k` best survivors
/// renormalized. Below [`GREEDY_TEMPERATURE`] all mass goes to the best
/// allowed index (lowest index on ties).
pub fn sampling_distribution(
    logits: &[f64],
    temperature: f64,
    top_k: usize,
    forbidden: &[bool],
) -> Result<Vec<f64>, ModelError> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(ModelError::InvalidArgument("temperature must be positive".into()));
    }
    if top_k == 0 {
        return Err(ModelError::InvalidArgument("top_k must be at least 1".into()));
    }
    if forbidden.len() != logits.len() {
        return Err(ModelError::InvalidArgument("mask length differs from vocabulary size".into()));
    }
    let mut allowed: Vec<usize> = (0..logits.len()).filter(|&i| !forbidden[i]).collect();
    if allowed.is_empty() {
        return Err(ModelError::InvalidArgument("mask forbids every token".into()));
    }
    allowed.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    let keep = if temperature < GREEDY_TEMPERATURE { 1 } else { top_k.min(allowed.len()) };
    let mut scaled: Vec<f64> = allowed[..keep].iter().map(|&i| logits[i] / temperature).collect();
    softmax_in_place(&mut scaled);
    let mut probs = vec![0.0; logits.len()];
    for (&i, p) in allowed[..keep].iter().zip(scaled) {
        probs[i] = p;
    }
    Ok(probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOptions {
    pub temperature: f64,
    pub top_k: usize,
    /// Tokens generated after the prompt.
    pub max_tokens: usize,
    /// Forbidden token indices.
    pub mask: Vec<u32>,
    pub seed: u64,
    /// Attention context while decoding; the model's training layout
    /// ([`DecodeContext::of`]) when unset.
    pub context: Option<DecodeContext>,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions { temperature: 1.0, top_k: 16, max_tokens: 512, mask: Vec::new(), seed: 0, context: None }
    }
}

fn draw(probs: &[f64], rng: &mut ChaCha8Rng) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i as u32;
            }
        }
    }
    last as u32
}

/// Continue `prompt` by `max_tokens` sampled tokens. Returns the prompt
/// followed by the continuation.
pub fn sample(params: &ModelParams, prompt: &TokenSequence, opts: &SampleOptions) -> Result<TokenSequence, ModelError> {
    let v = params.config.vocab_size;
    if prompt.repr.vocab().size() as usize != v {
        return Err(ModelError::InvalidArgument(format!("model vocabulary {v} does not fit {}", prompt.repr)));
    }
    if prompt.is_empty() {
        return Err(ModelError::InvalidArgument("prompt must contain at least one token".into()));
    }
    if prompt.repr == Representation::Remi {
        let violations = validate_grammar(prompt).map_err(|e| ModelError::InvalidArgument(e.to_string()))?;
        if let Some(bad) = violations.iter().find(|x| x.rule != GrammarRule::G5) {
            return Err(ModelError::InvalidArgument(format!("ungrammatical prompt: {bad}")));
        }
    }
    let mut forbidden = vec![false; v];
    for &m in &opts.mask {
        *forbidden
            .get_mut(m as usize)
            .ok_or_else(|| ModelError::InvalidArgument(format!("mask index {m} outside vocabulary")))? = true;
    }
    if forbidden.iter().all(|&f| f) {
        return Err(ModelError::InvalidArgument("mask forbids every token".into()));
    }
    // validate temperature and top_k before doing any work
    sampling_distribution(&vec![0.0; v], opts.temperature, opts.top_k, &forbidden)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut decoder = Decoder::with_context(params, opts.context.unwrap_or_else(|| DecodeContext::of(params)));
    let mut logits = Vec::new();
    for &t in &prompt.indices {
        logits = decoder.feed(t)?;
    }
    let mut out = prompt.clone();
    for i in 0..opts.max_tokens {
        let probs = sampling_distribution(&logits, opts.temperature, opts.top_k, &forbidden)?;
        let next = draw(&probs, &mut rng);
        out.indices.push(next);
        if i + 1 < opts.max_tokens {
            logits = decoder.feed(next)?;
        }
    }
    Ok(out)
}
