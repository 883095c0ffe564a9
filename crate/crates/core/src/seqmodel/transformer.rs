//! Forward and reverse passes of the segment-recurrent attention stack.
//!
//! Layer `n` sees its cached inputs from the previous segment (`P` rows)
//! stacked above the current inputs (`T` rows). Queries come from the
//! current rows only; keys and values from all `K = P + T` rows. Query `i`
//! may attend key `j` when `j <= P + i`, at relative distance `P + i - j`.

use std::borrow::Cow;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{LayerParams, ModelParams};
use super::tensor::{gemm, matmul, Matrix};
use super::{Memory, ModelError};

const LN_EPS: f64 = 1e-5;

/// Sinusoidal table: row `s` encodes distance `s`, sines in the first half
/// of the columns and cosines in the second.
pub(crate) fn sinusoid_table(rows: usize, d: usize) -> Matrix {
    let half = d / 2;
    let mut m = Matrix::zeros(rows, d);
    for s in 0..rows {
        let row = m.row_mut(s);
        for k in 0..half {
            let angle = s as f64 / 10_000f64.powf(2.0 * k as f64 / d as f64);
            row[k] = angle.sin();
            row[half + k] = angle.cos();
        }
    }
    m
}

pub(crate) struct LayerNormOut {
    pub y: Matrix,
    pub xhat: Matrix,
    pub inv: Vec<f64>,
}

pub(crate) fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64]) -> LayerNormOut {
    let d = x.cols;
    let mut xhat = Matrix::zeros(x.rows, d);
    let mut y = Matrix::zeros(x.rows, d);
    let mut inv = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv.push(is);
        let (xh, yr) = (xhat.row_mut(r), &mut y.data[r * d..(r + 1) * d]);
        for c in 0..d {
            xh[c] = (row[c] - mean) * is;
            yr[c] = xh[c] * gain[c] + bias[c];
        }
    }
    LayerNormOut { y, xhat, inv }
}

/// Returns the gradient with respect to the normalized input and
/// accumulates gain and bias gradients.
fn layer_norm_backward(dy: &Matrix, ln: &LayerNormOut, gain: &[f64], dgain: &mut [f64], dbias: &mut [f64]) -> Matrix {
    let d = dy.cols;
    let mut dx = Matrix::zeros(dy.rows, d);
    let mut dxhat = vec![0.0; d];
    for r in 0..dy.rows {
        let (g, xh) = (dy.row(r), ln.xhat.row(r));
        let mut sum = 0.0;
        let mut dot = 0.0;
        for c in 0..d {
            dgain[c] += g[c] * xh[c];
            dbias[c] += g[c];
            dxhat[c] = g[c] * gain[c];
            sum += dxhat[c];
            dot += dxhat[c] * xh[c];
        }
        let (mean, mean_dot) = (sum / d as f64, dot / d as f64);
        let out = dx.row_mut(r);
        for c in 0..d {
            out[c] = ln.inv[r] * (dxhat[c] - mean - xh[c] * mean_dot);
        }
    }
    dx
}

/// Row-wise softmax of attention scores restricted to `j <= limit(i)`.
/// Inverted dropout masks: an element is zeroed with probability `rate`
/// and kept ones are scaled by `1 / (1 - rate)`.
pub(crate) struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub(crate) fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Dropout { rate, rng }
    }

    fn mask(&mut self, rows: usize, cols: usize) -> Matrix {
        let keep = 1.0 / (1.0 - self.rate);
        let data = (0..rows * cols).map(|_| if self.rng.random::<f64>() < self.rate { 0.0 } else { keep }).collect();
        Matrix::from_vec(rows, cols, data)
    }
}

fn draw_mask(dropout: &mut Option<&mut Dropout>, m: &mut Matrix) -> Option<Matrix> {
    let mask = dropout.as_deref_mut()?.mask(m.rows, m.cols);
    m.data.iter_mut().zip(&mask.data).for_each(|(v, k)| *v *= k);
    Some(mask)
}

fn apply_mask<'m>(m: &'m Matrix, mask: &Option<Matrix>) -> Cow<'m, Matrix> {
    match mask {
        None => Cow::Borrowed(m),
        Some(k) => {
            let mut out = m.clone();
            out.data.iter_mut().zip(&k.data).for_each(|(v, k)| *v *= k);
            Cow::Owned(out)
        }
    }
}

fn masked_softmax_row(scores: &mut [f64], allowed: usize) {
    let max = scores[..allowed].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores[..allowed].iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores[..allowed].iter_mut() {
        *s /= total;
    }
    scores[allowed..].iter_mut().for_each(|s| *s = 0.0);
}

pub(crate) struct LayerCache {
    x: Matrix,
    cat: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    r: Matrix,
    probs: Vec<Matrix>,
    att: Matrix,
    ln1: LayerNormOut,
    z1: Matrix,
    a1: Matrix,
    ln2: LayerNormOut,
    drop_att: Option<Matrix>,
    drop_ffn: Option<Matrix>,
}

fn head_plus_bias(m: &Matrix, h: usize, dh: usize, bias: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows, dh);
    let b = &bias.data[h * dh..(h + 1) * dh];
    for i in 0..m.rows {
        let src = &m.row(i)[h * dh..(h + 1) * dh];
        for (o, (s, bb)) in out.row_mut(i).iter_mut().zip(src.iter().zip(b)) {
            *o = s + bb;
        }
    }
    out
}

fn layer_forward(
    lp: &LayerParams,
    x: &Matrix,
    mem: &Matrix,
    n_heads: usize,
    table: &Matrix,
    mut dropout: Option<&mut Dropout>,
) -> (Matrix, LayerCache) {
    let (t, d) = (x.rows, x.cols);
    let p = mem.rows;
    let kk = p + t;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let cat = mem.vstack(x);
    let q = matmul(x.view(), lp.w_q.view());
    let k = matmul(cat.view(), lp.w_k.view());
    let v = matmul(cat.view(), lp.w_v.view());
    let r = matmul(table.rows_view(0, kk), lp.w_r.view());

    let mut att = Matrix::zeros(t, d);
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qu = head_plus_bias(&q, h, dh, &lp.bias_u);
        let qw = head_plus_bias(&q, h, dh, &lp.bias_w);
        let content = matmul(qu.view(), k.cols_view(h * dh, dh).t());
        let position = matmul(qw.view(), r.cols_view(h * dh, dh).t());
        let mut a = Matrix::zeros(t, kk);
        for i in 0..t {
            let allowed = p + i + 1;
            let (crow, prow) = (content.row(i), position.row(i));
            let arow = a.row_mut(i);
            for j in 0..allowed {
                arow[j] = (crow[j] + prow[p + i - j]) * scale;
            }
            masked_softmax_row(arow, allowed);
        }
        gemm(1.0, a.view(), v.cols_view(h * dh, dh), 0.0, att.cols_view_mut(h * dh, dh));
        probs.push(a);
    }

    let mut s1 = matmul(att.view(), lp.w_o.view());
    let drop_att = draw_mask(&mut dropout, &mut s1);
    s1.add_assign(x);
    let ln1 = layer_norm(&s1, &lp.ln1_gain.data, &lp.ln1_bias.data);
    let mut z1 = matmul(ln1.y.view(), lp.w_1.view());
    z1.add_row_vector(&lp.b_1.data);
    let mut a1 = z1.clone();
    a1.data.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut s2 = matmul(a1.view(), lp.w_2.view());
    s2.add_row_vector(&lp.b_2.data);
    let drop_ffn = draw_mask(&mut dropout, &mut s2);
    s2.add_assign(&ln1.y);
    let ln2 = layer_norm(&s2, &lp.ln2_gain.data, &lp.ln2_bias.data);
    let out = ln2.y.clone();
    (out, LayerCache { x: x.clone(), cat, q, k, v, r, probs, att, ln1, z1, a1, ln2, drop_att, drop_ffn })
}

pub(crate) struct ForwardCache {
    tokens: Vec<u32>,
    drop_emb: Option<Matrix>,
    layers: Vec<LayerCache>,
    hidden: Matrix,
    table: Matrix,
}

/// Output projection as a `d × V` view source: the explicit matrix, or the
/// embedding used transposed.
fn project_logits(params: &ModelParams, hidden: &Matrix) -> Matrix {
    match &params.output {
        Some(w) => matmul(hidden.view(), w.view()),
        None => matmul(hidden.view(), params.embedding.view().t()),
    }
}

pub(crate) fn check_inputs(params: &ModelParams, segment: &[u32], memory: &Memory) -> Result<(), ModelError> {
    let c = &params.config;
    if segment.len() > c.segment_len {
        return Err(ModelError::InvalidArgument(format!(
            "segment of {} tokens exceeds segment_len {}",
            segment.len(),
            c.segment_len
        )));
    }
    if let Some(&bad) = segment.iter().find(|&&t| t as usize >= c.vocab_size) {
        return Err(ModelError::InvalidArgument(format!("token index {bad} outside vocabulary of {}", c.vocab_size)));
    }
    memory.check(c)
}

/// Forward pass keeping what [`backward`] needs. With `dropout`, masks are
/// applied to the embeddings and to both sublayer outputs of every layer.
pub(crate) fn forward_cached(
    params: &ModelParams,
    segment: &[u32],
    memory: &Memory,
    mut dropout: Option<&mut Dropout>,
) -> Result<(Matrix, Memory, ForwardCache), ModelError> {
    check_inputs(params, segment, memory)?;
    let c = &params.config;
    let d = c.model_dim;
    let mut x = Matrix::zeros(segment.len(), d);
    for (i, &tok) in segment.iter().enumerate() {
        x.row_mut(i).copy_from_slice(params.embedding.row(tok as usize));
    }
    let drop_emb = draw_mask(&mut dropout, &mut x);
    let table = sinusoid_table(memory.len() + segment.len(), d);
    let mut layers = Vec::with_capacity(c.n_layers);
    let mut new_memory = Vec::with_capacity(c.n_layers);
    for (lp, mem) in params.layers.iter().zip(&memory.layers) {
        let (out, cache) = layer_forward(lp, &x, mem, c.n_heads, &table, dropout.as_deref_mut());
        let keep = cache.cat.rows.min(c.memory_len);
        new_memory.push(cache.cat.slice_rows(cache.cat.rows - keep, keep));
        layers.push(cache);
        x = out;
    }
    let logits = project_logits(params, &x);
    let cache = ForwardCache { tokens: segment.to_vec(), drop_emb, layers, hidden: x, table };
    Ok((logits, Memory { layers: new_memory }, cache))
}

/// Logits for `segment` given the cached states of earlier positions, and
/// the memory to carry into the next segment.
pub fn forward(params: &ModelParams, segment: &[u32], memory: &Memory) -> Result<(Matrix, Memory), ModelError> {
    let (logits, mem, _) = forward_cached(params, segment, memory, None)?;
    Ok((logits, mem))
}

/// Accumulate parameter gradients for upstream gradient `dlogits` into
/// `grads`. Memory rows are treated as constants.
pub(crate) fn backward(params: &ModelParams, cache: &ForwardCache, dlogits: &Matrix, grads: &mut ModelParams) {
    let c = &params.config;
    let (d, nh) = (c.model_dim, c.n_heads);
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut dx = match (&params.output, &mut grads.output) {
        (Some(w), Some(gw)) => {
            gemm(1.0, cache.hidden.view().t(), dlogits.view(), 1.0, gw.view_mut());
            matmul(dlogits.view(), w.view().t())
        }
        _ => {
            gemm(1.0, dlogits.view().t(), cache.hidden.view(), 1.0, grads.embedding.view_mut());
            matmul(dlogits.view(), params.embedding.view())
        }
    };

    for (n, lc) in cache.layers.iter().enumerate().rev() {
        let lp = &params.layers[n];
        let g = &mut grads.layers[n];
        let (t, kk) = (lc.x.rows, lc.cat.rows);
        let p = kk - t;

        // second residual block
        let ds2 = layer_norm_backward(&dx, &lc.ln2, &lp.ln2_gain.data, &mut g.ln2_gain.data, &mut g.ln2_bias.data);
        let dffn = apply_mask(&ds2, &lc.drop_ffn);
        gemm(1.0, lc.a1.view().t(), dffn.view(), 1.0, g.w_2.view_mut());
        dffn.add_col_sums_to(&mut g.b_2.data);
        let mut dz1 = matmul(dffn.view(), lp.w_2.view().t());
        for (dzv, z) in dz1.data.iter_mut().zip(&lc.z1.data) {
            if *z <= 0.0 {
                *dzv = 0.0;
            }
        }
        gemm(1.0, lc.ln1.y.view().t(), dz1.view(), 1.0, g.w_1.view_mut());
        dz1.add_col_sums_to(&mut g.b_1.data);
        let mut dy1 = ds2;
        gemm(1.0, dz1.view(), lp.w_1.view().t(), 1.0, dy1.view_mut());

        // first residual block
        let ds1 = layer_norm_backward(&dy1, &lc.ln1, &lp.ln1_gain.data, &mut g.ln1_gain.data, &mut g.ln1_bias.data);
        let dsub = apply_mask(&ds1, &lc.drop_att);
        gemm(1.0, lc.att.view().t(), dsub.view(), 1.0, g.w_o.view_mut());
        let datt = matmul(dsub.view(), lp.w_o.view().t());
        let mut dx_next = ds1;

        let mut dq = Matrix::zeros(t, d);
        let mut dk = Matrix::zeros(kk, d);
        let mut dv = Matrix::zeros(kk, d);
        let mut dr = Matrix::zeros(kk, d);
        for h in 0..nh {
            let a = &lc.probs[h];
            let datt_h = datt.cols_view(h * dh, dh);
            gemm(1.0, a.view().t(), datt_h, 1.0, dv.cols_view_mut(h * dh, dh));
            let da = matmul(datt_h, lc.v.cols_view(h * dh, dh).t());
            let mut ds = Matrix::zeros(t, kk);
            let mut dpos = Matrix::zeros(t, kk);
            for i in 0..t {
                let allowed = p + i + 1;
                let (arow, darow) = (a.row(i), da.row(i));
                let dot: f64 = (0..allowed).map(|j| arow[j] * darow[j]).sum();
                let dsrow = ds.row_mut(i);
                for j in 0..allowed {
                    dsrow[j] = arow[j] * (darow[j] - dot) * scale;
                }
                let dprow = dpos.row_mut(i);
                for j in 0..allowed {
                    dprow[p + i - j] = dsrow[j];
                }
            }
            let qu = head_plus_bias(&lc.q, h, dh, &lp.bias_u);
            let qw = head_plus_bias(&lc.q, h, dh, &lp.bias_w);
            let dqu = matmul(ds.view(), lc.k.cols_view(h * dh, dh));
            let dqw = matmul(dpos.view(), lc.r.cols_view(h * dh, dh));
            gemm(1.0, ds.view().t(), qu.view(), 1.0, dk.cols_view_mut(h * dh, dh));
            gemm(1.0, dpos.view().t(), qw.view(), 1.0, dr.cols_view_mut(h * dh, dh));
            for i in 0..t {
                let dq_row = &mut dq.row_mut(i)[h * dh..(h + 1) * dh];
                let (a_row, b_row) = (dqu.row(i), dqw.row(i));
                for e in 0..dh {
                    dq_row[e] += a_row[e] + b_row[e];
                    g.bias_u.data[h * dh + e] += a_row[e];
                    g.bias_w.data[h * dh + e] += b_row[e];
                }
            }
        }
        gemm(1.0, lc.x.view().t(), dq.view(), 1.0, g.w_q.view_mut());
        gemm(1.0, lc.cat.view().t(), dk.view(), 1.0, g.w_k.view_mut());
        gemm(1.0, lc.cat.view().t(), dv.view(), 1.0, g.w_v.view_mut());
        gemm(1.0, cache.table.rows_view(0, kk).t(), dr.view(), 1.0, g.w_r.view_mut());

        gemm(1.0, dq.view(), lp.w_q.view().t(), 1.0, dx_next.view_mut());
        // Only the rows of the current segment flow back; memory rows stop here.
        let dk_cur = dk.slice_rows(p, t);
        let dv_cur = dv.slice_rows(p, t);
        gemm(1.0, dk_cur.view(), lp.w_k.view().t(), 1.0, dx_next.view_mut());
        gemm(1.0, dv_cur.view(), lp.w_v.view().t(), 1.0, dx_next.view_mut());
        dx = dx_next;
    }

    let dx = apply_mask(&dx, &cache.drop_emb);
    for (i, &tok) in cache.tokens.iter().enumerate() {
        let row = grads.embedding.row_mut(tok as usize);
        for (gv, dv) in row.iter_mut().zip(dx.row(i)) {
            *gv += dv;
        }
    }
}

/// Softmax of one logits row, in place.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// Per-position cross-entropy of `targets` under `logits`, and the
/// gradient of `weight * sum(losses)` with respect to the logits.
pub(crate) fn cross_entropy(logits: &Matrix, targets: &[u32], weight: f64) -> (Vec<f64>, Matrix) {
    let mut grad = logits.clone();
    let mut losses = Vec::with_capacity(targets.len());
    for (i, &tgt) in targets.iter().enumerate() {
        let row = grad.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        losses.push(lse - row[tgt as usize]);
        for x in row.iter_mut() {
            *x = (*x - lse).exp() * weight;
        }
        row[tgt as usize] -= weight;
    }
    (losses, grad)
}
