//! Transformer encoder without position embeddings: forward pass with cache and backward pass.
//!
//! Each sequence is processed on its own. Positions are first put into a canonical order
//! (real before padding, then segment, then token id) and results are mapped back afterwards.
//! Since nothing in the network depends on position, this does not change the mathematical
//! output, but it makes every floating-point reduction run in the same order for any
//! permutation of the input, so permutation equivariance holds bit for bit.
//!
//! Padding rows are masked out of attention, so they can never influence a real row. They are
//! not computed at all and come back as zero rows.

use rand::Rng as _;

use super::config::EncoderConfig;
use super::params::{EncoderParams, LayerNorm, LayerParams};
use super::tensor::{Matrix, Real};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokenizer::TokenSequence;

pub(crate) const LN_EPS: f64 = 1e-5;

/// Cached intermediates of one layer norm.
#[derive(Clone, Debug)]
struct NormCache<T> {
    xhat: Matrix<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Real>(x: &Matrix<T>, ln: &LayerNorm<T>) -> (Matrix<T>, NormCache<T>) {
    let (rows, d) = x.shape();
    let eps = T::from_f64c(LN_EPS);
    let inv_d = T::one() / T::from_usize(d).unwrap();
    let mut xhat = Matrix::zeros(rows, d);
    let mut y = Matrix::zeros(rows, d);
    let mut rstd = Vec::with_capacity(rows);
    for i in 0..rows {
        let r = x.row(i);
        let mean = r.iter().copied().sum::<T>() * inv_d;
        let var = r.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let s = T::one() / (var + eps).sqrt();
        rstd.push(s);
        for j in 0..d {
            let xh = (r[j] - mean) * s;
            xhat.set(i, j, xh);
            y.set(i, j, xh * ln.gamma.get(0, j) + ln.beta.get(0, j));
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward<T: Real>(
    dy: &Matrix<T>,
    cache: &NormCache<T>,
    ln: &LayerNorm<T>,
    grad: &mut LayerNorm<T>,
) -> Matrix<T> {
    let (rows, d) = dy.shape();
    let inv_d = T::one() / T::from_usize(d).unwrap();
    let mut dx = Matrix::zeros(rows, d);
    let mut dxhat = vec![T::zero(); d];
    for i in 0..rows {
        let xh = cache.xhat.row(i);
        let g = dy.row(i);
        let (mut mean_d, mut mean_dx) = (T::zero(), T::zero());
        for j in 0..d {
            grad.gamma.data_mut()[j] += g[j] * xh[j];
            grad.beta.data_mut()[j] += g[j];
            dxhat[j] = g[j] * ln.gamma.get(0, j);
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
        }
        mean_d *= inv_d;
        mean_dx *= inv_d;
        let s = cache.rstd[i];
        for j in 0..d {
            dx.set(i, j, s * (dxhat[j] - mean_d - xh[j] * mean_dx));
        }
    }
    dx
}

fn gelu_consts<T: Real>() -> (T, T) {
    (T::from_f64c((2.0 / std::f64::consts::PI).sqrt()), T::from_f64c(0.044715))
}

/// Tanh approximation of GELU.
fn gelu<T: Real>(x: T) -> T {
    let (c, a) = gelu_consts::<T>();
    let half = T::from_f64c(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let (c, a) = gelu_consts::<T>();
    let half = T::from_f64c(0.5);
    let three = T::from_f64c(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// Inverted dropout mask (`0` or `1/(1-p)` per entry); `None` when inactive.
fn dropout_mask<T: Real>(rows: usize, cols: usize, p: f64, rng: Option<&mut Rng>) -> Option<Matrix<T>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::from_f64c(1.0 / (1.0 - p));
    Some(Matrix::from_fn(rows, cols, |_, _| {
        if rng.gen::<f64>() < p {
            T::zero()
        } else {
            keep
        }
    }))
}

fn apply_mask<T: Real>(x: &mut Matrix<T>, mask: &Option<Matrix<T>>) {
    if let Some(m) = mask {
        for (a, &b) in x.data_mut().iter_mut().zip(m.data()) {
            *a *= b;
        }
    }
}

#[derive(Clone, Debug)]
struct LayerCache<T> {
    input: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    /// attention probabilities per head, `rows × n_real`
    probs: Vec<Matrix<T>>,
    ctx: Matrix<T>,
    attn_drop: Option<Matrix<T>>,
    norm1: NormCache<T>,
    h1: Matrix<T>,
    ff_pre: Matrix<T>,
    ff_act: Matrix<T>,
    ff_drop: Option<Matrix<T>>,
    norm2: NormCache<T>,
}

/// Everything the backward pass needs for one sequence.
#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    /// `order[i]` is the original position of canonical row `i`
    order: Vec<usize>,
    ids: Vec<u32>,
    segments: Vec<u8>,
    n_real: usize,
    emb_norm: NormCache<T>,
    emb_drop: Option<Matrix<T>>,
    layers: Vec<LayerCache<T>>,
}

/// Reject sequences the encoder cannot consume.
pub fn check_sequence(config: &EncoderConfig, seq: &TokenSequence) -> Result<()> {
    let len = seq.len();
    if seq.segments.len() != len || seq.attention_mask.len() != len || seq.mtp_labels.len() != len {
        return Err(Error::Shape("token sequence fields differ in length".into()));
    }
    if len == 0 || len > config.max_len {
        return Err(Error::Shape(format!(
            "sequence length {len} outside 1..={}",
            config.max_len
        )));
    }
    if seq.attention_mask[0] != 1 {
        return Err(Error::Shape("first position must be a real token".into()));
    }
    if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::Shape(format!(
            "token id {id} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    if seq.segments.iter().any(|&s| s > 1) || seq.attention_mask.iter().any(|&m| m > 1) {
        return Err(Error::Shape("segment ids and attention mask must be 0 or 1".into()));
    }
    Ok(())
}

fn canonical_order(seq: &TokenSequence) -> Vec<usize> {
    let mut order: Vec<usize> = (0..seq.len()).collect();
    order.sort_by_key(|&i| (1 - seq.attention_mask[i], seq.segments[i], seq.ids[i]));
    order
}

fn attention<T: Real>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    n_heads: usize,
    n_real: usize,
) -> (Vec<Matrix<T>>, Matrix<T>) {
    let (rows, d) = q.shape();
    let dh = d / n_heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut ctx = Matrix::zeros(rows, d);
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let c0 = h * dh;
        let mut p = Matrix::zeros(rows, n_real);
        for i in 0..rows {
            let qi = &q.row(i)[c0..c0 + dh];
            let pr = p.row_mut(i);
            let mut max = T::neg_infinity();
            for (j, out) in pr.iter_mut().enumerate() {
                let kj = &k.row(j)[c0..c0 + dh];
                let s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                *out = s;
                max = max.max(s);
            }
            let mut z = T::zero();
            for out in pr.iter_mut() {
                *out = (*out - max).exp();
                z += *out;
            }
            for out in pr.iter_mut() {
                *out = *out / z;
            }
            let cr = &mut ctx.row_mut(i)[c0..c0 + dh];
            for (j, &pij) in p.row(i).iter().enumerate() {
                for (c, &vv) in cr.iter_mut().zip(&v.row(j)[c0..c0 + dh]) {
                    *c += pij * vv;
                }
            }
        }
        probs.push(p);
    }
    (probs, ctx)
}

fn layer_forward<T: Real>(
    lp: &LayerParams<T>,
    config: &EncoderConfig,
    x: Matrix<T>,
    n_real: usize,
    mut rng: Option<&mut Rng>,
) -> (Matrix<T>, LayerCache<T>) {
    let q = lp.query.forward(&x);
    let k = lp.key.forward(&x);
    let v = lp.value.forward(&x);
    let (probs, ctx) = attention(&q, &k, &v, config.n_heads, n_real);
    let mut a = lp.attn_out.forward(&ctx);
    let attn_drop = dropout_mask(a.rows(), a.cols(), config.dropout, rng.as_deref_mut());
    apply_mask(&mut a, &attn_drop);
    a.add_assign(&x);
    let (h1, norm1) = layer_norm(&a, &lp.attn_norm);
    let ff_pre = lp.ff_in.forward(&h1);
    let ff_act = ff_pre.map(gelu);
    let mut o = lp.ff_out.forward(&ff_act);
    let ff_drop = dropout_mask(o.rows(), o.cols(), config.dropout, rng);
    apply_mask(&mut o, &ff_drop);
    o.add_assign(&h1);
    let (out, norm2) = layer_norm(&o, &lp.ff_norm);
    let cache = LayerCache {
        input: x,
        q,
        k,
        v,
        probs,
        ctx,
        attn_drop,
        norm1,
        h1,
        ff_pre,
        ff_act,
        ff_drop,
        norm2,
    };
    (out, cache)
}

fn layer_backward<T: Real>(
    lp: &LayerParams<T>,
    config: &EncoderConfig,
    cache: &LayerCache<T>,
    n_real: usize,
    dout: &Matrix<T>,
    grad: &mut LayerParams<T>,
) -> Matrix<T> {
    // second residual block
    let dr2 = layer_norm_backward(dout, &cache.norm2, &lp.ff_norm, &mut grad.ff_norm);
    let mut do_ = dr2.clone();
    apply_mask(&mut do_, &cache.ff_drop);
    let dact = lp.ff_out.backward(&cache.ff_act, &do_, &mut grad.ff_out);
    let mut dpre = dact;
    for (g, &x) in dpre.data_mut().iter_mut().zip(cache.ff_pre.data()) {
        *g *= gelu_grad(x);
    }
    let mut dh1 = lp.ff_in.backward(&cache.h1, &dpre, &mut grad.ff_in);
    dh1.add_assign(&dr2);

    // first residual block
    let dr1 = layer_norm_backward(&dh1, &cache.norm1, &lp.attn_norm, &mut grad.attn_norm);
    let mut da = dr1.clone();
    apply_mask(&mut da, &cache.attn_drop);
    let dctx = lp.attn_out.backward(&cache.ctx, &da, &mut grad.attn_out);

    let (rows, d) = dctx.shape();
    let dh = d / config.n_heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut dq = Matrix::zeros(rows, d);
    let mut dk = Matrix::zeros(rows, d);
    let mut dv = Matrix::zeros(rows, d);
    for (h, p) in cache.probs.iter().enumerate() {
        let c0 = h * dh;
        for i in 0..rows {
            let dci = &dctx.row(i)[c0..c0 + dh];
            let pi = p.row(i);
            // dP_ij = dctx_i · v_j, then softmax backward
            let mut dp = vec![T::zero(); n_real];
            let mut dot = T::zero();
            for j in 0..n_real {
                let vj = &cache.v.row(j)[c0..c0 + dh];
                dp[j] = dci.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                dot += dp[j] * pi[j];
                let dvj = &mut dv.row_mut(j)[c0..c0 + dh];
                for (o, &g) in dvj.iter_mut().zip(dci) {
                    *o += pi[j] * g;
                }
            }
            let qi = &cache.q.row(i)[c0..c0 + dh];
            for j in 0..n_real {
                let ds = pi[j] * (dp[j] - dot) * scale;
                let kj = &cache.k.row(j)[c0..c0 + dh];
                for (o, &kv) in dq.row_mut(i)[c0..c0 + dh].iter_mut().zip(kj) {
                    *o += ds * kv;
                }
                for (o, &qv) in dk.row_mut(j)[c0..c0 + dh].iter_mut().zip(qi) {
                    *o += ds * qv;
                }
            }
        }
    }
    let mut dx = dr1;
    dx.add_assign(&lp.query.backward(&cache.input, &dq, &mut grad.query));
    dx.add_assign(&lp.key.backward(&cache.input, &dk, &mut grad.key));
    dx.add_assign(&lp.value.backward(&cache.input, &dv, &mut grad.value));
    dx
}

/// Hidden states (`len × d_model`, original position order) for one sequence.
///
/// Dropout is active only when `rng` is given.
pub fn encode<T: Real>(
    params: &EncoderParams<T>,
    config: &EncoderConfig,
    seq: &TokenSequence,
    mut rng: Option<&mut Rng>,
) -> Result<(Matrix<T>, EncoderCache<T>)> {
    check_sequence(config, seq)?;
    let order = canonical_order(seq);
    let n_real = seq.real_len();
    let ids: Vec<u32> = order.iter().map(|&i| seq.ids[i]).collect();
    let segments: Vec<u8> = order.iter().map(|&i| seq.segments[i]).collect();
    let d = config.d_model;
    let rows = n_real;

    let mut x = Matrix::zeros(rows, d);
    for i in 0..rows {
        let t = params.token_emb.row(ids[i] as usize);
        let s = params.segment_emb.row(segments[i] as usize);
        for ((o, &a), &b) in x.row_mut(i).iter_mut().zip(t).zip(s) {
            *o = a + b;
        }
    }
    let (mut h, emb_norm) = layer_norm(&x, &params.emb_norm);
    let emb_drop = dropout_mask(rows, d, config.dropout, rng.as_deref_mut());
    apply_mask(&mut h, &emb_drop);

    let mut layers = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let (out, cache) = layer_forward(lp, config, h, n_real, rng.as_deref_mut());
        layers.push(cache);
        h = out;
    }

    let mut hidden = Matrix::zeros(seq.len(), d);
    for (i, &orig) in order.iter().take(rows).enumerate() {
        hidden.row_mut(orig).copy_from_slice(h.row(i));
    }
    let cache = EncoderCache {
        order,
        ids,
        segments,
        n_real,
        emb_norm,
        emb_drop,
        layers,
    };
    Ok((hidden, cache))
}

/// Accumulate parameter gradients given `dL/d hidden` in original position order.
pub fn encode_backward<T: Real>(
    params: &EncoderParams<T>,
    config: &EncoderConfig,
    cache: &EncoderCache<T>,
    d_hidden: &Matrix<T>,
    grad: &mut EncoderParams<T>,
) {
    let rows = cache.n_real;
    let d = config.d_model;
    let mut dh = Matrix::zeros(rows, d);
    for (i, &orig) in cache.order.iter().take(rows).enumerate() {
        dh.row_mut(i).copy_from_slice(d_hidden.row(orig));
    }
    for (l, lc) in cache.layers.iter().enumerate().rev() {
        dh = layer_backward(&params.layers[l], config, lc, cache.n_real, &dh, &mut grad.layers[l]);
    }
    apply_mask(&mut dh, &cache.emb_drop);
    let dx = layer_norm_backward(&dh, &cache.emb_norm, &params.emb_norm, &mut grad.emb_norm);
    for i in 0..rows {
        let g = dx.row(i);
        for (o, &v) in grad.token_emb.row_mut(cache.ids[i] as usize).iter_mut().zip(g) {
            *o += v;
        }
        for (o, &v) in grad.segment_emb.row_mut(cache.segments[i] as usize).iter_mut().zip(g) {
            *o += v;
        }
    }
}
