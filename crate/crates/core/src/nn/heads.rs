//! Output heads and their losses. Every loss function accumulates gradients into `grad` when
//! given one and returns the batch-mean loss.

use super::encoder::{encode, encode_backward};
use super::params::{ModelParams, OaHead, OoHead};
use super::tensor::{Matrix, Real};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokenizer::{TokenSequence, IGNORE};

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, computed without forming the probability.
fn bce_with_logit(z: f64, label: bool) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - if label { z } else { 0.0 }
}

fn check_labels(batch: usize, labels: usize) -> Result<()> {
    if batch != labels {
        return Err(Error::Shape(format!("{batch} sequences but {labels} labels")));
    }
    Ok(())
}

fn cls_row<T: Real>(hidden: &Matrix<T>) -> Matrix<T> {
    hidden.rows_slice(0, 1)
}

// ---------------------------------------------------------------------------
// pre-training heads

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PretrainLoss {
    pub mtp: f64,
    pub ncp: f64,
}

impl PretrainLoss {
    /// The two tasks are trained together on their sum.
    pub fn joint(&self) -> f64 {
        self.mtp + self.ncp
    }
}

/// Masked-token logits for the selected rows of one sequence. Returns (loss sum, dL/dlogits).
fn mtp_rows<T: Real>(logits: &Matrix<T>, labels: &[usize], scale: f64) -> (f64, Matrix<T>) {
    let mut total = 0.0;
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let z: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + z.ln();
        total += (log_z - row[label]).to_f64().unwrap_or(f64::NAN);
        let s = T::from_f64c(scale);
        for (c, o) in dlogits.row_mut(r).iter_mut().enumerate() {
            let p = (row[c] - log_z).exp();
            *o = (p - if c == label { T::one() } else { T::zero() }) * s;
        }
    }
    (total, dlogits)
}

fn pretrain_impl<T: Real>(
    params: &ModelParams<T>,
    batch: &[TokenSequence],
    ncp_labels: &[bool],
    weights: (f64, f64),
    mut rng: Option<&mut Rng>,
    mut grad: Option<&mut ModelParams<T>>,
) -> Result<PretrainLoss> {
    check_labels(batch.len(), ncp_labels.len())?;
    if batch.is_empty() {
        return Ok(PretrainLoss::default());
    }
    let cfg = &params.config;
    let n_selected: usize = batch.iter().map(TokenSequence::n_selected).sum();
    let b = batch.len() as f64;
    let mut loss = PretrainLoss::default();
    for (seq, &label) in batch.iter().zip(ncp_labels) {
        let (hidden, cache) = encode(&params.encoder, cfg, seq, rng.as_deref_mut())?;
        let mut dh = Matrix::zeros(hidden.rows(), hidden.cols());

        if weights.0 != 0.0 && n_selected > 0 {
            let rows: Vec<usize> = (0..seq.len()).filter(|&i| seq.mtp_labels[i] != IGNORE).collect();
            if !rows.is_empty() {
                let labels: Vec<usize> = rows.iter().map(|&i| seq.mtp_labels[i] as usize).collect();
                if let Some(&l) = labels.iter().find(|&&l| l >= cfg.vocab_size) {
                    return Err(Error::Shape(format!("masked-token label {l} outside vocabulary")));
                }
                let mut h_sel = Matrix::zeros(rows.len(), cfg.d_model);
                for (r, &i) in rows.iter().enumerate() {
                    h_sel.row_mut(r).copy_from_slice(hidden.row(i));
                }
                let logits = params.mtp.proj.forward(&h_sel);
                let (sum, dlogits) = mtp_rows(&logits, &labels, weights.0 / n_selected as f64);
                loss.mtp += sum / n_selected as f64;
                if let Some(g) = grad.as_deref_mut() {
                    let dsel = params.mtp.proj.backward(&h_sel, &dlogits, &mut g.mtp.proj);
                    for (r, &i) in rows.iter().enumerate() {
                        dh.row_mut(i).copy_from_slice(dsel.row(r));
                    }
                }
            }
        }

        if weights.1 != 0.0 {
            let cls = cls_row(&hidden);
            let pre = params.ncp.pool.forward(&cls);
            let pooled = pre.map(|v| v.tanh());
            let z = params.ncp.out.forward(&pooled).get(0, 0).to_f64().unwrap_or(f64::NAN);
            loss.ncp += bce_with_logit(z, label) / b;
            if let Some(g) = grad.as_deref_mut() {
                let dz = (sigmoid(z) - label as u8 as f64) * weights.1 / b;
                let dz = Matrix::filled(1, 1, T::from_f64c(dz));
                let mut dpooled = params.ncp.out.backward(&pooled, &dz, &mut g.ncp.out);
                for (d, &p) in dpooled.data_mut().iter_mut().zip(pooled.data()) {
                    *d *= T::one() - p * p;
                }
                let dcls = params.ncp.pool.backward(&cls, &dpooled, &mut g.ncp.pool);
                dh.add_block(0, 0, &dcls);
            }
        }

        if let Some(g) = grad.as_deref_mut() {
            encode_backward(&params.encoder, cfg, &cache, &dh, &mut g.encoder);
        }
    }
    Ok(loss)
}

/// Joint masked-token and neighbouring-concept loss over one shared forward pass.
pub fn pretrain_loss<T: Real>(
    params: &ModelParams<T>,
    batch: &[TokenSequence],
    ncp_labels: &[bool],
    rng: Option<&mut Rng>,
    grad: Option<&mut ModelParams<T>>,
) -> Result<PretrainLoss> {
    pretrain_impl(params, batch, ncp_labels, (1.0, 1.0), rng, grad)
}

/// Cross-entropy over the selected positions, averaged over their count across the batch.
/// A batch with nothing selected has loss 0 and contributes no gradient.
pub fn mtp_loss<T: Real>(
    params: &ModelParams<T>,
    batch: &[TokenSequence],
    rng: Option<&mut Rng>,
    grad: Option<&mut ModelParams<T>>,
) -> Result<f64> {
    let labels = vec![false; batch.len()];
    Ok(pretrain_impl(params, batch, &labels, (1.0, 0.0), rng, grad)?.mtp)
}

/// Binary cross-entropy of the `[CLS]`-pooled neighbour logit, averaged over the batch.
pub fn ncp_loss<T: Real>(
    params: &ModelParams<T>,
    batch: &[TokenSequence],
    labels: &[bool],
    rng: Option<&mut Rng>,
    grad: Option<&mut ModelParams<T>>,
) -> Result<f64> {
    Ok(pretrain_impl(params, batch, labels, (0.0, 1.0), rng, grad)?.ncp)
}

/// Probability that each sequence pairs two neighbouring concepts (dropout off).
pub fn ncp_predict<T: Real>(params: &ModelParams<T>, batch: &[TokenSequence]) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|seq| {
            let (hidden, _) = encode(&params.encoder, &params.config, seq, None)?;
            let pooled = params.ncp.pool.forward(&cls_row(&hidden)).map(|v| v.tanh());
            let z = params.ncp.out.forward(&pooled).get(0, 0);
            Ok(sigmoid(z.to_f64().unwrap_or(f64::NAN)))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// object-object head

struct OoForward<T> {
    pre: Matrix<T>,
    act: Matrix<T>,
    logit: f64,
}

fn oo_forward<T: Real>(head: &OoHead<T>, cls: &Matrix<T>) -> OoForward<T> {
    let pre = cls.matmul(&head.w_cls);
    let act = pre.map(|v| v.max(T::zero()));
    let logit = act.matmul(&head.w).get(0, 0).to_f64().unwrap_or(f64::NAN);
    OoForward { pre, act, logit }
}

/// Backward through `ReLU(x·W_cls)·W` given `dL/dlogit`; returns `dL/dx`.
fn relu_head_backward<T: Real>(
    x: &Matrix<T>,
    w_cls: &Matrix<T>,
    w: &Matrix<T>,
    pre: &Matrix<T>,
    act: &Matrix<T>,
    dz: f64,
    g_w_cls: &mut Matrix<T>,
    g_w: &mut Matrix<T>,
) -> Matrix<T> {
    let dz = Matrix::filled(1, 1, T::from_f64c(dz));
    g_w.add_tmatmul(act, &dz);
    let mut dact = dz.matmul_t(w);
    for (d, &p) in dact.data_mut().iter_mut().zip(pre.data()) {
        if p <= T::zero() {
            *d = T::zero();
        }
    }
    g_w_cls.add_tmatmul(x, &dact);
    dact.matmul_t(w_cls)
}

/// `σ(ReLU(h·W_cls)·W)` for one `[CLS]` state.
pub fn oo_head<T: Real>(head: &OoHead<T>, h_cls: &[T]) -> Result<f64> {
    if h_cls.len() != head.w_cls.rows() {
        return Err(Error::Shape(format!(
            "[CLS] state of width {} for a head of width {}",
            h_cls.len(),
            head.w_cls.rows()
        )));
    }
    let x = Matrix::from_vec(1, h_cls.len(), h_cls.to_vec());
    Ok(sigmoid(oo_forward(head, &x).logit))
}

/// Batch-mean binary cross-entropy of the object-group head.
pub fn oo_loss<T: Real>(
    params: &ModelParams<T>,
    batch: &[TokenSequence],
    labels: &[bool],
    mut rng: Option<&mut Rng>,
    mut grad: Option<&mut ModelParams<T>>,
) -> Result<f64> {
    check_labels(batch.len(), labels.len())?;
    let b = batch.len() as f64;
    let mut loss = 0.0;
    for (seq, &label) in batch.iter().zip(labels) {
        let (hidden, cache) = encode(&params.encoder, &params.config, seq, rng.as_deref_mut())?;
        let cls = cls_row(&hidden);
        let f = oo_forward(&params.oo, &cls);
        loss += bce_with_logit(f.logit, label) / b;
        if let Some(g) = grad.as_deref_mut() {
            let dz = (sigmoid(f.logit) - label as u8 as f64) / b;
            let dcls = relu_head_backward(
                &cls,
                &params.oo.w_cls,
                &params.oo.w,
                &f.pre,
                &f.act,
                dz,
                &mut g.oo.w_cls,
                &mut g.oo.w,
            );
            let mut dh = Matrix::zeros(hidden.rows(), hidden.cols());
            dh.set_block(0, 0, &dcls);
            encode_backward(&params.encoder, &params.config, &cache, &dh, &mut g.encoder);
        }
    }
    Ok(loss)
}

pub fn oo_predict<T: Real>(params: &ModelParams<T>, batch: &[TokenSequence]) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|seq| {
            let (hidden, _) = encode(&params.encoder, &params.config, seq, None)?;
            Ok(sigmoid(oo_forward(&params.oo, &cls_row(&hidden)).logit))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// object-attribute head over two towers

fn concat<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut c = Matrix::zeros(1, a.cols() + b.cols());
    c.set_block(0, 0, a);
    c.set_block(0, a.cols(), b);
    c
}

/// `σ(ReLU([h1;h2]·W_cls)·W)`; the concatenation is ordered, object state first.
pub fn oa_head<T: Real>(head: &OaHead<T>, h_object: &[T], h_attribute: &[T]) -> Result<f64> {
    if h_object.len() + h_attribute.len() != head.w_cls.rows() || h_object.len() != h_attribute.len() {
        return Err(Error::Shape(format!(
            "[CLS] states of widths {} and {} for a head expecting {}",
            h_object.len(),
            h_attribute.len(),
            head.w_cls.rows()
        )));
    }
    let x = concat(
        &Matrix::from_vec(1, h_object.len(), h_object.to_vec()),
        &Matrix::from_vec(1, h_attribute.len(), h_attribute.to_vec()),
    );
    let pre = x.matmul(&head.w_cls);
    let act = pre.map(|v| v.max(T::zero()));
    Ok(sigmoid(act.matmul(&head.w).get(0, 0).to_f64().unwrap_or(f64::NAN)))
}

fn check_towers<T: Real>(object: &ModelParams<T>, attribute: &ModelParams<T>) -> Result<()> {
    if object.config.d_model != attribute.config.d_model {
        return Err(Error::Shape(format!(
            "tower widths differ: {} vs {}",
            object.config.d_model, attribute.config.d_model
        )));
    }
    Ok(())
}

/// Twin-tower loss. The head lives in the object model; each tower gets its own gradients.
#[allow(clippy::too_many_arguments)]
pub fn oa_loss<T: Real>(
    object: &ModelParams<T>,
    attribute: &ModelParams<T>,
    object_seqs: &[TokenSequence],
    attribute_seqs: &[TokenSequence],
    labels: &[bool],
    mut rng: Option<&mut Rng>,
    mut grads: Option<(&mut ModelParams<T>, &mut ModelParams<T>)>,
) -> Result<f64> {
    check_towers(object, attribute)?;
    check_labels(object_seqs.len(), labels.len())?;
    check_labels(attribute_seqs.len(), labels.len())?;
    let d = object.config.d_model;
    let b = labels.len() as f64;
    let head = &object.oa;
    let mut loss = 0.0;
    for ((os, at), &label) in object_seqs.iter().zip(attribute_seqs).zip(labels) {
        let (h1, c1) = encode(&object.encoder, &object.config, os, rng.as_deref_mut())?;
        let (h2, c2) = encode(&attribute.encoder, &attribute.config, at, rng.as_deref_mut())?;
        let x = concat(&cls_row(&h1), &cls_row(&h2));
        let pre = x.matmul(&head.w_cls);
        let act = pre.map(|v| v.max(T::zero()));
        let logit = act.matmul(&head.w).get(0, 0).to_f64().unwrap_or(f64::NAN);
        loss += bce_with_logit(logit, label) / b;
        if let Some((go, ga)) = grads.as_mut() {
            let dz = (sigmoid(logit) - label as u8 as f64) / b;
            let dx = relu_head_backward(
                &x,
                &head.w_cls,
                &head.w,
                &pre,
                &act,
                dz,
                &mut go.oa.w_cls,
                &mut go.oa.w,
            );
            let mut dh1 = Matrix::zeros(h1.rows(), d);
            dh1.set_block(0, 0, &dx.block(0, 1, 0, d));
            encode_backward(&object.encoder, &object.config, &c1, &dh1, &mut go.encoder);
            let mut dh2 = Matrix::zeros(h2.rows(), d);
            dh2.set_block(0, 0, &dx.block(0, 1, d, d));
            encode_backward(&attribute.encoder, &attribute.config, &c2, &dh2, &mut ga.encoder);
        }
    }
    Ok(loss)
}

pub fn oa_predict<T: Real>(
    object: &ModelParams<T>,
    attribute: &ModelParams<T>,
    object_seqs: &[TokenSequence],
    attribute_seqs: &[TokenSequence],
) -> Result<Vec<f64>> {
    check_towers(object, attribute)?;
    check_labels(object_seqs.len(), attribute_seqs.len())?;
    object_seqs
        .iter()
        .zip(attribute_seqs)
        .map(|(os, at)| {
            let (h1, _) = encode(&object.encoder, &object.config, os, None)?;
            let (h2, _) = encode(&attribute.encoder, &attribute.config, at, None)?;
            oa_head(&object.oa, h1.row(0), h2.row(0))
        })
        .collect()
}
