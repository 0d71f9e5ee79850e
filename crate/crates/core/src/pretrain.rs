//! Joint masked-token / neighbouring-concept pre-training of one encoder per side.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fca::{ConceptLattice, NegativeSampler};
use crate::metrics::{evaluate, MetricReport, ScoredSet};
use crate::nn::checkpoint::save_checkpoint;
use crate::nn::heads::{ncp_predict, pretrain_loss, PretrainLoss};
use crate::nn::optim::everything;
use crate::nn::{Adam, ModelParams};
use crate::rng::{derive_seed, seeded};
use crate::tokenizer::{default_max_len, encode_pair, mask_with_rng, Side, TokenSequence, Vocab};
use crate::training::{shuffled_batches, write_csv, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSetOptions {
    pub mask_rate: f64,
    pub holdout_fraction: f64,
    /// Sequence length; defaults to twice the longest extent (or intent) plus three, capped.
    pub max_len: Option<usize>,
    pub seed: u64,
}

impl Default for PretrainSetOptions {
    fn default() -> Self {
        PretrainSetOptions {
            mask_rate: 0.15,
            holdout_fraction: 0.0,
            max_len: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSample {
    /// Masked pair sequence; masks are drawn once when the set is built.
    pub seq: TokenSequence,
    pub ncp_label: bool,
    /// Concept ids in presentation order.
    pub pair: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct PretrainSet {
    pub side: Side,
    pub max_len: usize,
    pub train: Vec<PretrainSample>,
    pub heldout: Vec<PretrainSample>,
    /// Cover pairs left out because the two sides do not fit in `max_len`.
    pub skipped_pairs: usize,
}

fn side_entities(lattice: &ConceptLattice, side: Side, c: usize, map: Option<&[u32]>) -> Vec<u32> {
    let ids = match side {
        Side::Object => lattice.extent_ids(c),
        Side::Attribute => lattice.intent_ids(c),
    };
    match map {
        Some(m) => ids.into_iter().map(|i| m[i as usize]).collect(),
        None => ids,
    }
}

/// Balanced neighbour / non-neighbour pair sequences from a lattice.
///
/// Positives are the cover pairs, each shown in one seeded orientation. Negatives are as many
/// ordered non-neighbour pairs. Held-out samples are chosen by unordered pair, per class, so no
/// held-out pair is ever seen in training. `entity_map` renames lattice entity ids into the
/// vocabulary's id space when the two differ.
pub fn build_pretrain_set(
    lattice: &ConceptLattice,
    side: Side,
    vocab: &Vocab,
    entity_map: Option<&[u32]>,
    opts: &PretrainSetOptions,
) -> Result<PretrainSet> {
    if lattice.len() < 2 {
        return Err(Error::InvalidContext(format!(
            "pre-training needs at least 2 concepts, lattice has {}",
            lattice.len()
        )));
    }
    if vocab.side != side {
        return Err(Error::VocabMismatch(format!(
            "{} vocabulary for {} pre-training",
            vocab.side.as_str(),
            side.as_str()
        )));
    }
    if !(0.0..1.0).contains(&opts.holdout_fraction) || !(0.0..=1.0).contains(&opts.mask_rate) {
        return Err(Error::Config("holdout_fraction must be in [0, 1), mask_rate in [0, 1]".into()));
    }
    let entities: Vec<Vec<u32>> = (0..lattice.len())
        .map(|c| side_entities(lattice, side, c, entity_map))
        .collect();
    let longest = entities.iter().map(Vec::len).max().unwrap_or(0);
    let max_len = opts.max_len.unwrap_or_else(|| default_max_len(longest));
    let fits = |a: usize, b: usize| entities[a].len() + entities[b].len() + 3 <= max_len;

    let mut pair_rng = seeded(derive_seed(opts.seed, "pairs"));
    let mut pairs: Vec<((usize, usize), bool)> = Vec::new();
    let mut skipped_pairs = 0;
    for &(lo, hi) in &lattice.covers {
        if !fits(lo, hi) {
            skipped_pairs += 1;
            continue;
        }
        let p = if pair_rng.gen_bool(0.5) { (lo, hi) } else { (hi, lo) };
        pairs.push((p, true));
    }
    if skipped_pairs > 0 {
        log::warn!("{skipped_pairs} neighbour pairs exceed max_len {max_len} and were skipped");
    }
    let n_pos = pairs.len();
    let negatives = NegativeSampler::new(lattice).sample_filtered(n_pos, true, &mut pair_rng, fits);
    pairs.extend(negatives.into_iter().map(|p| (p, false)));

    // hold out whole unordered pairs, the same fraction of each class
    let mut held = BTreeSet::new();
    if opts.holdout_fraction > 0.0 {
        let mut hold_rng = seeded(derive_seed(opts.seed, "holdout"));
        for label in [true, false] {
            let mut groups: Vec<(usize, usize)> = pairs
                .iter()
                .filter(|(_, l)| *l == label)
                .map(|&((a, b), _)| (a.min(b), a.max(b)))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            groups.shuffle(&mut hold_rng);
            let k = (opts.holdout_fraction * groups.len() as f64).ceil() as usize;
            held.extend(groups.into_iter().take(k));
        }
    }

    let mut mask_rng = seeded(derive_seed(opts.seed, "mask"));
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for ((a, b), label) in pairs {
        let seq = encode_pair(vocab, &entities[a], &entities[b], max_len)?;
        let (seq, _) = mask_with_rng(&seq, vocab, opts.mask_rate, &mut mask_rng);
        let sample = PretrainSample {
            seq,
            ncp_label: label,
            pair: (a, b),
        };
        if held.contains(&(a.min(b), a.max(b))) {
            heldout.push(sample);
        } else {
            train.push(sample);
        }
    }
    Ok(PretrainSet {
        side,
        max_len,
        train,
        heldout,
        skipped_pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mtp_loss: f64,
    pub ncp_loss: f64,
    pub joint: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutRecord {
    pub epoch: usize,
    pub mtp_loss: f64,
    pub ncp_loss: f64,
    pub f1: f64,
    pub threshold: f64,
    pub auc: Option<f64>,
    pub aupr: Option<f64>,
}

/// Where a pre-training run writes `<name>.ckpt`, `<name>_loss.csv` and `<name>_heldout.csv`.
#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub dir: PathBuf,
    pub name: String,
    /// Extra checkpoint metadata (side, vocabulary, ...); `epoch` is added per save.
    pub meta: serde_json::Value,
}

impl PretrainOutput {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(format!("{}.ckpt", self.name))
    }

    pub fn loss_path(&self) -> PathBuf {
        self.dir.join(format!("{}_loss.csv", self.name))
    }

    pub fn heldout_path(&self) -> PathBuf {
        self.dir.join(format!("{}_heldout.csv", self.name))
    }

    fn save(&self, params: &ModelParams<f32>, epoch: usize) -> Result<()> {
        let mut meta = self.meta.clone();
        if let Some(obj) = meta.as_object_mut() {
            obj.insert("epoch".into(), epoch.into());
        }
        save_checkpoint(params, &meta, self.checkpoint_path())
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: ModelParams<f32>,
    pub curve: Vec<EpochRecord>,
    pub heldout: Vec<HeldoutRecord>,
}

fn split(samples: &[PretrainSample]) -> (Vec<TokenSequence>, Vec<bool>) {
    samples.iter().map(|s| (s.seq.clone(), s.ncp_label)).unzip()
}

/// Neighbour-prediction metrics of `params` on a sample set.
pub fn eval_ncp_heldout(params: &ModelParams<f32>, samples: &[PretrainSample]) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Empty("no held-out samples to evaluate".into()));
    }
    let (seqs, labels) = split(samples);
    let scores = ncp_predict(params, &seqs)?;
    evaluate(&ScoredSet::new(scores, labels)?)
}

fn heldout_record(params: &ModelParams<f32>, samples: &[PretrainSample], epoch: usize) -> Result<HeldoutRecord> {
    let (seqs, labels) = split(samples);
    let loss = pretrain_loss(params, &seqs, &labels, None, None)?;
    let report = eval_ncp_heldout(params, samples)?;
    Ok(HeldoutRecord {
        epoch,
        mtp_loss: loss.mtp,
        ncp_loss: loss.ncp,
        f1: report.f1,
        threshold: report.threshold,
        auc: report.auc,
        aupr: report.aupr,
    })
}

/// Train `params` on both tasks at once (loss = sum of the two).
///
/// With an output directory, the checkpoint is rewritten after every epoch together with the
/// loss curves. A non-finite loss stops the run with [`Error::Diverged`]; the checkpoint on disk
/// is then the last good one.
pub fn run_pretrain(
    mut params: ModelParams<f32>,
    set: &PretrainSet,
    cfg: &TrainConfig,
    out: Option<&PretrainOutput>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if set.train.is_empty() {
        return Err(Error::Empty("no pre-training samples".into()));
    }
    if let Some(o) = out {
        std::fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
        o.save(&params, 0)?;
    }
    let mut opt = Adam::new(cfg.adam.clone(), &params);
    let mut shuffle_rng = seeded(derive_seed(cfg.seed, "shuffle"));
    let mut dropout_rng = seeded(derive_seed(cfg.seed, "dropout"));
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut heldout = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut sum = PretrainLoss::default();
        for batch in shuffled_batches(set.train.len(), cfg.batch_size, &mut shuffle_rng) {
            let seqs: Vec<TokenSequence> = batch.iter().map(|&i| set.train[i].seq.clone()).collect();
            let labels: Vec<bool> = batch.iter().map(|&i| set.train[i].ncp_label).collect();
            let mut grad = params.zeros_like();
            let l = pretrain_loss(&params, &seqs, &labels, Some(&mut dropout_rng), Some(&mut grad))?;
            if !l.joint().is_finite() || !grad.all_finite() {
                return Err(diverged(epoch, out));
            }
            opt.step(&mut params, &grad, everything);
            let w = batch.len() as f64 / set.train.len() as f64;
            sum.mtp += l.mtp * w;
            sum.ncp += l.ncp * w;
        }
        if !params.all_finite() {
            return Err(diverged(epoch, out));
        }
        curve.push(EpochRecord {
            epoch,
            mtp_loss: sum.mtp,
            ncp_loss: sum.ncp,
            joint: sum.joint(),
        });
        if !set.heldout.is_empty() {
            heldout.push(heldout_record(&params, &set.heldout, epoch)?);
        }
        log::info!(
            "pretrain {:?} epoch {epoch}: mtp {:.4} ncp {:.4}",
            set.side,
            sum.mtp,
            sum.ncp
        );
        if let Some(o) = out {
            o.save(&params, epoch)?;
            write_csv(&o.loss_path(), &curve)?;
            if !heldout.is_empty() {
                write_csv(&o.heldout_path(), &heldout)?;
            }
        }
    }
    Ok(PretrainOutcome {
        params,
        curve,
        heldout,
    })
}

fn diverged(epoch: usize, out: Option<&PretrainOutput>) -> Error {
    log::error!("non-finite loss at epoch {epoch}; keeping the checkpoint of epoch {}", epoch - 1);
    Error::Diverged {
        epoch,
        last_good_epoch: out.map(|_| epoch - 1),
    }
}

/// Read a loss curve written by [`run_pretrain`].
pub fn read_loss_curve(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
