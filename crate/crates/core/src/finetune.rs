//! Object-object and object-attribute link prediction: candidate generation, fine-tuning of
//! pre-trained encoders, and scored prediction reports.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bitset::Bitset;
use crate::context::{BipartiteContext, SplitPair};
use crate::error::{Error, Result};
use crate::metrics::ScoredSet;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::encoder::encode;
use crate::nn::heads::{oa_head, oa_loss, oo_loss, oo_predict};
use crate::nn::optim::{everything, heads_only};
use crate::nn::{Adam, ModelParams};
use crate::rng::{derive_seed, seeded};
use crate::tokenizer::{encode_single, TokenSequence, Vocab};
use crate::training::{shuffled_batches, TrainConfig};

/// Where the labels of the training samples come from. Test samples are always the held-out
/// share of the candidates, labelled by the target network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainLabels {
    /// Links already present in the input network are the positives; the training share of the
    /// candidates supplies the negatives. No target label is used for training.
    #[default]
    Input,
    /// The training share of the candidates, labelled by the target network.
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Largest object group for the object-object task.
    pub max_group: usize,
    /// Fraction of candidates kept aside for evaluation, per class.
    pub test_fraction: f64,
    /// Downsample the larger class of the training part to the size of the smaller one.
    pub balance: bool,
    /// Refuse to enumerate more candidates than this.
    pub max_candidates: usize,
    pub train_labels: TrainLabels,
    pub seed: u64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            max_group: 2,
            test_fraction: 0.2,
            balance: true,
            max_candidates: 5_000_000,
            train_labels: TrainLabels::Input,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OoSample {
    /// Object ids, ascending.
    pub group: Vec<u32>,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OaSample {
    pub object: u32,
    /// Attribute id in the target network.
    pub attribute: u32,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSplit<S> {
    pub train: Vec<S>,
    pub test: Vec<S>,
}

trait Labelled {
    fn label(&self) -> bool;
}

impl Labelled for OoSample {
    fn label(&self) -> bool {
        self.label
    }
}

impl Labelled for OaSample {
    fn label(&self) -> bool {
        self.label
    }
}

trait Relabel {
    fn with_label(self, label: bool) -> Self;
}

impl Relabel for OoSample {
    fn with_label(self, label: bool) -> Self {
        OoSample { label, ..self }
    }
}

impl Relabel for OaSample {
    fn with_label(self, label: bool) -> Self {
        OaSample { label, ..self }
    }
}

/// Seeded per-class train/test split of the candidates, then assembly of the training part from
/// `input_links` or the candidates' own labels, with optional balancing.
fn split_and_balance<S: Labelled + Relabel + Clone>(
    all: Vec<S>,
    input_links: Vec<S>,
    opts: &SampleOptions,
) -> Result<SampleSplit<S>> {
    if !(0.0..1.0).contains(&opts.test_fraction) {
        return Err(Error::Config(format!(
            "test_fraction {} outside [0, 1)",
            opts.test_fraction
        )));
    }
    let mut rng = seeded(derive_seed(opts.seed, "candidate-split"));
    let (mut pos, mut neg): (Vec<S>, Vec<S>) = all.into_iter().partition(Labelled::label);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let cut = |v: &Vec<S>| (opts.test_fraction * v.len() as f64).round() as usize;
    let (kp, kn) = (cut(&pos), cut(&neg));
    let mut test: Vec<S> = pos.drain(..kp).chain(neg.drain(..kn)).collect();
    if opts.train_labels == TrainLabels::Input {
        // every remaining candidate is unlinked in the input, whatever the target says
        let mut rest: Vec<S> = pos.into_iter().chain(neg).map(|s| s.with_label(false)).collect();
        rest.shuffle(&mut rng);
        neg = rest;
        pos = input_links;
        pos.shuffle(&mut rng);
    }
    if opts.balance {
        let keep = pos.len().min(neg.len());
        log::debug!(
            "balancing: keeping {keep} of {} positives and {} negatives",
            pos.len(),
            neg.len()
        );
        pos.truncate(keep);
        neg.truncate(keep);
    }
    let mut train: Vec<S> = pos.into_iter().chain(neg).collect();
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(SampleSplit { train, test })
}

fn object_rows(ctx: &BipartiteContext, attribute_map: Option<&[u32]>, n_attrs: usize) -> Vec<Bitset> {
    (0..ctx.n_objects() as u32)
        .map(|u| {
            let ids: Vec<usize> = ctx
                .attributes_of(u)
                .map(|v| attribute_map.map_or(v, |m| m[v as usize]) as usize)
                .collect();
            Bitset::from_ids(n_attrs, ids)
        })
        .collect()
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn for_each_group(n: usize, max_group: usize, f: &mut impl FnMut(&[u32])) {
    fn rec(start: u32, n: u32, left: usize, cur: &mut Vec<u32>, f: &mut impl FnMut(&[u32])) {
        for u in start..n {
            cur.push(u);
            if cur.len() >= 2 {
                f(cur);
            }
            if left > 1 {
                rec(u + 1, n, left - 1, cur, f);
            }
            cur.pop();
        }
    }
    rec(0, n as u32, max_group, &mut Vec::with_capacity(max_group), f);
}

/// Object groups of size 2..=`max_group` with no common attribute in the input network,
/// labelled by whether they have one in the target network. With [`TrainLabels::Input`] the
/// training positives are the groups that already share an attribute in the input.
pub fn gen_oo_samples(split: &SplitPair, opts: &SampleOptions) -> Result<SampleSplit<OoSample>> {
    if opts.max_group < 2 {
        return Err(Error::Config("max_group must be at least 2".into()));
    }
    let n = split.target.n_objects();
    let total: usize = (2..=opts.max_group).map(|k| binomial(n, k)).fold(0, usize::saturating_add);
    if total > opts.max_candidates {
        return Err(Error::BudgetExceeded {
            what: format!("{total} object groups of size <= {} over {n} objects", opts.max_group),
            partial: 0,
        });
    }
    let m = split.target.n_attributes();
    let input = object_rows(&split.input, Some(&split.attribute_to_target), m);
    let target = object_rows(&split.target, None, m);
    let common = |rows: &[Bitset], g: &[u32]| {
        let mut acc = rows[g[0] as usize].clone();
        for &u in &g[1..] {
            acc.intersect_with(&rows[u as usize]);
        }
        !acc.is_empty()
    };
    let mut all = Vec::new();
    let mut linked = Vec::new();
    for_each_group(n, opts.max_group, &mut |g| {
        if !common(&input, g) {
            all.push(OoSample {
                group: g.to_vec(),
                label: common(&target, g),
            });
        } else if opts.train_labels == TrainLabels::Input {
            linked.push(OoSample {
                group: g.to_vec(),
                label: true,
            });
        }
    });
    split_and_balance(all, linked, opts)
}

/// Every object-attribute pair absent from the input network, labelled by the target network.
/// With [`TrainLabels::Input`] the training positives are the input edges.
pub fn gen_oa_samples(split: &SplitPair, opts: &SampleOptions) -> Result<SampleSplit<OaSample>> {
    let (n, m) = (split.target.n_objects(), split.target.n_attributes());
    let total = n.saturating_mul(m);
    if total > opts.max_candidates {
        return Err(Error::BudgetExceeded {
            what: format!("{total} object-attribute pairs"),
            partial: 0,
        });
    }
    let mut all = Vec::with_capacity(total);
    let mut linked = Vec::new();
    for u in 0..n as u32 {
        for v in 0..m as u32 {
            if split.input_has_edge(u, v) {
                if opts.train_labels == TrainLabels::Input {
                    linked.push(OaSample {
                        object: u,
                        attribute: v,
                        label: true,
                    });
                }
            } else {
                all.push(OaSample {
                    object: u,
                    attribute: v,
                    label: split.target.contains(u, v),
                });
            }
        }
    }
    split_and_balance(all, linked, opts)
}

// ---------------------------------------------------------------------------
// fine-tuning

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub train: TrainConfig,
    /// Train only the task head and leave the encoder weights as loaded.
    pub freeze_encoder: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            freeze_encoder: false,
        }
    }
}

/// Fail unless `ckpt` was trained over exactly `vocab`.
pub fn check_vocab(ckpt: &Checkpoint, vocab: &Vocab) -> Result<()> {
    if ckpt.params.config.vocab_size != vocab.size() {
        return Err(Error::VocabMismatch(format!(
            "checkpoint vocabulary has {} tokens, context needs {}",
            ckpt.params.config.vocab_size,
            vocab.size()
        )));
    }
    if let Some(labels) = ckpt.meta.get("vocab") {
        let labels: Vec<String> = serde_json::from_value(labels.clone())?;
        if labels != vocab.labels() {
            return Err(Error::VocabMismatch("checkpoint entity labels differ from the context".into()));
        }
    }
    if let Some(side) = ckpt.meta.get("side").and_then(|s| s.as_str()) {
        if side != vocab.side.as_str() {
            return Err(Error::VocabMismatch(format!(
                "{side} checkpoint used for the {} side",
                vocab.side.as_str()
            )));
        }
    }
    Ok(())
}

fn group_sequence(vocab: &Vocab, group: &[u32]) -> Result<TokenSequence> {
    encode_single(vocab, group, group.len() + 2)
}

fn ensure_len(params: &mut ModelParams<f32>, len: usize) {
    // only a guard on input size; nothing in the encoder depends on it
    params.config.max_len = params.config.max_len.max(len);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct OoModel {
    pub params: ModelParams<f32>,
    pub curve: Vec<FinetuneEpoch>,
}

fn trainable(cfg: &FinetuneConfig) -> fn(&str) -> bool {
    if cfg.freeze_encoder {
        heads_only
    } else {
        everything
    }
}

/// Fine-tune an object encoder with the group head, starting from `params` (pre-trained or
/// freshly initialised). The task head is re-initialised from the training seed.
pub fn finetune_oo(
    mut params: ModelParams<f32>,
    vocab: &Vocab,
    samples: &[OoSample],
    cfg: &FinetuneConfig,
) -> Result<OoModel> {
    cfg.train.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("no object-object training samples".into()));
    }
    if params.config.vocab_size != vocab.size() {
        return Err(Error::VocabMismatch(format!(
            "model has {} tokens, vocabulary {}",
            params.config.vocab_size,
            vocab.size()
        )));
    }
    params.reinit_task_heads(derive_seed(cfg.train.seed, "head"));
    let seqs: Vec<TokenSequence> = samples
        .iter()
        .map(|s| group_sequence(vocab, &s.group))
        .collect::<Result<_>>()?;
    ensure_len(&mut params, seqs.iter().map(TokenSequence::len).max().unwrap_or(0));
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();

    let mut opt = Adam::new(cfg.train.adam.clone(), &params);
    let mut shuffle_rng = seeded(derive_seed(cfg.train.seed, "shuffle"));
    let mut dropout_rng = seeded(derive_seed(cfg.train.seed, "dropout"));
    let filter = trainable(cfg);
    let mut curve = Vec::with_capacity(cfg.train.epochs);
    for epoch in 1..=cfg.train.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(seqs.len(), cfg.train.batch_size, &mut shuffle_rng) {
            let bs: Vec<TokenSequence> = batch.iter().map(|&i| seqs[i].clone()).collect();
            let bl: Vec<bool> = batch.iter().map(|&i| labels[i]).collect();
            let mut grad = params.zeros_like();
            let l = oo_loss(&params, &bs, &bl, Some(&mut dropout_rng), Some(&mut grad))?;
            if !l.is_finite() || !grad.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_good_epoch: None,
                });
            }
            opt.step(&mut params, &grad, filter);
            total += l * batch.len() as f64;
        }
        let loss = total / seqs.len() as f64;
        log::info!("finetune-oo epoch {epoch}: loss {loss:.4}");
        curve.push(FinetuneEpoch { epoch, loss });
    }
    Ok(OoModel { params, curve })
}

/// Twin-tower model: the object encoder carries the pair head.
#[derive(Clone, Debug)]
pub struct OaModel {
    pub object: ModelParams<f32>,
    pub attribute: ModelParams<f32>,
    pub curve: Vec<FinetuneEpoch>,
}

pub fn finetune_oa(
    mut object: ModelParams<f32>,
    mut attribute: ModelParams<f32>,
    object_vocab: &Vocab,
    attribute_vocab: &Vocab,
    samples: &[OaSample],
    cfg: &FinetuneConfig,
) -> Result<OaModel> {
    cfg.train.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("no object-attribute training samples".into()));
    }
    for (p, v) in [(&object, object_vocab), (&attribute, attribute_vocab)] {
        if p.config.vocab_size != v.size() {
            return Err(Error::VocabMismatch(format!(
                "{} tower has {} tokens, vocabulary {}",
                v.side.as_str(),
                p.config.vocab_size,
                v.size()
            )));
        }
    }
    object.reinit_task_heads(derive_seed(cfg.train.seed, "head"));
    ensure_len(&mut object, 3);
    ensure_len(&mut attribute, 3);
    let os: Vec<TokenSequence> = samples
        .iter()
        .map(|s| group_sequence(object_vocab, &[s.object]))
        .collect::<Result<_>>()?;
    let at: Vec<TokenSequence> = samples
        .iter()
        .map(|s| group_sequence(attribute_vocab, &[s.attribute]))
        .collect::<Result<_>>()?;
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();

    let mut opt_o = Adam::new(cfg.train.adam.clone(), &object);
    let mut opt_a = Adam::new(cfg.train.adam.clone(), &attribute);
    let mut shuffle_rng = seeded(derive_seed(cfg.train.seed, "shuffle"));
    let mut dropout_rng = seeded(derive_seed(cfg.train.seed, "dropout"));
    let filter = trainable(cfg);
    let mut curve = Vec::with_capacity(cfg.train.epochs);
    for epoch in 1..=cfg.train.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(samples.len(), cfg.train.batch_size, &mut shuffle_rng) {
            let bo: Vec<TokenSequence> = batch.iter().map(|&i| os[i].clone()).collect();
            let ba: Vec<TokenSequence> = batch.iter().map(|&i| at[i].clone()).collect();
            let bl: Vec<bool> = batch.iter().map(|&i| labels[i]).collect();
            let mut go = object.zeros_like();
            let mut ga = attribute.zeros_like();
            let l = oa_loss(
                &object,
                &attribute,
                &bo,
                &ba,
                &bl,
                Some(&mut dropout_rng),
                Some((&mut go, &mut ga)),
            )?;
            if !l.is_finite() || !go.all_finite() || !ga.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_good_epoch: None,
                });
            }
            opt_o.step(&mut object, &go, filter);
            opt_a.step(&mut attribute, &ga, filter);
            total += l * batch.len() as f64;
        }
        let loss = total / samples.len() as f64;
        log::info!("finetune-oa epoch {epoch}: loss {loss:.4}");
        curve.push(FinetuneEpoch { epoch, loss });
    }
    Ok(OaModel {
        object,
        attribute,
        curve,
    })
}

// ---------------------------------------------------------------------------
// prediction reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub candidate: String,
    pub score: f64,
    pub label: Option<bool>,
}

/// Scored candidates, highest score first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionReport {
    pub rows: Vec<PredictionRow>,
}

impl PredictionReport {
    pub fn new(mut rows: Vec<PredictionRow>) -> Self {
        rows.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.candidate.cmp(&b.candidate)));
        PredictionReport { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Scores with labels; fails if any row is unlabelled.
    pub fn scored_set(&self) -> Result<ScoredSet> {
        let labels = self
            .rows
            .iter()
            .map(|r| r.label)
            .collect::<Option<Vec<bool>>>()
            .ok_or_else(|| Error::Metric("prediction report has unlabelled rows".into()))?;
        ScoredSet::new(self.rows.iter().map(|r| r.score).collect(), labels)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["candidate", "score", "label"])?;
        for r in &self.rows {
            let label = r.label.map_or(String::new(), |l| (l as u8).to_string());
            w.write_record([r.candidate.clone(), r.score.to_string(), label])?;
        }
        w.flush().map_err(|e| Error::io("<prediction report>", e))
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let bad = |m: String| Error::Parse { line, message: m };
            if rec.len() < 2 {
                return Err(bad("expected candidate,score[,label]".into()));
            }
            let score: f64 = rec[1].parse().map_err(|_| bad(format!("bad score {:?}", &rec[1])))?;
            let label = match rec.get(2).unwrap_or("") {
                "" => None,
                "1" | "true" => Some(true),
                "0" | "false" => Some(false),
                other => return Err(bad(format!("bad label {other:?}"))),
            };
            rows.push(PredictionRow {
                candidate: rec[0].to_string(),
                score,
                label,
            });
        }
        Ok(PredictionReport::new(rows))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Candidate name of an object group: member labels joined by `|`.
pub fn group_name(ctx: &BipartiteContext, group: &[u32]) -> String {
    group.iter().map(|&u| ctx.object_label(u)).collect::<Vec<_>>().join("|")
}

/// Scores for object groups (dropout off); pure function of the model and the groups.
pub fn predict_oo(params: &ModelParams<f32>, vocab: &Vocab, groups: &[Vec<u32>]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let mut params = params.clone();
    ensure_len(&mut params, groups.iter().map(|g| g.len() + 2).max().unwrap_or(0));
    groups
        .par_iter()
        .map(|g| oo_predict(&params, &[group_sequence(vocab, g)?]).map(|v| v[0]))
        .collect()
}

/// Scores for object-attribute pairs. Each tower's `[CLS]` state depends on one entity only,
/// so it is computed once per entity.
pub fn predict_oa(
    model: &OaModel,
    object_vocab: &Vocab,
    attribute_vocab: &Vocab,
    pairs: &[(u32, u32)],
) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let cls = |p: &ModelParams<f32>, v: &Vocab, e: u32| -> Result<Vec<f32>> {
        let mut p = p.clone();
        ensure_len(&mut p, 3);
        let (h, _) = encode(&p.encoder, &p.config, &group_sequence(v, &[e])?, None)?;
        Ok(h.row(0).to_vec())
    };
    let mut objects: Vec<u32> = pairs.iter().map(|p| p.0).collect();
    let mut attributes: Vec<u32> = pairs.iter().map(|p| p.1).collect();
    objects.sort_unstable();
    objects.dedup();
    attributes.sort_unstable();
    attributes.dedup();
    let o_states: HashMap<u32, Vec<f32>> = objects
        .par_iter()
        .map(|&u| Ok((u, cls(&model.object, object_vocab, u)?)))
        .collect::<Result<_>>()?;
    let a_states: HashMap<u32, Vec<f32>> = attributes
        .par_iter()
        .map(|&v| Ok((v, cls(&model.attribute, attribute_vocab, v)?)))
        .collect::<Result<_>>()?;
    pairs
        .par_iter()
        .map(|(u, v)| oa_head(&model.object.oa, &o_states[u], &a_states[v]))
        .collect()
}
