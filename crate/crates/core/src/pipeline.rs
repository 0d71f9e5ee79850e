//! Reproducible end-to-end runs inside one run directory.
//!
//! Every stage reads its inputs from the run directory, writes its artifacts there, and records a
//! manifest (`manifests/<stage>.json`) with a hash of the configuration that produced it, the
//! hashes of its upstream stages, the seed it used and the sha256 of every file it wrote. A stage
//! refuses to build on an upstream manifest whose hash does not match the current configuration.
//!
//! Layout:
//!
//! ```text
//! context.json                       ingest
//! split/{input,target,kind}.json     split
//! lattice/concepts.jsonl             concepts
//! lattice/covers.jsonl               covers
//! pretrain/<side>.ckpt, *_loss.csv   pretrain
//! samples/<task>.json                candidate generation (on demand)
//! finetune/<task>*.ckpt, *_loss.csv  finetune-oo / finetune-oa
//! predictions/<name>.csv             predict, baseline, ablate-no-pretrain
//! metrics/<name>.json                eval
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::baselines::{score_mf, score_mf_objects, train_mf, MfConfig, NeighborIndex};
use crate::context::{
    context_stats, load_any, load_context_json, save_context_json, split_random_edges, split_temporal,
    BipartiteContext, ContextStats, RandomSplitOptions, SplitKind, SplitPair,
};
use crate::error::{Error, Result};
use crate::fca::{build_lattice, read_lattice_jsonl, write_concepts_jsonl, write_covers_jsonl, EnumerationBudget};
use crate::finetune::{
    check_vocab, finetune_oa, finetune_oo, gen_oa_samples, gen_oo_samples, group_name, predict_oa, predict_oo,
    FinetuneConfig, FinetuneEpoch, OaModel, OaSample, OoSample, PredictionReport, PredictionRow, SampleOptions, TrainLabels,
    SampleSplit,
};
use crate::metrics::{evaluate, MetricReport};
use crate::nn::{load_checkpoint, save_checkpoint, AdamConfig, EncoderConfig, ModelParams};
use crate::pretrain::{build_pretrain_set, run_pretrain, PretrainOutput, PretrainSetOptions};
use crate::rng::derive_seed;
use crate::tokenizer::{Side, Vocab};
use crate::training::{write_csv, TrainConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// object groups gaining a common attribute
    Oo,
    /// missing object-attribute edges
    Oa,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Oo => "oo",
            Task::Oa => "oa",
        }
    }

    /// Encoder sides the task needs.
    pub fn sides(self) -> &'static [Side] {
        match self {
            Task::Oo => &[Side::Object],
            Task::Oa => &[Side::Object, Side::Attribute],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "oo" => Ok(Task::Oo),
            "oa" => Ok(Task::Oa),
            other => Err(format!("unknown task {other:?} (expected oo or oa)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    /// common neighbours
    Cn,
    /// alternating-least-squares matrix factorisation
    Mf,
}

impl BaselineMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMethod::Cn => "cn",
            BaselineMethod::Mf => "mf",
        }
    }
}

impl FromStr for BaselineMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cn" => Ok(BaselineMethod::Cn),
            "mf" => Ok(BaselineMethod::Mf),
            other => Err(format!("unknown baseline {other:?} (expected cn or mf)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitSpec {
    /// Remove a fraction of edges uniformly at random.
    Random {
        fraction: f64,
        #[serde(default)]
        restrict_target: bool,
    },
    /// Input = edges dated before the cutoff.
    Temporal { cutoff: NaiveDate },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Random {
            fraction: 0.1,
            restrict_target: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            dropout: 0.1,
        }
    }
}

impl EncoderSettings {
    pub fn config(&self, vocab_size: usize, max_len: usize, seed: u64) -> Result<EncoderConfig> {
        let cfg = EncoderConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size,
            max_len,
            dropout: self.dropout,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub mask_rate: f64,
    pub holdout_fraction: f64,
    pub max_len: Option<usize>,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        PretrainSettings {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            clip_norm: Some(1.0),
            mask_rate: 0.15,
            holdout_fraction: 0.0,
            max_len: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub freeze_encoder: bool,
    pub max_group: usize,
    pub test_fraction: f64,
    pub balance: bool,
    pub max_candidates: usize,
    pub train_labels: TrainLabels,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        let s = SampleOptions::default();
        FinetuneSettings {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            clip_norm: Some(1.0),
            freeze_encoder: false,
            max_group: s.max_group,
            test_fraction: s.test_fraction,
            balance: s.balance,
            max_candidates: s.max_candidates,
            train_labels: s.train_labels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub rank: usize,
    pub lambda: f64,
    pub sweeps: usize,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        let m = MfConfig::default();
        BaselineSettings {
            rank: m.rank,
            lambda: m.lambda,
            sweeps: m.sweeps,
        }
    }
}

/// Everything that determines a run. Stage seeds are derived from `seed` by stage name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Edge list (`.csv` / `.tsv`) or context JSON read by `ingest`.
    pub input: Option<PathBuf>,
    pub task: Task,
    pub seed: u64,
    pub split: SplitSpec,
    pub budget: EnumerationBudget,
    pub encoder: EncoderSettings,
    pub pretrain: PretrainSettings,
    pub finetune: FinetuneSettings,
    pub baseline: BaselineSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            task: Task::Oa,
            seed: 0,
            split: SplitSpec::default(),
            budget: EnumerationBudget::default(),
            encoder: EncoderSettings::default(),
            pretrain: PretrainSettings::default(),
            finetune: FinetuneSettings::default(),
            baseline: BaselineSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn stage_seed(&self, tag: &str) -> u64 {
        derive_seed(self.seed, tag)
    }

    fn sample_options(&self, task: Task) -> SampleOptions {
        let f = &self.finetune;
        SampleOptions {
            max_group: f.max_group,
            test_fraction: f.test_fraction,
            balance: f.balance,
            max_candidates: f.max_candidates,
            train_labels: f.train_labels,
            seed: self.stage_seed(&format!("samples-{task}")),
        }
    }

    fn finetune_config(&self, task: Task) -> FinetuneConfig {
        let f = &self.finetune;
        FinetuneConfig {
            train: TrainConfig {
                epochs: f.epochs,
                batch_size: f.batch_size,
                adam: AdamConfig {
                    lr: f.lr,
                    clip_norm: f.clip_norm,
                    ..AdamConfig::default()
                },
                seed: self.stage_seed(&format!("finetune-{task}")),
            },
            freeze_encoder: f.freeze_encoder,
        }
    }
}

// ---------------------------------------------------------------------------
// stages and manifests

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Split,
    Concepts,
    Covers,
    Pretrain(Side),
    Samples(Task),
    Finetune(Task),
    Predict(Task),
    Baseline(Task, BaselineMethod),
    Ablate(Task),
}

impl Stage {
    pub fn name(&self) -> String {
        match self {
            Stage::Ingest => "ingest".into(),
            Stage::Split => "split".into(),
            Stage::Concepts => "concepts".into(),
            Stage::Covers => "covers".into(),
            Stage::Pretrain(s) => format!("pretrain-{}", s.as_str()),
            Stage::Samples(t) => format!("samples-{t}"),
            Stage::Finetune(t) => format!("finetune-{t}"),
            Stage::Predict(t) => format!("predict-{t}"),
            Stage::Baseline(t, m) => format!("baseline-{t}-{}", m.as_str()),
            Stage::Ablate(t) => format!("ablate-no-pretrain-{t}"),
        }
    }

    /// Subcommand that produces this stage's artifacts.
    fn command(&self) -> String {
        match self {
            Stage::Pretrain(_) => "pretrain".into(),
            Stage::Samples(t) | Stage::Finetune(t) => format!("finetune-{t}"),
            Stage::Predict(_) => "predict".into(),
            Stage::Baseline(..) => "baseline".into(),
            Stage::Ablate(_) => "ablate-no-pretrain".into(),
            other => other.name(),
        }
    }

    /// Name of the prediction report / metric file the stage produces, if any.
    fn report_name(&self) -> Option<String> {
        match self {
            Stage::Predict(t) => Some(t.as_str().into()),
            Stage::Baseline(t, m) => Some(format!("{t}_{}", m.as_str())),
            Stage::Ablate(t) => Some(format!("{t}_no_pretrain")),
            _ => None,
        }
    }

    /// Inverse of [`Stage::report_name`].
    pub fn from_report_name(name: &str) -> Option<Stage> {
        let (task, rest) = name.split_once('_').map_or((name, ""), |(a, b)| (a, b));
        let task: Task = task.parse().ok()?;
        match rest {
            "" => Some(Stage::Predict(task)),
            "no_pretrain" => Some(Stage::Ablate(task)),
            m => m.parse().ok().map(|m| Stage::Baseline(task, m)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// relative to the run directory, or as given for external inputs
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub upstream: BTreeMap<String, String>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub summary: Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(h.finalize()))
}

fn sha256_json(v: &Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricFile {
    pub name: String,
    pub config_hash: String,
    pub metrics: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub input: ContextStats,
    pub target: ContextStats,
    pub removed_edges: usize,
}

/// A run directory bound to a configuration.
#[derive(Clone, Debug)]
pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfig,
}

impl Run {
    pub fn new(dir: impl Into<PathBuf>, config: RunConfig) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(dir.join("manifests")).map_err(|e| Error::io(&dir, e))?;
        Ok(Run { dir, config })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn mkdir(&self, rel: &str) -> Result<()> {
        let p = self.path(rel);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))
    }

    fn manifest_path(&self, stage: &Stage) -> PathBuf {
        self.path(&format!("manifests/{}.json", stage.name()))
    }

    fn params_of(&self, stage: &Stage) -> (Value, Vec<Stage>) {
        let c = &self.config;
        match stage {
            // identified by what was ingested, so later commands need not repeat `--input`
            Stage::Ingest => (json!({ "context": sha256_file(&self.path("context.json")).ok() }), vec![]),
            Stage::Split => (
                json!({ "split": c.split, "seed": c.stage_seed("split") }),
                vec![Stage::Ingest],
            ),
            Stage::Concepts => (json!({ "budget": c.budget }), vec![Stage::Split]),
            Stage::Covers => (json!({}), vec![Stage::Concepts]),
            Stage::Pretrain(side) => (
                json!({
                    "encoder": c.encoder,
                    "pretrain": c.pretrain,
                    "side": side,
                    "seed": c.stage_seed(&format!("pretrain-{}", side.as_str())),
                }),
                vec![Stage::Covers],
            ),
            Stage::Samples(t) => (json!({ "options": c.sample_options(*t), "task": t }), vec![Stage::Split]),
            Stage::Finetune(t) => {
                let mut up = vec![Stage::Samples(*t)];
                up.extend(t.sides().iter().map(|&s| Stage::Pretrain(s)));
                (json!({ "finetune": c.finetune_config(*t) }), up)
            }
            Stage::Predict(t) => (json!({}), vec![Stage::Finetune(*t)]),
            Stage::Baseline(t, m) => (
                json!({
                    "baseline": c.baseline,
                    "method": m,
                    "seed": c.stage_seed(&format!("baseline-{t}")),
                }),
                vec![Stage::Samples(*t)],
            ),
            Stage::Ablate(t) => (
                json!({
                    "encoder": c.encoder,
                    "finetune": c.finetune_config(*t),
                    "seed": c.stage_seed(&format!("ablate-{t}")),
                }),
                vec![Stage::Samples(*t), Stage::Split],
            ),
        }
    }

    /// Hash of the configuration a stage depends on, including all of its upstream stages.
    pub fn stage_hash(&self, stage: &Stage) -> String {
        let (params, upstream) = self.params_of(stage);
        let up: Vec<String> = upstream.iter().map(|s| self.stage_hash(s)).collect();
        sha256_json(&json!({ "stage": stage.name(), "params": params, "upstream": up }))
    }

    /// The manifest of a finished upstream stage, checked against the current configuration
    /// and against the files it lists.
    pub fn require(&self, stage: &Stage) -> Result<Manifest> {
        let path = self.manifest_path(stage);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                stage: stage.command(),
                path,
            });
        }
        let m: Manifest = read_json(&path)?;
        for out in &m.outputs {
            let p = self.path(&out.path);
            if !p.exists() {
                return Err(Error::MissingArtifact {
                    stage: stage.command(),
                    path: p,
                });
            }
            let found = sha256_file(&p)?;
            if found != out.sha256 {
                return Err(Error::HashMismatch {
                    stage: format!("{} ({})", stage.name(), out.path),
                    expected: out.sha256.clone(),
                    found,
                });
            }
        }
        let expected = self.stage_hash(stage);
        if m.config_hash != expected {
            return Err(Error::HashMismatch {
                stage: stage.name(),
                expected,
                found: m.config_hash,
            });
        }
        Ok(m)
    }

    fn finish(
        &self,
        stage: &Stage,
        seed: Option<u64>,
        inputs: Vec<FileRecord>,
        outputs: &[&str],
        summary: Value,
    ) -> Result<Manifest> {
        let (_, upstream) = self.params_of(stage);
        let m = Manifest {
            stage: stage.name(),
            version: VERSION.into(),
            config_hash: self.stage_hash(stage),
            seed,
            upstream: upstream.iter().map(|s| (s.name(), self.stage_hash(s))).collect(),
            inputs,
            outputs: outputs
                .iter()
                .map(|rel| {
                    Ok(FileRecord {
                        path: rel.to_string(),
                        sha256: sha256_file(&self.path(rel))?,
                    })
                })
                .collect::<Result<_>>()?,
            summary,
        };
        write_json(&self.manifest_path(stage), &m)?;
        Ok(m)
    }

    // -- data stages --------------------------------------------------------

    /// Read the input network and store it in lossless form.
    pub fn ingest(&self) -> Result<ContextStats> {
        let input = self
            .config
            .input
            .clone()
            .ok_or_else(|| Error::Config("no input file: pass --input or set `input` in the config".into()))?;
        let ctx = load_any(&input)?;
        let stats = context_stats(&ctx);
        log::info!(
            "ingested {}: |U|={} |V|={} |E|={}",
            input.display(),
            stats.n_objects,
            stats.n_attributes,
            stats.n_edges
        );
        save_context_json(&ctx, self.path("context.json"))?;
        let inputs = vec![FileRecord {
            path: input.display().to_string(),
            sha256: sha256_file(&input)?,
        }];
        self.finish(
            &Stage::Ingest,
            None,
            inputs,
            &["context.json"],
            serde_json::to_value(&stats)?,
        )?;
        Ok(stats)
    }

    pub fn context(&self) -> Result<BipartiteContext> {
        self.require(&Stage::Ingest)?;
        load_context_json(self.path("context.json"))
    }

    pub fn split(&self) -> Result<SplitSummary> {
        let ctx = self.context()?;
        let seed = self.config.stage_seed("split");
        let pair = match &self.config.split {
            SplitSpec::Random {
                fraction,
                restrict_target,
            } => split_random_edges(
                &ctx,
                RandomSplitOptions {
                    fraction: *fraction,
                    seed,
                    restrict_target: *restrict_target,
                },
            )?,
            SplitSpec::Temporal { cutoff } => split_temporal(&ctx, *cutoff)?,
        };
        self.mkdir("split")?;
        save_context_json(&pair.input, self.path("split/input.json"))?;
        save_context_json(&pair.target, self.path("split/target.json"))?;
        write_json(&self.path("split/kind.json"), &pair.kind)?;
        let summary = SplitSummary {
            input: context_stats(&pair.input),
            target: context_stats(&pair.target),
            removed_edges: pair.target.n_edges() - pair.input.n_edges(),
        };
        self.finish(
            &Stage::Split,
            Some(seed),
            vec![],
            &["split/input.json", "split/target.json", "split/kind.json"],
            serde_json::to_value(&summary)?,
        )?;
        Ok(summary)
    }

    pub fn split_pair(&self) -> Result<SplitPair> {
        self.require(&Stage::Split)?;
        let input = load_context_json(self.path("split/input.json"))?;
        let target = load_context_json(self.path("split/target.json"))?;
        let kind: SplitKind = read_json(&self.path("split/kind.json"))?;
        SplitPair::from_contexts(input, target, kind)
    }

    /// Concepts of the input network.
    pub fn concepts(&self) -> Result<usize> {
        let pair = self.split_pair()?;
        let lattice = crate::fca::enumerate_concepts(&pair.input, self.config.budget)?;
        self.mkdir("lattice")?;
        write_concepts_jsonl(&lattice, self.path("lattice/concepts.jsonl"))?;
        self.finish(
            &Stage::Concepts,
            None,
            vec![],
            &["lattice/concepts.jsonl"],
            json!({ "concepts": lattice.len() }),
        )?;
        Ok(lattice.len())
    }

    pub fn covers(&self) -> Result<usize> {
        self.require(&Stage::Concepts)?;
        let pair = self.split_pair()?;
        let mut lattice = read_lattice_jsonl(
            self.path("lattice/concepts.jsonl"),
            None,
            pair.input.n_objects(),
            pair.input.n_attributes(),
        )?;
        lattice.covers = crate::fca::cover_relation(&lattice.concepts)?;
        write_covers_jsonl(&lattice, self.path("lattice/covers.jsonl"))?;
        self.finish(
            &Stage::Covers,
            None,
            vec![],
            &["lattice/covers.jsonl"],
            json!({ "covers": lattice.covers.len() }),
        )?;
        Ok(lattice.covers.len())
    }

    fn vocab(pair: &SplitPair, side: Side) -> Vocab {
        match side {
            Side::Object => Vocab::new(side, pair.target.object_labels().to_vec()),
            Side::Attribute => Vocab::new(side, pair.target.attribute_labels().to_vec()),
        }
    }

    fn checkpoint_meta(&self, stage: &Stage, vocab: &Vocab) -> Value {
        json!({
            "stage": stage.name(),
            "config_hash": self.stage_hash(stage),
            "side": vocab.side,
            "vocab": vocab.labels(),
        })
    }

    // -- model stages -------------------------------------------------------

    /// Pre-train the encoder of one side on the input network's lattice.
    pub fn pretrain(&self, side: Side) -> Result<Value> {
        self.require(&Stage::Covers)?;
        let pair = self.split_pair()?;
        let lattice = read_lattice_jsonl(
            self.path("lattice/concepts.jsonl"),
            Some(&self.path("lattice/covers.jsonl")),
            pair.input.n_objects(),
            pair.input.n_attributes(),
        )?;
        let vocab = Self::vocab(&pair, side);
        let map = match side {
            Side::Object => None,
            Side::Attribute => Some(pair.attribute_to_target.as_slice()),
        };
        let s = &self.config.pretrain;
        let tag = format!("pretrain-{}", side.as_str());
        let set = build_pretrain_set(
            &lattice,
            side,
            &vocab,
            map,
            &PretrainSetOptions {
                mask_rate: s.mask_rate,
                holdout_fraction: s.holdout_fraction,
                max_len: s.max_len,
                seed: self.config.stage_seed(&format!("{tag}-set")),
            },
        )?;
        let enc = self
            .config
            .encoder
            .config(vocab.size(), set.max_len, self.config.stage_seed(&format!("{tag}-init")))?;
        let params = ModelParams::<f32>::init(&enc)?;
        let train = TrainConfig {
            epochs: s.epochs,
            batch_size: s.batch_size,
            adam: AdamConfig {
                lr: s.lr,
                clip_norm: s.clip_norm,
                ..AdamConfig::default()
            },
            seed: self.config.stage_seed(&tag),
        };
        let stage = Stage::Pretrain(side);
        self.mkdir("pretrain")?;
        let out = PretrainOutput {
            dir: self.path("pretrain"),
            name: side.as_str().into(),
            meta: self.checkpoint_meta(&stage, &vocab),
        };
        let outcome = run_pretrain(params, &set, &train, Some(&out))?;
        let last = outcome.curve.last().cloned();
        let summary = json!({
            "train_samples": set.train.len(),
            "heldout_samples": set.heldout.len(),
            "skipped_pairs": set.skipped_pairs,
            "max_len": set.max_len,
            "final": last,
            "heldout_final": outcome.heldout.last(),
        });
        let side_name = side.as_str();
        let ckpt = format!("pretrain/{side_name}.ckpt");
        let loss = format!("pretrain/{side_name}_loss.csv");
        let held = format!("pretrain/{side_name}_heldout.csv");
        let mut outputs = vec![ckpt.as_str(), loss.as_str()];
        if !outcome.heldout.is_empty() {
            outputs.push(held.as_str());
        }
        self.finish(&stage, Some(train.seed), vec![], &outputs, summary.clone())?;
        Ok(summary)
    }

    fn pretrained(&self, side: Side, pair: &SplitPair) -> Result<ModelParams<f32>> {
        self.require(&Stage::Pretrain(side))?;
        let ckpt = load_checkpoint(self.path(&format!("pretrain/{}.ckpt", side.as_str())))?;
        check_vocab(&ckpt, &Self::vocab(pair, side))?;
        Ok(ckpt.params)
    }

    fn samples_file(task: Task) -> String {
        format!("samples/{task}.json")
    }

    /// Candidates of a task, generated on first use and reused afterwards.
    fn ensure_samples(&self, task: Task) -> Result<()> {
        let stage = Stage::Samples(task);
        if self.require(&stage).is_ok() {
            return Ok(());
        }
        let pair = self.split_pair()?;
        let opts = self.config.sample_options(task);
        let rel = Self::samples_file(task);
        self.mkdir("samples")?;
        let (train, test, pos) = match task {
            Task::Oo => {
                let s = gen_oo_samples(&pair, &opts)?;
                write_json(&self.path(&rel), &s)?;
                let pos = s.test.iter().filter(|x| x.label).count();
                (s.train.len(), s.test.len(), pos)
            }
            Task::Oa => {
                let s = gen_oa_samples(&pair, &opts)?;
                write_json(&self.path(&rel), &s)?;
                let pos = s.test.iter().filter(|x| x.label).count();
                (s.train.len(), s.test.len(), pos)
            }
        };
        log::info!("{task} candidates: {train} train, {test} test ({pos} positive)");
        self.finish(
            &stage,
            Some(opts.seed),
            vec![],
            &[rel.as_str()],
            json!({ "train": train, "test": test, "test_positives": pos }),
        )?;
        Ok(())
    }

    fn oo_samples(&self) -> Result<SampleSplit<OoSample>> {
        self.ensure_samples(Task::Oo)?;
        read_json(&self.path(&Self::samples_file(Task::Oo)))
    }

    fn oa_samples(&self) -> Result<SampleSplit<OaSample>> {
        self.ensure_samples(Task::Oa)?;
        read_json(&self.path(&Self::samples_file(Task::Oa)))
    }

    fn write_curve(&self, rel: &str, curve: &[FinetuneEpoch]) -> Result<()> {
        write_csv(&self.path(rel), curve)
    }

    /// Fine-tune pre-trained encoders (or, with `pretrained = false`, random ones) and return
    /// the checkpoints' relative paths.
    fn train_task(&self, task: Task, stage: &Stage, pretrained: bool) -> Result<Vec<String>> {
        let pair = self.split_pair()?;
        let cfg = self.config.finetune_config(task);
        let init = |side: Side| -> Result<ModelParams<f32>> {
            if pretrained {
                self.pretrained(side, &pair)
            } else {
                let vocab = Self::vocab(&pair, side);
                let len = match task {
                    Task::Oo => self.config.finetune.max_group + 2,
                    Task::Oa => 3,
                };
                let seed = self.config.stage_seed(&format!("ablate-{task}-{}", side.as_str()));
                ModelParams::init(&self.config.encoder.config(vocab.size(), len, seed)?)
            }
        };
        let dir = if pretrained { "finetune" } else { "ablate" };
        self.mkdir(dir)?;
        match task {
            Task::Oo => {
                let samples = self.oo_samples()?;
                let vocab = Self::vocab(&pair, Side::Object);
                let model = finetune_oo(init(Side::Object)?, &vocab, &samples.train, &cfg)?;
                let ckpt = format!("{dir}/oo.ckpt");
                save_checkpoint(&model.params, &self.checkpoint_meta(stage, &vocab), self.path(&ckpt))?;
                let curve = format!("{dir}/oo_loss.csv");
                self.write_curve(&curve, &model.curve)?;
                Ok(vec![ckpt, curve])
            }
            Task::Oa => {
                let samples = self.oa_samples()?;
                let ov = Self::vocab(&pair, Side::Object);
                let av = Self::vocab(&pair, Side::Attribute);
                let model = finetune_oa(init(Side::Object)?, init(Side::Attribute)?, &ov, &av, &samples.train, &cfg)?;
                let o = format!("{dir}/oa_object.ckpt");
                let a = format!("{dir}/oa_attribute.ckpt");
                save_checkpoint(&model.object, &self.checkpoint_meta(stage, &ov), self.path(&o))?;
                save_checkpoint(&model.attribute, &self.checkpoint_meta(stage, &av), self.path(&a))?;
                let curve = format!("{dir}/oa_loss.csv");
                self.write_curve(&curve, &model.curve)?;
                Ok(vec![o, a, curve])
            }
        }
    }

    pub fn finetune(&self, task: Task) -> Result<()> {
        let stage = Stage::Finetune(task);
        for &side in task.sides() {
            self.require(&Stage::Pretrain(side))?;
        }
        let outputs = self.train_task(task, &stage, true)?;
        let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
        let seed = self.config.finetune_config(task).train.seed;
        self.finish(&stage, Some(seed), vec![], &refs, json!({}))?;
        Ok(())
    }

    /// Score the held-out candidates with a set of fine-tuned checkpoints.
    fn score_task(&self, task: Task, ckpts: &[String]) -> Result<PredictionReport> {
        let pair = self.split_pair()?;
        let load = |rel: &String| load_checkpoint(self.path(rel)).map(|c| c.params);
        let rows = match task {
            Task::Oo => {
                let samples = self.oo_samples()?;
                let groups: Vec<Vec<u32>> = samples.test.iter().map(|s| s.group.clone()).collect();
                let scores = predict_oo(&load(&ckpts[0])?, &Self::vocab(&pair, Side::Object), &groups)?;
                samples
                    .test
                    .iter()
                    .zip(scores)
                    .map(|(s, score)| PredictionRow {
                        candidate: group_name(&pair.target, &s.group),
                        score,
                        label: Some(s.label),
                    })
                    .collect()
            }
            Task::Oa => {
                let samples = self.oa_samples()?;
                let model = OaModel {
                    object: load(&ckpts[0])?,
                    attribute: load(&ckpts[1])?,
                    curve: vec![],
                };
                let pairs: Vec<(u32, u32)> = samples.test.iter().map(|s| (s.object, s.attribute)).collect();
                let scores = predict_oa(
                    &model,
                    &Self::vocab(&pair, Side::Object),
                    &Self::vocab(&pair, Side::Attribute),
                    &pairs,
                )?;
                oa_rows(&pair, &samples.test, scores)
            }
        };
        Ok(PredictionReport::new(rows))
    }

    fn save_report(&self, stage: &Stage, report: &PredictionReport, inputs_from: &[String]) -> Result<String> {
        let name = stage.report_name().expect("stage produces a report");
        self.mkdir("predictions")?;
        let rel = format!("predictions/{name}.csv");
        report.save(self.path(&rel))?;
        let inputs = inputs_from
            .iter()
            .map(|p| {
                Ok(FileRecord {
                    path: p.clone(),
                    sha256: sha256_file(&self.path(p))?,
                })
            })
            .collect::<Result<_>>()?;
        self.finish(stage, None, inputs, &[rel.as_str()], json!({ "rows": report.len() }))?;
        Ok(name)
    }

    /// Score the task's held-out candidates with the fine-tuned model.
    pub fn predict(&self, task: Task) -> Result<String> {
        let m = self.require(&Stage::Finetune(task))?;
        let ckpts: Vec<String> = m
            .outputs
            .iter()
            .map(|o| o.path.clone())
            .filter(|p| p.ends_with(".ckpt"))
            .collect();
        let report = self.score_task(task, &ckpts)?;
        self.save_report(&Stage::Predict(task), &report, &ckpts)
    }

    /// Fine-tune from random initialisation and score the held-out candidates.
    pub fn ablate_no_pretrain(&self, task: Task) -> Result<MetricReport> {
        let stage = Stage::Ablate(task);
        let outputs = self.train_task(task, &stage, false)?;
        let ckpts: Vec<String> = outputs.into_iter().filter(|p| p.ends_with(".ckpt")).collect();
        let report = self.score_task(task, &ckpts)?;
        let name = self.save_report(&stage, &report, &ckpts)?;
        Ok(self.eval(&name)?.metrics)
    }

    pub fn baseline(&self, task: Task, method: BaselineMethod) -> Result<MetricReport> {
        let stage = Stage::Baseline(task, method);
        let pair = self.split_pair()?;
        let input = &pair.input;
        // target attribute id -> input attribute id
        let mut to_input = vec![None; pair.target.n_attributes()];
        for (i, &t) in pair.attribute_to_target.iter().enumerate() {
            to_input[t as usize] = Some(i as u32);
        }
        let mf = match method {
            BaselineMethod::Mf => Some(train_mf(
                input,
                &MfConfig {
                    rank: self.config.baseline.rank,
                    lambda: self.config.baseline.lambda,
                    sweeps: self.config.baseline.sweeps,
                    seed: self.config.stage_seed(&format!("baseline-{task}")),
                },
            )?),
            BaselineMethod::Cn => None,
        };
        let index = NeighborIndex::new(input);
        let count = |c: usize| c as f64 / (c as f64 + 1.0);
        let rows = match task {
            Task::Oo => {
                let samples = self.oo_samples()?;
                samples
                    .test
                    .iter()
                    .map(|s| {
                        let score = match &mf {
                            None => count(index.shared_attributes(&s.group)),
                            Some(m) => mean_pairwise(&s.group, |a, b| score_mf_objects(m, a, b)),
                        };
                        PredictionRow {
                            candidate: group_name(&pair.target, &s.group),
                            score,
                            label: Some(s.label),
                        }
                    })
                    .collect()
            }
            Task::Oa => {
                let samples = self.oa_samples()?;
                let scores = samples
                    .test
                    .iter()
                    .map(|s| match (to_input[s.attribute as usize], &mf) {
                        (None, _) => 0.0,
                        (Some(v), None) => count(index.object_attribute(s.object, v)),
                        (Some(v), Some(m)) => score_mf(m, s.object, v),
                    })
                    .collect();
                oa_rows(&pair, &samples.test, scores)
            }
        };
        let name = self.save_report(&stage, &PredictionReport::new(rows), &[])?;
        Ok(self.eval(&name)?.metrics)
    }

    /// Metrics of a prediction report written by this run (`oo`, `oa_cn`, `oo_no_pretrain`, ...).
    pub fn eval(&self, name: &str) -> Result<MetricFile> {
        let stage = Stage::from_report_name(name)
            .ok_or_else(|| Error::Config(format!("unknown prediction report {name:?}")))?;
        let m = self.require(&stage)?;
        let report = PredictionReport::load(self.path(&format!("predictions/{name}.csv")))?;
        let file = MetricFile {
            name: name.into(),
            config_hash: m.config_hash,
            metrics: evaluate(&report.scored_set()?)?,
        };
        self.mkdir("metrics")?;
        write_json(&self.path(&format!("metrics/{name}.json")), &file)?;
        Ok(file)
    }

    /// Every stage from `ingest` to `eval` for one task.
    pub fn run_all(&self, task: Task) -> Result<MetricFile> {
        self.ingest()?;
        self.split()?;
        self.concepts()?;
        self.covers()?;
        for &side in task.sides() {
            self.pretrain(side)?;
        }
        self.finetune(task)?;
        let name = self.predict(task)?;
        self.eval(&name)
    }
}

fn oa_rows(pair: &SplitPair, samples: &[OaSample], scores: Vec<f64>) -> Vec<PredictionRow> {
    samples
        .iter()
        .zip(scores)
        .map(|(s, score)| PredictionRow {
            candidate: format!(
                "{}|{}",
                pair.target.object_label(s.object),
                pair.target.attribute_label(s.attribute)
            ),
            score,
            label: Some(s.label),
        })
        .collect()
}

fn mean_pairwise(group: &[u32], f: impl Fn(u32, u32) -> f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, &a) in group.iter().enumerate() {
        for &b in &group[i + 1..] {
            sum += f(a, b);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Metrics of a prediction report file from anywhere.
pub fn eval_report_file(path: impl AsRef<Path>) -> Result<MetricReport> {
    evaluate(&PredictionReport::load(path)?.scored_set()?)
}

/// Concepts and covers of a context file, written as `concepts.jsonl` / `covers.jsonl` into
/// `dir`. Used by the stand-alone `concepts --input` / `covers --input` commands.
pub fn lattice_of_file(input: &Path, dir: &Path, budget: EnumerationBudget, covers: bool) -> Result<(usize, usize)> {
    let ctx = load_any(input)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let lattice = if covers {
        build_lattice(&ctx, budget)?
    } else {
        crate::fca::enumerate_concepts(&ctx, budget)?
    };
    write_concepts_jsonl(&lattice, dir.join("concepts.jsonl"))?;
    if covers {
        write_covers_jsonl(&lattice, dir.join("covers.jsonl"))?;
    }
    Ok((lattice.len(), lattice.covers.len()))
}
