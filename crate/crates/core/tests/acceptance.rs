//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each, and exits non-zero if
//! any failed. Built with `harness = false`, so the lines show up without `--nocapture`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng as _;

use latticelink::context::{save_context_json, save_edge_list, BipartiteContext, EdgeListFormat};
use latticelink::fca::{build_lattice, enumerate_concepts, EnumerationBudget};
use latticelink::metrics::{best_f1_sweep, roc_auc, ScoredSet};
use latticelink::nn::gradcheck::{check_gradients, TensorCheck};
use latticelink::nn::heads::{mtp_loss, ncp_loss, oa_loss, oo_loss};
use latticelink::nn::{encode, EncoderConfig, ModelParams, Real};
use latticelink::pipeline::{BaselineMethod, Run, RunConfig, SplitSpec, Task};
use latticelink::pretrain::{build_pretrain_set, eval_ncp_heldout, run_pretrain, PretrainSetOptions};
use latticelink::rng::{seeded, Rng};
use latticelink::synthetic::{covering_context, planted_bicliques, random_context, PlantedConfig};
use latticelink::tokenizer::{encode_pair, encode_single, mask_with_rng, MaskBranch, Side, TokenSequence, Vocab, SEP};
use latticelink::training::TrainConfig;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn vocab(n: usize, side: Side) -> Vocab {
    Vocab::new(side, (0..n).map(|i| format!("e{i}")).collect())
}

fn random_subset(rng: &mut Rng, n: usize, max: usize) -> Vec<u32> {
    let k = rng.gen_range(1..=max);
    let mut all: Vec<u32> = (0..n as u32).collect();
    all.shuffle(rng);
    all.truncate(k);
    all
}

// ---------------------------------------------------------------------------
// 1: concept enumeration and covers against brute force

fn fca_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(1);
    let densities = [0.2, 0.5, 0.8];
    let mut concepts = 0;
    for i in 0..200 {
        let (n, m) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let ctx = random_context(n, m, densities[i % 3], rng.gen()).map_err(|e| e.to_string())?;
        let lattice = build_lattice(&ctx, EnumerationBudget::default()).map_err(|e| e.to_string())?;
        let got: Vec<(Vec<u32>, Vec<u32>)> =
            (0..lattice.len()).map(|c| (lattice.extent_ids(c), lattice.intent_ids(c))).collect();
        let want = common::brute_force_concepts(&ctx);
        ensure!(got == want, "context {i} ({n}x{m}): concepts differ");
        let extents: Vec<Vec<u32>> = want.into_iter().map(|c| c.0).collect();
        ensure!(
            lattice.covers == common::brute_force_covers(&extents),
            "context {i} ({n}x{m}): covers differ"
        );
        concepts += lattice.len();
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(10), "took {t:.2?}");
    Ok(format!("200 contexts, {concepts} concepts, {t:.2?}"))
}

// ---------------------------------------------------------------------------
// 2: dataset-shaped inputs

/// The `k` objects of highest degree and the `k` attributes most used among them.
fn dense_corner(ctx: &BipartiteContext, k: usize, skip: usize) -> BipartiteContext {
    let mut objs: Vec<u32> = (0..ctx.n_objects() as u32).collect();
    objs.sort_by_key(|&u| (std::cmp::Reverse(ctx.object_degree(u)), u));
    let objs: Vec<u32> = objs.into_iter().skip(skip).take(k).collect();
    let mut uses = vec![0usize; ctx.n_attributes()];
    for &u in &objs {
        for v in ctx.attributes_of(u) {
            uses[v as usize] += 1;
        }
    }
    let mut attrs: Vec<u32> = (0..ctx.n_attributes() as u32).collect();
    attrs.sort_by_key(|&v| (std::cmp::Reverse(uses[v as usize]), v));
    attrs.truncate(k);
    ctx.restrict(&objs, &attrs).expect("valid restriction")
}

fn dataset_statistics() -> Outcome {
    // (|U|, |V|, |E|) of the three input networks
    let shapes = [(334, 12614, 13399), (468, 1946, 7376), (162, 5640, 7274)];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for (i, &(n, m, e)) in shapes.iter().enumerate() {
        let ctx = covering_context(n, m, e, 100 + i as u64).map_err(|e| e.to_string())?;
        for skip in [0, 20, 40] {
            let sub = dense_corner(&ctx, 20, skip);
            let got = enumerate_concepts(&sub, EnumerationBudget::default()).map_err(|e| e.to_string())?;
            let want = common::brute_force_concepts(&sub);
            ensure!(
                got.len() == want.len(),
                "{n}x{m} sub-context {skip}: {} concepts, oracle {}",
                got.len(),
                want.len()
            );
            let ids: Vec<_> = (0..got.len()).map(|c| (got.extent_ids(c), got.intent_ids(c))).collect();
            ensure!(ids == want, "{n}x{m} sub-context {skip}: concepts differ");
            notes.push(want.len().to_string());
        }
        if i == 0 {
            let path = tmp.path().join("icfca.csv");
            save_edge_list(&ctx, &path, EdgeListFormat::Csv).map_err(|e| e.to_string())?;
            let run = Run::new(
                tmp.path().join("run"),
                RunConfig {
                    input: Some(path),
                    ..RunConfig::default()
                },
            )
            .map_err(|e| e.to_string())?;
            let s = run.ingest().map_err(|e| e.to_string())?;
            ensure!(
                (s.n_objects, s.n_attributes, s.n_edges) == (334, 12614, 13399),
                "ingest reported {}x{} with {} edges",
                s.n_objects,
                s.n_attributes,
                s.n_edges
            );
        }
    }
    let big = covering_context(468, 1946, 8085, 7).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let l = enumerate_concepts(&big, EnumerationBudget::default()).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(60), "468x1946 enumeration took {t:.2?}");
    Ok(format!(
        "sub-context concept counts [{}]; 334x12614x13399 ingested; 468x1946 -> {} concepts in {t:.2?}",
        notes.join(" "),
        l.len()
    ))
}

// ---------------------------------------------------------------------------
// 3: finite-difference gradients

fn tiny_config(vocab: usize, max_len: usize, seed: u64) -> EncoderConfig {
    let mut c = EncoderConfig::new(vocab, max_len);
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 16;
    c.seed = seed;
    c
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let wrap = |e: latticelink::Error| e.to_string();
    let v = vocab(6, Side::Object);
    let p = ModelParams::<f64>::init(&tiny_config(v.size(), 9, 3)).map_err(wrap)?;
    let mut rng = seeded(4);
    let mut batch = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..3 {
        let s = encode_pair(&v, &random_subset(&mut rng, 6, 3), &random_subset(&mut rng, 6, 3), 9).map_err(wrap)?;
        batch.push(mask_with_rng(&s, &v, 0.3, &mut rng).0);
        labels.push(rng.gen_bool(0.5));
    }
    let groups: Vec<TokenSequence> = [[0u32, 1], [2, 5], [3, 4]]
        .iter()
        .map(|g| encode_single(&v, g, 9))
        .collect::<Result<_, _>>()
        .map_err(wrap)?;
    let va = vocab(4, Side::Attribute);
    let pa = ModelParams::<f64>::init(&tiny_config(va.size(), 3, 5)).map_err(wrap)?;
    let po = ModelParams::<f64>::init(&tiny_config(v.size(), 3, 6)).map_err(wrap)?;
    let pairs = [(0u32, 1u32), (3, 0), (5, 3)];
    let os: Vec<_> = pairs.iter().map(|&(u, _)| encode_single(&v, &[u], 3).unwrap()).collect();
    let ats: Vec<_> = pairs.iter().map(|&(_, a)| encode_single(&va, &[a], 3).unwrap()).collect();
    let oa_labels = [true, false, true];

    let mut all: Vec<(&str, Vec<TensorCheck>)> = Vec::new();
    all.push((
        "mtp",
        check_gradients(&p, 32, 1e-5, 1, |p, g| mtp_loss(p, &batch, None, g)).map_err(wrap)?,
    ));
    all.push((
        "ncp",
        check_gradients(&p, 32, 1e-5, 2, |p, g| ncp_loss(p, &batch, &labels, None, g)).map_err(wrap)?,
    ));
    all.push((
        "object-group head",
        check_gradients(&p, 32, 1e-5, 3, |p, g| oo_loss(p, &groups, &labels, None, g)).map_err(wrap)?,
    ));
    all.push((
        "pair head, object tower",
        check_gradients(&po, 32, 1e-5, 4, |p, g| {
            let mut scratch = pa.zeros_like();
            match g {
                Some(g) => oa_loss(p, &pa, &os, &ats, &oa_labels, None, Some((g, &mut scratch))),
                None => oa_loss(p, &pa, &os, &ats, &oa_labels, None, None),
            }
        })
        .map_err(wrap)?,
    ));
    all.push((
        "pair head, attribute tower",
        check_gradients(&pa, 32, 1e-5, 5, |p, g| {
            let mut scratch = po.zeros_like();
            match g {
                Some(g) => oa_loss(&po, p, &os, &ats, &oa_labels, None, Some((&mut scratch, g))),
                None => oa_loss(&po, p, &os, &ats, &oa_labels, None, None),
            }
        })
        .map_err(wrap)?,
    ));
    let mut worst = 0.0f64;
    for (what, checks) in &all {
        for c in checks {
            ensure!(c.max_rel_err < 1e-4, "{what}: {} relative error {:.3e}", c.name, c.max_rel_err);
            worst = worst.max(c.max_rel_err);
        }
    }
    // every parameter tensor must have been exercised by at least one loss
    let names: Vec<String> = p.named().into_iter().map(|(n, _)| n.to_string()).collect();
    for name in &names {
        let touched = all
            .iter()
            .any(|(_, cs)| cs.iter().any(|c| &c.name == name && c.max_grad > 0.0));
        ensure!(touched, "no loss produced a gradient for {name}");
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(120), "took {t:.2?}");
    Ok(format!("{} tensors, worst relative error {worst:.2e}, {t:.2?}", names.len()))
}

// ---------------------------------------------------------------------------
// 4: permutation equivariance

fn permuted(seq: &TokenSequence, rng: &mut Rng) -> (TokenSequence, Vec<usize>) {
    let mut perm: Vec<usize> = (0..seq.len()).collect();
    for segment in 0..2u8 {
        let pos: Vec<usize> = (0..seq.len())
            .filter(|&i| seq.attention_mask[i] == 1 && seq.segments[i] == segment && seq.ids[i] > SEP)
            .collect();
        let mut shuffled = pos.clone();
        shuffled.shuffle(rng);
        for (&dst, &src) in pos.iter().zip(&shuffled) {
            perm[dst] = src;
        }
    }
    let pick = |v: &[u32]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let out = TokenSequence {
        ids: pick(&seq.ids),
        segments: perm.iter().map(|&i| seq.segments[i]).collect(),
        attention_mask: perm.iter().map(|&i| seq.attention_mask[i]).collect(),
        mtp_labels: perm.iter().map(|&i| seq.mtp_labels[i]).collect(),
    };
    (out, perm)
}

fn max_row_gap<T: Real>(seed: u64) -> Result<(f64, bool), String> {
    let v = vocab(14, Side::Object);
    let mut cfg = tiny_config(v.size(), 24, seed);
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    let p = ModelParams::<T>::init(&cfg).map_err(|e| e.to_string())?;
    let mut rng = seeded(seed);
    let mut gap = 0.0f64;
    let mut cls_identical = true;
    for _ in 0..50 {
        let s = encode_pair(&v, &random_subset(&mut rng, 14, 7), &random_subset(&mut rng, 14, 7), 24)
            .map_err(|e| e.to_string())?;
        let (t, perm) = permuted(&s, &mut rng);
        let (hs, _) = encode(&p.encoder, &cfg, &s, None).map_err(|e| e.to_string())?;
        let (ht, _) = encode(&p.encoder, &cfg, &t, None).map_err(|e| e.to_string())?;
        for (i, &src) in perm.iter().enumerate() {
            for (a, b) in ht.row(i).iter().zip(hs.row(src)) {
                gap = gap.max((a.to_f64().unwrap() - b.to_f64().unwrap()).abs());
            }
        }
        cls_identical &= ht.row(0) == hs.row(0);
    }
    Ok((gap, cls_identical))
}

fn position_freeness() -> Outcome {
    let (g64, cls64) = max_row_gap::<f64>(41)?;
    ensure!(g64 == 0.0 && cls64, "f64: largest row difference {g64:e}, [CLS] identical: {cls64}");
    let (g32, cls32) = max_row_gap::<f32>(42)?;
    ensure!(g32 <= 1e-9 && cls32, "f32: largest row difference {g32:e}, [CLS] identical: {cls32}");
    Ok(format!("50 permuted pairs each at f64 (gap {g64:e}) and f32 (gap {g32:e})"))
}

// ---------------------------------------------------------------------------
// 5: 80/10/10 masking

fn masking_distribution() -> Outcome {
    let v = vocab(40, Side::Object);
    let mut rng = seeded(5);
    let (mut masked, mut random, mut kept) = (0usize, 0usize, 0usize);
    while masked + random + kept < 20_000 {
        let s = encode_pair(&v, &random_subset(&mut rng, 40, 20), &random_subset(&mut rng, 40, 20), 43)
            .map_err(|e| e.to_string())?;
        for (_, b) in mask_with_rng(&s, &v, 0.15, &mut rng).1 {
            match b {
                MaskBranch::Masked => masked += 1,
                MaskBranch::Random => random += 1,
                MaskBranch::Kept => kept += 1,
            }
        }
    }
    let total = (masked + random + kept) as f64;
    let (pm, pr, pk) = (masked as f64 / total, random as f64 / total, kept as f64 / total);
    ensure!(
        (pm - 0.8).abs() <= 0.02 && (pr - 0.1).abs() <= 0.02 && (pk - 0.1).abs() <= 0.02,
        "proportions {pm:.4}/{pr:.4}/{pk:.4}"
    );
    Ok(format!("{total} positions: {pm:.4} / {pr:.4} / {pk:.4}"))
}

// ---------------------------------------------------------------------------
// 6: neighbour prediction is learnable

fn ncp_learnability() -> Outcome {
    let wrap = |e: latticelink::Error| e.to_string();
    let start = Instant::now();
    let ctx = random_context(30, 30, 0.3, 1).map_err(wrap)?;
    let lattice = build_lattice(&ctx, EnumerationBudget::default()).map_err(wrap)?;
    let v = Vocab::new(Side::Object, ctx.object_labels().to_vec());
    let opts = PretrainSetOptions {
        holdout_fraction: 0.2,
        seed: 1,
        ..PretrainSetOptions::default()
    };
    let set = build_pretrain_set(&lattice, Side::Object, &v, None, &opts).map_err(wrap)?;
    let mut cfg = EncoderConfig::new(v.size(), set.max_len);
    cfg.d_model = 64;
    cfg.n_layers = 1;
    cfg.n_heads = 4;
    cfg.d_ff = 256;
    cfg.dropout = 0.1;
    cfg.seed = 1;
    let mut train = TrainConfig {
        epochs: 120,
        batch_size: 32,
        seed: 1,
        ..TrainConfig::default()
    };
    train.adam.lr = 2e-3;
    let params = ModelParams::<f32>::init(&cfg).map_err(wrap)?;
    let out = run_pretrain(params, &set, &train, None).map_err(wrap)?;
    let held = eval_ncp_heldout(&out.params, &set.heldout).map_err(wrap)?;
    let fit = eval_ncp_heldout(&out.params, &set.train).map_err(wrap)?;
    let t = start.elapsed();
    let auc = held.auc.unwrap_or(0.0);
    let summary = format!(
        "{} concepts, {} train / {} held-out pairs, {} epochs: held-out AUC {auc:.3}, train F1 {:.3}, {t:.0?}",
        lattice.len(),
        set.train.len(),
        set.heldout.len(),
        train.epochs,
        fit.f1
    );
    ensure!(auc >= 0.75 && fit.f1 >= 0.95 && t < Duration::from_secs(600), "{summary}");
    Ok(summary)
}

// ---------------------------------------------------------------------------
// 7 and 8: planted bi-cliques

fn planted_config(seed: u64) -> PlantedConfig {
    PlantedConfig {
        n_blocks: 8,
        objects_per_block: 40,
        attributes_per_block: 2,
        noise: 0.05,
        seed,
    }
}

fn planted_run_config(input: &Path, task: Task, seed: u64) -> RunConfig {
    let mut c = RunConfig {
        input: Some(input.to_path_buf()),
        task,
        seed,
        split: SplitSpec::Random {
            fraction: 0.1,
            restrict_target: false,
        },
        ..RunConfig::default()
    };
    c.encoder.d_model = 32;
    c.encoder.n_layers = 1;
    c.encoder.n_heads = 4;
    c.encoder.d_ff = 128;
    c.pretrain.epochs = 50;
    c.finetune.epochs = match task {
        Task::Oa => 40,
        Task::Oo => 20,
    };
    c.finetune.test_fraction = 0.5;
    c.baseline.rank = 8;
    c
}

#[derive(Clone, Copy, Debug)]
struct PlantedScores {
    model: f64,
    common_neighbors: f64,
    no_pretrain: f64,
}

fn planted_scores(dir: &Path, task: Task, seed: u64) -> Result<PlantedScores, String> {
    let wrap = |e: latticelink::Error| e.to_string();
    let net = planted_bicliques(&planted_config(seed)).map_err(wrap)?;
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let input = dir.join("network.json");
    save_context_json(&net.context, &input).map_err(wrap)?;
    let run = Run::new(dir.join(format!("run-{task}")), planted_run_config(&input, task, seed)).map_err(wrap)?;
    let model = run.run_all(task).map_err(wrap)?.metrics.auc.ok_or("model AUC undefined")?;
    let cn = run.baseline(task, BaselineMethod::Cn).map_err(wrap)?.auc.ok_or("CN AUC undefined")?;
    let ablate = run.ablate_no_pretrain(task).map_err(wrap)?.auc.ok_or("ablation AUC undefined")?;
    Ok(PlantedScores {
        model,
        common_neighbors: cn,
        no_pretrain: ablate,
    })
}

struct PlantedResults {
    /// `[task][seed]`, tasks in the order object-attribute, object-object
    scores: Vec<Vec<Result<PlantedScores, String>>>,
    elapsed_first: Duration,
}

const TASKS: [Task; 2] = [Task::Oa, Task::Oo];

fn planted_results(root: &Path) -> PlantedResults {
    let mut scores = vec![Vec::new(), Vec::new()];
    let mut elapsed_first = Duration::ZERO;
    for seed in 0..5u64 {
        let start = Instant::now();
        for (t, &task) in TASKS.iter().enumerate() {
            scores[t].push(planted_scores(&root.join(format!("seed{seed}")), task, seed));
        }
        if seed == 0 {
            elapsed_first = start.elapsed();
        }
    }
    PlantedResults { scores, elapsed_first }
}

fn planted_recovery(r: &PlantedResults) -> Outcome {
    let mut parts = Vec::new();
    let mut failed = Vec::new();
    for (t, task) in TASKS.iter().enumerate() {
        let s = r.scores[t][0].clone()?;
        parts.push(format!(
            "{task}: model AUC {:.3} vs common neighbours {:.3}",
            s.model, s.common_neighbors
        ));
        if s.model < 0.85 || s.model <= s.common_neighbors {
            failed.push(task.to_string());
        }
    }
    let summary = format!("{}; {:.0?}", parts.join(", "), r.elapsed_first);
    ensure!(
        failed.is_empty() && r.elapsed_first < Duration::from_secs(1200),
        "{summary} (short of the bar: {})",
        failed.join(", ")
    );
    Ok(summary)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ablation_direction(r: &PlantedResults) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (t, task) in TASKS.iter().enumerate() {
        let runs: Vec<PlantedScores> = r.scores[t].iter().cloned().collect::<Result<_, _>>()?;
        let with = median(runs.iter().map(|s| s.model).collect());
        let without = median(runs.iter().map(|s| s.no_pretrain).collect());
        ok &= with >= without;
        parts.push(format!("{task}: median AUC {with:.3} pre-trained vs {without:.3} from scratch"));
    }
    let summary = parts.join(", ");
    ensure!(ok, "{summary}");
    Ok(summary)
}

// ---------------------------------------------------------------------------
// 9: metrics against brute force

fn metrics_oracle() -> Outcome {
    let mut rng = seeded(9);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.gen_range(2..=50);
        // a coarse score grid produces ties and values on the sweep thresholds
        let levels = [5, 20, 100, 1000][rng.gen_range(0..4)];
        let set = ScoredSet::from_pairs((0..n).map(|_| (rng.gen_range(0..=levels) as f64 / levels as f64, rng.gen_bool(0.4))))
            .map_err(|e| e.to_string())?;
        if set.n_pos() == 0 || set.n_neg() == 0 {
            continue;
        }
        let auc = roc_auc(&set).map_err(|e| e.to_string())?;
        ensure!(auc == common::brute_force_auc(&set), "set {checked}: AUC {auc} differs from brute force");
        let f1 = best_f1_sweep(&set).map_err(|e| e.to_string())?;
        ensure!(f1 == common::reference_best_f1(&set), "set {checked}: F1 sweep {f1:?} differs");
        checked += 1;
    }
    Ok("1000 scored sets, AUC and F1 sweep identical to the references".into())
}

// ---------------------------------------------------------------------------
// 10: determinism

fn full_run(dir: &Path, input: &Path) -> Result<(), String> {
    let wrap = |e: latticelink::Error| e.to_string();
    for task in TASKS {
        let mut c = planted_run_config(input, task, 77);
        c.pretrain.epochs = 3;
        c.finetune.epochs = 2;
        let run = Run::new(dir, c).map_err(wrap)?;
        run.run_all(task).map_err(wrap)?;
        run.baseline(task, BaselineMethod::Mf).map_err(wrap)?;
    }
    Ok(())
}

fn files_under(dir: &Path, keep: &dyn Fn(&Path) -> bool) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if keep(&p) {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let net = planted_bicliques(&PlantedConfig {
        objects_per_block: 6,
        ..planted_config(77)
    })
    .map_err(|e| e.to_string())?;
    let input = tmp.path().join("network.json");
    save_context_json(&net.context, &input).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    full_run(&a, &input)?;
    full_run(&b, &input)?;
    let wanted = |p: &Path| {
        let s = p.to_string_lossy();
        s.ends_with(".jsonl") || s.ends_with(".ckpt") || s.contains("metrics")
    };
    let fa = files_under(&a, &wanted);
    ensure!(fa == files_under(&b, &wanted), "the two runs wrote different file sets");
    ensure!(fa.iter().any(|p| p.to_string_lossy().ends_with("covers.jsonl")), "no cover file written");
    ensure!(fa.iter().filter(|p| p.to_string_lossy().ends_with(".ckpt")).count() >= 5, "too few checkpoints: {fa:?}");
    for rel in &fa {
        let x = std::fs::read(a.join(rel)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(rel)).map_err(|e| e.to_string())?;
        ensure!(x == y, "{} differs between runs", rel.display());
    }
    Ok(format!("{} concept, checkpoint and metric files byte-identical", fa.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    std::env::set_var("RUST_LOG", std::env::var("RUST_LOG").unwrap_or_else(|_| "warn".into()));
    let _ = env_logger::try_init();
    // keep panics from drowning the report; they are turned into FAIL lines
    std::panic::set_hook(Box::new(|_| {}));
    let planted_dir = tempfile::tempdir().expect("temp dir");
    let planted: std::cell::OnceCell<PlantedResults> = std::cell::OnceCell::new();

    let criteria: Vec<(&str, Box<dyn FnMut() -> Outcome + '_>)> = vec![
        ("1 concept enumeration and covers match brute force", Box::new(fca_oracle)),
        ("2 dataset-shaped inputs", Box::new(dataset_statistics)),
        ("3 finite-difference gradients", Box::new(gradient_checks)),
        ("4 position-free encoder", Box::new(position_freeness)),
        ("5 80/10/10 masking", Box::new(masking_distribution)),
        ("6 neighbour prediction is learnable", Box::new(ncp_learnability)),
        (
            "7 planted structure recovery",
            Box::new(|| planted_recovery(planted.get_or_init(|| planted_results(planted_dir.path())))),
        ),
        (
            "8 pre-training helps (median of 5 seeds)",
            Box::new(|| ablation_direction(planted.get_or_init(|| planted_results(planted_dir.path())))),
        ),
        ("9 metrics match brute force", Box::new(metrics_oracle)),
        ("10 byte-identical reruns", Box::new(determinism)),
    ];

    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, mut check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.starts_with(&format!("{f} "))) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check())).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let t = start.elapsed();
        match outcome {
            Ok(msg) => println!("PASS  criterion {name}: {msg} [{t:.1?}]"),
            Err(msg) => {
                failures += 1;
                println!("FAIL  criterion {name}: {msg} [{t:.1?}]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
