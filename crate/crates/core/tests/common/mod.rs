//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use latticelink::context::BipartiteContext;
use latticelink::metrics::ScoredSet;

/// `(extent, intent)` pairs by testing every object subset for closure, sorted by extent size
/// then lexicographically.
pub fn brute_force_concepts(ctx: &BipartiteContext) -> Vec<(Vec<u32>, Vec<u32>)> {
    let (n, m) = (ctx.n_objects(), ctx.n_attributes());
    assert!(n <= 22 && m <= 64, "oracle is exponential in |U| and uses u64 rows");
    let rows: Vec<u64> = (0..n)
        .map(|u| (0..m).filter(|&v| ctx.contains(u as u32, v as u32)).fold(0u64, |r, v| r | 1 << v))
        .collect();
    let all_attrs = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
    let bits = |mask: u64, k: usize| (0..k as u32).filter(|&i| mask >> i & 1 == 1).collect::<Vec<u32>>();
    let mut out = Vec::new();
    for objs in 0u64..(1 << n) {
        let intent = (0..n).filter(|&u| objs >> u & 1 == 1).fold(all_attrs, |acc, u| acc & rows[u]);
        let extent = (0..n).filter(|&u| rows[u] & intent == intent).fold(0u64, |e, u| e | 1 << u);
        if extent == objs {
            out.push((bits(extent, n), bits(intent, m)));
        }
    }
    out.sort_by(|a, b| (a.0.len(), &a.0).cmp(&(b.0.len(), &b.0)));
    out
}

fn is_proper_subset(a: &[u32], b: &[u32]) -> bool {
    a.len() < b.len() && a.iter().all(|x| b.contains(x))
}

/// Transitive reduction of strict extent inclusion, by checking every middle element.
pub fn brute_force_covers(extents: &[Vec<u32>]) -> Vec<(usize, usize)> {
    let n = extents.len();
    let less: Vec<Vec<bool>> = (0..n)
        .map(|a| (0..n).map(|b| is_proper_subset(&extents[a], &extents[b])).collect())
        .collect();
    let mut out = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if less[a][b] && !(0..n).any(|c| less[a][c] && less[c][b]) {
                out.push((a, b));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Pairwise concordance over every positive-negative pair; ties count one half.
pub fn brute_force_auc(set: &ScoredSet) -> f64 {
    let mut twice = 0u128;
    let (mut p, mut n) = (0u128, 0u128);
    for (i, (&si, &li)) in set.scores().iter().zip(set.labels()).enumerate() {
        if li {
            p += 1;
        } else {
            n += 1;
        }
        for (&sj, &lj) in set.scores().iter().zip(set.labels()).skip(i + 1) {
            let (pos, neg) = match (li, lj) {
                (true, false) => (si, sj),
                (false, true) => (sj, si),
                _ => continue,
            };
            twice += if pos > neg {
                2
            } else if pos == neg {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * p * n) as f64
}

/// Best F1 over thresholds `k/20`, predicting positive when the score is above the threshold;
/// the first (smallest) threshold wins ties.
pub fn reference_best_f1(set: &ScoredSet) -> (f64, f64) {
    let mut best = (-1.0, 0.0);
    for k in 0..20 {
        let t = k as f64 / 20.0;
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&s, &l) in set.scores().iter().zip(set.labels()) {
            match (s > t, l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let f1 = if tp == 0 {
            0.0
        } else {
            (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
        };
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    best
}
