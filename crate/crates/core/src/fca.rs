//! Formal concept enumeration and the lattice cover (neighbouring) relation.
//!
//! Concepts are enumerated with Close-by-One over word-parallel bitsets. The cover relation is
//! the transitive reduction of strict extent inclusion; it lists *every* lower neighbour of
//! every concept.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitset::Bitset;
use crate::context::BipartiteContext;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Row and column bitsets of a context.
#[derive(Clone, Debug)]
pub struct IncidenceMatrix {
    /// per object: attributes it has
    rows: Vec<Bitset>,
    /// per attribute: objects having it
    cols: Vec<Bitset>,
}

impl IncidenceMatrix {
    pub fn new(ctx: &BipartiteContext) -> Self {
        let (n, m) = (ctx.n_objects(), ctx.n_attributes());
        let mut rows = vec![Bitset::new(m); n];
        let mut cols = vec![Bitset::new(n); m];
        for &(u, v) in ctx.edges() {
            rows[u as usize].insert(v as usize);
            cols[v as usize].insert(u as usize);
        }
        IncidenceMatrix { rows, cols }
    }

    pub fn n_objects(&self) -> usize {
        self.rows.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.cols.len()
    }

    /// Attributes shared by every object in `objects` (all attributes when `objects` is empty).
    pub fn common_attributes(&self, objects: &Bitset) -> Bitset {
        let mut out = Bitset::full(self.n_attributes());
        for i in objects.iter() {
            out.intersect_with(&self.rows[i]);
        }
        out
    }

    /// Objects having every attribute in `attributes` (all objects when empty).
    pub fn common_objects(&self, attributes: &Bitset) -> Bitset {
        let mut out = Bitset::full(self.n_objects());
        for j in attributes.iter() {
            out.intersect_with(&self.cols[j]);
        }
        out
    }

    /// Closure of `extent` on the attribute side, but only if it agrees with `intent` below
    /// `bound` (the Close-by-One canonicity test). The prefix is checked before the rest is built.
    fn canonical_closure(&self, extent: &Bitset, intent: &Bitset, bound: usize) -> Option<Bitset> {
        let m = self.n_attributes();
        let n_words = m.div_ceil(64);
        let mut words = vec![u64::MAX; n_words];
        let objs: Vec<usize> = extent.iter().collect();
        let prefix_words = bound / 64 + 1;
        let and_word = |w: usize| objs.iter().fold(u64::MAX, |acc, &i| acc & self.rows[i].words()[w]);
        for (w, slot) in words.iter_mut().enumerate().take(prefix_words.min(n_words)) {
            *slot = and_word(w);
        }
        // canonicity on ids < bound
        let full = bound / 64;
        if words[..full] != intent.words()[..full] {
            return None;
        }
        let rem = bound % 64;
        if rem != 0 && (words[full] ^ intent.words()[full]) & ((1u64 << rem) - 1) != 0 {
            return None;
        }
        for (w, slot) in words.iter_mut().enumerate().skip(prefix_words) {
            *slot = and_word(w);
        }
        Some(Bitset::from_words(m, words))
    }
}

fn to_bitset(len: usize, ids: &[u32], kind: &'static str) -> Result<Bitset> {
    let mut b = Bitset::new(len);
    for &i in ids {
        if i as usize >= len {
            return Err(Error::OutOfRange {
                kind,
                id: i as usize,
                size: len,
            });
        }
        b.insert(i as usize);
    }
    Ok(b)
}

/// Attributes shared by all of `objects`; the empty object set yields every attribute.
pub fn derive_attributes(ctx: &BipartiteContext, objects: &[u32]) -> Result<Vec<u32>> {
    let inc = IncidenceMatrix::new(ctx);
    let a = to_bitset(ctx.n_objects(), objects, "object")?;
    Ok(inc.common_attributes(&a).to_ids())
}

/// Objects having all of `attributes`; the empty attribute set yields every object.
pub fn derive_objects(ctx: &BipartiteContext, attributes: &[u32]) -> Result<Vec<u32>> {
    let inc = IncidenceMatrix::new(ctx);
    let b = to_bitset(ctx.n_attributes(), attributes, "attribute")?;
    Ok(inc.common_objects(&b).to_ids())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FormalConcept {
    pub id: usize,
    pub extent: Bitset,
    pub intent: Bitset,
}

#[derive(Clone, Debug)]
pub struct ConceptLattice {
    pub n_objects: usize,
    pub n_attributes: usize,
    /// sorted by (extent size, extent ids lexicographically); `concepts[i].id == i`
    pub concepts: Vec<FormalConcept>,
    /// `(lower, upper)` pairs, sorted
    pub covers: Vec<(usize, usize)>,
}

impl ConceptLattice {
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    /// The concept with the largest extent (all objects).
    pub fn top(&self) -> Option<usize> {
        self.concepts.len().checked_sub(1)
    }

    /// The concept with the smallest extent.
    pub fn bottom(&self) -> Option<usize> {
        (!self.concepts.is_empty()).then_some(0)
    }

    pub fn extent_ids(&self, c: usize) -> Vec<u32> {
        self.concepts[c].extent.to_ids()
    }

    pub fn intent_ids(&self, c: usize) -> Vec<u32> {
        self.concepts[c].intent.to_ids()
    }

    pub fn is_cover(&self, a: usize, b: usize) -> bool {
        self.covers.binary_search(&(a, b)).is_ok() || self.covers.binary_search(&(b, a)).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationBudget {
    /// Upper bound on |U|·|V|.
    pub max_cells: usize,
    pub max_concepts: usize,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            max_cells: 50_000_000,
            max_concepts: 2_000_000,
        }
    }
}

fn canonical_sort(concepts: &mut [FormalConcept]) {
    concepts.sort_by_cached_key(|c| (c.extent.count(), c.extent.to_ids()));
    for (i, c) in concepts.iter_mut().enumerate() {
        c.id = i;
    }
}

/// All formal concepts of `ctx`, canonically ordered. The returned lattice has no covers yet.
pub fn enumerate_concepts(ctx: &BipartiteContext, budget: EnumerationBudget) -> Result<ConceptLattice> {
    let (n, m) = (ctx.n_objects(), ctx.n_attributes());
    if n.saturating_mul(m) > budget.max_cells {
        return Err(Error::BudgetExceeded {
            what: format!("context has {n}x{m} cells, budget is {}", budget.max_cells),
            partial: 0,
        });
    }
    let inc = IncidenceMatrix::new(ctx);
    let top_extent = Bitset::full(n);
    let top_intent = inc.common_attributes(&top_extent);

    let mut out = Vec::new();
    let mut stack = vec![(top_extent, top_intent, 0usize)];
    while let Some((extent, intent, start)) = stack.pop() {
        for j in (start..m).rev() {
            if intent.contains(j) {
                continue;
            }
            let child = extent.intersection(&inc.cols[j]);
            if let Some(closed) = inc.canonical_closure(&child, &intent, j) {
                stack.push((child, closed, j + 1));
            }
        }
        out.push(FormalConcept {
            id: 0,
            extent,
            intent,
        });
        if out.len() > budget.max_concepts {
            return Err(Error::BudgetExceeded {
                what: format!("more than {} concepts", budget.max_concepts),
                partial: out.len(),
            });
        }
    }
    canonical_sort(&mut out);
    Ok(ConceptLattice {
        n_objects: n,
        n_attributes: m,
        concepts: out,
        covers: Vec::new(),
    })
}

/// Cover pairs `(lower, upper)` of the extent-inclusion order.
///
/// `concepts` must be canonically sorted (extent size ascending). For each concept, smaller
/// extents are scanned largest-first; a subset is a lower neighbour unless it already sits
/// under a neighbour found earlier.
pub fn cover_relation(concepts: &[FormalConcept]) -> Result<Vec<(usize, usize)>> {
    let sizes: Vec<usize> = concepts.iter().map(|c| c.extent.count()).collect();
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidContext(
            "concepts must be sorted by extent size".into(),
        ));
    }
    for (i, w) in concepts.windows(2).enumerate() {
        if w[0].extent == w[1].extent {
            return Err(Error::DuplicateExtent(i + 1));
        }
    }
    let per_upper: Vec<Vec<(usize, usize)>> = (0..concepts.len())
        .into_par_iter()
        .map(|upper| {
            let ext = &concepts[upper].extent;
            let mut lowers: Vec<usize> = Vec::new();
            for cand in (0..upper).rev() {
                if sizes[cand] == sizes[upper] {
                    continue;
                }
                let ce = &concepts[cand].extent;
                if ce.is_subset(ext) && !lowers.iter().any(|&l| ce.is_subset(&concepts[l].extent)) {
                    lowers.push(cand);
                }
            }
            lowers.into_iter().map(|l| (l, upper)).collect()
        })
        .collect();
    let mut covers: Vec<_> = per_upper.into_iter().flatten().collect();
    covers.sort_unstable();
    Ok(covers)
}

/// Enumerate concepts and attach the cover relation.
pub fn build_lattice(ctx: &BipartiteContext, budget: EnumerationBudget) -> Result<ConceptLattice> {
    let mut lattice = enumerate_concepts(ctx, budget)?;
    lattice.covers = cover_relation(&lattice.concepts)?;
    Ok(lattice)
}

/// Queue-driven topological pass over the concept order that records, for each concept, the
/// last predecessor whose removal brought its in-degree to zero. Yields at most one lower
/// neighbour per concept; [`cover_relation`] is the complete relation.
pub fn queue_lower_neighbors(lattice: &ConceptLattice) -> Vec<Option<usize>> {
    let cs = &lattice.concepts;
    let n = cs.len();
    let less = |a: usize, b: usize| cs[a].extent.is_proper_subset(&cs[b].extent);
    let mut pending: Vec<usize> = (0..n).map(|c| (0..n).filter(|&d| less(d, c)).count()).collect();
    let mut queue: std::collections::VecDeque<usize> = (0..n).filter(|&c| pending[c] == 0).collect();
    let mut lower = vec![None; n];
    while let Some(c) = queue.pop_front() {
        for c1 in 0..n {
            if less(c, c1) {
                pending[c1] -= 1;
                if pending[c1] == 0 {
                    lower[c1] = Some(c);
                    queue.push_back(c1);
                }
            }
        }
    }
    lower
}

// ---------------------------------------------------------------------------
// neighbour pairs

/// Draws concept pairs that are *not* lattice neighbours.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    n: usize,
    covers: HashSet<(usize, usize)>,
}

impl NegativeSampler {
    pub fn new(lattice: &ConceptLattice) -> Self {
        NegativeSampler {
            n: lattice.len(),
            covers: lattice
                .covers
                .iter()
                .map(|&(a, b)| (a.min(b), a.max(b)))
                .collect(),
        }
    }

    fn is_cover(&self, a: usize, b: usize) -> bool {
        self.covers.contains(&(a.min(b), a.max(b)))
    }

    /// Number of distinct non-neighbour pairs (ordered pairs count both orientations).
    pub fn pool_size(&self, ordered: bool) -> usize {
        let unordered = self.n * self.n.saturating_sub(1) / 2 - self.covers.len();
        if ordered {
            2 * unordered
        } else {
            unordered
        }
    }

    fn all_pairs(&self, ordered: bool, accept: &impl Fn(usize, usize) -> bool) -> Vec<(usize, usize)> {
        let mut all = Vec::new();
        for a in 0..self.n {
            for b in 0..self.n {
                let keep = if ordered { a != b } else { a < b };
                if keep && !self.is_cover(a, b) && accept(a, b) {
                    all.push((a, b));
                }
            }
        }
        all
    }

    /// `count` distinct non-neighbour pairs drawn uniformly without replacement. When the pool
    /// is smaller than `count`, the whole pool is returned and a warning is logged.
    pub fn sample(&self, count: usize, ordered: bool, rng: &mut Rng) -> Vec<(usize, usize)> {
        self.sample_filtered(count, ordered, rng, |_, _| true)
    }

    /// As [`sample`](Self::sample), restricted to pairs passing `accept`.
    pub fn sample_filtered(
        &self,
        count: usize,
        ordered: bool,
        rng: &mut Rng,
        accept: impl Fn(usize, usize) -> bool,
    ) -> Vec<(usize, usize)> {
        let pool = self.pool_size(ordered);
        if pool <= 4_000_000 {
            let all = self.all_pairs(ordered, &accept);
            if all.len() <= count {
                if all.len() < count {
                    log::warn!("only {} non-neighbour pairs available, {count} requested", all.len());
                }
                return all;
            }
            return index::sample(rng, all.len(), count)
                .into_iter()
                .map(|i| all[i])
                .collect();
        }
        let mut chosen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        // rejection sampling; give up once acceptance turns out to be hopeless
        let max_draws = 1_000 * count.max(1) + 1_000_000;
        let mut draws = 0usize;
        while out.len() < count && draws < max_draws {
            draws += 1;
            let a = rng.gen_range(0..self.n);
            let b = rng.gen_range(0..self.n);
            if a == b || self.is_cover(a, b) || !accept(a, b) {
                continue;
            }
            let key = if ordered { (a, b) } else { (a.min(b), a.max(b)) };
            if chosen.insert(key) {
                out.push(key);
            }
        }
        if out.len() < count {
            log::warn!("drew only {} of {count} non-neighbour pairs", out.len());
        }
        out
    }
}

/// Positive neighbour pairs plus a sampler for negatives.
#[derive(Clone, Debug)]
pub struct NeighborPairs {
    /// unordered `(lower, upper)` cover pairs
    pub positives: Vec<(usize, usize)>,
    pub sampler: NegativeSampler,
}

impl NeighborPairs {
    /// Balanced unordered negatives, one per positive where possible.
    pub fn balanced_negatives(&self, rng: &mut Rng) -> Vec<(usize, usize)> {
        self.sampler.sample(self.positives.len(), false, rng)
    }
}

pub fn neighbor_pairs(lattice: &ConceptLattice) -> NeighborPairs {
    NeighborPairs {
        positives: lattice.covers.clone(),
        sampler: NegativeSampler::new(lattice),
    }
}

// ---------------------------------------------------------------------------
// JSON-lines export

#[derive(Serialize, Deserialize)]
struct ConceptLine {
    id: usize,
    extent: Vec<u32>,
    intent: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct CoverLine {
    lower: usize,
    upper: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_concepts_jsonl(lattice: &ConceptLattice, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for c in &lattice.concepts {
        serde_json::to_writer(
            &mut w,
            &ConceptLine {
                id: c.id,
                extent: c.extent.to_ids(),
                intent: c.intent.to_ids(),
            },
        )?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_covers_jsonl(lattice: &ConceptLattice, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for &(lower, upper) in &lattice.covers {
        serde_json::to_writer(&mut w, &CoverLine { lower, upper })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i as u64 + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Read a lattice back from its concepts file and (optionally) covers file.
pub fn read_lattice_jsonl(
    concepts: impl AsRef<Path>,
    covers: Option<&Path>,
    n_objects: usize,
    n_attributes: usize,
) -> Result<ConceptLattice> {
    let lines: Vec<ConceptLine> = read_lines(concepts.as_ref())?;
    let mut cs = Vec::with_capacity(lines.len());
    for (i, l) in lines.into_iter().enumerate() {
        if l.id != i {
            return Err(Error::Parse {
                line: i as u64 + 1,
                message: format!("concept id {} out of sequence", l.id),
            });
        }
        cs.push(FormalConcept {
            id: l.id,
            extent: to_bitset(n_objects, &l.extent, "object")?,
            intent: to_bitset(n_attributes, &l.intent, "attribute")?,
        });
    }
    let covers = match covers {
        Some(p) => read_lines::<CoverLine>(p)?
            .into_iter()
            .map(|c| (c.lower, c.upper))
            .collect(),
        None => Vec::new(),
    };
    Ok(ConceptLattice {
        n_objects,
        n_attributes,
        concepts: cs,
        covers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn identity3() -> BipartiteContext {
        BipartiteContext::from_edges(3, 3, [(0, 0), (1, 1), (2, 2)]).unwrap()
    }

    fn full2() -> BipartiteContext {
        BipartiteContext::from_edges(2, 2, [(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap()
    }

    #[test]
    fn derivations() {
        assert_eq!(derive_attributes(&full2(), &[0]).unwrap(), [0, 1]);
        assert_eq!(derive_attributes(&identity3(), &[]).unwrap(), [0, 1, 2]);
        assert_eq!(derive_objects(&identity3(), &[]).unwrap(), [0, 1, 2]);
        assert_eq!(derive_attributes(&identity3(), &[0, 1]).unwrap(), Vec::<u32>::new());
        assert!(matches!(
            derive_attributes(&identity3(), &[5]),
            Err(Error::OutOfRange { kind: "object", .. })
        ));
    }

    #[test]
    fn full_relation_has_one_concept() {
        let l = enumerate_concepts(&full2(), EnumerationBudget::default()).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l.extent_ids(0), [0, 1]);
        assert_eq!(l.intent_ids(0), [0, 1]);
        assert!(cover_relation(&l.concepts).unwrap().is_empty());
    }

    #[test]
    fn identity_lattice() {
        let l = build_lattice(&identity3(), EnumerationBudget::default()).unwrap();
        assert_eq!(l.len(), 5);
        assert_eq!(l.extent_ids(0), Vec::<u32>::new());
        assert_eq!(l.intent_ids(0), [0, 1, 2]);
        assert_eq!(l.extent_ids(4), [0, 1, 2]);
        assert_eq!(l.intent_ids(4), Vec::<u32>::new());
        for i in 1..=3 {
            assert_eq!(l.extent_ids(i), [i as u32 - 1]);
            assert_eq!(l.intent_ids(i), [i as u32 - 1]);
        }
        assert_eq!(l.covers, [(0, 1), (0, 2), (0, 3), (1, 4), (2, 4), (3, 4)]);
        assert_eq!(neighbor_pairs(&l).positives.len(), 6);
    }

    #[test]
    fn chain_covers_skip_transitive_pair() {
        let ctx = BipartiteContext::from_edges(2, 2, [(0, 0), (0, 1), (1, 0)]).unwrap();
        let l = build_lattice(&ctx, EnumerationBudget::default()).unwrap();
        // ({0},{0,1}) < ({0,1},{0}) and nothing else: a 2-chain
        assert_eq!(l.len(), 2);
        assert_eq!(l.covers, [(0, 1)]);

        let chain = BipartiteContext::from_edges(3, 3, [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0)]).unwrap();
        let l = build_lattice(&chain, EnumerationBudget::default()).unwrap();
        assert_eq!(l.len(), 3);
        assert_eq!(l.covers, [(0, 1), (1, 2)]);
    }

    #[test]
    fn duplicate_extents_rejected() {
        let l = enumerate_concepts(&identity3(), EnumerationBudget::default()).unwrap();
        let mut cs = l.concepts.clone();
        cs.insert(2, cs[1].clone());
        assert!(matches!(cover_relation(&cs), Err(Error::DuplicateExtent(2))));
    }

    #[test]
    fn budget_is_enforced() {
        let budget = EnumerationBudget {
            max_cells: 100,
            max_concepts: 3,
        };
        match enumerate_concepts(&identity3(), budget) {
            Err(Error::BudgetExceeded { partial, .. }) => assert_eq!(partial, 4),
            other => panic!("unexpected {other:?}"),
        }
        let small = EnumerationBudget {
            max_cells: 4,
            max_concepts: 100,
        };
        assert!(matches!(
            enumerate_concepts(&identity3(), small),
            Err(Error::BudgetExceeded { partial: 0, .. })
        ));
    }

    #[test]
    fn negative_sampling_exhaustion_and_determinism() {
        let ctx = BipartiteContext::from_edges(2, 2, [(0, 0), (0, 1), (1, 0)]).unwrap();
        let l = build_lattice(&ctx, EnumerationBudget::default()).unwrap();
        let np = neighbor_pairs(&l);
        assert_eq!(np.positives.len(), 1);
        assert!(np.balanced_negatives(&mut seeded(1)).is_empty());

        let l = build_lattice(&identity3(), EnumerationBudget::default()).unwrap();
        let np = neighbor_pairs(&l);
        // 10 unordered pairs minus 6 covers
        let neg = np.balanced_negatives(&mut seeded(3));
        assert_eq!(neg.len(), 4);
        assert!(neg.iter().all(|&(a, b)| !l.is_cover(a, b) && a != b));
        assert_eq!(np.sampler.sample(5, true, &mut seeded(9)), np.sampler.sample(5, true, &mut seeded(9)));
    }

    #[test]
    fn queue_pass_picks_one_lower_neighbor() {
        let l = build_lattice(&identity3(), EnumerationBudget::default()).unwrap();
        let n = queue_lower_neighbors(&l);
        assert_eq!(n[0], None);
        for (c, lower) in n.iter().enumerate().skip(1) {
            let lower = lower.unwrap();
            assert!(l.covers.contains(&(lower, c)));
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let l = build_lattice(&identity3(), EnumerationBudget::default()).unwrap();
        let (cp, vp) = (dir.path().join("c.jsonl"), dir.path().join("v.jsonl"));
        write_concepts_jsonl(&l, &cp).unwrap();
        write_covers_jsonl(&l, &vp).unwrap();
        assert_eq!(std::fs::read_to_string(&cp).unwrap().lines().count(), 5);
        let back = read_lattice_jsonl(&cp, Some(&vp), 3, 3).unwrap();
        assert_eq!(back.concepts, l.concepts);
        assert_eq!(back.covers, l.covers);
    }
}
