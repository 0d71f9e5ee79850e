//! Bipartite networks / formal contexts: loading, validation, splitting, summary statistics.
//!
//! A [`BipartiteContext`] is a triple of objects, attributes and an incidence relation. Objects
//! and attributes live in separate dense id ranges (`0..n_objects`, `0..n_attributes`), so the
//! same value serves as a bipartite network `(U, V, E)` and as a formal context `(G, M, I)`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub type ObjectId = u32;
pub type AttributeId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeListFormat {
    Csv,
    Tsv,
}

impl EdgeListFormat {
    fn delimiter(self) -> u8 {
        match self {
            EdgeListFormat::Csv => b',',
            EdgeListFormat::Tsv => b'\t',
        }
    }

    /// Guess from a file extension; anything that is not `.tsv` is read as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => EdgeListFormat::Tsv,
            _ => EdgeListFormat::Csv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BipartiteContext {
    object_labels: Vec<String>,
    attribute_labels: Vec<String>,
    // sorted by (object, attribute), no duplicates
    edges: Vec<(ObjectId, AttributeId)>,
    // parallel to `edges` when present
    dates: Option<Vec<NaiveDate>>,
    // CSR offsets into `edges` per object
    offsets: Vec<usize>,
}

impl BipartiteContext {
    /// Build a context from labelled nodes and an edge list.
    ///
    /// Duplicate edges are rejected here; [`load_edge_list`] collapses them before calling this.
    pub fn new(
        object_labels: Vec<String>,
        attribute_labels: Vec<String>,
        edges: Vec<(ObjectId, AttributeId)>,
        dates: Option<Vec<NaiveDate>>,
    ) -> Result<Self> {
        if let Some(d) = &dates {
            if d.len() != edges.len() {
                return Err(Error::InvalidContext(format!(
                    "{} dates for {} edges",
                    d.len(),
                    edges.len()
                )));
            }
        }
        let (n_obj, n_attr) = (object_labels.len(), attribute_labels.len());
        for &(u, v) in &edges {
            if u as usize >= n_obj {
                return Err(Error::OutOfRange {
                    kind: "object",
                    id: u as usize,
                    size: n_obj,
                });
            }
            if v as usize >= n_attr {
                return Err(Error::OutOfRange {
                    kind: "attribute",
                    id: v as usize,
                    size: n_attr,
                });
            }
        }
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&i| edges[i]);
        let sorted: Vec<_> = order.iter().map(|&i| edges[i]).collect();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidContext(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let dates = dates.map(|d| order.iter().map(|&i| d[i]).collect());
        let mut offsets = vec![0usize; n_obj + 1];
        for &(u, _) in &sorted {
            offsets[u as usize + 1] += 1;
        }
        for i in 0..n_obj {
            offsets[i + 1] += offsets[i];
        }
        Ok(BipartiteContext {
            object_labels,
            attribute_labels,
            edges: sorted,
            dates,
            offsets,
        })
    }

    /// Unlabelled context; labels default to `o{i}` / `a{j}`.
    pub fn from_edges(
        n_objects: usize,
        n_attributes: usize,
        edges: impl IntoIterator<Item = (ObjectId, AttributeId)>,
    ) -> Result<Self> {
        let mut edges: Vec<_> = edges.into_iter().collect();
        edges.sort_unstable();
        edges.dedup();
        Self::new(
            (0..n_objects).map(|i| format!("o{i}")).collect(),
            (0..n_attributes).map(|j| format!("a{j}")).collect(),
            edges,
            None,
        )
    }

    pub fn n_objects(&self) -> usize {
        self.object_labels.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attribute_labels.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(ObjectId, AttributeId)] {
        &self.edges
    }

    pub fn dates(&self) -> Option<&[NaiveDate]> {
        self.dates.as_deref()
    }

    pub fn object_labels(&self) -> &[String] {
        &self.object_labels
    }

    pub fn attribute_labels(&self) -> &[String] {
        &self.attribute_labels
    }

    pub fn object_label(&self, u: ObjectId) -> &str {
        &self.object_labels[u as usize]
    }

    pub fn attribute_label(&self, v: AttributeId) -> &str {
        &self.attribute_labels[v as usize]
    }

    /// Attributes adjacent to `u`, ascending.
    pub fn attributes_of(&self, u: ObjectId) -> impl Iterator<Item = AttributeId> + '_ {
        let u = u as usize;
        self.edges[self.offsets[u]..self.offsets[u + 1]]
            .iter()
            .map(|&(_, v)| v)
    }

    pub fn object_degree(&self, u: ObjectId) -> usize {
        let u = u as usize;
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn contains(&self, u: ObjectId, v: AttributeId) -> bool {
        let u_us = u as usize;
        if u_us >= self.n_objects() {
            return false;
        }
        self.edges[self.offsets[u_us]..self.offsets[u_us + 1]]
            .binary_search(&(u, v))
            .is_ok()
    }

    /// Objects adjacent to each attribute, ascending.
    pub fn attribute_columns(&self) -> Vec<Vec<ObjectId>> {
        let mut cols = vec![Vec::new(); self.n_attributes()];
        for &(u, v) in &self.edges {
            cols[v as usize].push(u);
        }
        cols
    }

    /// Sub-context induced by the given objects and attributes, re-indexed in the given order.
    pub fn restrict(&self, objects: &[ObjectId], attributes: &[AttributeId]) -> Result<Self> {
        let mut obj_map = vec![None; self.n_objects()];
        for (new, &old) in objects.iter().enumerate() {
            let slot = obj_map.get_mut(old as usize).ok_or(Error::OutOfRange {
                kind: "object",
                id: old as usize,
                size: self.n_objects(),
            })?;
            *slot = Some(new as u32);
        }
        let mut attr_map = vec![None; self.n_attributes()];
        for (new, &old) in attributes.iter().enumerate() {
            let slot = attr_map.get_mut(old as usize).ok_or(Error::OutOfRange {
                kind: "attribute",
                id: old as usize,
                size: self.n_attributes(),
            })?;
            *slot = Some(new as u32);
        }
        let mut edges = Vec::new();
        let mut dates = self.dates.as_ref().map(|_| Vec::new());
        for (i, &(u, v)) in self.edges.iter().enumerate() {
            if let (Some(nu), Some(nv)) = (obj_map[u as usize], attr_map[v as usize]) {
                edges.push((nu, nv));
                if let (Some(out), Some(src)) = (dates.as_mut(), self.dates.as_ref()) {
                    out.push(src[i]);
                }
            }
        }
        Self::new(
            objects
                .iter()
                .map(|&u| self.object_labels[u as usize].clone())
                .collect(),
            attributes
                .iter()
                .map(|&v| self.attribute_labels[v as usize].clone())
                .collect(),
            edges,
            dates,
        )
    }

    /// Keep only the edges selected by `keep`, then drop attributes (and optionally objects)
    /// that end up isolated. Surviving ids keep their relative order.
    fn filter_edges(
        &self,
        keep: impl Fn(usize) -> bool,
        prune_objects: bool,
        prune_attributes: bool,
    ) -> Result<Self> {
        let mut obj_used = vec![!prune_objects; self.n_objects()];
        let mut attr_used = vec![!prune_attributes; self.n_attributes()];
        for (i, &(u, v)) in self.edges.iter().enumerate() {
            if keep(i) {
                obj_used[u as usize] = true;
                attr_used[v as usize] = true;
            }
        }
        let objects: Vec<u32> = (0..self.n_objects() as u32)
            .filter(|&u| obj_used[u as usize])
            .collect();
        let attributes: Vec<u32> = (0..self.n_attributes() as u32)
            .filter(|&v| attr_used[v as usize])
            .collect();
        let mut edges = Vec::new();
        let mut dates = self.dates.as_ref().map(|_| Vec::new());
        for (i, &e) in self.edges.iter().enumerate() {
            if keep(i) {
                edges.push(e);
                if let (Some(out), Some(src)) = (dates.as_mut(), self.dates.as_ref()) {
                    out.push(src[i]);
                }
            }
        }
        let only_kept = BipartiteContext::new(
            self.object_labels.clone(),
            self.attribute_labels.clone(),
            edges,
            dates,
        )?;
        only_kept.restrict(&objects, &attributes)
    }

    /// Maps every attribute label of `self` to its id in `other`.
    pub fn attribute_map_into(&self, other: &BipartiteContext) -> Result<Vec<AttributeId>> {
        let index: HashMap<&str, u32> = other
            .attribute_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i as u32))
            .collect();
        self.attribute_labels
            .iter()
            .map(|l| {
                index.get(l.as_str()).copied().ok_or_else(|| {
                    Error::InvalidContext(format!("attribute `{l}` missing from target context"))
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// edge-list IO

#[derive(Debug)]
pub struct LoadReport {
    pub context: BipartiteContext,
    pub duplicates: usize,
}

fn parse_date(raw: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok().or_else(|| {
        chrono::DateTime::parse_from_rfc3339(raw)
            .ok()
            .map(|dt| dt.with_timezone(&chrono::Utc).date_naive())
    })
}

fn is_header(record: &csv::StringRecord) -> bool {
    record.len() >= 2
        && record[0].trim().eq_ignore_ascii_case("object")
        && record[1].trim().eq_ignore_ascii_case("attribute")
}

/// Read `object,attribute[,date]` rows. Labels are interned to dense ids in first-appearance
/// order; repeated rows are collapsed (keeping the earliest date) and counted.
pub fn read_edge_list<R: Read>(reader: R, format: EdgeListFormat) -> Result<LoadReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut objects: HashMap<String, u32> = HashMap::new();
    let mut attributes: HashMap<String, u32> = HashMap::new();
    let mut object_labels = Vec::new();
    let mut attribute_labels = Vec::new();
    let mut seen: HashMap<(u32, u32), usize> = HashMap::new();
    let mut edges = Vec::new();
    let mut dates: Vec<Option<NaiveDate>> = Vec::new();
    let mut duplicates = 0;
    let mut dated_rows = 0usize;

    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(row as u64 + 1);
        if row == 0 && is_header(&rec) {
            continue;
        }
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 2 && rec.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 or 3 fields, found {}", rec.len()),
            });
        }
        let (o, a) = (&rec[0], &rec[1]);
        if o.is_empty() || a.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty object or attribute label".into(),
            });
        }
        let date = match rec.get(2) {
            Some(raw) if !raw.is_empty() => {
                dated_rows += 1;
                Some(parse_date(raw).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("bad date `{raw}`"),
                })?)
            }
            _ => None,
        };
        let u = *objects.entry(o.to_string()).or_insert_with(|| {
            object_labels.push(o.to_string());
            object_labels.len() as u32 - 1
        });
        let v = *attributes.entry(a.to_string()).or_insert_with(|| {
            attribute_labels.push(a.to_string());
            attribute_labels.len() as u32 - 1
        });
        match seen.get(&(u, v)) {
            Some(&i) => {
                duplicates += 1;
                if let (Some(new), Some(old)) = (date, dates[i]) {
                    if new < old {
                        dates[i] = Some(new);
                    }
                } else if dates[i].is_none() {
                    dates[i] = date;
                }
            }
            None => {
                seen.insert((u, v), edges.len());
                edges.push((u, v));
                dates.push(date);
            }
        }
    }
    if edges.is_empty() {
        return Err(Error::Empty("edge list has no rows".into()));
    }
    if duplicates > 0 {
        log::warn!("collapsed {duplicates} duplicate edge rows");
    }
    let dates = if dated_rows == 0 {
        None
    } else if dates.iter().all(Option::is_some) {
        Some(dates.into_iter().map(Option::unwrap).collect())
    } else {
        return Err(Error::Parse {
            line: 0,
            message: "some rows carry a date and others do not".into(),
        });
    };
    let context = BipartiteContext::new(object_labels, attribute_labels, edges, dates)?;
    Ok(LoadReport {
        context,
        duplicates,
    })
}

pub fn load_edge_list(path: impl AsRef<Path>, format: EdgeListFormat) -> Result<LoadReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_edge_list(BufReader::new(file), format)
}

/// Writes a header plus one row per edge in canonical `(object id, attribute id)` order.
/// Isolated nodes are not representable in an edge list and are dropped.
pub fn write_edge_list<W: Write>(ctx: &BipartiteContext, writer: W, format: EdgeListFormat) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(format.delimiter())
        .from_writer(writer);
    match ctx.dates() {
        Some(_) => w.write_record(["object", "attribute", "date"])?,
        None => w.write_record(["object", "attribute"])?,
    }
    for (i, &(u, v)) in ctx.edges().iter().enumerate() {
        let (o, a) = (ctx.object_label(u), ctx.attribute_label(v));
        match ctx.dates() {
            Some(d) => w.write_record([o, a, &d[i].format("%Y-%m-%d").to_string()])?,
            None => w.write_record([o, a])?,
        }
    }
    w.flush().map_err(|e| Error::io("<edge list>", e))?;
    Ok(())
}

pub fn save_edge_list(ctx: &BipartiteContext, path: impl AsRef<Path>, format: EdgeListFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_edge_list(ctx, BufWriter::new(file), format)
}

/// Lossless on-disk form, including isolated nodes.
#[derive(Serialize, Deserialize)]
struct ContextFile {
    objects: Vec<String>,
    attributes: Vec<String>,
    edges: Vec<[u32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dates: Option<Vec<NaiveDate>>,
}

impl Serialize for BipartiteContext {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ContextFile {
            objects: self.object_labels.clone(),
            attributes: self.attribute_labels.clone(),
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
            dates: self.dates.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BipartiteContext {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = ContextFile::deserialize(d)?;
        BipartiteContext::new(
            f.objects,
            f.attributes,
            f.edges.into_iter().map(|[u, v]| (u, v)).collect(),
            f.dates,
        )
        .map_err(serde::de::Error::custom)
    }
}

pub fn save_context_json(ctx: &BipartiteContext, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(BufWriter::new(file), ctx)?;
    Ok(())
}

pub fn load_context_json(path: impl AsRef<Path>) -> Result<BipartiteContext> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Load a context from `.json` (lossless form) or an edge list (`.csv` / `.tsv`).
pub fn load_any(path: impl AsRef<Path>) -> Result<BipartiteContext> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => load_context_json(path),
        _ => Ok(load_edge_list(path, EdgeListFormat::from_path(path))?.context),
    }
}

// ---------------------------------------------------------------------------
// splits

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitKind {
    Temporal { cutoff: NaiveDate },
    RandomRemoval { fraction: f64, seed: u64 },
}

/// An input network and the target network it should be completed towards.
///
/// Both contexts share the object id space. Input attributes are a (re-indexed) subset of the
/// target attributes; `attribute_to_target[v]` gives the target id of input attribute `v`.
#[derive(Clone, Debug)]
pub struct SplitPair {
    pub input: BipartiteContext,
    pub target: BipartiteContext,
    pub kind: SplitKind,
    pub attribute_to_target: Vec<AttributeId>,
}

impl SplitPair {
    /// Pair up two stored contexts, recovering the attribute mapping from labels.
    pub fn from_contexts(input: BipartiteContext, target: BipartiteContext, kind: SplitKind) -> Result<Self> {
        if input.object_labels != target.object_labels {
            return Err(Error::InvalidContext(
                "input and target contexts must share the object id space".into(),
            ));
        }
        let attribute_to_target = input.attribute_map_into(&target)?;
        Ok(SplitPair {
            input,
            target,
            kind,
            attribute_to_target,
        })
    }

    /// True when `(u, v)` (target ids) is an input edge.
    pub fn input_has_edge(&self, u: ObjectId, v_target: AttributeId) -> bool {
        self.input
            .attributes_of(u)
            .any(|v| self.attribute_to_target[v as usize] == v_target)
    }

    /// Input edges expressed in target attribute ids.
    pub fn input_edges_in_target_ids(&self) -> Vec<(ObjectId, AttributeId)> {
        let mut e: Vec<_> = self
            .input
            .edges()
            .iter()
            .map(|&(u, v)| (u, self.attribute_to_target[v as usize]))
            .collect();
        e.sort_unstable();
        e
    }
}

/// History/current split at a cutoff date.
///
/// The input keeps edges dated before `cutoff` and the nodes they touch. The target keeps every
/// object with at least one edge dated before `cutoff`, with all of that object's edges.
pub fn split_temporal(ctx: &BipartiteContext, cutoff: NaiveDate) -> Result<SplitPair> {
    let dates = ctx
        .dates()
        .ok_or_else(|| Error::MissingDates("temporal split needs a date on every edge".into()))?;
    if let (Some(lo), Some(hi)) = (dates.iter().min(), dates.iter().max()) {
        if cutoff <= *lo || cutoff > *hi {
            log::warn!("cutoff {cutoff} outside data range {lo}..={hi}; split is degenerate");
        }
    }
    let mut has_history = vec![false; ctx.n_objects()];
    for (i, &(u, _)) in ctx.edges().iter().enumerate() {
        if dates[i] < cutoff {
            has_history[u as usize] = true;
        }
    }
    let input = ctx.filter_edges(|i| dates[i] < cutoff, true, true)?;
    let target = ctx.filter_edges(|i| has_history[ctx.edges()[i].0 as usize], true, true)?;
    SplitPair::from_contexts(input, target, SplitKind::Temporal { cutoff })
}

#[derive(Clone, Copy, Debug)]
pub struct RandomSplitOptions {
    pub fraction: f64,
    pub seed: u64,
    /// Restrict the target to attributes that survive in the input. Off by default.
    pub restrict_target: bool,
}

impl RandomSplitOptions {
    pub fn new(fraction: f64, seed: u64) -> Self {
        RandomSplitOptions {
            fraction,
            seed,
            restrict_target: false,
        }
    }
}

/// Remove exactly `⌊fraction·|E|⌋` uniformly sampled edges from the input.
///
/// Attributes left without edges are pruned from the input; objects are kept so both sides
/// share the object id space.
pub fn split_random_edges(ctx: &BipartiteContext, opts: RandomSplitOptions) -> Result<SplitPair> {
    if !(0.0..=1.0).contains(&opts.fraction) {
        return Err(Error::Config(format!(
            "removal fraction {} outside [0, 1]",
            opts.fraction
        )));
    }
    let n = ctx.n_edges();
    let k = (opts.fraction * n as f64).floor() as usize;
    let mut rng = seeded(opts.seed);
    let mut removed = vec![false; n];
    for i in index::sample(&mut rng, n, k).into_iter() {
        removed[i] = true;
    }
    let input = ctx.filter_edges(|i| !removed[i], false, true)?;
    let target = if opts.restrict_target {
        let survivors: Vec<u32> = input.attribute_map_into(ctx)?;
        let objects: Vec<u32> = (0..ctx.n_objects() as u32).collect();
        ctx.restrict(&objects, &survivors)?
    } else {
        ctx.clone()
    };
    SplitPair::from_contexts(
        input,
        target,
        SplitKind::RandomRemoval {
            fraction: opts.fraction,
            seed: opts.seed,
        },
    )
}

// ---------------------------------------------------------------------------
// statistics

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextStats {
    pub n_objects: usize,
    pub n_attributes: usize,
    pub n_edges: usize,
    pub density: f64,
    /// degree → number of objects with that degree
    pub object_degree_histogram: BTreeMap<usize, usize>,
    pub attribute_degree_histogram: BTreeMap<usize, usize>,
}

pub fn context_stats(ctx: &BipartiteContext) -> ContextStats {
    let cells = ctx.n_objects() * ctx.n_attributes();
    let density = if cells == 0 {
        0.0
    } else {
        ctx.n_edges() as f64 / cells as f64
    };
    let mut obj_hist = BTreeMap::new();
    for u in 0..ctx.n_objects() as u32 {
        *obj_hist.entry(ctx.object_degree(u)).or_insert(0) += 1;
    }
    let mut attr_deg = vec![0usize; ctx.n_attributes()];
    for &(_, v) in ctx.edges() {
        attr_deg[v as usize] += 1;
    }
    let mut attr_hist = BTreeMap::new();
    for d in attr_deg {
        *attr_hist.entry(d).or_insert(0) += 1;
    }
    ContextStats {
        n_objects: ctx.n_objects(),
        n_attributes: ctx.n_attributes(),
        n_edges: ctx.n_edges(),
        density,
        object_degree_histogram: obj_hist,
        attribute_degree_histogram: attr_hist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn read(s: &str) -> Result<LoadReport> {
        read_edge_list(s.as_bytes(), EdgeListFormat::Csv)
    }

    #[test]
    fn load_interns_in_first_appearance_order() {
        let r = read("a,p1\nb,p1\n").unwrap();
        assert_eq!(r.context.n_objects(), 2);
        assert_eq!(r.context.n_attributes(), 1);
        assert_eq!(r.context.n_edges(), 2);
        assert_eq!(r.context.object_labels(), ["a", "b"]);
        assert_eq!(r.duplicates, 0);
    }

    #[test]
    fn load_collapses_duplicates() {
        let r = read("object,attribute\na,p1\na,p1\n").unwrap();
        assert_eq!(r.context.n_edges(), 1);
        assert_eq!(r.duplicates, 1);
    }

    #[test]
    fn load_reports_line_of_bad_row() {
        match read("a,p1\nb,p1,c,d\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match read("a,p1,2014-01-01\nb,p2,notadate\n") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("notadate"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read(""), Err(Error::Empty(_))));
        assert!(matches!(read("object,attribute\n"), Err(Error::Empty(_))));
    }

    #[test]
    fn tsv_and_dates() {
        let r = read_edge_list("a\tp1\t2014-03-01\nb\tp2\t2017-01-01T10:00:00Z\n".as_bytes(), EdgeListFormat::Tsv)
            .unwrap();
        assert_eq!(r.context.dates().unwrap(), [d("2014-03-01"), d("2017-01-01")]);
    }

    #[test]
    fn stats_of_empty_and_diagonal() {
        let empty = BipartiteContext::from_edges(0, 0, []).unwrap();
        let s = context_stats(&empty);
        assert_eq!((s.n_objects, s.n_attributes, s.n_edges), (0, 0, 0));
        assert_eq!(s.density, 0.0);

        let diag = BipartiteContext::from_edges(3, 3, [(0, 0), (1, 1), (2, 2)]).unwrap();
        let s = context_stats(&diag);
        assert_eq!(s.n_edges, 3);
        assert!((s.density - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.object_degree_histogram, BTreeMap::from([(1, 3)]));
    }

    #[test]
    fn temporal_split_hand_example() {
        let ctx = read("u1,v1,2014-05-01\nu2,v2,2017-02-01\n").unwrap().context;
        let s = split_temporal(&ctx, d("2016-01-01")).unwrap();
        assert_eq!(s.input.object_labels(), ["u1"]);
        assert_eq!(s.input.attribute_labels(), ["v1"]);
        assert_eq!(s.input.n_edges(), 1);
        assert_eq!(s.target.object_labels(), ["u1"]);
        assert_eq!(s.target.n_edges(), 1);
    }

    #[test]
    fn temporal_split_before_cutoff_is_noop() {
        let ctx = read("u1,v1,2010-01-01\nu2,v1,2011-01-01\nu2,v2,2012-01-01\n")
            .unwrap()
            .context;
        let s = split_temporal(&ctx, d("2016-01-01")).unwrap();
        assert_eq!(s.input, ctx);
        assert_eq!(s.target, ctx);
    }

    #[test]
    fn temporal_split_keeps_new_edges_of_old_objects_in_target() {
        let ctx = read("u1,v1,2014-01-01\nu1,v3,2018-01-01\nu2,v2,2017-01-01\nu3,v1,2015-01-01\n")
            .unwrap()
            .context;
        let s = split_temporal(&ctx, d("2016-01-01")).unwrap();
        assert_eq!(s.input.n_edges(), 2);
        assert_eq!(s.target.n_edges(), 3);
        assert_eq!(s.target.object_labels(), ["u1", "u3"]);
        assert_eq!(s.input.object_labels(), s.target.object_labels());
        // every target object has history
        let hist = s.input.edges().iter().map(|e| e.0).collect::<std::collections::BTreeSet<_>>();
        assert_eq!(hist.len(), s.target.n_objects());
    }

    #[test]
    fn temporal_split_requires_dates() {
        let ctx = BipartiteContext::from_edges(1, 1, [(0, 0)]).unwrap();
        assert!(matches!(
            split_temporal(&ctx, d("2016-01-01")),
            Err(Error::MissingDates(_))
        ));
    }

    #[test]
    fn random_split_counts() {
        let edges = (0..10u32).flat_map(|u| (0..10u32).map(move |v| (u, v)));
        let ctx = BipartiteContext::from_edges(10, 10, edges).unwrap();
        let s = split_random_edges(&ctx, RandomSplitOptions::new(0.1, 7)).unwrap();
        assert_eq!(s.input.n_edges(), 90);
        assert_eq!(s.target.n_edges(), 100);
        let s0 = split_random_edges(&ctx, RandomSplitOptions::new(0.0, 7)).unwrap();
        assert_eq!(s0.input, ctx);
        assert_eq!(s0.target, ctx);
        let target_edges: std::collections::HashSet<_> = s.target.edges().iter().collect();
        assert!(s
            .input_edges_in_target_ids()
            .iter()
            .all(|e| target_edges.contains(e)));
    }

    #[test]
    fn random_split_prunes_isolated_attributes() {
        // attribute 1 has a single edge; removing everything isolates it
        let ctx = BipartiteContext::from_edges(2, 2, [(0, 0), (1, 0), (1, 1)]).unwrap();
        let s = split_random_edges(&ctx, RandomSplitOptions::new(1.0, 3)).unwrap();
        assert_eq!(s.input.n_attributes(), 0);
        assert_eq!(s.input.n_objects(), 2);
        assert_eq!(s.target.n_attributes(), 2);

        let opts = RandomSplitOptions {
            restrict_target: true,
            ..RandomSplitOptions::new(1.0, 3)
        };
        let s = split_random_edges(&ctx, opts).unwrap();
        assert_eq!(s.target.n_attributes(), 0);
    }

    #[test]
    fn random_split_is_deterministic() {
        let edges = (0..20u32).flat_map(|u| (0..7u32).filter(move |v| (u + v) % 3 != 0).map(move |v| (u, v)));
        let ctx = BipartiteContext::from_edges(20, 7, edges).unwrap();
        let a = split_random_edges(&ctx, RandomSplitOptions::new(0.3, 11)).unwrap();
        let b = split_random_edges(&ctx, RandomSplitOptions::new(0.3, 11)).unwrap();
        assert_eq!(
            serde_json::to_vec(&a.input).unwrap(),
            serde_json::to_vec(&b.input).unwrap()
        );
        let c = split_random_edges(&ctx, RandomSplitOptions::new(0.3, 12)).unwrap();
        assert_ne!(a.input, c.input);
    }

    #[test]
    fn json_roundtrip_keeps_isolated_nodes() {
        let ctx = BipartiteContext::from_edges(3, 2, [(0, 1)]).unwrap();
        let s = serde_json::to_string(&ctx).unwrap();
        let back: BipartiteContext = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ctx);
    }

    #[test]
    fn rejects_out_of_range_edges() {
        assert!(matches!(
            BipartiteContext::from_edges(1, 1, [(0, 3)]),
            Err(Error::OutOfRange { kind: "attribute", .. })
        ));
    }
}
