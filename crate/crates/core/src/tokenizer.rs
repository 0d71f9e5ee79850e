//! Token vocabularies and fixed-length encoder inputs.
//!
//! Layout of a pair: `[CLS] s1… [SEP] s2… [SEP] [PAD]…`. Entities inside a set are emitted in
//! ascending id order: sets are unordered, and a canonical order keeps encoding a pure function.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const MASK: u32 = 3;
pub const N_SPECIAL: u32 = 4;
/// Label value for positions that are not predicted.
pub const IGNORE: i32 = -1;
/// Hard cap on sequence length.
pub const MAX_LEN_CAP: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Object,
    Attribute,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Object => "object",
            Side::Attribute => "attribute",
        }
    }
}

/// Bijection between entity ids `0..n` of one side and token ids `4..n+4`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub side: Side,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    side: Side,
    specials: BTreeMap<String, u32>,
    tokens: BTreeMap<String, u32>,
}

impl Vocab {
    pub fn new(side: Side, labels: Vec<String>) -> Self {
        Vocab { side, labels }
    }

    pub fn n_entities(&self) -> usize {
        self.labels.len()
    }

    pub fn size(&self) -> usize {
        self.labels.len() + N_SPECIAL as usize
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn token(&self, entity: u32) -> Result<u32> {
        if (entity as usize) < self.labels.len() {
            Ok(entity + N_SPECIAL)
        } else {
            Err(Error::OutOfRange {
                kind: "entity",
                id: entity as usize,
                size: self.labels.len(),
            })
        }
    }

    pub fn entity(&self, token: u32) -> Option<u32> {
        (token >= N_SPECIAL && ((token - N_SPECIAL) as usize) < self.labels.len()).then(|| token - N_SPECIAL)
    }

    pub fn to_json(&self) -> Result<String> {
        let specials = [("[PAD]", PAD), ("[CLS]", CLS), ("[SEP]", SEP), ("[MASK]", MASK)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let tokens = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u32 + N_SPECIAL))
            .collect();
        Ok(serde_json::to_string_pretty(&VocabFile {
            side: self.side,
            specials,
            tokens,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(s)?;
        let mut labels = vec![None; f.tokens.len()];
        for (label, id) in f.tokens {
            let slot = id
                .checked_sub(N_SPECIAL)
                .and_then(|i| labels.get_mut(i as usize))
                .ok_or_else(|| Error::VocabMismatch(format!("token id {id} for `{label}` out of range")))?;
            *slot = Some(label);
        }
        let labels = labels
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::VocabMismatch("token ids are not dense".into()))?;
        Ok(Vocab { side: f.side, labels })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    /// 1 = real token, 0 = padding
    pub attention_mask: Vec<u8>,
    /// [`IGNORE`] except at positions selected for masked-token prediction
    pub mtp_labels: Vec<i32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-padding tokens (padding is always trailing).
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Shorten or pad to `len`. Only trailing padding may be cut.
    pub fn resized(&self, len: usize) -> TokenSequence {
        debug_assert!(len >= self.real_len());
        let mut s = self.clone();
        s.ids.resize(len, PAD);
        // padding always follows the first [SEP]
        s.segments.resize(len, 1);
        s.attention_mask.resize(len, 0);
        s.mtp_labels.resize(len, IGNORE);
        s
    }

    /// Replace every selected position by its label.
    pub fn unmasked(&self) -> TokenSequence {
        let mut s = self.clone();
        for (id, &l) in s.ids.iter_mut().zip(&self.mtp_labels) {
            if l != IGNORE {
                *id = l as u32;
            }
        }
        s.mtp_labels.iter_mut().for_each(|l| *l = IGNORE);
        s
    }

    pub fn n_selected(&self) -> usize {
        self.mtp_labels.iter().filter(|&&l| l != IGNORE).count()
    }
}

fn sorted_tokens(vocab: &Vocab, set: &[u32]) -> Result<Vec<u32>> {
    let mut v = set.iter().map(|&e| vocab.token(e)).collect::<Result<Vec<_>>>()?;
    v.sort_unstable();
    Ok(v)
}

fn finish(ids: Vec<u32>, segments: Vec<u8>, max_len: usize) -> TokenSequence {
    let real = ids.len();
    let seq = TokenSequence {
        attention_mask: vec![1; real],
        mtp_labels: vec![IGNORE; real],
        ids,
        segments,
    };
    seq.resized(max_len)
}

/// `[CLS] s1… [SEP] s2… [SEP] [PAD]…`; segment 0 through the first `[SEP]`, 1 afterwards.
pub fn encode_pair(vocab: &Vocab, s1: &[u32], s2: &[u32], max_len: usize) -> Result<TokenSequence> {
    let needed = s1.len() + s2.len() + 3;
    if needed > max_len {
        return Err(Error::SequenceOverflow {
            needed,
            max_len,
            context: format!("pair of {} and {} entities", s1.len(), s2.len()),
        });
    }
    let a = sorted_tokens(vocab, s1)?;
    let b = sorted_tokens(vocab, s2)?;
    let mut ids = Vec::with_capacity(needed);
    ids.push(CLS);
    ids.extend(&a);
    ids.push(SEP);
    ids.extend(&b);
    ids.push(SEP);
    let mut segments = vec![0u8; a.len() + 2];
    segments.resize(needed, 1);
    Ok(finish(ids, segments, max_len))
}

/// `[CLS] s… [SEP] [PAD]…`; real tokens are segment 0.
pub fn encode_single(vocab: &Vocab, s: &[u32], max_len: usize) -> Result<TokenSequence> {
    let needed = s.len() + 2;
    if needed > max_len {
        return Err(Error::SequenceOverflow {
            needed,
            max_len,
            context: format!("group of {} entities", s.len()),
        });
    }
    let mut ids = Vec::with_capacity(needed);
    ids.push(CLS);
    ids.extend(sorted_tokens(vocab, s)?);
    ids.push(SEP);
    let segments = vec![0u8; needed];
    Ok(finish(ids, segments, max_len))
}

/// Default pair length for a lattice whose longest extent (or intent) has `longest` entities.
pub fn default_max_len(longest: usize) -> usize {
    (2 * longest + 3).min(MAX_LEN_CAP)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskBranch {
    Masked,
    Random,
    Kept,
}

/// Select `⌈mask_rate · #entities⌉` entity positions; replace each by `[MASK]` (80%), a
/// uniformly random entity (10%) or leave it (10%). Labels record the original ids.
pub fn mask_with_rng(
    seq: &TokenSequence,
    vocab: &Vocab,
    mask_rate: f64,
    rng: &mut Rng,
) -> (TokenSequence, Vec<(usize, MaskBranch)>) {
    let entity_pos: Vec<usize> = seq
        .ids
        .iter()
        .enumerate()
        .filter(|&(_, &id)| id >= N_SPECIAL)
        .map(|(i, _)| i)
        .collect();
    let k = ((mask_rate * entity_pos.len() as f64).ceil() as usize).min(entity_pos.len());
    let mut out = seq.clone();
    let mut branches = Vec::with_capacity(k);
    if k == 0 {
        return (out, branches);
    }
    let mut chosen: Vec<usize> = index::sample(rng, entity_pos.len(), k)
        .into_iter()
        .map(|i| entity_pos[i])
        .collect();
    chosen.sort_unstable();
    for pos in chosen {
        out.mtp_labels[pos] = seq.ids[pos] as i32;
        let r: f64 = rng.gen();
        let branch = if r < 0.8 {
            out.ids[pos] = MASK;
            MaskBranch::Masked
        } else if r < 0.9 {
            out.ids[pos] = rng.gen_range(N_SPECIAL..vocab.size() as u32);
            MaskBranch::Random
        } else {
            MaskBranch::Kept
        };
        branches.push((pos, branch));
    }
    (out, branches)
}

pub fn apply_mtp_mask(seq: &TokenSequence, vocab: &Vocab, mask_rate: f64, seed: u64) -> TokenSequence {
    mask_with_rng(seq, vocab, mask_rate, &mut seeded(seed)).0
}

// ---------------------------------------------------------------------------
// binary batch files: magic, version, count, len, then ids (u32), segments (u8),
// attention mask (u8), labels (i32); all little-endian, row-major

const BATCH_MAGIC: &[u8; 4] = b"LLTB";
const BATCH_VERSION: u32 = 1;

pub fn write_batch<W: Write>(seqs: &[TokenSequence], mut w: W) -> std::io::Result<()> {
    let len = seqs.first().map_or(0, |s| s.len());
    w.write_all(BATCH_MAGIC)?;
    w.write_all(&BATCH_VERSION.to_le_bytes())?;
    w.write_all(&(seqs.len() as u32).to_le_bytes())?;
    w.write_all(&(len as u32).to_le_bytes())?;
    for s in seqs {
        assert_eq!(s.len(), len, "batch rows must share one length");
        for &id in &s.ids {
            w.write_all(&id.to_le_bytes())?;
        }
    }
    for s in seqs {
        w.write_all(&s.segments)?;
    }
    for s in seqs {
        w.write_all(&s.attention_mask)?;
    }
    for s in seqs {
        for &l in &s.mtp_labels {
            w.write_all(&l.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_batch<R: Read>(mut r: R) -> Result<Vec<TokenSequence>> {
    let bad = |m: &str| Error::Parse {
        line: 0,
        message: format!("batch file: {m}"),
    };
    let mut buf4 = [0u8; 4];
    let mut read4 = |r: &mut R| -> Result<[u8; 4]> {
        r.read_exact(&mut buf4).map_err(|_| bad("truncated"))?;
        Ok(buf4)
    };
    if &read4(&mut r)? != BATCH_MAGIC {
        return Err(bad("bad magic"));
    }
    if u32::from_le_bytes(read4(&mut r)?) != BATCH_VERSION {
        return Err(bad("unsupported version"));
    }
    let n = u32::from_le_bytes(read4(&mut r)?) as usize;
    let len = u32::from_le_bytes(read4(&mut r)?) as usize;
    let mut seqs = vec![
        TokenSequence {
            ids: vec![0; len],
            segments: vec![0; len],
            attention_mask: vec![0; len],
            mtp_labels: vec![0; len],
        };
        n
    ];
    for s in &mut seqs {
        for id in &mut s.ids {
            *id = u32::from_le_bytes(read4(&mut r)?);
        }
    }
    for s in &mut seqs {
        r.read_exact(&mut s.segments).map_err(|_| bad("truncated"))?;
    }
    for s in &mut seqs {
        r.read_exact(&mut s.attention_mask).map_err(|_| bad("truncated"))?;
    }
    for s in &mut seqs {
        for l in &mut s.mtp_labels {
            *l = i32::from_le_bytes(read4(&mut r)?);
        }
    }
    Ok(seqs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vocab {
        Vocab::new(Side::Object, (0..n).map(|i| format!("g{}", i + 1)).collect())
    }

    #[test]
    fn pair_layout() {
        let v = vocab(3);
        let (g1, g2, g3) = (4, 5, 6);
        let s = encode_pair(&v, &[1, 0], &[2], 8).unwrap();
        assert_eq!(s.ids, [CLS, g1, g2, SEP, g3, SEP, PAD, PAD]);
        assert_eq!(s.segments, [0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(s.attention_mask, [1, 1, 1, 1, 1, 1, 0, 0]);
        assert!(s.mtp_labels.iter().all(|&l| l == IGNORE));
    }

    #[test]
    fn empty_sets_and_segment_pattern() {
        let v = vocab(7);
        let s = encode_pair(&v, &[], &[], 5).unwrap();
        assert_eq!(s.ids, [CLS, SEP, SEP, PAD, PAD]);
        // four payload tokens then three: segments over the payload are 0,0,0,0,1,1,1
        let s = encode_pair(&v, &[0, 1, 2, 3], &[4, 5, 6], 10).unwrap();
        let payload: Vec<u8> = s
            .ids
            .iter()
            .zip(&s.segments)
            .filter(|(&id, _)| id >= N_SPECIAL)
            .map(|(_, &seg)| seg)
            .collect();
        assert_eq!(payload, [0, 0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn overflow_and_bad_entity() {
        let v = vocab(3);
        assert!(matches!(
            encode_pair(&v, &[0, 1], &[2], 5),
            Err(Error::SequenceOverflow { needed: 6, .. })
        ));
        assert!(matches!(encode_single(&v, &[9], 5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn single_layout() {
        let v = vocab(3);
        let s = encode_single(&v, &[2, 0], 6).unwrap();
        assert_eq!(s.ids, [CLS, 4, 6, SEP, PAD, PAD]);
        assert_eq!(s.segments, [0, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn zero_rate_is_identity() {
        let v = vocab(5);
        let s = encode_pair(&v, &[0, 1], &[2, 3], 10).unwrap();
        assert_eq!(apply_mtp_mask(&s, &v, 0.0, 1), s);
    }

    #[test]
    fn forced_mask_branch() {
        let v = vocab(5);
        let s = encode_single(&v, &[2], 4).unwrap();
        let (seed, masked) = (0..100u64)
            .map(|seed| (seed, mask_with_rng(&s, &v, 1.0, &mut seeded(seed))))
            .find(|(_, (_, b))| b[0].1 == MaskBranch::Masked)
            .map(|(seed, (m, _))| (seed, m))
            .unwrap();
        assert_eq!(masked.ids[1], MASK, "seed {seed}");
        assert_eq!(masked.mtp_labels[1], 6);
        assert_eq!(masked.n_selected(), 1);
        assert_eq!(masked.unmasked(), s);
    }

    #[test]
    fn vocab_json_roundtrip() {
        let v = vocab(4);
        assert_eq!(Vocab::from_json(&v.to_json().unwrap()).unwrap(), v);
    }

    #[test]
    fn batch_roundtrip() {
        let v = vocab(6);
        let seqs: Vec<_> = (0..3)
            .map(|i| apply_mtp_mask(&encode_pair(&v, &[i], &[3, 4, 5], 9).unwrap(), &v, 0.5, i as u64))
            .collect();
        let mut buf = Vec::new();
        write_batch(&seqs, &mut buf).unwrap();
        assert_eq!(read_batch(buf.as_slice()).unwrap(), seqs);
        assert!(read_batch(&buf[..buf.len() - 1]).is_err());
    }
}
