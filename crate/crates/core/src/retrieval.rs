//! Binary codes, Hamming ranking and the packed code export format.
//!
//! Export layout (all integers little-endian):
//!
//! ```text
//! b"DSHCODE1" | K: u32 | c: u32 | count: u64
//! count × ceil(K/64) code words: u64
//! count × id: u64
//! count × c label bytes (0 or 1)
//! ```

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use crate::datasets::{Dataset, LabelVector};
use crate::error::{Error, Result};
use crate::hashmodel::{HashModelState, RelaxedCode};

pub const CODE_MAGIC: &[u8; 8] = b"DSHCODE1";

/// `K` bits packed into 64-bit words, low bit first; padding bits are zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    bits: usize,
    words: Vec<u64>,
}

fn word_count(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl HashCode {
    pub fn zeros(bits: usize) -> Self {
        Self {
            bits,
            words: vec![0; word_count(bits)],
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut c = Self::zeros(bits.len());
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            c.words[i / 64] |= 1 << (i % 64);
        }
        c
    }

    pub fn from_words(bits: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != word_count(bits) {
            return Err(Error::Shape(format!("{} words for {bits} bits", words.len())));
        }
        let c = Self { bits, words };
        if c.padding_mask().is_some_and(|m| c.words.last().unwrap() & !m != 0) {
            return Err(Error::MalformedFile("nonzero padding bits in hash code".into()));
        }
        Ok(c)
    }

    fn padding_mask(&self) -> Option<u64> {
        (self.bits % 64 != 0).then(|| (1u64 << (self.bits % 64)) - 1)
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn to_bits(&self) -> Vec<bool> {
        (0..self.bits).map(|i| self.bit(i)).collect()
    }

    /// Bits as relaxed values in `{0, 1}`.
    pub fn to_relaxed(&self) -> Vec<f64> {
        (0..self.bits).map(|i| if self.bit(i) { 1.0 } else { 0.0 }).collect()
    }

    pub fn complement(&self) -> Self {
        let mut c = Self {
            bits: self.bits,
            words: self.words.iter().map(|w| !w).collect(),
        };
        if let Some(m) = c.padding_mask() {
            *c.words.last_mut().unwrap() &= m;
        }
        c
    }
}

/// `bit_i = 1` iff `h_i > 0.5`.
pub fn quantize(h: &RelaxedCode) -> HashCode {
    HashCode::from_bits(&h.entries().iter().map(|&v| v > 0.5).collect::<Vec<_>>())
}

/// [`quantize`] on raw values, checking that they lie in `[0, 1]`.
pub fn quantize_values(h: &[f64]) -> Result<HashCode> {
    Ok(quantize(&RelaxedCode::new(h.to_vec())?))
}

pub fn hamming_distance(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.bits != b.bits {
        return Err(Error::Shape(format!("{}-bit vs {}-bit code", a.bits, b.bits)));
    }
    Ok(hamming_unchecked(a, b))
}

fn hamming_unchecked(a: &HashCode, b: &HashCode) -> u32 {
    a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: u64,
    pub code: HashCode,
    /// Ground-truth label, used only for scoring.
    pub label: LabelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    code_bits: usize,
    class_count: usize,
    entries: Vec<IndexEntry>,
}

impl RetrievalIndex {
    pub fn new(code_bits: usize, class_count: usize, entries: Vec<IndexEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.code.len() != code_bits {
                return Err(Error::Shape(format!("entry {} has a {}-bit code", e.id, e.code.len())));
            }
            if e.label.len() != class_count {
                return Err(Error::Shape(format!("entry {} has a {}-class label", e.id, e.label.len())));
            }
            if !seen.insert(e.id) {
                return Err(Error::Domain(format!("duplicate id {}", e.id)));
            }
        }
        Ok(Self {
            code_bits,
            class_count,
            entries,
        })
    }

    pub fn code_bits(&self) -> usize {
        self.code_bits
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_query(&self, query: &HashCode) -> Result<()> {
        if query.len() != self.code_bits {
            return Err(Error::Shape(format!(
                "{}-bit query against a {}-bit index",
                query.len(),
                self.code_bits
            )));
        }
        Ok(())
    }

    /// Full ranking by ascending Hamming distance, ties by ascending id.
    pub fn search(&self, query: &HashCode) -> Result<Vec<(u64, u32)>> {
        self.check_query(query)?;
        let mut ranked: Vec<(u64, u32)> = self
            .entries
            .iter()
            .map(|e| (e.id, hamming_unchecked(&e.code, query)))
            .collect();
        ranked.sort_unstable_by_key(|&(id, d)| (d, id));
        Ok(ranked)
    }

    /// Same ranking as [`search`](Self::search), returning entry positions.
    pub fn search_positions(&self, query: &HashCode) -> Result<Vec<(usize, u32)>> {
        self.check_query(query)?;
        let mut ranked: Vec<(usize, u32)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, hamming_unchecked(&e.code, query)))
            .collect();
        ranked.sort_unstable_by_key(|&(i, d)| (d, self.entries[i].id));
        Ok(ranked)
    }

    pub fn lookup_within_radius(&self, query: &HashCode, radius: usize) -> Result<BTreeSet<u64>> {
        self.check_query(query)?;
        if radius > self.code_bits {
            return Err(Error::Domain(format!(
                "radius {radius} exceeds code length {}",
                self.code_bits
            )));
        }
        Ok(self
            .entries
            .iter()
            .filter(|e| hamming_unchecked(&e.code, query) as usize <= radius)
            .map(|e| e.id)
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let words = word_count(self.code_bits);
        let n = self.entries.len();
        let mut out = Vec::with_capacity(24 + n * (8 * words + 8 + self.class_count));
        out.extend_from_slice(CODE_MAGIC);
        out.extend_from_slice(&(self.code_bits as u32).to_le_bytes());
        out.extend_from_slice(&(self.class_count as u32).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for e in &self.entries {
            for w in e.code.words() {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        for e in &self.entries {
            out.extend_from_slice(&e.id.to_le_bytes());
        }
        for e in &self.entries {
            out.extend_from_slice(e.label.entries());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let malformed = |m: &str| Error::MalformedFile(format!("code file: {m}"));
        if bytes.len() < 24 || &bytes[..8] != CODE_MAGIC {
            return Err(malformed("bad magic or header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let k = u32_at(8);
        let c = u32_at(12);
        let n = usize::try_from(u64_at(16)).map_err(|_| malformed("count overflow"))?;
        let words = word_count(k);
        let expected = n
            .checked_mul(8 * words + 8 + c)
            .and_then(|b| b.checked_add(24))
            .ok_or_else(|| malformed("size overflow"))?;
        if bytes.len() != expected {
            return Err(malformed(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let ids_at = 24 + n * 8 * words;
        let labels_at = ids_at + n * 8;
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let w = (0..words).map(|j| u64_at(24 + 8 * (i * words + j))).collect();
            let label = LabelVector::from_indicators(bytes[labels_at + i * c..labels_at + (i + 1) * c].to_vec())?;
            entries.push(IndexEntry {
                id: u64_at(ids_at + 8 * i),
                code: HashCode::from_words(k, w)?,
                label,
            });
        }
        Self::new(k, c, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Relaxed codes for every example, in dataset order.
pub fn relaxed_codes(ds: &Dataset, model: &HashModelState) -> Result<Vec<RelaxedCode>> {
    let mut out = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(256) {
        out.extend(model.hash_batch(ds.batch(chunk))?);
    }
    Ok(out)
}

/// Quantized codes for every example, in dataset order.
pub fn encode_dataset(ds: &Dataset, model: &HashModelState) -> Result<Vec<HashCode>> {
    Ok(relaxed_codes(ds, model)?.iter().map(quantize).collect())
}

/// Index entries pairing `codes` with the examples' ground-truth labels.
pub fn index_from_codes(ds: &Dataset, codes: Vec<HashCode>) -> Result<RetrievalIndex> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("database is empty".into()));
    }
    if codes.len() != ds.len() {
        return Err(Error::Shape(format!("{} codes for {} examples", codes.len(), ds.len())));
    }
    let bits = codes[0].len();
    let entries = ds
        .examples
        .iter()
        .zip(codes)
        .map(|(e, code)| IndexEntry {
            id: e.id,
            code,
            label: e.truth.clone(),
        })
        .collect();
    RetrievalIndex::new(bits, ds.class_count, entries)
}

pub fn build_index(db: &Dataset, model: &HashModelState) -> Result<RetrievalIndex> {
    if db.is_empty() {
        return Err(Error::EmptyInput("database is empty".into()));
    }
    index_from_codes(db, encode_dataset(db, model)?)
}
