//! Embedding providers and feature bundles.
//!
//! Two providers ship with the crate: [`HashEmbedder`], a deterministic
//! character n-gram feature hasher, and [`StoreProvider`], which serves
//! precomputed encoder vectors from an [`EmbeddingStore`] file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ingest::{normalize_text, Dataset};
use crate::types::{ClaimRecord, FeatureBundle, Label, QASet, SequenceVecs, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub dim_claim: usize,
    pub dim_question: usize,
    pub dim_answer_pair: usize,
}

pub trait EmbeddingProvider: Sync {
    fn dims(&self) -> Dims;

    fn embed_claim(&self, claim: &ClaimRecord) -> Result<Vec<f64>>;

    fn embed_question(&self, claim_id: &str, index: usize, question: &str) -> Result<Vec<f64>>;

    fn embed_answer_pair(
        &self,
        claim_id: &str,
        index: usize,
        claim_answer: &str,
        evidence_answer: &str,
    ) -> Result<Vec<f64>>;

    /// Vectors of whole concatenated sequences, if the provider has them.
    fn embed_sequences(&self, _claim_id: &str) -> Result<Option<SequenceVecs>> {
        Ok(None)
    }

    fn describe(&self) -> String;
}

// ---------------------------------------------------------------------------
// Feature hashing

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

// splitmix64 finalizer; spreads FNV output over all bits before bucketing.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Signed feature hashing of character n-grams into a fixed-width vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashEmbedder {
    pub dim: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder {
            dim: 256,
            ngram_min: 3,
            ngram_max: 5,
            seed: 0,
        }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("hash embedder dim must be positive".into()));
        }
        Ok(HashEmbedder {
            dim,
            seed,
            ..Default::default()
        })
    }

    fn add(&self, out: &mut [f64], gram: &str) {
        let h = mix(fnv1a(self.seed, gram.as_bytes()));
        let bucket = (h % self.dim as u64) as usize;
        out[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }

    /// L2-normalized hashed n-gram counts of `normalize_text(text)`, with
    /// `<`/`>` boundary markers. Empty text maps to the zero vector.
    pub fn hash_embed(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let norm = normalize_text(text);
        if norm.is_empty() {
            return out;
        }
        let padded = format!("<{norm}>");
        let chars: Vec<(usize, char)> = padded.char_indices().collect();
        let mut buf = String::new();
        for n in self.ngram_min..=self.ngram_max {
            for start in 0..chars.len().saturating_sub(n - 1) {
                let from = chars[start].0;
                let to = chars.get(start + n).map_or(padded.len(), |c| c.0);
                buf.clear();
                buf.push_str(&padded[from..to]);
                self.add(&mut out, &buf);
            }
        }
        // Sign cancellation can zero every bucket; the whole string breaks it.
        if out.iter().all(|&x| x == 0.0) {
            self.add(&mut out, &padded);
        }
        let length = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.iter_mut().for_each(|x| *x /= length);
        out
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dims(&self) -> Dims {
        Dims {
            dim_claim: self.dim,
            dim_question: self.dim,
            dim_answer_pair: 2 * self.dim,
        }
    }

    fn embed_claim(&self, claim: &ClaimRecord) -> Result<Vec<f64>> {
        Ok(self.hash_embed(&claim.claim))
    }

    fn embed_question(&self, _: &str, _: usize, question: &str) -> Result<Vec<f64>> {
        Ok(self.hash_embed(question))
    }

    /// Concatenation `[hash(claim_answer); hash(evidence_answer)]`.
    fn embed_answer_pair(&self, _: &str, _: usize, a_claim: &str, a_evidence: &str) -> Result<Vec<f64>> {
        let mut v = self.hash_embed(a_claim);
        v.extend(self.hash_embed(a_evidence));
        Ok(v)
    }

    fn describe(&self) -> String {
        format!(
            "hash(dim={}, ngrams={}..={}, seed={})",
            self.dim, self.ngram_min, self.ngram_max, self.seed
        )
    }
}

// ---------------------------------------------------------------------------
// Embedding store

const KEY_PREFIXES: [&str; 6] = ["c:", "q:", "ap:", "cqseq:", "qseq:", "aaseq:"];

/// Precomputed vectors keyed `c:{claim}`, `q:{claim}:{i}`, `ap:{claim}:{i}`,
/// plus optional sequence keys `cqseq:{claim}`, `qseq:{claim}`, `aaseq:{claim}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub dims: Dims,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new(dims: Dims) -> Self {
        EmbeddingStore {
            dims,
            vectors: BTreeMap::new(),
        }
    }

    /// Expected vector length for a key, or `None` for an unknown prefix.
    pub fn dim_for_key(&self, key: &str) -> Option<usize> {
        let prefix = KEY_PREFIXES.iter().find(|p| key.starts_with(**p))?;
        Some(match *prefix {
            "c:" | "cqseq:" => self.dims.dim_claim,
            "q:" | "qseq:" => self.dims.dim_question,
            _ => self.dims.dim_answer_pair,
        })
    }

    pub fn insert(&mut self, key: impl Into<String>, vec: Vec<f64>) -> Result<()> {
        let key = key.into();
        let dim = self
            .dim_for_key(&key)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown store key prefix in `{key}`")))?;
        if vec.len() != dim {
            return Err(Error::dims(format!("store key `{key}`"), dim, vec.len()));
        }
        if vec.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("store key `{key}`")));
        }
        self.vectors.insert(key, vec);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&[f64]> {
        self.vectors
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Line {
            key: String,
            vec: Vec<f64>,
        }
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let (n, header) = lines.next().ok_or_else(|| err(1, "missing header line".into()))?;
        let dims: Dims = serde_json::from_str(header).map_err(|e| err(n, format!("header: {e}")))?;
        if dims.dim_claim == 0 || dims.dim_question == 0 || dims.dim_answer_pair == 0 {
            return Err(err(n, "header dims must be positive".into()));
        }
        let mut store = EmbeddingStore::new(dims);
        for (n, raw) in lines {
            let line: Line = serde_json::from_str(raw).map_err(|e| err(n, e.to_string()))?;
            if store.vectors.contains_key(&line.key) {
                return Err(err(n, format!("duplicate key `{}`", line.key)));
            }
            store.insert(line.key, line.vec).map_err(|e| err(n, e.to_string()))?;
        }
        Ok(store)
    }

    /// Canonical encoding: header, then one line per key in sorted order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        #[derive(Serialize)]
        struct Line<'a> {
            key: &'a str,
            vec: &'a [f64],
        }
        let mut out = serde_json::to_vec(&self.dims)?;
        out.push(b'\n');
        for (key, vec) in &self.vectors {
            serde_json::to_writer(&mut out, &Line { key, vec })?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}

/// Serves vectors from an [`EmbeddingStore`].
pub struct StoreProvider {
    store: EmbeddingStore,
}

impl StoreProvider {
    pub fn new(store: EmbeddingStore) -> Self {
        StoreProvider { store }
    }
}

impl EmbeddingProvider for StoreProvider {
    fn dims(&self) -> Dims {
        self.store.dims
    }

    fn embed_claim(&self, claim: &ClaimRecord) -> Result<Vec<f64>> {
        Ok(self.store.get(&format!("c:{}", claim.id))?.to_vec())
    }

    fn embed_question(&self, claim_id: &str, index: usize, _: &str) -> Result<Vec<f64>> {
        Ok(self.store.get(&format!("q:{claim_id}:{index}"))?.to_vec())
    }

    fn embed_answer_pair(&self, claim_id: &str, index: usize, _: &str, _: &str) -> Result<Vec<f64>> {
        Ok(self.store.get(&format!("ap:{claim_id}:{index}"))?.to_vec())
    }

    fn embed_sequences(&self, claim_id: &str) -> Result<Option<SequenceVecs>> {
        let keys = [
            format!("cqseq:{claim_id}"),
            format!("qseq:{claim_id}"),
            format!("aaseq:{claim_id}"),
        ];
        let present = keys.iter().filter(|k| self.store.vectors.contains_key(*k)).count();
        match present {
            0 => Ok(None),
            3 => Ok(Some(SequenceVecs {
                claim_questions: self.store.get(&keys[0])?.to_vec(),
                questions: self.store.get(&keys[1])?.to_vec(),
                answer_pairs: self.store.get(&keys[2])?.to_vec(),
            })),
            _ => {
                let missing = keys.iter().find(|k| !self.store.vectors.contains_key(*k)).unwrap();
                Err(Error::MissingKey(missing.clone()))
            }
        }
    }

    fn describe(&self) -> String {
        format!(
            "store(dim_claim={}, dim_question={}, dim_answer_pair={})",
            self.store.dims.dim_claim, self.store.dims.dim_question, self.store.dims.dim_answer_pair
        )
    }
}

// ---------------------------------------------------------------------------
// Bundles

fn check_dim(v: Vec<f64>, expected: usize, what: &str) -> Result<Vec<f64>> {
    if v.len() != expected {
        return Err(Error::dims(what, expected, v.len()));
    }
    Ok(v)
}

/// Embeds a claim and its selected QA set.
///
/// Padded positions (exact copies of pair 0) fall back to pair 0's vectors
/// when the provider has none of their own.
pub fn build_bundle(provider: &dyn EmbeddingProvider, claim: &ClaimRecord, qaset: &QASet) -> Result<FeatureBundle> {
    if qaset.pairs.is_empty() {
        return Err(Error::EmptyQaSet(claim.id.clone()));
    }
    let dims = provider.dims();
    let first = &qaset.pairs[0];
    let with_fallback = |i: usize, f: &dyn Fn(usize) -> Result<Vec<f64>>| match f(i) {
        Err(Error::MissingKey(_)) if i > 0 && qaset.pairs[i] == *first => f(0),
        other => other,
    };
    let claim_vec = check_dim(provider.embed_claim(claim)?, dims.dim_claim, "claim vector")?;
    let mut question_vecs = Vec::with_capacity(qaset.pairs.len());
    let mut answer_vecs = Vec::with_capacity(qaset.pairs.len());
    for i in 0..qaset.pairs.len() {
        let q = with_fallback(i, &|k| provider.embed_question(&claim.id, k, &qaset.pairs[k].question))?;
        question_vecs.push(check_dim(q, dims.dim_question, "question vector")?);
        let a = with_fallback(i, &|k| {
            let p = &qaset.pairs[k];
            provider.embed_answer_pair(&claim.id, k, &p.claim_answer, p.evidence_text())
        })?;
        answer_vecs.push(check_dim(a, dims.dim_answer_pair, "answer-pair vector")?);
    }
    let bundle = FeatureBundle {
        claim_vec,
        question_vecs,
        answer_vecs,
        sequence: provider.embed_sequences(&claim.id)?,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub claim_id: String,
    pub claim: String,
    pub label: Label,
    pub split: Split,
    pub qa_set: QASet,
    pub bundle: FeatureBundle,
}

impl BundleEntry {
    /// The claim as a record. Evidence is not archived, so it is empty.
    pub fn claim_record(&self) -> ClaimRecord {
        ClaimRecord {
            id: self.claim_id.clone(),
            claim: self.claim.clone(),
            evidence: Vec::new(),
            label: self.label,
            split: self.split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstainedClaim {
    pub claim_id: String,
    pub label: Label,
    pub split: Split,
}

const ARCHIVE_MAGIC: &str = "qaproxy-bundles";
const ARCHIVE_VERSION: u32 = 1;

/// Feature bundles for a whole dataset, plus the abstained claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleArchive {
    pub magic: String,
    pub version: u32,
    pub provider: String,
    pub dims: Dims,
    pub n_fixed: usize,
    pub entries: Vec<BundleEntry>,
    pub abstained: Vec<AbstainedClaim>,
}

impl BundleArchive {
    pub fn build(provider: &dyn EmbeddingProvider, dataset: &Dataset, exec: Exec) -> Result<Self> {
        let with_qa: Vec<(&ClaimRecord, &QASet)> = dataset
            .claims
            .iter()
            .filter_map(|c| dataset.qa_sets.get(&c.id).map(|q| (c, q)))
            .collect();
        let entries = exec.try_map(&with_qa, |(claim, qa)| {
            Ok::<_, Error>(BundleEntry {
                claim_id: claim.id.clone(),
                claim: claim.claim.clone(),
                label: claim.label,
                split: claim.split,
                qa_set: (*qa).clone(),
                bundle: build_bundle(provider, claim, qa)?,
            })
        })?;
        let abstained = dataset
            .claims
            .iter()
            .filter(|c| !dataset.qa_sets.contains_key(&c.id))
            .map(|c| AbstainedClaim {
                claim_id: c.id.clone(),
                label: c.label,
                split: c.split,
            })
            .collect();
        Ok(BundleArchive {
            magic: ARCHIVE_MAGIC.into(),
            version: ARCHIVE_VERSION,
            provider: provider.describe(),
            dims: provider.dims(),
            n_fixed: dataset.n_fixed,
            entries,
            abstained,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        bincode::serialize(self).map_err(|e| Error::Archive(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let archive: BundleArchive =
            bincode::deserialize(bytes).map_err(|e| Error::Archive(e.to_string()))?;
        if archive.magic != ARCHIVE_MAGIC || archive.version != ARCHIVE_VERSION {
            return Err(Error::Archive(format!(
                "unsupported archive `{}` v{}",
                archive.magic, archive.version
            )));
        }
        Ok(archive)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn entry(&self, claim_id: &str) -> Option<&BundleEntry> {
        self.entries.iter().find(|e| e.claim_id == claim_id)
    }
}
