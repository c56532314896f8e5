//! Dense vector representations of queries and documents.
//!
//! Everything downstream (value network inputs, Rocchio reformulation, the
//! synthetic relevance oracle) works on [`EmbeddingVector`]s. Two embedding
//! providers are built in: a seeded hashed bag-of-words embedder that needs
//! no external model, and a [`Lexicon`] embedder that averages per-token
//! vectors (used by the synthetic corpus so that text-space feedback and
//! vector-space feedback live in the same geometry). Precomputed vectors can
//! be ingested from the TSV format handled by [`read_vectors_tsv`].

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Default embedding width.
pub const DEFAULT_DIM: usize = 512;

/// Sparse term-weight map keyed by normalized token.
pub type TermWeights = BTreeMap<String, f64>;

/// A dense, finite, non-empty real vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding vectors must have dim >= 1"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite entry at index {i}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|v| v * s).collect())
    }

    /// `self * a + other * b`, entrywise.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }

    /// Unit-length copy; the zero vector stays zero.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            self.clone()
        } else {
            self.scaled(1.0 / n)
        }
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_same_dim(v: &EmbeddingVector, dim: usize) -> Result<()> {
    check_dim(dim, v.dim())
}

/// Lowercased alphanumeric tokens, split on every non-alphanumeric char.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Raw term counts of `text`.
pub fn term_frequencies(text: &str) -> TermWeights {
    let mut tf = TermWeights::new();
    for tok in tokenize(text) {
        *tf.entry(tok).or_insert(0.0) += 1.0;
    }
    tf
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seeded FNV-1a: the seed's little-endian bytes are absorbed before the token.
pub fn token_hash(token: &str, seed: u64) -> u64 {
    seed.to_le_bytes()
        .iter()
        .chain(token.as_bytes())
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Bucket of `token` in `[0, dim)`.
pub fn token_bucket(token: &str, dim: usize, seed: u64) -> usize {
    (token_hash(token, seed) % dim as u64) as usize
}

/// Deterministic hashed bag-of-words embedding, L2-normalized.
///
/// Text with no tokens maps to the zero vector.
pub fn embed_text(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    embed_terms_hashed(&term_frequencies(text), dim, seed)
}

fn embed_terms_hashed(terms: &TermWeights, dim: usize, seed: u64) -> EmbeddingVector {
    let mut v = vec![0.0; dim.max(1)];
    for (tok, w) in terms {
        v[token_bucket(tok, dim, seed)] += w;
    }
    EmbeddingVector(v).normalized()
}

/// `[d, q]`: the document vector followed by the query vector.
pub fn concat_pair(d: &EmbeddingVector, q: &EmbeddingVector) -> Result<EmbeddingVector> {
    check_dim(d.dim(), q.dim())?;
    let mut out = Vec::with_capacity(2 * d.dim());
    out.extend_from_slice(&d.0);
    out.extend_from_slice(&q.0);
    Ok(EmbeddingVector(out))
}

/// Arithmetic mean. An empty set yields the zero vector of `dim`.
pub fn mean_vectors<'a, I>(vectors: I, dim: usize) -> Result<EmbeddingVector>
where
    I: IntoIterator<Item = &'a EmbeddingVector>,
{
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        check_dim(dim, v.dim())?;
        for (a, x) in acc.iter_mut().zip(&v.0) {
            *a += x;
        }
        n += 1;
    }
    if n > 0 {
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    Ok(EmbeddingVector(acc))
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    let dot = a.dot(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Fixed per-token vectors; a text embeds to the tf-weighted mean of its
/// known tokens' vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    dim: usize,
    tokens: BTreeMap<String, EmbeddingVector>,
}

impl Lexicon {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            tokens: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, v: EmbeddingVector) -> Result<()> {
        check_dim(self.dim, v.dim())?;
        self.tokens.insert(token.into(), v);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&EmbeddingVector> {
        self.tokens.get(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        self.embed_terms(&term_frequencies(text))
    }

    /// Weighted mean over known tokens with positive weight.
    pub fn embed_terms(&self, terms: &TermWeights) -> EmbeddingVector {
        let mut acc = vec![0.0; self.dim];
        let mut total = 0.0;
        for (tok, &w) in terms {
            if w <= 0.0 {
                continue;
            }
            if let Some(v) = self.tokens.get(tok) {
                for (a, x) in acc.iter_mut().zip(v.as_slice()) {
                    *a += w * x;
                }
                total += w;
            }
        }
        if total > 0.0 {
            acc.iter_mut().for_each(|a| *a /= total);
        }
        EmbeddingVector(acc)
    }
}

/// Pluggable text → vector provider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Embedder {
    Hashed { dim: usize, seed: u64 },
    Lexicon(Lexicon),
}

impl Embedder {
    pub fn dim(&self) -> usize {
        match self {
            Embedder::Hashed { dim, .. } => *dim,
            Embedder::Lexicon(l) => l.dim,
        }
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        self.embed_terms(&term_frequencies(text))
    }

    /// Embeds a sparse term-weight map. Non-positive weights are ignored.
    pub fn embed_terms(&self, terms: &TermWeights) -> EmbeddingVector {
        match self {
            Embedder::Hashed { dim, seed } => {
                let positive: TermWeights = terms
                    .iter()
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(t, &w)| (t.clone(), w))
                    .collect();
                embed_terms_hashed(&positive, *dim, *seed)
            }
            Embedder::Lexicon(l) => l.embed_terms(terms),
        }
    }
}

/// Document vectors keyed by id, all of one dimension.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedCorpus {
    doc_ids: Vec<String>,
    vectors: BTreeMap<String, EmbeddingVector>,
    dim: usize,
}

impl EmbeddedCorpus {
    pub fn new(dim: usize) -> Self {
        Self {
            doc_ids: Vec::new(),
            vectors: BTreeMap::new(),
            dim,
        }
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, v: EmbeddingVector) -> Result<()> {
        let doc_id = doc_id.into();
        check_dim(self.dim, v.dim())?;
        if self.vectors.contains_key(&doc_id) {
            return Err(Error::Data(format!("duplicate document id `{doc_id}`")));
        }
        self.doc_ids.push(doc_id.clone());
        self.vectors.insert(doc_id, v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    /// Ids in insertion order.
    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn get(&self, doc_id: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(doc_id)
    }

    pub fn vector(&self, doc_id: &str) -> Result<&EmbeddingVector> {
        self.get(doc_id)
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.vectors.contains_key(doc_id)
    }
}

/// Reads the `#dim=D` headed `doc_id<TAB>v1..vD` format.
pub fn read_vectors_tsv<R: BufRead>(reader: R, path: &Path) -> Result<EmbeddedCorpus> {
    let mut lines = reader.lines().enumerate();
    let dim = loop {
        match lines.next() {
            None => return Err(Error::parse(path, 1, "missing `#dim=D` header")),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let d = line
                    .trim()
                    .strip_prefix("#dim=")
                    .ok_or_else(|| Error::parse(path, i + 1, "expected `#dim=D` header"))?;
                let d: usize = d
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, i + 1, format!("bad dim `{d}`")))?;
                if d == 0 {
                    return Err(Error::parse(path, i + 1, "dim must be positive"));
                }
                break d;
            }
        }
    };
    let mut corpus = EmbeddedCorpus::new(dim);
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().trim();
        if id.is_empty() {
            return Err(Error::parse(path, lineno, "empty doc id"));
        }
        let values = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("bad float `{f}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        let v = EmbeddingVector::new(values).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        corpus
            .insert(id, v)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    Ok(corpus)
}

pub fn write_vectors_tsv<W: Write>(corpus: &EmbeddedCorpus, mut w: W) -> Result<()> {
    writeln!(w, "#dim={}", corpus.dim())?;
    for id in corpus.doc_ids() {
        write!(w, "{id}")?;
        for v in corpus.vector(id)?.as_slice() {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
