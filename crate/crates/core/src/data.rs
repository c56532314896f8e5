//! Datasets: TREC-DD-style topics/qrels/documents, LETOR feature files, the
//! synthetic multi-subtopic generator, and topic fold splitting.
//!
//! Loaders never repair input. Orphan judgments, duplicate ids and dimension
//! mismatches are rejected with the offending file and line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedspace::{
    cosine, embed_text, read_vectors_tsv, EmbeddedCorpus, Embedder, EmbeddingVector, Lexicon,
};
use crate::error::{Error, Result};
use crate::feedback::FeedbackContext;
use crate::metrics::JudgmentSet;

#[derive(Clone, Debug, PartialEq)]
pub struct Topic {
    pub id: String,
    pub query: String,
    /// Initial query vector (zero in feature mode, where it is unused).
    pub vector: EmbeddingVector,
    /// Candidate documents for this topic's sessions.
    pub pool: Vec<String>,
    /// Set when no document of the pool has a positive judgment.
    pub unjudged: bool,
}

/// LETOR-style per-(topic, doc) feature vectors with graded labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureCorpus {
    dim: usize,
    rows: BTreeMap<(String, String), (EmbeddingVector, u8)>,
}

impl FeatureCorpus {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, topic: &str, doc: &str) -> Option<(&EmbeddingVector, u8)> {
        self.rows
            .get(&(topic.to_string(), doc.to_string()))
            .map(|(v, g)| (v, *g))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Corpus {
    Embedded(EmbeddedCorpus),
    Feature(FeatureCorpus),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Embedded,
    Feature,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub topics: BTreeMap<String, Topic>,
    pub judgments: JudgmentSet,
    pub corpus: Corpus,
    /// Document texts, when the source had any.
    pub texts: Option<BTreeMap<String, String>>,
    /// Text embedder compatible with the corpus vectors, when one exists.
    pub embedder: Option<Embedder>,
}

impl Dataset {
    pub fn kind(&self) -> CorpusKind {
        match self.corpus {
            Corpus::Embedded(_) => CorpusKind::Embedded,
            Corpus::Feature(_) => CorpusKind::Feature,
        }
    }

    /// Width of one document vector (embedding dim or feature count).
    pub fn doc_dim(&self) -> usize {
        match &self.corpus {
            Corpus::Embedded(c) => c.dim(),
            Corpus::Feature(f) => f.dim(),
        }
    }

    /// Width of one value-network input: `[d, q]` pairs for embedded
    /// corpora, raw features otherwise.
    pub fn input_dim(&self) -> usize {
        match self.kind() {
            CorpusKind::Embedded => 2 * self.doc_dim(),
            CorpusKind::Feature => self.doc_dim(),
        }
    }

    pub fn topic(&self, id: &str) -> Result<&Topic> {
        self.topics
            .get(id)
            .ok_or_else(|| Error::UnknownTopic(id.to_string()))
    }

    pub fn topic_ids(&self) -> Vec<String> {
        self.topics.keys().cloned().collect()
    }

    pub fn doc_vector(&self, topic: &str, doc: &str) -> Result<&EmbeddingVector> {
        match &self.corpus {
            Corpus::Embedded(c) => c.vector(doc),
            Corpus::Feature(f) => f
                .get(topic, doc)
                .map(|(v, _)| v)
                .ok_or_else(|| Error::UnknownDocument(format!("{topic}/{doc}"))),
        }
    }

    /// Resources for query reformulation; `None` for feature corpora.
    pub fn feedback_context(&self) -> Option<FeedbackContext<'_>> {
        match &self.corpus {
            Corpus::Embedded(c) => Some(FeedbackContext {
                corpus: c,
                texts: self.texts.as_ref(),
                embedder: self.embedder.as_ref(),
            }),
            Corpus::Feature(_) => None,
        }
    }

    /// Checks that every judged document is in the corpus and in its topic's pool.
    pub fn validate(&self) -> Result<()> {
        for (t, _, d, _) in self.judgments.iter() {
            let topic = self.topic(t)?;
            self.doc_vector(t, d)
                .map_err(|_| Error::Data(format!("judged document `{d}` (topic {t}) is not in the corpus")))?;
            if !topic.pool.iter().any(|p| p == d) {
                return Err(Error::Data(format!("judged document `{d}` is not in topic {t}'s pool")));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct TopicLine {
    topic_id: String,
    query: String,
    #[serde(default)]
    vector: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct DocLine {
    doc_id: String,
    text: String,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn is_vectors_tsv(path: &Path) -> Result<bool> {
    for line in open(path)?.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            return Ok(line.trim_start().starts_with("#dim="));
        }
    }
    Ok(false)
}

/// Loads topics (JSONL), qrels (TSV) and either document texts (JSONL,
/// embedded with the hashed embedder at `dim`/`seed`) or precomputed vectors
/// (TSV with a `#dim=D` header). Every topic's pool is the whole corpus.
///
/// With precomputed vectors, a topic's query vector comes from its optional
/// `"vector"` field and falls back to hashing the query text at the corpus dim.
pub fn load_trec_dd(
    topics_path: &Path,
    qrels_path: &Path,
    docs_path: &Path,
    dim: usize,
    seed: u64,
) -> Result<Dataset> {
    let (corpus, texts, embedder) = if is_vectors_tsv(docs_path)? {
        (read_vectors_tsv(open(docs_path)?, docs_path)?, None, None)
    } else {
        let mut corpus = EmbeddedCorpus::new(dim);
        let mut texts = BTreeMap::new();
        for (i, line) in open(docs_path)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let d: DocLine = serde_json::from_str(&line)
                .map_err(|e| Error::parse(docs_path, i + 1, e.to_string()))?;
            if texts.contains_key(&d.doc_id) {
                return Err(Error::parse(docs_path, i + 1, format!("duplicate document id `{}`", d.doc_id)));
            }
            corpus
                .insert(d.doc_id.clone(), embed_text(&d.text, dim, seed))
                .map_err(|e| Error::parse(docs_path, i + 1, e.to_string()))?;
            texts.insert(d.doc_id, d.text);
        }
        (corpus, Some(texts), Some(Embedder::Hashed { dim, seed }))
    };
    if corpus.is_empty() {
        return Err(Error::Data(format!("{}: no documents", docs_path.display())));
    }
    let cdim = corpus.dim();

    let pool: Vec<String> = corpus.doc_ids().to_vec();
    let mut topics = BTreeMap::new();
    for (i, line) in open(topics_path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TopicLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse(topics_path, i + 1, e.to_string()))?;
        if topics.contains_key(&t.topic_id) {
            return Err(Error::parse(topics_path, i + 1, format!("duplicate topic id `{}`", t.topic_id)));
        }
        let vector = match t.vector {
            Some(v) => {
                let v = EmbeddingVector::new(v).map_err(|e| Error::parse(topics_path, i + 1, e.to_string()))?;
                if v.dim() != cdim {
                    return Err(Error::parse(
                        topics_path,
                        i + 1,
                        format!("query vector has dim {}, corpus has {cdim}", v.dim()),
                    ));
                }
                v
            }
            None => embed_text(&t.query, cdim, seed),
        };
        topics.insert(
            t.topic_id.clone(),
            Topic {
                id: t.topic_id,
                query: t.query,
                vector,
                pool: pool.clone(),
                unjudged: true,
            },
        );
    }
    if topics.is_empty() {
        return Err(Error::Data(format!("{}: no topics", topics_path.display())));
    }

    let mut judgments = JudgmentSet::new();
    for (i, line) in open(qrels_path)?.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = t.split('\t').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::parse(qrels_path, lineno, format!("expected 4 tab-separated fields, found {}", f.len())));
        }
        let grade: f64 = f[3]
            .parse()
            .map_err(|_| Error::parse(qrels_path, lineno, format!("bad grade `{}`", f[3])))?;
        if !topics.contains_key(f[0]) {
            return Err(Error::parse(qrels_path, lineno, format!("judgment for unknown topic `{}`", f[0])));
        }
        if !corpus.contains(f[2]) {
            return Err(Error::parse(qrels_path, lineno, format!("judgment for missing document `{}`", f[2])));
        }
        judgments
            .insert(f[0], f[1], f[2], grade)
            .map_err(|e| Error::parse(qrels_path, lineno, e.to_string()))?;
    }
    finish(topics, judgments, Corpus::Embedded(corpus), texts, embedder)
}

fn finish(
    mut topics: BTreeMap<String, Topic>,
    judgments: JudgmentSet,
    corpus: Corpus,
    texts: Option<BTreeMap<String, String>>,
    embedder: Option<Embedder>,
) -> Result<Dataset> {
    for t in topics.values_mut() {
        t.unjudged = judgments
            .judged_docs(&t.id)
            .map(|d| d.is_empty())
            .unwrap_or(true);
    }
    let ds = Dataset {
        topics,
        judgments,
        corpus,
        texts,
        embedder,
    };
    ds.validate()?;
    Ok(ds)
}

/// Loads `grade qid:N i:v ... # comment` lines. Missing feature indices are
/// zero; the feature count is the largest index seen. A `docid = X` comment
/// names the document, otherwise it is `<qid>-<n>`.
pub fn load_letor(path: &Path) -> Result<Dataset> {
    struct Row {
        qid: String,
        doc: String,
        grade: u8,
        feats: Vec<(usize, f64)>,
    }
    let mut rows = Vec::new();
    let mut max_idx = 0usize;
    let mut per_qid: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let (body, comment) = match line.split_once('#') {
            Some((b, c)) => (b, Some(c)),
            None => (line.as_str(), None),
        };
        let mut tokens = body.split_whitespace();
        let Some(g) = tokens.next() else { continue };
        let grade: u8 = g
            .parse()
            .ok()
            .filter(|g| *g <= 2)
            .ok_or_else(|| Error::parse(path, lineno, format!("grade must be 0, 1 or 2, got `{g}`")))?;
        let qid = tokens
            .next()
            .and_then(|t| t.strip_prefix("qid:"))
            .filter(|q| !q.is_empty())
            .ok_or_else(|| Error::parse(path, lineno, "expected `qid:N` after the grade"))?
            .to_string();
        let mut feats = Vec::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(path, lineno, format!("bad feature `{tok}`")))?;
            let k: usize = k
                .parse()
                .ok()
                .filter(|k| *k >= 1)
                .ok_or_else(|| Error::parse(path, lineno, format!("bad feature index `{k}`")))?;
            let v: f64 = v
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(path, lineno, format!("bad feature value `{v}`")))?;
            max_idx = max_idx.max(k);
            feats.push((k, v));
        }
        let n = per_qid.entry(qid.clone()).or_insert(0);
        *n += 1;
        let doc = comment
            .and_then(|c| {
                let c = c.trim();
                c.strip_prefix("docid")
                    .map(|r| r.trim_start().trim_start_matches('=').trim())
                    .and_then(|r| r.split_whitespace().next())
                    .map(str::to_string)
            })
            .unwrap_or_else(|| format!("{qid}-{n}"));
        rows.push(Row { qid, doc, grade, feats });
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no LETOR rows", path.display())));
    }
    if max_idx == 0 {
        return Err(Error::Data(format!("{}: rows carry no features", path.display())));
    }
    let mut fc = FeatureCorpus {
        dim: max_idx,
        rows: BTreeMap::new(),
    };
    let mut topics: BTreeMap<String, Topic> = BTreeMap::new();
    let mut judgments = JudgmentSet::new();
    for r in rows {
        let mut v = vec![0.0; max_idx];
        for (k, x) in r.feats {
            v[k - 1] = x;
        }
        let key = (r.qid.clone(), r.doc.clone());
        if fc.rows.contains_key(&key) {
            return Err(Error::Data(format!("duplicate document `{}` for qid {}", r.doc, r.qid)));
        }
        fc.rows.insert(key, (EmbeddingVector::new(v)?, r.grade));
        judgments.insert(&r.qid, "rel", &r.doc, r.grade as f64)?;
        topics
            .entry(r.qid.clone())
            .or_insert_with(|| Topic {
                id: r.qid.clone(),
                query: String::new(),
                vector: EmbeddingVector::zeros(max_idx),
                pool: Vec::new(),
                unjudged: true,
            })
            .pool
            .push(r.doc);
    }
    finish(topics, judgments, Corpus::Feature(fc), None, None)
}

/// Shape of the synthetic corpus beyond the basic counts.
///
/// Every subtopic owns a small vocabulary whose token vectors scatter around
/// the subtopic centroid; one "head" token sits exactly on the centroid.
/// Documents are bags of tokens and embed to the mean of their token vectors,
/// so the same geometry is visible to vector-space and text-space
/// reformulators. On-topic documents mix a variable number of subtopic
/// tokens with background tokens; "overview" documents spread their tokens
/// over all subtopics of the topic and end up close to the query but below
/// every relevance band; the rest are pure background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticProfile {
    pub tokens_per_doc: usize,
    pub vocab_per_subtopic: usize,
    pub background_vocab: usize,
    /// Angle noise of subtopic tokens around their centroid.
    pub token_noise: f64,
    pub on_topic_fraction: f64,
    pub overview_fraction: f64,
    /// Smallest number of subtopic tokens in an on-topic document.
    pub min_on_topic_tokens: usize,
    /// Dimension of the random subspace holding all subtopic centroids;
    /// 0 uses the whole space.
    pub latent_dim: usize,
    /// Weight of a direction shared by every centroid in the collection.
    pub shared_weight: f64,
    /// Fraction of each pool written about a decoy subtopic of another topic.
    pub decoy_fraction: f64,
    /// Decoy head tokens appended to each query.
    pub query_decoys: usize,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            tokens_per_doc: 12,
            vocab_per_subtopic: 12,
            background_vocab: 400,
            token_noise: 0.45,
            on_topic_fraction: 0.4,
            overview_fraction: 0.0,
            min_on_topic_tokens: 2,
            latent_dim: 0,
            shared_weight: 0.0,
            decoy_fraction: 0.0,
            query_decoys: 0,
        }
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Orthonormal basis of a random `latent`-dimensional subspace, or `None`
/// when the subspace would be the whole space.
fn latent_basis(rng: &mut ChaCha8Rng, dim: usize, latent: usize) -> Option<Vec<Vec<f64>>> {
    if latent == 0 || latent >= dim {
        return None;
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(latent);
    while basis.len() < latent {
        let mut v = unit_gaussian(rng, dim);
        for e in &basis {
            let p: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(e).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Some(basis)
}

/// Grade of a document for one subtopic from its cosine to the centroid.
pub fn cosine_grade(cos: f64) -> f64 {
    if cos >= 0.9 {
        2.0
    } else if cos >= 0.75 {
        1.0
    } else {
        0.0
    }
}

/// Synthetic dataset with the default [`SyntheticProfile`].
pub fn gen_synthetic(
    num_topics: usize,
    docs_per_topic: usize,
    subtopics_per_topic: usize,
    dim: usize,
    seed: u64,
) -> Result<Dataset> {
    gen_synthetic_with(
        num_topics,
        docs_per_topic,
        subtopics_per_topic,
        dim,
        seed,
        &SyntheticProfile::default(),
    )
}

/// Centroids of a synthetic topic, recoverable from the lexicon head tokens.
pub fn synthetic_centroids(ds: &Dataset, topic: &str) -> Result<Vec<EmbeddingVector>> {
    let Some(Embedder::Lexicon(lex)) = &ds.embedder else {
        return Err(Error::Data("not a synthetic dataset".into()));
    };
    let n = ds.judgments.subtopics(topic)?.len();
    (0..n)
        .map(|s| {
            lex.get(&head_token(topic, s))
                .cloned()
                .ok_or_else(|| Error::Data(format!("no centroid for {topic}/{s}")))
        })
        .collect()
}

fn head_token(topic: &str, s: usize) -> String {
    format!("{topic}s{s}head")
}

pub fn gen_synthetic_with(
    num_topics: usize,
    docs_per_topic: usize,
    subtopics_per_topic: usize,
    dim: usize,
    seed: u64,
    profile: &SyntheticProfile,
) -> Result<Dataset> {
    if num_topics == 0 || docs_per_topic == 0 || subtopics_per_topic == 0 || dim == 0 {
        return Err(Error::invalid("synthetic corpus sizes must all be positive"));
    }
    if profile.tokens_per_doc == 0 || profile.vocab_per_subtopic == 0 || profile.background_vocab == 0 {
        return Err(Error::invalid("synthetic vocabulary sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lex = Lexicon::new(dim);
    let bg: Vec<String> = (0..profile.background_vocab).map(|i| format!("bg{i}")).collect();
    for tok in &bg {
        lex.insert(tok.clone(), EmbeddingVector::new(unit_gaussian(&mut rng, dim))?)?;
    }

    let basis = latent_basis(&mut rng, dim, profile.latent_dim);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        match &basis {
            Some(b) => {
                let z = unit_gaussian(rng, b.len());
                (0..dim).map(|i| b.iter().zip(&z).map(|(e, w)| e[i] * w).sum()).collect()
            }
            None => unit_gaussian(rng, dim),
        }
    };
    let shared = if profile.shared_weight > 0.0 { Some(draw(&mut rng)) } else { None };
    let mut corpus = EmbeddedCorpus::new(dim);
    let mut texts = BTreeMap::new();
    let mut topics = BTreeMap::new();
    let mut judgments = JudgmentSet::new();
    let width = num_topics.to_string().len().max(2);
    let len = profile.tokens_per_doc;
    let mut all_centroids = Vec::with_capacity(num_topics);
    let mut vocab: Vec<Vec<Vec<String>>> = Vec::with_capacity(num_topics);
    let tids: Vec<String> = (0..num_topics).map(|t| format!("t{t:0width$}")).collect();
    for tid in &tids {
        let mut centroids = Vec::with_capacity(subtopics_per_topic);
        let mut topic_vocab = Vec::with_capacity(subtopics_per_topic);
        for s in 0..subtopics_per_topic {
            let mut c = draw(&mut rng);
            if let Some(u) = &shared {
                c = EmbeddingVector::new(c.iter().zip(u).map(|(a, b)| a + profile.shared_weight * b).collect())?
                    .normalized()
                    .as_slice()
                    .to_vec();
            }
            let head = head_token(tid, s);
            lex.insert(head.clone(), EmbeddingVector::new(c.clone())?)?;
            let mut words = vec![head];
            for w in 1..profile.vocab_per_subtopic {
                let noise = unit_gaussian(&mut rng, dim);
                let v: Vec<f64> = c.iter().zip(&noise).map(|(a, b)| a + profile.token_noise * b).collect();
                let tok = format!("{tid}s{s}w{w}");
                lex.insert(tok.clone(), EmbeddingVector::new(v)?.normalized())?;
                words.push(tok);
            }
            centroids.push(EmbeddingVector::new(c)?);
            topic_vocab.push(words);
            judgments.insert(tid, &format!("s{s}"), "", 0.0)?;
        }
        all_centroids.push(centroids);
        vocab.push(topic_vocab);
    }

    let with_decoys = num_topics > 1 && (profile.decoy_fraction > 0.0 || profile.query_decoys > 0);
    for (t, tid) in tids.iter().enumerate() {
        let centroids = &all_centroids[t];
        let decoys: Vec<(usize, usize)> = if with_decoys {
            (0..profile.query_decoys.max(1))
                .map(|_| {
                    let o = (t + rng.random_range(1..num_topics)) % num_topics;
                    (o, rng.random_range(0..subtopics_per_topic))
                })
                .collect()
        } else {
            Vec::new()
        };
        let mut pool = Vec::with_capacity(docs_per_topic);
        for d in 0..docs_per_topic {
            let did = format!("{tid}d{d:03}");
            let u: f64 = rng.random();
            let mut tokens: Vec<&str> = Vec::with_capacity(len);
            let lo = profile.min_on_topic_tokens.min(len);
            if u < profile.on_topic_fraction {
                let s = rng.random_range(0..subtopics_per_topic);
                let m = rng.random_range(lo..=len);
                for _ in 0..m {
                    tokens.push(&vocab[t][s][rng.random_range(0..vocab[t][s].len())]);
                }
            } else if u < profile.on_topic_fraction + profile.overview_fraction {
                for i in 0..len {
                    let s = i % subtopics_per_topic;
                    tokens.push(&vocab[t][s][rng.random_range(0..vocab[t][s].len())]);
                }
            } else if !decoys.is_empty()
                && u < profile.on_topic_fraction + profile.overview_fraction + profile.decoy_fraction
            {
                let (o, s) = decoys[rng.random_range(0..decoys.len())];
                let m = rng.random_range(lo..=len);
                for _ in 0..m {
                    tokens.push(&vocab[o][s][rng.random_range(0..vocab[o][s].len())]);
                }
            }
            while tokens.len() < len {
                tokens.push(&bg[rng.random_range(0..bg.len())]);
            }
            tokens.shuffle(&mut rng);
            let text = tokens.join(" ");
            let v = lex.embed_text(&text).normalized();
            for (s, c) in centroids.iter().enumerate() {
                let g = cosine_grade(cosine(&v, c)?);
                if g > 0.0 {
                    judgments.insert(tid, &format!("s{s}"), &did, g)?;
                }
            }
            corpus.insert(did.clone(), v)?;
            texts.insert(did.clone(), text);
            pool.push(did);
        }
        let mut query: Vec<String> = (0..subtopics_per_topic).map(|s| head_token(tid, s)).collect();
        for &(o, s) in decoys.iter().take(profile.query_decoys) {
            query.push(head_token(&tids[o], s));
        }
        let query = query.join(" ");
        let vector = lex.embed_text(&query);
        topics.insert(
            tid.clone(),
            Topic {
                id: tid.clone(),
                query,
                vector,
                pool,
                unjudged: true,
            },
        );
    }
    finish(
        topics,
        judgments,
        Corpus::Embedded(corpus),
        Some(texts),
        Some(Embedder::Lexicon(lex)),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles topic ids with `seed` and cuts them into `k` near-equal test
/// folds; each fold trains on the other topics.
pub fn split_folds(topic_ids: &[String], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k == 0 || k > topic_ids.len() {
        return Err(Error::Config(format!(
            "cannot split {} topics into {k} folds",
            topic_ids.len()
        )));
    }
    let unique: BTreeSet<&String> = topic_ids.iter().collect();
    if unique.len() != topic_ids.len() {
        return Err(Error::Data("duplicate topic ids".into()));
    }
    let mut ids: Vec<String> = unique.into_iter().cloned().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = ids.len() / k;
    let extra = ids.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let test: Vec<String> = ids[start..start + size].to_vec();
        let train: Vec<String> = ids[..start].iter().chain(&ids[start + size..]).cloned().collect();
        folds.push(Fold { index: i, train, test });
        start += size;
    }
    Ok(folds)
}
