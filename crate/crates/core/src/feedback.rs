//! Feedback digestion: the simulated user, embedding-space Rocchio, and the
//! two text-space reformulators used for comparison (classic term Rocchio
//! and naive query expansion).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedspace::{
    check_same_dim, mean_vectors, term_frequencies, tokenize, EmbeddedCorpus, Embedder,
    EmbeddingVector, TermWeights,
};
use crate::error::{Error, Result};
use crate::metrics::JudgmentSet;

/// Number of terms kept by the classic term-space reformulator.
pub const CLASSIC_MAX_TERMS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub doc: String,
    pub subtopic: String,
    pub score: f64,
}

/// What the user reveals after one search iteration.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeedbackRecord {
    pub n: usize,
    /// The block of documents just shown, in rank order.
    pub returned: Vec<String>,
    /// Positive per-subtopic scores for documents in `returned`.
    pub entries: Vec<FeedbackEntry>,
}

impl FeedbackRecord {
    /// Returned documents with at least one positive entry, in rank order.
    pub fn positive_docs(&self) -> Vec<&str> {
        let pos: BTreeSet<&str> = self
            .entries
            .iter()
            .filter(|e| e.score > 0.0)
            .map(|e| e.doc.as_str())
            .collect();
        self.returned
            .iter()
            .map(String::as_str)
            .filter(|d| pos.contains(d))
            .collect()
    }

    /// Returned documents without any positive entry.
    pub fn non_positive_docs(&self) -> Vec<&str> {
        let pos: BTreeSet<&str> = self.positive_docs().into_iter().collect();
        self.returned
            .iter()
            .map(String::as_str)
            .filter(|d| !pos.contains(d))
            .collect()
    }
}

/// Plays back hidden judgments for the returned block. Only positive
/// (doc, subtopic) grades are revealed; subtopic labels are opaque.
pub fn simulate_feedback(
    judgments: &JudgmentSet,
    topic: &str,
    returned: &[String],
    n: usize,
) -> Result<FeedbackRecord> {
    if !judgments.has_topic(topic) {
        return Err(Error::UnknownTopic(topic.to_string()));
    }
    if returned.is_empty() {
        return Err(Error::invalid("feedback needs at least one returned document"));
    }
    let mut entries = Vec::new();
    for doc in returned {
        for (subtopic, grade) in judgments.positive_grades(topic, doc)? {
            entries.push(FeedbackEntry {
                doc: doc.clone(),
                subtopic: subtopic.to_string(),
                score: grade,
            });
        }
    }
    Ok(FeedbackRecord {
        n,
        returned: returned.to_vec(),
        entries,
    })
}

#[derive(Serialize, Deserialize)]
struct JsonLine {
    n: usize,
    doc: String,
    subtopic: Option<String>,
    score: f64,
}

/// One JSON object per line. Returned documents without positive feedback
/// are written with `"subtopic": null, "score": 0` so the block survives a
/// round trip.
pub fn write_feedback_jsonl<W: Write>(records: &[FeedbackRecord], mut w: W) -> Result<()> {
    for rec in records {
        for doc in &rec.returned {
            let mut any = false;
            for e in rec.entries.iter().filter(|e| &e.doc == doc) {
                any = true;
                let line = JsonLine {
                    n: rec.n,
                    doc: doc.clone(),
                    subtopic: Some(e.subtopic.clone()),
                    score: e.score,
                };
                serde_json::to_writer(&mut w, &line)?;
                writeln!(w)?;
            }
            if !any {
                let line = JsonLine {
                    n: rec.n,
                    doc: doc.clone(),
                    subtopic: None,
                    score: 0.0,
                };
                serde_json::to_writer(&mut w, &line)?;
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

pub fn read_feedback_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<Vec<FeedbackRecord>> {
    let mut out: Vec<FeedbackRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let jl: JsonLine =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if !(jl.score >= 0.0) {
            return Err(Error::parse(path, i + 1, "feedback scores must be >= 0"));
        }
        if out.last().map(|r| r.n) != Some(jl.n) {
            out.push(FeedbackRecord {
                n: jl.n,
                ..Default::default()
            });
        }
        let rec = out.last_mut().unwrap();
        if rec.returned.last() != Some(&jl.doc) {
            rec.returned.push(jl.doc.clone());
        }
        if let Some(s) = jl.subtopic {
            rec.entries.push(FeedbackEntry {
                doc: jl.doc,
                subtopic: s,
                score: jl.score,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RocchioParams {
    pub gamma: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for RocchioParams {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            b: 0.75,
            c: 0.25,
        }
    }
}

impl RocchioParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.b >= 0.0) || !(self.c >= 0.0) {
            return Err(Error::Config("Rocchio weights b and c must be >= 0".into()));
        }
        Ok(())
    }

    /// `(1 - γ^n (b - c), γ^n)`: weights of the old query and of the feedback term.
    pub fn coefficients(&self, n: usize) -> (f64, f64) {
        let gn = self.gamma.powi(n as i32);
        (1.0 - gn * (self.b - self.c), gn)
    }
}

fn check_iteration(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::invalid("search iterations are numbered from 1"))
    } else {
        Ok(())
    }
}

/// Embedding Rocchio:
/// `q' = (1 - γ^n (b - c)) q + γ^n (b · mean(D_r) - c · mean(D_nr))`
/// where `D_r` are the returned documents with positive feedback and `D_nr`
/// the rest of the block. Empty sets contribute the zero vector.
pub fn rocchio_embed(
    q: &EmbeddingVector,
    fb: &FeedbackRecord,
    corpus: &EmbeddedCorpus,
    params: &RocchioParams,
    n: usize,
) -> Result<EmbeddingVector> {
    check_iteration(n)?;
    check_same_dim(q, corpus.dim())?;
    let rel = fb
        .positive_docs()
        .into_iter()
        .map(|d| corpus.vector(d))
        .collect::<Result<Vec<_>>>()?;
    let nonrel = fb
        .non_positive_docs()
        .into_iter()
        .map(|d| corpus.vector(d))
        .collect::<Result<Vec<_>>>()?;
    let mr = mean_vectors(rel, corpus.dim())?;
    let mnr = mean_vectors(nonrel, corpus.dim())?;
    let (keep, gn) = params.coefficients(n);
    let delta = mr.combine(params.b, &mnr, -params.c)?;
    q.combine(keep, &delta, gn)
}

fn l2_normalized(tf: TermWeights) -> TermWeights {
    let norm = tf.values().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return tf;
    }
    tf.into_iter().map(|(t, v)| (t, v / norm)).collect()
}

/// L2-normalized term frequencies of `text`.
pub fn normalized_tf(text: &str) -> TermWeights {
    l2_normalized(term_frequencies(text))
}

fn mean_terms<'a>(docs: impl IntoIterator<Item = &'a str>, texts: &BTreeMap<String, String>) -> Result<TermWeights> {
    let mut acc = TermWeights::new();
    let mut n = 0usize;
    for d in docs {
        let text = texts.get(d).ok_or_else(|| Error::UnknownDocument(d.to_string()))?;
        for (t, w) in normalized_tf(text) {
            *acc.entry(t).or_insert(0.0) += w;
        }
        n += 1;
    }
    if n > 0 {
        acc.values_mut().for_each(|v| *v /= n as f64);
    }
    Ok(acc)
}

/// Drops zero weights and keeps the `max` heaviest terms; equal weights keep the lexicographically smaller term.
fn truncate_terms(terms: TermWeights, max: usize) -> TermWeights {
    let mut v: Vec<(String, f64)> = terms.into_iter().filter(|(_, w)| *w != 0.0).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(max);
    v.into_iter().collect()
}

/// The same update as [`rocchio_embed`] carried out on sparse, L2-normalized
/// term-frequency vectors, truncated to the 50 heaviest terms.
pub fn rocchio_classic(
    query_terms: &TermWeights,
    fb: &FeedbackRecord,
    corpus_texts: &BTreeMap<String, String>,
    params: &RocchioParams,
    n: usize,
) -> Result<TermWeights> {
    check_iteration(n)?;
    let (keep, gn) = params.coefficients(n);
    let rel = mean_terms(fb.positive_docs(), corpus_texts)?;
    let nonrel = mean_terms(fb.non_positive_docs(), corpus_texts)?;
    let mut out: TermWeights = query_terms.iter().map(|(t, w)| (t.clone(), keep * w)).collect();
    for (t, w) in rel {
        *out.entry(t).or_insert(0.0) += gn * params.b * w;
    }
    for (t, w) in nonrel {
        *out.entry(t).or_insert(0.0) -= gn * params.c * w;
    }
    Ok(truncate_terms(out, CLASSIC_MAX_TERMS))
}

/// Appends the `top_m` most frequent terms of the positively judged returned
/// documents that are not already in the query. Ties go to the
/// lexicographically smaller term.
pub fn nqe_expand(
    query_text: &str,
    fb: &FeedbackRecord,
    corpus_texts: &BTreeMap<String, String>,
    top_m: usize,
) -> Result<String> {
    if top_m == 0 {
        return Ok(query_text.to_string());
    }
    let existing: BTreeSet<String> = tokenize(query_text).into_iter().collect();
    let mut tf = TermWeights::new();
    for d in fb.positive_docs() {
        let text = corpus_texts
            .get(d)
            .ok_or_else(|| Error::UnknownDocument(d.to_string()))?;
        for (t, c) in term_frequencies(text) {
            if !existing.contains(&t) {
                *tf.entry(t).or_insert(0.0) += c;
            }
        }
    }
    let mut ranked: Vec<(String, f64)> = tf.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_m);
    let mut out = query_text.to_string();
    for (t, _) in ranked {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&t);
    }
    Ok(out)
}

/// Which reformulator runs between search iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    EmbedRocchio,
    ClassicRocchio,
    Nqe,
    NoFeedback,
}

impl FeedbackMode {
    pub const ALL: [FeedbackMode; 4] = [
        FeedbackMode::EmbedRocchio,
        FeedbackMode::ClassicRocchio,
        FeedbackMode::Nqe,
        FeedbackMode::NoFeedback,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FeedbackMode::EmbedRocchio => "embed-rocchio",
            FeedbackMode::ClassicRocchio => "classic-rocchio",
            FeedbackMode::Nqe => "nqe",
            FeedbackMode::NoFeedback => "no-feedback",
        }
    }

    pub fn needs_text(&self) -> bool {
        matches!(self, FeedbackMode::ClassicRocchio | FeedbackMode::Nqe)
    }
}

/// The evolving query of one session in every representation a reformulator needs.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryState {
    pub vector: EmbeddingVector,
    pub text: String,
    pub terms: TermWeights,
}

impl QueryState {
    pub fn new(text: impl Into<String>, vector: EmbeddingVector) -> Self {
        let text = text.into();
        let terms = normalized_tf(&text);
        Self { vector, text, terms }
    }
}

/// Corpus resources the reformulators read.
#[derive(Clone, Copy)]
pub struct FeedbackContext<'a> {
    pub corpus: &'a EmbeddedCorpus,
    pub texts: Option<&'a BTreeMap<String, String>>,
    pub embedder: Option<&'a Embedder>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Reformulator {
    pub mode: FeedbackMode,
    pub rocchio: RocchioParams,
    /// Terms appended per iteration by naive expansion.
    pub nqe_terms: usize,
}

impl Default for Reformulator {
    fn default() -> Self {
        Self {
            mode: FeedbackMode::EmbedRocchio,
            rocchio: RocchioParams::default(),
            nqe_terms: 5,
        }
    }
}

impl Reformulator {
    /// Produces the query for iteration `n + 1` from feedback on iteration `n`.
    pub fn reformulate(
        &self,
        ctx: FeedbackContext<'_>,
        q: &QueryState,
        fb: &FeedbackRecord,
        n: usize,
    ) -> Result<QueryState> {
        let text_ctx = || -> Result<(&BTreeMap<String, String>, &Embedder)> {
            match (ctx.texts, ctx.embedder) {
                (Some(t), Some(e)) => Ok((t, e)),
                _ => Err(Error::Config(format!(
                    "feedback mode `{}` needs document texts and a text embedder",
                    self.mode.name()
                ))),
            }
        };
        match self.mode {
            FeedbackMode::NoFeedback => Ok(q.clone()),
            FeedbackMode::EmbedRocchio => Ok(QueryState {
                vector: rocchio_embed(&q.vector, fb, ctx.corpus, &self.rocchio, n)?,
                text: q.text.clone(),
                terms: q.terms.clone(),
            }),
            FeedbackMode::ClassicRocchio => {
                let (texts, emb) = text_ctx()?;
                let terms = rocchio_classic(&q.terms, fb, texts, &self.rocchio, n)?;
                let v = emb.embed_terms(&terms);
                Ok(QueryState {
                    vector: if v.is_zero() { q.vector.clone() } else { v },
                    text: q.text.clone(),
                    terms,
                })
            }
            FeedbackMode::Nqe => {
                let (texts, emb) = text_ctx()?;
                let text = nqe_expand(&q.text, fb, texts, self.nqe_terms)?;
                if text == q.text {
                    return Ok(q.clone());
                }
                let v = emb.embed_text(&text);
                Ok(QueryState {
                    vector: if v.is_zero() { q.vector.clone() } else { v },
                    terms: normalized_tf(&text),
                    text,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn judgments() -> JudgmentSet {
        let mut j = JudgmentSet::new();
        j.insert("t", "s1", "d1", 2.0).unwrap();
        j.insert("t", "s2", "d1", 1.0).unwrap();
        j.insert("t", "s1", "d3", 1.0).unwrap();
        j.insert("t", "s3", "d9", 2.0).unwrap();
        j
    }

    #[test]
    fn simulator_examples() {
        let j = judgments();
        let fb = simulate_feedback(&j, "t", &ids(&["x", "y"]), 1).unwrap();
        assert!(fb.entries.is_empty());
        let fb = simulate_feedback(&j, "t", &ids(&["d3"]), 1).unwrap();
        assert_eq!(
            fb.entries,
            vec![FeedbackEntry {
                doc: "d3".into(),
                subtopic: "s1".into(),
                score: 1.0
            }]
        );
        assert!(simulate_feedback(&j, "nope", &ids(&["d1"]), 1).is_err());
        assert!(simulate_feedback(&j, "t", &[], 1).is_err());
    }

    #[test]
    fn simulator_hides_unreturned_subtopics() {
        let j = judgments();
        let fb = simulate_feedback(&j, "t", &ids(&["d1", "d2", "d3"]), 2).unwrap();
        let labels: BTreeSet<&str> = fb.entries.iter().map(|e| e.subtopic.as_str()).collect();
        assert_eq!(labels, ["s1", "s2"].into_iter().collect());
        assert_eq!(fb.positive_docs(), vec!["d1", "d3"]);
        assert_eq!(fb.non_positive_docs(), vec!["d2"]);
    }

    fn corpus() -> EmbeddedCorpus {
        let mut c = EmbeddedCorpus::new(2);
        c.insert("r", ev(&[0.0, 1.0])).unwrap();
        c.insert("n", ev(&[1.0, 1.0])).unwrap();
        c
    }

    fn fb(returned: &[&str], positive: &[&str]) -> FeedbackRecord {
        FeedbackRecord {
            n: 1,
            returned: ids(returned),
            entries: positive
                .iter()
                .map(|d| FeedbackEntry {
                    doc: d.to_string(),
                    subtopic: "s".into(),
                    score: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn rocchio_hand_example() {
        let q = rocchio_embed(&ev(&[1.0, 0.0]), &fb(&["r"], &["r"]), &corpus(), &RocchioParams::default(), 1).unwrap();
        assert!((q.as_slice()[0] - 0.55).abs() < 1e-12);
        assert!((q.as_slice()[1] - 0.675).abs() < 1e-12);
    }

    #[test]
    fn rocchio_degenerate_weights() {
        let q = ev(&[0.3, -2.0]);
        let zero = RocchioParams { gamma: 0.9, b: 0.0, c: 0.0 };
        assert_eq!(rocchio_embed(&q, &fb(&["r", "n"], &["r"]), &corpus(), &zero, 3).unwrap(), q);
        let eq = RocchioParams { gamma: 0.9, b: 0.5, c: 0.5 };
        assert_eq!(eq.coefficients(4).0, 1.0);
        assert!(rocchio_embed(&ev(&[1.0]), &fb(&["r"], &["r"]), &corpus(), &eq, 1).is_err());
        assert!(rocchio_embed(&q, &fb(&["r"], &["r"]), &corpus(), &eq, 0).is_err());
    }

    #[test]
    fn classic_examples() {
        let mut texts = BTreeMap::new();
        texts.insert("r".to_string(), "polar ice".to_string());
        texts.insert("n".to_string(), "desert sand sand".to_string());
        let q = normalized_tf("arctic");
        let p = RocchioParams::default();
        let (keep, gn) = p.coefficients(1);

        let empty = rocchio_classic(&q, &FeedbackRecord::default(), &texts, &p, 1).unwrap();
        assert_eq!(empty["arctic"], keep);
        assert_eq!(empty.len(), 1);

        let out = rocchio_classic(&q, &fb(&["r"], &["r"]), &texts, &p, 1).unwrap();
        let expect = gn * p.b / 2f64.sqrt();
        assert!((out["polar"] - expect).abs() < 1e-12);
        assert!((out["ice"] - expect).abs() < 1e-12);

        let zero = RocchioParams { b: 0.0, c: 0.0, ..p };
        assert_eq!(rocchio_classic(&q, &fb(&["r", "n"], &["r"]), &texts, &zero, 1).unwrap(), q);
    }

    #[test]
    fn classic_truncates() {
        let words: Vec<String> = (0..80).map(|i| format!("w{i:02}")).collect();
        let mut texts = BTreeMap::new();
        texts.insert("r".to_string(), words.join(" "));
        let out = rocchio_classic(&TermWeights::new(), &fb(&["r"], &["r"]), &texts, &RocchioParams::default(), 1).unwrap();
        assert_eq!(out.len(), CLASSIC_MAX_TERMS);
        assert!(out.contains_key("w00") && !out.contains_key("w79"));
    }

    #[test]
    fn nqe_examples() {
        let mut texts = BTreeMap::new();
        texts.insert("r".to_string(), "ice ice polar bear bear bear melt".to_string());
        texts.insert("n".to_string(), "zzz zzz zzz zzz".to_string());
        let f = fb(&["r", "n"], &["r"]);
        assert_eq!(nqe_expand("polar", &f, &texts, 0).unwrap(), "polar");
        assert_eq!(nqe_expand("polar", &fb(&["n"], &[]), &texts, 3).unwrap(), "polar");
        assert_eq!(nqe_expand("polar", &f, &texts, 2).unwrap(), "polar bear ice");
        // melt ties with nothing; only 3 novel terms exist
        assert_eq!(nqe_expand("polar", &f, &texts, 9).unwrap(), "polar bear ice melt");
    }

    #[test]
    fn feedback_jsonl_round_trip() {
        let j = judgments();
        let recs = vec![
            simulate_feedback(&j, "t", &ids(&["d1", "d2"]), 1).unwrap(),
            simulate_feedback(&j, "t", &ids(&["x"]), 2).unwrap(),
        ];
        let mut buf = Vec::new();
        write_feedback_jsonl(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains(r#""n":1"#));
        assert_eq!(read_feedback_jsonl(buf.as_slice(), Path::new("f")).unwrap(), recs);
    }

    #[test]
    fn reformulator_needs_text_for_text_modes() {
        let c = corpus();
        let ctx = FeedbackContext { corpus: &c, texts: None, embedder: None };
        let q = QueryState::new("arctic", ev(&[1.0, 0.0]));
        let r = Reformulator { mode: FeedbackMode::Nqe, ..Default::default() };
        assert!(matches!(r.reformulate(ctx, &q, &fb(&["r"], &["r"]), 1), Err(Error::Config(_))));
        let none = Reformulator { mode: FeedbackMode::NoFeedback, ..Default::default() };
        assert_eq!(none.reformulate(ctx, &q, &fb(&["r"], &["r"]), 1).unwrap(), q);
    }
}
