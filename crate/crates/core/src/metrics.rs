//! Ranking metrics: DCG, NDCG@k, α-DCG / α-NDCG and session nDCG.
//!
//! DCG uses linear gain, `rel / log2(rank + 1)`. α-DCG binarizes grades
//! (a document covers subtopic `s` iff its grade for `s` is positive) and
//! discounts the `c`-th repeated coverage of a subtopic by `(1 - α)^c`. The
//! ideal α-ordering is built greedily, choosing the document with the
//! largest marginal gain at each rank and breaking ties by doc id.
//!
//! These functions double as the reward oracle during training, so they are
//! kept allocation-light and free of global state.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BQ: f64 = 4.0;

#[inline]
fn rank_discount(rank0: usize) -> f64 {
    1.0 / ((rank0 + 2) as f64).log2()
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::invalid("cutoff k must be >= 1"))
    } else {
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in [0, 1), got {alpha}")))
    }
}

/// Linear-gain DCG over the first `min(k, len)` entries.
pub fn dcg_at_k(rels: &[f64], k: usize) -> Result<f64> {
    check_k(k)?;
    if let Some(r) = rels.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
        return Err(Error::invalid(format!("relevance must be finite and >= 0, got {r}")));
    }
    Ok(rels
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, r)| r * rank_discount(i))
        .sum())
}

fn sorted_desc(rels: &[f64]) -> Vec<f64> {
    let mut v = rels.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// NDCG@k with the ideal ordering taken from the same list.
pub fn ndcg_at_k(rels: &[f64], k: usize) -> Result<f64> {
    ndcg_with_ideal(rels, rels, k)
}

/// NDCG@k normalized by the best ordering of `ideal_pool` (typically every
/// judged document of the topic). Zero when the ideal DCG is zero.
pub fn ndcg_with_ideal(rels: &[f64], ideal_pool: &[f64], k: usize) -> Result<f64> {
    let dcg = dcg_at_k(rels, k)?;
    let ideal = dcg_at_k(&sorted_desc(ideal_pool), k)?;
    Ok(if ideal > 0.0 { dcg / ideal } else { 0.0 })
}

/// Subtopics a document covers (indices into the topic's subtopic list).
pub type Coverage = Vec<usize>;

fn max_subtopic(coverage: &[Coverage]) -> usize {
    coverage
        .iter()
        .flat_map(|c| c.iter().copied())
        .max()
        .map_or(0, |m| m + 1)
}

fn as_set(c: &[usize]) -> Coverage {
    let mut v = c.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Gain of a document given how many earlier documents covered each subtopic.
/// `doc` must be sorted and deduplicated.
fn alpha_gain(doc: &[usize], seen: &[u32], alpha: f64) -> f64 {
    let keep = 1.0 - alpha;
    doc.iter().map(|&s| keep.powi(seen[s] as i32)).sum()
}

fn mark_seen(doc: &[usize], seen: &mut [u32]) {
    for &s in doc {
        seen[s] += 1;
    }
}

/// α-DCG@k over binarized subtopic coverage.
pub fn alpha_dcg_at_k(coverage: &[Coverage], k: usize, alpha: f64) -> Result<f64> {
    check_k(k)?;
    check_alpha(alpha)?;
    let mut seen = vec![0u32; max_subtopic(coverage)];
    let mut total = 0.0;
    for (r, doc) in coverage.iter().take(k).enumerate() {
        let doc = as_set(doc);
        total += alpha_gain(&doc, &seen, alpha) * rank_discount(r);
        mark_seen(&doc, &mut seen);
    }
    Ok(total)
}

/// Greedy ideal α-ordering of `pool`: at each rank take the document with the
/// largest marginal gain, ties broken by ascending doc id. Returns indices
/// into `pool`, at most `k` of them.
pub fn greedy_alpha_ideal<S: AsRef<str>>(
    pool: &[(S, Coverage)],
    k: usize,
    alpha: f64,
) -> Result<Vec<usize>> {
    check_k(k)?;
    check_alpha(alpha)?;
    let covs: Vec<Coverage> = pool.iter().map(|(_, c)| as_set(c)).collect();
    let mut seen = vec![0u32; max_subtopic(&covs)];
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| pool[a].0.as_ref().cmp(pool[b].0.as_ref()));
    let mut remaining = order;
    let mut picked = Vec::with_capacity(k.min(pool.len()));
    while picked.len() < k && !remaining.is_empty() {
        let mut best = 0;
        let mut best_gain = f64::NEG_INFINITY;
        for (pos, &i) in remaining.iter().enumerate() {
            let g = alpha_gain(&covs[i], &seen, alpha);
            if g > best_gain {
                best_gain = g;
                best = pos;
            }
        }
        let i = remaining.remove(best);
        mark_seen(&covs[i], &mut seen);
        picked.push(i);
    }
    Ok(picked)
}

/// α-DCG@k of the greedy ideal ordering of `pool`.
pub fn ideal_alpha_dcg<S: AsRef<str>>(pool: &[(S, Coverage)], k: usize, alpha: f64) -> Result<f64> {
    let order = greedy_alpha_ideal(pool, k, alpha)?;
    let covs: Vec<Coverage> = order.iter().map(|&i| pool[i].1.clone()).collect();
    alpha_dcg_at_k(&covs, k, alpha)
}

/// α-NDCG@k with the ideal built from the same documents; position in the
/// list stands in for the doc id when breaking ties.
pub fn alpha_ndcg_at_k(coverage: &[Coverage], k: usize, alpha: f64) -> Result<f64> {
    let pool: Vec<(String, Coverage)> = coverage
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("{i:020}"), c.clone()))
        .collect();
    alpha_ndcg_with_pool(coverage, &pool, k, alpha)
}

/// α-NDCG@k normalized by the greedy ideal over `pool`. Zero when the ideal is zero.
pub fn alpha_ndcg_with_pool<S: AsRef<str>>(
    coverage: &[Coverage],
    pool: &[(S, Coverage)],
    k: usize,
    alpha: f64,
) -> Result<f64> {
    let dcg = alpha_dcg_at_k(coverage, k, alpha)?;
    let ideal = ideal_alpha_dcg(pool, k, alpha)?;
    Ok(if ideal > 0.0 { dcg / ideal } else { 0.0 })
}

/// Discount applied to the `j`-th (1-based) search iteration of a session.
pub fn session_discount(j: usize, bq: f64) -> f64 {
    1.0 / (1.0 + (j as f64).ln() / bq.ln())
}

fn check_session(lists: &[Vec<f64>], bq: f64) -> Result<()> {
    if lists.is_empty() {
        return Err(Error::invalid("session must contain at least one iteration"));
    }
    if !(bq > 1.0) {
        return Err(Error::invalid(format!("bq must exceed 1, got {bq}")));
    }
    Ok(())
}

/// Session DCG: per-iteration DCG@k, iteration `j` discounted by `1 / (1 + log_bq j)`.
pub fn session_dcg(lists: &[Vec<f64>], k: usize, bq: f64) -> Result<f64> {
    check_session(lists, bq)?;
    lists
        .iter()
        .enumerate()
        .map(|(j, l)| Ok(session_discount(j + 1, bq) * dcg_at_k(l, k)?))
        .sum()
}

/// Normalized session DCG with the ideal session built from the documents the
/// session actually returned.
pub fn session_ndcg(lists: &[Vec<f64>], k: usize, bq: f64) -> Result<f64> {
    let pool: Vec<f64> = lists.iter().flatten().copied().collect();
    session_ndcg_with_pool(lists, &pool, k, bq)
}

/// Normalized session DCG. The ideal session fills iteration 1 with the `k`
/// best documents of `ideal_pool`, iteration 2 with the next `k`, and so on.
pub fn session_ndcg_with_pool(
    lists: &[Vec<f64>],
    ideal_pool: &[f64],
    k: usize,
    bq: f64,
) -> Result<f64> {
    let realized = session_dcg(lists, k, bq)?;
    let sorted = sorted_desc(ideal_pool);
    let ideal_lists: Vec<Vec<f64>> = (0..lists.len())
        .map(|j| sorted.iter().skip(j * k).take(k).copied().collect())
        .collect();
    let ideal = session_dcg(&ideal_lists, k, bq)?;
    Ok(if ideal > 0.0 { realized / ideal } else { 0.0 })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct TopicJudgments {
    subtopics: Vec<String>,
    /// doc → (subtopic index, grade), grade > 0 only.
    docs: BTreeMap<String, Vec<(usize, f64)>>,
}

/// Graded relevance per (topic, subtopic, doc). Absent triples have grade 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgmentSet {
    topics: BTreeMap<String, TopicJudgments>,
}

impl JudgmentSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a grade. Zero grades only register the topic and subtopic.
    pub fn insert(&mut self, topic: &str, subtopic: &str, doc: &str, grade: f64) -> Result<()> {
        if !(grade >= 0.0) || !grade.is_finite() {
            return Err(Error::Data(format!(
                "grade for ({topic}, {subtopic}, {doc}) must be finite and >= 0, got {grade}"
            )));
        }
        let tj = self.topics.entry(topic.to_string()).or_default();
        let s = match tj.subtopics.iter().position(|x| x == subtopic) {
            Some(s) => s,
            None => {
                tj.subtopics.push(subtopic.to_string());
                tj.subtopics.len() - 1
            }
        };
        let entries = tj.docs.entry(doc.to_string()).or_default();
        entries.retain(|(x, _)| *x != s);
        if grade > 0.0 {
            entries.push((s, grade));
            entries.sort_by_key(|(x, _)| *x);
        }
        if entries.is_empty() {
            tj.docs.remove(doc);
        }
        Ok(())
    }

    pub fn has_topic(&self, topic: &str) -> bool {
        self.topics.contains_key(topic)
    }

    fn topic(&self, topic: &str) -> Result<&TopicJudgments> {
        self.topics
            .get(topic)
            .ok_or_else(|| Error::UnknownTopic(topic.to_string()))
    }

    pub fn topic_ids(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    pub fn grade(&self, topic: &str, subtopic: &str, doc: &str) -> f64 {
        let Some(tj) = self.topics.get(topic) else { return 0.0 };
        let Some(s) = tj.subtopics.iter().position(|x| x == subtopic) else { return 0.0 };
        tj.docs
            .get(doc)
            .and_then(|e| e.iter().find(|(x, _)| *x == s))
            .map_or(0.0, |(_, g)| *g)
    }

    /// Sum of subtopic grades; 0 for unjudged documents or unknown topics.
    pub fn doc_relevance(&self, topic: &str, doc: &str) -> f64 {
        self.topics
            .get(topic)
            .and_then(|tj| tj.docs.get(doc))
            .map_or(0.0, |e| e.iter().map(|(_, g)| g).sum())
    }

    /// Subtopic labels registered for `topic`, in first-seen order.
    pub fn subtopics(&self, topic: &str) -> Result<&[String]> {
        Ok(&self.topic(topic)?.subtopics)
    }

    /// Indices of subtopics with positive grade for `doc`.
    pub fn coverage(&self, topic: &str, doc: &str) -> Coverage {
        self.topics
            .get(topic)
            .and_then(|tj| tj.docs.get(doc))
            .map(|e| e.iter().map(|(s, _)| *s).collect())
            .unwrap_or_default()
    }

    /// `(subtopic label, grade)` pairs with positive grade.
    pub fn positive_grades(&self, topic: &str, doc: &str) -> Result<Vec<(&str, f64)>> {
        let tj = self.topic(topic)?;
        Ok(tj
            .docs
            .get(doc)
            .map(|e| {
                e.iter()
                    .map(|(s, g)| (tj.subtopics[*s].as_str(), *g))
                    .collect()
            })
            .unwrap_or_default())
    }

    /// Documents with at least one positive grade, ascending by id.
    pub fn judged_docs(&self, topic: &str) -> Result<Vec<&str>> {
        Ok(self.topic(topic)?.docs.keys().map(String::as_str).collect())
    }

    /// Relevance of every judged document of `topic` (the NDCG ideal pool).
    pub fn relevance_pool(&self, topic: &str) -> Result<Vec<f64>> {
        Ok(self
            .judged_docs(topic)?
            .into_iter()
            .map(|d| self.doc_relevance(topic, d))
            .collect())
    }

    /// Coverage of every judged document of `topic` (the α-NDCG ideal pool).
    pub fn coverage_pool(&self, topic: &str) -> Result<Vec<(String, Coverage)>> {
        Ok(self
            .judged_docs(topic)?
            .into_iter()
            .map(|d| (d.to_string(), self.coverage(topic, d)))
            .collect())
    }

    /// Every `(topic, subtopic, doc, grade)` with positive grade.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &str, f64)> {
        self.topics.iter().flat_map(|(t, tj)| {
            tj.docs.iter().flat_map(move |(d, e)| {
                e.iter()
                    .map(move |(s, g)| (t.as_str(), tj.subtopics[*s].as_str(), d.as_str(), *g))
            })
        })
    }
}

/// Reads `topic<TAB>subtopic<TAB>doc<TAB>grade` lines. Blank lines and lines
/// starting with `#` are skipped.
pub fn read_qrels<R: BufRead>(reader: R, path: &Path) -> Result<JudgmentSet> {
    let mut j = JudgmentSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = t.split('\t').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::parse(path, lineno, format!("expected 4 tab-separated fields, found {}", f.len())));
        }
        let grade: f64 = f[3]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad grade `{}`", f[3])))?;
        j.insert(f[0], f[1], f[2], grade)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    Ok(j)
}

pub fn write_qrels<W: Write>(j: &JudgmentSet, mut w: W) -> Result<()> {
    for (t, s, d, g) in j.iter() {
        writeln!(w, "{t}\t{s}\t{d}\t{g}")?;
    }
    Ok(())
}

/// A topic's ranked documents, split into contiguous search iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub topic_id: String,
    doc_ids: Vec<String>,
    boundaries: Vec<usize>,
}

impl RankedList {
    pub fn new(topic_id: impl Into<String>, doc_ids: Vec<String>, boundaries: Vec<usize>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        if let Some(d) = doc_ids.iter().find(|d| !seen.insert(d.as_str())) {
            return Err(Error::Data(format!("duplicate doc `{d}` in ranked list")));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) || boundaries.first() == Some(&0) {
            return Err(Error::Data("iteration boundaries must be strictly increasing".into()));
        }
        if boundaries.last().copied().unwrap_or(0) != doc_ids.len() {
            return Err(Error::Data("iteration boundaries must end at the list length".into()));
        }
        Ok(Self {
            topic_id: topic_id.into(),
            doc_ids,
            boundaries,
        })
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn iterations(&self) -> impl Iterator<Item = &[String]> {
        let mut start = 0;
        self.boundaries.iter().map(move |&end| {
            let s = &self.doc_ids[start..end];
            start = end;
            s
        })
    }
}

/// Metric values after each search iteration of one topic's session:
/// α-NDCG, NDCG and nSDCG are all cumulative over the list so far.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationScores {
    pub alpha_ndcg: f64,
    pub ndcg: f64,
    pub nsdcg: f64,
}

/// Scores every prefix of `ranked` at its iteration boundaries.
pub fn score_session(
    judgments: &JudgmentSet,
    ranked: &RankedList,
    alpha: f64,
    bq: f64,
) -> Result<Vec<IterationScores>> {
    let topic = ranked.topic_id.as_str();
    let rel_pool = judgments.relevance_pool(topic)?;
    let cov_pool = judgments.coverage_pool(topic)?;
    let iter_k = ranked
        .iterations()
        .map(<[String]>::len)
        .max()
        .unwrap_or(1)
        .max(1);
    let mut out = Vec::new();
    let mut lists: Vec<Vec<f64>> = Vec::new();
    for (it, block) in ranked.iterations().enumerate() {
        lists.push(block.iter().map(|d| judgments.doc_relevance(topic, d)).collect());
        let end = ranked.boundaries()[it];
        let prefix = &ranked.doc_ids()[..end];
        let rels: Vec<f64> = prefix.iter().map(|d| judgments.doc_relevance(topic, d)).collect();
        let cov: Vec<Coverage> = prefix.iter().map(|d| judgments.coverage(topic, d)).collect();
        let k = end.max(1);
        out.push(IterationScores {
            alpha_ndcg: alpha_ndcg_with_pool(&cov, &cov_pool, k, alpha)?,
            ndcg: ndcg_with_ideal(&rels, &rel_pool, k)?,
            nsdcg: session_ndcg_with_pool(&lists, &rel_pool, iter_k, bq)?,
        });
    }
    Ok(out)
}
