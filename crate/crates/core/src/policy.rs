//! The ranking loop: ε-greedy selection over value-network scores, list and
//! query transitions, metric rewards, stepwise training and greedy evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CorpusKind, Dataset};
use crate::embedspace::{check_same_dim, EmbeddingVector};
use crate::error::{Error, Result};
use crate::feedback::{simulate_feedback, FeedbackRecord, QueryState, Reformulator};
use crate::metrics::{
    alpha_dcg_at_k, dcg_at_k, ideal_alpha_dcg, score_session, Coverage,
    JudgmentSet, RankedList,
};
use crate::valuenet::{Mode, ValueNetParams};

/// Shift added after moving the smallest score to zero in proportional sampling.
pub const SAMPLE_DELTA: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Draw proportionally to the scores.
    Sample,
    /// Highest score, ties to the smallest doc id.
    Argmax,
}

/// Metric whose value on the list so far is the regression target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMetric {
    Dcg,
    AlphaDcg,
    Ndcg,
    AlphaNdcg,
}

/// Regression target of a training step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetForm {
    /// Metric of the whole list ranked so far.
    Cumulative,
    /// Increase of that metric due to the document just ranked.
    Gain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Exploration rate at the start of training.
    pub epsilon: f64,
    pub epsilon_decay: f64,
    /// Epochs between two decays.
    pub decay_every: usize,
    pub docs_per_iteration: usize,
    pub iterations: usize,
    /// Exploit rule while training.
    pub mode: SelectionMode,
    /// Exploit rule at evaluation, where ε is 0.
    pub eval_mode: SelectionMode,
    pub max_epochs: usize,
    /// Epochs run before the convergence test applies.
    pub min_epochs: usize,
    /// Training stops once the relative epoch-loss improvement falls below this.
    pub tolerance: f64,
    /// Set by the run configuration's metric section.
    #[serde(skip)]
    pub target: TargetMetric,
    pub target_form: TargetForm,
    /// Set by the run configuration's metric section.
    #[serde(skip)]
    pub alpha: f64,
    /// Forked per fold from the run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            epsilon_decay: 0.9,
            decay_every: 1000,
            docs_per_iteration: 5,
            iterations: 10,
            mode: SelectionMode::Sample,
            eval_mode: SelectionMode::Argmax,
            max_epochs: 5000,
            min_epochs: 1,
            tolerance: 1e-4,
            target: TargetMetric::Dcg,
            target_form: TargetForm::Cumulative,
            alpha: 0.5,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay) {
            return bad(format!("epsilon_decay must lie in [0, 1], got {}", self.epsilon_decay));
        }
        if self.decay_every == 0 || self.docs_per_iteration == 0 || self.iterations == 0 || self.max_epochs == 0 {
            return bad("decay_every, docs_per_iteration, iterations and max_epochs must be positive".into());
        }
        if self.min_epochs == 0 || self.min_epochs > self.max_epochs {
            return bad(format!("min_epochs must lie in [1, max_epochs], got {}", self.min_epochs));
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        Ok(())
    }

    /// Exploration rate after `epochs` completed epochs.
    pub fn epsilon_after(&self, epochs: usize) -> f64 {
        let decays = (epochs / self.decay_every) as i32;
        self.epsilon * self.epsilon_decay.powi(decays)
    }
}

/// One topic's search session in progress.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionState {
    pub topic_id: String,
    pub query: EmbeddingVector,
    pub ranked: Vec<(String, EmbeddingVector)>,
    pub candidates: BTreeSet<String>,
    /// Search iteration, starting at 1.
    pub iteration: usize,
}

impl SessionState {
    pub fn new(
        topic_id: impl Into<String>,
        query: EmbeddingVector,
        candidates: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for c in candidates {
            if !set.insert(c.clone()) {
                return Err(Error::Data(format!("duplicate candidate `{c}`")));
            }
        }
        Ok(Self {
            topic_id: topic_id.into(),
            query,
            ranked: Vec::new(),
            candidates: set,
            iteration: 1,
        })
    }

    /// Fresh session over the topic's pool with its initial query.
    pub fn start(dataset: &Dataset, topic: &str) -> Result<Self> {
        let t = dataset.topic(topic)?;
        Self::new(&t.id, t.vector.clone(), t.pool.iter().cloned())
    }

    pub fn ranked_ids(&self) -> Vec<String> {
        self.ranked.iter().map(|(d, _)| d.clone()).collect()
    }

    /// Appends `doc` to the ranked list and removes it from the candidates.
    pub fn step(&mut self, doc: &str, vector: EmbeddingVector) -> Result<()> {
        if !self.candidates.remove(doc) {
            return Err(if self.ranked.iter().any(|(d, _)| d == doc) {
                Error::invalid(format!("document `{doc}` is already ranked"))
            } else {
                Error::UnknownDocument(doc.to_string())
            });
        }
        self.ranked.push((doc.to_string(), vector));
        Ok(())
    }

    /// Replaces the query and moves to the next search iteration.
    pub fn advance(&mut self, query: EmbeddingVector) -> Result<()> {
        check_same_dim(&query, self.query.dim())?;
        self.query = query;
        self.iteration += 1;
        Ok(())
    }
}

pub fn step_transition(mut state: SessionState, dataset: &Dataset, doc: &str) -> Result<SessionState> {
    let v = dataset.doc_vector(&state.topic_id, doc)?.clone();
    state.step(doc, v)?;
    Ok(state)
}

pub fn session_transition(mut state: SessionState, new_query: EmbeddingVector) -> Result<SessionState> {
    state.advance(new_query)?;
    Ok(state)
}

/// Network input for one document: `[d, q]` for embedded corpora, the raw
/// features otherwise.
pub fn input_row(kind: CorpusKind, doc: &EmbeddingVector, query: &EmbeddingVector) -> Vec<f64> {
    match kind {
        CorpusKind::Embedded => doc.as_slice().iter().chain(query.as_slice()).copied().collect(),
        CorpusKind::Feature => doc.as_slice().to_vec(),
    }
}

/// The input sequence for the ranked list, every document paired with the
/// current query.
pub fn ranked_inputs(state: &SessionState, kind: CorpusKind) -> Vec<Vec<f64>> {
    state
        .ranked
        .iter()
        .map(|(_, d)| input_row(kind, d, &state.query))
        .collect()
}

fn window_prefix(state: &SessionState, kind: CorpusKind, window: usize) -> Vec<Vec<f64>> {
    let keep = window.saturating_sub(1);
    let start = state.ranked.len().saturating_sub(keep);
    state.ranked[start..]
        .iter()
        .map(|(_, d)| input_row(kind, d, &state.query))
        .collect()
}

/// Value of appending each candidate to the ranked list.
pub fn score_candidates(
    params: &ValueNetParams,
    state: &SessionState,
    dataset: &Dataset,
) -> Result<BTreeMap<String, f64>> {
    if state.candidates.is_empty() {
        return Err(Error::invalid("no candidates left to score"));
    }
    let kind = dataset.kind();
    let prefix = window_prefix(state, kind, params.config().window);
    // Embedded inputs are `[d, q]`; the query half is shared by every row.
    let shared: &[f64] = match kind {
        CorpusKind::Embedded => state.query.as_slice(),
        CorpusKind::Feature => &[],
    };
    let width = dataset.doc_dim();
    let mut m = Array2::zeros((state.candidates.len(), width));
    for (mut row, c) in m.rows_mut().into_iter().zip(&state.candidates) {
        let d = dataset.doc_vector(&state.topic_id, c)?;
        if d.dim() != width {
            return Err(Error::DimensionMismatch { expected: width, got: d.dim() });
        }
        row.assign(&ndarray::ArrayView1::from(d.as_slice()));
    }
    let values = params.score_batch_shared(&prefix, m.view(), shared)?;
    Ok(state.candidates.iter().cloned().zip(values).collect())
}

fn uniform_pick<R: Rng + ?Sized, S: AsRef<str>>(ids: &[S], rng: &mut R) -> String {
    ids[rng.random_range(0..ids.len())].as_ref().to_string()
}

fn exploit<R: Rng + ?Sized>(scores: &BTreeMap<String, f64>, mode: SelectionMode, rng: &mut R) -> Result<String> {
    if let Some((d, s)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::Runtime(format!("non-finite score {s} for `{d}`")));
    }
    match mode {
        SelectionMode::Argmax => {
            let mut best: Option<(&String, f64)> = None;
            for (d, &s) in scores {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((d, s));
                }
            }
            Ok(best.map(|(d, _)| d.clone()).expect("scores are non-empty"))
        }
        SelectionMode::Sample => {
            let min = scores.values().copied().fold(f64::INFINITY, f64::min);
            let shift = if min <= 0.0 { -min + SAMPLE_DELTA } else { 0.0 };
            let total: f64 = scores.values().map(|s| s + shift).sum();
            let mut u = rng.random::<f64>() * total;
            let mut last = None;
            for (d, s) in scores {
                let w = s + shift;
                if u < w {
                    return Ok(d.clone());
                }
                u -= w;
                last = Some(d);
            }
            Ok(last.expect("scores are non-empty").clone())
        }
    }
}

/// ε-greedy choice: with probability ε a uniformly random candidate,
/// otherwise the `mode` rule over the scores.
pub fn select_action<R: Rng + ?Sized>(
    scores: &BTreeMap<String, f64>,
    epsilon: f64,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<String> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot select from an empty score map"));
    }
    if rng.random::<f64>() < epsilon {
        let ids: Vec<&String> = scores.keys().collect();
        return Ok(uniform_pick(&ids, rng));
    }
    exploit(scores, mode, rng)
}

/// Same draw sequence as [`select_action`], but candidates are only scored
/// when the exploit branch is taken.
fn choose<R: Rng + ?Sized>(
    params: &ValueNetParams,
    state: &SessionState,
    dataset: &Dataset,
    epsilon: f64,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<String> {
    if rng.random::<f64>() < epsilon {
        let ids: Vec<&String> = state.candidates.iter().collect();
        return Ok(uniform_pick(&ids, rng));
    }
    let scores = score_candidates(params, state, dataset)?;
    exploit(&scores, mode, rng)
}

/// Regression target for a topic: the configured metric of the ranked list
/// so far at cutoff equal to its length. Ideal values are cached per cutoff.
#[derive(Clone, Debug)]
pub struct RewardOracle<'a> {
    judgments: &'a JudgmentSet,
    topic: String,
    metric: TargetMetric,
    alpha: f64,
    ideals: Vec<f64>,
}

impl<'a> RewardOracle<'a> {
    pub fn new(judgments: &'a JudgmentSet, topic: &str, metric: TargetMetric, alpha: f64, max_len: usize) -> Result<Self> {
        if !judgments.has_topic(topic) {
            return Err(Error::UnknownTopic(topic.to_string()));
        }
        let ideals = match metric {
            TargetMetric::Dcg | TargetMetric::AlphaDcg => Vec::new(),
            TargetMetric::Ndcg => {
                let mut pool = judgments.relevance_pool(topic)?;
                pool.sort_by(|a, b| b.total_cmp(a));
                (1..=max_len).map(|k| dcg_at_k(&pool, k)).collect::<Result<_>>()?
            }
            TargetMetric::AlphaNdcg => {
                let pool = judgments.coverage_pool(topic)?;
                (1..=max_len).map(|k| ideal_alpha_dcg(&pool, k, alpha)).collect::<Result<_>>()?
            }
        };
        Ok(Self {
            judgments,
            topic: topic.to_string(),
            metric,
            alpha,
            ideals,
        })
    }

    pub fn value<S: AsRef<str>>(&self, ranked: &[S]) -> Result<f64> {
        let k = ranked.len();
        if k == 0 {
            return Ok(0.0);
        }
        let rels = || -> Vec<f64> {
            ranked
                .iter()
                .map(|d| self.judgments.doc_relevance(&self.topic, d.as_ref()))
                .collect()
        };
        let cov = || -> Vec<Coverage> {
            ranked
                .iter()
                .map(|d| self.judgments.coverage(&self.topic, d.as_ref()))
                .collect()
        };
        let normalize = |v: f64| -> Result<f64> {
            let ideal = self
                .ideals
                .get(k - 1)
                .copied()
                .ok_or_else(|| Error::invalid(format!("ranked list longer than the oracle's {} cutoffs", self.ideals.len())))?;
            Ok(if ideal > 0.0 { v / ideal } else { 0.0 })
        };
        match self.metric {
            TargetMetric::Dcg => dcg_at_k(&rels(), k),
            TargetMetric::AlphaDcg => alpha_dcg_at_k(&cov(), k, self.alpha),
            TargetMetric::Ndcg => normalize(dcg_at_k(&rels(), k)?),
            TargetMetric::AlphaNdcg => normalize(alpha_dcg_at_k(&cov(), k, self.alpha)?),
        }
    }
}

/// Target value of the state's ranked list under `metric`.
pub fn step_reward(
    metric: TargetMetric,
    alpha: f64,
    state: &SessionState,
    judgments: &JudgmentSet,
) -> Result<f64> {
    let oracle = RewardOracle::new(judgments, &state.topic_id, metric, alpha, state.ranked.len())?;
    oracle.value(&state.ranked_ids())
}

/// Reformulated query for the next iteration from feedback on `block`.
/// Feature corpora have no query vector to move, so the query is kept.
fn next_query(
    dataset: &Dataset,
    reformulator: &Reformulator,
    query: &QueryState,
    block: &[String],
    topic: &str,
    n: usize,
) -> Result<(QueryState, FeedbackRecord)> {
    let fb = simulate_feedback(&dataset.judgments, topic, block, n)?;
    let q = match dataset.feedback_context() {
        Some(ctx) => reformulator.reformulate(ctx, query, &fb, n)?,
        None => query.clone(),
    };
    Ok((q, fb))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    EpochCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub stop: StopReason,
}

impl TrainLog {
    /// CSV with header `epoch,mean_loss,epsilon`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,mean_loss,epsilon")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{}", e.epoch, e.mean_loss, e.epsilon)?;
        }
        Ok(())
    }
}

fn check_topics(dataset: &Dataset, topics: &[String]) -> Result<()> {
    if topics.is_empty() {
        return Err(Error::invalid("no topics to run"));
    }
    for t in topics {
        dataset.topic(t)?;
        if !dataset.judgments.has_topic(t) {
            return Err(Error::Data(format!("topic {t} has no judgments")));
        }
    }
    Ok(())
}

/// Stepwise training: one SGD step on `(V - V*)²` per ranked document,
/// with simulated feedback and query reformulation between iterations.
pub fn train_session(
    params: &mut ValueNetParams,
    dataset: &Dataset,
    topics: &[String],
    reformulator: &Reformulator,
    config: &PolicyConfig,
) -> Result<TrainLog> {
    config.validate()?;
    check_topics(dataset, topics)?;
    if params.config().input_dim != dataset.input_dim() {
        return Err(Error::Config(format!(
            "network input_dim {} does not match the dataset's {}",
            params.config().input_dim,
            dataset.input_dim()
        )));
    }
    let kind = dataset.kind();
    let k = config.docs_per_iteration;
    let max_len = k * config.iterations;
    let oracles: Vec<RewardOracle> = topics
        .iter()
        .map(|t| RewardOracle::new(&dataset.judgments, t, config.target, config.alpha, max_len))
        .collect::<Result<_>>()?;
    let lr = params.config().learning_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut epochs = Vec::new();
    let mut prev: Option<f64> = None;
    let mut stop = StopReason::EpochCap;
    for epoch in 1..=config.max_epochs {
        let epsilon = config.epsilon_after(epoch - 1);
        let mut total = 0.0;
        let mut steps = 0usize;
        for (topic, oracle) in topics.iter().zip(&oracles) {
            let t = dataset.topic(topic)?;
            let mut state = SessionState::start(dataset, topic)?;
            let mut query = QueryState::new(t.query.clone(), t.vector.clone());
            for n in 1..=config.iterations {
                let mut block = Vec::with_capacity(k);
                for _ in 0..k {
                    if state.candidates.is_empty() {
                        break;
                    }
                    let doc = choose(params, &state, dataset, epsilon, config.mode, &mut rng)?;
                    let v = dataset.doc_vector(topic, &doc)?.clone();
                    state.step(&doc, v)?;
                    block.push(doc);
                    let ids = state.ranked_ids();
                    let mut target = oracle.value(&ids)?;
                    if config.target_form == TargetForm::Gain {
                        target -= oracle.value(&ids[..ids.len() - 1])?;
                    }
                    let inputs = window_prefix(&state, kind, params.config().window + 1);
                    let (value, cache) = params.forward(&inputs, Mode::Train, rng.random())?;
                    let grad = params.backward(&cache, target)?;
                    params.apply_update(&grad, lr)?;
                    total += (value - target).powi(2);
                    steps += 1;
                }
                if block.is_empty() || state.candidates.is_empty() {
                    break;
                }
                if n < config.iterations {
                    let (q, _) = next_query(dataset, reformulator, &query, &block, topic, n)?;
                    state.advance(q.vector.clone())?;
                    query = q;
                }
            }
        }
        let mean_loss = if steps > 0 { total / steps as f64 } else { 0.0 };
        if !mean_loss.is_finite() {
            return Err(Error::Runtime(format!("training diverged at epoch {epoch}")));
        }
        epochs.push(EpochLog { epoch, mean_loss, epsilon });
        if let Some(p) = prev.filter(|_| epoch >= config.min_epochs) {
            let converged = p <= 0.0 || (p - mean_loss) / p < config.tolerance;
            if converged {
                stop = StopReason::Converged;
                break;
            }
        }
        prev = Some(mean_loss);
    }
    Ok(TrainLog { epochs, stop })
}

/// Metrics reported per search iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportMetric {
    AlphaNdcg,
    Ndcg,
    Nsdcg,
}

impl ReportMetric {
    pub const ALL: [ReportMetric; 3] = [ReportMetric::AlphaNdcg, ReportMetric::Ndcg, ReportMetric::Nsdcg];

    pub fn name(&self) -> &'static str {
        match self {
            ReportMetric::AlphaNdcg => "alpha-ndcg",
            ReportMetric::Ndcg => "ndcg",
            ReportMetric::Nsdcg => "nsdcg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub iteration: usize,
    pub metric_name: String,
    pub mean: f64,
    pub stddev: f64,
}

/// Per-iteration means and population standard deviations over topics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<TableRow>,
}

impl EvalTable {
    pub fn get(&self, iteration: usize, metric: &str) -> Option<&TableRow> {
        self.rows
            .iter()
            .find(|r| r.iteration == iteration && r.metric_name == metric)
    }

    /// CSV with header `iteration,metric_name,mean,stddev`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,metric_name,mean,stddev")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.iteration, r.metric_name, r.mean, r.stddev)?;
        }
        Ok(())
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Builds the table from per-topic iteration scores. Sessions that ended
/// early carry their last value forward.
pub fn tabulate(
    per_topic: &[Vec<BTreeMap<ReportMetric, f64>>],
    metrics: &[ReportMetric],
    iterations: usize,
) -> EvalTable {
    let mut rows = Vec::new();
    for it in 1..=iterations {
        for m in metrics {
            let xs: Vec<f64> = per_topic
                .iter()
                .filter_map(|s| s.get(it - 1).or(s.last()).and_then(|row| row.get(m)).copied())
                .collect();
            let (mean, stddev) = mean_std(&xs);
            rows.push(TableRow {
                iteration: it,
                metric_name: m.name().to_string(),
                mean,
                stddev,
            });
        }
    }
    EvalTable { rows }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionRun {
    pub ranked: RankedList,
    pub feedback: Vec<FeedbackRecord>,
    pub scores: Vec<BTreeMap<ReportMetric, f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub table: EvalTable,
    pub runs: Vec<SessionRun>,
}

/// Scores a finished ranked list at every iteration boundary.
pub fn score_run(
    judgments: &JudgmentSet,
    ranked: &RankedList,
    alpha: f64,
    bq: f64,
) -> Result<Vec<BTreeMap<ReportMetric, f64>>> {
    Ok(score_session(judgments, ranked, alpha, bq)?
        .into_iter()
        .map(|s| {
            BTreeMap::from([
                (ReportMetric::AlphaNdcg, s.alpha_ndcg),
                (ReportMetric::Ndcg, s.ndcg),
                (ReportMetric::Nsdcg, s.nsdcg),
            ])
        })
        .collect())
}

/// Runs one session per topic with ε = 0 and reports cumulative metrics
/// after each iteration.
pub fn evaluate_session(
    params: &ValueNetParams,
    dataset: &Dataset,
    topics: &[String],
    reformulator: &Reformulator,
    config: &PolicyConfig,
    metrics: &[ReportMetric],
    bq: f64,
) -> Result<Evaluation> {
    config.validate()?;
    check_topics(dataset, topics)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut runs = Vec::with_capacity(topics.len());
    for topic in topics {
        let t = dataset.topic(topic)?;
        let mut state = SessionState::start(dataset, topic)?;
        let mut query = QueryState::new(t.query.clone(), t.vector.clone());
        let mut boundaries = Vec::new();
        let mut feedback = Vec::new();
        for n in 1..=config.iterations {
            let mut block = Vec::new();
            for _ in 0..config.docs_per_iteration {
                if state.candidates.is_empty() {
                    break;
                }
                let doc = choose(params, &state, dataset, 0.0, config.eval_mode, &mut rng)?;
                let v = dataset.doc_vector(topic, &doc)?.clone();
                state.step(&doc, v)?;
                block.push(doc);
            }
            if block.is_empty() {
                break;
            }
            boundaries.push(state.ranked.len());
            let (q, fb) = next_query(dataset, reformulator, &query, &block, topic, n)?;
            feedback.push(fb);
            if n < config.iterations && !state.candidates.is_empty() {
                state.advance(q.vector.clone())?;
                query = q;
            }
        }
        let ranked = RankedList::new(topic.clone(), state.ranked_ids(), boundaries)?;
        let scores = score_run(&dataset.judgments, &ranked, config.alpha, bq)?;
        runs.push(SessionRun { ranked, feedback, scores });
    }
    let per_topic: Vec<_> = runs.iter().map(|r| r.scores.clone()).collect();
    Ok(Evaluation {
        table: tabulate(&per_topic, metrics, config.iterations),
        runs,
    })
}

/// Mean over `permutations` seeded random orderings of each topic's pool,
/// scored like [`evaluate_session`].
pub fn random_baseline(
    dataset: &Dataset,
    topics: &[String],
    config: &PolicyConfig,
    metrics: &[ReportMetric],
    bq: f64,
    permutations: usize,
    seed: u64,
) -> Result<EvalTable> {
    use rand::seq::SliceRandom;
    check_topics(dataset, topics)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_topic = Vec::new();
    for topic in topics {
        let pool = &dataset.topic(topic)?.pool;
        let mut acc: Vec<BTreeMap<ReportMetric, f64>> = Vec::new();
        for _ in 0..permutations.max(1) {
            let mut docs = pool.clone();
            docs.shuffle(&mut rng);
            docs.truncate(config.docs_per_iteration * config.iterations);
            let boundaries: Vec<usize> = (1..=config.iterations)
                .map(|n| (n * config.docs_per_iteration).min(docs.len()))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .filter(|&b| b > 0)
                .collect();
            let ranked = RankedList::new(topic.clone(), docs, boundaries)?;
            let s = score_run(&dataset.judgments, &ranked, config.alpha, bq)?;
            if acc.is_empty() {
                acc = s.iter().map(|r| r.keys().map(|k| (*k, 0.0)).collect()).collect();
            }
            for (a, r) in acc.iter_mut().zip(&s) {
                for (k, v) in r {
                    *a.get_mut(k).expect("same metrics") += v;
                }
            }
        }
        let p = permutations.max(1) as f64;
        for row in acc.iter_mut() {
            row.values_mut().for_each(|v| *v /= p);
        }
        per_topic.push(acc);
    }
    Ok(tabulate(&per_topic, metrics, config.iterations))
}
