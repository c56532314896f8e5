//! Experiment orchestration: run configuration, cross-validated training and
//! evaluation, ablations, layer sweeps and report files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic_with, load_letor, load_trec_dd, split_folds, Dataset, Fold, SyntheticProfile};
use crate::error::{Error, Result};
use crate::feedback::{write_feedback_jsonl, FeedbackMode, Reformulator};
use crate::metrics::{alpha_ndcg_with_pool, ndcg_with_ideal, Coverage, RankedList};
use crate::policy::{
    evaluate_session, mean_std, random_baseline, score_run, tabulate, train_session, EvalTable, PolicyConfig,
    ReportMetric, SessionRun, TargetMetric, TrainLog,
};
use crate::valuenet::{self, init_glorot, NetConfig, ValueNetParams};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Layer counts visited by `sweep-layers`.
pub const SWEEP_LAYERS: [usize; 4] = [1, 2, 3, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Train,
    Evaluate,
    Ablate,
    SweepLayers,
    Metrics,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::SweepLayers => "sweep-layers",
            Command::Metrics => "metrics",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        topics: usize,
        docs_per_topic: usize,
        subtopics: usize,
        dim: usize,
        seed: u64,
        #[serde(default)]
        profile: SyntheticProfile,
    },
    /// Topics JSONL, qrels TSV, and documents as text JSONL or a vectors TSV.
    TrecDd {
        topics: PathBuf,
        qrels: PathBuf,
        docs: PathBuf,
        /// Width of hashed text embeddings; ignored for vector files.
        #[serde(default = "default_embed_dim")]
        dim: usize,
        #[serde(default)]
        embed_seed: u64,
    },
    Letor {
        path: PathBuf,
    },
}

fn default_embed_dim() -> usize {
    64
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Synthetic {
                topics,
                docs_per_topic,
                subtopics,
                dim,
                seed,
                profile,
            } => gen_synthetic_with(*topics, *docs_per_topic, *subtopics, *dim, *seed, profile).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::Config(m),
                e => e,
            }),
            DatasetSpec::TrecDd {
                topics,
                qrels,
                docs,
                dim,
                embed_seed,
            } => {
                for p in [topics, qrels, docs] {
                    require_file(p)?;
                }
                load_trec_dd(topics, qrels, docs, *dim, *embed_seed)
            }
            DatasetSpec::Letor { path } => {
                require_file(path)?;
                load_letor(path)
            }
        }
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Data(format!("cannot read input file {}", p.display())))
    }
}

/// Target, reported metrics and their parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSpec {
    /// Metric whose value is the training target.
    pub target: TargetMetric,
    pub report: Vec<ReportMetric>,
    /// Metric summarised as the final value of a variant.
    pub primary: ReportMetric,
    pub alpha: f64,
    /// Session discount base of nSDCG.
    pub bq: f64,
    /// Depths at which the final list is also scored.
    pub cutoffs: Vec<usize>,
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self {
            target: TargetMetric::Dcg,
            report: ReportMetric::ALL.to_vec(),
            primary: ReportMetric::AlphaNdcg,
            alpha: 0.5,
            bq: 4.0,
            cutoffs: vec![5, 10, 20],
        }
    }
}

fn default_folds() -> usize {
    5
}

fn default_permutations() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub net: NetConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub feedback: Reformulator,
    #[serde(default)]
    pub metrics: MetricSpec,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Random orderings averaged per topic for the baseline table.
    #[serde(default = "default_permutations")]
    pub baseline_permutations: usize,
    /// Run file scored by the `metrics` command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_file: Option<PathBuf>,
}

impl RunConfig {
    /// The desk-scale synthetic profile.
    pub fn desk(out_dir: impl Into<PathBuf>) -> Self {
        let dim = 64;
        Self {
            dataset: DatasetSpec::Synthetic {
                topics: 20,
                docs_per_topic: 200,
                subtopics: 3,
                dim,
                seed: 0,
                profile: SyntheticProfile {
                    latent_dim: 8,
                    shared_weight: 1.0,
                    query_decoys: 1,
                    ..SyntheticProfile::default()
                },
            },
            net: NetConfig {
                hidden_dim: 64,
                head_widths: vec![128, 64, 32, 16, 8],
                dropout: 0.0,
                input_scale: 16.0,
                ..NetConfig::full(dim)
            },
            policy: PolicyConfig {
                max_epochs: 12,
                min_epochs: 12,
                target_form: crate::policy::TargetForm::Gain,
                ..PolicyConfig::default()
            },
            feedback: Reformulator::default(),
            metrics: MetricSpec::default(),
            folds: 5,
            seed: 0,
            out_dir: out_dir.into(),
            baseline_permutations: default_permutations(),
            run_file: None,
        }
    }

    /// The desk profile with a share of each pool written about decoy
    /// subtopics named in the query. Ranking from the query alone cannot
    /// separate them from relevant documents; feedback can.
    pub fn multi_subtopic(out_dir: impl Into<PathBuf>) -> Self {
        let mut c = Self::desk(out_dir);
        if let DatasetSpec::Synthetic { profile, .. } = &mut c.dataset {
            profile.decoy_fraction = 0.15;
        }
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            e => e,
        };
        self.net.validate().map_err(cfg)?;
        self.policy.validate().map_err(cfg)?;
        self.feedback.rocchio.validate().map_err(cfg)?;
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        let m = &self.metrics;
        if m.report.is_empty() {
            return Err(Error::Config("metrics.report must not be empty".into()));
        }
        let mut seen = m.report.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != m.report.len() {
            return Err(Error::Config("metrics.report lists a metric twice".into()));
        }
        if !(0.0..1.0).contains(&m.alpha) {
            return Err(Error::Config(format!("metrics.alpha must lie in [0, 1), got {}", m.alpha)));
        }
        if !(m.bq > 1.0) || !m.bq.is_finite() {
            return Err(Error::Config(format!("metrics.bq must exceed 1, got {}", m.bq)));
        }
        if m.cutoffs.contains(&0) {
            return Err(Error::Config("metrics.cutoffs must be positive".into()));
        }
        if self.baseline_permutations == 0 {
            return Err(Error::Config("baseline_permutations must be positive".into()));
        }
        Ok(())
    }

    /// Metrics written to tables: the configured list plus the primary one.
    pub fn report_metrics(&self) -> Vec<ReportMetric> {
        let mut out = self.metrics.report.clone();
        if !out.contains(&self.metrics.primary) {
            out.push(self.metrics.primary);
        }
        out
    }

    fn policy_for(&self, seed: u64) -> PolicyConfig {
        PolicyConfig {
            target: self.metrics.target,
            alpha: self.metrics.alpha,
            seed,
            ..self.policy.clone()
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub layers: Option<usize>,
    pub epsilon0: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub window: Option<usize>,
    pub docs_per_iter: Option<usize>,
    pub iterations: Option<usize>,
    pub metric: Option<ReportMetric>,
    pub out: Option<PathBuf>,
    pub run_file: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, c: &mut RunConfig) {
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        set(&mut c.seed, &self.seed);
        set(&mut c.folds, &self.folds);
        set(&mut c.net.layers, &self.layers);
        set(&mut c.policy.epsilon, &self.epsilon0);
        set(&mut c.metrics.alpha, &self.alpha);
        set(&mut c.feedback.rocchio.gamma, &self.gamma);
        set(&mut c.feedback.rocchio.b, &self.b);
        set(&mut c.feedback.rocchio.c, &self.c);
        set(&mut c.net.window, &self.window);
        set(&mut c.policy.docs_per_iteration, &self.docs_per_iter);
        set(&mut c.policy.iterations, &self.iterations);
        set(&mut c.metrics.primary, &self.metric);
        set(&mut c.out_dir, &self.out);
        if self.run_file.is_some() {
            c.run_file = self.run_file.clone();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_topics: Vec<String>,
    pub test_topics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainLog>,
    pub table: EvalTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffRow {
    pub k: usize,
    pub metric_name: String,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    /// Effective configuration of this variant.
    pub config: RunConfig,
    pub folds: Vec<FoldReport>,
    /// Over all test topics of all folds.
    pub summary: EvalTable,
    pub baseline: EvalTable,
    pub cutoffs: Vec<CutoffRow>,
    /// Primary metric after the last iteration.
    pub final_metric: f64,
}

impl VariantReport {
    pub fn final_value(&self, metric: ReportMetric) -> Option<f64> {
        let last = self.summary.rows.iter().map(|r| r.iteration).max()?;
        self.summary.get(last, metric.name()).map(|r| r.mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: Command,
    pub config: RunConfig,
    pub variants: Vec<VariantReport>,
    /// Not written to the deterministic report files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

impl RunReport {
    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// The report without its timing.
    pub fn deterministic(&self) -> RunReport {
        RunReport {
            wall_time_secs: None,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.deterministic()).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: RunReport = serde_json::from_str(text).map_err(|e| Error::Data(format!("report: {e}")))?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "report schema version {} (expected {REPORT_SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        Ok(r)
    }
}

/// Seeds for network init, training and evaluation of one fold, drawn from
/// the run seed's stream number `fold + 1`.
pub fn fold_seeds(seed: u64, fold: usize) -> [u64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64 + 1);
    [rng.next_u64(), rng.next_u64(), rng.next_u64()]
}

fn baseline_seed(seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng.next_u64()
}

fn in_fold<T>(fold: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Fold {
        fold,
        source: Box::new(e),
    })
}

fn checkpoint_path(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold{fold}")).join("model.ckpt")
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::Runtime(format!("cannot create {}: {e}", p.display())))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Runtime(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// One line of a run file: a topic's ranked documents per search iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLine {
    pub topic_id: String,
    pub iterations: Vec<Vec<String>>,
}

impl RunLine {
    pub fn from_ranked(r: &RankedList) -> Self {
        Self {
            topic_id: r.topic_id.clone(),
            iterations: r.iterations().map(<[String]>::to_vec).collect(),
        }
    }

    pub fn to_ranked(&self) -> Result<RankedList> {
        let mut docs = Vec::new();
        let mut bounds = Vec::new();
        for block in &self.iterations {
            docs.extend(block.iter().cloned());
            bounds.push(docs.len());
        }
        RankedList::new(self.topic_id.clone(), docs, bounds)
    }
}

pub fn write_run_jsonl<W: Write>(runs: &[RankedList], mut w: W) -> Result<()> {
    for r in runs {
        serde_json::to_writer(&mut w, &RunLine::from_ranked(r))?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_run_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<Vec<RankedList>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RunLine = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(parsed.to_ranked().map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("run file {} is empty", path.display())));
    }
    Ok(out)
}

/// Mean and spread of NDCG and α-NDCG at fixed depths of each final list.
pub fn cutoff_table(dataset: &Dataset, runs: &[RankedList], cutoffs: &[usize], alpha: f64) -> Result<Vec<CutoffRow>> {
    let mut rows = Vec::new();
    for &k in cutoffs {
        let mut nd = Vec::with_capacity(runs.len());
        let mut an = Vec::with_capacity(runs.len());
        for r in runs {
            let topic = r.topic_id.as_str();
            let j = &dataset.judgments;
            let rels: Vec<f64> = r.doc_ids().iter().map(|d| j.doc_relevance(topic, d)).collect();
            let cov: Vec<Coverage> = r.doc_ids().iter().map(|d| j.coverage(topic, d)).collect();
            nd.push(ndcg_with_ideal(&rels, &j.relevance_pool(topic)?, k)?);
            an.push(alpha_ndcg_with_pool(&cov, &j.coverage_pool(topic)?, k, alpha)?);
        }
        for (name, xs) in [(ReportMetric::AlphaNdcg.name(), an), (ReportMetric::Ndcg.name(), nd)] {
            let (mean, stddev) = mean_std(&xs);
            rows.push(CutoffRow {
                k,
                metric_name: name.to_string(),
                mean,
                stddev,
            });
        }
    }
    Ok(rows)
}

struct Context {
    dataset: Dataset,
    folds: Vec<Fold>,
}

fn prepare(config: &RunConfig) -> Result<Context> {
    config.validate()?;
    let dataset = config.dataset.load()?;
    if config.net.input_dim != dataset.input_dim() {
        return Err(Error::Config(format!(
            "net.input_dim is {} but the dataset needs {}",
            config.net.input_dim,
            dataset.input_dim()
        )));
    }
    if config.feedback.mode.needs_text() && dataset.texts.is_none() {
        return Err(Error::Config(format!(
            "feedback mode {} needs document text, which this dataset lacks",
            config.feedback.mode.name()
        )));
    }
    let folds = split_folds(&dataset.topic_ids(), config.folds, config.seed)?;
    Ok(Context { dataset, folds })
}

/// Trains (or loads) every fold of one variant, evaluates it and writes the
/// per-fold artifacts under `dir`.
fn run_variant(ctx: &Context, config: &RunConfig, name: &str, dir: &Path, train: bool) -> Result<VariantReport> {
    let metrics = config.report_metrics();
    let bq = config.metrics.bq;
    if !train {
        for f in &ctx.folds {
            let p = checkpoint_path(dir, f.index);
            if !p.is_file() {
                return Err(Error::Checkpoint(format!(
                    "missing checkpoint {}; run `train` with this config first",
                    p.display()
                )));
            }
        }
    }
    let mut folds = Vec::with_capacity(ctx.folds.len());
    let mut runs: Vec<SessionRun> = Vec::new();
    for f in &ctx.folds {
        let fold_dir = dir.join(format!("fold{}", f.index));
        create_dir(&fold_dir)?;
        let [init_seed, train_seed, eval_seed] = fold_seeds(config.seed, f.index);
        let (params, training) = if train {
            let mut params = in_fold(f.index, init_glorot(&config.net, init_seed))?;
            let log = in_fold(
                f.index,
                train_session(&mut params, &ctx.dataset, &f.train, &config.feedback, &config.policy_for(train_seed)),
            )?;
            valuenet::save(&params, &checkpoint_path(dir, f.index))
                .map_err(|e| Error::Runtime(format!("saving fold {} checkpoint: {e}", f.index)))?;
            write_file(&fold_dir.join("training_log.csv"), |w| log.write_csv(w))?;
            (params, Some(log))
        } else {
            let params: ValueNetParams = in_fold(f.index, valuenet::load(&checkpoint_path(dir, f.index)))?;
            if params.config() != &config.net {
                return Err(Error::Config(format!(
                    "checkpoint for fold {} was trained with a different net config",
                    f.index
                )));
            }
            (params, None)
        };
        let ev = in_fold(
            f.index,
            evaluate_session(
                &params,
                &ctx.dataset,
                &f.test,
                &config.feedback,
                &config.policy_for(eval_seed),
                &metrics,
                bq,
            ),
        )?;
        write_file(&fold_dir.join("evaluation.csv"), |w| ev.table.write_csv(w))?;
        let feedback: Vec<_> = ev.runs.iter().flat_map(|r| r.feedback.iter().cloned()).collect();
        write_file(&fold_dir.join("feedback.jsonl"), |w| write_feedback_jsonl(&feedback, w))?;
        folds.push(FoldReport {
            fold: f.index,
            train_topics: f.train.clone(),
            test_topics: f.test.clone(),
            training,
            table: ev.table,
        });
        runs.extend(ev.runs);
    }
    runs.sort_by(|a, b| a.ranked.topic_id.cmp(&b.ranked.topic_id));
    let ranked: Vec<RankedList> = runs.iter().map(|r| r.ranked.clone()).collect();
    write_file(&dir.join("runs.jsonl"), |w| write_run_jsonl(&ranked, w))?;
    let per_topic: Vec<_> = runs.iter().map(|r| r.scores.clone()).collect();
    let summary = tabulate(&per_topic, &metrics, config.policy.iterations);
    let all_topics = ctx.dataset.topic_ids();
    let baseline = random_baseline(
        &ctx.dataset,
        &all_topics,
        &config.policy_for(0),
        &metrics,
        bq,
        config.baseline_permutations,
        baseline_seed(config.seed),
    )?;
    let cutoffs = cutoff_table(&ctx.dataset, &ranked, &config.metrics.cutoffs, config.metrics.alpha)?;
    Ok(finish_variant(name, config, folds, summary, baseline, cutoffs))
}

fn finish_variant(
    name: &str,
    config: &RunConfig,
    folds: Vec<FoldReport>,
    summary: EvalTable,
    baseline: EvalTable,
    cutoffs: Vec<CutoffRow>,
) -> VariantReport {
    let mut v = VariantReport {
        name: name.to_string(),
        config: config.clone(),
        folds,
        summary,
        baseline,
        cutoffs,
        final_metric: 0.0,
    };
    v.final_metric = v.final_value(config.metrics.primary).unwrap_or(0.0);
    v
}

fn run_metrics(config: &RunConfig) -> Result<VariantReport> {
    config.validate()?;
    let path = config
        .run_file
        .as_ref()
        .ok_or_else(|| Error::Config("the metrics command needs a run file (run_file or --run)".into()))?;
    require_file(path)?;
    let dataset = config.dataset.load()?;
    let runs = read_run_jsonl(BufReader::new(File::open(path)?), path)?;
    let metrics = config.report_metrics();
    let mut per_topic = Vec::with_capacity(runs.len());
    for r in &runs {
        if !dataset.judgments.has_topic(&r.topic_id) {
            return Err(Error::UnknownTopic(r.topic_id.clone()));
        }
        per_topic.push(score_run(&dataset.judgments, r, config.metrics.alpha, config.metrics.bq)?);
    }
    let iterations = runs.iter().map(|r| r.boundaries().len()).max().unwrap_or(0);
    let summary = tabulate(&per_topic, &metrics, iterations);
    let topics: Vec<String> = {
        let mut t: Vec<String> = runs.iter().map(|r| r.topic_id.clone()).collect();
        t.sort();
        t.dedup();
        t
    };
    let baseline = random_baseline(
        &dataset,
        &topics,
        &config.policy_for(0),
        &metrics,
        config.metrics.bq,
        config.baseline_permutations,
        baseline_seed(config.seed),
    )?;
    let cutoffs = cutoff_table(&dataset, &runs, &config.metrics.cutoffs, config.metrics.alpha)?;
    Ok(finish_variant("metrics", config, Vec::new(), summary, baseline, cutoffs))
}

/// Runs `command` and writes its checkpoints, logs and reports under the
/// configured output directory.
pub fn run(config: &RunConfig, command: Command) -> Result<RunReport> {
    let start = Instant::now();
    let out = &config.out_dir;
    let variants = match command {
        Command::Metrics => {
            let v = run_metrics(config)?;
            create_dir(out)?;
            vec![v]
        }
        Command::Train | Command::Evaluate => {
            let ctx = prepare(config)?;
            create_dir(out)?;
            vec![run_variant(&ctx, config, "default", out, command == Command::Train)?]
        }
        Command::Ablate => {
            let ctx = prepare(config)?;
            let mut vs = Vec::new();
            for mode in FeedbackMode::ALL {
                let mut c = config.clone();
                c.feedback.mode = mode;
                if mode.needs_text() && ctx.dataset.texts.is_none() {
                    return Err(Error::Config(format!(
                        "ablation arm {} needs document text, which this dataset lacks",
                        mode.name()
                    )));
                }
                let dir = out.join(mode.name());
                create_dir(&dir)?;
                vs.push(run_variant(&ctx, &c, mode.name(), &dir, true)?);
            }
            vs
        }
        Command::SweepLayers => {
            let ctx = prepare(config)?;
            let mut vs = Vec::new();
            for j in SWEEP_LAYERS {
                let mut c = config.clone();
                c.net.layers = j;
                let name = format!("layers-{j}");
                let dir = out.join(&name);
                create_dir(&dir)?;
                vs.push(run_variant(&ctx, &c, &name, &dir, true)?);
            }
            vs
        }
    };
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        command,
        config: config.clone(),
        variants,
        wall_time_secs: Some(start.elapsed().as_secs_f64()),
    };
    emit_report(&report, out, ReportFormat::Json)?;
    emit_report(&report, out, ReportFormat::Csv)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Writes the deterministic report files: `report.json`, or the CSV tables
/// (`evaluation.csv`, `folds.csv`, `baseline.csv`, `cutoffs.csv` per
/// variant and `variants.csv` at the top).
pub fn emit_report(report: &RunReport, dir: &Path, format: ReportFormat) -> Result<()> {
    create_dir(dir)?;
    match format {
        ReportFormat::Json => write_file(&dir.join("report.json"), |w| {
            w.write_all(report.to_json().as_bytes())?;
            writeln!(w)?;
            Ok(())
        }),
        ReportFormat::Csv => {
            let single = report.variants.len() == 1;
            for v in &report.variants {
                let vdir = if single { dir.to_path_buf() } else { dir.join(&v.name) };
                create_dir(&vdir)?;
                write_file(&vdir.join("evaluation.csv"), |w| v.summary.write_csv(w))?;
                write_file(&vdir.join("baseline.csv"), |w| v.baseline.write_csv(w))?;
                write_file(&vdir.join("folds.csv"), |w| write_fold_rows(&v.folds, w))?;
                write_file(&vdir.join("cutoffs.csv"), |w| {
                    writeln!(w, "k,metric_name,mean,stddev")?;
                    for r in &v.cutoffs {
                        writeln!(w, "{},{},{},{}", r.k, r.metric_name, r.mean, r.stddev)?;
                    }
                    Ok(())
                })?;
            }
            write_file(&dir.join("variants.csv"), |w| {
                writeln!(w, "variant,iteration,metric_name,mean,stddev")?;
                for v in &report.variants {
                    for r in &v.summary.rows {
                        writeln!(w, "{},{},{},{},{}", v.name, r.iteration, r.metric_name, r.mean, r.stddev)?;
                    }
                }
                Ok(())
            })
        }
    }
}

/// `fold,iteration,metric_name,mean,stddev`: one row per fold, iteration
/// and metric.
pub fn write_fold_rows<W: Write>(folds: &[FoldReport], w: &mut W) -> Result<()> {
    writeln!(w, "fold,iteration,metric_name,mean,stddev")?;
    for f in folds {
        for r in &f.table.rows {
            writeln!(w, "{},{},{},{},{}", f.fold, r.iteration, r.metric_name, r.mean, r.stddev)?;
        }
    }
    Ok(())
}

/// Field-level differences between two configurations, as dotted JSON paths.
pub fn config_diff(a: &RunConfig, b: &RunConfig) -> Vec<String> {
    fn walk(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
        use serde_json::Value::Object;
        match (a, b) {
            (Object(x), Object(y)) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    match (x.get(k), y.get(k)) {
                        (Some(u), Some(v)) => walk(&p, u, v, out),
                        _ => out.push(p),
                    }
                }
            }
            _ if a != b => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    let a = serde_json::to_value(a).expect("config serializes");
    let b = serde_json::to_value(b).expect("config serializes");
    walk("", &a, &b, &mut out);
    out
}

/// Final primary metric per variant, keyed by variant name.
pub fn final_metrics(report: &RunReport) -> BTreeMap<String, f64> {
    report.variants.iter().map(|v| (v.name.clone(), v.final_metric)).collect()
}
