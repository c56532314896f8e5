use std::collections::BTreeMap;

use dynrank::data::{gen_synthetic_with, SyntheticProfile};
use dynrank::embedspace::{EmbeddedCorpus, EmbeddingVector};
use dynrank::feedback::{rocchio_embed, FeedbackEntry, FeedbackMode, FeedbackRecord, Reformulator, RocchioParams};
use dynrank::metrics::{alpha_dcg_at_k, greedy_alpha_ideal, ideal_alpha_dcg, Coverage};
use dynrank::policy::{evaluate_session, train_session, PolicyConfig, ReportMetric, TargetMetric};
use dynrank::valuenet::{init_glorot, NetConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Parses `id: label label ...` lines. Labels are mapped to subtopic
/// indices in order of first appearance.
fn parse_coverage(text: &str) -> Result<Vec<(String, Coverage)>, String> {
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut docs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (id, rest) = line.split_once(':').ok_or(format!("line {}: expected `id: labels`", n + 1))?;
        let mut cov = Vec::new();
        for l in rest.split_whitespace() {
            let next = labels.len();
            cov.push(*labels.entry(l.to_string()).or_insert(next));
        }
        docs.push((id.trim().to_string(), cov));
    }
    if docs.is_empty() {
        return Err("no documents".into());
    }
    Ok(docs)
}

pub fn alpha_ndcg_report(text: &str, k: usize, alpha: f64) -> Result<String, String> {
    let docs = parse_coverage(text)?;
    let cov: Vec<Coverage> = docs.iter().map(|(_, c)| c.clone()).collect();
    let dcg = alpha_dcg_at_k(&cov, k, alpha).map_err(|e| e.to_string())?;
    let ideal = ideal_alpha_dcg(&docs, k, alpha).map_err(|e| e.to_string())?;
    let order: Vec<&str> = greedy_alpha_ideal(&docs, k, alpha)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|i| docs[i].0.as_str())
        .collect();
    let ndcg = if ideal > 0.0 { dcg / ideal } else { 0.0 };
    Ok(json!({ "alpha_dcg": dcg, "ideal_alpha_dcg": ideal, "alpha_ndcg": ndcg, "ideal_order": order }).to_string())
}

fn parse_vector(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad number `{}`", x.trim())))
        .collect()
}

fn parse_vectors(s: &str) -> Result<Vec<Vec<f64>>, String> {
    s.split(';').filter(|v| !v.trim().is_empty()).map(parse_vector).collect()
}

/// One embedding Rocchio step. Document vectors are `;`-separated lists of
/// comma-separated numbers.
pub fn rocchio(query: &str, relevant: &str, nonrelevant: &str, gamma: f64, b: f64, c: f64, n: usize) -> Result<Vec<f64>, String> {
    let q = parse_vector(query)?;
    let dim = q.len();
    let mut corpus = EmbeddedCorpus::new(dim);
    let mut fb = FeedbackRecord { n, ..FeedbackRecord::default() };
    for (tag, group) in [("r", relevant), ("n", nonrelevant)] {
        for (i, v) in parse_vectors(group)?.into_iter().enumerate() {
            let id = format!("{tag}{i}");
            let v = EmbeddingVector::new(v).map_err(|e| e.to_string())?;
            corpus.insert(id.clone(), v).map_err(|e| e.to_string())?;
            if tag == "r" {
                fb.entries.push(FeedbackEntry { doc: id.clone(), subtopic: "s".into(), score: 1.0 });
            }
            fb.returned.push(id);
        }
    }
    let params = RocchioParams { gamma, b, c };
    params.validate().map_err(|e| e.to_string())?;
    let q = EmbeddingVector::new(q).map_err(|e| e.to_string())?;
    let out = rocchio_embed(&q, &fb, &corpus, &params, n).map_err(|e| e.to_string())?;
    Ok(out.into_vec())
}

/// Trains a small net on a few synthetic topics and replays held-out
/// sessions with and without feedback.
pub fn session(seed: u64, epochs: usize) -> Result<String, String> {
    let dim = 16;
    let profile = SyntheticProfile { latent_dim: 4, shared_weight: 1.0, query_decoys: 1, ..SyntheticProfile::default() };
    let ds = gen_synthetic_with(6, 40, 3, dim, seed, &profile).map_err(|e| e.to_string())?;
    let ids = ds.topic_ids();
    let (train, test) = ids.split_at(4);
    let net = NetConfig {
        layers: 1,
        hidden_dim: 8,
        head_widths: vec![8],
        window: 5,
        dropout: 0.0,
        input_scale: 4.0,
        ..NetConfig::full(dim)
    };
    let policy = PolicyConfig {
        max_epochs: epochs.max(1),
        min_epochs: epochs.max(1),
        iterations: 5,
        target: TargetMetric::AlphaDcg,
        seed,
        ..PolicyConfig::default()
    };
    let mut out = serde_json::Map::new();
    for mode in [FeedbackMode::EmbedRocchio, FeedbackMode::NoFeedback] {
        let reform = Reformulator { mode, ..Reformulator::default() };
        let mut params = init_glorot(&net, seed).map_err(|e| e.to_string())?;
        let log = train_session(&mut params, &ds, train, &reform, &policy).map_err(|e| e.to_string())?;
        let eval = evaluate_session(&params, &ds, test, &reform, &policy, &[ReportMetric::AlphaNdcg], 4.0)
            .map_err(|e| e.to_string())?;
        let curve: Vec<f64> = (1..=policy.iterations)
            .filter_map(|i| eval.table.get(i, "alpha-ndcg").map(|r| r.mean))
            .collect();
        let loss: Vec<f64> = log.epochs.iter().map(|e| e.mean_loss).collect();
        let first = eval.runs[0].ranked.doc_ids().iter().take(policy.docs_per_iteration).cloned().collect::<Vec<_>>();
        out.insert(mode.name().into(), json!({ "alpha_ndcg": curve, "loss": loss, "first_block": first }));
    }
    Ok(serde_json::Value::Object(out).to_string())
}

#[wasm_bindgen]
pub fn alpha_ndcg(docs: &str, k: usize, alpha: f64) -> Result<String, JsError> {
    alpha_ndcg_report(docs, k, alpha).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn rocchio_step(query: &str, relevant: &str, nonrelevant: &str, gamma: f64, b: f64, c: f64, n: usize) -> Result<Vec<f64>, JsError> {
    rocchio(query, relevant, nonrelevant, gamma, b, c, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn tiny_session(seed: u64, epochs: usize) -> Result<String, JsError> {
    session(seed, epochs).map_err(|e| JsError::new(&e))
}
