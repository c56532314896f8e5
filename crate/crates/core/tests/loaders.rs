use std::io::Write;
use std::path::PathBuf;

use dynrank::data::{load_letor, load_trec_dd, split_folds, Corpus};
use dynrank::error::Error;
use tempfile::TempDir;

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
    p
}

const TOPICS: &str = r#"{"topic_id": "t1", "query": "solar panels"}
{"topic_id": "t2", "query": "river flooding"}
"#;

const DOCS: &str = r#"{"doc_id": "d1", "text": "solar panels on roofs"}
{"doc_id": "d2", "text": "panel efficiency and cost"}
{"doc_id": "d3", "text": "the river rose after rain"}
{"doc_id": "d4", "text": "unrelated cooking notes"}
"#;

const QRELS: &str = "t1\ts1\td1\t2\nt1\ts2\td1\t1\nt1\ts3\td2\t3\nt2\ts1\td3\t1\n";

#[test]
fn trec_dd_fixture_resolves() {
    let dir = TempDir::new().unwrap();
    let ds = load_trec_dd(
        &write(&dir, "topics.jsonl", TOPICS),
        &write(&dir, "qrels.tsv", QRELS),
        &write(&dir, "docs.jsonl", DOCS),
        32,
        7,
    )
    .unwrap();
    assert_eq!(ds.topic_ids(), ["t1", "t2"]);
    assert_eq!(ds.topic("t1").unwrap().pool.len(), 4);
    assert_eq!(ds.judgments.subtopics("t1").unwrap().len(), 3);
    // Relevance of a document is the sum over its subtopic grades.
    assert_eq!(ds.judgments.doc_relevance("t1", "d1"), 3.0);
    assert_eq!(ds.judgments.doc_relevance("t1", "d4"), 0.0);
    assert_eq!(ds.input_dim(), 64);
    assert!(ds.texts.is_some());
}

#[test]
fn trec_dd_rejects_dangling_judgments() {
    let dir = TempDir::new().unwrap();
    let topics = write(&dir, "topics.jsonl", TOPICS);
    let docs = write(&dir, "docs.jsonl", DOCS);
    let missing_doc = write(&dir, "q1.tsv", "t1\ts1\td9\t1\n");
    let err = load_trec_dd(&topics, &missing_doc, &docs, 32, 7).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
    assert!(err.to_string().contains("d9"));
    let unknown_topic = write(&dir, "q2.tsv", "t1\ts1\td1\t1\nt7\ts1\td1\t1\n");
    let err = load_trec_dd(&topics, &unknown_topic, &docs, 32, 7).unwrap_err();
    assert!(err.to_string().contains(":2:"), "{err}");
    let short = write(&dir, "q3.tsv", "t1\ts1\td1\n");
    assert_eq!(load_trec_dd(&topics, &short, &docs, 32, 7).unwrap_err().exit_code(), 3);
}

#[test]
fn trec_dd_with_vectors() {
    let dir = TempDir::new().unwrap();
    let topics = write(&dir, "topics.jsonl", "{\"topic_id\": \"t1\", \"query\": \"x\", \"vector\": [1, 0]}\n");
    let vecs = write(&dir, "docs.tsv", "#dim=2\nd1\t1\t0\nd2\t0\t1\n");
    let qrels = write(&dir, "qrels.tsv", "t1\ts1\td1\t1\n");
    let ds = load_trec_dd(&topics, &qrels, &vecs, 99, 0).unwrap();
    assert_eq!(ds.topic("t1").unwrap().vector.as_slice(), &[1.0, 0.0]);
    assert_eq!(ds.input_dim(), 4);
    assert!(ds.texts.is_none());
    let bad = write(&dir, "bad.jsonl", "{\"topic_id\": \"t1\", \"query\": \"x\", \"vector\": [1, 0, 0]}\n");
    assert!(load_trec_dd(&bad, &qrels, &vecs, 99, 0).is_err());
}

#[test]
fn letor_per_query_counts() {
    let dir = TempDir::new().unwrap();
    let path = write(
        &dir,
        "mq.txt",
        "2 qid:10 1:0.1 2:0.9 #docid = A\n\
         0 qid:10 1:0.3 2:0.2 #docid = B\n\
         1 qid:10 1:0.5 2:0.5 #docid = C\n\
         0 qid:11 1:0.7 2:0.1 #docid = D\n\
         1 qid:11 1:0.2 2:0.8 #docid = E\n",
    );
    let ds = load_letor(&path).unwrap();
    assert_eq!(ds.topic("10").unwrap().pool.len(), 3);
    assert_eq!(ds.topic("11").unwrap().pool.len(), 2);
    let Corpus::Feature(fc) = &ds.corpus else { panic!("feature corpus expected") };
    assert_eq!(fc.get("10", "A").unwrap().1, 2);
    assert_eq!(ds.judgments.doc_relevance("11", "E"), 1.0);
}

#[test]
fn missing_files_are_data_errors() {
    let dir = TempDir::new().unwrap();
    let nope = dir.path().join("nope.txt");
    assert!(matches!(load_letor(&nope).unwrap_err(), Error::Data(_)));
}

#[test]
fn folds_cover_topics_once() {
    let ids: Vec<String> = (0..23).map(|i| format!("t{i}")).collect();
    for k in [2, 5, 23] {
        let folds = split_folds(&ids, k, 4).unwrap();
        let mut seen: Vec<&String> = folds.iter().flat_map(|f| &f.test).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), ids.len());
        for f in &folds {
            assert_eq!(f.train.len() + f.test.len(), ids.len());
            assert!(f.train.iter().all(|t| !f.test.contains(t)));
        }
    }
    assert!(split_folds(&ids, 24, 0).is_err());
}
