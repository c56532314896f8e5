use dynrank::data::gen_synthetic;
use dynrank::embedspace::EmbeddingVector;
use dynrank::policy::{
    evaluate_session, ranked_inputs, session_transition, step_reward, step_transition, PolicyConfig, ReportMetric,
    SelectionMode, SessionState, TargetMetric,
};
use dynrank::feedback::Reformulator;
use dynrank::valuenet::{init_glorot, NetConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ranked_and_candidates_stay_disjoint(seed in 0u64..500, picks in prop::collection::vec(0usize..1000, 1..15)) {
        let ds = gen_synthetic(1, 20, 2, 8, seed).unwrap();
        let topic = ds.topic_ids()[0].clone();
        let mut state = SessionState::start(&ds, &topic).unwrap();
        let total = state.candidates.len();
        for p in picks {
            let doc = state.candidates.iter().nth(p % state.candidates.len()).unwrap().clone();
            state = step_transition(state, &ds, &doc).unwrap();
            prop_assert!(state.ranked.iter().all(|(d, _)| !state.candidates.contains(d)));
            prop_assert_eq!(state.ranked.len() + state.candidates.len(), total);
            prop_assert!(step_transition(state.clone(), &ds, &doc).is_err());
        }
    }

    #[test]
    fn rewards_never_decrease_within_a_session(seed in 0u64..500, alpha in 0.0f64..0.9) {
        let ds = gen_synthetic(1, 15, 3, 8, seed).unwrap();
        let topic = ds.topic_ids()[0].clone();
        let order: Vec<String> = ds.topic(&topic).unwrap().pool.clone();
        for metric in [TargetMetric::Dcg, TargetMetric::AlphaDcg] {
            let mut state = SessionState::start(&ds, &topic).unwrap();
            let mut last = 0.0;
            for doc in order.iter().take(10) {
                state = step_transition(state, &ds, doc).unwrap();
                let r = step_reward(metric, alpha, &state, &ds.judgments).unwrap();
                prop_assert!(r >= last - 1e-12);
                last = r;
            }
        }
    }

    #[test]
    fn inputs_pair_documents_with_the_current_query(seed in 0u64..500, shift in -1.0f64..1.0) {
        let ds = gen_synthetic(1, 10, 2, 4, seed).unwrap();
        let topic = ds.topic_ids()[0].clone();
        let mut state = SessionState::start(&ds, &topic).unwrap();
        for doc in ds.topic(&topic).unwrap().pool.clone().iter().take(3) {
            state = step_transition(state, &ds, doc).unwrap();
        }
        let q2 = EmbeddingVector::new(vec![shift, 0.5, -0.25, 1.0]).unwrap();
        let before: Vec<Vec<f64>> = state.ranked.iter().map(|(_, d)| d.as_slice().to_vec()).collect();
        let state = session_transition(state, q2.clone()).unwrap();
        for (row, d) in ranked_inputs(&state, ds.kind()).iter().zip(&before) {
            prop_assert_eq!(&row[..4], d.as_slice());
            prop_assert_eq!(&row[4..], q2.as_slice());
        }
    }
}

#[test]
fn greedy_evaluation_is_deterministic() {
    let ds = gen_synthetic(3, 20, 2, 8, 5).unwrap();
    let topics = ds.topic_ids();
    let cfg = NetConfig {
        hidden_dim: 4,
        head_widths: vec![4],
        layers: 2,
        ..NetConfig::full(8)
    };
    let p = init_glorot(&cfg, 9).unwrap();
    let policy = PolicyConfig { iterations: 3, eval_mode: SelectionMode::Argmax, ..PolicyConfig::default() };
    let run = |seed| {
        let pc = PolicyConfig { seed, ..policy.clone() };
        evaluate_session(&p, &ds, &topics, &Reformulator::default(), &pc, &[ReportMetric::AlphaNdcg], 4.0).unwrap()
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a.table, run(77).table);
}
