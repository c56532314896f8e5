use dynrank::valuenet::{init_glorot, Mode, NetConfig, OutputActivation};
use proptest::prelude::*;

fn small_config() -> impl Strategy<Value = NetConfig> {
    (1usize..=3, 1usize..=4, 1usize..=4, prop::collection::vec(1usize..=4, 1..=2), 1usize..=4, any::<bool>()).prop_map(
        |(layers, input_dim, hidden_dim, head_widths, window, sig)| NetConfig {
            layers,
            input_dim,
            hidden_dim,
            head_widths,
            window,
            dropout: 0.25,
            learning_rate: 0.01,
            output: if sig { OutputActivation::Sigmoid } else { OutputActivation::Linear },
            input_scale: 1.0,
        },
    )
}

fn inputs(dim: usize, max_len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gates_and_hidden_states_are_bounded(cfg in small_config(), seed in 0u64..1000, raw in inputs(4, 7)) {
        let xs: Vec<Vec<f64>> = raw.into_iter().map(|x| x[..cfg.input_dim].to_vec()).collect();
        let p = init_glorot(&cfg, seed).unwrap();
        let (_, cache) = p.forward(&xs, Mode::Train, seed).unwrap();
        for j in 0..cfg.layers {
            for k in 0..cache.steps() {
                let (f, i, o, h) = cache.gates(j, k);
                for g in [f, i, o] {
                    prop_assert!(g.iter().all(|&v| v > 0.0 && v < 1.0));
                }
                prop_assert!(h.iter().all(|&v| v > -1.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn eval_forward_is_pure(cfg in small_config(), seed in 0u64..1000, raw in inputs(4, 6)) {
        let xs: Vec<Vec<f64>> = raw.into_iter().map(|x| x[..cfg.input_dim].to_vec()).collect();
        let p = init_glorot(&cfg, seed).unwrap();
        let a = p.forward(&xs, Mode::Eval, 1).unwrap().0;
        let b = p.forward(&xs, Mode::Eval, 2).unwrap().0;
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert_eq!(a.to_bits(), p.value(&xs).unwrap().to_bits());
    }

    #[test]
    fn forward_sees_only_the_window(cfg in small_config(), seed in 0u64..1000, raw in inputs(4, 9)) {
        let xs: Vec<Vec<f64>> = raw.into_iter().map(|x| x[..cfg.input_dim].to_vec()).collect();
        let p = init_glorot(&cfg, seed).unwrap();
        let tail = &xs[xs.len().saturating_sub(cfg.window)..];
        prop_assert_eq!(p.value(&xs).unwrap().to_bits(), p.value(tail).unwrap().to_bits());
    }

    #[test]
    fn layer_count_adds_closed_form_parameters(cfg in small_config()) {
        let h = cfg.hidden_dim;
        let with = |layers| init_glorot(&NetConfig { layers, ..cfg.clone() }, 0).unwrap().param_count();
        // Each layer above the first maps h to h and carries its own c0, h0.
        let per_layer = 4 * h * (h + h) + 4 * h + 2 * h;
        prop_assert_eq!(with(2), with(1) + per_layer);
        prop_assert_eq!(with(3), with(1) + 2 * per_layer);
    }
}

#[test]
fn finite_differences_agree_with_backward() {
    let cfg = NetConfig {
        layers: 2,
        input_dim: 2,
        hidden_dim: 2,
        head_widths: vec![3],
        window: 3,
        dropout: 0.3,
        learning_rate: 0.01,
        output: OutputActivation::Linear,
        input_scale: 1.5,
    };
    assert!(cfg.param_count() <= 200);
    let xs = vec![vec![0.3, -0.7], vec![0.9, 0.1], vec![-0.4, 0.5], vec![0.2, 0.2]];
    for seed in 20..30u64 {
        let mut p = init_glorot(&cfg, seed).unwrap();
        let (_, cache) = p.forward(&xs, Mode::Train, seed).unwrap();
        let grad = p.backward(&cache, 0.8).unwrap().to_flat();
        let base = p.to_flat();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut loss = |d: f64| {
                let mut f = base.clone();
                f[i] += d;
                p.set_flat(&f).unwrap();
                (p.forward(&xs, Mode::Train, seed).unwrap().0 - 0.8).powi(2)
            };
            let num = (loss(h) - loss(-h)) / (2.0 * h);
            let rel = (grad[i] - num).abs() / grad[i].abs().max(num.abs()).max(1e-6);
            assert!(rel <= 1e-4, "seed {seed} param {i}: {} vs {num}", grad[i]);
        }
    }
}
