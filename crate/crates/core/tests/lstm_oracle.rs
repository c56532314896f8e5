//! Independent scalar re-implementation of the value network, read from the
//! flat parameter layout, compared with the library forward pass.

use dynrank::valuenet::{init_glorot, NetConfig, OutputActivation, ValueNetParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Cursor<'a> {
    flat: &'a [f64],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Vec<f64> {
        let s = self.flat[self.pos..self.pos + n].to_vec();
        self.pos += n;
        s
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn oracle_value(cfg: &NetConfig, flat: &[f64], inputs: &[Vec<f64>]) -> f64 {
    let h = cfg.hidden_dim;
    let mut cur = Cursor { flat, pos: 0 };
    let start = inputs.len().saturating_sub(cfg.window);
    let mut seq: Vec<Vec<f64>> = inputs[start..]
        .iter()
        .map(|x| x.iter().map(|v| v * cfg.input_scale).collect())
        .collect();
    for j in 0..cfg.layers {
        let n_in = if j == 0 { cfg.input_dim } else { h };
        let w = cur.take(4 * h * n_in);
        let u = cur.take(4 * h * h);
        let b = cur.take(4 * h);
        let mut c = cur.take(h);
        let mut hs = cur.take(h);
        let mut out = Vec::new();
        for x in &seq {
            let mut z = vec![0.0; 4 * h];
            for r in 0..4 * h {
                let mut acc = b[r];
                for k in 0..n_in {
                    acc += w[r * n_in + k] * x[k];
                }
                for k in 0..h {
                    acc += u[r * h + k] * hs[k];
                }
                z[r] = acc;
            }
            let mut hn = vec![0.0; h];
            for q in 0..h {
                let f = sig(z[q]);
                let i = sig(z[h + q]);
                let o = sig(z[2 * h + q]);
                let g = z[3 * h + q].tanh();
                c[q] = f * c[q] + i * g;
                hn[q] = o * c[q].tanh();
            }
            hs = hn.clone();
            out.push(hn);
        }
        seq = out;
    }
    let mut a = seq.last().unwrap().clone();
    let widths: Vec<usize> = cfg.head_widths.iter().copied().chain([1]).collect();
    for (li, &n_out) in widths.iter().enumerate() {
        let n_in = a.len();
        let w = cur.take(n_out * n_in);
        let b = cur.take(n_out);
        let mut z = vec![0.0; n_out];
        for r in 0..n_out {
            z[r] = b[r] + (0..n_in).map(|k| w[r * n_in + k] * a[k]).sum::<f64>();
        }
        a = if li + 1 < widths.len() { z.iter().map(|v| v.max(0.0)).collect() } else { z };
    }
    assert_eq!(cur.pos, flat.len(), "oracle consumed every parameter");
    match cfg.output {
        OutputActivation::Linear => a[0],
        OutputActivation::Sigmoid => sig(a[0]),
    }
}

fn config(rng: &mut ChaCha8Rng) -> NetConfig {
    NetConfig {
        layers: rng.random_range(1..=3),
        input_dim: rng.random_range(1..=5),
        hidden_dim: rng.random_range(1..=4),
        head_widths: (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=4)).collect(),
        window: rng.random_range(1..=4),
        dropout: 0.5,
        learning_rate: 0.01,
        output: if rng.random::<bool>() { OutputActivation::Linear } else { OutputActivation::Sigmoid },
        input_scale: [1.0, 2.5][rng.random_range(0..2)],
    }
}

fn random_inputs(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

#[test]
fn forward_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..40 {
        let cfg = config(&mut rng);
        let p: ValueNetParams = init_glorot(&cfg, seed).unwrap();
        let n = rng.random_range(1..=6);
        let xs = random_inputs(&mut rng, n, cfg.input_dim);
        let want = oracle_value(&cfg, &p.to_flat(), &xs);
        let got = p.value(&xs).unwrap();
        assert!((got - want).abs() < 1e-10, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn batch_scores_match_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..20 {
        let cfg = config(&mut rng);
        let p = init_glorot(&cfg, seed).unwrap();
        let len = rng.random_range(0..=5);
        let prefix = random_inputs(&mut rng, len, cfg.input_dim);
        let cands = random_inputs(&mut rng, 4, cfg.input_dim);
        let m = Array2::from_shape_vec((4, cfg.input_dim), cands.concat()).unwrap();
        let got = p.score_batch(&prefix, m.view()).unwrap();
        for (c, g) in cands.iter().zip(got) {
            let mut seq = prefix.clone();
            seq.push(c.clone());
            let want = oracle_value(&cfg, &p.to_flat(), &seq);
            assert!((g - want).abs() < 1e-10, "seed {seed}: {g} vs {want}");
        }
    }
}
