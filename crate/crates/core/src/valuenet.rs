//! The deep value network: a stacked LSTM over `(document, query)` inputs
//! followed by a dense ReLU head that produces one scalar.
//!
//! Per layer `j` and step `k` the cell computes
//!
//! ```text
//! f = σ(W_f h^{j-1}_k + U_f h^j_{k-1} + b_f)
//! i = σ(W_i h^{j-1}_k + U_i h^j_{k-1} + b_i)
//! o = σ(W_o h^{j-1}_k + U_o h^j_{k-1} + b_o)
//! c^j_k = f ∘ c^j_{k-1} + i ∘ tanh(W_c h^{j-1}_k + U_c h^j_{k-1} + b_c)
//! h^j_k = o ∘ tanh(c^j_k)
//! ```
//!
//! with `h^0_k = x_k`. The four gate matrices of a layer are stored stacked
//! row-wise in the order `f, i, o, c`. The top hidden state at the last step
//! feeds the head. Only the most recent `window` inputs are ever seen.
//!
//! Gradients are hand-derived (reverse mode through the head and through
//! time); there is no general autodiff here.

use std::io::Read;

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Dense head widths used at full scale.
pub const FULL_HEAD_WIDTHS: [usize; 5] = [1024, 512, 256, 16, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub head_widths: Vec<usize>,
    pub window: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub output: OutputActivation,
    /// Constant factor applied to every input component before layer 1.
    #[serde(default = "unit_scale")]
    pub input_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl NetConfig {
    /// Full-size network for `embedding_dim`-wide vectors: the LSTM sees
    /// `[d, q]` pairs and every layer is as wide as the pair.
    pub fn full(embedding_dim: usize) -> Self {
        Self {
            layers: 3,
            input_dim: 2 * embedding_dim,
            hidden_dim: 2 * embedding_dim,
            head_widths: FULL_HEAD_WIDTHS.to_vec(),
            window: 5,
            dropout: 0.5,
            learning_rate: 0.01,
            output: OutputActivation::Linear,
            input_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.input_dim == 0 || self.hidden_dim == 0 || self.window == 0 {
            return Err(Error::Config(
                "layers, input_dim, hidden_dim and window must be positive".into(),
            ));
        }
        if self.head_widths.contains(&0) {
            return Err(Error::Config("head widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.input_scale > 0.0) || !self.input_scale.is_finite() {
            return Err(Error::Config("input_scale must be positive".into()));
        }
        Ok(())
    }

    fn layer_input(&self, j: usize) -> usize {
        if j == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    /// Closed-form number of scalars in [`ValueNetParams`], initial states included.
    pub fn param_count(&self) -> usize {
        let h = self.hidden_dim;
        let lstm: usize = (0..self.layers)
            .map(|j| 4 * h * (self.layer_input(j) + h) + 4 * h + 2 * h)
            .sum();
        let mut prev = h;
        let mut head = 0;
        for &w in self.head_widths.iter().chain(std::iter::once(&1)) {
            head += prev * w + w;
            prev = w;
        }
        lstm + head
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    /// `4H × in`, gate blocks `f, i, o, c`.
    pub w: Array2<f64>,
    /// `4H × H`.
    pub u: Array2<f64>,
    pub b: Array1<f64>,
    pub c0: Array1<f64>,
    pub h0: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Weights of the whole network. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub lstm: Vec<LstmLayer>,
    /// Hidden ReLU layers followed by the scalar output layer.
    pub head: Vec<DenseLayer>,
}

impl Weights {
    fn zeros(cfg: &NetConfig) -> Self {
        let h = cfg.hidden_dim;
        let lstm = (0..cfg.layers)
            .map(|j| LstmLayer {
                w: Array2::zeros((4 * h, cfg.layer_input(j))),
                u: Array2::zeros((4 * h, h)),
                b: Array1::zeros(4 * h),
                c0: Array1::zeros(h),
                h0: Array1::zeros(h),
            })
            .collect();
        let mut prev = h;
        let mut head = Vec::new();
        for &w in cfg.head_widths.iter().chain(std::iter::once(&1)) {
            head.push(DenseLayer {
                w: Array2::zeros((w, prev)),
                b: Array1::zeros(w),
            });
            prev = w;
        }
        Self { lstm, head }
    }

    fn tensors(&self) -> Vec<ndarray::ArrayViewD<'_, f64>> {
        let mut out = Vec::new();
        for l in &self.lstm {
            out.push(l.w.view().into_dyn());
            out.push(l.u.view().into_dyn());
            out.push(l.b.view().into_dyn());
            out.push(l.c0.view().into_dyn());
            out.push(l.h0.view().into_dyn());
        }
        for d in &self.head {
            out.push(d.w.view().into_dyn());
            out.push(d.b.view().into_dyn());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<ndarray::ArrayViewMutD<'_, f64>> {
        let mut out = Vec::new();
        for l in &mut self.lstm {
            out.push(l.w.view_mut().into_dyn());
            out.push(l.u.view_mut().into_dyn());
            out.push(l.b.view_mut().into_dyn());
            out.push(l.c0.view_mut().into_dyn());
            out.push(l.h0.view_mut().into_dyn());
        }
        for d in &mut self.head {
            out.push(d.w.view_mut().into_dyn());
            out.push(d.b.view_mut().into_dyn());
        }
        out
    }

    /// Every scalar in a fixed order (layer by layer, `w, u, b, c0, h0`, then head `w, b`).
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n: usize = self.tensors().iter().map(|t| t.len()).sum();
        check_dim(n, flat.len())?;
        let mut it = flat.iter();
        for mut t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = *it.next().unwrap());
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter().map(|x| x.abs()))
            .fold(0.0, f64::max)
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|t| t.shape().to_vec()).collect()
    }
}

/// Value network parameters together with the configuration they were built for.
#[derive(Clone, Debug)]
pub struct ValueNetParams {
    config: NetConfig,
    weights: Weights,
    /// Bumped by every update so stale forward caches can be detected.
    generation: u64,
}

impl PartialEq for ValueNetParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.weights == other.weights
    }
}

pub type Gradients = Weights;

fn glorot_fill<'a>(rng: &mut ChaCha8Rng, view: impl Iterator<Item = &'a mut f64>, fan_in: usize, fan_out: usize) {
    let bound = glorot_bound(fan_in, fan_out);
    for x in view {
        *x = rng.random_range(-bound..bound);
    }
}

/// `sqrt(6 / (fan_in + fan_out))`. Vectors of length `n` use `fan_in = fan_out = n`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform initialization of every weight, bias and initial state.
pub fn init_glorot(config: &NetConfig, seed: u64) -> Result<ValueNetParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Weights::zeros(config);
    let h = config.hidden_dim;
    for (j, l) in w.lstm.iter_mut().enumerate() {
        let inp = config.layer_input(j);
        for g in 0..4 {
            glorot_fill(&mut rng, l.w.slice_mut(s![g * h..(g + 1) * h, ..]).iter_mut(), inp, h);
        }
        for g in 0..4 {
            glorot_fill(&mut rng, l.u.slice_mut(s![g * h..(g + 1) * h, ..]).iter_mut(), h, h);
        }
        for g in 0..4 {
            glorot_fill(&mut rng, l.b.slice_mut(s![g * h..(g + 1) * h]).iter_mut(), h, h);
        }
        glorot_fill(&mut rng, l.c0.iter_mut(), h, h);
        glorot_fill(&mut rng, l.h0.iter_mut(), h, h);
    }
    for d in w.head.iter_mut() {
        let (out, inp) = d.w.dim();
        glorot_fill(&mut rng, d.w.iter_mut(), inp, out);
        glorot_fill(&mut rng, d.b.iter_mut(), out, out);
    }
    Ok(ValueNetParams {
        config: config.clone(),
        weights: w,
        generation: 0,
    })
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `tanh` through one `exp`; within an ulp or two of `f64::tanh` and about
/// twice as fast, which matters because gate activations dominate scoring.
#[inline]
fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// Intermediates of one LSTM layer at one step.
#[derive(Clone, Debug)]
struct StepCache {
    f: Array1<f64>,
    i: Array1<f64>,
    o: Array1<f64>,
    g: Array1<f64>,
    c: Array1<f64>,
    tanh_c: Array1<f64>,
    h: Array1<f64>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    generation: u64,
    shapes: Vec<Vec<usize>>,
    mode: Mode,
    inputs: Vec<Array1<f64>>,
    /// `[layer][step]`.
    steps: Vec<Vec<StepCache>>,
    /// Inputs to each head layer (`head_inputs[0]` is the top hidden state).
    head_inputs: Vec<Array1<f64>>,
    /// Pre-activations of the hidden head layers.
    head_pre: Vec<Array1<f64>>,
    /// Inverted-dropout multipliers (0 or 1/(1-p); all 1 in eval mode).
    masks: Vec<Array1<f64>>,
    value: f64,
}

impl ForwardCache {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of unrolled steps after window truncation.
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// The (truncated) inputs the LSTM actually consumed.
    pub fn inputs(&self) -> &[Array1<f64>] {
        &self.inputs
    }

    /// Gate activations `(f, i, o)` and `h` of layer `j` at step `k`.
    pub fn gates(&self, j: usize, k: usize) -> (ArrayView1<'_, f64>, ArrayView1<'_, f64>, ArrayView1<'_, f64>, ArrayView1<'_, f64>) {
        let st = &self.steps[j][k];
        (st.f.view(), st.i.view(), st.o.view(), st.h.view())
    }
}

impl ValueNetParams {
    /// All-zero parameters.
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            weights: Weights::zeros(config),
            generation: 0,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    /// Overwrites every scalar from a flat vector (see [`Weights::to_flat`]).
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.weights.set_flat(flat)?;
        self.generation += 1;
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.weights.to_flat()
    }

    pub fn param_count(&self) -> usize {
        self.weights.tensors().iter().map(|t| t.len()).sum()
    }

    /// Used by the training loop to toggle dropout or the learning rate.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    fn check_inputs<'a, X: AsRef<[f64]>>(&self, inputs: &'a [X]) -> Result<&'a [X]> {
        if inputs.is_empty() {
            return Err(Error::invalid("value network needs at least one input"));
        }
        let w = self.config.window;
        let inputs = &inputs[inputs.len().saturating_sub(w)..];
        for x in inputs {
            check_dim(self.config.input_dim, x.as_ref().len())?;
        }
        Ok(inputs)
    }

    /// Runs the LSTM over the last `window` inputs and the head on the final
    /// top hidden state. Dropout masks are drawn from `seed` in train mode.
    pub fn forward<X: AsRef<[f64]>>(&self, inputs: &[X], mode: Mode, seed: u64) -> Result<(f64, ForwardCache)> {
        let inputs = self.check_inputs(inputs)?;
        let h = self.config.hidden_dim;
        let scale = self.config.input_scale;
        let xs: Vec<Array1<f64>> = inputs.iter().map(|x| Array1::from(x.as_ref().to_vec()) * scale).collect();

        let mut steps: Vec<Vec<StepCache>> = Vec::with_capacity(self.config.layers);
        for (j, layer) in self.weights.lstm.iter().enumerate() {
            let mut h_prev = layer.h0.clone();
            let mut c_prev = layer.c0.clone();
            let mut layer_steps = Vec::with_capacity(xs.len());
            for k in 0..xs.len() {
                let x = if j == 0 { xs[k].view() } else { steps[j - 1][k].h.view() };
                let z = layer.w.dot(&x) + layer.u.dot(&h_prev) + &layer.b;
                let f = z.slice(s![0..h]).mapv(sigmoid);
                let i = z.slice(s![h..2 * h]).mapv(sigmoid);
                let o = z.slice(s![2 * h..3 * h]).mapv(sigmoid);
                let g = z.slice(s![3 * h..4 * h]).mapv(tanh);
                let c = &f * &c_prev + &i * &g;
                let tanh_c = c.mapv(tanh);
                let hn = &o * &tanh_c;
                h_prev = hn.clone();
                c_prev = c.clone();
                layer_steps.push(StepCache { f, i, o, g, c, tanh_c, h: hn });
            }
            steps.push(layer_steps);
        }

        let top = steps.last().unwrap().last().unwrap().h.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 - self.config.dropout;
        let n_hidden = self.weights.head.len() - 1;
        let mut head_inputs = vec![top];
        let mut head_pre = Vec::with_capacity(n_hidden);
        let mut masks = Vec::with_capacity(n_hidden);
        for d in &self.weights.head[..n_hidden] {
            let z = d.w.dot(head_inputs.last().unwrap()) + &d.b;
            let mask = match mode {
                Mode::Eval => Array1::ones(z.len()),
                Mode::Train if self.config.dropout == 0.0 => Array1::ones(z.len()),
                Mode::Train => Array1::from_shape_fn(z.len(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                }),
            };
            let a = z.mapv(|v| v.max(0.0)) * &mask;
            head_pre.push(z);
            masks.push(mask);
            head_inputs.push(a);
        }
        let out = &self.weights.head[n_hidden];
        let z = out.w.row(0).dot(head_inputs.last().unwrap()) + out.b[0];
        let value = match self.config.output {
            OutputActivation::Linear => z,
            OutputActivation::Sigmoid => sigmoid(z),
        };
        Ok((
            value,
            ForwardCache {
                generation: self.generation,
                shapes: self.weights.shapes(),
                mode,
                inputs: xs,
                steps,
                head_inputs,
                head_pre,
                masks,
                value,
            },
        ))
    }

    /// Eval-mode value of `inputs`.
    pub fn value<X: AsRef<[f64]>>(&self, inputs: &[X]) -> Result<f64> {
        Ok(self.forward(inputs, Mode::Eval, 0)?.0)
    }

    /// Gradient of `(V - target)^2` with respect to every parameter, using
    /// the dropout masks recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, target: f64) -> Result<Gradients> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache(format!(
                "cache from generation {}, params at {}",
                cache.generation, self.generation
            )));
        }
        if cache.shapes != self.weights.shapes() {
            return Err(Error::StaleCache("parameter shapes differ from the cached forward".into()));
        }
        if !target.is_finite() {
            return Err(Error::invalid("target must be finite"));
        }
        let cfg = &self.config;
        let h = cfg.hidden_dim;
        let mut grad = Weights::zeros(cfg);

        // d loss / d output pre-activation
        let dv = 2.0 * (cache.value - target);
        let dz_out = match cfg.output {
            OutputActivation::Linear => dv,
            OutputActivation::Sigmoid => dv * cache.value * (1.0 - cache.value),
        };
        let n_hidden = self.weights.head.len() - 1;
        let last_in = &cache.head_inputs[n_hidden];
        {
            let g = &mut grad.head[n_hidden];
            g.w.row_mut(0).assign(&(last_in * dz_out));
            g.b[0] = dz_out;
        }
        let mut da: Array1<f64> = self.weights.head[n_hidden].w.row(0).mapv(|w| w * dz_out);
        for l in (0..n_hidden).rev() {
            let dz = &da * &cache.masks[l] * &cache.head_pre[l].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
            outer_add(&mut grad.head[l].w, &dz, &cache.head_inputs[l]);
            grad.head[l].b.assign(&dz);
            da = self.weights.head[l].w.t().dot(&dz);
        }

        // Backprop through time, top layer first.
        let steps = cache.inputs.len();
        let mut dh_from_above: Vec<Array1<f64>> = vec![Array1::zeros(h); steps];
        dh_from_above[steps - 1] = da;
        for j in (0..cfg.layers).rev() {
            let layer = &self.weights.lstm[j];
            let lc = &cache.steps[j];
            let mut dh_next = Array1::<f64>::zeros(h);
            let mut dc_next = Array1::<f64>::zeros(h);
            let mut dx_below: Vec<Array1<f64>> = vec![Array1::zeros(0); steps];
            let mut dz = Array1::<f64>::zeros(4 * h);
            for k in (0..steps).rev() {
                let st = &lc[k];
                let c_prev = if k == 0 { &layer.c0 } else { &lc[k - 1].c };
                let h_prev = if k == 0 { &layer.h0 } else { &lc[k - 1].h };
                let dh = &dh_from_above[k] + &dh_next;
                let dc = &dc_next + &(&dh * &st.o * &st.tanh_c.mapv(|t| 1.0 - t * t));
                for u in 0..h {
                    let (f, i, o, g) = (st.f[u], st.i[u], st.o[u], st.g[u]);
                    dz[u] = dc[u] * c_prev[u] * f * (1.0 - f);
                    dz[h + u] = dc[u] * g * i * (1.0 - i);
                    dz[2 * h + u] = dh[u] * st.tanh_c[u] * o * (1.0 - o);
                    dz[3 * h + u] = dc[u] * i * (1.0 - g * g);
                }
                let x = if j == 0 { &cache.inputs[k] } else { &cache.steps[j - 1][k].h };
                let gl = &mut grad.lstm[j];
                outer_add(&mut gl.w, &dz, x);
                outer_add(&mut gl.u, &dz, h_prev);
                gl.b += &dz;
                dh_next = layer.u.t().dot(&dz);
                dc_next = &dc * &st.f;
                if j > 0 {
                    dx_below[k] = layer.w.t().dot(&dz);
                }
            }
            grad.lstm[j].h0.assign(&dh_next);
            grad.lstm[j].c0.assign(&dc_next);
            if j > 0 {
                dh_from_above = dx_below;
            }
        }
        Ok(grad)
    }

    /// Plain SGD, `θ ← θ − lr·g`. Initial states `c0`/`h0` are frozen and never updated.
    pub fn apply_update(&mut self, grad: &Gradients, lr: f64) -> Result<()> {
        if grad.shapes() != self.weights.shapes() {
            return Err(Error::invalid("gradient shapes do not match parameters"));
        }
        if !lr.is_finite() {
            return Err(Error::invalid("learning rate must be finite"));
        }
        for (p, g) in self.weights.lstm.iter_mut().zip(&grad.lstm) {
            p.w.scaled_add(-lr, &g.w);
            p.u.scaled_add(-lr, &g.u);
            p.b.scaled_add(-lr, &g.b);
        }
        for (p, g) in self.weights.head.iter_mut().zip(&grad.head) {
            p.w.scaled_add(-lr, &g.w);
            p.b.scaled_add(-lr, &g.b);
        }
        self.generation += 1;
        Ok(())
    }

    /// Eval-mode values of `prefix ++ [candidate]` for every candidate row,
    /// sharing the LSTM pass over the prefix. `prefix` longer than
    /// `window - 1` is truncated to its most recent items, so each value
    /// equals `value(prefix ++ [candidate])`.
    pub fn score_batch<X: AsRef<[f64]>>(&self, prefix: &[X], candidates: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.score_batch_shared(prefix, candidates, &[])
    }

    /// As [`score_batch`](Self::score_batch) with every candidate row
    /// followed by the same `shared` columns (the query half of a pair),
    /// whose first-layer contribution is computed once.
    pub fn score_batch_shared<X: AsRef<[f64]>>(
        &self,
        prefix: &[X],
        candidates: ArrayView2<'_, f64>,
        shared: &[f64],
    ) -> Result<Vec<f64>> {
        let cfg = &self.config;
        check_dim(cfg.input_dim, candidates.ncols() + shared.len())?;
        let own = candidates.ncols();
        let n = candidates.nrows();
        if n == 0 {
            return Ok(Vec::new());
        }
        let keep = cfg.window - 1;
        let prefix = &prefix[prefix.len().saturating_sub(keep)..];
        for x in prefix {
            check_dim(cfg.input_dim, x.as_ref().len())?;
        }
        let h = cfg.hidden_dim;

        // Per-layer (h, c) after consuming the prefix.
        let mut states: Vec<(Array1<f64>, Array1<f64>)> =
            self.weights.lstm.iter().map(|l| (l.h0.clone(), l.c0.clone())).collect();
        for x in prefix {
            let mut inp = Array1::from(x.as_ref().to_vec()) * cfg.input_scale;
            for (layer, (hs, cs)) in self.weights.lstm.iter().zip(states.iter_mut()) {
                let z = layer.w.dot(&inp) + layer.u.dot(&*hs) + &layer.b;
                let f = z.slice(s![0..h]).mapv(sigmoid);
                let i = z.slice(s![h..2 * h]).mapv(sigmoid);
                let o = z.slice(s![2 * h..3 * h]).mapv(sigmoid);
                let g = z.slice(s![3 * h..4 * h]).mapv(tanh);
                *cs = &f * &*cs + &i * &g;
                *hs = &o * &cs.mapv(tanh);
                inp = hs.clone();
            }
        }

        let mut x = candidates.to_owned() * cfg.input_scale;
        let q = Array1::from(shared.to_vec()) * cfg.input_scale;
        for (j, (layer, (hs, cs))) in self.weights.lstm.iter().zip(&states).enumerate() {
            let mut rec = layer.u.dot(hs) + &layer.b;
            let w = if j == 0 {
                rec += &layer.w.slice(s![.., own..]).dot(&q);
                layer.w.slice(s![.., ..own])
            } else {
                layer.w.view()
            };
            let mut z = Array2::<f64>::zeros((n, 4 * h));
            general_mat_mul(1.0, &x, &w.t(), 0.0, &mut z);
            z += &rec.view().insert_axis(Axis(0));
            let mut hn = Array2::<f64>::zeros((n, h));
            for (zr, mut hr) in z.outer_iter().zip(hn.outer_iter_mut()) {
                for u in 0..h {
                    let f = sigmoid(zr[u]);
                    let i = sigmoid(zr[h + u]);
                    let o = sigmoid(zr[2 * h + u]);
                    let g = tanh(zr[3 * h + u]);
                    let c = f * cs[u] + i * g;
                    hr[u] = o * tanh(c);
                }
            }
            x = hn;
        }
        let n_hidden = self.weights.head.len() - 1;
        for d in &self.weights.head[..n_hidden] {
            let mut z = Array2::<f64>::zeros((n, d.w.nrows()));
            general_mat_mul(1.0, &x, &d.w.t(), 0.0, &mut z);
            z += &d.b.view().insert_axis(Axis(0));
            z.mapv_inplace(|v| v.max(0.0));
            x = z;
        }
        let out = &self.weights.head[n_hidden];
        let zs = x.dot(&out.w.row(0)) + out.b[0];
        Ok(zs
            .iter()
            .map(|&z| match cfg.output {
                OutputActivation::Linear => z,
                OutputActivation::Sigmoid => sigmoid(z),
            })
            .collect())
    }
}

fn outer_add(m: &mut Array2<f64>, col: &Array1<f64>, row: &Array1<f64>) {
    general_mat_mul(
        1.0,
        &col.view().insert_axis(Axis(1)),
        &row.view().insert_axis(Axis(0)),
        1.0,
        m,
    );
}

pub fn init_zero_like(params: &ValueNetParams) -> Gradients {
    Weights::zeros(&params.config)
}

const MAGIC: &[u8; 8] = b"DYNRVNET";
const FORMAT_VERSION: u32 = 1;

/// Versioned little-endian checkpoint: magic, version, JSON config, then each
/// tensor as `ndim, shape..., f64 data`.
pub fn serialize(params: &ValueNetParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&params.config).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(&cfg);
    let tensors = params.weights.tensors();
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<ValueNetParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a value-network checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let cfg_len = r.u64("config length")? as usize;
    let config: NetConfig = serde_json::from_slice(r.take(cfg_len, "config")?)
        .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    config
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut weights = Weights::zeros(&config);
    let expected = weights.shapes();
    let count = r.u64("tensor count")? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            expected.len()
        )));
    }
    let mut flat = Vec::with_capacity(config.param_count());
    for (ti, shape) in expected.iter().enumerate() {
        let ndim = r.u32("tensor rank")? as usize;
        let got: Vec<usize> = (0..ndim)
            .map(|_| r.u64("tensor shape").map(|d| d as usize))
            .collect::<Result<_>>()?;
        if &got != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {ti}: shape {got:?} does not match config {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        let data = r.take(len * 8, "tensor data")?;
        for chunk in data.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Checkpoint(format!("tensor {ti}: non-finite value")));
            }
            flat.push(v);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    weights.set_flat(&flat)?;
    Ok(ValueNetParams {
        config,
        weights,
        generation: 0,
    })
}

pub fn load(path: &std::path::Path) -> Result<ValueNetParams> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?
        .read_to_end(&mut buf)?;
    deserialize(&buf)
}

pub fn save(params: &ValueNetParams, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, serialize(params))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(layers: usize) -> NetConfig {
        NetConfig {
            layers,
            input_dim: 3,
            hidden_dim: 4,
            head_widths: vec![3, 2],
            window: 5,
            dropout: 0.0,
            learning_rate: 0.01,
            output: OutputActivation::Linear,
            input_scale: 1.0,
        }
    }

    fn seq(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let cfg = NetConfig {
            head_widths: vec![6, 5],
            ..tiny(2)
        };
        let a = init_glorot(&cfg, 9).unwrap();
        let b = init_glorot(&cfg, 9).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        let h = cfg.hidden_dim;
        for (j, l) in a.weights.lstm.iter().enumerate() {
            let wb = glorot_bound(cfg.layer_input(j), h);
            assert!(l.w.iter().all(|x| x.abs() < wb));
            assert!(l.u.iter().all(|x| x.abs() < glorot_bound(h, h)));
            assert!(l.h0.iter().all(|x| x.abs() < glorot_bound(h, h)));
        }
        for d in &a.weights.head {
            let (o, i) = d.w.dim();
            assert!(d.w.iter().all(|x| x.abs() < glorot_bound(i, o)));
        }
        assert_ne!(init_glorot(&cfg, 10).unwrap().to_flat(), a.to_flat());
    }

    #[test]
    fn glorot_mean_near_zero() {
        let cfg = NetConfig {
            input_dim: 16,
            hidden_dim: 16,
            ..tiny(1)
        };
        let p = init_glorot(&cfg, 3).unwrap();
        let w = &p.weights.lstm[0].w;
        let bound = glorot_bound(16, 16);
        let sample: Vec<f64> = w.iter().take(1000).copied().collect();
        assert_eq!(sample.len(), 1000);
        let mean = sample.iter().sum::<f64>() / 1000.0;
        assert!(mean.abs() < 3.0 * bound / (3.0f64 * 1000.0).sqrt(), "mean {mean}");
    }

    #[test]
    fn zero_params_give_zero_value() {
        let p = ValueNetParams::zeros(&tiny(3)).unwrap();
        let (v, cache) = p.forward(&seq(3, 3, 1), Mode::Eval, 0).unwrap();
        assert_eq!(v, 0.0);
        for j in 0..3 {
            for k in 0..3 {
                assert!(cache.gates(j, k).3.iter().all(|&x| x == 0.0));
            }
        }
        let sig = ValueNetParams::zeros(&NetConfig {
            output: OutputActivation::Sigmoid,
            ..tiny(1)
        })
        .unwrap();
        assert_eq!(sig.value(&seq(1, 3, 1)).unwrap(), 0.5);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = init_glorot(&tiny(1), 0).unwrap();
        let empty: Vec<Vec<f64>> = vec![];
        assert!(p.forward(&empty, Mode::Eval, 0).is_err());
        assert!(matches!(
            p.forward(&[vec![1.0, 2.0]], Mode::Eval, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn window_truncation_exact() {
        let cfg = NetConfig { window: 3, ..tiny(2) };
        let p = init_glorot(&cfg, 4).unwrap();
        let xs = seq(7, 3, 2);
        assert_eq!(p.value(&xs).unwrap(), p.value(&xs[4..]).unwrap());
        assert_ne!(p.value(&xs).unwrap(), p.value(&xs[5..]).unwrap());
    }

    #[test]
    fn gradient_zero_at_target() {
        let p = init_glorot(&tiny(2), 5).unwrap();
        let (v, cache) = p.forward(&seq(3, 3, 3), Mode::Train, 1).unwrap();
        let g = p.backward(&cache, v).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut p = init_glorot(&tiny(1), 5).unwrap();
        let (_, cache) = p.forward(&seq(2, 3, 3), Mode::Train, 1).unwrap();
        let g = p.backward(&cache, 1.0).unwrap();
        p.apply_update(&g, 0.1).unwrap();
        assert!(matches!(p.backward(&cache, 1.0), Err(Error::StaleCache(_))));
        let other = init_glorot(&tiny(2), 5).unwrap();
        assert!(other.backward(&cache, 1.0).is_err());
    }

    #[test]
    fn update_edge_cases() {
        let mut p = init_glorot(&tiny(2), 5).unwrap();
        let before = p.to_flat();
        let (_, cache) = p.forward(&seq(3, 3, 3), Mode::Train, 1).unwrap();
        let g = p.backward(&cache, 10.0).unwrap();
        p.apply_update(&g, 0.0).unwrap();
        assert_eq!(p.to_flat(), before);
        p.apply_update(&init_zero_like(&p), 0.5).unwrap();
        assert_eq!(p.to_flat(), before);
        let wrong = init_zero_like(&init_glorot(&tiny(1), 0).unwrap());
        assert!(p.apply_update(&wrong, 0.1).is_err());
    }

    #[test]
    fn initial_states_frozen() {
        let cfg = NetConfig { head_widths: vec![8, 8], ..tiny(1) };
        let mut p = init_glorot(&cfg, 5).unwrap();
        let h0 = p.weights.lstm[0].h0.clone();
        let (_, cache) = p.forward(&seq(3, 3, 3), Mode::Train, 1).unwrap();
        let g = p.backward(&cache, 10.0).unwrap();
        assert!(g.lstm[0].h0.iter().any(|&x| x != 0.0));
        p.apply_update(&g, 0.1).unwrap();
        assert_eq!(p.weights.lstm[0].h0, h0);
    }

    #[test]
    fn doubling_residual_doubles_gradient() {
        let cfg = NetConfig { dropout: 0.5, ..tiny(2) };
        let p = init_glorot(&cfg, 8).unwrap();
        let (v, cache) = p.forward(&seq(3, 3, 4), Mode::Train, 77).unwrap();
        let g1 = p.backward(&cache, v - 0.3).unwrap().to_flat();
        let g2 = p.backward(&cache, v - 0.6).unwrap().to_flat();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn batch_scores_match_forward() {
        let cfg = NetConfig {
            window: 3,
            head_widths: vec![5, 3],
            ..tiny(3)
        };
        let p = init_glorot(&cfg, 11).unwrap();
        let prefix = seq(4, 3, 5);
        let cands = seq(6, 3, 6);
        let m = Array2::from_shape_vec((6, 3), cands.concat()).unwrap();
        let batch = p.score_batch(&prefix, m.view()).unwrap();
        for (c, b) in cands.iter().zip(&batch) {
            let mut full = prefix.clone();
            full.push(c.clone());
            let v = p.value(&full).unwrap();
            assert!((v - b).abs() < 1e-12, "{v} vs {b}");
        }
        let empty: Vec<Vec<f64>> = vec![];
        let lone = p.score_batch(&empty, m.view()).unwrap();
        assert!((lone[0] - p.value(&cands[..1]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let p = init_glorot(&tiny(2), 7).unwrap();
        let bytes = serialize(&p);
        let q = deserialize(&bytes).unwrap();
        assert_eq!(p.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   q.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(p, q);
        let xs = seq(3, 3, 9);
        assert_eq!(p.value(&xs).unwrap(), q.value(&xs).unwrap());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(deserialize(&bad), Err(Error::Checkpoint(_))));
        let mut ver = bytes.clone();
        ver[8] = 9;
        assert!(deserialize(&ver).unwrap_err().to_string().contains("version"));
        assert!(deserialize(&bytes[..bytes.len() - 3]).unwrap_err().to_string().contains("truncated"));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(deserialize(&extra).is_err());
    }

    #[test]
    fn param_count_closed_form() {
        for layers in 1..=4 {
            let cfg = tiny(layers);
            let p = init_glorot(&cfg, 0).unwrap();
            assert_eq!(p.param_count(), cfg.param_count());
        }
        let h = 4;
        let per_extra_layer = 4 * h * (h + h) + 4 * h + 2 * h;
        assert_eq!(tiny(3).param_count() - tiny(1).param_count(), 2 * per_extra_layer);
    }

    #[test]
    fn input_scale_equals_prescaled_inputs() {
        let mut cfg = tiny(2);
        cfg.input_scale = 3.0;
        let scaled = init_glorot(&cfg, 4).unwrap();
        let mut plain = scaled.clone();
        plain.config.input_scale = 1.0;
        let xs = seq(4, 3, 2);
        let xs3: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|v| v * 3.0).collect()).collect();
        approx::assert_abs_diff_eq!(scaled.value(&xs).unwrap(), plain.value(&xs3).unwrap(), epsilon = 1e-12);
        let cands = Array2::from_shape_vec((2, 3), xs[3].iter().chain(&xs[0]).copied().collect()).unwrap();
        let got = scaled.score_batch(&xs[..3], cands.view()).unwrap();
        approx::assert_abs_diff_eq!(got[0], scaled.value(&xs).unwrap(), epsilon = 1e-12);
        let back = deserialize(&serialize(&scaled)).unwrap();
        assert_eq!(back.config().input_scale, 3.0);
    }
}
