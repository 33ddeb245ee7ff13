//! Word-level language model: embedding, stacked multi-cell LSTM layers and a
//! softmax projection, with dropout on every non-recurrent connection.
//!
//! Per timestep the data flows
//! `embed -> drop -> layer 1 -> drop -> ... -> layer L -> drop -> affine -> softmax`.
//! Recurrent `h` and cell paths are never dropped. Dropout is inverted (kept
//! units are scaled by `1 / (1 - p)`), so evaluation uses the weights as-is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{self, CellInit, LayerParams, LayerState, StepCache};
use crate::numerics::{gemm, softmax_into, Matrix, SeededRng, Trans, PROB_FLOOR};
use crate::selection::{SelectionStrategy, StrategyKind, DEFAULT_GATE_THRESHOLD};

/// Architecture and initialization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Memory cells per node (`m`).
    pub cells: usize,
    pub strategy: StrategyKind,
    /// Output-gate threshold for min-max pooling.
    pub gate_threshold: f64,
    pub dropout: f64,
    pub init_scale: f64,
    pub cell_init: CellInit,
    pub seed: u64,
}

impl ModelConfig {
    /// Two-layer model with embedding size equal to the hidden size.
    pub fn new(vocab_size: usize, hidden_dim: usize, cells: usize, strategy: StrategyKind) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: hidden_dim,
            hidden_dim,
            num_layers: 2,
            cells,
            strategy,
            gate_threshold: DEFAULT_GATE_THRESHOLD,
            dropout: 0.0,
            init_scale: 0.1,
            cell_init: CellInit::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("cells", self.cells),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "init_scale must be a non-negative number, got {}",
                self.init_scale
            )));
        }
        if let CellInit::Jitter { scale } = self.cell_init {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "cell jitter must be a non-negative number, got {scale}"
                )));
            }
        }
        self.selection()?;
        Ok(())
    }

    pub fn selection(&self) -> Result<SelectionStrategy> {
        SelectionStrategy::new(self.strategy, self.cells, self.gate_threshold)
    }
}

/// All trainable tensors. Also used to hold gradients of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `[vocab x embed_dim]`
    pub embedding: Matrix,
    pub layers: Vec<LayerParams>,
    /// `[vocab x hidden_dim]`
    pub out_weight: Matrix,
    /// `[vocab]`
    pub out_bias: Vec<f64>,
}

impl ModelParams {
    /// All-zero parameters shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Result<ModelParams> {
        config.validate()?;
        let c = config;
        let cell_weights = config.selection()?.needs_cell_weights();
        let layers = (0..c.num_layers)
            .map(|l| {
                let in_dim = if l == 0 { c.embed_dim } else { c.hidden_dim };
                LayerParams {
                    w_input: Matrix::zeros(4 * c.hidden_dim, in_dim),
                    w_recurrent: Matrix::zeros(4 * c.hidden_dim, c.hidden_dim),
                    bias: vec![0.0; 4 * c.hidden_dim],
                    cell_weights: cell_weights.then(|| Matrix::zeros(c.hidden_dim, c.cells)),
                }
            })
            .collect();
        Ok(ModelParams {
            embedding: Matrix::zeros(c.vocab_size, c.embed_dim),
            layers,
            out_weight: Matrix::zeros(c.vocab_size, c.hidden_dim),
            out_bias: vec![0.0; c.vocab_size],
        })
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            embedding: Matrix::zeros(self.embedding.rows(), self.embedding.cols()),
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
            out_weight: Matrix::zeros(self.out_weight.rows(), self.out_weight.cols()),
            out_bias: vec![0.0; self.out_bias.len()],
        }
    }

    /// Tensors in their fixed order: embedding, then per layer the input
    /// matrix, recurrent matrix, bias and (if present) cell weights, then the
    /// output weight and output bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embedding.as_slice()];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.push(self.out_weight.as_slice());
        out.push(self.out_bias.as_slice());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embedding.as_mut_slice()];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.push(self.out_weight.as_mut_slice());
        out.push(self.out_bias.as_mut_slice());
        out
    }

    /// Names matching [`ModelParams::tensors`] one-to-one.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["embedding".to_string()];
        for (i, l) in self.layers.iter().enumerate() {
            out.push(format!("layer{i}.w_input"));
            out.push(format!("layer{i}.w_recurrent"));
            out.push(format!("layer{i}.bias"));
            if l.cell_weights.is_some() {
                out.push(format!("layer{i}.cell_weights"));
            }
        }
        out.push("output.weight".into());
        out.push("output.bias".into());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Recurrent state of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub layers: Vec<LayerState>,
}

impl ModelState {
    pub fn batch(&self) -> usize {
        self.layers.first().map_or(0, LayerState::batch)
    }
}

/// Next window's starting state: the values of `state`, with no link to the
/// window that produced them.
pub fn carry_state(state: &ModelState) -> ModelState {
    state.clone()
}

/// Inverted-dropout mask: each entry is `0` with probability `p`, else `1/(1-p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut SeededRng) -> Matrix {
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let data = (0..rows * cols)
        .map(|_| {
            if rng.uniform(0.0, 1.0) < keep {
                scale
            } else {
                0.0
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("mask shape")
}

fn apply_mask(x: &mut Matrix, mask: &Matrix) {
    for (v, m) in x.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        *v *= m;
    }
}

/// Cached quantities of one timestep.
#[derive(Clone, Debug)]
pub struct TimeStep {
    pub inputs: Vec<usize>,
    pub layers: Vec<StepCache>,
    /// Dropout masks on the embedding output and after each layer
    /// (`num_layers + 1` entries, `None` when dropout is inactive).
    pub masks: Vec<Option<Matrix>>,
    /// Input to the output projection, after dropout.
    pub top: Matrix,
    /// Softmax output `[batch x vocab]`.
    pub probs: Matrix,
}

/// Forward record of an unrolled window.
#[derive(Clone, Debug)]
pub struct WindowCache {
    pub steps: Vec<TimeStep>,
}

impl WindowCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn probs(&self) -> impl Iterator<Item = &Matrix> {
        self.steps.iter().map(|s| &s.probs)
    }

    /// True if both windows took every selection decision identically.
    pub fn same_selections(&self, other: &WindowCache) -> bool {
        self.steps.len() == other.steps.len()
            && self.steps.iter().zip(&other.steps).all(|(a, b)| {
                a.layers
                    .iter()
                    .zip(&b.layers)
                    .all(|(x, y)| x.record == y.record)
            })
    }
}

/// A configured model: hyper-parameters, resolved strategy and weights.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub strategy: SelectionStrategy,
    pub params: ModelParams,
}

/// Draws fresh parameters (uniform in `±init_scale`, zero biases, unit cell
/// weights) and a zero-`h` state for `batch` streams.
pub fn init_model(
    config: &ModelConfig,
    batch: usize,
    rng: &mut SeededRng,
) -> Result<(Model, ModelState)> {
    let model = Model::new(config.clone(), rng)?;
    let state = model.init_state(batch, rng);
    Ok((model, state))
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Model> {
        config.validate()?;
        let strategy = config.selection()?;
        let s = config.init_scale;
        let mut draw = |rows: usize, cols: usize| {
            Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols)
                    .map(|_| s * rng.uniform(-1.0, 1.0))
                    .collect(),
            )
        };
        let embedding = draw(config.vocab_size, config.embed_dim)?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let in_dim = if l == 0 {
                config.embed_dim
            } else {
                config.hidden_dim
            };
            layers.push(layer::init_params(
                in_dim,
                config.hidden_dim,
                config.cells,
                s,
                strategy.needs_cell_weights(),
                rng,
            )?);
        }
        let out_weight = Matrix::from_vec(
            config.vocab_size,
            config.hidden_dim,
            (0..config.vocab_size * config.hidden_dim)
                .map(|_| s * rng.uniform(-1.0, 1.0))
                .collect(),
        )?;
        let params = ModelParams {
            embedding,
            layers,
            out_weight,
            out_bias: vec![0.0; config.vocab_size],
        };
        Ok(Model {
            config,
            strategy,
            params,
        })
    }

    /// Wraps existing parameters, checking their shapes against `config`.
    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Model> {
        config.validate()?;
        let strategy = config.selection()?;
        let c = &config;
        let mut ok = params.embedding.shape() == (c.vocab_size, c.embed_dim)
            && params.layers.len() == c.num_layers
            && params.out_weight.shape() == (c.vocab_size, c.hidden_dim)
            && params.out_bias.len() == c.vocab_size;
        for (l, lp) in params.layers.iter().enumerate() {
            let in_dim = if l == 0 { c.embed_dim } else { c.hidden_dim };
            ok &= lp.w_input.shape() == (4 * c.hidden_dim, in_dim)
                && lp.w_recurrent.shape() == (4 * c.hidden_dim, c.hidden_dim)
                && lp.bias.len() == 4 * c.hidden_dim
                && lp.cell_weights.as_ref().map(Matrix::shape)
                    == strategy
                        .needs_cell_weights()
                        .then_some((c.hidden_dim, c.cells));
        }
        if !ok {
            return Err(Error::shape(
                "Model::from_parts",
                "parameters do not match config",
            ));
        }
        Ok(Model {
            config,
            strategy,
            params,
        })
    }

    /// Fresh recurrent state: `h = 0`, cells per the configured init mode.
    pub fn init_state(&self, batch: usize, rng: &mut SeededRng) -> ModelState {
        self.init_state_with(batch, self.config.cell_init, rng)
    }

    pub fn init_state_with(&self, batch: usize, mode: CellInit, rng: &mut SeededRng) -> ModelState {
        let c = &self.config;
        ModelState {
            layers: (0..c.num_layers)
                .map(|_| layer::init_state(batch, c.hidden_dim, c.cells, mode, rng))
                .collect(),
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            Some(&t) => Err(Error::TokenOutOfRange {
                token: t,
                vocab: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Advances all layers by one token per stream and returns the step's
    /// cache (which holds the output distribution).
    pub fn step(
        &self,
        state: &mut ModelState,
        inputs: &[usize],
        train: bool,
        rng: &mut SeededRng,
    ) -> Result<TimeStep> {
        let batch = state.batch();
        if inputs.len() != batch {
            return Err(Error::shape(
                "Model::step",
                format!("{} inputs for {batch} streams", inputs.len()),
            ));
        }
        self.check_tokens(inputs)?;
        let c = &self.config;
        let drop = train && c.dropout > 0.0;

        let mut x = Matrix::zeros(batch, c.embed_dim);
        for (b, &tok) in inputs.iter().enumerate() {
            x.row_mut(b).copy_from_slice(self.params.embedding.row(tok));
        }
        let mut masks = Vec::with_capacity(c.num_layers + 1);
        let mut drop_into = |x: &mut Matrix, rng: &mut SeededRng| {
            if drop {
                let m = dropout_mask(x.rows(), x.cols(), c.dropout, rng);
                apply_mask(x, &m);
                masks.push(Some(m));
            } else {
                masks.push(None);
            }
        };
        drop_into(&mut x, rng);

        let mut caches = Vec::with_capacity(c.num_layers);
        for (lp, ls) in self.params.layers.iter().zip(state.layers.iter_mut()) {
            let (next, cache) = layer::step_forward(lp, ls, &x, &self.strategy, rng)?;
            x = next.h.clone();
            *ls = next;
            caches.push(cache);
            drop_into(&mut x, rng);
        }

        let mut probs = Matrix::zeros(batch, c.vocab_size);
        gemm(
            1.0,
            &x,
            Trans::No,
            &self.params.out_weight,
            Trans::Yes,
            0.0,
            &mut probs,
        )?;
        let mut logits = vec![0.0; c.vocab_size];
        for b in 0..batch {
            let row = probs.row_mut(b);
            for ((l, v), bias) in logits.iter_mut().zip(row.iter()).zip(&self.params.out_bias) {
                *l = v + bias;
            }
            softmax_into(&logits, row);
        }

        Ok(TimeStep {
            inputs: inputs.to_vec(),
            layers: caches,
            masks,
            top: x,
            probs,
        })
    }

    /// Runs an unrolled window (`inputs[t][b]`) from `state`, which is left
    /// holding the final step's state.
    pub fn forward_window(
        &self,
        state: &mut ModelState,
        inputs: &[Vec<usize>],
        train: bool,
        rng: &mut SeededRng,
    ) -> Result<WindowCache> {
        let steps = inputs
            .iter()
            .map(|tokens| self.step(state, tokens, train, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(WindowCache { steps })
    }

    /// Gradient of [`loss_window`] with respect to every parameter. The
    /// window's starting state is treated as a constant.
    pub fn backward_window(
        &self,
        cache: &WindowCache,
        targets: &[Vec<usize>],
    ) -> Result<ModelParams> {
        if cache.steps.len() != targets.len() {
            return Err(Error::shape(
                "backward_window",
                format!(
                    "{} cached steps, {} target rows",
                    cache.steps.len(),
                    targets.len()
                ),
            ));
        }
        let c = &self.config;
        let p = &self.params;
        let mut grads = p.zeros_like();
        let Some(first) = cache.steps.first() else {
            return Ok(grads);
        };
        let batch = first.probs.rows();
        let count = (cache.steps.len() * batch) as f64;
        let n = c.hidden_dim;

        let mut carry_h: Vec<Matrix> = (0..c.num_layers).map(|_| Matrix::zeros(batch, n)).collect();
        let mut carry_c: Vec<Option<Matrix>> = vec![None; c.num_layers];

        for (step, tgt) in cache.steps.iter().zip(targets).rev() {
            if tgt.len() != batch {
                return Err(Error::shape(
                    "backward_window",
                    format!("{} targets for {batch} streams", tgt.len()),
                ));
            }
            self.check_tokens(tgt)?;

            // d(mean nll)/d(logits) = (p - onehot) / count, with the floor
            // term of the cross-entropy folded in exactly.
            let mut dlogits = step.probs.clone();
            for (b, &t) in tgt.iter().enumerate() {
                let pt = step.probs[(b, t)];
                let w = pt / (pt + PROB_FLOOR);
                let row = dlogits.row_mut(b);
                row.iter_mut().for_each(|v| *v *= w);
                row[t] -= w;
                row.iter_mut().for_each(|v| *v /= count);
            }
            gemm(
                1.0,
                &dlogits,
                Trans::Yes,
                &step.top,
                Trans::No,
                1.0,
                &mut grads.out_weight,
            )?;
            for b in 0..batch {
                for (g, d) in grads.out_bias.iter_mut().zip(dlogits.row(b)) {
                    *g += d;
                }
            }
            let mut dx = Matrix::zeros(batch, n);
            gemm(
                1.0,
                &dlogits,
                Trans::No,
                &p.out_weight,
                Trans::No,
                0.0,
                &mut dx,
            )?;

            for l in (0..c.num_layers).rev() {
                if let Some(mask) = &step.masks[l + 1] {
                    apply_mask(&mut dx, mask);
                }
                dx.add_scaled(1.0, &carry_h[l])?;
                let out = layer::step_backward(
                    &p.layers[l],
                    &step.layers[l],
                    &dx,
                    carry_c[l].as_ref(),
                    &self.strategy,
                    &mut grads.layers[l],
                )?;
                carry_h[l] = out.h_prev;
                carry_c[l] = Some(out.cells_prev);
                dx = out.x;
            }
            if let Some(mask) = &step.masks[0] {
                apply_mask(&mut dx, mask);
            }
            for (b, &tok) in step.inputs.iter().enumerate() {
                let row = grads.embedding.row_mut(tok);
                for (g, d) in row.iter_mut().zip(dx.row(b)) {
                    *g += d;
                }
            }
        }
        Ok(grads)
    }

    /// Token continuation of `prompt`. Temperature 0 decodes greedily;
    /// otherwise tokens are sampled from `softmax(logits / temperature)`.
    pub fn generate(
        &self,
        prompt: &[usize],
        length: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<usize>> {
        if self.config.vocab_size == 0 {
            return Err(Error::Empty("vocabulary"));
        }
        if prompt.is_empty() {
            return Err(Error::Empty("generation prompt"));
        }
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be >= 0, got {temperature}"
            )));
        }
        self.check_tokens(prompt)?;
        let mut rng = SeededRng::new(seed);
        let mut state = self.init_state(1, &mut rng);
        let mut out = Vec::with_capacity(length);
        if length == 0 {
            return Ok(out);
        }
        let mut last = None;
        for &tok in prompt {
            last = Some(self.step(&mut state, &[tok], false, &mut rng)?);
        }
        let mut step = last.expect("non-empty prompt");
        loop {
            let probs = step.probs.row(0);
            let next = if temperature == 0.0 {
                let mut best = 0;
                for (i, &p) in probs.iter().enumerate() {
                    if p > probs[best] {
                        best = i;
                    }
                }
                best
            } else {
                sample_tempered(probs, temperature, &mut rng)
            };
            out.push(next);
            if out.len() == length {
                return Ok(out);
            }
            step = self.step(&mut state, &[next], false, &mut rng)?;
        }
    }
}

/// Samples from `p^(1/T)` renormalized, which equals `softmax(logits / T)`.
fn sample_tempered(probs: &[f64], temperature: f64, rng: &mut SeededRng) -> usize {
    let logs: Vec<f64> = probs.iter().map(|p| p.ln() / temperature).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform(0.0, total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Mean negative log-likelihood of `targets` under the window's outputs.
pub fn loss_window<'a>(
    probs: impl IntoIterator<Item = &'a Matrix>,
    targets: &[Vec<usize>],
) -> Result<f64> {
    let (sum, count) = nll_sum(probs, targets)?;
    if count == 0 {
        return Err(Error::Empty("loss window"));
    }
    Ok(sum / count as f64)
}

/// Summed negative log-likelihood and the number of predicted tokens.
pub fn nll_sum<'a>(
    probs: impl IntoIterator<Item = &'a Matrix>,
    targets: &[Vec<usize>],
) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut count = 0;
    let mut probs = probs.into_iter();
    for tgt in targets {
        let p = probs
            .next()
            .ok_or_else(|| Error::shape("loss_window", "fewer probability rows than targets"))?;
        if p.rows() != tgt.len() {
            return Err(Error::shape(
                "loss_window",
                format!("{} probability rows for {} targets", p.rows(), tgt.len()),
            ));
        }
        for (b, &t) in tgt.iter().enumerate() {
            sum += crate::numerics::cross_entropy(p.row(b), t)?;
            count += 1;
        }
    }
    if probs.next().is_some() {
        return Err(Error::shape(
            "loss_window",
            "more probability rows than targets",
        ));
    }
    Ok((sum, count))
}
