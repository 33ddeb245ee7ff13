//! SGD with global-norm clipping, validation-driven learning-rate annealing
//! and the epoch loop.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::data::{batchify, BatchedCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, perplexity_from_nll, EvalReport};
use crate::model::{carry_state, nll_sum, Model, ModelConfig, ModelParams};
use crate::numerics::{axpy, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub epochs_to_wait: usize,
    pub min_reduction: f64,
    pub min_lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub unroll: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1.0,
            lr_decay: 0.5,
            epochs_to_wait: 2,
            min_reduction: 2.0,
            min_lr: 1e-4,
            clip_norm: 5.0,
            batch_size: 20,
            unroll: 35,
            max_epochs: 39,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad(format!(
                "lr_decay must lie in (0, 1), got {}",
                self.lr_decay
            ));
        }
        if !(self.min_lr > 0.0) {
            return bad(format!("min_lr must be > 0, got {}", self.min_lr));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr must be > 0, got {}", self.initial_lr));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be > 0, got {}", self.clip_norm));
        }
        if !(self.min_reduction >= 0.0) {
            return bad(format!(
                "min_reduction must be >= 0, got {}",
                self.min_reduction
            ));
        }
        if self.batch_size == 0 || self.unroll == 0 {
            return bad("batch_size and unroll must be >= 1".into());
        }
        Ok(())
    }
}

/// Global L2 norm over every entry of every tensor.
pub fn global_norm(grads: &ModelParams) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so their global norm is at most `clip_norm`.
/// Returns the norm measured before clipping.
pub fn clip_gradients(grads: &mut ModelParams, clip_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip_norm {
        let s = clip_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// `p <- p - lr * g` for every parameter.
pub fn sgd_update(params: &mut ModelParams, grads: &ModelParams, lr: f64) {
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        axpy(-lr, g, p);
    }
}

/// Learning-rate annealing state, updated once per epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealState {
    pub learning_rate: f64,
    /// Epochs since the last sufficient improvement.
    pub given_chances: usize,
    pub previous_perplexity: f64,
}

impl AnnealState {
    pub fn new(initial_lr: f64) -> Self {
        AnnealState {
            learning_rate: initial_lr,
            given_chances: 0,
            previous_perplexity: f64::INFINITY,
        }
    }
}

/// One annealing decision. A perplexity that is not at least
/// `min_reduction` below the previous epoch's uses up a chance; once
/// `epochs_to_wait` chances are spent the rate is multiplied by `lr_decay`
/// (never below `min_lr`) and the count restarts.
pub fn anneal_learning_rate(state: AnnealState, current: f64, cfg: &TrainConfig) -> AnnealState {
    let mut next = state;
    if current > state.previous_perplexity - cfg.min_reduction {
        if state.given_chances < cfg.epochs_to_wait {
            next.given_chances += 1;
        } else {
            next.learning_rate = cfg.min_lr.max(state.learning_rate * cfg.lr_decay);
            next.given_chances = 0;
        }
    } else {
        next.given_chances = 0;
    }
    next.previous_perplexity = current;
    next
}

/// States after each entry of `perplexities`.
pub fn anneal_schedule(
    initial_lr: f64,
    perplexities: &[f64],
    cfg: &TrainConfig,
) -> Vec<AnnealState> {
    perplexities
        .iter()
        .scan(AnnealState::new(initial_lr), |st, &p| {
            *st = anneal_learning_rate(*st, p, cfg);
            Some(*st)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpochMode {
    Train,
    Eval,
}

/// One pass over `corpus` from a freshly reset state. In training mode each
/// window runs forward, backward, clipping and an SGD step at `lr`. Returns
/// the epoch perplexity (training mode measures it with dropout active).
pub fn run_epoch(
    model: &mut Model,
    corpus: &BatchedCorpus,
    cfg: &TrainConfig,
    lr: f64,
    mode: EpochMode,
    rng: &mut SeededRng,
) -> Result<f64> {
    if corpus.target_count() == 0 {
        return Err(Error::Empty("epoch corpus"));
    }
    if mode == EpochMode::Eval {
        return Ok(evaluate(model, corpus, cfg.unroll)?.perplexity);
    }
    let mut state = model.init_state(corpus.batch_size(), rng);
    let mut sum = 0.0;
    let mut count = 0;
    for window in corpus.windows(cfg.unroll)? {
        let cache = model.forward_window(&mut state, &window.inputs, true, rng)?;
        let (s, c) = nll_sum(cache.probs(), &window.targets)?;
        if !s.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss became {s} after {count} tokens"
            )));
        }
        sum += s;
        count += c;
        let mut grads = model.backward_window(&cache, &window.targets)?;
        let norm = clip_gradients(&mut grads, cfg.clip_norm);
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm is {norm}")));
        }
        sgd_update(&mut model.params, &grads, lr);
        if !model.params.is_finite() {
            return Err(Error::NonFinite(format!(
                "parameters overflowed at learning rate {lr} after {count} tokens"
            )));
        }
        state = carry_state(&state);
    }
    perplexity_from_nll(sum, count)
}

/// Token streams sharing one vocabulary.
#[derive(Clone, Debug)]
pub struct Corpora {
    pub vocabulary: Vocabulary,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Option<Vec<usize>>,
}

/// One line of the epoch log. Epoch 0 is the untrained model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub train_ppl: Option<f64>,
    pub valid_ppl: f64,
    /// Annealing counter after this epoch's decision.
    pub given_chances: usize,
}

impl EpochRow {
    pub const HEADER: &'static str = "epoch, lr, train_ppl, valid_ppl, given_chances";
}

impl fmt::Display for EpochRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let train = self
            .train_ppl
            .map_or_else(|| "-".to_string(), |p| format!("{p:.4}"));
        let lr = if (1e-4..1e4).contains(&self.lr) {
            self.lr.to_string()
        } else {
            format!("{:e}", self.lr)
        };
        write!(
            f,
            "{}, {lr}, {train}, {:.4}, {}",
            self.epoch, self.valid_ppl, self.given_chances
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainingReport {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_valid_ppl: f64,
    pub test: Option<EvalReport>,
    /// Parameters from the best validation epoch.
    pub best_model: Model,
}

/// Full training run: evaluate the untrained model, then per epoch train,
/// validate, anneal, and keep the best-validation model (written to
/// `checkpoint` when given). The test split, if any, is scored with the
/// best model.
pub fn fit(
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    corpora: &Corpora,
    checkpoint: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<TrainingReport> {
    cfg.validate()?;
    if corpora.vocabulary.len() != model_config.vocab_size {
        return Err(Error::InvalidArgument(format!(
            "vocabulary has {} tokens, model expects {}",
            corpora.vocabulary.len(),
            model_config.vocab_size
        )));
    }
    let mut model = Model::new(model_config.clone(), &mut SeededRng::new(model_config.seed))?;
    let train = batchify(&corpora.train, cfg.batch_size)?;
    let valid = batchify(&corpora.valid, cfg.batch_size)?;
    let mut rng = SeededRng::new(cfg.seed);

    let save = |model: &Model, epoch: usize, ppl: f64| -> Result<()> {
        if let Some(path) = checkpoint {
            let meta = CheckpointMeta {
                epoch,
                valid_perplexity: Some(ppl),
            };
            save_checkpoint(path, model, &corpora.vocabulary, &meta)?;
        }
        Ok(())
    };

    let initial = evaluate(&model, &valid, cfg.unroll)?.perplexity;
    let mut anneal = AnnealState::new(cfg.initial_lr);
    let row = EpochRow {
        epoch: 0,
        lr: cfg.initial_lr,
        train_ppl: None,
        valid_ppl: initial,
        given_chances: 0,
    };
    on_epoch(&row);
    let mut rows = vec![row];
    let mut best = (initial, 0, model.clone());
    save(&model, 0, initial)?;

    for epoch in 1..=cfg.max_epochs {
        let lr = anneal.learning_rate;
        let train_ppl = run_epoch(&mut model, &train, cfg, lr, EpochMode::Train, &mut rng)?;
        let valid_ppl = evaluate(&model, &valid, cfg.unroll)?.perplexity;
        anneal = anneal_learning_rate(anneal, valid_ppl, cfg);
        let row = EpochRow {
            epoch,
            lr,
            train_ppl: Some(train_ppl),
            valid_ppl,
            given_chances: anneal.given_chances,
        };
        on_epoch(&row);
        rows.push(row);
        if valid_ppl < best.0 {
            best = (valid_ppl, epoch, model.clone());
            save(&model, epoch, valid_ppl)?;
        }
    }

    let (best_valid_ppl, best_epoch, best_model) = best;
    let test = match &corpora.test {
        Some(ids) => Some(evaluate(
            &best_model,
            &batchify(ids, cfg.batch_size)?,
            cfg.unroll,
        )?),
        None => None,
    };
    Ok(TrainingReport {
        rows,
        best_epoch,
        best_valid_ppl,
        test,
        best_model,
    })
}
