//! Perplexity and whole-corpus evaluation.

use std::fmt;

use crate::data::BatchedCorpus;
use crate::error::{Error, Result};
use crate::model::{nll_sum, Model};
use crate::numerics::SeededRng;

/// Salt mixed into the model seed for evaluation-time randomness (state
/// jitter, random selection), so evaluation never depends on training draws.
const EVAL_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub token_count: usize,
    pub mean_nll: f64,
    pub perplexity: f64,
}

impl EvalReport {
    pub fn from_sum(sum_nll: f64, token_count: usize) -> Result<Self> {
        let perplexity = perplexity_from_nll(sum_nll, token_count)?;
        Ok(EvalReport {
            token_count,
            mean_nll: sum_nll / token_count as f64,
            perplexity,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tokens={} nll={:.6} ppl={:.4}",
            self.token_count, self.mean_nll, self.perplexity
        )
    }
}

/// `exp(sum_nll / token_count)`: the exponentiated mean cross-entropy, the
/// same quantity as two raised to the mean base-2 cross-entropy.
pub fn perplexity_from_nll(sum_nll: f64, token_count: usize) -> Result<f64> {
    if token_count == 0 {
        return Err(Error::Empty("perplexity over zero tokens"));
    }
    Ok((sum_nll / token_count as f64).exp())
}

/// Generator used by evaluation passes of `model`.
pub fn eval_rng(model: &Model) -> SeededRng {
    SeededRng::new(model.config.seed ^ EVAL_SALT)
}

/// Stateful eval-mode pass over every window of `corpus`, starting from a
/// freshly initialized state.
pub fn evaluate(model: &Model, corpus: &BatchedCorpus, unroll: usize) -> Result<EvalReport> {
    if let Some(max) = corpus.max_id() {
        if max >= model.config.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "corpus uses token id {max} but the model vocabulary has {} entries",
                model.config.vocab_size
            )));
        }
    }
    let mut rng = eval_rng(model);
    let mut state = model.init_state(corpus.batch_size(), &mut rng);
    let mut sum = 0.0;
    let mut count = 0;
    for window in corpus.windows(unroll)? {
        for (inputs, targets) in window.inputs.iter().zip(&window.targets) {
            let step = model.step(&mut state, inputs, false, &mut rng)?;
            let (s, c) = nll_sum([&step.probs], std::slice::from_ref(targets))?;
            sum += s;
            count += c;
        }
    }
    if !sum.is_finite() {
        return Err(Error::NonFinite(format!("evaluation nll sum is {sum}")));
    }
    EvalReport::from_sum(sum, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::batchify;
    use crate::model::ModelConfig;
    use crate::selection::StrategyKind;

    #[test]
    fn perplexity_closed_forms() {
        assert_eq!(perplexity_from_nll(0.0, 5).unwrap(), 1.0);
        assert!((perplexity_from_nll(3.0 * 4f64.ln(), 3).unwrap() - 4.0).abs() < 1e-12);
        assert!((perplexity_from_nll(10f64.ln(), 1).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(perplexity_from_nll(1.0, 0), Err(Error::Empty(_))));
        // base-2 reading gives the same number
        let mean_bits = 10f64.ln() / 2f64.ln();
        assert!((2f64.powf(mean_bits) - 10.0).abs() < 1e-12);
    }

    fn model(vocab: usize) -> Model {
        let mut cfg = ModelConfig::new(vocab, 8, 3, StrategyKind::RandomSelection);
        cfg.seed = 4;
        Model::new(cfg, &mut SeededRng::new(4)).unwrap()
    }

    fn corpus(len: usize, vocab: usize, seed: u64) -> Vec<usize> {
        let mut rng = SeededRng::new(seed);
        (0..len).map(|_| rng.index(vocab)).collect()
    }

    #[test]
    fn uniform_model_has_vocab_perplexity() {
        let mut m = model(12);
        m.params.out_weight.fill(0.0);
        let c = batchify(&corpus(200, 12, 1), 4).unwrap();
        let r = evaluate(&m, &c, 7).unwrap();
        assert!((r.perplexity - 12.0).abs() < 1e-8, "{r}");
        assert_eq!(r.token_count, c.target_count());
    }

    #[test]
    fn evaluation_is_deterministic_and_window_invariant() {
        let m = model(15);
        let ids = corpus(300, 15, 2);
        let c = batchify(&ids, 1).unwrap();
        let a = evaluate(&m, &c, 5).unwrap();
        assert_eq!(a, evaluate(&m, &c, 5).unwrap());
        let b = evaluate(&m, &c, 35).unwrap();
        assert!((a.mean_nll - b.mean_nll).abs() <= 1e-10);
        assert!(a.perplexity >= 1.0);
    }

    #[test]
    fn rejects_foreign_corpus() {
        let m = model(10);
        let c = batchify(&[0, 1, 2, 30, 4, 5], 2).unwrap();
        assert!(evaluate(&m, &c, 3).is_err());
    }

    #[test]
    fn report_format() {
        let r = EvalReport::from_sum(4f64.ln() * 10.0, 10).unwrap();
        assert_eq!(r.to_string(), "tokens=10 nll=1.386294 ppl=4.0000");
    }
}
