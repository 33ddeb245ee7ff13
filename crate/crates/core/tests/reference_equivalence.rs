mod common;

use mclstm::layer::CellInit;
use mclstm::model::{loss_window, Model, ModelConfig};
use mclstm::numerics::SeededRng;
use mclstm::selection::StrategyKind;

fn window(rng: &mut SeededRng, steps: usize, batch: usize, vocab: usize) -> Vec<Vec<usize>> {
    (0..steps)
        .map(|_| (0..batch).map(|_| rng.index(vocab)).collect())
        .collect()
}

#[test]
fn single_cell_matches_reference_for_every_strategy() {
    for kind in StrategyKind::ALL {
        let mut cfg = ModelConfig::new(17, 6, 1, kind);
        cfg.embed_dim = 5;
        cfg.num_layers = 3;
        cfg.init_scale = 0.5;
        cfg.cell_init = CellInit::Zero;
        let model = Model::new(cfg, &mut SeededRng::new(12)).unwrap();
        let mut rng = SeededRng::new(13);
        let inputs = window(&mut rng, 30, 3, 17);
        let targets = window(&mut rng, 30, 3, 17);

        let mut st = model.init_state(3, &mut SeededRng::new(0));
        let cache = model
            .forward_window(&mut st, &inputs, false, &mut SeededRng::new(0))
            .unwrap();
        let grads = model.backward_window(&cache, &targets).unwrap();

        let mut rs = common::RefState::zeros(3, 3, 6);
        let steps = common::forward(&model.params, &mut rs, &inputs);
        for (ours, theirs) in cache.steps.iter().zip(&steps) {
            for b in 0..3 {
                for (x, y) in ours.probs.row(b).iter().zip(&theirs.probs[b]) {
                    assert!((x - y).abs() <= 1e-12, "{kind}: {x} vs {y}");
                }
            }
        }
        let ours = loss_window(cache.probs(), &targets).unwrap();
        assert!(
            (ours - common::loss(&steps, &targets)).abs() <= 1e-10,
            "{kind}"
        );

        let reference = common::backward(&model.params, &steps, &targets);
        let names = grads.tensor_names();
        for ((name, a), b) in names.iter().zip(grads.tensors()).zip(reference.tensors()) {
            // the plain LSTM has no per-cell weights
            if name.ends_with("cell_weights") {
                continue;
            }
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-10, "{kind} {name}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn state_carries_across_windows_like_one_long_window() {
    let mut cfg = ModelConfig::new(11, 7, 1, StrategyKind::MaxPooling);
    cfg.cell_init = CellInit::Zero;
    cfg.init_scale = 0.4;
    let model = Model::new(cfg, &mut SeededRng::new(2)).unwrap();
    let inputs = window(&mut SeededRng::new(3), 40, 2, 11);

    let mut st = model.init_state(2, &mut SeededRng::new(0));
    let mut rng = SeededRng::new(0);
    let mut probs = Vec::new();
    for chunk in inputs.chunks(9) {
        let c = model
            .forward_window(&mut st, chunk, false, &mut rng)
            .unwrap();
        probs.extend(c.steps.into_iter().map(|s| s.probs));
    }
    let mut rs = common::RefState::zeros(2, 2, 7);
    let steps = common::forward(&model.params, &mut rs, &inputs);
    for (p, s) in probs.iter().zip(&steps) {
        for b in 0..2 {
            for (x, y) in p.row(b).iter().zip(&s.probs[b]) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
