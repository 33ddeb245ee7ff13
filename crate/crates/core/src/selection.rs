//! Reduction of a node's memory cells to the single effective value that feeds
//! its output, and the matching gradient routing.
//!
//! A cell bank is a matrix with one row per (batch element, node) pair and one
//! column per memory cell. Row `r` belongs to node `r % nodes`, which is how
//! per-node cell weights are looked up.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

/// Default output-gate threshold for [`SelectionStrategy::MinMaxPooling`].
pub const DEFAULT_GATE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    SimpleMean,
    WeightedSumStatic,
    RandomSelection,
    MaxPooling,
    MinMaxPooling,
    LearnableWeights,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::SimpleMean,
        StrategyKind::WeightedSumStatic,
        StrategyKind::RandomSelection,
        StrategyKind::MaxPooling,
        StrategyKind::MinMaxPooling,
        StrategyKind::LearnableWeights,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::SimpleMean => "simple_mean",
            StrategyKind::WeightedSumStatic => "weighted_sum",
            StrategyKind::RandomSelection => "random_selection",
            StrategyKind::MaxPooling => "max_pooling",
            StrategyKind::MinMaxPooling => "min_max_pooling",
            StrategyKind::LearnableWeights => "learnable_weights",
        }
    }

    /// Strategies that pick one cell and therefore leave a per-row index.
    pub fn records_index(self) -> bool {
        !matches!(
            self,
            StrategyKind::SimpleMean | StrategyKind::WeightedSumStatic
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown selection strategy '{s}' (expected one of {})",
                    StrategyKind::ALL.map(StrategyKind::name).join(", ")
                ))
            })
    }
}

/// A selection rule together with its fixed hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum SelectionStrategy {
    SimpleMean,
    WeightedSumStatic { weights: Vec<f64> },
    RandomSelection,
    MaxPooling,
    MinMaxPooling { threshold: f64 },
    LearnableWeights,
}

impl SelectionStrategy {
    /// Builds the strategy for a model with `m` cells per node. `threshold`
    /// is only consulted by min-max pooling.
    pub fn new(kind: StrategyKind, m: usize, threshold: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("cells per node must be >= 1".into()));
        }
        Ok(match kind {
            StrategyKind::SimpleMean => SelectionStrategy::SimpleMean,
            StrategyKind::WeightedSumStatic => SelectionStrategy::WeightedSumStatic {
                weights: static_weights(m)?,
            },
            StrategyKind::RandomSelection => SelectionStrategy::RandomSelection,
            StrategyKind::MaxPooling => SelectionStrategy::MaxPooling,
            StrategyKind::MinMaxPooling => {
                if !(threshold > 0.0 && threshold < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "output-gate threshold must lie in (0, 1), got {threshold}"
                    )));
                }
                SelectionStrategy::MinMaxPooling { threshold }
            }
            StrategyKind::LearnableWeights => SelectionStrategy::LearnableWeights,
        })
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            SelectionStrategy::SimpleMean => StrategyKind::SimpleMean,
            SelectionStrategy::WeightedSumStatic { .. } => StrategyKind::WeightedSumStatic,
            SelectionStrategy::RandomSelection => StrategyKind::RandomSelection,
            SelectionStrategy::MaxPooling => StrategyKind::MaxPooling,
            SelectionStrategy::MinMaxPooling { .. } => StrategyKind::MinMaxPooling,
            SelectionStrategy::LearnableWeights => StrategyKind::LearnableWeights,
        }
    }

    pub fn needs_cell_weights(&self) -> bool {
        matches!(self, SelectionStrategy::LearnableWeights)
    }
}

/// Static weights for the weighted-sum strategy: a linear ramp
/// `w_i = 2(m - i + 1) / (m(m + 1))`, `i = 1..=m`, which decreases by a
/// constant step and sums to one.
pub fn static_weights(m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidArgument("static weights need m >= 1".into()));
    }
    let denom = (m * (m + 1)) as f64;
    Ok((1..=m).map(|i| 2.0 * (m - i + 1) as f64 / denom).collect())
}

/// What a forward selection decided, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRecord {
    kind: StrategyKind,
    /// Winning cell per row; empty for the averaging strategies.
    chosen: Vec<usize>,
    /// Per-row min-max branch (true = min); empty for other strategies.
    took_min: Vec<bool>,
}

impl SelectionRecord {
    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn chosen(&self) -> &[usize] {
        &self.chosen
    }

    pub fn took_min(&self) -> &[bool] {
        &self.took_min
    }
}

#[inline]
fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        // strict comparison: ties resolve to the lowest index
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[inline]
fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

fn check_weights<'a>(cells: &Matrix, weights: Option<&'a Matrix>) -> Result<&'a Matrix> {
    let w = weights.ok_or_else(|| {
        Error::InvalidArgument("learnable-weights selection requires cell weights".into())
    })?;
    if w.cols() != cells.cols() || w.rows() == 0 || !cells.rows().is_multiple_of(w.rows()) {
        return Err(Error::shape(
            "selection",
            format!(
                "cell weights {:?} incompatible with cell bank {:?}",
                w.shape(),
                cells.shape()
            ),
        ));
    }
    Ok(w)
}

/// Reduces every row of `cells` to one effective value.
///
/// `gate_o` holds the output-gate value per row and is required by min-max
/// pooling; `weights` (`nodes x m`) is required by learnable weights.
pub fn select_forward(
    cells: &Matrix,
    gate_o: Option<&[f64]>,
    strategy: &SelectionStrategy,
    weights: Option<&Matrix>,
    rng: &mut SeededRng,
) -> Result<(Vec<f64>, SelectionRecord)> {
    let (rows, m) = cells.shape();
    if m == 0 {
        return Err(Error::InvalidArgument("cell bank has no cells".into()));
    }
    let kind = strategy.kind();
    let mut chosen = Vec::new();
    let mut took_min = Vec::new();
    let mut out = Vec::with_capacity(rows);

    match strategy {
        SelectionStrategy::SimpleMean => {
            let inv = 1.0 / m as f64;
            out.extend((0..rows).map(|r| cells.row(r).iter().sum::<f64>() * inv));
        }
        SelectionStrategy::WeightedSumStatic { weights: w } => {
            if w.len() != m {
                return Err(Error::shape(
                    "select_forward",
                    format!("{} static weights for {m} cells", w.len()),
                ));
            }
            out.extend(
                (0..rows).map(|r| cells.row(r).iter().zip(w).map(|(c, w)| c * w).sum::<f64>()),
            );
        }
        SelectionStrategy::RandomSelection => {
            chosen.reserve(rows);
            for r in 0..rows {
                let idx = rng.index(m);
                chosen.push(idx);
                out.push(cells[(r, idx)]);
            }
        }
        SelectionStrategy::MaxPooling => {
            chosen.reserve(rows);
            for r in 0..rows {
                let (idx, v) = argmax(cells.row(r).iter().copied());
                chosen.push(idx);
                out.push(v);
            }
        }
        SelectionStrategy::MinMaxPooling { threshold } => {
            let o = gate_o.ok_or_else(|| {
                Error::InvalidArgument("min-max pooling requires output-gate values".into())
            })?;
            if o.len() != rows {
                return Err(Error::shape(
                    "select_forward",
                    format!("{} gate values for {rows} rows", o.len()),
                ));
            }
            chosen.reserve(rows);
            took_min.reserve(rows);
            for r in 0..rows {
                let use_min = o[r] < *threshold;
                let row = cells.row(r).iter().copied();
                let (idx, v) = if use_min { argmin(row) } else { argmax(row) };
                chosen.push(idx);
                took_min.push(use_min);
                out.push(v);
            }
        }
        SelectionStrategy::LearnableWeights => {
            let w = check_weights(cells, weights)?;
            let nodes = w.rows();
            chosen.reserve(rows);
            for r in 0..rows {
                let wr = w.row(r % nodes);
                let (idx, v) = argmax(cells.row(r).iter().zip(wr).map(|(c, w)| c * w));
                chosen.push(idx);
                out.push(v);
            }
        }
    }

    Ok((
        out,
        SelectionRecord {
            kind,
            chosen,
            took_min,
        },
    ))
}

/// Routes the gradient of the effective values back to the cells (and, for
/// learnable weights, to the cell weights). Branch and argmax decisions are
/// treated as constants.
///
/// The returned weight gradient has the shape of `weights` and sums the
/// contributions of every row that maps to the same node.
pub fn select_backward(
    record: &SelectionRecord,
    strategy: &SelectionStrategy,
    cells: &Matrix,
    weights: Option<&Matrix>,
    grad_eff: &[f64],
) -> Result<(Matrix, Option<Matrix>)> {
    let (rows, m) = cells.shape();
    if record.kind != strategy.kind() {
        return Err(Error::RecordMismatch(format!(
            "record from {} used with {}",
            record.kind,
            strategy.kind()
        )));
    }
    if grad_eff.len() != rows {
        return Err(Error::shape(
            "select_backward",
            format!("{} gradients for {rows} rows", grad_eff.len()),
        ));
    }
    if record.kind.records_index() && record.chosen.len() != rows {
        return Err(Error::RecordMismatch(format!(
            "record holds {} indices for {rows} rows",
            record.chosen.len()
        )));
    }

    let mut grad_cells = Matrix::zeros(rows, m);
    let mut grad_weights = None;

    match strategy {
        SelectionStrategy::SimpleMean => {
            let inv = 1.0 / m as f64;
            for r in 0..rows {
                grad_cells.row_mut(r).fill(grad_eff[r] * inv);
            }
        }
        SelectionStrategy::WeightedSumStatic { weights: w } => {
            for r in 0..rows {
                for (g, wi) in grad_cells.row_mut(r).iter_mut().zip(w) {
                    *g = grad_eff[r] * wi;
                }
            }
        }
        SelectionStrategy::RandomSelection
        | SelectionStrategy::MaxPooling
        | SelectionStrategy::MinMaxPooling { .. } => {
            for (r, &idx) in record.chosen.iter().enumerate() {
                if idx >= m {
                    return Err(Error::RecordMismatch(format!("index {idx} >= {m} cells")));
                }
                grad_cells[(r, idx)] = grad_eff[r];
            }
        }
        SelectionStrategy::LearnableWeights => {
            let w = check_weights(cells, weights)?;
            let nodes = w.rows();
            let mut gw = Matrix::zeros(nodes, m);
            for (r, &idx) in record.chosen.iter().enumerate() {
                if idx >= m {
                    return Err(Error::RecordMismatch(format!("index {idx} >= {m} cells")));
                }
                let node = r % nodes;
                grad_cells[(r, idx)] = grad_eff[r] * w[(node, idx)];
                gw[(node, idx)] += grad_eff[r] * cells[(r, idx)];
            }
            grad_weights = Some(gw);
        }
    }

    Ok((grad_cells, grad_weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bank(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn forward(
        cells: &Matrix,
        o: Option<&[f64]>,
        s: &SelectionStrategy,
        w: Option<&Matrix>,
    ) -> (Vec<f64>, SelectionRecord) {
        select_forward(cells, o, s, w, &mut SeededRng::new(0)).unwrap()
    }

    #[test]
    fn static_weight_ramp() {
        assert_eq!(static_weights(1).unwrap(), vec![1.0]);
        let w = static_weights(3).unwrap();
        let want = [0.5, 1.0 / 3.0, 1.0 / 6.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(static_weights(0).is_err());
        for m in 1..40 {
            let w = static_weights(m).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.windows(2).all(|p| p[0] > p[1]));
            // constant decay between neighbours
            if m > 2 {
                let step = w[0] - w[1];
                assert!(w.windows(2).all(|p| ((p[0] - p[1]) - step).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn forward_examples() {
        let (v, rec) = forward(
            &bank(&[&[1.0, 2.0, 3.0]]),
            None,
            &SelectionStrategy::SimpleMean,
            None,
        );
        assert_eq!(v, vec![2.0]);
        assert!(rec.chosen().is_empty());

        let (v, rec) = forward(
            &bank(&[&[-1.0, 0.5, 0.2]]),
            None,
            &SelectionStrategy::MaxPooling,
            None,
        );
        assert_eq!((v[0], rec.chosen()[0]), (0.5, 1));

        let mm = SelectionStrategy::new(StrategyKind::MinMaxPooling, 2, 0.5).unwrap();
        let (v, rec) = forward(&bank(&[&[-1.0, 0.5]]), Some(&[0.3]), &mm, None);
        assert_eq!(v, vec![-1.0]);
        assert_eq!(rec.took_min(), &[true]);
        // equality goes to the max branch
        let (v, rec) = forward(&bank(&[&[-1.0, 0.5]]), Some(&[0.5]), &mm, None);
        assert_eq!(v, vec![0.5]);
        assert_eq!(rec.took_min(), &[false]);

        let ws = SelectionStrategy::new(StrategyKind::WeightedSumStatic, 3, 0.5).unwrap();
        let (v, _) = forward(&bank(&[&[6.0, 6.0, 6.0]]), None, &ws, None);
        assert!((v[0] - 6.0).abs() < 1e-14);

        let w = bank(&[&[3.0, 1.0]]);
        let (v, rec) = forward(
            &bank(&[&[1.0, 2.0]]),
            None,
            &SelectionStrategy::LearnableWeights,
            Some(&w),
        );
        assert_eq!((v[0], rec.chosen()[0]), (3.0, 0));
    }

    #[test]
    fn ties_pick_lowest_index() {
        let (_, rec) = forward(
            &bank(&[&[0.2, 0.7, 0.7]]),
            None,
            &SelectionStrategy::MaxPooling,
            None,
        );
        assert_eq!(rec.chosen(), &[1]);
        let mm = SelectionStrategy::MinMaxPooling { threshold: 0.5 };
        let (_, rec) = forward(&bank(&[&[0.1, 0.1, 0.7]]), Some(&[0.1]), &mm, None);
        assert_eq!(rec.chosen(), &[0]);
    }

    #[test]
    fn forward_errors() {
        let cells = bank(&[&[1.0, 2.0]]);
        let mut rng = SeededRng::new(0);
        assert!(select_forward(
            &cells,
            None,
            &SelectionStrategy::LearnableWeights,
            None,
            &mut rng
        )
        .is_err());
        let mm = SelectionStrategy::MinMaxPooling { threshold: 0.5 };
        assert!(select_forward(&cells, None, &mm, None, &mut rng).is_err());
        assert!(SelectionStrategy::new(StrategyKind::MinMaxPooling, 2, 1.0).is_err());
        assert!(SelectionStrategy::new(StrategyKind::MaxPooling, 0, 0.5).is_err());
        assert!("maxpool".parse::<StrategyKind>().is_err());
        assert_eq!(
            "max_pooling".parse::<StrategyKind>().unwrap(),
            StrategyKind::MaxPooling
        );
    }

    #[test]
    fn random_selection_is_seeded() {
        let cells = Matrix::from_vec(50, 5, (0..250).map(f64::from).collect()).unwrap();
        let s = SelectionStrategy::RandomSelection;
        let a = select_forward(&cells, None, &s, None, &mut SeededRng::new(7)).unwrap();
        let b = select_forward(&cells, None, &s, None, &mut SeededRng::new(7)).unwrap();
        assert_eq!(a, b);
        assert!(a.1.chosen().iter().all(|&i| i < 5));
        // not every row picks the same cell
        assert!(a.1.chosen().iter().any(|&i| i != a.1.chosen()[0]));
        for (r, (&v, &i)) in a.0.iter().zip(a.1.chosen()).enumerate() {
            assert_eq!(v, cells[(r, i)]);
        }
    }

    #[test]
    fn backward_examples() {
        let cells = bank(&[&[1.0, 2.0, 3.0, 4.0]]);
        let (_, rec) = forward(&cells, None, &SelectionStrategy::SimpleMean, None);
        let (g, gw) =
            select_backward(&rec, &SelectionStrategy::SimpleMean, &cells, None, &[1.0]).unwrap();
        assert_eq!(g.as_slice(), &[0.25; 4]);
        assert!(gw.is_none());

        let cells = bank(&[&[-1.0, 0.5, 0.2]]);
        let (_, rec) = forward(&cells, None, &SelectionStrategy::MaxPooling, None);
        let (g, _) =
            select_backward(&rec, &SelectionStrategy::MaxPooling, &cells, None, &[2.5]).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 2.5, 0.0]);

        let w = bank(&[&[3.0, 1.0]]);
        let cells = bank(&[&[1.0, 2.0]]);
        let s = SelectionStrategy::LearnableWeights;
        let (_, rec) = forward(&cells, None, &s, Some(&w));
        let (g, gw) = select_backward(&rec, &s, &cells, Some(&w), &[2.0]).unwrap();
        assert_eq!(g.as_slice(), &[6.0, 0.0]);
        assert_eq!(gw.unwrap().as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn backward_rejects_mismatched_record() {
        let cells = bank(&[&[1.0, 2.0]]);
        let (_, rec) = forward(&cells, None, &SelectionStrategy::SimpleMean, None);
        assert!(matches!(
            select_backward(&rec, &SelectionStrategy::MaxPooling, &cells, None, &[1.0]),
            Err(Error::RecordMismatch(_))
        ));
        let (_, rec) = forward(&cells, None, &SelectionStrategy::MaxPooling, None);
        let two = bank(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!(select_backward(
            &rec,
            &SelectionStrategy::MaxPooling,
            &two,
            None,
            &[1.0, 1.0]
        )
        .is_err());
    }

    #[test]
    fn learnable_weight_grads_accumulate_per_node() {
        // two batch rows mapping onto the same single node
        let w = bank(&[&[1.0, 2.0]]);
        let cells = bank(&[&[1.0, 1.0], &[3.0, 0.5]]);
        let s = SelectionStrategy::LearnableWeights;
        let (v, rec) = forward(&cells, None, &s, Some(&w));
        assert_eq!(v, vec![2.0, 3.0]);
        let (_, gw) = select_backward(&rec, &s, &cells, Some(&w), &[1.0, 1.0]).unwrap();
        assert_eq!(gw.unwrap().as_slice(), &[3.0, 1.0]);
    }

    fn all_strategies(m: usize) -> Vec<SelectionStrategy> {
        StrategyKind::ALL
            .iter()
            .map(|&k| SelectionStrategy::new(k, m, 0.5).unwrap())
            .collect()
    }

    fn distinct_cells() -> impl Strategy<Value = Vec<f64>> {
        // margins of at least 1e-2 between any two cells keep max/min stable
        (1usize..7, any::<u64>()).prop_map(|(m, seed)| {
            let mut rng = SeededRng::new(seed);
            let mut base: Vec<f64> = (0..m).map(|i| i as f64 * 0.05).collect();
            for i in (1..m).rev() {
                let j = rng.index(i + 1);
                base.swap(i, j);
            }
            base.iter()
                .map(|v| v - 0.15 + rng.uniform(-0.01, 0.01))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn backward_matches_central_differences(cells in distinct_cells(), o in 0.05f64..0.95, seed in any::<u64>()) {
            let m = cells.len();
            let bank = Matrix::from_vec(1, m, cells.clone()).unwrap();
            let mut wrng = SeededRng::new(seed);
            let w = Matrix::from_vec(1, m, (0..m).map(|_| 1.0 + wrng.uniform(-0.002, 0.002)).collect()).unwrap();
            let h = 1e-6;
            for s in all_strategies(m) {
                let wopt = s.needs_cell_weights().then_some(&w);
                let (_, rec) = select_forward(&bank, Some(&[o]), &s, wopt, &mut SeededRng::new(seed)).unwrap();
                let (g, _) = select_backward(&rec, &s, &bank, wopt, &[1.0]).unwrap();
                for i in 0..m {
                    let mut plus = bank.clone();
                    plus[(0, i)] += h;
                    let mut minus = bank.clone();
                    minus[(0, i)] -= h;
                    let fp = select_forward(&plus, Some(&[o]), &s, wopt, &mut SeededRng::new(seed)).unwrap().0[0];
                    let fm = select_forward(&minus, Some(&[o]), &s, wopt, &mut SeededRng::new(seed)).unwrap().0[0];
                    let fd = (fp - fm) / (2.0 * h);
                    let an = g[(0, i)];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                    prop_assert!(rel <= 1e-6 || (fd - an).abs() < 1e-9, "{:?} cell {i}: fd {fd} vs {an}", s.kind());
                }
            }
        }

        #[test]
        fn equal_cells_give_their_value(v in -5.0f64..5.0, m in 1usize..12, o in 0.0f64..1.0) {
            let bank = Matrix::filled(1, m, v);
            for s in all_strategies(m) {
                if s.needs_cell_weights() { continue; }
                let (out, _) = select_forward(&bank, Some(&[o]), &s, None, &mut SeededRng::new(1)).unwrap();
                prop_assert!((out[0] - v).abs() <= 1e-14 * v.abs().max(1.0));
            }
        }

        #[test]
        fn single_cell_is_identity(v in -5.0f64..5.0, o in 0.0f64..1.0) {
            let bank = Matrix::filled(1, 1, v);
            for s in all_strategies(1) {
                if s.needs_cell_weights() { continue; }
                let (out, _) = select_forward(&bank, Some(&[o]), &s, None, &mut SeededRng::new(1)).unwrap();
                prop_assert_eq!(out[0], v);
            }
        }

        #[test]
        fn zero_upstream_gives_zero_grads(cells in distinct_cells()) {
            let m = cells.len();
            let bank = Matrix::from_vec(1, m, cells).unwrap();
            let w = Matrix::filled(1, m, 1.0);
            for s in all_strategies(m) {
                let wopt = s.needs_cell_weights().then_some(&w);
                let (_, rec) = select_forward(&bank, Some(&[0.7]), &s, wopt, &mut SeededRng::new(2)).unwrap();
                let (g, gw) = select_backward(&rec, &s, &bank, wopt, &[0.0]).unwrap();
                prop_assert!(g.as_slice().iter().all(|&x| x == 0.0));
                if let Some(gw) = gw {
                    prop_assert!(gw.as_slice().iter().all(|&x| x == 0.0));
                }
            }
        }

        #[test]
        fn linear_strategies_grads_ignore_cell_values(a in distinct_cells(), shift in -3.0f64..3.0) {
            let m = a.len();
            let b: Vec<f64> = a.iter().map(|v| v * 2.0 + shift).collect();
            for s in [SelectionStrategy::SimpleMean, SelectionStrategy::new(StrategyKind::WeightedSumStatic, m, 0.5).unwrap()] {
                let ba = Matrix::from_vec(1, m, a.clone()).unwrap();
                let bb = Matrix::from_vec(1, m, b.clone()).unwrap();
                let (_, ra) = select_forward(&ba, None, &s, None, &mut SeededRng::new(0)).unwrap();
                let (_, rb) = select_forward(&bb, None, &s, None, &mut SeededRng::new(0)).unwrap();
                let ga = select_backward(&ra, &s, &ba, None, &[0.8]).unwrap().0;
                let gb = select_backward(&rb, &s, &bb, None, &[0.8]).unwrap().0;
                prop_assert_eq!(ga, gb);
            }
        }
    }
}
