//! One recurrent layer of multi-cell LSTM nodes.
//!
//! Every node owns `m` memory cells that share a single candidate input and a
//! single input/forget/output gate triple. All cells receive the same update
//! `c_k <- i * a + f * c_k`; the selection strategy then reduces them to one
//! effective value and the node emits `o * tanh(c_eff)`.
//!
//! The four gate blocks are stacked row-wise in one input matrix, one
//! recurrent matrix and one bias vector, in the order of [`Gate`]. A batch is
//! processed as independent rows that share parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm, sigmoid, Matrix, SeededRng, Trans};
use crate::selection::{select_backward, select_forward, SelectionRecord, SelectionStrategy};

/// Default half-width of the uniform cell jitter applied at state resets.
pub const DEFAULT_JITTER: f64 = 0.01;

/// Gate block order inside the stacked parameter matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    /// Modulated input `a` (tanh).
    Candidate = 0,
    Input = 1,
    Forget = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Candidate, Gate::Input, Gate::Forget, Gate::Output];
}

/// Trainable weights of one layer with `n` nodes and `in_dim` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `[4n x in_dim]`
    pub w_input: Matrix,
    /// `[4n x n]`
    pub w_recurrent: Matrix,
    /// `[4n]`
    pub bias: Vec<f64>,
    /// `[n x m]`, present only for learnable cell weights.
    pub cell_weights: Option<Matrix>,
}

impl LayerParams {
    pub fn hidden_dim(&self) -> usize {
        self.w_recurrent.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.cols()
    }

    pub fn zeros_like(&self) -> LayerParams {
        LayerParams {
            w_input: Matrix::zeros(self.w_input.rows(), self.w_input.cols()),
            w_recurrent: Matrix::zeros(self.w_recurrent.rows(), self.w_recurrent.cols()),
            bias: vec![0.0; self.bias.len()],
            cell_weights: self
                .cell_weights
                .as_ref()
                .map(|w| Matrix::zeros(w.rows(), w.cols())),
        }
    }

    /// Rows of `w_input` belonging to `gate`, flattened (`[n x in_dim]`).
    pub fn input_block_mut(&mut self, gate: Gate) -> &mut [f64] {
        let len = self.hidden_dim() * self.input_dim();
        let start = gate as usize * len;
        &mut self.w_input.as_mut_slice()[start..start + len]
    }

    /// Rows of `w_recurrent` belonging to `gate`, flattened (`[n x n]`).
    pub fn recurrent_block_mut(&mut self, gate: Gate) -> &mut [f64] {
        let n = self.hidden_dim();
        let start = gate as usize * n * n;
        &mut self.w_recurrent.as_mut_slice()[start..start + n * n]
    }

    pub fn bias_block_mut(&mut self, gate: Gate) -> &mut [f64] {
        let n = self.hidden_dim();
        &mut self.bias[gate as usize * n..(gate as usize + 1) * n]
    }

    /// Parameter tensors in their fixed serialization order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.w_input.as_slice(),
            self.w_recurrent.as_slice(),
            self.bias.as_slice(),
        ];
        if let Some(w) = &self.cell_weights {
            out.push(w.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.w_input.as_mut_slice(),
            self.w_recurrent.as_mut_slice(),
            self.bias.as_mut_slice(),
        ];
        if let Some(w) = &mut self.cell_weights {
            out.push(w.as_mut_slice());
        }
        out
    }
}

/// Draws layer weights uniformly in `[-scale, scale]`; biases start at zero
/// and cell weights (when requested) at one.
pub fn init_params(
    in_dim: usize,
    n: usize,
    m: usize,
    scale: f64,
    cell_weights: bool,
    rng: &mut SeededRng,
) -> Result<LayerParams> {
    if in_dim == 0 || n == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "layer dimensions must be >= 1 (in {in_dim}, nodes {n}, cells {m})"
        )));
    }
    let mut draw = |rows: usize, cols: usize| {
        let data = (0..rows * cols)
            .map(|_| scale * rng.uniform(-1.0, 1.0))
            .collect();
        Matrix::from_vec(rows, cols, data)
    };
    let w_input = draw(4 * n, in_dim)?;
    let w_recurrent = draw(4 * n, n)?;
    Ok(LayerParams {
        w_input,
        w_recurrent,
        bias: vec![0.0; 4 * n],
        cell_weights: cell_weights.then(|| Matrix::filled(n, m, 1.0)),
    })
}

/// How memory cells are filled at a state reset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CellInit {
    Zero,
    /// i.i.d. uniform in `[-scale, scale]` per cell.
    Jitter {
        scale: f64,
    },
}

impl Default for CellInit {
    fn default() -> Self {
        CellInit::Jitter {
            scale: DEFAULT_JITTER,
        }
    }
}

/// Recurrent state of one layer for a batch of `b` streams.
///
/// `cells` is the cell bank: row `s * n + j` holds the `m` cells of node `j`
/// in stream `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    /// `[b x n]`
    pub h: Matrix,
    /// `[b*n x m]`
    pub cells: Matrix,
}

impl LayerState {
    pub fn batch(&self) -> usize {
        self.h.rows()
    }

    pub fn nodes(&self) -> usize {
        self.h.cols()
    }

    pub fn cells_per_node(&self) -> usize {
        self.cells.cols()
    }
}

pub fn init_state(
    batch: usize,
    n: usize,
    m: usize,
    mode: CellInit,
    rng: &mut SeededRng,
) -> LayerState {
    let mut cells = Matrix::zeros(batch * n, m);
    if let CellInit::Jitter { scale } = mode {
        cells
            .as_mut_slice()
            .iter_mut()
            .for_each(|c| *c = scale * rng.uniform(-1.0, 1.0));
    }
    LayerState {
        h: Matrix::zeros(batch, n),
        cells,
    }
}

/// Everything one forward step produced that its backward step needs.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub x: Matrix,
    pub h_prev: Matrix,
    pub cells_prev: Matrix,
    /// Post-activation gates `[b x 4n]`: a, i, f, o blocks.
    pub gates: Matrix,
    pub cells_new: Matrix,
    /// Effective cell value per `(stream, node)` row.
    pub c_eff: Vec<f64>,
    pub record: SelectionRecord,
}

impl StepCache {
    /// Gate activation of node `j` in stream `s`.
    #[inline]
    pub fn gate_value(&self, gate: Gate, s: usize, j: usize) -> f64 {
        let n = self.h_prev.cols();
        self.gates[(s, gate as usize * n + j)]
    }
}

/// Advances the layer by one timestep. Returns the new state (whose `h` is
/// the layer output) and the cache for [`step_backward`].
pub fn step_forward(
    params: &LayerParams,
    state: &LayerState,
    x: &Matrix,
    strategy: &SelectionStrategy,
    rng: &mut SeededRng,
) -> Result<(LayerState, StepCache)> {
    let n = params.hidden_dim();
    let batch = state.batch();
    let m = state.cells_per_node();
    if x.rows() != batch || x.cols() != params.input_dim() {
        return Err(Error::shape(
            "step_forward",
            format!(
                "input {:?}, expected {batch}x{}",
                x.shape(),
                params.input_dim()
            ),
        ));
    }
    if state.nodes() != n || state.cells.rows() != batch * n {
        return Err(Error::shape(
            "step_forward",
            format!(
                "state h {:?} / cells {:?} for a layer of {n} nodes",
                state.h.shape(),
                state.cells.shape()
            ),
        ));
    }
    if strategy.needs_cell_weights() != params.cell_weights.is_some() {
        return Err(Error::InvalidArgument(format!(
            "strategy {} and layer cell weights disagree",
            strategy.kind()
        )));
    }

    let mut gates = Matrix::zeros(batch, 4 * n);
    gemm(
        1.0,
        x,
        Trans::No,
        &params.w_input,
        Trans::Yes,
        0.0,
        &mut gates,
    )?;
    gemm(
        1.0,
        &state.h,
        Trans::No,
        &params.w_recurrent,
        Trans::Yes,
        1.0,
        &mut gates,
    )?;
    for s in 0..batch {
        let row = gates.row_mut(s);
        for (z, b) in row.iter_mut().zip(&params.bias) {
            *z += b;
        }
        for z in &mut row[..n] {
            *z = z.tanh();
        }
        for z in &mut row[n..] {
            *z = sigmoid(*z);
        }
    }

    let mut cells_new = Matrix::zeros(batch * n, m);
    let mut gate_o = Vec::with_capacity(batch * n);
    for s in 0..batch {
        let g = gates.row(s);
        for j in 0..n {
            let (a, i, f) = (g[j], g[n + j], g[2 * n + j]);
            let r = s * n + j;
            let ia = i * a;
            for (c_new, &c_old) in cells_new.row_mut(r).iter_mut().zip(state.cells.row(r)) {
                *c_new = ia + f * c_old;
            }
            gate_o.push(g[3 * n + j]);
        }
    }

    let (c_eff, record) = select_forward(
        &cells_new,
        Some(&gate_o),
        strategy,
        params.cell_weights.as_ref(),
        rng,
    )?;

    let mut h = Matrix::zeros(batch, n);
    for s in 0..batch {
        for j in 0..n {
            let r = s * n + j;
            h[(s, j)] = gate_o[r] * c_eff[r].tanh();
        }
    }

    let cache = StepCache {
        x: x.clone(),
        h_prev: state.h.clone(),
        cells_prev: state.cells.clone(),
        gates,
        cells_new: cells_new.clone(),
        c_eff,
        record,
    };
    Ok((
        LayerState {
            h,
            cells: cells_new,
        },
        cache,
    ))
}

/// Gradients flowing out of one backward step.
#[derive(Clone, Debug)]
pub struct StepGrads {
    pub x: Matrix,
    pub h_prev: Matrix,
    pub cells_prev: Matrix,
}

/// Reverse-mode derivative of [`step_forward`]. Parameter gradients are
/// accumulated into `grads`; `grad_cells_future` is the gradient reaching the
/// new cell bank from the next timestep (`None` at a window end).
pub fn step_backward(
    params: &LayerParams,
    cache: &StepCache,
    grad_h: &Matrix,
    grad_cells_future: Option<&Matrix>,
    strategy: &SelectionStrategy,
    grads: &mut LayerParams,
) -> Result<StepGrads> {
    let n = params.hidden_dim();
    let batch = cache.h_prev.rows();
    let m = cache.cells_new.cols();
    if grad_h.shape() != (batch, n) {
        return Err(Error::shape(
            "step_backward",
            format!("grad_h {:?}, expected {batch}x{n}", grad_h.shape()),
        ));
    }
    if let Some(g) = grad_cells_future {
        if g.shape() != cache.cells_new.shape() {
            return Err(Error::shape(
                "step_backward",
                format!(
                    "future cell grads {:?}, expected {:?}",
                    g.shape(),
                    cache.cells_new.shape()
                ),
            ));
        }
    }

    let mut grad_eff = vec![0.0; batch * n];
    let mut dz = Matrix::zeros(batch, 4 * n);
    for s in 0..batch {
        for j in 0..n {
            let r = s * n + j;
            let o = cache.gate_value(Gate::Output, s, j);
            let th = cache.c_eff[r].tanh();
            let dh = grad_h[(s, j)];
            grad_eff[r] = dh * o * (1.0 - th * th);
            dz[(s, 3 * n + j)] = dh * th * o * (1.0 - o);
        }
    }

    let (mut grad_cells, grad_w) = select_backward(
        &cache.record,
        strategy,
        &cache.cells_new,
        params.cell_weights.as_ref(),
        &grad_eff,
    )?;
    if let Some(g) = grad_cells_future {
        grad_cells.add_scaled(1.0, g)?;
    }
    if let (Some(acc), Some(gw)) = (grads.cell_weights.as_mut(), grad_w) {
        acc.add_scaled(1.0, &gw)?;
    }

    let mut grad_cells_prev = Matrix::zeros(batch * n, m);
    for s in 0..batch {
        for j in 0..n {
            let r = s * n + j;
            let a = cache.gate_value(Gate::Candidate, s, j);
            let i = cache.gate_value(Gate::Input, s, j);
            let f = cache.gate_value(Gate::Forget, s, j);
            let dc = grad_cells.row(r);
            let sum_dc: f64 = dc.iter().sum();
            let df: f64 = dc
                .iter()
                .zip(cache.cells_prev.row(r))
                .map(|(g, c)| g * c)
                .sum();
            for (gp, g) in grad_cells_prev.row_mut(r).iter_mut().zip(dc) {
                *gp = f * g;
            }
            dz[(s, j)] = i * sum_dc * (1.0 - a * a);
            dz[(s, n + j)] = a * sum_dc * i * (1.0 - i);
            dz[(s, 2 * n + j)] = df * f * (1.0 - f);
        }
    }

    gemm(
        1.0,
        &dz,
        Trans::Yes,
        &cache.x,
        Trans::No,
        1.0,
        &mut grads.w_input,
    )?;
    gemm(
        1.0,
        &dz,
        Trans::Yes,
        &cache.h_prev,
        Trans::No,
        1.0,
        &mut grads.w_recurrent,
    )?;
    for s in 0..batch {
        for (b, d) in grads.bias.iter_mut().zip(dz.row(s)) {
            *b += d;
        }
    }

    let mut grad_x = Matrix::zeros(batch, params.input_dim());
    gemm(
        1.0,
        &dz,
        Trans::No,
        &params.w_input,
        Trans::No,
        0.0,
        &mut grad_x,
    )?;
    let mut grad_h_prev = Matrix::zeros(batch, n);
    gemm(
        1.0,
        &dz,
        Trans::No,
        &params.w_recurrent,
        Trans::No,
        0.0,
        &mut grad_h_prev,
    )?;

    Ok(StepGrads {
        x: grad_x,
        h_prev: grad_h_prev,
        cells_prev: grad_cells_prev,
    })
}
