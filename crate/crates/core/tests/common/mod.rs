//! A plain single-cell LSTM language model written with scalar loops,
//! independent of the library's matrix kernels and selection code. It reads
//! the library's parameter layout (gate blocks a, i, f, o) so results can be
//! compared entry by entry.

#![allow(dead_code)]

use mclstm::model::ModelParams;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug)]
pub struct RefLayerStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub a: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

/// One timestep: `layers[l][b]` plus output distributions `probs[b]`.
#[derive(Clone, Debug)]
pub struct RefStep {
    pub inputs: Vec<usize>,
    pub layers: Vec<Vec<RefLayerStep>>,
    pub probs: Vec<Vec<f64>>,
}

/// `h[l][b]` and `c[l][b]`.
#[derive(Clone, Debug)]
pub struct RefState {
    pub h: Vec<Vec<Vec<f64>>>,
    pub c: Vec<Vec<Vec<f64>>>,
}

impl RefState {
    pub fn zeros(layers: usize, batch: usize, n: usize) -> Self {
        RefState {
            h: vec![vec![vec![0.0; n]; batch]; layers],
            c: vec![vec![vec![0.0; n]; batch]; layers],
        }
    }
}

pub fn forward(p: &ModelParams, state: &mut RefState, inputs: &[Vec<usize>]) -> Vec<RefStep> {
    let mut out = Vec::new();
    for tokens in inputs {
        let mut layers = vec![Vec::new(); p.layers.len()];
        let mut probs = Vec::new();
        for (b, &tok) in tokens.iter().enumerate() {
            let mut x: Vec<f64> = (0..p.embedding.cols())
                .map(|k| p.embedding[(tok, k)])
                .collect();
            for (l, lp) in p.layers.iter().enumerate() {
                let n = lp.bias.len() / 4;
                let h_prev = state.h[l][b].clone();
                let c_prev = state.c[l][b].clone();
                let pre = |r: usize| {
                    let mut z = lp.bias[r];
                    for (k, xv) in x.iter().enumerate() {
                        z += lp.w_input[(r, k)] * xv;
                    }
                    for (k, hv) in h_prev.iter().enumerate() {
                        z += lp.w_recurrent[(r, k)] * hv;
                    }
                    z
                };
                let a: Vec<f64> = (0..n).map(|j| pre(j).tanh()).collect();
                let i: Vec<f64> = (0..n).map(|j| sigmoid(pre(n + j))).collect();
                let f: Vec<f64> = (0..n).map(|j| sigmoid(pre(2 * n + j))).collect();
                let o: Vec<f64> = (0..n).map(|j| sigmoid(pre(3 * n + j))).collect();
                let c: Vec<f64> = (0..n).map(|j| i[j] * a[j] + f[j] * c_prev[j]).collect();
                let h: Vec<f64> = (0..n).map(|j| o[j] * c[j].tanh()).collect();
                state.h[l][b] = h.clone();
                state.c[l][b] = c.clone();
                layers[l].push(RefLayerStep {
                    x: x.clone(),
                    h_prev,
                    c_prev,
                    a,
                    i,
                    f,
                    o,
                    c,
                    h: h.clone(),
                });
                x = h;
            }
            let v = p.out_bias.len();
            let logits: Vec<f64> = (0..v)
                .map(|r| {
                    p.out_bias[r]
                        + x.iter()
                            .enumerate()
                            .map(|(k, hv)| p.out_weight[(r, k)] * hv)
                            .sum::<f64>()
                })
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let s: f64 = e.iter().sum();
            probs.push(e.iter().map(|v| v / s).collect());
        }
        out.push(RefStep {
            inputs: tokens.clone(),
            layers,
            probs,
        });
    }
    out
}

/// Mean negative log-likelihood over every (step, stream).
pub fn loss(steps: &[RefStep], targets: &[Vec<usize>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0;
    for (s, tgt) in steps.iter().zip(targets) {
        for (b, &t) in tgt.iter().enumerate() {
            sum -= s.probs[b][t].ln();
            count += 1;
        }
    }
    sum / count as f64
}

/// Gradient of [`loss`], with the window's starting state held constant.
pub fn backward(p: &ModelParams, steps: &[RefStep], targets: &[Vec<usize>]) -> ModelParams {
    let mut g = p.zeros_like();
    let nl = p.layers.len();
    let batch = targets[0].len();
    let scale = 1.0 / (steps.len() * batch) as f64;
    for b in 0..batch {
        let mut dh_next: Vec<Vec<f64>> = p
            .layers
            .iter()
            .map(|lp| vec![0.0; lp.bias.len() / 4])
            .collect();
        let mut dc_next = dh_next.clone();
        for (t, step) in steps.iter().enumerate().rev() {
            let top = &step.layers[nl - 1][b].h;
            let mut dlogits = step.probs[b].clone();
            dlogits[targets[t][b]] -= 1.0;
            dlogits.iter_mut().for_each(|d| *d *= scale);
            let mut dx = vec![0.0; top.len()];
            for (r, d) in dlogits.iter().enumerate() {
                g.out_bias[r] += d;
                for k in 0..top.len() {
                    g.out_weight[(r, k)] += d * top[k];
                    dx[k] += p.out_weight[(r, k)] * d;
                }
            }
            for l in (0..nl).rev() {
                let lp = &p.layers[l];
                let gl = &mut g.layers[l];
                let s = &step.layers[l][b];
                let n = s.h.len();
                let mut dz = vec![0.0; 4 * n];
                for j in 0..n {
                    let dh = dx[j] + dh_next[l][j];
                    let tc = s.c[j].tanh();
                    let do_ = dh * tc;
                    let dc = dh * s.o[j] * (1.0 - tc * tc) + dc_next[l][j];
                    dc_next[l][j] = dc * s.f[j];
                    dz[j] = dc * s.i[j] * (1.0 - s.a[j] * s.a[j]);
                    dz[n + j] = dc * s.a[j] * s.i[j] * (1.0 - s.i[j]);
                    dz[2 * n + j] = dc * s.c_prev[j] * s.f[j] * (1.0 - s.f[j]);
                    dz[3 * n + j] = do_ * s.o[j] * (1.0 - s.o[j]);
                }
                let mut below = vec![0.0; s.x.len()];
                let mut dh_prev = vec![0.0; n];
                for (r, d) in dz.iter().enumerate() {
                    gl.bias[r] += d;
                    for (k, xv) in s.x.iter().enumerate() {
                        gl.w_input[(r, k)] += d * xv;
                        below[k] += lp.w_input[(r, k)] * d;
                    }
                    for (k, hv) in s.h_prev.iter().enumerate() {
                        gl.w_recurrent[(r, k)] += d * hv;
                        dh_prev[k] += lp.w_recurrent[(r, k)] * d;
                    }
                }
                dh_next[l] = dh_prev;
                dx = below;
            }
            let tok = step.inputs[b];
            for (k, d) in dx.iter().enumerate() {
                g.embedding[(tok, k)] += d;
            }
        }
    }
    g
}
