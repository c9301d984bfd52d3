//! Standard LSTM (no peepholes) with a linear readout, batched over episodes.
//!
//! Gate rows of `w_gates` are stacked `[input; forget; candidate; output]`,
//! each `hidden` rows tall, acting on `[x; h]`.

use super::optim::softmax;
use super::{Parameters, TensorRef};
use crate::error::{invalid, shape_err, Result};
use crate::numerics::{gemm, truncated_normal, Matrix, Op, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub output_size: usize,
    /// `4H × (I + H)`.
    pub w_gates: Matrix,
    pub b_gates: Vec<f64>,
    /// `O × H`.
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_size: usize, hidden_size: usize, output_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            output_size,
            w_gates: Matrix::zeros(4 * hidden_size, input_size + hidden_size),
            b_gates: vec![0.0; 4 * hidden_size],
            w_out: Matrix::zeros(output_size, hidden_size),
            b_out: vec![0.0; output_size],
        }
    }

    /// Truncated-normal weights with σ = 1/√fan_in, forget-gate bias 1.
    pub fn init(
        input_size: usize,
        hidden_size: usize,
        output_size: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 || output_size == 0 {
            return invalid("LSTM sizes must be positive");
        }
        let mut p = Self::zeros(input_size, hidden_size, output_size);
        let sigma_g = 1.0 / ((input_size + hidden_size) as f64).sqrt();
        for w in p.w_gates.as_mut_slice() {
            *w = truncated_normal(sigma_g, rng)?;
        }
        let sigma_o = 1.0 / (hidden_size as f64).sqrt();
        for w in p.w_out.as_mut_slice() {
            *w = truncated_normal(sigma_o, rng)?;
        }
        for b in &mut p.b_gates[hidden_size..2 * hidden_size] {
            *b = 1.0;
        }
        Ok(p)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (i, h, o) = (self.input_size, self.hidden_size, self.output_size);
        if self.w_gates.shape() != (4 * h, i + h)
            || self.b_gates.len() != 4 * h
            || self.w_out.shape() != (o, h)
            || self.b_out.len() != o
        {
            return shape_err(format!("LSTM tensors inconsistent with sizes ({i}, {h}, {o})"));
        }
        Ok(())
    }
}

impl Parameters for LstmParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef {
                name: "w_gates",
                shape: vec![self.w_gates.rows(), self.w_gates.cols()],
                data: self.w_gates.as_slice(),
            },
            TensorRef {
                name: "b_gates",
                shape: vec![self.b_gates.len()],
                data: &self.b_gates,
            },
            TensorRef {
                name: "w_out",
                shape: vec![self.w_out.rows(), self.w_out.cols()],
                data: self.w_out.as_slice(),
            },
            TensorRef {
                name: "b_out",
                shape: vec![self.b_out.len()],
                data: &self.b_out,
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_gates.as_mut_slice(),
            &mut self.b_gates,
            self.w_out.as_mut_slice(),
            &mut self.b_out,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        Self {
            h: vec![0.0; hidden_size],
            c: vec![0.0; hidden_size],
        }
    }
}

/// Recurrent state for a batch; row b belongs to episode b.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchState {
    pub h: Matrix,
    pub c: Matrix,
}

impl BatchState {
    pub fn zeros(batch: usize, hidden_size: usize) -> Self {
        Self {
            h: Matrix::zeros(batch, hidden_size),
            c: Matrix::zeros(batch, hidden_size),
        }
    }

    pub fn batch(&self) -> usize {
        self.h.rows()
    }

    /// Copy of row `b` as a single-episode state.
    pub fn row(&self, b: usize) -> LstmState {
        LstmState {
            h: self.h.row(b).to_vec(),
            c: self.c.row(b).to_vec(),
        }
    }

    /// `n` copies of one state, for probing a frozen state with many inputs.
    pub fn broadcast(state: &LstmState, n: usize) -> Self {
        let hs = state.h.len();
        Self {
            h: Matrix::from_fn(n, hs, |_, j| state.h[j]),
            c: Matrix::from_fn(n, hs, |_, j| state.c[j]),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
struct StepCache {
    xh: Matrix,
    /// Activated gates, B × 4H in `[i, f, g, o]` blocks.
    gates: Matrix,
    c_prev: Matrix,
    tanh_c: Matrix,
    h: Matrix,
}

fn forward_step(params: &LstmParams, state: &BatchState, input: &Matrix) -> Result<(BatchState, Matrix, StepCache)> {
    let (i_sz, h_sz) = (params.input_size, params.hidden_size);
    let b = input.rows();
    if input.cols() != i_sz {
        return shape_err(format!("LSTM input width {} but expected {}", input.cols(), i_sz));
    }
    if state.h.shape() != (b, h_sz) || state.c.shape() != (b, h_sz) {
        return shape_err(format!(
            "LSTM state {:?} for batch {} and hidden {}",
            state.h.shape(),
            b,
            h_sz
        ));
    }
    let mut xh = Matrix::zeros(b, i_sz + h_sz);
    for r in 0..b {
        let row = xh.row_mut(r);
        row[..i_sz].copy_from_slice(input.row(r));
        row[i_sz..].copy_from_slice(state.h.row(r));
    }
    let mut gates = Matrix::zeros(b, 4 * h_sz);
    for r in 0..b {
        gates.row_mut(r).copy_from_slice(&params.b_gates);
    }
    gemm(Op::N, Op::T, 1.0, xh.view(), params.w_gates.view(), 1.0, &mut gates);

    let mut c = Matrix::zeros(b, h_sz);
    let mut tanh_c = Matrix::zeros(b, h_sz);
    let mut h = Matrix::zeros(b, h_sz);
    for r in 0..b {
        let g = gates.row_mut(r);
        for j in 0..h_sz {
            g[j] = sigmoid(g[j]);
            g[h_sz + j] = sigmoid(g[h_sz + j]);
            g[2 * h_sz + j] = g[2 * h_sz + j].tanh();
            g[3 * h_sz + j] = sigmoid(g[3 * h_sz + j]);
        }
        let g = gates.row(r);
        let cp = state.c.row(r);
        for j in 0..h_sz {
            let cv = g[h_sz + j] * cp[j] + g[j] * g[2 * h_sz + j];
            let tc = cv.tanh();
            c.set(r, j, cv);
            tanh_c.set(r, j, tc);
            h.set(r, j, g[3 * h_sz + j] * tc);
        }
    }

    let mut out = Matrix::zeros(b, params.output_size);
    for r in 0..b {
        out.row_mut(r).copy_from_slice(&params.b_out);
    }
    gemm(Op::N, Op::T, 1.0, h.view(), params.w_out.view(), 1.0, &mut out);

    let cache = StepCache {
        xh,
        gates,
        c_prev: state.c.clone(),
        tanh_c,
        h: h.clone(),
    };
    Ok((BatchState { h, c }, out, cache))
}

/// One step for a batch without recording anything.
pub fn batch_step(params: &LstmParams, state: &BatchState, input: &Matrix) -> Result<(BatchState, Matrix)> {
    let (s, out, _) = forward_step(params, state, input)?;
    Ok((s, out))
}

/// One step for a single episode: gates, cell update, then linear readout.
pub fn lstm_step(params: &LstmParams, state: &LstmState, input: &[f64]) -> Result<(LstmState, Vec<f64>)> {
    if state.h.len() != params.hidden_size || state.c.len() != params.hidden_size {
        return shape_err("LSTM state length does not match hidden size");
    }
    let bs = BatchState::broadcast(state, 1);
    let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
    let (next, out) = batch_step(params, &bs, &x)?;
    Ok((next.row(0), out.into_vec()))
}

/// Forward record of a batched episode, extended one step at a time so
/// actions can depend on earlier outputs.
#[derive(Debug, Clone)]
pub struct LstmTape {
    state: BatchState,
    steps: Vec<StepCache>,
    outputs: Vec<Matrix>,
}

impl LstmTape {
    pub fn new(params: &LstmParams, batch: usize) -> Self {
        Self {
            state: BatchState::zeros(batch, params.hidden_size),
            steps: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn state(&self) -> &BatchState {
        &self.state
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn outputs(&self) -> &[Matrix] {
        &self.outputs
    }

    /// Advance every episode by one input row; returns the B×O outputs.
    pub fn step(&mut self, params: &LstmParams, input: &Matrix) -> Result<&Matrix> {
        let (next, out, cache) = forward_step(params, &self.state, input)?;
        self.state = next;
        self.steps.push(cache);
        self.outputs.push(out);
        Ok(self.outputs.last().unwrap())
    }

    /// Backpropagate per-step output gradients (`d_outputs[t]` is B×O)
    /// through the whole recorded episode.
    pub fn backward(&self, params: &LstmParams, d_outputs: &[Matrix]) -> Result<LstmParams> {
        if d_outputs.len() != self.steps.len() {
            return shape_err(format!(
                "{} output gradients for {} steps",
                d_outputs.len(),
                self.steps.len()
            ));
        }
        let h_sz = params.hidden_size;
        let i_sz = params.input_size;
        let b = self.state.batch();
        let mut grads = params.zeros_like();
        let mut dh_next = Matrix::zeros(b, h_sz);
        let mut dc_next = Matrix::zeros(b, h_sz);
        let mut dz = Matrix::zeros(b, 4 * h_sz);
        let mut dxh = Matrix::zeros(b, i_sz + h_sz);

        for (cache, d_out) in self.steps.iter().zip(d_outputs).rev() {
            if d_out.shape() != (b, params.output_size) {
                return shape_err(format!("output gradient {:?}", d_out.shape()));
            }
            gemm(Op::T, Op::N, 1.0, d_out.view(), cache.h.view(), 1.0, &mut grads.w_out);
            for r in 0..b {
                for (g, d) in grads.b_out.iter_mut().zip(d_out.row(r)) {
                    *g += d;
                }
            }
            // dh = d_out · W_out + dh_next
            let mut dh = dh_next;
            gemm(Op::N, Op::N, 1.0, d_out.view(), params.w_out.view(), 1.0, &mut dh);

            for r in 0..b {
                let g = cache.gates.row(r);
                let tc = cache.tanh_c.row(r);
                let cp = cache.c_prev.row(r);
                let dhr = dh.row(r);
                let dzr = dz.row_mut(r);
                for j in 0..h_sz {
                    let (ig, fg, gg, og) = (g[j], g[h_sz + j], g[2 * h_sz + j], g[3 * h_sz + j]);
                    let d_o = dhr[j] * tc[j];
                    let dc = dhr[j] * og * (1.0 - tc[j] * tc[j]) + dc_next.get(r, j);
                    dzr[j] = dc * gg * ig * (1.0 - ig);
                    dzr[h_sz + j] = dc * cp[j] * fg * (1.0 - fg);
                    dzr[2 * h_sz + j] = dc * ig * (1.0 - gg * gg);
                    dzr[3 * h_sz + j] = d_o * og * (1.0 - og);
                    dc_next.set(r, j, dc * fg);
                }
            }
            gemm(Op::T, Op::N, 1.0, dz.view(), cache.xh.view(), 1.0, &mut grads.w_gates);
            for r in 0..b {
                for (g, d) in grads.b_gates.iter_mut().zip(dz.row(r)) {
                    *g += d;
                }
            }
            gemm(Op::N, Op::N, 1.0, dz.view(), params.w_gates.view(), 0.0, &mut dxh);
            dh_next = Matrix::zeros(b, h_sz);
            for r in 0..b {
                dh_next.row_mut(r).copy_from_slice(&dxh.row(r)[i_sz..]);
            }
        }
        Ok(grads)
    }
}

/// Per-step objective for [`lstm_bptt`].
#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a> {
    /// `mean_b (1/T) Σ_t ‖ŷ_t − y_t‖²`; `targets[t]` is B×O.
    L2 { targets: &'a [Matrix] },
    /// `mean_b Σ_t −G_t · log π(a_t)` with π = softmax(outputs);
    /// `actions[t][b]`, `returns[t][b]`.
    Reinforce {
        actions: &'a [Vec<usize>],
        returns: &'a [Vec<f64>],
    },
}

/// Output gradients and objective value for a recorded episode.
pub(crate) fn output_gradients(outputs: &[Matrix], loss: &LossSpec) -> Result<(f64, Vec<Matrix>)> {
    let t_len = outputs.len();
    let b = outputs[0].rows();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(t_len);
    match loss {
        LossSpec::L2 { targets } => {
            if targets.len() != t_len {
                return shape_err(format!("{} targets for {} steps", targets.len(), t_len));
            }
            let scale = 1.0 / (b as f64 * t_len as f64);
            for (out, y) in outputs.iter().zip(targets.iter()) {
                let mut d = out.sub(y)?;
                total += d.as_slice().iter().map(|v| v * v).sum::<f64>() * scale;
                for v in d.as_mut_slice() {
                    *v *= 2.0 * scale;
                }
                grads.push(d);
            }
        }
        LossSpec::Reinforce { actions, returns } => {
            if actions.len() != t_len || returns.len() != t_len {
                return shape_err("actions/returns length differs from episode length");
            }
            let scale = 1.0 / b as f64;
            for ((out, acts), rets) in outputs.iter().zip(actions.iter()).zip(returns.iter()) {
                if acts.len() != b || rets.len() != b {
                    return shape_err("actions/returns batch size");
                }
                let k = out.cols();
                let mut d = Matrix::zeros(b, k);
                for r in 0..b {
                    let a = acts[r];
                    if a >= k {
                        return Err(crate::Error::OutOfRange {
                            what: "action",
                            index: a,
                            limit: k,
                        });
                    }
                    let p = softmax(out.row(r));
                    total -= rets[r] * p[a].max(f64::MIN_POSITIVE).ln() * scale;
                    let dr = d.row_mut(r);
                    for j in 0..k {
                        dr[j] = rets[r] * scale * (p[j] - if j == a { 1.0 } else { 0.0 });
                    }
                }
                grads.push(d);
            }
        }
    }
    Ok((total, grads))
}

/// Episode loss and its exact gradient by backpropagation through time.
/// `inputs[t]` is the B×I input at step t.
pub fn lstm_bptt(params: &LstmParams, inputs: &[Matrix], loss: &LossSpec) -> Result<(f64, LstmParams)> {
    if inputs.is_empty() {
        return invalid("episode must have at least one step");
    }
    params.check_shapes()?;
    let mut tape = LstmTape::new(params, inputs[0].rows());
    for x in inputs {
        tape.step(params, x)?;
    }
    let (value, d_out) = output_gradients(tape.outputs(), loss)?;
    let grads = tape.backward(params, &d_out)?;
    Ok((value, grads))
}
