//! Forward and backward passes for MLPs and LSTMs, plus SGD, Adam and
//! REINFORCE update rules and the checkpoint archive format.

pub mod archive;
mod lstm;
mod mlp;
mod optim;

pub use lstm::{
    batch_step, lstm_bptt, lstm_step, BatchState, LossSpec, LstmParams, LstmState, LstmTape,
};
pub(crate) use lstm::output_gradients;
pub use mlp::{mlp_forward, mlp_forward_batch, mlp_l2_grad, Activation, Dense, Init, MlpCache, MlpParams};
pub use optim::{
    adam_update, reinforce_logit_grad, sgd_update, softmax, AdamState, Optimizer, OptimizerState,
};

/// A borrowed named tensor: name, shape and row-major data.
#[derive(Debug, Clone)]
pub struct TensorRef<'a> {
    pub name: &'a str,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// A fixed collection of tensors that optimisers update in place.
///
/// Gradients are represented by a value of the same type, so shape
/// congruence between a parameter set and its gradient is structural.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<TensorRef<'_>>;

    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    fn set_flat(&mut self, values: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, values.len(), "flat parameter length");
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Accumulate `other` into `self`.
    fn add_assign(&mut self, other: &Self) {
        let src = other.flat();
        let mut offset = 0;
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v += src[offset];
                offset += 1;
            }
        }
    }
}

impl<P: Parameters> Parameters for Vec<P> {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        self.iter().flat_map(|p| p.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.iter_mut().flat_map(|p| p.tensors_mut()).collect()
    }
}
