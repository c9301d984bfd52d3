use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

/// θ ← θ − lr·g.
pub fn sgd_update<P: Parameters>(params: &mut P, grads: &P, lr: f64) {
    let g = grads.flat();
    let mut k = 0;
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v -= lr * g[k];
            k += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self::with_hyper(num_params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(num_params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// Bias-corrected Adam step.
pub fn adam_update<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState, lr: f64) {
    let g = grads.flat();
    assert_eq!(g.len(), state.m.len(), "adam moments sized for another parameter set");
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let mut k = 0;
    for t in params.tensors_mut() {
        for p in t.iter_mut() {
            let gk = g[k];
            state.m[k] = b1 * state.m[k] + (1.0 - b1) * gk;
            state.v[k] = b2 * state.v[k] + (1.0 - b2) * gk * gk;
            let m_hat = state.m[k] / c1;
            let v_hat = state.v[k] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
            k += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64 },
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidInput(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(())
    }

    pub fn state(&self, num_params: usize) -> OptimizerState {
        match *self {
            Optimizer::Sgd { lr } => OptimizerState::Sgd { lr },
            Optimizer::Adam { lr } => OptimizerState::Adam {
                lr,
                adam: AdamState::new(num_params),
            },
        }
    }
}

/// An optimiser together with whatever it accumulates between steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OptimizerState {
    Sgd { lr: f64 },
    Adam { lr: f64, adam: AdamState },
}

impl OptimizerState {
    pub fn apply<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        match self {
            OptimizerState::Sgd { lr } => sgd_update(params, grads, *lr),
            OptimizerState::Adam { lr, adam } => adam_update(params, grads, adam, *lr),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradient over logits of `−return · log softmax(logits)[action]`.
pub fn reinforce_logit_grad(logits: &[f64], action: usize, ret: f64) -> Result<Vec<f64>> {
    if action >= logits.len() {
        return Err(Error::OutOfRange {
            what: "action",
            index: action,
            limit: logits.len(),
        });
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidInput("non-finite logits".into()));
    }
    let p = softmax(logits);
    Ok(p.iter()
        .enumerate()
        .map(|(j, pj)| ret * (pj - if j == action { 1.0 } else { 0.0 }))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Activation, Init, MlpParams};
    use crate::numerics::RngStream;

    fn scalar(v: f64) -> MlpParams {
        let mut rng = RngStream::new(0, 0);
        let mut p = MlpParams::init(&[1, 1], Activation::Linear, Init::Zeros, &mut rng).unwrap();
        p.layers[0].weights.as_mut_slice()[0] = v;
        p
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = scalar(1.0);
        sgd_update(&mut p, &scalar(2.0), 0.1);
        assert!((p.layers[0].weights.get(0, 0) - 0.8).abs() < 1e-15);
        let before = p.clone();
        sgd_update(&mut p, &scalar(0.0), 0.1);
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_linearity() {
        let mut a = scalar(1.0);
        sgd_update(&mut a, &scalar(0.3), 0.1);
        sgd_update(&mut a, &scalar(-1.1), 0.1);
        let mut b = scalar(1.0);
        sgd_update(&mut b, &scalar(0.3 - 1.1), 0.1);
        assert!((a.layers[0].weights.get(0, 0) - b.layers[0].weights.get(0, 0)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr() {
        for g in [1e-3, 0.5, -7.0] {
            let mut p = scalar(0.0);
            let mut st = AdamState::new(2);
            adam_update(&mut p, &scalar(g), &mut st, 0.01);
            let step = p.layers[0].weights.get(0, 0).abs();
            let expected = 0.01 * g.abs() / (g.abs() + 1e-8);
            assert!((step - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_zero_gradient_fixed_point() {
        let mut p = scalar(0.4);
        let mut st = AdamState::new(2);
        for _ in 0..10 {
            adam_update(&mut p, &scalar(0.0), &mut st, 0.1);
        }
        assert_eq!(p.layers[0].weights.get(0, 0), 0.4);
    }

    #[test]
    fn reinforce_uniform_logits() {
        let g = reinforce_logit_grad(&[0.0; 5], 0, 1.0).unwrap();
        let want = [0.2 - 1.0, 0.2, 0.2, 0.2, 0.2];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(reinforce_logit_grad(&[0.3, -1.0], 1, 0.0).unwrap().iter().all(|v| *v == 0.0));
        assert!(reinforce_logit_grad(&[0.0; 3], 3, 1.0).is_err());
    }

    #[test]
    fn optimizer_validation() {
        assert!(Optimizer::Sgd { lr: 0.0 }.validate().is_err());
        assert!(Optimizer::Adam { lr: 1e-4 }.validate().is_ok());
    }
}
