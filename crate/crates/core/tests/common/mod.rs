#![allow(dead_code)]

use metadyn::nets::{
    lstm_bptt, mlp_l2_grad, reinforce_logit_grad, softmax, Activation, Init, LossSpec, LstmParams, MlpParams,
    Parameters,
};
use metadyn::numerics::{Matrix, RngStream};
use metadyn::tasks::BanditStep;

pub const FD_EPS: f64 = 1e-5;

/// ‖a − b‖ / max(‖a‖, ‖b‖), or 0 when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` around `x`.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + FD_EPS;
            let up = f(&p);
            p[i] = x[i] - FD_EPS;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * FD_EPS)
        })
        .collect()
}

pub fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

/// Relative error of the MLP L2 gradient for a random configuration.
pub fn mlp_case(rng: &mut RngStream) -> f64 {
    let depth = 1 + rng.below(3);
    let sizes: Vec<usize> = (0..=depth).map(|_| 1 + rng.below(5)).collect();
    let act = if rng.bernoulli(0.5) { Activation::Linear } else { Activation::Relu };
    let mut params = MlpParams::init(&sizes, act, Init::TruncatedNormal { sigma: 0.7 }, rng).unwrap();
    let mut flat = params.flat();
    for v in &mut flat {
        *v += 0.1 * rng.normal();
    }
    params.set_flat(&flat);
    let b = 1 + rng.below(6);
    let x = gaussian(b, sizes[0], 1.0, rng);
    let y = gaussian(b, sizes[depth], 1.0, rng);
    let (_, g) = mlp_l2_grad(&params, &x, &y).unwrap();
    let numeric = central_diff(&flat, |p| {
        let mut q = params.clone();
        q.set_flat(p);
        mlp_l2_grad(&q, &x, &y).unwrap().0
    });
    rel_error(&g.flat(), &numeric)
}

fn random_lstm(rng: &mut RngStream) -> (LstmParams, Vec<Matrix>) {
    let (i, h, o) = (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(4));
    let mut params = LstmParams::init(i, h, o, rng).unwrap();
    let mut flat = params.flat();
    for v in &mut flat {
        *v += 0.2 * rng.normal();
    }
    params.set_flat(&flat);
    let t = 1 + rng.below(6);
    let b = 1 + rng.below(3);
    let inputs = (0..t).map(|_| gaussian(b, i, 1.0, rng)).collect();
    (params, inputs)
}

/// Relative error of the LSTM BPTT gradient under an L2 loss.
pub fn lstm_l2_case(rng: &mut RngStream) -> f64 {
    let (params, inputs) = random_lstm(rng);
    let b = inputs[0].rows();
    let targets: Vec<Matrix> = inputs.iter().map(|_| gaussian(b, params.output_size, 1.0, rng)).collect();
    let loss = LossSpec::L2 { targets: &targets };
    let (_, g) = lstm_bptt(&params, &inputs, &loss).unwrap();
    let numeric = central_diff(&params.flat(), |p| {
        let mut q = params.clone();
        q.set_flat(p);
        lstm_bptt(&q, &inputs, &loss).unwrap().0
    });
    rel_error(&g.flat(), &numeric)
}

/// Relative error of the LSTM BPTT gradient under the REINFORCE surrogate.
pub fn lstm_reinforce_case(rng: &mut RngStream) -> f64 {
    let (params, inputs) = random_lstm(rng);
    let b = inputs[0].rows();
    let k = params.output_size;
    let actions: Vec<Vec<usize>> = inputs.iter().map(|_| (0..b).map(|_| rng.below(k)).collect()).collect();
    let returns: Vec<Vec<f64>> = inputs.iter().map(|_| (0..b).map(|_| rng.normal()).collect()).collect();
    let loss = LossSpec::Reinforce {
        actions: &actions,
        returns: &returns,
    };
    let (_, g) = lstm_bptt(&params, &inputs, &loss).unwrap();
    let numeric = central_diff(&params.flat(), |p| {
        let mut q = params.clone();
        q.set_flat(p);
        lstm_bptt(&q, &inputs, &loss).unwrap().0
    });
    rel_error(&g.flat(), &numeric)
}

/// Relative error of the logit-space REINFORCE gradient.
pub fn reinforce_case(rng: &mut RngStream) -> f64 {
    let k = 2 + rng.below(5);
    let logits: Vec<f64> = (0..k).map(|_| 2.0 * rng.normal()).collect();
    let a = rng.below(k);
    let ret = rng.normal();
    let g = reinforce_logit_grad(&logits, a, ret).unwrap();
    let numeric = central_diff(&logits, |z| -ret * softmax(z)[a].ln());
    rel_error(&g, &numeric)
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.rows();
    let m = b.cols();
    let mut aug: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).iter().chain(b.row(i)).copied().collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs())).unwrap();
        aug.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = aug[r][col] / aug[col][col];
                for c in col..n + m {
                    aug[r][c] -= f * aug[col][c];
                }
            }
        }
    }
    Matrix::from_fn(n, m, |i, j| aug[i][n + j] / aug[i][i])
}

/// Ridge regression `W = ((XᵀX + λI)⁻¹ XᵀY)ᵀ` via the normal equations.
pub fn ridge(x: &Matrix, y: &Matrix, lambda: f64) -> Matrix {
    let nx = x.cols();
    let gram = Matrix::from_fn(nx, nx, |i, j| {
        (0..x.rows()).map(|r| x.get(r, i) * x.get(r, j)).sum::<f64>() + if i == j { lambda } else { 0.0 }
    });
    let xty = Matrix::from_fn(nx, y.cols(), |i, j| (0..x.rows()).map(|r| x.get(r, i) * y.get(r, j)).sum());
    gauss_solve(&gram, &xty).transpose()
}

/// Posterior over joint assignments (one correct arm per context) by
/// enumeration, marginalised per context.
pub fn joint_enumeration(history: &[BanditStep], kc: usize, ka: usize, pc: f64, pi: f64) -> Matrix {
    let total = ka.pow(kc as u32);
    let mut marg = Matrix::zeros(kc, ka);
    let mut z = 0.0;
    for h in 0..total {
        let assign: Vec<usize> = (0..kc).map(|c| h / ka.pow(c as u32) % ka).collect();
        let lik: f64 = history
            .iter()
            .map(|s| {
                let p = if assign[s.context] == s.action { pc } else { pi };
                if s.reward == 1.0 { p } else { 1.0 - p }
            })
            .product();
        z += lik;
        for (c, &a) in assign.iter().enumerate() {
            marg.set(c, a, marg.get(c, a) + lik);
        }
    }
    marg.scale(1.0 / z)
}
