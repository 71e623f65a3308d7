//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward pass, so it stays
//! independent of the reverse sweep it is used to validate.

use super::{NodeId, Tape, Tensor};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst per-input relative error `||analytic - numeric|| / max(||analytic||, ||numeric||)`.
    pub max_relative_error: f64,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

/// Vector relative error. The denominator is floored at 1e-5 so a gradient
/// that is identically zero (e.g. a bias a softmax is invariant to) compares
/// rounding noise against rounding noise as a small number, not as 1.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn).max(1e-5);
    diff / denom
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `h`, for every input tensor.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| t.constant(v.clone())).collect();
        let root = f(&mut t, &ids)?;
        Ok(t.value(root).data()[0])
    };

    let mut t = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|v| t.leaf(v.clone(), true)).collect();
    let root = f(&mut t, &ids)?;
    let grads = t.backward(root)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|id| grads.get(*id).cloned().unwrap_or_else(|| Tensor::zeros(t.value(*id).shape())))
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * h);
        }
        numeric.push(g);
    }

    let max_relative_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a.data(), n.data()))
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_relative_error,
        analytic,
        numeric,
    })
}

/// Names of every primitive covered by [`check_primitive`].
pub const PRIMITIVES: [&str; 23] = [
    "add", "sub", "mul", "div", "matmul", "affine", "relu", "tanh", "exp", "log", "softplus", "square", "softmax",
    "logsumexp", "sum", "sum_axis", "mean", "mean_axis", "concat", "slice", "reshape", "transpose", "scale",
];

/// Finite-difference check of one primitive on random inputs drawn from
/// `seed`; returns the worst relative error. The op output is contracted
/// with a random weight so every output coordinate matters.
pub fn check_primitive(name: &str, seed: u64, h: f64) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (rng.gen_range(1..4), rng.gen_range(1..5));
    let mut rand_t = |shape: &[usize], lo: f64, hi: f64| {
        let len = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(lo..hi)).collect()).expect("valid shape")
    };
    // Inputs keep away from kinks and poles: relu gets |x| >= 0.1, log and
    // div denominators stay positive.
    let away = |t: Tensor| {
        let d = t.data().iter().map(|v| if v.abs() < 0.1 { v + 0.2 * v.signum() } else { *v }).collect();
        Tensor::new(t.shape().to_vec(), d).expect("same shape")
    };
    let k = 3;
    let inputs: Vec<Tensor> = match name {
        "matmul" => vec![rand_t(&[m, k], -1.0, 1.0), rand_t(&[k, n], -1.0, 1.0)],
        "affine" => vec![rand_t(&[m, k], -1.0, 1.0), rand_t(&[k, n], -1.0, 1.0), rand_t(&[n], -1.0, 1.0)],
        "add" | "sub" | "mul" => vec![rand_t(&[m, n], -2.0, 2.0), rand_t(&[m, n], -2.0, 2.0)],
        "div" => vec![rand_t(&[m, n], -2.0, 2.0), rand_t(&[m, n], 0.5, 2.0)],
        "log" => vec![rand_t(&[m, n], 0.2, 3.0)],
        "relu" => vec![away(rand_t(&[m, n], -2.0, 2.0))],
        "concat" => vec![rand_t(&[m, n], -1.0, 1.0), rand_t(&[m, 2], -1.0, 1.0)],
        "transpose" | "reshape" | "slice" | "sum_axis" | "mean_axis" => vec![rand_t(&[m, n + 1], -1.0, 1.0)],
        _ => vec![rand_t(&[m, n], -3.0, 3.0)],
    };
    let weight_len = match name {
        "matmul" | "affine" => m * n,
        "concat" => m * (n + 2),
        "logsumexp" => m,
        "sum" | "mean" => 1,
        "sum_axis" | "mean_axis" => n + 1,
        "slice" => m,
        _ => inputs[0].len(),
    };
    let weight: Vec<f64> = (0..weight_len).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let report = check_gradients(&inputs, h, |t, ids| {
        let out = match name {
            "add" => t.add(ids[0], ids[1])?,
            "sub" => t.sub(ids[0], ids[1])?,
            "mul" => t.mul(ids[0], ids[1])?,
            "div" => t.div(ids[0], ids[1])?,
            "matmul" => t.matmul(ids[0], ids[1])?,
            "affine" => t.affine(ids[0], ids[1], ids[2])?,
            "relu" => t.relu(ids[0])?,
            "tanh" => t.tanh(ids[0])?,
            "exp" => t.exp(ids[0])?,
            "log" => t.log(ids[0])?,
            "softplus" => t.softplus(ids[0])?,
            "square" => t.square(ids[0])?,
            "softmax" => t.softmax(ids[0])?,
            "logsumexp" => t.logsumexp(ids[0])?,
            "sum" => t.sum(ids[0])?,
            "sum_axis" => t.sum_axis(ids[0], 0)?,
            "mean" => t.mean(ids[0])?,
            "mean_axis" => t.mean_axis(ids[0], 0)?,
            "concat" => t.concat(&[ids[0], ids[1]], 1)?,
            "slice" => t.slice(ids[0], 1, 1, 2)?,
            "reshape" => {
                let len = t.value(ids[0]).len();
                t.reshape(ids[0], &[len])?
            }
            "transpose" => t.transpose(ids[0])?,
            "scale" => t.scale(ids[0], -1.7)?,
            other => return Err(crate::error::Error::Invalid(format!("unknown primitive `{other}`"))),
        };
        let shape = t.value(out).shape().to_vec();
        let w = t.constant(Tensor::new(shape, weight.clone())?);
        let y = t.mul(out, w)?;
        t.sum(y)
    })?;
    Ok(report.max_relative_error)
}
