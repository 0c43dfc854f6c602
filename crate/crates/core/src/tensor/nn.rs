//! Composite layers built from recorded primitives. Because they are
//! compositions, their first and second derivatives come for free.

use super::array::Tensor;
use super::graph::Var;
use crate::error::{shape_err, Result};

pub const NORM_EPS: f64 = 1e-5;

/// `x @ w + b` over the last axis of `x`.
pub fn linear<'g>(x: Var<'g>, w: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    x.matmul(w)?.add(b)
}

fn normalize_last<'g>(x: Var<'g>) -> Result<Var<'g>> {
    let last = x.shape().len() - 1;
    let centered = x.sub(x.mean_axis(last)?)?;
    let var = centered.square()?.mean_axis(last)?;
    centered.div(var.shift(NORM_EPS)?.sqrt()?)
}

/// Layer norm over the last axis with per-feature affine parameters.
pub fn layer_norm<'g>(x: Var<'g>, gamma: Var<'g>, beta: Var<'g>) -> Result<Var<'g>> {
    normalize_last(x)?.mul(gamma)?.add(beta)
}

/// Group norm for `[batch, channels]` activations: statistics are taken per
/// sample over each contiguous block of `channels / groups` features.
pub fn group_norm<'g>(x: Var<'g>, groups: usize, gamma: Var<'g>, beta: Var<'g>) -> Result<Var<'g>> {
    let shape = x.shape();
    if shape.len() != 2 || groups == 0 || shape[1] % groups != 0 {
        return shape_err(
            "group_norm",
            format!("{:?} cannot be split into {} groups", shape, groups),
        );
    }
    let (b, c) = (shape[0], shape[1]);
    let grouped = x.reshape(&[b, groups, c / groups])?;
    normalize_last(grouped)?
        .reshape(&[b, c])?
        .mul(gamma)?
        .add(beta)
}

/// Multiply by a caller-supplied keep mask (entries 0 or 1), rescaled by the
/// keep probability so the expectation is unchanged.
pub fn dropout<'g>(x: Var<'g>, mask: &Tensor, keep_prob: f64) -> Result<Var<'g>> {
    if mask.shape() != x.shape().as_slice() {
        return shape_err("dropout", format!("mask {:?} vs input {:?}", mask.shape(), x.shape()));
    }
    let scaled = mask.map(|m| m / keep_prob);
    x.mul(x.graph().leaf(scaled))
}

/// Softmax attention over `[batch, seq, dim]` query/key/value blocks.
pub fn scaled_dot_attention<'g>(q: Var<'g>, k: Var<'g>, v: Var<'g>) -> Result<Var<'g>> {
    let shape = q.shape();
    let dim = *shape.last().unwrap_or(&1);
    let scores = q.matmul_t(k, false, true)?.scale(1.0 / (dim as f64).sqrt())?;
    scores.softmax()?.matmul(v)
}

/// Multi-head self attention given a fused `[dim, 3·dim]` input projection.
pub fn multi_head_self_attention<'g>(
    x: Var<'g>,
    w_qkv: Var<'g>,
    b_qkv: Var<'g>,
    w_out: Var<'g>,
    b_out: Var<'g>,
    heads: usize,
) -> Result<Var<'g>> {
    let shape = x.shape();
    let dim = shape[shape.len() - 1];
    if heads == 0 || dim % heads != 0 {
        return shape_err("attention", format!("width {} not divisible by {} heads", dim, heads));
    }
    let axis = shape.len() - 1;
    let head_dim = dim / heads;
    let qkv = linear(x, w_qkv, b_qkv)?;
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = qkv.slice(axis, h * head_dim, head_dim)?;
        let k = qkv.slice(axis, dim + h * head_dim, head_dim)?;
        let v = qkv.slice(axis, 2 * dim + h * head_dim, head_dim)?;
        outputs.push(scaled_dot_attention(q, k, v)?);
    }
    let merged = if heads == 1 { outputs[0] } else { Var::concat(&outputs, axis)? };
    linear(merged, w_out, b_out)
}

/// Mean softmax cross entropy of `[batch, classes]` logits.
pub fn cross_entropy<'g>(logits: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return shape_err("cross_entropy", format!("logits {:?} for {} labels", shape, labels.len()));
    }
    let classes = shape[1];
    let mut onehot = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return shape_err("cross_entropy", format!("label {} >= {}", l, classes));
        }
        onehot[i * classes + l] = 1.0;
    }
    let target = logits.graph().leaf(Tensor::new(shape.clone(), onehot)?);
    logits
        .log_softmax()?
        .mul(target)?
        .sum()?
        .scale(-1.0 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    #[test]
    fn layer_norm_output_is_standardized() {
        let g = Graph::new();
        let x = g.leaf(Tensor::from_fn(&[3, 8], |i| (i as f64 * 0.7).sin() * 5.0 + 2.0));
        let gamma = g.leaf(Tensor::ones(&[8]));
        let beta = g.leaf(Tensor::zeros(&[8]));
        let y = layer_norm(x, gamma, beta).unwrap().value();
        for row in y.data().chunks(8) {
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn group_norm_rejects_bad_groups() {
        let g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 6]));
        let gamma = g.leaf(Tensor::ones(&[6]));
        let beta = g.leaf(Tensor::zeros(&[6]));
        assert!(group_norm(x, 4, gamma, beta).is_err());
        assert!(group_norm(x, 3, gamma, beta).is_ok());
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        let g = Graph::new();
        let q = g.leaf(Tensor::from_fn(&[1, 4, 2], |i| i as f64 * 0.3));
        let k = g.leaf(Tensor::from_fn(&[1, 4, 2], |i| (i as f64).cos()));
        let v = g.leaf(Tensor::ones(&[1, 4, 2]));
        let out = scaled_dot_attention(q, k, v).unwrap().value();
        for &o in out.data() {
            assert!((o - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let g = Graph::new();
        let logits = g.leaf(Tensor::zeros(&[2, 4]));
        let ce = cross_entropy(logits, &[0, 3]).unwrap();
        assert!((ce.item().unwrap() - 4f64.ln()).abs() < 1e-12);
    }
}
