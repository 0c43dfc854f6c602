//! Raw array kernels used by the graph ops. None of these record anything.

use std::mem::MaybeUninit;

use super::array::{numel, Tensor};
use crate::error::{shape_err, Result};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

pub fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

pub fn selu_curv(x: f64) -> f64 {
    if x > 0.0 {
        0.0
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = acc;
        acc *= shape[d];
    }
    strides
}

/// Strides of `src` viewed at `out`'s rank, with zero stride on broadcast axes.
fn aligned_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(src);
    let offset = out.len() - src.len();
    (0..out.len())
        .map(|d| {
            if d < offset || src[d - offset] == 1 {
                0
            } else {
                own[d - offset]
            }
        })
        .collect()
}

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        out[d] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Visit every element of `shape`, passing the flat output index and the
/// matching offsets under two stride vectors.
fn strided2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    if numel(shape) == 0 {
        return;
    }
    let inner = shape[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
    loop {
        for j in 0..inner {
            f(o + j, oa + j * ia, ob + j * ib);
        }
        o += inner;
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

pub fn binary(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out = match broadcast_shape(a.shape(), b.shape()) {
        Some(s) => s,
        None => return shape_err(op, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape())),
    };
    if b.numel() == 1 && out == a.shape() {
        let y = b.data()[0];
        return Ok(Tensor::from_parts(out, a.data().iter().map(|&x| f(x, y)).collect()));
    }
    if a.numel() == 1 && out == b.shape() {
        let x = a.data()[0];
        return Ok(Tensor::from_parts(out, b.data().iter().map(|&y| f(x, y)).collect()));
    }
    let sa = aligned_strides(a.shape(), &out);
    let sb = aligned_strides(b.shape(), &out);
    let mut data = vec![0.0; numel(&out)];
    let (ad, bd) = (a.data(), b.data());
    strided2(&out, &sa, &sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Ok(Tensor::from_parts(out, data))
}

/// Sum `x` down to `target`, which must broadcast to `x`'s shape.
pub fn sum_to(x: &Tensor, target: &[usize]) -> Result<Tensor> {
    if x.shape() == target {
        return Ok(x.clone());
    }
    match broadcast_shape(x.shape(), target) {
        Some(s) if s == x.shape() => {}
        _ => return shape_err("sum_to", format!("{:?} does not reduce to {:?}", x.shape(), target)),
    }
    let st = aligned_strides(target, x.shape());
    let sx = contiguous_strides(x.shape());
    let mut out = vec![0.0; numel(target)];
    let xd = x.data();
    strided2(x.shape(), &st, &sx, |_, it, ix| out[it] += xd[ix]);
    Ok(Tensor::from_parts(target.to_vec(), out))
}

pub fn broadcast_to(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if x.shape() == shape {
        return Ok(x.clone());
    }
    match broadcast_shape(x.shape(), shape) {
        Some(s) if s == shape => {}
        _ => return shape_err("broadcast_to", format!("{:?} to {:?}", x.shape(), shape)),
    }
    let sx = aligned_strides(x.shape(), shape);
    let zero = vec![0; shape.len()];
    let mut out = vec![0.0; numel(shape)];
    let xd = x.data();
    strided2(shape, &sx, &zero, |o, ix, _| out[o] = xd[ix]);
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

/// Sum along `axis`, keeping it with extent 1.
pub fn sum_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return shape_err("sum_axis", format!("axis {} for shape {:?}", axis, x.shape()));
    }
    let (outer, n, inner) = split_at_axis(x.shape(), axis);
    let mut out = vec![0.0; outer * inner];
    let xd = x.data();
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for k in 0..n {
            let src = &xd[(o * n + k) * inner..(o * n + k + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    Ok(Tensor::from_parts(shape, out))
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = match parts.first() {
        Some(f) => *f,
        None => return shape_err("concat", "no inputs"),
    };
    if axis >= first.rank() {
        return shape_err("concat", format!("axis {} for shape {:?}", axis, first.shape()));
    }
    let mut total = 0;
    for p in parts {
        let same = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !same {
            return shape_err("concat", format!("{:?} vs {:?} on axis {}", p.shape(), first.shape(), axis));
        }
        total += p.shape()[axis];
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    Ok(Tensor::from_parts(shape, out))
}

pub fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    if axis >= x.rank() || start + len > x.shape()[axis] {
        return shape_err(
            "slice",
            format!("[{}..{}) on axis {} of {:?}", start, start + len, axis, x.shape()),
        );
    }
    let (outer, n, inner) = split_at_axis(x.shape(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    let xd = x.data();
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&xd[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Ok(Tensor::from_parts(shape, out))
}

/// Embed `x` into zeros of extent `total` along `axis`, starting at `start`.
pub fn pad(x: &Tensor, axis: usize, start: usize, total: usize) -> Result<Tensor> {
    if axis >= x.rank() || start + x.shape()[axis] > total {
        return shape_err("pad", format!("{:?} into {} at {} on axis {}", x.shape(), total, start, axis));
    }
    let (outer, len, inner) = split_at_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = total;
    let mut out = vec![0.0; numel(&shape)];
    let xd = x.data();
    for o in 0..outer {
        let dst = (o * total + start) * inner;
        out[dst..dst + len * inner].copy_from_slice(&xd[o * len * inner..(o + 1) * len * inner]);
    }
    Ok(Tensor::from_parts(shape, out))
}

/// Shape bookkeeping for `op(a) @ op(b)`.
pub struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
    pub shared_rhs: bool,
}

pub fn matmul_dims(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<MatmulDims> {
    if a.len() < 2 || b.len() < 2 {
        return shape_err("matmul", format!("operands need rank >= 2, got {:?} and {:?}", a, b));
    }
    let (ar, br) = (a.len(), b.len());
    let (m, ka) = if ta { (a[ar - 1], a[ar - 2]) } else { (a[ar - 2], a[ar - 1]) };
    let (kb, n) = if tb { (b[br - 1], b[br - 2]) } else { (b[br - 2], b[br - 1]) };
    if ka != kb {
        return shape_err("matmul", format!("inner dims {} vs {} ({:?} x {:?})", ka, kb, a, b));
    }
    let lead = &a[..ar - 2];
    let shared_rhs = br == 2;
    if !shared_rhs && &b[..br - 2] != lead {
        return shape_err("matmul", format!("batch dims differ: {:?} vs {:?}", a, b));
    }
    if shared_rhs && ta && ar > 2 {
        return shape_err("matmul", "transposed batched lhs with a shared rhs is not supported");
    }
    let mut out_shape = lead.to_vec();
    out_shape.push(m);
    out_shape.push(n);
    Ok(MatmulDims {
        batch: numel(lead),
        m,
        k: ka,
        n,
        out_shape,
        shared_rhs,
    })
}

/// `c = op(a) @ op(b)`, where `c` may be uninitialized: with beta = 0 the
/// kernel only writes it.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [MaybeUninit<f64>]) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths cover the m×k, k×n and m×n extents addressed by
    // the strides above; beta = 0 means `c` is never read.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr() as *mut f64,
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    let dims = matmul_dims(a.shape(), b.shape(), ta, tb)?;
    let MatmulDims { batch, m, k, n, .. } = dims;
    let total = batch * m * n;
    let mut out: Vec<f64> = Vec::with_capacity(total);
    let spare = &mut out.spare_capacity_mut()[..total];
    if dims.shared_rhs && !ta {
        gemm(batch * m, k, n, a.data(), false, b.data(), tb, spare);
    } else {
        for i in 0..batch {
            let bs = if dims.shared_rhs { 0 } else { i * k * n };
            gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..(i + 1) * m * k],
                ta,
                &b.data()[bs..bs + k * n],
                tb,
                &mut spare[i * m * n..(i + 1) * m * n],
            );
        }
    }
    // SAFETY: every one of the `total` slots was written by `gemm` (batch
    // blocks tile the buffer exactly).
    unsafe { out.set_len(total) };
    Ok(Tensor::from_parts(dims.out_shape, out))
}

fn rowwise(x: &Tensor, op: &'static str, f: impl Fn(&[f64], &mut [f64])) -> Result<Tensor> {
    if x.rank() == 0 {
        return shape_err(op, "needs rank >= 1");
    }
    let n = x.shape()[x.rank() - 1];
    let mut out = vec![0.0; x.numel()];
    if n > 0 {
        for (src, dst) in x.data().chunks(n).zip(out.chunks_mut(n)) {
            f(src, dst);
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    rowwise(x, "softmax", |src, dst| {
        let max = src.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    })
}

pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    rowwise(x, "log_softmax", |src, dst| {
        let max = src.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + src.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s - lse;
        }
    })
}
