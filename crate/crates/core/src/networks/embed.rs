use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Transformer-style embedding of a scalar: `dim/2` sines followed by
/// `dim/2` cosines at frequencies `10000^(-i/(dim/2))`.
pub fn sinusoidal_embed(t: f64, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("embedding width {} must be even", dim)));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = 10000f64.powf(-(i as f64) / half as f64);
        out[i] = (t * w).sin();
        out[half + i] = (t * w).cos();
    }
    Ok(Tensor::from_vec(out))
}

/// `[B, dim]` embeddings of integer steps.
pub fn sinusoidal_batch(steps: &[usize], dim: usize) -> Result<Tensor> {
    let rows = steps.iter().map(|&t| sinusoidal_embed(t as f64, dim)).collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Tensor::zeros(&[0, dim]));
    }
    Tensor::stack(&rows)
}

/// `[B, classes + 1]` one-hot rows; `None` (and anything flagged
/// unconditional) selects the trailing null slot.
pub fn condition_onehot(labels: &[Option<usize>], classes: usize) -> Result<Tensor> {
    let width = classes + 1;
    let mut data = vec![0.0; labels.len() * width];
    for (i, l) in labels.iter().enumerate() {
        let slot = match *l {
            Some(c) if c < classes => c,
            Some(c) => return Err(Error::InvalidArgument(format!("label {} >= {} classes", c, classes))),
            None => classes,
        };
        data[i * width + slot] = 1.0;
    }
    Tensor::new(vec![labels.len(), width], data)
}

/// Fixed positional table `[len, dim]`.
pub fn positional_table(len: usize, dim: usize) -> Result<Tensor> {
    let rows = (0..len).map(|p| sinusoidal_embed(p as f64, dim)).collect::<Result<Vec<_>>>()?;
    Tensor::stack(&rows)
}
