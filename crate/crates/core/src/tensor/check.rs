use super::array::Tensor;
use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// Compare the recorded gradient of a scalar function against central
/// differences. Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps {} outside [1e-7, 1e-3]", eps)));
    }
    let analytic = {
        let g = Graph::new();
        let xv = g.leaf(x.clone());
        let y = f(&g, xv)?;
        g.grad(y, &[xv])?[0].value()
    };
    let eval = |probe: Tensor| -> Result<f64> {
        let g = Graph::new();
        let xv = g.leaf(probe);
        f(&g, xv)?.item()
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        if !numeric.is_finite() {
            return Err(Error::NonFinite("grad_check"));
        }
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
