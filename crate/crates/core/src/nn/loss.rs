//! Training objective: summed squared error per sample, averaged over the
//! batch, plus a kernel-norm penalty scaled by `lambda * (1 - p)^2`.

use super::params::{Gradients, ParamKind, ParameterStore};
use crate::error::{invalid, shape_err, Result};
use crate::image::Tensor;

/// Default regularization strength.
pub const DEFAULT_LAMBDA: f64 = 1e-4;

/// `(1 / N) * sum_i ||pred_i - target_i||^2` and its gradient
/// `(2 / N) (pred - target)`, with `N` the batch size.
pub fn data_term(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(shape_err!("prediction {:?} vs target {:?}", pred.shape(), target.shape()));
    }
    let n = pred.shape()[0] as f64;
    let diff: Vec<f64> = pred.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.iter().map(|d| 2.0 * d / n).collect();
    Ok((loss, Tensor::from_vec(pred.shape().to_vec(), grad)?))
}

fn reg_coeff(lambda: f64, p: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(invalid!("lambda must be non-negative, got {lambda}"));
    }
    Ok(lambda * (1.0 - p) * (1.0 - p))
}

/// Full objective and `dL/dpred`. The penalty covers convolution and
/// transposed-convolution kernels only.
pub fn training_loss(pred: &Tensor, target: &Tensor, params: &ParameterStore, lambda: f64, p: f64) -> Result<(f64, Tensor)> {
    let coeff = reg_coeff(lambda, p)?;
    let (data, grad) = data_term(pred, target)?;
    Ok((data + coeff * params.kernel_sq_norm(), grad))
}

/// Adds the penalty gradient `2 lambda (1 - p)^2 w` to every kernel slot.
pub fn add_regularizer_grad(params: &ParameterStore, grads: &mut Gradients, lambda: f64, p: f64) -> Result<()> {
    let coeff = reg_coeff(lambda, p)?;
    for (param, slot) in params.params().iter().zip(&mut grads.slots) {
        if param.kind == ParamKind::Kernel {
            for (g, w) in slot.data_mut().iter_mut().zip(param.value.data()) {
                *g += 2.0 * coeff * w;
            }
        }
    }
    Ok(())
}
