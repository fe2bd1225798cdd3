//! Central finite-difference verification of analytic gradients.

use super::tape::Parameter;
use crate::error::{NrkgError, Result};

/// Maximum relative gradient error for each parameter.
///
/// `loss_fn` evaluates the loss at the given parameter values and writes the
/// analytic gradient into each parameter's `grad`. The error of one entry is
/// `|analytic - numeric| / max(1, |analytic|)`; frozen parameters report 0.
#[allow(clippy::needless_range_loop)]
pub fn grad_check_per_param<F>(params: &[Parameter], eps: f64, mut loss_fn: F) -> Result<Vec<f64>>
where
    F: FnMut(&mut [Parameter]) -> Result<f64>,
{
    let mut base = params.to_vec();
    let loss = loss_fn(&mut base)?;
    if !loss.is_finite() {
        return Err(NrkgError::Numeric(format!("loss {loss} at base point")));
    }
    let analytic: Vec<Vec<f64>> = base.iter().map(|p| p.grad.values().to_vec()).collect();

    let mut probe = params.to_vec();
    let mut worst = vec![0.0; params.len()];
    for k in 0..params.len() {
        if !params[k].trainable {
            continue;
        }
        for j in 0..params[k].value.len() {
            let x0 = params[k].value.values()[j];
            probe[k].value.values_mut()[j] = x0 + eps;
            let up = loss_fn(&mut probe)?;
            probe[k].value.values_mut()[j] = x0 - eps;
            let down = loss_fn(&mut probe)?;
            probe[k].value.values_mut()[j] = x0;
            if !up.is_finite() || !down.is_finite() {
                return Err(NrkgError::Numeric(format!(
                    "loss not finite while probing {}[{j}]",
                    params[k].name
                )));
            }
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[k][j];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst[k] = f64::max(worst[k], err);
        }
    }
    Ok(worst)
}

/// Maximum relative gradient error over every trainable parameter entry.
pub fn grad_check<F>(params: &[Parameter], eps: f64, loss_fn: F) -> Result<f64>
where
    F: FnMut(&mut [Parameter]) -> Result<f64>,
{
    Ok(grad_check_per_param(params, eps, loss_fn)?
        .into_iter()
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::tape::{backward_into, Tape};
    use crate::math::tensor::Tensor;

    #[test]
    fn sum_of_squares() {
        let params = vec![Parameter::new("x", Tensor::vector(vec![0.3, -1.2, 2.0]).unwrap())];
        let err = grad_check(&params, 1e-6, |ps| {
            let mut tape = Tape::new();
            let x = tape.param(0, &ps[0]);
            let sq = tape.square(x);
            let loss = tape.sum(sq);
            backward_into(&tape, loss, ps)?;
            Ok(tape.scalar(loss))
        })
        .unwrap();
        assert!(err <= 1e-7, "err {err}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let params = vec![Parameter::new("x", Tensor::vector(vec![1.0, 2.0]).unwrap())];
        let err = grad_check(&params, 1e-6, |ps| {
            ps.iter_mut().for_each(Parameter::zero_grad);
            Ok(4.2)
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let params = vec![Parameter::new("x", Tensor::scalar(1.0))];
        let err = grad_check(&params, 1e-6, |_| Ok(f64::NAN)).unwrap_err();
        assert!(matches!(err, NrkgError::Numeric(_)));
    }
}
