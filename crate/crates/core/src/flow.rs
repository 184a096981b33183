//! Flow-matching path, target, loss and an Euler sampler.

use crate::error::{AttnError, Result};
use crate::tensor::{AttnTensor, Scalar};

/// A point on the linear path from noise `x0` (t = 0) to data `x1` (t = 1).
#[derive(Debug, Clone)]
pub struct FlowState<T> {
    pub x0: AttnTensor<T>,
    pub x1: AttnTensor<T>,
    pub t: f64,
}

impl<T: Scalar> FlowState<T> {
    pub fn new(x0: AttnTensor<T>, x1: AttnTensor<T>, t: f64) -> Result<Self> {
        if x0.dims() != x1.dims() {
            return Err(AttnError::Shape(format!(
                "x0 {} and x1 {} differ",
                x0.dims(),
                x1.dims()
            )));
        }
        check_t(t)?;
        Ok(FlowState { x0, x1, t })
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(AttnError::Invalid(format!("timestep {t} outside [0, 1]")));
    }
    Ok(())
}

/// `(1 - t) x0 + t x1`. The endpoints return the inputs exactly.
pub fn interpolate<T: Scalar>(state: &FlowState<T>) -> Result<AttnTensor<T>> {
    check_t(state.t)?;
    if state.t == 0.0 {
        return Ok(state.x0.clone());
    }
    if state.t == 1.0 {
        return Ok(state.x1.clone());
    }
    let t = T::from_f64(state.t);
    let s = T::from_f64(1.0 - state.t);
    state.x0.zip_with(&state.x1, |a, b| s * a + t * b)
}

/// `x1 - x0`.
pub fn velocity_target<T: Scalar>(x0: &AttnTensor<T>, x1: &AttnTensor<T>) -> Result<AttnTensor<T>> {
    x1.zip_with(x0, |b, a| b - a)
}

/// Mean over elements of `(pred - (x1 - x0))^2`, accumulated in f64.
pub fn fm_loss<T: Scalar>(
    pred: &AttnTensor<T>,
    x0: &AttnTensor<T>,
    x1: &AttnTensor<T>,
) -> Result<f64> {
    let target = velocity_target(x0, x1)?;
    if pred.dims() != target.dims() {
        return Err(AttnError::Shape(format!(
            "prediction {} vs target {}",
            pred.dims(),
            target.dims()
        )));
    }
    let n = pred.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let e = p.as_f64() - t.as_f64();
            e * e
        })
        .sum();
    Ok(sum / n as f64)
}

/// Integrates `dx/dt = velocity(x, t)` from `t = 0` to `t = 1` with
/// `steps` forward-Euler steps.
pub fn euler_sample<T, F>(
    mut velocity: F,
    x0: &AttnTensor<T>,
    steps: usize,
) -> Result<AttnTensor<T>>
where
    T: Scalar,
    F: FnMut(&AttnTensor<T>, f64) -> AttnTensor<T>,
{
    if steps == 0 {
        return Err(AttnError::Invalid(
            "euler_sample needs at least one step".into(),
        ));
    }
    let dt = T::from_f64(1.0 / steps as f64);
    let mut x = x0.clone();
    for k in 0..steps {
        let v = velocity(&x, k as f64 / steps as f64);
        if v.dims() != x.dims() {
            return Err(AttnError::Shape(format!(
                "velocity returned {} for state {}",
                v.dims(),
                x.dims()
            )));
        }
        x = x.zip_with(&v, |a, b| a + dt * b)?;
    }
    Ok(x)
}
