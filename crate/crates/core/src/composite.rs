//! The full learned optimizer: network prediction followed by the gauge map.

use crate::error::{Error, Result};
use crate::gauge::{gauge_for, gauge_map, GaugeData};
use crate::neural::{backward, forward, forward_with_cache, ModelParams};
use crate::problem::{DecisionVector, ProblemInstance};

/// A prediction together with its pre-gauge output.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub virtual_v: DecisionVector,
    pub u: DecisionVector,
}

fn check_output_width(params: &ModelParams) -> Result<()> {
    if params.hyper.d_out != 1 {
        return Err(Error::HyperParams(format!(
            "dispatch needs one output per agent, model has d_out = {}",
            params.hyper.d_out
        )));
    }
    Ok(())
}

/// Feasible decision for `instance`.
pub fn predict(params: &ModelParams, instance: &ProblemInstance) -> Result<DecisionVector> {
    Ok(predict_detailed(params, instance)?.u)
}

pub fn predict_detailed(params: &ModelParams, instance: &ProblemInstance) -> Result<Prediction> {
    check_output_width(params)?;
    let gd = gauge_for(instance)?;
    predict_with_gauge(params, instance, &gd)
}

pub fn predict_with_gauge(
    params: &ModelParams,
    instance: &ProblemInstance,
    gd: &GaugeData,
) -> Result<Prediction> {
    let v = DecisionVector(forward(params, instance)?);
    let u = gauge_map(gd, &v)?;
    Ok(Prediction { virtual_v: v, u })
}

/// Loss on the final decision and its gradient with respect to the parameters.
///
/// `loss` maps the decision `u` to `(value, ∂value/∂u)`.
pub fn loss_and_grad(
    params: &ModelParams,
    instance: &ProblemInstance,
    gd: &GaugeData,
    loss: impl Fn(&DecisionVector) -> Result<(f64, Vec<f64>)>,
) -> Result<(f64, ModelParams)> {
    check_output_width(params)?;
    let (v, cache) = forward_with_cache(params, instance)?;
    let u = gauge_map(gd, &DecisionVector(v.clone()))?;
    let (value, grad_u) = loss(&u)?;
    let grad_v = gd.map_vjp(&v, &grad_u)?;
    let grads = backward(params, &cache, &grad_v)?;
    Ok((value, grads))
}
