//! Central finite differences against the analytic gradients.
//!
//! A coordinate passes when its relative error is at most [`REL_TOL`], or,
//! when both values are below [`ABS_FLOOR`] in magnitude, when the absolute
//! error is at most [`ABS_TOL`]. [`error_metric`] folds both rules into one
//! number that passes iff it is `<= REL_TOL`.

use std::fmt;

use crate::error::Result;
use crate::network::{loss, loss_gradient, LossKind, Network};
use crate::tensor::DenseTensor;
use crate::training::{evaluate, gradients, Dataset, LayerGradient};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-6;
pub const ABS_TOL: f64 = 1e-8;
pub const ABS_FLOOR: f64 = 1e-6;

/// `(f(x + h) − f(x − h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

pub fn error_metric(analytic: f64, numeric: f64) -> f64 {
    let err = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < ABS_FLOOR {
        err * (REL_TOL / ABS_TOL)
    } else {
        err / scale
    }
}

pub fn max_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| error_metric(a, n))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `f` at every coordinate of `x`.
pub fn numeric_gradient(
    x: &DenseTensor,
    h: f64,
    mut f: impl FnMut(&DenseTensor) -> Result<f64>,
) -> Result<DenseTensor> {
    let mut probe = x.clone();
    let mut grad = DenseTensor::zeros(x.dims());
    for i in 0..x.len() {
        let x0 = x.data()[i];
        grad.data_mut()[i] = central_difference(
            |v| {
                probe.data_mut()[i] = v;
                f(&probe)
            },
            x0,
            h,
        )?;
        probe.data_mut()[i] = x0;
    }
    Ok(grad)
}

/// Finite-difference filter and bias gradients of the batch loss.
pub fn numeric_gradients(
    net: &Network,
    data: &Dataset,
    kind: LossKind,
    h: f64,
) -> Result<Vec<LayerGradient>> {
    let mut probe = net.clone();
    (0..net.depth())
        .map(|l| {
            let layer = net.layer(l);
            let filter = numeric_gradient(&layer.filter.filter, h, |f| {
                probe.set_filter(l, f.clone())?;
                evaluate(&probe, data, kind)
            })?;
            probe.set_filter(l, layer.filter.filter.clone())?;
            let bias = numeric_gradient(&layer.bias, h, |b| {
                probe.set_bias(l, b.clone())?;
                evaluate(&probe, data, kind)
            })?;
            probe.set_bias(l, layer.bias.clone())?;
            Ok(LayerGradient { filter, bias })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Filter,
    Bias,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamKind::Filter => "filter",
            ParamKind::Bias => "bias",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    /// 1-based layer index.
    pub layer: usize,
    pub kind: ParamKind,
    pub max_error: f64,
}

impl ParamReport {
    pub fn passed(&self) -> bool {
        self.max_error <= REL_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    /// Worst error of the loss gradient against finite differences of the loss.
    pub loss_gradient_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(ParamReport::passed) && self.loss_gradient_error <= REL_TOL
    }

    pub fn worst(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_error)
            .fold(self.loss_gradient_error, f64::max)
    }
}

/// Compares per-layer analytic gradients with numeric ones.
pub fn compare(analytic: &[LayerGradient], numeric: &[LayerGradient]) -> Vec<ParamReport> {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .flat_map(|(l, (a, n))| {
            [
                ParamReport {
                    layer: l + 1,
                    kind: ParamKind::Filter,
                    max_error: max_error(a.filter.data(), n.filter.data()),
                },
                ParamReport {
                    layer: l + 1,
                    kind: ParamKind::Bias,
                    max_error: max_error(a.bias.data(), n.bias.data()),
                },
            ]
        })
        .collect()
}

/// Worst error of [`loss_gradient`] against finite differences of [`loss`].
pub fn check_loss_gradient(kind: LossKind, x: &DenseTensor, y: &DenseTensor, h: f64) -> Result<f64> {
    let analytic = loss_gradient(kind, x, y)?;
    let numeric = numeric_gradient(x, h, |p| loss(kind, p, y))?;
    Ok(max_error(analytic.data(), numeric.data()))
}

/// Full audit of a network on a dataset: every filter and bias gradient, and
/// the loss gradient at each sample's prediction.
pub fn check_network(net: &Network, data: &Dataset, kind: LossKind) -> Result<GradCheckReport> {
    let analytic = gradients(net, data, kind)?;
    let numeric = numeric_gradients(net, data, kind, STEP)?;
    let mut loss_gradient_error: f64 = 0.0;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let pred = net.predict(x)?;
        loss_gradient_error = loss_gradient_error.max(check_loss_gradient(kind, &pred, y, STEP)?);
    }
    Ok(GradCheckReport {
        params: compare(&analytic, &numeric),
        loss_gradient_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_cubic() {
        let d = central_difference(|x| Ok(x * x * x), 2.0, 1e-5).unwrap();
        assert!((d - 12.0).abs() < 1e-8);
    }

    #[test]
    fn error_metric_switches_to_absolute_near_zero() {
        assert_eq!(error_metric(0.0, 0.0), 0.0);
        assert!(error_metric(1e-9, 5e-9) <= REL_TOL);
        assert!(error_metric(0.0, 5e-8) > REL_TOL);
        assert!(error_metric(1.0, 1.0 + 5e-7) <= REL_TOL);
        assert!(error_metric(1.0, 1.0 + 5e-6) > REL_TOL);
    }
}
