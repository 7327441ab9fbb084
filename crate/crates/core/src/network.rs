//! Layer-level building blocks: activations, convolutional layers, pooling,
//! feature maps and the regression losses.

use std::fmt;
use std::str::FromStr;

use crate::convolution::{convolve, ConvGeometry, FilterSpec};
use crate::error::{Error, Result};
use crate::tensor::{flat_offset, stack_last, unravel, volume, DenseTensor};

/// Scalar activation applied coordinate-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Sigmoid,
    Relu,
    Tanh,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Identity,
        Activation::Sigmoid,
        Activation::Relu,
        Activation::Tanh,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Slope of the scalar rule. ReLU takes slope 0 at the kink.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "sigmoid" | "logistic" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

pub fn activate(kind: Activation, t: &DenseTensor) -> DenseTensor {
    t.map(|x| kind.apply(x))
}

/// Coordinate-wise `φ′`. The full `∇φ` is diagonal, so this tensor carries
/// all of it.
pub fn activate_derivative(kind: Activation, t: &DenseTensor) -> DenseTensor {
    t.map(|x| kind.derivative(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Average,
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(PoolKind::Max),
            "average" | "avg" | "mean" => Ok(PoolKind::Average),
            other => Err(Error::Config(format!("unknown pooling kind `{other}`"))),
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolKind::Max => "max",
            PoolKind::Average => "average",
        })
    }
}

/// Stride-1 pooling window. Each output coordinate reduces the
/// `k̃_1 × ... × k̃_q` sub-array anchored at it, so `ñ_i = n_i − k̃_i + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: Vec<usize>,
    pub kind: PoolKind,
}

impl PoolSpec {
    pub fn new(window: Vec<usize>, kind: PoolKind) -> Self {
        Self { window, kind }
    }

    pub fn output_dims(&self, dims: &[usize]) -> Result<Vec<usize>> {
        if dims.len() != self.window.len() {
            return Err(Error::Geometry(format!(
                "pool window {:?} does not match tensor order {}",
                self.window,
                dims.len()
            )));
        }
        dims.iter()
            .zip(&self.window)
            .map(|(&n, &k)| {
                if k == 0 || k > n {
                    Err(Error::Geometry(format!(
                        "pool window {:?} does not fit dims {:?}",
                        self.window, dims
                    )))
                } else {
                    Ok(n - k + 1)
                }
            })
            .collect()
    }

    /// Same pooling applied independently to each slice of a trailing order.
    pub(crate) fn batched(&self) -> PoolSpec {
        let mut window = self.window.clone();
        window.push(1);
        PoolSpec {
            window,
            kind: self.kind,
        }
    }

    /// Flat input offsets of the window anchored at each output position.
    fn windows<'a>(
        &'a self,
        dims: &'a [usize],
        out_dims: &'a [usize],
    ) -> impl Iterator<Item = Vec<usize>> + 'a {
        let q = dims.len();
        let win_len = volume(&self.window);
        let (mut anchor, mut w, mut src) = (vec![0; q], vec![0; q], vec![0; q]);
        (0..volume(out_dims)).map(move |out_off| {
            unravel(out_dims, out_off, &mut anchor);
            (0..win_len)
                .map(|w_off| {
                    unravel(&self.window, w_off, &mut w);
                    for axis in 0..q {
                        src[axis] = anchor[axis] + w[axis];
                    }
                    flat_offset(dims, &src)
                })
                .collect()
        })
    }
}

pub fn pool(spec: &PoolSpec, t: &DenseTensor) -> Result<DenseTensor> {
    let out_dims = spec.output_dims(t.dims())?;
    let scale = 1.0 / volume(&spec.window) as f64;
    let data = t.data();
    let values = spec
        .windows(t.dims(), &out_dims)
        .map(|win| match spec.kind {
            PoolKind::Max => win
                .iter()
                .map(|&o| data[o])
                .fold(f64::NEG_INFINITY, f64::max),
            PoolKind::Average => scale * win.iter().map(|&o| data[o]).sum::<f64>(),
        })
        .collect();
    DenseTensor::new(out_dims, values)
}

/// Routes `upstream` (shaped like `pool(spec, t)`) back onto `t`'s dims.
///
/// Max pooling sends each upstream value to the first maximal position of
/// its window; average pooling spreads it evenly. Overlapping windows
/// accumulate.
pub fn pool_backward(spec: &PoolSpec, t: &DenseTensor, upstream: &DenseTensor) -> Result<DenseTensor> {
    let out_dims = spec.output_dims(t.dims())?;
    if upstream.dims() != out_dims.as_slice() {
        return Err(Error::Geometry(format!(
            "upstream dims {:?} do not match pooled dims {:?}",
            upstream.dims(),
            out_dims
        )));
    }
    let scale = 1.0 / volume(&spec.window) as f64;
    let data = t.data();
    let mut grad = DenseTensor::zeros(t.dims());
    let acc = grad.data_mut();
    for (win, &u) in spec.windows(t.dims(), &out_dims).zip(upstream.data()) {
        match spec.kind {
            PoolKind::Max => {
                let mut best = win[0];
                for &o in &win[1..] {
                    if data[o] > data[best] {
                        best = o;
                    }
                }
                acc[best] += u;
            }
            PoolKind::Average => {
                for &o in &win {
                    acc[o] += scale * u;
                }
            }
        }
    }
    Ok(grad)
}

/// Regression loss between a prediction `X` and a target `Y`, each averaged
/// over the `m` coordinates of the output space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `(1/m)‖X − Y‖²`
    Mse,
    /// `(1/m) Σ |X − Y|`
    Mae,
    /// `(1/m) Σ log cosh(X − Y)`
    LogCosh,
    /// `(1/m) Σ [log(X + 1) − log(Y + 1)]²`
    Msle,
    /// `(1/m) Σ X − X log Y`
    Poisson,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Mse,
        LossKind::Mae,
        LossKind::LogCosh,
        LossKind::Msle,
        LossKind::Poisson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::LogCosh => "lch",
            LossKind::Msle => "msle",
            LossKind::Poisson => "poi",
        }
    }

    fn check_domain(self, x: &DenseTensor, y: &DenseTensor) -> Result<()> {
        if x.dims() != y.dims() {
            return Err(Error::mismatch(y.dims(), x.dims()));
        }
        match self {
            LossKind::Msle => {
                if let Some(v) = x.data().iter().chain(y.data()).find(|&&v| v <= -1.0) {
                    return Err(Error::Domain(format!(
                        "msle needs every coordinate > -1, found {v}"
                    )));
                }
            }
            LossKind::Poisson => {
                if let Some(v) = y.data().iter().find(|&&v| v <= 0.0) {
                    return Err(Error::Domain(format!(
                        "poisson needs every target coordinate > 0, found {v}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            "lch" | "logcosh" | "log-cosh" => Ok(LossKind::LogCosh),
            "msle" => Ok(LossKind::Msle),
            "poi" | "poisson" => Ok(LossKind::Poisson),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

fn log_cosh(d: f64) -> f64 {
    let a = d.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

pub fn loss(kind: LossKind, x: &DenseTensor, y: &DenseTensor) -> Result<f64> {
    kind.check_domain(x, y)?;
    let m = x.len() as f64;
    let pairs = x.data().iter().zip(y.data());
    let total: f64 = match kind {
        LossKind::Mse => pairs.map(|(a, b)| (a - b) * (a - b)).sum(),
        LossKind::Mae => pairs.map(|(a, b)| (a - b).abs()).sum(),
        LossKind::LogCosh => pairs.map(|(a, b)| log_cosh(a - b)).sum(),
        LossKind::Msle => pairs
            .map(|(a, b)| {
                let d = a.ln_1p() - b.ln_1p();
                d * d
            })
            .sum(),
        LossKind::Poisson => pairs.map(|(a, b)| a - a * b.ln()).sum(),
    };
    Ok(total / m)
}

/// Gradient of [`loss`] with respect to the prediction `x`.
pub fn loss_gradient(kind: LossKind, x: &DenseTensor, y: &DenseTensor) -> Result<DenseTensor> {
    kind.check_domain(x, y)?;
    let m = x.len() as f64;
    x.zip_with(y, |a, b| match kind {
        LossKind::Mse => 2.0 * (a - b) / m,
        LossKind::Mae => {
            let d = a - b;
            if d > 0.0 {
                1.0 / m
            } else if d < 0.0 {
                -1.0 / m
            } else {
                0.0
            }
        }
        LossKind::LogCosh => (a - b).tanh() / m,
        LossKind::Msle => 2.0 * (a.ln_1p() - b.ln_1p()) / ((a + 1.0) * m),
        LossKind::Poisson => (1.0 - b.ln()) / m,
    })
}

/// Mean loss over `p` prediction/target pairs.
pub fn batch_loss(kind: LossKind, predictions: &[DenseTensor], targets: &[DenseTensor]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (x, y) in predictions.iter().zip(targets) {
        total += loss(kind, x, y)?;
    }
    Ok(total / predictions.len() as f64)
}

/// One convolutional layer `φ(F ⋆ X + B)`, optionally followed by pooling of
/// its activated output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    pub filter: FilterSpec,
    pub bias: DenseTensor,
    pub activation: Activation,
    pub pool: Option<PoolSpec>,
}

impl LayerConfig {
    pub fn new(filter: FilterSpec, bias: DenseTensor, activation: Activation) -> Self {
        Self {
            filter,
            bias,
            activation,
            pool: None,
        }
    }

    pub fn with_pool(mut self, pool: PoolSpec) -> Self {
        self.pool = Some(pool);
        self
    }
}

/// Returns the pre-activation `K = F ⋆ x + B` and the activated output `φ(K)`.
/// Pooling is not applied here.
pub fn layer_forward(cfg: &LayerConfig, x: &DenseTensor) -> Result<(DenseTensor, DenseTensor)> {
    let conv = convolve(&cfg.filter, x)?;
    if conv.dims() != cfg.bias.dims() {
        return Err(Error::Geometry(format!(
            "bias dims {:?} differ from convolution output dims {:?}",
            cfg.bias.dims(),
            conv.dims()
        )));
    }
    let pre = conv.add(&cfg.bias)?;
    let out = activate(cfg.activation, &pre);
    Ok((pre, out))
}

/// Stacks the activated feature maps `φ(F_α ⋆ x + B_α)` along a new
/// trailing order of length `m = filters.len()`.
pub fn feature_map_forward(
    filters: &[FilterSpec],
    biases: &[DenseTensor],
    kind: Activation,
    x: &DenseTensor,
) -> Result<DenseTensor> {
    if filters.is_empty() {
        return Err(Error::Geometry("feature map needs at least one filter".into()));
    }
    if filters.len() != biases.len() {
        return Err(Error::Geometry(format!(
            "{} filters but {} biases",
            filters.len(),
            biases.len()
        )));
    }
    let geom = filters[0].geometry(x.dims())?;
    let maps = filters
        .iter()
        .zip(biases)
        .map(|(spec, bias)| {
            if spec.geometry(x.dims())? != geom {
                return Err(Error::Geometry(
                    "feature-map filters must share one geometry".into(),
                ));
            }
            let cfg = LayerConfig::new(spec.clone(), bias.clone(), kind);
            layer_forward(&cfg, x).map(|(_, out)| out)
        })
        .collect::<Result<Vec<_>>>()?;
    stack_last(&maps)
}

/// A chain of convolutional layers with validated geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dims: Vec<usize>,
    layers: Vec<LayerConfig>,
    geometries: Vec<ConvGeometry>,
}

impl Network {
    /// Checks that each layer's input dims equal the previous layer's
    /// (pooled) output dims and that biases match their convolution outputs.
    pub fn new(input_dims: Vec<usize>, layers: Vec<LayerConfig>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Geometry("network needs at least one layer".into()));
        }
        let mut dims = input_dims.clone();
        let mut geometries = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            let at = |e: Error| match e {
                Error::Geometry(msg) => Error::Geometry(format!("layer {}: {msg}", l + 1)),
                other => other,
            };
            let geom = layer.filter.geometry(&dims).map_err(at)?;
            if layer.bias.dims() != geom.output_dims.as_slice() {
                return Err(at(Error::Geometry(format!(
                    "bias dims {:?} differ from convolution output dims {:?}",
                    layer.bias.dims(),
                    geom.output_dims
                ))));
            }
            dims = match &layer.pool {
                Some(p) => p.output_dims(&geom.output_dims).map_err(at)?,
                None => geom.output_dims.clone(),
            };
            geometries.push(geom);
        }
        Ok(Self {
            input_dims,
            layers,
            geometries,
        })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn output_dims(&self) -> Vec<usize> {
        let last = self.layers.len() - 1;
        let conv = &self.geometries[last].output_dims;
        match &self.layers[last].pool {
            Some(p) => p.output_dims(conv).expect("validated at construction"),
            None => conv.clone(),
        }
    }

    /// Number of layers `k`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerConfig] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerConfig {
        &self.layers[l]
    }

    pub fn geometry(&self, l: usize) -> &ConvGeometry {
        &self.geometries[l]
    }

    /// Replaces the filter coefficients of layer `l` (0-based).
    pub fn set_filter(&mut self, l: usize, filter: DenseTensor) -> Result<()> {
        let cur = &mut self.layers[l].filter.filter;
        if cur.dims() != filter.dims() {
            return Err(Error::mismatch(cur.dims(), filter.dims()));
        }
        *cur = filter;
        Ok(())
    }

    /// Replaces the bias of layer `l` (0-based).
    pub fn set_bias(&mut self, l: usize, bias: DenseTensor) -> Result<()> {
        let cur = &mut self.layers[l].bias;
        if cur.dims() != bias.dims() {
            return Err(Error::mismatch(cur.dims(), bias.dims()));
        }
        *cur = bias;
        Ok(())
    }

    /// Network output for a single input.
    pub fn predict(&self, input: &DenseTensor) -> Result<DenseTensor> {
        if input.dims() != self.input_dims.as_slice() {
            return Err(Error::Geometry(format!(
                "input dims {:?} differ from network input dims {:?}",
                input.dims(),
                self.input_dims
            )));
        }
        let mut z = input.clone();
        for layer in &self.layers {
            let (_, out) = layer_forward(layer, &z)?;
            z = match &layer.pool {
                Some(p) => pool(p, &out)?,
                None => out,
            };
        }
        Ok(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> DenseTensor {
        DenseTensor::vector(v)
    }

    #[test]
    fn activation_examples() {
        assert_eq!(activate(Activation::Relu, &t1(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let zero = DenseTensor::zeros(&[2, 3]);
        assert!(activate(Activation::Sigmoid, &zero).data().iter().all(|&v| v == 0.5));
        let x = t1(&[-3.5, 0.25, 9.0]);
        assert_eq!(activate(Activation::Identity, &x), x);
    }

    #[test]
    fn derivative_examples() {
        let x = t1(&[-2.0, 0.0, 3.0]);
        assert!(activate_derivative(Activation::Identity, &x).data().iter().all(|&v| v == 1.0));
        assert_eq!(Activation::Sigmoid.derivative(0.0), 0.25);
        let h = 1e-6;
        let fd = (Activation::Sigmoid.apply(h) - Activation::Sigmoid.apply(-h)) / (2.0 * h);
        assert!((fd - 0.25).abs() < 1e-10);
        assert_eq!(Activation::Relu.derivative(-1.0), 0.0);
        assert_eq!(Activation::Relu.derivative(2.0), 1.0);
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(Activation::Sigmoid.apply(-800.0), 0.0);
        assert_eq!(Activation::Sigmoid.apply(800.0), 1.0);
    }

    #[test]
    fn layer_forward_examples() {
        let u = t1(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let zero = LayerConfig::new(
            FilterSpec::valid(t1(&[0.0, 0.0])),
            DenseTensor::zeros(&[4]),
            Activation::Identity,
        );
        let (_, out) = layer_forward(&zero, &u).unwrap();
        assert_eq!(out, DenseTensor::zeros(&[4]));

        let cfg = LayerConfig::new(
            FilterSpec::valid(t1(&[1.0, 2.0])),
            DenseTensor::filled(&[4], 1.0),
            Activation::Identity,
        );
        let (k, out) = layer_forward(&cfg, &u).unwrap();
        assert_eq!(k.data(), &[6.0, 9.0, 12.0, 15.0]);
        assert_eq!(out, k);

        let mut relu = cfg.clone();
        relu.filter.filter = t1(&[-1.0, -2.0]);
        relu.bias = DenseTensor::zeros(&[4]);
        relu.activation = Activation::Relu;
        let flip = DenseTensor::vector(&[1.0, -1.0, 1.0, -1.0]);
        let (k, _) = layer_forward(&relu, &u).unwrap();
        assert_eq!(k.data(), &[-5.0, -8.0, -11.0, -14.0]);
        // Sign-flipped pre-activation [−5, 8, −11, 14] through relu.
        let flipped = k.hadamard(&flip).unwrap();
        assert_eq!(activate(Activation::Relu, &flipped).data(), &[0.0, 8.0, 0.0, 14.0]);
    }

    #[test]
    fn layer_forward_rejects_bad_bias() {
        let cfg = LayerConfig::new(
            FilterSpec::valid(t1(&[1.0, 2.0])),
            DenseTensor::zeros(&[5]),
            Activation::Identity,
        );
        assert!(matches!(
            layer_forward(&cfg, &t1(&[1.0; 5])),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn pool_examples() {
        let max2 = PoolSpec::new(vec![2], PoolKind::Max);
        assert_eq!(pool(&max2, &t1(&[1.0, 3.0, 2.0, 5.0])).unwrap().data(), &[3.0, 3.0, 5.0]);
        let avg = PoolSpec::new(vec![2, 2], PoolKind::Average);
        let c = DenseTensor::filled(&[3, 4], 1.5);
        assert_eq!(pool(&avg, &c).unwrap(), DenseTensor::filled(&[2, 3], 1.5));
        let unit = PoolSpec::new(vec![1, 1], PoolKind::Max);
        let t = DenseTensor::from_fn(&[2, 3], |i| (i[0] * 3 + i[1]) as f64);
        assert_eq!(pool(&unit, &t).unwrap(), t);
        assert!(pool(&PoolSpec::new(vec![5], PoolKind::Max), &t1(&[1.0; 4])).is_err());
    }

    #[test]
    fn pool_backward_examples() {
        let avg = PoolSpec::new(vec![2], PoolKind::Average);
        let g = pool_backward(&avg, &t1(&[1.0, 2.0, 3.0]), &t1(&[1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[0.5, 1.0, 0.5]);
        let max = PoolSpec::new(vec![2], PoolKind::Max);
        let g = pool_backward(&max, &t1(&[1.0, 3.0, 2.0]), &t1(&[1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, 0.0]);
        let unit = PoolSpec::new(vec![1], PoolKind::Max);
        let up = t1(&[0.5, -2.0, 4.0]);
        assert_eq!(pool_backward(&unit, &t1(&[1.0, 2.0, 3.0]), &up).unwrap(), up);
    }

    #[test]
    fn max_pool_ties_go_to_first_position() {
        let max = PoolSpec::new(vec![3], PoolKind::Max);
        let g = pool_backward(&max, &t1(&[2.0, 2.0, 2.0]), &t1(&[1.0])).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn feature_maps() {
        let u = t1(&[1.0, 2.0, 3.0]);
        let f1 = FilterSpec::valid(t1(&[1.0, 0.0]));
        let f2 = FilterSpec::valid(t1(&[0.0, 1.0]));
        let b = DenseTensor::zeros(&[2]);
        let maps = feature_map_forward(&[f1.clone(), f2], &[b.clone(), b.clone()], Activation::Identity, &u)
            .unwrap();
        assert_eq!(maps.dims(), &[2, 2]);
        assert_eq!(maps.slice_last(1).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(maps.slice_last(2).unwrap().data(), &[2.0, 3.0]);

        let single = feature_map_forward(&[f1.clone()], &[b.clone()], Activation::Tanh, &u).unwrap();
        let cfg = LayerConfig::new(f1.clone(), b.clone(), Activation::Tanh);
        assert_eq!(single.slice_last(1).unwrap(), layer_forward(&cfg, &u).unwrap().1);

        let twins = feature_map_forward(&[f1.clone(), f1], &[b.clone(), b], Activation::Sigmoid, &u).unwrap();
        assert_eq!(twins.slice_last(1).unwrap(), twins.slice_last(2).unwrap());
    }

    #[test]
    fn loss_examples() {
        let x = t1(&[1.0, 2.0]);
        let y = DenseTensor::zeros(&[2]);
        assert_eq!(loss(LossKind::Mse, &x, &y).unwrap(), 2.5);
        for kind in [LossKind::Mse, LossKind::Mae, LossKind::LogCosh, LossKind::Msle] {
            assert_eq!(loss(kind, &x, &x).unwrap(), 0.0, "{kind}");
        }
        assert_eq!(loss(LossKind::Poisson, &t1(&[2.0]), &t1(&[1.0])).unwrap(), 2.0);
    }

    #[test]
    fn loss_domains() {
        let bad = t1(&[-1.5]);
        let ok = t1(&[0.5]);
        assert!(matches!(loss(LossKind::Msle, &bad, &ok), Err(Error::Domain(_))));
        assert!(matches!(loss(LossKind::Msle, &ok, &bad), Err(Error::Domain(_))));
        assert!(matches!(loss(LossKind::Poisson, &ok, &t1(&[0.0])), Err(Error::Domain(_))));
        assert!(matches!(loss_gradient(LossKind::Poisson, &ok, &bad), Err(Error::Domain(_))));
        assert!(loss(LossKind::Poisson, &bad, &ok).is_ok());
    }

    #[test]
    fn loss_gradient_examples() {
        let x = t1(&[1.0, -2.0]);
        assert_eq!(loss_gradient(LossKind::Mse, &x, &x).unwrap(), DenseTensor::zeros(&[2]));
        assert_eq!(loss_gradient(LossKind::LogCosh, &t1(&[0.3]), &t1(&[0.3])).unwrap().data(), &[0.0]);
        assert_eq!(loss_gradient(LossKind::Mae, &x, &x).unwrap(), DenseTensor::zeros(&[2]));
    }

    #[test]
    fn log_cosh_matches_naive_formula() {
        for d in [-3.0, -0.5, 0.0, 0.1, 2.0, 10.0] {
            let naive = f64::cosh(d).ln();
            assert!((log_cosh(d) - naive).abs() < 1e-14, "d={d}");
        }
    }

    #[test]
    fn batch_loss_examples() {
        let x = t1(&[1.0, 2.0]);
        let y = DenseTensor::zeros(&[2]);
        assert_eq!(batch_loss(LossKind::Mse, &[x.clone()], &[y.clone()]).unwrap(), 2.5);
        let xs = vec![x.clone(); 3];
        let ys = vec![y.clone(); 3];
        assert_eq!(batch_loss(LossKind::Mse, &xs, &ys).unwrap(), 2.5);
        assert_eq!(
            batch_loss(LossKind::Mse, &[x, y.clone()], &[y.clone(), y]).unwrap(),
            1.25
        );
        assert!(matches!(batch_loss(LossKind::Mse, &[], &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn network_validates_chain() {
        let layer = |k: usize, out: usize| {
            LayerConfig::new(
                FilterSpec::valid(DenseTensor::filled(&[k], 1.0)),
                DenseTensor::zeros(&[out]),
                Activation::Identity,
            )
        };
        assert!(Network::new(vec![6], vec![layer(2, 5), layer(3, 3)]).is_ok());
        let err = Network::new(vec![6], vec![layer(2, 5), layer(3, 4)]).unwrap_err();
        assert!(err.to_string().contains("layer 2"), "{err}");
        let pooled = layer(2, 5).with_pool(PoolSpec::new(vec![2], PoolKind::Max));
        let net = Network::new(vec![6], vec![pooled, layer(2, 3)]).unwrap();
        assert_eq!(net.output_dims(), vec![3]);
        assert!(Network::new(vec![6], vec![]).is_err());
    }
}
