//! Backward pass, gradients and the batch-mode gradient-descent trainer.
//!
//! Every computation here works on either a single sample (tensors with the
//! layer dims) or a whole batch (the same tensors with one extra trailing
//! order of length `p`, slice `j` holding sample `j`). Contractions only
//! touch the leading orders and accumulate in compounded-filter entry
//! order, so a batched slice is bit-identical to the per-sample result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convolution::{filter_gradient_for, CompoundedPattern, ConvGeometry, FilterSpec};
use crate::error::{Error, Result};
use crate::network::{
    activate, activate_derivative, batch_loss, loss_gradient, pool, pool_backward, Activation,
    LossKind, Network, PoolSpec,
};
use crate::tensor::{stack_last, DenseTensor, SparseTensor};

/// Intermediate values of one forward pass.
///
/// For layer `l` (0-based): `inputs[l]` is the layer input `Z^(l)` (so
/// `inputs[0]` is the network input), `pre_activations[l]` is
/// `K = W ⊙_q Z + B` and `activations[l]` is `φ(K)` before pooling.
/// `output` is the pooled output of the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub inputs: Vec<DenseTensor>,
    pub pre_activations: Vec<DenseTensor>,
    pub activations: Vec<DenseTensor>,
    pub output: DenseTensor,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.pre_activations.len()
    }

    /// Output of layer `l` after pooling, `l = 0..depth`.
    pub fn layer_output(&self, l: usize) -> &DenseTensor {
        if l + 1 < self.depth() {
            &self.inputs[l + 1]
        } else {
            &self.output
        }
    }
}

/// Per-layer compounded-filter patterns and constant filter gradients.
#[derive(Debug, Clone)]
struct Operators {
    patterns: Vec<CompoundedPattern>,
    filter_grads: Vec<SparseTensor>,
}

impl Operators {
    fn new(net: &Network) -> Self {
        let geoms = (0..net.depth()).map(|l| net.geometry(l));
        Self {
            patterns: geoms.clone().map(CompoundedPattern::new).collect(),
            filter_grads: geoms.map(filter_gradient_for).collect(),
        }
    }

    fn weights(&self, net: &Network) -> Vec<SparseTensor> {
        self.patterns
            .iter()
            .zip(net.layers())
            .map(|(p, layer)| p.materialize(&layer.filter.filter))
            .collect()
    }
}

fn batched_pool(spec: &PoolSpec, batched: bool) -> PoolSpec {
    if batched {
        spec.batched()
    } else {
        spec.clone()
    }
}

/// Adds `bias` to every trailing slice of `t` (a no-op broadcast when `t`
/// has the bias dims).
fn add_broadcast(t: &DenseTensor, bias: &DenseTensor) -> Result<DenseTensor> {
    if t.dims() == bias.dims() {
        return t.add(bias);
    }
    let q = bias.order();
    if t.order() != q + 1 || &t.dims()[..q] != bias.dims() {
        return Err(Error::mismatch(bias.dims(), t.dims()));
    }
    let p = t.dims()[q];
    let mut out = t.clone();
    for (chunk, &b) in out.data_mut().chunks_mut(p).zip(bias.data()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
    Ok(out)
}

/// Mean over the trailing sample order (identity for an unbatched tensor).
fn mean_last(t: &DenseTensor, q: usize) -> Result<DenseTensor> {
    if t.order() == q {
        return Ok(t.clone());
    }
    let p = *t.dims().last().expect("batched tensor");
    let data = t
        .data()
        .chunks(p)
        .map(|c| c.iter().sum::<f64>() / p as f64)
        .collect();
    DenseTensor::new(t.dims()[..q].to_vec(), data)
}

fn forward_with(net: &Network, weights: &[SparseTensor], z0: &DenseTensor) -> Result<ForwardTrace> {
    let q = net.input_dims().len();
    let batched = z0.order() == q + 1;
    if z0.dims()[..q.min(z0.order())] != *net.input_dims() || !(batched || z0.order() == q) {
        return Err(Error::Geometry(format!(
            "input dims {:?} do not match network input dims {:?}",
            z0.dims(),
            net.input_dims()
        )));
    }
    let depth = net.depth();
    let mut inputs = Vec::with_capacity(depth);
    let mut pre_activations = Vec::with_capacity(depth);
    let mut activations = Vec::with_capacity(depth);
    let mut z = z0.clone();
    for (l, (layer, w)) in net.layers().iter().zip(weights).enumerate() {
        let padded = net.geometry(l).pad(&z)?;
        let k = add_broadcast(&w.inner(&padded, q)?, &layer.bias)?;
        let a = activate(layer.activation, &k);
        let next = match &layer.pool {
            Some(p) => pool(&batched_pool(p, batched), &a)?,
            None => a.clone(),
        };
        inputs.push(std::mem::replace(&mut z, next));
        pre_activations.push(k);
        activations.push(a);
    }
    Ok(ForwardTrace {
        inputs,
        pre_activations,
        activations,
        output: z,
    })
}

/// Forward pass of one sample, keeping every pre-activation and output.
pub fn forward_pass(net: &Network, input: &DenseTensor) -> Result<ForwardTrace> {
    if input.dims() != net.input_dims() {
        return Err(Error::Geometry(format!(
            "input dims {:?} do not match network input dims {:?}",
            input.dims(),
            net.input_dims()
        )));
    }
    forward_with(net, &Operators::new(net).weights(net), input)
}

/// Forward pass of a gathered batch `Ẑ^(0)` whose trailing order indexes
/// samples. Biases broadcast along that order.
pub fn batched_forward(net: &Network, batch: &DenseTensor) -> Result<ForwardTrace> {
    if batch.order() != net.input_dims().len() + 1 {
        return Err(Error::Geometry(format!(
            "batched input of dims {:?} needs order {}",
            batch.dims(),
            net.input_dims().len() + 1
        )));
    }
    forward_with(net, &Operators::new(net).weights(net), batch)
}

/// Gathers `p` equal-shape samples into one tensor with a trailing order of
/// length `p`.
pub fn batch_gather(samples: &[DenseTensor]) -> Result<DenseTensor> {
    stack_last(samples)
}

/// Gradient of the loss with respect to the network output: one slice per
/// sample for a batched output.
fn output_loss_gradient(
    kind: LossKind,
    output: &DenseTensor,
    target: &DenseTensor,
    batched: bool,
) -> Result<DenseTensor> {
    if output.dims() != target.dims() {
        return Err(Error::mismatch(output.dims(), target.dims()));
    }
    if !batched {
        return loss_gradient(kind, output, target);
    }
    let p = *output.dims().last().ok_or(Error::EmptyBatch)?;
    let slices = (1..=p)
        .map(|j| loss_gradient(kind, &output.slice_last(j)?, &target.slice_last(j)?))
        .collect::<Result<Vec<_>>>()?;
    stack_last(&slices)
}

/// `δ^(k)`: gradient of the loss with respect to the last pre-activation,
/// including the pooling adjoint when the last layer pools.
pub fn delta_output(
    net: &Network,
    trace: &ForwardTrace,
    target: &DenseTensor,
    kind: LossKind,
) -> Result<DenseTensor> {
    let batched = trace.output.order() > net.output_dims().len();
    output_delta(net, trace, target, kind, batched)
}

fn output_delta(
    net: &Network,
    trace: &ForwardTrace,
    target: &DenseTensor,
    kind: LossKind,
    batched: bool,
) -> Result<DenseTensor> {
    let last = net.depth() - 1;
    let upstream = output_loss_gradient(kind, &trace.output, target, batched)?;
    layer_delta(net, trace, last, upstream)
}

/// Turns the gradient with respect to layer `l`'s pooled output into `δ^(l)`.
fn layer_delta(
    net: &Network,
    trace: &ForwardTrace,
    l: usize,
    upstream: DenseTensor,
) -> Result<DenseTensor> {
    let layer = net.layer(l);
    let k = &trace.pre_activations[l];
    let batched = k.order() > net.geometry(l).output_dims.len();
    let upstream = match &layer.pool {
        Some(p) => pool_backward(&batched_pool(p, batched), &trace.activations[l], &upstream)?,
        None => upstream,
    };
    activate_derivative(layer.activation, k).hadamard(&upstream)
}

/// Gradient with respect to the (unpadded) input of layer `l + 1`, given
/// `δ^(l+1)` and that layer's compounded filter.
fn input_gradient(geom: &ConvGeometry, w: &SparseTensor, delta: &DenseTensor) -> Result<DenseTensor> {
    let q = geom.input_dims.len();
    geom.unpad(&w.contract_leading(delta, q)?)
}

/// `δ^(r) = φ′(K^(r)) ⊙ (δ^(r+1) ⊙_q W^(r+1))`, with `δ^(r+1)` contracting
/// the leading orders of `W^(r+1)`.
///
/// This is the bare recursion for a valid-padded next layer with no
/// pooling in between; [`backward_pass`] handles padding and pooling.
pub fn delta_backward(
    delta_next: &DenseTensor,
    w_next: &SparseTensor,
    k_curr: &DenseTensor,
    kind: Activation,
) -> Result<DenseTensor> {
    let upstream = w_next.contract_leading(delta_next, delta_next.order())?;
    if upstream.dims() != k_curr.dims() {
        return Err(Error::mismatch(k_curr.dims(), upstream.dims()));
    }
    activate_derivative(kind, k_curr).hadamard(&upstream)
}

fn backward_with(
    net: &Network,
    weights: &[SparseTensor],
    trace: &ForwardTrace,
    target: &DenseTensor,
    kind: LossKind,
    batched: bool,
) -> Result<Vec<DenseTensor>> {
    let depth = net.depth();
    let mut deltas = vec![output_delta(net, trace, target, kind, batched)?];
    for r in (0..depth - 1).rev() {
        let upstream = input_gradient(net.geometry(r + 1), &weights[r + 1], &deltas[0])?;
        deltas.insert(0, layer_delta(net, trace, r, upstream)?);
    }
    Ok(deltas)
}

/// All `δ^(l)`, first layer first, for one sample.
pub fn backward_pass(
    net: &Network,
    trace: &ForwardTrace,
    target: &DenseTensor,
    kind: LossKind,
) -> Result<Vec<DenseTensor>> {
    backward_with(net, &Operators::new(net).weights(net), trace, target, kind, false)
}

/// All `δ̂^(l)` for a batched trace and stacked targets.
pub fn batched_backward(
    net: &Network,
    trace: &ForwardTrace,
    targets: &DenseTensor,
    kind: LossKind,
) -> Result<Vec<DenseTensor>> {
    backward_with(net, &Operators::new(net).weights(net), trace, targets, kind, true)
}

/// `(Ẑ ⊙_q ∇F) ⊙ δ̂ / p` for padded, batched layer inputs.
fn grad_filter_batched(g: &SparseTensor, padded: &DenseTensor, deltas: &DenseTensor, q: usize) -> Result<DenseTensor> {
    let p = if deltas.order() > q { *deltas.dims().last().unwrap() } else { 1 };
    let per_output = g.inner(padded, q)?;
    Ok(per_output.inner(deltas, deltas.order())?.scale(1.0 / p as f64))
}

/// Filter gradient of the batch loss:
/// `(1/p) Σ_samples Σ_i δ_i · Z_{t + s·i}` for each filter entry `t`,
/// computed as the contraction of `Z` and `δ` through [`crate::filter_gradient`].
pub fn grad_filter(
    inputs: &[DenseTensor],
    deltas: &[DenseTensor],
    spec: &FilterSpec,
) -> Result<DenseTensor> {
    if inputs.len() != deltas.len() {
        return Err(Error::Shape(format!(
            "{} layer inputs for {} deltas",
            inputs.len(),
            deltas.len()
        )));
    }
    let z = stack_last(inputs)?;
    let d = stack_last(deltas)?;
    let geom = spec.geometry(inputs[0].dims())?;
    if d.dims()[..geom.output_dims.len()] != geom.output_dims[..] {
        return Err(Error::mismatch(&geom.output_dims, deltas[0].dims()));
    }
    grad_filter_batched(&filter_gradient_for(&geom), &geom.pad(&z)?, &d, spec.order())
}

/// Bias gradient of the batch loss: the mean of the deltas.
pub fn grad_bias(deltas: &[DenseTensor]) -> Result<DenseTensor> {
    let first = deltas.first().ok_or(Error::EmptyBatch)?;
    mean_last(&stack_last(deltas)?, first.order())
}

/// One gradient-descent update `param − γ·grad`.
pub fn sgd_step(param: &DenseTensor, grad: &DenseTensor, learning_rate: f64) -> Result<DenseTensor> {
    param.zip_with(grad, |p, g| p - learning_rate * g)
}

/// Filter and bias gradients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub filter: DenseTensor,
    pub bias: DenseTensor,
}

fn gradients_with(
    net: &Network,
    ops: &Operators,
    weights: &[SparseTensor],
    trace: &ForwardTrace,
    targets: &DenseTensor,
    kind: LossKind,
) -> Result<Vec<LayerGradient>> {
    let deltas = backward_with(net, weights, trace, targets, kind, true)?;
    let q = net.input_dims().len();
    deltas
        .iter()
        .enumerate()
        .map(|(l, delta)| {
            let padded = net.geometry(l).pad(&trace.inputs[l])?;
            Ok(LayerGradient {
                filter: grad_filter_batched(&ops.filter_grads[l], &padded, delta, q)?,
                bias: mean_last(delta, q)?,
            })
        })
        .collect()
}

/// Gradients of the batch loss with respect to every filter and bias.
pub fn gradients(net: &Network, data: &Dataset, kind: LossKind) -> Result<Vec<LayerGradient>> {
    let ops = Operators::new(net);
    let weights = ops.weights(net);
    let trace = forward_with(net, &weights, &data.batched_inputs()?)?;
    gradients_with(net, &ops, &weights, &trace, &data.batched_targets()?, kind)
}

/// Batch loss of the network's predictions on a dataset.
pub fn evaluate(net: &Network, data: &Dataset, kind: LossKind) -> Result<f64> {
    let trace = batched_forward(net, &data.batched_inputs()?)?;
    batched_loss(kind, &trace.output, &data.targets)
}

fn batched_loss(kind: LossKind, output: &DenseTensor, targets: &[DenseTensor]) -> Result<f64> {
    let predictions = (1..=targets.len())
        .map(|j| output.slice_last(j))
        .collect::<Result<Vec<_>>>()?;
    batch_loss(kind, &predictions, targets)
}

/// Input/target pairs sharing one input shape and one target shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<DenseTensor>,
    pub targets: Vec<DenseTensor>,
}

impl Dataset {
    pub fn new(inputs: Vec<DenseTensor>, targets: Vec<DenseTensor>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if inputs.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs for {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        for set in [&inputs, &targets] {
            if let Some(bad) = set.iter().find(|t| t.dims() != set[0].dims()) {
                return Err(Error::mismatch(set[0].dims(), bad.dims()));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dims(&self) -> &[usize] {
        self.inputs[0].dims()
    }

    pub fn target_dims(&self) -> &[usize] {
        self.targets[0].dims()
    }

    pub fn batched_inputs(&self) -> Result<DenseTensor> {
        stack_last(&self.inputs)
    }

    pub fn batched_targets(&self) -> Result<DenseTensor> {
        stack_last(&self.targets)
    }

    /// Splits off the trailing `1 − fraction` of samples. Both halves are
    /// kept non-empty.
    pub fn split(self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if self.len() < 2 || !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config(format!(
                "cannot split {} samples at fraction {fraction}",
                self.len()
            )));
        }
        let cut = ((self.len() as f64 * fraction).round() as usize).clamp(1, self.len() - 1);
        let (mut inputs, mut targets) = (self.inputs, self.targets);
        let rest_in = inputs.split_off(cut);
        let rest_t = targets.split_off(cut);
        Ok((Dataset::new(inputs, targets)?, Dataset::new(rest_in, rest_t)?))
    }
}

/// How filters and biases are set before the first epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Initializer {
    /// Keep the parameters the network already holds.
    Keep,
    Zeros,
    /// Zero biases; filters uniform in `[−scale, scale]` from a seeded generator.
    Uniform { seed: u64, scale: f64 },
}

pub fn initialize(net: &mut Network, init: Initializer) -> Result<()> {
    let mut rng = match init {
        Initializer::Keep => return Ok(()),
        Initializer::Zeros => None,
        Initializer::Uniform { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    for l in 0..net.depth() {
        let layer = net.layer(l);
        let mut filter = DenseTensor::zeros(layer.filter.kernel_dims());
        if let (Some(rng), Initializer::Uniform { scale, .. }) = (rng.as_mut(), init) {
            filter
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-scale..=scale));
        }
        let bias = DenseTensor::zeros(layer.bias.dims());
        net.set_filter(l, filter)?;
        net.set_bias(l, bias)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub tolerance: f64,
    pub max_epochs: usize,
    pub init: Initializer,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if let Initializer::Uniform { scale, .. } = self.init {
            if !scale.is_finite() || scale < 0.0 {
                return Err(Error::Config(format!("init scale must be finite and >= 0, got {scale}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    pub validation_loss: f64,
    /// True on the last recorded epoch.
    pub stop: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `|ϑ_e − ϑ_{e−1}| ≤ ε`.
    Tolerance,
    /// The epoch cap was reached.
    EpochCap,
    /// The validation loss stopped being a finite number.
    NonFinite,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Tolerance => "tolerance",
            StopReason::EpochCap => "epoch_cap",
            StopReason::NonFinite => "non_finite",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Batch-mode backpropagation with gradient descent.
///
/// Each epoch runs the batched forward pass on the training set, measures
/// the validation loss `ϑ_t`, and stops once `|ϑ_t − ϑ_{t−1}| ≤ ε` (with
/// `ϑ_0 = f64::MAX`) or after `max_epochs` epochs. When the tolerance has
/// been reached the epoch's backward pass is skipped. Otherwise every
/// layer's filter and bias are updated from gradients taken at the
/// epoch's starting parameters.
pub fn train(
    net: &Network,
    train_set: &Dataset,
    validation: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut net = net.clone();
    initialize(&mut net, cfg.init)?;
    let out_dims = net.output_dims();
    for set in [train_set, validation] {
        if set.input_dims() != net.input_dims() {
            return Err(Error::Geometry(format!(
                "dataset input dims {:?} differ from network input dims {:?}",
                set.input_dims(),
                net.input_dims()
            )));
        }
        if set.target_dims() != out_dims.as_slice() {
            return Err(Error::Geometry(format!(
                "dataset target dims {:?} differ from network output dims {:?}",
                set.target_dims(),
                out_dims
            )));
        }
    }

    let ops = Operators::new(&net);
    let train_inputs = train_set.batched_inputs()?;
    let train_targets = train_set.batched_targets()?;
    let val_inputs = validation.batched_inputs()?;

    let mut history = Vec::new();
    let mut previous = f64::MAX;
    let mut change = f64::MAX;
    let mut epoch = 1;
    // Epoch 1 always runs: `|ϑ_1 − f64::MAX|` rounds to `f64::MAX`, so a
    // literal first check would either skip training or force two epochs.
    while epoch == 1 || (change > cfg.tolerance && epoch <= cfg.max_epochs) {
        let weights = ops.weights(&net);
        let trace = forward_with(&net, &weights, &train_inputs)?;
        let val_out = forward_with(&net, &weights, &val_inputs)?.output;
        let theta = batched_loss(cfg.loss, &val_out, &validation.targets)?;
        change = (theta - previous).abs();
        if change >= cfg.tolerance {
            let grads = gradients_with(&net, &ops, &weights, &trace, &train_targets, cfg.loss)?;
            for (l, g) in grads.iter().enumerate() {
                let layer = net.layer(l);
                let filter = sgd_step(&layer.filter.filter, &g.filter, cfg.learning_rate)?;
                let bias = sgd_step(&layer.bias, &g.bias, cfg.learning_rate)?;
                net.set_filter(l, filter)?;
                net.set_bias(l, bias)?;
            }
        }
        history.push(EpochRecord {
            epoch,
            validation_loss: theta,
            stop: false,
        });
        previous = theta;
        epoch += 1;
    }
    if let Some(last) = history.last_mut() {
        last.stop = true;
    }
    let stop = if change.is_nan() {
        StopReason::NonFinite
    } else if change <= cfg.tolerance {
        StopReason::Tolerance
    } else {
        StopReason::EpochCap
    };
    Ok(TrainOutcome {
        network: net,
        history,
        stop,
    })
}

/// Re-runs layers `l..` of a forward pass starting from a given
/// pre-activation of layer `l`, returning the network output.
pub fn forward_from_pre_activation(net: &Network, l: usize, k: &DenseTensor) -> Result<DenseTensor> {
    let layer = net.layer(l);
    let a = activate(layer.activation, k);
    let mut z = match &layer.pool {
        Some(p) => pool(p, &a)?,
        None => a,
    };
    for next in &net.layers()[l + 1..] {
        let (_, out) = crate::network::layer_forward(next, &z)?;
        z = match &next.pool {
            Some(p) => pool(p, &out)?,
            None => out,
        };
    }
    Ok(z)
}
