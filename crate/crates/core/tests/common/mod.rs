//! Test-only oracles and random instance generators. Nothing here calls
//! the compounded-filter or contraction code paths it is used to check.

#![allow(dead_code)]

use convtensor::network::{Activation, LayerConfig, LossKind, Network, PoolKind, PoolSpec};
use convtensor::training::Dataset;
use convtensor::{DenseTensor, FilterSpec, Padding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, dims: &[usize], lo: f64, hi: f64) -> DenseTensor {
    DenseTensor::from_fn(dims, |_| rng.gen_range(lo..hi))
}

/// All 0-based index tuples of `dims` in row-major order.
pub fn tuples(dims: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in dims {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..n).map(move |i| {
                    let mut t = t.clone();
                    t.push(i);
                    t
                })
            })
            .collect();
    }
    out
}

fn at(t: &DenseTensor, idx0: &[usize]) -> f64 {
    let one: Vec<usize> = idx0.iter().map(|i| i + 1).collect();
    t.get(&one).unwrap()
}

/// Zero padding computed straight from `n* = (n−1)s + k`, `g = ⌈(n*−n)/2⌉`.
pub fn pad_oracle(x: &DenseTensor, k: &[usize], s: &[usize]) -> DenseTensor {
    let padded: Vec<usize> = x
        .dims()
        .iter()
        .zip(k)
        .zip(s)
        .map(|((&n, &k), &s)| (n - 1) * s + k)
        .collect();
    let g: Vec<usize> = padded
        .iter()
        .zip(x.dims())
        .map(|(&np, &n)| (np - n).div_ceil(2))
        .collect();
    DenseTensor::from_fn(&padded, |idx| {
        let src: Option<Vec<usize>> = idx
            .iter()
            .zip(&g)
            .zip(x.dims())
            .map(|((&i, &g), &n)| (i > g && i - g <= n).then(|| i - g))
            .collect();
        src.map_or(0.0, |src| x.get(&src).unwrap())
    })
}

/// Direct sliding-window sum `Σ_j F_j · x_{j + s·i}` at every output position.
pub fn conv_oracle(spec: &FilterSpec, x: &DenseTensor) -> DenseTensor {
    let k = spec.kernel_dims().to_vec();
    let s = spec.strides.clone();
    let x = match spec.padding {
        Padding::Valid => x.clone(),
        Padding::Zero => pad_oracle(x, &k, &s),
    };
    let out_dims: Vec<usize> = x
        .dims()
        .iter()
        .zip(&k)
        .zip(&s)
        .map(|((&n, &k), &s)| (n - k) / s + 1)
        .collect();
    DenseTensor::from_fn(&out_dims, |i1| {
        let i: Vec<usize> = i1.iter().map(|v| v - 1).collect();
        tuples(&k)
            .iter()
            .map(|j| {
                let src: Vec<usize> = j
                    .iter()
                    .zip(&i)
                    .zip(&s)
                    .map(|((&j, &i), &s)| j + s * i)
                    .collect();
                at(&spec.filter, j) * at(&x, &src)
            })
            .sum()
    })
}

/// Pooling by explicit window enumeration.
pub fn pool_oracle(spec: &PoolSpec, x: &DenseTensor) -> DenseTensor {
    let out_dims: Vec<usize> = x
        .dims()
        .iter()
        .zip(&spec.window)
        .map(|(&n, &k)| n - k + 1)
        .collect();
    DenseTensor::from_fn(&out_dims, |i1| {
        let vals: Vec<f64> = tuples(&spec.window)
            .iter()
            .map(|w| {
                let src: Vec<usize> = w.iter().zip(i1).map(|(&w, &i)| w + i - 1).collect();
                at(x, &src)
            })
            .collect();
        match spec.kind {
            PoolKind::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            PoolKind::Average => vals.iter().sum::<f64>() / vals.len() as f64,
        }
    })
}

/// Smallest gap between the largest and second-largest value over all
/// max-pool windows (infinite when every window has one element).
pub fn max_pool_margin(spec: &PoolSpec, x: &DenseTensor) -> f64 {
    let out_dims: Vec<usize> = x
        .dims()
        .iter()
        .zip(&spec.window)
        .map(|(&n, &k)| n - k + 1)
        .collect();
    let mut margin = f64::INFINITY;
    for i in tuples(&out_dims) {
        let mut vals: Vec<f64> = tuples(&spec.window)
            .iter()
            .map(|w| {
                let src: Vec<usize> = w.iter().zip(&i).map(|(&w, &i)| w + i).collect();
                at(x, &src)
            })
            .collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if vals.len() > 1 {
            margin = margin.min(vals[0] - vals[1]);
        }
    }
    margin
}

/// Random geometry for one layer over `dims`; `None` if the draw does not fit.
fn random_layer(
    rng: &mut impl Rng,
    dims: &[usize],
    activation: Activation,
    allow_pool: bool,
    scale: f64,
) -> Option<(LayerConfig, Vec<usize>)> {
    let padding = if rng.gen_bool(0.5) { Padding::Valid } else { Padding::Zero };
    let k: Vec<usize> = dims
        .iter()
        .map(|&n| rng.gen_range(1..=n.min(3)))
        .collect();
    let s: Vec<usize> = dims.iter().map(|_| rng.gen_range(1..=2)).collect();
    let filter = random_tensor(rng, &k, -scale, scale);
    let spec = FilterSpec::new(filter, s, padding).ok()?;
    let geom = spec.geometry(dims).ok()?;
    let bias = random_tensor(rng, &geom.output_dims, -0.2, 0.2);
    let mut layer = LayerConfig::new(spec, bias, activation);
    let mut out = geom.output_dims.clone();
    if allow_pool && rng.gen_bool(0.3) && out.iter().all(|&n| n >= 2) {
        let kind = if rng.gen_bool(0.5) { PoolKind::Max } else { PoolKind::Average };
        let window: Vec<usize> = out.iter().map(|_| rng.gen_range(1..=2)).collect();
        out = out.iter().zip(&window).map(|(&n, &w)| n - w + 1).collect();
        layer = layer.with_pool(PoolSpec::new(window, kind));
    }
    Some((layer, out))
}

/// Random network of `depth` layers over inputs of order 1 or 2 with dims ≤ `max_dim`.
pub fn random_network(
    rng: &mut impl Rng,
    depth: usize,
    activation: Activation,
    max_dim: usize,
    allow_pool: bool,
) -> Network {
    loop {
        let q = rng.gen_range(1..=2);
        let input: Vec<usize> = (0..q).map(|_| rng.gen_range(3..=max_dim)).collect();
        let mut dims = input.clone();
        let mut layers = Vec::new();
        for _ in 0..depth {
            match random_layer(rng, &dims, activation, allow_pool, 0.8) {
                Some((layer, out)) => {
                    layers.push(layer);
                    dims = out;
                }
                None => break,
            }
        }
        if layers.len() == depth {
            if let Ok(net) = Network::new(input, layers) {
                return net;
            }
        }
    }
}

/// Random targets valid for the loss domain.
pub fn random_target(rng: &mut impl Rng, dims: &[usize], kind: LossKind) -> DenseTensor {
    match kind {
        LossKind::Msle | LossKind::Poisson => random_tensor(rng, dims, 0.1, 1.5),
        _ => random_tensor(rng, dims, -1.0, 1.0),
    }
}

pub fn random_dataset(rng: &mut impl Rng, net: &Network, p: usize, kind: LossKind) -> Dataset {
    let out = net.output_dims();
    let inputs = (0..p).map(|_| random_tensor(rng, net.input_dims(), -1.0, 1.0)).collect();
    let targets = (0..p).map(|_| random_target(rng, &out, kind)).collect();
    Dataset::new(inputs, targets).unwrap()
}

/// True when finite differences of size `h` stay clear of every kink:
/// relu at 0, MAE at zero residual, max-pool ties, and the MSLE domain edge.
pub fn away_from_kinks(net: &Network, data: &Dataset, kind: LossKind, margin: f64) -> bool {
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let trace = convtensor::training::forward_pass(net, x).unwrap();
        for (l, layer) in net.layers().iter().enumerate() {
            if layer.activation == Activation::Relu
                && trace.pre_activations[l].data().iter().any(|v| v.abs() < margin)
            {
                return false;
            }
            if let Some(p) = &layer.pool {
                if p.kind == PoolKind::Max && max_pool_margin(p, &trace.activations[l]) < margin {
                    return false;
                }
            }
        }
        let out = &trace.output;
        match kind {
            LossKind::Mae => {
                if out.data().iter().zip(y.data()).any(|(a, b)| (a - b).abs() < margin) {
                    return false;
                }
            }
            LossKind::Msle => {
                if out.data().iter().any(|&a| a < -1.0 + 0.1) {
                    return false;
                }
            }
            _ => {}
        }
    }
    true
}
