//! TOML run configuration.
//!
//! ```toml
//! [network]
//! input_dims = [6, 6]
//!
//! [[network.layers]]
//! filter_dims = [3, 3]
//! strides = [1, 1]
//! padding = "valid"
//! activation = "identity"
//! pool = { kind = "max", window = [2, 2] }
//!
//! [training]
//! loss = "mse"
//! learning_rate = 0.01
//! tolerance = 1e-10
//! max_epochs = 500
//! seed = 1
//! init_scale = 0.5
//!
//! [data]
//! train = "train.txt"
//! validation = "validation.txt"
//! ```

use std::path::{Path, PathBuf};

use convtensor::network::{Activation, LayerConfig, LossKind, Network, PoolKind, PoolSpec};
use convtensor::training::{Initializer, TrainConfig};
use convtensor::{DenseTensor, FilterSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::format::{parse_padding, read_file};
use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub data: DataSection,
    /// Directory the config was read from; relative data paths resolve here.
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub input_dims: Vec<usize>,
    pub layers: Vec<LayerSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSection {
    pub filter_dims: Vec<usize>,
    pub strides: Option<Vec<usize>>,
    #[serde(default = "default_padding")]
    pub padding: String,
    #[serde(default = "default_activation")]
    pub activation: String,
    pub pool: Option<PoolSection>,
    /// Explicit filter coordinates, row-major.
    pub filter: Option<Vec<f64>>,
    /// Explicit bias coordinates, row-major.
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSection {
    pub kind: String,
    pub window: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub loss: String,
    pub learning_rate: f64,
    pub tolerance: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// `uniform`, `zeros`, or `keep` (start from the configured values).
    pub init: String,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            loss: "mse".into(),
            learning_rate: 0.01,
            tolerance: 1e-10,
            max_epochs: 500,
            seed: 0,
            init_scale: 0.5,
            init: "uniform".into(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    /// Fraction of the training file kept for training when no validation
    /// file is given; the rest validates.
    pub split: Option<f64>,
}

fn default_padding() -> String {
    "valid".into()
}

fn default_activation() -> String {
    "identity".into()
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn geometry(layer: usize, e: convtensor::Error) -> CliError {
    let msg = match e {
        convtensor::Error::Geometry(m) => m,
        other => other.to_string(),
    };
    CliError::Core(convtensor::Error::Geometry(format!("layer {}: {msg}", layer + 1)))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_file(path)?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn loss(&self) -> Result<LossKind, CliError> {
        self.training.loss.parse().map_err(|e| cfg_err(format!("training.loss: {e}")))
    }

    /// The configured network. Filters and biases not given explicitly are
    /// zero, or drawn from `rng` when one is supplied.
    pub fn network(&self, mut rng: Option<&mut ChaCha8Rng>) -> Result<Network, CliError> {
        let mut layers = Vec::with_capacity(self.network.layers.len());
        let mut dims = self.network.input_dims.clone();
        let scale = self.training.init_scale;
        for (i, l) in self.network.layers.iter().enumerate() {
            let at = |msg: String| cfg_err(format!("layer {}: {msg}", i + 1));
            let strides = l.strides.clone().unwrap_or_else(|| vec![1; l.filter_dims.len()]);
            let padding = parse_padding(&l.padding).map_err(at)?;
            let activation: Activation = l.activation.parse().map_err(|e: convtensor::Error| at(e.to_string()))?;
            let filter = explicit_or_random(&l.filter_dims, l.filter.as_deref(), rng.as_deref_mut(), scale)
                .map_err(|e| at(format!("filter: {e}")))?;
            let spec = FilterSpec::new(filter, strides, padding)?;
            let geom = spec.geometry(&dims).map_err(|e| geometry(i, e))?;
            let bias = explicit_or_random(&geom.output_dims, l.bias.as_deref(), rng.as_deref_mut(), 0.1)
                .map_err(|e| at(format!("bias: {e}")))?;
            let mut layer = LayerConfig::new(spec, bias, activation);
            dims = geom.output_dims;
            if let Some(p) = &l.pool {
                let kind: PoolKind = p.kind.parse().map_err(|e: convtensor::Error| at(e.to_string()))?;
                let pool = PoolSpec::new(p.window.clone(), kind);
                dims = pool.output_dims(&dims).map_err(|e| geometry(i, e))?;
                layer = layer.with_pool(pool);
            }
            layers.push(layer);
        }
        Ok(Network::new(self.network.input_dims.clone(), layers)?)
    }

    pub fn train_config(&self, seed: Option<u64>) -> Result<TrainConfig, CliError> {
        let t = &self.training;
        let init = match t.init.as_str() {
            "uniform" => Initializer::Uniform {
                seed: seed.unwrap_or(t.seed),
                scale: t.init_scale,
            },
            "zeros" => Initializer::Zeros,
            "keep" => Initializer::Keep,
            other => return Err(cfg_err(format!("training.init: unknown initializer '{other}'"))),
        };
        let cfg = TrainConfig {
            loss: self.loss()?,
            learning_rate: t.learning_rate,
            tolerance: t.tolerance,
            max_epochs: t.max_epochs,
            init,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn explicit_or_random(
    dims: &[usize],
    values: Option<&[f64]>,
    rng: Option<&mut ChaCha8Rng>,
    scale: f64,
) -> Result<DenseTensor, String> {
    match (values, rng) {
        (Some(v), _) => DenseTensor::new(dims.to_vec(), v.to_vec()).map_err(|e| e.to_string()),
        (None, Some(rng)) => Ok(DenseTensor::from_fn(dims, |_| rng.gen_range(-scale..=scale))),
        (None, None) => Ok(DenseTensor::zeros(dims)),
    }
}
