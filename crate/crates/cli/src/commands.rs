use std::io::Write;
use std::path::{Path, PathBuf};

use convtensor::gradcheck::{self, ParamKind, REL_TOL, STEP};
use convtensor::network::{Activation, LossKind, Network};
use convtensor::training::{evaluate, forward_pass, gradients, train, Dataset};
use convtensor::{convolve, DenseTensor, Error, FilterSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::format::{self, fmt_scalar, parse_padding, read_file, write_file};
use crate::{CliError, Command};

pub fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Generate {
            config,
            out: dir,
            seed,
            count,
            validation_count,
        } => generate(&config, &dir, seed, count, validation_count, out),
        Command::Train {
            config,
            data,
            validation,
            out: model,
            seed,
        } => train_cmd(&config, data, validation, &model, seed, out),
        Command::Eval { model, data, loss } => eval(&model, &data, &loss, out),
        Command::Conv {
            filter,
            filter_dims,
            strides,
            padding,
            data,
        } => conv(&filter, filter_dims.as_deref(), strides.as_deref(), &padding, &data, out),
        Command::Gradcheck {
            config,
            seed,
            count,
            corrupt,
        } => gradcheck_cmd(&config, seed, count, corrupt, out),
    }
}

fn emit(out: &mut dyn Write, line: impl AsRef<str>) -> Result<(), CliError> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    format::parse_dataset(&path.display().to_string(), &read_file(path)?)
}

fn uniform_inputs(rng: &mut ChaCha8Rng, dims: &[usize], p: usize) -> Vec<DenseTensor> {
    (0..p)
        .map(|_| DenseTensor::from_fn(dims, |_| rng.gen_range(-1.0..=1.0)))
        .collect()
}

fn labelled(teacher: &Network, inputs: Vec<DenseTensor>) -> Result<Dataset, CliError> {
    let targets = inputs.iter().map(|x| teacher.predict(x)).collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(inputs, targets)?)
}

fn generate(
    config: &Path,
    dir: &Path,
    seed: u64,
    count: usize,
    validation_count: usize,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let teacher = cfg.network(Some(&mut rng))?;
    let train_inputs = uniform_inputs(&mut rng, teacher.input_dims(), count);
    let val_inputs = uniform_inputs(&mut rng, teacher.input_dims(), validation_count);
    let train_set = labelled(&teacher, train_inputs)?;
    let validation = labelled(&teacher, val_inputs)?;

    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write_file(&dir.join("train.txt"), &format::write_dataset(&train_set))?;
    write_file(&dir.join("validation.txt"), &format::write_dataset(&validation))?;
    write_file(&dir.join("teacher.model"), &format::write_model(&teacher))?;
    emit(
        out,
        format!(
            "wrote {} training and {} validation samples to {}",
            count,
            validation_count,
            dir.display()
        ),
    )
}

fn train_cmd(
    config: &Path,
    data: Option<PathBuf>,
    validation: Option<PathBuf>,
    model: &Path,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let train_cfg = cfg.train_config(seed)?;
    let net = cfg.network(None)?;
    let train_path = data
        .or_else(|| cfg.data.train.as_ref().map(|p| cfg.resolve(p)))
        .ok_or_else(|| CliError::Usage("no training data: pass --data or set data.train".into()))?;
    let val_path = validation.or_else(|| cfg.data.validation.as_ref().map(|p| cfg.resolve(p)));
    let train_set = load_dataset(&train_path)?;
    let (train_set, validation) = match (val_path, cfg.data.split) {
        (Some(p), _) => (train_set, load_dataset(&p)?),
        (None, Some(fraction)) => train_set.split(fraction)?,
        (None, None) => {
            return Err(CliError::Usage(
                "no validation data: pass --validation, or set data.validation or data.split".into(),
            ))
        }
    };

    let outcome = train(&net, &train_set, &validation, &train_cfg)?;
    for r in &outcome.history {
        emit(out, format!("epoch={} loss={}", r.epoch, fmt_scalar(r.validation_loss)))?;
    }
    write_file(model, &format::write_model(&outcome.network))?;
    emit(
        out,
        format!("stop={} epochs={}", outcome.stop.name(), outcome.history.len()),
    )
}

fn eval(model: &Path, data: &Path, loss: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let kind: LossKind = loss.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let net = format::parse_model(&model.display().to_string(), &read_file(model)?)?;
    let data = load_dataset(data)?;
    if data.input_dims() != net.input_dims() || data.target_dims() != net.output_dims().as_slice() {
        return Err(Error::Geometry(format!(
            "dataset maps {:?} -> {:?} but the model maps {:?} -> {:?}",
            data.input_dims(),
            data.target_dims(),
            net.input_dims(),
            net.output_dims()
        ))
        .into());
    }
    let value = evaluate(&net, &data, kind)?;
    emit(out, format!("loss={value:.11e}"))
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--{flag}: cannot parse '{v}'")))
        })
        .collect()
}

fn conv(
    filter: &str,
    filter_dims: Option<&str>,
    strides: Option<&str>,
    padding: &str,
    data: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let values: Vec<f64> = parse_list("filter", filter)?;
    let dims = match filter_dims {
        Some(d) => parse_list("filter-dims", d)?,
        None => vec![values.len()],
    };
    let strides = match strides {
        Some(s) => parse_list("strides", s)?,
        None => vec![1; dims.len()],
    };
    let padding = parse_padding(padding).map_err(CliError::Usage)?;
    let filter = DenseTensor::new(dims, values)?;
    let spec = FilterSpec::new(filter, strides, padding)?;
    let input = format::parse_tensor(&data.display().to_string(), &read_file(data)?)?;
    let result = convolve(&spec, &input)?;
    let coords: Vec<String> = result.data().iter().map(f64::to_string).collect();
    emit(out, coords.join(" "))
}

/// Targets inside the loss domain.
fn random_targets(rng: &mut ChaCha8Rng, dims: &[usize], p: usize, kind: LossKind) -> Vec<DenseTensor> {
    let (lo, hi) = match kind {
        LossKind::Msle | LossKind::Poisson => (0.1, 1.5),
        _ => (-1.0, 1.0),
    };
    (0..p)
        .map(|_| DenseTensor::from_fn(dims, |_| rng.gen_range(lo..=hi)))
        .collect()
}

/// Finite differences are meaningless across a kink; such draws are skipped.
fn smooth_enough(net: &Network, data: &Dataset, kind: LossKind) -> Result<bool, CliError> {
    const MARGIN: f64 = 1e-3;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let trace = forward_pass(net, x)?;
        for (l, layer) in net.layers().iter().enumerate() {
            if layer.activation == Activation::Relu
                && trace.pre_activations[l].data().iter().any(|v| v.abs() < MARGIN)
            {
                return Ok(false);
            }
        }
        let pred = trace.output.data();
        let near = match kind {
            LossKind::Mae => pred.iter().zip(y.data()).any(|(a, b)| (a - b).abs() < MARGIN),
            LossKind::Msle => pred.iter().any(|&a| a < -0.9),
            _ => false,
        };
        if near {
            return Ok(false);
        }
    }
    Ok(true)
}

fn gradcheck_cmd(
    config: &Path,
    seed: u64,
    count: usize,
    corrupt: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    const ATTEMPTS: usize = 100;
    let cfg = RunConfig::load(config)?;
    let kind = cfg.loss()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instance = None;
    for _ in 0..ATTEMPTS {
        let net = cfg.network(Some(&mut rng))?;
        let inputs = uniform_inputs(&mut rng, net.input_dims(), count);
        let targets = random_targets(&mut rng, &net.output_dims(), count, kind);
        let data = Dataset::new(inputs, targets)?;
        if smooth_enough(&net, &data, kind)? {
            instance = Some((net, data));
            break;
        }
    }
    let (net, data) = instance.ok_or_else(|| {
        Error::Domain(format!("no draw in {ATTEMPTS} attempts kept clear of loss or activation kinks"))
    })?;

    let mut analytic = gradients(&net, &data, kind)?;
    if corrupt {
        analytic[0].filter.data_mut()[0] += 1e-3;
    }
    let numeric = gradcheck::numeric_gradients(&net, &data, kind, STEP)?;
    let reports = gradcheck::compare(&analytic, &numeric);
    let mut loss_err: f64 = 0.0;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let pred = net.predict(x)?;
        loss_err = loss_err.max(gradcheck::check_loss_gradient(kind, &pred, y, STEP)?);
    }

    let verdict = |ok: bool| if ok { "pass" } else { "fail" };
    for r in &reports {
        let name = match r.kind {
            ParamKind::Filter => "filter",
            ParamKind::Bias => "bias",
        };
        emit(
            out,
            format!("layer={} param={name} max_rel_err={:.3e} {}", r.layer, r.max_error, verdict(r.passed())),
        )?;
    }
    emit(
        out,
        format!("loss_gradient max_rel_err={loss_err:.3e} {}", verdict(loss_err <= REL_TOL)),
    )?;
    let passed = reports.iter().all(|r| r.passed()) && loss_err <= REL_TOL;
    emit(out, format!("result={}", verdict(passed)))?;
    if passed {
        Ok(())
    } else {
        Err(CliError::GradCheckFailed)
    }
}
