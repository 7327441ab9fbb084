//! Plain-text tensor, dataset and model files.
//!
//! Scalars are written with 17 significant digits so every `f64` round-trips.
//! Coordinates are space-separated in row-major order.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use convtensor::network::{Activation, LayerConfig, Network, PoolKind, PoolSpec};
use convtensor::training::Dataset;
use convtensor::{DenseTensor, FilterSpec, Padding};

use crate::CliError;

pub fn fmt_scalar(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_coords(t: &DenseTensor) -> String {
    t.data().iter().map(|&v| fmt_scalar(v)).collect::<Vec<_>>().join(" ")
}

fn fmt_dims(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn padding_name(p: Padding) -> &'static str {
    match p {
        Padding::Valid => "valid",
        Padding::Zero => "zero",
    }
}

pub fn parse_padding(s: &str) -> Result<Padding, String> {
    match s {
        "valid" => Ok(Padding::Valid),
        "zero" => Ok(Padding::Zero),
        _ => Err(format!("unknown padding '{s}' (expected valid or zero)")),
    }
}

/// Line cursor that tags every error with the file and 1-based line number.
struct Lines<'a> {
    path: &'a str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a str, text: &'a str) -> Self {
        Lines {
            path,
            lines: text.lines().enumerate(),
            line: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> CliError {
        CliError::Parse {
            path: self.path.to_string(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str, CliError> {
        for (i, line) in self.lines.by_ref() {
            self.line = i + 1;
            if !line.trim().is_empty() {
                return Ok(line);
            }
        }
        self.line += 1;
        Err(self.err(format!("unexpected end of file, expected {what}")))
    }

    fn finish(&mut self) -> Result<(), CliError> {
        for (i, line) in self.lines.by_ref() {
            if !line.trim().is_empty() {
                self.line = i + 1;
                return Err(self.err("unexpected trailing content"));
            }
        }
        Ok(())
    }

    fn tensor(&mut self, dims: &[usize], what: &str) -> Result<DenseTensor, CliError> {
        let line = self.next(what)?;
        let data = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|_| self.err(format!("bad scalar '{tok}' in {what}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let want: usize = dims.iter().product();
        if data.len() != want {
            return Err(self.err(format!(
                "{what} has {} coordinates, dims {dims:?} need {want}",
                data.len()
            )));
        }
        Ok(DenseTensor::new(dims.to_vec(), data).expect("length checked"))
    }
}

/// `key=value` fields of a header line, checked against a leading magic.
struct Header<'a> {
    fields: Vec<(&'a str, &'a str)>,
}

impl<'a> Header<'a> {
    fn parse(lines: &Lines<'_>, line: &'a str, magic: &str) -> Result<Self, CliError> {
        let rest = line
            .strip_prefix(magic)
            .ok_or_else(|| lines.err(format!("expected header starting with '{magic}'")))?;
        let fields = rest
            .split_whitespace()
            .map(|kv| kv.split_once('=').ok_or_else(|| lines.err(format!("malformed field '{kv}'"))))
            .collect::<Result<_, _>>()?;
        Ok(Header { fields })
    }

    fn get(&self, lines: &Lines<'_>, key: &str) -> Result<&'a str, CliError> {
        self.fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| lines.err(format!("missing field '{key}'")))
    }

    fn parse_as<T: FromStr>(&self, lines: &Lines<'_>, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(lines, key)?;
        v.parse().map_err(|e| lines.err(format!("field '{key}': {e}")))
    }

    fn dims(&self, lines: &Lines<'_>, key: &str) -> Result<Vec<usize>, CliError> {
        let v = self.get(lines, key)?;
        if v.is_empty() {
            return Ok(vec![]);
        }
        v.split(',')
            .map(|d| match d.parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(lines.err(format!("field '{key}': bad dimension '{d}'"))),
            })
            .collect()
    }
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_dataset(data: &Dataset) -> String {
    let mut out = format!(
        "tensor-dataset v1 q={} dims={} out_dims={} count={}\n",
        data.input_dims().len(),
        fmt_dims(data.input_dims()),
        fmt_dims(data.target_dims()),
        data.len()
    );
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        writeln!(out, "{}", fmt_coords(x)).unwrap();
        writeln!(out, "{}", fmt_coords(y)).unwrap();
    }
    out
}

pub fn parse_dataset(path: &str, text: &str) -> Result<Dataset, CliError> {
    let mut lines = Lines::new(path, text);
    let head = lines.next("dataset header")?;
    let h = Header::parse(&lines, head, "tensor-dataset v1")?;
    let q: usize = h.parse_as(&lines, "q")?;
    let dims = h.dims(&lines, "dims")?;
    let out_dims = h.dims(&lines, "out_dims")?;
    let count: usize = h.parse_as(&lines, "count")?;
    if dims.len() != q {
        return Err(lines.err(format!("q={q} but dims has {} entries", dims.len())));
    }
    if count == 0 {
        return Err(lines.err("count must be at least 1"));
    }
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for j in 1..=count {
        inputs.push(lines.tensor(&dims, &format!("input of sample {j}"))?);
        targets.push(lines.tensor(&out_dims, &format!("target of sample {j}"))?);
    }
    lines.finish()?;
    Ok(Dataset::new(inputs, targets)?)
}

pub fn write_tensor(t: &DenseTensor) -> String {
    format!("tensor v1 dims={}\n{}\n", fmt_dims(t.dims()), fmt_coords(t))
}

pub fn parse_tensor(path: &str, text: &str) -> Result<DenseTensor, CliError> {
    let mut lines = Lines::new(path, text);
    let head = lines.next("tensor header")?;
    let h = Header::parse(&lines, head, "tensor v1")?;
    let dims = h.dims(&lines, "dims")?;
    let t = lines.tensor(&dims, "coordinates")?;
    lines.finish()?;
    Ok(t)
}

fn fmt_pool(pool: &Option<PoolSpec>) -> String {
    match pool {
        None => "none".into(),
        Some(p) => format!("{}:{}", p.kind, fmt_dims(&p.window)),
    }
}

pub fn write_model(net: &Network) -> String {
    let mut out = format!(
        "tensor-model v1 q={} input_dims={} layers={}\n",
        net.input_dims().len(),
        fmt_dims(net.input_dims()),
        net.depth()
    );
    for (l, layer) in net.layers().iter().enumerate() {
        let f = &layer.filter;
        writeln!(
            out,
            "layer={} filter_dims={} strides={} padding={} activation={} pool={} bias_dims={}",
            l + 1,
            fmt_dims(f.kernel_dims()),
            fmt_dims(&f.strides),
            padding_name(f.padding),
            layer.activation,
            fmt_pool(&layer.pool),
            fmt_dims(layer.bias.dims()),
        )
        .unwrap();
        writeln!(out, "{}", fmt_coords(&f.filter)).unwrap();
        writeln!(out, "{}", fmt_coords(&layer.bias)).unwrap();
    }
    out
}

pub fn parse_model(path: &str, text: &str) -> Result<Network, CliError> {
    let mut lines = Lines::new(path, text);
    let head = lines.next("model header")?;
    let h = Header::parse(&lines, head, "tensor-model v1")?;
    let q: usize = h.parse_as(&lines, "q")?;
    let input_dims = h.dims(&lines, "input_dims")?;
    let depth: usize = h.parse_as(&lines, "layers")?;
    if input_dims.len() != q {
        return Err(lines.err(format!("q={q} but input_dims has {} entries", input_dims.len())));
    }
    let mut layers = Vec::with_capacity(depth);
    for l in 1..=depth {
        let line = lines.next(&format!("header of layer {l}"))?;
        let h = Header::parse(&lines, line, "")?;
        let index: usize = h.parse_as(&lines, "layer")?;
        if index != l {
            return Err(lines.err(format!("expected layer={l}, found layer={index}")));
        }
        let filter_dims = h.dims(&lines, "filter_dims")?;
        let strides = h.dims(&lines, "strides")?;
        let padding = parse_padding(h.get(&lines, "padding")?).map_err(|e| lines.err(e))?;
        let activation: Activation = h.parse_as(&lines, "activation")?;
        let pool = match h.get(&lines, "pool")? {
            "none" => None,
            spec => {
                let (kind, window) = spec
                    .split_once(':')
                    .ok_or_else(|| lines.err(format!("bad pool '{spec}' (expected none or kind:window)")))?;
                let kind: PoolKind = kind.parse().map_err(|e| lines.err(format!("pool: {e}")))?;
                let window = window
                    .split(',')
                    .map(|d| d.parse::<usize>().map_err(|_| lines.err(format!("bad pool window '{window}'"))))
                    .collect::<Result<Vec<_>, _>>()?;
                Some(PoolSpec::new(window, kind))
            }
        };
        let bias_dims = h.dims(&lines, "bias_dims")?;
        let filter = lines.tensor(&filter_dims, &format!("filter of layer {l}"))?;
        let bias = lines.tensor(&bias_dims, &format!("bias of layer {l}"))?;
        let spec = FilterSpec::new(filter, strides, padding).map_err(|e| lines.err(e.to_string()))?;
        let mut layer = LayerConfig::new(spec, bias, activation);
        if let Some(p) = pool {
            layer = layer.with_pool(p);
        }
        layers.push(layer);
    }
    lines.finish()?;
    Ok(Network::new(input_dims, layers)?)
}
