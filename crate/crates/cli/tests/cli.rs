use std::fs;
use std::path::Path;
use std::process::Command;

use convtensor::network::LossKind;
use convtensor::training::evaluate;
use convtensor_cli::format::{parse_dataset, parse_model};
use tempfile::TempDir;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["convtensor"];
    argv.extend_from_slice(args);
    let code = convtensor_cli::run(argv, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    path(dir, name)
}

const CONV1D: &str = r#"
[network]
input_dims = [5]

[[network.layers]]
filter_dims = [2]
activation = "identity"
"#;

const TEACHER: &str = r#"
[network]
input_dims = [6, 6]

[[network.layers]]
filter_dims = [3, 3]
strides = [1, 1]

[[network.layers]]
filter_dims = [3, 3]

[training]
loss = "mse"
learning_rate = 0.01
tolerance = 1e-10
max_epochs = 20
seed = 9
init_scale = 0.5

[data]
train = "data/train.txt"
validation = "data/validation.txt"
"#;

fn losses(stdout: &str) -> Vec<f64> {
    stdout
        .lines()
        .filter_map(|l| l.strip_prefix("epoch="))
        .map(|l| l.split_once(" loss=").unwrap().1.parse().unwrap())
        .collect()
}

#[test]
fn generate_writes_expected_shapes() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", CONV1D);
    let r = run(&["generate", "--config", &cfg, "--out", &path(dir.path(), "d"), "--count", "4", "--validation-count", "2"]);
    assert_eq!(r.code, 0, "{}", r.err);
    let text = fs::read_to_string(dir.path().join("d/train.txt")).unwrap();
    assert!(text.starts_with("tensor-dataset v1 q=1 dims=5 out_dims=4 count=4\n"));
    let data = parse_dataset("train", &text).unwrap();
    assert_eq!(data.len(), 4);
    assert!(data.inputs.iter().all(|x| x.dims() == [5]));
    assert!(data.targets.iter().all(|y| y.dims() == [4]));
}

#[test]
fn generate_is_deterministic_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", TEACHER);
    for out in ["a", "b"] {
        let r = run(&["generate", "--config", &cfg, "--out", &path(dir.path(), out), "--seed", "5"]);
        assert_eq!(r.code, 0, "{}", r.err);
    }
    for file in ["train.txt", "validation.txt", "teacher.model"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let text = fs::read_to_string(dir.path().join("a/train.txt")).unwrap();
    let data = parse_dataset("train", &text).unwrap();
    assert_eq!(convtensor_cli::format::write_dataset(&data), text);
}

#[test]
fn generate_rejects_empty_batch() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", CONV1D);
    let r = run(&["generate", "--config", &cfg, "--out", &path(dir.path(), "d"), "--count", "0"]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("empty"), "{}", r.err);
}

#[test]
fn teacher_fits_its_own_data() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", TEACHER);
    let d = path(dir.path(), "data");
    assert_eq!(run(&["generate", "--config", &cfg, "--out", &d, "--seed", "1"]).code, 0);
    let r = run(&["eval", "--model", &path(dir.path(), "data/teacher.model"), "--data", &path(dir.path(), "data/train.txt"), "--loss", "mse"]);
    assert_eq!(r.code, 0, "{}", r.err);
    let value: f64 = r.out.trim().strip_prefix("loss=").unwrap().parse().unwrap();
    assert!(value <= 1e-20, "{value}");
}

#[test]
fn train_descends_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", TEACHER);
    assert_eq!(run(&["generate", "--config", &cfg, "--out", &path(dir.path(), "data"), "--seed", "2"]).code, 0);
    let first = run(&["train", "--config", &cfg, "--out", &path(dir.path(), "m1.model")]);
    assert_eq!(first.code, 0, "{}", first.err);
    let l = losses(&first.out);
    assert!(l.len() >= 10);
    assert!(l[9] < l[0], "{l:?}");
    assert!(first.out.lines().last().unwrap().starts_with("stop="));

    let second = run(&["train", "--config", &cfg, "--out", &path(dir.path(), "m2.model")]);
    assert_eq!(first.out, second.out);
    assert_eq!(
        fs::read(dir.path().join("m1.model")).unwrap(),
        fs::read(dir.path().join("m2.model")).unwrap()
    );

    // The written model reproduces the last logged loss on the next forward pass.
    let text = fs::read_to_string(dir.path().join("m1.model")).unwrap();
    let net = parse_model("m1", &text).unwrap();
    assert_eq!(convtensor_cli::format::write_model(&net), text);
    let val = parse_dataset("v", &fs::read_to_string(dir.path().join("data/validation.txt")).unwrap()).unwrap();
    assert!(evaluate(&net, &val, LossKind::Mse).unwrap() < l[0]);
}

#[test]
fn train_epoch_cap_of_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", &TEACHER.replace("max_epochs = 20", "max_epochs = 1"));
    assert_eq!(run(&["generate", "--config", &cfg, "--out", &path(dir.path(), "data")]).code, 0);
    let r = run(&["train", "--config", &cfg, "--out", &path(dir.path(), "m.model")]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert_eq!(losses(&r.out).len(), 1);
    assert!(r.out.contains("stop=epoch_cap epochs=1"));
}

#[test]
fn malformed_header_names_the_line() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", CONV1D);
    let bad = write(dir.path(), "bad.txt", "\ntensor-dataset v1 q=1 dims=5 out_dims=4 count=x\n");
    let val = write(dir.path(), "val.txt", "tensor-dataset v1 q=1 dims=5 out_dims=4 count=1\n1 2 3 4 5\n1 2 3 4\n");
    let r = run(&["train", "--config", &cfg, "--data", &bad, "--validation", &val, "--out", &path(dir.path(), "m")]);
    assert_eq!(r.code, 1);
    assert!(r.err.contains("bad.txt:2:"), "{}", r.err);
}

#[test]
fn eval_closed_form_for_zero_model() {
    let dir = TempDir::new().unwrap();
    let model = write(
        dir.path(),
        "zero.model",
        "tensor-model v1 q=1 input_dims=3 layers=1\n\
         layer=1 filter_dims=1 strides=1 padding=valid activation=identity pool=none bias_dims=3\n\
         0\n0 0 0\n",
    );
    let data = write(
        dir.path(),
        "d.txt",
        "tensor-dataset v1 q=1 dims=3 out_dims=3 count=2\n1 1 1\n1 2 2\n0 0 0\n3 0 0\n",
    );
    let r = run(&["eval", "--model", &model, "--data", &data]);
    assert_eq!(r.code, 0, "{}", r.err);
    // mean over samples of ‖Y‖²/m: (9/3 + 9/3) / 2 = 3
    assert_eq!(r.out.trim(), format!("loss={:.11e}", 3.0));

    let wrong = write(dir.path(), "w.txt", "tensor-dataset v1 q=1 dims=4 out_dims=3 count=1\n1 1 1 1\n0 0 0\n");
    let r = run(&["eval", "--model", &model, "--data", &wrong]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("geometry"), "{}", r.err);
}

#[test]
fn conv_examples() {
    let dir = TempDir::new().unwrap();
    let u = write(dir.path(), "u.txt", "tensor v1 dims=5\n1 2 3 4 5\n");
    let r = run(&["conv", "--filter", "1,2", "--data", &u]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert_eq!(r.out, "5 8 11 14\n");

    let r = run(&["conv", "--filter", "1,1,1", "--padding", "zero", "--data", &u]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert_eq!(r.out, "3 6 9 12 9\n");

    let r = run(&["conv", "--filter", "1,1,1,1,1,1", "--data", &u]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("geometry"), "{}", r.err);

    let r = run(&["conv", "--filter", "1,x", "--data", &u]);
    assert_eq!(r.code, 1);
}

#[test]
fn gradcheck_passes_and_reports_each_parameter() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", TEACHER);
    let r = run(&["gradcheck", "--config", &cfg, "--seed", "3"]);
    assert_eq!(r.code, 0, "{}{}", r.out, r.err);
    let lines: Vec<&str> = r.out.lines().collect();
    assert_eq!(
        lines.iter().filter(|l| l.starts_with("layer=")).count(),
        4,
        "{}",
        r.out
    );
    for (l, p) in [(1, "filter"), (1, "bias"), (2, "filter"), (2, "bias")] {
        assert!(lines.iter().any(|s| s.starts_with(&format!("layer={l} param={p} "))));
    }
    assert_eq!(*lines.last().unwrap(), "result=pass");
}

#[test]
fn gradcheck_detects_a_corrupted_gradient() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", TEACHER);
    let r = run(&["gradcheck", "--config", &cfg, "--corrupt"]);
    assert_eq!(r.code, 3);
    assert!(r.out.contains("layer=1 param=filter") && r.out.contains("result=fail"));
}

#[test]
fn gradcheck_over_every_loss_and_activation() {
    let dir = TempDir::new().unwrap();
    for act in ["identity", "sigmoid", "relu", "tanh"] {
        for loss in ["mse", "mae", "lch", "msle", "poi"] {
            let text = format!(
                "[network]\ninput_dims = [5, 4]\n\n\
                 [[network.layers]]\nfilter_dims = [2, 2]\npadding = \"zero\"\nactivation = \"{act}\"\n\
                 pool = {{ kind = \"max\", window = [2, 1] }}\n\n\
                 [[network.layers]]\nfilter_dims = [2, 2]\nstrides = [2, 1]\nactivation = \"{act}\"\n\n\
                 [training]\nloss = \"{loss}\"\n"
            );
            let cfg = write(dir.path(), "c.toml", &text);
            let r = run(&["gradcheck", "--config", &cfg, "--seed", "11"]);
            assert_eq!(r.code, 0, "{act}/{loss}: {}{}", r.out, r.err);
        }
    }
}

#[test]
fn config_geometry_is_validated_up_front() {
    let dir = TempDir::new().unwrap();
    let text = CONV1D.to_string() + "\n[[network.layers]]\nfilter_dims = [9]\n";
    let cfg = write(dir.path(), "c.toml", &text);
    let r = run(&["generate", "--config", &cfg, "--out", &path(dir.path(), "d")]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("layer 2"), "{}", r.err);
    assert!(!dir.path().join("d").exists());
}

#[test]
fn usage_errors_and_binary_exit_codes() {
    assert_eq!(run(&["frobnicate"]).code, 1);
    assert_eq!(run(&["--help"]).code, 0);
    let status = Command::new(env!("CARGO_BIN_EXE_convtensor"))
        .args(["conv", "--filter", "1", "--data", "/nonexistent/tensor.txt"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&status.stderr).contains("/nonexistent/tensor.txt"));
}
