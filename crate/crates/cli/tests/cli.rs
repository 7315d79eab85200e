use std::path::Path;
use std::process::{Command, Output};

fn r3d(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r3d"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run r3d")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const CONFIG: &str = r#"
version = 1

[gen]
out_dir = "data"
split = [6, 2, 2]

[[gen.datasets]]
name = "slow"
n_samples = 20
[gen.datasets.channel]
t = 16
k = 8
u = 4
slot_duration_s = 1e-3
subcarrier_spacing_hz = 30e3
carrier_hz = 3.5e9
speed_mps = 3.0
delay_spread_s = 300e-9
antenna_spacing_wavelengths = 0.5
seed = 1

[train]
out_dir = "runs/a"
data = ["data/*.csi3d"]

[model]
enc_depth = 1
enc_dim = 16
enc_heads = 2
dec_depth = 1
dec_dim = 16
dec_heads = 2
pe_variant = "rope3d_adaptive"
mlp_ratio = 2

[optim]
epochs = 2
lr = 2e-3
beta1 = 0.9
beta2 = 0.95
weight_decay = 0.05
warmup_epochs = 1
batch_size = 4
seed = 3
"#;

fn metric(csv: &str, task: &str, epoch: &str) -> f64 {
    csv.lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|c| c[0] == epoch && c[1] == task && c[2] == "val")
        .map(|c| c[3].parse().unwrap())
        .unwrap()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();

    let gen = ok(&r3d(d, &["gen", "run.toml"]));
    assert!(gen.contains("slow.csi3d"));
    assert!(d.join("data/gen.manifest.toml").exists());
    assert_eq!(r3d(d, &["gen", "run.toml"]).status.code(), Some(2));
    ok(&r3d(d, &["gen", "run.toml", "--force"]));

    let acf = ok(&r3d(d, &["acf", "data/slow.csi3d", "--axis", "K", "--max-lag", "4", "--out", "acf.csv"]));
    assert!(acf.contains("c_k="));
    assert_eq!(std::fs::read_to_string(d.join("acf.csv")).unwrap().lines().count(), 6);
    assert!(d.join("acf.csv.manifest.toml").exists());

    ok(&r3d(d, &["train", "run.toml", "--epochs", "1"]));
    let ck = d.join("runs/a/checkpoint.r3d");
    assert!(ck.exists());
    ok(&r3d(d, &["train", "run.toml", "--resume", "runs/a/checkpoint.r3d"]));
    let metrics = std::fs::read_to_string(d.join("runs/a/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().filter(|l| l.starts_with("epoch")).count(), 1);
    assert!(metrics.lines().any(|l| l.starts_with("2,mixed,train")));

    ok(&r3d(d, &[
        "eval", "runs/a/checkpoint.r3d", "data/*.csi3d", "--split", "val", "--out", "eval.csv",
    ]));
    let eval = std::fs::read_to_string(d.join("eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 4);
    for row in eval.lines().skip(1) {
        let c: Vec<&str> = row.split(',').collect();
        let db: f64 = c[7].parse().unwrap();
        assert!((db - metric(&metrics, c[4], "2")).abs() < 1e-6, "{row}");
    }

    ok(&r3d(d, &["probe", "--checkpoint", "runs/a/checkpoint.r3d", "--radius", "3", "--out", "p.csv", "--bank-out", "bank.csv"]));
    assert_eq!(std::fs::read_to_string(d.join("p.csv")).unwrap().lines().count(), 1 + 2 * 49);
    ok(&r3d(d, &[
        "probe", "--checkpoint", "runs/a/checkpoint.r3d", "--adapted-from", "data/slow.csi3d",
        "--head", "1", "--radius", "2", "--out", "pa.csv",
    ]));

    ok(&r3d(d, &["train", "run.toml", "--pe", "rope3d_fixed", "--out-dir", "runs/b"]));
    let cmp = ok(&r3d(d, &["compare", "runs/*/manifest.toml"]));
    let lines: Vec<&str> = cmp.lines().collect();
    assert_eq!(lines[0], "variant,runs,mean_nmse_db,delta_db");
    assert!(lines.iter().any(|l| l.starts_with("rope3d_fixed,1,") && l.ends_with(",0")));
    assert_eq!(r3d(d, &["compare", "runs/*/missing.toml"]).status.code(), Some(2));
}

#[test]
fn training_is_reproducible_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    ok(&r3d(d, &["gen", "run.toml"]));
    ok(&r3d(d, &["train", "run.toml", "--out-dir", "x"]));
    ok(&r3d(d, &["--threads", "2", "train", "run.toml", "--out-dir", "y"]));
    let a = std::fs::read_to_string(d.join("x/metrics.csv")).unwrap();
    let b = std::fs::read_to_string(d.join("y/metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), CONFIG.replace("t = 16\n", "")).unwrap();
    let out = r3d(d, &["gen", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`t`"));

    std::fs::write(d.join("neg.toml"), CONFIG.replace("speed_mps = 3.0", "speed_mps = -1.0")).unwrap();
    let out = r3d(d, &["gen", "neg.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed_mps"));

    assert_eq!(r3d(d, &["eval", "nope.r3d", "*.csi3d", "--out", "e.csv"]).status.code(), Some(2));
    assert_eq!(r3d(d, &["probe", "--pe", "ape1d", "--out", "p.csv"]).status.code(), Some(2));
}

#[test]
fn fresh_probe_is_seed_free_for_the_fixed_bank() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&r3d(d, &["probe", "--pe", "rope3d_fixed", "--seed", "1", "--out", "a.csv"]));
    ok(&r3d(d, &["probe", "--pe", "rope3d_fixed", "--seed", "2", "--out", "b.csv"]));
    assert_eq!(std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("b.csv")).unwrap());
    let text = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "head,dt,dk,du,g");
    assert!(text.lines().any(|l| l.starts_with("0,0,0,0,1")));
}
