use std::path::Path;
use std::process::{Command, Output};

const SMOKE: &str = r#"
version = 1
pipeline = "PIPELINE"
seeds = [0, 1]

[dataset]
kind = "synthetic"
classes = 3
image_size = 16
train_per_class = 6
val_per_class = 3
test_per_class = 3

[model]
widths = [4, 8, 8]
head_widths = [8, 8]
neurons = 6

[train]
batch_size = 6
readout_epochs = 1

[train.schedule]
max_epochs = 1

[evaluation]
kinds = ["gaussian_noise", "contrast"]
levels = [1, 5]
"#;

fn cotrain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cotrain"))
        .args(args)
        .env_remove("COTRAIN_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, pipeline: &str) -> String {
    let path = dir.join(format!("{pipeline}.toml"));
    std::fs::write(&path, SMOKE.replace("PIPELINE", pipeline)).unwrap();
    path.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn smoke_run_lists_both_checkpoints_and_reruns_as_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "baseline");
    let out = tmp.path().join("run");
    let o = cotrain(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let text = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(text.contains("checkpoints/baseline_s0.ckpt"));
    assert!(text.contains("checkpoints/baseline_s1.ckpt"));
    for rel in ["eval/baseline_s0.csv", "eval/baseline_s1.json", "eval/baseline.csv", "metrics/baseline_s1.jsonl"] {
        assert!(out.join(rel).exists(), "{rel}");
    }

    let again = cotrain(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(again.status.success());
    let log = stdout(&again);
    let stage_lines: Vec<&str> = log.lines().filter(|l| l.contains(": ")).filter(|l| !l.starts_with("manifest")).collect();
    assert!(!stage_lines.is_empty());
    assert!(stage_lines.iter().all(|l| l.ends_with("skipped (up to date)")), "{log}");
}

#[test]
fn deleting_an_artifact_regenerates_only_its_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "baseline");
    let out = tmp.path().join("run");
    assert!(cotrain(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let csv_before = std::fs::read(out.join("eval/baseline_s1.csv")).unwrap();
    std::fs::remove_file(out.join("eval/baseline_s1.csv")).unwrap();
    let o = cotrain(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let log = stdout(&o);
    let ran: Vec<&str> = log.lines().filter(|l| l.ends_with(": running")).collect();
    assert_eq!(ran, vec!["eval:s1: running"], "{log}");
    assert_eq!(std::fs::read(out.join("eval/baseline_s1.csv")).unwrap(), csv_before);
}

#[test]
fn identical_configs_give_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mtl_monkey");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = cotrain(&["train", "--config", &cfg, "--out", dir.to_str().unwrap(), "--seed", "3"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for rel in ["metrics/mtl_monkey_s3.jsonl", "eval/mtl_monkey_s3.csv", "eval/mtl_monkey.csv"] {
        assert_eq!(std::fs::read(a.join(rel)).unwrap(), std::fs::read(b.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn missing_dataset_root_exits_with_data_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("dir.toml");
    let text = SMOKE.replace("PIPELINE", "baseline").replace(
        "kind = \"synthetic\"\nclasses = 3\nimage_size = 16\ntrain_per_class = 6\nval_per_class = 3\ntest_per_class = 3",
        "kind = \"directory\"\nroot = \"/nonexistent/cotrain-data\"",
    );
    std::fs::write(&cfg, text).unwrap();
    let o = cotrain(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage 'data'"));
}

#[test]
fn malformed_config_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "version = 1\npipeline = \"nonsense\"\n").unwrap();
    let o = cotrain(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_on_missing_inputs_exits_with_data_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cotrain(&[
        "report",
        "--kind",
        "robustness_curves",
        "--out",
        tmp.path().to_str().unwrap(),
        tmp.path().join("absent.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn prepared_directory_dataset_trains_like_the_synthetic_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "baseline");
    let prep = tmp.path().join("prep");
    let o = cotrain(&["prepare-data", "--config", &cfg, "--out", prep.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let dir_cfg = tmp.path().join("dir.toml");
    let text = std::fs::read_to_string(&cfg).unwrap().replace(
        "kind = \"synthetic\"\nclasses = 3\nimage_size = 16\ntrain_per_class = 6\nval_per_class = 3\ntest_per_class = 3",
        "kind = \"directory\"\nroot = \"/nonexistent\"",
    );
    std::fs::write(&dir_cfg, text).unwrap();
    let out = tmp.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_cotrain"))
        .args(["train", "--seed", "0", "--config", dir_cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("COTRAIN_DATA_ROOT", prep.join("data"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("checkpoints/baseline_s0.ckpt").exists());
}

#[test]
fn report_and_reconstruction_commands_produce_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "baseline");
    let out = tmp.path().join("run");
    assert!(cotrain(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());

    let figs = tmp.path().join("figs");
    let o = cotrain(&[
        "report",
        "--kind",
        "robustness_curves",
        "--out",
        figs.to_str().unwrap(),
        out.join("eval/baseline.csv").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let svg = std::fs::read_to_string(figs.join("robustness_curves.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(svg.contains("<metadata>"));

    // Reconstruct a generated image, then derive its spectral control.
    let img = cotrain::data::synthetic::render(0, 3, 16, 9);
    let img_path = tmp.path().join("img.f32");
    std::fs::write(&img_path, cotrain::image::encode_raster(&img)).unwrap();
    let rec = tmp.path().join("rec");
    let o = cotrain(&[
        "reconstruct",
        "--checkpoint",
        out.join("checkpoints/baseline_s0.ckpt").to_str().unwrap(),
        "--radius",
        "5,10",
        "--steps",
        "20",
        "--out",
        rec.to_str().unwrap(),
        img_path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["img_r5.f32", "img_r5.json", "img_r10.png"] {
        assert!(rec.join(f).exists(), "{f}");
    }
    let o = cotrain(&[
        "spectral-control",
        "--recon",
        rec.join("img_r5.f32").to_str().unwrap(),
        "--target",
        rec.join("img_r10.f32").to_str().unwrap(),
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(rec.join("img_r5_spectral.f32").exists());

    let dens = tmp.path().join("dens");
    std::fs::create_dir_all(&dens).unwrap();
    let d = cotrain::image::ImageArray::from_fn(16, 16, cotrain::image::ValueSpace::Raw, |y, x| {
        (-((y as f32 - 8.0).powi(2) + (x as f32 - 8.0).powi(2)) / 20.0).exp()
    });
    std::fs::write(dens.join("img.f32"), cotrain::image::encode_raster(&d)).unwrap();
    let o = cotrain(&[
        "saliency-ratio",
        "--images",
        img_path.to_str().unwrap(),
        "--densities",
        dens.to_str().unwrap(),
        "--recons",
        rec.to_str().unwrap(),
        "--model",
        "baseline",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("saliency_baseline.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
}
