use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cotrain::corruptions::CorruptionKind;
use cotrain::data::{to_grayscale, write_dataset, DATA_ROOT_ENV};
use cotrain::image::{decode_raster, read_image_file, write_png_preview, ImageArray, ValueSpace};
use cotrain::model::ModelCheckpoint;
use cotrain::reconstruction::{
    load_reconstruction, reconstruct_image, save_reconstruction, spectral_control, ReconOptimizer,
    ReconstructionResult, DEFAULT_NORM_LADDER,
};
use cotrain::robustness::{evaluate_on_suite, robustness_score, AccuracyTable};
use cotrain::saliency::{
    binarize_saliency, records_to_csv, resize_pair, SaliencyDensity, SaliencyRatioRecord, ANALYSIS_SIZE,
};
use cotrain::training::{generate_surrogate_responses, GaborBank, Teacher};
use cotrain::{Error, Result};
use cotrain_cli::config::{ExperimentConfig, TeacherSpec};
use cotrain_cli::pipeline::{load_splits, run_experiment, severity_table};
use cotrain_cli::report::{report, ReportKind, ReportOptions};
use cotrain_cli::StageError;

#[derive(Parser)]
#[command(name = "cotrain", version, about = "Neural co-training experiments: train, evaluate, reconstruct, report")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Seeds trained concurrently, each in its own process and subdirectory.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Dataset root override for directory datasets.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Optimizer {
    Plain,
    Adaptive,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the configured dataset as a directory with a manifest.
    PrepareData,
    /// Write surrogate neural responses for the train and val splits.
    GenNeural,
    /// Run the configured pipeline end to end (idempotent).
    Train,
    /// Evaluate a checkpoint on the clean and corrupted eval split.
    EvalRobustness {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Baseline accuracy CSV; when given, a robustness report is written too.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Model seed recorded in the table.
        #[arg(long, default_value_t = 0)]
        model_seed: u64,
    },
    /// Reconstruct images from a checkpoint's tap activations.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target images (PNG/BMP or `.f32` rasters in [0,1]).
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Norm budgets; defaults to the standard ladder.
        #[arg(long, value_delimiter = ',')]
        radius: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Optimizer::Plain)]
        optimizer: Optimizer,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Combine a reconstruction's amplitude spectrum with its target's phase.
    SpectralControl {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Norm-ratio change inside salient regions for a set of reconstructions.
    SaliencyRatio {
        /// Original images; file stems name the images.
        #[arg(long, required = true, num_args = 1..)]
        images: Vec<PathBuf>,
        /// Directory of densities named `<stem>.png` or `<stem>.f32`.
        #[arg(long)]
        densities: PathBuf,
        /// Directory of reconstructions named `<stem>_r<radius>.f32` with JSON sidecars.
        #[arg(long)]
        recons: PathBuf,
        /// Model label for the output rows.
        #[arg(long)]
        model: String,
    },
    /// Emit a figure (SVG) and its underlying CSV from run artifacts.
    Report {
        #[arg(long, value_enum)]
        kind: ReportKind,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        model_a: Option<String>,
        #[arg(long)]
        model_b: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn stage<T>(name: &str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError { stage: name.to_string(), source })
}

struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
}

fn context(cli: &Cli) -> Result<Context> {
    let path = cli.config.as_ref().ok_or_else(|| Error::config("--config is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let (Some(root), cotrain_cli::config::DatasetSpec::Directory { root: r }) = (&cli.data_root, &mut cfg.dataset) {
        *r = root.clone();
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::config("no output directory: pass --out or set `output`"))?;
    Ok(Context { cfg, out })
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    cli.out.clone().ok_or_else(|| Error::config("--out is required"))
}

fn run(cli: Cli) -> std::result::Result<(), StageError> {
    match &cli.command {
        Command::PrepareData => {
            let ctx = stage("setup", context(&cli))?;
            let splits = stage("data", load_splits(&ctx.cfg.dataset))?;
            let root = ctx.out.join("data");
            let manifest = stage("data", write_dataset(&root, &[&splits.train, &splits.val, &splits.eval]))?;
            println!("wrote {} images to {}", manifest.entries.len(), root.display());
        }
        Command::GenNeural => {
            let ctx = stage("setup", context(&cli))?;
            let splits = stage("data", load_splits(&ctx.cfg.dataset))?;
            let TeacherSpec::Gabor { seed } = ctx.cfg.teacher else {
                return stage("responses", Err(Error::config("gen-neural synthesizes responses; teacher must be gabor")));
            };
            let size = splits.train.image_shape().map(|s| s.0).unwrap_or(0);
            let bank = GaborBank::new(ctx.cfg.model.neurons, size, seed);
            let t = Teacher::GaborBank(&bank);
            for (name, set) in [("train", &splits.train), ("val", &splits.val)] {
                let r = stage("responses", generate_surrogate_responses(&t, set, ctx.cfg.train.eval_batch))?;
                let path = ctx.out.join("neural").join(format!("{name}.ctnr"));
                stage("responses", write_file(&path, &r.encode()))?;
                println!("{}: {} images x {} neurons", path.display(), r.images, r.neurons);
            }
        }
        Command::Train => {
            let ctx = stage("setup", context(&cli))?;
            if cli.jobs > 1 && ctx.cfg.seeds.len() > 1 {
                return train_parallel(&cli, &ctx);
            }
            let outcome = run_experiment(&ctx.cfg, &ctx.out, &mut |m| println!("{m}"))?;
            println!("manifest: {}", ctx.out.join(cotrain_cli::manifest::MANIFEST_NAME).display());
            let ran = outcome.stages.iter().filter(|(_, s)| *s == cotrain_cli::manifest::StageStatus::Ran).count();
            println!("{ran} stage(s) ran, {} skipped", outcome.stages.len() - ran);
        }
        Command::EvalRobustness { checkpoint, baseline, model_seed } => {
            let ctx = stage("setup", context(&cli))?;
            let splits = stage("data", load_splits(&ctx.cfg.dataset))?;
            let e = &ctx.cfg.evaluation;
            let table = stage("eval", severity_table(e.severity_table.as_deref()))?;
            let ckpt = stage("eval", ModelCheckpoint::load(checkpoint))?;
            let kinds: Vec<CorruptionKind> = e.kinds.clone();
            let acc = stage(
                "eval",
                evaluate_on_suite(&ckpt, &splits.eval, &kinds, &e.levels, e.corruption_seed, &table, *model_seed),
            )?;
            let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
            let csv = ctx.out.join(format!("{stem}.csv"));
            stage("eval", write_file(&csv, acc.to_csv().as_bytes()))?;
            println!("clean accuracy {:.4}; table {}", acc.clean_mean().unwrap_or(f64::NAN), csv.display());
            if let Some(b) = baseline {
                let text = stage("eval", std::fs::read_to_string(b).map_err(|e| Error::io(b, e)))?;
                let base = stage("eval", AccuracyTable::from_csv(&text).map_err(|e| Error::data_file(b, e.to_string())))?;
                let rep = stage("eval", robustness_score(&acc, &base))?.with_provenance(
                    "default",
                    &ckpt.lineage,
                    &b.display().to_string(),
                );
                let json = ctx.out.join(format!("{stem}_robustness.json"));
                stage("eval", write_file(&json, rep.to_json().as_bytes()))?;
                println!("robustness score {:.4}; report {}", rep.score, json.display());
            }
        }
        Command::Reconstruct { checkpoint, images, radius, optimizer, steps, lr } => {
            let out = stage("setup", out_dir(&cli))?;
            let ckpt = stage("reconstruct", ModelCheckpoint::load(checkpoint))?;
            let mut opt = match optimizer {
                Optimizer::Plain => ReconOptimizer::plain(),
                Optimizer::Adaptive => ReconOptimizer::adaptive(),
            };
            if let Some(s) = steps {
                opt = opt.with_steps(*s);
            }
            if let Some(l) = lr {
                opt = opt.with_lr(*l);
            }
            let radii: Vec<f64> = if radius.is_empty() { DEFAULT_NORM_LADDER.to_vec() } else { radius.clone() };
            let seed = cli.seed.unwrap_or(0);
            for path in images {
                let img = stage("reconstruct", load_unit_image(path))?;
                let target = stage("reconstruct", ckpt.prepare(&img))?;
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                for &r in &radii {
                    let (x, res) = stage("reconstruct", reconstruct_image(&ckpt, &target, r, opt.clone(), seed))?;
                    let saved = stage("reconstruct", save_reconstruction(&out, &format!("{stem}_r{r}"), &x, &res))?;
                    println!("{} r={r}: loss {:.5e}, norm {:.3}", saved.raster.display(), res.loss, res.norm);
                }
            }
        }
        Command::SpectralControl { recon, target } => {
            let out = stage("setup", out_dir(&cli))?;
            let x = stage("spectral", load_reconstruction(recon))?;
            let t = stage("spectral", load_standardized(target))?;
            let img = stage("spectral", spectral_control(&x, &t))?;
            let stem = recon.file_stem().and_then(|s| s.to_str()).unwrap_or("recon");
            let raster = out.join(format!("{stem}_spectral.f32"));
            stage("spectral", write_file(&raster, &cotrain::image::encode_raster(&img)))?;
            let (lo, hi) = img.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            stage("spectral", write_png_preview(&img, lo, hi, &raster.with_extension("png")))?;
            println!("{}", raster.display());
        }
        Command::SaliencyRatio { images, densities, recons, model } => {
            let out = stage("setup", out_dir(&cli))?;
            let records = stage("saliency", saliency_records(images, densities, recons, model))?;
            let csv = out.join(format!("saliency_{model}.csv"));
            stage("saliency", write_file(&csv, records_to_csv(&records).as_bytes()))?;
            println!("{} records -> {}", records.len(), csv.display());
        }
        Command::Report { kind, inputs, baseline, model_a, model_b } => {
            let out = stage("setup", out_dir(&cli))?;
            let opts = ReportOptions { baseline: baseline.clone(), model_a: model_a.clone(), model_b: model_b.clone() };
            let s = stage("report", report(*kind, inputs, &opts, &out))?;
            println!("{} ({} panels, {} points); data {}", s.svg.display(), s.panels, s.points, s.csv.display());
        }
    }
    Ok(())
}

/// Run each seed as a child `train --seed` process in `<out>/seed-<s>`.
fn train_parallel(cli: &Cli, ctx: &Context) -> std::result::Result<(), StageError> {
    let exe = stage("setup", std::env::current_exe().map_err(|e| Error::io("current executable", e)))?;
    let config = cli.config.clone().expect("checked by context");
    let mut pending: Vec<u64> = ctx.cfg.seeds.clone();
    pending.reverse();
    let mut running: Vec<(u64, std::process::Child)> = Vec::new();
    let mut failure: Option<(u64, i32)> = None;
    while !pending.is_empty() || !running.is_empty() {
        while running.len() < cli.jobs && failure.is_none() {
            let Some(seed) = pending.pop() else { break };
            let dir = ctx.out.join(format!("seed-{seed}"));
            let child = std::process::Command::new(&exe)
                .arg("train")
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(&dir)
                .arg("--seed")
                .arg(seed.to_string())
                .spawn()
                .map_err(|e| Error::io(&exe, e));
            running.push((seed, stage("setup", child)?));
        }
        if running.is_empty() {
            break;
        }
        let (seed, mut child) = running.remove(0);
        let status = stage("setup", child.wait().map_err(|e| Error::io(&exe, e)))?;
        if !status.success() && failure.is_none() {
            failure = Some((seed, status.code().unwrap_or(4)));
        }
    }
    match failure {
        None => Ok(()),
        Some((seed, code)) => {
            let source = match code {
                2 => Error::config(format!("seed {seed} failed")),
                3 => Error::data(format!("seed {seed} failed")),
                _ => Error::eval(format!("seed {seed} failed with exit code {code}")),
            };
            Err(StageError { stage: format!("train:s{seed}"), source })
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a grayscale image in [0,1] from PNG/BMP or a `.f32` raster.
fn load_unit_image(path: &Path) -> Result<ImageArray> {
    let wrap = |e: Error| Error::data_file(path, e.to_string());
    if path.extension().is_some_and(|e| e == "f32") {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_raster(&bytes, ValueSpace::Raw).map_err(wrap)
    } else {
        to_grayscale(&read_image_file(path)?).map_err(wrap)
    }
}

fn load_standardized(path: &Path) -> Result<ImageArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes, ValueSpace::Standardized).map_err(|e| Error::data_file(path, e.to_string()))
}

fn saliency_records(
    images: &[PathBuf],
    densities: &Path,
    recons: &Path,
    model: &str,
) -> Result<Vec<SaliencyRatioRecord>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(recons)
        .map_err(|e| Error::io(recons, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "f32"))
        .collect();
    entries.sort();
    let mut records = Vec::new();
    for path in images {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let density_path = ["png", "f32"]
            .iter()
            .map(|ext| densities.join(format!("{stem}.{ext}")))
            .find(|p| p.exists())
            .ok_or_else(|| Error::data_file(densities, format!("no density for image '{stem}'")))?;
        let density = SaliencyDensity::load(&density_path)?;
        let mask = binarize_saliency(&density)?;
        let original = load_unit_image(path)?;
        let (original, mask) = resize_pair(&original, &mask, ANALYSIS_SIZE)?;
        let prefix = format!("{stem}_r");
        for rpath in entries.iter().filter(|p| {
            p.file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.strip_prefix(&prefix))
                .is_some_and(|r| r.parse::<f64>().is_ok())
        }) {
            let sidecar = rpath.with_extension("json");
            let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            let meta: ReconstructionResult =
                serde_json::from_str(&text).map_err(|e| Error::data_file(&sidecar, e.to_string()))?;
            let recon = load_reconstruction(rpath)?;
            // Compare in a common space: both images resized to the analysis grid.
            let recon = recon.resize_bilinear(ANALYSIS_SIZE, ANALYSIS_SIZE);
            records.push(SaliencyRatioRecord::new(stem, model, meta.radius, &recon, &original, &mask)?);
        }
    }
    Ok(records)
}
