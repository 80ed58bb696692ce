//! Stage-by-stage execution of the experiment pipelines.

use std::path::{Path, PathBuf};

use cotrain::corruptions::{SeverityTable, DEFAULT_SEVERITY_TOML};
use cotrain::data::synthetic::generate;
use cotrain::data::{data_root, load_dataset, LabeledImageSet, Manifest, Split, MANIFEST_FILE};
use cotrain::model::{ModelCheckpoint, ModelConfig};
use cotrain::robustness::{brain_likeness, evaluate_on_suite, AccuracyTable};
use cotrain::training::{
    fit_readout_on_frozen_trunk, generate_surrogate_responses, metrics_jsonl, shuffle_responses, train_mtl,
    train_oracle, train_single_task, GaborBank, NeuralPairs, NeuralResponseSet, Task, Teacher,
    TrainConfig, TrainData, TrainOutcome,
};
use cotrain::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig, Pipeline, TeacherSpec};
use crate::manifest::{now, stage_digest, RunManifest, StageRecord, StageStatus};
use crate::StageError;

pub struct Splits {
    pub train: LabeledImageSet,
    pub val: LabeledImageSet,
    /// Evaluation split: `test` when present, else `val`.
    pub eval: LabeledImageSet,
}

pub fn load_splits(spec: &DatasetSpec) -> Result<Splits> {
    match spec {
        DatasetSpec::Synthetic(c) => {
            let d = generate(c)?;
            Ok(Splits { train: d.train, val: d.val, eval: d.test })
        }
        DatasetSpec::Directory { root } => {
            let root = data_root(root);
            if !root.is_dir() {
                return Err(Error::data_file(&root, "dataset root does not exist"));
            }
            let mpath = root.join(MANIFEST_FILE);
            let manifest = if mpath.exists() { Manifest::read(&mpath)? } else { Manifest::scan(&root)? };
            let train = load_dataset(&root, Split::Train, &manifest)?;
            let val = load_dataset(&root, Split::Val, &manifest)?;
            let eval = if manifest.entries.iter().any(|e| e.split == Split::Test) {
                load_dataset(&root, Split::Test, &manifest)?
            } else {
                val.clone()
            };
            Ok(Splits { train, val, eval })
        }
    }
}

pub fn severity_table(path: Option<&Path>) -> Result<SeverityTable> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            SeverityTable::parse(&text).map_err(|e| Error::data_file(p, e.to_string()))
        }
        None => SeverityTable::parse(DEFAULT_SEVERITY_TOML),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DataSummary {
    train: (usize, String),
    val: (usize, String),
    eval: (usize, String),
    classes: usize,
    image_size: usize,
}

/// Per-seed scalar summary used by the correlation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub pipeline: String,
    pub seed: u64,
    pub clean_accuracy: f64,
    pub neural_correlation: Option<f64>,
    pub batch_ratio: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub stages: Vec<(String, StageStatus)>,
}

struct Runner<'a> {
    out: &'a Path,
    manifest: RunManifest,
    stages: Vec<(String, StageStatus)>,
    log: &'a mut dyn FnMut(&str),
}

impl Runner<'_> {
    /// Run `body` unless the stage is up to date. `body` returns the
    /// artifacts it wrote, relative to the output directory.
    fn stage(
        &mut self,
        name: &str,
        inputs: &[PathBuf],
        body: impl FnOnce(&Path) -> Result<Vec<PathBuf>>,
    ) -> std::result::Result<Vec<PathBuf>, StageError> {
        let wrap = |source: Error| StageError { stage: name.to_string(), source };
        let abs: Vec<PathBuf> = inputs.iter().map(|p| self.out.join(p)).collect();
        let digest = stage_digest(&self.manifest.config_digest, name, &abs).map_err(wrap)?;
        if self.manifest.is_current(self.out, name, &digest) {
            (self.log)(&format!("{name}: skipped (up to date)"));
            self.stages.push((name.to_string(), StageStatus::Skipped));
            return Ok(self.manifest.stage(name).expect("current").artifacts.clone());
        }
        (self.log)(&format!("{name}: running"));
        let started = now();
        let artifacts = body(self.out).map_err(wrap)?;
        self.manifest.record(StageRecord {
            name: name.to_string(),
            digest,
            artifacts: artifacts.clone(),
            started,
            finished: now(),
        });
        self.manifest.save(self.out).map_err(wrap)?;
        self.stages.push((name.to_string(), StageStatus::Ran));
        Ok(artifacts)
    }
}

fn write(out: &Path, rel: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = out.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(PathBuf::from(rel))
}

fn save_outcome(out: &Path, stem: &str, o: &TrainOutcome) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write(out, &format!("checkpoints/{stem}.ckpt"), o.checkpoint.encode())?,
        write(out, &format!("metrics/{stem}.jsonl"), metrics_jsonl(&o.metrics))?,
    ])
}

fn load_responses(path: &Path) -> Result<NeuralResponseSet> {
    NeuralResponseSet::load(path)
}

fn with_seed(t: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..t.clone() }
}

/// Execute `cfg` into `out`, skipping stages whose inputs are unchanged.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    log: &mut dyn FnMut(&str),
) -> std::result::Result<RunOutcome, StageError> {
    let setup = |source: Error| StageError { stage: "setup".into(), source };
    std::fs::create_dir_all(out).map_err(|e| setup(Error::io(out, e)))?;
    let manifest = RunManifest::open(out, &cfg.digest()).map_err(setup)?;
    let mut r = Runner { out, manifest, stages: Vec::new(), log };

    let data_err = |source: Error| StageError { stage: "data".into(), source };
    let splits = load_splits(&cfg.dataset).map_err(data_err)?;
    let size = splits
        .train
        .image_shape()
        .ok_or_else(|| data_err(Error::data("training split is empty")))?;
    if size.0 != size.1 {
        return Err(data_err(Error::data("images must be square")));
    }
    let model_cfg: ModelConfig = cfg
        .model_config(size.0, splits.train.class_count)
        .map_err(|source| StageError { stage: "setup".into(), source })?;
    let table = severity_table(cfg.evaluation.severity_table.as_deref()).map_err(setup)?;

    let summary = DataSummary {
        train: (splits.train.len(), splits.train.digest()),
        val: (splits.val.len(), splits.val.digest()),
        eval: (splits.eval.len(), splits.eval.digest()),
        classes: splits.train.class_count,
        image_size: size.0,
    };
    let data_art = r.stage("data", &[], |o| {
        Ok(vec![write(o, "data/summary.json", serde_json::to_string_pretty(&summary).expect("json"))?])
    })?;

    let t = &cfg.train;
    let p = cfg.pipeline;
    let mut train_inputs = data_art.clone();

    // Neural responses for the training and validation images.
    if p.needs_responses() {
        let rel = ["neural/train.ctnr".to_string(), "neural/val.ctnr".to_string()];
        let art = if p == Pipeline::MtlOracle {
            let teacher_art = match &cfg.oracle.checkpoint {
                Some(path) => vec![std::path::absolute(path).map_err(|e| setup(Error::io(path, e)))?],
                None => r.stage("oracle_teacher", &data_art, |o| {
                    let d = TrainData { train: &splits.train, val: &splits.val, neural_train: None, neural_val: None };
                    let res = train_oracle(&model_cfg, &with_seed(t, cfg.oracle.teacher_seed), &d, &table)?;
                    save_outcome(o, "oracle_teacher", &res)
                })?,
            };
            let teacher_path = out.join(&teacher_art[0]);
            r.stage("oracle_responses", &teacher_art, |o| {
                let teacher = ModelCheckpoint::load(&teacher_path)?;
                let bank = GaborBank::new(model_cfg.readout.neurons, size.0, 0);
                let gabor = generate_surrogate_responses(&Teacher::GaborBank(&bank), &splits.train, t.eval_batch)?;
                let pairs = NeuralPairs { images: &splits.train.images, responses: &gabor };
                let fitted = fit_readout_on_frozen_trunk(&teacher, t, &pairs, t.readout_epochs)?;
                let model = Teacher::Model(&fitted.checkpoint);
                let tr = generate_surrogate_responses(&model, &splits.train, t.eval_batch)?;
                let va = generate_surrogate_responses(&model, &splits.val, t.eval_batch)?;
                Ok(vec![write(o, &rel[0], tr.encode())?, write(o, &rel[1], va.encode())?])
            })?
        } else {
            r.stage("responses", &data_art, |o| match &cfg.teacher {
                TeacherSpec::Gabor { seed } => {
                    let bank = GaborBank::new(model_cfg.readout.neurons, size.0, *seed);
                    let g = Teacher::GaborBank(&bank);
                    let tr = generate_surrogate_responses(&g, &splits.train, t.eval_batch)?;
                    let va = generate_surrogate_responses(&g, &splits.val, t.eval_batch)?;
                    Ok(vec![write(o, &rel[0], tr.encode())?, write(o, &rel[1], va.encode())?])
                }
                TeacherSpec::File { train, val } => {
                    let tr = load_responses(train)?;
                    let va = match val {
                        Some(v) => load_responses(v)?,
                        None => return Err(Error::config("file teacher needs validation responses")),
                    };
                    let check = |set: &NeuralResponseSet, images: &LabeledImageSet, path: &Path| -> Result<()> {
                        let loaded = generate_surrogate_responses(&Teacher::Loaded(set), images, t.eval_batch)
                            .map_err(|e| Error::data_file(path, e.to_string()))?;
                        if loaded.neurons != model_cfg.readout.neurons {
                            return Err(Error::config("model neuron count differs from the recorded responses"));
                        }
                        Ok(())
                    };
                    check(&tr, &splits.train, train)?;
                    check(&va, &splits.val, val.as_ref().expect("checked"))?;
                    Ok(vec![write(o, &rel[0], tr.encode())?, write(o, &rel[1], va.encode())?])
                }
            })?
        };
        train_inputs.extend(art);
    }

    let pname = p.name();
    let mut eval_tables = Vec::new();
    for &seed in &cfg.seeds {
        let stem = format!("{pname}_s{seed}");
        let tr_art = r.stage(&format!("train:s{seed}"), &train_inputs, |o| {
            let tcfg = with_seed(t, seed);
            let base = TrainData { train: &splits.train, val: &splits.val, neural_train: None, neural_val: None };
            let outcome = match p {
                Pipeline::Baseline => train_single_task(&model_cfg, &tcfg, Task::Classification, &base)?,
                Pipeline::Oracle => train_oracle(&model_cfg, &tcfg, &base, &table)?,
                _ => {
                    let tr = load_responses(&o.join("neural/train.ctnr"))?;
                    let va = load_responses(&o.join("neural/val.ctnr"))?;
                    let tr = if p == Pipeline::MtlShuffled { shuffle_responses(&tr, seed)? } else { tr };
                    let d = TrainData {
                        neural_train: Some(NeuralPairs { images: &splits.train.images, responses: &tr }),
                        neural_val: Some(NeuralPairs { images: &splits.val.images, responses: &va }),
                        ..base
                    };
                    if p == Pipeline::SingleNeural {
                        train_single_task(&model_cfg, &tcfg, Task::Neural, &d)?
                    } else {
                        train_mtl(&model_cfg, &tcfg, &d)?
                    }
                }
            };
            save_outcome(o, &stem, &outcome)
        })?;

        let mut eval_inputs = tr_art.clone();
        if p.needs_responses() {
            eval_inputs.push("neural/val.ctnr".into());
        }
        let ev_art = r.stage(&format!("eval:s{seed}"), &eval_inputs, |o| {
            let ckpt = ModelCheckpoint::load(&o.join(&tr_art[0]))?;
            let e = &cfg.evaluation;
            let acc = evaluate_on_suite(&ckpt, &splits.eval, &e.kinds, &e.levels, e.corruption_seed, &table, seed)?;
            let neural_correlation = if p.needs_responses() {
                let va = load_responses(&o.join("neural/val.ctnr"))?;
                Some(brain_likeness(&ckpt, &splits.val.images, &va)?)
            } else {
                None
            };
            let summary = SeedSummary {
                pipeline: pname.to_string(),
                seed,
                clean_accuracy: acc.clean(seed).expect("clean recorded"),
                neural_correlation,
                batch_ratio: t.batch_ratio.to_string(),
            };
            Ok(vec![
                write(o, &format!("eval/{stem}.csv"), acc.to_csv())?,
                write(o, &format!("eval/{stem}.json"), serde_json::to_string_pretty(&summary).expect("json"))?,
            ])
        })?;
        eval_tables.push(ev_art[0].clone());
    }

    r.stage("summary", &eval_tables, |o| {
        let mut merged = AccuracyTable::new();
        for rel in &eval_tables {
            let path = o.join(rel);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            merged.merge(&AccuracyTable::from_csv(&text)?);
        }
        Ok(vec![write(o, &format!("eval/{pname}.csv"), merged.to_csv())?])
    })?;

    Ok(RunOutcome { manifest: r.manifest, stages: r.stages })
}
