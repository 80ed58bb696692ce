use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{TaskOptim, TrainConfig};
use super::optim::{add_grads, GradMap, Optimizer};
use super::responses::{digest_bytes, NeuralResponseSet};
use super::schedule::{lr_schedule_step, ScheduleAction, ScheduleState};
use super::teacher::GaborBank;
use crate::autodiff::{Graph, Tensor};
use crate::corruptions::{corrupt, SeverityTable};
use crate::data::{augment, standardize, AugmentationPolicy, LabeledImageSet, StandardizationStats};
use crate::image::ImageArray;
use crate::model::{
    batch_tensor, classify, eval_accuracy, eval_responses, forward_trunk, init_params, is_buffer,
    is_head, is_readout, is_through_tap, is_trunk, readout_neural, Bound,
    ForwardOptions, ModelCheckpoint, ModelConfig, Mode, ParameterSet, LOG_SIGMA_C, LOG_SIGMA_N,
};
use crate::objectives::{graph as loss, POISSON_EPS};
use crate::seed;
use crate::stats::mean_neuron_correlation;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Neural,
}

/// Loss applied to neural batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuralLoss {
    /// Single-task fits to (spike-count-like) responses.
    Poisson,
    /// Multi-task fits to teacher predictions.
    Mse,
}

/// Images paired row-by-row with responses.
#[derive(Debug, Clone, Copy)]
pub struct NeuralPairs<'a> {
    pub images: &'a [ImageArray],
    pub responses: &'a NeuralResponseSet,
}

impl NeuralPairs<'_> {
    fn validate(&self) -> Result<()> {
        if self.images.len() != self.responses.images {
            return Err(Error::data(format!(
                "{} images but {} response rows",
                self.images.len(),
                self.responses.images
            )));
        }
        Ok(())
    }
}

/// Everything a training run reads. `train` also provides the
/// standardization statistics.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a LabeledImageSet,
    pub val: &'a LabeledImageSet,
    pub neural_train: Option<NeuralPairs<'a>>,
    pub neural_val: Option<NeuralPairs<'a>>,
}

/// One line of the JSON-lines metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_ce: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_neural: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_consistency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_correlation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_n: Option<f64>,
    /// Fraction of classification images that were clean (Oracle phase 1).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clean_fraction: Option<f64>,
    pub action: ScheduleAction,
}

pub fn metrics_jsonl(records: &[EpochRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub metrics: Vec<EpochRecord>,
}

// ---------------------------------------------------------------------------
// Per-step gradients
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ClassBatch {
    pub x: Tensor<f32>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct NeuralBatch {
    pub x: Tensor<f32>,
    /// `[B, N]`.
    pub targets: Tensor<f32>,
}

/// How one accumulated step turns batches into a scalar objective.
pub struct StepSpec<'a> {
    pub trainable: &'a dyn Fn(&str) -> bool,
    /// Wrap each task loss in its uncertainty-weighted term.
    pub uncertainty: bool,
    pub neural_loss: NeuralLoss,
    pub freeze_through_tap: bool,
    pub seed: u64,
}

/// Batch statistics observed by one train-mode batchnorm.
#[derive(Debug, Clone)]
pub struct BnObservation {
    pub layer: String,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

#[derive(Debug, Clone, Default)]
pub struct StepGradients {
    pub grads: GradMap,
    pub ce: Vec<f64>,
    pub neural: Vec<f64>,
    pub consistency: Vec<f64>,
    pub objective: f64,
    pub bn: Vec<BnObservation>,
}

fn collect(g: &Graph<f32>, bound: &Bound, loss: crate::autodiff::Var, out: &mut StepGradients) -> Result<()> {
    let value = g.value(loss).item() as f64;
    if !value.is_finite() {
        return Err(Error::NumericGuard(format!("non-finite loss {value}")));
    }
    out.objective += value;
    let mut grads = g.backward(loss);
    let mut map = GradMap::new();
    for (name, &v) in bound.iter() {
        if let Some(t) = grads.take(v) {
            map.insert(name.clone(), t.into_data());
        }
    }
    add_grads(&mut out.grads, map);
    Ok(())
}

fn observe_bn(g: &Graph<f32>, nodes: &[(String, crate::autodiff::Var)], out: &mut StepGradients) {
    for s in g.batch_stats() {
        if let Some((layer, _)) = nodes.iter().find(|(_, v)| *v == s.output) {
            out.bn.push(BnObservation {
                layer: layer.clone(),
                mean: s.mean.clone(),
                var: s.var.clone(),
            });
        }
    }
}

/// Accumulate gradients over `class` and `neural` batches: every batch is a
/// separate forward/backward pass and the parameter gradients are summed.
/// The head only sees classification batches and the readout only neural
/// batches, so each task's private parameters receive only their task's
/// gradient while the shared trunk receives the sum.
pub fn accumulate_gradients(
    cfg: &ModelConfig,
    params: &ParameterSet<f32>,
    class: &[ClassBatch],
    neural: &[NeuralBatch],
    spec: &StepSpec<'_>,
) -> Result<StepGradients> {
    let mut out = StepGradients::default();
    for (i, b) in class.iter().enumerate() {
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, params, spec.trainable);
        let x = g.constant(b.x.clone());
        let opts = ForwardOptions {
            mode: Mode::Train,
            freeze_through_tap: spec.freeze_through_tap,
            seed: seed::derive(spec.seed, &[seed::label("class"), i as u64]),
        };
        let t = forward_trunk(&mut g, cfg, params, &bound, x, &opts, false)?;
        let logp = classify(&mut g, cfg, &bound, t.out.expect("full pass"), &opts);
        let ce = loss::cross_entropy(&mut g, logp, &b.labels)?;
        out.ce.push(g.value(ce).item() as f64);
        let l = if spec.uncertainty {
            loss::classification_term(&mut g, ce, bound.var(LOG_SIGMA_C))
        } else {
            ce
        };
        collect(&g, &bound, l, &mut out)?;
        observe_bn(&g, &t.bn_nodes, &mut out);
    }
    for (j, b) in neural.iter().enumerate() {
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, params, spec.trainable);
        let x = g.constant(b.x.clone());
        let opts = ForwardOptions {
            mode: Mode::Train,
            freeze_through_tap: spec.freeze_through_tap,
            seed: seed::derive(spec.seed, &[seed::label("neural"), j as u64]),
        };
        let t = forward_trunk(&mut g, cfg, params, &bound, x, &opts, true)?;
        let pred = readout_neural(&mut g, cfg, &bound, t.tap, &opts);
        let target = g.constant(b.targets.clone());
        let l = match spec.neural_loss {
            NeuralLoss::Poisson => loss::poisson_nll(&mut g, pred, target, POISSON_EPS)?,
            NeuralLoss::Mse => loss::mse(&mut g, pred, target)?,
        };
        out.neural.push(g.value(l).item() as f64);
        let l = if spec.uncertainty {
            loss::neural_term(&mut g, l, bound.var(LOG_SIGMA_N))
        } else {
            l
        };
        collect(&g, &bound, l, &mut out)?;
        observe_bn(&g, &t.bn_nodes, &mut out);
    }
    Ok(out)
}

/// Oracle phase-1 batch: `n_clean` clean rows, then `n_pairs` rows under a
/// first corruption draw, then the same `n_pairs` images under a second,
/// independent draw. Labels cover the first `n_clean + n_pairs` rows.
#[derive(Debug, Clone)]
pub struct OracleBatch {
    pub x: Tensor<f32>,
    pub labels: Vec<usize>,
    pub n_clean: usize,
    pub n_pairs: usize,
}

/// Classification loss on the clean and first-corruption rows plus
/// `lambda * mean((tap(c1) - tap(c2))^2)`, i.e. the squared Euclidean tap
/// distance averaged over images and tap elements.
pub fn oracle_gradients(
    cfg: &ModelConfig,
    params: &ParameterSet<f32>,
    batch: &OracleBatch,
    lambda: f64,
    spec: &StepSpec<'_>,
) -> Result<StepGradients> {
    let mut out = StepGradients::default();
    let mut g = Graph::new();
    let bound = Bound::bind(&mut g, params, spec.trainable);
    let x = g.constant(batch.x.clone());
    let opts = ForwardOptions {
        mode: Mode::Train,
        freeze_through_tap: spec.freeze_through_tap,
        seed: spec.seed,
    };
    let t = forward_trunk(&mut g, cfg, params, &bound, x, &opts, false)?;
    let n_cls = batch.n_clean + batch.n_pairs;
    let trunk_out = g.slice_batch(t.out.expect("full pass"), 0, n_cls);
    let logp = classify(&mut g, cfg, &bound, trunk_out, &opts);
    let ce = loss::cross_entropy(&mut g, logp, &batch.labels)?;
    out.ce.push(g.value(ce).item() as f64);
    let total = if batch.n_pairs > 0 && lambda > 0.0 {
        let a = g.slice_batch(t.tap, batch.n_clean, batch.n_pairs);
        let b = g.slice_batch(t.tap, n_cls, batch.n_pairs);
        let d = g.mse(a, b);
        out.consistency.push(g.value(d).item() as f64);
        let d = g.scale(d, lambda as f32);
        g.add(ce, d)
    } else {
        ce
    };
    collect(&g, &bound, total, &mut out)?;
    observe_bn(&g, &t.bn_nodes, &mut out);
    Ok(out)
}

/// The consistency penalty alone, for two already-corrupted batches.
pub fn consistency_penalty(
    cfg: &ModelConfig,
    params: &ParameterSet<f32>,
    first: &Tensor<f32>,
    second: &Tensor<f32>,
) -> Result<f64> {
    let opts = ForwardOptions::eval();
    let tap = |x: &Tensor<f32>| -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, params, |_| false);
        let xv = g.constant(x.clone());
        let t = forward_trunk(&mut g, cfg, params, &bound, xv, &opts, true)?;
        Ok(g.value(t.tap).data().to_vec())
    };
    let (a, b) = (tap(first)?, tap(second)?);
    Ok(a.iter().zip(&b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64)
}

pub fn apply_bn(params: &mut ParameterSet<f32>, obs: &[BnObservation], momentum: f64) {
    let m = momentum as f32;
    for o in obs {
        for (suffix, batch) in [("running_mean", &o.mean), ("running_var", &o.var)] {
            let t = params
                .get_mut(&format!("{}.{suffix}", o.layer))
                .expect("running statistics exist for every batchnorm");
            t.data_mut()
                .iter_mut()
                .zip(batch.iter())
                .for_each(|(r, &b)| *r = (1.0 - m) * *r + m * b);
        }
    }
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

fn epoch_order(n: usize, seed: u64, stream: &str, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed::derive(
        seed,
        &[seed::label(stream), epoch as u64],
    )));
    idx
}

/// Batches of at least two images (batchnorm needs a spread).
fn chunk_indices(order: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|c| c.len() < 2) {
        let tail = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(tail);
    }
    out
}

fn standardized_tensor(images: &[ImageArray], stats: &StandardizationStats) -> Result<Tensor<f32>> {
    let std: Vec<ImageArray> = images
        .iter()
        .map(|i| standardize(i, stats))
        .collect::<Result<_>>()?;
    Ok(batch_tensor(&std.iter().collect::<Vec<_>>()))
}

fn class_batch(
    set: &LabeledImageSet,
    idx: &[usize],
    policy: &AugmentationPolicy,
    stats: &StandardizationStats,
    seed: u64,
) -> Result<ClassBatch> {
    let imgs: Vec<ImageArray> = idx
        .iter()
        .map(|&i| augment(&set.images[i], policy, seed::derive(seed, &[i as u64])))
        .collect();
    Ok(ClassBatch {
        x: standardized_tensor(&imgs, stats)?,
        labels: idx.iter().map(|&i| set.labels[i]).collect(),
    })
}

fn neural_batch(pairs: &NeuralPairs<'_>, idx: &[usize], stats: &StandardizationStats) -> Result<NeuralBatch> {
    let imgs: Vec<ImageArray> = idx.iter().map(|&i| pairs.images[i].clone()).collect();
    let n = pairs.responses.neurons;
    let targets = idx
        .iter()
        .flat_map(|&i| pairs.responses.row(i).iter().copied())
        .collect();
    Ok(NeuralBatch {
        x: standardized_tensor(&imgs, stats)?,
        targets: Tensor::new(vec![idx.len(), n], targets),
    })
}

/// Endless stream of neural batches over reshuffled epochs.
struct NeuralStream<'a> {
    pairs: NeuralPairs<'a>,
    batch: usize,
    seed: u64,
    pass: usize,
    queue: Vec<Vec<usize>>,
}

impl<'a> NeuralStream<'a> {
    fn new(pairs: NeuralPairs<'a>, batch: usize, seed: u64) -> Self {
        Self {
            pairs,
            batch,
            seed,
            pass: 0,
            queue: Vec::new(),
        }
    }

    fn next(&mut self, stats: &StandardizationStats) -> Result<NeuralBatch> {
        if self.queue.is_empty() {
            let order = epoch_order(self.pairs.images.len(), self.seed, "neural-stream", self.pass);
            self.pass += 1;
            self.queue = chunk_indices(&order, self.batch);
            self.queue.reverse();
        }
        let idx = self.queue.pop().expect("refilled");
        neural_batch(&self.pairs, &idx, stats)
    }
}

// ---------------------------------------------------------------------------
// Loops
// ---------------------------------------------------------------------------

#[derive(Debug, Default)]
struct EpochTotals {
    steps: usize,
    loss: f64,
    ce: Vec<f64>,
    neural: Vec<f64>,
    consistency: Vec<f64>,
    clean: usize,
    corrupted: usize,
}

impl EpochTotals {
    fn add(&mut self, s: &StepGradients) {
        self.steps += 1;
        self.loss += s.objective;
        self.ce.extend(&s.ce);
        self.neural.extend(&s.neural);
        self.consistency.extend(&s.consistency);
    }

    fn mean(v: &[f64]) -> Option<f64> {
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

struct Validation<'a> {
    cfg: &'a ModelConfig,
    data: TrainData<'a>,
    batch: usize,
    /// Which metric drives the schedule.
    key: Task,
}

impl Validation<'_> {
    fn run(&self, params: &ParameterSet<f32>) -> Result<(f64, Option<f64>, Option<f64>)> {
        let acc = match self.key {
            Task::Classification => Some(eval_accuracy(self.cfg, params, self.data.val, self.batch)?),
            Task::Neural => None,
        };
        let corr = match self.data.neural_val {
            Some(p) => {
                let pred = eval_responses(self.cfg, params, p.images, self.batch)?;
                Some(mean_neuron_correlation(&pred, p.responses.data(), p.responses.neurons))
            }
            None => None,
        };
        let key = match self.key {
            Task::Classification => acc.expect("computed"),
            Task::Neural => corr.ok_or_else(|| Error::data("neural validation pairs required"))?,
        };
        Ok((key, acc, corr))
    }
}

/// Run epochs until the schedule stops. `epoch_fn` performs one epoch of
/// updates at the given learning rate.
fn run_schedule<F>(
    stage: &str,
    tcfg: &TrainConfig,
    task: &TaskOptim,
    params: &mut ParameterSet<f32>,
    validation: &Validation<'_>,
    mut epoch_fn: F,
) -> Result<Vec<EpochRecord>>
where
    F: FnMut(usize, f64, &mut ParameterSet<f32>, &mut Optimizer) -> Result<EpochTotals>,
{
    let sched = tcfg.schedule_for(task);
    let mut state = ScheduleState::new(task.lr);
    let mut opt = Optimizer::new(task.optimizer);
    let mut records = Vec::new();
    if sched.max_epochs == 0 {
        return Ok(records);
    }
    loop {
        let epoch = state.epochs;
        let lr = state.lr;
        let totals = epoch_fn(epoch, lr, params, &mut opt).map_err(|e| match e {
            Error::NumericGuard(m) => Error::Training { epoch, message: m },
            other => other,
        })?;
        let (metric, acc, corr) = validation.run(params)?;
        let (next, action) = lr_schedule_step(&state, metric, &sched);
        state = next;
        let sigma = |n: &str| params.get(n).map(|t| (t.data()[0] as f64).exp());
        let uses_mtl = !totals.ce.is_empty() && !totals.neural.is_empty();
        records.push(EpochRecord {
            stage: stage.to_string(),
            epoch,
            lr,
            steps: totals.steps,
            train_loss: totals.loss / totals.steps.max(1) as f64,
            train_ce: EpochTotals::mean(&totals.ce),
            train_neural: EpochTotals::mean(&totals.neural),
            train_consistency: EpochTotals::mean(&totals.consistency),
            val_accuracy: acc,
            val_correlation: corr,
            sigma_c: sigma(LOG_SIGMA_C).filter(|_| uses_mtl),
            sigma_n: sigma(LOG_SIGMA_N).filter(|_| uses_mtl),
            clean_fraction: (totals.clean + totals.corrupted > 0)
                .then(|| totals.clean as f64 / (totals.clean + totals.corrupted) as f64),
            action,
        });
        if action == ScheduleAction::Stop {
            return Ok(records);
        }
    }
}

fn apply_step(
    params: &mut ParameterSet<f32>,
    opt: &mut Optimizer,
    step: &StepGradients,
    lr: f64,
    tcfg: &TrainConfig,
    cfg: &ModelConfig,
) {
    opt.step(params, &step.grads, lr, tcfg.weight_decay);
    apply_bn(params, &step.bn, cfg.bn_momentum);
}

fn fresh_params(cfg: &ModelConfig, tcfg: &TrainConfig, train: &LabeledImageSet) -> Result<ParameterSet<f32>> {
    cfg.validate()?;
    tcfg.validate()?;
    train.validate()?;
    if train.class_count != cfg.classes {
        return Err(Error::config(format!(
            "dataset has {} classes, model has {}",
            train.class_count, cfg.classes
        )));
    }
    if train.image_shape() != Some((cfg.input_size, cfg.input_size)) {
        return Err(Error::config(format!(
            "dataset images {:?} do not match model input {}",
            train.image_shape(),
            cfg.input_size
        )));
    }
    let mut params = init_params(cfg, seed::derive(tcfg.seed, &[seed::label("init")]));
    params.set_standardization(&StandardizationStats::from_set(train)?);
    Ok(params)
}

#[allow(clippy::too_many_arguments)]
fn classification_epoch(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    train: &LabeledImageSet,
    stats: &StandardizationStats,
    trainable: &dyn Fn(&str) -> bool,
    freeze_through_tap: bool,
    stream: &str,
    epoch: usize,
    lr: f64,
    params: &mut ParameterSet<f32>,
    opt: &mut Optimizer,
) -> Result<EpochTotals> {
    let mut totals = EpochTotals::default();
    let order = epoch_order(train.len(), tcfg.seed, stream, epoch);
    for (s, idx) in chunk_indices(&order, tcfg.batch_size).iter().enumerate() {
        let step_seed = seed::derive(tcfg.seed, &[seed::label(stream), epoch as u64, s as u64]);
        let b = class_batch(train, idx, &tcfg.augmentation, stats, step_seed)?;
        let spec = StepSpec {
            trainable,
            uncertainty: false,
            neural_loss: NeuralLoss::Poisson,
            freeze_through_tap,
            seed: step_seed,
        };
        let step = accumulate_gradients(cfg, params, &[b], &[], &spec)?;
        apply_step(params, opt, &step, lr, tcfg, cfg);
        totals.add(&step);
    }
    Ok(totals)
}

fn not_buffer_and(pred: fn(&str) -> bool) -> impl Fn(&str) -> bool {
    move |n: &str| !is_buffer(n) && pred(n)
}

/// Train one task alone: classification (cross-entropy, momentum SGD) or
/// neural prediction (Poisson loss, Adam). The other task's private
/// parameters keep their initialization.
pub fn train_single_task(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    task: Task,
    data: &TrainData<'_>,
) -> Result<TrainOutcome> {
    let mut params = fresh_params(cfg, tcfg, data.train)?;
    let stats = params.standardization().expect("set above");
    let (stage, task_optim) = match task {
        Task::Classification => ("single_task:classification", &tcfg.classification),
        Task::Neural => ("single_task:neural", &tcfg.neural),
    };
    let validation = Validation {
        cfg,
        data: *data,
        batch: tcfg.eval_batch,
        key: task,
    };
    let metrics = match task {
        Task::Classification => {
            let trainable = not_buffer_and(|n| is_trunk(n) || is_head(n));
            run_schedule(stage, tcfg, task_optim, &mut params, &validation, |e, lr, p, o| {
                classification_epoch(cfg, tcfg, data.train, &stats, &trainable, false, "class", e, lr, p, o)
            })?
        }
        Task::Neural => {
            let pairs = data
                .neural_train
                .ok_or_else(|| Error::data("neural training pairs required"))?;
            pairs.validate()?;
            data.neural_val
                .ok_or_else(|| Error::data("neural validation pairs required"))?
                .validate()?;
            let tap = cfg.trunk.tap;
            let trainable = move |n: &str| !is_buffer(n) && (is_through_tap(n, tap) || is_readout(n));
            run_schedule(stage, tcfg, task_optim, &mut params, &validation, |epoch, lr, p, o| {
                let mut totals = EpochTotals::default();
                let order = epoch_order(pairs.images.len(), tcfg.seed, "neural", epoch);
                for (s, idx) in chunk_indices(&order, tcfg.batch_size).iter().enumerate() {
                    let step_seed = seed::derive(tcfg.seed, &[seed::label("neural"), epoch as u64, s as u64]);
                    let b = neural_batch(&pairs, idx, &stats)?;
                    let spec = StepSpec {
                        trainable: &trainable,
                        uncertainty: false,
                        neural_loss: NeuralLoss::Poisson,
                        freeze_through_tap: false,
                        seed: step_seed,
                    };
                    let step = accumulate_gradients(cfg, p, &[], &[b], &spec)?;
                    apply_step(p, o, &step, lr, tcfg, cfg);
                    totals.add(&step);
                }
                Ok(totals)
            })?
        }
    };
    let mut checkpoint = ModelCheckpoint::new(cfg.clone(), params, "");
    checkpoint.push_lineage(&format!("{stage}(seed={})", tcfg.seed));
    Ok(TrainOutcome { checkpoint, metrics })
}

/// Multi-task training: each update accumulates `batch_ratio.neural`
/// neural batches (MSE to teacher responses) and `batch_ratio.classification`
/// classification batches under the uncertainty-weighted combined loss.
/// The schedule follows classification validation accuracy.
pub fn train_mtl(cfg: &ModelConfig, tcfg: &TrainConfig, data: &TrainData<'_>) -> Result<TrainOutcome> {
    let mut params = fresh_params(cfg, tcfg, data.train)?;
    let stats = params.standardization().expect("set above");
    let pairs = data
        .neural_train
        .ok_or_else(|| Error::data("MTL needs neural training pairs"))?;
    pairs.validate()?;
    if pairs.responses.image_digest != digest_bytes(&data.train.digest())? {
        return Err(Error::data(
            "neural responses were not generated for the classification training images",
        ));
    }
    if pairs.responses.neurons != cfg.readout.neurons {
        return Err(Error::config(format!(
            "responses cover {} neurons, readout has {}",
            pairs.responses.neurons, cfg.readout.neurons
        )));
    }
    let validation = Validation {
        cfg,
        data: *data,
        batch: tcfg.eval_batch,
        key: Task::Classification,
    };
    let ratio = tcfg.batch_ratio;
    let trainable = |n: &str| !is_buffer(n);
    let mut stream = NeuralStream::new(pairs, tcfg.batch_size, seed::derive(tcfg.seed, &[seed::label("mtl")]));
    let stage = format!("mtl(ratio={ratio})");
    let metrics = run_schedule(&stage, tcfg, &tcfg.classification, &mut params, &validation, |epoch, lr, p, o| {
        let mut totals = EpochTotals::default();
        let order = epoch_order(data.train.len(), tcfg.seed, "mtl-class", epoch);
        let batches = chunk_indices(&order, tcfg.batch_size);
        for (s, group) in batches.chunks(ratio.classification).enumerate() {
            let step_seed = seed::derive(tcfg.seed, &[seed::label("mtl"), epoch as u64, s as u64]);
            let class = group
                .iter()
                .enumerate()
                .map(|(k, idx)| {
                    class_batch(data.train, idx, &tcfg.augmentation, &stats, seed::derive(step_seed, &[k as u64]))
                })
                .collect::<Result<Vec<_>>>()?;
            let neural = (0..ratio.neural)
                .map(|_| stream.next(&stats))
                .collect::<Result<Vec<_>>>()?;
            let spec = StepSpec {
                trainable: &trainable,
                uncertainty: true,
                neural_loss: NeuralLoss::Mse,
                freeze_through_tap: false,
                seed: step_seed,
            };
            let step = accumulate_gradients(cfg, p, &class, &neural, &spec)?;
            apply_step(p, o, &step, lr, tcfg, cfg);
            totals.add(&step);
        }
        Ok(totals)
    })?;
    let mut checkpoint = ModelCheckpoint::new(cfg.clone(), params, "");
    checkpoint.push_lineage(&format!(
        "{stage}(seed={},teacher={})",
        tcfg.seed, pairs.responses.lineage
    ));
    Ok(TrainOutcome { checkpoint, metrics })
}

/// Fit only the readout (Poisson loss, neural optimizer) on top of a frozen
/// trunk for a fixed number of epochs. All other entries stay byte-identical.
pub fn fit_readout_on_frozen_trunk(
    checkpoint: &ModelCheckpoint,
    tcfg: &TrainConfig,
    pairs: &NeuralPairs<'_>,
    epochs: usize,
) -> Result<TrainOutcome> {
    pairs.validate()?;
    let cfg = &checkpoint.config;
    if pairs.responses.neurons != cfg.readout.neurons {
        return Err(Error::config(format!(
            "responses cover {} neurons, readout has {}",
            pairs.responses.neurons, cfg.readout.neurons
        )));
    }
    let mut params = checkpoint.params.clone();
    let stats = params
        .standardization()
        .ok_or_else(|| Error::config("checkpoint lacks standardization statistics"))?;
    let mut opt = Optimizer::new(tcfg.neural.optimizer);
    let trainable = |n: &str| is_readout(n);
    let mut metrics = Vec::new();
    for epoch in 0..epochs {
        let mut totals = EpochTotals::default();
        let order = epoch_order(pairs.images.len(), tcfg.seed, "readout", epoch);
        for (s, idx) in chunk_indices(&order, tcfg.batch_size).iter().enumerate() {
            let b = neural_batch(pairs, idx, &stats)?;
            let spec = StepSpec {
                trainable: &trainable,
                uncertainty: false,
                neural_loss: NeuralLoss::Poisson,
                freeze_through_tap: true,
                seed: seed::derive(tcfg.seed, &[seed::label("readout"), epoch as u64, s as u64]),
            };
            let step = accumulate_gradients(cfg, &params, &[], &[b], &spec)
                .map_err(|e| match e {
                    Error::NumericGuard(m) => Error::Training { epoch, message: m },
                    other => other,
                })?;
            // Frozen trunk: no batchnorm statistics are folded in.
            opt.step(&mut params, &step.grads, tcfg.neural.lr, tcfg.weight_decay);
            totals.add(&step);
        }
        metrics.push(EpochRecord {
            stage: "readout_fit".into(),
            epoch,
            lr: tcfg.neural.lr,
            steps: totals.steps,
            train_loss: totals.loss / totals.steps.max(1) as f64,
            train_ce: None,
            train_neural: EpochTotals::mean(&totals.neural),
            train_consistency: None,
            val_accuracy: None,
            val_correlation: None,
            sigma_c: None,
            sigma_n: None,
            clean_fraction: None,
            action: if epoch + 1 == epochs {
                ScheduleAction::Stop
            } else {
                ScheduleAction::Continue
            },
        });
    }
    let mut out = ModelCheckpoint::new(cfg.clone(), params, checkpoint.lineage.clone());
    out.push_lineage(&format!(
        "readout_fit(epochs={epochs},seed={},responses={})",
        tcfg.seed, pairs.responses.lineage
    ));
    Ok(TrainOutcome {
        checkpoint: out,
        metrics,
    })
}

/// Oracle training. Phase 1: classification on 1:1 clean/corrupted batches
/// plus the tap-consistency penalty between two independent corruption
/// draws of the corrupted images. Phase 2: freeze everything up to the tap
/// and keep training the later layers on clean data, starting from the
/// phase-1 weights.
pub fn train_oracle(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    data: &TrainData<'_>,
    table: &SeverityTable,
) -> Result<TrainOutcome> {
    let phase1 = oracle_phase1(cfg, tcfg, data, table)?;
    let mut out = oracle_phase2(&phase1.checkpoint, tcfg, data)?;
    let mut metrics = phase1.metrics;
    metrics.append(&mut out.metrics);
    out.metrics = metrics;
    Ok(out)
}

/// Oracle phase 1 from fresh weights: corruption-augmented classification
/// with the tap-consistency penalty.
pub fn oracle_phase1(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    data: &TrainData<'_>,
    table: &SeverityTable,
) -> Result<TrainOutcome> {
    let mut params = fresh_params(cfg, tcfg, data.train)?;
    let stats = params.standardization().expect("set above");
    let validation = Validation {
        cfg,
        data: *data,
        batch: tcfg.eval_batch,
        key: Task::Classification,
    };
    let kinds = &tcfg.oracle_corruptions;
    let phase1_trainable = |n: &str| !is_buffer(n) && (is_trunk(n) || is_head(n));
    let metrics = run_schedule(
        "oracle:phase1",
        tcfg,
        &tcfg.classification,
        &mut params,
        &validation,
        |epoch, lr, p, o| {
            let mut totals = EpochTotals::default();
            let order = epoch_order(data.train.len(), tcfg.seed, "oracle", epoch);
            for (s, idx) in chunk_indices(&order, tcfg.batch_size).iter().enumerate() {
                let step_seed = seed::derive(tcfg.seed, &[seed::label("oracle"), epoch as u64, s as u64]);
                let batch = oracle_batch(data.train, idx, tcfg, &stats, kinds, table, step_seed)?;
                totals.clean += batch.n_clean;
                totals.corrupted += batch.n_pairs;
                let spec = StepSpec {
                    trainable: &phase1_trainable,
                    uncertainty: false,
                    neural_loss: NeuralLoss::Poisson,
                    freeze_through_tap: false,
                    seed: step_seed,
                };
                let step = oracle_gradients(cfg, p, &batch, tcfg.consistency_weight, &spec)?;
                apply_step(p, o, &step, lr, tcfg, cfg);
                totals.add(&step);
            }
            Ok(totals)
        },
    )?;

    let mut checkpoint = ModelCheckpoint::new(cfg.clone(), params, "");
    checkpoint.push_lineage(&format!(
        "oracle:phase1(seed={},corruptions={},lambda={})",
        tcfg.seed,
        kinds.len(),
        tcfg.consistency_weight
    ));
    Ok(TrainOutcome { checkpoint, metrics })
}

/// Oracle phase 2: everything up to and including the tap stays frozen
/// (batchnorm in inference mode there); later layers keep training on clean
/// data from the phase-1 weights.
pub fn oracle_phase2(phase1: &ModelCheckpoint, tcfg: &TrainConfig, data: &TrainData<'_>) -> Result<TrainOutcome> {
    let cfg = &phase1.config;
    let mut params = phase1.params.clone();
    let stats = params
        .standardization()
        .ok_or_else(|| Error::config("checkpoint lacks standardization statistics"))?;
    let validation = Validation {
        cfg,
        data: *data,
        batch: tcfg.eval_batch,
        key: Task::Classification,
    };
    let tap = cfg.trunk.tap;
    let phase2_trainable = move |n: &str| !is_buffer(n) && (is_trunk(n) || is_head(n)) && !is_through_tap(n, tap);
    let metrics = run_schedule(
        "oracle:phase2",
        tcfg,
        &tcfg.classification,
        &mut params,
        &validation,
        |e, lr, p, o| {
            classification_epoch(cfg, tcfg, data.train, &stats, &phase2_trainable, true, "oracle2", e, lr, p, o)
        },
    )?;
    let mut checkpoint = ModelCheckpoint::new(cfg.clone(), params, phase1.lineage.clone());
    checkpoint.push_lineage("oracle:phase2(frozen_through_tap,clean)");
    Ok(TrainOutcome { checkpoint, metrics })
}

/// Assemble an Oracle batch: the first half of `idx` stays clean, the
/// second half is corrupted twice with independent random (kind, level)
/// draws. Augmentation precedes corruption; standardization comes last.
pub fn oracle_batch(
    set: &LabeledImageSet,
    idx: &[usize],
    tcfg: &TrainConfig,
    stats: &StandardizationStats,
    kinds: &[crate::corruptions::CorruptionKind],
    table: &SeverityTable,
    step_seed: u64,
) -> Result<OracleBatch> {
    let n_clean = idx.len() / 2;
    let mut rng = seed::rng(seed::derive(step_seed, &[seed::label("draws")]));
    let augmented: Vec<ImageArray> = idx
        .iter()
        .map(|&i| augment(&set.images[i], &tcfg.augmentation, seed::derive(step_seed, &[i as u64])))
        .collect();
    let mut rows: Vec<ImageArray> = augmented[..n_clean].to_vec();
    let mut second = Vec::new();
    for (k, img) in augmented[n_clean..].iter().enumerate() {
        for (copy, out) in [&mut rows, &mut second].into_iter().enumerate() {
            let kind = kinds[rng.random_range(0..kinds.len())];
            let level = rng.random_range(1..=5u8);
            let s = seed::derive(step_seed, &[k as u64, copy as u64]);
            out.push(corrupt(img, kind, level, s, table)?);
        }
    }
    let n_pairs = second.len();
    rows.extend(second);
    Ok(OracleBatch {
        x: standardized_tensor(&rows, stats)?,
        labels: idx.iter().map(|&i| set.labels[i]).collect(),
        n_clean,
        n_pairs,
    })
}

/// Anything that can emit one response vector per image.
pub enum Teacher<'a> {
    GaborBank(&'a GaborBank),
    /// A trained model's readout.
    Model(&'a ModelCheckpoint),
    /// Responses recorded elsewhere; must match the images by digest.
    Loaded(&'a NeuralResponseSet),
}

/// Deterministic, noiseless teacher predictions for every image.
pub fn generate_surrogate_responses(
    teacher: &Teacher<'_>,
    images: &LabeledImageSet,
    batch: usize,
) -> Result<NeuralResponseSet> {
    let digest = digest_bytes(&images.digest())?;
    match teacher {
        Teacher::GaborBank(bank) => {
            let mut data = Vec::with_capacity(images.len() * bank.neurons());
            for img in &images.images {
                data.extend(bank.respond(img)?);
            }
            NeuralResponseSet::new(bank.neurons(), data, bank.identity(), digest)
        }
        Teacher::Model(ckpt) => {
            if images.image_shape() != Some((ckpt.config.input_size, ckpt.config.input_size)) {
                return Err(Error::data(format!(
                    "teacher expects {s}x{s} images",
                    s = ckpt.config.input_size
                )));
            }
            let data = eval_responses(&ckpt.config, &ckpt.params, &images.images, batch)?;
            NeuralResponseSet::new(
                ckpt.config.readout.neurons,
                data,
                format!("model[{}]", ckpt.lineage),
                digest,
            )
        }
        Teacher::Loaded(set) => {
            if set.image_digest != digest || set.images != images.len() {
                return Err(Error::data("loaded responses were recorded for different images"));
            }
            Ok((*set).clone())
        }
    }
}
