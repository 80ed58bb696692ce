use super::AccuracyTable;
use crate::corruptions::{build_corrupted_eval_set, CorruptionKind, SeverityTable};
use crate::data::LabeledImageSet;
use crate::image::ImageArray;
use crate::model::ModelCheckpoint;
use crate::stats::mean_neuron_correlation;
use crate::training::NeuralResponseSet;
use crate::{Error, Result};

const EVAL_BATCH: usize = 256;

/// Anything that assigns a class to each raw image.
pub trait Classifier {
    fn class_count(&self) -> usize;
    fn classify(&self, images: &[ImageArray]) -> Result<Vec<usize>>;
}

impl Classifier for ModelCheckpoint {
    fn class_count(&self) -> usize {
        self.config.classes
    }

    fn classify(&self, images: &[ImageArray]) -> Result<Vec<usize>> {
        self.predict_classes(images, EVAL_BATCH)
    }
}

pub fn top1_accuracy(clf: &dyn Classifier, set: &LabeledImageSet) -> Result<f64> {
    if set.class_count != clf.class_count() {
        return Err(Error::config(format!(
            "evaluation set has {} classes, classifier has {}",
            set.class_count,
            clf.class_count()
        )));
    }
    if set.is_empty() {
        return Err(Error::eval("empty evaluation set"));
    }
    let pred = clf.classify(&set.images)?;
    if pred.len() != set.len() {
        return Err(Error::eval("classifier returned the wrong number of predictions"));
    }
    let hits = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / set.len() as f64)
}

/// Accuracy on the clean set and on every supplied `(kind, level)` copy,
/// recorded under `model_seed`.
pub fn evaluate_accuracy<I>(
    clf: &dyn Classifier,
    clean: &LabeledImageSet,
    eval_sets: I,
    model_seed: u64,
) -> Result<AccuracyTable>
where
    I: IntoIterator<Item = Result<(CorruptionKind, u8, LabeledImageSet)>>,
{
    let mut table = AccuracyTable::new();
    table.set_clean(model_seed, top1_accuracy(clf, clean)?)?;
    for item in eval_sets {
        let (kind, level, set) = item?;
        table.insert(kind, level, model_seed, top1_accuracy(clf, &set)?)?;
    }
    Ok(table)
}

/// Build the corrupted copies of `clean` and evaluate on all of them.
pub fn evaluate_on_suite(
    clf: &dyn Classifier,
    clean: &LabeledImageSet,
    kinds: &[CorruptionKind],
    levels: &[u8],
    corruption_seed: u64,
    severity: &SeverityTable,
    model_seed: u64,
) -> Result<AccuracyTable> {
    let sets = build_corrupted_eval_set(clean, kinds, levels, corruption_seed, severity)?;
    evaluate_accuracy(clf, clean, sets, model_seed)
}

/// Mean per-neuron correlation between a model's predicted responses and
/// held-out targets for the same images.
pub fn brain_likeness(
    ckpt: &ModelCheckpoint,
    images: &[ImageArray],
    targets: &NeuralResponseSet,
) -> Result<f64> {
    if targets.images != images.len() {
        return Err(Error::data(format!(
            "{} target rows for {} images",
            targets.images,
            images.len()
        )));
    }
    if targets.neurons != ckpt.config.readout.neurons {
        return Err(Error::config("neuron count differs between model and targets"));
    }
    let pred = ckpt.predict_responses(images, EVAL_BATCH)?;
    Ok(mean_neuron_correlation(&pred, targets.data(), targets.neurons))
}
