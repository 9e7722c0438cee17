//! Per-attribute demographic classifiers: a pooled clip embedding through one
//! affine layer and a softmax, trained by cross-entropy.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{Attribute, ClipRecord, Dataset, Split, View};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::train::checkpoint::{
    read_checkpoint, write_checkpoint, CheckpointHeader, HeadSpec, CHECKPOINT_FORMAT,
    KIND_CLASSIFIER,
};
use crate::train::{cosine_lr, AdamW, Architecture, HeadCore, Pooling};

/// Softmax distribution over an attribute's classes for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityPrediction {
    pub clip_id: String,
    pub attribute: Attribute,
    pub probs: Vec<f64>,
}

impl ProbabilityPrediction {
    /// Build a prediction, rejecting anything that is not a distribution
    /// over the attribute's classes.
    pub fn new(clip_id: String, attribute: Attribute, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != attribute.n_classes() {
            return Err(Error::DimensionMismatch(format!(
                "{} probabilities for attribute {attribute} with {} classes",
                probs.len(),
                attribute.n_classes()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "negative or non-finite probability for clip '{clip_id}'"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probabilities for clip '{clip_id}' sum to {total}"
            )));
        }
        Ok(ProbabilityPrediction { clip_id, attribute, probs })
    }

    /// Index-encoded one-hot prediction.
    pub fn one_hot(clip_id: String, attribute: Attribute, class: usize) -> Result<Self> {
        let mut probs = vec![0.0; attribute.n_classes()];
        let slot = probs
            .get_mut(class)
            .ok_or_else(|| Error::InvalidInput(format!("class {class} out of range")))?;
        *slot = 1.0;
        Ok(ProbabilityPrediction { clip_id, attribute, probs })
    }

    /// Hard prediction: highest-probability class, ties to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

fn default_clf_learning_rate() -> f64 {
    1e-3
}
fn default_clf_weight_decay() -> f64 {
    0.01
}
fn default_clf_batch_size() -> usize {
    8
}
fn default_clf_frames() -> usize {
    8
}

/// Recipe for one classifier-training run; optimizer protocol mirrors the
/// embedding trainer (AdamW, cosine decay, seeded determinism).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    #[serde(default = "default_clf_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_clf_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_clf_batch_size")]
    pub batch_size: usize,
    /// Optimizer updates to run; zero leaves the head at its seeded init.
    pub steps: u64,
    pub seed: u64,
    #[serde(default)]
    pub pooling: Pooling,
    /// Frames subsampled per clip before pooling.
    #[serde(default = "default_clf_frames")]
    pub frames: usize,
}

impl ClassifierConfig {
    pub fn new(steps: u64, seed: u64) -> Self {
        ClassifierConfig {
            learning_rate: default_clf_learning_rate(),
            weight_decay: default_clf_weight_decay(),
            batch_size: default_clf_batch_size(),
            steps,
            seed,
            pooling: Pooling::default(),
            frames: default_clf_frames(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.frames == 0 {
            return Err(Error::InvalidConfig("frames must be positive".into()));
        }
        Ok(())
    }

    /// Parse a config from a JSON file, then validate it.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ClassifierConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }
}

/// Attribute classifier: pooling, one affine layer, softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    core: HeadCore,
    attribute: Attribute,
    view: View,
    step: u64,
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &Array1<f64>) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl ClassifierHead {
    /// Seeded but untrained head (the zero-shot attacker's classifier).
    pub fn untrained(
        input_dim: usize,
        attribute: Attribute,
        view: View,
        pooling: Pooling,
        seed: u64,
    ) -> Result<Self> {
        let mut core =
            HeadCore::new(Architecture::Linear, pooling, input_dim, 0, attribute.n_classes())?;
        let mut rng = SeededRng::new(seed);
        core.init(&mut rng);
        Ok(ClassifierHead { core, attribute, view, step: 0 })
    }

    pub fn core(&self) -> &HeadCore {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut HeadCore {
        &mut self.core
    }

    pub fn attribute(&self) -> Attribute {
        self.attribute
    }

    /// View whose clips the head was trained on.
    pub fn view(&self) -> View {
        self.view
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Class labels in prediction-index order.
    pub fn classes(&self) -> &'static [&'static str] {
        self.attribute.classes()
    }

    /// Predicted distribution for a raw frame matrix.
    pub fn probs(&self, frames: &Array2<f64>) -> Result<Vec<f64>> {
        let (logits, _) = self.core.forward(frames)?;
        Ok(softmax(&logits))
    }

    /// Predicted distribution for a clip, reading frames from the clip's own
    /// view table (so one head can serve both views when dimensions agree).
    pub fn predict(
        &self,
        dataset: &Dataset,
        clip_id: &str,
        frames: usize,
    ) -> Result<ProbabilityPrediction> {
        let matrix = dataset.frames_f64(clip_id, frames)?;
        ProbabilityPrediction::new(clip_id.to_string(), self.attribute, self.probs(&matrix)?)
    }

    /// Fraction of labeled clips whose argmax matches the label.
    pub fn accuracy(
        &self,
        dataset: &Dataset,
        clips: &[&ClipRecord],
        frames: usize,
    ) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for clip in clips {
            let Some(truth) = clip.class_index(self.attribute) else { continue };
            let pred = self.predict(dataset, &clip.clip_id, frames)?;
            total += 1;
            if pred.argmax() == truth {
                correct += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptyEvaluation(format!(
                "no clip carries a {} label",
                self.attribute
            )));
        }
        Ok(correct as f64 / total as f64)
    }

    /// Persist as a classifier checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            kind: KIND_CLASSIFIER.to_string(),
            step: self.step,
            heads: vec![HeadSpec::of(self.view.as_str(), &self.core)],
            attribute: Some(self.attribute.to_string()),
            classes: Some(self.classes().iter().map(|c| c.to_string()).collect()),
        };
        write_checkpoint(path, &header, &[self.core.params()])
    }

    /// Load a checkpoint written by [`ClassifierHead::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let (header, mut blobs) = read_checkpoint(path)?;
        if header.kind != KIND_CLASSIFIER {
            return Err(Error::MalformedCheckpoint(format!(
                "expected a classifier checkpoint, found kind '{}'",
                header.kind
            )));
        }
        if header.heads.len() != 1 {
            return Err(Error::MalformedCheckpoint(
                "classifier checkpoints hold exactly one head".into(),
            ));
        }
        let attribute: Attribute = header
            .attribute
            .as_deref()
            .ok_or_else(|| Error::MalformedCheckpoint("missing attribute".into()))?
            .parse()?;
        let expected: Vec<String> = attribute.classes().iter().map(|c| c.to_string()).collect();
        if header.classes.as_deref() != Some(&expected[..]) {
            return Err(Error::MalformedCheckpoint(format!(
                "class list does not match attribute {attribute}"
            )));
        }
        let view: View = header.heads[0].role.parse().map_err(|_| {
            Error::MalformedCheckpoint(format!("unknown head role '{}'", header.heads[0].role))
        })?;
        let mut core = header.heads[0].build()?;
        core.set_params(blobs.pop().expect("one blob validated"))?;
        Ok(ClassifierHead { core, attribute, view, step: header.step })
    }
}

/// Labeled clips of one view/split for an attribute.
fn labeled_clips<'a>(
    dataset: &'a Dataset,
    attribute: Attribute,
    view: View,
    split: Split,
) -> Vec<&'a ClipRecord> {
    dataset
        .view_clips(view, Some(split))
        .into_iter()
        .filter(|c| c.class_index(attribute).is_some())
        .collect()
}

/// Train an attribute classifier on one view's train split by cross-entropy.
pub fn train_classifier(
    dataset: &Dataset,
    attribute: Attribute,
    view: View,
    config: &ClassifierConfig,
) -> Result<ClassifierHead> {
    config.validate()?;
    let clips = labeled_clips(dataset, attribute, view, Split::Train);
    let mut seen = [false; 3];
    for clip in &clips {
        seen[clip.class_index(attribute).expect("filtered to labeled")] = true;
    }
    let n_classes_present = seen.iter().filter(|&&s| s).count();
    if n_classes_present < 2 {
        return Err(Error::TaskNotRunnable(format!(
            "train split holds {n_classes_present} distinct {attribute} class(es) for {} clips; \
             need at least 2",
            view.as_str()
        )));
    }

    let input_dim = dataset.table(view).dim();
    let mut core =
        HeadCore::new(Architecture::Linear, config.pooling, input_dim, 0, attribute.n_classes())?;
    // One seeded stream drives init, then shuffling, in that order.
    let mut rng = SeededRng::new(config.seed);
    core.init(&mut rng);
    let mut head = ClassifierHead { core, attribute, view, step: 0 };
    let mut opt = AdamW::new(head.core.param_count(), config.weight_decay);

    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut pos = order.len();
    for step in 0..config.steps {
        let mut grads = vec![0.0; head.core.param_count()];
        let batch = config.batch_size.min(clips.len()).max(1);
        for _ in 0..batch {
            if pos == order.len() {
                rng.shuffle(&mut order);
                pos = 0;
            }
            let clip = clips[order[pos]];
            pos += 1;
            let frames = dataset.frames_f64(&clip.clip_id, config.frames)?;
            let truth = clip.class_index(attribute).expect("filtered to labeled");
            let (logits, trace) = head.core.forward(&frames)?;
            let probs = softmax(&logits);
            // d(cross-entropy)/d(logits) = probs - one_hot(truth), averaged
            // over the batch.
            let mut d_logits = Array1::from(probs);
            d_logits[truth] -= 1.0;
            d_logits.mapv_inplace(|g| g / batch as f64);
            head.core.backward(&frames, &trace, &d_logits, &mut grads, None);
        }
        let lr = cosine_lr(config.learning_rate, step, config.steps);
        opt.step(head.core.params_mut(), &grads, lr);
    }
    head.step = config.steps;
    Ok(head)
}
