//! Joint training of ego/exo projection heads with a supervised contrastive
//! objective, a FIFO negative cache, AdamW, and cosine learning-rate decay.
//!
//! Everything is deterministic: given the same [`TrainConfig`] (seed
//! included) and dataset, the final weights are bit-identical. A single
//! seeded generator drives head initialization, anchor-order shuffles, and
//! positive sampling, in that fixed order.

pub mod cache;
pub mod checkpoint;
pub mod head;
pub mod loss;
pub mod optim;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

pub use cache::NegativeCache;
pub use checkpoint::{load_head_pair, read_checkpoint, save_head_pair, write_checkpoint};
pub use checkpoint::{CheckpointHeader, HeadSpec, CHECKPOINT_FORMAT, KIND_CLASSIFIER, KIND_EMBED_PAIR};
pub use head::{Architecture, HeadCore, HeadPair, Pooling, ProjTrace, ProjectionHead, Trace};
pub use loss::{
    paired_supcon_step, supcon_from_similarities, supcon_loss, DenominatorMode, SupconBatch,
};
pub use optim::{cosine_lr, AdamW};

use crate::data::{ClipRecord, Dataset, Split, View};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Which exo clips count as positives for an ego anchor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveMode {
    /// Every exo clip of the same person.
    #[default]
    Individual,
    /// Only exo clips from the take recorded in sync with the anchor.
    Situational,
}

impl PositiveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PositiveMode::Individual => "individual",
            PositiveMode::Situational => "situational",
        }
    }
}

impl std::str::FromStr for PositiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "individual" => Ok(PositiveMode::Individual),
            "situational" => Ok(PositiveMode::Situational),
            other => Err(Error::InvalidInput(format!(
                "unknown positive mode '{other}' (expected individual or situational)"
            ))),
        }
    }
}

fn default_temperature() -> f64 {
    0.07
}
fn default_batch_size() -> usize {
    8
}
fn default_learning_rate() -> f64 {
    1e-5
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_cache_capacity() -> usize {
    4096
}
fn default_output_dim() -> usize {
    16
}
fn default_frames() -> usize {
    8
}

/// Full recipe for one embedding-training run. `steps` and `seed` carry no
/// defaults on purpose: every run must pin both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Softmax temperature of the contrastive objective.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Ego anchors per optimizer step.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Peak learning rate; decays to zero on the cosine schedule.
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Decoupled weight decay applied by the optimizer.
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Optimizer updates to run.
    pub steps: u64,
    /// Negative-cache size; zero disables the cache.
    #[serde(default = "default_cache_capacity")]
    pub cache_capacity: usize,
    /// Seed for initialization, shuffling, and positive sampling.
    pub seed: u64,
    #[serde(default)]
    pub positive_mode: PositiveMode,
    #[serde(default)]
    pub denominator_mode: DenominatorMode,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub pooling: Pooling,
    /// Hidden width for the MLP architecture (ignored by Linear).
    #[serde(default)]
    pub hidden_dim: usize,
    /// Dimension of the shared embedding space.
    #[serde(default = "default_output_dim")]
    pub output_dim: usize,
    /// Frames subsampled per clip before pooling.
    #[serde(default = "default_frames")]
    pub frames: usize,
}

impl TrainConfig {
    /// Minimal config with library defaults everywhere else.
    pub fn new(steps: u64, seed: u64) -> Self {
        TrainConfig {
            temperature: default_temperature(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            weight_decay: default_weight_decay(),
            steps,
            cache_capacity: default_cache_capacity(),
            seed,
            positive_mode: PositiveMode::default(),
            denominator_mode: DenominatorMode::default(),
            architecture: Architecture::default(),
            pooling: Pooling::default(),
            hidden_dim: 0,
            output_dim: default_output_dim(),
            frames: default_frames(),
        }
    }

    /// Reject configs that cannot drive a run.
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
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
        if self.output_dim == 0 {
            return Err(Error::InvalidConfig("output_dim must be positive".into()));
        }
        if self.frames == 0 {
            return Err(Error::InvalidConfig("frames must be positive".into()));
        }
        if self.architecture == Architecture::OneHiddenMlp && self.hidden_dim == 0 {
            return Err(Error::InvalidConfig("mlp architecture needs a positive hidden_dim".into()));
        }
        Ok(())
    }

    /// Load a config from a JSON file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }
}

/// One row of the emitted loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Write a loss curve as `step,loss,lr` CSV.
pub fn write_loss_curve(path: &Path, curve: &[LossPoint]) -> Result<()> {
    let mut out = String::from("step,loss,lr\n");
    for point in curve {
        out.push_str(&format!("{},{},{}\n", point.step, point.loss, point.lr));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Whether two clips are a positive pair under the given mode.
fn linked(mode: PositiveMode, anchor: &ClipRecord, other: &ClipRecord) -> bool {
    match mode {
        PositiveMode::Individual => anchor.identity_id == other.identity_id,
        PositiveMode::Situational => anchor.take_id == other.take_id,
    }
}

/// Ego train clips that have at least one exo positive, with their link sets.
struct AnchorPool<'a> {
    anchors: Vec<&'a ClipRecord>,
    /// Parallel to `anchors`: exo train clips linked to each anchor,
    /// ascending by clip id.
    links: Vec<Vec<&'a ClipRecord>>,
}

fn build_anchor_pool(dataset: &Dataset, mode: PositiveMode) -> Result<AnchorPool<'_>> {
    let exo_train = dataset.view_clips(View::Exo, Some(Split::Train));
    let mut anchors = Vec::new();
    let mut links = Vec::new();
    for anchor in dataset.view_clips(View::Ego, Some(Split::Train)) {
        let linked_exo: Vec<&ClipRecord> = exo_train
            .iter()
            .copied()
            .filter(|exo| linked(mode, anchor, exo))
            .collect();
        if !linked_exo.is_empty() {
            anchors.push(anchor);
            links.push(linked_exo);
        }
    }
    if anchors.is_empty() {
        return Err(Error::TaskNotRunnable(format!(
            "no ego clip in the train split has an exo positive under {} linking",
            mode.as_str()
        )));
    }
    Ok(AnchorPool { anchors, links })
}

/// Deterministic shuffled stream over anchor indices; reshuffles on wrap.
struct AnchorStream {
    order: Vec<usize>,
    pos: usize,
}

impl AnchorStream {
    fn new(n: usize) -> Self {
        AnchorStream { order: (0..n).collect(), pos: n }
    }

    fn next(&mut self, rng: &mut SeededRng) -> usize {
        if self.pos == self.order.len() {
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let idx = self.order[self.pos];
        self.pos += 1;
        idx
    }
}

/// Assemble one batch: anchors, their sampled exo partners, and index sets
/// over the candidate pool (batch exo first, then cache).
fn assemble_batch(
    dataset: &Dataset,
    pool: &AnchorPool<'_>,
    stream: &mut AnchorStream,
    cache: &NegativeCache,
    config: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<(SupconBatch, Vec<(String, String)>)> {
    let mut anchor_clips = Vec::with_capacity(config.batch_size);
    let mut exo_clips = Vec::with_capacity(config.batch_size);
    for _ in 0..config.batch_size {
        let idx = stream.next(rng);
        let anchor = pool.anchors[idx];
        let partners = &pool.links[idx];
        let partner = partners[rng.index(partners.len())];
        anchor_clips.push(anchor);
        exo_clips.push(partner);
    }

    let mut ego_frames = Vec::with_capacity(anchor_clips.len());
    for clip in &anchor_clips {
        ego_frames.push(dataset.frames_f64(&clip.clip_id, config.frames)?);
    }
    let mut exo_frames = Vec::with_capacity(exo_clips.len());
    for clip in &exo_clips {
        exo_frames.push(dataset.frames_f64(&clip.clip_id, config.frames)?);
    }

    let n_batch = exo_clips.len();
    let cached_entries: Vec<&cache::CacheEntry> = cache.iter().collect();
    let cached: Vec<Array1<f64>> = cached_entries.iter().map(|e| e.vector.clone()).collect();

    let mut positives = Vec::with_capacity(n_batch);
    let mut negatives = Vec::with_capacity(n_batch);
    for (i, anchor) in anchor_clips.iter().enumerate() {
        // Positives: linked exo clips inside the batch (the sampled partner
        // at index i guarantees at least one).
        let pos: BTreeSet<usize> = exo_clips
            .iter()
            .enumerate()
            .filter(|(_, exo)| linked(config.positive_mode, anchor, exo))
            .map(|(j, _)| j)
            .collect();

        let mut neg = BTreeSet::new();
        match config.denominator_mode {
            // Standard: true negatives only — unlinked batch exo plus
            // unlinked cache entries.
            DenominatorMode::Standard => {
                for j in 0..n_batch {
                    if !pos.contains(&j) {
                        neg.insert(j);
                    }
                }
                for (c, entry) in cached_entries.iter().enumerate() {
                    let is_link = match config.positive_mode {
                        PositiveMode::Individual => entry.identity_id == anchor.identity_id,
                        PositiveMode::Situational => entry.take_id == anchor.take_id,
                    };
                    if !is_link {
                        neg.insert(n_batch + c);
                    }
                }
            }
            // Literal: every other exo example in the batch and the whole
            // cache, links included.
            DenominatorMode::Literal => {
                for j in 0..n_batch {
                    if j != i {
                        neg.insert(j);
                    }
                }
                for c in 0..cached_entries.len() {
                    neg.insert(n_batch + c);
                }
            }
        }
        positives.push(pos);
        negatives.push(neg);
    }

    let partner_meta: Vec<(String, String)> = exo_clips
        .iter()
        .map(|c| (c.identity_id.clone(), c.take_id.clone()))
        .collect();
    Ok((
        SupconBatch { ego_frames, exo_frames, cached, positives, negatives },
        partner_meta,
    ))
}

/// Train an ego/exo head pair; returns the pair plus the per-step loss curve.
pub fn train_embedding(dataset: &Dataset, config: &TrainConfig) -> Result<(HeadPair, Vec<LossPoint>)> {
    config.validate()?;
    let pool = build_anchor_pool(dataset, config.positive_mode)?;

    let mut rng = SeededRng::new(config.seed);
    let input_dim = dataset.table(View::Ego).dim();
    let mut ego = ProjectionHead::new(
        config.architecture,
        config.pooling,
        input_dim,
        config.hidden_dim,
        config.output_dim,
    )?;
    let mut exo = ProjectionHead::new(
        config.architecture,
        config.pooling,
        dataset.table(View::Exo).dim(),
        config.hidden_dim,
        config.output_dim,
    )?;
    ego.init(&mut rng);
    exo.init(&mut rng);

    let mut ego_opt = AdamW::new(ego.core().param_count(), config.weight_decay);
    let mut exo_opt = AdamW::new(exo.core().param_count(), config.weight_decay);
    let mut cache = NegativeCache::new(config.cache_capacity);
    let mut stream = AnchorStream::new(pool.anchors.len());
    let mut curve = Vec::with_capacity(config.steps as usize);

    for step in 0..config.steps {
        let (batch, partner_meta) =
            assemble_batch(dataset, &pool, &mut stream, &cache, config, &mut rng)?;
        let (loss, exo_embeddings, d_ego, d_exo) =
            paired_supcon_step(&ego, &exo, &batch, config.temperature, config.denominator_mode)?;

        let lr = cosine_lr(config.learning_rate, step, config.steps);
        ego_opt.step(ego.core_mut().params_mut(), &d_ego, lr);
        exo_opt.step(exo.core_mut().params_mut(), &d_exo, lr);

        // Cache is refreshed only after the update, so step 1's loss never
        // depends on the cache capacity.
        for (z, (identity_id, take_id)) in exo_embeddings.into_iter().zip(&partner_meta) {
            cache.push(identity_id, take_id, z);
        }
        curve.push(LossPoint { step, loss, lr });
    }

    Ok((HeadPair { ego, exo, step: config.steps }, curve))
}
