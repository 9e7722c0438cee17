//! Synthetic paired-view dataset generator.
//!
//! Builds a fully labeled [`Dataset`] from a seeded latent-factor model: every
//! identity, demographic class, scene, take, and the exocentric viewpoint each
//! get a random unit direction, and a clip's frames are a weighted sum of its
//! factors plus per-view Gaussian noise. The weights control exactly how much
//! signal each nuisance or target carries, so generated corpora can be tuned
//! to make a given attack easy, hard, or impossible. Generation is a pure
//! function of the config: the same config yields the same dataset, clip ids,
//! and split, byte for byte.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{
    Age, Attribute, ClipRecord, Dataset, EmbeddingTable, Gender, Race, Split, View,
};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Per-attribute signal weights for the latent-factor mix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeWeights {
    pub gender: f64,
    pub race: f64,
    pub age: f64,
}

impl AttributeWeights {
    /// Weight of one attribute's class factor.
    pub fn get(&self, attribute: Attribute) -> f64 {
        match attribute {
            Attribute::Gender => self.gender,
            Attribute::Race => self.race,
            Attribute::Age => self.age,
        }
    }
}

/// Per-view frame noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSigma {
    pub ego: f64,
    pub exo: f64,
}

impl ViewSigma {
    pub fn get(&self, view: View) -> f64 {
        match view {
            View::Ego => self.ego,
            View::Exo => self.exo,
        }
    }
}

/// Class priors for sampling one identity's demographics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographicPriors {
    /// P(Female), P(Male).
    pub gender: Vec<f64>,
    /// P(Asian), P(Black), P(White).
    pub race: Vec<f64>,
    /// P(Young), P(MiddleAged), P(Senior).
    pub age: Vec<f64>,
}

impl DemographicPriors {
    /// Uniform prior over every attribute's classes.
    pub fn uniform() -> Self {
        DemographicPriors {
            gender: vec![0.5, 0.5],
            race: vec![1.0 / 3.0; 3],
            age: vec![1.0 / 3.0; 3],
        }
    }

    pub fn get(&self, attribute: Attribute) -> &[f64] {
        match attribute {
            Attribute::Gender => &self.gender,
            Attribute::Race => &self.race,
            Attribute::Age => &self.age,
        }
    }
}

fn default_takes_per_identity() -> usize {
    1
}

fn default_exo_per_take() -> usize {
    1
}

fn default_n_scenes() -> usize {
    4
}

fn default_priors() -> DemographicPriors {
    DemographicPriors::uniform()
}

fn default_ego_attribute_scale() -> f64 {
    1.0
}

fn default_frames_per_clip() -> u32 {
    8
}

fn default_train_fraction() -> f64 {
    0.5
}

/// Full recipe for one synthetic dataset.
///
/// `seed`, `n_identities`, and `dim` are mandatory; everything else has a
/// usable default. Weights are signal magnitudes along the corresponding
/// latent unit direction; `sigma` is the standard deviation of the per-frame,
/// per-view Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of camera wearers. Split across Train/Test by identity.
    pub n_identities: usize,
    /// Recording sessions per identity; each take has one ego clip.
    #[serde(default = "default_takes_per_identity")]
    pub takes_per_identity: usize,
    /// Stationary cameras per take; each produces one exo clip.
    #[serde(default = "default_exo_per_take")]
    pub exo_per_take: usize,
    /// Number of distinct scene locations takes are assigned to.
    #[serde(default = "default_n_scenes")]
    pub n_scenes: usize,
    /// Demographic class priors sampled once per identity.
    #[serde(default = "default_priors")]
    pub priors: DemographicPriors,
    /// Embedding dimensionality of every frame vector.
    pub dim: usize,
    /// Weight of the identity factor (who the wearer is).
    pub identity_w: f64,
    /// Weight of each demographic class factor.
    pub attribute_w: AttributeWeights,
    /// Extra scaling of the demographic factors in ego clips. Below 1.0 the
    /// wearer's appearance is only faintly visible to their own camera while
    /// every exo camera sees it in full.
    #[serde(default = "default_ego_attribute_scale")]
    pub ego_attribute_scale: f64,
    /// Weight of the scene factor shared by all clips of takes in one scene.
    pub scene_w: f64,
    /// Weight of the take factor shared by the ego and exo clips of one take.
    pub take_w: f64,
    /// Weight of the global exo-view offset added to every exo clip.
    pub view_offset_w: f64,
    /// Per-view frame noise standard deviation.
    pub sigma: ViewSigma,
    /// Frames stored per clip.
    #[serde(default = "default_frames_per_clip")]
    pub frames_per_clip: u32,
    /// Fraction of identities assigned to Train (rounded, clamped so both
    /// splits stay nonempty).
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Seed for every random draw the generator makes.
    pub seed: u64,
}

impl SynthConfig {
    /// Check structural validity; called by [`generate`].
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::InvalidConfig(
                "n_identities must be at least 2 so both splits are nonempty".into(),
            ));
        }
        if self.takes_per_identity == 0 {
            return Err(Error::InvalidConfig("takes_per_identity must be positive".into()));
        }
        if self.exo_per_take == 0 {
            return Err(Error::InvalidConfig("exo_per_take must be positive".into()));
        }
        if self.n_scenes == 0 {
            return Err(Error::InvalidConfig("n_scenes must be positive".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be positive".into()));
        }
        if self.frames_per_clip == 0 {
            return Err(Error::InvalidConfig("frames_per_clip must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "train_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        for (name, w) in [
            ("identity_w", self.identity_w),
            ("attribute_w.gender", self.attribute_w.gender),
            ("attribute_w.race", self.attribute_w.race),
            ("attribute_w.age", self.attribute_w.age),
            ("ego_attribute_scale", self.ego_attribute_scale),
            ("scene_w", self.scene_w),
            ("take_w", self.take_w),
            ("view_offset_w", self.view_offset_w),
            ("sigma.ego", self.sigma.ego),
            ("sigma.exo", self.sigma.exo),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        for attribute in Attribute::ALL {
            let prior = self.priors.get(attribute);
            if prior.len() != attribute.n_classes() {
                return Err(Error::InvalidConfig(format!(
                    "{attribute} prior has {} entries but the attribute has {} classes",
                    prior.len(),
                    attribute.n_classes()
                )));
            }
            if prior.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidConfig(format!(
                    "{attribute} prior entries must be finite and >= 0"
                )));
            }
            let total: f64 = prior.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "{attribute} prior sums to {total}, expected 1 within 1e-9"
                )));
            }
        }
        Ok(())
    }

    /// Parse a config from a JSON file, then validate it.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: SynthConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    fn n_train(&self) -> usize {
        let k = (self.train_fraction * self.n_identities as f64).round() as usize;
        k.clamp(1, self.n_identities - 1)
    }
}

/// All latent unit directions one generation run draws.
struct Factors {
    identity: Vec<Vec<f64>>,
    /// One direction per class, indexed as `[attribute][class]`.
    attribute: Vec<Vec<Vec<f64>>>,
    scene: Vec<Vec<f64>>,
    exo_offset: Vec<f64>,
}

fn draw_factors(config: &SynthConfig, rng: &mut SeededRng) -> Factors {
    let dim = config.dim;
    let identity = (0..config.n_identities).map(|_| rng.unit_vector(dim)).collect();
    let attribute = Attribute::ALL
        .iter()
        .map(|a| (0..a.n_classes()).map(|_| rng.unit_vector(dim)).collect())
        .collect();
    let scene = (0..config.n_scenes).map(|_| rng.unit_vector(dim)).collect();
    let exo_offset = rng.unit_vector(dim);
    Factors { identity, attribute, scene, exo_offset }
}

/// Identity-level draws: demographic classes and the Train/Test assignment.
struct Roster {
    /// `[identity][attribute] -> class index`.
    classes: Vec<[usize; 3]>,
    split: Vec<Split>,
}

fn draw_roster(config: &SynthConfig, rng: &mut SeededRng) -> Roster {
    let classes = (0..config.n_identities)
        .map(|_| {
            let mut row = [0usize; 3];
            for (slot, attribute) in row.iter_mut().zip(Attribute::ALL) {
                *slot = rng.categorical(config.priors.get(attribute));
            }
            row
        })
        .collect();

    let mut order: Vec<usize> = (0..config.n_identities).collect();
    rng.shuffle(&mut order);
    let mut split = vec![Split::Test; config.n_identities];
    for &i in order.iter().take(config.n_train()) {
        split[i] = Split::Train;
    }
    Roster { classes, split }
}

/// Accumulate `weight * direction` into `mean`.
fn add_scaled(mean: &mut [f64], direction: &[f64], weight: f64) {
    for (m, d) in mean.iter_mut().zip(direction) {
        *m += weight * d;
    }
}

/// Sample `frames_per_clip` rows of `mean + sigma * noise` as an f32 matrix.
fn sample_clip(
    config: &SynthConfig,
    mean: &[f64],
    sigma: f64,
    rng: &mut SeededRng,
) -> Array2<f32> {
    let frames = config.frames_per_clip as usize;
    let mut out = Array2::zeros((frames, config.dim));
    for t in 0..frames {
        let noise = rng.gaussian_vec(config.dim);
        for (d, (m, g)) in mean.iter().zip(&noise).enumerate() {
            out[[t, d]] = (m + sigma * g) as f32;
        }
    }
    out
}

/// Generate a dataset from the latent-factor model described by `config`.
///
/// Draw order is fixed (factor directions, then per-identity demographics and
/// the split shuffle, then per-take scene/take draws and frame noise), so a
/// config identifies its dataset exactly.
pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let factors = draw_factors(config, &mut rng);
    let roster = draw_roster(config, &mut rng);

    let mut clips = Vec::new();
    let mut ego = EmbeddingTable::new(config.dim)?;
    let mut exo = EmbeddingTable::new(config.dim)?;

    for person in 0..config.n_identities {
        let identity_id = format!("id{person:04}");
        let [gender_c, race_c, age_c] = roster.classes[person];
        let gender = [Gender::Female, Gender::Male][gender_c];
        let race = [Race::Asian, Race::Black, Race::White][race_c];
        let age = [Age::Young, Age::MiddleAged, Age::Senior][age_c];

        let mut base = vec![0.0f64; config.dim];
        add_scaled(&mut base, &factors.identity[person], config.identity_w);
        let mut attribute_part = vec![0.0f64; config.dim];
        for (a, attribute) in Attribute::ALL.iter().enumerate() {
            add_scaled(
                &mut attribute_part,
                &factors.attribute[a][roster.classes[person][a]],
                config.attribute_w.get(*attribute),
            );
        }

        for take in 0..config.takes_per_identity {
            let take_id = format!("{identity_id}_t{take:02}");
            let scene = rng.index(config.n_scenes);
            let take_dir = rng.unit_vector(config.dim);

            let mut take_mean = base.clone();
            add_scaled(&mut take_mean, &factors.scene[scene], config.scene_w);
            add_scaled(&mut take_mean, &take_dir, config.take_w);

            let mut record = ClipRecord {
                clip_id: format!("{take_id}_ego"),
                view: View::Ego,
                identity_id: identity_id.clone(),
                take_id: take_id.clone(),
                scene_id: Some(format!("scene{scene:02}")),
                gender: Some(gender),
                race: Some(race),
                age: Some(age),
                split: roster.split[person],
                frame_count: config.frames_per_clip,
            };
            let mut ego_mean = take_mean.clone();
            add_scaled(&mut ego_mean, &attribute_part, config.ego_attribute_scale);
            ego.insert(record.clip_id.clone(), sample_clip(config, &ego_mean, config.sigma.ego, &mut rng))?;
            clips.push(record.clone());

            let mut exo_mean = take_mean.clone();
            add_scaled(&mut exo_mean, &attribute_part, 1.0);
            add_scaled(&mut exo_mean, &factors.exo_offset, config.view_offset_w);
            for camera in 0..config.exo_per_take {
                record.clip_id = format!("{take_id}_exo{camera}");
                record.view = View::Exo;
                exo.insert(
                    record.clip_id.clone(),
                    sample_clip(config, &exo_mean, config.sigma.exo, &mut rng),
                )?;
                clips.push(record.clone());
            }
        }
    }

    let provenance = format!("synth {}", serde_json::to_string(config)?);
    Dataset::from_parts(clips, ego, exo, provenance)
}
