//! Retrieval-augmented attack: retrieve the exo clips most similar to an ego
//! query in the shared embedding space, predict on each, and aggregate the
//! votes with the ego prediction.

use std::collections::BTreeMap;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::attack::classifier::{ClassifierHead, ProbabilityPrediction};
use crate::attack::voting::{hard_vote, soft_vote, soft_vote_probs, Aggregator};
use crate::data::{Dataset, View};
use crate::error::{Error, Result};
use crate::retrieval::{clip_vector, rank_gallery};
use crate::train::HeadPair;

/// How the ego prediction is weighted against the retrieved exo predictions
/// in a soft vote.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgoWeightScheme {
    /// Every voter weighs `1/(M+1)`.
    #[default]
    Uniform,
    /// The ego prediction takes 0.5; the exo voters split the rest evenly.
    FixedHalf,
}

impl EgoWeightScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            EgoWeightScheme::Uniform => "uniform",
            EgoWeightScheme::FixedHalf => "half",
        }
    }

    /// Weights for the voter list `[ego, exo_1, ..., exo_m]`.
    pub fn weights(self, m: usize) -> Vec<f64> {
        match self {
            EgoWeightScheme::Uniform => vec![1.0 / (m + 1) as f64; m + 1],
            EgoWeightScheme::FixedHalf => {
                if m == 0 {
                    return vec![1.0];
                }
                let mut w = vec![0.5 / m as f64; m + 1];
                w[0] = 0.5;
                w
            }
        }
    }
}

impl std::str::FromStr for EgoWeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(EgoWeightScheme::Uniform),
            "half" => Ok(EgoWeightScheme::FixedHalf),
            other => Err(Error::InvalidInput(format!(
                "unknown weight scheme '{other}' (expected uniform or half)"
            ))),
        }
    }
}

/// Scalar knobs of one retrieval-augmented attack configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaaConfig {
    /// Support size: how many retrieved exo clips vote alongside the query.
    pub m: usize,
    pub aggregator: Aggregator,
    pub ego_weight_scheme: EgoWeightScheme,
}

impl Default for RaaConfig {
    fn default() -> Self {
        RaaConfig {
            m: 3,
            aggregator: Aggregator::SoftVote,
            ego_weight_scheme: EgoWeightScheme::Uniform,
        }
    }
}

/// How query and pool clips are embedded for retrieval.
#[derive(Debug, Clone, Copy)]
pub enum RetrieverSpec<'a> {
    /// Mean-pooled raw frame embeddings (the zero-shot attacker).
    Raw,
    /// Trained ego/exo projection heads.
    Heads(&'a HeadPair),
}

impl<'a> RetrieverSpec<'a> {
    fn as_heads(&self) -> Option<&'a HeadPair> {
        match self {
            RetrieverSpec::Raw => None,
            RetrieverSpec::Heads(pair) => Some(pair),
        }
    }
}

/// Outcome of one retrieval-augmented prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct RaaPrediction {
    /// Aggregated class index.
    pub class: usize,
    /// Aggregated distribution (one-hot under hard voting).
    pub probs: Vec<f64>,
    /// Retrieved support clip ids, most similar first.
    pub support: Vec<String>,
}

/// Amortized attack state: pool vectors and exo predictions are computed once
/// and shared across every query and support size.
#[derive(Debug)]
pub struct RaaEngine<'a> {
    dataset: &'a Dataset,
    ego_clf: &'a ClassifierHead,
    retriever: RetrieverSpec<'a>,
    frames: usize,
    pool: Vec<(String, Array1<f64>)>,
    exo_predictions: BTreeMap<String, ProbabilityPrediction>,
}

impl<'a> RaaEngine<'a> {
    /// Prepare an engine over `pool_dataset`'s exo clips.
    ///
    /// `dataset` supplies the ego queries; the pool may be the same bundle or
    /// a separate retrieval corpus.
    pub fn new(
        dataset: &'a Dataset,
        pool_dataset: &'a Dataset,
        retriever: RetrieverSpec<'a>,
        ego_clf: &'a ClassifierHead,
        exo_clf: &'a ClassifierHead,
        frames: usize,
    ) -> Result<Self> {
        if let RetrieverSpec::Heads(pair) = retriever {
            if pair.step == 0 {
                return Err(Error::TaskNotRunnable(
                    "retrieval heads have had no training steps; use the raw retriever instead"
                        .into(),
                ));
            }
        }
        let exo_clips = pool_dataset.view_clips(View::Exo, None);
        if exo_clips.is_empty() {
            return Err(Error::EmptyGallery("retrieval pool has no exo clips".into()));
        }
        let mut pool = Vec::with_capacity(exo_clips.len());
        let mut exo_predictions = BTreeMap::new();
        for clip in exo_clips {
            let vector = clip_vector(pool_dataset, &clip.clip_id, retriever.as_heads(), frames)?;
            pool.push((clip.clip_id.clone(), vector));
            let prediction = exo_clf.predict(pool_dataset, &clip.clip_id, frames)?;
            exo_predictions.insert(clip.clip_id.clone(), prediction);
        }
        Ok(RaaEngine { dataset, ego_clf, retriever, frames, pool, exo_predictions })
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    /// Retrieved support ids for a query (most similar first), without voting.
    pub fn support(&self, query_id: &str, m: usize) -> Result<Vec<String>> {
        if m > self.pool.len() {
            return Err(Error::KExceedsGallery { k: m, n: self.pool.len() });
        }
        if m == 0 {
            return Ok(Vec::new());
        }
        let query =
            clip_vector(self.dataset, query_id, self.retriever.as_heads(), self.frames)?;
        let ranking = rank_gallery(query_id, query.view(), &self.pool, Some(m))?;
        Ok(ranking.top_k_ids(m).map(str::to_string).collect())
    }

    /// Run the attack for one ego query.
    pub fn attack(&self, query_id: &str, config: &RaaConfig) -> Result<RaaPrediction> {
        let query_clip = self.dataset.clip(query_id)?;
        if query_clip.view != View::Ego {
            return Err(Error::InvalidInput(format!(
                "attack queries must be ego clips, '{query_id}' is exo"
            )));
        }
        let support = self.support(query_id, config.m)?;
        let mut votes = Vec::with_capacity(support.len() + 1);
        votes.push(self.ego_clf.predict(self.dataset, query_id, self.frames)?);
        for id in &support {
            votes.push(self.exo_predictions[id].clone());
        }

        let (class, probs) = match config.aggregator {
            Aggregator::HardVote => {
                let class = hard_vote(&votes, 0)?;
                let mut probs = vec![0.0; votes[0].probs.len()];
                probs[class] = 1.0;
                (class, probs)
            }
            Aggregator::SoftVote => {
                let weights = config.ego_weight_scheme.weights(config.m);
                let class = soft_vote(&votes, &weights)?;
                let probs = soft_vote_probs(&votes, &weights, votes[0].probs.len())?;
                (class, probs)
            }
        };
        Ok(RaaPrediction { class, probs, support })
    }
}

/// One-shot form of the attack: build the engine, run a single query, and
/// return the aggregated class with its audited support ids.
pub fn raa_attack(
    dataset: &Dataset,
    pool_dataset: &Dataset,
    query_id: &str,
    config: &RaaConfig,
    retriever: RetrieverSpec<'_>,
    ego_clf: &ClassifierHead,
    exo_clf: &ClassifierHead,
    frames: usize,
) -> Result<(usize, Vec<String>)> {
    let engine = RaaEngine::new(dataset, pool_dataset, retriever, ego_clf, exo_clf, frames)?;
    let prediction = engine.attack(query_id, config)?;
    Ok((prediction.class, prediction.support))
}
