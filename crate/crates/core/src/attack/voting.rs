//! Vote aggregation over per-clip probability predictions: majority voting
//! with a deterministic tie policy, weighted soft voting, and per-identity
//! ensembling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attack::classifier::ProbabilityPrediction;
use crate::error::{Error, Result};

/// How a set of predictions collapses to one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    HardVote,
    /// The default: argmax of the weighted sum of probability vectors.
    #[default]
    SoftVote,
}

impl Aggregator {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::HardVote => "hard",
            Aggregator::SoftVote => "soft",
        }
    }
}

impl std::str::FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Aggregator::HardVote),
            "soft" => Ok(Aggregator::SoftVote),
            other => Err(Error::InvalidInput(format!(
                "unknown aggregator '{other}' (expected hard or soft)"
            ))),
        }
    }
}

fn check_shared_classes(predictions: &[ProbabilityPrediction]) -> Result<usize> {
    let first = predictions
        .first()
        .ok_or_else(|| Error::EmptyEvaluation("no predictions to aggregate".into()))?;
    for p in &predictions[1..] {
        if p.attribute != first.attribute || p.probs.len() != first.probs.len() {
            return Err(Error::DimensionMismatch(format!(
                "prediction for clip '{}' targets a different class set",
                p.clip_id
            )));
        }
    }
    Ok(first.probs.len())
}

/// Majority class of the argmax votes. Ties go to the class the voter at
/// `ego_index` chose if it is among the tied classes, else to the lowest
/// class index.
pub fn hard_vote(predictions: &[ProbabilityPrediction], ego_index: usize) -> Result<usize> {
    let n_classes = check_shared_classes(predictions)?;
    if ego_index >= predictions.len() {
        return Err(Error::InvalidInput(format!(
            "ego index {ego_index} out of range for {} voters",
            predictions.len()
        )));
    }
    let mut counts = vec![0usize; n_classes];
    for p in predictions {
        counts[p.argmax()] += 1;
    }
    let best = *counts.iter().max().expect("nonempty class set");
    let ego_class = predictions[ego_index].argmax();
    if counts[ego_class] == best {
        return Ok(ego_class);
    }
    Ok(counts.iter().position(|&c| c == best).expect("max exists"))
}

/// Argmax of the weighted sum of probability vectors; ties to the lowest
/// class index.
pub fn soft_vote(predictions: &[ProbabilityPrediction], weights: &[f64]) -> Result<usize> {
    let n_classes = check_shared_classes(predictions)?;
    if weights.len() != predictions.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} predictions",
            weights.len(),
            predictions.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidInput("weights must be nonnegative and finite".into()));
    }
    let combined = soft_vote_probs(predictions, weights, n_classes)?;
    let mut best = 0;
    for (i, &v) in combined.iter().enumerate().skip(1) {
        if v > combined[best] {
            best = i;
        }
    }
    Ok(best)
}

/// The weighted sum behind [`soft_vote`], normalized back to a distribution.
pub fn soft_vote_probs(
    predictions: &[ProbabilityPrediction],
    weights: &[f64],
    n_classes: usize,
) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("soft vote weights are all zero".into()));
    }
    let mut combined = vec![0.0; n_classes];
    for (p, &w) in predictions.iter().zip(weights) {
        for (slot, &prob) in combined.iter_mut().zip(&p.probs) {
            *slot += w * prob;
        }
    }
    for slot in &mut combined {
        *slot /= total;
    }
    Ok(combined)
}

/// Majority over hard class votes with lowest-index ties (no distinguished
/// voter). Used when ensembling across a person's clips.
fn plain_majority(classes: &[usize], n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for &c in classes {
        counts[c] += 1;
    }
    let best = *counts.iter().max().expect("nonempty class set");
    counts.iter().position(|&c| c == best).expect("max exists")
}

/// Collapse per-clip predictions to one class per identity and score against
/// per-identity truth. Returns the per-identity classes and the fraction of
/// identities predicted correctly (one vote per identity).
///
/// Clips inside each identity are sorted by clip id first, so the result is
/// independent of input order.
pub fn identity_level_ensemble(
    predictions: &[(String, ProbabilityPrediction)],
    truth: &BTreeMap<String, usize>,
    aggregator: Aggregator,
) -> Result<(BTreeMap<String, usize>, f64)> {
    if predictions.is_empty() {
        return Err(Error::EmptyEvaluation("no predictions to ensemble".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&ProbabilityPrediction>> = BTreeMap::new();
    for (identity_id, prediction) in predictions {
        groups.entry(identity_id).or_default().push(prediction);
    }

    let mut assigned = BTreeMap::new();
    let mut correct = 0usize;
    for (identity_id, mut group) in groups {
        group.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        let owned: Vec<ProbabilityPrediction> = group.into_iter().cloned().collect();
        let n_classes = check_shared_classes(&owned)?;
        let class = match aggregator {
            Aggregator::HardVote => {
                let votes: Vec<usize> = owned.iter().map(|p| p.argmax()).collect();
                plain_majority(&votes, n_classes)
            }
            Aggregator::SoftVote => {
                let weights = vec![1.0; owned.len()];
                soft_vote(&owned, &weights)?
            }
        };
        let truth_class = truth.get(identity_id).ok_or_else(|| {
            Error::MissingLabel(format!("identity '{identity_id}' has no ground-truth class"))
        })?;
        if class == *truth_class {
            correct += 1;
        }
        assigned.insert(identity_id.to_string(), class);
    }
    let accuracy = correct as f64 / assigned.len() as f64;
    Ok((assigned, accuracy))
}
