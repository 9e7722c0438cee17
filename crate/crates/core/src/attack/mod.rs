//! Demographic attacks on egocentric embeddings: direct classification,
//! retrieval-augmented voting, per-identity ensembling, and the sweep that
//! tabulates them.

pub mod classifier;
pub mod raa;
pub mod voting;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classifier::{train_classifier, ClassifierConfig, ClassifierHead, ProbabilityPrediction};
pub use raa::{raa_attack, EgoWeightScheme, RaaConfig, RaaEngine, RaaPrediction, RetrieverSpec};
pub use voting::{hard_vote, identity_level_ensemble, soft_vote, soft_vote_probs, Aggregator};

use crate::data::{Attribute, Dataset, Split, View};
use crate::error::{Error, Result};

/// Adversary tiers, ordered by how much the attacker is assumed to have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    /// Raw foundation-model embeddings and seeded, untrained heads.
    ZeroShot,
    /// Heads fine-tuned on the train split.
    Finetuned,
    /// Fine-tuned heads plus retrieval over an exo pool.
    RetrievalAugmented,
    /// Everything above plus clips grouped by identity.
    IdentityLinking,
}

impl Capability {
    /// Numeric tier used in CSV output and on the command line.
    pub fn tier(self) -> u8 {
        match self {
            Capability::ZeroShot => 1,
            Capability::Finetuned => 2,
            Capability::RetrievalAugmented => 3,
            Capability::IdentityLinking => 4,
        }
    }

    pub fn from_tier(tier: u8) -> Result<Self> {
        match tier {
            1 => Ok(Capability::ZeroShot),
            2 => Ok(Capability::Finetuned),
            3 => Ok(Capability::RetrievalAugmented),
            4 => Ok(Capability::IdentityLinking),
            other => Err(Error::InvalidInput(format!(
                "unknown capability tier {other} (expected 1-4)"
            ))),
        }
    }
}

/// One row of an attack report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub attribute: Attribute,
    /// Numeric adversary tier (1-4) describing this row's configuration.
    pub capability: u8,
    pub view: View,
    pub m: usize,
    pub aggregator: Aggregator,
    pub weight_scheme: EgoWeightScheme,
    pub accuracy: f64,
    /// Accuracy minus the `m = 0` (no-retrieval) baseline of the same sweep.
    pub delta: f64,
    /// Queries (or identities, for identity-level rows) evaluated.
    pub n: usize,
}

/// Header of the attack CSV schema.
pub const ATTACK_CSV_HEADER: &str =
    "attribute,capability,view,m,aggregator,weight_scheme,accuracy,delta,n";

/// Render rows as CSV (4-decimal accuracy columns).
pub fn attack_rows_to_csv(rows: &[AttackRow]) -> String {
    let mut out = String::from(ATTACK_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.4},{:.4},{}\n",
            row.attribute,
            row.capability,
            row.view.as_str(),
            row.m,
            row.aggregator.as_str(),
            row.weight_scheme.as_str(),
            row.accuracy,
            row.delta,
            row.n
        ));
    }
    out
}

/// Write rows to disk in the attack CSV schema.
pub fn write_attack_csv(path: &Path, rows: &[AttackRow]) -> Result<()> {
    fs::write(path, attack_rows_to_csv(rows))?;
    Ok(())
}

/// Sweep configuration: which queries, which support sizes, which voting.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub attribute: Attribute,
    /// Provenance of the classifier/retriever heads: `ZeroShot` (seeded,
    /// untrained, raw retrieval) or `Finetuned`.
    pub base_capability: Capability,
    /// Query side. Retrieval augmentation requires ego queries.
    pub view: View,
    /// Support sizes to evaluate, one output row each.
    pub ms: Vec<usize>,
    pub aggregator: Aggregator,
    pub weight_scheme: EgoWeightScheme,
    /// Restrict queries to one split (`None` = all clips).
    pub split: Option<Split>,
    /// Aggregate per-clip attacks into one prediction per identity.
    pub per_identity: bool,
    /// Frames subsampled per clip.
    pub frames: usize,
}

impl SweepOptions {
    pub fn new(attribute: Attribute, base_capability: Capability) -> Self {
        SweepOptions {
            attribute,
            base_capability,
            view: View::Ego,
            ms: vec![0, 3],
            aggregator: Aggregator::default(),
            weight_scheme: EgoWeightScheme::default(),
            split: Some(Split::Test),
            per_identity: false,
            frames: 8,
        }
    }

    fn capability_for_row(&self, m: usize) -> u8 {
        if self.per_identity {
            Capability::IdentityLinking.tier()
        } else if m > 0 {
            Capability::RetrievalAugmented.tier()
        } else {
            self.base_capability.tier()
        }
    }
}

/// Accuracy of a set of per-clip predictions, optionally collapsed to one
/// vote per identity first. Returns `(accuracy, n)`.
fn score_predictions(
    predictions: &[(String, usize, ProbabilityPrediction)],
    truth_by_identity: &BTreeMap<String, usize>,
    options: &SweepOptions,
) -> Result<(f64, usize)> {
    if options.per_identity {
        let grouped: Vec<(String, ProbabilityPrediction)> = predictions
            .iter()
            .map(|(identity_id, _, prediction)| (identity_id.clone(), prediction.clone()))
            .collect();
        let (_, accuracy) =
            identity_level_ensemble(&grouped, truth_by_identity, options.aggregator)?;
        Ok((accuracy, truth_by_identity.len()))
    } else {
        let correct = predictions
            .iter()
            .filter(|(_, truth, prediction)| prediction.argmax() == *truth)
            .count();
        Ok((correct as f64 / predictions.len() as f64, predictions.len()))
    }
}

/// Evaluate the attack at every requested support size.
///
/// Produces one row per entry of `options.ms`, in order, each scored over the
/// same query set; `delta` is relative to the `m = 0` baseline, which is
/// computed whether or not `0` appears in `options.ms`.
pub fn attack_sweep(
    dataset: &Dataset,
    pool_dataset: &Dataset,
    retriever: RetrieverSpec<'_>,
    ego_clf: &ClassifierHead,
    exo_clf: &ClassifierHead,
    options: &SweepOptions,
) -> Result<Vec<AttackRow>> {
    if options.base_capability > Capability::Finetuned {
        return Err(Error::InvalidConfig(
            "base capability must be tier 1 or 2; retrieval and identity linking are flags".into(),
        ));
    }
    for clf in [ego_clf, exo_clf] {
        if clf.attribute() != options.attribute {
            return Err(Error::InvalidConfig(format!(
                "classifier targets {}, sweep targets {}",
                clf.attribute(),
                options.attribute
            )));
        }
    }
    if options.view == View::Exo && options.ms.iter().any(|&m| m > 0) {
        return Err(Error::InvalidConfig(
            "retrieval augmentation needs ego queries; exo sweeps must use m = 0".into(),
        ));
    }

    let queries: Vec<_> = dataset
        .view_clips(options.view, options.split)
        .into_iter()
        .filter(|c| c.class_index(options.attribute).is_some())
        .collect();
    if queries.is_empty() {
        return Err(Error::EmptyEvaluation(format!(
            "no {} clip carries a {} label in the requested split",
            options.view.as_str(),
            options.attribute
        )));
    }
    let truth_by_identity: BTreeMap<String, usize> = queries
        .iter()
        .map(|c| (c.identity_id.clone(), c.class_index(options.attribute).expect("filtered")))
        .collect();

    // Per-clip predictions for one support size.
    let query_clf = match options.view {
        View::Ego => ego_clf,
        View::Exo => exo_clf,
    };
    let engine = match options.view {
        View::Ego => Some(RaaEngine::new(
            dataset,
            pool_dataset,
            retriever,
            ego_clf,
            exo_clf,
            options.frames,
        )?),
        View::Exo => None,
    };
    let predictions_at = |m: usize| -> Result<Vec<(String, usize, ProbabilityPrediction)>> {
        let mut rows = Vec::with_capacity(queries.len());
        for q in &queries {
            let truth = q.class_index(options.attribute).expect("filtered");
            let prediction = match (&engine, m) {
                (Some(engine), _) => {
                    let raa = engine.attack(
                        &q.clip_id,
                        &RaaConfig {
                            m,
                            aggregator: options.aggregator,
                            ego_weight_scheme: options.weight_scheme,
                        },
                    )?;
                    ProbabilityPrediction::new(
                        q.clip_id.clone(),
                        options.attribute,
                        raa.probs,
                    )?
                }
                (None, _) => query_clf.predict(dataset, &q.clip_id, options.frames)?,
            };
            rows.push((q.identity_id.clone(), truth, prediction));
        }
        Ok(rows)
    };

    let (baseline_accuracy, _) =
        score_predictions(&predictions_at(0)?, &truth_by_identity, options)?;

    let mut rows = Vec::with_capacity(options.ms.len());
    for &m in &options.ms {
        let (accuracy, n) = score_predictions(&predictions_at(m)?, &truth_by_identity, options)?;
        rows.push(AttackRow {
            attribute: options.attribute,
            capability: options.capability_for_row(m),
            view: options.view,
            m,
            aggregator: options.aggregator,
            weight_scheme: options.weight_scheme,
            accuracy,
            delta: accuracy - baseline_accuracy,
            n,
        });
    }
    Ok(rows)
}
