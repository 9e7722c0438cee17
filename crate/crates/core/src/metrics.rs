//! Evaluation metrics: accuracy, hit rate, chance baselines, label priors,
//! and top-k attribute consistency.
//!
//! Every metric returns a [`MetricReport`] carrying the value together with
//! how many items were evaluated, how many were excluded, and the parameters
//! that shaped the number — enough to rebuild any table cell from its report.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::retrieval::Ranking;

/// One computed metric with its evaluation context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric_name: String,
    /// Always in `[0, 1]`. Full precision in memory; serialized rounded to
    /// four decimal places.
    #[serde(serialize_with = "serialize_4dp")]
    pub value: f64,
    pub n_evaluated: usize,
    /// Items dropped before evaluation (e.g. queries with no positives).
    pub n_excluded: usize,
    /// Metric-specific parameters (k, attribute, majority class, ...).
    pub parameters: BTreeMap<String, Value>,
}

fn serialize_4dp<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e4).round() / 1e4)
}

impl MetricReport {
    fn new(name: &str, value: f64, n_evaluated: usize, n_excluded: usize) -> Self {
        debug_assert!((0.0..=1.0).contains(&value), "metric {name} out of range: {value}");
        MetricReport {
            metric_name: name.to_string(),
            value,
            n_evaluated,
            n_excluded,
            parameters: BTreeMap::new(),
        }
    }

    fn with_param(mut self, key: &str, value: Value) -> Self {
        self.parameters.insert(key.to_string(), value);
        self
    }
}

/// Fraction of clips whose predicted class equals the true class.
///
/// Every predicted clip must have a label; an empty prediction map is an error.
pub fn accuracy(
    predictions: &BTreeMap<String, String>,
    labels: &BTreeMap<String, String>,
) -> Result<MetricReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyEvaluation("accuracy over zero predictions".into()));
    }
    let mut correct = 0usize;
    for (clip, predicted) in predictions {
        let label = labels
            .get(clip)
            .ok_or_else(|| Error::MissingLabel(format!("no label for predicted clip '{clip}'")))?;
        if predicted == label {
            correct += 1;
        }
    }
    Ok(MetricReport::new("accuracy", correct as f64 / predictions.len() as f64, predictions.len(), 0))
}

/// Fraction of queries whose top-k candidates contain at least one positive.
///
/// Queries with an empty positive set are excluded from the denominator and
/// counted in `n_excluded`. Each evaluated query needs a ranking with at
/// least `k` candidates.
pub fn hit_rate_at_k(
    rankings: &BTreeMap<String, Ranking>,
    positives: &BTreeMap<String, BTreeSet<String>>,
    k: usize,
) -> Result<MetricReport> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    let mut hits = 0usize;
    for (query, pos) in positives {
        if pos.is_empty() {
            excluded += 1;
            continue;
        }
        let ranking = rankings.get(query).ok_or_else(|| {
            Error::InvalidInput(format!("query '{query}' has positives but no ranking"))
        })?;
        if ranking.candidates.len() < k {
            return Err(Error::KExceedsGallery { k, n: ranking.candidates.len() });
        }
        evaluated += 1;
        if ranking.top_k_ids(k).any(|id| pos.contains(id)) {
            hits += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::EmptyEvaluation("every query had an empty positive set".into()));
    }
    Ok(MetricReport::new("hit_rate", hits as f64 / evaluated as f64, evaluated, excluded)
        .with_param("k", Value::from(k)))
}

/// Binomial coefficient in exact integer arithmetic, `None` on overflow.
fn binomial_u128(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        // acc = C(n, i): multiply first so every intermediate stays integral.
        acc = acc.checked_mul((n - k + i) as u128)? / i as u128;
    }
    Some(acc)
}

/// Probability that a uniformly random size-k subset of `n_candidates` hits
/// at least one of `n_positives`: `1 - C(N-p, k) / C(N, k)`.
///
/// Computed as `(C(N,k) - C(N-p,k)) / C(N,k)` in exact integer arithmetic
/// when it fits, so the value agrees bit for bit with subset enumeration;
/// larger instances fall back to a stable product form.
pub fn chance_hit_rate(n_candidates: usize, n_positives: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n_candidates {
        return Err(Error::InvalidInput(format!(
            "k = {k} outside 1..={n_candidates} candidates"
        )));
    }
    if n_positives > n_candidates {
        return Err(Error::InvalidInput(format!(
            "{n_positives} positives exceed {n_candidates} candidates"
        )));
    }
    if let (Some(total), Some(miss)) =
        (binomial_u128(n_candidates, k), binomial_u128(n_candidates - n_positives, k))
    {
        return Ok((total - miss) as f64 / total as f64);
    }
    // Product form of C(N-p,k)/C(N,k) = prod_{i<k} (N-p-i)/(N-i).
    let mut miss_prob = 1.0f64;
    for i in 0..k {
        if n_candidates - n_positives <= i {
            miss_prob = 0.0;
            break;
        }
        miss_prob *= (n_candidates - n_positives - i) as f64 / (n_candidates - i) as f64;
    }
    Ok(1.0 - miss_prob)
}

/// Accuracy of always predicting the training set's majority class.
///
/// Ties on the majority pick the lexicographically smallest class.
pub fn prior_accuracy<S: AsRef<str>>(
    train_labels: &[S],
    test_labels: &[S],
) -> Result<MetricReport> {
    if train_labels.is_empty() {
        return Err(Error::EmptyEvaluation("no training labels for the prior".into()));
    }
    if test_labels.is_empty() {
        return Err(Error::EmptyEvaluation("no test labels to score the prior on".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for label in train_labels {
        *counts.entry(label.as_ref()).or_insert(0) += 1;
    }
    // BTreeMap iterates ascending, so on ties the smallest label sticks.
    let (majority, _) = counts
        .iter()
        .fold(("", 0usize), |best, (&label, &n)| if n > best.1 { (label, n) } else { best });
    let correct = test_labels.iter().filter(|l| l.as_ref() == majority).count();
    Ok(
        MetricReport::new("prior_accuracy", correct as f64 / test_labels.len() as f64, test_labels.len(), 0)
            .with_param("majority_class", Value::from(majority)),
    )
}

/// Fraction of queries whose top-k contains a candidate sharing the query's
/// attribute class.
///
/// `attribute_of` maps clip id to class label for queries and candidates
/// alike. Unlabeled queries are excluded and counted; an unlabeled candidate
/// inside an evaluated top-k is an error.
pub fn attribute_consistency_at_k(
    rankings: &BTreeMap<String, Ranking>,
    attribute_of: &BTreeMap<String, String>,
    k: usize,
) -> Result<MetricReport> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    if rankings.is_empty() {
        return Err(Error::EmptyEvaluation("no rankings to evaluate".into()));
    }
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    let mut consistent = 0usize;
    for (query, ranking) in rankings {
        let Some(query_class) = attribute_of.get(query) else {
            excluded += 1;
            continue;
        };
        if ranking.candidates.len() < k {
            return Err(Error::KExceedsGallery { k, n: ranking.candidates.len() });
        }
        evaluated += 1;
        let mut hit = false;
        for id in ranking.top_k_ids(k) {
            let class = attribute_of.get(id).ok_or_else(|| {
                Error::MissingLabel(format!("candidate '{id}' has no attribute label"))
            })?;
            if class == query_class {
                hit = true;
                break;
            }
        }
        if hit {
            consistent += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::EmptyEvaluation("no query carries the attribute".into()));
    }
    Ok(
        MetricReport::new("attribute_consistency", consistent as f64 / evaluated as f64, evaluated, excluded)
            .with_param("k", Value::from(k)),
    )
}
