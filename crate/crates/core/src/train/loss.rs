//! Supervised contrastive loss across the ego/exo views, with analytic
//! gradients.
//!
//! For anchor embeddings `z_i` (ego) and candidate embeddings `z_j` (exo
//! batch entries followed by cached negatives), the loss is
//!
//! ```text
//! L = - sum_i 1/|P(i)| sum_{k in P(i)} log( exp(<z_i,z_k>/tau)
//!                                           / sum_{j in Den(i,k)} exp(<z_i,z_j>/tau) )
//! ```
//!
//! `Den(i,k)` depends on the denominator mode: `Standard` uses `{k} + N(i)`,
//! which keeps every per-term loss nonnegative; `Literal` uses `N(i)` alone,
//! in which case a term can go below zero when the positive outscores every
//! negative. `Standard` is the training default.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::head::ProjectionHead;

/// What the per-positive denominator sums over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// `{k} + N(i)`: the positive competes against itself plus the negatives.
    #[default]
    Standard,
    /// `N(i)` only, exactly as the loss is usually written down.
    Literal,
}

impl DenominatorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DenominatorMode::Standard => "standard",
            DenominatorMode::Literal => "literal",
        }
    }
}

impl std::str::FromStr for DenominatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(DenominatorMode::Standard),
            "literal" => Ok(DenominatorMode::Literal),
            other => Err(Error::InvalidInput(format!(
                "unknown denominator mode '{other}' (expected standard or literal)"
            ))),
        }
    }
}

fn validate_index_sets(
    name: &str,
    sets: &[BTreeSet<usize>],
    n_anchors: usize,
    n_candidates: usize,
) -> Result<()> {
    if sets.len() != n_anchors {
        return Err(Error::InvalidInput(format!(
            "{name} has {} entries for {n_anchors} anchors",
            sets.len()
        )));
    }
    for (i, set) in sets.iter().enumerate() {
        if let Some(&j) = set.iter().next_back() {
            if j >= n_candidates {
                return Err(Error::InvalidInput(format!(
                    "{name}[{i}] references candidate {j}, pool has {n_candidates}"
                )));
            }
        }
    }
    Ok(())
}

/// Loss and `dL/d(similarity)` from a precomputed similarity matrix
/// (`anchors x candidates`).
pub fn supcon_from_similarities(
    sims: &Array2<f64>,
    positives: &[BTreeSet<usize>],
    negatives: &[BTreeSet<usize>],
    tau: f64,
    mode: DenominatorMode,
) -> Result<(f64, Array2<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {tau}")));
    }
    let (n_anchors, n_candidates) = sims.dim();
    if n_anchors == 0 {
        return Err(Error::EmptyEvaluation("contrastive loss over zero anchors".into()));
    }
    validate_index_sets("positives", positives, n_anchors, n_candidates)?;
    validate_index_sets("negatives", negatives, n_anchors, n_candidates)?;

    let mut loss = 0.0;
    let mut d_sims: Array2<f64> = Array2::zeros(sims.dim());

    for i in 0..n_anchors {
        let pos = &positives[i];
        if pos.is_empty() {
            return Err(Error::InvalidInput(format!("anchor {i} has no positives")));
        }
        let weight = 1.0 / pos.len() as f64;
        for &k in pos {
            // Denominator index set for this (anchor, positive) term.
            let mut den: Vec<usize> = negatives[i].iter().copied().collect();
            match mode {
                DenominatorMode::Standard => {
                    if !negatives[i].contains(&k) {
                        den.push(k);
                    }
                }
                DenominatorMode::Literal => {
                    if den.is_empty() {
                        return Err(Error::InvalidInput(format!(
                            "anchor {i} has an empty denominator in literal mode"
                        )));
                    }
                }
            }

            // Stable log-sum-exp over the denominator.
            let max = den
                .iter()
                .map(|&j| sims[[i, j]] / tau)
                .fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = den.iter().map(|&j| ((sims[[i, j]] / tau) - max).exp()).sum();
            let lse = max + sum_exp.ln();
            loss += weight * (lse - sims[[i, k]] / tau);

            // d(lse)/ds_ij = softmax_j / tau; d(-s_ik/tau)/ds_ik = -1/tau.
            for &j in &den {
                let p = ((sims[[i, j]] / tau) - lse).exp();
                d_sims[[i, j]] += weight * p / tau;
            }
            d_sims[[i, k]] -= weight / tau;
        }
    }
    Ok((loss, d_sims))
}

/// Gradients of the loss with respect to the input embeddings.
#[derive(Debug)]
pub struct EmbeddingGrads {
    /// One gradient per anchor embedding.
    pub d_anchors: Vec<Array1<f64>>,
    /// One gradient per candidate embedding (cache entries included; callers
    /// simply ignore those, cached vectors are frozen).
    pub d_candidates: Vec<Array1<f64>>,
}

/// Loss and embedding gradients from unit-normalized embeddings.
///
/// `candidates` holds the batch's exo embeddings followed by any cached
/// negatives; `positives[i]` / `negatives[i]` index into it.
pub fn supcon_loss(
    anchors: &[Array1<f64>],
    candidates: &[Array1<f64>],
    positives: &[BTreeSet<usize>],
    negatives: &[BTreeSet<usize>],
    tau: f64,
    mode: DenominatorMode,
) -> Result<(f64, EmbeddingGrads)> {
    for (what, vecs) in [("anchor", anchors), ("candidate", candidates)] {
        for (idx, z) in vecs.iter().enumerate() {
            let norm = z.dot(z).sqrt();
            if (norm - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidInput(format!(
                    "{what} {idx} is not unit-normalized (norm {norm})"
                )));
            }
        }
    }
    let dim = anchors.first().map(|z| z.len()).unwrap_or(0);
    if let Some(bad) = anchors.iter().chain(candidates).find(|z| z.len() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "embedding of length {} in a {dim}-dimensional pool",
            bad.len()
        )));
    }

    let mut sims = Array2::zeros((anchors.len(), candidates.len()));
    for (i, a) in anchors.iter().enumerate() {
        for (j, c) in candidates.iter().enumerate() {
            sims[[i, j]] = a.dot(c);
        }
    }
    let (loss, d_sims) = supcon_from_similarities(&sims, positives, negatives, tau, mode)?;

    let mut d_anchors = vec![Array1::zeros(dim); anchors.len()];
    let mut d_candidates = vec![Array1::zeros(dim); candidates.len()];
    for i in 0..anchors.len() {
        for j in 0..candidates.len() {
            let g = d_sims[[i, j]];
            if g != 0.0 {
                d_anchors[i].scaled_add(g, &candidates[j]);
                d_candidates[j].scaled_add(g, &anchors[i]);
            }
        }
    }
    Ok((loss, EmbeddingGrads { d_anchors, d_candidates }))
}

/// One training batch: paired ego/exo frame stacks plus cached negatives.
///
/// Candidate indices run over `exo_frames` first, then `cached`.
pub struct SupconBatch {
    pub ego_frames: Vec<Array2<f64>>,
    pub exo_frames: Vec<Array2<f64>>,
    /// Frozen unit vectors from earlier steps; they receive no gradient.
    pub cached: Vec<Array1<f64>>,
    pub positives: Vec<BTreeSet<usize>>,
    pub negatives: Vec<BTreeSet<usize>>,
}

/// Full differentiable step: embed the batch through both heads, evaluate the
/// loss, and chain gradients back to every head parameter.
///
/// Returns `(loss, exo_embeddings, d_ego_params, d_exo_params)`; the exo
/// embeddings are handed back so the caller can refresh the negative cache
/// without a second forward pass.
pub fn paired_supcon_step(
    ego_head: &ProjectionHead,
    exo_head: &ProjectionHead,
    batch: &SupconBatch,
    tau: f64,
    mode: DenominatorMode,
) -> Result<(f64, Vec<Array1<f64>>, Vec<f64>, Vec<f64>)> {
    if batch.ego_frames.is_empty() {
        return Err(Error::EmptyEvaluation("empty contrastive batch".into()));
    }

    let mut anchors = Vec::with_capacity(batch.ego_frames.len());
    let mut anchor_traces = Vec::with_capacity(batch.ego_frames.len());
    for frames in &batch.ego_frames {
        let (z, trace) = ego_head.embed_traced(frames)?;
        anchors.push(z);
        anchor_traces.push(trace);
    }
    let mut exo_embeddings = Vec::with_capacity(batch.exo_frames.len());
    let mut exo_traces = Vec::with_capacity(batch.exo_frames.len());
    for frames in &batch.exo_frames {
        let (z, trace) = exo_head.embed_traced(frames)?;
        exo_embeddings.push(z);
        exo_traces.push(trace);
    }

    let mut candidates = exo_embeddings.clone();
    candidates.extend(batch.cached.iter().cloned());

    let (loss, grads) =
        supcon_loss(&anchors, &candidates, &batch.positives, &batch.negatives, tau, mode)?;

    let mut d_ego = vec![0.0; ego_head.core().param_count()];
    for ((frames, trace), d_z) in
        batch.ego_frames.iter().zip(&anchor_traces).zip(&grads.d_anchors)
    {
        ego_head.backward(frames, trace, d_z, &mut d_ego, None);
    }
    let mut d_exo = vec![0.0; exo_head.core().param_count()];
    for ((frames, trace), d_z) in
        batch.exo_frames.iter().zip(&exo_traces).zip(&grads.d_candidates)
    {
        exo_head.backward(frames, trace, d_z, &mut d_exo, None);
    }
    Ok((loss, exo_embeddings, d_ego, d_exo))
}
