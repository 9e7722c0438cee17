//! Progressive-masking attribution: find the input units (frames) whose
//! removal most damages a classifier's prediction, by gradient ascent on a
//! multiplicative mask against the prediction loss.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::attack::classifier::{softmax, ClassifierHead};
use crate::error::{Error, Result};

fn default_step_size() -> f64 {
    0.1
}
fn default_steps_per_round() -> usize {
    20
}

/// Knobs of one masking run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskOptions {
    /// Maximum masking rounds.
    pub rounds: usize,
    /// Units permanently zeroed per round.
    pub units_per_round: usize,
    /// Stop once the prediction loss reaches this value.
    pub threshold: f64,
    /// Gradient-ascent step size on the mask.
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    /// Ascent steps per round before hard-masking.
    #[serde(default = "default_steps_per_round")]
    pub steps_per_round: usize,
}

impl MaskOptions {
    pub fn new(rounds: usize, units_per_round: usize, threshold: f64) -> Self {
        MaskOptions {
            rounds,
            units_per_round,
            threshold,
            step_size: default_step_size(),
            steps_per_round: default_steps_per_round(),
        }
    }

    fn validate(&self, n_units: usize) -> Result<()> {
        if self.units_per_round == 0 || self.units_per_round > n_units {
            return Err(Error::InvalidConfig(format!(
                "units_per_round must be in 1..={n_units}, got {}",
                self.units_per_round
            )));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.steps_per_round == 0 {
            return Err(Error::InvalidConfig("steps_per_round must be positive".into()));
        }
        if !self.threshold.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "threshold must be finite, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Record of one masking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskTrace {
    /// Unit indices in the order they were permanently zeroed.
    pub units: Vec<usize>,
    /// Prediction loss before any masking, then after each executed round.
    pub losses: Vec<f64>,
    /// Rounds executed before stopping (equals the round budget when the
    /// threshold was never reached).
    pub stop_round: usize,
    pub threshold: f64,
}

/// Cross-entropy of `label` under the head on mask-scaled units, plus the
/// loss gradient with respect to the mask.
pub fn mask_gradient(
    head: &ClassifierHead,
    units: &Array2<f64>,
    label: usize,
    mask: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n_units = units.nrows();
    if mask.len() != n_units {
        return Err(Error::DimensionMismatch(format!(
            "{} mask entries for {n_units} units",
            mask.len()
        )));
    }
    if label >= head.classes().len() {
        return Err(Error::InvalidInput(format!(
            "label index {label} out of range for attribute {}",
            head.attribute()
        )));
    }

    let mut masked = units.clone();
    for (t, mut row) in masked.rows_mut().into_iter().enumerate() {
        row *= mask[t];
    }
    let (logits, trace) = head.core().forward(&masked)?;
    let probs = softmax(&logits);
    let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
    if !loss.is_finite() {
        return Err(Error::InvalidInput("prediction loss is not finite".into()));
    }

    let mut d_logits = Array1::from(probs);
    d_logits[label] -= 1.0;
    let mut param_sink = vec![0.0; head.core().param_count()];
    let mut d_masked: Array2<f64> = Array2::zeros(masked.dim());
    head.core().backward(&masked, &trace, &d_logits, &mut param_sink, Some(&mut d_masked));

    // d(masked[t]) / d(mask[t]) = units[t], so chain by a row dot product.
    let gradient: Vec<f64> = (0..n_units)
        .map(|t| d_masked.row(t).dot(&units.row(t)))
        .collect();
    Ok((loss, gradient))
}

/// Indices of the `k` largest displacements among still-active units,
/// largest first; ties break toward the lower unit index.
fn top_displaced(displacement: &[f64], active: &[bool], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..displacement.len()).filter(|&t| active[t]).collect();
    order.sort_by(|&a, &b| {
        displacement[b].total_cmp(&displacement[a]).then_with(|| a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Run progressive masking and also return the continuous mask at the end of
/// each round's ascent (one snapshot per executed round).
pub fn progressive_mask_with_snapshots(
    head: &ClassifierHead,
    units: &Array2<f64>,
    label: usize,
    options: &MaskOptions,
) -> Result<(MaskTrace, Vec<Vec<f64>>)> {
    let n_units = units.nrows();
    if n_units == 0 {
        return Err(Error::InvalidInput("no units to mask".into()));
    }
    options.validate(n_units)?;

    let mut active = vec![true; n_units];
    let mut masked_order = Vec::new();
    let mut snapshots = Vec::new();

    let hard_mask =
        |active: &[bool]| -> Vec<f64> { active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect() };

    let (initial_loss, _) = mask_gradient(head, units, label, &hard_mask(&active))?;
    let mut losses = vec![initial_loss];
    let mut stop_round = 0;

    if initial_loss < options.threshold {
        for round in 0..options.rounds {
            // Fresh continuous mask each round: 1 on active units, 0 on
            // everything already removed.
            let mut mask = hard_mask(&active);
            for _ in 0..options.steps_per_round {
                let (_, gradient) = mask_gradient(head, units, label, &mask)?;
                for t in 0..n_units {
                    if active[t] {
                        mask[t] = (mask[t] + options.step_size * gradient[t]).clamp(0.0, 1.0);
                    }
                }
            }
            snapshots.push(mask.clone());

            // Importance = how far ascent pulled the unit toward zero.
            let displacement: Vec<f64> = mask.iter().map(|&m| 1.0 - m).collect();
            let remaining = active.iter().filter(|&&a| a).count();
            let k = options.units_per_round.min(remaining);
            for t in top_displaced(&displacement, &active, k) {
                active[t] = false;
                masked_order.push(t);
            }

            let (loss, _) = mask_gradient(head, units, label, &hard_mask(&active))?;
            losses.push(loss);
            stop_round = round + 1;
            if loss >= options.threshold {
                break;
            }
            if active.iter().all(|&a| !a) {
                break;
            }
        }
    }

    Ok((
        MaskTrace { units: masked_order, losses, stop_round, threshold: options.threshold },
        snapshots,
    ))
}

/// Run progressive masking against `label` and return the trace.
pub fn progressive_mask(
    head: &ClassifierHead,
    units: &Array2<f64>,
    label: usize,
    options: &MaskOptions,
) -> Result<MaskTrace> {
    Ok(progressive_mask_with_snapshots(head, units, label, options)?.0)
}

/// Write a trace as pretty JSON.
pub fn write_mask_trace(path: &Path, trace: &MaskTrace) -> Result<()> {
    let mut text = serde_json::to_string_pretty(trace)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Per-round mask snapshots as `round,unit,mask` CSV for heat-map rendering.
pub fn write_mask_snapshots_csv(path: &Path, snapshots: &[Vec<f64>]) -> Result<()> {
    let mut out = String::from("round,unit,mask\n");
    for (round, mask) in snapshots.iter().enumerate() {
        for (unit, value) in mask.iter().enumerate() {
            out.push_str(&format!("{round},{unit},{value}\n"));
        }
    }
    fs::write(path, out)?;
    Ok(())
}
