//! Gradientless descent: continuous feature fine-tuning via a binary sweep
//! of Gaussian search radii, plus the GLD-based counterfactual feature
//! optimizer variant.
//!
//! Fine-tuning works in normalized [0,1] space on the continuous columns the
//! previous stage modified; proposals outside the box are clipped. The
//! initial example always participates in the final argmin, so the objective
//! never gets worse.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{target_score, Classifier, TargetSpec};
use crate::rank::{changed_columns, proximity, values_equal, CfExample, Provenance};
use crate::select::CandidateFeatures;
use crate::tabular::{
    denormalize_continuous, normalize_continuous, ColumnKind, EncoderState, Instance, Schema,
    Value,
};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct GldParams {
    /// Maximum search radius R.
    pub max_radius: f64,
    /// Minimum search radius r.
    pub min_radius: f64,
    /// Iterations (epochs) T.
    pub iterations: usize,
}

impl Default for GldParams {
    fn default() -> Self {
        GldParams { max_radius: 0.25, min_radius: 0.0005, iterations: 20 }
    }
}

impl GldParams {
    /// Number of radius halvings per epoch: `K = ceil(log2(R / r))`.
    pub fn radius_steps(&self) -> usize {
        ((self.max_radius / self.min_radius).log2().ceil() as usize).max(1)
    }

    /// The radius sequence `R/2, R/4, ..., R/2^K`.
    pub fn radii(&self) -> Vec<f64> {
        (1..=self.radius_steps())
            .map(|k| self.max_radius * 2f64.powi(-(k as i32)))
            .collect()
    }
}

/// Mean absolute normalized distance to the query over the tuned columns.
fn tune_objective(z: &Instance, x_norm: &Instance, columns: &[usize]) -> f64 {
    columns
        .iter()
        .map(|&c| (z.values[c].as_con() - x_norm.values[c].as_con()).abs())
        .sum::<f64>()
        / columns.len() as f64
}

/// Fine-tune the modified continuous columns of a valid counterfactual so it
/// moves as close to the query as the classifier allows. Returns the tuned
/// example and a flag that is true when there was nothing to tune.
#[allow(clippy::too_many_arguments)]
pub fn fine_tune(
    x: &Instance,
    target: TargetSpec,
    model: &dyn Classifier,
    cf: &CfExample,
    schema: &Schema,
    enc: &EncoderState,
    params: &GldParams,
    rng: &mut ChaCha8Rng,
) -> Result<(CfExample, bool)> {
    let tuned_columns: Vec<usize> = cf
        .changed_columns
        .iter()
        .copied()
        .filter(|&c| schema.column(c).kind == ColumnKind::Continuous)
        .collect();
    if tuned_columns.is_empty() || !cf.valid {
        return Ok((cf.clone(), true));
    }

    let x_norm = normalize_continuous(x, schema, enc);
    let mut z = normalize_continuous(&cf.instance, schema, enc);
    let mut best = z.clone();
    let mut best_objective = tune_objective(&z, &x_norm, &tuned_columns);

    let radii = params.radii();
    for _ in 0..params.iterations {
        let mut epoch_best: Option<(Instance, f64)> = None;
        for &radius in &radii {
            let mut proposal = z.clone();
            for &c in &tuned_columns {
                let step: f64 = rng.sample(StandardNormal);
                let v = (proposal.values[c].as_con() + step * radius).clamp(0.0, 1.0);
                proposal.values[c] = Value::Con(v);
            }
            let raw = denormalize_continuous(&proposal, schema, enc);
            if target_score(model, target, &raw)? <= 0.5 {
                continue;
            }
            let obj = tune_objective(&proposal, &x_norm, &tuned_columns);
            if epoch_best.as_ref().map_or(true, |(_, o)| obj < *o) {
                epoch_best = Some((proposal, obj));
            }
        }
        if let Some((proposal, obj)) = epoch_best {
            if obj < best_objective {
                best = proposal.clone();
                best_objective = obj;
            }
            // the current point competes too, so z never regresses
            if obj < tune_objective(&z, &x_norm, &tuned_columns) {
                z = proposal;
            }
        }
    }

    let raw = denormalize_continuous(&best, schema, enc);
    let example = CfExample::build(x, raw, true, cf.provenance, schema, enc);
    Ok((example, false))
}

/// Remark-style objective: changed categorical count plus median-scaled
/// continuous l1 distance, normalized by the column count.
fn remark_objective(x: &Instance, cf: &Instance, schema: &Schema, enc: &EncoderState) -> f64 {
    -proximity(x, cf, schema, enc) / schema.len() as f64
}

/// GLD-based counterfactual feature optimization: seed from the nearest
/// target-class neighbor restricted to the candidate columns, then sweep
/// radii proposing categorical reverts (probability proportional to the
/// radius) and Gaussian continuous steps, keeping feasible proposals. Returns
/// the non-dominated feasible set by (sparsity, proximity).
#[allow(clippy::too_many_arguments)]
pub fn gld_optimize(
    x: &Instance,
    target: TargetSpec,
    model: &dyn Classifier,
    candidates: &CandidateFeatures,
    neighbor: &Instance,
    schema: &Schema,
    enc: &EncoderState,
    params: &GldParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CfExample>> {
    // seed: the neighbor's values on candidate columns where it differs
    let mut seed = x.clone();
    for col in &candidates.columns {
        let c = col.column;
        if !values_equal(x.values[c], neighbor.values[c]) {
            seed.values[c] = neighbor.values[c];
        }
    }
    if target_score(model, target, &seed)? <= 0.5 {
        return Ok(Vec::new());
    }

    let x_norm = normalize_continuous(x, schema, enc);
    let mut current = normalize_continuous(&seed, schema, enc);
    let mut feasible: Vec<Instance> = vec![seed];
    let radii = params.radii();

    for _ in 0..params.iterations {
        let mut epoch_best: Option<(Instance, f64)> = None;
        let current_raw = denormalize_continuous(&current, schema, enc);
        let current_obj = remark_objective(x, &current_raw, schema, enc);
        for &radius in &radii {
            let mut proposal = current.clone();
            let revert_prob = radius / params.max_radius;
            for c in changed_columns(&x_norm, &current) {
                match schema.column(c).kind {
                    ColumnKind::Categorical => {
                        if rng.gen::<f64>() < revert_prob {
                            proposal.values[c] = x_norm.values[c];
                        }
                    }
                    ColumnKind::Continuous => {
                        let step: f64 = rng.sample(StandardNormal);
                        let v = (proposal.values[c].as_con() + step * radius).clamp(0.0, 1.0);
                        proposal.values[c] = Value::Con(v);
                    }
                }
            }
            let raw = denormalize_continuous(&proposal, schema, enc);
            if target_score(model, target, &raw)? <= 0.5 {
                continue;
            }
            let obj = remark_objective(x, &raw, schema, enc);
            feasible.push(raw);
            if epoch_best.as_ref().map_or(obj < current_obj, |(_, o)| obj < *o) {
                epoch_best = Some((proposal, obj));
            }
        }
        if let Some((proposal, _)) = epoch_best {
            current = proposal;
        }
    }

    // deduplicate by change set, then keep the non-dominated front
    let mut examples: Vec<CfExample> = Vec::new();
    for inst in feasible {
        let ex = CfExample::build(x, inst, true, Provenance::Gld, schema, enc);
        if !examples.iter().any(|e| e.fingerprint() == ex.fingerprint()) {
            examples.push(ex);
        }
    }
    let front: Vec<CfExample> = examples
        .iter()
        .filter(|a| {
            !examples.iter().any(|b| {
                (b.sparsity < a.sparsity && b.proximity >= a.proximity)
                    || (b.sparsity <= a.sparsity && b.proximity > a.proximity)
            })
        })
        .cloned()
        .collect();
    Ok(front)
}
