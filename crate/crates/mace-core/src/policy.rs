//! Stochastic policy over candidate features, the relaxed REINFORCE
//! objective, greedy counterfactual construction, batch sampling, and the
//! exhaustive oracle used by the equivalence tests.
//!
//! The policy is a product of independent Bernoulli column selectors and a
//! per-column softmax over candidate values. Selection probabilities are
//! parameterized through a sigmoid so they stay in (0,1) without projection;
//! the sparsity and entropy regularizers are evaluated on the probabilities
//! and chained through the sigmoid.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MaceError, Result};
use crate::model::{target_score, Classifier, TargetSpec};
use crate::rank::{CfExample, Provenance};
use crate::select::CandidateFeatures;
use crate::tabular::{EncoderState, Instance, Schema};

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Unconstrained policy parameters: one selection logit per candidate column
/// and one value-logit row per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub p_logits: Vec<f64>,
    pub q_logits: Vec<Vec<f64>>,
}

impl PolicyParams {
    /// p = 0.5 everywhere, uniform value distributions.
    pub fn uniform(value_counts: &[usize]) -> Self {
        PolicyParams {
            p_logits: vec![0.0; value_counts.len()],
            q_logits: value_counts.iter().map(|&m| vec![0.0; m]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.p_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_logits.is_empty()
    }

    /// Bernoulli selection probabilities, sigmoid of the logits.
    pub fn selection_probs(&self) -> Vec<f64> {
        self.p_logits.iter().map(|&l| sigmoid(l)).collect()
    }

    /// Softmax value distribution of one column.
    pub fn value_probs(&self, c: usize) -> Vec<f64> {
        softmax(&self.q_logits[c])
    }
}

/// One sampled action: which columns to change and which value per changed
/// column. `choices[c]` is `None` exactly where `mask[c]` is false.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub mask: Vec<bool>,
    pub choices: Vec<Option<usize>>,
}

impl Action {
    pub fn empty(s: usize) -> Self {
        Action { mask: vec![false; s], choices: vec![None; s] }
    }

    pub fn selected(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mask
            .iter()
            .zip(&self.choices)
            .enumerate()
            .filter(|(_, (&m, _))| m)
            .map(|(c, (_, v))| (c, v.expect("choice defined where mask is set")))
    }
}

/// Form of the second regularizer. `Printed` is the formula as published
/// (`sum p log p`); `FullEntropy` uses the complete Bernoulli negative
/// entropy including the `(1-p) log(1-p)` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyForm {
    #[default]
    Printed,
    FullEntropy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RlHyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Sparsity cap: max number of columns the greedy construction changes.
    pub w: usize,
    /// Number of actions sampled after training.
    pub b_samples: usize,
    pub entropy_form: EntropyForm,
    pub seed: u64,
}

impl Default for RlHyperparams {
    fn default() -> Self {
        RlHyperparams {
            learning_rate: 0.1,
            batch_size: 40,
            epochs: 15,
            lambda1: 2.0,
            lambda2: 2.0,
            w: 8,
            b_samples: 80,
            entropy_form: EntropyForm::Printed,
            seed: 0,
        }
    }
}

/// Substitute the action's chosen candidate values into the query.
pub fn apply_action(x: &Instance, action: &Action, candidates: &CandidateFeatures) -> Instance {
    let mut out = x.clone();
    for (c, v) in action.selected() {
        let col = &candidates.columns[c];
        out.values[col.column] = col.values[v].0.to_value();
    }
    out
}

/// Log probability of an action under the policy:
/// `sum_c [mu_c log p_c + (1-mu_c) log(1-p_c)] + sum_{selected} log Q_c(nu_c)`.
pub fn policy_log_prob(params: &PolicyParams, action: &Action) -> f64 {
    let probs = params.selection_probs();
    let mut lp = 0.0;
    for (c, &p) in probs.iter().enumerate() {
        lp += if action.mask[c] { p.ln() } else { (1.0 - p).ln() };
        if action.mask[c] {
            let q = params.value_probs(c);
            lp += q[action.choices[c].unwrap()].ln();
        }
    }
    lp
}

/// Analytic gradient of [`policy_log_prob`] w.r.t. the logits:
/// `mu_c - p_c` for the selection logits and `onehot(nu) - softmax(q_c)` for
/// the value logits of selected columns.
pub fn grad_log_prob(params: &PolicyParams, action: &Action) -> (Vec<f64>, Vec<Vec<f64>>) {
    let probs = params.selection_probs();
    let gp: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(c, &p)| if action.mask[c] { 1.0 - p } else { -p })
        .collect();
    let gq: Vec<Vec<f64>> = (0..params.len())
        .map(|c| {
            if action.mask[c] {
                let q = params.value_probs(c);
                let chosen = action.choices[c].unwrap();
                q.iter()
                    .enumerate()
                    .map(|(i, &qi)| if i == chosen { 1.0 - qi } else { -qi })
                    .collect()
            } else {
                vec![0.0; params.q_logits[c].len()]
            }
        })
        .collect();
    (gp, gq)
}

/// Draw one action: independent Bernoulli per column, softmax value choice
/// where the column is selected.
pub fn sample_action(params: &PolicyParams, rng: &mut ChaCha8Rng) -> Action {
    let probs = params.selection_probs();
    let mut mask = Vec::with_capacity(params.len());
    let mut choices = Vec::with_capacity(params.len());
    for (c, &p) in probs.iter().enumerate() {
        let selected = rng.gen::<f64>() < p;
        mask.push(selected);
        if selected {
            let q = params.value_probs(c);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = q.len() - 1;
            for (i, &qi) in q.iter().enumerate() {
                acc += qi;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            choices.push(Some(pick));
        } else {
            choices.push(None);
        }
    }
    Action { mask, choices }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
    lr: f64,
}

impl Adam {
    fn new(dim: usize, lr: f64) -> Self {
        Adam { m: vec![0.0; dim], v: vec![0.0; dim], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn flatten(gp: &[f64], gq: &[Vec<f64>]) -> Vec<f64> {
    let mut out = gp.to_vec();
    for row in gq {
        out.extend_from_slice(row);
    }
    out
}

/// Minimize the relaxed objective (negative expected reward plus the l1 and
/// entropy-shaped regularizers on the selection probabilities) by REINFORCE
/// with a batch-median baseline and Adam updates.
///
/// `reward` scores one action; rewards are memoized per distinct action, so
/// repeated samples cost one classifier call.
pub fn reinforce_train_generic(
    value_counts: &[usize],
    mut reward: impl FnMut(&Action) -> Result<f64>,
    hyper: &RlHyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<PolicyParams> {
    let s = value_counts.len();
    if s == 0 {
        return Err(MaceError::Config("no candidate features to optimize".into()));
    }
    let mut params = PolicyParams::uniform(value_counts);
    let dim = s + value_counts.iter().sum::<usize>();
    let mut adam = Adam::new(dim, hyper.learning_rate);
    let mut cache: HashMap<Action, f64> = HashMap::new();

    for _ in 0..hyper.epochs {
        let actions: Vec<Action> =
            (0..hyper.batch_size).map(|_| sample_action(&params, rng)).collect();
        let mut rewards = Vec::with_capacity(actions.len());
        for a in &actions {
            let r = match cache.get(a) {
                Some(&r) => r,
                None => {
                    let r = reward(a)?;
                    cache.insert(a.clone(), r);
                    r
                }
            };
            rewards.push(r);
        }
        let baseline = median(&mut rewards.clone());

        let mut grad = vec![0.0; dim];
        for (a, &r) in actions.iter().zip(&rewards) {
            let (gp, gq) = grad_log_prob(&params, a);
            let flat = flatten(&gp, &gq);
            let advantage = r - baseline;
            // gradient of the -E[r] term
            for (g, f) in grad.iter_mut().zip(&flat) {
                *g -= advantage * f / hyper.batch_size as f64;
            }
        }
        // regularizers, chained through the sigmoid: d p / d logit = p(1-p)
        let probs = params.selection_probs();
        for (c, &p) in probs.iter().enumerate() {
            let dreg_dp = match hyper.entropy_form {
                EntropyForm::Printed => hyper.lambda1 + hyper.lambda2 * (p.ln() + 1.0),
                EntropyForm::FullEntropy => {
                    hyper.lambda1 + hyper.lambda2 * (p.ln() - (1.0 - p).ln())
                }
            };
            grad[c] += dreg_dp * p * (1.0 - p);
        }

        let mut flat_params = flatten(&params.p_logits, &params.q_logits);
        adam.step(&mut flat_params, &grad);
        let mut iter = flat_params.into_iter();
        for pl in params.p_logits.iter_mut() {
            *pl = iter.next().unwrap();
        }
        for row in params.q_logits.iter_mut() {
            for ql in row.iter_mut() {
                *ql = iter.next().unwrap();
            }
        }
    }
    Ok(params)
}

/// Train a policy for one tabular query: the reward of an action is the
/// target-class probability of the modified instance.
pub fn reinforce_train(
    x: &Instance,
    target: TargetSpec,
    model: &dyn Classifier,
    candidates: &CandidateFeatures,
    hyper: &RlHyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<PolicyParams> {
    reinforce_train_generic(
        &candidates.value_counts(),
        |a| target_score(model, target, &apply_action(x, a, candidates)),
        hyper,
        rng,
    )
}

/// One entry of the trained policy's top feature list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopFeature {
    /// Schema column index.
    pub column: usize,
    /// Index into the candidate value list of that column.
    pub value_index: usize,
    pub selection_prob: f64,
    pub value_prob: f64,
}

/// Greedy construction of the baseline example: take the top-w columns by
/// selection probability, each with its argmax value, apply them in
/// descending order and stop as soon as the target score crosses 0.5.
pub fn greedy_construct(
    params: &PolicyParams,
    x: &Instance,
    target: TargetSpec,
    model: &dyn Classifier,
    candidates: &CandidateFeatures,
    w: usize,
    schema: &Schema,
    enc: &EncoderState,
) -> Result<(CfExample, Vec<TopFeature>)> {
    let probs = params.selection_probs();
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    order.truncate(w);

    let top_features: Vec<TopFeature> = order
        .iter()
        .map(|&c| {
            let q = params.value_probs(c);
            let vi = crate::model::argmax(&q);
            TopFeature {
                column: candidates.columns[c].column,
                value_index: vi,
                selection_prob: probs[c],
                value_prob: q[vi],
            }
        })
        .collect();

    let mut current = x.clone();
    let mut valid = target_score(model, target, &current)? > 0.5;
    for (&c, feat) in order.iter().zip(&top_features) {
        if valid {
            break;
        }
        let col = &candidates.columns[c];
        current.values[col.column] = col.values[feat.value_index].0.to_value();
        valid = target_score(model, target, &current)? > 0.5;
    }

    let example = CfExample::build(x, current, valid, Provenance::RlGreedy, schema, enc);
    Ok((example, top_features))
}

/// Sample `b` actions from the trained policy, keep the valid constructions,
/// union with the greedy baseline example and deduplicate by change set.
#[allow(clippy::too_many_arguments)]
pub fn sample_valid_batch(
    params: &PolicyParams,
    x: &Instance,
    target: TargetSpec,
    model: &dyn Classifier,
    candidates: &CandidateFeatures,
    baseline: &CfExample,
    b: usize,
    w_cap: Option<usize>,
    schema: &Schema,
    enc: &EncoderState,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CfExample>> {
    let probs = params.selection_probs();
    let mut out = vec![baseline.clone()];
    let mut seen: Vec<Vec<(usize, String)>> = vec![baseline.fingerprint()];
    let mut score_cache: HashMap<Action, f64> = HashMap::new();

    for _ in 0..b {
        let mut action = sample_action(params, rng);
        if let Some(cap) = w_cap {
            truncate_to_top(&mut action, &probs, cap);
        }
        let score = match score_cache.get(&action) {
            Some(&s) => s,
            None => {
                let s = target_score(model, target, &apply_action(x, &action, candidates))?;
                score_cache.insert(action.clone(), s);
                s
            }
        };
        if score <= 0.5 {
            continue;
        }
        let instance = apply_action(x, &action, candidates);
        let example = CfExample::build(x, instance, true, Provenance::RlSample, schema, enc);
        let fp = example.fingerprint();
        if !seen.contains(&fp) {
            seen.push(fp);
            out.push(example);
        }
    }
    Ok(out)
}

/// Keep only the `cap` selected coordinates with the highest selection
/// probabilities.
fn truncate_to_top(action: &mut Action, probs: &[f64], cap: usize) {
    let mut selected: Vec<usize> =
        (0..action.mask.len()).filter(|&c| action.mask[c]).collect();
    if selected.len() <= cap {
        return;
    }
    selected.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    for &c in &selected[cap..] {
        action.mask[c] = false;
        action.choices[c] = None;
    }
}

/// Number of assignments the brute-force oracle would enumerate.
fn enumeration_size(value_counts: &[usize], w: usize) -> u64 {
    // sum over subsets of size <= w of the product of value counts
    fn rec(value_counts: &[usize], start: usize, left: usize) -> u64 {
        if left == 0 {
            return 1;
        }
        let mut total = 1; // the empty completion
        for c in start..value_counts.len() {
            total += value_counts[c] as u64 * rec(value_counts, c + 1, left - 1);
        }
        total
    }
    rec(value_counts, 0, w)
}

pub const ORACLE_LIMIT: u64 = 1_000_000;

/// Exhaustive oracle: enumerate every column subset of size at most `w` and
/// every value assignment from the candidate lists, return the instance that
/// maximizes the target score. Intended for small instances only.
pub fn brute_force_optimal(
    x: &Instance,
    target: TargetSpec,
    model: &dyn Classifier,
    candidates: &CandidateFeatures,
    w: usize,
) -> Result<(Instance, f64)> {
    let counts = candidates.value_counts();
    let size = enumeration_size(&counts, w.min(counts.len()));
    if size > ORACLE_LIMIT {
        return Err(MaceError::EnumerationBound { actual: size, limit: ORACLE_LIMIT });
    }

    let mut best = x.clone();
    let mut best_score = target_score(model, target, x)?;

    // depth-first over (next column to consider, changes applied so far)
    fn rec(
        x: &Instance,
        target: TargetSpec,
        model: &dyn Classifier,
        candidates: &CandidateFeatures,
        start: usize,
        left: usize,
        current: &mut Instance,
        best: &mut Instance,
        best_score: &mut f64,
    ) -> Result<()> {
        if left == 0 {
            return Ok(());
        }
        for c in start..candidates.columns.len() {
            let col = &candidates.columns[c];
            let saved = current.values[col.column];
            for (v, _) in &col.values {
                current.values[col.column] = v.to_value();
                let score = target_score(model, target, current)?;
                if score > *best_score {
                    *best_score = score;
                    *best = current.clone();
                }
                rec(x, target, model, candidates, c + 1, left - 1, current, best, best_score)?;
            }
            current.values[col.column] = saved;
        }
        Ok(())
    }

    let mut current = x.clone();
    rec(
        x,
        target,
        model,
        candidates,
        0,
        w.min(counts.len()),
        &mut current,
        &mut best,
        &mut best_score,
    )?;
    Ok((best, best_score))
}

/// Enumerate every deterministic policy with at most `w` selected columns
/// (binary selection vector, one-hot value vectors), construct each policy's
/// example through the action machinery and return the best target score.
/// This is the second route of the optimality-equivalence check.
pub fn best_deterministic_policy(
    x: &Instance,
    target: TargetSpec,
    model: &dyn Classifier,
    candidates: &CandidateFeatures,
    w: usize,
) -> Result<(Action, f64)> {
    let counts = candidates.value_counts();
    let s = counts.len();
    let mut best_action = Action::empty(s);
    let mut best_score =
        target_score(model, target, &apply_action(x, &best_action, candidates))?;

    fn rec(
        x: &Instance,
        target: TargetSpec,
        model: &dyn Classifier,
        candidates: &CandidateFeatures,
        counts: &[usize],
        start: usize,
        left: usize,
        action: &mut Action,
        best: &mut (Action, f64),
    ) -> Result<()> {
        if left == 0 {
            return Ok(());
        }
        for c in start..counts.len() {
            action.mask[c] = true;
            for v in 0..counts[c] {
                action.choices[c] = Some(v);
                let score =
                    target_score(model, target, &apply_action(x, action, candidates))?;
                if score > best.1 {
                    *best = (action.clone(), score);
                }
                rec(x, target, model, candidates, counts, c + 1, left - 1, action, best)?;
            }
            action.mask[c] = false;
            action.choices[c] = None;
        }
        Ok(())
    }

    let mut best = (best_action.clone(), best_score);
    let mut action = Action::empty(s);
    rec(x, target, model, candidates, &counts, 0, w.min(s), &mut action, &mut best)?;
    (best_action, best_score) = best;
    Ok((best_action, best_score))
}
