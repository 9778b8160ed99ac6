//! The black-box classifier contract and the in-repo demo classifiers.
//!
//! Everything downstream of this module only ever sees a [`Classifier`];
//! swapping the logistic model, the boosted stumps or a remote scorer changes
//! no pipeline code.

use serde::{Deserialize, Serialize};

use crate::error::{MaceError, Result};
use crate::tabular::{ColumnKind, Dataset, Instance, Schema, Value};

/// Black-box scoring contract: a deterministic map from an instance to a
/// probability vector.
pub trait Classifier: Send + Sync {
    fn class_count(&self) -> usize;

    /// Probability vector over classes; entries non-negative, sum 1 within 1e-6.
    fn predict_proba(&self, x: &Instance) -> Result<Vec<f64>>;

    fn predict(&self, x: &Instance) -> Result<usize> {
        let probs = self.predict_proba(x)?;
        Ok(argmax(&probs))
    }
}

pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Source and target class of one explanation query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub source_class: usize,
    pub target_class: usize,
}

impl TargetSpec {
    pub fn new(source_class: usize, target_class: usize) -> Result<Self> {
        if source_class == target_class {
            return Err(MaceError::Config("source and target class must differ".into()));
        }
        Ok(TargetSpec { source_class, target_class })
    }

    /// Binary flip: target is the other class.
    pub fn flip(source_class: usize) -> Self {
        TargetSpec { source_class, target_class: 1 - source_class }
    }
}

/// Probability of the target class for one instance.
pub fn target_score(model: &dyn Classifier, target: TargetSpec, x: &Instance) -> Result<f64> {
    let probs = model.predict_proba(x)?;
    Ok(probs[target.target_class])
}

/// Check a probability vector at the trust boundary: correct length,
/// non-negative entries, sum 1 within 1e-6. Never repairs.
pub fn validate_probs(probs: &[f64], class_count: usize) -> Result<()> {
    if probs.len() != class_count {
        return Err(MaceError::Protocol(format!(
            "expected {class_count} probabilities, got {}",
            probs.len()
        )));
    }
    if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(MaceError::Protocol("negative or non-finite probability".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(MaceError::Protocol(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Dense encoding shared by the demo models: one-hot categorical blocks plus
/// min-max normalized continuous values.
fn model_features(x: &Instance, schema: &Schema, stats: &[FeatureStat]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut s = 0;
    for (c, col) in schema.columns().iter().enumerate() {
        match (&x.values[c], col.kind) {
            (Value::Cat(id), ColumnKind::Categorical) => {
                for i in 0..col.categories.len() {
                    out.push(if i == *id { 1.0 } else { 0.0 });
                }
                s += col.categories.len();
            }
            (Value::Con(v), ColumnKind::Continuous) => {
                let st = &stats[s];
                let norm = if st.max > st.min { (v - st.min) / (st.max - st.min) } else { 0.0 };
                out.push(norm);
                s += 1;
            }
            _ => panic!("instance does not conform to schema"),
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureStat {
    min: f64,
    max: f64,
}

fn feature_stats(dataset: &Dataset) -> Vec<FeatureStat> {
    let schema = &dataset.schema;
    let mut stats = Vec::new();
    for (c, col) in schema.columns().iter().enumerate() {
        match col.kind {
            ColumnKind::Categorical => {
                for _ in 0..col.categories.len() {
                    stats.push(FeatureStat { min: 0.0, max: 1.0 });
                }
            }
            ColumnKind::Continuous => {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for r in &dataset.rows {
                    let v = r.values[c].as_con();
                    min = min.min(v);
                    max = max.max(v);
                }
                stats.push(FeatureStat { min, max });
            }
        }
    }
    stats
}

fn require_binary(dataset: &Dataset) -> Result<()> {
    if dataset.labels.iter().any(|&l| l > 1) {
        return Err(MaceError::Unsupported("demo models require binary labels".into()));
    }
    Ok(())
}

/// Gradient-descent-trained logistic regression over one-hot + normalized
/// continuous features. The differentiable demo model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    schema: Schema,
    stats: Vec<FeatureStat>,
    weights: Vec<f64>,
    bias: f64,
}

impl LogisticModel {
    pub fn train(dataset: &Dataset, epochs: usize, learning_rate: f64) -> Result<Self> {
        require_binary(dataset)?;
        let schema = dataset.schema.clone();
        let stats = feature_stats(dataset);
        let features: Vec<Vec<f64>> = dataset
            .rows
            .iter()
            .map(|r| model_features(r, &schema, &stats))
            .collect();
        let dim = features[0].len();
        let n = features.len() as f64;
        let mut weights = vec![0.0; dim];
        let mut bias = 0.0;
        for _ in 0..epochs {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for (f, &y) in features.iter().zip(&dataset.labels) {
                let z = bias + f.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
                let err = sigmoid(z) - y as f64;
                for (g, x) in gw.iter_mut().zip(f) {
                    *g += err * x;
                }
                gb += err;
            }
            for (w, g) in weights.iter_mut().zip(&gw) {
                *w -= learning_rate * g / n;
            }
            bias -= learning_rate * gb / n;
        }
        Ok(LogisticModel { schema, stats, weights, bias })
    }
}

impl Classifier for LogisticModel {
    fn class_count(&self) -> usize {
        2
    }

    fn predict_proba(&self, x: &Instance) -> Result<Vec<f64>> {
        let f = model_features(x, &self.schema, &self.stats);
        let z = self.bias + f.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
        let p = sigmoid(z);
        Ok(vec![1.0 - p, p])
    }
}

/// One depth-1 split on a dense feature coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stump {
    feature: usize,
    threshold: f64,
    left_value: f64,
    right_value: f64,
}

impl Stump {
    fn eval(&self, f: &[f64]) -> f64 {
        if f[self.feature] <= self.threshold {
            self.left_value
        } else {
            self.right_value
        }
    }
}

/// Additive model of decision stumps fit by gradient boosting on logistic
/// loss. Piecewise constant, hence gradient-free: the non-differentiable
/// demo model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostedStumps {
    schema: Schema,
    stats: Vec<FeatureStat>,
    base_score: f64,
    stumps: Vec<Stump>,
    learning_rate: f64,
}

impl BoostedStumps {
    pub fn train(dataset: &Dataset, rounds: usize, learning_rate: f64) -> Result<Self> {
        require_binary(dataset)?;
        let schema = dataset.schema.clone();
        let stats = feature_stats(dataset);
        let features: Vec<Vec<f64>> = dataset
            .rows
            .iter()
            .map(|r| model_features(r, &schema, &stats))
            .collect();
        let dim = features[0].len();
        let n = features.len();
        let pos = dataset.labels.iter().filter(|&&l| l == 1).count() as f64;
        let prior = (pos / n as f64).clamp(1e-6, 1.0 - 1e-6);
        let base_score = (prior / (1.0 - prior)).ln();

        // candidate thresholds per feature: midpoints of sorted unique values
        let mut thresholds: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for j in 0..dim {
            let mut vals: Vec<f64> = features.iter().map(|f| f[j]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            let mids = vals.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
            thresholds.push(mids);
        }

        let mut margins = vec![base_score; n];
        let mut stumps = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            // negative gradient of logistic loss and hessian per row
            let grads: Vec<f64> = margins
                .iter()
                .zip(&dataset.labels)
                .map(|(&m, &y)| y as f64 - sigmoid(m))
                .collect();
            let hess: Vec<f64> = margins
                .iter()
                .map(|&m| {
                    let p = sigmoid(m);
                    (p * (1.0 - p)).max(1e-12)
                })
                .collect();

            let mut best: Option<(f64, Stump)> = None;
            let total_g: f64 = grads.iter().sum();
            let total_h: f64 = hess.iter().sum();
            for j in 0..dim {
                for &t in &thresholds[j] {
                    let mut gl = 0.0;
                    let mut hl = 0.0;
                    for i in 0..n {
                        if features[i][j] <= t {
                            gl += grads[i];
                            hl += hess[i];
                        }
                    }
                    let gr = total_g - gl;
                    let hr = total_h - hl;
                    if hl <= 0.0 || hr <= 0.0 {
                        continue;
                    }
                    let gain = gl * gl / hl + gr * gr / hr;
                    if best.as_ref().map_or(true, |(g, _)| gain > *g) {
                        best = Some((
                            gain,
                            Stump {
                                feature: j,
                                threshold: t,
                                left_value: gl / hl,
                                right_value: gr / hr,
                            },
                        ));
                    }
                }
            }
            let Some((_, stump)) = best else { break };
            for (m, f) in margins.iter_mut().zip(&features) {
                *m += learning_rate * stump.eval(f);
            }
            stumps.push(stump);
        }
        Ok(BoostedStumps { schema, stats, base_score, stumps, learning_rate })
    }

    pub fn round_count(&self) -> usize {
        self.stumps.len()
    }
}

impl Classifier for BoostedStumps {
    fn class_count(&self) -> usize {
        2
    }

    fn predict_proba(&self, x: &Instance) -> Result<Vec<f64>> {
        let f = model_features(x, &self.schema, &self.stats);
        let margin = self.base_score
            + self.learning_rate * self.stumps.iter().map(|s| s.eval(&f)).sum::<f64>();
        let p = sigmoid(margin);
        Ok(vec![1.0 - p, p])
    }
}

/// Accuracy over a labeled dataset; used by the demo-model tests.
pub fn accuracy(model: &dyn Classifier, dataset: &Dataset) -> Result<f64> {
    let mut correct = 0;
    for (r, &y) in dataset.rows.iter().zip(&dataset.labels) {
        if model.predict(r)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.rows.len() as f64)
}

/// Fixed-output classifier, handy in tests.
pub struct ConstantModel {
    pub probs: Vec<f64>,
}

impl Classifier for ConstantModel {
    fn class_count(&self) -> usize {
        self.probs.len()
    }

    fn predict_proba(&self, _x: &Instance) -> Result<Vec<f64>> {
        Ok(self.probs.clone())
    }
}
