//! Ridge-regression reward model over (context, embedding, action) features.
//!
//! The feature map is an intercept, the raw context features, one-hot
//! indicators per embedding dimension, and optionally one-hot action
//! indicators. The intercept is not penalized. Because the embedding enters
//! only through one-hots, the fitted model is additive over embedding
//! dimensions and marginalizes exactly in O(d_e * |E_k|) per action.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{OpeError, Result};
use crate::model::{product_space, LoggedDataset};

/// Feature-map options for the reward regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Adds per-action one-hot indicators. Off by default: with many actions
    /// these re-introduce the estimation error the embedding is meant to
    /// avoid.
    #[serde(default)]
    pub action_onehot: bool,
}

/// Feature-space layout shared by fitting and prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureLayout {
    d_x: usize,
    cardinalities: Vec<usize>,
    n_actions: usize,
    action_onehot: bool,
}

impl FeatureLayout {
    fn width(&self) -> usize {
        1 + self.d_x
            + self.cardinalities.iter().sum::<usize>()
            + if self.action_onehot { self.n_actions } else { 0 }
    }

    fn emb_offset(&self, k: usize) -> usize {
        1 + self.d_x + self.cardinalities[..k].iter().sum::<usize>()
    }

    fn action_offset(&self) -> usize {
        1 + self.d_x + self.cardinalities.iter().sum::<usize>()
    }

    fn fill_row(&self, x: &[f64], action: usize, e: &[usize], row: &mut [f64]) {
        row.fill(0.0);
        row[0] = 1.0;
        row[1..1 + self.d_x].copy_from_slice(x);
        for (k, &c) in e.iter().enumerate() {
            row[self.emb_offset(k) + c] = 1.0;
        }
        if self.action_onehot {
            row[self.action_offset() + action] = 1.0;
        }
    }
}

/// Fitted linear reward model q-hat(x, a, e).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    weights: Vec<f64>,
    ridge_lambda: f64,
    feature_config: FeatureConfig,
    layout: FeatureLayout,
}

impl RewardModel {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ridge_lambda(&self) -> f64 {
        self.ridge_lambda
    }

    pub fn feature_config(&self) -> FeatureConfig {
        self.feature_config
    }

    /// Point prediction q-hat(x, a, e).
    pub fn predict_xae(&self, x: &[f64], action: usize, e: &[usize]) -> f64 {
        let l = &self.layout;
        let mut v = self.weights[0];
        for (i, &xi) in x.iter().enumerate() {
            v += self.weights[1 + i] * xi;
        }
        for (k, &c) in e.iter().enumerate() {
            v += self.weights[l.emb_offset(k) + c];
        }
        if l.action_onehot {
            v += self.weights[l.action_offset() + action];
        }
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reward model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fits the ridge least-squares model on the logged samples.
pub fn fit_reward_model(
    dataset: &LoggedDataset,
    feature_config: FeatureConfig,
    ridge_lambda: f64,
) -> Result<RewardModel> {
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(OpeError::Validation("ridge_lambda must be >= 0".into()));
    }
    let layout = FeatureLayout {
        d_x: dataset.meta.d_x,
        cardinalities: dataset.meta.cardinalities.clone(),
        n_actions: dataset.meta.n_actions,
        action_onehot: feature_config.action_onehot,
    };
    let p = layout.width();
    let mut gram = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    let mut row = vec![0.0; p];
    for s in &dataset.samples {
        layout.fill_row(&s.context, s.action, &s.embedding, &mut row);
        for i in 0..p {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            xty[i] += ri * s.reward;
            for j in i..p {
                gram[i * p + j] += ri * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[i * p + j] = gram[j * p + i];
        }
    }
    // Penalize everything except the intercept.
    for i in 1..p {
        gram[i * p + i] += ridge_lambda;
    }
    let weights = solve_cholesky(&mut gram, &xty, p)?;
    Ok(RewardModel {
        weights,
        ridge_lambda,
        feature_config,
        layout,
    })
}

/// In-place Cholesky solve of the symmetric positive-definite system.
fn solve_cholesky(a: &mut [f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(OpeError::Numerical(
                "normal equations are singular; increase ridge_lambda".into(),
            ));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    // Forward then backward substitution.
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Ok(y)
}

/// A reward model marginalized over the environment's exact embedding
/// distributions: exposes q-hat(x, a) = sum_e p(e|x,a) q-hat(x, a, e).
#[derive(Debug, Clone)]
pub struct MarginalizedModel {
    model: RewardModel,
    /// Per-action embedding contribution (plus action one-hot weight).
    action_part: Vec<f64>,
}

impl MarginalizedModel {
    pub fn model(&self) -> &RewardModel {
        &self.model
    }

    pub fn action_part(&self) -> &[f64] {
        &self.action_part
    }

    /// Context-only part of the prediction: intercept plus context weights.
    pub fn context_part(&self, x: &[f64]) -> f64 {
        let mut v = self.model.weights[0];
        for (i, &xi) in x.iter().enumerate() {
            v += self.model.weights[1 + i] * xi;
        }
        v
    }

    pub fn predict_xa(&self, x: &[f64], action: usize) -> f64 {
        self.context_part(x) + self.action_part[action]
    }

    pub fn predict_xae(&self, x: &[f64], action: usize, e: &[usize]) -> f64 {
        self.model.predict_xae(x, action, e)
    }

    /// Policy-expected prediction for one context.
    pub fn policy_value(&self, x: &[f64], policy_row: &[f64]) -> f64 {
        self.context_part(x) + crate::env::dot(policy_row, &self.action_part)
    }
}

/// Exact marginalization of the fitted model over p(e|x, a), using the
/// per-dimension additive structure of the one-hot feature map.
pub fn marginalize_model(env: &Environment, model: &RewardModel) -> Result<MarginalizedModel> {
    let l = &model.layout;
    if l.n_actions != env.n_actions() || l.cardinalities != env.config().cardinalities {
        return Err(OpeError::Shape(
            "model layout does not match the environment".into(),
        ));
    }
    let mut action_part = vec![0.0; l.n_actions];
    for (a, part) in action_part.iter_mut().enumerate() {
        let dist = env.embed_dist(a);
        let mut v = 0.0;
        for (k, probs) in dist.dims.iter().enumerate() {
            let off = l.emb_offset(k);
            for (c, &p) in probs.iter().enumerate() {
                v += p * model.weights[off + c];
            }
        }
        if l.action_onehot {
            v += model.weights[l.action_offset() + a];
        }
        *part = v;
    }
    Ok(MarginalizedModel {
        model: model.clone(),
        action_part,
    })
}

/// Brute-force marginalization of an arbitrary q-hat(x, a, e) by enumerating
/// the product embedding space. Independent of the additive fast path.
pub fn marginalize_by_enumeration(
    env: &Environment,
    qhat_xae: impl Fn(&[f64], usize, &[usize]) -> f64,
    x: &[f64],
    action: usize,
    cap: u64,
) -> Result<f64> {
    let cards = &env.config().cardinalities;
    let space: u128 = cards.iter().map(|&c| c as u128).product();
    if space > cap as u128 {
        return Err(OpeError::Capacity { terms: space, cap });
    }
    let dist = env.embed_dist(action);
    let mut total = 0.0;
    for e in product_space(cards) {
        total += dist.prob(&e) * qhat_xae(x, action, &e);
    }
    Ok(total)
}
