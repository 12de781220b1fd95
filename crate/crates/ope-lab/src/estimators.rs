//! The five value estimators: DM, IPS, DR, MIPS, and MDR.
//!
//! All estimators are sample means of per-sample statistics, accumulated with
//! compensated summation so that estimates are invariant to sample order.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{OpeError, Result};
use crate::model::{marginal_embedding_dist, LoggedDataset, PolicyMatrix};

/// A point estimate of the evaluation policy's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimator: String,
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    /// w(x, a) = pi_e(a|x) / pi_b(a|x).
    Vanilla,
    /// w(x, e) = p(e|x, pi_e) / p(e|x, pi_b).
    Marginal,
}

/// Per-sample importance weights aligned with a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub kind: WeightKind,
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn validate(&self) -> Result<()> {
        for (i, &w) in self.weights.iter().enumerate() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(OpeError::Validation(format!(
                    "weight {i} is {w}; weights must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Compensated (Kahan) accumulator for order-stable means.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum
    }
}

pub(crate) fn kahan_mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut acc = KahanSum::default();
    let mut n = 0usize;
    for v in values {
        acc.add(v);
        n += 1;
    }
    if n == 0 {
        (0.0, 0)
    } else {
        (acc.total() / n as f64, n)
    }
}

fn check_alignment(dataset: &LoggedDataset, pi_e: &PolicyMatrix) -> Result<()> {
    if pi_e.rows.len() != dataset.samples.len() {
        return Err(OpeError::Shape(format!(
            "policy has {} rows for {} samples",
            pi_e.rows.len(),
            dataset.samples.len()
        )));
    }
    Ok(())
}

/// Direct method: plugs the reward model into the value definition,
/// (1/n) sum_i sum_a pi_e(a|x_i) qhat(x_i, a).
pub fn estimate_dm(
    dataset: &LoggedDataset,
    pi_e: &PolicyMatrix,
    qhat_xa: impl Fn(&[f64], usize) -> f64,
) -> Result<Estimate> {
    check_alignment(dataset, pi_e)?;
    let (value, n) = kahan_mean(dataset.samples.iter().zip(&pi_e.rows).map(|(s, row)| {
        let mut acc = KahanSum::default();
        for (a, &p) in row.iter().enumerate() {
            acc.add(p * qhat_xa(&s.context, a));
        }
        acc.total()
    }));
    Ok(Estimate {
        estimator: "dm".into(),
        value,
        n,
    })
}

/// Inverse propensity scoring with the vanilla weight w(x, a).
pub fn estimate_ips(dataset: &LoggedDataset, pi_e: &PolicyMatrix) -> Result<Estimate> {
    check_alignment(dataset, pi_e)?;
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.behavior_propensity <= 0.0 {
            return Err(OpeError::SupportViolation(format!(
                "sample {i} has behavior propensity {}",
                s.behavior_propensity
            )));
        }
    }
    let (value, n) = kahan_mean(
        dataset
            .samples
            .iter()
            .zip(&pi_e.rows)
            .map(|(s, row)| row[s.action] / s.behavior_propensity * s.reward),
    );
    Ok(Estimate {
        estimator: "ips".into(),
        value,
        n,
    })
}

/// Doubly robust: DM baseline plus a vanilla-weighted residual correction.
pub fn estimate_dr(
    dataset: &LoggedDataset,
    pi_e: &PolicyMatrix,
    qhat_xa: impl Fn(&[f64], usize) -> f64,
) -> Result<Estimate> {
    check_alignment(dataset, pi_e)?;
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.behavior_propensity <= 0.0 {
            return Err(OpeError::SupportViolation(format!(
                "sample {i} has behavior propensity {}",
                s.behavior_propensity
            )));
        }
    }
    let (value, n) = kahan_mean(dataset.samples.iter().zip(&pi_e.rows).map(|(s, row)| {
        let mut acc = KahanSum::default();
        for (a, &p) in row.iter().enumerate() {
            acc.add(p * qhat_xa(&s.context, a));
        }
        let w = row[s.action] / s.behavior_propensity;
        acc.total() + w * (s.reward - qhat_xa(&s.context, s.action))
    }));
    Ok(Estimate {
        estimator: "dr".into(),
        value,
        n,
    })
}

/// Marginal importance weights w(x_i, e_i) for every logged sample, computed
/// from the environment's exact embedding distributions.
pub fn compute_marginal_weights(
    env: &Environment,
    pi_e: &PolicyMatrix,
    pi_b: &PolicyMatrix,
    dataset: &LoggedDataset,
) -> Result<WeightVector> {
    check_alignment(dataset, pi_e)?;
    check_alignment(dataset, pi_b)?;
    let dists = env.embed_dists();
    let mut weights = Vec::with_capacity(dataset.samples.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let num = marginal_embedding_dist(&pi_e.rows[i], dists, &s.embedding)?;
        let den = marginal_embedding_dist(&pi_b.rows[i], dists, &s.embedding)?;
        if den <= 0.0 {
            return Err(OpeError::EmbeddingSupport(format!(
                "sample {i}: logged embedding has zero probability under the behavior policy"
            )));
        }
        weights.push(num / den);
    }
    Ok(WeightVector {
        kind: WeightKind::Marginal,
        weights,
    })
}

/// Vanilla per-sample weights w(x_i, a_i) from the logged propensities.
pub fn compute_vanilla_weights(
    pi_e: &PolicyMatrix,
    dataset: &LoggedDataset,
) -> Result<WeightVector> {
    check_alignment(dataset, pi_e)?;
    let mut weights = Vec::with_capacity(dataset.samples.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.behavior_propensity <= 0.0 {
            return Err(OpeError::SupportViolation(format!(
                "sample {i} has behavior propensity {}",
                s.behavior_propensity
            )));
        }
        weights.push(pi_e.rows[i][s.action] / s.behavior_propensity);
    }
    Ok(WeightVector {
        kind: WeightKind::Vanilla,
        weights,
    })
}

fn check_marginal(weights: &WeightVector, dataset: &LoggedDataset) -> Result<()> {
    if weights.kind != WeightKind::Marginal {
        return Err(OpeError::Validation(
            "expected marginal importance weights".into(),
        ));
    }
    if weights.weights.len() != dataset.samples.len() {
        return Err(OpeError::Shape(format!(
            "{} weights for {} samples",
            weights.weights.len(),
            dataset.samples.len()
        )));
    }
    Ok(())
}

/// Marginalized IPS: (1/n) sum_i w(x_i, e_i) r_i.
pub fn estimate_mips(dataset: &LoggedDataset, weights: &WeightVector) -> Result<Estimate> {
    check_marginal(weights, dataset)?;
    let (value, n) = kahan_mean(
        dataset
            .samples
            .iter()
            .zip(&weights.weights)
            .map(|(s, &w)| w * s.reward),
    );
    Ok(Estimate {
        estimator: "mips".into(),
        value,
        n,
    })
}

/// Marginalized doubly robust: DM baseline plus a marginal-weighted residual
/// against the embedding-level model qhat(x, a, e).
pub fn estimate_mdr(
    dataset: &LoggedDataset,
    pi_e: &PolicyMatrix,
    qhat_xa: impl Fn(&[f64], usize) -> f64,
    qhat_xae: impl Fn(&[f64], usize, &[usize]) -> f64,
    weights: &WeightVector,
) -> Result<Estimate> {
    check_alignment(dataset, pi_e)?;
    check_marginal(weights, dataset)?;
    let (value, n) = kahan_mean(
        dataset
            .samples
            .iter()
            .zip(&pi_e.rows)
            .zip(&weights.weights)
            .map(|((s, row), &w)| {
                let mut acc = KahanSum::default();
                for (a, &p) in row.iter().enumerate() {
                    acc.add(p * qhat_xa(&s.context, a));
                }
                acc.total() + w * (s.reward - qhat_xae(&s.context, s.action, &s.embedding))
            }),
    );
    Ok(Estimate {
        estimator: "mdr".into(),
        value,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::model::{DatasetMeta, LoggedSample, PolicyTag};

    fn tiny_dataset(samples: Vec<LoggedSample>) -> LoggedDataset {
        let n = samples.len();
        LoggedDataset {
            meta: DatasetMeta {
                n,
                n_actions: 2,
                d_x: 1,
                d_e: 1,
                cardinalities: vec![2],
                seed: 0,
            },
            samples,
        }
    }

    fn sample(a: usize, e: usize, r: f64, pb: f64) -> LoggedSample {
        LoggedSample {
            context: vec![0.0],
            action: a,
            embedding: vec![e],
            reward: r,
            behavior_propensity: pb,
        }
    }

    fn uniform_policy(n: usize, tag: PolicyTag) -> PolicyMatrix {
        PolicyMatrix::new(tag, vec![vec![0.5, 0.5]; n]).unwrap()
    }

    #[test]
    fn dm_constant_model_returns_constant() {
        let ds = tiny_dataset(vec![sample(0, 0, 1.0, 0.5), sample(1, 1, 2.0, 0.5)]);
        let pi = uniform_policy(2, PolicyTag::Evaluation);
        let est = estimate_dm(&ds, &pi, |_, _| 3.5).unwrap();
        assert!((est.value - 3.5).abs() < 1e-12);
        let zero = estimate_dm(&ds, &pi, |_, _| 0.0).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn ips_equal_policies_gives_reward_mean() {
        let ds = tiny_dataset(vec![sample(0, 0, 1.0, 0.5), sample(1, 1, 3.0, 0.5)]);
        let pi = uniform_policy(2, PolicyTag::Evaluation);
        let est = estimate_ips(&ds, &pi).unwrap();
        assert!((est.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ips_single_sample_arithmetic() {
        let ds = tiny_dataset(vec![sample(0, 0, 2.0, 0.5)]);
        let pi = PolicyMatrix::new(PolicyTag::Evaluation, vec![vec![1.0, 0.0]]).unwrap();
        let est = estimate_ips(&ds, &pi).unwrap();
        assert!((est.value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ips_zero_propensity_is_support_error() {
        let ds = tiny_dataset(vec![sample(0, 0, 1.0, 0.0)]);
        let pi = uniform_policy(1, PolicyTag::Evaluation);
        assert!(matches!(
            estimate_ips(&ds, &pi),
            Err(OpeError::SupportViolation(_))
        ));
    }

    #[test]
    fn dr_with_zero_model_equals_ips() {
        let ds = tiny_dataset(vec![
            sample(0, 0, 1.0, 0.3),
            sample(1, 1, -2.0, 0.7),
            sample(0, 1, 0.5, 0.4),
        ]);
        let pi = uniform_policy(3, PolicyTag::Evaluation);
        let ips = estimate_ips(&ds, &pi).unwrap().value;
        let dr = estimate_dr(&ds, &pi, |_, _| 0.0).unwrap().value;
        assert!((ips - dr).abs() < 1e-12);
    }

    #[test]
    fn mips_weighted_mean_arithmetic() {
        let ds = tiny_dataset(vec![sample(0, 0, 1.0, 0.5), sample(1, 1, 1.0, 0.5)]);
        let weights = WeightVector {
            kind: WeightKind::Marginal,
            weights: vec![1.0, 3.0],
        };
        let est = estimate_mips(&ds, &weights).unwrap();
        assert!((est.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mips_rejects_vanilla_weights() {
        let ds = tiny_dataset(vec![sample(0, 0, 1.0, 0.5)]);
        let weights = WeightVector {
            kind: WeightKind::Vanilla,
            weights: vec![1.0],
        };
        assert!(matches!(
            estimate_mips(&ds, &weights),
            Err(OpeError::Validation(_))
        ));
    }

    #[test]
    fn mdr_with_zero_models_equals_mips() {
        let ds = tiny_dataset(vec![sample(0, 0, 1.5, 0.5), sample(1, 1, -0.5, 0.5)]);
        let pi = uniform_policy(2, PolicyTag::Evaluation);
        let weights = WeightVector {
            kind: WeightKind::Marginal,
            weights: vec![0.7, 1.9],
        };
        let mips = estimate_mips(&ds, &weights).unwrap().value;
        let mdr = estimate_mdr(&ds, &pi, |_, _| 0.0, |_, _, _| 0.0, &weights).unwrap().value;
        assert!((mips - mdr).abs() < 1e-12);
    }

    #[test]
    fn marginal_weight_two_action_arithmetic() {
        // Uniform behavior, evaluation degenerate on action 0,
        // p(e*|a0) = 0.8, p(e*|a1) = 0.2 gives w(x, e*) = 0.8 / 0.5 = 1.6.
        let env = Environment::new(
            EnvConfig {
                n_actions: 2,
                d_x: 2,
                d_e: 1,
                cardinalities: vec![2],
                ..EnvConfig::default()
            },
            3,
        )
        .unwrap();
        let env = env
            .with_alpha(vec![
                (0.8f64).ln(),
                (0.2f64).ln(),
                (0.2f64).ln(),
                (0.8f64).ln(),
            ])
            .unwrap();
        let ds = tiny_dataset(vec![sample(1, 0, 1.0, 0.5)]);
        let pi_e = PolicyMatrix::new(PolicyTag::Evaluation, vec![vec![1.0, 0.0]]).unwrap();
        let pi_b = uniform_policy(1, PolicyTag::Behavior);
        let w = compute_marginal_weights(&env, &pi_e, &pi_b, &ds).unwrap();
        assert!((w.weights[0] - 1.6).abs() < 1e-12, "got {}", w.weights[0]);
    }

    #[test]
    fn equal_policies_give_unit_marginal_weights() {
        let env = Environment::new(
            EnvConfig {
                n_actions: 3,
                d_x: 2,
                d_e: 2,
                cardinalities: vec![2, 3],
                ..EnvConfig::default()
            },
            11,
        )
        .unwrap();
        let ds = env.sample_logged_data(20, 4).unwrap();
        let contexts: Vec<Vec<f64>> = ds.samples.iter().map(|s| s.context.clone()).collect();
        let (pi_b, _) = env.policy_pair(&contexts);
        let pi_b2 = PolicyMatrix {
            tag: PolicyTag::Evaluation,
            rows: pi_b.rows.clone(),
        };
        let w = compute_marginal_weights(&env, &pi_b2, &pi_b, &ds).unwrap();
        for &wi in &w.weights {
            assert!((wi - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn estimates_are_permutation_invariant() {
        let env = Environment::new(
            EnvConfig {
                n_actions: 5,
                d_x: 3,
                d_e: 2,
                cardinalities: vec![3, 3],
                ..EnvConfig::default()
            },
            7,
        )
        .unwrap();
        let mut ds = env.sample_logged_data(500, 1).unwrap();
        let contexts: Vec<Vec<f64>> = ds.samples.iter().map(|s| s.context.clone()).collect();
        let (pi_b, pi_e) = env.policy_pair(&contexts);
        let w = compute_marginal_weights(&env, &pi_e, &pi_b, &ds).unwrap();
        let qa = |x: &[f64], a: usize| env.expected_reward_xa(x, a);
        let before = (
            estimate_ips(&ds, &pi_e).unwrap().value,
            estimate_dr(&ds, &pi_e, qa).unwrap().value,
            estimate_mips(&ds, &w).unwrap().value,
        );

        // Reverse samples along with their aligned rows and weights.
        ds.samples.reverse();
        let mut pi_e_rev = pi_e.clone();
        pi_e_rev.rows.reverse();
        let mut w_rev = w.clone();
        w_rev.weights.reverse();
        let after = (
            estimate_ips(&ds, &pi_e_rev).unwrap().value,
            estimate_dr(&ds, &pi_e_rev, qa).unwrap().value,
            estimate_mips(&ds, &w_rev).unwrap().value,
        );
        assert!((before.0 - after.0).abs() < 1e-12);
        assert!((before.1 - after.1).abs() < 1e-12);
        assert!((before.2 - after.2).abs() < 1e-12);
    }

    #[test]
    fn misaligned_policy_is_shape_error() {
        let ds = tiny_dataset(vec![sample(0, 0, 1.0, 0.5), sample(1, 1, 2.0, 0.5)]);
        let pi = uniform_policy(3, PolicyTag::Evaluation);
        assert!(matches!(
            estimate_ips(&ds, &pi),
            Err(OpeError::Shape(_))
        ));
    }
}
