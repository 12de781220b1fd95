//! Synthetic contextual-bandit environment with action embeddings.
//!
//! Contexts are standard normal vectors. Each action carries a factored
//! categorical embedding distribution (softmax over per-action logits, no
//! context dependence). Expected reward is a bilinear form in the context
//! and per-category vectors, weighted by simplex weights over embedding
//! dimensions. The behavior policy is a softmax over the marginal expected
//! reward; the evaluation policy is epsilon-greedy on it.
//!
//! All randomness flows through a seeded generator in a fixed draw order, so
//! the same `(config, seed)` pair reproduces the environment bit-for-bit.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::model::{
    marginal_embedding_dist, product_space, DatasetMeta, EmbedDistTable, LoggedDataset,
    LoggedSample, PolicyMatrix, PolicyTag, SupportCheck,
};

/// Hard cap on product-space enumeration (pool size x actions x embeddings).
pub const ENUMERATION_CAP: u64 = 10_000_000;

/// Mixes a base seed with an index into a fresh stream seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Structural parameters of the synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub n_actions: usize,
    #[serde(default = "default_d_x")]
    pub d_x: usize,
    #[serde(default = "default_d_e")]
    pub d_e: usize,
    /// Per-dimension embedding cardinalities; defaults to 10 per dimension.
    #[serde(default)]
    pub cardinalities: Vec<usize>,
    /// Behavior-policy inverse temperature.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Evaluation-policy exploration rate.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Standard deviation of additive Gaussian reward noise.
    #[serde(default = "default_noise")]
    pub reward_noise_sd: f64,
    /// Strength of the direct action effect on reward; 0 keeps the reward
    /// fully mediated by the embedding.
    #[serde(default)]
    pub direct_effect_strength: f64,
    /// When set, contexts are drawn uniformly from a fixed pool of this size
    /// so that oracle expectations are exact finite sums.
    #[serde(default)]
    pub context_pool_size: Option<usize>,
}

fn default_d_x() -> usize {
    10
}
fn default_d_e() -> usize {
    3
}
fn default_beta() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_noise() -> f64 {
    1.0
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_actions: 10,
            d_x: default_d_x(),
            d_e: default_d_e(),
            cardinalities: Vec::new(),
            beta: default_beta(),
            epsilon: default_epsilon(),
            reward_noise_sd: default_noise(),
            direct_effect_strength: 0.0,
            context_pool_size: None,
        }
    }
}

impl EnvConfig {
    /// Fills in defaulted cardinalities and checks bounds.
    pub fn normalize(mut self) -> Result<Self> {
        if self.cardinalities.is_empty() {
            self.cardinalities = vec![10; self.d_e];
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_actions < 1 {
            return Err(OpeError::Validation("n_actions must be >= 1".into()));
        }
        if self.d_x < 1 {
            return Err(OpeError::Validation("d_x must be >= 1".into()));
        }
        if self.d_e < 1 {
            return Err(OpeError::Validation("d_e must be >= 1".into()));
        }
        if self.cardinalities.len() != self.d_e {
            return Err(OpeError::Validation(format!(
                "expected {} cardinalities, got {}",
                self.d_e,
                self.cardinalities.len()
            )));
        }
        if self.cardinalities.iter().any(|&c| c < 1) {
            return Err(OpeError::Validation("each cardinality must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(OpeError::Validation(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if !self.beta.is_finite() {
            return Err(OpeError::Validation("beta must be finite".into()));
        }
        if !(self.reward_noise_sd >= 0.0 && self.reward_noise_sd.is_finite()) {
            return Err(OpeError::Validation("reward_noise_sd must be >= 0".into()));
        }
        if !(self.direct_effect_strength >= 0.0 && self.direct_effect_strength.is_finite()) {
            return Err(OpeError::Validation(
                "direct_effect_strength must be >= 0".into(),
            ));
        }
        if let Some(m) = self.context_pool_size {
            if m < 1 {
                return Err(OpeError::Validation("context pool must be non-empty".into()));
            }
        }
        Ok(())
    }
}

/// Serializable parameter set: everything needed to rebuild an `Environment`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvParams {
    pub config: EnvConfig,
    pub seed: u64,
    /// Embedding logits, flattened `[action][dim][category]`.
    pub alpha: Vec<f64>,
    /// Context interaction matrix, row-major `d_x x d_x`.
    pub m: Vec<f64>,
    pub theta_x: Vec<f64>,
    pub theta_e: Vec<f64>,
    /// Simplex weights over embedding dimensions.
    pub eta: Vec<f64>,
    /// Per-category context-space vectors, flattened `[dim][category][d_x]`.
    pub category_vectors: Vec<f64>,
    /// Fixed context pool (row-major `m x d_x`) when pool mode is on.
    pub pool: Option<Vec<f64>>,
}

/// Fully initialized synthetic environment with derived lookup tables.
#[derive(Debug, Clone)]
pub struct Environment {
    params: EnvParams,
    /// Start index of dimension `k` in the flattened (dim, category) axis.
    offsets: Vec<usize>,
    total_cats: usize,
    embed_dists: Vec<EmbedDistTable>,
    /// `weight_mat[a * total_cats + j] = eta_k * p_k(c|a)` for flattened `j = (k, c)`.
    weight_mat: Vec<f64>,
    /// Dot products of `theta_e` with each category vector.
    theta_e_dot_cv: Vec<f64>,
    /// Standardized per-action effect direction used when
    /// `direct_effect_strength > 0`.
    action_effect: Vec<f64>,
    pool_rows: Option<Vec<Vec<f64>>>,
}

impl Environment {
    /// Draws all parameters from their generating distributions using a
    /// deterministic stream seeded by `seed`.
    pub fn new(config: EnvConfig, seed: u64) -> Result<Self> {
        let config = config.normalize()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let total_cats: usize = config.cardinalities.iter().sum();
        let n_a = config.n_actions;
        let d_x = config.d_x;

        let alpha: Vec<f64> = (0..n_a * total_cats)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let m: Vec<f64> = (0..d_x * d_x).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta_x: Vec<f64> = (0..d_x).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta_e: Vec<f64> = (0..d_x).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Dirichlet(1, ..., 1) via normalized unit exponentials.
        let gammas: Vec<f64> = (0..config.d_e)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let gsum: f64 = gammas.iter().sum();
        let eta: Vec<f64> = gammas.iter().map(|g| g / gsum).collect();
        let category_vectors: Vec<f64> = (0..total_cats * d_x)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let pool = config.context_pool_size.map(|m| {
            (0..m * d_x)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<f64>>()
        });

        Self::from_params(EnvParams {
            config,
            seed,
            alpha,
            m,
            theta_x,
            theta_e,
            eta,
            category_vectors,
            pool,
        })
    }

    /// Rebuilds an environment (and its lookup tables) from raw parameters.
    pub fn from_params(params: EnvParams) -> Result<Self> {
        let config = params.config.clone().normalize()?;
        let d_x = config.d_x;
        let n_a = config.n_actions;
        let mut offsets = Vec::with_capacity(config.d_e);
        let mut acc = 0usize;
        for &c in &config.cardinalities {
            offsets.push(acc);
            acc += c;
        }
        let total_cats = acc;

        let expect = |name: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                return Err(OpeError::Shape(format!(
                    "{name}: expected {want} entries, got {got}"
                )));
            }
            Ok(())
        };
        expect("alpha", params.alpha.len(), n_a * total_cats)?;
        expect("m", params.m.len(), d_x * d_x)?;
        expect("theta_x", params.theta_x.len(), d_x)?;
        expect("theta_e", params.theta_e.len(), d_x)?;
        expect("eta", params.eta.len(), config.d_e)?;
        expect(
            "category_vectors",
            params.category_vectors.len(),
            total_cats * d_x,
        )?;
        let eta_sum: f64 = params.eta.iter().sum();
        if (eta_sum - 1.0).abs() > 1e-12 || params.eta.iter().any(|&v| v < 0.0) {
            return Err(OpeError::Validation("eta must be a simplex vector".into()));
        }

        // Per-action softmax over each embedding dimension.
        let mut embed_dists = Vec::with_capacity(n_a);
        for a in 0..n_a {
            let base = a * total_cats;
            let mut dims = Vec::with_capacity(config.d_e);
            for (k, &card) in config.cardinalities.iter().enumerate() {
                let logits = &params.alpha[base + offsets[k]..base + offsets[k] + card];
                dims.push(softmax(logits));
            }
            embed_dists.push(EmbedDistTable { dims });
        }

        let mut weight_mat = vec![0.0; n_a * total_cats];
        for a in 0..n_a {
            for k in 0..config.d_e {
                for c in 0..config.cardinalities[k] {
                    weight_mat[a * total_cats + offsets[k] + c] =
                        params.eta[k] * embed_dists[a].dims[k][c];
                }
            }
        }

        let theta_e_dot_cv: Vec<f64> = (0..total_cats)
            .map(|j| {
                dot(
                    &params.theta_e,
                    &params.category_vectors[j * d_x..(j + 1) * d_x],
                )
            })
            .collect();

        // sin(a + 1) standardized to zero mean, unit variance across actions.
        let raw: Vec<f64> = (0..n_a).map(|a| ((a + 1) as f64).sin()).collect();
        let mean = raw.iter().sum::<f64>() / n_a as f64;
        let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_a as f64;
        let sd = var.sqrt().max(f64::MIN_POSITIVE);
        let action_effect: Vec<f64> = raw.iter().map(|v| (v - mean) / sd).collect();

        let pool_rows = match (&params.pool, config.context_pool_size) {
            (Some(flat), Some(m)) => {
                expect("pool", flat.len(), m * d_x)?;
                Some(flat.chunks(d_x).map(<[f64]>::to_vec).collect())
            }
            (None, None) => None,
            _ => {
                return Err(OpeError::Shape(
                    "pool presence disagrees with context_pool_size".into(),
                ))
            }
        };

        Ok(Self {
            params: EnvParams { config, ..params },
            offsets,
            total_cats,
            embed_dists,
            weight_mat,
            theta_e_dot_cv,
            action_effect,
            pool_rows,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.params.config
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    pub fn n_actions(&self) -> usize {
        self.params.config.n_actions
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn pool(&self) -> Option<&[Vec<f64>]> {
        self.pool_rows.as_deref()
    }

    /// Replaces the embedding logits and rebuilds derived tables. Intended
    /// for constructing special-case environments (e.g. near-deterministic
    /// embeddings) in experiments and tests.
    pub fn with_alpha(&self, alpha: Vec<f64>) -> Result<Self> {
        let mut params = self.params.clone();
        params.alpha = alpha;
        Self::from_params(params)
    }

    /// Environment whose single embedding dimension identifies the action:
    /// d_e = 1, one category per action, near-point-mass embedding draws.
    pub fn identity_embedding(mut config: EnvConfig, seed: u64) -> Result<Self> {
        config.d_e = 1;
        config.cardinalities = vec![config.n_actions];
        let base = Self::new(config, seed)?;
        let n_a = base.n_actions();
        let mut alpha = vec![0.0; n_a * n_a];
        for a in 0..n_a {
            alpha[a * n_a + a] = 50.0;
        }
        base.with_alpha(alpha)
    }

    pub fn embed_dist(&self, action: usize) -> &EmbedDistTable {
        &self.embed_dists[action]
    }

    pub fn embed_dists(&self) -> &[EmbedDistTable] {
        &self.embed_dists
    }

    fn flat(&self, k: usize, c: usize) -> usize {
        self.offsets[k] + c
    }

    /// Per-(dimension, category) reward terms for a context:
    /// `x^T M v_kc + theta_x . x + theta_e . v_kc`.
    pub fn reward_terms(&self, x: &[f64]) -> Vec<f64> {
        let d_x = self.params.config.d_x;
        let mut xm = vec![0.0; d_x];
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.params.m[i * d_x..(i + 1) * d_x];
            for (j, &mij) in row.iter().enumerate() {
                xm[j] += xi * mij;
            }
        }
        let tx = dot(&self.params.theta_x, x);
        (0..self.total_cats)
            .map(|j| {
                dot(&xm, &self.params.category_vectors[j * d_x..(j + 1) * d_x])
                    + tx
                    + self.theta_e_dot_cv[j]
            })
            .collect()
    }

    /// Expected reward given context and embedding (action-free part).
    pub fn expected_reward_xe(&self, x: &[f64], e: &[usize]) -> f64 {
        let terms = self.reward_terms(x);
        self.reward_xe_from_terms(&terms, e)
    }

    pub(crate) fn reward_xe_from_terms(&self, terms: &[f64], e: &[usize]) -> f64 {
        self.params
            .eta
            .iter()
            .enumerate()
            .map(|(k, &eta_k)| eta_k * terms[self.flat(k, e[k])])
            .sum()
    }

    /// Direct action effect `g(x, a)`; identically zero influence when
    /// `direct_effect_strength` is 0.
    pub fn direct_effect(&self, x: &[f64], action: usize) -> f64 {
        dot(&self.params.theta_x, x) * self.action_effect[action]
    }

    /// Expected reward given context, action, and embedding.
    pub fn expected_reward_xae(&self, x: &[f64], action: usize, e: &[usize]) -> f64 {
        let lambda = self.params.config.direct_effect_strength;
        let mut q = self.expected_reward_xe(x, e);
        if lambda > 0.0 {
            q += lambda * self.direct_effect(x, action);
        }
        q
    }

    /// Expected reward marginalized over the action's embedding distribution.
    /// Exact in O(d_e * |E_k|) via the additive structure.
    pub fn expected_reward_xa(&self, x: &[f64], action: usize) -> f64 {
        let terms = self.reward_terms(x);
        self.reward_xa_from_terms(&terms, x, action)
    }

    pub(crate) fn reward_xa_from_terms(&self, terms: &[f64], x: &[f64], action: usize) -> f64 {
        let row = &self.weight_mat[action * self.total_cats..(action + 1) * self.total_cats];
        let mut q = dot(row, terms);
        let lambda = self.params.config.direct_effect_strength;
        if lambda > 0.0 {
            q += lambda * self.direct_effect(x, action);
        }
        q
    }

    /// Marginal expected reward for every action at once.
    pub fn expected_reward_row(&self, x: &[f64]) -> Vec<f64> {
        let terms = self.reward_terms(x);
        self.reward_row_from_terms(&terms, x)
    }

    pub(crate) fn reward_row_from_terms(&self, terms: &[f64], x: &[f64]) -> Vec<f64> {
        let n_a = self.n_actions();
        let tc = self.total_cats;
        let mut q = vec![0.0; n_a];
        for (a, q_a) in q.iter_mut().enumerate() {
            *q_a = dot(&self.weight_mat[a * tc..(a + 1) * tc], terms);
        }
        let lambda = self.params.config.direct_effect_strength;
        if lambda > 0.0 {
            let tx = dot(&self.params.theta_x, x);
            for (a, q_a) in q.iter_mut().enumerate() {
                *q_a += lambda * tx * self.action_effect[a];
            }
        }
        q
    }

    /// Softmax behavior policy over the marginal expected rewards.
    pub fn behavior_policy(&self, x: &[f64]) -> Vec<f64> {
        behavior_from_q(&self.expected_reward_row(x), self.params.config.beta)
    }

    /// Epsilon-greedy evaluation policy; argmax ties break to the lowest index.
    pub fn evaluation_policy(&self, x: &[f64]) -> Vec<f64> {
        evaluation_from_q(&self.expected_reward_row(x), self.params.config.epsilon)
    }

    /// Behavior and evaluation policy matrices over the given contexts.
    pub fn policy_pair(&self, contexts: &[Vec<f64>]) -> (PolicyMatrix, PolicyMatrix) {
        let mut b_rows = Vec::with_capacity(contexts.len());
        let mut e_rows = Vec::with_capacity(contexts.len());
        for x in contexts {
            let q = self.expected_reward_row(x);
            b_rows.push(behavior_from_q(&q, self.params.config.beta));
            e_rows.push(evaluation_from_q(&q, self.params.config.epsilon));
        }
        (
            PolicyMatrix {
                tag: PolicyTag::Behavior,
                rows: b_rows,
            },
            PolicyMatrix {
                tag: PolicyTag::Evaluation,
                rows: e_rows,
            },
        )
    }

    /// Draws `n` i.i.d. logged samples. Bit-reproducible given
    /// `(environment, n, seed)`.
    pub fn sample_logged_data(&self, n: usize, seed: u64) -> Result<LoggedDataset> {
        if n == 0 {
            return Err(OpeError::Validation("dataset size must be >= 1".into()));
        }
        let cfg = &self.params.config;
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(self.params.seed, seed));
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = match &self.pool_rows {
                Some(pool) => pool[rng.random_range(0..pool.len())].clone(),
                None => (0..cfg.d_x)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            };
            let terms = self.reward_terms(&x);
            let q_row = self.reward_row_from_terms(&terms, &x);
            let pi_b = behavior_from_q(&q_row, cfg.beta);
            let action = sample_categorical(&pi_b, rng.random::<f64>());
            let mut embedding = Vec::with_capacity(cfg.d_e);
            for k in 0..cfg.d_e {
                let probs = &self.embed_dists[action].dims[k];
                embedding.push(sample_categorical(probs, rng.random::<f64>()));
            }
            let mean = {
                let mut q = self.reward_xe_from_terms(&terms, &embedding);
                if cfg.direct_effect_strength > 0.0 {
                    q += cfg.direct_effect_strength * self.direct_effect(&x, action);
                }
                q
            };
            let noise: f64 = rng.sample(StandardNormal);
            samples.push(LoggedSample {
                context: x,
                action,
                embedding,
                reward: mean + cfg.reward_noise_sd * noise,
                behavior_propensity: pi_b[action],
            });
        }
        let ds = LoggedDataset {
            meta: DatasetMeta {
                n,
                n_actions: cfg.n_actions,
                d_x: cfg.d_x,
                d_e: cfg.d_e,
                cardinalities: cfg.cardinalities.clone(),
                seed,
            },
            samples,
        };
        debug_assert!(ds.validate().is_ok());
        Ok(ds)
    }

    /// Draws contexts from p(x): uniform over the pool when configured,
    /// otherwise standard normal. Independent of the logging stream.
    pub fn sample_contexts(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let d_x = self.params.config.d_x;
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(self.params.seed, seed));
        (0..n)
            .map(|_| match &self.pool_rows {
                Some(pool) => pool[rng.random_range(0..pool.len())].clone(),
                None => (0..d_x)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            })
            .collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &self.params)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let params: EnvParams = serde_json::from_reader(std::io::BufReader::new(file))?;
        Self::from_params(params)
    }
}

/// Checks common embedding support over a finite context pool by enumerating
/// the product embedding space. Errors if the enumeration exceeds `cap`.
pub fn check_common_embedding_support(
    env: &Environment,
    pi_e: &PolicyMatrix,
    pi_b: &PolicyMatrix,
    cap: u64,
) -> Result<SupportCheck> {
    if pi_e.rows.len() != pi_b.rows.len() || pi_e.n_actions() != env.n_actions() {
        return Err(OpeError::Shape(
            "policy matrices disagree with each other or the environment".into(),
        ));
    }
    let cards = &env.config().cardinalities;
    let space: u128 = cards.iter().map(|&c| c as u128).product();
    let terms = space * pi_e.rows.len() as u128 * env.n_actions() as u128;
    if terms > cap as u128 {
        return Err(OpeError::Capacity { terms, cap });
    }
    let mut violations = Vec::new();
    for (i, (row_e, row_b)) in pi_e.rows.iter().zip(&pi_b.rows).enumerate() {
        for (flat, e) in product_space(cards).enumerate() {
            let pe = marginal_embedding_dist(row_e, env.embed_dists(), &e)?;
            if pe > 0.0 {
                let pb = marginal_embedding_dist(row_b, env.embed_dists(), &e)?;
                if pb <= 0.0 {
                    violations.push((i, flat));
                }
            }
        }
    }
    Ok(SupportCheck {
        holds: violations.is_empty(),
        violations,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// Softmax of `beta * q` with max subtraction.
pub fn behavior_from_q(q_row: &[f64], beta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = q_row.iter().map(|&q| beta * q).collect();
    softmax(&scaled)
}

/// Epsilon-greedy row: `1 - eps` on the argmax plus `eps / |A|` everywhere.
pub fn evaluation_from_q(q_row: &[f64], epsilon: f64) -> Vec<f64> {
    let n = q_row.len();
    let mut row = vec![epsilon / n as f64; n];
    row[argmax(q_row)] += 1.0 - epsilon;
    row
}

pub(crate) fn argmax(q_row: &[f64]) -> usize {
    let mut best = 0usize;
    for (a, &q) in q_row.iter().enumerate() {
        if q > q_row[best] {
            best = a;
        }
    }
    best
}

pub(crate) fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> EnvConfig {
        EnvConfig {
            n_actions: 5,
            d_x: 4,
            d_e: 2,
            cardinalities: vec![3, 3],
            ..EnvConfig::default()
        }
    }

    #[test]
    fn default_config_matches_reference_dimensions() {
        let env = Environment::new(
            EnvConfig {
                n_actions: 20,
                ..EnvConfig::default()
            },
            3,
        )
        .unwrap();
        assert_eq!(env.config().d_x, 10);
        assert_eq!(env.config().cardinalities, vec![10, 10, 10]);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = Environment::new(small_config(), 42).unwrap();
        let b = Environment::new(small_config(), 42).unwrap();
        assert_eq!(a.params().alpha, b.params().alpha);
        assert_eq!(a.params().m, b.params().m);
        assert_eq!(a.params().eta, b.params().eta);
        let c = Environment::new(small_config(), 43).unwrap();
        assert_ne!(a.params().alpha, c.params().alpha);
    }

    #[test]
    fn alpha_shape_scales_with_config() {
        let env = Environment::new(
            EnvConfig {
                n_actions: 100,
                d_e: 3,
                cardinalities: vec![10, 10, 10],
                ..EnvConfig::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(env.params().alpha.len(), 100 * 3 * 10);
    }

    #[test]
    fn embed_dist_rows_normalize() {
        let env = Environment::new(small_config(), 11).unwrap();
        for a in 0..env.n_actions() {
            for dim in &env.embed_dist(a).dims {
                let sum: f64 = dim.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equal_logits_give_uniform_embeddings() {
        let env = Environment::new(small_config(), 11).unwrap();
        let flat = env.n_actions() * 6;
        let env = env.with_alpha(vec![0.7; flat]).unwrap();
        for dim in &env.embed_dist(2).dims {
            for &p in dim {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn extreme_logit_concentrates_embedding() {
        let env = Environment::new(small_config(), 11).unwrap();
        let mut alpha = env.params().alpha.clone();
        // Dimension 0 of action 0 heavily favors category 1.
        alpha[1] = 50.0;
        let env = env.with_alpha(alpha).unwrap();
        assert!(env.embed_dist(0).dims[0][1] >= 1.0 - 1e-9);
    }

    #[test]
    fn zero_parameters_zero_reward() {
        let base = Environment::new(small_config(), 5).unwrap();
        let mut p = base.params().clone();
        p.m.iter_mut().for_each(|v| *v = 0.0);
        p.theta_x.iter_mut().for_each(|v| *v = 0.0);
        p.theta_e.iter_mut().for_each(|v| *v = 0.0);
        let env = Environment::from_params(p).unwrap();
        let x = vec![1.0, -2.0, 0.5, 3.0];
        assert_eq!(env.expected_reward_xe(&x, &[1, 2]), 0.0);
    }

    #[test]
    fn theta_x_only_reward_is_linear() {
        let base = Environment::new(
            EnvConfig {
                n_actions: 3,
                d_x: 4,
                d_e: 1,
                cardinalities: vec![2],
                ..EnvConfig::default()
            },
            5,
        )
        .unwrap();
        let mut p = base.params().clone();
        p.m.iter_mut().for_each(|v| *v = 0.0);
        p.theta_e.iter_mut().for_each(|v| *v = 0.0);
        p.theta_x = vec![1.0, 0.0, 0.0, 0.0];
        p.eta = vec![1.0];
        let env = Environment::from_params(p).unwrap();
        let x = vec![1.0, 0.0, 0.0, 0.0];
        assert!((env.expected_reward_xe(&x, &[0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reward_formula_matches_naive_recomputation() {
        let env = Environment::new(small_config(), 99).unwrap();
        let x = vec![0.3, -1.1, 0.7, 2.0];
        let e = [2, 0];
        // Naive re-evaluation straight from raw parameters.
        let p = env.params();
        let d_x = p.config.d_x;
        let mut naive = 0.0;
        let offsets = [0usize, 3];
        for k in 0..2 {
            let j = offsets[k] + e[k];
            let v = &p.category_vectors[j * d_x..(j + 1) * d_x];
            let mut xmv = 0.0;
            for i in 0..d_x {
                for jj in 0..d_x {
                    xmv += x[i] * p.m[i * d_x + jj] * v[jj];
                }
            }
            let txx: f64 = p.theta_x.iter().zip(&x).map(|(t, xi)| t * xi).sum();
            let tev: f64 = p.theta_e.iter().zip(v).map(|(t, vi)| t * vi).sum();
            naive += p.eta[k] * (xmv + txx + tev);
        }
        assert!((env.expected_reward_xe(&x, &e) - naive).abs() < 1e-10);
    }

    #[test]
    fn no_direct_effect_by_default() {
        let env = Environment::new(small_config(), 1).unwrap();
        let x = vec![0.5, 0.5, -0.5, 1.0];
        let e = [1, 2];
        let v0 = env.expected_reward_xae(&x, 0, &e);
        for a in 1..env.n_actions() {
            assert_eq!(env.expected_reward_xae(&x, a, &e), v0);
        }
    }

    #[test]
    fn direct_effect_varies_across_actions() {
        let env = Environment::new(
            EnvConfig {
                direct_effect_strength: 1.0,
                ..small_config()
            },
            1,
        )
        .unwrap();
        let x = vec![0.5, 0.5, -0.5, 1.0];
        let e = [1, 2];
        assert!(
            (env.expected_reward_xae(&x, 0, &e) - env.expected_reward_xae(&x, 1, &e)).abs() > 1e-9
        );
    }

    #[test]
    fn marginal_reward_matches_product_enumeration() {
        let env = Environment::new(small_config(), 17).unwrap();
        let x = vec![1.2, -0.4, 0.9, -2.2];
        for a in 0..env.n_actions() {
            let brute: f64 = product_space(&env.config().cardinalities)
                .map(|e| env.embed_dist(a).prob(&e) * env.expected_reward_xae(&x, a, &e))
                .sum();
            assert!((env.expected_reward_xa(&x, a) - brute).abs() < 1e-10);
        }
    }

    #[test]
    fn point_mass_embedding_collapses_marginal() {
        let env = Environment::new(small_config(), 17).unwrap();
        let mut alpha = env.params().alpha.clone();
        // Action 3: force category 1 in dim 0 and category 2 in dim 1.
        let base = 3 * 6;
        alpha[base..base + 6].copy_from_slice(&[0.0, 60.0, 0.0, 0.0, 0.0, 60.0]);
        let env = env.with_alpha(alpha).unwrap();
        let x = vec![0.1, 0.2, 0.3, 0.4];
        let q_point = env.expected_reward_xae(&x, 3, &[1, 2]);
        assert!((env.expected_reward_xa(&x, 3) - q_point).abs() < 1e-9);
    }

    #[test]
    fn two_point_uniform_marginal_is_the_average() {
        let env = Environment::new(
            EnvConfig {
                n_actions: 2,
                d_x: 3,
                d_e: 1,
                cardinalities: vec![2],
                ..EnvConfig::default()
            },
            9,
        )
        .unwrap();
        let env = env.with_alpha(vec![0.0; 4]).unwrap();
        let x = vec![0.4, -0.8, 1.3];
        let avg = 0.5 * (env.expected_reward_xae(&x, 0, &[0]) + env.expected_reward_xae(&x, 0, &[1]));
        assert!((env.expected_reward_xa(&x, 0) - avg).abs() < 1e-12);
    }

    #[test]
    fn zero_beta_behavior_is_uniform() {
        let env = Environment::new(
            EnvConfig {
                beta: 0.0,
                ..small_config()
            },
            21,
        )
        .unwrap();
        let row = env.behavior_policy(&[0.1, 0.2, 0.3, 0.4]);
        for &p in &row {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn large_beta_concentrates_on_argmax() {
        let env = Environment::new(
            EnvConfig {
                beta: 100.0,
                ..small_config()
            },
            21,
        )
        .unwrap();
        let x = vec![0.9, -0.3, 1.4, 0.2];
        let q = env.expected_reward_row(&x);
        let row = env.behavior_policy(&x);
        assert!(row[argmax(&q)] > 0.999);
    }

    #[test]
    fn behavior_rows_normalize_and_are_positive() {
        let env = Environment::new(small_config(), 33).unwrap();
        let row = env.behavior_policy(&[1.0, 1.0, -1.0, 0.0]);
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn evaluation_policy_epsilon_limits() {
        let env = Environment::new(
            EnvConfig {
                epsilon: 1.0,
                ..small_config()
            },
            2,
        )
        .unwrap();
        let row = env.evaluation_policy(&[0.0, 1.0, 0.0, 0.0]);
        assert!(row.iter().all(|&p| (p - 0.2).abs() < 1e-12));

        let env = Environment::new(
            EnvConfig {
                epsilon: 0.0,
                ..small_config()
            },
            2,
        )
        .unwrap();
        let row = env.evaluation_policy(&[0.0, 1.0, 0.0, 0.0]);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().any(|&p| p == 1.0));
    }

    #[test]
    fn evaluation_policy_reference_arithmetic() {
        let env = Environment::new(
            EnvConfig {
                n_actions: 10,
                epsilon: 0.05,
                ..EnvConfig::default()
            },
            4,
        )
        .unwrap();
        let x = vec![0.5; 10];
        let q = env.expected_reward_row(&x);
        let row = env.evaluation_policy(&x);
        let best = argmax(&q);
        assert!((row[best] - 0.955).abs() < 1e-12);
        for (a, &p) in row.iter().enumerate() {
            if a != best {
                assert!((p - 0.005).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_rewards_equal_expected_reward() {
        let env = Environment::new(
            EnvConfig {
                reward_noise_sd: 0.0,
                ..small_config()
            },
            8,
        )
        .unwrap();
        let ds = env.sample_logged_data(50, 1).unwrap();
        for s in &ds.samples {
            let q = env.expected_reward_xae(&s.context, s.action, &s.embedding);
            assert!((s.reward - q).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_behavior_action_frequencies() {
        // beta = 0 gives uniform logging; chi-square against uniform.
        let env = Environment::new(
            EnvConfig {
                beta: 0.0,
                ..small_config()
            },
            12,
        )
        .unwrap();
        let n = 10_000;
        let ds = env.sample_logged_data(n, 3).unwrap();
        let mut counts = vec![0usize; env.n_actions()];
        for s in &ds.samples {
            counts[s.action] += 1;
        }
        let expected = n as f64 / env.n_actions() as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 4 degrees of freedom; 26.0 is far beyond the 0.999 quantile.
        assert!(chi2 < 26.0, "chi2 = {chi2}");
    }

    #[test]
    fn dataset_sampling_is_deterministic() {
        let env = Environment::new(small_config(), 6).unwrap();
        let a = env.sample_logged_data(100, 5).unwrap();
        let b = env.sample_logged_data(100, 5).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_jsonl(&mut buf_a).unwrap();
        b.write_jsonl(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        let c = env.sample_logged_data(100, 6).unwrap();
        assert_ne!(a.samples[0].reward, c.samples[0].reward);
    }

    #[test]
    fn empty_dataset_request_rejected() {
        let env = Environment::new(small_config(), 6).unwrap();
        assert!(env.sample_logged_data(0, 1).is_err());
    }

    #[test]
    fn eta_is_a_simplex() {
        for seed in 0..20 {
            let env = Environment::new(small_config(), seed).unwrap();
            let sum: f64 = env.params().eta.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(env.params().eta.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn env_json_round_trip() {
        let dir = std::env::temp_dir().join("ope_lab_env_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("env.json");
        let env = Environment::new(
            EnvConfig {
                context_pool_size: Some(4),
                ..small_config()
            },
            77,
        )
        .unwrap();
        env.save_json(&path).unwrap();
        let back = Environment::load_json(&path).unwrap();
        assert_eq!(env.params().alpha, back.params().alpha);
        assert_eq!(env.params().pool, back.params().pool);
        let x = vec![0.1, 0.2, 0.3, 0.4];
        assert_eq!(env.expected_reward_xa(&x, 2), back.expected_reward_xa(&x, 2));
    }

    #[test]
    fn identity_embedding_is_near_point_mass() {
        let env = Environment::identity_embedding(
            EnvConfig {
                n_actions: 6,
                d_x: 3,
                ..EnvConfig::default()
            },
            1,
        )
        .unwrap();
        for a in 0..6 {
            assert!(env.embed_dist(a).dims[0][a] > 1.0 - 1e-9);
        }
    }

    #[test]
    fn embedding_support_check_small_env() {
        let env = Environment::new(small_config(), 14).unwrap();
        let contexts: Vec<Vec<f64>> = vec![vec![0.0, 0.1, 0.2, 0.3], vec![1.0, -1.0, 0.5, 0.0]];
        let (pi_b, pi_e) = env.policy_pair(&contexts);
        let check = check_common_embedding_support(&env, &pi_e, &pi_b, ENUMERATION_CAP).unwrap();
        assert!(check.holds);

        // Identical policies trivially hold.
        let mut pi_e2 = pi_b.clone();
        pi_e2.tag = PolicyTag::Evaluation;
        assert!(check_common_embedding_support(&env, &pi_e2, &pi_b, ENUMERATION_CAP)
            .unwrap()
            .holds);

        // Tiny cap triggers the capacity error.
        assert!(matches!(
            check_common_embedding_support(&env, &pi_e, &pi_b, 4),
            Err(OpeError::Capacity { .. })
        ));
    }

    #[test]
    fn embedding_support_violation_detected() {
        // Behavior mass only on action 0, whose embedding cannot reach
        // category 1; evaluation mass on action 1, which can.
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
            .with_alpha(vec![500.0, -500.0, -500.0, 500.0])
            .unwrap();
        let pi_b = PolicyMatrix {
            tag: PolicyTag::Behavior,
            rows: vec![vec![1.0, 0.0]],
        };
        let pi_e = PolicyMatrix {
            tag: PolicyTag::Evaluation,
            rows: vec![vec![0.0, 1.0]],
        };
        let check = check_common_embedding_support(&env, &pi_e, &pi_b, ENUMERATION_CAP).unwrap();
        assert!(!check.holds);
        assert!(!check.violations.is_empty());
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(Environment::new(
            EnvConfig {
                n_actions: 0,
                ..EnvConfig::default()
            },
            0
        )
        .is_err());
        assert!(Environment::new(
            EnvConfig {
                epsilon: 1.5,
                ..small_config()
            },
            0
        )
        .is_err());
        assert!(Environment::new(
            EnvConfig {
                cardinalities: vec![0, 3],
                ..small_config()
            },
            0
        )
        .is_err());
    }
}
