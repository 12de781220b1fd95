//! Ground-truth values, analytic variance formulas, the DR/MDR variance gap,
//! and the Monte Carlo replication harness.
//!
//! All expectations over the logging distribution are evaluated either
//! exactly (pool mode: finite sums over pool contexts, actions, and embedding
//! combinations) or by Monte Carlo over freshly drawn contexts with a
//! reported standard error.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{behavior_from_q, derive_seed, evaluation_from_q, Environment, ENUMERATION_CAP};
use crate::error::{OpeError, Result};
use crate::estimators::{kahan_mean, KahanSum};
use crate::model::{marginal_embedding_dist, product_space, LoggedSample};
use crate::regression::{fit_reward_model, marginalize_model, FeatureConfig};

/// Internal stream indices so oracle draws never collide with logging draws.
const ORACLE_CONTEXT_STREAM: u64 = 0x6f7261_636c_6531;
const DIRECT_EFFECT_CHECK_STREAM: u64 = 0x6f7261_636c_6532;

/// How to take expectations over the context distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VisitationMode {
    /// Exact finite sums over the environment's context pool.
    PoolExact,
    /// Average over freshly drawn contexts.
    MonteCarlo { n_contexts: usize },
}

/// An oracle value with its Monte Carlo uncertainty (0 in pool mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub standard_error: f64,
}

fn mode_contexts(env: &Environment, mode: VisitationMode) -> Result<Vec<Vec<f64>>> {
    match mode {
        VisitationMode::PoolExact => match env.pool() {
            Some(pool) => Ok(pool.to_vec()),
            None => Err(OpeError::Validation(
                "pool-exact mode requires an environment with a context pool".into(),
            )),
        },
        VisitationMode::MonteCarlo { n_contexts } => {
            if n_contexts < 2 {
                return Err(OpeError::Validation(
                    "monte-carlo mode needs at least 2 contexts".into(),
                ));
            }
            Ok(env.sample_contexts(n_contexts, ORACLE_CONTEXT_STREAM))
        }
    }
}

/// True policy value V(pi_e) = E_x[ sum_a pi_e(a|x) q(x, a) ].
pub fn true_value(
    env: &Environment,
    pi_e: impl Fn(&[f64]) -> Vec<f64>,
    mode: VisitationMode,
) -> Result<OracleValue> {
    let contexts = mode_contexts(env, mode)?;
    let mut acc = KahanSum::default();
    let mut sq = KahanSum::default();
    for x in &contexts {
        let q_row = env.expected_reward_row(x);
        let v = crate::env::dot(&pi_e(x), &q_row);
        acc.add(v);
        sq.add(v * v);
    }
    let n = contexts.len() as f64;
    let mean = acc.total() / n;
    let standard_error = match mode {
        VisitationMode::PoolExact => 0.0,
        VisitationMode::MonteCarlo { .. } => {
            let var = (sq.total() / n - mean * mean).max(0.0) * n / (n - 1.0);
            (var / n).sqrt()
        }
    };
    Ok(OracleValue {
        value: mean,
        standard_error,
    })
}

/// Conditional reward variance sigma^2(x, a) = V[r | x, a]. With Gaussian
/// noise this is sigma_r^2 plus the variance of q(x, e) over the action's
/// embedding draw, which is a sum of per-dimension category variances.
fn reward_variance_xa(env: &Environment, terms: &[f64], action: usize) -> f64 {
    let sd = env.config().reward_noise_sd;
    let eta = &env.params().eta;
    let mut var = sd * sd;
    let mut offset = 0usize;
    let dims = &env.embed_dist(action).dims;
    for (k, probs) in dims.iter().enumerate() {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (c, &p) in probs.iter().enumerate() {
            let s = terms[offset + c];
            m1 += p * s;
            m2 += p * s * s;
        }
        var += eta[k] * eta[k] * (m2 - m1 * m1).max(0.0);
        offset += probs.len();
    }
    var
}

/// Shared evaluator for the three-term IPS/DR variance decomposition:
/// n * V[estimate] = E[w^2 sigma^2] + V_x[E_pi_e[q]] + E_x[V_{a~pi_b}[w*delta]]
/// where delta is q for IPS and the model residual q - qhat for DR.
fn three_term_variance(
    env: &Environment,
    pi_e: impl Fn(&[f64]) -> Vec<f64>,
    qhat_xa: Option<&dyn Fn(&[f64], usize) -> f64>,
    mode: VisitationMode,
) -> Result<f64> {
    let contexts = mode_contexts(env, mode)?;
    let beta = env.config().beta;
    let mut t1 = KahanSum::default();
    let mut t3 = KahanSum::default();
    let mut val = KahanSum::default();
    let mut val_sq = KahanSum::default();
    for x in &contexts {
        let terms = env.reward_terms(x);
        let q_row = env.reward_row_from_terms(&terms, x);
        let pb = behavior_from_q(&q_row, beta);
        let pe = pi_e(x);
        let v = crate::env::dot(&pe, &q_row);
        val.add(v);
        val_sq.add(v * v);
        let mut noise = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for a in 0..q_row.len() {
            let w = pe[a] / pb[a];
            noise += pb[a] * w * w * reward_variance_xa(env, &terms, a);
            let delta = match qhat_xa {
                Some(qh) => q_row[a] - qh(x, a),
                None => q_row[a],
            };
            let wd = w * delta;
            m1 += pb[a] * wd;
            m2 += pb[a] * wd * wd;
        }
        t1.add(noise);
        t3.add((m2 - m1 * m1).max(0.0));
    }
    let n = contexts.len() as f64;
    let mean_val = val.total() / n;
    let ddof = match mode {
        VisitationMode::PoolExact => 0.0,
        VisitationMode::MonteCarlo { .. } => 1.0,
    };
    let v_x = (val_sq.total() / n - mean_val * mean_val).max(0.0) * n / (n - ddof);
    Ok(t1.total() / n + v_x + t3.total() / n)
}

/// n times the sampling variance of the IPS estimate.
pub fn analytic_variance_ips(
    env: &Environment,
    pi_e: impl Fn(&[f64]) -> Vec<f64>,
    mode: VisitationMode,
) -> Result<f64> {
    three_term_variance(env, pi_e, None, mode)
}

/// n times the sampling variance of the DR estimate under the given model.
pub fn analytic_variance_dr(
    env: &Environment,
    pi_e: impl Fn(&[f64]) -> Vec<f64>,
    qhat_xa: impl Fn(&[f64], usize) -> f64,
    mode: VisitationMode,
) -> Result<f64> {
    three_term_variance(env, pi_e, Some(&qhat_xa), mode)
}

/// Variance difference between DR and MDR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceGap {
    /// Exact n * (Var[DR] - Var[MDR]), from full first and second moments of
    /// the two per-sample statistics over the logging distribution.
    pub gap: f64,
    /// The squared-residual difference E[w(x,a)^2 delta(x,a)^2 -
    /// w(x,e)^2 delta(x,a,e)^2], which drops the reward-noise and
    /// within-action embedding contributions. Zero under an exact model.
    pub delta_only: f64,
}

/// Computes the DR/MDR variance gap by enumerating (context, action,
/// embedding) and integrating the Gaussian reward noise in closed form.
pub fn variance_gap_mdr(
    env: &Environment,
    pi_e: impl Fn(&[f64]) -> Vec<f64>,
    qhat_xa: impl Fn(&[f64], usize) -> f64,
    qhat_xae: impl Fn(&[f64], usize, &[usize]) -> f64,
    mode: VisitationMode,
) -> Result<VarianceGap> {
    let contexts = mode_contexts(env, mode)?;
    let cards = &env.config().cardinalities;
    let combos: u128 = cards.iter().map(|&c| c as u128).product();
    let total = contexts.len() as u128 * env.n_actions() as u128 * combos;
    if total > ENUMERATION_CAP as u128 {
        return Err(OpeError::Capacity {
            terms: total,
            cap: ENUMERATION_CAP,
        });
    }
    let beta = env.config().beta;
    let sd = env.config().reward_noise_sd;
    let noise_var = sd * sd;
    let dists = env.embed_dists();
    let e_space: Vec<Vec<usize>> = product_space(cards).collect();
    let cw = 1.0 / contexts.len() as f64;

    let mut dr_m1 = KahanSum::default();
    let mut dr_m2 = KahanSum::default();
    let mut mdr_m1 = KahanSum::default();
    let mut mdr_m2 = KahanSum::default();
    let mut delta_only = KahanSum::default();
    for x in &contexts {
        let terms = env.reward_terms(x);
        let q_row = env.reward_row_from_terms(&terms, x);
        let pb = behavior_from_q(&q_row, beta);
        let pe = pi_e(x);
        let qhat_row: Vec<f64> = (0..q_row.len()).map(|a| qhat_xa(x, a)).collect();
        let baseline = crate::env::dot(&pe, &qhat_row);
        // Marginal weights per embedding combination, shared across actions.
        let w_e: Vec<f64> = e_space
            .iter()
            .map(|e| {
                let num = marginal_embedding_dist(&pe, dists, e)?;
                let den = marginal_embedding_dist(&pb, dists, e)?;
                if den <= 0.0 {
                    return Err(OpeError::EmbeddingSupport(
                        "embedding combination unreachable under the behavior policy".into(),
                    ));
                }
                Ok(num / den)
            })
            .collect::<Result<_>>()?;
        for (a, &pb_a) in pb.iter().enumerate() {
            let w_a = pe[a] / pb_a;
            let d_xa = q_row[a] - qhat_row[a];
            for (idx, e) in e_space.iter().enumerate() {
                let p_e = env.embed_dist(a).prob(e);
                if p_e == 0.0 {
                    continue;
                }
                let weight = cw * pb_a * p_e;
                let q_xae = {
                    let lambda = env.config().direct_effect_strength;
                    let mut q = env.reward_xe_from_terms(&terms, e);
                    if lambda > 0.0 {
                        q += lambda * env.direct_effect(x, a);
                    }
                    q
                };
                let qh_xae = qhat_xae(x, a, e);
                let t_dr = baseline + w_a * (q_xae - qhat_row[a]);
                let t_mdr = baseline + w_e[idx] * (q_xae - qh_xae);
                dr_m1.add(weight * t_dr);
                dr_m2.add(weight * (t_dr * t_dr + w_a * w_a * noise_var));
                mdr_m1.add(weight * t_mdr);
                mdr_m2.add(weight * (t_mdr * t_mdr + w_e[idx] * w_e[idx] * noise_var));
                let d_xae = q_xae - qh_xae;
                delta_only
                    .add(weight * (w_a * w_a * d_xa * d_xa - w_e[idx] * w_e[idx] * d_xae * d_xae));
            }
        }
    }
    let var_dr = dr_m2.total() - dr_m1.total() * dr_m1.total();
    let var_mdr = mdr_m2.total() - mdr_m1.total() * mdr_m1.total();
    Ok(VarianceGap {
        gap: var_dr - var_mdr,
        delta_only: delta_only.total(),
    })
}

/// Structural and numerical check that actions affect rewards only through
/// their embedding distributions.
pub fn check_no_direct_effect(env: &Environment) -> bool {
    if env.config().direct_effect_strength != 0.0 {
        return false;
    }
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(derive_seed(
        env.seed(),
        DIRECT_EFFECT_CHECK_STREAM,
    ));
    let cfg = env.config();
    for _ in 0..10 {
        let x: Vec<f64> = (0..cfg.d_x)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let e: Vec<usize> = cfg
            .cardinalities
            .iter()
            .map(|&c| rng.random_range(0..c))
            .collect();
        for _ in 0..10 {
            let a1 = rng.random_range(0..cfg.n_actions);
            let a2 = rng.random_range(0..cfg.n_actions);
            let d = env.expected_reward_xae(&x, a1, &e) - env.expected_reward_xae(&x, a2, &e);
            if d.abs() > 1e-12 {
                return false;
            }
        }
    }
    true
}

/// The estimators the replication harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorName {
    Dm,
    Ips,
    Dr,
    Mips,
    Mdr,
}

impl EstimatorName {
    pub const ALL: [EstimatorName; 5] = [
        EstimatorName::Dm,
        EstimatorName::Ips,
        EstimatorName::Dr,
        EstimatorName::Mips,
        EstimatorName::Mdr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorName::Dm => "dm",
            EstimatorName::Ips => "ips",
            EstimatorName::Dr => "dr",
            EstimatorName::Mips => "mips",
            EstimatorName::Mdr => "mdr",
        }
    }
}

impl FromStr for EstimatorName {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dm" => Ok(EstimatorName::Dm),
            "ips" => Ok(EstimatorName::Ips),
            "dr" => Ok(EstimatorName::Dr),
            "mips" => Ok(EstimatorName::Mips),
            "mdr" => Ok(EstimatorName::Mdr),
            other => Err(OpeError::Validation(format!(
                "unknown estimator '{other}'; expected dm, ips, dr, mips, or mdr"
            ))),
        }
    }
}

/// How the reward model is obtained for the model-based estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QhatSpec {
    /// No model: DM estimates 0, DR reduces to IPS, MDR reduces to MIPS.
    Zero,
    /// Fixed model qhat = scale * q, using the environment's true rewards.
    /// scale = 1 is the exact model; other values are misspecified.
    ScaledTrue { scale: f64 },
    /// Ridge regression refit on each replication's logged data.
    Refit {
        ridge_lambda: f64,
        features: FeatureConfig,
    },
}

/// One replication study: which estimators, which model, and how much data.
#[derive(Debug, Clone)]
pub struct EvalPlan {
    pub estimators: Vec<EstimatorName>,
    pub qhat: QhatSpec,
    pub n_samples: usize,
    pub replications: usize,
    pub base_seed: u64,
    pub oracle_mode: VisitationMode,
}

/// Replication statistics for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: String,
    pub replications: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub failures: usize,
}

/// Bias/variance/MSE of each requested estimator against the oracle value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub true_value: f64,
    pub true_value_se: f64,
    pub n_samples: usize,
    pub estimators: Vec<EstimatorReport>,
}

/// Per-context quantities reused across samples that share a context.
struct CtxData {
    terms: Vec<f64>,
    q_row: Vec<f64>,
    pb_row: Vec<f64>,
    pe_row: Vec<f64>,
    /// Marginal weight per flattened embedding combination, when the
    /// combination count is small enough to tabulate.
    w_e_table: Option<Vec<f64>>,
}

const W_E_TABLE_LIMIT: usize = 4096;

fn build_ctx(env: &Environment, x: &[f64], tabulate: bool) -> Result<CtxData> {
    let cfg = env.config();
    let terms = env.reward_terms(x);
    let q_row = env.reward_row_from_terms(&terms, x);
    let pb_row = behavior_from_q(&q_row, cfg.beta);
    let pe_row = evaluation_from_q(&q_row, cfg.epsilon);
    let combos: usize = cfg.cardinalities.iter().product();
    let w_e_table = if tabulate && combos <= W_E_TABLE_LIMIT {
        let dists = env.embed_dists();
        let mut table = Vec::with_capacity(combos);
        for e in product_space(&cfg.cardinalities) {
            let num = marginal_embedding_dist(&pe_row, dists, &e)?;
            let den = marginal_embedding_dist(&pb_row, dists, &e)?;
            if den <= 0.0 {
                return Err(OpeError::EmbeddingSupport(
                    "embedding combination unreachable under the behavior policy".into(),
                ));
            }
            table.push(num / den);
        }
        Some(table)
    } else {
        None
    };
    Ok(CtxData {
        terms,
        q_row,
        pb_row,
        pe_row,
        w_e_table,
    })
}

fn flat_embedding_index(cardinalities: &[usize], e: &[usize]) -> usize {
    let mut idx = 0usize;
    for (k, &c) in e.iter().enumerate() {
        idx = idx * cardinalities[k] + c;
    }
    idx
}

fn marginal_weight(env: &Environment, ctx: &CtxData, e: &[usize]) -> Result<f64> {
    if let Some(table) = &ctx.w_e_table {
        return Ok(table[flat_embedding_index(&env.config().cardinalities, e)]);
    }
    let dists = env.embed_dists();
    let num = marginal_embedding_dist(&ctx.pe_row, dists, e)?;
    let den = marginal_embedding_dist(&ctx.pb_row, dists, e)?;
    if den <= 0.0 {
        return Err(OpeError::EmbeddingSupport(
            "logged embedding has zero probability under the behavior policy".into(),
        ));
    }
    Ok(num / den)
}

/// Pool-context cache with exact-match lookup.
struct PoolCache {
    contexts: Vec<Vec<f64>>,
    data: Vec<CtxData>,
}

impl PoolCache {
    fn build(env: &Environment) -> Result<Option<Self>> {
        match env.pool() {
            None => Ok(None),
            Some(pool) => {
                let contexts: Vec<Vec<f64>> = pool.to_vec();
                let data = contexts
                    .iter()
                    .map(|x| build_ctx(env, x, true))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Some(PoolCache { contexts, data }))
            }
        }
    }

    fn lookup(&self, x: &[f64]) -> Result<&CtxData> {
        self.contexts
            .iter()
            .position(|c| c.as_slice() == x)
            .map(|i| &self.data[i])
            .ok_or_else(|| {
                OpeError::Validation("sample context is not a member of the pool".into())
            })
    }
}

/// The per-sample model values needed by DM, DR, and MDR.
struct ModelValues {
    baseline: f64,
    qhat_at_action: f64,
    qhat_at_embedding: f64,
}

fn model_values(
    env: &Environment,
    spec: &QhatSpec,
    marg: Option<&crate::regression::MarginalizedModel>,
    ctx: &CtxData,
    s: &LoggedSample,
) -> Result<ModelValues> {
    match spec {
        QhatSpec::Zero => Ok(ModelValues {
            baseline: 0.0,
            qhat_at_action: 0.0,
            qhat_at_embedding: 0.0,
        }),
        QhatSpec::ScaledTrue { scale } => {
            let lambda = env.config().direct_effect_strength;
            let mut q_xae = env.reward_xe_from_terms(&ctx.terms, &s.embedding);
            if lambda > 0.0 {
                q_xae += lambda * env.direct_effect(&s.context, s.action);
            }
            Ok(ModelValues {
                baseline: scale * crate::env::dot(&ctx.pe_row, &ctx.q_row),
                qhat_at_action: scale * ctx.q_row[s.action],
                qhat_at_embedding: scale * q_xae,
            })
        }
        QhatSpec::Refit { .. } => {
            let marg = marg.ok_or_else(|| {
                OpeError::Validation("refit plan reached estimation without a model".into())
            })?;
            let base = marg.context_part(&s.context)
                + crate::env::dot(&ctx.pe_row, marg.action_part());
            Ok(ModelValues {
                baseline: base,
                qhat_at_action: marg.predict_xa(&s.context, s.action),
                qhat_at_embedding: marg.predict_xae(&s.context, s.action, &s.embedding),
            })
        }
    }
}

/// Runs one replication and returns estimates aligned with
/// `plan.estimators`. Shares per-sample statistics across estimators.
fn run_replication(
    env: &Environment,
    plan: &EvalPlan,
    pool: Option<&PoolCache>,
    rep: usize,
) -> Result<Vec<f64>> {
    let ds = env.sample_logged_data(plan.n_samples, derive_seed(plan.base_seed, rep as u64))?;
    let needs_model = plan.estimators.iter().any(|e| {
        matches!(
            e,
            EstimatorName::Dm | EstimatorName::Dr | EstimatorName::Mdr
        )
    });
    let needs_marginal = plan
        .estimators
        .iter()
        .any(|e| matches!(e, EstimatorName::Mips | EstimatorName::Mdr));
    let marg = match (&plan.qhat, needs_model) {
        (QhatSpec::Refit { ridge_lambda, features }, true) => {
            let model = fit_reward_model(&ds, *features, *ridge_lambda)?;
            Some(marginalize_model(env, &model)?)
        }
        _ => None,
    };
    let mut sums: Vec<KahanSum> = vec![KahanSum::default(); plan.estimators.len()];
    for s in &ds.samples {
        let fresh;
        let ctx: &CtxData = match pool {
            Some(cache) => cache.lookup(&s.context)?,
            None => {
                fresh = build_ctx(env, &s.context, false)?;
                &fresh
            }
        };
        let w_a = ctx.pe_row[s.action] / s.behavior_propensity;
        let w_e = if needs_marginal {
            marginal_weight(env, ctx, &s.embedding)?
        } else {
            0.0
        };
        let mv = if needs_model {
            model_values(env, &plan.qhat, marg.as_ref(), ctx, s)?
        } else {
            ModelValues {
                baseline: 0.0,
                qhat_at_action: 0.0,
                qhat_at_embedding: 0.0,
            }
        };
        for (j, est) in plan.estimators.iter().enumerate() {
            let v = match est {
                EstimatorName::Dm => mv.baseline,
                EstimatorName::Ips => w_a * s.reward,
                EstimatorName::Dr => mv.baseline + w_a * (s.reward - mv.qhat_at_action),
                EstimatorName::Mips => w_e * s.reward,
                EstimatorName::Mdr => {
                    mv.baseline + w_e * (s.reward - mv.qhat_at_embedding)
                }
            };
            sums[j].add(v);
        }
    }
    let n = ds.samples.len() as f64;
    Ok(sums.iter().map(|s| s.total() / n).collect())
}

/// Raw per-replication estimates, row per replication in the order of
/// `plan.estimators`. Same fast path as `monte_carlo_eval`, but exposes the
/// individual estimates for custom uncertainty analysis.
pub fn replication_estimates(env: &Environment, plan: &EvalPlan) -> Result<Vec<Vec<f64>>> {
    let pool = PoolCache::build(env)?;
    (0..plan.replications)
        .map(|rep| run_replication(env, plan, pool.as_ref(), rep))
        .collect()
}

/// Replication study: repeatedly log data, estimate, and aggregate
/// bias/variance/MSE against the oracle value. Deterministic given the plan.
pub fn monte_carlo_eval(env: &Environment, plan: &EvalPlan) -> Result<EvalReport> {
    if plan.replications < 2 {
        return Err(OpeError::Validation("need at least 2 replications".into()));
    }
    if plan.estimators.is_empty() {
        return Err(OpeError::Validation("no estimators requested".into()));
    }
    let oracle = true_value(env, |x| env.evaluation_policy(x), plan.oracle_mode)?;
    let pool = PoolCache::build(env)?;
    let mut estimates: Vec<Vec<f64>> = vec![Vec::with_capacity(plan.replications); plan.estimators.len()];
    let mut failures = 0usize;
    for rep in 0..plan.replications {
        match run_replication(env, plan, pool.as_ref(), rep) {
            Ok(values) => {
                for (j, v) in values.into_iter().enumerate() {
                    estimates[j].push(v);
                }
            }
            Err(_) => failures += 1,
        }
    }
    let mut reports = Vec::with_capacity(plan.estimators.len());
    for (j, est) in plan.estimators.iter().enumerate() {
        let vals = &estimates[j];
        if vals.len() < 2 {
            return Err(OpeError::Numerical(format!(
                "estimator {} failed on {} of {} replications",
                est.as_str(),
                failures,
                plan.replications
            )));
        }
        let (mean, r) = kahan_mean(vals.iter().copied());
        let mut sq = KahanSum::default();
        for &v in vals {
            let d = v - mean;
            sq.add(d * d);
        }
        let variance = sq.total() / (r as f64 - 1.0);
        let bias = mean - oracle.value;
        reports.push(EstimatorReport {
            estimator: est.as_str().to_string(),
            replications: r,
            mean_estimate: mean,
            bias,
            variance,
            mse: bias * bias + variance,
            failures,
        });
    }
    Ok(EvalReport {
        true_value: oracle.value,
        true_value_se: oracle.standard_error,
        n_samples: plan.n_samples,
        estimators: reports,
    })
}
