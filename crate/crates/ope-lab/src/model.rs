//! Domain types for logged bandit data and policies, plus support checks.
//!
//! A policy is a per-context probability row over actions. Logged data is a
//! list of `(x, a, e, r)` tuples with the behavior propensity recorded at
//! logging time, so estimators never need access to the generating process.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};

/// Tolerance for policy-row normalization checks.
pub const POLICY_ROW_TOL: f64 = 1e-12;

/// Which side of the logging process a policy plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTag {
    Behavior,
    Evaluation,
}

/// Per-context probability distributions over actions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyMatrix {
    pub tag: PolicyTag,
    pub rows: Vec<Vec<f64>>,
}

impl PolicyMatrix {
    pub fn new(tag: PolicyTag, rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { tag, rows };
        m.validate()?;
        Ok(m)
    }

    pub fn n_actions(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let width = self.n_actions();
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != width {
                return Err(OpeError::Shape(format!(
                    "policy row {i} has {} entries, expected {width}",
                    row.len()
                )));
            }
            let mut sum = 0.0;
            for &p in row {
                if !p.is_finite() || p < 0.0 {
                    return Err(OpeError::Validation(format!(
                        "policy row {i} contains invalid probability {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > POLICY_ROW_TOL {
                return Err(OpeError::Validation(format!(
                    "policy row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// One logged interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedSample {
    /// Context features.
    #[serde(rename = "x")]
    pub context: Vec<f64>,
    /// Logged action index.
    #[serde(rename = "a")]
    pub action: usize,
    /// Observed embedding, one category index per dimension.
    #[serde(rename = "e")]
    pub embedding: Vec<usize>,
    /// Observed reward.
    #[serde(rename = "r")]
    pub reward: f64,
    /// Behavior propensity pi_b(a|x) recorded at logging time.
    #[serde(rename = "pb")]
    pub behavior_propensity: f64,
}

/// Dataset-level metadata, written as the JSONL header line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub n_actions: usize,
    pub d_x: usize,
    pub d_e: usize,
    pub cardinalities: Vec<usize>,
    pub seed: u64,
}

/// Logged bandit dataset: i.i.d. samples plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    pub meta: DatasetMeta,
    pub samples: Vec<LoggedSample>,
}

impl LoggedDataset {
    pub fn validate(&self) -> Result<()> {
        if self.meta.n != self.samples.len() {
            return Err(OpeError::Shape(format!(
                "meta.n = {} but {} samples present",
                self.meta.n,
                self.samples.len()
            )));
        }
        if self.meta.cardinalities.len() != self.meta.d_e {
            return Err(OpeError::Shape("cardinalities length != d_e".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.context.len() != self.meta.d_x {
                return Err(OpeError::Shape(format!("sample {i}: context dim mismatch")));
            }
            if s.action >= self.meta.n_actions {
                return Err(OpeError::Shape(format!("sample {i}: action out of range")));
            }
            if s.embedding.len() != self.meta.d_e {
                return Err(OpeError::Shape(format!("sample {i}: embedding dim mismatch")));
            }
            for (k, (&c, &card)) in s
                .embedding
                .iter()
                .zip(&self.meta.cardinalities)
                .enumerate()
            {
                if c >= card {
                    return Err(OpeError::Shape(format!(
                        "sample {i}: embedding dim {k} category {c} >= {card}"
                    )));
                }
            }
            if !(s.behavior_propensity > 0.0) {
                return Err(OpeError::SupportViolation(format!(
                    "sample {i}: behavior propensity {} not positive",
                    s.behavior_propensity
                )));
            }
            if !s.reward.is_finite() {
                return Err(OpeError::Validation(format!("sample {i}: reward not finite")));
            }
        }
        Ok(())
    }

    /// Serializes as JSONL: a meta header line followed by one sample per line.
    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer(&mut w, &self.meta)?;
        writeln!(w)?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: std::io::Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| OpeError::Serde("empty JSONL input".into()))??;
        let meta: DatasetMeta = serde_json::from_str(&header)?;
        let mut samples = Vec::with_capacity(meta.n);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(serde_json::from_str(&line)?);
        }
        let ds = Self { meta, samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_jsonl(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(std::fs::File::open(path)?)
    }
}

/// Factored categorical distribution over an embedding vector: one
/// independent categorical per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedDistTable {
    /// `dims[k][c]` = probability of category `c` in dimension `k`.
    pub dims: Vec<Vec<f64>>,
}

impl EmbedDistTable {
    /// Joint probability of the embedding vector `e` under the product form.
    pub fn prob(&self, e: &[usize]) -> f64 {
        self.dims
            .iter()
            .zip(e)
            .map(|(probs, &c)| probs[c])
            .product()
    }
}

/// Outcome of a support check: `violations` lists every failing
/// (context index, action or flattened embedding index) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportCheck {
    pub holds: bool,
    pub violations: Vec<(usize, usize)>,
}

/// Checks common support: pi_e(a|x) > 0 implies pi_b(a|x) > 0 for every
/// context row and action.
pub fn check_common_support(pi_e: &PolicyMatrix, pi_b: &PolicyMatrix) -> Result<SupportCheck> {
    if pi_e.rows.len() != pi_b.rows.len() || pi_e.n_actions() != pi_b.n_actions() {
        return Err(OpeError::Shape(format!(
            "policy matrices disagree: {}x{} vs {}x{}",
            pi_e.rows.len(),
            pi_e.n_actions(),
            pi_b.rows.len(),
            pi_b.n_actions()
        )));
    }
    let mut violations = Vec::new();
    for (i, (re, rb)) in pi_e.rows.iter().zip(&pi_b.rows).enumerate() {
        for (a, (&pe, &pb)) in re.iter().zip(rb).enumerate() {
            if pe > 0.0 && pb <= 0.0 {
                violations.push((i, a));
            }
        }
    }
    Ok(SupportCheck {
        holds: violations.is_empty(),
        violations,
    })
}

/// Marginal probability of embedding `e` under a policy row:
/// sum over actions of pi(a|x) * prod_k p(e_k|x,a).
pub fn marginal_embedding_dist(
    policy_row: &[f64],
    embed_dists: &[EmbedDistTable],
    e: &[usize],
) -> Result<f64> {
    if policy_row.len() != embed_dists.len() {
        return Err(OpeError::Shape(format!(
            "policy row has {} actions but {} embedding tables given",
            policy_row.len(),
            embed_dists.len()
        )));
    }
    let mut total = 0.0;
    for (&pi, table) in policy_row.iter().zip(embed_dists) {
        if pi > 0.0 {
            total += pi * table.prob(e);
        }
    }
    Ok(total)
}

/// Iterates the full product embedding space given per-dimension cardinalities.
pub fn product_space(cardinalities: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = cardinalities.iter().product();
    (0..total).map(move |mut idx| {
        let mut e = vec![0usize; cardinalities.len()];
        for (k, &card) in cardinalities.iter().enumerate().rev() {
            e[k] = idx % card;
            idx /= card;
        }
        e
    })
}
