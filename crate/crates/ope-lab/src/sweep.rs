//! Sweep driver: parse a run configuration, evaluate every estimator across
//! an action-space grid, and emit CSV, summary, and SVG artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{derive_seed, EnvConfig, Environment};
use crate::error::{OpeError, Result};
use crate::oracle::{
    monte_carlo_eval, true_value, EstimatorName, EvalPlan, OracleValue, QhatSpec, VisitationMode,
};
use crate::regression::FeatureConfig;
use crate::svg::{line_chart, Series};

/// How the sweep obtains the reward model on each replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QhatMode {
    /// Ridge regression refit per replication.
    Refit,
    /// No model at all.
    Zero,
    /// Fixed model equal to `qhat_scale` times the true expected reward.
    Scaled,
}

/// Flat run configuration, read from a TOML file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Action-space sizes to sweep, ascending.
    #[serde(default)]
    pub action_space_grid: Vec<usize>,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_replications")]
    pub n_replications: usize,
    #[serde(default = "default_d_x")]
    pub d_x: usize,
    #[serde(default = "default_d_e")]
    pub d_e: usize,
    /// Embedding cardinalities; empty means 10 per dimension.
    #[serde(default)]
    pub cardinalities: Vec<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_noise")]
    pub reward_noise_sd: f64,
    #[serde(default)]
    pub direct_effect_strength: f64,
    #[serde(default = "default_ridge")]
    pub ridge_lambda: f64,
    /// Adds per-action one-hot features to the regression.
    #[serde(default)]
    pub action_onehot: bool,
    #[serde(default = "default_qhat_mode")]
    pub qhat_mode: QhatMode,
    #[serde(default = "default_qhat_scale")]
    pub qhat_scale: f64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default)]
    pub base_seed: u64,
    /// When set, contexts come from a fixed pool of this size and oracle
    /// values are exact.
    #[serde(default)]
    pub context_pool_size: Option<usize>,
    /// Context draws for the Monte Carlo oracle when no pool is configured.
    #[serde(default = "default_oracle_contexts")]
    pub oracle_contexts: usize,
}

fn default_n_samples() -> usize {
    10_000
}
fn default_replications() -> usize {
    100
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
fn default_ridge() -> f64 {
    1.0
}
fn default_qhat_mode() -> QhatMode {
    QhatMode::Refit
}
fn default_qhat_scale() -> f64 {
    1.0
}
fn default_estimators() -> Vec<String> {
    EstimatorName::ALL.iter().map(|e| e.as_str().to_string()).collect()
}
fn default_oracle_contexts() -> usize {
    200_000
}

impl Default for SweepConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config deserializes to defaults")
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.action_space_grid.is_empty() {
            return Err(OpeError::Validation(
                "action_space_grid must be a non-empty ascending list".into(),
            ));
        }
        if self.action_space_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(OpeError::Validation(
                "action_space_grid must be strictly ascending".into(),
            ));
        }
        if self.n_replications < 2 {
            return Err(OpeError::Validation("n_replications must be >= 2".into()));
        }
        if self.n_samples < 1 {
            return Err(OpeError::Validation("n_samples must be >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(OpeError::Validation("estimators must be non-empty".into()));
        }
        self.estimator_names()?;
        if !(self.qhat_scale.is_finite()) {
            return Err(OpeError::Validation("qhat_scale must be finite".into()));
        }
        if self.context_pool_size.is_none() && self.oracle_contexts < 2 {
            return Err(OpeError::Validation("oracle_contexts must be >= 2".into()));
        }
        // Reuse the environment bounds checks for the shared fields.
        self.env_config(self.action_space_grid[0]).normalize()?;
        Ok(())
    }

    pub fn estimator_names(&self) -> Result<Vec<EstimatorName>> {
        let mut names = Vec::with_capacity(self.estimators.len());
        for s in &self.estimators {
            let name: EstimatorName = s.parse()?;
            if names.contains(&name) {
                return Err(OpeError::Validation(format!("duplicate estimator '{s}'")));
            }
            names.push(name);
        }
        Ok(names)
    }

    pub fn env_config(&self, n_actions: usize) -> EnvConfig {
        EnvConfig {
            n_actions,
            d_x: self.d_x,
            d_e: self.d_e,
            cardinalities: self.cardinalities.clone(),
            beta: self.beta,
            epsilon: self.epsilon,
            reward_noise_sd: self.reward_noise_sd,
            direct_effect_strength: self.direct_effect_strength,
            context_pool_size: self.context_pool_size,
        }
    }

    pub fn qhat_spec(&self) -> QhatSpec {
        match self.qhat_mode {
            QhatMode::Zero => QhatSpec::Zero,
            QhatMode::Scaled => QhatSpec::ScaledTrue {
                scale: self.qhat_scale,
            },
            QhatMode::Refit => QhatSpec::Refit {
                ridge_lambda: self.ridge_lambda,
                features: FeatureConfig {
                    action_onehot: self.action_onehot,
                },
            },
        }
    }

    pub fn oracle_mode(&self) -> VisitationMode {
        match self.context_pool_size {
            Some(_) => VisitationMode::PoolExact,
            None => VisitationMode::MonteCarlo {
                n_contexts: self.oracle_contexts,
            },
        }
    }
}

/// Reads and validates a TOML config file.
pub fn parse_config(path: &Path) -> Result<SweepConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: SweepConfig = toml::from_str(&text)
        .map_err(|e| OpeError::Validation(format!("config parse error: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// One CSV row of replication statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub estimator: String,
    pub n_actions: usize,
    pub n_samples: usize,
    pub n_replications: usize,
    pub true_value: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub failures: usize,
}

/// Sweep output: one row per (action-space size, estimator), sorted by
/// (n_actions, estimator).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

pub const CSV_HEADER: &str =
    "estimator,n_actions,n_samples,n_replications,true_value,mean_estimate,bias,variance,mse,failures";

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.estimator,
                r.n_actions,
                r.n_samples,
                r.n_replications,
                r.true_value,
                r.mean_estimate,
                r.bias,
                r.variance,
                r.mse,
                r.failures
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == CSV_HEADER => {}
            _ => return Err(OpeError::Validation("unrecognized CSV header".into())),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(OpeError::Validation(format!(
                    "row {}: expected 10 fields, got {}",
                    i + 1,
                    f.len()
                )));
            }
            let parse_err =
                |what: &str| OpeError::Validation(format!("row {}: bad {what}", i + 1));
            rows.push(ResultRow {
                estimator: f[0].to_string(),
                n_actions: f[1].parse().map_err(|_| parse_err("n_actions"))?,
                n_samples: f[2].parse().map_err(|_| parse_err("n_samples"))?,
                n_replications: f[3].parse().map_err(|_| parse_err("n_replications"))?,
                true_value: f[4].parse().map_err(|_| parse_err("true_value"))?,
                mean_estimate: f[5].parse().map_err(|_| parse_err("mean_estimate"))?,
                bias: f[6].parse().map_err(|_| parse_err("bias"))?,
                variance: f[7].parse().map_err(|_| parse_err("variance"))?,
                mse: f[8].parse().map_err(|_| parse_err("mse"))?,
                failures: f[9].parse().map_err(|_| parse_err("failures"))?,
            });
        }
        Ok(ResultTable { rows })
    }
}

/// Builds the environment for one grid cell. Each cell gets its own seed
/// stream so cells are independent of grid order.
pub fn cell_environment(config: &SweepConfig, n_actions: usize) -> Result<Environment> {
    Environment::new(
        config.env_config(n_actions),
        derive_seed(config.base_seed, n_actions as u64),
    )
}

/// Oracle value for one grid cell, using the configured visitation mode.
pub fn cell_true_value(config: &SweepConfig, n_actions: usize) -> Result<OracleValue> {
    let env = cell_environment(config, n_actions)?;
    true_value(&env, |x| env.evaluation_policy(x), config.oracle_mode())
}

/// Runs the full grid, reporting progress to standard error.
pub fn run_sweep(config: &SweepConfig) -> Result<ResultTable> {
    config.validate()?;
    let estimators = config.estimator_names()?;
    let mut rows = Vec::new();
    for &n_actions in &config.action_space_grid {
        eprintln!(
            "[sweep] |A|={n_actions}: {} replications of n={}",
            config.n_replications, config.n_samples
        );
        let env = cell_environment(config, n_actions)?;
        let plan = EvalPlan {
            estimators: estimators.clone(),
            qhat: config.qhat_spec(),
            n_samples: config.n_samples,
            replications: config.n_replications,
            base_seed: config.base_seed,
            oracle_mode: config.oracle_mode(),
        };
        let report = monte_carlo_eval(&env, &plan)?;
        for est in &report.estimators {
            rows.push(ResultRow {
                estimator: est.estimator.clone(),
                n_actions,
                n_samples: config.n_samples,
                n_replications: est.replications,
                true_value: report.true_value,
                mean_estimate: est.mean_estimate,
                bias: est.bias,
                variance: est.variance,
                mse: est.mse,
                failures: est.failures,
            });
        }
    }
    rows.sort_by(|a, b| {
        (a.n_actions, a.estimator.as_str()).cmp(&(b.n_actions, b.estimator.as_str()))
    });
    Ok(ResultTable { rows })
}

fn summary_text(table: &ResultTable) -> String {
    let mut out = String::from("Estimator ranking by MSE (best first)\n");
    let mut sizes: Vec<usize> = table.rows.iter().map(|r| r.n_actions).collect();
    sizes.sort_unstable();
    sizes.dedup();
    for a in sizes {
        let mut cell: Vec<&ResultRow> =
            table.rows.iter().filter(|r| r.n_actions == a).collect();
        cell.sort_by(|x, y| x.mse.total_cmp(&y.mse));
        let _ = writeln!(out, "\n|A| = {a}");
        for r in cell {
            let _ = writeln!(
                out,
                "  {:<5} mse={:.6e}  bias={:+.6e}  variance={:.6e}",
                r.estimator, r.mse, r.bias, r.variance
            );
        }
    }
    out
}

fn chart_series(table: &ResultTable, value: impl Fn(&ResultRow) -> f64) -> Vec<Series> {
    let mut names: Vec<String> = table.rows.iter().map(|r| r.estimator.clone()).collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .map(|name| {
            let mut points: Vec<(f64, f64)> = table
                .rows
                .iter()
                .filter(|r| r.estimator == name)
                // Clamp for the log scale; exact zeros would be unplottable.
                .map(|r| (r.n_actions as f64, value(r).max(1e-12)))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { name, points }
        })
        .collect()
}

/// Writes results.csv, summary.txt, and the three charts. Returns the paths.
pub fn emit_report(table: &ResultTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if table.rows.is_empty() {
        return Err(OpeError::Validation("no rows to report".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    let csv = out_dir.join("results.csv");
    std::fs::write(&csv, table.to_csv())?;
    paths.push(csv);
    let summary = out_dir.join("summary.txt");
    std::fs::write(&summary, summary_text(table))?;
    paths.push(summary);
    let charts = [
        ("mse.svg", "MSE", &(|r: &ResultRow| r.mse) as &dyn Fn(&ResultRow) -> f64),
        ("bias.svg", "|bias|", &|r: &ResultRow| r.bias.abs()),
        ("variance.svg", "variance", &|r: &ResultRow| r.variance),
    ];
    for (file, label, value) in charts {
        let svg = line_chart(
            &format!("{label} vs action-space size"),
            "number of actions",
            label,
            &chart_series(table, value),
        );
        let path = out_dir.join(file);
        std::fs::write(&path, svg)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, text: &str) -> PathBuf {
        let path = dir.join("config.toml");
        std::fs::write(&path, text).unwrap();
        path
    }

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("ope_lab_sweep_{tag}"));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn empty_config_requires_grid() {
        let dir = tmpdir("empty");
        let path = write_config(&dir, "");
        let err = parse_config(&path).unwrap_err();
        assert!(err.to_string().contains("action_space_grid"), "{err}");
    }

    #[test]
    fn epsilon_out_of_range_rejected() {
        let dir = tmpdir("eps");
        let path = write_config(&dir, "action_space_grid = [10]\nepsilon = 1.5\n");
        assert!(matches!(parse_config(&path), Err(OpeError::Validation(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tmpdir("unknown");
        let path = write_config(&dir, "action_space_grid = [10]\nbogus_key = 3\n");
        assert!(matches!(parse_config(&path), Err(OpeError::Validation(_))));
    }

    #[test]
    fn config_round_trip_is_identity() {
        let dir = tmpdir("roundtrip");
        let path = write_config(
            &dir,
            "action_space_grid = [10, 20]\nn_replications = 5\nbeta = 0.5\nqhat_mode = \"scaled\"\nqhat_scale = 0.5\n",
        );
        let first = parse_config(&path).unwrap();
        let rendered = toml::to_string(&first).unwrap();
        let path2 = dir.join("rendered.toml");
        std::fs::write(&path2, rendered).unwrap();
        let second = parse_config(&path2).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn grid_must_ascend() {
        let cfg = SweepConfig {
            action_space_grid: vec![100, 10],
            ..SweepConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    fn small_sweep_config() -> SweepConfig {
        SweepConfig {
            action_space_grid: vec![4, 8],
            n_samples: 60,
            n_replications: 3,
            d_x: 3,
            d_e: 2,
            cardinalities: vec![3, 3],
            context_pool_size: Some(5),
            qhat_mode: QhatMode::Scaled,
            qhat_scale: 0.5,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn single_cell_single_estimator_is_one_row() {
        let cfg = SweepConfig {
            action_space_grid: vec![4],
            estimators: vec!["ips".into()],
            n_replications: 2,
            ..small_sweep_config()
        };
        let table = run_sweep(&cfg).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].estimator, "ips");
        assert_eq!(table.rows[0].n_actions, 4);
    }

    #[test]
    fn sweep_is_deterministic_and_csv_round_trips() {
        let cfg = small_sweep_config();
        let a = run_sweep(&cfg).unwrap();
        let b = run_sweep(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 2 * 5);
        let parsed = ResultTable::from_csv(&a.to_csv()).unwrap();
        assert_eq!(parsed, a);
        for r in &a.rows {
            assert!((r.mse - (r.bias * r.bias + r.variance)).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_sorted_by_size_then_name() {
        let cfg = small_sweep_config();
        let table = run_sweep(&cfg).unwrap();
        let keys: Vec<(usize, &str)> = table
            .rows
            .iter()
            .map(|r| (r.n_actions, r.estimator.as_str()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn emit_report_writes_all_artifacts() {
        let cfg = small_sweep_config();
        let table = run_sweep(&cfg).unwrap();
        let dir = tmpdir("emit");
        let paths = emit_report(&table, &dir).unwrap();
        assert_eq!(paths.len(), 5);
        for p in &paths {
            assert!(p.exists(), "{p:?} missing");
            assert!(std::fs::metadata(p).unwrap().len() > 0);
        }
        let csv = std::fs::read_to_string(dir.join("results.csv")).unwrap();
        assert_eq!(ResultTable::from_csv(&csv).unwrap(), table);
    }
}
