//! Report rows, summaries and JSON/CSV output.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::median;
use crate::metrics::{ConditioningReport, PortfolioStats};
use crate::model::ModelKind;
use crate::sketch::SketchKind;

/// Keys whose values depend on wall-clock time.
pub const TIMING_KEYS: [&str; 2] = ["timing", "wall_time"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Model construction, seconds (median over timed repetitions).
    pub build_time: f64,
    pub solve_time: f64,
    pub total_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RowParams {
    pub n: usize,
    pub t: usize,
    pub sketch_kind: Option<SketchKind>,
    pub s: Option<usize>,
    pub ell: Option<usize>,
    pub eta: Option<f64>,
    pub s_over_ell: Option<f64>,
    pub gamma: f64,
    pub gamma_fraction: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSeeds {
    pub instance: u64,
    pub sketch: Option<u64>,
    pub mu: Option<u64>,
    pub solver: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: ModelKind,
    pub repetition: usize,
    pub params: RowParams,
    pub seeds: RowSeeds,
    pub iterations: Option<usize>,
    pub objective: Option<f64>,
    pub model_gap: Option<f64>,
    pub full_model_gap: Option<f64>,
    pub rel_spectral_error: Option<f64>,
    pub conditioning: Option<ConditioningReport>,
    pub portfolio_stats: Option<PortfolioStats>,
    /// Experiment-specific scalars, e.g. fitted rates.
    pub extra: BTreeMap<String, f64>,
    /// Set when the row failed; other metrics are then absent.
    pub error: Option<String>,
    pub timing: Timing,
}

impl BenchRow {
    pub fn new(model: ModelKind, repetition: usize, params: RowParams, seeds: RowSeeds) -> Self {
        Self {
            model,
            repetition,
            params,
            seeds,
            iterations: None,
            objective: None,
            model_gap: None,
            full_model_gap: None,
            rel_spectral_error: None,
            conditioning: None,
            portfolio_stats: None,
            extra: BTreeMap::new(),
            error: None,
            timing: Timing::default(),
        }
    }

    pub fn failed(mut self, err: impl std::fmt::Display) -> Self {
        self.error = Some(err.to_string());
        self
    }
}

/// Medians of a group of rows sharing model and sweep coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: ModelKind,
    pub sketch_kind: Option<SketchKind>,
    pub eta: Option<f64>,
    pub s_over_ell: Option<f64>,
    pub gamma_fraction: Option<f64>,
    pub n: usize,
    pub count: usize,
    pub median_rel_spectral_error: Option<f64>,
    pub median_full_model_gap: Option<f64>,
    pub median_model_gap: Option<f64>,
    pub median_iterations: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub stream: String,
    pub repetition: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub experiment: String,
    pub base_seed: u64,
    pub metadata: BTreeMap<String, Value>,
    pub environment: Environment,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<SummaryRow>,
    pub seed_ledger: Vec<SeedRecord>,
}

fn med(values: Vec<f64>) -> Option<f64> {
    (!values.is_empty()).then(|| median(&values))
}

fn same_key(a: &BenchRow, b: &BenchRow) -> bool {
    a.model == b.model
        && a.params.sketch_kind == b.params.sketch_kind
        && a.params.eta == b.params.eta
        && a.params.s_over_ell == b.params.s_over_ell
        && a.params.gamma_fraction == b.params.gamma_fraction
        && a.params.n == b.params.n
}

impl BenchReport {
    pub fn new(experiment: &str, base_seed: u64) -> Self {
        Self {
            experiment: experiment.to_string(),
            base_seed,
            metadata: BTreeMap::new(),
            environment: Environment::current(),
            rows: Vec::new(),
            summary: Vec::new(),
            seed_ledger: Vec::new(),
        }
    }

    /// Groups rows by model and sweep coordinates in first-seen order and
    /// records medians of the successful rows.
    pub fn summarize(&mut self) {
        let mut groups: Vec<Vec<&BenchRow>> = Vec::new();
        for row in &self.rows {
            match groups.iter_mut().find(|g| same_key(g[0], row)) {
                Some(g) => g.push(row),
                None => groups.push(vec![row]),
            }
        }
        self.summary = groups
            .into_iter()
            .map(|g| {
                let ok: Vec<&&BenchRow> = g.iter().filter(|r| r.error.is_none()).collect();
                let pick = |f: &dyn Fn(&BenchRow) -> Option<f64>| {
                    med(ok.iter().filter_map(|r| f(r)).collect())
                };
                SummaryRow {
                    model: g[0].model,
                    sketch_kind: g[0].params.sketch_kind,
                    eta: g[0].params.eta,
                    s_over_ell: g[0].params.s_over_ell,
                    gamma_fraction: g[0].params.gamma_fraction,
                    n: g[0].params.n,
                    count: ok.len(),
                    median_rel_spectral_error: pick(&|r| r.rel_spectral_error),
                    median_full_model_gap: pick(&|r| r.full_model_gap),
                    median_model_gap: pick(&|r| r.model_gap),
                    median_iterations: pick(&|r| r.iterations.map(|k| k as f64)),
                }
            })
            .collect();
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// One flat CSV line per row.
    pub fn write_rows_csv(&self, path: &Path) -> Result<()> {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record([
            "model",
            "repetition",
            "n",
            "t",
            "sketch_kind",
            "s",
            "ell",
            "eta",
            "s_over_ell",
            "gamma",
            "iterations",
            "objective",
            "model_gap",
            "full_model_gap",
            "rel_spectral_error",
            "build_time",
            "solve_time",
            "error",
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
        for r in &self.rows {
            let p = &r.params;
            w.write_record([
                r.model.label().to_string(),
                r.repetition.to_string(),
                p.n.to_string(),
                p.t.to_string(),
                p.sketch_kind
                    .map(|k| k.label().to_string())
                    .unwrap_or_default(),
                p.s.map(|v| v.to_string()).unwrap_or_default(),
                p.ell.map(|v| v.to_string()).unwrap_or_default(),
                fmt(p.eta),
                fmt(p.s_over_ell),
                format!("{:e}", p.gamma),
                r.iterations.map(|v| v.to_string()).unwrap_or_default(),
                fmt(r.objective),
                fmt(r.model_gap),
                fmt(r.full_model_gap),
                fmt(r.rel_spectral_error),
                format!("{:e}", r.timing.build_time),
                format!("{:e}", r.timing.solve_time),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Removes every timing-dependent field from a JSON document in place.
pub fn strip_timing(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for key in TIMING_KEYS {
                map.remove(key);
            }
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: ModelKind, rep: usize, err: f64) -> BenchRow {
        let mut r = BenchRow::new(
            model,
            rep,
            RowParams {
                n: 4,
                s_over_ell: Some(2.0),
                ..Default::default()
            },
            RowSeeds::default(),
        );
        r.rel_spectral_error = Some(err);
        r
    }

    #[test]
    fn summary_takes_medians_per_group() {
        let mut rep = BenchReport::new("t", 0);
        rep.rows = vec![
            row(ModelKind::Str, 0, 0.3),
            row(ModelKind::Sketch, 0, 1.0),
            row(ModelKind::Str, 1, 0.1),
            row(ModelKind::Str, 2, 0.2),
        ];
        rep.rows[1].error = Some("boom".into());
        rep.summarize();
        assert_eq!(rep.summary.len(), 2);
        assert_eq!(rep.summary[0].median_rel_spectral_error, Some(0.2));
        assert_eq!(rep.summary[0].count, 3);
        assert_eq!(rep.summary[1].count, 0);
        assert_eq!(rep.summary[1].median_rel_spectral_error, None);
    }

    #[test]
    fn strip_timing_removes_nested_keys() {
        let mut v = serde_json::json!({
            "a": 1, "timing": {"x": 2},
            "rows": [{"timing": 3, "b": 4, "inner": {"wall_time": 5, "c": 6}}]
        });
        strip_timing(&mut v);
        assert_eq!(
            v,
            serde_json::json!({"a": 1, "rows": [{"b": 4, "inner": {"c": 6}}]})
        );
    }

    #[test]
    fn rows_serialize_with_documented_fields() {
        let v = serde_json::to_value(row(ModelKind::Str, 0, 0.1)).unwrap();
        for key in [
            "model",
            "repetition",
            "params",
            "seeds",
            "iterations",
            "objective",
            "model_gap",
            "full_model_gap",
            "rel_spectral_error",
            "conditioning",
            "portfolio_stats",
            "extra",
            "error",
            "timing",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["model"], "str");
    }
}
