//! Aggregation of per-run results into mean / sample-std tables and paired differences.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar outcomes of one (table, arm, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunResult {
    pub table: String,
    pub arm: String,
    pub seed: u64,
    pub values: BTreeMap<String, f64>,
}

impl RunResult {
    pub fn new(table: &str, arm: &str, seed: u64) -> Self {
        Self {
            table: table.to_string(),
            arm: arm.to_string(),
            seed,
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, metric: &str, value: Option<f64>) -> Self {
        if let Some(v) = value {
            self.values.insert(metric.to_string(), v);
        }
        self
    }

    /// Same values filed under another table/arm.
    pub fn relabel(&self, table: &str, arm: &str) -> Self {
        Self {
            table: table.to_string(),
            arm: arm.to_string(),
            ..self.clone()
        }
    }
}

/// A named comparison `left - right` inside one table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub table: String,
    pub left: String,
    pub right: String,
}

impl Pair {
    pub fn new(table: &str, left: &str, right: &str) -> Self {
        Self {
            table: table.into(),
            left: left.into(),
            right: right.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub seeds: Vec<u64>,
    /// Set when only one seed contributed, so `std` carries no information.
    pub single_seed: bool,
    pub metrics: BTreeMap<String, Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub left: String,
    pub right: String,
    pub metric: String,
    pub seeds: Vec<u64>,
    pub diffs: Vec<f64>,
    pub stat: Stat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub arms: BTreeMap<String, ArmSummary>,
    pub paired: Vec<PairedDifference>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tables: BTreeMap<String, TableReport>,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&TableReport> {
        self.tables.get(name)
    }

    pub fn mean(&self, table: &str, arm: &str, metric: &str) -> Option<f64> {
        Some(self.tables.get(table)?.arms.get(arm)?.metrics.get(metric)?.mean)
    }

    pub fn paired(&self, table: &str, left: &str, right: &str, metric: &str) -> Option<&PairedDifference> {
        self.tables
            .get(table)?
            .paired
            .iter()
            .find(|p| p.left == left && p.right == right && p.metric == metric)
    }
}

/// Mean and sample standard deviation. A single value has std 0.
pub fn mean_std(values: &[f64]) -> Stat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Stat { mean, std }
}

/// Aggregates runs per (table, arm) and computes the requested paired
/// differences over every metric the two arms share.
///
/// Runs of one arm must all report the same metric names; a pair's arms must
/// cover the same seeds.
pub fn report(runs: &[RunResult], pairs: &[Pair]) -> Result<Report> {
    let mut grouped: BTreeMap<(&str, &str), Vec<&RunResult>> = BTreeMap::new();
    for r in runs {
        grouped.entry((&r.table, &r.arm)).or_default().push(r);
    }
    let mut out = Report::default();
    for ((table, arm), mut rs) in grouped {
        rs.sort_by_key(|r| r.seed);
        let seeds: Vec<u64> = rs.iter().map(|r| r.seed).collect();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Report(format!("{table}/{arm}: duplicate seed")));
        }
        let names: BTreeSet<&String> = rs[0].values.keys().collect();
        if let Some(bad) = rs.iter().find(|r| r.values.keys().collect::<BTreeSet<_>>() != names) {
            return Err(Error::Report(format!(
                "{table}/{arm}: seed {} reports a different metric set than seed {}",
                bad.seed, rs[0].seed
            )));
        }
        let metrics = names
            .into_iter()
            .map(|m| {
                let vals: Vec<f64> = rs.iter().map(|r| r.values[m]).collect();
                (m.clone(), mean_std(&vals))
            })
            .collect();
        out.tables.entry(table.to_string()).or_default().arms.insert(
            arm.to_string(),
            ArmSummary {
                single_seed: seeds.len() == 1,
                seeds,
                metrics,
            },
        );
    }
    for pair in pairs {
        let side = |arm: &str| -> Result<BTreeMap<u64, &RunResult>> {
            let found: BTreeMap<u64, &RunResult> = runs
                .iter()
                .filter(|r| r.table == pair.table && r.arm == arm)
                .map(|r| (r.seed, r))
                .collect();
            if found.is_empty() {
                return Err(Error::Report(format!("{}: no runs for arm {arm}", pair.table)));
            }
            Ok(found)
        };
        let (left, right) = (side(&pair.left)?, side(&pair.right)?);
        if left.keys().ne(right.keys()) {
            return Err(Error::Report(format!(
                "{}: arms {} and {} cover different seeds",
                pair.table, pair.left, pair.right
            )));
        }
        let first = left.values().next().expect("non-empty");
        let shared: Vec<&String> = first
            .values
            .keys()
            .filter(|m| right.values().next().expect("non-empty").values.contains_key(*m))
            .collect();
        let table = out.tables.get_mut(&pair.table).expect("arms recorded above");
        for metric in shared {
            let diffs: Vec<f64> = left
                .iter()
                .map(|(s, l)| l.values[metric] - right[s].values[metric])
                .collect();
            table.paired.push(PairedDifference {
                left: pair.left.clone(),
                right: pair.right.clone(),
                metric: metric.clone(),
                seeds: left.keys().copied().collect(),
                stat: mean_std(&diffs),
                diffs,
            });
        }
    }
    Ok(out)
}

pub fn save_run_result(r: &RunResult, path: &Path) -> Result<()> {
    write_json(r, path)
}

pub fn load_run_result(path: &Path) -> Result<RunResult> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::format("run result", 0, e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format("json", 0, e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Writes `<dir>/<table>.csv` (arm, metric, mean, std, n_seeds, single_seed)
/// and, when the table has comparisons, `<dir>/<table>_paired.csv`.
pub fn write_tables(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, table) in &report.tables {
        let path = dir.join(format!("{name}.csv"));
        let mut w = csv_writer(&path)?;
        let io = |e: csv::Error| Error::format("table", 0, e.to_string());
        w.write_record(["arm", "metric", "mean", "std", "n_seeds", "single_seed"]).map_err(io)?;
        for (arm, s) in &table.arms {
            for (metric, stat) in &s.metrics {
                w.write_record([
                    arm.as_str(),
                    metric,
                    &stat.mean.to_string(),
                    &stat.std.to_string(),
                    &s.seeds.len().to_string(),
                    &s.single_seed.to_string(),
                ])
                .map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        if table.paired.is_empty() {
            continue;
        }
        let path = dir.join(format!("{name}_paired.csv"));
        let mut w = csv_writer(&path)?;
        w.write_record(["left", "right", "metric", "mean", "std", "n_seeds"]).map_err(io)?;
        for p in &table.paired {
            w.write_record([
                p.left.as_str(),
                &p.right,
                &p.metric,
                &p.stat.mean.to_string(),
                &p.stat.std.to_string(),
                &p.seeds.len().to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Every `*.json` run result below `dir`, in path order.
pub fn collect_run_results(dir: &Path) -> Result<Vec<RunResult>> {
    let mut paths = Vec::new();
    walk(dir, &mut paths)?;
    paths.sort();
    paths
        .iter()
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-")))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .map(|p| load_run_result(p).map_err(|e| e.context(p.display().to_string())))
        .collect()
}

fn walk(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}
