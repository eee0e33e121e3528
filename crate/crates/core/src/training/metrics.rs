//! Per-run metrics and their CSV form.
//!
//! One row per epoch, then a row whose `epoch` cell is `final` carrying the
//! last epoch's training columns plus the held-out accuracies. Empty cells
//! mean "not measured". Wall-clock time is kept out of the file so that
//! identical runs produce identical bytes.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::batch::InterpolationStats;
use crate::error::{Error, Result};

pub const METRICS_COLUMNS: [&str; 9] = [
    "epoch",
    "train_acc",
    "train_acc_minority",
    "train_acc_majority",
    "mean_loss",
    "id_acc",
    "ood_acc",
    "minority_acc",
    "majority_acc",
];

const FORMAT: &str = "metrics";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_acc: Option<f64>,
    pub train_acc_minority: Option<f64>,
    pub train_acc_majority: Option<f64>,
    pub mean_loss: f64,
}

/// Held-out accuracies; minority/majority are measured on the shortcut-uninformative split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub id_acc: Option<f64>,
    pub ood_acc: Option<f64>,
    pub minority_acc: Option<f64>,
    pub majority_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub epochs: Vec<EpochMetrics>,
    pub final_metrics: Option<FinalMetrics>,
    pub interpolation: Option<InterpolationStats>,
    pub wall_clock_secs: f64,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(record: &MetricsRecord, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::format(FORMAT, 0, e.to_string());
    out.write_record(METRICS_COLUMNS).map_err(err)?;
    for e in &record.epochs {
        out.write_record([
            e.epoch.to_string(),
            cell(e.train_acc),
            cell(e.train_acc_minority),
            cell(e.train_acc_majority),
            e.mean_loss.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])
        .map_err(err)?;
    }
    if let Some(f) = &record.final_metrics {
        let last = record.epochs.last();
        out.write_record([
            "final".to_string(),
            cell(last.and_then(|e| e.train_acc)),
            cell(last.and_then(|e| e.train_acc_minority)),
            cell(last.and_then(|e| e.train_acc_majority)),
            cell(last.map(|e| e.mean_loss)),
            cell(f.id_acc),
            cell(f.ood_acc),
            cell(f.minority_acc),
            cell(f.majority_acc),
        ])
        .map_err(err)?;
    }
    out.flush().map_err(|e| Error::io("<metrics writer>", e))
}

fn parse_cell(raw: &str, row: usize) -> Result<Option<f64>> {
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw
        .parse()
        .map_err(|_| Error::format(FORMAT, row, format!("not a number: {raw:?}")))?;
    if !v.is_finite() {
        return Err(Error::format(FORMAT, row, format!("non-finite value {raw:?}")));
    }
    Ok(Some(v))
}

fn accuracy(raw: &str, row: usize) -> Result<Option<f64>> {
    let v = parse_cell(raw, row)?;
    if v.is_some_and(|x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::format(FORMAT, row, format!("accuracy {raw} outside [0, 1]")));
    }
    Ok(v)
}

/// Parses the CSV written by [`write_metrics_csv`]. The method name and
/// interpolation counters are not part of the file and come back empty.
pub fn read_metrics_csv<R: Read>(r: R) -> Result<MetricsRecord> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = reader
        .headers()
        .map_err(|e| Error::format(FORMAT, 0, e.to_string()))?
        .clone();
    if headers.iter().ne(METRICS_COLUMNS) {
        return Err(Error::format(FORMAT, 0, "unexpected header"));
    }
    let mut epochs = Vec::new();
    let mut final_metrics = None;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::format(FORMAT, row, e.to_string()))?;
        if final_metrics.is_some() {
            return Err(Error::format(FORMAT, row, "rows after the final summary"));
        }
        let field = |c: usize| rec.get(c).unwrap_or("");
        if field(0) == "final" {
            final_metrics = Some(FinalMetrics {
                id_acc: accuracy(field(5), row)?,
                ood_acc: accuracy(field(6), row)?,
                minority_acc: accuracy(field(7), row)?,
                majority_acc: accuracy(field(8), row)?,
            });
            continue;
        }
        let epoch: usize = field(0)
            .parse()
            .map_err(|_| Error::format(FORMAT, row, format!("bad epoch {:?}", field(0))))?;
        if epoch != epochs.len() + 1 {
            return Err(Error::format(FORMAT, row, format!("epoch {epoch} out of sequence")));
        }
        epochs.push(EpochMetrics {
            epoch,
            train_acc: accuracy(field(1), row)?,
            train_acc_minority: accuracy(field(2), row)?,
            train_acc_majority: accuracy(field(3), row)?,
            mean_loss: parse_cell(field(4), row)?
                .ok_or_else(|| Error::format(FORMAT, row, "missing mean_loss"))?,
        });
    }
    Ok(MetricsRecord {
        method: String::new(),
        epochs,
        final_metrics,
        interpolation: None,
        wall_clock_secs: 0.0,
    })
}
