use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Group};
use crate::error::{Error, Result};
use crate::model::Model;

/// Accuracy overall and, when the data carries group tags, per ground-truth group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub overall: f64,
    pub minority: Option<f64>,
    pub majority: Option<f64>,
    pub n: usize,
    pub n_minority: usize,
    pub n_majority: usize,
}

pub fn check_compatible(model: &Model, d: &Dataset) -> Result<()> {
    let cfg = model.config();
    if cfg.vocab_size != d.vocab_size() {
        return Err(Error::VocabMismatch {
            model: cfg.vocab_size,
            dataset: d.vocab_size(),
        });
    }
    if cfg.num_classes != d.num_classes() {
        return Err(Error::ClassMismatch {
            model: cfg.num_classes,
            dataset: d.num_classes(),
        });
    }
    Ok(())
}

/// Argmax predictions (lowest index on ties) scored against the dataset labels.
pub fn evaluate(model: &Model, d: &Dataset) -> Result<Accuracy> {
    check_compatible(model, d)?;
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = model.predict_many(d.token_seqs())?;
    Ok(score(&preds, d))
}

pub(crate) fn score(preds: &[usize], d: &Dataset) -> Accuracy {
    let mut hits = [0usize; 3];
    let mut totals = [0usize; 3];
    for (p, ex) in preds.iter().zip(d.examples()) {
        let slot = match ex.group {
            Some(Group::Minority) => 1,
            Some(Group::Majority) => 2,
            None => 0,
        };
        totals[slot] += 1;
        if *p == ex.label {
            hits[slot] += 1;
        }
    }
    let ratio = |h: usize, t: usize| (t > 0).then(|| h as f64 / t as f64);
    Accuracy {
        overall: hits.iter().sum::<usize>() as f64 / preds.len() as f64,
        minority: ratio(hits[1], totals[1]),
        majority: ratio(hits[2], totals[2]),
        n: preds.len(),
        n_minority: totals[1],
        n_majority: totals[2],
    }
}
