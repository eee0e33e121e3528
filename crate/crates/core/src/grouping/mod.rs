//! Minority/majority inference from the errors of a frozen auxiliary model.

mod io;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Group};
use crate::error::{Error, Result};
use crate::eval::check_compatible;
use crate::model::{Model, ModelConfig};
use crate::training::{train_erm, MetricsRecord, TrainConfig};

pub use io::{load_assignment, read_assignment, save_assignment, write_assignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    InferredMinority,
    InferredMajority,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentSource {
    pub variant: String,
    pub seed: u64,
}

/// Inferred flag for every training example, keyed by example id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    flags: BTreeMap<u64, Flag>,
    source: AssignmentSource,
}

impl GroupAssignment {
    pub fn new(flags: BTreeMap<u64, Flag>, source: AssignmentSource) -> Self {
        Self { flags, source }
    }

    /// Same flag for every example of `d`.
    pub fn uniform(d: &Dataset, flag: Flag, source: AssignmentSource) -> Self {
        Self::new(d.examples().iter().map(|e| (e.id, flag)).collect(), source)
    }

    pub fn source(&self) -> &AssignmentSource {
        &self.source
    }

    pub fn flags(&self) -> &BTreeMap<u64, Flag> {
        &self.flags
    }

    pub fn flag(&self, id: u64) -> Option<Flag> {
        self.flags.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn minority_count(&self) -> usize {
        self.flags
            .values()
            .filter(|&&f| f == Flag::InferredMinority)
            .count()
    }

    /// Flags in dataset order; every example must be covered.
    pub fn flags_for(&self, d: &Dataset) -> Result<Vec<Flag>> {
        d.examples()
            .iter()
            .map(|e| self.flag(e.id).ok_or(Error::MissingAssignment(e.id)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxiliaryKind {
    /// Reduced width/depth, full ERM schedule.
    Tiny,
    /// Learner-sized, three epochs.
    UnderTrained,
    /// Learner-sized, weight decay 1.
    Regularized,
    /// The learner itself after two epochs.
    NoAuxiliary,
}

impl AuxiliaryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AuxiliaryKind::Tiny => "tiny",
            AuxiliaryKind::UnderTrained => "under_trained",
            AuxiliaryKind::Regularized => "regularized",
            AuxiliaryKind::NoAuxiliary => "no_auxiliary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxiliaryVariant {
    pub kind: AuxiliaryKind,
    /// Overrides the variant's epoch count (tiny and regularized default to the full schedule).
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    /// Encoder shape for the tiny variant.
    #[serde(default)]
    pub embed_dim: Option<usize>,
    #[serde(default)]
    pub hidden_dims: Option<Vec<usize>>,
}

pub const TINY_EMBED_DIM: usize = 8;
pub const UNDER_TRAINED_EPOCHS: usize = 3;
pub const NO_AUXILIARY_EPOCHS: usize = 2;
pub const REGULARIZED_WEIGHT_DECAY: f64 = 1.0;

impl AuxiliaryVariant {
    pub fn of(kind: AuxiliaryKind) -> Self {
        Self {
            kind,
            epochs: None,
            weight_decay: None,
            embed_dim: None,
            hidden_dims: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shape_override = self.embed_dim.is_some() || self.hidden_dims.is_some();
        if shape_override && self.kind != AuxiliaryKind::Tiny {
            return Err(Error::Config(format!(
                "{} auxiliary is learner-sized; embed_dim/hidden_dims apply to tiny only",
                self.kind.as_str()
            )));
        }
        if self.weight_decay.is_some() && self.kind != AuxiliaryKind::Regularized {
            return Err(Error::Config("weight_decay applies to the regularized auxiliary only".into()));
        }
        if let Some(wd) = self.weight_decay {
            if !(wd >= 0.0 && wd.is_finite()) {
                return Err(Error::Config(format!("invalid weight decay {wd}")));
            }
        }
        Ok(())
    }

    /// Model shape and schedule this variant trains with.
    pub fn resolve(
        &self,
        learner: &ModelConfig,
        schedule: &TrainConfig,
        seed: u64,
    ) -> Result<(ModelConfig, TrainConfig)> {
        self.validate()?;
        let mut model = ModelConfig {
            seed,
            ..learner.clone()
        };
        let mut train = TrainConfig {
            seed: crate::seed::derive(seed, &["auxiliary", self.kind.as_str()]),
            record_dynamics: false,
            ..schedule.clone().into_erm()
        };
        match self.kind {
            AuxiliaryKind::Tiny => {
                model.embed_dim = self.embed_dim.unwrap_or(TINY_EMBED_DIM);
                model.hidden_dims = self.hidden_dims.clone().unwrap_or_default();
            }
            AuxiliaryKind::UnderTrained => {
                train.epochs = UNDER_TRAINED_EPOCHS;
            }
            AuxiliaryKind::Regularized => {
                train.optimizer.weight_decay = self.weight_decay.unwrap_or(REGULARIZED_WEIGHT_DECAY);
            }
            AuxiliaryKind::NoAuxiliary => {
                model.seed = learner.seed;
                train.epochs = NO_AUXILIARY_EPOCHS;
            }
        }
        if let Some(e) = self.epochs {
            train.epochs = e;
        }
        Ok((model, train))
    }

    pub fn descriptor(&self) -> String {
        self.kind.as_str().to_string()
    }
}

/// A trained, frozen auxiliary model and how it was produced.
#[derive(Debug, Clone)]
pub struct AuxiliaryModel {
    pub model: Model,
    pub variant: AuxiliaryVariant,
    pub epochs_completed: usize,
    pub weight_decay: f64,
    pub metrics: MetricsRecord,
}

pub fn train_auxiliary(
    d: &Dataset,
    variant: &AuxiliaryVariant,
    learner: &ModelConfig,
    schedule: &TrainConfig,
    seed: u64,
) -> Result<AuxiliaryModel> {
    let (model_cfg, train_cfg) = variant.resolve(learner, schedule, seed)?;
    let init = Model::init(model_cfg)?;
    let (model, metrics) = train_erm(init, d, &train_cfg)?;
    Ok(AuxiliaryModel {
        model,
        variant: variant.clone(),
        epochs_completed: metrics.epochs.len(),
        weight_decay: train_cfg.optimizer.weight_decay,
        metrics,
    })
}

/// Flags an example as minority exactly when the auxiliary's argmax prediction
/// (lowest index on ties) disagrees with its label.
pub fn infer_min_maj(aux: &Model, d: &Dataset, source: AssignmentSource) -> Result<GroupAssignment> {
    check_compatible(aux, d)?;
    let preds = aux.predict_many(d.token_seqs())?;
    let flags = d
        .examples()
        .iter()
        .zip(preds)
        .map(|(e, p)| {
            let flag = if p == e.label {
                Flag::InferredMajority
            } else {
                Flag::InferredMinority
            };
            (e.id, flag)
        })
        .collect();
    Ok(GroupAssignment::new(flags, source))
}

/// Share of ground-truth minority examples flagged as inferred minority.
///
/// Returns 0 (with a warning) when the dataset has no ground-truth minority.
pub fn minority_recall(a: &GroupAssignment, d: &Dataset) -> Result<f64> {
    let groups = d.groups()?;
    let mut total = 0usize;
    let mut hit = 0usize;
    for (e, g) in d.examples().iter().zip(groups) {
        if g == Group::Minority {
            total += 1;
            if a.flag(e.id) == Some(Flag::InferredMinority) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        log::warn!("minority recall requested on a dataset without ground-truth minority examples");
        return Ok(0.0);
    }
    Ok(hit as f64 / total as f64)
}
