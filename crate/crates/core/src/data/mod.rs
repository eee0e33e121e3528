//! Synthetic datasets with planted shortcuts, plus the JSON-lines container
//! they are stored in.

mod generate;
mod io;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{
    filter_aligned_majority, gen_planted_shortcut, gen_prefix_shortcut, inject_label_noise,
    FilterCounts, PlantedConfig, PlantedSplits, PrefixConfig, PrefixSplits,
};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Majority,
    Minority,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: u64,
    pub tokens: Vec<u32>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut_aligned: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    IdTest,
    OodTest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::IdTest => "id_test",
            Split::OodTest => "ood_test",
        }
    }
}

/// Which generator produced a dataset and with what settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub generator: String,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    vocab_size: usize,
    num_classes: usize,
    split: Split,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        examples: Vec<Example>,
        vocab_size: usize,
        num_classes: usize,
        split: Split,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut ids = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if !ids.insert(ex.id) {
                return Err(Error::Config(format!("duplicate example id {}", ex.id)));
            }
            if ex.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: ex.label,
                    classes: num_classes,
                });
            }
            if ex.tokens.is_empty() {
                return Err(Error::EmptySequence);
            }
            if let Some(&token) = ex.tokens.iter().find(|&&t| t as usize >= vocab_size) {
                return Err(Error::TokenOutOfVocab { token, vocab_size });
            }
        }
        Ok(Self {
            examples,
            vocab_size,
            num_classes,
            split,
            provenance,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn token_seqs(&self) -> impl Iterator<Item = &[u32]> {
        self.examples.iter().map(|e| e.tokens.as_slice())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn has_group_tags(&self) -> bool {
        self.examples.iter().any(|e| e.group.is_some())
    }

    /// Ground-truth group of every example; fails unless all are tagged.
    pub fn groups(&self) -> Result<Vec<Group>> {
        self.examples
            .iter()
            .map(|e| e.group.ok_or(Error::MissingAnnotations("group")))
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    /// Number of dedicated shortcut tokens per class, as recorded by the generator.
    pub fn shortcut_tokens_per_class(&self) -> Option<usize> {
        self.provenance
            .params
            .get("shortcut_tokens_per_class")
            .map(|&v| v as usize)
    }

    /// Class encoded by each example's shortcut token.
    ///
    /// Shortcut tokens occupy ids `[0, K * S)`, where token `t` points at class
    /// `t / S`; every generated example carries exactly one of them.
    pub fn shortcut_classes(&self) -> Result<Vec<usize>> {
        let per_class = self
            .shortcut_tokens_per_class()
            .filter(|&s| s > 0)
            .ok_or(Error::MissingAnnotations("shortcut layout"))?;
        let limit = per_class * self.num_classes;
        self.examples
            .iter()
            .map(|e| {
                e.tokens
                    .iter()
                    .find(|&&t| (t as usize) < limit)
                    .map(|&t| t as usize / per_class)
                    .ok_or(Error::MissingAnnotations("shortcut token"))
            })
            .collect()
    }

    pub(crate) fn with_examples(&self, examples: Vec<Example>) -> Self {
        Self {
            examples,
            vocab_size: self.vocab_size,
            num_classes: self.num_classes,
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }

    pub(crate) fn provenance_mut(&mut self) -> &mut Provenance {
        &mut self.provenance
    }
}
