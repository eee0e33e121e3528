use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PlantedConfig, PrefixConfig};
use crate::error::{Error, Result};
use crate::grouping::AuxiliaryVariant;
use crate::model::ModelConfig;
use crate::training::{InterpolationPolicy, LambdaDist, Method, OptimizerConfig, TrainConfig};

/// Data source for the main comparison. Generator seeds are derived per run
/// from `master_seed`, so the `seed` field must stay unset (zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Planted(PlantedConfig),
    Prefix(PrefixConfig),
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        let (seed, check) = match self {
            GeneratorSpec::Planted(c) => (c.seed, c.validate()),
            GeneratorSpec::Prefix(c) => (c.seed, c.validate()),
        };
        check?;
        if seed != 0 {
            return Err(Error::Config(
                "generator.seed is derived from master_seed and the run seed; leave it unset".into(),
            ));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            GeneratorSpec::Planted(c) => c.vocab_size(),
            GeneratorSpec::Prefix(c) => c.vocab_size(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            GeneratorSpec::Planted(c) => c.num_classes,
            GeneratorSpec::Prefix(c) => c.num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub embed_dim: usize,
    pub hidden_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

/// One entry of the method list; unset fields fall back to `[training]`
/// and the method's default interpolation policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub policy: Option<InterpolationPolicy>,
}

/// Prefix-shortcut comparison: ERM and InterpoLL at each prefix agreement `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefixAnalysis {
    pub p: Vec<f64>,
    /// Base generator; its `p` is replaced by each listed value.
    #[serde(default)]
    pub generator: PrefixConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Analyses {
    /// Per-epoch group-wise train accuracy for ERM and InterpoLL.
    pub dynamics: bool,
    /// Online-code probing of the shortcut class from ERM, InterpoLL and untrained representations.
    pub probe: bool,
    /// Minority recall of every auxiliary variant in use.
    pub recall: bool,
    /// InterpoLL with alternative ratio distributions.
    pub ratio: Vec<LambdaDist>,
    /// Inverse direction, inter-class partners and a stopped partner gradient.
    pub variants: bool,
    /// InterpoLL interpolating at each listed encoder layer.
    pub layers: Vec<usize>,
    /// Label-noise fraction for the ERM/InterpoLL robustness comparison.
    pub noise: Option<f64>,
    /// InterpoLL trained on groups inferred by each listed auxiliary variant.
    pub auxiliary: Vec<AuxiliaryVariant>,
    pub prefix: Option<PrefixAnalysis>,
    /// ERM on the training set with every shortcut-aligned example removed.
    pub filtered: bool,
}

impl Analyses {
    fn needs_interpoll(&self) -> bool {
        self.dynamics
            || self.probe
            || !self.ratio.is_empty()
            || self.variants
            || !self.layers.is_empty()
            || self.noise.is_some()
            || !self.auxiliary.is_empty()
            || self.prefix.is_some()
    }

    fn needs_erm(&self) -> bool {
        self.dynamics || self.probe || self.noise.is_some() || self.prefix.is_some() || self.filtered
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every derived seed.
    pub master_seed: u64,
    /// Run labels; each names one paired replicate (data, initialization, shuffles).
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub generator: GeneratorSpec,
    pub learner: LearnerSpec,
    pub training: ScheduleSpec,
    pub auxiliary: AuxiliaryVariant,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub analyses: Analyses,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config; a relative `output_dir` is kept as written.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("seed list has duplicates".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        let names: BTreeSet<Method> = self.methods.iter().map(|m| m.method).collect();
        if names.len() != self.methods.len() {
            return Err(Error::Config("each method may appear once".into()));
        }
        self.generator.validate()?;
        if self.learner.hidden_dims.is_empty() {
            return Err(Error::Config("learner.hidden_dims must be non-empty".into()));
        }
        self.learner_config(0).validate()?;
        self.auxiliary.validate()?;
        for m in &self.methods {
            let cfg = self.train_config(m, 0);
            cfg.validate()
                .map_err(|e| e.context(format!("method {}", m.method.as_str())))?;
            if cfg.epochs == 0 {
                return Err(Error::Config(format!("{}: epochs must be positive", m.method.as_str())));
            }
        }
        let a = &self.analyses;
        if a.needs_interpoll() && !names.contains(&Method::Interpoll) {
            return Err(Error::Config("the requested analyses need interpoll in the method list".into()));
        }
        if a.needs_erm() && !names.contains(&Method::Erm) {
            return Err(Error::Config("the requested analyses need erm in the method list".into()));
        }
        for d in &a.ratio {
            d.validate()?;
        }
        let depth = self.learner.hidden_dims.len();
        if let Some(&l) = a.layers.iter().find(|&&l| l > depth) {
            return Err(Error::Config(format!(
                "layer sweep lists layer {l}, but the learner has {depth} hidden layers"
            )));
        }
        if let Some(f) = a.noise {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("noise fraction must lie in (0, 1], got {f}")));
            }
        }
        for v in &a.auxiliary {
            v.validate()?;
        }
        if let Some(p) = &a.prefix {
            if p.p.is_empty() {
                return Err(Error::Config("prefix analysis lists no p values".into()));
            }
            for &pv in &p.p {
                PrefixConfig { p: pv, ..p.generator.clone() }.validate()?;
            }
            if p.generator.seed != 0 {
                return Err(Error::Config(
                    "analyses.prefix.generator.seed is derived per run; leave it unset".into(),
                ));
            }
        }
        if (a.probe || a.filtered) && !matches!(self.generator, GeneratorSpec::Planted(_)) {
            return Err(Error::Config(
                "probe and filtered analyses need the planted generator (shortcut target and held-out splits)".into(),
            ));
        }
        Ok(())
    }

    pub fn learner_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size: self.generator.vocab_size(),
            embed_dim: self.learner.embed_dim,
            hidden_dims: self.learner.hidden_dims.clone(),
            num_classes: self.generator.num_classes(),
            seed,
        }
    }

    /// The shared ERM schedule under `seed`.
    pub fn schedule(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            method: Method::Erm,
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            optimizer: self.training.optimizer,
            seed,
            policy: None,
            record_dynamics: false,
        }
    }

    pub fn train_config(&self, m: &MethodSpec, seed: u64) -> TrainConfig {
        let base = self.schedule(seed).with_method(m.method);
        TrainConfig {
            epochs: m.epochs.unwrap_or(base.epochs),
            batch_size: m.batch_size.unwrap_or(base.batch_size),
            optimizer: m.optimizer.unwrap_or(base.optimizer),
            policy: m.policy.or(base.policy),
            ..base
        }
    }

    pub fn method(&self, method: Method) -> Option<&MethodSpec> {
        self.methods.iter().find(|m| m.method == method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
master_seed = 1
seeds = [0]
output_dir = "out"

[generator]
kind = "planted"
n = 300
n_test = 60

[learner]
embed_dim = 8
hidden_dims = [8]

[training]
epochs = 1
batch_size = 16
[training.optimizer]
lr = 0.01
[training.optimizer.kind]
kind = "adam"
beta1 = 0.9
beta2 = 0.999
eps = 1e-8

[auxiliary]
kind = "tiny"

[[methods]]
method = "erm"
"#;

    #[test]
    fn minimal_config_parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn invariants_are_enforced() {
        let bad = [
            MINIMAL.replace("seeds = [0]", "seeds = []"),
            MINIMAL.replace("seeds = [0]", "seeds = [3, 3]"),
            MINIMAL.replace("[[methods]]\nmethod = \"erm\"", ""),
            MINIMAL.replace("hidden_dims = [8]", "hidden_dims = []"),
            MINIMAL.replace("n_test = 60", "n_test = 60\nseed = 4"),
            MINIMAL.replace("n_test = 60", "n_test = 60\nbogus = 1"),
            format!("{MINIMAL}\n[analyses]\nprobe = true\n"),
            format!("{MINIMAL}\n[[methods]]\nmethod = \"erm\"\n"),
            format!("{MINIMAL}\n[[methods]]\nmethod = \"interpoll\"\n[analyses]\nlayers = [2]\n"),
            format!("{MINIMAL}\n[[methods]]\nmethod = \"interpoll\"\n[analyses]\nnoise = 0.0\n"),
        ];
        for text in bad {
            let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
            assert!(err.is_config(), "{err}");
        }
    }

    #[test]
    fn method_overrides_fall_back_to_schedule() {
        let text = format!(
            "{MINIMAL}\n[[methods]]\nmethod = \"interpoll\"\nepochs = 3\n[[methods]]\nmethod = \"lisa\"\n"
        );
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let ip = cfg.train_config(cfg.method(Method::Interpoll).unwrap(), 9);
        assert_eq!((ip.epochs, ip.seed), (3, 9));
        assert_eq!(ip.policy, Some(InterpolationPolicy::interpoll()));
        let lisa = cfg.train_config(cfg.method(Method::Lisa).unwrap(), 9);
        assert_eq!((lisa.epochs, lisa.policy), (1, Some(InterpolationPolicy::lisa())));
    }
}
