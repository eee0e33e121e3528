use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Group, Provenance, Split};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Token-level recipe for the class signal shared by both generators.
///
/// The core block holds two halves of `num_classes * core_tokens_per_class`
/// tokens: per half, `core_tokens_per_class` parallel codebooks with one token
/// per value. Every sequence carries one token from each half, both from the
/// same randomly chosen codebook, plus `sequence_length - 2` label-free noise
/// tokens. With probability `core_signal` the two values sum to the label
/// modulo K; otherwise both are uniform. Each core token on its own is
/// independent of the label, so a linear bag-of-words model cannot read the
/// signal while a nonlinear encoder can, one codebook at a time.
#[derive(Debug, Clone, Copy)]
struct CoreSpec {
    offset: u32,
    num_classes: usize,
    core_tokens_per_class: usize,
    noise_tokens: usize,
    sequence_length: usize,
    core_signal: f64,
}

impl CoreSpec {
    fn half(&self) -> usize {
        self.num_classes * self.core_tokens_per_class
    }

    fn vocab_end(&self) -> usize {
        self.offset as usize + 2 * self.half() + self.noise_tokens
    }

    fn token(&self, half: usize, book: usize, value: usize) -> u32 {
        let c = self.core_tokens_per_class;
        self.offset + (half * self.half() + value * c + book) as u32
    }

    fn sample(&self, rng: &mut Rng, label: usize, out: &mut Vec<u32>) {
        let k = self.num_classes;
        let book = rng.random_range(0..self.core_tokens_per_class);
        let first = rng.random_range(0..k);
        let second = if rng.random::<f64>() < self.core_signal {
            (label + k - first) % k
        } else {
            rng.random_range(0..k)
        };
        let start = out.len();
        out.push(self.token(0, book, first));
        out.push(self.token(1, book, second));
        let noise_base = self.offset + 2 * self.half() as u32;
        for _ in 2..self.sequence_length {
            out.push(noise_base + rng.random_range(0..self.noise_tokens as u32));
        }
        out[start..].shuffle(rng);
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.core_tokens_per_class == 0 {
            return Err(Error::Config("core_tokens_per_class must be positive".into()));
        }
        if self.sequence_length < 2 {
            return Err(Error::Config("sequence_length must be at least 2".into()));
        }
        if self.sequence_length > 2 && self.noise_tokens == 0 {
            return Err(Error::Config(
                "noise_tokens must be positive when sequence_length exceeds 2".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.core_signal) {
            return Err(Error::Config(format!(
                "core_signal must lie in [0, 1], got {}",
                self.core_signal
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedConfig {
    pub n: usize,
    pub n_test: usize,
    pub num_classes: usize,
    /// Per-class share of training examples whose shortcut agrees with the label.
    pub majority_fraction: f64,
    /// Parallel core codebooks; each contributes one token per class value and half.
    pub core_tokens_per_class: usize,
    pub shortcut_tokens_per_class: usize,
    pub noise_tokens: usize,
    /// Tokens per sequence before the shortcut is added (two core, the rest noise).
    pub sequence_length: usize,
    /// Probability that the core pair encodes the label.
    pub core_signal: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            n_test: 2_000,
            num_classes: 3,
            majority_fraction: 0.95,
            core_tokens_per_class: 1,
            shortcut_tokens_per_class: 1,
            noise_tokens: 10,
            sequence_length: 4,
            core_signal: 0.9,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    fn core(&self) -> CoreSpec {
        CoreSpec {
            offset: (self.num_classes * self.shortcut_tokens_per_class) as u32,
            num_classes: self.num_classes,
            core_tokens_per_class: self.core_tokens_per_class,
            noise_tokens: self.noise_tokens,
            sequence_length: self.sequence_length,
            core_signal: self.core_signal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rho = self.majority_fraction;
        if !(rho > 0.5 && rho < 1.0) {
            return Err(Error::Config(format!(
                "majority_fraction must lie in (0.5, 1), got {rho}"
            )));
        }
        if self.n == 0 || self.n_test == 0 {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        if self.shortcut_tokens_per_class == 0 {
            return Err(Error::Config("shortcut_tokens_per_class must be positive".into()));
        }
        self.core().validate()
    }

    pub fn vocab_size(&self) -> usize {
        self.core().vocab_end()
    }

    fn provenance(&self) -> Provenance {
        let params = BTreeMap::from([
            ("n".to_string(), self.n as f64),
            ("n_test".to_string(), self.n_test as f64),
            ("majority_fraction".to_string(), self.majority_fraction),
            ("core_tokens_per_class".to_string(), self.core_tokens_per_class as f64),
            (
                "shortcut_tokens_per_class".to_string(),
                self.shortcut_tokens_per_class as f64,
            ),
            ("noise_tokens".to_string(), self.noise_tokens as f64),
            ("sequence_length".to_string(), self.sequence_length as f64),
            ("core_signal".to_string(), self.core_signal),
        ]);
        Provenance {
            generator: "planted".into(),
            params,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedSplits {
    pub train: Dataset,
    pub id_test: Dataset,
    pub ood_test: Dataset,
}

/// Labels `0, 1, .., K-1, 0, ..` for `n` examples: class counts differ by at most one.
fn balanced_labels(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i % k).collect()
}

/// Shortcut class per example. Within class `c`, the first `aligned[c]`
/// members get `c`; the rest cycle through the other classes.
fn assign_shortcuts(labels: &[usize], aligned: &[usize], k: usize) -> Vec<usize> {
    let mut seen = vec![0usize; k];
    labels
        .iter()
        .map(|&c| {
            let j = seen[c];
            seen[c] += 1;
            if j < aligned[c] {
                c
            } else {
                (c + 1 + (j - aligned[c]) % (k - 1)) % k
            }
        })
        .collect()
}

fn planted_split(
    cfg: &PlantedConfig,
    rng: &mut Rng,
    n: usize,
    split: Split,
    first_id: u64,
) -> Result<Dataset> {
    let k = cfg.num_classes;
    let labels = balanced_labels(n, k);
    let counts: Vec<usize> = (0..k).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
    let aligned: Vec<usize> = match split {
        Split::OodTest => {
            // Exactly round(n / K) agreements overall, spread evenly over classes.
            let total = (n as f64 / k as f64).round() as usize;
            (0..k)
                .map(|c| (total / k + usize::from(c < total % k)).min(counts[c]))
                .collect()
        }
        _ => counts
            .iter()
            .map(|&nc| (cfg.majority_fraction * nc as f64).round() as usize)
            .collect(),
    };
    let shortcuts = assign_shortcuts(&labels, &aligned, k);
    let core = cfg.core();
    let s = cfg.shortcut_tokens_per_class;
    let mut examples: Vec<Example> = labels
        .iter()
        .zip(&shortcuts)
        .map(|(&label, &sc)| {
            let mut tokens = Vec::with_capacity(cfg.sequence_length + 1);
            core.sample(rng, label, &mut tokens);
            let shortcut_token = (sc * s) as u32 + rng.random_range(0..s as u32);
            let at = rng.random_range(0..=tokens.len());
            tokens.insert(at, shortcut_token);
            let aligned = sc == label;
            Example {
                id: 0,
                tokens,
                label,
                group: Some(if aligned { Group::Majority } else { Group::Minority }),
                shortcut_aligned: Some(aligned),
            }
        })
        .collect();
    examples.shuffle(rng);
    for (i, ex) in examples.iter_mut().enumerate() {
        ex.id = first_id + i as u64;
    }
    Dataset::new(examples, cfg.vocab_size(), k, split, cfg.provenance())
}

/// Train, in-distribution test and shortcut-uninformative test splits.
pub fn gen_planted_shortcut(cfg: &PlantedConfig) -> Result<PlantedSplits> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(cfg.seed, &["planted"]));
    let n = cfg.n as u64;
    let nt = cfg.n_test as u64;
    let train = planted_split(cfg, &mut rng, cfg.n, Split::Train, 0)?;
    let id_test = planted_split(cfg, &mut rng, cfg.n_test, Split::IdTest, n)?;
    let ood_test = planted_split(cfg, &mut rng, cfg.n_test, Split::OodTest, n + nt)?;
    Ok(PlantedSplits {
        train,
        id_test,
        ood_test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrefixConfig {
    pub n: usize,
    pub n_test: usize,
    pub num_classes: usize,
    /// Probability that a training prefix names the true label.
    pub p: f64,
    pub core_tokens_per_class: usize,
    pub noise_tokens: usize,
    pub sequence_length: usize,
    pub core_signal: f64,
    pub seed: u64,
}

impl Default for PrefixConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            n_test: 2_000,
            num_classes: 3,
            p: 0.8,
            core_tokens_per_class: 1,
            noise_tokens: 10,
            sequence_length: 4,
            core_signal: 0.9,
            seed: 0,
        }
    }
}

impl PrefixConfig {
    fn core(&self) -> CoreSpec {
        CoreSpec {
            offset: self.num_classes as u32,
            num_classes: self.num_classes,
            core_tokens_per_class: self.core_tokens_per_class,
            noise_tokens: self.noise_tokens,
            sequence_length: self.sequence_length,
            core_signal: self.core_signal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("p must lie in [0, 1], got {}", self.p)));
        }
        if self.n == 0 || self.n_test == 0 {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        self.core().validate()
    }

    pub fn vocab_size(&self) -> usize {
        self.core().vocab_end()
    }

    fn provenance(&self) -> Provenance {
        let params = BTreeMap::from([
            ("n".to_string(), self.n as f64),
            ("n_test".to_string(), self.n_test as f64),
            ("p".to_string(), self.p),
            ("core_tokens_per_class".to_string(), self.core_tokens_per_class as f64),
            ("shortcut_tokens_per_class".to_string(), 1.0),
            ("noise_tokens".to_string(), self.noise_tokens as f64),
            ("sequence_length".to_string(), self.sequence_length as f64),
            ("core_signal".to_string(), self.core_signal),
        ]);
        Provenance {
            generator: "prefix".into(),
            params,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrefixSplits {
    pub train: Dataset,
    pub test: Dataset,
}

fn prefix_split(
    cfg: &PrefixConfig,
    rng: &mut Rng,
    n: usize,
    p: f64,
    split: Split,
    first_id: u64,
) -> Result<Dataset> {
    let k = cfg.num_classes;
    let core = cfg.core();
    let mut examples: Vec<Example> = balanced_labels(n, k)
        .into_iter()
        .map(|label| {
            let indicator = if rng.random::<f64>() < p {
                label
            } else {
                rng.random_range(0..k)
            };
            let mut tokens = Vec::with_capacity(cfg.sequence_length + 1);
            tokens.push(indicator as u32);
            core.sample(rng, label, &mut tokens);
            let aligned = indicator == label;
            Example {
                id: 0,
                tokens,
                label,
                group: Some(if aligned { Group::Majority } else { Group::Minority }),
                shortcut_aligned: Some(aligned),
            }
        })
        .collect();
    examples.shuffle(rng);
    for (i, ex) in examples.iter_mut().enumerate() {
        ex.id = first_id + i as u64;
    }
    Dataset::new(examples, cfg.vocab_size(), k, split, cfg.provenance())
}

/// Training prefixes name the label with probability `p` and a uniformly
/// random label (possibly the true one) otherwise; test prefixes are always random.
pub fn gen_prefix_shortcut(cfg: &PrefixConfig) -> Result<PrefixSplits> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(cfg.seed, &["prefix"]));
    let train = prefix_split(cfg, &mut rng, cfg.n, cfg.p, Split::Train, 0)?;
    let test = prefix_split(cfg, &mut rng, cfg.n_test, 0.0, Split::OodTest, cfg.n as u64)?;
    Ok(PrefixSplits { train, test })
}

/// Replaces exactly `round(fraction * n)` labels, chosen without replacement,
/// with a uniformly drawn different class. The input is left untouched.
pub fn inject_label_noise(d: &Dataset, fraction: f64, noise_seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "noise fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let n = d.len();
    let flips = (fraction * n as f64).round() as usize;
    let mut examples = d.examples().to_vec();
    if flips > 0 {
        let k = d.num_classes();
        let mut rng = seed::rng(seed::derive(noise_seed, &["label_noise"]));
        let mut chosen = index::sample(&mut rng, n, flips).into_vec();
        chosen.sort_unstable();
        for i in chosen {
            let ex = &mut examples[i];
            ex.label = (ex.label + 1 + rng.random_range(0..k - 1)) % k;
        }
    }
    let mut out = d.with_examples(examples);
    if flips > 0 {
        let params = &mut out.provenance_mut().params;
        params.insert("label_noise".into(), fraction);
        params.insert("label_noise_seed".into(), noise_seed as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub kept: usize,
    pub removed: usize,
}

/// Drops every example whose shortcut agrees with its label.
pub fn filter_aligned_majority(d: &Dataset) -> Result<(Dataset, FilterCounts)> {
    if d.examples().iter().all(|e| e.shortcut_aligned.is_none()) {
        return Err(Error::MissingAnnotations("shortcut_aligned"));
    }
    let kept: Vec<Example> = d
        .examples()
        .iter()
        .filter(|e| e.shortcut_aligned != Some(true))
        .cloned()
        .collect();
    let counts = FilterCounts {
        kept: kept.len(),
        removed: d.len() - kept.len(),
    };
    Ok((d.with_examples(kept), counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_planted() -> PlantedConfig {
        PlantedConfig {
            n: 10_000,
            n_test: 2_000,
            seed: 3,
            ..PlantedConfig::default()
        }
    }

    #[test]
    fn planted_majority_share_is_exact_per_class() {
        let splits = gen_planted_shortcut(&small_planted()).unwrap();
        for d in [&splits.train, &splits.id_test] {
            let counts = d.class_counts();
            for (c, &count) in counts.iter().enumerate() {
                let aligned = d
                    .examples()
                    .iter()
                    .filter(|e| e.label == c && e.shortcut_aligned == Some(true))
                    .count();
                let target = 0.95 * count as f64;
                assert!((aligned as f64 - target).abs() <= 1.0, "class {c}: {aligned}");
            }
        }
    }

    #[test]
    fn ood_agreement_is_one_over_k() {
        let splits = gen_planted_shortcut(&small_planted()).unwrap();
        let ood = &splits.ood_test;
        let agree = ood
            .examples()
            .iter()
            .filter(|e| e.shortcut_aligned == Some(true))
            .count();
        assert!((agree as f64 - 2000.0 / 3.0).abs() <= 1.0, "{agree}");
        // the tag agrees with the token actually planted
        let classes = ood.shortcut_classes().unwrap();
        for (e, c) in ood.examples().iter().zip(classes) {
            assert_eq!(e.shortcut_aligned, Some(c == e.label));
        }
    }

    #[test]
    fn planted_splits_are_balanced_disjoint_and_consistent() {
        let splits = gen_planted_shortcut(&small_planted()).unwrap();
        let mut ids = std::collections::HashSet::new();
        for d in [&splits.train, &splits.id_test, &splits.ood_test] {
            let counts = d.class_counts();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1);
            for e in d.examples() {
                assert!(ids.insert(e.id));
                assert_eq!(e.tokens.len(), 5);
                assert_eq!(
                    e.group == Some(Group::Majority),
                    e.shortcut_aligned == Some(true)
                );
            }
        }
    }

    #[test]
    fn planted_rejects_bad_majority_fraction() {
        for rho in [0.5, 1.0, 0.2, f64::NAN] {
            let cfg = PlantedConfig {
                majority_fraction: rho,
                ..small_planted()
            };
            assert!(gen_planted_shortcut(&cfg).is_err());
        }
    }

    #[test]
    fn prefix_agreement_rates() {
        let base = PrefixConfig {
            seed: 5,
            ..PrefixConfig::default()
        };
        let always = gen_prefix_shortcut(&PrefixConfig { p: 1.0, ..base.clone() }).unwrap();
        assert!(always
            .train
            .examples()
            .iter()
            .all(|e| e.tokens[0] as usize == e.label));

        let rate = |d: &Dataset| {
            d.examples()
                .iter()
                .filter(|e| e.tokens[0] as usize == e.label)
                .count() as f64
                / d.len() as f64
        };
        let never = gen_prefix_shortcut(&PrefixConfig { p: 0.0, ..base.clone() }).unwrap();
        assert!((rate(&never.train) - 1.0 / 3.0).abs() <= 0.02);
        for p in [0.0, 0.2, 0.8, 1.0] {
            let s = gen_prefix_shortcut(&PrefixConfig { p, ..base.clone() }).unwrap();
            assert!((rate(&s.test) - 1.0 / 3.0).abs() <= 0.02, "p={p}");
        }
        assert!(gen_prefix_shortcut(&PrefixConfig { p: 1.5, ..base }).is_err());
    }

    #[test]
    fn generators_are_pure() {
        let a = gen_planted_shortcut(&small_planted()).unwrap();
        let b = gen_planted_shortcut(&small_planted()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.ood_test, b.ood_test);
        let p = PrefixConfig::default();
        assert_eq!(
            gen_prefix_shortcut(&p).unwrap().train,
            gen_prefix_shortcut(&p).unwrap().train
        );
    }

    #[test]
    fn label_noise_flips_exact_count() {
        let d = gen_planted_shortcut(&PlantedConfig {
            n: 1000,
            ..small_planted()
        })
        .unwrap()
        .train;
        let same = inject_label_noise(&d, 0.0, 1).unwrap();
        assert_eq!(same, d);

        let noisy = inject_label_noise(&d, 0.05, 1).unwrap();
        let mut changed = 0;
        for (a, b) in d.examples().iter().zip(noisy.examples()) {
            assert_eq!((a.id, &a.tokens, a.group, a.shortcut_aligned), (b.id, &b.tokens, b.group, b.shortcut_aligned));
            if a.label != b.label {
                changed += 1;
            }
        }
        assert_eq!(changed, 50);
        assert!(inject_label_noise(&d, 1.2, 1).is_err());
    }

    #[test]
    fn filter_keeps_only_minority() {
        let d = gen_planted_shortcut(&small_planted()).unwrap().train;
        let (f, counts) = filter_aligned_majority(&d).unwrap();
        assert_eq!(counts.kept + counts.removed, d.len());
        let expected: usize = d
            .class_counts()
            .iter()
            .map(|&c| c - (0.95 * c as f64).round() as usize)
            .sum();
        assert_eq!(f.len(), expected);
        assert!(f.examples().iter().all(|e| e.shortcut_aligned == Some(false)));

        let (again, c2) = filter_aligned_majority(&f).unwrap();
        assert_eq!(again, f);
        assert_eq!(c2.removed, 0);

        let untagged = d.with_examples(
            d.examples()
                .iter()
                .map(|e| Example {
                    shortcut_aligned: None,
                    ..e.clone()
                })
                .collect(),
        );
        assert!(filter_aligned_majority(&untagged).is_err());
    }
}
