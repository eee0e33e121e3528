//! Online-code (minimum description length) probing of frozen representations.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_with_log_norm;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::seed;

const MAX_ITERS: usize = 2000;
const REL_TOL: f64 = 1e-6;
const HELD_IN: f64 = 0.8;

/// Frozen representations paired with a categorical target and a block schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTask {
    dim: usize,
    features: Vec<f64>,
    targets: Vec<usize>,
    num_classes: usize,
    schedule: Vec<usize>,
}

/// Doubling block boundaries from `max(2C, 32)` up to `n` (the last block may be short).
pub fn default_schedule(n: usize, num_classes: usize) -> Vec<usize> {
    let mut t = (2 * num_classes).max(32).min(n);
    let mut out = Vec::new();
    while t < n {
        out.push(t);
        t *= 2;
    }
    out.push(n);
    out
}

impl ProbeTask {
    /// `schedule = None` selects [`default_schedule`].
    pub fn new(
        representations: Vec<Vec<f64>>,
        targets: Vec<usize>,
        num_classes: usize,
        schedule: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = representations.len();
        if n == 0 {
            return Err(Error::Probe("no examples".into()));
        }
        if targets.len() != n {
            return Err(Error::Probe(format!(
                "{n} representations but {} targets",
                targets.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::Probe("at least two target classes are required".into()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= num_classes) {
            return Err(Error::Probe(format!("target {t} out of range for {num_classes} classes")));
        }
        let dim = representations[0].len();
        if dim == 0 || representations.iter().any(|r| r.len() != dim) {
            return Err(Error::Probe("representations must share a positive width".into()));
        }
        let features: Vec<f64> = representations.into_iter().flatten().collect();
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Probe("non-finite representation value".into()));
        }
        let schedule = schedule.unwrap_or_else(|| default_schedule(n, num_classes));
        validate_schedule(&schedule, n, num_classes)?;
        Ok(Self {
            dim,
            features,
            targets,
            num_classes,
            schedule,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

fn validate_schedule(schedule: &[usize], n: usize, num_classes: usize) -> Result<()> {
    let Some(&first) = schedule.first() else {
        return Err(Error::Probe("empty block schedule".into()));
    };
    if first < num_classes {
        return Err(Error::Probe(format!(
            "first block {first} is smaller than the {num_classes} target classes"
        )));
    }
    if schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Probe("block schedule must be strictly increasing".into()));
    }
    if schedule.last() != Some(&n) {
        return Err(Error::Probe(format!("block schedule must end at n = {n}")));
    }
    Ok(())
}

/// Probe task over a model's representations of `d`, targeting each example's shortcut class.
pub fn shortcut_probe_task(model: &Model, d: &Dataset, layer: Option<usize>) -> Result<ProbeTask> {
    crate::eval::check_compatible(model, d)?;
    let reps = model.encode_many(d.token_seqs(), layer)?;
    ProbeTask::new(reps, d.shortcut_classes()?, d.num_classes(), None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub uniform_bits: f64,
    pub online_bits: f64,
    pub compression: f64,
    pub probe_accuracy: f64,
    pub schedule: Vec<usize>,
}

/// Linear softmax probe, weights laid out row-major as `(dim + 1) x C` with the bias last.
struct LinearProbe {
    dim: usize,
    classes: usize,
    w: Vec<f64>,
}

impl LinearProbe {
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let c = self.classes;
        let mut z = self.w[self.dim * c..].to_vec();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (zk, wk) in z.iter_mut().zip(&self.w[j * c..(j + 1) * c]) {
                    *zk += xj * wk;
                }
            }
        }
        z
    }

    /// Natural-log loss of the target class.
    fn nll(&self, x: &[f64], target: usize) -> f64 {
        let z = self.logits(x);
        let (_, log_norm) = softmax_with_log_norm(&z);
        log_norm - z[target]
    }

    fn predict(&self, x: &[f64]) -> usize {
        crate::model::argmax(&self.logits(x))
    }

    /// Full-batch gradient descent from zero with step `1 / L`, where `L` bounds
    /// the curvature of the mean cross-entropy.
    fn fit(task: &ProbeTask, rows: &[usize]) -> Self {
        let (dim, c) = (task.dim, task.num_classes);
        let mut probe = LinearProbe {
            dim,
            classes: c,
            w: vec![0.0; (dim + 1) * c],
        };
        let m = rows.len() as f64;
        let sq_norm: f64 = rows
            .iter()
            .map(|&i| 1.0 + task.row(i).iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / m;
        let step = 1.0 / (0.5 * sq_norm);
        let mut grad = vec![0.0; probe.w.len()];
        let mut prev = f64::INFINITY;
        for _ in 0..MAX_ITERS {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in rows {
                let x = task.row(i);
                let z = probe.logits(x);
                let (mut p, log_norm) = softmax_with_log_norm(&z);
                let t = task.targets[i];
                loss += log_norm - z[t];
                p[t] -= 1.0;
                for (j, &xj) in x.iter().enumerate() {
                    if xj != 0.0 {
                        for (gk, pk) in grad[j * c..(j + 1) * c].iter_mut().zip(&p) {
                            *gk += xj * pk;
                        }
                    }
                }
                for (gk, pk) in grad[dim * c..].iter_mut().zip(&p) {
                    *gk += pk;
                }
            }
            loss /= m;
            if prev.is_finite() && prev - loss <= REL_TOL * prev {
                break;
            }
            prev = loss;
            for (w, g) in probe.w.iter_mut().zip(&grad) {
                *w -= step * g / m;
            }
        }
        probe
    }
}

/// Online codelength of the task's targets given its representations.
///
/// Examples are visited in a seeded random order. The first block is sent
/// with the uniform code; each later block is coded by a probe fit on every
/// example before it. Probe accuracy comes from a separate fit on the first
/// 80% of the same order, scored on the remaining 20%.
pub fn mdl_probe(task: &ProbeTask, probe_seed: u64) -> Result<ProbeResult> {
    let n = task.len();
    let c = task.num_classes;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(probe_seed, &["probe"])));

    let log2_c = (c as f64).log2();
    let uniform_bits = n as f64 * log2_c;
    let mut online_bits = task.schedule[0] as f64 * log2_c;
    for w in task.schedule.windows(2) {
        let probe = LinearProbe::fit(task, &order[..w[0]]);
        online_bits += order[w[0]..w[1]]
            .iter()
            .map(|&i| probe.nll(task.row(i), task.targets[i]))
            .sum::<f64>()
            / std::f64::consts::LN_2;
    }

    let split = ((HELD_IN * n as f64).round() as usize).clamp(1, n);
    let probe_accuracy = if split == n {
        let probe = LinearProbe::fit(task, &order);
        accuracy(&probe, task, &order)
    } else {
        let probe = LinearProbe::fit(task, &order[..split]);
        accuracy(&probe, task, &order[split..])
    };

    Ok(ProbeResult {
        uniform_bits,
        online_bits,
        compression: uniform_bits / online_bits,
        probe_accuracy,
        schedule: task.schedule.clone(),
    })
}

fn accuracy(probe: &LinearProbe, task: &ProbeTask, rows: &[usize]) -> f64 {
    let hits = rows
        .iter()
        .filter(|&&i| probe.predict(task.row(i)) == task.targets[i])
        .count();
    hits as f64 / rows.len() as f64
}

pub fn save_probe_result(result: &ProbeResult, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, result)
        .map_err(|e| Error::format("probe result", 0, e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_probe_result(path: &Path) -> Result<ProbeResult> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::format("probe result", 0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;

    fn gaussian_rows(n: usize, d: usize, s: u64) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(s);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect()
    }

    #[test]
    fn default_schedule_doubles_to_n() {
        assert_eq!(default_schedule(300, 3), vec![32, 64, 128, 256, 300]);
        assert_eq!(default_schedule(64, 3), vec![32, 64]);
        assert_eq!(default_schedule(20, 3), vec![20]);
        assert_eq!(default_schedule(1000, 40), vec![80, 160, 320, 640, 1000]);
    }

    #[test]
    fn schedule_violations_are_rejected() {
        let reps = gaussian_rows(10, 2, 0);
        let t = vec![0; 10];
        for bad in [vec![], vec![1, 10], vec![4, 4, 10], vec![4, 8], vec![6, 4, 10]] {
            assert!(ProbeTask::new(reps.clone(), t.clone(), 3, Some(bad)).is_err());
        }
        assert!(ProbeTask::new(reps.clone(), t.clone(), 3, Some(vec![3, 10])).is_ok());
        assert!(ProbeTask::new(reps.clone(), vec![0; 9], 3, None).is_err());
        assert!(ProbeTask::new(reps, vec![3; 10], 3, None).is_err());
    }

    #[test]
    fn independent_targets_do_not_compress() {
        for s in 0..5 {
            let reps = gaussian_rows(1000, 8, s);
            let mut rng = seed::rng(100 + s);
            let targets = (0..1000).map(|_| rng.random_range(0..3)).collect();
            let task = ProbeTask::new(reps, targets, 3, None).unwrap();
            let r = mdl_probe(&task, s).unwrap();
            assert!(r.compression <= 1.05, "seed {s}: {}", r.compression);
            assert!(r.online_bits > 0.0);
        }
    }

    #[test]
    fn separable_targets_compress() {
        let reps = gaussian_rows(1000, 4, 7);
        let targets = reps.iter().map(|r| usize::from(r[0] > 0.0)).collect();
        let task = ProbeTask::new(reps, targets, 2, None).unwrap();
        let r = mdl_probe(&task, 1).unwrap();
        assert!(r.compression > 2.0, "{}", r.compression);
        assert!(r.probe_accuracy > 0.95, "{}", r.probe_accuracy);
    }

    #[test]
    fn first_block_is_uniform_code() {
        let reps = gaussian_rows(50, 3, 2);
        let targets: Vec<usize> = (0..50).map(|i| i % 3).collect();
        let task = ProbeTask::new(reps, targets, 3, Some(vec![50])).unwrap();
        let r = mdl_probe(&task, 0).unwrap();
        assert_eq!(r.online_bits, 50.0 * 3f64.log2());
        assert_eq!(r.compression, 1.0);
    }

    #[test]
    fn compression_ignores_class_relabeling() {
        let reps = gaussian_rows(600, 5, 3);
        let targets: Vec<usize> = reps
            .iter()
            .map(|r| if r[0] > 0.3 { 0 } else if r[1] > 0.0 { 1 } else { 2 })
            .collect();
        let perm = [2, 0, 1];
        let relabeled = targets.iter().map(|&t| perm[t]).collect();
        let a = mdl_probe(&ProbeTask::new(reps.clone(), targets, 3, None).unwrap(), 4).unwrap();
        let b = mdl_probe(&ProbeTask::new(reps, relabeled, 3, None).unwrap(), 4).unwrap();
        assert!((a.compression - b.compression).abs() < 1e-9 * a.compression);
        assert_eq!(a.probe_accuracy, b.probe_accuracy);
    }

    #[test]
    fn result_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.json");
        let r = ProbeResult {
            uniform_bits: 1584.9625007211562,
            online_bits: 1000.1,
            compression: 1.5848,
            probe_accuracy: 0.75,
            schedule: vec![32, 64, 1000],
        };
        save_probe_result(&r, &path).unwrap();
        assert_eq!(load_probe_result(&path).unwrap(), r);
    }
}
