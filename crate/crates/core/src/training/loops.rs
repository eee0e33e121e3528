use std::time::Instant;

use rand::seq::SliceRandom;

use super::batch::{
    erm_batch, interpoll_batch, lisa_batch, mixup_batch, InterpolationStats, InterpollContext,
    LisaContext, TraceEntry,
};
use super::metrics::{EpochMetrics, MetricsRecord};
use super::{Method, TrainConfig};
use crate::autodiff::{Graph, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{check_compatible, evaluate};
use crate::grouping::GroupAssignment;
use crate::model::{Model, ModelVars};
use crate::seed::{self, Rng};

/// Runs `cfg.epochs` passes of seeded-shuffle minibatch training. `batch_loss`
/// records the loss graph for one batch; it receives the interpolation stream,
/// which is independent of the shuffle stream.
fn run<F>(mut model: Model, d: &Dataset, cfg: &TrainConfig, mut batch_loss: F) -> Result<(Model, MetricsRecord)>
where
    F: FnMut(&Model, &mut Graph, &ModelVars, &[usize], &mut Rng) -> Result<Var>,
{
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_compatible(&model, d)?;
    let start = Instant::now();
    let mut optimizer = cfg.optimizer.build()?;
    let mut shuffle_rng = seed::rng(seed::derive(cfg.seed, &["shuffle"]));
    let mut interp_rng = seed::rng(seed::derive(cfg.seed, &["interpolation"]));
    let mut order: Vec<usize> = (0..d.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let vars = model.bind(&mut g);
            let loss = batch_loss(&model, &mut g, &vars, batch, &mut interp_rng)?;
            loss_sum += g.scalar(loss) * batch.len() as f64;
            g.backward(loss)?;
            model.absorb_grads(&mut g, &vars)?;
            optimizer.step(&mut model.params_mut())?;
        }
        let mean_loss = loss_sum / d.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::InvalidTensor(format!("loss diverged at epoch {epoch}")));
        }
        let acc = if cfg.record_dynamics {
            Some(evaluate(&model, d)?)
        } else {
            None
        };
        epochs.push(EpochMetrics {
            epoch,
            train_acc: acc.map(|a| a.overall),
            train_acc_minority: acc.and_then(|a| a.minority),
            train_acc_majority: acc.and_then(|a| a.majority),
            mean_loss,
        });
    }
    let record = MetricsRecord {
        method: cfg.method.as_str().to_string(),
        epochs,
        final_metrics: None,
        interpolation: None,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, record))
}

/// Mean cross-entropy minimization.
pub fn train_erm(model: Model, d: &Dataset, cfg: &TrainConfig) -> Result<(Model, MetricsRecord)> {
    cfg.expect_method(Method::Erm)?;
    run(model, d, cfg, |m, g, vars, batch, _| erm_batch(m, g, vars, d, batch))
}

pub fn train_interpoll(
    model: Model,
    d: &Dataset,
    assignment: &GroupAssignment,
    cfg: &TrainConfig,
) -> Result<(Model, MetricsRecord)> {
    train_interpoll_inner(model, d, assignment, cfg, None)
}

/// [`train_interpoll`] that also records a [`TraceEntry`] for every example of every batch.
pub fn train_interpoll_traced(
    model: Model,
    d: &Dataset,
    assignment: &GroupAssignment,
    cfg: &TrainConfig,
    trace: &mut Vec<TraceEntry>,
) -> Result<(Model, MetricsRecord)> {
    train_interpoll_inner(model, d, assignment, cfg, Some(trace))
}

fn train_interpoll_inner(
    model: Model,
    d: &Dataset,
    assignment: &GroupAssignment,
    cfg: &TrainConfig,
    mut trace: Option<&mut Vec<TraceEntry>>,
) -> Result<(Model, MetricsRecord)> {
    cfg.expect_method(Method::Interpoll)?;
    let policy = cfg.policy.expect("validated");
    let depth = model.config().depth();
    if policy.layer.is_some_and(|l| l > depth) {
        return Err(Error::LayerOutOfRange {
            layer: policy.layer.unwrap_or_default(),
            depth,
        });
    }
    let ctx = InterpollContext::new(d, assignment, policy)?;
    let mut stats = InterpolationStats::default();
    let (model, mut record) = run(model, d, cfg, |m, g, vars, batch, rng| {
        interpoll_batch(m, g, vars, &ctx, batch, rng, &mut stats, trace.as_deref_mut())
    })?;
    if stats.fallback > 0 {
        log::info!(
            "interpoll: {} anchors had no eligible partner and trained unmodified",
            stats.fallback
        );
    }
    record.interpolation = Some(stats);
    Ok((model, record))
}

pub fn train_mixup(model: Model, d: &Dataset, cfg: &TrainConfig) -> Result<(Model, MetricsRecord)> {
    cfg.expect_method(Method::Mixup)?;
    let policy = cfg.policy.expect("validated");
    let mut stats = InterpolationStats::default();
    let (model, mut record) = run(model, d, cfg, |m, g, vars, batch, rng| {
        mixup_batch(m, g, vars, d, batch, &policy, rng, &mut stats)
    })?;
    record.interpolation = Some(stats);
    Ok((model, record))
}

pub fn train_lisa(model: Model, d: &Dataset, cfg: &TrainConfig) -> Result<(Model, MetricsRecord)> {
    cfg.expect_method(Method::Lisa)?;
    let ctx = LisaContext::new(d, cfg.policy.expect("validated"))?;
    let mut stats = InterpolationStats::default();
    let (model, mut record) = run(model, d, cfg, |m, g, vars, batch, rng| {
        lisa_batch(m, g, vars, &ctx, batch, rng, &mut stats)
    })?;
    record.interpolation = Some(stats);
    Ok((model, record))
}
