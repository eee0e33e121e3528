//! Per-batch loss graphs for each training method.
//!
//! Every builder records one forward pass per batch example on the shared
//! graph and returns the mean per-example loss. The interpolation builders
//! also count what they did so callers can audit label preservation, group
//! constraints and minority pass-through after the fact.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::policy::{sample_lambda, ClassConstraint, Direction, InterpolationPolicy};
use crate::autodiff::{Graph, Var};
use crate::data::{Dataset, Group};
use crate::error::Result;
use crate::grouping::{Flag, GroupAssignment};
use crate::model::{Model, ModelVars};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterpolationStats {
    pub examples: u64,
    pub interpolated: u64,
    /// Examples that were not anchors under the policy and trained unmodified.
    pub passthrough: u64,
    /// Anchors with no eligible partner, trained unmodified.
    pub fallback: u64,
    /// Same-class partners whose label differed from the anchor's.
    pub label_violations: u64,
    /// LISA partners drawn from the anchor's own ground-truth group.
    pub group_violations: u64,
    /// Minority-flagged examples interpolated under the standard direction.
    pub minority_altered: u64,
    pub lambda_out_of_support: u64,
}

impl InterpolationStats {
    pub fn merge(&mut self, other: &InterpolationStats) {
        self.examples += other.examples;
        self.interpolated += other.interpolated;
        self.passthrough += other.passthrough;
        self.fallback += other.fallback;
        self.label_violations += other.label_violations;
        self.group_violations += other.group_violations;
        self.minority_altered += other.minority_altered;
        self.lambda_out_of_support += other.lambda_out_of_support;
    }
}

/// What happened to one batch example, with its final-layer representation.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub index: usize,
    pub flag: Flag,
    pub partner: Option<usize>,
    pub lambda: Option<f64>,
    pub representation: Vec<f64>,
}

/// Dataset indices grouped by inferred flag and label.
#[derive(Debug, Clone)]
pub struct PartnerPools {
    minority: Vec<Vec<usize>>,
    majority: Vec<Vec<usize>>,
}

impl PartnerPools {
    pub fn new(d: &Dataset, flags: &[Flag]) -> Self {
        let k = d.num_classes();
        let mut minority = vec![Vec::new(); k];
        let mut majority = vec![Vec::new(); k];
        for (i, (e, f)) in d.examples().iter().zip(flags).enumerate() {
            match f {
                Flag::InferredMinority => minority[e.label].push(i),
                Flag::InferredMajority => majority[e.label].push(i),
            }
        }
        Self { minority, majority }
    }

    pub fn minority(&self, class: usize) -> &[usize] {
        &self.minority[class]
    }

    pub fn majority(&self, class: usize) -> &[usize] {
        &self.majority[class]
    }

    fn pick(pools: &[Vec<usize>], label: usize, constraint: ClassConstraint, rng: &mut Rng) -> Option<usize> {
        match constraint {
            ClassConstraint::Intra => {
                let pool = &pools[label];
                (!pool.is_empty()).then(|| pool[rng.random_range(0..pool.len())])
            }
            ClassConstraint::Inter => {
                let total: usize = pools
                    .iter()
                    .enumerate()
                    .filter(|&(c, _)| c != label)
                    .map(|(_, p)| p.len())
                    .sum();
                if total == 0 {
                    return None;
                }
                let mut r = rng.random_range(0..total);
                for (c, pool) in pools.iter().enumerate() {
                    if c == label {
                        continue;
                    }
                    if r < pool.len() {
                        return Some(pool[r]);
                    }
                    r -= pool.len();
                }
                unreachable!("r < total")
            }
        }
    }
}

/// Everything an InterpoLL batch needs besides the model.
#[derive(Debug, Clone)]
pub struct InterpollContext<'a> {
    data: &'a Dataset,
    flags: Vec<Flag>,
    pools: PartnerPools,
    policy: InterpolationPolicy,
}

impl<'a> InterpollContext<'a> {
    pub fn new(data: &'a Dataset, assignment: &GroupAssignment, policy: InterpolationPolicy) -> Result<Self> {
        policy.validate()?;
        let flags = assignment.flags_for(data)?;
        let pools = PartnerPools::new(data, &flags);
        Ok(Self {
            data,
            flags,
            pools,
            policy,
        })
    }

    pub fn pools(&self) -> &PartnerPools {
        &self.pools
    }

    pub fn flags(&self) -> &[Flag] {
        &self.flags
    }
}

fn mean_loss(g: &mut Graph, losses: &[Var]) -> Result<Var> {
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = g.add(total, l)?;
    }
    Ok(g.scale(total, 1.0 / losses.len() as f64))
}

fn plain_loss(model: &Model, g: &mut Graph, vars: &ModelVars, d: &Dataset, i: usize) -> Result<(Var, Var)> {
    let ex = &d.examples()[i];
    let z = model.encode_var(g, vars, &ex.tokens, model.config().depth())?;
    let logits = model.logits_var(g, vars, z)?;
    Ok((g.softmax_cross_entropy(logits, ex.label)?, z))
}

/// Mixes the representations of `anchor` and `partner` at `layer` and carries
/// the result through the rest of the encoder.
fn mixed_representation(
    model: &Model,
    g: &mut Graph,
    vars: &ModelVars,
    d: &Dataset,
    (anchor, partner): (usize, usize),
    lambda: f64,
    policy: &InterpolationPolicy,
) -> Result<Var> {
    let layer = policy.layer.unwrap_or(model.config().depth());
    let a = model.encode_var(g, vars, &d.examples()[anchor].tokens, layer)?;
    let mut b = model.encode_var(g, vars, &d.examples()[partner].tokens, layer)?;
    if policy.stop_partner_gradient {
        b = g.stop_gradient(b);
    }
    let mixed = g.convex_combine(a, b, lambda)?;
    model.finish_encode(g, vars, mixed, layer)
}

/// Mean cross-entropy over the batch.
pub fn erm_batch(model: &Model, g: &mut Graph, vars: &ModelVars, d: &Dataset, batch: &[usize]) -> Result<Var> {
    let losses = batch
        .iter()
        .map(|&i| plain_loss(model, g, vars, d, i).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    mean_loss(g, &losses)
}

/// InterpoLL batch loss.
///
/// Under the standard direction each majority-flagged example is mixed with a
/// minority partner drawn from the pool the class constraint selects, with
/// `lambda` drawn per example; minority-flagged examples pass through. The
/// inverse direction swaps the roles. Anchors keep their own label. An anchor
/// with an empty partner pool trains unmodified and is counted as a fallback.
#[allow(clippy::too_many_arguments)]
pub fn interpoll_batch(
    model: &Model,
    g: &mut Graph,
    vars: &ModelVars,
    ctx: &InterpollContext<'_>,
    batch: &[usize],
    rng: &mut Rng,
    stats: &mut InterpolationStats,
    mut trace: Option<&mut Vec<TraceEntry>>,
) -> Result<Var> {
    let d = ctx.data;
    let policy = &ctx.policy;
    let (anchor_flag, partner_pools) = match policy.direction {
        Direction::Standard => (Flag::InferredMajority, &ctx.pools.minority),
        Direction::Inverse => (Flag::InferredMinority, &ctx.pools.majority),
    };
    let mut losses = Vec::with_capacity(batch.len());
    for &i in batch {
        stats.examples += 1;
        let ex = &d.examples()[i];
        let flag = ctx.flags[i];
        let partner = if flag == anchor_flag {
            let p = PartnerPools::pick(partner_pools, ex.label, policy.class_constraint, rng);
            if p.is_none() {
                stats.fallback += 1;
            }
            p
        } else {
            stats.passthrough += 1;
            None
        };
        let (z, lambda) = match partner {
            None => {
                let z = model.encode_var(g, vars, &ex.tokens, model.config().depth())?;
                (z, None)
            }
            Some(j) => {
                let lambda = sample_lambda(policy, rng);
                stats.interpolated += 1;
                if !policy.lambda.supports(lambda) {
                    stats.lambda_out_of_support += 1;
                }
                if policy.class_constraint == ClassConstraint::Intra && d.examples()[j].label != ex.label {
                    stats.label_violations += 1;
                }
                if policy.direction == Direction::Standard && flag == Flag::InferredMinority {
                    stats.minority_altered += 1;
                }
                let z = mixed_representation(model, g, vars, d, (i, j), lambda, policy)?;
                (z, Some(lambda))
            }
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceEntry {
                index: i,
                flag,
                partner,
                lambda,
                representation: g.value(z).values().to_vec(),
            });
        }
        let logits = model.logits_var(g, vars, z)?;
        losses.push(g.softmax_cross_entropy(logits, ex.label)?);
    }
    mean_loss(g, &losses)
}

/// Mixup in representation space: each example is paired with a seeded
/// permutation of the batch and the loss mixes both labels by the same ratio.
#[allow(clippy::too_many_arguments)]
pub fn mixup_batch(
    model: &Model,
    g: &mut Graph,
    vars: &ModelVars,
    d: &Dataset,
    batch: &[usize],
    policy: &InterpolationPolicy,
    rng: &mut Rng,
    stats: &mut InterpolationStats,
) -> Result<Var> {
    let mut partners = batch.to_vec();
    partners.shuffle(rng);
    let mut losses = Vec::with_capacity(batch.len());
    for (&i, &j) in batch.iter().zip(&partners) {
        stats.examples += 1;
        stats.interpolated += 1;
        let lambda = sample_lambda(policy, rng);
        if !policy.lambda.supports(lambda) {
            stats.lambda_out_of_support += 1;
        }
        let z = mixed_representation(model, g, vars, d, (i, j), lambda, policy)?;
        let logits = model.logits_var(g, vars, z)?;
        let own = g.softmax_cross_entropy(logits, d.examples()[i].label)?;
        let other = g.softmax_cross_entropy(logits, d.examples()[j].label)?;
        let own = g.scale(own, 1.0 - lambda);
        let other = g.scale(other, lambda);
        losses.push(g.add(own, other)?);
    }
    mean_loss(g, &losses)
}

/// Dataset indices grouped by label and ground-truth group.
#[derive(Debug, Clone)]
pub struct LisaContext<'a> {
    data: &'a Dataset,
    groups: Vec<Group>,
    minority: Vec<Vec<usize>>,
    majority: Vec<Vec<usize>>,
    policy: InterpolationPolicy,
}

impl<'a> LisaContext<'a> {
    pub fn new(data: &'a Dataset, policy: InterpolationPolicy) -> Result<Self> {
        policy.validate()?;
        let groups = data.groups()?;
        let k = data.num_classes();
        let mut minority = vec![Vec::new(); k];
        let mut majority = vec![Vec::new(); k];
        for (i, (e, g)) in data.examples().iter().zip(&groups).enumerate() {
            match g {
                Group::Minority => minority[e.label].push(i),
                Group::Majority => majority[e.label].push(i),
            }
        }
        Ok(Self {
            data,
            groups,
            minority,
            majority,
            policy,
        })
    }
}

/// LISA-style batch: every example is mixed with a same-label partner from the
/// other ground-truth group when one exists; the label is unchanged.
pub fn lisa_batch(
    model: &Model,
    g: &mut Graph,
    vars: &ModelVars,
    ctx: &LisaContext<'_>,
    batch: &[usize],
    rng: &mut Rng,
    stats: &mut InterpolationStats,
) -> Result<Var> {
    let d = ctx.data;
    let mut losses = Vec::with_capacity(batch.len());
    for &i in batch {
        stats.examples += 1;
        let ex = &d.examples()[i];
        let pool = match ctx.groups[i] {
            Group::Majority => &ctx.minority[ex.label],
            Group::Minority => &ctx.majority[ex.label],
        };
        let z = if pool.is_empty() {
            stats.fallback += 1;
            model.encode_var(g, vars, &ex.tokens, model.config().depth())?
        } else {
            let j = pool[rng.random_range(0..pool.len())];
            let lambda = sample_lambda(&ctx.policy, rng);
            stats.interpolated += 1;
            if !ctx.policy.lambda.supports(lambda) {
                stats.lambda_out_of_support += 1;
            }
            if d.examples()[j].label != ex.label {
                stats.label_violations += 1;
            }
            if ctx.groups[j] == ctx.groups[i] {
                stats.group_violations += 1;
            }
            mixed_representation(model, g, vars, d, (i, j), lambda, &ctx.policy)?
        };
        let logits = model.logits_var(g, vars, z)?;
        losses.push(g.softmax_cross_entropy(logits, ex.label)?);
    }
    mean_loss(g, &losses)
}
