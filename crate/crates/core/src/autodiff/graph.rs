//! Tape of recorded tensor operations and the reverse sweep over it.
//!
//! Nodes are appended in execution order, so the tape is topologically sorted
//! by construction: every operand of a node has a smaller index than the node.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Tanh(Var),
    Scale(Var, f64),
    Sum(Var),
    ConvexCombine { a: Var, b: Var, lambda: f64 },
    EmbedMean { table: Var, tokens: Vec<u32> },
    SoftmaxCrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
    StopGradient,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.values()[0]
    }

    /// Gradient of the last backward root with respect to `var`, if it was reached.
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.nodes[var.0].value.grad()
    }

    pub fn take_grad(&mut self, var: Var) -> Option<Vec<f64>> {
        self.nodes[var.0].value.take_grad()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn dims(&self, var: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = &self.nodes[var.0].value;
        t.matrix_dims().ok_or_else(|| Error::ShapeMismatch {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let av = self.value(a).values();
        let bv = self.value(b).values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &w) in row.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        let requires = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), requires))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let out: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        let requires = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), requires))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = t.values().iter().map(|x| x.tanh()).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("shape preserved");
        let requires = self.needs(a);
        self.push(value, Op::Tanh(a), requires)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let out = t.values().iter().map(|x| x * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("shape preserved");
        let requires = self.needs(a);
        self.push(value, Op::Scale(a, factor), requires)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).values().iter().sum();
        let requires = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum(a), requires)
    }

    /// `(1 - lambda) * a + lambda * b`, with both endpoints reproduced bitwise.
    pub fn convex_combine(&mut self, a: Var, b: Var, lambda: f64) -> Result<Var> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::LambdaOutOfRange(lambda));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "convex_combine",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let out: Vec<f64> = if lambda == 0.0 {
            ta.values().to_vec()
        } else if lambda == 1.0 {
            tb.values().to_vec()
        } else {
            let keep = 1.0 - lambda;
            ta.values()
                .iter()
                .zip(tb.values())
                .map(|(x, y)| keep * x + lambda * y)
                .collect()
        };
        let shape = ta.shape().to_vec();
        let requires = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::ConvexCombine { a, b, lambda },
            requires,
        ))
    }

    /// Mean of the `table` rows selected by `tokens`, as a `[1, width]` row.
    pub fn embed_mean(&mut self, table: Var, tokens: &[u32]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        let (rows, width) = self.dims(table, "embed_mean")?;
        let tv = self.value(table).values();
        let mut out = vec![0.0; width];
        for &tok in tokens {
            let t = tok as usize;
            if t >= rows {
                return Err(Error::TokenOutOfVocab {
                    token: tok,
                    vocab_size: rows,
                });
            }
            for (o, &x) in out.iter_mut().zip(&tv[t * width..(t + 1) * width]) {
                *o += x;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let requires = self.needs(table);
        Ok(self.push(
            Tensor::new(vec![1, width], out)?,
            Op::EmbedMean {
                table,
                tokens: tokens.to_vec(),
            },
            requires,
        ))
    }

    /// `-ln softmax(logits)[label]`, evaluated through a max-shifted log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).values();
        if label >= z.len() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: z.len(),
            });
        }
        let (probs, log_norm) = softmax_with_log_norm(z);
        let loss = log_norm - z[label];
        let requires = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            requires,
        ))
    }

    /// Forwards the value of `a` while blocking gradient flow into it.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::StopGradient, false)
    }

    /// Reverse sweep from a scalar `root`. Every node that depends on a leaf
    /// receives its gradient; contributions from multiple uses are summed.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardRepeated);
        }
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf | Op::StopGradient => {}
                Op::MatMul(a, b) => {
                    let (m, k) = node_dims(&self.nodes[a.0].value);
                    let n = upstream.len() / m;
                    let av = self.nodes[a.0].value.values();
                    let bv = self.nodes[b.0].value.values();
                    if self.nodes[a.0].requires_grad {
                        let ga = slot(&mut grads, *a, m * k);
                        for i in 0..m {
                            let up = &upstream[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                ga[i * k + p] += up.iter().zip(brow).map(|(u, w)| u * w).sum::<f64>();
                            }
                        }
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb = slot(&mut grads, *b, k * n);
                        for i in 0..m {
                            let up = &upstream[i * n..(i + 1) * n];
                            for p in 0..k {
                                let x = av[i * k + p];
                                for (g, u) in gb[p * n..(p + 1) * n].iter_mut().zip(up) {
                                    *g += x * u;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.nodes[v.0].requires_grad {
                            let g = slot(&mut grads, v, upstream.len());
                            g.iter_mut().zip(&upstream).for_each(|(g, u)| *g += u);
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.values();
                    let g = slot(&mut grads, *a, upstream.len());
                    for ((g, u), y) in g.iter_mut().zip(&upstream).zip(y) {
                        *g += u * (1.0 - y * y);
                    }
                }
                Op::Scale(a, factor) => {
                    let g = slot(&mut grads, *a, upstream.len());
                    g.iter_mut().zip(&upstream).for_each(|(g, u)| *g += factor * u);
                }
                Op::Sum(a) => {
                    let len = self.nodes[a.0].value.len();
                    let g = slot(&mut grads, *a, len);
                    g.iter_mut().for_each(|g| *g += upstream[0]);
                }
                Op::ConvexCombine { a, b, lambda } => {
                    for (v, w) in [(*a, 1.0 - lambda), (*b, *lambda)] {
                        if self.nodes[v.0].requires_grad {
                            let g = slot(&mut grads, v, upstream.len());
                            g.iter_mut().zip(&upstream).for_each(|(g, u)| *g += w * u);
                        }
                    }
                }
                Op::EmbedMean { table, tokens } => {
                    let (rows, width) = node_dims(&self.nodes[table.0].value);
                    let g = slot(&mut grads, *table, rows * width);
                    let inv = 1.0 / tokens.len() as f64;
                    for &tok in tokens {
                        let t = tok as usize;
                        for (g, u) in g[t * width..(t + 1) * width].iter_mut().zip(&upstream) {
                            *g += u * inv;
                        }
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let up = upstream[0];
                    let g = slot(&mut grads, *logits, probs.len());
                    for (c, (g, p)) in g.iter_mut().zip(probs).enumerate() {
                        let onehot = if c == *label { 1.0 } else { 0.0 };
                        *g += up * (p - onehot);
                    }
                }
            }
            self.nodes[idx]
                .value
                .set_grad(upstream)
                .expect("gradient matches node shape");
        }
        Ok(())
    }
}

fn node_dims(t: &Tensor) -> (usize, usize) {
    t.matrix_dims().expect("validated at record time")
}

fn slot(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut [f64] {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

/// Softmax probabilities and `ln sum exp(z)`, both computed after subtracting the max.
pub(crate) fn softmax_with_log_norm(z: &[f64]) -> (Vec<f64>, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    (probs, max + total.ln())
}
