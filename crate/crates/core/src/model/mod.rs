//! Bag-of-embeddings encoder with tanh dense layers and a linear softmax head.
//!
//! Layer indices address the encoder stack the way transformer layers are
//! usually numbered: layer 0 is the mean-pooled embedding, layer `i` is the
//! activation after hidden layer `i`, and the final layer (`hidden_dims.len()`)
//! is the representation handed to the classifier.

mod checkpoint;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_with_log_norm, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::seed;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Encoder layer widths; empty gives a purely linear encoder.
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.embed_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.hidden_dims.len()
    }

    /// Width of the activation at `layer` (see module docs for numbering).
    pub fn width_at(&self, layer: usize) -> Result<usize> {
        match layer {
            0 => Ok(self.embed_dim),
            l if l <= self.depth() => Ok(self.hidden_dims[l - 1]),
            l => Err(Error::LayerOutOfRange {
                layer: l,
                depth: self.depth(),
            }),
        }
    }

    pub fn representation_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.embed_dim)
    }

    /// Parameter shapes in declaration order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![vec![self.vocab_size, self.embed_dim]];
        let mut fan_in = self.embed_dim;
        for &h in &self.hidden_dims {
            shapes.push(vec![fan_in, h]);
            shapes.push(vec![1, h]);
            fan_in = h;
        }
        shapes.push(vec![fan_in, self.num_classes]);
        shapes.push(vec![1, self.num_classes]);
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    embedding: Tensor,
    layers: Vec<Dense>,
    classifier: Dense,
}

/// Graph handles for every model parameter, in declaration order.
#[derive(Debug, Clone)]
pub struct ModelVars {
    embedding: Var,
    layers: Vec<(Var, Var)>,
    classifier: (Var, Var),
}

/// Uniform Glorot bound for a `fan_in x fan_out` matrix.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Model {
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(config.seed);
        let mut uniform = |rows: usize, cols: usize| -> Result<Tensor> {
            let s = glorot_bound(rows, cols);
            let values = (0..rows * cols)
                .map(|_| rng.random::<f64>() * 2.0 * s - s)
                .collect();
            Tensor::new(vec![rows, cols], values)
        };
        let embedding = uniform(config.vocab_size, config.embed_dim)?;
        let mut layers = Vec::with_capacity(config.depth());
        let mut fan_in = config.embed_dim;
        for &h in &config.hidden_dims {
            layers.push(Dense {
                weight: uniform(fan_in, h)?,
                bias: Tensor::zeros(vec![1, h])?,
            });
            fan_in = h;
        }
        let classifier = Dense {
            weight: uniform(fan_in, config.num_classes)?,
            bias: Tensor::zeros(vec![1, config.num_classes])?,
        };
        Ok(Self {
            config,
            embedding,
            layers,
            classifier,
        })
    }

    /// Rebuilds a model from parameters in declaration order.
    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::InvalidTensor(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (expected, p) in shapes.iter().zip(&params) {
            if expected.as_slice() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "from_params",
                    left: expected.clone(),
                    right: p.shape().to_vec(),
                });
            }
        }
        let mut it = params.into_iter();
        let embedding = it.next().expect("length checked");
        let layers = (0..config.depth())
            .map(|_| Dense {
                weight: it.next().expect("length checked"),
                bias: it.next().expect("length checked"),
            })
            .collect();
        let classifier = Dense {
            weight: it.next().expect("length checked"),
            bias: it.next().expect("length checked"),
        };
        Ok(Self {
            config,
            embedding,
            layers,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn classifier(&self) -> &Dense {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut Dense {
        &mut self.classifier
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.classifier.weight);
        out.push(&self.classifier.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn bitwise_eq(&self, other: &Model) -> bool {
        self.config == other.config
            && self
                .params()
                .iter()
                .zip(other.params())
                .all(|(a, b)| a.bitwise_eq(b))
    }

    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> ModelVars {
        self.bind_with(g, true)
    }

    /// Records every parameter as a constant; nothing downstream gets gradients.
    pub fn bind_frozen(&self, g: &mut Graph) -> ModelVars {
        self.bind_with(g, false)
    }

    fn bind_with(&self, g: &mut Graph, trainable: bool) -> ModelVars {
        let mut put = |t: &Tensor| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let embedding = put(&self.embedding);
        let layers = self
            .layers
            .iter()
            .map(|l| (put(&l.weight), put(&l.bias)))
            .collect();
        let classifier = (put(&self.classifier.weight), put(&self.classifier.bias));
        ModelVars {
            embedding,
            layers,
            classifier,
        }
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer > self.config.depth() {
            return Err(Error::LayerOutOfRange {
                layer,
                depth: self.config.depth(),
            });
        }
        Ok(())
    }

    /// Records the encoder up to and including `layer`.
    pub fn encode_var(
        &self,
        g: &mut Graph,
        vars: &ModelVars,
        tokens: &[u32],
        layer: usize,
    ) -> Result<Var> {
        self.check_layer(layer)?;
        let pooled = g.embed_mean(vars.embedding, tokens)?;
        self.apply_layers(g, vars, pooled, 0, layer)
    }

    /// Carries an activation taken at `from` through the remaining encoder layers.
    pub fn finish_encode(&self, g: &mut Graph, vars: &ModelVars, z: Var, from: usize) -> Result<Var> {
        self.check_layer(from)?;
        self.apply_layers(g, vars, z, from, self.config.depth())
    }

    fn apply_layers(
        &self,
        g: &mut Graph,
        vars: &ModelVars,
        mut h: Var,
        from: usize,
        to: usize,
    ) -> Result<Var> {
        for &(w, b) in &vars.layers[from..to] {
            let pre = g.matmul(h, w)?;
            let pre = g.add(pre, b)?;
            h = g.tanh(pre);
        }
        Ok(h)
    }

    pub fn logits_var(&self, g: &mut Graph, vars: &ModelVars, z: Var) -> Result<Var> {
        let (w, b) = vars.classifier;
        let out = g.matmul(z, w)?;
        g.add(out, b)
    }

    /// Moves the gradients computed by `g.backward` onto the parameters.
    pub fn absorb_grads(&mut self, g: &mut Graph, vars: &ModelVars) -> Result<()> {
        let mut handles = vec![vars.embedding];
        for &(w, b) in &vars.layers {
            handles.push(w);
            handles.push(b);
        }
        handles.push(vars.classifier.0);
        handles.push(vars.classifier.1);
        for (i, (p, v)) in self.params_mut().into_iter().zip(handles).enumerate() {
            let grad = g.take_grad(v).ok_or(Error::MissingGradient(i))?;
            p.set_grad(grad)?;
        }
        Ok(())
    }

    /// Representation of one token sequence at `layer` (default: final layer).
    pub fn encode(&self, tokens: &[u32], layer: Option<usize>) -> Result<Tensor> {
        let layer = layer.unwrap_or(self.config.depth());
        let mut g = Graph::new();
        let vars = self.bind_frozen(&mut g);
        let z = self.encode_var(&mut g, &vars, tokens, layer)?;
        Ok(g.value(z).clone())
    }

    /// Class probabilities for a final-layer representation.
    pub fn classify(&self, z: &Tensor) -> Result<Vec<f64>> {
        let dim = self.config.representation_dim();
        if z.len() != dim {
            return Err(Error::ShapeMismatch {
                op: "classify",
                left: vec![1, dim],
                right: z.shape().to_vec(),
            });
        }
        let mut g = Graph::new();
        let (w, b) = (
            g.constant(self.classifier.weight.clone()),
            g.constant(self.classifier.bias.clone()),
        );
        let zv = g.constant(Tensor::row(z.values().to_vec())?);
        let out = g.matmul(zv, w)?;
        let logits = g.add(out, b)?;
        Ok(softmax_with_log_norm(g.value(logits).values()).0)
    }

    /// Logits for many sequences, sharing one frozen parameter binding per chunk.
    pub fn logits_many<'a, I>(&self, seqs: I) -> Result<Vec<Vec<f64>>>
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        const CHUNK: usize = 1024;
        let mut out = Vec::new();
        let mut g = Graph::new();
        let mut vars = self.bind_frozen(&mut g);
        for (i, tokens) in seqs.into_iter().enumerate() {
            if i > 0 && i % CHUNK == 0 {
                g = Graph::new();
                vars = self.bind_frozen(&mut g);
            }
            let z = self.encode_var(&mut g, &vars, tokens, self.config.depth())?;
            let logits = self.logits_var(&mut g, &vars, z)?;
            out.push(g.value(logits).values().to_vec());
        }
        Ok(out)
    }

    /// Representations at `layer` for many sequences.
    pub fn encode_many<'a, I>(&self, seqs: I, layer: Option<usize>) -> Result<Vec<Vec<f64>>>
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let layer = layer.unwrap_or(self.config.depth());
        self.check_layer(layer)?;
        let mut g = Graph::new();
        let vars = self.bind_frozen(&mut g);
        seqs.into_iter()
            .map(|tokens| {
                let pooled = g.embed_mean(vars.embedding, tokens)?;
                let mut h = g.value(pooled).values().to_vec();
                for l in &self.layers[..layer] {
                    h = dense_tanh(&h, l);
                }
                Ok(h)
            })
            .collect()
    }

    /// Argmax predictions, ties going to the lowest class index.
    pub fn predict_many<'a, I>(&self, seqs: I) -> Result<Vec<usize>>
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        Ok(self.logits_many(seqs)?.iter().map(|l| argmax(l)).collect())
    }
}

fn dense_tanh(x: &[f64], layer: &Dense) -> Vec<f64> {
    let (k, n) = layer.weight.matrix_dims().expect("2-D weight");
    debug_assert_eq!(k, x.len());
    let w = layer.weight.values();
    let mut out = layer.bias.values().to_vec();
    let mut acc = vec![0.0; n];
    for (p, &xv) in x.iter().enumerate() {
        for (a, &wv) in acc.iter_mut().zip(&w[p * n..(p + 1) * n]) {
            *a += xv * wv;
        }
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = (a + *o).tanh();
    }
    out
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
