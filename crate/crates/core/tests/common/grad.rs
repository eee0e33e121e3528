//! Finite-difference oracle for the autodiff primitives and the full model.

use interpoll::autodiff::{Graph, Tensor, Var};
use interpoll::model::{Model, ModelConfig};
use rand::Rng;

use super::{central_diff, max_rel_err, random_tensor, rng, FD_STEP};

pub const POINTS: u64 = 100;
pub const TOLERANCE: f64 = 1e-4;

pub const PRIMITIVES: [&str; 8] = [
    "matmul",
    "add_scale",
    "tanh_sum",
    "convex_combine",
    "embed_mean",
    "softmax_cross_entropy",
    "shared_use",
    "stop_gradient",
];

/// Builds a scalar from leaf inputs.
pub type Build = dyn Fn(&mut Graph, &[Var]) -> Var;

pub fn sum_tanh(g: &mut Graph, v: Var) -> Var {
    let t = g.tanh(v);
    g.sum(t)
}

/// Worst relative error between backprop and central differences over every input.
pub fn input_grad_error(inputs: &[Tensor], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = build(&mut g, &vars);
    g.backward(root).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).unwrap().to_vec();
        let mut f = |x: &[f64]| {
            let mut h = Graph::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    let value = if j == k {
                        Tensor::new(t.shape().to_vec(), x.to_vec()).unwrap()
                    } else {
                        t.clone()
                    };
                    h.leaf(value)
                })
                .collect();
            let r = build(&mut h, &vs);
            h.scalar(r)
        };
        let numeric = central_diff(&mut f, inputs[k].values(), FD_STEP);
        worst = worst.max(max_rel_err(&analytic, &numeric));
    }
    worst
}

/// Error of primitive `name` at random point `point`.
pub fn primitive_error(name: &str, point: u64) -> f64 {
    let mut r = rng(1000 * (1 + PRIMITIVES.iter().position(|p| *p == name).unwrap() as u64) + point);
    let t = |r: &mut rand_chacha::ChaCha8Rng, shape: &[usize]| random_tensor(r, shape, 1.5);
    match name {
        "matmul" => {
            let (m, k, n) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..4));
            let inputs = [t(&mut r, &[m, k]), t(&mut r, &[k, n])];
            input_grad_error(&inputs, &|g, v| {
                let y = g.matmul(v[0], v[1]).unwrap();
                sum_tanh(g, y)
            })
        }
        "add_scale" => {
            let s = [r.random_range(1..4), r.random_range(1..5)];
            let inputs = [t(&mut r, &s), t(&mut r, &s)];
            input_grad_error(&inputs, &|g, v| {
                let y = g.add(v[0], v[1]).unwrap();
                let y = g.scale(y, -0.7);
                sum_tanh(g, y)
            })
        }
        "tanh_sum" => {
            let rows = r.random_range(1..4);
            let inputs = [t(&mut r, &[rows, 3])];
            input_grad_error(&inputs, &|g, v| {
                let a = g.tanh(v[0]);
                let b = g.tanh(a);
                g.sum(b)
            })
        }
        "convex_combine" => {
            let lambda = match point {
                0 => 0.0,
                1 => 1.0,
                _ => r.random_range(0.0..1.0),
            };
            let s = [1, r.random_range(1..6)];
            let inputs = [t(&mut r, &s), t(&mut r, &s)];
            input_grad_error(&inputs, &move |g, v| {
                let y = g.convex_combine(v[0], v[1], lambda).unwrap();
                sum_tanh(g, y)
            })
        }
        "embed_mean" => {
            let (rows, width) = (r.random_range(2..8), r.random_range(1..5));
            let len = r.random_range(1..7);
            let tokens: Vec<u32> = (0..len).map(|_| r.random_range(0..rows as u32)).collect();
            let inputs = [t(&mut r, &[rows, width])];
            input_grad_error(&inputs, &move |g, v| {
                let y = g.embed_mean(v[0], &tokens).unwrap();
                sum_tanh(g, y)
            })
        }
        "softmax_cross_entropy" => {
            let k = r.random_range(2..6);
            let label = r.random_range(0..k);
            let inputs = [random_tensor(&mut r, &[1, k], 4.0)];
            input_grad_error(&inputs, &move |g, v| g.softmax_cross_entropy(v[0], label).unwrap())
        }
        "shared_use" => {
            let width = r.random_range(1..5);
            let inputs = [t(&mut r, &[1, width])];
            input_grad_error(&inputs, &|g, v| {
                let a = g.tanh(v[0]);
                let b = g.add(a, v[0]).unwrap();
                let c = g.add(b, a).unwrap();
                sum_tanh(g, c)
            })
        }
        "stop_gradient" => {
            let x = t(&mut r, &[1, 4]);
            let mut g = Graph::new();
            let v = g.leaf(x.clone());
            let stopped = g.stop_gradient(v);
            let th = g.tanh(v);
            let y = g.add(th, stopped).unwrap();
            let root = sum_tanh(&mut g, y);
            g.backward(root).unwrap();
            let analytic = g.grad(v).unwrap().to_vec();
            // The stopped branch acts as a constant equal to the original input.
            let mut f = |z: &[f64]| {
                x.values()
                    .iter()
                    .zip(z)
                    .map(|(c, zi)| (zi.tanh() + c).tanh())
                    .sum::<f64>()
            };
            max_rel_err(&analytic, &central_diff(&mut f, x.values(), FD_STEP))
        }
        other => panic!("unknown primitive {other}"),
    }
}

fn model_loss(model: &Model, tokens: &[u32], label: usize) -> (f64, Vec<f64>) {
    let mut m = model.clone();
    let mut g = Graph::new();
    let vars = m.bind(&mut g);
    let z = m.encode_var(&mut g, &vars, tokens, m.config().depth()).unwrap();
    let logits = m.logits_var(&mut g, &vars, z).unwrap();
    let loss = g.softmax_cross_entropy(logits, label).unwrap();
    let value = g.scalar(loss);
    g.backward(loss).unwrap();
    m.absorb_grads(&mut g, &vars).unwrap();
    let grads = m.params().iter().flat_map(|p| p.grad().unwrap().to_vec()).collect();
    (value, grads)
}

fn with_params(model: &Model, flat: &[f64]) -> Model {
    let mut m = model.clone();
    let mut offset = 0;
    for p in m.params_mut() {
        let n = p.len();
        p.values_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    m
}

/// Encoder, classifier and loss of a random small model, differentiated
/// with respect to every parameter.
pub fn end_to_end_error(point: u64) -> f64 {
    let mut r = rng(90_000 + point);
    let depth = r.random_range(0..3);
    let config = ModelConfig {
        vocab_size: r.random_range(3..9),
        embed_dim: r.random_range(2..5),
        hidden_dims: (0..depth).map(|_| r.random_range(2..5)).collect(),
        num_classes: r.random_range(2..4),
        seed: point,
    };
    let model = Model::init(config.clone()).unwrap();
    let len = r.random_range(1..6);
    let tokens: Vec<u32> = (0..len).map(|_| r.random_range(0..config.vocab_size as u32)).collect();
    let label = r.random_range(0..config.num_classes);
    let (_, analytic) = model_loss(&model, &tokens, label);
    let flat: Vec<f64> = model.params().iter().flat_map(|t| t.values().to_vec()).collect();
    let mut f = |x: &[f64]| model_loss(&with_params(&model, x), &tokens, label).0;
    max_rel_err(&analytic, &central_diff(&mut f, &flat, FD_STEP))
}
