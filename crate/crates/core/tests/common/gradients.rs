//! Analytic-vs-numeric gradient comparison for every differentiable op. Each
//! check draws random f64 instances, differentiates a scalar loss on the
//! tape and compares against central differences of the forward functions.

use bprg::data::RngState;
use bprg::model::{build_model, LayerSpec, Model, ParamId};
use bprg::tensor::{self, finite_difference_gradient, max_relative_error, Tape, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;
/// Denominator floor for element-wise comparison; see
/// [`worst_elementwise_floored`].
pub const ELEMENT_FLOOR: f64 = 1e-3;
/// Inputs this close to a ReLU kink are redrawn: a central difference
/// straddling the kink is not a derivative.
pub const KINK_MARGIN: f64 = 1e-3;

fn uniform(rng: &mut RngState, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_f64()
}

fn random_tensor(rng: &mut RngState, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| uniform(rng, -1.0, 1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

fn dim(rng: &mut RngState, lo: usize, hi: usize) -> usize {
    lo + rng.next_below(hi - lo + 1)
}

/// `Σ y ⊙ r` written as `sum(flatten(y) · r)` so the projection goes
/// through the tape.
fn project(tape: &mut Tape<f64>, y: tensor::Var, r: &Tensor<f64>) -> tensor::Var {
    let flat = tape.flatten(y).unwrap();
    let rv = tape.leaf(r.clone());
    let p = tape.matmul(flat, rv).unwrap();
    tape.sum(p).unwrap()
}

fn project_plain(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    let b = y.shape()[0];
    let flat = y.reshape(vec![b, y.len() / b]).unwrap();
    tensor::matmul(&flat, r).unwrap().sum()
}

/// One analytic gradient tensor next to its finite-difference estimate.
pub struct Pair {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Runs `instances` random checks from `seed`.
pub type Check = fn(usize, u64) -> Vec<Pair>;

fn pair(analytic: &[f64], numeric: Tensor<f64>) -> Pair {
    Pair {
        analytic: analytic.to_vec(),
        numeric: numeric.into_data(),
    }
}

/// Worst element-wise relative error over all pairs.
pub fn worst_elementwise(pairs: &[Pair]) -> f64 {
    pairs
        .iter()
        .map(|p| max_relative_error(&p.analytic, &p.numeric))
        .fold(0.0, f64::max)
}

/// Worst element-wise `|a − n| / max(|a|, |n|, floor)`. A floor well above
/// the finite-difference rounding noise (about `ε·|f|/h`) keeps near-zero
/// components from dominating.
pub fn worst_elementwise_floored(pairs: &[Pair], floor: f64) -> f64 {
    pairs
        .iter()
        .flat_map(|p| p.analytic.iter().zip(&p.numeric))
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Worst tensor-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)` over all pairs.
pub fn worst_normwise(pairs: &[Pair]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    pairs
        .iter()
        .map(|p| {
            let diff: Vec<f64> = p
                .analytic
                .iter()
                .zip(&p.numeric)
                .map(|(a, n)| a - n)
                .collect();
            norm(&diff) / norm(&p.analytic).max(norm(&p.numeric)).max(1e-300)
        })
        .fold(0.0, f64::max)
}

pub fn matmul(instances: usize, seed: u64) -> Vec<Pair> {
    let mut rng = RngState::new(seed);
    let mut out = Vec::new();
    for _ in 0..instances {
        let (m, k, n) = (
            dim(&mut rng, 1, 6),
            dim(&mut rng, 1, 6),
            dim(&mut rng, 1, 6),
        );
        let a = random_tensor(&mut rng, vec![m, k]);
        let b = random_tensor(&mut rng, vec![k, n]);
        let r = random_tensor(&mut rng, vec![n, 1]);

        let mut tape = Tape::new();
        let (va, vb) = (tape.param(a.clone()), tape.param(b.clone()));
        let y = tape.matmul(va, vb).unwrap();
        let loss = project(&mut tape, y, &r);
        tape.backward(loss).unwrap();

        let f_a = |x: &Tensor<f64>| project_plain(&tensor::matmul(x, &b).unwrap(), &r);
        let f_b = |x: &Tensor<f64>| project_plain(&tensor::matmul(&a, x).unwrap(), &r);
        out.push(pair(
            tape.grad(va).unwrap(),
            finite_difference_gradient(f_a, &a, STEP),
        ));
        out.push(pair(
            tape.grad(vb).unwrap(),
            finite_difference_gradient(f_b, &b, STEP),
        ));
    }
    out
}

pub fn relu(instances: usize, seed: u64) -> Vec<Pair> {
    let mut rng = RngState::new(seed);
    let mut out = Vec::new();
    for _ in 0..instances {
        let (m, n) = (dim(&mut rng, 1, 6), dim(&mut rng, 1, 8));
        let data = (0..m * n)
            .map(|_| loop {
                let v = uniform(&mut rng, -1.0, 1.0);
                if v.abs() > KINK_MARGIN {
                    break v;
                }
            })
            .collect();
        let x = Tensor::new(vec![m, n], data).unwrap();
        let r = random_tensor(&mut rng, vec![n, 1]);

        let mut tape = Tape::new();
        let vx = tape.param(x.clone());
        let y = tape.relu(vx);
        let loss = project(&mut tape, y, &r);
        tape.backward(loss).unwrap();

        let f = |x: &Tensor<f64>| project_plain(&tensor::relu(x), &r);
        out.push(pair(
            tape.grad(vx).unwrap(),
            finite_difference_gradient(f, &x, STEP),
        ));
    }
    out
}

pub fn conv2d(instances: usize, seed: u64) -> Vec<Pair> {
    let mut rng = RngState::new(seed);
    let mut out = Vec::new();
    for _ in 0..instances {
        let (b, ci, co) = (
            dim(&mut rng, 1, 2),
            dim(&mut rng, 1, 3),
            dim(&mut rng, 1, 3),
        );
        let (h, w) = (dim(&mut rng, 3, 6), dim(&mut rng, 3, 6));
        let x = random_tensor(&mut rng, vec![b, ci, h, w]);
        let k = random_tensor(&mut rng, vec![co, ci, 3, 3]);
        let out_len = tensor::conv2d(&x, &k).unwrap().len() / b;
        let r = random_tensor(&mut rng, vec![out_len, 1]);

        let mut tape = Tape::new();
        let (vx, vk) = (tape.param(x.clone()), tape.param(k.clone()));
        let y = tape.conv2d(vx, vk).unwrap();
        let loss = project(&mut tape, y, &r);
        tape.backward(loss).unwrap();

        let f_x = |t: &Tensor<f64>| project_plain(&tensor::conv2d(t, &k).unwrap(), &r);
        let f_k = |t: &Tensor<f64>| project_plain(&tensor::conv2d(&x, t).unwrap(), &r);
        out.push(pair(
            tape.grad(vx).unwrap(),
            finite_difference_gradient(f_x, &x, STEP),
        ));
        out.push(pair(
            tape.grad(vk).unwrap(),
            finite_difference_gradient(f_k, &k, STEP),
        ));
    }
    out
}

/// Independent cross-entropy: mean of `log Σ exp(z) − z[label]`, summed
/// naively (inputs are small enough not to overflow).
fn cross_entropy_plain(logits: &Tensor<f64>, labels: &[usize]) -> f64 {
    let c = logits.shape()[1];
    let total: f64 = logits
        .data()
        .chunks(c)
        .zip(labels)
        .map(|(row, &l)| row.iter().map(|v| v.exp()).sum::<f64>().ln() - row[l])
        .sum();
    total / labels.len() as f64
}

pub fn softmax_cross_entropy(instances: usize, seed: u64) -> Vec<Pair> {
    let mut rng = RngState::new(seed);
    let mut out = Vec::new();
    for _ in 0..instances {
        let (b, c) = (dim(&mut rng, 1, 6), dim(&mut rng, 2, 8));
        let data = (0..b * c).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let z = Tensor::new(vec![b, c], data).unwrap();
        let labels: Vec<usize> = (0..b).map(|_| rng.next_below(c)).collect();

        let mut tape = Tape::new();
        let vz = tape.param(z.clone());
        let loss = tape.softmax_cross_entropy_mean(vz, &labels).unwrap();
        tape.backward(loss).unwrap();
        assert!((tape.value(loss).data()[0] - cross_entropy_plain(&z, &labels)).abs() < 1e-12);

        let f = |t: &Tensor<f64>| cross_entropy_plain(t, &labels);
        out.push(pair(
            tape.grad(vz).unwrap(),
            finite_difference_gradient(f, &z, STEP),
        ));
    }
    out
}

fn dense_plain(x: &Tensor<f64>, model: &Model<f64>, layer: usize) -> Tensor<f64> {
    let mut z = tensor::matmul(x, model.param(ParamId::weight(layer)).unwrap()).unwrap();
    let bias = model.param(ParamId::bias(layer)).unwrap().data().to_vec();
    let n = bias.len();
    for (i, v) in z.data_mut().iter_mut().enumerate() {
        *v += bias[i % n];
    }
    z
}

/// True when some hidden pre-activation of the dense-relu-dense-relu-dense
/// stack lies within the kink margin.
fn near_kink(model: &Model<f64>, x: &Tensor<f64>) -> bool {
    let z1 = dense_plain(x, model, 0);
    let z2 = dense_plain(&tensor::relu(&z1), model, 2);
    z1.data()
        .iter()
        .chain(z2.data())
        .any(|v| v.abs() <= KINK_MARGIN)
}

/// Full three-layer MLP with softmax cross-entropy, checked for every
/// weight and bias through the model's own loss.
pub fn mlp(instances: usize, seed: u64) -> Vec<Pair> {
    let mut rng = RngState::new(seed);
    let mut out = Vec::new();
    let mut done = 0;
    while done < instances {
        let (d, h1, h2, c, b) = (
            dim(&mut rng, 2, 6),
            dim(&mut rng, 2, 8),
            dim(&mut rng, 2, 8),
            dim(&mut rng, 2, 5),
            dim(&mut rng, 1, 4),
        );
        let layers = [
            LayerSpec::Dense {
                inputs: d,
                outputs: h1,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: h1,
                outputs: h2,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: h2,
                outputs: c,
            },
        ];
        let mut model: Model<f64> = build_model(&layers, &[d], &mut rng).unwrap();
        for t in model.params_mut().values_mut() {
            for v in t.data_mut() {
                *v = uniform(&mut rng, -1.0, 1.0);
            }
        }
        let x = random_tensor(&mut rng, vec![b, d]);
        let labels: Vec<usize> = (0..b).map(|_| rng.next_below(c)).collect();
        if near_kink(&model, &x) {
            continue;
        }
        done += 1;

        let (_, grads) = model.loss_and_grads(&x, &labels).unwrap();
        for (id, g) in &grads {
            let f = |t: &Tensor<f64>| {
                let mut probe = model.clone();
                *probe.param_mut(*id).unwrap() = t.clone();
                probe.loss(&x, &labels).unwrap()
            };
            let fd = finite_difference_gradient(f, model.param(*id).unwrap(), STEP);
            out.push(pair(g, fd));
        }
    }
    out
}
