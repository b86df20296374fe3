use super::kernels::{self, ConvDims};
use super::{check_finite, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T: Element> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    /// `x` is `b×c` or `b×c×h×w`; `bias` has `c` entries.
    AddBias {
        x: Var,
        bias: Var,
        channels: usize,
        inner: usize,
    },
    Relu {
        x: Var,
    },
    Conv2d {
        x: Var,
        kernel: Var,
        dims: ConvDims,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Linear record of forward operations, replayed in reverse by
/// [`Tape::backward`]. Nodes are only ever appended, so operands always
/// precede their results.
#[derive(Debug)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input; its `requires_grad` flag is kept as given.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Records a trainable input.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Removes the recorded tensor's gradient buffer, leaving an empty one.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad.take()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].value.requires_grad())
    }

    fn output(
        &mut self,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        inputs: &[Var],
        name: &'static str,
    ) -> Result<Var> {
        check_finite(&data, name)?;
        let rg = self.needs(inputs);
        let t = Tensor::from_parts_unchecked(shape, data).with_requires_grad(rg);
        Ok(self.push(t, op))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = kernels::matmul_dims(self.value(a).shape(), self.value(b).shape())?;
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_nn(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        self.output(
            vec![m, n],
            out,
            Op::MatMul { a, b, m, k, n },
            &[a, b],
            "matmul",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension(format!(
                "add {:?} + {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = ta.shape().to_vec();
        self.output(shape, out, Op::Add { a, b }, &[a, b], "add")
    }

    /// Adds a per-feature (2-d input) or per-channel (4-d input) bias.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (channels, inner) = match tx.shape() {
            [_, c] => (*c, 1),
            [_, c, h, w] => (*c, h * w),
            s => return Err(Error::Dimension(format!("bias add on shape {s:?}"))),
        };
        if tb.len() != channels {
            return Err(Error::Dimension(format!(
                "bias of {} entries for {channels} channels",
                tb.len()
            )));
        }
        let mut out = tx.data().to_vec();
        for (chunk_idx, chunk) in out.chunks_mut(inner).enumerate() {
            let bv = tb.data()[chunk_idx % channels];
            for v in chunk {
                *v = *v + bv;
            }
        }
        let shape = tx.shape().to_vec();
        self.output(
            shape,
            out,
            Op::AddBias {
                x,
                bias,
                channels,
                inner,
            },
            &[x, bias],
            "add_bias",
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = super::relu(self.value(x));
        let rg = self.needs(&[x]);
        self.push(t.with_requires_grad(rg), Op::Relu { x })
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let dims = kernels::conv_dims(self.value(x).shape(), self.value(kernel).shape())?;
        let mut out = vec![T::zero(); dims.out_len()];
        kernels::conv2d_forward(
            self.value(x).data(),
            self.value(kernel).data(),
            &mut out,
            &dims,
        );
        self.output(
            dims.out_shape(),
            out,
            Op::Conv2d { x, kernel, dims },
            &[x, kernel],
            "conv2d",
        )
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let b = tx.shape()[0];
        let shape = vec![b, tx.len() / b];
        self.reshape(x, shape)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t.with_requires_grad(rg), Op::Reshape { x }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.output(vec![1], vec![s], Op::Sum { x }, &[x], "sum")
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy_mean(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let [b, c] = *tl.shape() else {
            return Err(Error::Dimension(format!(
                "cross-entropy expects b×c logits, got {:?}",
                tl.shape()
            )));
        };
        if labels.len() != b {
            return Err(Error::Dimension(format!(
                "{} labels for batch of {b}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Input(format!("label {bad} outside [0, {c})")));
        }
        let mut probs = tl.data().to_vec();
        let mut total = T::zero();
        for (row, (&label, raw)) in probs
            .chunks_mut(c)
            .zip(labels.iter().zip(tl.data().chunks(c)))
        {
            // log-sum-exp with max subtraction keeps large logits finite
            let max = raw.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = raw
                .iter()
                .fold(T::zero(), |acc, &v| acc + (v - max).exp())
                .ln();
            total = total + (lse - (raw[label] - max));
            kernels::softmax_in_place(row);
        }
        let loss = total / T::from_f64(b as f64);
        let op = Op::SoftmaxXent {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.output(
            vec![1],
            vec![loss],
            op,
            &[logits],
            "softmax_cross_entropy_mean",
        )
    }

    /// Reverse sweep from a scalar `loss`. Afterwards every tensor on the
    /// tape with `requires_grad` holds a gradient buffer; tensors the loss
    /// does not depend on get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.value(loss).requires_grad() {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.value.requires_grad() {
                let g = g.unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                node.value.set_grad(g);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let rg = |v: Var| nodes[v.0].value.requires_grad();
        let val = |v: Var| &nodes[v.0].value;
        fn slot<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
        }

        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                if rg(*a) {
                    let ga = slot(grads, *a, m * k);
                    kernels::matmul_nt_acc(g, val(*b).data(), ga, *m, *k, *n);
                }
                if rg(*b) {
                    let gb = slot(grads, *b, k * n);
                    kernels::matmul_tn_acc(val(*a).data(), g, gb, *m, *k, *n);
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if rg(v) {
                        let gv = slot(grads, v, g.len());
                        for (o, &x) in gv.iter_mut().zip(g) {
                            *o = *o + x;
                        }
                    }
                }
            }
            Op::AddBias {
                x,
                bias,
                channels,
                inner,
            } => {
                if rg(*x) {
                    let gx = slot(grads, *x, g.len());
                    for (o, &v) in gx.iter_mut().zip(g) {
                        *o = *o + v;
                    }
                }
                if rg(*bias) {
                    let gb = slot(grads, *bias, *channels);
                    for (chunk_idx, chunk) in g.chunks(*inner).enumerate() {
                        let c = chunk_idx % channels;
                        gb[c] = chunk.iter().fold(gb[c], |acc, &v| acc + v);
                    }
                }
            }
            Op::Relu { x } => {
                if rg(*x) {
                    let xs = val(*x).data();
                    let gx = slot(grads, *x, g.len());
                    for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(xs) {
                        if xv > T::zero() {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::Conv2d { x, kernel, dims } => {
                let xd = val(*x).data();
                let kd = val(*kernel).data();
                let mut gx = rg(*x).then(|| {
                    grads[x.0]
                        .take()
                        .unwrap_or_else(|| vec![T::zero(); xd.len()])
                });
                let mut gk = rg(*kernel).then(|| {
                    grads[kernel.0]
                        .take()
                        .unwrap_or_else(|| vec![T::zero(); kd.len()])
                });
                kernels::conv2d_backward(xd, kd, g, gx.as_deref_mut(), gk.as_deref_mut(), dims);
                if let Some(gx) = gx {
                    grads[x.0] = Some(gx);
                }
                if let Some(gk) = gk {
                    grads[kernel.0] = Some(gk);
                }
            }
            Op::Reshape { x } => {
                if rg(*x) {
                    let gx = slot(grads, *x, g.len());
                    for (o, &v) in gx.iter_mut().zip(g) {
                        *o = *o + v;
                    }
                }
            }
            Op::Sum { x } => {
                if rg(*x) {
                    let len = val(*x).len();
                    let gx = slot(grads, *x, len);
                    for o in gx.iter_mut() {
                        *o = *o + g[0];
                    }
                }
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                if rg(*logits) {
                    let b = labels.len();
                    let c = probs.len() / b;
                    let scale = g[0] / T::from_f64(b as f64);
                    let gl = slot(grads, *logits, probs.len());
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { T::one() } else { T::zero() };
                            let o = &mut gl[i * c + j];
                            *o = *o + (probs[i * c + j] - onehot) * scale;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
