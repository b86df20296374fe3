//! Small sequential MLP/CNN models with deterministically ordered parameters.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::RngState;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
    },
    Conv3x3 {
        c_in: usize,
        c_out: usize,
    },
    Flatten,
    Relu,
}

impl LayerSpec {
    fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => Some(vec![inputs, outputs]),
            LayerSpec::Conv3x3 { c_in, c_out } => Some(vec![c_out, c_in, 3, 3]),
            _ => None,
        }
    }

    fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { outputs, .. } => Some(outputs),
            LayerSpec::Conv3x3 { c_out, .. } => Some(c_out),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv3x3 { c_in, .. } => c_in * 9,
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Weight,
    Bias,
}

/// Parameter address. Ordering is (layer asc, weight before bias), which is
/// the enumeration order used everywhere: init draws, optimizer updates,
/// pruning tie-breaks and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    pub layer: usize,
    pub role: Role,
}

impl ParamId {
    pub fn weight(layer: usize) -> Self {
        Self {
            layer,
            role: Role::Weight,
        }
    }

    pub fn bias(layer: usize) -> Self {
        Self {
            layer,
            role: Role::Bias,
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let role = match self.role {
            Role::Weight => "weight",
            Role::Bias => "bias",
        };
        write!(f, "L{}.{role}", self.layer)
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad parameter name {s:?}"));
        let rest = s.strip_prefix('L').ok_or_else(bad)?;
        let (layer, role) = rest.split_once('.').ok_or_else(bad)?;
        if layer.is_empty() || !layer.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let layer = layer.parse().map_err(|_| bad())?;
        match role {
            "weight" => Ok(ParamId::weight(layer)),
            "bias" => Ok(ParamId::bias(layer)),
            _ => Err(bad()),
        }
    }
}

/// Per-sample output shape after running `layers` on `input`.
pub fn output_shape(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>> {
    let mut shape = input.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let bad = |why: String| Error::Config(format!("layer {i} ({layer:?}): {why}"));
        shape = match (*layer, shape.as_slice()) {
            (LayerSpec::Dense { inputs, outputs }, [d]) => {
                if *d != inputs || inputs == 0 || outputs == 0 {
                    return Err(bad(format!("expects {inputs} features, gets {d}")));
                }
                vec![outputs]
            }
            (LayerSpec::Conv3x3 { c_in, c_out }, [c, h, w]) => {
                if *c != c_in || c_in == 0 || c_out == 0 {
                    return Err(bad(format!("expects {c_in} channels, gets {c}")));
                }
                if *h < 3 || *w < 3 {
                    return Err(bad(format!("spatial size {h}×{w} below 3×3")));
                }
                vec![c_out, h - 2, w - 2]
            }
            (LayerSpec::Flatten, s) => vec![s.iter().product()],
            (LayerSpec::Relu, s) => s.to_vec(),
            (_, s) => return Err(bad(format!("cannot consume input of shape {s:?}"))),
        };
    }
    if shape.len() != 1 {
        return Err(Error::Config(format!(
            "model output {shape:?} is not a class vector"
        )));
    }
    Ok(shape)
}

/// He-uniform initialisation: weights uniform in `[−√(6/fan_in), √(6/fan_in)]`
/// drawn in enumeration order, biases zero.
pub fn build_model<T: Element>(
    layers: &[LayerSpec],
    input_shape: &[usize],
    rng: &mut RngState,
) -> Result<Model<T>> {
    output_shape(layers, input_shape)?;
    let mut params = BTreeMap::new();
    for (i, layer) in layers.iter().enumerate() {
        let (Some(wshape), Some(blen)) = (layer.weight_shape(), layer.bias_len()) else {
            continue;
        };
        let bound = (6.0 / layer.fan_in() as f64).sqrt();
        let n: usize = wshape.iter().product();
        let w = (0..n)
            .map(|_| T::from_f64(-bound + 2.0 * bound * rng.next_f64()))
            .collect();
        params.insert(ParamId::weight(i), Tensor::new(wshape, w)?);
        params.insert(ParamId::bias(i), Tensor::zeros(vec![blen]));
    }
    Ok(Model {
        layers: layers.to_vec(),
        params,
    })
}

/// Result of a taped forward pass.
pub struct Forward {
    pub logits: Var,
    pub params: Vec<(ParamId, Var)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Element = f32> {
    layers: Vec<LayerSpec>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

pub type Grads<T = f32> = BTreeMap<ParamId, Vec<T>>;

impl<T: Element> Model<T> {
    /// Assembles a model from explicit parameters, checking that every
    /// weight-bearing layer has exactly the expected tensors.
    pub fn from_params(
        layers: Vec<LayerSpec>,
        params: BTreeMap<ParamId, Tensor<T>>,
    ) -> Result<Self> {
        let mut expected = 0;
        for (i, layer) in layers.iter().enumerate() {
            let (Some(wshape), Some(blen)) = (layer.weight_shape(), layer.bias_len()) else {
                continue;
            };
            expected += 2;
            let w = params.get(&ParamId::weight(i));
            let b = params.get(&ParamId::bias(i));
            match (w, b) {
                (Some(w), Some(b)) if w.shape() == wshape.as_slice() && b.shape() == [blen] => {}
                _ => {
                    return Err(Error::Format(format!(
                        "layer {i}: parameters missing or not shaped {wshape:?} / [{blen}]"
                    )))
                }
            }
        }
        if params.len() != expected {
            return Err(Error::Format(format!(
                "{} parameters for {expected} slots",
                params.len()
            )));
        }
        Ok(Self { layers, params })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<ParamId, Tensor<T>> {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Tensor<T>> {
        self.params.get_mut(&id)
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Weight tensors in enumeration order with their lengths; biases are
    /// never prunable.
    pub fn prunable_slots(&self) -> Vec<(ParamId, usize)> {
        self.params
            .iter()
            .filter(|(id, _)| id.role == Role::Weight)
            .map(|(id, t)| (*id, t.len()))
            .collect()
    }

    pub fn prunable_count(&self) -> usize {
        self.prunable_slots().iter().map(|(_, n)| n).sum()
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            layers: self.layers.clone(),
            params: self.params.iter().map(|(k, v)| (*k, v.cast())).collect(),
        }
    }

    /// Records the forward pass on `tape`. With `track`, parameters are
    /// recorded as trainable leaves.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<T>,
        input: Tensor<T>,
        track: bool,
    ) -> Result<Forward> {
        let mut x = tape.leaf(input.with_requires_grad(false));
        let mut recorded = Vec::new();
        let mut leaf = |tape: &mut Tape<T>, id: ParamId| {
            let t = self.params[&id].clone();
            let v = if track {
                tape.param(t)
            } else {
                tape.leaf(t.with_requires_grad(false))
            };
            recorded.push((id, v));
            v
        };
        for (i, layer) in self.layers.iter().enumerate() {
            x = match layer {
                LayerSpec::Dense { .. } => {
                    if tape.value(x).shape().len() != 2 {
                        return Err(Error::Dimension(format!(
                            "dense layer {i} got input {:?}",
                            tape.value(x).shape()
                        )));
                    }
                    let w = leaf(tape, ParamId::weight(i));
                    let b = leaf(tape, ParamId::bias(i));
                    let y = tape.matmul(x, w)?;
                    tape.add_bias(y, b)?
                }
                LayerSpec::Conv3x3 { .. } => {
                    let k = leaf(tape, ParamId::weight(i));
                    let b = leaf(tape, ParamId::bias(i));
                    let y = tape.conv2d(x, k)?;
                    tape.add_bias(y, b)?
                }
                LayerSpec::Flatten => tape.flatten(x)?,
                LayerSpec::Relu => tape.relu(x),
            };
        }
        if tape.value(x).shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "logits shaped {:?}",
                tape.value(x).shape()
            )));
        }
        Ok(Forward {
            logits: x,
            params: recorded,
        })
    }

    /// Logits for a batch, without gradient tracking.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let out = self.forward_tape(&mut tape, batch.clone(), false)?;
        Ok(tape.value(out.logits).clone())
    }

    pub fn loss(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let out = self.forward_tape(&mut tape, batch.clone(), false)?;
        let loss = tape.softmax_cross_entropy_mean(out.logits, labels)?;
        Ok(tape.value(loss).data()[0].as_f64())
    }

    /// Mean cross-entropy on the batch and the gradient of every parameter.
    pub fn loss_and_grads(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<(f64, Grads<T>)> {
        let mut tape = Tape::new();
        let out = self.forward_tape(&mut tape, batch.clone(), true)?;
        let loss = tape.softmax_cross_entropy_mean(out.logits, labels)?;
        tape.backward(loss)?;
        let value = tape.value(loss).data()[0].as_f64();
        let mut grads = BTreeMap::new();
        for (id, v) in out.params {
            let g = tape
                .take_grad(v)
                .expect("backward fills every tracked leaf");
            crate::tensor::check_finite(&g, "backward")?;
            grads.insert(id, g);
        }
        Ok((value, grads))
    }
}
