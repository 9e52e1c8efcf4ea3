//! Parameter storage and dense multi-layer perceptrons.
//!
//! [`ParamStore`] owns every trainable tensor together with its gradient and
//! Adam moment buffers; networks only hold parameter ids. Serialization is
//! bit-exact (`f64::to_le_bytes`), which the checkpoint format relies on.

use std::collections::BTreeMap;

use crate::error::{EvaeError, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::tensor::{matmul, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    /// Adam first-moment buffer.
    pub m: Vec<f64>,
    /// Adam second-moment buffer.
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, usize>,
    /// Number of Adam steps taken (shared across parameters).
    pub adam_step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    ) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(EvaeError::Config(format!(
                "duplicate parameter name {name}"
            )));
        }
        if values.len() != rows * cols {
            return Err(EvaeError::Config(format!(
                "parameter {name}: {rows}x{cols} expects {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        let n = values.len();
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            values,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        let p = &mut self.params[id.0];
        debug_assert_eq!(p.grad.len(), grad.len());
        for (g, d) in p.grad.iter_mut().zip(grad.iter()) {
            *g += d;
        }
    }

    /// Bit-exact binary serialization of parameters, gradients excluded.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        for p in &self.params {
            let name = p.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(p.rows as u64).to_le_bytes());
            out.extend_from_slice(&(p.cols as u64).to_le_bytes());
            for buf in [&p.values, &p.m, &p.v] {
                for v in buf.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut cur = Cursor::new(bytes);
        let count = cur.u64()? as usize;
        let adam_step = cur.u64()?;
        let mut store = ParamStore::new();
        store.adam_step = adam_step;
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| EvaeError::Integrity("invalid parameter name".into()))?;
            let rows = cur.u64()? as usize;
            let cols = cur.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| EvaeError::Integrity("parameter size overflow".into()))?;
            let values = cur.f64_vec(n)?;
            let m = cur.f64_vec(n)?;
            let v = cur.f64_vec(n)?;
            let id = store.add(&name, rows, cols, values)?;
            let p = store.get_mut(id);
            p.m = m;
            p.v = v;
        }
        Ok((store, cur.pos))
    }
}

/// Byte-slice reader used by the binary formats in this crate.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(EvaeError::Integrity("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Exp,
}

pub fn apply_activation(kind: Activation, data: &mut [f64]) {
    match kind {
        Activation::Relu => data.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Tanh => data.iter_mut().for_each(|v| *v = v.tanh()),
        Activation::Sigmoid => data.iter_mut().for_each(|v| *v = sigmoid(*v)),
        Activation::Exp => data.iter_mut().for_each(|v| *v = v.exp()),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y = x @ w + b` with the bias broadcast over rows.
pub fn affine_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    batch: usize,
    inp: usize,
    out: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * out];
    matmul(x, w, &mut y, batch, inp, out);
    for row in y.chunks_exact_mut(out) {
        for (yv, bv) in row.iter_mut().zip(b.iter()) {
            *yv += bv;
        }
    }
    y
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Option<Activation>,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// A dense feed-forward network. `dims` lists layer widths from input to
/// output; hidden layers use `hidden_act`, the output layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<LayerSpec>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        hidden_act: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.is_empty() {
            return Err(EvaeError::Config(
                "mlp needs at least an input width".into(),
            ));
        }
        let mut layers = Vec::new();
        for i in 0..dims.len().saturating_sub(1) {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            if fan_in == 0 || fan_out == 0 {
                return Err(EvaeError::Config(format!(
                    "mlp {prefix}: zero-width layer {i}"
                )));
            }
            // Xavier/Glorot uniform.
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let values: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| (rng.uniform() * 2.0 - 1.0) * bound)
                .collect();
            let weight = store.add(&format!("{prefix}.w{i}"), fan_in, fan_out, values)?;
            let bias = store.add(&format!("{prefix}.b{i}"), 1, fan_out, vec![0.0; fan_out])?;
            let activation = if i + 2 < dims.len() {
                Some(hidden_act)
            } else {
                None
            };
            layers.push(LayerSpec {
                in_dim: fan_in,
                out_dim: fan_out,
                activation,
                weight,
                bias,
            });
        }
        Ok(Mlp {
            layers,
            input_dim: dims[0],
            output_dim: *dims.last().unwrap(),
        })
    }

    /// Rebuild the layer handles for parameters already present in `store`
    /// (e.g. after deserializing a checkpoint).
    pub fn attach(
        store: &ParamStore,
        prefix: &str,
        dims: &[usize],
        hidden_act: Activation,
    ) -> Result<Self> {
        if dims.is_empty() {
            return Err(EvaeError::Config(
                "mlp needs at least an input width".into(),
            ));
        }
        let mut layers = Vec::new();
        for i in 0..dims.len().saturating_sub(1) {
            let weight = store
                .id(&format!("{prefix}.w{i}"))
                .ok_or_else(|| EvaeError::Integrity(format!("missing parameter {prefix}.w{i}")))?;
            let bias = store
                .id(&format!("{prefix}.b{i}"))
                .ok_or_else(|| EvaeError::Integrity(format!("missing parameter {prefix}.b{i}")))?;
            let wp = store.get(weight);
            if (wp.rows, wp.cols) != (dims[i], dims[i + 1]) {
                return Err(EvaeError::Integrity(format!(
                    "parameter {prefix}.w{i} has shape {}x{}, expected {}x{}",
                    wp.rows,
                    wp.cols,
                    dims[i],
                    dims[i + 1]
                )));
            }
            let activation = if i + 2 < dims.len() {
                Some(hidden_act)
            } else {
                None
            };
            layers.push(LayerSpec {
                in_dim: dims[i],
                out_dim: dims[i + 1],
                activation,
                weight,
                bias,
            });
        }
        Ok(Mlp {
            layers,
            input_dim: dims[0],
            output_dim: *dims.last().unwrap(),
        })
    }

    /// Plain numeric forward pass (no gradient tape). An empty layer list is
    /// the identity network.
    pub fn forward_values(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let (batch, cols) = x.dims2()?;
        if cols != self.input_dim {
            return Err(EvaeError::Config(format!(
                "input width {cols} does not match network input {}",
                self.input_dim
            )));
        }
        x.check_finite("mlp input")?;
        if self.layers.is_empty() {
            return Ok(x.clone());
        }
        let mut cur = x.values().to_vec();
        let mut cur_dim = self.input_dim;
        for layer in &self.layers {
            let w = store.get(layer.weight);
            let b = store.get(layer.bias);
            let mut y = affine_forward(&cur, &w.values, &b.values, batch, cur_dim, layer.out_dim);
            if let Some(act) = layer.activation {
                apply_activation(act, &mut y);
            }
            cur = y;
            cur_dim = layer.out_dim;
        }
        let out = Tensor::matrix(batch, cur_dim, cur)?;
        out.check_finite("mlp output")?;
        Ok(out)
    }

    /// Record the forward pass on a graph for backpropagation.
    pub fn graph_forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let mut cur = x;
        for layer in &self.layers {
            let w = g.param(store, layer.weight)?;
            let b = g.param(store, layer.bias)?;
            cur = g.affine(cur, w, b)?;
            if let Some(act) = layer.activation {
                cur = g.activation(act, cur)?;
            }
        }
        Ok(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_network_returns_input() {
        let store = ParamStore::new();
        let net = Mlp {
            layers: vec![],
            input_dim: 3,
            output_dim: 3,
        };
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = net.forward_values(&store, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weight_layer_returns_bias() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seeded(0);
        let net = Mlp::new(&mut store, "f", &[3, 2], Activation::Tanh, &mut rng).unwrap();
        let w = net.layers[0].weight;
        store.get_mut(w).values.iter_mut().for_each(|v| *v = 0.0);
        let b = net.layers[0].bias;
        store.get_mut(b).values.copy_from_slice(&[0.5, -1.5]);
        let x = Tensor::matrix(2, 3, vec![9.0; 6]).unwrap();
        let y = net.forward_values(&store, &x).unwrap();
        assert_eq!(y.values(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn two_layer_tanh_matches_independent_reevaluation() {
        // Recompute the layer algebra with straightforward per-element loops,
        // independent of the matmul kernels.
        let mut store = ParamStore::new();
        let mut rng = Rng::seeded(77);
        let net = Mlp::new(&mut store, "f", &[4, 5, 2], Activation::Tanh, &mut rng).unwrap();
        let x: Vec<f64> = (0..8).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let xt = Tensor::matrix(2, 4, x.clone()).unwrap();
        let y = net.forward_values(&store, &xt).unwrap();

        let w0 = store.get(net.layers[0].weight);
        let b0 = store.get(net.layers[0].bias);
        let w1 = store.get(net.layers[1].weight);
        let b1 = store.get(net.layers[1].bias);
        for r in 0..2 {
            let mut h = vec![0.0; 5];
            for (j, hj) in h.iter_mut().enumerate() {
                let mut acc = b0.values[j];
                for i in 0..4 {
                    acc += x[r * 4 + i] * w0.values[i * 5 + j];
                }
                *hj = acc.tanh();
            }
            for o in 0..2 {
                let mut acc = b1.values[o];
                for (j, hj) in h.iter().enumerate() {
                    acc += hj * w1.values[j * 2 + o];
                }
                let got = y.values()[r * 2 + o];
                assert!(
                    (got - acc).abs() <= 1e-12 * acc.abs().max(1.0),
                    "row {r} out {o}: {got} vs {acc}"
                );
            }
        }
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seeded(1);
        let net = Mlp::new(&mut store, "f", &[4, 2], Activation::Relu, &mut rng).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(
            net.forward_values(&store, &x),
            Err(EvaeError::Config(_))
        ));
    }

    #[test]
    fn param_store_round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seeded(5);
        let _ = Mlp::new(&mut store, "enc", &[7, 3], Activation::Relu, &mut rng).unwrap();
        store.adam_step = 17;
        // Touch the moments so they are non-trivial.
        for p in store.iter_mut() {
            for (i, m) in p.m.iter_mut().enumerate() {
                *m = (i as f64) * 1.0e-3 + 0.1;
            }
        }
        let bytes = store.to_bytes();
        let (back, used) = ParamStore::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, {
            let mut s = store.clone();
            s.zero_grads();
            s
        });
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn duplicate_param_name_rejected() {
        let mut store = ParamStore::new();
        store.add("w", 1, 1, vec![0.0]).unwrap();
        assert!(matches!(
            store.add("w", 1, 1, vec![0.0]),
            Err(EvaeError::Config(_))
        ));
    }
}
