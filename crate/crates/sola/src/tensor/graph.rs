//! Reverse-mode tape over dense tensors.
//!
//! The tape is eager: every op computes its value when pushed, so callers can
//! inspect intermediate results (argmin choices, label masks) while building
//! the graph. Internal arithmetic runs in `f64` regardless of the tensor
//! precision and rounds once into `F` per output element; this keeps 32-bit
//! and 64-bit runs of the same op within one rounding of each other.
//!
//! `backward` walks nodes in reverse creation order, so every node is visited
//! after all of its consumers. Gradients are held per node as `Option<Tensor>`
//! and double as the reachability marker: nodes the loss never touched stay
//! `None` and are skipped.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Tape operation. Variants hold input node ids plus immediate data that is
/// not differentiated (indices, constants, strides).
#[derive(Debug, Clone)]
pub enum Op {
    /// Constant leaf.
    Input,
    /// Parameter leaf; payload is the index into the originating [`ParamStore`].
    Param(usize),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// y = scale·x + shift with compile-time constants.
    Affine(NodeId, f64, f64),
    /// Adds a length-C bias vector to every row of an R×C matrix.
    AddRowBias(NodeId, NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Ln(NodeId),
    /// y = min(max(x, lo), hi); gradient passes where lo ≤ x ≤ hi.
    Clamp(NodeId, f64, f64),
    Softmax(NodeId, usize),
    MeanAxis(NodeId, usize),
    MeanAll(NodeId),
    SumAll(NodeId),
    /// Per-row normalization with learned gain/bias, eps 1e-5, biased variance.
    LayerNorm(NodeId, NodeId, NodeId),
    /// (x: T×D, kernel: k×D×D', bias: D', stride); "same" zero padding,
    /// T' = ceil(T/stride).
    Conv1d(NodeId, NodeId, NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    SliceRows(NodeId, usize, usize),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    ConcatCols(Vec<NodeId>),
    /// y[r,c] = w[r]·x[r,c] for x: R×C, w: length-R vector.
    ScaleRows(NodeId, NodeId),
    /// Packs rank-0 nodes into a length-n vector.
    StackScalars(Vec<NodeId>),
    /// Means each contiguous block of `seg` rows: (S·seg)×C → S×C.
    MeanRowSegments(NodeId, usize),
    Reshape(NodeId, Vec<usize>),
    /// cos(a,b) over flattened vectors; norms floored at 1e-8, exact zero
    /// vectors are an error. The floor is treated as a constant in backward.
    CosineSim(NodeId, NodeId),
}

/// Norm floor inside cosine similarity.
pub const COSINE_NORM_FLOOR: f64 = 1e-8;
/// Layer-normalization variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

struct Node<F> {
    op: Op,
    value: Tensor<F>,
}

/// Named parameters with matching gradient slots, in insertion order.
///
/// Insertion order is the canonical ordering for gradient vectors,
/// checkpoints, and the optimizer state; it must be deterministic.
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
    grads: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
    rng_seed: u64,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new(rng_seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Registers a parameter; names must be unique.
    pub fn add(&mut self, name: &str, value: Tensor<F>) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name {name:?}")));
        }
        let idx = self.values.len();
        self.index.insert(name.to_string(), idx);
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(value.shape().to_vec()));
        self.values.push(value);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn value(&self, idx: usize) -> &Tensor<F> {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor<F> {
        &mut self.values[idx]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn grad(&self, idx: usize) -> &Tensor<F> {
        &self.grads[idx]
    }

    pub fn grad_by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.index_of(name).map(|i| &self.grads[i])
    }

    /// Simultaneous mutable value and read-only gradient for one parameter,
    /// as an optimizer step needs.
    pub fn value_and_grad_mut(&mut self, idx: usize) -> (&mut Tensor<F>, &Tensor<F>) {
        (&mut self.values[idx], &self.grads[idx])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v = F::zero();
            }
        }
    }

    /// Replaces all gradients: listed parameters get their gradient, the rest
    /// get zeros. Shapes are validated.
    pub fn assign_grads(&mut self, grads: Vec<(usize, Tensor<F>)>) -> Result<()> {
        self.zero_grads();
        for (idx, g) in grads {
            if g.shape() != self.values[idx].shape() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} != parameter {:?} shape {:?}",
                    g.shape(),
                    self.names[idx],
                    self.values[idx].shape()
                )));
            }
            self.grads[idx] = g;
        }
        Ok(())
    }

    /// Global L2 norm over all gradients, accumulated in f64.
    pub fn grad_global_norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for g in &self.grads {
            for v in g.data() {
                let x = v.as_f64();
                acc += x * x;
            }
        }
        acc.sqrt()
    }

    /// Scales every gradient element in place; math in f64, one rounding.
    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v = F::from_f64(v.as_f64() * factor);
            }
        }
    }

    /// Casts every parameter through f64 into another precision. Gradients
    /// reset to zero in the copy.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new(self.rng_seed);
        for (name, value) in self.iter() {
            out.add(name, value.cast()).expect("names already unique");
        }
        out
    }
}

/// Gradients keyed by [`ParamStore`] index, in parameter insertion order.
pub type ParamGrads<F> = Vec<(usize, Tensor<F>)>;

/// Eager reverse-mode tape.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    /// (store index, leaf node) per distinct parameter, in first-use order.
    param_nodes: Vec<(usize, NodeId)>,
    param_cache: HashMap<usize, NodeId>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_nodes: Vec::new(),
            param_cache: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor<F>, context: &str) -> Result<NodeId> {
        value.check_finite(context)?;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        Ok(id)
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn rows_cols(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.rows(), v.cols())
    }

    fn require_rank2(&self, id: NodeId, what: &str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::shape(format!("{what} expects a matrix, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    // ----- leaves -----

    pub fn input(&mut self, value: Tensor<F>) -> Result<NodeId> {
        self.push(Op::Input, value, "input")
    }

    /// Parameter leaf; repeated requests for the same parameter return the
    /// same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<F>, name: &str) -> Result<NodeId> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name:?}")))?;
        if let Some(&id) = self.param_cache.get(&idx) {
            return Ok(id);
        }
        let id = self.push(Op::Param(idx), store.value(idx).clone(), "param")?;
        self.param_cache.insert(idx, id);
        self.param_nodes.push((idx, id));
        Ok(id)
    }

    // ----- ops -----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.require_rank2(a, "matmul lhs")?;
        let (kb, n) = self.require_rank2(b, "matmul rhs")?;
        if ka != kb {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {m}x{ka} vs {kb}x{n}"
            )));
        }
        let out = matmul_nn(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            ka,
            n,
        );
        self.push(Op::Matmul(a, b), Tensor::from_parts(vec![m, n], out), "matmul")
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.require_rank2(a, "transpose")?;
        let x = self.nodes[a.0].value.data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        self.push(Op::Transpose(a), Tensor::from_parts(vec![c, r], out), "transpose")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn zip_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: shape {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let xa = self.nodes[a.0].value.data();
        let xb = self.nodes[b.0].value.data();
        let out: Vec<F> = xa
            .iter()
            .zip(xb)
            .map(|(x, y)| F::from_f64(f(x.as_f64(), y.as_f64())))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(op, Tensor::from_parts(shape, out), what)
    }

    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        let out: Vec<F> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|x| F::from_f64(scale * x.as_f64() + shift))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Affine(a, scale, shift), Tensor::from_parts(shape, out), "affine")
    }

    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.require_rank2(x, "add_row_bias input")?;
        let bs = self.shape(bias);
        if bs != [c] {
            return Err(Error::shape(format!(
                "add_row_bias: bias shape {bs:?} does not match {c} columns"
            )));
        }
        let xv = self.nodes[x.0].value.data();
        let bv = self.nodes[bias.0].value.data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = F::from_f64(xv[i * c + j].as_f64() + bv[j].as_f64());
            }
        }
        self.push(
            Op::AddRowBias(x, bias),
            Tensor::from_parts(vec![r, c], out),
            "add_row_bias",
        )
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let out: Vec<F> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|x| F::from_f64(sigmoid_f64(x.as_f64())))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Sigmoid(a), Tensor::from_parts(shape, out), "sigmoid")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let out: Vec<F> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|x| if *x > F::zero() { *x } else { F::zero() })
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Relu(a), Tensor::from_parts(shape, out), "relu")
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        let out: Vec<F> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|x| F::from_f64(x.as_f64().ln()))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Ln(a), Tensor::from_parts(shape, out), "ln")
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if !(lo <= hi) {
            return Err(Error::config(format!("clamp bounds inverted: [{lo}, {hi}]")));
        }
        let out: Vec<F> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|x| F::from_f64(x.as_f64().clamp(lo, hi)))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Clamp(a, lo, hi), Tensor::from_parts(shape, out), "clamp")
    }

    /// Softmax along `axis`, stabilized by max subtraction. Rank-1 tensors
    /// use axis 0; rank-2 tensors accept axis 0 (down columns) or 1 (along
    /// rows).
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        let (lanes, lane_len, stride, lane_start): (usize, usize, usize, Box<dyn Fn(usize) -> usize>) =
            match (shape.as_slice(), axis) {
                ([n], 0) => (1, *n, 1, Box::new(|_| 0)),
                ([r, c], 1) => {
                    let c = *c;
                    (*r, c, 1, Box::new(move |lane| lane * c))
                }
                ([r, c], 0) => (*c, *r, *c, Box::new(|lane| lane)),
                (s, ax) => {
                    return Err(Error::shape(format!(
                        "softmax axis {ax} invalid for shape {s:?}"
                    )))
                }
            };
        if lane_len == 0 {
            return Err(Error::shape("softmax over an empty axis".to_string()));
        }
        let x = self.nodes[a.0].value.data();
        let mut out = vec![F::zero(); x.len()];
        for lane in 0..lanes {
            let base = lane_start(lane);
            let mut m = f64::NEG_INFINITY;
            for k in 0..lane_len {
                m = m.max(x[base + k * stride].as_f64());
            }
            let mut denom = 0.0f64;
            let mut exps = vec![0.0f64; lane_len];
            for k in 0..lane_len {
                let e = (x[base + k * stride].as_f64() - m).exp();
                exps[k] = e;
                denom += e;
            }
            for k in 0..lane_len {
                out[base + k * stride] = F::from_f64(exps[k] / denom);
            }
        }
        self.push(Op::Softmax(a, axis), Tensor::from_parts(shape, out), "softmax")
    }

    /// Mean along `axis` of a matrix: axis 0 → length-C vector of column
    /// means, axis 1 → length-R vector of row means.
    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let (r, c) = self.require_rank2(a, "mean_axis")?;
        if axis > 1 {
            return Err(Error::shape(format!("mean_axis axis {axis} out of range")));
        }
        let reduce_len = if axis == 0 { r } else { c };
        if reduce_len == 0 {
            return Err(Error::shape("mean over an empty axis".to_string()));
        }
        let x = self.nodes[a.0].value.data();
        let out_len = if axis == 0 { c } else { r };
        let mut out = vec![F::zero(); out_len];
        for o in 0..out_len {
            let mut acc = 0.0f64;
            for k in 0..reduce_len {
                let v = if axis == 0 { x[k * c + o] } else { x[o * c + k] };
                acc += v.as_f64();
            }
            out[o] = F::from_f64(acc / reduce_len as f64);
        }
        self.push(Op::MeanAxis(a, axis), Tensor::from_parts(vec![out_len], out), "mean_axis")
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.nodes[a.0].value.data();
        if x.is_empty() {
            return Err(Error::shape("mean of an empty tensor".to_string()));
        }
        let acc: f64 = x.iter().map(|v| v.as_f64()).sum();
        let v = Tensor::scalar(F::from_f64(acc / x.len() as f64));
        self.push(Op::MeanAll(a), v, "mean_all")
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.nodes[a.0].value.data();
        let acc: f64 = x.iter().map(|v| v.as_f64()).sum();
        self.push(Op::SumAll(a), Tensor::scalar(F::from_f64(acc)), "sum_all")
    }

    /// Per-row layer normalization: y = gain ⊙ (x−μ)/√(σ²+eps) + bias with
    /// biased row variance.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.require_rank2(x, "layer_norm input")?;
        if c == 0 {
            return Err(Error::shape("layer_norm over zero columns".to_string()));
        }
        for (id, what) in [(gain, "gain"), (bias, "bias")] {
            if self.shape(id) != [c] {
                return Err(Error::shape(format!(
                    "layer_norm {what} shape {:?} does not match {c} columns",
                    self.shape(id)
                )));
            }
        }
        let xv = self.nodes[x.0].value.data();
        let gv = self.nodes[gain.0].value.data();
        let bv = self.nodes[bias.0].value.data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mu: f64 = row.iter().map(|v| v.as_f64()).sum::<f64>() / c as f64;
            let var: f64 = row
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mu;
                    d * d
                })
                .sum::<f64>()
                / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..c {
                let xhat = (row[j].as_f64() - mu) * inv;
                out[i * c + j] = F::from_f64(gv[j].as_f64() * xhat + bv[j].as_f64());
            }
        }
        self.push(
            Op::LayerNorm(x, gain, bias),
            Tensor::from_parts(vec![r, c], out),
            "layer_norm",
        )
    }

    /// Temporal convolution over the rows of a T×D matrix with a k×D×D'
    /// kernel, stride ≥ 1, and "same" zero padding, giving ceil(T/stride)
    /// output rows. Short inputs (T < k) are covered by the padding.
    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId, stride: usize) -> Result<NodeId> {
        let (t, d) = self.require_rank2(x, "conv1d input")?;
        if t == 0 {
            return Err(Error::shape("conv1d over zero time steps".to_string()));
        }
        if stride == 0 {
            return Err(Error::config("conv1d stride must be ≥ 1".to_string()));
        }
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 3 || ks[1] != d {
            return Err(Error::shape(format!(
                "conv1d kernel shape {ks:?} incompatible with {d} input channels"
            )));
        }
        let (k, d_out) = (ks[0], ks[2]);
        if k == 0 {
            return Err(Error::shape("conv1d kernel width 0".to_string()));
        }
        if self.shape(bias) != [d_out] {
            return Err(Error::shape(format!(
                "conv1d bias shape {:?} does not match {d_out} output channels",
                self.shape(bias)
            )));
        }
        let geo = ConvGeometry::new(t, k, stride);
        let xv: Vec<f64> = self.nodes[x.0].value.to_f64_vec();
        let kv: Vec<f64> = self.nodes[kernel.0].value.to_f64_vec();
        let bv: Vec<f64> = self.nodes[bias.0].value.to_f64_vec();
        let mut out = vec![F::zero(); geo.t_out * d_out];
        for to in 0..geo.t_out {
            for do_ in 0..d_out {
                let mut acc = bv[do_];
                for kk in 0..k {
                    let Some(ti) = geo.input_index(to, kk) else { continue };
                    for di in 0..d {
                        acc += xv[ti * d + di] * kv[(kk * d + di) * d_out + do_];
                    }
                }
                out[to * d_out + do_] = F::from_f64(acc);
            }
        }
        self.push(
            Op::Conv1d(x, kernel, bias, stride),
            Tensor::from_parts(vec![geo.t_out, d_out], out),
            "conv1d",
        )
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let (r, c) = self.require_rank2(a, "gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::shape(format!(
                "gather_rows index {bad} out of range for {r} rows"
            )));
        }
        let x = self.nodes[a.0].value.data();
        let mut out = vec![F::zero(); indices.len() * c];
        for (o, &i) in indices.iter().enumerate() {
            out[o * c..(o + 1) * c].copy_from_slice(&x[i * c..(i + 1) * c]);
        }
        let n = indices.len();
        self.push(
            Op::GatherRows(a, indices),
            Tensor::from_parts(vec![n, c], out),
            "gather_rows",
        )
    }

    pub fn slice_rows(&mut self, a: NodeId, lo: usize, hi: usize) -> Result<NodeId> {
        let (r, c) = self.require_rank2(a, "slice_rows")?;
        if lo >= hi || hi > r {
            return Err(Error::shape(format!(
                "slice_rows range {lo}..{hi} invalid for {r} rows"
            )));
        }
        let x = self.nodes[a.0].value.data();
        let out = x[lo * c..hi * c].to_vec();
        self.push(
            Op::SliceRows(a, lo, hi),
            Tensor::from_parts(vec![hi - lo, c], out),
            "slice_rows",
        )
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows of zero inputs".to_string()));
        }
        let (_, c) = self.require_rank2(parts[0], "concat_rows")?;
        let mut total_rows = 0;
        for &p in parts {
            let (pr, pc) = self.require_rank2(p, "concat_rows")?;
            if pc != c {
                return Err(Error::shape(format!(
                    "concat_rows column mismatch: {pc} vs {c}"
                )));
            }
            total_rows += pr;
        }
        let mut out = Vec::with_capacity(total_rows * c);
        for &p in parts {
            out.extend_from_slice(self.nodes[p.0].value.data());
        }
        self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::from_parts(vec![total_rows, c], out),
            "concat_rows",
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> Result<NodeId> {
        let (r, c) = self.require_rank2(a, "slice_cols")?;
        if lo >= hi || hi > c {
            return Err(Error::shape(format!(
                "slice_cols range {lo}..{hi} invalid for {c} columns"
            )));
        }
        let x = self.nodes[a.0].value.data();
        let w = hi - lo;
        let mut out = vec![F::zero(); r * w];
        for i in 0..r {
            out[i * w..(i + 1) * w].copy_from_slice(&x[i * c + lo..i * c + hi]);
        }
        self.push(
            Op::SliceCols(a, lo, hi),
            Tensor::from_parts(vec![r, w], out),
            "slice_cols",
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols of zero inputs".to_string()));
        }
        let (r, _) = self.require_rank2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.require_rank2(p, "concat_cols")?;
            if pr != r {
                return Err(Error::shape(format!("concat_cols row mismatch: {pr} vs {r}")));
            }
            widths.push(pc);
            total += pc;
        }
        let mut out = vec![F::zero(); r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let x = self.nodes[p.0].value.data();
            for i in 0..r {
                out[i * total + off..i * total + off + w].copy_from_slice(&x[i * w..(i + 1) * w]);
            }
            off += w;
        }
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::from_parts(vec![r, total], out),
            "concat_cols",
        )
    }

    pub fn scale_rows(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (r, c) = self.require_rank2(x, "scale_rows input")?;
        if self.shape(w) != [r] {
            return Err(Error::shape(format!(
                "scale_rows weight shape {:?} does not match {r} rows",
                self.shape(w)
            )));
        }
        let xv = self.nodes[x.0].value.data();
        let wv = self.nodes[w.0].value.data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let wi = wv[i].as_f64();
            for j in 0..c {
                out[i * c + j] = F::from_f64(wi * xv[i * c + j].as_f64());
            }
        }
        self.push(Op::ScaleRows(x, w), Tensor::from_parts(vec![r, c], out), "scale_rows")
    }

    pub fn stack_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("stack of zero scalars".to_string()));
        }
        let mut out = Vec::with_capacity(parts.len());
        for &p in parts {
            if !self.shape(p).is_empty() {
                return Err(Error::shape(format!(
                    "stack_scalars expects rank-0 nodes, got shape {:?}",
                    self.shape(p)
                )));
            }
            out.push(self.nodes[p.0].value.data()[0]);
        }
        let n = out.len();
        self.push(
            Op::StackScalars(parts.to_vec()),
            Tensor::from_parts(vec![n], out),
            "stack_scalars",
        )
    }

    pub fn mean_row_segments(&mut self, a: NodeId, seg: usize) -> Result<NodeId> {
        let (r, c) = self.require_rank2(a, "mean_row_segments")?;
        if seg == 0 || r % seg != 0 {
            return Err(Error::shape(format!(
                "mean_row_segments: {r} rows not divisible into segments of {seg}"
            )));
        }
        let x = self.nodes[a.0].value.data();
        let s = r / seg;
        let mut out = vec![F::zero(); s * c];
        for si in 0..s {
            for j in 0..c {
                let mut acc = 0.0f64;
                for k in 0..seg {
                    acc += x[(si * seg + k) * c + j].as_f64();
                }
                out[si * c + j] = F::from_f64(acc / seg as f64);
            }
        }
        self.push(
            Op::MeanRowSegments(a, seg),
            Tensor::from_parts(vec![s, c], out),
            "mean_row_segments",
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].value.len() {
            return Err(Error::shape(format!(
                "reshape to {shape:?} incompatible with {} elements",
                self.nodes[a.0].value.len()
            )));
        }
        let data = self.nodes[a.0].value.data().to_vec();
        self.push(Op::Reshape(a, shape.clone()), Tensor::from_parts(shape, data), "reshape")
    }

    /// Cosine similarity of two equal-length vectors (any shape, flattened).
    /// Exact zero vectors are an error; tiny norms are floored at 1e-8.
    pub fn cosine_sim(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let xa = self.nodes[a.0].value.data();
        let xb = self.nodes[b.0].value.data();
        if xa.len() != xb.len() || xa.is_empty() {
            return Err(Error::shape(format!(
                "cosine_sim length mismatch: {} vs {}",
                xa.len(),
                xb.len()
            )));
        }
        let (dot, na, nb) = dot_and_norms(xa, xb);
        if na == 0.0 || nb == 0.0 {
            return Err(Error::numerical(
                "cosine similarity with an exact zero vector".to_string(),
            ));
        }
        let cos = dot / (na.max(COSINE_NORM_FLOOR) * nb.max(COSINE_NORM_FLOOR));
        self.push(Op::CosineSim(a, b), Tensor::scalar(F::from_f64(cos)), "cosine_sim")
    }

    // ----- reverse pass -----

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// parameter leaf reachable from it. Returned in parameter first-use
    /// order; parameters the loss never touched are simply absent (the store
    /// assigns them zero gradients).
    pub fn backward(&self, loss: NodeId) -> Result<ParamGrads<F>> {
        if !self.nodes[loss.0].value.shape().is_empty() {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(F::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.accumulate(idx, &g, &mut grads)?;
            if matches!(self.nodes[idx].op, Op::Param(_)) {
                grads[idx] = Some(g);
            }
        }
        let mut out = Vec::new();
        for &(store_idx, node) in &self.param_nodes {
            if node.0 <= loss.0 {
                if let Some(g) = grads[node.0].take() {
                    out.push((store_idx, g));
                }
            }
        }
        Ok(out)
    }

    /// Routes the output gradient `g` of node `idx` to its inputs.
    fn accumulate(&self, idx: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let val = |id: NodeId| self.nodes[id.0].value.data();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.rows_cols(*a);
                let (_, n) = self.rows_cols(*b);
                let da = matmul_nt(g.data(), val(*b), m, n, k);
                let db = matmul_tn(val(*a), g.data(), m, k, n);
                add_grad(grads, *a, Tensor::from_parts(vec![m, k], da));
                add_grad(grads, *b, Tensor::from_parts(vec![k, n], db));
            }
            Op::Transpose(a) => {
                let (r, c) = self.rows_cols(*a);
                let mut da = vec![F::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g.data()[j * r + i];
                    }
                }
                add_grad(grads, *a, Tensor::from_parts(vec![r, c], da));
            }
            Op::Add(a, b) => {
                add_grad(grads, *a, g.clone());
                add_grad(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_grad(grads, *a, g.clone());
                let neg: Vec<F> = g.data().iter().map(|v| -*v).collect();
                add_grad(grads, *b, Tensor::from_parts(g.shape().to_vec(), neg));
            }
            Op::Mul(a, b) => {
                let da: Vec<F> = g
                    .data()
                    .iter()
                    .zip(val(*b))
                    .map(|(gv, bv)| F::from_f64(gv.as_f64() * bv.as_f64()))
                    .collect();
                let db: Vec<F> = g
                    .data()
                    .iter()
                    .zip(val(*a))
                    .map(|(gv, av)| F::from_f64(gv.as_f64() * av.as_f64()))
                    .collect();
                add_grad(grads, *a, Tensor::from_parts(g.shape().to_vec(), da));
                add_grad(grads, *b, Tensor::from_parts(g.shape().to_vec(), db));
            }
            Op::Affine(a, scale, _) => {
                let da: Vec<F> = g
                    .data()
                    .iter()
                    .map(|gv| F::from_f64(gv.as_f64() * scale))
                    .collect();
                add_grad(grads, *a, Tensor::from_parts(g.shape().to_vec(), da));
            }
            Op::AddRowBias(x, bias) => {
                let (r, c) = self.rows_cols(*x);
                add_grad(grads, *x, g.clone());
                let mut db = vec![F::zero(); c];
                for j in 0..c {
                    let mut acc = 0.0f64;
                    for i in 0..r {
                        acc += g.data()[i * c + j].as_f64();
                    }
                    db[j] = F::from_f64(acc);
                }
                add_grad(grads, *bias, Tensor::from_parts(vec![c], db));
            }
            Op::Sigmoid(a) => {
                let da: Vec<F> = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| {
                        let y = y.as_f64();
                        F::from_f64(gv.as_f64() * y * (1.0 - y))
                    })
                    .collect();
                add_grad(grads, *a, Tensor::from_parts(g.shape().to_vec(), da));
            }
            Op::Relu(a) => {
                let da: Vec<F> = g
                    .data()
                    .iter()
                    .zip(val(*a))
                    .map(|(gv, x)| if *x > F::zero() { *gv } else { F::zero() })
                    .collect();
                add_grad(grads, *a, Tensor::from_parts(g.shape().to_vec(), da));
            }
            Op::Ln(a) => {
                let da: Vec<F> = g
                    .data()
                    .iter()
                    .zip(val(*a))
                    .map(|(gv, x)| F::from_f64(gv.as_f64() / x.as_f64()))
                    .collect();
                add_grad(grads, *a, Tensor::from_parts(g.shape().to_vec(), da));
            }
            Op::Clamp(a, lo, hi) => {
                let da: Vec<F> = g
                    .data()
                    .iter()
                    .zip(val(*a))
                    .map(|(gv, x)| {
                        let x = x.as_f64();
                        if x >= *lo && x <= *hi {
                            *gv
                        } else {
                            F::zero()
                        }
                    })
                    .collect();
                add_grad(grads, *a, Tensor::from_parts(g.shape().to_vec(), da));
            }
            Op::Softmax(a, axis) => {
                let shape = node.value.shape().to_vec();
                let y = node.value.data();
                let mut da = vec![F::zero(); y.len()];
                let (lanes, lane_len, stride, lane_base): (usize, usize, usize, Box<dyn Fn(usize) -> usize>) =
                    match (shape.as_slice(), axis) {
                        ([n], 0) => (1, *n, 1, Box::new(|_| 0)),
                        ([r, c], 1) => {
                            let c = *c;
                            (*r, c, 1, Box::new(move |lane| lane * c))
                        }
                        ([r, c], 0) => (*c, *r, *c, Box::new(|lane| lane)),
                        _ => unreachable!("validated at construction"),
                    };
                for lane in 0..lanes {
                    let base = lane_base(lane);
                    let mut dot = 0.0f64;
                    for k in 0..lane_len {
                        let i = base + k * stride;
                        dot += g.data()[i].as_f64() * y[i].as_f64();
                    }
                    for k in 0..lane_len {
                        let i = base + k * stride;
                        da[i] = F::from_f64(y[i].as_f64() * (g.data()[i].as_f64() - dot));
                    }
                }
                add_grad(grads, *a, Tensor::from_parts(shape, da));
            }
            Op::MeanAxis(a, axis) => {
                let (r, c) = self.rows_cols(*a);
                let reduce_len = if *axis == 0 { r } else { c };
                let scale = 1.0 / reduce_len as f64;
                let mut da = vec![F::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        let go = if *axis == 0 { g.data()[j] } else { g.data()[i] };
                        da[i * c + j] = F::from_f64(go.as_f64() * scale);
                    }
                }
                add_grad(grads, *a, Tensor::from_parts(vec![r, c], da));
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.len();
                let gv = g.data()[0].as_f64() / n as f64;
                let da = vec![F::from_f64(gv); n];
                add_grad(
                    grads,
                    *a,
                    Tensor::from_parts(self.nodes[a.0].value.shape().to_vec(), da),
                );
            }
            Op::SumAll(a) => {
                let n = self.nodes[a.0].value.len();
                let da = vec![g.data()[0]; n];
                add_grad(
                    grads,
                    *a,
                    Tensor::from_parts(self.nodes[a.0].value.shape().to_vec(), da),
                );
            }
            Op::LayerNorm(x, gain, bias) => {
                let (r, c) = self.rows_cols(*x);
                let xv = val(*x);
                let gv = val(*gain);
                let mut dx = vec![F::zero(); r * c];
                let mut dgain = vec![F::zero(); c];
                let mut dbias = vec![F::zero(); c];
                let mut dgain_acc = vec![0.0f64; c];
                let mut dbias_acc = vec![0.0f64; c];
                for i in 0..r {
                    let row: Vec<f64> = (0..c).map(|j| xv[i * c + j].as_f64()).collect();
                    let mu = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let mut s1 = 0.0f64;
                    let mut s2 = 0.0f64;
                    let mut dxhat = vec![0.0f64; c];
                    for j in 0..c {
                        let xhat = (row[j] - mu) * inv;
                        let go = g.data()[i * c + j].as_f64();
                        dgain_acc[j] += go * xhat;
                        dbias_acc[j] += go;
                        let dh = go * gv[j].as_f64();
                        dxhat[j] = dh;
                        s1 += dh;
                        s2 += dh * xhat;
                    }
                    for j in 0..c {
                        let xhat = (row[j] - mu) * inv;
                        dx[i * c + j] =
                            F::from_f64(inv * (dxhat[j] - s1 / c as f64 - xhat * s2 / c as f64));
                    }
                }
                for j in 0..c {
                    dgain[j] = F::from_f64(dgain_acc[j]);
                    dbias[j] = F::from_f64(dbias_acc[j]);
                }
                add_grad(grads, *x, Tensor::from_parts(vec![r, c], dx));
                add_grad(grads, *gain, Tensor::from_parts(vec![c], dgain));
                add_grad(grads, *bias, Tensor::from_parts(vec![c], dbias));
            }
            Op::Conv1d(x, kernel, bias, stride) => {
                let (t, d) = self.rows_cols(*x);
                let ks = self.nodes[kernel.0].value.shape();
                let (k, d_out) = (ks[0], ks[2]);
                let geo = ConvGeometry::new(t, k, *stride);
                let xv: Vec<f64> = self.nodes[x.0].value.to_f64_vec();
                let kv: Vec<f64> = self.nodes[kernel.0].value.to_f64_vec();
                let mut dx = vec![0.0f64; t * d];
                let mut dk = vec![0.0f64; k * d * d_out];
                let mut db = vec![0.0f64; d_out];
                for to in 0..geo.t_out {
                    for do_ in 0..d_out {
                        let go = g.data()[to * d_out + do_].as_f64();
                        db[do_] += go;
                        for kk in 0..k {
                            let Some(ti) = geo.input_index(to, kk) else { continue };
                            for di in 0..d {
                                dx[ti * d + di] += go * kv[(kk * d + di) * d_out + do_];
                                dk[(kk * d + di) * d_out + do_] += go * xv[ti * d + di];
                            }
                        }
                    }
                }
                add_grad(grads, *x, cast_tensor(vec![t, d], &dx));
                add_grad(grads, *kernel, cast_tensor(vec![k, d, d_out], &dk));
                add_grad(grads, *bias, cast_tensor(vec![d_out], &db));
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = self.rows_cols(*a);
                let mut da = vec![F::zero(); r * c];
                for (o, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        da[i * c + j] += g.data()[o * c + j];
                    }
                }
                add_grad(grads, *a, Tensor::from_parts(vec![r, c], da));
            }
            Op::SliceRows(a, lo, _hi) => {
                let (r, c) = self.rows_cols(*a);
                let mut da = vec![F::zero(); r * c];
                da[lo * c..lo * c + g.data().len()].copy_from_slice(g.data());
                add_grad(grads, *a, Tensor::from_parts(vec![r, c], da));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                let c = node.value.cols();
                for &p in parts {
                    let pr = self.nodes[p.0].value.rows();
                    let slice = g.data()[off * c..(off + pr) * c].to_vec();
                    add_grad(grads, p, Tensor::from_parts(vec![pr, c], slice));
                    off += pr;
                }
            }
            Op::SliceCols(a, lo, hi) => {
                let (r, c) = self.rows_cols(*a);
                let w = hi - lo;
                let mut da = vec![F::zero(); r * c];
                for i in 0..r {
                    da[i * c + lo..i * c + hi].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                add_grad(grads, *a, Tensor::from_parts(vec![r, c], da));
            }
            Op::ConcatCols(parts) => {
                let r = node.value.rows();
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.cols();
                    let mut dp = vec![F::zero(); r * w];
                    for i in 0..r {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data()[i * total + off..i * total + off + w]);
                    }
                    add_grad(grads, p, Tensor::from_parts(vec![r, w], dp));
                    off += w;
                }
            }
            Op::ScaleRows(x, w) => {
                let (r, c) = self.rows_cols(*x);
                let xv = val(*x);
                let wv = val(*w);
                let mut dx = vec![F::zero(); r * c];
                let mut dw = vec![F::zero(); r];
                for i in 0..r {
                    let wi = wv[i].as_f64();
                    let mut acc = 0.0f64;
                    for j in 0..c {
                        let go = g.data()[i * c + j].as_f64();
                        dx[i * c + j] = F::from_f64(wi * go);
                        acc += go * xv[i * c + j].as_f64();
                    }
                    dw[i] = F::from_f64(acc);
                }
                add_grad(grads, *x, Tensor::from_parts(vec![r, c], dx));
                add_grad(grads, *w, Tensor::from_parts(vec![r], dw));
            }
            Op::StackScalars(parts) => {
                for (o, &p) in parts.iter().enumerate() {
                    add_grad(grads, p, Tensor::scalar(g.data()[o]));
                }
            }
            Op::MeanRowSegments(a, seg) => {
                let (r, c) = self.rows_cols(*a);
                let scale = 1.0 / *seg as f64;
                let mut da = vec![F::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = F::from_f64(g.data()[(i / seg) * c + j].as_f64() * scale);
                    }
                }
                add_grad(grads, *a, Tensor::from_parts(vec![r, c], da));
            }
            Op::Reshape(a, _) => {
                add_grad(
                    grads,
                    *a,
                    Tensor::from_parts(self.nodes[a.0].value.shape().to_vec(), g.data().to_vec()),
                );
            }
            Op::CosineSim(a, b) => {
                let xa = val(*a);
                let xb = val(*b);
                let (dot, na, nb) = dot_and_norms(xa, xb);
                let naf = na.max(COSINE_NORM_FLOOR);
                let nbf = nb.max(COSINE_NORM_FLOOR);
                let cos = dot / (naf * nbf);
                let gv = g.data()[0].as_f64();
                let mut da = vec![F::zero(); xa.len()];
                let mut db = vec![F::zero(); xb.len()];
                for i in 0..xa.len() {
                    let av = xa[i].as_f64();
                    let bv = xb[i].as_f64();
                    let mut ga = bv / (naf * nbf);
                    if na > COSINE_NORM_FLOOR {
                        ga -= cos * av / (naf * naf);
                    }
                    let mut gb = av / (naf * nbf);
                    if nb > COSINE_NORM_FLOOR {
                        gb -= cos * bv / (nbf * nbf);
                    }
                    da[i] = F::from_f64(gv * ga);
                    db[i] = F::from_f64(gv * gb);
                }
                add_grad(grads, *a, Tensor::from_parts(self.shape(*a).to_vec(), da));
                add_grad(grads, *b, Tensor::from_parts(self.shape(*b).to_vec(), db));
            }
        }
        Ok(())
    }
}

/// "Same"-padding geometry for the temporal convolution.
struct ConvGeometry {
    t_in: usize,
    t_out: usize,
    pad_left: usize,
    stride: usize,
}

impl ConvGeometry {
    fn new(t_in: usize, k: usize, stride: usize) -> Self {
        let t_out = t_in.div_ceil(stride);
        let span = (t_out - 1) * stride + k;
        let pad_total = span.saturating_sub(t_in);
        ConvGeometry {
            t_in,
            t_out,
            pad_left: pad_total / 2,
            stride,
        }
    }

    /// Input row feeding output `to` at kernel offset `kk`, or None if it
    /// falls in the zero padding.
    fn input_index(&self, to: usize, kk: usize) -> Option<usize> {
        let pos = to * self.stride + kk;
        let ti = pos.checked_sub(self.pad_left)?;
        (ti < self.t_in).then_some(ti)
    }
}

fn add_grad<F: Scalar>(grads: &mut [Option<Tensor<F>>], target: NodeId, contribution: Tensor<F>) {
    match &mut grads[target.0] {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), contribution.shape());
            for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                *e += *c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn cast_tensor<F: Scalar>(shape: Vec<usize>, data: &[f64]) -> Tensor<F> {
    Tensor::from_parts(shape, data.iter().map(|&v| F::from_f64(v)).collect())
}

fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot_and_norms<F: Scalar>(a: &[F], b: &[F]) -> (f64, f64, f64) {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let x = x.as_f64();
        let y = y.as_f64();
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na.sqrt(), nb.sqrt())
}

/// C = A·B for A: m×k, B: k×n, accumulated in f64.
fn matmul_nn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let bf: Vec<f64> = b.iter().map(|v| v.as_f64()).collect();
    let mut out = vec![F::zero(); m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for kk in 0..k {
            let aik = a[i * k + kk].as_f64();
            let brow = &bf[kk * n..(kk + 1) * n];
            for j in 0..n {
                acc[j] += aik * brow[j];
            }
        }
        for j in 0..n {
            out[i * n + j] = F::from_f64(acc[j]);
        }
    }
    out
}

/// C = G·Bᵀ for G: m×n, B: k×n (gives m×k), accumulated in f64.
fn matmul_nt<F: Scalar>(g: &[F], b: &[F], m: usize, n: usize, k: usize) -> Vec<F> {
    let gf: Vec<f64> = g.iter().map(|v| v.as_f64()).collect();
    let bf: Vec<f64> = b.iter().map(|v| v.as_f64()).collect();
    let mut out = vec![F::zero(); m * k];
    for i in 0..m {
        let grow = &gf[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &bf[j * n..(j + 1) * n];
            let mut acc = 0.0f64;
            for t in 0..n {
                acc += grow[t] * brow[t];
            }
            out[i * k + j] = F::from_f64(acc);
        }
    }
    out
}

/// C = Aᵀ·G for A: m×k, G: m×n (gives k×n), accumulated in f64.
fn matmul_tn<F: Scalar>(a: &[F], g: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let gf: Vec<f64> = g.iter().map(|v| v.as_f64()).collect();
    let mut acc = vec![0.0f64; k * n];
    for row in 0..m {
        for i in 0..k {
            let av = a[row * k + i].as_f64();
            let grow = &gf[row * n..(row + 1) * n];
            let arow = &mut acc[i * n..(i + 1) * n];
            for j in 0..n {
                arow[j] += av * grow[j];
            }
        }
    }
    acc.iter().map(|&v| F::from_f64(v)).collect::<Vec<F>>()
}
