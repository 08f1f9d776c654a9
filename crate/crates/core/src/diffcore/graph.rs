//! Eagerly evaluated computation graph with reverse-mode gradients.
//!
//! Each builder method evaluates its operation immediately, records the
//! operands, and returns a [`NodeId`]. [`Graph::backward`] then walks the
//! tape in reverse.

use super::kernels::{self, ConvDims};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    Linear,
    Nearest,
}

/// Batch statistics produced by a train-mode batch-norm, to be folded into
/// the running buffers once the step is accepted.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Input,
    Variable,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Relu(NodeId),
    Clamp {
        x: NodeId,
        lo: f64,
        hi: f64,
    },
    Sum(NodeId),
    Mean(NodeId),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Reshape(NodeId),
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        dims: ConvDims,
    },
    ConvT1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        dims: ConvDims,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    MaxPool2 {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Upsample2 {
        x: NodeId,
        mode: UpsampleMode,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Narrow {
        x: NodeId,
        axis: usize,
        start: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation over [`Tensor`]s.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    mode: Mode,
    bn_updates: Vec<BnUpdate>,
}

/// Gradients of a scalar root with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: Vec<(ParamId, NodeId)>,
}

impl Gradients {
    pub fn of(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id.0).and_then(Option::as_ref)
    }

    /// Gradients aligned with the store's parameter order. Parameters that
    /// were not used get zeros; repeated uses are summed.
    pub fn for_params(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        for &(pid, nid) in &self.params {
            if let Some(g) = self.of(nid) {
                for (o, v) in out[pid.0].data_mut().iter_mut().zip(g.data()) {
                    *o += v;
                }
            }
        }
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable scalar helpers shared with the priors and rbm modules.
pub mod scalar {
    pub fn sigmoid(x: f64) -> f64 {
        super::sigmoid(x)
    }

    pub fn softplus(x: f64) -> f64 {
        super::softplus(x)
    }

    pub fn logit(p: f64) -> f64 {
        p.ln() - (-p).ln_1p()
    }
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Graph {
            nodes: Vec::new(),
            mode,
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Batch-norm statistics gathered by train-mode forwards.
    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
        needs_grad: bool,
    ) -> Result<NodeId> {
        if let Some(i) = value.first_non_finite() {
            return Err(Error::NonFinite {
                context: op_name.to_string(),
                index: Some(i),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "node {} does not belong to this graph",
                id.0
            )));
        }
        Ok(())
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push("input", value, Op::Input, false)
    }

    /// Free variable whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> Result<NodeId> {
        self.push("variable", value, Op::Variable, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId> {
        self.push("param", store.get(id).clone(), Op::Param(id), true)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        self.same_shape(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_parts(va.shape().to_vec(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(name, t, op, ng)
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: NodeId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        self.check(x)?;
        let t = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(name, t, op, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("softplus", x, softplus, Op::Softplus(x))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Clamp to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.unary("clamp", x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let v = self.value(x);
        let s: f64 = v.data().iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(x);
        self.push("mean", Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// `(m, k) x (k, n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        self.push(
            "matmul",
            Tensor::from_parts(vec![m, n], data),
            Op::MatMul(a, b),
            ng,
        )
    }

    /// Adds a length-`n` row vector to every row of an `(m, n)` matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(row)?;
        let (sx, sr) = (self.shape(x), self.shape(row));
        if sx.len() != 2 || sr != [sx[1]] {
            return Err(Error::shape("add_row", format!("{sx:?} + {sr:?}")));
        }
        let n = sx[1];
        let r = self.value(row).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + r[i % n])
            .collect();
        let ng = self.ng(x) || self.ng(row);
        let shape = sx.to_vec();
        self.push(
            "add_row",
            Tensor::from_parts(shape, data),
            Op::AddRow(x, row),
            ng,
        )
    }

    /// Affine map `x W + b` with `W: (in, out)`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check(x)?;
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        self.push("reshape", t, Op::Reshape(x), ng)
    }

    fn conv_dims(
        &self,
        op: &'static str,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        transpose: bool,
    ) -> Result<ConvDims> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 3 || sw.len() != 3 || sb.len() != 1 {
            return Err(Error::shape(op, format!("x {sx:?}, w {sw:?}, b {sb:?}")));
        }
        let (c_in, c_out) = if transpose {
            (sw[0], sw[1])
        } else {
            (sw[1], sw[0])
        };
        if sx[1] != c_in || sb[0] != c_out || sw[2] % 2 == 0 {
            return Err(Error::shape(
                op,
                format!("x {sx:?} incompatible with w {sw:?} / b {sb:?} (kernel must be odd)"),
            ));
        }
        Ok(ConvDims {
            batch: sx[0],
            c_in,
            c_out,
            len: sx[2],
            kernel: sw[2],
        })
    }

    /// Same-padded convolution: x `(B, Cin, T)`, w `(Cout, Cin, K)`, b `(Cout)`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let dims = self.conv_dims("conv1d", x, w, b, false)?;
        let y = kernels::conv1d_forward(
            dims,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        let t = Tensor::from_parts(vec![dims.batch, dims.c_out, dims.len], y);
        self.push("conv1d", t, Op::Conv1d { x, w, b, dims }, ng)
    }

    /// Same-padded transposed convolution: w `(Cin, Cout, K)`.
    pub fn conv_transpose1d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let dims = self.conv_dims("conv_transpose1d", x, w, b, true)?;
        let y = kernels::conv_transpose1d_forward(
            dims,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        let t = Tensor::from_parts(vec![dims.batch, dims.c_out, dims.len], y);
        self.push("conv_transpose1d", t, Op::ConvT1d { x, w, b, dims }, ng)
    }

    /// Per-channel normalization over batch and time of a `(B, C, T)` input.
    ///
    /// Train mode normalizes with batch statistics and records them under
    /// `prefix`; eval mode uses `running = (mean, var)`.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: (&Tensor, &Tensor),
        prefix: &str,
    ) -> Result<NodeId> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || self.shape(gamma) != [sx[1]] || self.shape(beta) != [sx[1]] {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "x {sx:?}, gamma {:?}, beta {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let (b, c, t) = (sx[0], sx[1], sx[2]);
        let n = (b * t) as f64;
        let xv = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let batch_stats = self.mode == Mode::Train;
        if batch_stats {
            for bi in 0..b {
                for ci in 0..c {
                    mean[ci] += xv[(bi * c + ci) * t..(bi * c + ci + 1) * t]
                        .iter()
                        .sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for bi in 0..b {
                for ci in 0..c {
                    var[ci] += xv[(bi * c + ci) * t..(bi * c + ci + 1) * t]
                        .iter()
                        .map(|v| (v - mean[ci]).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
        } else {
            if running.0.shape() != [c] || running.1.shape() != [c] {
                return Err(Error::shape("batch_norm", "running statistics shape"));
            }
            mean.copy_from_slice(running.0.data());
            var.copy_from_slice(running.1.data());
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut y = vec![0.0; xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * t;
                for ti in 0..t {
                    let h = (xv[base + ti] - mean[ci]) * inv_std[ci];
                    xhat[base + ti] = h;
                    y[base + ti] = g[ci] * h + be[ci];
                }
            }
        }
        if batch_stats {
            let unbiased = if b * t > 1 { n / (n - 1.0) } else { 1.0 };
            self.bn_updates.push(BnUpdate {
                prefix: prefix.to_string(),
                var_unbiased: var.iter().map(|v| v * unbiased).collect(),
                mean,
            });
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            "batch_norm",
            Tensor::from_parts(sx, y),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            ng,
        )
    }

    /// Max-pool of size 2 over the last axis; ties keep the first element.
    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let sx = self.shape(x).to_vec();
        let t = *sx.last().unwrap_or(&0);
        if sx.is_empty() || t % 2 != 0 {
            return Err(Error::shape(
                "max_pool2",
                format!("last axis of {sx:?} must be even"),
            ));
        }
        let xv = self.value(x).data();
        let half = xv.len() / 2;
        let mut y = Vec::with_capacity(half);
        let mut argmax = Vec::with_capacity(half);
        for j in 0..half {
            let (i0, i1) = (2 * j, 2 * j + 1);
            if xv[i1] > xv[i0] {
                y.push(xv[i1]);
                argmax.push(i1);
            } else {
                y.push(xv[i0]);
                argmax.push(i0);
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = t / 2;
        let ng = self.ng(x);
        self.push(
            "max_pool2",
            Tensor::from_parts(shape, y),
            Op::MaxPool2 { x, argmax },
            ng,
        )
    }

    /// Factor-2 upsampling over the last axis.
    pub fn upsample2(&mut self, x: NodeId, mode: UpsampleMode) -> Result<NodeId> {
        self.check(x)?;
        let sx = self.shape(x).to_vec();
        let t = *sx
            .last()
            .ok_or_else(|| Error::shape("upsample2", "scalar input"))?;
        let rows = self.value(x).len() / t;
        let y =
            kernels::upsample2_forward(self.value(x).data(), rows, t, mode == UpsampleMode::Linear);
        let mut shape = sx;
        *shape.last_mut().unwrap() = 2 * t;
        let ng = self.ng(x);
        self.push(
            "upsample2",
            Tensor::from_parts(shape, y),
            Op::Upsample2 { x, mode },
            ng,
        )
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no parts"))?;
        for &p in parts {
            self.check(p)?;
        }
        let s0 = self.shape(first).to_vec();
        if axis >= s0.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {s0:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != s0.len()
                || s.iter()
                    .zip(&s0)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} vs {s0:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let w = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            "concat",
            Tensor::from_parts(shape, data),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        self.check(x)?;
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || len == 0 || start + len > sx[axis] {
            return Err(Error::shape(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {sx:?}", start + len),
            ));
        }
        let outer: usize = sx[..axis].iter().product();
        let inner: usize = sx[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * sx[axis] + start) * inner;
            data.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        let ng = self.ng(x);
        self.push(
            "narrow",
            Tensor::from_parts(shape, data),
            Op::Narrow { x, axis, start },
            ng,
        )
    }

    /// Gradients of a scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        self.check(root)?;
        if self.value(root).len() != 1 {
            return Err(Error::Usage(format!(
                "backward from non-scalar node of shape {:?} needs an explicit seed",
                self.shape(root)
            )));
        }
        self.backward_with_seed(root, Tensor::full(self.shape(root), 1.0))
    }

    /// Vector-Jacobian product seeded with `seed` at `root`.
    pub fn backward_with_seed(&self, root: NodeId, seed: Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Usage(
                "backward called before any forward evaluation".into(),
            ));
        }
        self.check(root)?;
        if seed.shape() != self.shape(root) {
            return Err(Error::shape(
                "backward",
                format!("seed {:?} vs root {:?}", seed.shape(), self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed.into_data());
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let mut params = Vec::new();
        let by_node = grads
            .into_iter()
            .zip(&self.nodes)
            .enumerate()
            .map(|(i, (g, n))| {
                if let Op::Param(pid) = n.op {
                    params.push((pid, NodeId(i)));
                }
                match (g, n.needs_grad) {
                    (Some(g), true) => Some(Tensor::from_parts(n.value.shape().to_vec(), g)),
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { by_node, params })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |id: NodeId| self.nodes[id.0].value.data();
        let needs = |id: NodeId| self.nodes[id.0].needs_grad;
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.len()]);
            f(slot);
        };
        let y = node.value.data();
        match &node.op {
            Op::Input | Op::Variable | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for ((s, g), v) in s.iter_mut().zip(g).zip(vb) {
                        *s += g * v;
                    }
                });
                acc(*b, &mut |s| {
                    for ((s, g), v) in s.iter_mut().zip(g).zip(va) {
                        *s += g * v;
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |s| {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g)
            }),
            Op::AddScalar(x) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g)),
            Op::Exp(x) => acc(*x, &mut |s| {
                for ((s, g), y) in s.iter_mut().zip(g).zip(y) {
                    *s += g * y;
                }
            }),
            Op::Log(x) => {
                let xv = val(*x);
                acc(*x, &mut |s| {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(xv) {
                        *s += g / x;
                    }
                })
            }
            Op::Sigmoid(x) => acc(*x, &mut |s| {
                for ((s, g), y) in s.iter_mut().zip(g).zip(y) {
                    *s += g * y * (1.0 - y);
                }
            }),
            Op::Softplus(x) => {
                let xv = val(*x);
                acc(*x, &mut |s| {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(xv) {
                        *s += g * sigmoid(*x);
                    }
                })
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |s| {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(xv) {
                        if *x > 0.0 {
                            *s += g;
                        }
                    }
                })
            }
            Op::Clamp { x, lo, hi } => {
                let xv = val(*x);
                acc(*x, &mut |s| {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(xv) {
                        if *x >= *lo && *x <= *hi {
                            *s += g;
                        }
                    }
                })
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len() as f64;
                acc(*x, &mut |s| s.iter_mut().for_each(|s| *s += g[0] / n))
            }
            Op::MatMul(a, b) => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let dims = (sa[0], sa[1], sb[1]);
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    kernels::matmul_backward(va, vb, g, dims, Some(s), None)
                });
                acc(*b, &mut |s| {
                    kernels::matmul_backward(va, vb, g, dims, None, Some(s))
                });
            }
            Op::AddRow(x, row) => {
                acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                let n = self.nodes[row.0].value.len();
                acc(*row, &mut |s| {
                    for (i, gv) in g.iter().enumerate() {
                        s[i % n] += gv;
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g)),
            Op::Conv1d { x, w, b, dims } => {
                let (vx, vw) = (val(*x), val(*w));
                acc(*x, &mut |s| {
                    kernels::conv1d_backward(*dims, vx, vw, g, Some(s), None, None)
                });
                acc(*w, &mut |s| {
                    kernels::conv1d_backward(*dims, vx, vw, g, None, Some(s), None)
                });
                acc(*b, &mut |s| {
                    kernels::conv1d_backward(*dims, vx, vw, g, None, None, Some(s))
                });
            }
            Op::ConvT1d { x, w, b, dims } => {
                let (vx, vw) = (val(*x), val(*w));
                acc(*x, &mut |s| {
                    kernels::conv_transpose1d_backward(*dims, vx, vw, g, Some(s), None, None)
                });
                acc(*w, &mut |s| {
                    kernels::conv_transpose1d_backward(*dims, vx, vw, g, None, Some(s), None)
                });
                acc(*b, &mut |s| {
                    kernels::conv_transpose1d_backward(*dims, vx, vw, g, None, None, Some(s))
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let sx = node.value.shape();
                let (bn, c, t) = (sx[0], sx[1], sx[2]);
                let gam = val(*gamma);
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for bi in 0..bn {
                    for ci in 0..c {
                        let base = (bi * c + ci) * t;
                        for ti in 0..t {
                            sum_g[ci] += g[base + ti];
                            sum_gx[ci] += g[base + ti] * xhat[base + ti];
                        }
                    }
                }
                acc(*beta, &mut |s| {
                    s.iter_mut().zip(&sum_g).for_each(|(s, v)| *s += v)
                });
                acc(*gamma, &mut |s| {
                    s.iter_mut().zip(&sum_gx).for_each(|(s, v)| *s += v)
                });
                if needs(*x) {
                    let n = (bn * t) as f64;
                    acc(*x, &mut |s| {
                        for bi in 0..bn {
                            for ci in 0..c {
                                let base = (bi * c + ci) * t;
                                let k = gam[ci] * inv_std[ci];
                                for ti in 0..t {
                                    let gi = g[base + ti];
                                    s[base + ti] += if *batch_stats {
                                        k * (gi - sum_g[ci] / n - xhat[base + ti] * sum_gx[ci] / n)
                                    } else {
                                        k * gi
                                    };
                                }
                            }
                        }
                    });
                }
            }
            Op::MaxPool2 { x, argmax } => acc(*x, &mut |s| {
                for (gv, &i) in g.iter().zip(argmax) {
                    s[i] += gv;
                }
            }),
            Op::Upsample2 { x, mode } => {
                let t = *self.nodes[x.0].value.shape().last().unwrap();
                let rows = self.nodes[x.0].value.len() / t;
                acc(*x, &mut |s| {
                    kernels::upsample2_backward(g, s, rows, t, *mode == UpsampleMode::Linear)
                });
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.shape()[*axis] * inner;
                    acc(p, &mut |s| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + w];
                            s[o * w..(o + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(s, g)| *s += g);
                        }
                    });
                    offset += w;
                }
            }
            Op::Narrow { x, axis, start } => {
                let sx = self.nodes[x.0].value.shape();
                let len = node.value.shape()[*axis];
                let outer: usize = sx[..*axis].iter().product();
                let inner: usize = sx[axis + 1..].iter().product();
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        let base = (o * sx[*axis] + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        s[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(s, g)| *s += g);
                    }
                });
            }
        }
    }
}

/// Folds recorded batch statistics into the store's running buffers
/// (`<prefix>.running_mean` / `<prefix>.running_var`).
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) -> Result<()> {
    for u in updates {
        for (suffix, stat) in [("running_mean", &u.mean), ("running_var", &u.var_unbiased)] {
            let name = format!("{}.{suffix}", u.prefix);
            let buf = store
                .buffer_mut(&name)
                .ok_or_else(|| Error::Usage(format!("missing buffer '{name}'")))?;
            for (r, s) in buf.data_mut().iter_mut().zip(stat.iter()) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * s;
            }
        }
    }
    Ok(())
}
