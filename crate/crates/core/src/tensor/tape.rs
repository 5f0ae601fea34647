use std::cell::{Cell, RefCell};
use std::fmt;

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a recorded value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of a gradient rule, used as a negative control
/// for gradient checking.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradFault {
    /// Multiplies the tanh backward rule by the given factor.
    TanhScale(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LeakyRelu(NodeId, f64),
    Sum(NodeId),
    Reshape(NodeId),
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    GatherRows {
        src: NodeId,
        index: Vec<usize>,
    },
    SegmentSum {
        src: NodeId,
        segment: Vec<usize>,
    },
    ScaleRows {
        src: NodeId,
        weights: NodeId,
    },
    Softmax {
        logits: NodeId,
        segment: Vec<Option<usize>>,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed in evaluation order, so every parent precedes its
/// children and a reverse sweep is a valid topological order. A tape is
/// meant to be built fresh for each forward pass and is confined to one
/// thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    fault: Cell<Option<GradFault>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({}, {:?})", self.id.0, self.shape())
    }
}

/// Result of a backward sweep: one gradient per tracked leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.leaves.get(id.0).and_then(Option::as_ref)
    }

    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.get(var.id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    #[doc(hidden)]
    pub fn inject_fault(&self, fault: GradFault) {
        self.fault.set(Some(fault));
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf whose gradient is wanted.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node { value, op, tracked });
        Var { tape: self, id }
    }

    fn tracked(&self, ids: &[NodeId]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|id| nodes[id.0].tracked)
    }

    fn shape_of(&self, id: NodeId) -> Vec<usize> {
        self.nodes.borrow()[id.0].value.shape.clone()
    }

    /// Concatenates `parts` along `axis`; all other dimensions must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero parts".into()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let values: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id.0].value).collect();
            concat_values(&values, axis)?
        };
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        let tracked = self.tracked(&ids);
        Ok(self.push(value, Op::Concat { parts: ids, axis }, tracked))
    }

    /// Normalized exponentials of `logits` within each in-neighborhood.
    ///
    /// `segment[e]` names the group entry `e` is normalized in; every group
    /// `0..segments` must have at least one member.
    pub fn segment_softmax<'t>(
        &'t self,
        logits: Var<'t>,
        segment: &[usize],
        segments: usize,
    ) -> Result<Var<'t>> {
        let mut counts = vec![0usize; segments];
        for &s in segment {
            if s >= segments {
                return Err(Error::Shape(format!("segment id {s} >= {segments}")));
            }
            counts[s] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyNeighborhood(format!("segment {empty} has no entries")));
        }
        let seg: Vec<Option<usize>> = segment.iter().map(|&s| Some(s)).collect();
        self.softmax_segments(logits, seg)
    }

    fn softmax_segments<'t>(&'t self, logits: Var<'t>, segment: Vec<Option<usize>>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[logits.id.0].value;
            if x.rank() != 1 {
                return Err(Error::Rank {
                    op: "softmax",
                    expected: "a vector of logits",
                    shape: x.shape.clone(),
                });
            }
            if x.numel() != segment.len() {
                return Err(Error::dim("softmax", &x.shape, &[segment.len()]));
            }
            softmax_values(x.data(), &segment)
        };
        let tracked = self.tracked(&[logits.id]);
        Ok(self.push(
            Tensor::vector(value),
            Op::Softmax {
                logits: logits.id,
                segment,
            },
            tracked,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id.0].value;
        if root.numel() != 1 {
            return Err(Error::Rank {
                op: "backward",
                expected: "a scalar loss",
                shape: root.shape.clone(),
            });
        }
        let fault = self.fault.get();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id.0 + 1];
        grads[loss.id.0] = Some(vec![1.0]);

        for idx in (0..=loss.id.0).rev() {
            let node = &nodes[idx];
            if !node.tracked {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            backprop(&nodes, &mut grads, node, &g, fault);
        }

        let leaves = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if !(n.tracked && matches!(n.op, Op::Leaf)) {
                    return None;
                }
                let data = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; n.value.numel()]);
                Some(Tensor {
                    shape: n.value.shape.clone(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { leaves })
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> NodeId {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Tensor {
        self.tape.nodes.borrow()[self.id.0].value.clone()
    }

    pub fn with_value<R>(self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id.0].value)
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn item(self) -> Option<f64> {
        self.with_value(Tensor::item)
    }

    fn unary(self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        let value = self.with_value(f);
        let tracked = self.tape.tracked(&[self.id]);
        self.tape.push(value, op, tracked)
    }

    fn binary(
        self,
        other: Var<'t>,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id.0].value, &nodes[other.id.0].value)?
        };
        let tracked = self.tape.tracked(&[self.id, other.id]);
        Ok(self.tape.push(value, op, tracked))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, Op::MatMul(self.id, rhs.id), |a, b| {
            if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
                return Err(Error::dim("matmul", &a.shape, &b.shape));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut out = vec![0.0; m * n];
            matmul_into(&a.data, &b.data, &mut out, m, k, n);
            Ok(Tensor {
                shape: vec![m, n],
                data: out,
            })
        })
    }

    #[allow(clippy::should_implement_trait)] // fallible, so not `ops::Add`
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, Op::Add(self.id, rhs.id), |a, b| zip_broadcast("add", a, b, |x, y| x + y))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, Op::Sub(self.id, rhs.id), |a, b| zip_broadcast("sub", a, b, |x, y| x - y))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, Op::Mul(self.id, rhs.id), |a, b| zip_broadcast("mul", a, b, |x, y| x * y))
    }

    /// Adds the vector `bias` (length `n`) to every row of an `[m, n]` matrix.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.binary(bias, Op::AddRow(self.id, bias.id), |a, b| {
            if a.rank() != 2 || b.numel() != a.shape[1] || b.rank() > 2 {
                return Err(Error::dim("add_row", &a.shape, &b.shape));
            }
            let n = a.shape[1];
            let mut data = a.data.clone();
            for row in data.chunks_mut(n.max(1)) {
                for (v, bv) in row.iter_mut().zip(&b.data) {
                    *v += bv;
                }
            }
            Ok(Tensor {
                shape: a.shape.clone(),
                data,
            })
        })
    }

    /// Multiplies by a constant.
    pub fn scale(self, factor: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, factor), |a| a.map(|v| v * factor))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |a| a.map(sigmoid))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |a| a.map(f64::tanh))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(Op::LeakyRelu(self.id, slope), |a| {
            a.map(|v| if v > 0.0 { v } else { slope * v })
        })
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |a| Tensor::scalar(a.data.iter().sum()))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.with_value(|a| a.reshaped(shape))?;
        let tracked = self.tape.tracked(&[self.id]);
        Ok(self.tape.push(value, Op::Reshape(self.id), tracked))
    }

    /// Selects rows of a matrix (repeats allowed). Gradients scatter-add back.
    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'t>> {
        let value = self.with_value(|a| -> Result<Tensor> {
            if a.rank() != 2 {
                return Err(Error::Rank {
                    op: "gather_rows",
                    expected: "a matrix",
                    shape: a.shape.clone(),
                });
            }
            let (rows, cols) = (a.shape[0], a.shape[1]);
            let mut data = Vec::with_capacity(index.len() * cols);
            for &r in index {
                if r >= rows {
                    return Err(Error::Shape(format!("row {r} out of {rows}")));
                }
                data.extend_from_slice(&a.data[r * cols..(r + 1) * cols]);
            }
            Ok(Tensor {
                shape: vec![index.len(), cols],
                data,
            })
        })?;
        let tracked = self.tape.tracked(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::GatherRows {
                src: self.id,
                index: index.to_vec(),
            },
            tracked,
        ))
    }

    /// Sums rows of an `[e, f]` matrix into `segments` output rows.
    pub fn segment_sum(self, segment: &[usize], segments: usize) -> Result<Var<'t>> {
        let value = self.with_value(|a| -> Result<Tensor> {
            if a.rank() != 2 || a.shape[0] != segment.len() {
                return Err(Error::dim("segment_sum", &a.shape, &[segment.len()]));
            }
            let cols = a.shape[1];
            let mut data = vec![0.0; segments * cols];
            for (e, &s) in segment.iter().enumerate() {
                if s >= segments {
                    return Err(Error::Shape(format!("segment id {s} >= {segments}")));
                }
                for c in 0..cols {
                    data[s * cols + c] += a.data[e * cols + c];
                }
            }
            Ok(Tensor {
                shape: vec![segments, cols],
                data,
            })
        })?;
        let tracked = self.tape.tracked(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::SegmentSum {
                src: self.id,
                segment: segment.to_vec(),
            },
            tracked,
        ))
    }

    /// Multiplies row `e` of an `[e, f]` matrix by `weights[e]`.
    pub fn scale_rows(self, weights: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            weights,
            Op::ScaleRows {
                src: self.id,
                weights: weights.id,
            },
            |a, w| {
                if a.rank() != 2 || w.numel() != a.shape[0] {
                    return Err(Error::dim("scale_rows", &a.shape, &w.shape));
                }
                let cols = a.shape[1];
                let mut data = a.data.clone();
                if cols > 0 {
                    for (row, wv) in data.chunks_mut(cols).zip(&w.data) {
                        row.iter_mut().for_each(|v| *v *= wv);
                    }
                }
                Ok(Tensor {
                    shape: a.shape.clone(),
                    data,
                })
            },
        )
    }

    /// Masked softmax over a vector: masked entries are exactly zero.
    pub fn softmax_masked(self, mask: &[bool]) -> Result<Var<'t>> {
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyNeighborhood("every entry is masked out".into()));
        }
        let segment = mask.iter().map(|&m| m.then_some(0)).collect();
        self.tape.softmax_segments(self, segment)
    }

    /// 2-D convolution of a `[c, h, w]` input with `[o, c, kh, kw]`
    /// kernels and an `[o]` bias, zero-padded by `pad`.
    pub fn conv2d(self, kernel: Var<'t>, bias: Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            conv2d_forward(
                &nodes[self.id.0].value,
                &nodes[kernel.id.0].value,
                &nodes[bias.id.0].value,
                stride,
                pad,
            )?
        };
        let tracked = self.tape.tracked(&[self.id, kernel.id, bias.id]);
        Ok(self.tape.push(
            value,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                bias: bias.id,
                stride,
                pad,
            },
            tracked,
        ))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Dot product with four independent accumulators so it vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn is_scalar(t: &Tensor) -> bool {
    t.numel() == 1 && t.rank() <= 1
}

fn zip_broadcast(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor {
            shape: a.shape.clone(),
            data,
        })
    } else if is_scalar(b) {
        let y = b.data[0];
        Ok(a.map(|x| f(x, y)))
    } else if is_scalar(a) {
        let x = a.data[0];
        Ok(b.map(|y| f(x, y)))
    } else {
        Err(Error::dim(op, &a.shape, &b.shape))
    }
}

fn concat_values(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts[0];
    if axis >= first.rank() {
        return Err(Error::Rank {
            op: "concat",
            expected: "axis within rank",
            shape: first.shape.clone(),
        });
    }
    for p in &parts[1..] {
        let same_rank = p.rank() == first.rank();
        let sides_match = same_rank
            && p.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .all(|(d, (x, y))| d == axis || x == y);
        if !sides_match {
            return Err(Error::dim("concat", &first.shape, &p.shape));
        }
    }
    let outer: usize = first.shape[..axis].iter().product();
    let inner: usize = first.shape[axis + 1..].iter().product();
    let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
    let mut shape = first.shape.clone();
    shape[axis] = total_axis;
    let mut data = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for p in parts {
            let block = p.shape[axis] * inner;
            data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
        }
    }
    Ok(Tensor { shape, data })
}

fn softmax_values(x: &[f64], segment: &[Option<usize>]) -> Vec<f64> {
    let groups = segment.iter().flatten().max().map_or(0, |&s| s + 1);
    let mut max = vec![f64::NEG_INFINITY; groups];
    for (v, s) in x.iter().zip(segment) {
        if let Some(s) = *s {
            max[s] = max[s].max(*v);
        }
    }
    let mut out = vec![0.0; x.len()];
    let mut total = vec![0.0; groups];
    for (i, s) in segment.iter().enumerate() {
        if let Some(s) = *s {
            out[i] = (x[i] - max[s]).exp();
            total[s] += out[i];
        }
    }
    for (i, s) in segment.iter().enumerate() {
        if let Some(s) = *s {
            out[i] /= total[s];
        }
    }
    out
}

fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

/// Convolution geometry shared by the forward and backward passes.
struct ConvGeom {
    i_ch: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    /// Calls `f(tap row, output pixel, input index)` for every in-bounds tap.
    fn for_taps(&self, mut f: impl FnMut(usize, usize, usize)) {
        let plane = self.oh * self.ow;
        for c in 0..self.i_ch {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * plane;
                    for y in 0..self.oh {
                        let iy = (y * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = (c * self.h + iy as usize) * self.w;
                        for x in 0..self.ow {
                            let ix = (x * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                f(row, y * self.ow + x, base + ix as usize);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Unfolds the input into `[taps x output pixels]`, zero where padded.
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.i_ch * self.kh * self.kw * self.oh * self.ow];
        self.for_taps(|row, p, i| cols[row + p] = input[i]);
        cols
    }
}

fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    if input.rank() != 3 || kernel.rank() != 4 || kernel.shape[1] != input.shape[0] {
        return Err(Error::dim("conv2d", &input.shape, &kernel.shape));
    }
    let (o_ch, i_ch, kh, kw) = (kernel.shape[0], kernel.shape[1], kernel.shape[2], kernel.shape[3]);
    if bias.numel() != o_ch {
        return Err(Error::dim("conv2d bias", &kernel.shape, &bias.shape));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be positive".into()));
    }
    let (h, w) = (input.shape[1], input.shape[2]);
    let (Some(oh), Some(ow)) = (conv_out(h, kh, stride, pad), conv_out(w, kw, stride, pad)) else {
        return Err(Error::dim("conv2d", &input.shape, &kernel.shape));
    };
    let geom = ConvGeom { i_ch, h, w, kh, kw, oh, ow, stride, pad };
    let cols = geom.im2col(&input.data);
    let (block, plane) = (i_ch * kh * kw, oh * ow);
    let mut out = vec![0.0; o_ch * plane];
    for (o, row) in out.chunks_exact_mut(plane).enumerate() {
        row.fill(bias.data[o]);
        for (kv, col) in kernel.data[o * block..(o + 1) * block].iter().zip(cols.chunks_exact(plane)) {
            if *kv != 0.0 {
                for (r, c) in row.iter_mut().zip(col) {
                    *r += kv * c;
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![o_ch, oh, ow],
        data: out,
    })
}

/// Gradient slot for `id`, allocated on first use; `None` if untracked.
fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId) -> Option<&'g mut Vec<f64>> {
    let node = &nodes[id.0];
    if !node.tracked {
        return None;
    }
    Some(grads[id.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
}

fn accumulate_broadcast(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId, g: &[f64], factor: impl Fn(usize) -> f64) {
    let scalar = nodes[id.0].value.numel() == 1 && g.len() != 1;
    if let Some(dst) = slot(grads, nodes, id) {
        if scalar {
            dst[0] += g.iter().enumerate().map(|(i, v)| v * factor(i)).sum::<f64>();
        } else {
            for (i, (d, v)) in dst.iter_mut().zip(g).enumerate() {
                *d += v * factor(i);
            }
        }
    }
}

fn value_at(t: &Tensor, i: usize) -> f64 {
    if t.numel() == 1 {
        t.data[0]
    } else {
        t.data[i]
    }
}

fn backprop(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &Node, g: &[f64], fault: Option<GradFault>) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
            if let Some(ga) = slot(grads, nodes, *a) {
                // ga[i,p] += sum_j g[i,j] * b[p,j]
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv.data[p * n..(p + 1) * n];
                        ga[i * k + p] += dot(grow, brow);
                    }
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                // gb[p,j] += sum_i a[i,p] * g[i,j]
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av_ip = av.data[i * k + p];
                        if av_ip == 0.0 {
                            continue;
                        }
                        for (d, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += av_ip * gv;
                        }
                    }
                }
            }
        }
        Op::Add(a, b) => {
            accumulate_broadcast(grads, nodes, *a, g, |_| 1.0);
            accumulate_broadcast(grads, nodes, *b, g, |_| 1.0);
        }
        Op::Sub(a, b) => {
            accumulate_broadcast(grads, nodes, *a, g, |_| 1.0);
            accumulate_broadcast(grads, nodes, *b, g, |_| -1.0);
        }
        Op::Mul(a, b) => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            accumulate_broadcast(grads, nodes, *a, g, |i| value_at(bv, i));
            accumulate_broadcast(grads, nodes, *b, g, |i| value_at(av, i));
        }
        Op::AddRow(a, b) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
            let n = out.shape[1];
            if let Some(gb) = slot(grads, nodes, *b) {
                if n > 0 {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(d, v)| *d += v * c);
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((d, v), y) in ga.iter_mut().zip(g).zip(&out.data) {
                    *d += v * y * (1.0 - y);
                }
            }
        }
        Op::Tanh(a) => {
            let factor = match fault {
                Some(GradFault::TanhScale(f)) => f,
                None => 1.0,
            };
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((d, v), y) in ga.iter_mut().zip(g).zip(&out.data) {
                    *d += v * (1.0 - y * y) * factor;
                }
            }
        }
        Op::LeakyRelu(a, slope) => {
            let x = &nodes[a.0].value;
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((d, v), xv) in ga.iter_mut().zip(g).zip(&x.data) {
                    *d += if *xv > 0.0 { *v } else { v * slope };
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Reshape(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
        }
        Op::Concat { parts, axis } => {
            let outer: usize = out.shape[..*axis].iter().product();
            let inner: usize = out.shape[axis + 1..].iter().product();
            let total = out.shape[*axis] * inner;
            let mut offset = 0;
            for p in parts {
                let block = nodes[p.0].value.shape[*axis] * inner;
                if let Some(gp) = slot(grads, nodes, *p) {
                    for o in 0..outer {
                        let src = &g[o * total + offset..o * total + offset + block];
                        gp[o * block..(o + 1) * block]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, v)| *d += v);
                    }
                }
                offset += block;
            }
        }
        Op::GatherRows { src, index } => {
            let cols = out.shape[1];
            if let Some(gs) = slot(grads, nodes, *src) {
                for (r, &i) in index.iter().enumerate() {
                    for c in 0..cols {
                        gs[i * cols + c] += g[r * cols + c];
                    }
                }
            }
        }
        Op::SegmentSum { src, segment } => {
            let cols = out.shape[1];
            if let Some(gs) = slot(grads, nodes, *src) {
                for (e, &s) in segment.iter().enumerate() {
                    for c in 0..cols {
                        gs[e * cols + c] += g[s * cols + c];
                    }
                }
            }
        }
        Op::ScaleRows { src, weights } => {
            let a = &nodes[src.0].value;
            let w = &nodes[weights.0].value;
            let cols = a.shape[1];
            if let Some(gs) = slot(grads, nodes, *src) {
                for (e, wv) in w.data.iter().enumerate() {
                    for c in 0..cols {
                        gs[e * cols + c] += g[e * cols + c] * wv;
                    }
                }
            }
            if let Some(gw) = slot(grads, nodes, *weights) {
                for (e, d) in gw.iter_mut().enumerate() {
                    *d += (0..cols).map(|c| g[e * cols + c] * a.data[e * cols + c]).sum::<f64>();
                }
            }
        }
        Op::Softmax { logits, segment } => {
            let y = &out.data;
            let groups = segment.iter().flatten().max().map_or(0, |&s| s + 1);
            let mut dot = vec![0.0; groups];
            for (i, s) in segment.iter().enumerate() {
                if let Some(s) = *s {
                    dot[s] += y[i] * g[i];
                }
            }
            if let Some(gl) = slot(grads, nodes, *logits) {
                for (i, s) in segment.iter().enumerate() {
                    if let Some(s) = *s {
                        gl[i] += y[i] * (g[i] - dot[s]);
                    }
                }
            }
        }
        Op::Conv2d {
            input,
            kernel,
            bias,
            stride,
            pad,
        } => {
            let x = &nodes[input.0].value;
            let k = &nodes[kernel.0].value;
            let (o_ch, i_ch, kh, kw) = (k.shape[0], k.shape[1], k.shape[2], k.shape[3]);
            let (h, w) = (x.shape[1], x.shape[2]);
            let (oh, ow) = (out.shape[1], out.shape[2]);
            let geom = ConvGeom {
                i_ch,
                h,
                w,
                kh,
                kw,
                oh,
                ow,
                stride: *stride,
                pad: *pad,
            };
            let (block, plane) = (i_ch * kh * kw, oh * ow);
            if let Some(gk) = slot(grads, nodes, *kernel) {
                let cols = geom.im2col(&x.data);
                for o in 0..o_ch {
                    let go = &g[o * plane..(o + 1) * plane];
                    for (ki, col) in cols.chunks_exact(plane).enumerate() {
                        gk[o * block + ki] += dot(go, col);
                    }
                }
            }
            if let Some(gx) = slot(grads, nodes, *input) {
                let mut gcols = vec![0.0; block * plane];
                for o in 0..o_ch {
                    let go = &g[o * plane..(o + 1) * plane];
                    for (kv, gc) in k.data[o * block..(o + 1) * block].iter().zip(gcols.chunks_exact_mut(plane)) {
                        for (d, v) in gc.iter_mut().zip(go) {
                            *d += kv * v;
                        }
                    }
                }
                geom.for_taps(|row, p, i| gx[i] += gcols[row + p]);
            }
            if let Some(gb) = slot(grads, nodes, *bias) {
                for (o, d) in gb.iter_mut().enumerate() {
                    *d += g[o * oh * ow..(o + 1) * oh * ow].iter().sum::<f64>();
                }
            }
        }
    }
}
