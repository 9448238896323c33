use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::kernels::{check_mask, check_scale, gemm, softmax_row_into};
use crate::{Mask, Result, Tensor, TensorError};

/// Observer invoked for every softmax row computed on a tape. It receives the
/// effective (scaled) logits of the unmasked entries and their probabilities.
pub type SoftmaxProbe = Box<dyn FnMut(&[f64], &[f64])>;

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul { a: usize, b: usize, b_trans: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow { a: usize, row: usize },
    MulRow { a: usize, row: usize },
    Scale { a: usize, s: f64 },
    Relu(usize),
    TanhClip { a: usize, clip: f64 },
    LayerNorm { a: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Softmax { a: usize, scale: f64 },
    LogSoftmax { a: usize, scale: f64, probs: Vec<f64> },
    Concat { parts: Vec<(usize, usize)> },
    ConcatRows { parts: Vec<(usize, usize)> },
    SliceCols { a: usize, start: usize },
    Segment { a: usize, offset: usize },
    GatherRows { a: usize, idx: Vec<usize> },
    MeanRows(usize),
    RepeatRows(usize),
    Pick { a: usize, idx: Vec<usize> },
    Sum(usize),
}

struct Node {
    op: Op,
    value: Rc<Tensor>,
    tracked: bool,
}

/// Records operations for one forward pass. A tape is single-threaded;
/// parallel work uses one tape per worker.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    probe: RefCell<Option<SoftmaxProbe>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    value: Rc<Tensor>,
    tracked: bool,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Installs (or removes) the softmax observer used by entropy audits.
    pub fn set_softmax_probe(&self, probe: Option<SoftmaxProbe>) {
        *self.probe.borrow_mut() = probe;
    }

    /// Registers a leaf; it receives a gradient iff `requires_grad` is set.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let tracked = value.requires_grad();
        self.push(Op::Leaf, value, tracked)
    }

    /// Registers a trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    fn push(&self, op: Op, value: Tensor, tracked: bool) -> Var<'_> {
        let value = Rc::new(value);
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            value: Rc::clone(&value),
            tracked,
        });
        Var {
            tape: self,
            id,
            value,
            tracked,
        }
    }

    fn observe(&self, logits: &[f64], scale: f64, masked: Option<&[bool]>, probs: &[f64]) {
        let mut probe = self.probe.borrow_mut();
        if let Some(probe) = probe.as_mut() {
            let keep = |j: &usize| masked.is_none_or(|m| !m[*j]);
            let z: Vec<f64> = (0..logits.len()).filter(keep).map(|j| logits[j] * scale).collect();
            let p: Vec<f64> = (0..logits.len()).filter(keep).map(|j| probs[j]).collect();
            probe(&z, &p);
        }
    }

    /// Reverse pass from a scalar root. Nodes are visited once each, in
    /// reverse recording order.
    pub fn backward(&self, root: &Var<'_>) -> Result<Gradients> {
        if root.value.len() != 1 {
            return Err(TensorError::shape(
                "backward",
                format!("root must be a scalar, got {:?}", root.value.shape()),
            ));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.tracked {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            backprop(&nodes, node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }
}

/// Adds `f`'s contribution into the gradient buffer of `id`, if tracked.
fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].tracked {
        return;
    }
    let len = nodes[id].value.len();
    let buf = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, b_trans } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = (av.rows(), av.cols());
            let n = out.cols();
            accumulate(nodes, grads, *a, |ga| {
                gemm(m, n, k, g, false, bv.data(), !b_trans, 1.0, ga);
            });
            accumulate(nodes, grads, *b, |gb| {
                if *b_trans {
                    gemm(n, m, k, g, true, av.data(), false, 1.0, gb);
                } else {
                    gemm(k, m, n, av.data(), true, g, false, 1.0, gb);
                }
            });
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g));
            accumulate(nodes, grads, *b, |gb| add_into(gb, g));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g));
            accumulate(nodes, grads, *b, |gb| {
                for (d, s) in gb.iter_mut().zip(g) {
                    *d -= s;
                }
            });
        }
        Op::Mul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            accumulate(nodes, grads, *a, |ga| {
                for ((d, s), y) in ga.iter_mut().zip(g).zip(bv.data()) {
                    *d += s * y;
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                for ((d, s), x) in gb.iter_mut().zip(g).zip(av.data()) {
                    *d += s * x;
                }
            });
        }
        Op::AddRow { a, row } => {
            let cols = out.cols();
            accumulate(nodes, grads, *a, |ga| add_into(ga, g));
            accumulate(nodes, grads, *row, |gr| {
                for chunk in g.chunks_exact(cols) {
                    add_into(gr, chunk);
                }
            });
        }
        Op::MulRow { a, row } => {
            let cols = out.cols();
            let av = &nodes[*a].value;
            let rv = &nodes[*row].value;
            accumulate(nodes, grads, *a, |ga| {
                for (gchunk, dchunk) in g.chunks_exact(cols).zip(ga.chunks_exact_mut(cols)) {
                    for ((d, s), w) in dchunk.iter_mut().zip(gchunk).zip(rv.data()) {
                        *d += s * w;
                    }
                }
            });
            accumulate(nodes, grads, *row, |gr| {
                for (gchunk, xchunk) in g.chunks_exact(cols).zip(av.data().chunks_exact(cols)) {
                    for ((d, s), x) in gr.iter_mut().zip(gchunk).zip(xchunk) {
                        *d += s * x;
                    }
                }
            });
        }
        Op::Scale { a, s } => {
            accumulate(nodes, grads, *a, |ga| {
                for (d, v) in ga.iter_mut().zip(g) {
                    *d += s * v;
                }
            });
        }
        Op::Relu(a) => {
            accumulate(nodes, grads, *a, |ga| {
                for ((d, v), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    if *y > 0.0 {
                        *d += v;
                    }
                }
            });
        }
        Op::TanhClip { a, clip } => {
            accumulate(nodes, grads, *a, |ga| {
                for ((d, v), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    let t = y / clip;
                    *d += v * clip * (1.0 - t * t);
                }
            });
        }
        Op::LayerNorm { a, xhat, inv_std } => {
            let cols = out.cols();
            accumulate(nodes, grads, *a, |ga| {
                for (r, &inv) in inv_std.iter().enumerate() {
                    let gy = &g[r * cols..(r + 1) * cols];
                    let xh = &xhat[r * cols..(r + 1) * cols];
                    let mean_g = gy.iter().sum::<f64>() / cols as f64;
                    let mean_gx = gy.iter().zip(xh).map(|(u, v)| u * v).sum::<f64>() / cols as f64;
                    for ((d, u), v) in ga[r * cols..(r + 1) * cols].iter_mut().zip(gy).zip(xh) {
                        *d += inv * (u - mean_g - v * mean_gx);
                    }
                }
            });
        }
        Op::Softmax { a, scale } => {
            let cols = out.cols();
            accumulate(nodes, grads, *a, |ga| {
                for ((gy, p), d) in g
                    .chunks_exact(cols)
                    .zip(out.data().chunks_exact(cols))
                    .zip(ga.chunks_exact_mut(cols))
                {
                    let dot: f64 = gy.iter().zip(p).map(|(u, v)| u * v).sum();
                    for ((dd, u), v) in d.iter_mut().zip(gy).zip(p) {
                        *dd += scale * v * (u - dot);
                    }
                }
            });
        }
        Op::LogSoftmax { a, scale, probs } => {
            let cols = out.cols();
            accumulate(nodes, grads, *a, |ga| {
                for (((gy, p), y), d) in g
                    .chunks_exact(cols)
                    .zip(probs.chunks_exact(cols))
                    .zip(out.data().chunks_exact(cols))
                    .zip(ga.chunks_exact_mut(cols))
                {
                    let total: f64 = gy
                        .iter()
                        .zip(y)
                        .filter(|(_, y)| y.is_finite())
                        .map(|(u, _)| u)
                        .sum();
                    for (((dd, u), v), y) in d.iter_mut().zip(gy).zip(p).zip(y) {
                        if y.is_finite() {
                            *dd += scale * (u - v * total);
                        }
                    }
                }
            });
        }
        Op::Concat { parts } => {
            let cols = out.cols();
            let mut offset = 0;
            for &(id, width) in parts {
                accumulate(nodes, grads, id, |gp| {
                    for (r, dst) in gp.chunks_exact_mut(width).enumerate() {
                        add_into(dst, &g[r * cols + offset..r * cols + offset + width]);
                    }
                });
                offset += width;
            }
        }
        Op::ConcatRows { parts } => {
            let cols = out.cols();
            let mut offset = 0;
            for &(id, rows) in parts {
                accumulate(nodes, grads, id, |gp| {
                    add_into(gp, &g[offset * cols..(offset + rows) * cols]);
                });
                offset += rows;
            }
        }
        Op::SliceCols { a, start } => {
            let width = out.cols();
            let src_cols = nodes[*a].value.cols();
            accumulate(nodes, grads, *a, |ga| {
                for (r, src) in g.chunks_exact(width).enumerate() {
                    add_into(&mut ga[r * src_cols + start..r * src_cols + start + width], src);
                }
            });
        }
        Op::Segment { a, offset } => {
            accumulate(nodes, grads, *a, |ga| {
                add_into(&mut ga[*offset..*offset + g.len()], g);
            });
        }
        Op::GatherRows { a, idx } => {
            let cols = out.cols();
            accumulate(nodes, grads, *a, |ga| {
                for (r, &src) in idx.iter().enumerate() {
                    add_into(&mut ga[src * cols..(src + 1) * cols], &g[r * cols..(r + 1) * cols]);
                }
            });
        }
        Op::MeanRows(a) => {
            let rows = nodes[*a].value.rows();
            let inv = 1.0 / rows as f64;
            accumulate(nodes, grads, *a, |ga| {
                for chunk in ga.chunks_exact_mut(g.len()) {
                    for (d, v) in chunk.iter_mut().zip(g) {
                        *d += v * inv;
                    }
                }
            });
        }
        Op::RepeatRows(a) => {
            let cols = out.cols();
            accumulate(nodes, grads, *a, |ga| {
                for chunk in g.chunks_exact(cols) {
                    add_into(ga, chunk);
                }
            });
        }
        Op::Pick { a, idx } => {
            let cols = nodes[*a].value.cols();
            accumulate(nodes, grads, *a, |ga| {
                for (r, &c) in idx.iter().enumerate() {
                    ga[r * cols + c] += g[r];
                }
            });
        }
        Op::Sum(a) => {
            accumulate(nodes, grads, *a, |ga| {
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            });
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros if `var` did not influence the root.
    pub fn wrt(&self, var: &Var<'_>) -> Tensor {
        let data = self
            .grads
            .get(var.id)
            .and_then(Option::as_ref)
            .cloned()
            .unwrap_or_else(|| vec![0.0; var.value.len()]);
        Tensor::new(var.value.shape().to_vec(), data).expect("gradient matches value shape")
    }

    /// Borrowed gradient buffer, `None` when the leaf was unused.
    pub fn get(&self, var: &Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ))
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn rows(&self) -> usize {
        self.value.rows()
    }

    pub fn cols(&self) -> usize {
        self.value.cols()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(&self, op: Op, value: Tensor) -> Var<'t> {
        self.tape.push(op, value, self.tracked)
    }

    fn binary(&self, other: &Var<'t>, op: Op, value: Tensor) -> Var<'t> {
        self.tape.push(op, value, self.tracked || other.tracked)
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, false)
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: &Var<'t>, b_trans: bool) -> Result<Var<'t>> {
        let (m, k) = self.value.dims2()?;
        let (br, bc) = other.value.dims2()?;
        let (k2, n) = if b_trans { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(TensorError::shape(
                if b_trans { "matmul_t" } else { "matmul" },
                format!("[{m}, {k}] x [{k2}, {n}]"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value.data(), false, other.value.data(), b_trans, 0.0, &mut out);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.binary(
            other,
            Op::MatMul {
                a: self.id,
                b: other.id,
                b_trans,
            },
            value,
        ))
    }

    fn zip_with(
        &self,
        other: &Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        same_shape(name, &self.value, &other.value)?;
        let data = self
            .value
            .data()
            .iter()
            .zip(other.value.data())
            .map(|(a, b)| f(*a, *b))
            .collect();
        Tensor::new(self.value.shape().to_vec(), data)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(other, "add", |a, b| a + b)?;
        Ok(self.binary(other, Op::Add(self.id, other.id), v))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(other, "sub", |a, b| a - b)?;
        Ok(self.binary(other, Op::Sub(self.id, other.id), v))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(other, "mul", |a, b| a * b)?;
        Ok(self.binary(other, Op::Mul(self.id, other.id), v))
    }

    fn row_broadcast(
        &self,
        row: &Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (r, c) = self.value.dims2()?;
        if row.value.len() != c {
            return Err(TensorError::shape(
                name,
                format!("row of {} values against {c} columns", row.value.len()),
            ));
        }
        let w = row.value.data();
        let mut data = self.value.data().to_vec();
        for chunk in data.chunks_exact_mut(c) {
            for (x, y) in chunk.iter_mut().zip(w) {
                *x = f(*x, *y);
            }
        }
        Tensor::matrix(r, c, data)
    }

    /// Adds a `[1, c]` (or length-`c`) row to every row.
    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        let v = self.row_broadcast(row, "add_row", |a, b| a + b)?;
        Ok(self.binary(row, Op::AddRow { a: self.id, row: row.id }, v))
    }

    /// Multiplies every row elementwise by a `[1, c]` row.
    pub fn mul_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        let v = self.row_broadcast(row, "mul_row", |a, b| a * b)?;
        Ok(self.binary(row, Op::MulRow { a: self.id, row: row.id }, v))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        let data = self.value.data().iter().map(|x| x * s).collect();
        let v = Tensor::new(self.value.shape().to_vec(), data).expect("same shape");
        self.unary(Op::Scale { a: self.id, s }, v)
    }

    pub fn relu(&self) -> Var<'t> {
        let data = self.value.data().iter().map(|x| x.max(0.0)).collect();
        let v = Tensor::new(self.value.shape().to_vec(), data).expect("same shape");
        self.unary(Op::Relu(self.id), v)
    }

    /// `clip * tanh(x)`.
    pub fn tanh_clip(&self, clip: f64) -> Result<Var<'t>> {
        if !(clip > 0.0) {
            return Err(TensorError::Domain(format!("tanh clip must be positive, got {clip}")));
        }
        let data = self.value.data().iter().map(|x| clip * x.tanh()).collect();
        let v = Tensor::new(self.value.shape().to_vec(), data)?;
        Ok(self.unary(Op::TanhClip { a: self.id, clip }, v))
    }

    /// Row-wise standardization without affine terms.
    pub fn layer_norm(&self) -> Result<Var<'t>> {
        let (r, c) = self.value.dims2()?;
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for (src, dst) in self.value.data().chunks_exact(c).zip(xhat.chunks_exact_mut(c)) {
            let mean = src.iter().sum::<f64>() / c as f64;
            let var = src.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (d, x) in dst.iter_mut().zip(src) {
                *d = (x - mean) * inv;
            }
            inv_std.push(inv);
        }
        let v = Tensor::matrix(r, c, xhat.clone())?;
        Ok(self.unary(
            Op::LayerNorm {
                a: self.id,
                xhat,
                inv_std,
            },
            v,
        ))
    }

    /// Row-wise softmax of `scale * self`; masked entries come out as exact zeros.
    pub fn softmax_rows(&self, scale: f64, mask: Option<&Mask>) -> Result<Var<'t>> {
        check_scale(scale)?;
        let (r, c) = self.value.dims2()?;
        check_mask(mask, r, c)?;
        let mut out = vec![0.0; r * c];
        for row in 0..r {
            let logits = self.value.row_slice(row);
            let masked = mask.map(|m| m.row(row));
            let dst = &mut out[row * c..(row + 1) * c];
            softmax_row_into(logits, scale, masked, row, dst)?;
            self.tape.observe(logits, scale, masked, dst);
        }
        let v = Tensor::matrix(r, c, out)?;
        Ok(self.unary(Op::Softmax { a: self.id, scale }, v))
    }

    /// Row-wise log-softmax of `scale * self`; masked entries are `-inf`.
    pub fn log_softmax_rows(&self, scale: f64, mask: Option<&Mask>) -> Result<Var<'t>> {
        check_scale(scale)?;
        let (r, c) = self.value.dims2()?;
        check_mask(mask, r, c)?;
        let mut probs = vec![0.0; r * c];
        let mut out = vec![f64::NEG_INFINITY; r * c];
        for row in 0..r {
            let logits = self.value.row_slice(row);
            let masked = mask.map(|m| m.row(row));
            let p = &mut probs[row * c..(row + 1) * c];
            let (max, log_norm) = softmax_row_into(logits, scale, masked, row, p)?;
            self.tape.observe(logits, scale, masked, p);
            for (j, x) in logits.iter().enumerate() {
                if masked.is_none_or(|m| !m[j]) {
                    out[row * c + j] = x * scale - max - log_norm;
                }
            }
        }
        let v = Tensor::matrix(r, c, out)?;
        Ok(self.unary(
            Op::LogSoftmax {
                a: self.id,
                scale,
                probs,
            },
            v,
        ))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::shape("concat_cols", "no parts"))?;
        let rows = first.rows();
        if parts.iter().any(|p| p.rows() != rows) {
            return Err(TensorError::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(Var::cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.value.row_slice(r));
            }
        }
        let v = Tensor::matrix(rows, cols, data)?;
        let tracked = parts.iter().any(|p| p.tracked);
        let op = Op::Concat {
            parts: parts.iter().map(|p| (p.id, p.cols())).collect(),
        };
        Ok(first.tape.push(op, v, tracked))
    }

    /// Vertical stacking of matrices with equal column counts.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::shape("concat_rows", "no parts"))?;
        let cols = first.cols();
        if parts.iter().any(|p| p.cols() != cols) {
            return Err(TensorError::shape("concat_rows", "column counts differ"));
        }
        let rows: usize = parts.iter().map(Var::rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(p.value.data());
        }
        let v = Tensor::matrix(rows, cols, data)?;
        let tracked = parts.iter().any(|p| p.tracked);
        let op = Op::ConcatRows {
            parts: parts.iter().map(|p| (p.id, p.rows())).collect(),
        };
        Ok(first.tape.push(op, v, tracked))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Var<'t>> {
        let (r, c) = self.value.dims2()?;
        if width == 0 || start + width > c {
            return Err(TensorError::shape(
                "slice_cols",
                format!("columns {start}..{} of {c}", start + width),
            ));
        }
        let mut data = Vec::with_capacity(r * width);
        for row in 0..r {
            data.extend_from_slice(&self.value.row_slice(row)[start..start + width]);
        }
        let v = Tensor::matrix(r, width, data)?;
        Ok(self.unary(Op::SliceCols { a: self.id, start }, v))
    }

    /// A contiguous run of the flat data, viewed with a new shape.
    pub fn segment(&self, offset: usize, shape: Vec<usize>) -> Result<Var<'t>> {
        let len: usize = shape.iter().product();
        if offset + len > self.value.len() {
            return Err(TensorError::shape(
                "segment",
                format!("{offset}+{len} exceeds {}", self.value.len()),
            ));
        }
        let v = Tensor::new(shape, self.value.data()[offset..offset + len].to_vec())?;
        Ok(self.unary(Op::Segment { a: self.id, offset }, v))
    }

    /// Row `i` of the output is row `idx[i]` of `self`.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t>> {
        let (r, c) = self.value.dims2()?;
        if idx.is_empty() || idx.iter().any(|&i| i >= r) {
            return Err(TensorError::shape(
                "gather_rows",
                format!("indices {idx:?} into {r} rows"),
            ));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.value.row_slice(i));
        }
        let v = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.unary(
            Op::GatherRows {
                a: self.id,
                idx: idx.to_vec(),
            },
            v,
        ))
    }

    /// Column means as a `[1, c]` row.
    pub fn mean_rows(&self) -> Result<Var<'t>> {
        let (r, c) = self.value.dims2()?;
        let mut data = vec![0.0; c];
        for chunk in self.value.data().chunks_exact(c) {
            add_into(&mut data, chunk);
        }
        for d in &mut data {
            *d /= r as f64;
        }
        let v = Tensor::matrix(1, c, data)?;
        Ok(self.unary(Op::MeanRows(self.id), v))
    }

    /// Stacks a single row `times` times.
    pub fn repeat_rows(&self, times: usize) -> Result<Var<'t>> {
        let (r, c) = self.value.dims2()?;
        if r != 1 || times == 0 {
            return Err(TensorError::shape(
                "repeat_rows",
                format!("expected one row repeated >0 times, got {r} rows x{times}"),
            ));
        }
        let v = Tensor::matrix(times, c, self.value.data().repeat(times))?;
        Ok(self.unary(Op::RepeatRows(self.id), v))
    }

    /// Selects one entry per row: output `[r, 1]` with `out[i] = self[i, idx[i]]`.
    pub fn pick(&self, idx: &[usize]) -> Result<Var<'t>> {
        let (r, c) = self.value.dims2()?;
        if idx.len() != r || idx.iter().any(|&j| j >= c) {
            return Err(TensorError::shape(
                "pick",
                format!("{} indices for [{r}, {c}]", idx.len()),
            ));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| self.value.get(i, j)).collect();
        let v = Tensor::matrix(r, 1, data)?;
        Ok(self.unary(
            Op::Pick {
                a: self.id,
                idx: idx.to_vec(),
            },
            v,
        ))
    }

    pub fn sum(&self) -> Var<'t> {
        let v = Tensor::scalar(self.value.data().iter().sum());
        self.unary(Op::Sum(self.id), v)
    }
}
