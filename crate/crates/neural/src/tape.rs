//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every operation appends a node holding its value; `backward` walks the
//! nodes in reverse and returns one gradient per node that needs one.

use blindsr_core::{Error, Result};

use crate::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Scale(Var, f64),
    MulChannels { x: Var, gate: Var },
    GlobalAvgPool(Var),
    Concat(Var, Var),
    PixelShuffle(Var, usize),
    Stretch(Var),
    L1(Var, Var),
    WeightedSum(Var, Vec<f64>),
}

struct Node {
    value: Tensor4,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` for nodes that do not need one.
pub struct Grads(Vec<Option<Vec<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).and_then(|g| g.as_deref())
    }
}

fn mismatch(what: &str, a: [usize; 4], b: [usize; 4]) -> Error {
    Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor4, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input: no gradient is computed for it.
    pub fn constant(&mut self, t: Tensor4) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf, such as a parameter.
    pub fn variable(&mut self, t: Tensor4) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    /// Cross-correlation of `x` with weights `w` `(c_out, c_in, k, k)` plus a
    /// per-channel bias `b` `(1, c_out, 1, 1)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let [batch, c_in, h, wd] = self.shape(x);
        let [c_out, wc_in, k, k2] = self.shape(w);
        if wc_in != c_in || k != k2 {
            return Err(mismatch("conv input vs weight", self.shape(x), self.shape(w)));
        }
        if self.shape(b) != [1, c_out, 1, 1] {
            return Err(mismatch("conv bias", self.shape(b), [1, c_out, 1, 1]));
        }
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::InvalidArgument(format!(
                "conv with k={k}, stride={stride}, pad={pad} does not fit {h}x{wd}"
            )));
        }
        let geom = ConvGeom { batch, c_in, h, w: wd, c_out, k, stride, pad };
        let out = conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let value = Tensor4::new([batch, c_out, geom.out_h(), geom.out_w()], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let needs = self.needs(x);
        self.push(value, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        let needs = self.needs(x);
        self.push(value, Op::Sigmoid(x), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().zip(self.value(b).data()).for_each(|(x, y)| *x += y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v *= c);
        let needs = self.needs(x);
        self.push(value, Op::Scale(x, c), needs)
    }

    /// `x[b, c, ·, ·] · gate[b, c, 0, 0]`.
    pub fn mul_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        let [b, c, h, w] = self.shape(x);
        if self.shape(gate) != [b, c, 1, 1] {
            return Err(mismatch("channel gate", self.shape(gate), [b, c, 1, 1]));
        }
        let mut value = self.value(x).clone();
        let g = self.value(gate).data().to_vec();
        for (i, plane) in value.data_mut().chunks_mut(h * w).enumerate() {
            plane.iter_mut().for_each(|v| *v *= g[i]);
        }
        let needs = self.needs(x) || self.needs(gate);
        Ok(self.push(value, Op::MulChannels { x, gate }, needs))
    }

    /// Spatial mean, `(b, c, h, w) → (b, c, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let [b, c, h, w] = self.shape(x);
        let n = (h * w) as f64;
        let data = self.value(x).data().chunks(h * w).map(|p| p.iter().sum::<f64>() / n).collect();
        let value = Tensor4::new([b, c, 1, 1], data).expect("consistent dims");
        let needs = self.needs(x);
        self.push(value, Op::GlobalAvgPool(x), needs)
    }

    /// Channel concatenation `[a, b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let [ba, ca, h, w] = self.shape(a);
        let [bb, cb, hb, wb] = self.shape(b);
        if ba != bb || h != hb || w != wb {
            return Err(mismatch("concat", self.shape(a), self.shape(b)));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(ba * (ca + cb) * plane);
        for n in 0..ba {
            data.extend_from_slice(&self.value(a).data()[n * ca * plane..][..ca * plane]);
            data.extend_from_slice(&self.value(b).data()[n * cb * plane..][..cb * plane]);
        }
        let value = Tensor4::new([ba, ca + cb, h, w], data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Concat(a, b), needs))
    }

    /// Depth-to-space: `out[c, y·r + i, x·r + j] = in[c·r² + i·r + j, y, x]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let c = self.shape(x)[1];
        if r == 0 || !c.is_multiple_of(r * r) {
            return Err(Error::InvalidArgument(format!(
                "pixel shuffle by {r} needs channels divisible by {}, got {c}",
                r * r
            )));
        }
        let value = shuffle(self.value(x), r);
        let needs = self.needs(x);
        Ok(self.push(value, Op::PixelShuffle(x, r), needs))
    }

    /// Broadcasts `(b, m, 1, 1)` to `(b, m, h, w)`.
    pub fn stretch(&mut self, r: Var, h: usize, w: usize) -> Result<Var> {
        let [b, m, rh, rw] = self.shape(r);
        if rh != 1 || rw != 1 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot stretch {:?} to {h}x{w}",
                self.shape(r)
            )));
        }
        let mut data = Vec::with_capacity(b * m * h * w);
        for &v in self.value(r).data() {
            data.extend(std::iter::repeat_n(v, h * w));
        }
        let value = Tensor4::new([b, m, h, w], data)?;
        let needs = self.needs(r);
        Ok(self.push(value, Op::Stretch(r), needs))
    }

    /// Mean absolute difference, a `(1, 1, 1, 1)` scalar.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("l1", self.shape(a), self.shape(b)));
        }
        let n = self.value(a).len() as f64;
        let s = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (x - y).abs()).sum::<f64>();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor4::filled([1; 4], s / n), Op::L1(a, b), needs))
    }

    /// `Σ x·weights`, a scalar; used to reduce tensors in gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} values",
                weights.len(),
                self.value(x).len()
            )));
        }
        let s = self.value(x).data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        let needs = self.needs(x);
        Ok(self.push(Tensor4::filled([1; 4], s), Op::WeightedSum(x, weights), needs))
    }

    /// Gradients of the scalar `loss` with respect to every node upstream of it.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *g = None;
            }
        }
        Ok(Grads(grads))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, d: Vec<f64>| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&d).for_each(|(e, x)| *e += x),
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let cg = conv2d_backward(geom, self.value(*x).data(), self.value(*w).data(), g, self.needs(*x));
                if let Some(dx) = cg.dx {
                    acc(*x, dx);
                }
                acc(*w, cg.dw);
                acc(*b, cg.dbias);
            }
            Op::Relu(x) => {
                let d = g.iter().zip(self.value(*x).data()).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
                acc(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = g.iter().zip(node.value.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                acc(*x, d);
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Scale(x, c) => acc(*x, g.iter().map(|v| v * c).collect()),
            Op::MulChannels { x, gate } => {
                let [_, _, h, w] = self.shape(*x);
                let gv = self.value(*gate).data();
                let xv = self.value(*x).data();
                let mut dx = vec![0.0; g.len()];
                let mut dgate = vec![0.0; gv.len()];
                for (i, (gp, xp)) in g.chunks(h * w).zip(xv.chunks(h * w)).enumerate() {
                    for (j, (gi, xi)) in gp.iter().zip(xp).enumerate() {
                        dx[i * h * w + j] = gi * gv[i];
                        dgate[i] += gi * xi;
                    }
                }
                acc(*x, dx);
                acc(*gate, dgate);
            }
            Op::GlobalAvgPool(x) => {
                let [_, _, h, w] = self.shape(*x);
                let n = (h * w) as f64;
                let d = g.iter().flat_map(|v| std::iter::repeat_n(v / n, h * w)).collect();
                acc(*x, d);
            }
            Op::Concat(a, b) => {
                let [batch, ca, h, w] = self.shape(*a);
                let cb = self.shape(*b)[1];
                let plane = h * w;
                let (mut da, mut db) = (Vec::with_capacity(batch * ca * plane), Vec::with_capacity(batch * cb * plane));
                for chunk in g.chunks((ca + cb) * plane) {
                    da.extend_from_slice(&chunk[..ca * plane]);
                    db.extend_from_slice(&chunk[ca * plane..]);
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::PixelShuffle(x, r) => {
                let up = Tensor4::new(node.value.shape(), g.to_vec()).expect("gradient has value shape");
                acc(*x, unshuffle(&up, *r).into_data());
            }
            Op::Stretch(r) => {
                let [_, _, h, w] = node.value.shape();
                acc(*r, g.chunks(h * w).map(|p| p.iter().sum()).collect());
            }
            Op::L1(a, b) => {
                let n = self.value(*a).len() as f64;
                let sign: Vec<f64> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(x, y)| g[0] * signum0(x - y) / n)
                    .collect();
                acc(*b, sign.iter().map(|v| -v).collect());
                acc(*a, sign);
            }
            Op::WeightedSum(x, weights) => acc(*x, weights.iter().map(|w| w * g[0]).collect()),
        }
    }
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Depth-to-space on a tensor whose channels are divisible by `r²`.
pub fn shuffle(x: &Tensor4, r: usize) -> Tensor4 {
    let [b, c, h, w] = x.shape();
    let oc = c / (r * r);
    let mut out = Tensor4::zeros([b, oc, h * r, w * r]);
    for n in 0..b {
        for ch in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let src = ch * r * r + i * r + j;
                    for y in 0..h {
                        for xx in 0..w {
                            out.set(n, ch, y * r + i, xx * r + j, x.at(n, src, y, xx));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`shuffle`].
pub fn unshuffle(x: &Tensor4, r: usize) -> Tensor4 {
    let [b, c, h, w] = x.shape();
    let mut out = Tensor4::zeros([b, c * r * r, h / r, w / r]);
    for n in 0..b {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let dst = ch * r * r + i * r + j;
                    for y in 0..h / r {
                        for xx in 0..w / r {
                            out.set(n, dst, y, xx, x.at(n, ch, y * r + i, xx * r + j));
                        }
                    }
                }
            }
        }
    }
    out
}
