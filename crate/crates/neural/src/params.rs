//! Named parameter tensors and the layer descriptors that index into them.

use blindsr_core::{Error, Result};
use rand::Rng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor4,
}

/// Parameters in creation order; layers refer to them by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor4) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn count_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Puts every parameter on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.variable(p.value.clone())).collect()
    }

    /// Puts every parameter on the tape as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.value.clone())).collect()
    }

    /// Replaces values by name-and-shape matching blobs, in order.
    pub fn load(&mut self, blobs: Vec<Param>) -> Result<()> {
        if blobs.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter blobs for a model with {}",
                blobs.len(),
                self.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(blobs) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "blob {} {:?} where {} {:?} was expected",
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                )));
            }
            dst.value = src.value;
        }
        Ok(())
    }
}

/// A convolution layer: weight and bias indices plus geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Kaiming-uniform weights over fan-in with negative slope √5, i.e.
    /// `U(±1/√fan_in)`, and zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        let w = Tensor4::from_fn([c_out, c_in, k, k], |_, _, _, _| rng.random_range(-bound..bound));
        let w = store.push(format!("{name}.w"), w);
        let b = store.push(format!("{name}.b"), Tensor4::zeros([1, c_out, 1, 1]));
        Self { w, b, stride, pad }
    }

    /// Same-size 3×3 convolution.
    pub fn same3(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c_in: usize, c_out: usize) -> Self {
        Self::init(store, rng, name, c_in, c_out, 3, 1, 1)
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.w], p[self.b], self.stride, self.pad)
    }
}

/// Squeeze-and-excitation channel attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelAttention {
    pub down: Conv,
    pub up: Conv,
}

impl ChannelAttention {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::InvalidArgument(format!(
                "{channels} channels are not divisible by reduction {reduction}"
            )));
        }
        let mid = channels / reduction;
        Ok(Self {
            down: Conv::init(store, rng, &format!("{name}.down"), channels, mid, 1, 1, 0),
            up: Conv::init(store, rng, &format!("{name}.up"), mid, channels, 1, 1, 0),
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let pooled = tape.global_avg_pool(x);
        let squeezed = self.down.forward(tape, p, pooled)?;
        let squeezed = tape.relu(squeezed);
        let gate = self.up.forward(tape, p, squeezed)?;
        let gate = tape.sigmoid(gate);
        tape.mul_channels(x, gate)
    }
}

/// Conditional residual block: `basic + CA(conv(relu(conv([basic, cond]))))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrbParams {
    pub conv1: Conv,
    pub conv2: Conv,
    pub attention: ChannelAttention,
}

impl CrbParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        basic: usize,
        cond: usize,
        reduction: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv::same3(store, rng, &format!("{name}.conv1"), basic + cond, basic),
            conv2: Conv::same3(store, rng, &format!("{name}.conv2"), basic, basic),
            attention: ChannelAttention::init(store, rng, &format!("{name}.att"), basic, reduction)?,
        })
    }
}

pub fn crb_forward(tape: &mut Tape, p: &[Var], crb: &CrbParams, basic: Var, cond: Var) -> Result<Var> {
    let [b, _, h, w] = tape.shape(basic);
    let [cb, _, ch, cw] = tape.shape(cond);
    if (b, h, w) != (cb, ch, cw) {
        return Err(Error::ShapeMismatch(format!(
            "CRB basic {:?} vs conditional {:?}",
            tape.shape(basic),
            tape.shape(cond)
        )));
    }
    let x = tape.concat(basic, cond)?;
    let x = crb.conv1.forward(tape, p, x)?;
    let x = tape.relu(x);
    let x = crb.conv2.forward(tape, p, x)?;
    let x = crb.attention.forward(tape, p, x)?;
    tape.add(x, basic)
}
