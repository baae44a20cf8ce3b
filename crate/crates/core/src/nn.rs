//! Parameter storage and the handful of layers the models are built from.

use std::ops::Index;

use crate::checkpoint::Block;
use crate::error::{Error, Result};
use crate::rng::{Rng, SliceRandom};
use crate::tensor::{Adam, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named, ordered model parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Parameters recorded on a tape for one forward pass.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Vars recorded by the caller, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`; as leaves when `trainable`.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Backpropagates `loss` and applies one optimizer step.
    pub fn step(&mut self, tape: &Tape, bound: &Bound, loss: Var, adam: &mut Adam) -> Result<()> {
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = bound
            .vars
            .iter()
            .zip(&self.tensors)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        adam.step(&mut self.tensors, &grads)
    }

    pub fn to_blocks(&self, prefix: &str) -> Vec<Block> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| Block::new(format!("{prefix}{n}"), t.clone()))
            .collect()
    }

    /// Overwrites parameters from checkpoint blocks; names and shapes must
    /// match exactly.
    pub fn load_blocks(&mut self, prefix: &str, blocks: &[Block]) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let full = format!("{prefix}{name}");
            let block = blocks
                .iter()
                .find(|b| b.name == full)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks parameter `{full}`")))?;
            if block.tensor.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load_blocks",
                    lhs: t.shape().to_vec(),
                    rhs: block.tensor.shape().to_vec(),
                });
            }
            *t = block.tensor.clone();
        }
        Ok(())
    }
}

fn he(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

/// `y = x W + b` with `x [N,in]`, `W [in,out]`, `b [1,out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let w = store.add(format!("{name}.w"), he(&[inputs, outputs], inputs, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[1, outputs]));
        Self { w, b, inputs, outputs }
    }

    /// Zero weights and zero bias.
    pub fn zeroed(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[inputs, outputs]));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[1, outputs]));
        Self { w, b, inputs, outputs }
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.w])?;
        tape.add(y, p[self.b])
    }
}

/// 2-D convolution with a per-channel bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            he(&[c_out, c_in, kernel, kernel], c_in * kernel * kernel, rng),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[c_out, 1, 1]));
        Self { w, b, stride, pad }
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, p[self.w], self.stride, self.pad)?;
        tape.add(y, p[self.b])
    }
}

/// Transposed convolution with a per-channel bias.
#[derive(Clone, Copy, Debug)]
pub struct ConvTranspose {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        // Each output pixel sees about c_in * (kernel/stride)² taps.
        let fan_in = (c_in * kernel * kernel / (stride * stride)).max(1);
        let w = store.add(format!("{name}.w"), he(&[c_in, c_out, kernel, kernel], fan_in, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[c_out, 1, 1]));
        Self { w, b, stride, pad }
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv2d_transpose(x, p[self.w], self.stride, self.pad)?;
        tape.add(y, p[self.b])
    }
}

/// Basic residual block: `relu(conv2(relu(conv1(x))) + shortcut(x))`.
///
/// Downsampling blocks use a 4x4 stride-2 first conv and a 2x2 stride-2
/// projection shortcut, which keeps every extent integral for even inputs.
#[derive(Clone, Copy, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    pub shortcut: Option<Conv>,
}

impl ResidualBlock {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, downsample: bool, rng: &mut Rng) -> Self {
        let conv1 = if downsample {
            Conv::new(store, &format!("{name}.conv1"), c_in, c_out, 4, 2, 1, rng)
        } else {
            Conv::new(store, &format!("{name}.conv1"), c_in, c_out, 3, 1, 1, rng)
        };
        let conv2 = Conv::new(store, &format!("{name}.conv2"), c_out, c_out, 3, 1, 1, rng);
        // Damp the residual branch so deep stacks start near identity.
        let w2 = store.get_mut(conv2.w);
        w2.data_mut().iter_mut().for_each(|v| *v *= 0.25);
        let shortcut = match (downsample, c_in == c_out) {
            (true, _) => Some(Conv::new(store, &format!("{name}.proj"), c_in, c_out, 2, 2, 0, rng)),
            (false, false) => Some(Conv::new(store, &format!("{name}.proj"), c_in, c_out, 1, 1, 0, rng)),
            (false, true) => None,
        };
        Self { conv1, conv2, shortcut }
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = tape.relu(self.conv1.forward(tape, p, x)?)?;
        let h = self.conv2.forward(tape, p, h)?;
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(tape, p, x)?,
            None => x,
        };
        tape.relu(tape.add(h, skip)?)
    }
}

/// Shuffled mini-batches of `0..n`; the last batch may be short.
pub fn batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Mean of scalar vars recorded on `tape`.
pub fn mean_of(tape: &Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = *terms
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean of no terms".into()))?;
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    tape.scale(acc, 1.0 / terms.len() as f64)
}

pub use crate::vote::argmax;
