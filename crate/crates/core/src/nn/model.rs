//! Generator (cropped 3D U-Net) and critic (strided conv stack) built on
//! the tape, with a deterministic parameter registry.

use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::PatchGeometry;
use crate::scalar::Real;

use super::tape::{BnMode, NodeId, Tape};
use super::tensor::{Shape5, Tensor};

/// U-Net generator hyperparameters. Paper scale is believed to be depth 3
/// with wider blocks; the figure is not explicit, so those defaults are a
/// guess — desk-scale work uses depth 2 / base 4 throughout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec { depth: 2, base_channels: 4, leaky_slope: 0.2, bn_eps: 1e-5, bn_momentum: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticSpec {
    /// Strided conv blocks; each halves the spatial extent. 0 gives a pure
    /// linear functional (useful for penalty calibration).
    pub blocks: usize,
    pub base_channels: usize,
    pub leaky_slope: f64,
    /// Spatial extent of the (cubic) critic input; the head kernel covers
    /// whatever remains after the blocks.
    pub input_size: usize,
}

impl Default for CriticSpec {
    fn default() -> Self {
        CriticSpec { blocks: 4, base_channels: 4, leaky_slope: 0.2, input_size: 16 }
    }
}

impl CriticSpec {
    pub fn validate(&self) -> Result<()> {
        let div = 1usize << self.blocks;
        if self.input_size == 0 || !self.input_size.is_multiple_of(div) {
            return Err(Error::invalid(format!(
                "critic input {} not divisible by 2^{} blocks",
                self.input_size, self.blocks
            )));
        }
        if self.blocks > 0 && self.base_channels == 0 {
            return Err(Error::invalid("critic base_channels must be positive".to_string()));
        }
        Ok(())
    }

    /// Spatial extent left after the strided blocks (the head kernel size).
    pub fn head_kernel(&self) -> usize {
        self.input_size >> self.blocks
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Running batch-norm statistics (one entry per BN layer, forward order).
#[derive(Clone, Debug)]
pub struct BnState<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Clone, Copy)]
struct ConvIdx {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy)]
struct ConvBnIdx {
    conv: ConvIdx,
    gamma: usize,
    beta: usize,
    bn: usize,
}

#[derive(Clone)]
struct BlockIdx {
    layers: [ConvBnIdx; 2],
}

#[derive(Clone)]
struct UpIdx {
    tconv: ConvIdx,
    block: BlockIdx,
}

#[derive(Clone)]
struct GenLayout {
    enc: Vec<BlockIdx>,
    bott: BlockIdx,
    ups: Vec<UpIdx>, // deepest level first
    head: ConvIdx,
}

/// Builds parameters in registry order; the same code path runs at init
/// and after checkpoint load, so ordering is structural, not persisted.
struct Registry<T> {
    params: Vec<Param<T>>,
    bn: Vec<BnState<T>>,
}

impl<T: Real> Registry<T> {
    fn new() -> Self {
        Registry { params: Vec::new(), bn: Vec::new() }
    }

    fn conv(&mut self, name: &str, co: usize, ci: usize, k: usize, rng: &mut impl Rng, slope: f64) -> ConvIdx {
        let fan_in = (ci * k * k * k) as f64;
        let std = (2.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
        let mut w = Tensor::zeros(Shape5::new(co, ci, k, k, k));
        for v in w.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = T::fromf(z * std);
        }
        self.params.push(Param { name: format!("{name}.w"), value: w });
        self.params.push(Param {
            name: format!("{name}.b"),
            value: Tensor::zeros(Shape5::new(1, co, 1, 1, 1)),
        });
        ConvIdx { w: self.params.len() - 2, b: self.params.len() - 1 }
    }

    /// Transposed conv weight, layout (ci, co, k³); same fan-in rule.
    fn tconv(&mut self, name: &str, ci: usize, co: usize, k: usize, rng: &mut impl Rng, slope: f64) -> ConvIdx {
        let fan_in = (ci * k * k * k) as f64;
        let std = (2.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
        let mut w = Tensor::zeros(Shape5::new(ci, co, k, k, k));
        for v in w.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = T::fromf(z * std);
        }
        self.params.push(Param { name: format!("{name}.w"), value: w });
        self.params.push(Param {
            name: format!("{name}.b"),
            value: Tensor::zeros(Shape5::new(1, co, 1, 1, 1)),
        });
        ConvIdx { w: self.params.len() - 2, b: self.params.len() - 1 }
    }

    fn bn(&mut self, name: &str, c: usize) -> (usize, usize, usize) {
        self.params.push(Param {
            name: format!("{name}.gamma"),
            value: Tensor::filled(Shape5::new(1, c, 1, 1, 1), T::one()),
        });
        self.params.push(Param {
            name: format!("{name}.beta"),
            value: Tensor::zeros(Shape5::new(1, c, 1, 1, 1)),
        });
        self.bn.push(BnState {
            name: name.to_string(),
            mean: vec![T::zero(); c],
            var: vec![T::one(); c],
        });
        (self.params.len() - 2, self.params.len() - 1, self.bn.len() - 1)
    }

    fn conv_bn(&mut self, name: &str, co: usize, ci: usize, k: usize, rng: &mut impl Rng, slope: f64) -> ConvBnIdx {
        let conv = self.conv(&format!("{name}.conv"), co, ci, k, rng, slope);
        let (gamma, beta, bn) = self.bn(&format!("{name}.bn"), co);
        ConvBnIdx { conv, gamma, beta, bn }
    }

    fn block(&mut self, name: &str, ci: usize, co: usize, rng: &mut impl Rng, slope: f64) -> BlockIdx {
        BlockIdx {
            layers: [
                self.conv_bn(&format!("{name}.0"), co, ci, 3, rng, slope),
                self.conv_bn(&format!("{name}.1"), co, co, 3, rng, slope),
            ],
        }
    }
}

#[derive(Clone)]
pub struct Generator<T> {
    pub spec: GeneratorSpec,
    pub geom: PatchGeometry,
    pub params: Vec<Param<T>>,
    pub bn: Vec<BnState<T>>,
    layout: GenLayout,
}

/// (bn index, batch mean, batch var) per train-mode BN layer of one
/// forward pass; what [`Generator::apply_bn_updates`] consumes.
pub type BnBatchStats<T> = Vec<(usize, Vec<T>, Vec<T>)>;

/// Result of building a generator forward pass on a tape.
pub struct GenForward<T> {
    pub out: NodeId,
    /// Leaf node per parameter, registry order.
    pub param_nodes: Vec<NodeId>,
    pub bn_batch: BnBatchStats<T>,
}

impl<T: Real> Generator<T> {
    pub fn init(spec: GeneratorSpec, geom: PatchGeometry, rng: &mut impl Rng) -> Result<Generator<T>> {
        if spec.depth == 0 || spec.base_channels == 0 {
            return Err(Error::invalid("generator depth and base_channels must be positive".to_string()));
        }
        geom.validate()?;
        geom.check_depth(spec.depth as u32)?;
        let s = spec.leaky_slope;
        let mut reg = Registry::new();
        let ch = |l: usize| spec.base_channels << l;

        let mut enc = Vec::new();
        for l in 0..spec.depth {
            let ci = if l == 0 { 1 } else { ch(l - 1) };
            enc.push(reg.block(&format!("enc{l}"), ci, ch(l), rng, s));
        }
        let bott = reg.block("bott", ch(spec.depth - 1), ch(spec.depth), rng, s);
        let mut ups = Vec::new();
        for l in (0..spec.depth).rev() {
            let above = ch(l + 1);
            let tconv = reg.tconv(&format!("up{l}.tconv"), above, ch(l), 2, rng, s);
            // Concat with the level-l encoder output doubles the channels.
            let block = reg.block(&format!("up{l}"), 2 * ch(l), ch(l), rng, s);
            ups.push(UpIdx { tconv, block });
        }
        let head = reg.conv("head", 1, ch(0), 1, rng, s);

        Ok(Generator {
            spec,
            geom,
            params: reg.params,
            bn: reg.bn,
            layout: GenLayout { enc, bott, ups, head },
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().len()).sum()
    }

    /// Create one leaf per parameter on `tape`, registry order.
    pub fn param_leaves(&self, tape: &mut Tape<T>, needs_grad: bool) -> Vec<NodeId> {
        self.params.iter().map(|p| tape.leaf(p.value.clone(), needs_grad)).collect()
    }

    fn conv_bn_lrelu(
        &self,
        tape: &mut Tape<T>,
        x: NodeId,
        idx: &ConvBnIdx,
        leaves: &[NodeId],
        mode: BnMode,
        bn_batch: &mut BnBatchStats<T>,
    ) -> Result<NodeId> {
        let y = tape.conv3d(x, leaves[idx.conv.w], Some(leaves[idx.conv.b]), 1, 1)?;
        let run = &self.bn[idx.bn];
        let (y, batch) = tape.batchnorm(
            y,
            leaves[idx.gamma],
            leaves[idx.beta],
            mode,
            (&run.mean, &run.var),
            T::fromf(self.spec.bn_eps),
        )?;
        if let Some((m, v)) = batch {
            bn_batch.push((idx.bn, m, v));
        }
        Ok(tape.leaky_relu(y, T::fromf(self.spec.leaky_slope)))
    }

    fn run_block(
        &self,
        tape: &mut Tape<T>,
        x: NodeId,
        blk: &BlockIdx,
        leaves: &[NodeId],
        mode: BnMode,
        bn_batch: &mut BnBatchStats<T>,
    ) -> Result<NodeId> {
        let x = self.conv_bn_lrelu(tape, x, &blk.layers[0], leaves, mode, bn_batch)?;
        self.conv_bn_lrelu(tape, x, &blk.layers[1], leaves, mode, bn_batch)
    }

    /// Builds the full U-Net on the tape. Input must be (b, 1, in³) for the
    /// configured geometry; output is (b, 1, out³).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: NodeId,
        mode: BnMode,
        needs_grad: bool,
    ) -> Result<GenForward<T>> {
        let leaves = self.param_leaves(tape, needs_grad);
        let (out, bn_batch) = self.forward_from_leaves(tape, x, &leaves, mode)?;
        Ok(GenForward { out, param_nodes: leaves, bn_batch })
    }

    /// Same graph, but over caller-provided parameter leaves (registry
    /// order). This is what gradient checks differentiate through.
    pub fn forward_from_leaves(
        &self,
        tape: &mut Tape<T>,
        x: NodeId,
        leaves: &[NodeId],
        mode: BnMode,
    ) -> Result<(NodeId, BnBatchStats<T>)> {
        let xs = tape.shape(x);
        let n = self.geom.input_size;
        if xs.c != 1 || xs.spatial() != [n, n, n] {
            return Err(Error::ShapeMismatch(format!(
                "generator input: expected (b,1,{n},{n},{n}), got {xs}"
            )));
        }
        if leaves.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "generator: {} parameter leaves for {} parameters",
                leaves.len(),
                self.params.len()
            )));
        }
        let mut bn_batch = Vec::new();

        let mut skips = Vec::new();
        let mut cur = x;
        for blk in &self.layout.enc {
            cur = self.run_block(tape, cur, blk, leaves, mode, &mut bn_batch)?;
            skips.push(cur);
            cur = tape.avg_pool(cur, 2)?;
        }
        cur = self.run_block(tape, cur, &self.layout.bott, leaves, mode, &mut bn_batch)?;
        for (i, up) in self.layout.ups.iter().enumerate() {
            let skip = skips[self.layout.ups.len() - 1 - i];
            cur = tape.conv3d_transpose(cur, leaves[up.tconv.w], Some(leaves[up.tconv.b]), 2, 0)?;
            cur = tape.concat_channels(skip, cur)?;
            cur = self.run_block(tape, cur, &up.block, leaves, mode, &mut bn_batch)?;
        }
        cur = tape.conv3d(cur, leaves[self.layout.head.w], Some(leaves[self.layout.head.b]), 1, 0)?;
        let out = tape.crop_center(cur, self.geom.margin())?;
        Ok((out, bn_batch))
    }

    /// Momentum fold of train-mode batch statistics into the running ones
    /// (unbiased variance, like the usual convention).
    pub fn apply_bn_updates(&mut self, batch: &[(usize, Vec<T>, Vec<T>)], batch_count: usize) {
        let mom = T::fromf(self.spec.bn_momentum);
        let keep = T::one() - mom;
        let unbias = if batch_count > 1 {
            T::fromf(batch_count as f64 / (batch_count - 1) as f64)
        } else {
            T::one()
        };
        for (idx, mean, var) in batch {
            let st = &mut self.bn[*idx];
            for c in 0..st.mean.len() {
                st.mean[c] = keep * st.mean[c] + mom * mean[c];
                st.var[c] = keep * st.var[c] + mom * (unbias * var[c]);
            }
        }
    }

    /// Convenience: run one (1,1,in³) tensor through eval mode on a fresh
    /// tape and return the output tensor.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone(), false);
        let fwd = self.forward(&mut tape, x, BnMode::Eval, false)?;
        Ok(tape.value(fwd.out).clone())
    }
}

#[derive(Clone)]
pub struct Critic<T> {
    pub spec: CriticSpec,
    pub params: Vec<Param<T>>,
    blocks: Vec<ConvIdx>,
    head: ConvIdx,
}

pub struct CriticForward {
    pub scores: NodeId,
    pub param_nodes: Vec<NodeId>,
    /// Pre-activation node of each block, forward order (for the input-
    /// gradient chain's derivative masks).
    pub preacts: Vec<NodeId>,
}

impl<T: Real> Critic<T> {
    pub fn init(spec: CriticSpec, rng: &mut impl Rng) -> Result<Critic<T>> {
        spec.validate()?;
        let s = spec.leaky_slope;
        let mut reg = Registry::new();
        let mut blocks = Vec::new();
        let mut ci = 1;
        for i in 0..spec.blocks {
            let co = spec.base_channels << i;
            blocks.push(reg.conv(&format!("block{i}.conv"), co, ci, 4, rng, s));
            ci = co;
        }
        let head = reg.conv("head", 1, ci, spec.head_kernel(), rng, s);
        Ok(Critic { spec, params: reg.params, blocks, head })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().len()).sum()
    }

    pub fn param_leaves(&self, tape: &mut Tape<T>, needs_grad: bool) -> Vec<NodeId> {
        self.params.iter().map(|p| tape.leaf(p.value.clone(), needs_grad)).collect()
    }

    /// Scores shape is (b, 1, 1, 1, 1).
    pub fn forward(&self, tape: &mut Tape<T>, x: NodeId, needs_grad: bool) -> Result<CriticForward> {
        let leaves = self.param_leaves(tape, needs_grad);
        let (scores, preacts) = self.forward_from_leaves(tape, x, &leaves)?;
        Ok(CriticForward { scores, param_nodes: leaves, preacts })
    }

    /// Same graph, over caller-provided parameter leaves (registry order).
    /// Returns (scores, per-block pre-activation nodes).
    pub fn forward_from_leaves(
        &self,
        tape: &mut Tape<T>,
        x: NodeId,
        leaves: &[NodeId],
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let xs = tape.shape(x);
        let n = self.spec.input_size;
        if xs.c != 1 || xs.spatial() != [n, n, n] {
            return Err(Error::ShapeMismatch(format!(
                "critic input: expected (b,1,{n},{n},{n}), got {xs}"
            )));
        }
        if leaves.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "critic: {} parameter leaves for {} parameters",
                leaves.len(),
                self.params.len()
            )));
        }
        let slope = T::fromf(self.spec.leaky_slope);
        let mut cur = x;
        let mut preacts = Vec::new();
        for (i, blk) in self.blocks.iter().enumerate() {
            cur = tape
                .conv3d(cur, leaves[blk.w], Some(leaves[blk.b]), 2, 1)
                .map_err(|e| Error::invalid(format!("critic block{i}: {e}")))?;
            preacts.push(cur);
            cur = tape.leaky_relu(cur, slope);
        }
        let scores = tape
            .conv3d(cur, leaves[self.head.w], Some(leaves[self.head.b]), 1, 0)
            .map_err(|e| Error::invalid(format!("critic head: {e}")))?;
        Ok((scores, preacts))
    }

    /// ∇_x D(x), one gradient field per sample, expressed as forward tape
    /// ops over the critic's weight leaves — so a later `backward` through
    /// the result differentiates the gradient itself (the double-backprop
    /// needed by the penalty). LeakyReLU derivative masks are treated as
    /// constants, which is exact almost everywhere.
    pub fn input_gradient(&self, tape: &mut Tape<T>, fwd: &CriticForward) -> Result<NodeId> {
        self.input_gradient_from(tape, &fwd.param_nodes, &fwd.preacts, tape.shape(fwd.scores).b)
    }

    /// As [`Critic::input_gradient`], over explicit leaves/pre-activations.
    pub fn input_gradient_from(
        &self,
        tape: &mut Tape<T>,
        leaves: &[NodeId],
        preacts: &[NodeId],
        batch: usize,
    ) -> Result<NodeId> {
        if preacts.len() != self.blocks.len() {
            return Err(Error::ShapeMismatch(format!(
                "critic input gradient: {} pre-activations for {} blocks",
                preacts.len(),
                self.blocks.len()
            )));
        }
        let slope = T::fromf(self.spec.leaky_slope);
        let seed = tape.leaf(Tensor::filled(Shape5::new(batch, 1, 1, 1, 1), T::one()), false);
        // Head: valid conv, stride 1, pad 0.
        let mut g = tape.conv3d_transpose(seed, leaves[self.head.w], None, 1, 0)?;
        for (i, blk) in self.blocks.iter().enumerate().rev() {
            let mask = super::kernels::leaky_relu_mask(tape.value(preacts[i]), slope);
            g = tape.mul_const(g, mask)?;
            g = tape.conv3d_transpose(g, leaves[blk.w], None, 2, 1)?;
        }
        Ok(g)
    }
}
