//! Reverse-mode autodiff tape.
//!
//! Every forward builder records an op node; `backward` walks the nodes in
//! exact reverse recording order, accumulating gradients into each node
//! that has a path to a grad-requiring leaf. The op set is closed under
//! differentiation — in particular `ConvT` is both the public transposed
//! convolution and the backward-to-input of `Conv`, which is what lets the
//! gradient-penalty term express ∇_x D(x) as ordinary forward ops and get
//! second-order weight gradients from a single backward pass.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::kernels as k;
use super::tensor::{Shape5, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel (mean, biased variance) of one train-mode batch.
pub type BnBatch<T> = (Vec<T>, Vec<T>);

enum Op<T> {
    Leaf,
    /// y = conv(x, w) + bias; w layout (co, ci, k³).
    Conv { x: NodeId, w: NodeId, bias: Option<NodeId>, stride: usize, pad: usize },
    /// y = transpose-apply of w to x; w layout (cx, co, k³) where cx is
    /// x's channel count. Used for transposed-conv layers (pad 0) and for
    /// spelling conv-backward as a forward op (general pad).
    ConvT { x: NodeId, w: NodeId, bias: Option<NodeId>, stride: usize, pad: usize },
    /// Saved per-channel statistics actually used in the forward pass.
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<T>, invstd: Vec<T>, mode: BnMode },
    LeakyRelu { x: NodeId, slope: T },
    AvgPool { x: NodeId, size: usize },
    Crop { x: NodeId, margin: usize },
    ConcatC { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: T },
    /// y = x ⊙ m with m a constant tensor (leaky-relu derivative masks,
    /// per-sample interpolation weights).
    MulConst { x: NodeId, m: Tensor<T> },
    /// Scalar mean |a − b|.
    L1Mean { a: NodeId, b: NodeId },
    /// Scalar mean over all elements.
    MeanAll { x: NodeId },
    /// (b,1,1,1,1): Σ over channels+spatial of x² per sample.
    SqNormPerSample { x: NodeId },
    /// Scalar λ · mean_b (√s_b − 1)².
    GpFromSqNorms { s: NodeId, lambda: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape5 {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A differentiation variable (parameters) or a constant input.
    pub fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn conv3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.c != ws.c {
            return Err(Error::ShapeMismatch(format!(
                "conv3d: input has {} channels, weight expects {}",
                xs.c, ws.c
            )));
        }
        for (n, kk) in [(xs.nx, ws.nx), (xs.ny, ws.ny), (xs.nz, ws.nz)] {
            if k::conv_out_size(n, kk, stride, pad).is_none() {
                return Err(Error::ShapeMismatch(format!(
                    "conv3d: kernel {kk} exceeds padded extent {n}+2·{pad}"
                )));
            }
        }
        if let Some(b) = bias {
            if self.shape(b).len() != ws.b {
                return Err(Error::ShapeMismatch("conv3d: bias length != out channels".into()));
            }
        }
        let y = k::xcorr3d(&self.nodes[x.0].value, &self.nodes[w.0].value, bias.map(|b| &self.nodes[b.0].value), stride, pad);
        let needs = self.needs(x) || self.needs(w) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(y, Op::Conv { x, w, bias, stride, pad }, needs))
    }

    /// Transposed conv: w layout (cx, co, k³); output extent
    /// (n−1)·stride + k − 2·pad per axis.
    pub fn conv3d_transpose(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.c != ws.b {
            return Err(Error::ShapeMismatch(format!(
                "conv3d_transpose: input has {} channels, weight expects {}",
                xs.c, ws.b
            )));
        }
        let mut out = [0usize; 3];
        for (i, (n, kk)) in [(xs.nx, ws.nx), (xs.ny, ws.ny), (xs.nz, ws.nz)].into_iter().enumerate() {
            out[i] = k::tconv_out_size(n, kk, stride, pad).ok_or_else(|| {
                Error::ShapeMismatch(format!("conv3d_transpose: degenerate output extent at axis {i}"))
            })?;
        }
        if let Some(b) = bias {
            if self.shape(b).len() != ws.c {
                return Err(Error::ShapeMismatch("conv3d_transpose: bias length != out channels".into()));
            }
        }
        let y = k::xcorr3d_bwd_input(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            bias.map(|b| &self.nodes[b.0].value),
            stride,
            pad,
            out,
        );
        let needs = self.needs(x) || self.needs(w) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(y, Op::ConvT { x, w, bias, stride, pad }, needs))
    }

    /// Train mode returns the batch statistics it normalized with, so the
    /// caller can fold them into running stats.
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BnMode,
        running: (&[T], &[T]),
        eps: T,
    ) -> Result<(NodeId, Option<BnBatch<T>>)> {
        let xs = self.shape(x);
        if self.shape(gamma).len() != xs.c || self.shape(beta).len() != xs.c {
            return Err(Error::ShapeMismatch("batchnorm: gamma/beta length != channels".into()));
        }
        let (mean, var, batch) = match mode {
            BnMode::Train => {
                if xs.b * xs.spatial_len() < 2 {
                    return Err(Error::invalid(
                        "batchnorm train mode needs at least 2 values per channel".to_string(),
                    ));
                }
                let (m, v) = k::batch_stats(&self.nodes[x.0].value);
                (m.clone(), v.clone(), Some((m, v)))
            }
            BnMode::Eval => (running.0.to_vec(), running.1.to_vec(), None),
        };
        let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let y = k::bn_apply(
            &self.nodes[x.0].value,
            self.nodes[gamma.0].value.data(),
            self.nodes[beta.0].value.data(),
            &mean,
            &invstd,
        );
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let id = self.push(y, Op::BatchNorm { x, gamma, beta, mean, invstd, mode }, needs);
        Ok((id, batch))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: T) -> NodeId {
        let y = k::leaky_relu(&self.nodes[x.0].value, slope);
        let needs = self.needs(x);
        self.push(y, Op::LeakyRelu { x, slope }, needs)
    }

    pub fn avg_pool(&mut self, x: NodeId, size: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if !s.nx.is_multiple_of(size) || !s.ny.is_multiple_of(size) || !s.nz.is_multiple_of(size) {
            return Err(Error::ShapeMismatch(format!(
                "avg_pool: extent {s} not divisible by {size}"
            )));
        }
        let y = k::avg_pool(&self.nodes[x.0].value, size);
        let needs = self.needs(x);
        Ok(self.push(y, Op::AvgPool { x, size }, needs))
    }

    pub fn crop_center(&mut self, x: NodeId, margin: usize) -> Result<NodeId> {
        if margin == 0 {
            return Ok(x);
        }
        let s = self.shape(x);
        if 2 * margin >= s.nx.min(s.ny).min(s.nz) {
            return Err(Error::invalid(format!(
                "crop margin {margin} must be below half the extent of {s}"
            )));
        }
        let y = k::crop_center(&self.nodes[x.0].value, margin);
        let needs = self.needs(x);
        Ok(self.push(y, Op::Crop { x, margin }, needs))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.b != sb.b || sa.spatial() != sb.spatial() {
            return Err(Error::ShapeMismatch(format!("concat: {sa} vs {sb}")));
        }
        let y = k::concat_channels(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::ConcatC { a, b }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch(format!(
                "add: {} vs {}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut y = self.nodes[a.0].value.clone();
        for (v, u) in y.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *v += *u;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add { a, b }, needs))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let mut y = self.nodes[x.0].value.clone();
        for v in y.data_mut() {
            *v *= factor;
        }
        let needs = self.needs(x);
        self.push(y, Op::Scale { x, factor }, needs)
    }

    pub fn mul_const(&mut self, x: NodeId, m: Tensor<T>) -> Result<NodeId> {
        if self.shape(x) != m.shape() {
            return Err(Error::ShapeMismatch(format!("mul_const: {} vs {}", self.shape(x), m.shape())));
        }
        let mut y = self.nodes[x.0].value.clone();
        for (v, u) in y.data_mut().iter_mut().zip(m.data()) {
            *v *= *u;
        }
        let needs = self.needs(x);
        Ok(self.push(y, Op::MulConst { x, m }, needs))
    }

    pub fn l1_mean(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch(format!(
                "l1_mean: {} vs {}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let n = T::fromf(self.shape(a).len() as f64);
        let mut acc = T::zero();
        for (v, u) in self.nodes[a.0].value.data().iter().zip(self.nodes[b.0].value.data()) {
            acc += (*v - *u).abs();
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(acc / n), Op::L1Mean { a, b }, needs))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = T::fromf(self.shape(x).len() as f64);
        let mut acc = T::zero();
        for v in self.nodes[x.0].value.data() {
            acc += *v;
        }
        let needs = self.needs(x);
        self.push(Tensor::scalar(acc / n), Op::MeanAll { x }, needs)
    }

    pub fn sq_norm_per_sample(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        let per = s.c * s.spatial_len();
        let mut out = Tensor::zeros(Shape5::new(s.b, 1, 1, 1, 1));
        for b in 0..s.b {
            let mut acc = T::zero();
            for v in &self.nodes[x.0].value.data()[b * per..(b + 1) * per] {
                acc += *v * *v;
            }
            out.data_mut()[b] = acc;
        }
        let needs = self.needs(x);
        self.push(out, Op::SqNormPerSample { x }, needs)
    }

    pub fn gp_from_sq_norms(&mut self, s: NodeId, lambda: T) -> NodeId {
        let b = self.shape(s).len();
        let mut acc = T::zero();
        for v in self.nodes[s.0].value.data() {
            let d = v.sqrt() - T::one();
            acc += d * d;
        }
        let val = lambda * acc / T::fromf(b as f64);
        let needs = self.needs(s);
        self.push(Tensor::scalar(val), Op::GpFromSqNorms { s, lambda }, needs)
    }

    /// Gradients of the scalar at `root` with respect to every node.
    /// Nodes without a path to a grad leaf stay `None`.
    pub fn backward(&self, root: NodeId) -> Result<Vec<Option<Tensor<T>>>> {
        if self.shape(root).len() != 1 {
            return Err(Error::invalid("backward root must be scalar".to_string()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=root.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            let put = |grads: &mut Vec<Option<Tensor<T>>>, id: NodeId, inc: Tensor<T>| {
                match &mut grads[id.0] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(inc.data()) {
                            *a += *v;
                        }
                    }
                    slot => *slot = Some(inc),
                }
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Conv { x, w, bias, stride, pad } => {
                    if self.needs(*x) {
                        let gx = k::xcorr3d_bwd_input(
                            &g,
                            &self.nodes[w.0].value,
                            None,
                            *stride,
                            *pad,
                            self.shape(*x).spatial(),
                        );
                        put(&mut grads, *x, gx);
                    }
                    if self.needs(*w) {
                        let ws = self.shape(*w);
                        let gw = k::xcorr3d_bwd_weight(
                            &self.nodes[x.0].value,
                            &g,
                            *stride,
                            *pad,
                            [ws.nx, ws.ny, ws.nz],
                        );
                        put(&mut grads, *w, gw);
                    }
                    if let Some(b) = bias {
                        if self.needs(*b) {
                            let sums = k::channel_sums(&g);
                            let gb = Tensor::from_vec(self.shape(*b), sums)?;
                            put(&mut grads, *b, gb);
                        }
                    }
                }
                Op::ConvT { x, w, bias, stride, pad } => {
                    if self.needs(*x) {
                        let gx = k::xcorr3d(&g, &self.nodes[w.0].value, None, *stride, *pad);
                        put(&mut grads, *x, gx);
                    }
                    if self.needs(*w) {
                        let ws = self.shape(*w);
                        // gw[cx,co,k] = Σ x[b,cx,i]·g[b,co,i·s+k−p]: the conv
                        // weight-gradient kernel with (x := g, gy := x).
                        let gw = k::xcorr3d_bwd_weight(
                            &g,
                            &self.nodes[x.0].value,
                            *stride,
                            *pad,
                            [ws.nx, ws.ny, ws.nz],
                        );
                        put(&mut grads, *w, gw);
                    }
                    if let Some(b) = bias {
                        if self.needs(*b) {
                            let sums = k::channel_sums(&g);
                            let gb = Tensor::from_vec(self.shape(*b), sums)?;
                            put(&mut grads, *b, gb);
                        }
                    }
                }
                Op::BatchNorm { x, gamma, beta, mean, invstd, mode } => {
                    let xs = self.shape(*x);
                    let sp = xs.spatial_len();
                    let xv = &self.nodes[x.0].value;
                    let gm = self.nodes[gamma.0].value.data();
                    let n = T::fromf((xs.b * sp) as f64);
                    let mut gx = Tensor::zeros(xs);
                    let mut ggamma = vec![T::zero(); xs.c];
                    let mut gbeta = vec![T::zero(); xs.c];
                    for c in 0..xs.c {
                        // Accumulate per-channel sums of gŷ and gŷ·x̂.
                        let (mut sg, mut sgx) = (T::zero(), T::zero());
                        for b in 0..xs.b {
                            let base = (b * xs.c + c) * sp;
                            for i in base..base + sp {
                                let xhat = (xv.data()[i] - mean[c]) * invstd[c];
                                let gy = g.data()[i];
                                ggamma[c] += gy * xhat;
                                gbeta[c] += gy;
                                sg += gy;
                                sgx += gy * xhat;
                            }
                        }
                        if self.needs(*x) {
                            match mode {
                                BnMode::Train => {
                                    for b in 0..xs.b {
                                        let base = (b * xs.c + c) * sp;
                                        for i in base..base + sp {
                                            let xhat = (xv.data()[i] - mean[c]) * invstd[c];
                                            let gyh = g.data()[i] * gm[c];
                                            gx.data_mut()[i] = invstd[c]
                                                * (gyh - (sg * gm[c] + xhat * (sgx * gm[c])) / n);
                                        }
                                    }
                                }
                                BnMode::Eval => {
                                    for b in 0..xs.b {
                                        let base = (b * xs.c + c) * sp;
                                        for i in base..base + sp {
                                            gx.data_mut()[i] = g.data()[i] * gm[c] * invstd[c];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    if self.needs(*x) {
                        put(&mut grads, *x, gx);
                    }
                    if self.needs(*gamma) {
                        put(&mut grads, *gamma, Tensor::from_vec(self.shape(*gamma), ggamma)?);
                    }
                    if self.needs(*beta) {
                        put(&mut grads, *beta, Tensor::from_vec(self.shape(*beta), gbeta)?);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    if self.needs(*x) {
                        let mask = k::leaky_relu_mask(&self.nodes[x.0].value, *slope);
                        let mut gx = g.clone();
                        for (v, m) in gx.data_mut().iter_mut().zip(mask.data()) {
                            *v *= *m;
                        }
                        put(&mut grads, *x, gx);
                    }
                }
                Op::AvgPool { x, size } => {
                    if self.needs(*x) {
                        put(&mut grads, *x, k::avg_pool_backward(&g, *size, self.shape(*x)));
                    }
                }
                Op::Crop { x, margin } => {
                    if self.needs(*x) {
                        put(&mut grads, *x, k::crop_center_backward(&g, *margin, self.shape(*x)));
                    }
                }
                Op::ConcatC { a, b } => {
                    let (ga, gb) = k::split_channels(&g, self.shape(*a).c);
                    if self.needs(*a) {
                        put(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        put(&mut grads, *b, gb);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        put(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        put(&mut grads, *b, g.clone());
                    }
                }
                Op::Scale { x, factor } => {
                    if self.needs(*x) {
                        let mut gx = g.clone();
                        for v in gx.data_mut() {
                            *v *= *factor;
                        }
                        put(&mut grads, *x, gx);
                    }
                }
                Op::MulConst { x, m } => {
                    if self.needs(*x) {
                        let mut gx = g.clone();
                        for (v, u) in gx.data_mut().iter_mut().zip(m.data()) {
                            *v *= *u;
                        }
                        put(&mut grads, *x, gx);
                    }
                }
                Op::L1Mean { a, b } => {
                    let gy = g.item();
                    let n = T::fromf(self.shape(*a).len() as f64);
                    let scale = gy / n;
                    let sgn = |d: T| {
                        if d > T::zero() {
                            T::one()
                        } else if d < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        }
                    };
                    let av = self.nodes[a.0].value.data();
                    let bv = self.nodes[b.0].value.data();
                    if self.needs(*a) {
                        let mut ga = Tensor::zeros(self.shape(*a));
                        for (i, v) in ga.data_mut().iter_mut().enumerate() {
                            *v = scale * sgn(av[i] - bv[i]);
                        }
                        put(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = Tensor::zeros(self.shape(*b));
                        for (i, v) in gb.data_mut().iter_mut().enumerate() {
                            *v = -scale * sgn(av[i] - bv[i]);
                        }
                        put(&mut grads, *b, gb);
                    }
                }
                Op::MeanAll { x } => {
                    if self.needs(*x) {
                        let n = T::fromf(self.shape(*x).len() as f64);
                        put(&mut grads, *x, Tensor::filled(self.shape(*x), g.item() / n));
                    }
                }
                Op::SqNormPerSample { x } => {
                    if self.needs(*x) {
                        let xs = self.shape(*x);
                        let per = xs.c * xs.spatial_len();
                        let two = T::fromf(2.0);
                        let mut gx = Tensor::zeros(xs);
                        for b in 0..xs.b {
                            let gb = g.data()[b];
                            for i in b * per..(b + 1) * per {
                                gx.data_mut()[i] = two * self.nodes[x.0].value.data()[i] * gb;
                            }
                        }
                        put(&mut grads, *x, gx);
                    }
                }
                Op::GpFromSqNorms { s, lambda } => {
                    if self.needs(*s) {
                        let ss = self.shape(*s);
                        let bn = T::fromf(ss.len() as f64);
                        let gy = g.item();
                        let mut gs = Tensor::zeros(ss);
                        for (i, v) in gs.data_mut().iter_mut().enumerate() {
                            let sv = self.nodes[s.0].value.data()[i];
                            // d/ds (√s − 1)² = 1 − 1/√s.
                            *v = gy * *lambda / bn * (T::one() - T::one() / sv.sqrt());
                        }
                        put(&mut grads, *s, gs);
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }
}
