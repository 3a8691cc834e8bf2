use rand::Rng;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub enum BatchNormMode<'a, T> {
    /// Normalize with batch statistics and fold them into `running`.
    Train {
        running: &'a mut RunningStats<T>,
        momentum: T,
    },
    /// Normalize with the stored running statistics.
    Eval { running: &'a RunningStats<T> },
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    AvgPool(Var),
    Reshape(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Bce {
        logits: Var,
        targets: Vec<T>,
        weights: Vec<T>,
    },
    Add(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    retain_grad: bool,
    op: Op<T>,
}

/// A reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the tape order is already a
/// topological order and [`Graph::backward`] walks it in reverse, visiting
/// each node once. Gradients accumulate with `+=`, so a leaf used twice
/// receives the sum of both contributions. Intermediate gradients are dropped
/// as soon as they have been propagated unless the node was marked with
/// [`Graph::retain_grad`].
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

const IM2COL_CHUNK: usize = 1 << 22;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            retain_grad: false,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            retain_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; its gradient is kept after backward.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            retain_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Keeps the gradient of an intermediate node available after backward.
    pub fn retain_grad(&mut self, v: Var) {
        self.nodes[v.0].retain_grad = true;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [b, cin, h, w] = self.value(input).dims4("conv2d input")?;
        let [cout, wcin, kh, kw] = self.value(weight).dims4("conv2d weight")?;
        if wcin != cin {
            return Err(Error::shape(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::shape("conv2d: bias must have one value per output channel"));
        }
        if stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape("conv2d: kernel does not fit the padded input"));
        }
        let geo = ConvGeometry {
            batch: b,
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            hout: (h + 2 * padding - kh) / stride + 1,
            wout: (w + 2 * padding - kw) / stride + 1,
        };
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let bs = self.value(bias).data();
        let (k, p) = (geo.patch(), geo.plane());
        let mut out = vec![T::zero(); b * cout * p];
        for (b0, nb) in geo.chunks() {
            let col = geo.im2col(x, b0, nb);
            let cols = nb * p;
            let mut prod = vec![T::zero(); cout * cols];
            T::gemm(
                cout,
                k,
                cols,
                T::one(),
                (wt, k as isize, 1),
                (&col, cols as isize, 1),
                T::zero(),
                (&mut prod, cols as isize, 1),
            );
            for j in 0..nb {
                for co in 0..cout {
                    let dst = &mut out[((b0 + j) * cout + co) * p..][..p];
                    let src = &prod[co * cols + j * p..][..p];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = *s + bs[co];
                    }
                }
            }
        }
        let value = Tensor::new(vec![b, cout, geo.hout, geo.wout], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            &[input, weight, bias],
        ))
    }

    /// Batch normalization over the batch and spatial axes of `[B, C, H, W]`.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
        eps: T,
    ) -> Result<Var> {
        let [b, c, h, w] = self.value(input).dims4("batchnorm2d input")?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::shape(format!(
                "batchnorm2d: affine parameters must have {c} channels"
            )));
        }
        let plane = h * w;
        let count = b * plane;
        let x = self.value(input).data();
        let (mean, inv_std, batch_stats) = match mode {
            BatchNormMode::Train { running, momentum } => {
                if running.mean.len() != c || running.var.len() != c {
                    return Err(Error::shape("batchnorm2d: running stats channel mismatch"));
                }
                let n = T::lit(count as f64);
                let mut means = vec![T::zero(); c];
                let mut inv = vec![T::zero(); c];
                for ch in 0..c {
                    let mut sum = T::zero();
                    for bi in 0..b {
                        for v in &x[(bi * c + ch) * plane..][..plane] {
                            sum = sum + *v;
                        }
                    }
                    let mean = sum / n;
                    let mut ss = T::zero();
                    for bi in 0..b {
                        for v in &x[(bi * c + ch) * plane..][..plane] {
                            let d = *v - mean;
                            ss = ss + d * d;
                        }
                    }
                    let var = ss / n;
                    means[ch] = mean;
                    inv[ch] = T::one() / (var + eps).sqrt();
                    let unbiased = if count > 1 {
                        ss / T::lit((count - 1) as f64)
                    } else {
                        var
                    };
                    let keep = T::one() - momentum;
                    running.mean[ch] = keep * running.mean[ch] + momentum * mean;
                    running.var[ch] = keep * running.var[ch] + momentum * unbiased;
                }
                (means, inv, true)
            }
            BatchNormMode::Eval { running } => {
                if running.mean.len() != c || running.var.len() != c {
                    return Err(Error::shape("batchnorm2d: running stats channel mismatch"));
                }
                let inv = running
                    .var
                    .iter()
                    .map(|v| T::one() / (*v + eps).sqrt())
                    .collect();
                (running.mean.clone(), inv, false)
            }
        };
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = vec![T::zero(); x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * plane;
                for i in off..off + plane {
                    out[i] = g[ch] * (x[i] - mean[ch]) * inv_std[ch] + bt[ch];
                }
            }
        }
        let value = Tensor::new(vec![b, c, h, w], out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            },
            &[input, gamma, beta],
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu(input), &[input])
    }

    /// 2x2 max pooling with stride 2; ties route the gradient to the first
    /// element in row-major order.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(input).dims4("maxpool2d input")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!(
                "maxpool2d needs even spatial extents, got {h}x{w}"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut argmax = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            let base = plane * h * w;
            for r in 0..ho {
                for col in 0..wo {
                    let first = base + 2 * r * w + 2 * col;
                    let mut best = first;
                    for idx in [first + 1, first + w, first + w + 1] {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(vec![b, c, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }, &[input]))
    }

    /// Spatial mean per channel, producing `[B, C, 1, 1]`.
    pub fn adaptive_avg_pool(&mut self, input: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(input).dims4("adaptive_avg_pool input")?;
        let plane = h * w;
        let n = T::lit(plane as f64);
        let out = self
            .value(input)
            .data()
            .chunks(plane)
            .map(|p| p.iter().fold(T::zero(), |a, v| a + *v) / n)
            .collect();
        let value = Tensor::new(vec![b, c, 1, 1], out)?;
        Ok(self.push(value, Op::AvgPool(input), &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(input).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(input), &[input]))
    }

    /// `[B, F] x [O, F]^T + [O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (b, f) = match self.value(input).shape() {
            &[b, f] => (b, f),
            other => return Err(Error::shape(format!("linear input must be [B, F], got {other:?}"))),
        };
        let o = match self.value(weight).shape() {
            &[o, wf] if wf == f => o,
            other => {
                return Err(Error::shape(format!(
                    "linear weight {other:?} does not match {f} input features"
                )))
            }
        };
        if self.value(bias).shape() != [o] {
            return Err(Error::shape("linear: bias must have one value per output"));
        }
        let mut out = Vec::with_capacity(b * o);
        for _ in 0..b {
            out.extend_from_slice(self.value(bias).data());
        }
        T::gemm(
            b,
            f,
            o,
            T::one(),
            (self.value(input).data(), f as isize, 1),
            (self.value(weight).data(), 1, f as isize),
            T::one(),
            (&mut out, o as isize, 1),
        );
        let value = Tensor::new(vec![b, o], out)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }

    /// Inverted dropout. With `rng = None` (evaluation) or `p = 0` this is the
    /// identity and returns `input` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        p: f64,
        rng: Option<&mut R>,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::param(format!("dropout probability {p} not in [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(input) };
        if p == 0.0 {
            return Ok(input);
        }
        let scale = T::lit(1.0 / (1.0 - p));
        let x = self.value(input);
        let mask: Vec<T> = (0..x.len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    scale
                }
            })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { input, mask }, &[input]))
    }

    /// Mean class-weighted binary cross-entropy on logits, evaluated in the
    /// overflow-safe form `max(z, 0) - z*y + ln(1 + e^-|z|)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T], pos_weight: T) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != targets.len() || z.is_empty() {
            return Err(Error::shape(format!(
                "bce: {} logits for {} targets",
                z.len(),
                targets.len()
            )));
        }
        let weights: Vec<T> = targets
            .iter()
            .map(|&y| if y > T::lit(0.5) { pos_weight } else { T::one() })
            .collect();
        let mut total = T::zero();
        for ((&zi, &yi), &wi) in z.iter().zip(targets).zip(&weights) {
            let term = zi.max(T::zero()) - zi * yi + (-zi.abs()).exp().ln_1p();
            total = total + wi * term;
        }
        let loss = total / T::lit(z.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                logits,
                targets: targets.to_vec(),
                weights,
            },
            &[logits],
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape("add: operand shapes differ"));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Backpropagates from a single-element node with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward needs a scalar root; use backward_with"));
        }
        self.backward_with(root, vec![T::one()])
    }

    /// Backpropagates an arbitrary upstream gradient `seed` from `root`.
    pub fn backward_with(&mut self, root: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.value(root).len() {
            return Err(Error::shape("backward seed does not match root shape"));
        }
        accumulate(&mut self.nodes[root.0].grad, &seed);
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = node.grad.take() else { continue };
            propagate(before, node, &grad);
            if node.retain_grad {
                node.grad = Some(grad);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, delta: &[T]) {
    match slot {
        Some(g) => {
            for (a, d) in g.iter_mut().zip(delta) {
                *a = *a + *d;
            }
        }
        None => *slot = Some(delta.to_vec()),
    }
}

/// Grad buffer of a parent, allocated on first use; `None` if the parent
/// does not need a gradient.
fn grad_buf<T: Scalar>(nodes: &mut [Node<T>], v: Var) -> Option<&mut Vec<T>> {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(node.grad.get_or_insert_with(|| vec![T::zero(); len]))
}

fn propagate<T: Scalar>(nodes: &mut [Node<T>], node: &Node<T>, dy: &[T]) {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if let Some(g) = grad_buf(nodes, v) {
                    for (gi, d) in g.iter_mut().zip(dy) {
                        *gi = *gi + *d;
                    }
                }
            }
        }
        Op::Relu(input) => {
            let out = node.value.data();
            if let Some(g) = grad_buf(nodes, *input) {
                for ((gi, d), y) in g.iter_mut().zip(dy).zip(out) {
                    if *y > T::zero() {
                        *gi = *gi + *d;
                    }
                }
            }
        }
        Op::Reshape(input) => {
            if let Some(g) = grad_buf(nodes, *input) {
                for (gi, d) in g.iter_mut().zip(dy) {
                    *gi = *gi + *d;
                }
            }
        }
        Op::Dropout { input, mask } => {
            if let Some(g) = grad_buf(nodes, *input) {
                for ((gi, d), m) in g.iter_mut().zip(dy).zip(mask) {
                    *gi = *gi + *d * *m;
                }
            }
        }
        Op::MaxPool { input, argmax } => {
            if let Some(g) = grad_buf(nodes, *input) {
                for (d, &idx) in dy.iter().zip(argmax) {
                    g[idx as usize] = g[idx as usize] + *d;
                }
            }
        }
        Op::AvgPool(input) => {
            let plane = {
                let s = nodes[input.0].value.shape();
                s[2] * s[3]
            };
            let n = T::lit(plane as f64);
            if let Some(g) = grad_buf(nodes, *input) {
                for (chunk, d) in g.chunks_mut(plane).zip(dy) {
                    let share = *d / n;
                    for gi in chunk {
                        *gi = *gi + share;
                    }
                }
            }
        }
        Op::Bce {
            logits,
            targets,
            weights,
        } => {
            let z = nodes[logits.0].value.data().to_vec();
            let scale = dy[0] / T::lit(z.len() as f64);
            if let Some(g) = grad_buf(nodes, *logits) {
                for i in 0..z.len() {
                    let sig = sigmoid(z[i]);
                    g[i] = g[i] + weights[i] * (sig - targets[i]) * scale;
                }
            }
        }
        Op::Linear {
            input,
            weight,
            bias,
        } => {
            let (b, f) = {
                let s = nodes[input.0].value.shape();
                (s[0], s[1])
            };
            let o = nodes[bias.0].value.len();
            if nodes[input.0].requires_grad {
                let w = nodes[weight.0].value.data().to_vec();
                let g = grad_buf(nodes, *input).expect("requires grad");
                T::gemm(
                    b,
                    o,
                    f,
                    T::one(),
                    (dy, o as isize, 1),
                    (&w, f as isize, 1),
                    T::one(),
                    (g, f as isize, 1),
                );
            }
            if nodes[weight.0].requires_grad {
                let x = nodes[input.0].value.data().to_vec();
                let g = grad_buf(nodes, *weight).expect("requires grad");
                T::gemm(
                    o,
                    b,
                    f,
                    T::one(),
                    (dy, 1, o as isize),
                    (&x, f as isize, 1),
                    T::one(),
                    (g, f as isize, 1),
                );
            }
            if let Some(g) = grad_buf(nodes, *bias) {
                for row in dy.chunks(o) {
                    for (gi, d) in g.iter_mut().zip(row) {
                        *gi = *gi + *d;
                    }
                }
            }
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            mean,
            inv_std,
            batch_stats,
        } => {
            let [b, c, h, w] = nodes[input.0].value.dims4("bn").expect("rank checked");
            let plane = h * w;
            let n = T::lit((b * plane) as f64);
            let x = &nodes[input.0].value;
            let mut sum_dy = vec![T::zero(); c];
            let mut sum_dy_xhat = vec![T::zero(); c];
            for bi in 0..b {
                for ch in 0..c {
                    let off = (bi * c + ch) * plane;
                    for i in off..off + plane {
                        let xhat = (x.data()[i] - mean[ch]) * inv_std[ch];
                        sum_dy[ch] = sum_dy[ch] + dy[i];
                        sum_dy_xhat[ch] = sum_dy_xhat[ch] + dy[i] * xhat;
                    }
                }
            }
            if nodes[input.0].requires_grad {
                let gam = nodes[gamma.0].value.data().to_vec();
                let xs = nodes[input.0].value.data().to_vec();
                let g = grad_buf(nodes, *input).expect("requires grad");
                for bi in 0..b {
                    for ch in 0..c {
                        let off = (bi * c + ch) * plane;
                        let k = gam[ch] * inv_std[ch];
                        for i in off..off + plane {
                            let d = if *batch_stats {
                                let xhat = (xs[i] - mean[ch]) * inv_std[ch];
                                k / n * (n * dy[i] - sum_dy[ch] - xhat * sum_dy_xhat[ch])
                            } else {
                                k * dy[i]
                            };
                            g[i] = g[i] + d;
                        }
                    }
                }
            }
            if let Some(g) = grad_buf(nodes, *gamma) {
                for (gi, s) in g.iter_mut().zip(&sum_dy_xhat) {
                    *gi = *gi + *s;
                }
            }
            if let Some(g) = grad_buf(nodes, *beta) {
                for (gi, s) in g.iter_mut().zip(&sum_dy) {
                    *gi = *gi + *s;
                }
            }
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            padding,
        } => {
            let [b, cin, h, w] = nodes[input.0].value.dims4("conv").expect("rank checked");
            let [cout, _, kh, kw] = nodes[weight.0].value.dims4("conv").expect("rank checked");
            let [_, _, hout, wout] = node.value.dims4("conv").expect("rank checked");
            let geo = ConvGeometry {
                batch: b,
                cin,
                h,
                w,
                kh,
                kw,
                stride: *stride,
                padding: *padding,
                hout,
                wout,
            };
            let (k, p) = (geo.patch(), geo.plane());
            if let Some(g) = grad_buf(nodes, *bias) {
                for bi in 0..b {
                    for co in 0..cout {
                        let s = dy[(bi * cout + co) * p..][..p]
                            .iter()
                            .fold(T::zero(), |a, v| a + *v);
                        g[co] = g[co] + s;
                    }
                }
            }
            let need_w = nodes[weight.0].requires_grad;
            let need_x = nodes[input.0].requires_grad;
            if !need_w && !need_x {
                return;
            }
            let x = nodes[input.0].value.data().to_vec();
            let wt = nodes[weight.0].value.data().to_vec();
            let mut dw = if need_w { vec![T::zero(); cout * k] } else { Vec::new() };
            let mut dx = if need_x { vec![T::zero(); x.len()] } else { Vec::new() };
            for (b0, nb) in geo.chunks() {
                let cols = nb * p;
                let mut dyc = vec![T::zero(); cout * cols];
                for j in 0..nb {
                    for co in 0..cout {
                        dyc[co * cols + j * p..][..p]
                            .copy_from_slice(&dy[((b0 + j) * cout + co) * p..][..p]);
                    }
                }
                if need_w {
                    let col = geo.im2col(&x, b0, nb);
                    T::gemm(
                        cout,
                        cols,
                        k,
                        T::one(),
                        (&dyc, cols as isize, 1),
                        (&col, 1, cols as isize),
                        T::one(),
                        (&mut dw, k as isize, 1),
                    );
                }
                if need_x {
                    let mut dcol = vec![T::zero(); k * cols];
                    T::gemm(
                        k,
                        cout,
                        cols,
                        T::one(),
                        (&wt, 1, k as isize),
                        (&dyc, cols as isize, 1),
                        T::zero(),
                        (&mut dcol, cols as isize, 1),
                    );
                    geo.col2im_add(&dcol, &mut dx, b0, nb);
                }
            }
            if let Some(g) = grad_buf(nodes, *weight) {
                for (gi, d) in g.iter_mut().zip(&dw) {
                    *gi = *gi + *d;
                }
            }
            if let Some(g) = grad_buf(nodes, *input) {
                for (gi, d) in g.iter_mut().zip(&dx) {
                    *gi = *gi + *d;
                }
            }
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    hout: usize,
    wout: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.hout * self.wout
    }

    /// Batch ranges `(start, count)` sized so an unfolded chunk stays bounded.
    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let per_item = (self.patch() * self.plane()).max(1);
        let step = (IM2COL_CHUNK / per_item).clamp(1, self.batch.max(1));
        let batch = self.batch;
        (0..batch)
            .step_by(step)
            .map(move |b0| (b0, step.min(batch - b0)))
    }

    /// Source pixel of output position `o` under kernel offset `k`, if inside
    /// the unpadded input.
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k).checked_sub(self.padding)?;
        (pos < extent).then_some(pos)
    }

    /// Unfolds `nb` images into a `[patch, nb * plane]` matrix.
    fn im2col<T: Scalar>(&self, x: &[T], b0: usize, nb: usize) -> Vec<T> {
        let (p, cols) = (self.plane(), nb * self.plane());
        let mut col = vec![T::zero(); self.patch() * cols];
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for j in 0..nb {
                        let src = &x[((b0 + j) * self.cin + c) * self.h * self.w..];
                        let dst = &mut col[row * cols + j * p..][..p];
                        for oh in 0..self.hout {
                            let Some(ih) = self.source(oh, ki, self.h) else { continue };
                            for ow in 0..self.wout {
                                if let Some(iw) = self.source(ow, kj, self.w) {
                                    dst[oh * self.wout + ow] = src[ih * self.w + iw];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im_add<T: Scalar>(&self, col: &[T], dx: &mut [T], b0: usize, nb: usize) {
        let (p, cols) = (self.plane(), nb * self.plane());
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for j in 0..nb {
                        let dst = &mut dx[((b0 + j) * self.cin + c) * self.h * self.w..];
                        let src = &col[row * cols + j * p..][..p];
                        for oh in 0..self.hout {
                            let Some(ih) = self.source(oh, ki, self.h) else { continue };
                            for ow in 0..self.wout {
                                if let Some(iw) = self.source(ow, kj, self.w) {
                                    let d = &mut dst[ih * self.w + iw];
                                    *d = *d + src[oh * self.wout + ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
