//! Reverse-mode differentiation over the fixed set of layers the detector
//! needs. Every op records what its backward pass requires; `backward` walks
//! the tape once in reverse.

use std::hash::{DefaultHasher, Hash, Hasher};

use super::scalar::{gemm, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} vs {} values",
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Shape bookkeeping for a 2D convolution over NCHW data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfold one `(cin, h, w)` image into `(cin·k·k, ho·wo)` columns.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        for i in 0..g.k {
            for j in 0..g.k {
                let row = (c * g.k + i) * g.k + j;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy as usize >= g.h {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *v = if ix < 0 || ix as usize >= g.w {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into an image.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        for i in 0..g.k {
            for j in 0..g.k {
                let row = (c * g.k + i) * g.k + j;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let dst = &mut x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Per-element classification loss weights: `-w·(1-q)^γ·log q` where `q` is
/// the probability of the labelled class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassLossParams {
    pub positive_weight: f64,
    pub negative_weight: f64,
    pub gamma: f64,
}

/// Target of one logit in a classification loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
    Ignore,
}

/// Batch statistics from a train-mode batch norm, for running-average updates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: ConvGeom,
        cols: Vec<T>,
    },
    /// Transposed conv; `g` describes the forward conv it is the adjoint of.
    Deconv {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: ConvGeom,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<f64>,
        outer: usize,
        inner: usize,
        train: bool,
    },
    Relu {
        x: Var,
    },
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Scatter {
        x: Var,
        slots: Vec<(usize, usize)>,
        plane: usize,
    },
    Concat {
        xs: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    /// Scalar loss with its local gradient precomputed; `branches` hashes
    /// which piece of a piecewise loss each term used.
    Loss {
        x: Var,
        local: Vec<T>,
        branches: u64,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `y = x·wᵀ + b` with `x (m, k)`, `w (n, k)`, `b (n)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xs, ws) = (self.shape(x), self.shape(w));
        assert!(
            xs.len() == 2 && ws.len() == 2 && xs[1] == ws[1],
            "linear shapes {xs:?} {ws:?}"
        );
        let (m, k, n) = (xs[0], xs[1], ws[0]);
        let mut y = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            &self.value(x).data,
            false,
            &self.value(w).data,
            true,
            &mut y,
            false,
        );
        if let Some(b) = b {
            let bias = &self.value(b).data;
            assert_eq!(bias.len(), n);
            for row in y.chunks_mut(n.max(1)) {
                add_into(row, bias);
            }
        }
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        self.push(Tensor::new(vec![m, n], y), Op::Linear { x, w, b }, &inputs)
    }

    /// Square-kernel convolution, `x (B, Cin, H, W)`, `w (Cout, Cin, k, k)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        assert!(
            xs.len() == 4 && ws.len() == 4 && xs[1] == ws[1] && ws[2] == ws[3],
            "conv shapes {xs:?} {ws:?}"
        );
        let k = ws[2];
        assert!(
            xs[2] + 2 * pad >= k && xs[3] + 2 * pad >= k,
            "conv kernel larger than input"
        );
        let g = ConvGeom {
            batch: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[0],
            k,
            stride,
            pad,
            ho: (xs[2] + 2 * pad - k) / stride + 1,
            wo: (xs[3] + 2 * pad - k) / stride + 1,
        };
        let (patch, plane) = (g.patch(), g.out_plane());
        let mut cols = vec![T::zero(); g.batch * patch * plane];
        let mut y = vec![T::zero(); g.batch * g.cout * plane];
        {
            let xv = &self.value(x).data;
            let wv = &self.value(w).data;
            let in_size = g.cin * g.h * g.w;
            for bi in 0..g.batch {
                let c = &mut cols[bi * patch * plane..(bi + 1) * patch * plane];
                im2col(&xv[bi * in_size..(bi + 1) * in_size], &g, c);
                gemm(
                    g.cout,
                    patch,
                    plane,
                    wv,
                    false,
                    c,
                    false,
                    &mut y[bi * g.cout * plane..(bi + 1) * g.cout * plane],
                    false,
                );
            }
            if let Some(b) = b {
                self.add_channel_bias(&mut y, b, g.cout, plane);
            }
        }
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        self.push(
            Tensor::new(vec![g.batch, g.cout, g.ho, g.wo], y),
            Op::Conv { x, w, b, g, cols },
            &inputs,
        )
    }

    /// Transposed convolution with kernel = stride and no padding, so each
    /// input cell expands into one `k×k` output patch. `w (Cin, Cout, k, k)`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Var {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        assert!(
            xs.len() == 4 && ws.len() == 4 && xs[1] == ws[0] && ws[2] == ws[3],
            "deconv shapes {xs:?} {ws:?}"
        );
        let k = ws[2];
        let (ho, wo) = ((xs[2] - 1) * stride + k, (xs[3] - 1) * stride + k);
        // the conv that maps (Cout, ho, wo) back to (Cin, h, w)
        let g = ConvGeom {
            batch: xs[0],
            cin: ws[1],
            h: ho,
            w: wo,
            cout: xs[1],
            k,
            stride,
            pad: 0,
            ho: xs[2],
            wo: xs[3],
        };
        let (patch, plane) = (g.patch(), g.out_plane());
        let out_size = g.cin * ho * wo;
        let mut y = vec![T::zero(); g.batch * out_size];
        {
            let xv = &self.value(x).data;
            let wv = &self.value(w).data;
            let mut cols = vec![T::zero(); patch * plane];
            for bi in 0..g.batch {
                let xb = &xv[bi * g.cout * plane..(bi + 1) * g.cout * plane];
                gemm(patch, g.cout, plane, wv, true, xb, false, &mut cols, false);
                col2im(&cols, &g, &mut y[bi * out_size..(bi + 1) * out_size]);
            }
            if let Some(b) = b {
                self.add_channel_bias(&mut y, b, g.cin, ho * wo);
            }
        }
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        self.push(
            Tensor::new(vec![g.batch, g.cin, ho, wo], y),
            Op::Deconv { x, w, b, g },
            &inputs,
        )
    }

    fn add_channel_bias(&self, y: &mut [T], b: Var, channels: usize, plane: usize) {
        let bias = &self.value(b).data;
        assert_eq!(bias.len(), channels);
        for (i, chunk) in y.chunks_mut(plane).enumerate() {
            let bv = bias[i % channels];
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
    }

    /// Batch normalization over channel axis 1 of a `(N, C)` or `(B, C, H, W)`
    /// tensor. `running` switches to eval mode with the given mean and variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: f64,
    ) -> (Var, Option<BatchStats>) {
        let shape = self.shape(x).to_vec();
        assert!(shape.len() >= 2, "batch norm needs a channel axis");
        let (outer, ch) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let n = outer * inner;
        let xv = &self.value(x).data;
        let (gv, bv) = (&self.value(gamma).data, &self.value(beta).data);
        assert!(gv.len() == ch && bv.len() == ch);

        let (mean, var, stats) = match running {
            Some((rm, rv)) => (
                rm.iter().map(|v| v.f64()).collect::<Vec<_>>(),
                rv.iter().map(|v| v.f64()).collect::<Vec<_>>(),
                None,
            ),
            None => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let mut s = 0.0;
                    for o in 0..outer {
                        s += xv[(o * ch + c) * inner..][..inner].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    let m = s / n as f64;
                    let mut q = 0.0;
                    for o in 0..outer {
                        q += xv[(o * ch + c) * inner..][..inner]
                            .iter()
                            .map(|v| (v.f64() - m).powi(2))
                            .sum::<f64>();
                    }
                    mean[c] = m;
                    var[c] = q / n as f64;
                }
                let unbiased = var
                    .iter()
                    .map(|v| if n > 1 { v * n as f64 / (n - 1) as f64 } else { 0.0 })
                    .collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut y = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                let (m, s) = (T::of(mean[c]), T::of(inv_std[c]));
                for i in base..base + inner {
                    let h = (xv[i] - m) * s;
                    xhat[i] = h;
                    y[i] = gv[c] * h + bv[c];
                }
            }
        }
        let op = Op::Norm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            outer,
            inner,
            train: running.is_none(),
        };
        (self.push(Tensor::new(shape, y), op, &[x, gamma, beta]), stats)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let y = t
            .data
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = t.shape.clone();
        self.push(Tensor::new(shape, y), Op::Relu { x }, &[x])
    }

    /// Column-wise max over consecutive row segments of `x (m, c)`; segment
    /// lengths must be positive and sum to `m`. Ties go to the first row.
    pub fn segment_max(&mut self, x: Var, lengths: &[usize]) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 2);
        let c = shape[1];
        assert_eq!(lengths.iter().sum::<usize>(), shape[0], "segments must cover every row");
        let xv = &self.value(x).data;
        let mut y = vec![T::zero(); lengths.len() * c];
        let mut argmax = vec![0; lengths.len() * c];
        let mut start = 0;
        for (s, &len) in lengths.iter().enumerate() {
            assert!(len > 0, "empty segment {s}");
            for j in 0..c {
                let mut best = start;
                for r in start + 1..start + len {
                    if xv[r * c + j] > xv[best * c + j] {
                        best = r;
                    }
                }
                y[s * c + j] = xv[best * c + j];
                argmax[s * c + j] = best * c + j;
            }
            start += len;
        }
        self.push(
            Tensor::new(vec![lengths.len(), c], y),
            Op::SegmentMax { x, argmax },
            &[x],
        )
    }

    /// Place row `p` of `x (P, C)` at `(slots[p].0, :, cell slots[p].1)` of a
    /// zero `(batch, C, h, w)` tensor. Slots must be distinct.
    pub fn scatter(&mut self, x: Var, slots: Vec<(usize, usize)>, batch: usize, h: usize, w: usize) -> Var {
        let shape = self.shape(x).to_vec();
        assert!(shape.len() == 2 && shape[0] == slots.len());
        let (c, plane) = (shape[1], h * w);
        let xv = &self.value(x).data;
        let mut y = vec![T::zero(); batch * c * plane];
        for (p, &(b, cell)) in slots.iter().enumerate() {
            assert!(b < batch && cell < plane);
            for ch in 0..c {
                y[(b * c + ch) * plane + cell] = xv[p * c + ch];
            }
        }
        self.push(
            Tensor::new(vec![batch, c, h, w], y),
            Op::Scatter { x, slots, plane },
            &[x],
        )
    }

    /// Concatenate `(B, Ci, H, W)` tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        let first = self.shape(xs[0]).to_vec();
        let (batch, plane) = (first[0], first[2] * first[3]);
        let chans: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let s = self.shape(v);
                assert!(
                    s[0] == batch && s[2] == first[2] && s[3] == first[3],
                    "concat shapes differ"
                );
                s[1]
            })
            .collect();
        let total: usize = chans.iter().sum();
        let mut y = Vec::with_capacity(batch * total * plane);
        for b in 0..batch {
            for (&v, &c) in xs.iter().zip(&chans) {
                y.extend_from_slice(&self.value(v).data[b * c * plane..(b + 1) * c * plane]);
            }
        }
        self.push(
            Tensor::new(vec![batch, total, first[2], first[3]], y),
            Op::Concat { xs: xs.to_vec() },
            xs,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let y = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&p, &q)| p + q)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, y), Op::Add { a, b }, &[a, b])
    }

    /// Sum over labelled logits of the weighted, focusing classification
    /// loss, divided by `normalizer`.
    pub fn classification_loss(&mut self, x: Var, labels: &[Label], p: ClassLossParams, normalizer: f64) -> Var {
        let xv = &self.value(x).data;
        assert_eq!(xv.len(), labels.len());
        let mut total = 0.0;
        let mut local = vec![T::zero(); xv.len()];
        for (i, (&logit, &label)) in xv.iter().zip(labels).enumerate() {
            let z = logit.f64();
            let prob = 1.0 / (1.0 + (-z).exp());
            // log σ(z) = -softplus(-z), log(1 - σ(z)) = -softplus(z)
            let (loss, grad) = match label {
                Label::Ignore => continue,
                Label::Positive => {
                    let log_p = -softplus(-z);
                    let q = 1.0 - prob;
                    let w = p.positive_weight * q.powf(p.gamma);
                    let g = p.positive_weight * q.powf(p.gamma) * (p.gamma * prob * log_p - q);
                    (-w * log_p, g)
                }
                Label::Negative => {
                    let log_q = -softplus(z);
                    let w = p.negative_weight * prob.powf(p.gamma);
                    let g = p.negative_weight * prob.powf(p.gamma) * (prob - p.gamma * (1.0 - prob) * log_q);
                    (-w * log_q, g)
                }
            };
            total += loss;
            local[i] = T::of(grad / normalizer);
        }
        let value = Tensor::new(vec![1], vec![T::of(total / normalizer)]);
        self.push(value, Op::Loss { x, local, branches: 0 }, &[x])
    }

    /// `weight / normalizer · Σ smooth_l1(x[i] - target)` over `(index, target)` pairs.
    pub fn smooth_l1_loss(&mut self, x: Var, targets: &[(usize, f64)], beta: f64, weight: f64, normalizer: f64) -> Var {
        let xv = &self.value(x).data;
        let mut total = 0.0;
        let mut local = vec![T::zero(); xv.len()];
        let scale = weight / normalizer;
        let mut hasher = DefaultHasher::new();
        for &(i, t) in targets {
            let d = xv[i].f64() - t;
            (d.abs() < beta, d > 0.0).hash(&mut hasher);
            let (loss, grad) = if d.abs() < beta {
                (0.5 * d * d / beta, d / beta)
            } else {
                (d.abs() - 0.5 * beta, d.signum())
            };
            total += loss;
            local[i] = local[i] + T::of(grad * scale);
        }
        let value = Tensor::new(vec![1], vec![T::of(total * scale)]);
        self.push(
            value,
            Op::Loss {
                x,
                local,
                branches: hasher.finish(),
            },
            &[x],
        )
    }

    /// Hash of every branch decision on the tape: ReLU gates, max-pool
    /// winners and piecewise-loss pieces. Two evaluations with equal
    /// signatures lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                &Op::Relu { x } => {
                    for v in &self.value(x).data {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::SegmentMax { argmax, .. } => argmax.hash(&mut h),
                Op::Loss { branches, .. } => branches.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Accumulate gradients of the scalar `root` into every node that needs one.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(vec![T::one()]);
        for id in (0..=root.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(dy) = self.grads[id].take() else { continue };
            self.backward_node(id, &dy);
            self.grads[id] = Some(dy);
        }
    }

    fn accumulate(&mut self, v: Var, g: Vec<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => add_into(acc, &g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&mut self, id: usize, dy: &[T]) {
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        self.backward_op(id, &op, dy);
        self.nodes[id].op = op;
    }

    fn backward_op(&mut self, id: usize, op: &Op<T>, dy: &[T]) {
        match op {
            Op::Leaf => {}
            &Op::Linear { x, w, b } => {
                let (m, k) = (self.shape(x)[0], self.shape(x)[1]);
                let n = self.shape(w)[0];
                let dx = self.wants(x).then(|| {
                    let mut dx = vec![T::zero(); m * k];
                    gemm(m, n, k, dy, false, &self.value(w).data, false, &mut dx, false);
                    dx
                });
                let dw = self.wants(w).then(|| {
                    let mut dw = vec![T::zero(); n * k];
                    gemm(n, m, k, dy, true, &self.value(x).data, false, &mut dw, false);
                    dw
                });
                let db = b.map(|_| column_sums(dy, n));
                if let Some(g) = dx {
                    self.accumulate(x, g);
                }
                if let Some(g) = dw {
                    self.accumulate(w, g);
                }
                if let (Some(b), Some(g)) = (b, db) {
                    self.accumulate(b, g);
                }
            }
            Op::Conv { x, w, b, g, cols } => {
                let (x, w, b, g) = (*x, *w, *b, *g);
                let (patch, plane) = (g.patch(), g.out_plane());
                let in_size = g.cin * g.h * g.w;
                let mut dw = vec![T::zero(); g.cout * patch];
                let mut dx = vec![T::zero(); g.batch * in_size];
                let want_x = self.wants(x);
                let wv = &self.value(w).data;
                let mut dcols = vec![T::zero(); patch * plane];
                for bi in 0..g.batch {
                    let dyb = &dy[bi * g.cout * plane..(bi + 1) * g.cout * plane];
                    let cb = &cols[bi * patch * plane..(bi + 1) * patch * plane];
                    gemm(g.cout, plane, patch, dyb, false, cb, true, &mut dw, true);
                    if want_x {
                        gemm(patch, g.cout, plane, wv, true, dyb, false, &mut dcols, false);
                        col2im(&dcols, &g, &mut dx[bi * in_size..(bi + 1) * in_size]);
                    }
                }
                let db = b.map(|_| channel_sums(dy, g.cout, plane));
                if want_x {
                    self.accumulate(x, dx);
                }
                self.accumulate(w, dw);
                if let (Some(b), Some(gb)) = (b, db) {
                    self.accumulate(b, gb);
                }
            }
            &Op::Deconv { x, w, b, g } => {
                let (patch, plane) = (g.patch(), g.out_plane());
                let out_size = g.cin * g.h * g.w;
                let xv = &self.value(x).data;
                let wv = &self.value(w).data;
                let want_x = self.wants(x);
                let mut dx = vec![T::zero(); g.batch * g.cout * plane];
                let mut dw = vec![T::zero(); g.cout * patch];
                let mut cols = vec![T::zero(); patch * plane];
                for bi in 0..g.batch {
                    im2col(&dy[bi * out_size..(bi + 1) * out_size], &g, &mut cols);
                    let xb = &xv[bi * g.cout * plane..(bi + 1) * g.cout * plane];
                    gemm(g.cout, plane, patch, xb, false, &cols, true, &mut dw, true);
                    if want_x {
                        gemm(
                            g.cout,
                            patch,
                            plane,
                            wv,
                            false,
                            &cols,
                            false,
                            &mut dx[bi * g.cout * plane..(bi + 1) * g.cout * plane],
                            false,
                        );
                    }
                }
                let db = b.map(|_| channel_sums(dy, g.cin, g.h * g.w));
                if want_x {
                    self.accumulate(x, dx);
                }
                self.accumulate(w, dw);
                if let (Some(b), Some(gb)) = (b, db) {
                    self.accumulate(b, gb);
                }
            }
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                outer,
                inner,
                train,
            } => {
                let (x, gamma, beta, outer, inner, train) = (*x, *gamma, *beta, *outer, *inner, *train);
                let gv = &self.value(gamma).data;
                let ch = gv.len();
                let n = (outer * inner) as f64;
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        for i in base..base + inner {
                            dbeta[c] += dy[i].f64();
                            dgamma[c] += dy[i].f64() * xhat[i].f64();
                        }
                    }
                }
                let mut dx = vec![T::zero(); dy.len()];
                for c in 0..ch {
                    let scale = gv[c].f64() * inv_std[c];
                    for o in 0..outer {
                        let base = (o * ch + c) * inner;
                        for i in base..base + inner {
                            let g = if train {
                                scale / n * (n * dy[i].f64() - dbeta[c] - xhat[i].f64() * dgamma[c])
                            } else {
                                scale * dy[i].f64()
                            };
                            dx[i] = T::of(g);
                        }
                    }
                }
                self.accumulate(x, dx);
                self.accumulate(gamma, dgamma.into_iter().map(T::of).collect());
                self.accumulate(beta, dbeta.into_iter().map(T::of).collect());
            }
            &Op::Relu { x } => {
                let xv = &self.value(x).data;
                let dx = dy
                    .iter()
                    .zip(xv)
                    .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                self.accumulate(x, dx);
            }
            Op::SegmentMax { x, argmax } => {
                let x = *x;
                let mut dx = vec![T::zero(); self.value(x).len()];
                for (&src, &d) in argmax.iter().zip(dy) {
                    dx[src] = dx[src] + d;
                }
                self.accumulate(x, dx);
            }
            Op::Scatter { x, slots, plane } => {
                let (x, plane) = (*x, *plane);
                let c = self.shape(x)[1];
                let mut dx = vec![T::zero(); slots.len() * c];
                for (p, &(b, cell)) in slots.iter().enumerate() {
                    for ch in 0..c {
                        dx[p * c + ch] = dy[(b * c + ch) * plane + cell];
                    }
                }
                self.accumulate(x, dx);
            }
            Op::Concat { xs } => {
                let xs = xs.clone();
                let shape = self.nodes[id].value.shape.clone();
                let (batch, total, plane) = (shape[0], shape[1], shape[2] * shape[3]);
                let mut offset = 0;
                for v in xs {
                    let c = self.shape(v)[1];
                    if self.wants(v) {
                        let mut g = Vec::with_capacity(batch * c * plane);
                        for b in 0..batch {
                            g.extend_from_slice(&dy[(b * total + offset) * plane..(b * total + offset + c) * plane]);
                        }
                        self.accumulate(v, g);
                    }
                    offset += c;
                }
            }
            &Op::Add { a, b } => {
                self.accumulate(a, dy.to_vec());
                self.accumulate(b, dy.to_vec());
            }
            Op::Loss { x, local, .. } => {
                let x = *x;
                let d = dy[0];
                let g = local.iter().map(|&l| l * d).collect();
                self.accumulate(x, g);
            }
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn column_sums<T: Scalar>(m: &[T], n: usize) -> Vec<T> {
    let mut s = vec![0.0; n];
    for row in m.chunks(n.max(1)) {
        for (acc, v) in s.iter_mut().zip(row) {
            *acc += v.f64();
        }
    }
    s.into_iter().map(T::of).collect()
}

fn channel_sums<T: Scalar>(dy: &[T], channels: usize, plane: usize) -> Vec<T> {
    let mut s = vec![0.0; channels];
    for (i, chunk) in dy.chunks(plane).enumerate() {
        s[i % channels] += chunk.iter().map(|v| v.f64()).sum::<f64>();
    }
    s.into_iter().map(T::of).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Checks `build` (which must return a scalar) against central differences
    /// for every entry of every leaf.
    fn check(leaves: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let eval = |ls: &[Tensor<f64>]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ls.iter().map(|l| t.leaf(l.clone(), true)).collect();
            let out = build(&mut t, &vs);
            (t, vs, out)
        };
        let (mut tape, vars, out) = eval(&leaves);
        tape.backward(out);
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = tape.grad(vars[li]).map(|g| g.to_vec()).unwrap_or(vec![0.0; leaf.len()]);
            for e in 0..leaf.len() {
                let mut plus = leaves.clone();
                plus[li].data[e] += 1e-6;
                let mut minus = leaves.clone();
                minus[li].data[e] -= 1e-6;
                let (tp, _, op) = eval(&plus);
                let (tm, _, om) = eval(&minus);
                let numeric = (tp.value(op).data[0] - tm.value(om).data[0]) / 2e-6;
                let err = (analytic[e] - numeric).abs() / analytic[e].abs().max(numeric.abs()).max(1e-6);
                assert!(
                    err < 1e-5,
                    "leaf {li} entry {e}: analytic {} numeric {numeric}",
                    analytic[e]
                );
            }
        }
    }

    /// Weighted sum with fixed pseudo-random weights, as a scalar head.
    fn probe(t: &mut Tape<f64>, v: Var) -> Var {
        let n = t.value(v).len();
        let labels: Vec<(usize, f64)> = (0..n).map(|i| (i, ((i * 7919) % 13) as f64 / 6.0 - 1.0)).collect();
        t.smooth_l1_loss(v, &labels, 1e-9, 1.0, 1.0)
    }

    #[test]
    fn conv_and_deconv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(
            vec![
                rand_tensor(vec![2, 2, 5, 4], &mut rng),
                rand_tensor(vec![3, 2, 3, 3], &mut rng),
                rand_tensor(vec![3], &mut rng),
            ],
            |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1);
                probe(t, y)
            },
        );
        check(
            vec![
                rand_tensor(vec![2, 3, 2, 3], &mut rng),
                rand_tensor(vec![3, 2, 2, 2], &mut rng),
                rand_tensor(vec![2], &mut rng),
            ],
            |t, v| {
                let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), 2);
                probe(t, y)
            },
        );
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(vec![1, 3, 4, 4], &mut rng);
        let w = rand_tensor(vec![2, 3, 2, 2], &mut rng);
        let z = rand_tensor(vec![1, 2, 2, 2], &mut rng);
        let mut t = Tape::new();
        let (xv, wv, zv) = (t.leaf(x.clone(), false), t.leaf(w, false), t.leaf(z.clone(), false));
        let cx = t.conv2d(xv, wv, None, 2, 0);
        let dz = t.conv_transpose2d(zv, wv, None, 2);
        let lhs: f64 = t.value(cx).data.iter().zip(&z.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = t.value(dz).data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn linear_norm_relu_max_scatter_concat_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check(
            vec![
                rand_tensor(vec![6, 4], &mut rng),
                rand_tensor(vec![3, 4], &mut rng),
                rand_tensor(vec![3], &mut rng),
                rand_tensor(vec![3], &mut rng),
                rand_tensor(vec![3], &mut rng),
            ],
            |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2]));
                let (y, _) = t.batch_norm(y, v[3], v[4], None, 1e-3);
                let y = t.relu(y);
                let y = t.segment_max(y, &[2, 3, 1]);
                let img = t.scatter(y, vec![(0, 1), (1, 3), (0, 2)], 2, 2, 2);
                let other = t.scatter(v[0], vec![(0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 1)], 2, 2, 2);
                let cat = t.concat_channels(&[img, other]);
                probe(t, cat)
            },
        );
    }

    #[test]
    fn eval_norm_and_losses_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check(
            vec![
                rand_tensor(vec![2, 3, 2, 1], &mut rng),
                rand_tensor(vec![3], &mut rng),
                rand_tensor(vec![3], &mut rng),
            ],
            |t, v| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], Some((&[0.1, -0.2, 0.3], &[0.5, 1.0, 2.0])), 1e-3);
                let labels: Vec<Label> = (0..12)
                    .map(|i| [Label::Positive, Label::Negative, Label::Ignore][i % 3])
                    .collect();
                let focal = ClassLossParams {
                    positive_weight: 0.25,
                    negative_weight: 0.75,
                    gamma: 2.0,
                };
                let a = t.classification_loss(y, &labels, focal, 3.0);
                let b = t.smooth_l1_loss(y, &[(0, 0.4), (5, -0.2), (7, 3.0)], 1.0 / 9.0, 2.0, 3.0);
                t.add(a, b)
            },
        );
    }

    #[test]
    fn focal_loss_values() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![2], vec![0.0, 0.0]), true);
        let ce = ClassLossParams {
            positive_weight: 1.0,
            negative_weight: 1.0,
            gamma: 0.0,
        };
        let l = t.classification_loss(x, &[Label::Positive, Label::Negative], ce, 1.0);
        assert!((t.value(l).data[0] - 2.0 * 2f64.ln()).abs() < 1e-12);
        let focal = ClassLossParams {
            positive_weight: 0.25,
            negative_weight: 0.75,
            gamma: 2.0,
        };
        let l = t.classification_loss(x, &[Label::Positive, Label::Ignore], focal, 1.0);
        assert!((t.value(l).data[0] - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
        // far-saturated logits stay finite
        let big = t.leaf(Tensor::new(vec![2], vec![800.0, -800.0]), true);
        let l = t.classification_loss(big, &[Label::Negative, Label::Positive], focal, 1.0);
        assert!(t.value(l).data[0].is_finite());
    }

    #[test]
    fn segment_max_ties_route_to_first() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![3, 1], vec![2.0, 2.0, 1.0]), true);
        let y = t.segment_max(x, &[3]);
        let l = t.smooth_l1_loss(y, &[(0, 0.0)], 1e-9, 1.0, 1.0);
        t.backward(l);
        assert_eq!(t.grad(x).unwrap(), &[1.0, 0.0, 0.0]);
    }
}
