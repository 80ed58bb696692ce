use rand::Rng;

use super::conv::{col2im_add, im2col, ConvGeom};
use super::{Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    MulScalar(Var, Var),
    Exp(Var),
    Relu(Var),
    EluPlusOne(Var),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        /// Batch statistics were used (train mode) rather than stored ones.
        batch_stats: bool,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    LogSoftmax(Var),
    Nll {
        logp: Var,
        labels: Vec<usize>,
    },
    BilinearSample {
        feat: Var,
        pos: Var,
        taps: Vec<SampleTap<T>>,
    },
    ReadoutLinear {
        feat: Var,
        w: Var,
        b: Var,
    },
    PoissonNll {
        pred: Var,
        target: Var,
        eps: T,
    },
    Mse(Var, Var),
    SliceBatch {
        x: Var,
        offset: usize,
    },
}

#[derive(Debug, Clone, Copy)]
struct SampleTap<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    /// d(pixel coordinate)/d(position), zero where the position was clamped.
    dx_dmu: T,
    dy_dmu: T,
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-channel batch statistics observed by a train-mode batchnorm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub output: Var,
    pub mean: Vec<T>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<T>,
}

/// Reverse-mode autodiff tape over a fixed operation set.
///
/// Nodes are appended in evaluation order, so the node index is already a
/// topological order for the backward sweep.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    batch_stats: Vec<BatchStats<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by leaf.
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of a leaf. `None` for leaves that do not require gradients.
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        let shape = self.shapes[v.0].clone();
        self.grads[v.0].take().map(|g| Tensor::new(shape, g))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            batch_stats: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn batch_stats(&self) -> &[BatchStats<T>] {
        &self.batch_stats
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let va = &self.nodes[a.0].value;
        Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.unary(a, |x| x * c);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        let v = self.unary(a, |x| x + c);
        let rg = self.rg(a);
        self.push(v, Op::AddConst(a), rg)
    }

    /// Tensor times a one-element tensor.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.nodes[s.0].value.item();
        let v = self.unary(a, |x| x * sv);
        let rg = self.rg(a) || self.rg(s);
        self.push(v, Op::MulScalar(a, s), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.unary(a, |x| x.exp());
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.unary(a, |x| if x > T::zero() { x } else { T::zero() });
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    /// `elu(x) + 1`, strictly positive.
    pub fn elu_plus_one(&mut self, a: Var) -> Var {
        let v = self.unary(a, |x| if x > T::zero() { x + T::one() } else { x.exp() });
        let rg = self.rg(a);
        self.push(v, Op::EluPlusOne(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.nodes[a.0].value.data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let n = T::of(va.len() as f64);
        let s: T = va.data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s / n), Op::Mean(a), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s: T = self.nodes[a.0].value.data().iter().map(|&x| x * x).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumSquares(a), rg)
    }

    /// Stride-1 convolution. `x`: `[B, C, H, W]`, `w`: `[O, C, k, k]`, `b`: `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Var {
        let xs = self.nodes[x.0].value.shape().to_vec();
        let ws = self.nodes[w.0].value.shape().to_vec();
        assert_eq!(xs.len(), 4, "conv input must be NCHW");
        assert_eq!(ws.len(), 4, "conv weight must be OCkk");
        assert_eq!(xs[1], ws[1], "conv channel mismatch");
        assert_eq!(ws[2], ws[3], "square kernels only");
        let (batch, out_ch) = (xs[0], ws[0]);
        let geom = ConvGeom {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
            pad,
        };
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let in_len = geom.channels * geom.height * geom.width;
        let mut out = vec![T::zero(); batch * out_ch * cols];
        let mut col = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); rows * cols]
        };
        {
            let xv = self.nodes[x.0].value.data();
            let wv = self.nodes[w.0].value.data();
            for n in 0..batch {
                let xb = &xv[n * in_len..(n + 1) * in_len];
                let src: &[T] = if geom.is_pointwise() {
                    xb
                } else {
                    im2col(xb, geom, &mut col);
                    &col
                };
                let ob = &mut out[n * out_ch * cols..(n + 1) * out_ch * cols];
                T::gemm(
                    out_ch,
                    rows,
                    cols,
                    T::one(),
                    wv,
                    rows as isize,
                    1,
                    src,
                    cols as isize,
                    1,
                    T::zero(),
                    ob,
                    cols as isize,
                    1,
                );
            }
            if let Some(b) = b {
                let bv = self.nodes[b.0].value.data();
                assert_eq!(bv.len(), out_ch, "conv bias length");
                for n in 0..batch {
                    for o in 0..out_ch {
                        let base = (n * out_ch + o) * cols;
                        out[base..base + cols].iter_mut().for_each(|v| *v = *v + bv[o]);
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![batch, out_ch, geom.out_h(), geom.out_w()], out);
        self.push(value, Op::Conv2d { x, w, b, geom }, rg)
    }

    /// Batch normalization using the statistics of the current batch.
    /// The observed statistics are recorded for running-average updates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xs = self.nodes[x.0].value.shape().to_vec();
        let (b, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let m = b * hw;
        let xv = self.nodes[x.0].value.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for n in 0..b {
            for ch in 0..c {
                let s = &xv[(n * c + ch) * hw..(n * c + ch + 1) * hw];
                mean[ch] = mean[ch] + s.iter().copied().sum::<T>();
            }
        }
        let mf = T::of(m as f64);
        mean.iter_mut().for_each(|v| *v = *v / mf);
        for n in 0..b {
            for ch in 0..c {
                let s = &xv[(n * c + ch) * hw..(n * c + ch + 1) * hw];
                var[ch] = var[ch]
                    + s.iter()
                        .map(|&v| (v - mean[ch]) * (v - mean[ch]))
                        .sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v = *v / mf);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let unbiased: Vec<T> = if m > 1 {
            var.iter()
                .map(|&v| v * mf / T::of((m - 1) as f64))
                .collect()
        } else {
            var.clone()
        };
        let out = self.normalize(x, gamma, beta, &mean, &inv_std);
        let xhat = out.1;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            out.0,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
            rg,
        );
        self.batch_stats.push(BatchStats {
            output: v,
            mean,
            var: unbiased,
        });
        v
    }

    /// Batch normalization with stored statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Var {
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let (value, xhat) = self.normalize(x, gamma, beta, mean, &inv_std);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
            rg,
        )
    }

    fn normalize(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
    ) -> (Tensor<T>, Vec<T>) {
        let xt = &self.nodes[x.0].value;
        let xs = xt.shape();
        let (b, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let gv = self.nodes[gamma.0].value.data();
        let bv = self.nodes[beta.0].value.data();
        assert_eq!(gv.len(), c, "batchnorm gamma length");
        assert_eq!(mean.len(), c, "batchnorm statistics length");
        let xv = xt.data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * hw;
                for i in base..base + hw {
                    let h = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        (Tensor::new(xs.to_vec(), out), xhat)
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let s = xt.shape().to_vec();
        let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xv = xt.data();
        let mut out = Vec::with_capacity(bc * oh * ow);
        let mut argmax = Vec::with_capacity(bc * oh * ow);
        for p in 0..bc {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xv[i] > xv[best] {
                            best = i;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::new(vec![s[0], s[1], oh, ow], out),
            Op::MaxPool2 { x, argmax },
            rg,
        )
    }

    /// `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let s = xt.shape().to_vec();
        let hw = s[2] * s[3];
        let n = T::of(hw as f64);
        let out = xt
            .data()
            .chunks(hw)
            .map(|c| c.iter().copied().sum::<T>() / n)
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::new(vec![s[0], s[1]], out), Op::GlobalAvgPool(x), rg)
    }

    /// Inverted dropout with a mask drawn from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        let n = self.nodes[x.0].value.len();
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<T>) -> Var {
        let xt = &self.nodes[x.0].value;
        assert_eq!(mask.len(), xt.len(), "dropout mask length");
        let out = xt.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(xt.shape().to_vec(), out);
        let rg = self.rg(x);
        self.push(value, Op::Dropout { x, mask }, rg)
    }

    /// Log-softmax over the last axis of a `[B, K]` tensor.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let s = xt.shape().to_vec();
        let k = *s.last().expect("log_softmax on empty shape");
        let mut out = Vec::with_capacity(xt.len());
        for row in xt.data().chunks(k) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            out.extend(row.iter().map(|&v| v - lse));
        }
        let rg = self.rg(x);
        self.push(Tensor::new(s, out), Op::LogSoftmax(x), rg)
    }

    /// Mean negative log-likelihood of `labels` under row-wise log-probabilities.
    pub fn nll(&mut self, logp: Var, labels: &[usize]) -> Var {
        let lt = &self.nodes[logp.0].value;
        let k = lt.shape()[1];
        assert_eq!(lt.shape()[0], labels.len(), "label count");
        let n = T::of(labels.len() as f64);
        let total: T = labels
            .iter()
            .enumerate()
            .map(|(b, &l)| -lt.data()[b * k + l])
            .sum();
        let rg = self.rg(logp);
        self.push(
            Tensor::scalar(total / n),
            Op::Nll {
                logp,
                labels: labels.to_vec(),
            },
            rg,
        )
    }

    /// Bilinear sampling of feature columns at normalized positions.
    ///
    /// `feat`: `[B, C, H, W]`; `pos`: `[N, 2]` holding `(x, y)` in `[-1, 1]`,
    /// where -1 and 1 address the centers of the border pixels. Positions
    /// outside the square are clamped and receive no gradient.
    /// Output: `[B, N, C]`.
    pub fn bilinear_sample(&mut self, feat: Var, pos: Var) -> Var {
        let ft = &self.nodes[feat.0].value;
        let s = ft.shape().to_vec();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let pv = self.nodes[pos.0].value.data();
        let n_pos = pv.len() / 2;
        let taps: Vec<SampleTap<T>> = (0..n_pos)
            .map(|i| {
                let (x0, x1, fx, dx) = axis_tap(pv[2 * i], w);
                let (y0, y1, fy, dy) = axis_tap(pv[2 * i + 1], h);
                SampleTap {
                    x0,
                    x1,
                    y0,
                    y1,
                    fx,
                    fy,
                    dx_dmu: dx,
                    dy_dmu: dy,
                }
            })
            .collect();
        let fv = ft.data();
        let mut out = Vec::with_capacity(b * n_pos * c);
        for n in 0..b {
            for t in &taps {
                for ch in 0..c {
                    let plane = &fv[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
                    out.push(sample(plane, w, t));
                }
            }
        }
        let rg = self.rg(feat) || self.rg(pos);
        self.push(
            Tensor::new(vec![b, n_pos, c], out),
            Op::BilinearSample { feat, pos, taps },
            rg,
        )
    }

    /// Per-neuron affine map: `[B, N, C]` features, `[N, C]` weights, `[N]` bias.
    pub fn readout_linear(&mut self, feat: Var, w: Var, b: Var) -> Var {
        let ft = &self.nodes[feat.0].value;
        let s = ft.shape().to_vec();
        let (batch, n, c) = (s[0], s[1], s[2]);
        let wv = self.nodes[w.0].value.data();
        let bv = self.nodes[b.0].value.data();
        assert_eq!(wv.len(), n * c, "readout weight shape");
        let fv = ft.data();
        let mut out = Vec::with_capacity(batch * n);
        for bi in 0..batch {
            for ni in 0..n {
                let f = &fv[(bi * n + ni) * c..(bi * n + ni + 1) * c];
                let wr = &wv[ni * c..(ni + 1) * c];
                let dot: T = f.iter().zip(wr).map(|(&a, &b)| a * b).sum();
                out.push(dot + bv[ni]);
            }
        }
        let rg = self.rg(feat) || self.rg(w) || self.rg(b);
        self.push(
            Tensor::new(vec![batch, n], out),
            Op::ReadoutLinear { feat, w, b },
            rg,
        )
    }

    /// Mean of `pred - target * ln(pred + eps)`.
    pub fn poisson_nll(&mut self, pred: Var, target: Var, eps: f64) -> Var {
        let eps_t = T::of(eps);
        let (pv, tv) = (&self.nodes[pred.0].value, &self.nodes[target.0].value);
        assert_eq!(pv.shape(), tv.shape(), "poisson shape mismatch");
        let n = T::of(pv.len() as f64);
        let total: T = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(&p, &t)| p - t * (p + eps_t).ln())
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        self.push(
            Tensor::scalar(total / n),
            Op::PoissonNll {
                pred,
                target,
                eps: eps_t,
            },
            rg,
        )
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "mse shape mismatch");
        let n = T::of(av.len() as f64);
        let total: T = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(total / n), Op::Mse(a, b), rg)
    }

    /// Rows `start..start + len` along the leading (batch) axis.
    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xt = &self.nodes[x.0].value;
        let mut shape = xt.shape().to_vec();
        assert!(start + len <= shape[0], "batch slice out of range");
        let row = xt.len() / shape[0].max(1);
        let data = xt.data()[start * row..(start + len) * row].to_vec();
        shape[0] = len;
        let rg = self.rg(x);
        self.push(
            Tensor::new(shape, data),
            Op::SliceBatch {
                x,
                offset: start * row,
            },
            rg,
        )
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be a scalar");
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) || !n.requires_grad {
                grads[i] = None;
            } else if grads[i].is_none() {
                grads[i] = Some(vec![T::zero(); n.value.len()]);
            }
        }
        Grads {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        }
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.rg(v) {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    add_into(s, g);
                }
                if let Some(s) = self.slot(grads, *b) {
                    add_into(s, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    add_into(s, g);
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(g).for_each(|(d, &v)| *d = *d - v);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..s.len() {
                        s[i] = s[i] + g[i] * bv[i];
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for i in 0..s.len() {
                        s[i] = s[i] + g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(d, &v)| *d = *d + v * *c);
                }
            }
            Op::AddConst(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    add_into(s, g);
                }
            }
            Op::MulScalar(a, sc) => {
                let sv = val(*sc)[0];
                let av = val(*a);
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(d, &v)| *d = *d + v * sv);
                }
                if let Some(s) = self.slot(grads, *sc) {
                    let dot: T = g.iter().zip(av).map(|(&x, &y)| x * y).sum();
                    s[0] = s[0] + dot;
                }
            }
            Op::Exp(a) => {
                let out = node.value.data();
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..s.len() {
                        s[i] = s[i] + g[i] * out[i];
                    }
                }
            }
            Op::Relu(a) => {
                let av = val(*a);
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..s.len() {
                        if av[i] > T::zero() {
                            s[i] = s[i] + g[i];
                        }
                    }
                }
            }
            Op::EluPlusOne(a) => {
                let av = val(*a);
                let out = node.value.data();
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..s.len() {
                        let d = if av[i] > T::zero() { T::one() } else { out[i] };
                        s[i] = s[i] + g[i] * d;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    let c = g[0] / T::of(s.len() as f64);
                    s.iter_mut().for_each(|d| *d = *d + c);
                }
            }
            Op::SumSquares(a) => {
                let av = val(*a);
                if let Some(s) = self.slot(grads, *a) {
                    let two = T::of(2.0) * g[0];
                    for i in 0..s.len() {
                        s[i] = s[i] + two * av[i];
                    }
                }
            }
            Op::Conv2d { x, w, b, geom } => self.backward_conv(*x, *w, *b, *geom, g, grads),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = self.nodes[x.0].value.shape();
                let (bn, c, hw) = (s[0], s[1], s[2] * s[3]);
                let gv = val(*gamma);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for n in 0..bn {
                    for ch in 0..c {
                        let base = (n * c + ch) * hw;
                        for i in base..base + hw {
                            sum_g[ch] = sum_g[ch] + g[i];
                            sum_gx[ch] = sum_gx[ch] + g[i] * xhat[i];
                        }
                    }
                }
                if let Some(sl) = self.slot(grads, *gamma) {
                    add_into(sl, &sum_gx);
                }
                if let Some(sl) = self.slot(grads, *beta) {
                    add_into(sl, &sum_g);
                }
                if let Some(sl) = self.slot(grads, *x) {
                    let m = T::of((bn * hw) as f64);
                    for n in 0..bn {
                        for ch in 0..c {
                            let base = (n * c + ch) * hw;
                            let k = gv[ch] * inv_std[ch];
                            for i in base..base + hw {
                                let d = if *batch_stats {
                                    k * (g[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                                } else {
                                    k * g[i]
                                };
                                sl[i] = sl[i] + d;
                            }
                        }
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(s) = self.slot(grads, *x) {
                    for (o, &i) in argmax.iter().enumerate() {
                        s[i] = s[i] + g[o];
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let s = self.nodes[x.0].value.shape();
                let hw = s[2] * s[3];
                if let Some(sl) = self.slot(grads, *x) {
                    let inv = T::one() / T::of(hw as f64);
                    for (p, chunk) in sl.chunks_mut(hw).enumerate() {
                        let d = g[p] * inv;
                        chunk.iter_mut().for_each(|v| *v = *v + d);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(s) = self.slot(grads, *x) {
                    for i in 0..s.len() {
                        s[i] = s[i] + g[i] * mask[i];
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let out = node.value.data();
                let k = *node.value.shape().last().unwrap();
                if let Some(s) = self.slot(grads, *x) {
                    for (r, (srow, (grow, orow))) in s
                        .chunks_mut(k)
                        .zip(g.chunks(k).zip(out.chunks(k)))
                        .enumerate()
                    {
                        let _ = r;
                        let gs: T = grow.iter().copied().sum();
                        for j in 0..k {
                            srow[j] = srow[j] + grow[j] - orow[j].exp() * gs;
                        }
                    }
                }
            }
            Op::Nll { logp, labels } => {
                let k = self.nodes[logp.0].value.shape()[1];
                if let Some(s) = self.slot(grads, *logp) {
                    let c = g[0] / T::of(labels.len() as f64);
                    for (b, &l) in labels.iter().enumerate() {
                        s[b * k + l] = s[b * k + l] - c;
                    }
                }
            }
            Op::BilinearSample { feat, pos, taps } => {
                let fs = self.nodes[feat.0].value.shape();
                let (b, c, h, w) = (fs[0], fs[1], fs[2], fs[3]);
                let n_pos = taps.len();
                if let Some(s) = self.slot(grads, *feat) {
                    for n in 0..b {
                        for (p, t) in taps.iter().enumerate() {
                            for ch in 0..c {
                                let go = g[(n * n_pos + p) * c + ch];
                                let plane = &mut s[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
                                let one = T::one();
                                plane[t.y0 * w + t.x0] =
                                    plane[t.y0 * w + t.x0] + go * (one - t.fx) * (one - t.fy);
                                plane[t.y0 * w + t.x1] = plane[t.y0 * w + t.x1] + go * t.fx * (one - t.fy);
                                plane[t.y1 * w + t.x0] = plane[t.y1 * w + t.x0] + go * (one - t.fx) * t.fy;
                                plane[t.y1 * w + t.x1] = plane[t.y1 * w + t.x1] + go * t.fx * t.fy;
                            }
                        }
                    }
                }
                let fv = val(*feat);
                if let Some(s) = self.slot(grads, *pos) {
                    for (p, t) in taps.iter().enumerate() {
                        let (mut gx, mut gy) = (T::zero(), T::zero());
                        for n in 0..b {
                            for ch in 0..c {
                                let go = g[(n * n_pos + p) * c + ch];
                                let plane = &fv[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
                                let f00 = plane[t.y0 * w + t.x0];
                                let f01 = plane[t.y0 * w + t.x1];
                                let f10 = plane[t.y1 * w + t.x0];
                                let f11 = plane[t.y1 * w + t.x1];
                                let one = T::one();
                                gx = gx + go * ((one - t.fy) * (f01 - f00) + t.fy * (f11 - f10));
                                gy = gy + go * ((one - t.fx) * (f10 - f00) + t.fx * (f11 - f01));
                            }
                        }
                        s[2 * p] = s[2 * p] + gx * t.dx_dmu;
                        s[2 * p + 1] = s[2 * p + 1] + gy * t.dy_dmu;
                    }
                }
            }
            Op::ReadoutLinear { feat, w, b } => {
                let fs = self.nodes[feat.0].value.shape();
                let (batch, n, c) = (fs[0], fs[1], fs[2]);
                let (fv, wv) = (val(*feat), val(*w));
                if let Some(s) = self.slot(grads, *feat) {
                    for bi in 0..batch {
                        for ni in 0..n {
                            let go = g[bi * n + ni];
                            let base = (bi * n + ni) * c;
                            for ch in 0..c {
                                s[base + ch] = s[base + ch] + go * wv[ni * c + ch];
                            }
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *w) {
                    for bi in 0..batch {
                        for ni in 0..n {
                            let go = g[bi * n + ni];
                            let base = (bi * n + ni) * c;
                            for ch in 0..c {
                                s[ni * c + ch] = s[ni * c + ch] + go * fv[base + ch];
                            }
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for bi in 0..batch {
                        for ni in 0..n {
                            s[ni] = s[ni] + g[bi * n + ni];
                        }
                    }
                }
            }
            Op::PoissonNll { pred, target, eps } => {
                let (pv, tv) = (val(*pred), val(*target));
                let inv_n = g[0] / T::of(pv.len() as f64);
                if let Some(s) = self.slot(grads, *pred) {
                    for i in 0..s.len() {
                        s[i] = s[i] + inv_n * (T::one() - tv[i] / (pv[i] + *eps));
                    }
                }
                if let Some(s) = self.slot(grads, *target) {
                    for i in 0..s.len() {
                        s[i] = s[i] - inv_n * (pv[i] + *eps).ln();
                    }
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let c = T::of(2.0) * g[0] / T::of(av.len() as f64);
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..s.len() {
                        s[i] = s[i] + c * (av[i] - bv[i]);
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for i in 0..s.len() {
                        s[i] = s[i] - c * (av[i] - bv[i]);
                    }
                }
            }
            Op::SliceBatch { x, offset } => {
                if let Some(s) = self.slot(grads, *x) {
                    add_into(&mut s[*offset..*offset + g.len()], g);
                }
            }
        }
    }

    fn backward_conv(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let batch = self.nodes[x.0].value.shape()[0];
        let out_ch = self.nodes[w.0].value.shape()[0];
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let in_len = geom.channels * geom.height * geom.width;
        let xv = self.nodes[x.0].value.data();
        let wv = self.nodes[w.0].value.data();

        if let Some(b) = b {
            if let Some(s) = self.slot(grads, b) {
                for n in 0..batch {
                    for o in 0..out_ch {
                        let base = (n * out_ch + o) * cols;
                        s[o] = s[o] + g[base..base + cols].iter().copied().sum::<T>();
                    }
                }
            }
        }

        if self.rg(w) {
            let mut col = if geom.is_pointwise() {
                Vec::new()
            } else {
                vec![T::zero(); rows * cols]
            };
            let s = self.slot(grads, w).expect("weight requires grad");
            for n in 0..batch {
                let xb = &xv[n * in_len..(n + 1) * in_len];
                let src: &[T] = if geom.is_pointwise() {
                    xb
                } else {
                    im2col(xb, geom, &mut col);
                    &col
                };
                let gb = &g[n * out_ch * cols..(n + 1) * out_ch * cols];
                T::gemm(
                    out_ch,
                    cols,
                    rows,
                    T::one(),
                    gb,
                    cols as isize,
                    1,
                    src,
                    1,
                    cols as isize,
                    T::one(),
                    s,
                    rows as isize,
                    1,
                );
            }
        }

        if self.rg(x) {
            let mut dcol = vec![T::zero(); rows * cols];
            let s = self.slot(grads, x).expect("input requires grad");
            for n in 0..batch {
                let gb = &g[n * out_ch * cols..(n + 1) * out_ch * cols];
                let dx = &mut s[n * in_len..(n + 1) * in_len];
                if geom.is_pointwise() {
                    T::gemm(
                        rows,
                        out_ch,
                        cols,
                        T::one(),
                        wv,
                        1,
                        rows as isize,
                        gb,
                        cols as isize,
                        1,
                        T::one(),
                        dx,
                        cols as isize,
                        1,
                    );
                } else {
                    T::gemm(
                        rows,
                        out_ch,
                        cols,
                        T::one(),
                        wv,
                        1,
                        rows as isize,
                        gb,
                        cols as isize,
                        1,
                        T::zero(),
                        &mut dcol,
                        cols as isize,
                        1,
                    );
                    col2im_add(&dcol, geom, dx);
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

/// Interpolation indices along one axis for a normalized coordinate.
fn axis_tap<T: Scalar>(mu: T, size: usize) -> (usize, usize, T, T) {
    if size == 1 {
        return (0, 0, T::zero(), T::zero());
    }
    let one = T::one();
    let inside = mu >= -one && mu <= one;
    let m = mu.max(-one).min(one);
    let half_span = T::of((size - 1) as f64 / 2.0);
    let p = (m + one) * half_span;
    let mut i0 = p.floor().to_usize().unwrap_or(0);
    if i0 >= size - 1 {
        i0 = size - 2;
    }
    let f = p - T::of(i0 as f64);
    let d = if inside { half_span } else { T::zero() };
    (i0, i0 + 1, f, d)
}

fn sample<T: Scalar>(plane: &[T], w: usize, t: &SampleTap<T>) -> T {
    let one = T::one();
    plane[t.y0 * w + t.x0] * (one - t.fx) * (one - t.fy)
        + plane[t.y0 * w + t.x1] * t.fx * (one - t.fy)
        + plane[t.y1 * w + t.x0] * (one - t.fx) * t.fy
        + plane[t.y1 * w + t.x1] * t.fx * t.fy
}
