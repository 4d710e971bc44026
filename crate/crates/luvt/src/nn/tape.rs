//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Nodes are appended in forward order, so the tape index order is already
//! a topological order and backward is a single reverse sweep. Backward
//! closures receive the upstream gradient plus the recorded output/input
//! values and return one gradient per parent slot; repeated parents are
//! handled by accumulation.

use crate::error::{Error, Result};
use crate::nn::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VarId(pub(crate) usize);

pub struct BackCtx<'a, F: Scalar> {
    pub grad: &'a Tensor<F>,
    pub out: &'a Tensor<F>,
    pub inputs: Vec<&'a Tensor<F>>,
}

type BackFn<F> = Box<dyn Fn(&BackCtx<'_, F>) -> Vec<Tensor<F>>>;

struct Node<F: Scalar> {
    value: Tensor<F>,
    parents: Vec<VarId>,
    back: Option<BackFn<F>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`VarId`].
pub struct Grads<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Grads<F> {
    pub fn get(&self, id: VarId) -> Option<&Tensor<F>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of a leaf, or zeros when the leaf did not participate.
    pub fn get_or_zeros(&self, id: VarId, shape: Shape) -> Tensor<F> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: VarId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: VarId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    /// Insert a leaf (input or parameter) node.
    pub fn leaf(&mut self, value: Tensor<F>) -> VarId {
        self.push(value, vec![], None)
    }

    fn push(&mut self, value: Tensor<F>, parents: Vec<VarId>, back: Option<BackFn<F>>) -> VarId {
        debug_assert!(value.all_finite(), "non-finite tensor on tape");
        let id = VarId(self.nodes.len());
        self.nodes.push(Node { value, parents, back });
        id
    }

    /// Reverse sweep from a scalar loss node. Fails on an empty tape or a
    /// non-scalar seed (forward pass not recorded / wrong loss shape).
    pub fn backward(&self, loss: VarId) -> Result<Grads<F>> {
        if self.nodes.is_empty() {
            return Err(Error::usage("backward called before any forward pass"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), F::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(back) = &node.back else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let ctx = BackCtx {
                grad: &grad,
                out: &node.value,
                inputs: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
            };
            let parent_grads = back(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, g) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(g.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            grads[i] = Some(grad);
        }
        Ok(Grads { grads })
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::from_vec(va.shape(), data);
        self.push(
            value,
            vec![a, b],
            Some(Box::new(|ctx| vec![ctx.grad.clone(), ctx.grad.clone()])),
        )
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let value = Tensor::from_vec(va.shape(), data);
        self.push(
            value,
            vec![a, b],
            Some(Box::new(|ctx| vec![ctx.grad.clone(), ctx.grad.map(|g| -g)])),
        )
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::from_vec(va.shape(), data);
        self.push(
            value,
            vec![a, b],
            Some(Box::new(|ctx| {
                let (xa, xb) = (ctx.inputs[0], ctx.inputs[1]);
                let da = ctx
                    .grad
                    .data()
                    .iter()
                    .zip(xb.data())
                    .map(|(&g, &y)| g * y)
                    .collect();
                let db = ctx
                    .grad
                    .data()
                    .iter()
                    .zip(xa.data())
                    .map(|(&g, &x)| g * x)
                    .collect();
                vec![
                    Tensor::from_vec(xa.shape(), da),
                    Tensor::from_vec(xb.shape(), db),
                ]
            })),
        )
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let cf = F::fl(c);
        let value = self.value(a).map(|x| x * cf);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |ctx| vec![ctx.grad.map(|g| g * cf)])),
        )
    }

    pub fn add_scalar(&mut self, a: VarId, c: f64) -> VarId {
        let cf = F::fl(c);
        let value = self.value(a).map(|x| x + cf);
        self.push(value, vec![a], Some(Box::new(|ctx| vec![ctx.grad.clone()])))
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        let value = self.value(a).map(|x| x.exp());
        self.push(
            value,
            vec![a],
            Some(Box::new(|ctx| {
                let d = ctx
                    .grad
                    .data()
                    .iter()
                    .zip(ctx.out.data())
                    .map(|(&g, &y)| g * y)
                    .collect();
                vec![Tensor::from_vec(ctx.out.shape(), d)]
            })),
        )
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let one = F::one();
        let value = self.value(a).map(|x| one / (one + (-x).exp()));
        self.push(
            value,
            vec![a],
            Some(Box::new(move |ctx| {
                let d = ctx
                    .grad
                    .data()
                    .iter()
                    .zip(ctx.out.data())
                    .map(|(&g, &s)| g * s * (one - s))
                    .collect();
                vec![Tensor::from_vec(ctx.out.shape(), d)]
            })),
        )
    }

    /// Elementwise clamp to [lo, hi]; gradient is zero outside the range.
    pub fn clamp(&mut self, a: VarId, lo: f64, hi: f64) -> VarId {
        let (lo, hi) = (F::fl(lo), F::fl(hi));
        let value = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(
            value,
            vec![a],
            Some(Box::new(move |ctx| {
                let x = ctx.inputs[0];
                let d = ctx
                    .grad
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &x)| if x > lo && x < hi { g } else { F::zero() })
                    .collect();
                vec![Tensor::from_vec(x.shape(), d)]
            })),
        )
    }

    /// Sigmoid-weighted linear unit, x * sigmoid(x).
    pub fn silu(&mut self, a: VarId) -> VarId {
        let one = F::one();
        let value = self.value(a).map(|x| x / (one + (-x).exp()));
        self.push(
            value,
            vec![a],
            Some(Box::new(move |ctx| {
                let x = ctx.inputs[0];
                let d = ctx
                    .grad
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &x)| {
                        let s = one / (one + (-x).exp());
                        g * (s + x * s * (one - s))
                    })
                    .collect();
                vec![Tensor::from_vec(x.shape(), d)]
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let s = self.value(a).data().iter().fold(F::zero(), |acc, &x| acc + x);
        self.push(
            Tensor::scalar(s),
            vec![a],
            Some(Box::new(|ctx| {
                let g = ctx.grad.item();
                vec![Tensor::full(ctx.inputs[0].shape(), g)]
            })),
        )
    }

    pub fn mean_all(&mut self, a: VarId) -> VarId {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mse: shape mismatch");
        let n = va.len();
        let inv_n = F::fl(1.0 / n as f64);
        let mut s = F::zero();
        for (&x, &y) in va.data().iter().zip(vb.data()) {
            let d = x - y;
            s = s + d * d;
        }
        self.push(
            Tensor::scalar(s * inv_n),
            vec![a, b],
            Some(Box::new(move |ctx| {
                let g = ctx.grad.item() * inv_n * F::fl(2.0);
                let (xa, xb) = (ctx.inputs[0], ctx.inputs[1]);
                let da: Vec<F> = xa
                    .data()
                    .iter()
                    .zip(xb.data())
                    .map(|(&x, &y)| g * (x - y))
                    .collect();
                let db = da.iter().map(|&d| -d).collect();
                vec![
                    Tensor::from_vec(xa.shape(), da),
                    Tensor::from_vec(xb.shape(), db),
                ]
            })),
        )
    }

    // ---- shape ops ----

    pub fn reshape(&mut self, a: VarId, shape: Shape) -> VarId {
        let value = self.value(a).reshaped(shape);
        self.push(
            value,
            vec![a],
            Some(Box::new(|ctx| {
                vec![ctx.grad.reshaped(ctx.inputs[0].shape())]
            })),
        )
    }

    /// Concatenate two rank-4 tensors along the channel axis.
    pub fn concat_c(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        assert_eq!(sa.rank(), 4);
        assert_eq!(sb.rank(), 4);
        let (n, ca, h, w) = (sa.dim(0), sa.dim(1), sa.dim(2), sa.dim(3));
        let cb = sb.dim(1);
        assert_eq!((n, h, w), (sb.dim(0), sb.dim(2), sb.dim(3)), "concat_c: spatial mismatch");
        let hw = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            out.extend_from_slice(&va.data()[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&vb.data()[i * cb * hw..(i + 1) * cb * hw]);
        }
        let value = Tensor::from_vec(Shape::d4(n, ca + cb, h, w), out);
        self.push(
            value,
            vec![a, b],
            Some(Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut da = Vec::with_capacity(n * ca * hw);
                let mut db = Vec::with_capacity(n * cb * hw);
                let stride = (ca + cb) * hw;
                for i in 0..n {
                    da.extend_from_slice(&g[i * stride..i * stride + ca * hw]);
                    db.extend_from_slice(&g[i * stride + ca * hw..(i + 1) * stride]);
                }
                vec![
                    Tensor::from_vec(Shape::d4(n, ca, h, w), da),
                    Tensor::from_vec(Shape::d4(n, cb, h, w), db),
                ]
            })),
        )
    }

    /// Add a per-sample, per-channel vector (n, c) to every spatial position
    /// of a rank-4 tensor.
    pub fn add_chan_vec(&mut self, x: VarId, v: VarId) -> VarId {
        let (vx, vv) = (self.value(x), self.value(v));
        let sx = vx.shape();
        let (n, c, h, w) = (sx.dim(0), sx.dim(1), sx.dim(2), sx.dim(3));
        assert_eq!(vv.shape(), Shape::d2(n, c), "add_chan_vec: vector shape mismatch");
        let hw = h * w;
        let mut out = vx.data().to_vec();
        for i in 0..n {
            for ch in 0..c {
                let b = vv.data()[i * c + ch];
                for p in &mut out[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                    *p = *p + b;
                }
            }
        }
        let value = Tensor::from_vec(sx, out);
        self.push(
            value,
            vec![x, v],
            Some(Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut dv = vec![F::zero(); n * c];
                for i in 0..n {
                    for ch in 0..c {
                        let mut s = F::zero();
                        for &gv in &g[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                            s = s + gv;
                        }
                        dv[i * c + ch] = s;
                    }
                }
                vec![ctx.grad.clone(), Tensor::from_vec(Shape::d2(n, c), dv)]
            })),
        )
    }

    // ---- layers ----

    /// Fully connected layer: x (n, f_in), w (f_out, f_in), b (f_out).
    pub fn linear(&mut self, x: VarId, w: VarId, b: VarId) -> VarId {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (n, fin) = (vx.shape().dim(0), vx.shape().dim(1));
        let (fout, fin_w) = (vw.shape().dim(0), vw.shape().dim(1));
        assert_eq!(fin, fin_w, "linear: feature dim mismatch");
        assert_eq!(vb.len(), fout, "linear: bias dim mismatch");
        let mut out = vec![F::zero(); n * fout];
        for i in 0..n {
            let xrow = &vx.data()[i * fin..(i + 1) * fin];
            for o in 0..fout {
                let wrow = &vw.data()[o * fin..(o + 1) * fin];
                let mut s = vb.data()[o];
                for (xv, wv) in xrow.iter().zip(wrow) {
                    s = s + *xv * *wv;
                }
                out[i * fout + o] = s;
            }
        }
        let value = Tensor::from_vec(Shape::d2(n, fout), out);
        self.push(
            value,
            vec![x, w, b],
            Some(Box::new(move |ctx| {
                let g = ctx.grad.data();
                let (vx, vw) = (ctx.inputs[0], ctx.inputs[1]);
                let mut dx = vec![F::zero(); n * fin];
                let mut dw = vec![F::zero(); fout * fin];
                let mut db = vec![F::zero(); fout];
                for i in 0..n {
                    let xrow = &vx.data()[i * fin..(i + 1) * fin];
                    for o in 0..fout {
                        let gv = g[i * fout + o];
                        if gv == F::zero() {
                            continue;
                        }
                        db[o] = db[o] + gv;
                        let wrow = &vw.data()[o * fin..(o + 1) * fin];
                        let dxrow = &mut dx[i * fin..(i + 1) * fin];
                        for f in 0..fin {
                            dxrow[f] = dxrow[f] + gv * wrow[f];
                        }
                        let dwrow = &mut dw[o * fin..(o + 1) * fin];
                        for f in 0..fin {
                            dwrow[f] = dwrow[f] + gv * xrow[f];
                        }
                    }
                }
                vec![
                    Tensor::from_vec(Shape::d2(n, fin), dx),
                    Tensor::from_vec(Shape::d2(fout, fin), dw),
                    Tensor::from_vec(Shape::d1(fout), db),
                ]
            })),
        )
    }

    /// 2-D convolution, stride 1, zero padding `pad`. x (n, ci, h, w),
    /// w (co, ci, kh, kw), b (co).
    pub fn conv2d(&mut self, x: VarId, w: VarId, b: VarId, pad: usize) -> VarId {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let value = conv2d_fwd(vx, vw, vb, pad);
        self.push(
            value,
            vec![x, w, b],
            Some(Box::new(move |ctx| {
                let (vx, vw) = (ctx.inputs[0], ctx.inputs[1]);
                let (dx, dw, db) = conv2d_bwd(vx, vw, ctx.grad, pad);
                vec![dx, dw, db]
            })),
        )
    }

    /// 2x2 average pooling, stride 2. Requires even spatial dims.
    pub fn avg_pool2(&mut self, x: VarId) -> VarId {
        let vx = self.value(x);
        let s = vx.shape();
        let (n, c, h, w) = (s.dim(0), s.dim(1), s.dim(2), s.dim(3));
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims");
        let (ho, wo) = (h / 2, w / 2);
        let quarter = F::fl(0.25);
        let mut out = vec![F::zero(); n * c * ho * wo];
        for nc in 0..n * c {
            let src = &vx.data()[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * ho * wo..(nc + 1) * ho * wo];
            for i in 0..ho {
                for j in 0..wo {
                    let p = 2 * i * w + 2 * j;
                    dst[i * wo + j] =
                        (src[p] + src[p + 1] + src[p + w] + src[p + w + 1]) * quarter;
                }
            }
        }
        let value = Tensor::from_vec(Shape::d4(n, c, ho, wo), out);
        self.push(
            value,
            vec![x],
            Some(Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut dx = vec![F::zero(); n * c * h * w];
                for nc in 0..n * c {
                    let gsrc = &g[nc * ho * wo..(nc + 1) * ho * wo];
                    let dst = &mut dx[nc * h * w..(nc + 1) * h * w];
                    for i in 0..ho {
                        for j in 0..wo {
                            let gv = gsrc[i * wo + j] * quarter;
                            let p = 2 * i * w + 2 * j;
                            dst[p] = dst[p] + gv;
                            dst[p + 1] = dst[p + 1] + gv;
                            dst[p + w] = dst[p + w] + gv;
                            dst[p + w + 1] = dst[p + w + 1] + gv;
                        }
                    }
                }
                vec![Tensor::from_vec(Shape::d4(n, c, h, w), dx)]
            })),
        )
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: VarId) -> VarId {
        let vx = self.value(x);
        let s = vx.shape();
        let (n, c, h, w) = (s.dim(0), s.dim(1), s.dim(2), s.dim(3));
        let (ho, wo) = (h * 2, w * 2);
        let mut out = vec![F::zero(); n * c * ho * wo];
        for nc in 0..n * c {
            let src = &vx.data()[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * ho * wo..(nc + 1) * ho * wo];
            for i in 0..h {
                for j in 0..w {
                    let v = src[i * w + j];
                    let p = 2 * i * wo + 2 * j;
                    dst[p] = v;
                    dst[p + 1] = v;
                    dst[p + wo] = v;
                    dst[p + wo + 1] = v;
                }
            }
        }
        let value = Tensor::from_vec(Shape::d4(n, c, ho, wo), out);
        self.push(
            value,
            vec![x],
            Some(Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut dx = vec![F::zero(); n * c * h * w];
                for nc in 0..n * c {
                    let gsrc = &g[nc * ho * wo..(nc + 1) * ho * wo];
                    let dst = &mut dx[nc * h * w..(nc + 1) * h * w];
                    for i in 0..h {
                        for j in 0..w {
                            let p = 2 * i * wo + 2 * j;
                            dst[i * w + j] = gsrc[p] + gsrc[p + 1] + gsrc[p + wo] + gsrc[p + wo + 1];
                        }
                    }
                }
                vec![Tensor::from_vec(Shape::d4(n, c, h, w), dx)]
            })),
        )
    }

    /// Per-sample, per-channel normalization over the spatial axes with a
    /// learned scale and shift (no batch statistics, so inference does not
    /// depend on batch composition). gamma, beta have shape (c).
    pub fn instance_norm(&mut self, x: VarId, gamma: VarId, beta: VarId) -> VarId {
        let eps = 1e-5;
        let (vx, vg, vbt) = (self.value(x), self.value(gamma), self.value(beta));
        let s = vx.shape();
        let (n, c, h, w) = (s.dim(0), s.dim(1), s.dim(2), s.dim(3));
        assert_eq!(vg.len(), c, "instance_norm: gamma dim mismatch");
        assert_eq!(vbt.len(), c, "instance_norm: beta dim mismatch");
        let m = h * w;
        let inv_m = F::fl(1.0 / m as f64);
        let epsf = F::fl(eps);
        let mut out = vec![F::zero(); vx.len()];
        let mut xhat = vec![F::zero(); vx.len()];
        let mut inv_std = vec![F::zero(); n * c];
        for i in 0..n {
            for ch in 0..c {
                let nc = i * c + ch;
                let src = &vx.data()[nc * m..(nc + 1) * m];
                let mut mu = F::zero();
                for &v in src {
                    mu = mu + v;
                }
                mu = mu * inv_m;
                let mut var = F::zero();
                for &v in src {
                    let d = v - mu;
                    var = var + d * d;
                }
                var = var * inv_m;
                let istd = F::one() / (var + epsf).sqrt();
                inv_std[nc] = istd;
                let (g, b) = (vg.data()[ch], vbt.data()[ch]);
                for (k, &v) in src.iter().enumerate() {
                    let xh = (v - mu) * istd;
                    xhat[nc * m + k] = xh;
                    out[nc * m + k] = g * xh + b;
                }
            }
        }
        let value = Tensor::from_vec(s, out);
        self.push(
            value,
            vec![x, gamma, beta],
            Some(Box::new(move |ctx| {
                let g = ctx.grad.data();
                let vg = ctx.inputs[1];
                let mut dx = vec![F::zero(); n * c * m];
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let nc = i * c + ch;
                        let gslice = &g[nc * m..(nc + 1) * m];
                        let xh = &xhat[nc * m..(nc + 1) * m];
                        let mut sum_g = F::zero();
                        let mut sum_gxh = F::zero();
                        for (&gv, &xv) in gslice.iter().zip(xh) {
                            sum_g = sum_g + gv;
                            sum_gxh = sum_gxh + gv * xv;
                        }
                        dgamma[ch] = dgamma[ch] + sum_gxh;
                        dbeta[ch] = dbeta[ch] + sum_g;
                        let scale = vg.data()[ch] * inv_std[nc];
                        let mean_g = sum_g * inv_m;
                        let mean_gxh = sum_gxh * inv_m;
                        let dslice = &mut dx[nc * m..(nc + 1) * m];
                        for k in 0..m {
                            dslice[k] = scale * (gslice[k] - mean_g - xh[k] * mean_gxh);
                        }
                    }
                }
                vec![
                    Tensor::from_vec(Shape::d4(n, c, h, w), dx),
                    Tensor::from_vec(Shape::d1(c), dgamma),
                    Tensor::from_vec(Shape::d1(c), dbeta),
                ]
            })),
        )
    }
}

// ---- convolution kernels (shared by forward and backward) ----

fn im2col<F: Scalar>(
    x: &[F],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    col: &mut [F],
) {
    // col is (ci*kh*kw) x (ho*wo), stride-1 convolution.
    let ho = h + 2 * pad - kh + 1;
    let wo = w + 2 * pad - kw + 1;
    let mut row = 0;
    for c in 0..ci {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for di in 0..kh {
            for dj in 0..kw {
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for i in 0..ho {
                    let si = (i + di) as isize - pad as isize;
                    if si < 0 || si >= h as isize {
                        for v in &mut dst[i * wo..(i + 1) * wo] {
                            *v = F::zero();
                        }
                        continue;
                    }
                    let src_row = &plane[si as usize * w..(si as usize + 1) * w];
                    for j in 0..wo {
                        let sj = (j + dj) as isize - pad as isize;
                        dst[i * wo + j] = if sj < 0 || sj >= w as isize {
                            F::zero()
                        } else {
                            src_row[sj as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<F: Scalar>(
    col: &[F],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    x: &mut [F],
) {
    let ho = h + 2 * pad - kh + 1;
    let wo = w + 2 * pad - kw + 1;
    let mut row = 0;
    for c in 0..ci {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for di in 0..kh {
            for dj in 0..kw {
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for i in 0..ho {
                    let si = (i + di) as isize - pad as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[si as usize * w..(si as usize + 1) * w];
                    for j in 0..wo {
                        let sj = (j + dj) as isize - pad as isize;
                        if sj >= 0 && sj < w as isize {
                            dst_row[sj as usize] = dst_row[sj as usize] + src[i * wo + j];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// out(m, n) += a(m, k) * b(k, n)
fn matmul_acc<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// out(m, k) += a(m, n) * b(k, n)^T
fn matmul_bt_acc<F: Scalar>(a: &[F], b: &[F], m: usize, n: usize, k: usize, out: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut s = F::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                s = s + av * bv;
            }
            orow[j] = orow[j] + s;
        }
    }
}

/// out(k, n) += a(m, k)^T * b(m, n)
fn matmul_at_acc<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for p in 0..m {
        let arow = &a[p * k..(p + 1) * k];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

pub(crate) fn conv2d_fwd<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    b: &Tensor<F>,
    pad: usize,
) -> Tensor<F> {
    let (sx, sw) = (x.shape(), w.shape());
    let (n, ci, h, wd) = (sx.dim(0), sx.dim(1), sx.dim(2), sx.dim(3));
    let (co, ci_w, kh, kw) = (sw.dim(0), sw.dim(1), sw.dim(2), sw.dim(3));
    assert_eq!(ci, ci_w, "conv2d: channel mismatch");
    assert_eq!(b.len(), co, "conv2d: bias mismatch");
    let ho = h + 2 * pad - kh + 1;
    let wo = wd + 2 * pad - kw + 1;
    let krows = ci * kh * kw;
    let mut col = vec![F::zero(); krows * ho * wo];
    let mut out = vec![F::zero(); n * co * ho * wo];
    for i in 0..n {
        im2col(&x.data()[i * ci * h * wd..], ci, h, wd, kh, kw, pad, &mut col);
        let dst = &mut out[i * co * ho * wo..(i + 1) * co * ho * wo];
        for (c, chunk) in dst.chunks_mut(ho * wo).enumerate() {
            let bias = b.data()[c];
            for v in chunk.iter_mut() {
                *v = bias;
            }
        }
        matmul_acc(w.data(), &col, co, krows, ho * wo, dst);
    }
    Tensor::from_vec(Shape::d4(n, co, ho, wo), out)
}

pub(crate) fn conv2d_bwd<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    grad: &Tensor<F>,
    pad: usize,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let (sx, sw) = (x.shape(), w.shape());
    let (n, ci, h, wd) = (sx.dim(0), sx.dim(1), sx.dim(2), sx.dim(3));
    let (co, _, kh, kw) = (sw.dim(0), sw.dim(1), sw.dim(2), sw.dim(3));
    let ho = h + 2 * pad - kh + 1;
    let wo = wd + 2 * pad - kw + 1;
    let krows = ci * kh * kw;
    let hw = ho * wo;

    let mut col = vec![F::zero(); krows * hw];
    let mut dcol = vec![F::zero(); krows * hw];
    let mut dx = vec![F::zero(); n * ci * h * wd];
    let mut dw = vec![F::zero(); co * krows];
    let mut db = vec![F::zero(); co];

    for i in 0..n {
        let g = &grad.data()[i * co * hw..(i + 1) * co * hw];
        for c in 0..co {
            let mut s = F::zero();
            for &gv in &g[c * hw..(c + 1) * hw] {
                s = s + gv;
            }
            db[c] = db[c] + s;
        }
        im2col(&x.data()[i * ci * h * wd..], ci, h, wd, kh, kw, pad, &mut col);
        // dW += g * col^T
        matmul_bt_acc(g, &col, co, hw, krows, &mut dw);
        // dcol = W^T * g
        for v in dcol.iter_mut() {
            *v = F::zero();
        }
        matmul_at_acc(w.data(), g, co, krows, hw, &mut dcol);
        col2im(&dcol, ci, h, wd, kh, kw, pad, &mut dx[i * ci * h * wd..(i + 1) * ci * h * wd]);
    }
    (
        Tensor::from_vec(Shape::d4(n, ci, h, wd), dx),
        Tensor::from_vec(sw, dw),
        Tensor::from_vec(Shape::d1(co), db),
    )
}
