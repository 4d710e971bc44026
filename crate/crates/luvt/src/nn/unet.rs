//! Small U-shaped convolutional denoiser with sinusoidal time embeddings.
//!
//! Three resolutions with a double-conv block per level, average-pool
//! downsampling, nearest-neighbour upsampling and channel-concat skip
//! connections. The time embedding enters each block through a learned
//! affine projection added per channel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::params::{BoundParams, ParamSet};
use crate::nn::tape::{conv2d_fwd, Tape, VarId};
use crate::nn::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub widths: [usize; 3],
    pub time_embed_dim: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig { in_channels: 1, widths: [32, 64, 128], time_embed_dim: 32 }
    }
}

impl UNetConfig {
    pub fn desk() -> Self {
        UNetConfig { in_channels: 1, widths: [12, 24, 48], time_embed_dim: 32 }
    }
}

/// Named parameter table for the denoiser plus its architecture descriptor.
#[derive(Clone)]
pub struct DenoiserParams<F: Scalar> {
    pub config: UNetConfig,
    pub params: ParamSet<F>,
}

fn conv_init<F: Scalar>(
    params: &mut ParamSet<F>,
    name: &str,
    co: usize,
    ci: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) {
    let std = (2.0 / (ci * k * k) as f64).sqrt();
    params.insert(format!("{name}.w"), Tensor::randn(Shape::d4(co, ci, k, k), std, rng));
    params.insert(format!("{name}.b"), Tensor::zeros(Shape::d1(co)));
}

fn linear_init<F: Scalar>(
    params: &mut ParamSet<F>,
    name: &str,
    fout: usize,
    fin: usize,
    rng: &mut ChaCha8Rng,
) {
    let std = (1.0 / fin as f64).sqrt();
    params.insert(format!("{name}.w"), Tensor::randn(Shape::d2(fout, fin), std, rng));
    params.insert(format!("{name}.b"), Tensor::zeros(Shape::d1(fout)));
}

fn norm_init<F: Scalar>(params: &mut ParamSet<F>, name: &str, c: usize) {
    params.insert(format!("{name}.g"), Tensor::full(Shape::d1(c), F::one()));
    params.insert(format!("{name}.s"), Tensor::zeros(Shape::d1(c)));
}

fn block_init<F: Scalar>(
    params: &mut ParamSet<F>,
    name: &str,
    ci: usize,
    co: usize,
    emb: usize,
    rng: &mut ChaCha8Rng,
) {
    conv_init(params, &format!("{name}.conv1"), co, ci, 3, rng);
    norm_init(params, &format!("{name}.norm1"), co);
    linear_init(params, &format!("{name}.temb"), co, emb, rng);
    conv_init(params, &format!("{name}.conv2"), co, co, 3, rng);
    norm_init(params, &format!("{name}.norm2"), co);
}

impl<F: Scalar> DenoiserParams<F> {
    pub fn init(config: UNetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w0, w1, w2] = config.widths;
        let e = config.time_embed_dim;
        let mut params = ParamSet::new();
        linear_init(&mut params, "temb.proj", e, e, &mut rng);
        block_init(&mut params, "enc0", config.in_channels, w0, e, &mut rng);
        block_init(&mut params, "enc1", w0, w1, e, &mut rng);
        block_init(&mut params, "mid", w1, w2, e, &mut rng);
        block_init(&mut params, "dec1", w2 + w1, w1, e, &mut rng);
        block_init(&mut params, "dec0", w1 + w0, w0, e, &mut rng);
        // Zero-initialized head: the untrained model predicts zero noise.
        params.insert(
            "out.w",
            Tensor::zeros(Shape::d4(config.in_channels, w0, 3, 3)),
        );
        params.insert("out.b", Tensor::zeros(Shape::d1(config.in_channels)));
        DenoiserParams { config, params }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.num_scalars()
    }
}

/// Sinusoidal embedding of integer timesteps, shape (n, dim).
pub fn time_embedding<F: Scalar>(t: &[usize], dim: usize) -> Tensor<F> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / (half.max(2) - 1) as f64).exp();
            data.push(F::fl(((ti as f64) * freq).sin()));
        }
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / (half.max(2) - 1) as f64).exp();
            data.push(F::fl(((ti as f64) * freq).cos()));
        }
    }
    Tensor::from_vec(Shape::d2(t.len(), dim), data)
}

fn block_forward<F: Scalar>(
    tape: &mut Tape<F>,
    bp: &BoundParams,
    name: &str,
    x: VarId,
    temb: VarId,
) -> VarId {
    let h = tape.conv2d(x, bp.var(&format!("{name}.conv1.w")), bp.var(&format!("{name}.conv1.b")), 1);
    let h = tape.instance_norm(h, bp.var(&format!("{name}.norm1.g")), bp.var(&format!("{name}.norm1.s")));
    let h = tape.silu(h);
    let tv = tape.linear(temb, bp.var(&format!("{name}.temb.w")), bp.var(&format!("{name}.temb.b")));
    let h = tape.add_chan_vec(h, tv);
    let h = tape.conv2d(h, bp.var(&format!("{name}.conv2.w")), bp.var(&format!("{name}.conv2.b")), 1);
    let h = tape.instance_norm(h, bp.var(&format!("{name}.norm2.g")), bp.var(&format!("{name}.norm2.s")));
    tape.silu(h)
}

/// Graph-building forward pass: predicted noise with the shape of `x`.
/// `t` holds one timestep per batch sample.
pub fn forward_graph<F: Scalar>(
    config: &UNetConfig,
    tape: &mut Tape<F>,
    bp: &BoundParams,
    x: VarId,
    t: &[usize],
) -> Result<VarId> {
    let sx = tape.shape(x);
    if sx.rank() != 4 || sx.dim(1) != config.in_channels {
        return Err(Error::ShapeMismatch {
            context: "denoiser input".into(),
            expected: format!("rank-4 with {} channels", config.in_channels),
            actual: format!("{sx:?}"),
        });
    }
    if sx.dim(0) != t.len() {
        return Err(Error::ShapeMismatch {
            context: "denoiser timesteps".into(),
            expected: format!("{} timesteps", sx.dim(0)),
            actual: format!("{}", t.len()),
        });
    }
    if sx.dim(2) % 4 != 0 || sx.dim(3) % 4 != 0 {
        return Err(Error::ShapeMismatch {
            context: "denoiser input".into(),
            expected: "spatial dims divisible by 4".into(),
            actual: format!("{sx:?}"),
        });
    }
    let temb_raw = tape.leaf(time_embedding(t, config.time_embed_dim));
    let temb = tape.linear(temb_raw, bp.var("temb.proj.w"), bp.var("temb.proj.b"));
    let temb = tape.silu(temb);

    let e0 = block_forward(tape, bp, "enc0", x, temb);
    let p0 = tape.avg_pool2(e0);
    let e1 = block_forward(tape, bp, "enc1", p0, temb);
    let p1 = tape.avg_pool2(e1);
    let m = block_forward(tape, bp, "mid", p1, temb);
    let u1 = tape.upsample2(m);
    let c1 = tape.concat_c(u1, e1);
    let d1 = block_forward(tape, bp, "dec1", c1, temb);
    let u0 = tape.upsample2(d1);
    let c0 = tape.concat_c(u0, e0);
    let d0 = block_forward(tape, bp, "dec0", c0, temb);
    Ok(tape.conv2d(d0, bp.var("out.w"), bp.var("out.b"), 1))
}

/// Inference forward pass without a tape (no gradient bookkeeping).
/// Produces the same values as [`forward_graph`].
pub fn forward_infer<F: Scalar>(
    model: &DenoiserParams<F>,
    x: &Tensor<F>,
    t: &[usize],
) -> Result<Tensor<F>> {
    let p = &model.params;
    let get = |name: &str| p.get(name).expect("unet parameter");
    let sx = x.shape();
    if sx.rank() != 4 || sx.dim(1) != model.config.in_channels || sx.dim(0) != t.len() {
        return Err(Error::ShapeMismatch {
            context: "denoiser input".into(),
            expected: format!("rank-4, {} channels, {} samples", model.config.in_channels, t.len()),
            actual: format!("{sx:?}"),
        });
    }

    let temb_raw = time_embedding::<F>(t, model.config.time_embed_dim);
    let temb = silu_t(&linear_t(&temb_raw, get("temb.proj.w"), get("temb.proj.b")));
    let block = |name: &str, x: &Tensor<F>| -> Tensor<F> {
        let h = conv2d_fwd(x, get(&format!("{name}.conv1.w")), get(&format!("{name}.conv1.b")), 1);
        let h = inorm_t(&h, get(&format!("{name}.norm1.g")), get(&format!("{name}.norm1.s")));
        let h = silu_t(&h);
        let tv = linear_t(&temb, get(&format!("{name}.temb.w")), get(&format!("{name}.temb.b")));
        let h = add_chan_vec_t(&h, &tv);
        let h = conv2d_fwd(&h, get(&format!("{name}.conv2.w")), get(&format!("{name}.conv2.b")), 1);
        let h = inorm_t(&h, get(&format!("{name}.norm2.g")), get(&format!("{name}.norm2.s")));
        silu_t(&h)
    };

    let e0 = block("enc0", x);
    let p0 = pool2_t(&e0);
    let e1 = block("enc1", &p0);
    let p1 = pool2_t(&e1);
    let m = block("mid", &p1);
    let c1 = concat_c_t(&upsample2_t(&m), &e1);
    let d1 = block("dec1", &c1);
    let c0 = concat_c_t(&upsample2_t(&d1), &e0);
    let d0 = block("dec0", &c0);
    Ok(conv2d_fwd(&d0, get("out.w"), get("out.b"), 1))
}

// ---- plain tensor helpers for the inference path ----

pub(crate) fn silu_t<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let one = F::one();
    x.map(|v| v / (one + (-v).exp()))
}

pub(crate) fn sigmoid_t<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let one = F::one();
    x.map(|v| one / (one + (-v).exp()))
}

pub(crate) fn linear_t<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (n, fin) = (x.shape().dim(0), x.shape().dim(1));
    let fout = w.shape().dim(0);
    assert_eq!(w.shape().dim(1), fin);
    let mut out = vec![F::zero(); n * fout];
    for i in 0..n {
        let xrow = &x.data()[i * fin..(i + 1) * fin];
        for o in 0..fout {
            let wrow = &w.data()[o * fin..(o + 1) * fin];
            let mut s = b.data()[o];
            for (xv, wv) in xrow.iter().zip(wrow) {
                s = s + *xv * *wv;
            }
            out[i * fout + o] = s;
        }
    }
    Tensor::from_vec(Shape::d2(n, fout), out)
}

pub(crate) fn inorm_t<F: Scalar>(x: &Tensor<F>, gamma: &Tensor<F>, beta: &Tensor<F>) -> Tensor<F> {
    let s = x.shape();
    let (n, c, h, w) = (s.dim(0), s.dim(1), s.dim(2), s.dim(3));
    let m = h * w;
    let inv_m = F::fl(1.0 / m as f64);
    let eps = F::fl(1e-5);
    let mut out = vec![F::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let nc = i * c + ch;
            let src = &x.data()[nc * m..(nc + 1) * m];
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
            let istd = F::one() / (var + eps).sqrt();
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            for (k, &v) in src.iter().enumerate() {
                out[nc * m + k] = g * (v - mu) * istd + b;
            }
        }
    }
    Tensor::from_vec(s, out)
}

pub(crate) fn add_chan_vec_t<F: Scalar>(x: &Tensor<F>, v: &Tensor<F>) -> Tensor<F> {
    let s = x.shape();
    let (n, c, h, w) = (s.dim(0), s.dim(1), s.dim(2), s.dim(3));
    let hw = h * w;
    let mut out = x.data().to_vec();
    for i in 0..n {
        for ch in 0..c {
            let b = v.data()[i * c + ch];
            for p in &mut out[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                *p = *p + b;
            }
        }
    }
    Tensor::from_vec(s, out)
}

pub(crate) fn pool2_t<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let s = x.shape();
    let (n, c, h, w) = (s.dim(0), s.dim(1), s.dim(2), s.dim(3));
    let (ho, wo) = (h / 2, w / 2);
    let quarter = F::fl(0.25);
    let mut out = vec![F::zero(); n * c * ho * wo];
    for nc in 0..n * c {
        let src = &x.data()[nc * h * w..(nc + 1) * h * w];
        let dst = &mut out[nc * ho * wo..(nc + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                let p = 2 * i * w + 2 * j;
                dst[i * wo + j] = (src[p] + src[p + 1] + src[p + w] + src[p + w + 1]) * quarter;
            }
        }
    }
    Tensor::from_vec(Shape::d4(n, c, ho, wo), out)
}

pub(crate) fn upsample2_t<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let s = x.shape();
    let (n, c, h, w) = (s.dim(0), s.dim(1), s.dim(2), s.dim(3));
    let (ho, wo) = (h * 2, w * 2);
    let mut out = vec![F::zero(); n * c * ho * wo];
    for nc in 0..n * c {
        let src = &x.data()[nc * h * w..(nc + 1) * h * w];
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
    Tensor::from_vec(Shape::d4(n, c, ho, wo), out)
}

pub(crate) fn concat_c_t<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (sa, sb) = (a.shape(), b.shape());
    let (n, ca, h, w) = (sa.dim(0), sa.dim(1), sa.dim(2), sa.dim(3));
    let cb = sb.dim(1);
    let hw = h * w;
    let mut out = Vec::with_capacity(n * (ca + cb) * hw);
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * ca * hw..(i + 1) * ca * hw]);
        out.extend_from_slice(&b.data()[i * cb * hw..(i + 1) * cb * hw]);
    }
    Tensor::from_vec(Shape::d4(n, ca + cb, h, w), out)
}
