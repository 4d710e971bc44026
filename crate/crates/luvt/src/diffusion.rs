//! Denoising diffusion: cosine noise schedule, simplex-noise corruption,
//! noise-prediction training loss, reverse sampling, and partial-diffusion
//! reconstruction.
//!
//! Images enter the model in the symmetric range [-1, 1]; rasters stored in
//! [0, 1] are mapped affinely on the way in and back on the way out.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, loss_history_digest, CheckpointMeta};
use crate::nn::optim::AdamW;
use crate::nn::params::BoundParams;
use crate::nn::tape::Tape;
use crate::nn::tensor::{randn_f64, Scalar, Shape, Tensor};
use crate::nn::unet::{forward_graph, forward_infer, DenoiserParams, UNetConfig};
use crate::raster::{ImageSequence, Label};

/// Cosine-schedule offset from the schedule's source work.
const COSINE_S: f64 = 0.008;
/// Upper clip for β_t.
const BETA_MAX: f64 = 0.999;

/// Forward-process constants β_t, α_t, ᾱ_t for t = 1..=T.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    t_max: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// ᾱ_t with the convention ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max {
            return Err(Error::config(format!(
                "timestep {t} outside schedule range 1..={}",
                self.t_max
            )));
        }
        Ok(())
    }
}

/// Cosine schedule: ᾱ_t = f(t)/f(0) with f(t) = cos²(((t/T + s)/(1 + s))·π/2),
/// s = 0.008; β_t = 1 − ᾱ_t/ᾱ_{t−1} clipped to ≤ 0.999.
pub fn cosine_schedule(t_max: usize) -> Result<NoiseSchedule> {
    if t_max == 0 {
        return Err(Error::config("noise schedule needs at least one step"));
    }
    let f = |t: f64| {
        let x = ((t / t_max as f64 + COSINE_S) / (1.0 + COSINE_S)) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0.0);
    let mut beta = Vec::with_capacity(t_max);
    let mut alpha = Vec::with_capacity(t_max);
    let mut alpha_bar = Vec::with_capacity(t_max);
    let mut prev_bar = 1.0;
    for t in 1..=t_max {
        let b = (1.0 - f(t as f64) / f0 / prev_bar).min(BETA_MAX);
        let a = 1.0 - b;
        beta.push(b);
        alpha.push(a);
        prev_bar *= a;
        alpha_bar.push(prev_bar);
    }
    Ok(NoiseSchedule { t_max, beta, alpha, alpha_bar })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    Simplex,
}

/// Multi-octave gradient-noise settings. Defaults (4 octaves, base frequency
/// 4 cycles per side, persistence 0.5) give structured low-frequency
/// corruption.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexNoiseConfig {
    pub octaves: usize,
    pub base_frequency: f64,
    pub persistence: f64,
    pub seed: u64,
}

impl Default for SimplexNoiseConfig {
    fn default() -> Self {
        SimplexNoiseConfig { octaves: 4, base_frequency: 4.0, persistence: 0.5, seed: 0 }
    }
}

impl SimplexNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.octaves == 0 {
            return Err(Error::config("simplex noise needs at least one octave"));
        }
        if !(self.persistence > 0.0 && self.persistence <= 1.0) {
            return Err(Error::config("simplex persistence must be in (0, 1]"));
        }
        if !(self.base_frequency > 0.0) {
            return Err(Error::config("simplex base frequency must be positive"));
        }
        Ok(())
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic unit gradient for a lattice corner.
fn lattice_gradient(seed: u64, octave: usize, ix: i64, iy: i64) -> (f64, f64) {
    let mut h = splitmix64(seed ^ 0x51ed_270b_a5f4_e2c1);
    h = splitmix64(h ^ octave as u64);
    h = splitmix64(h ^ ix as u64);
    h = splitmix64(h ^ iy as u64);
    let angle = (h >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
    (angle.cos(), angle.sin())
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// One octave of 2-D gradient noise at continuous position (x, y) in lattice
/// units; output bounded by ±1 after the √2 compensation.
fn gradient_noise_at(seed: u64, octave: usize, x: f64, y: f64) -> f64 {
    let (ix, iy) = (x.floor() as i64, y.floor() as i64);
    let (fx, fy) = (x - ix as f64, y - iy as f64);
    let dot = |cx: i64, cy: i64| {
        let (gx, gy) = lattice_gradient(seed, octave, ix + cx, iy + cy);
        gx * (fx - cx as f64) + gy * (fy - cy as f64)
    };
    let (ux, uy) = (fade(fx), fade(fy));
    let top = dot(0, 0) + ux * (dot(1, 0) - dot(0, 0));
    let bot = dot(0, 1) + ux * (dot(1, 1) - dot(0, 1));
    std::f64::consts::SQRT_2 * (top + uy * (bot - top))
}

/// Multi-octave gradient noise field, amplitude-normalized to [−1, 1] and
/// deterministic in the seed.
pub fn simplex_noise<F: Scalar>(h: usize, w: usize, config: &SimplexNoiseConfig) -> Result<Tensor<F>> {
    config.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::config("noise field dimensions must be positive"));
    }
    let side = h.max(w) as f64;
    let total_amp: f64 = (0..config.octaves).map(|o| config.persistence.powi(o as i32)).sum();
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let mut v = 0.0;
            let mut amp = 1.0;
            let mut freq = config.base_frequency;
            for o in 0..config.octaves {
                let x = (j as f64 + 0.5) / side * freq;
                let y = (i as f64 + 0.5) / side * freq;
                v += amp * gradient_noise_at(config.seed, o, x, y);
                amp *= config.persistence;
                freq *= 2.0;
            }
            data.push(F::fl((v / total_amp).clamp(-1.0, 1.0)));
        }
    }
    Ok(Tensor::from_vec(Shape::d4(1, 1, h, w), data))
}

/// Draws a batch of noise fields of shape (n, 1, h, w) with the requested
/// kind; simplex fields get independent per-sample seeds from `rng`.
pub fn draw_noise<F: Scalar>(
    n: usize,
    h: usize,
    w: usize,
    kind: NoiseKind,
    simplex: &SimplexNoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<F>> {
    match kind {
        NoiseKind::Gaussian => {
            let data = (0..n * h * w).map(|_| F::fl(randn_f64(rng))).collect();
            Ok(Tensor::from_vec(Shape::d4(n, 1, h, w), data))
        }
        NoiseKind::Simplex => {
            let mut data = Vec::with_capacity(n * h * w);
            for _ in 0..n {
                let cfg = SimplexNoiseConfig { seed: rng.gen(), ..*simplex };
                let field = simplex_noise::<F>(h, w, &cfg)?;
                data.extend_from_slice(field.data());
            }
            Ok(Tensor::from_vec(Shape::d4(n, 1, h, w), data))
        }
    }
}

/// Closed-form forward corruption x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε.
pub fn forward_sample<F: Scalar>(
    x0: &Tensor<F>,
    t: usize,
    eps: &Tensor<F>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<F>> {
    schedule.check_t(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            context: "forward_sample".into(),
            expected: format!("{:?}", x0.shape()),
            actual: format!("{:?}", eps.shape()),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (sa, sb) = (F::fl(ab.sqrt()), F::fl((1.0 - ab).sqrt()));
    let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| sa * x + sb * e).collect();
    Ok(Tensor::from_vec(x0.shape(), data))
}

/// Per-sample forward corruption with independent timesteps `t[i]`.
fn forward_sample_batch<F: Scalar>(
    x0: &Tensor<F>,
    t: &[usize],
    eps: &Tensor<F>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<F>> {
    let s = x0.shape();
    let per = s.len() / s.dim(0);
    let mut data = Vec::with_capacity(s.len());
    for (i, &ti) in t.iter().enumerate() {
        schedule.check_t(ti)?;
        let ab = schedule.alpha_bar(ti);
        let (sa, sb) = (F::fl(ab.sqrt()), F::fl((1.0 - ab).sqrt()));
        for k in i * per..(i + 1) * per {
            data.push(sa * x0.data()[k] + sb * eps.data()[k]);
        }
    }
    Ok(Tensor::from_vec(s, data))
}

/// One drawn training example: corrupted batch, per-sample timesteps, and the
/// true noise the denoiser must predict.
pub struct LossDraw<F: Scalar> {
    pub x_t: Tensor<F>,
    pub t: Vec<usize>,
    pub eps: Tensor<F>,
}

/// Samples timesteps and noise for one minibatch of the noise-prediction
/// objective.
pub fn draw_loss_batch<F: Scalar>(
    x0: &Tensor<F>,
    schedule: &NoiseSchedule,
    kind: NoiseKind,
    simplex: &SimplexNoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossDraw<F>> {
    let s = x0.shape();
    let n = s.dim(0);
    if n == 0 || s.len() == 0 {
        return Err(Error::config("empty batch in ddpm loss"));
    }
    let t: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=schedule.t_max)).collect();
    let eps = draw_noise(n, s.dim(2), s.dim(3), kind, simplex, rng)?;
    let x_t = forward_sample_batch(x0, &t, &eps, schedule)?;
    Ok(LossDraw { x_t, t, eps })
}

/// Noise-prediction MSE for one minibatch, with gradients in parameter order.
pub fn ddpm_loss<F: Scalar>(
    model: &DenoiserParams<F>,
    x0: &Tensor<F>,
    schedule: &NoiseSchedule,
    kind: NoiseKind,
    simplex: &SimplexNoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Tensor<F>>)> {
    let draw = draw_loss_batch(x0, schedule, kind, simplex, rng)?;
    let mut tape = Tape::new();
    let bp = BoundParams::bind(&mut tape, &model.params);
    let x_t = tape.leaf(draw.x_t);
    let target = tape.leaf(draw.eps);
    let pred = forward_graph(&model.config, &mut tape, &bp, x_t, &draw.t)?;
    let loss = tape.mse(pred, target);
    let loss_value = tape.value(loss).item().as_f64();
    if !loss_value.is_finite() {
        return Err(Error::NumericInstability {
            step: 0,
            what: "non-finite diffusion training loss".into(),
        });
    }
    let grads = tape.backward(loss)?;
    let collected = bp
        .vars
        .iter()
        .zip(model.params.tensors())
        .map(|(&var, p)| grads.get_or_zeros(var, p.shape()))
        .collect();
    Ok((loss_value, collected))
}

/// Posterior-style reverse mean of Eq. (5):
/// μ_θ = (1/√α_t)(x_t − (β_t/√(1−ᾱ_t))·ε̂).
pub fn reverse_mean<F: Scalar>(
    x_t: &Tensor<F>,
    eps_hat: &Tensor<F>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor<F>> {
    schedule.check_t(t)?;
    let inv_sqrt_a = F::fl(1.0 / schedule.alpha(t).sqrt());
    let coeff = F::fl(schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt());
    let data = x_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(&x, &e)| inv_sqrt_a * (x - coeff * e))
        .collect();
    Ok(Tensor::from_vec(x_t.shape(), data))
}

/// Reverse-step variance ((1−ᾱ_{t−1})/(1−ᾱ_t))·β_t.
pub fn reverse_variance(t: usize, schedule: &NoiseSchedule) -> f64 {
    (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - schedule.alpha_bar(t)) * schedule.beta(t)
}

/// One reverse denoising step x_t → x_{t−1}; no noise is added at t = 1.
pub fn reverse_step<F: Scalar>(
    model: &DenoiserParams<F>,
    x_t: &Tensor<F>,
    t: usize,
    schedule: &NoiseSchedule,
    kind: NoiseKind,
    simplex: &SimplexNoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<F>> {
    schedule.check_t(t)?;
    let s = x_t.shape();
    let ts = vec![t; s.dim(0)];
    let eps_hat = forward_infer(model, x_t, &ts)?;
    let mut out = reverse_mean(x_t, &eps_hat, t, schedule)?;
    if t > 1 {
        let sigma = F::fl(reverse_variance(t, schedule).sqrt());
        let z = draw_noise::<F>(s.dim(0), s.dim(2), s.dim(3), kind, simplex, rng)?;
        for (o, &n) in out.data_mut().iter_mut().zip(z.data()) {
            *o = *o + sigma * n;
        }
    }
    Ok(out)
}

/// Partial-diffusion settings: corrupt to depth λ, then denoise back.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    pub lambda_t: usize,
    pub noise_kind: NoiseKind,
    pub simplex: SimplexNoiseConfig,
    pub seed: u64,
}

impl ReconstructionConfig {
    /// λ = T/4 (the cited partial-diffusion depth), simplex corruption.
    pub fn defaults_for(schedule: &NoiseSchedule) -> Self {
        ReconstructionConfig {
            lambda_t: (schedule.t_max / 4).max(1),
            noise_kind: NoiseKind::Simplex,
            simplex: SimplexNoiseConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.lambda_t == 0 || self.lambda_t > schedule.t_max {
            return Err(Error::config(format!(
                "lambda_t {} outside schedule range 1..={}",
                self.lambda_t,
                schedule.t_max
            )));
        }
        self.simplex.validate()
    }
}

/// Reconstructs a [0, 1] batch (n, 1, h, w): maps to [−1, 1], corrupts to
/// depth λ, runs the reverse chain to t = 0, clamps, and maps back to [0, 1].
pub fn reconstruct<F: Scalar>(
    model: &DenoiserParams<F>,
    x0_unit: &Tensor<F>,
    cfg: &ReconstructionConfig,
    schedule: &NoiseSchedule,
) -> Result<Tensor<F>> {
    cfg.validate(schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = x0_unit.shape();
    let x0 = x0_unit.map(|v| v + v - F::one());
    let eps = draw_noise::<F>(s.dim(0), s.dim(2), s.dim(3), cfg.noise_kind, &cfg.simplex, &mut rng)?;
    let mut x = forward_sample(&x0, cfg.lambda_t, &eps, schedule)?;
    for t in (1..=cfg.lambda_t).rev() {
        x = reverse_step(model, &x, t, schedule, cfg.noise_kind, &cfg.simplex, &mut rng)?;
    }
    let half = F::fl(0.5);
    Ok(x.map(|v| ((v + F::one()) * half).max(F::zero()).min(F::one())))
}

/// Diffusion training hyperparameters. Paper defaults: T = 1000, AdamW with
/// lr 1e-6, 1000 epochs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DdpmTrainConfig {
    pub t_max: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub noise_kind: NoiseKind,
    pub simplex: SimplexNoiseConfig,
    pub seed: u64,
    pub widths: [usize; 3],
    pub time_embed_dim: usize,
    pub checkpoint_every: usize,
}

impl Default for DdpmTrainConfig {
    fn default() -> Self {
        DdpmTrainConfig {
            t_max: 1000,
            epochs: 1000,
            lr: 1e-6,
            weight_decay: 1e-2,
            batch_size: 16,
            noise_kind: NoiseKind::Simplex,
            simplex: SimplexNoiseConfig::default(),
            seed: 0,
            widths: UNetConfig::default().widths,
            time_embed_dim: UNetConfig::default().time_embed_dim,
            checkpoint_every: 50,
        }
    }
}

impl DdpmTrainConfig {
    pub fn unet(&self) -> UNetConfig {
        UNetConfig { in_channels: 1, widths: self.widths, time_embed_dim: self.time_embed_dim }
    }
}

pub struct TrainOutcome {
    pub model: DenoiserParams<f32>,
    pub losses: Vec<f64>,
}

/// Flattens sequences into independent (1, h, w) training images, optionally
/// remapped from [0, 1] to [−1, 1], rejecting defective-labeled data.
pub(crate) fn training_images(
    dataset: &[ImageSequence],
    symmetric_range: bool,
) -> Result<(usize, usize, Vec<Vec<f32>>)> {
    if dataset.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    let (h, w) = (dataset[0].h, dataset[0].w);
    let mut images = Vec::new();
    for seq in dataset {
        if seq.label == Label::Defective {
            return Err(Error::config(format!(
                "sequence {} is labeled defective; the model trains only on defect-free data",
                seq.id
            )));
        }
        if (seq.h, seq.w) != (h, w) {
            return Err(Error::ShapeMismatch {
                context: "training dataset".into(),
                expected: format!("{h}x{w}"),
                actual: format!("{}x{}", seq.h, seq.w),
            });
        }
        for frame in &seq.frames {
            if symmetric_range {
                images.push(frame.iter().map(|&v| 2.0 * v - 1.0).collect());
            } else {
                images.push(frame.clone());
            }
        }
    }
    Ok((h, w, images))
}

pub(crate) fn batch_tensor(images: &[Vec<f32>], idx: &[usize], h: usize, w: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(idx.len() * h * w);
    for &i in idx {
        data.extend_from_slice(&images[i]);
    }
    Tensor::from_vec(Shape::d4(idx.len(), 1, h, w), data)
}

/// Per-epoch RNG stream: reseeding from (seed, epoch) makes checkpoint-resume
/// training identical to an uninterrupted run.
pub(crate) fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15)))
}

pub(crate) fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    idx
}

/// Trains the diffusion denoiser on defect-free sequences. When `out_dir` is
/// given, writes `train_log.csv` (epoch, mean loss, wall seconds) and
/// checkpoints `model.ckpt` / `optimizer.ckpt`; `resume_from` restarts from a
/// directory written by a previous interrupted run.
pub fn train_ddpm(
    dataset: &[ImageSequence],
    cfg: &DdpmTrainConfig,
    out_dir: Option<&Path>,
    resume_from: Option<&Path>,
) -> Result<TrainOutcome> {
    let schedule = cosine_schedule(cfg.t_max)?;
    let (h, w, images) = training_images(dataset, true)?;
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }

    let mut model = DenoiserParams::<f32>::init(cfg.unet(), cfg.seed);
    let mut opt = AdamW::ddpm_default(&model.params);
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    let mut losses: Vec<f64> = Vec::new();
    let mut start_epoch = 0;

    if let Some(dir) = resume_from {
        let (params, meta) = checkpoint::load::<f32>(&dir.join("model.ckpt"))?;
        model.params.load_from(&params)?;
        let (moments, _) = checkpoint::load::<f32>(&dir.join("optimizer.ckpt"))?;
        let names = model.params.names().to_vec();
        opt.load_moments(meta.epoch as u64 * batches_per_epoch(images.len(), cfg.batch_size) as u64, &moments, &names)?;
        start_epoch = meta.epoch;
        let log = std::fs::read_to_string(dir.join("train_log.csv"))
            .map_err(|e| Error::io(dir.join("train_log.csv"), e))?;
        for line in log.lines().skip(1).take(start_epoch) {
            let loss: f64 = line
                .split(',')
                .nth(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::config("malformed training log"))?;
            losses.push(loss);
        }
    }

    let start = Instant::now();
    for epoch in start_epoch..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let order = shuffled_indices(images.len(), &mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x0 = batch_tensor(&images, chunk, h, w);
            let (loss, grads) = ddpm_loss(&model, &x0, &schedule, cfg.noise_kind, &cfg.simplex, &mut rng)?;
            opt.step(&mut model.params, &grads)?;
            epoch_loss += loss;
            batches += 1;
        }
        losses.push(epoch_loss / batches as f64);
        if let Some(dir) = out_dir {
            write_train_log(dir, &losses, start.elapsed().as_secs_f64())?;
            if (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs {
                save_checkpoints(dir, &model, &opt, epoch + 1, &losses, cfg.seed)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        if start_epoch == cfg.epochs {
            // Nothing left to train; still make sure artifacts exist.
            write_train_log(dir, &losses, start.elapsed().as_secs_f64())?;
        }
        save_checkpoints(dir, &model, &opt, cfg.epochs, &losses, cfg.seed)?;
    }
    Ok(TrainOutcome { model, losses })
}

pub(crate) fn batches_per_epoch(n_images: usize, batch_size: usize) -> usize {
    n_images.div_ceil(batch_size)
}

pub(crate) fn write_train_log(dir: &Path, losses: &[f64], wall_secs: f64) -> Result<()> {
    let path = dir.join("train_log.csv");
    let map_io = |e: std::io::Error| Error::io(&path, e);
    let mut f = BufWriter::new(File::create(&path).map_err(map_io)?);
    writeln!(f, "epoch,mean_loss,wall_secs").map_err(map_io)?;
    for (i, loss) in losses.iter().enumerate() {
        writeln!(f, "{},{loss},{wall_secs:.3}", i + 1).map_err(map_io)?;
    }
    Ok(())
}

fn save_checkpoints(
    dir: &Path,
    model: &DenoiserParams<f32>,
    opt: &crate::nn::optim::OptimizerState<f32>,
    epoch: usize,
    losses: &[f64],
    seed: u64,
) -> Result<()> {
    let meta = CheckpointMeta {
        epoch,
        loss_history_digest: loss_history_digest(losses),
        rng_seed: seed,
        model_kind: "ddpm".into(),
    };
    checkpoint::save(&dir.join("model.ckpt"), &model.params, &meta)?;
    let moments = opt.moments_param_set(model.params.names());
    checkpoint::save(&dir.join("optimizer.ckpt"), &moments, &meta)?;
    Ok(())
}
