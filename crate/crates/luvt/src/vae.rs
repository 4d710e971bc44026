//! Variational autoencoder baseline: convolutional encoder/decoder with a
//! Gaussian latent, trained with the plain ELBO (pixel-mean MSE plus
//! closed-form KL to the standard-normal prior).
//!
//! Images enter and leave in [0, 1]; the decoder ends in a sigmoid.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    batch_tensor, batches_per_epoch, epoch_rng, shuffled_indices, training_images,
    write_train_log,
};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, loss_history_digest, CheckpointMeta};
use crate::nn::optim::AdamW;
use crate::nn::params::{BoundParams, ParamSet};
use crate::nn::tape::{conv2d_fwd, Tape, VarId};
use crate::nn::tensor::{randn_f64, Scalar, Shape, Tensor};
use crate::nn::unet::{inorm_t, linear_t, pool2_t, sigmoid_t, silu_t, upsample2_t};
use crate::raster::ImageSequence;

/// Numeric-safety clamp for the encoder's log-variance head.
pub const LOGVAR_RANGE: (f64, f64) = (-10.0, 10.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub widths: [usize; 2],
    pub d_z: usize,
    pub h: usize,
    pub w: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig { widths: [32, 64], d_z: 64, h: 64, w: 64 }
    }
}

impl VaeConfig {
    pub fn desk() -> Self {
        VaeConfig { widths: [8, 16], d_z: 32, h: 64, w: 64 }
    }

    /// Flattened feature size at the encoder bottleneck (two 2x poolings).
    fn flat(&self) -> usize {
        self.widths[1] * (self.h / 4) * (self.w / 4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h % 4 != 0 || self.w % 4 != 0 {
            return Err(Error::config("vae image dims must be divisible by 4"));
        }
        if self.d_z == 0 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::config("vae latent and channel widths must be positive"));
        }
        Ok(())
    }
}

/// Named parameter table for encoder and decoder plus the architecture.
#[derive(Clone)]
pub struct VaeParams<F: Scalar> {
    pub config: VaeConfig,
    pub params: ParamSet<F>,
}

/// Posterior statistics for one batch, shape (n, d_z) each.
#[derive(Clone, Debug)]
pub struct LatentStats<F: Scalar> {
    pub mu: Tensor<F>,
    pub logvar: Tensor<F>,
}

impl<F: Scalar> VaeParams<F> {
    pub fn init(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w0, w1] = config.widths;
        let flat = config.flat();
        let mut params = ParamSet::new();
        let conv = |p: &mut ParamSet<F>, name: &str, co: usize, ci: usize, rng: &mut ChaCha8Rng| {
            let std = (2.0 / (ci * 9) as f64).sqrt();
            p.insert(format!("{name}.w"), Tensor::randn(Shape::d4(co, ci, 3, 3), std, rng));
            p.insert(format!("{name}.b"), Tensor::zeros(Shape::d1(co)));
        };
        let norm = |p: &mut ParamSet<F>, name: &str, c: usize| {
            p.insert(format!("{name}.g"), Tensor::full(Shape::d1(c), F::one()));
            p.insert(format!("{name}.s"), Tensor::zeros(Shape::d1(c)));
        };
        let lin = |p: &mut ParamSet<F>, name: &str, fo: usize, fi: usize, rng: &mut ChaCha8Rng| {
            let std = (1.0 / fi as f64).sqrt();
            p.insert(format!("{name}.w"), Tensor::randn(Shape::d2(fo, fi), std, rng));
            p.insert(format!("{name}.b"), Tensor::zeros(Shape::d1(fo)));
        };
        conv(&mut params, "enc0.conv", w0, 1, &mut rng);
        norm(&mut params, "enc0.norm", w0);
        conv(&mut params, "enc1.conv", w1, w0, &mut rng);
        norm(&mut params, "enc1.norm", w1);
        lin(&mut params, "enc.mu", config.d_z, flat, &mut rng);
        // Zero-initialized log-variance head: the fresh posterior is N(mu, I).
        params.insert("enc.logvar.w", Tensor::zeros(Shape::d2(config.d_z, flat)));
        params.insert("enc.logvar.b", Tensor::zeros(Shape::d1(config.d_z)));
        lin(&mut params, "dec.fc", flat, config.d_z, &mut rng);
        conv(&mut params, "dec1.conv", w0, w1, &mut rng);
        norm(&mut params, "dec1.norm", w0);
        conv(&mut params, "dec0.conv", w0, w0, &mut rng);
        norm(&mut params, "dec0.norm", w0);
        conv(&mut params, "out", 1, w0, &mut rng);
        Ok(VaeParams { config, params })
    }

    pub fn num_scalars(&self) -> usize {
        self.params.num_scalars()
    }
}

fn check_input<F: Scalar>(config: &VaeConfig, x: &Tensor<F>) -> Result<()> {
    let s = x.shape();
    if s.rank() != 4 || s.dim(1) != 1 || s.dim(2) != config.h || s.dim(3) != config.w {
        return Err(Error::ShapeMismatch {
            context: "vae input".into(),
            expected: format!("(n, 1, {}, {})", config.h, config.w),
            actual: format!("{s:?}"),
        });
    }
    Ok(())
}

/// Graph-building encoder: posterior mean and clamped log-variance, (n, d_z).
pub fn encode_graph<F: Scalar>(
    config: &VaeConfig,
    tape: &mut Tape<F>,
    bp: &BoundParams,
    x: VarId,
) -> Result<(VarId, VarId)> {
    check_input(config, tape.value(x))?;
    let n = tape.shape(x).dim(0);
    let h = tape.conv2d(x, bp.var("enc0.conv.w"), bp.var("enc0.conv.b"), 1);
    let h = tape.instance_norm(h, bp.var("enc0.norm.g"), bp.var("enc0.norm.s"));
    let h = tape.silu(h);
    let h = tape.avg_pool2(h);
    let h = tape.conv2d(h, bp.var("enc1.conv.w"), bp.var("enc1.conv.b"), 1);
    let h = tape.instance_norm(h, bp.var("enc1.norm.g"), bp.var("enc1.norm.s"));
    let h = tape.silu(h);
    let h = tape.avg_pool2(h);
    let flat = tape.reshape(h, Shape::d2(n, config.flat()));
    let mu = tape.linear(flat, bp.var("enc.mu.w"), bp.var("enc.mu.b"));
    let lv = tape.linear(flat, bp.var("enc.logvar.w"), bp.var("enc.logvar.b"));
    let lv = tape.clamp(lv, LOGVAR_RANGE.0, LOGVAR_RANGE.1);
    Ok((mu, lv))
}

/// Graph-building decoder: latent (n, d_z) to image (n, 1, h, w) in [0, 1].
pub fn decode_graph<F: Scalar>(
    config: &VaeConfig,
    tape: &mut Tape<F>,
    bp: &BoundParams,
    z: VarId,
) -> Result<VarId> {
    let s = tape.shape(z);
    if s.rank() != 2 || s.dim(1) != config.d_z {
        return Err(Error::ShapeMismatch {
            context: "vae latent".into(),
            expected: format!("(n, {})", config.d_z),
            actual: format!("{s:?}"),
        });
    }
    let n = s.dim(0);
    let h = tape.linear(z, bp.var("dec.fc.w"), bp.var("dec.fc.b"));
    let h = tape.silu(h);
    let h = tape.reshape(h, Shape::d4(n, config.widths[1], config.h / 4, config.w / 4));
    let h = tape.upsample2(h);
    let h = tape.conv2d(h, bp.var("dec1.conv.w"), bp.var("dec1.conv.b"), 1);
    let h = tape.instance_norm(h, bp.var("dec1.norm.g"), bp.var("dec1.norm.s"));
    let h = tape.silu(h);
    let h = tape.upsample2(h);
    let h = tape.conv2d(h, bp.var("dec0.conv.w"), bp.var("dec0.conv.b"), 1);
    let h = tape.instance_norm(h, bp.var("dec0.norm.g"), bp.var("dec0.norm.s"));
    let h = tape.silu(h);
    let h = tape.conv2d(h, bp.var("out.w"), bp.var("out.b"), 1);
    Ok(tape.sigmoid(h))
}

/// Full ELBO graph for a batch with an externally supplied noise leaf `eps`
/// of shape (n, d_z): pixel-mean MSE plus batch-mean KL.
pub fn elbo_graph<F: Scalar>(
    config: &VaeConfig,
    tape: &mut Tape<F>,
    bp: &BoundParams,
    x: VarId,
    eps: VarId,
) -> Result<VarId> {
    let n = tape.shape(x).dim(0);
    let (mu, lv) = encode_graph(config, tape, bp, x)?;
    let half_lv = tape.scale(lv, 0.5);
    let sigma = tape.exp(half_lv);
    let noise = tape.mul(sigma, eps);
    let z = tape.add(mu, noise);
    let recon = decode_graph(config, tape, bp, z)?;
    let mse = tape.mse(recon, x);
    // KL(q || N(0, I)) = 0.5 * sum(mu^2 + sigma^2 - 1 - logvar), batch-meaned.
    let mu2 = tape.mul(mu, mu);
    let sigma2 = tape.exp(lv);
    let t = tape.add(mu2, sigma2);
    let t = tape.add_scalar(t, -1.0);
    let t = tape.sub(t, lv);
    let kl_sum = tape.sum_all(t);
    let kl = tape.scale(kl_sum, 0.5 / n as f64);
    Ok(tape.add(mse, kl))
}

/// Closed-form KL to the standard-normal prior, batch-meaned.
pub fn kl_divergence<F: Scalar>(stats: &LatentStats<F>) -> f64 {
    let n = stats.mu.shape().dim(0).max(1) as f64;
    stats
        .mu
        .data()
        .iter()
        .zip(stats.logvar.data())
        .map(|(&m, &lv)| {
            let (m, lv) = (m.as_f64(), lv.as_f64());
            m * m + lv.exp() - 1.0 - lv
        })
        .sum::<f64>()
        * 0.5
        / n
}

/// Inference encoder (no tape).
pub fn encode<F: Scalar>(model: &VaeParams<F>, x: &Tensor<F>) -> Result<LatentStats<F>> {
    check_input(&model.config, x)?;
    let p = &model.params;
    let get = |name: &str| p.get(name).expect("vae parameter");
    let n = x.shape().dim(0);
    let h = conv2d_fwd(x, get("enc0.conv.w"), get("enc0.conv.b"), 1);
    let h = silu_t(&inorm_t(&h, get("enc0.norm.g"), get("enc0.norm.s")));
    let h = pool2_t(&h);
    let h = conv2d_fwd(&h, get("enc1.conv.w"), get("enc1.conv.b"), 1);
    let h = silu_t(&inorm_t(&h, get("enc1.norm.g"), get("enc1.norm.s")));
    let h = pool2_t(&h).reshaped(Shape::d2(n, model.config.flat()));
    let mu = linear_t(&h, get("enc.mu.w"), get("enc.mu.b"));
    let (lo, hi) = (F::fl(LOGVAR_RANGE.0), F::fl(LOGVAR_RANGE.1));
    let logvar = linear_t(&h, get("enc.logvar.w"), get("enc.logvar.b")).map(|v| v.max(lo).min(hi));
    Ok(LatentStats { mu, logvar })
}

/// z = mu + sigma * eps with eps ~ N(0, I).
pub fn reparameterize<F: Scalar>(stats: &LatentStats<F>, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let half = F::fl(0.5);
    let data = stats
        .mu
        .data()
        .iter()
        .zip(stats.logvar.data())
        .map(|(&m, &lv)| m + (lv * half).exp() * F::fl(randn_f64(rng)))
        .collect();
    Tensor::from_vec(stats.mu.shape(), data)
}

/// Inference decoder (no tape).
pub fn decode<F: Scalar>(model: &VaeParams<F>, z: &Tensor<F>) -> Result<Tensor<F>> {
    let config = &model.config;
    let s = z.shape();
    if s.rank() != 2 || s.dim(1) != config.d_z {
        return Err(Error::ShapeMismatch {
            context: "vae latent".into(),
            expected: format!("(n, {})", config.d_z),
            actual: format!("{s:?}"),
        });
    }
    let p = &model.params;
    let get = |name: &str| p.get(name).expect("vae parameter");
    let n = s.dim(0);
    let h = silu_t(&linear_t(z, get("dec.fc.w"), get("dec.fc.b")))
        .reshaped(Shape::d4(n, config.widths[1], config.h / 4, config.w / 4));
    let h = upsample2_t(&h);
    let h = conv2d_fwd(&h, get("dec1.conv.w"), get("dec1.conv.b"), 1);
    let h = silu_t(&inorm_t(&h, get("dec1.norm.g"), get("dec1.norm.s")));
    let h = upsample2_t(&h);
    let h = conv2d_fwd(&h, get("dec0.conv.w"), get("dec0.conv.b"), 1);
    let h = silu_t(&inorm_t(&h, get("dec0.norm.g"), get("dec0.norm.s")));
    Ok(sigmoid_t(&conv2d_fwd(&h, get("out.w"), get("out.b"), 1)))
}

/// Deterministic reconstruction through the posterior mean (z = mu).
pub fn reconstruct<F: Scalar>(model: &VaeParams<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
    let stats = encode(model, x)?;
    decode(model, &stats.mu)
}

/// ELBO loss for one minibatch with gradients in parameter order.
pub fn elbo_loss<F: Scalar>(
    model: &VaeParams<F>,
    x0: &Tensor<F>,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Tensor<F>>)> {
    let n = x0.shape().dim(0);
    if n == 0 {
        return Err(Error::config("empty batch in elbo loss"));
    }
    let eps_data = (0..n * model.config.d_z).map(|_| F::fl(randn_f64(rng))).collect();
    let eps = Tensor::from_vec(Shape::d2(n, model.config.d_z), eps_data);
    let mut tape = Tape::new();
    let bp = BoundParams::bind(&mut tape, &model.params);
    let x = tape.leaf(x0.clone());
    let eps = tape.leaf(eps);
    let loss = elbo_graph(&model.config, &mut tape, &bp, x, eps)?;
    let loss_value = tape.value(loss).item().as_f64();
    if !loss_value.is_finite() {
        return Err(Error::NumericInstability { step: 0, what: "non-finite vae loss".into() });
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

/// VAE training hyperparameters. Paper defaults: Adam, lr 1e-3, 200 epochs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub widths: [usize; 2],
    pub d_z: usize,
    pub checkpoint_every: usize,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            epochs: 200,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
            widths: VaeConfig::default().widths,
            d_z: VaeConfig::default().d_z,
            checkpoint_every: 50,
        }
    }
}

pub struct VaeTrainOutcome {
    pub model: VaeParams<f32>,
    pub losses: Vec<f64>,
}

/// Trains the VAE on defect-free sequences with plain Adam. Artifacts mirror
/// the diffusion trainer: `train_log.csv`, `model.ckpt`, `optimizer.ckpt`.
pub fn train_vae(
    dataset: &[ImageSequence],
    cfg: &VaeTrainConfig,
    out_dir: Option<&Path>,
    resume_from: Option<&Path>,
) -> Result<VaeTrainOutcome> {
    let (h, w, images) = training_images(dataset, false)?;
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let config = VaeConfig { widths: cfg.widths, d_z: cfg.d_z, h, w };
    let mut model = VaeParams::<f32>::init(config, cfg.seed)?;
    let mut opt = AdamW::vae_default(&model.params);
    opt.lr = cfg.lr;
    let mut losses: Vec<f64> = Vec::new();
    let mut start_epoch = 0;

    if let Some(dir) = resume_from {
        let (params, meta) = checkpoint::load::<f32>(&dir.join("model.ckpt"))?;
        model.params.load_from(&params)?;
        let (moments, _) = checkpoint::load::<f32>(&dir.join("optimizer.ckpt"))?;
        let names = model.params.names().to_vec();
        let steps = meta.epoch as u64 * batches_per_epoch(images.len(), cfg.batch_size) as u64;
        opt.load_moments(steps, &moments, &names)?;
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

    let start = std::time::Instant::now();
    for epoch in start_epoch..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed ^ 0x7a3e_55aa, epoch);
        let order = shuffled_indices(images.len(), &mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x0 = batch_tensor(&images, chunk, h, w);
            let (loss, grads) = elbo_loss(&model, &x0, &mut rng)?;
            opt.step(&mut model.params, &grads)?;
            epoch_loss += loss;
            batches += 1;
        }
        losses.push(epoch_loss / batches as f64);
        if let Some(dir) = out_dir {
            write_train_log(dir, &losses, start.elapsed().as_secs_f64())?;
            if (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs {
                save_vae_checkpoints(dir, &model, &opt, epoch + 1, &losses, cfg.seed)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        if start_epoch == cfg.epochs {
            write_train_log(dir, &losses, start.elapsed().as_secs_f64())?;
        }
        save_vae_checkpoints(dir, &model, &opt, cfg.epochs, &losses, cfg.seed)?;
    }
    Ok(VaeTrainOutcome { model, losses })
}

fn save_vae_checkpoints(
    dir: &Path,
    model: &VaeParams<f32>,
    opt: &crate::nn::optim::OptimizerState<f32>,
    epoch: usize,
    losses: &[f64],
    seed: u64,
) -> Result<()> {
    let meta = CheckpointMeta {
        epoch,
        loss_history_digest: loss_history_digest(losses),
        rng_seed: seed,
        model_kind: "vae".into(),
    };
    checkpoint::save(&dir.join("model.ckpt"), &model.params, &meta)?;
    let moments = opt.moments_param_set(model.params.names());
    checkpoint::save(&dir.join("optimizer.ckpt"), &moments, &meta)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Label;
    use rand::Rng;

    fn tiny_config() -> VaeConfig {
        VaeConfig { widths: [2, 3], d_z: 4, h: 8, w: 8 }
    }

    fn tiny_model(seed: u64) -> VaeParams<f32> {
        VaeParams::init(tiny_config(), seed).unwrap()
    }

    #[test]
    fn kl_closed_form_examples() {
        let zero = LatentStats {
            mu: Tensor::<f64>::zeros(Shape::d2(1, 3)),
            logvar: Tensor::zeros(Shape::d2(1, 3)),
        };
        assert_eq!(kl_divergence(&zero), 0.0);
        let unit = LatentStats {
            mu: Tensor::<f64>::from_vec(Shape::d2(1, 1), vec![1.0]),
            logvar: Tensor::zeros(Shape::d2(1, 1)),
        };
        assert!((kl_divergence(&unit) - 0.5).abs() < 1e-15);
        // KL >= 0 over random stats.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let stats = LatentStats {
                mu: Tensor::<f64>::from_vec(
                    Shape::d2(1, 4),
                    (0..4).map(|_| randn_f64(&mut rng)).collect(),
                ),
                logvar: Tensor::from_vec(
                    Shape::d2(1, 4),
                    (0..4).map(|_| randn_f64(&mut rng)).collect(),
                ),
            };
            assert!(kl_divergence(&stats) >= 0.0);
        }
    }

    #[test]
    fn autoencoder_shape_and_determinism() {
        let model = tiny_model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::from_vec(
            Shape::d4(2, 1, 8, 8),
            (0..128).map(|_| rng.gen_range(0.0..1.0)).collect(),
        );
        let stats = encode(&model, &x).unwrap();
        assert_eq!(stats.mu.shape(), Shape::d2(2, 4));
        assert!(stats.logvar.data().iter().all(|v| (-10.0..=10.0).contains(v)));
        // eps = 0 limit: z = mu.
        let z_mu = stats.mu.clone();
        let a = decode(&model, &z_mu).unwrap();
        let b = decode(&model, &z_mu).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let recon = reconstruct(&model, &x).unwrap();
        assert_eq!(recon.data(), a.data());
        // Shape errors.
        assert!(encode(&model, &Tensor::<f32>::zeros(Shape::d4(1, 1, 4, 4))).is_err());
        assert!(decode(&model, &Tensor::<f32>::zeros(Shape::d2(1, 3))).is_err());
    }

    #[test]
    fn reparameterize_spread_follows_logvar() {
        let stats = LatentStats {
            mu: Tensor::<f64>::from_vec(Shape::d2(1, 2), vec![3.0, -1.0]),
            logvar: Tensor::from_vec(Shape::d2(1, 2), vec![-10.0, 0.0]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sum = [0.0f64; 2];
        let n = 2000;
        for _ in 0..n {
            let z = reparameterize(&stats, &mut rng);
            sum[0] += z.data()[0];
            sum[1] += z.data()[1];
        }
        // Tiny variance channel hugs mu; unit channel averages to mu.
        assert!((sum[0] / n as f64 - 3.0).abs() < 0.05);
        assert!((sum[1] / n as f64 + 1.0).abs() < 0.1);
    }

    #[test]
    fn elbo_graph_matches_inference_path_with_zero_noise() {
        let model = tiny_model(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x0 = Tensor::<f32>::from_vec(
            Shape::d4(1, 1, 8, 8),
            (0..64).map(|_| rng.gen_range(0.0..1.0)).collect(),
        );
        let mut tape = Tape::new();
        let bp = BoundParams::bind(&mut tape, &model.params);
        let x = tape.leaf(x0.clone());
        let eps = tape.leaf(Tensor::zeros(Shape::d2(1, 4)));
        let loss = elbo_graph(&model.config, &mut tape, &bp, x, eps).unwrap();
        // With eps = 0 the reconstruction goes through z = mu, so the loss is
        // MSE(reconstruct(x), x) + KL(stats).
        let stats = encode(&model, &x0).unwrap();
        let recon = reconstruct(&model, &x0).unwrap();
        let mse: f64 = recon
            .data()
            .iter()
            .zip(x0.data())
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / 64.0;
        let want = mse + kl_divergence(&stats);
        let got = tape.value(loss).item() as f64;
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }

    #[test]
    fn elbo_loss_contract() {
        let model = tiny_model(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x0 = Tensor::<f32>::from_vec(
            Shape::d4(2, 1, 8, 8),
            (0..128).map(|_| rng.gen_range(0.0..1.0)).collect(),
        );
        let (loss, grads) = elbo_loss(&model, &x0, &mut rng).unwrap();
        assert!(loss.is_finite() && loss >= 0.0);
        assert_eq!(grads.len(), model.params.len());
        assert!(grads.iter().all(|g| g.all_finite()));
        let empty = Tensor::<f32>::zeros(Shape::d4(0, 1, 8, 8));
        assert!(elbo_loss(&model, &empty, &mut rng).is_err());
    }

    fn tiny_sequence(id: &str, label: Label, seed: u64) -> ImageSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..2)
            .map(|_| (0..64).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        ImageSequence {
            id: id.into(),
            h: 8,
            w: 8,
            frames,
            label,
            defect_center_px: (label == Label::Defective).then_some((4.0, 4.0)),
            defect_radius_px: (label == Label::Defective).then_some(1.5),
            seed,
        }
    }

    fn tiny_train_config() -> VaeTrainConfig {
        VaeTrainConfig {
            epochs: 3,
            batch_size: 4,
            widths: [2, 3],
            d_z: 4,
            checkpoint_every: 1,
            ..Default::default()
        }
    }

    #[test]
    fn training_rejects_defective_data_and_resumes_exactly() {
        let bad = vec![tiny_sequence("a", Label::Defective, 1)];
        assert!(train_vae(&bad, &tiny_train_config(), None, None).is_err());
        assert!(train_vae(&[], &tiny_train_config(), None, None).is_err());

        let data: Vec<ImageSequence> =
            (0..3).map(|i| tiny_sequence(&format!("s{i}"), Label::DefectFree, i)).collect();
        let cfg = tiny_train_config();

        let dir_full = std::env::temp_dir().join("luvt_vae_full");
        std::fs::create_dir_all(&dir_full).unwrap();
        let full = train_vae(&data, &cfg, Some(&dir_full), None).unwrap();
        assert_eq!(full.losses.len(), 3);
        assert!(full.losses.iter().all(|l| l.is_finite()));

        let dir_half = std::env::temp_dir().join("luvt_vae_half");
        std::fs::create_dir_all(&dir_half).unwrap();
        let half_cfg = VaeTrainConfig { epochs: 1, ..cfg.clone() };
        train_vae(&data, &half_cfg, Some(&dir_half), None).unwrap();
        let resumed = train_vae(&data, &cfg, Some(&dir_half), Some(&dir_half)).unwrap();
        assert_eq!(full.losses, resumed.losses);
        for (name, t) in full.model.params.iter() {
            assert_eq!(t.data(), resumed.model.params.get(name).unwrap().data(), "{name}");
        }
        let (_, meta) = checkpoint::load::<f32>(&dir_half.join("model.ckpt")).unwrap();
        assert_eq!(meta.model_kind, "vae");
        std::fs::remove_dir_all(&dir_full).ok();
        std::fs::remove_dir_all(&dir_half).ok();
    }
}
