//! Finite-difference oracle for every differentiable operation.
//!
//! Analytic gradients from the tape are compared against central finite
//! differences in f64 with step 1e-3. The oracle rebuilds the forward pass
//! from scratch for every probe, so it is independent of the backward
//! implementation it checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use luvt::diffusion::{cosine_schedule, ddpm_loss, NoiseKind, SimplexNoiseConfig};
use luvt::nn::params::BoundParams;
use luvt::nn::unet::{forward_graph, forward_infer, DenoiserParams, UNetConfig};
use luvt::vae::{elbo_graph, VaeConfig, VaeParams};
use luvt::nn::{Shape, Tape, Tensor, VarId};

const FD_STEP: f64 = 1e-3;
const MAX_REL_ERR: f64 = 1e-4;

fn rand_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 0.7, rng)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Check gradients of `build` (inputs -> scalar loss) for all inputs.
fn gradcheck(name: &str, inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[VarId]) -> VarId) {
    let mut tape = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &ids);
    let grads = tape.backward(loss).unwrap();

    let eval = |probe: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let ids: Vec<VarId> = probe.iter().map(|x| t.leaf(x.clone())).collect();
        let l = build(&mut t, &ids);
        t.value(l).item()
    };

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[k], input.shape());
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let e = rel_err(analytic.data()[i], fd);
            worst = worst.max(e);
            assert!(
                e <= MAX_REL_ERR,
                "{name}: input {k} elem {i}: analytic {} vs fd {} (rel err {e:.3e})",
                analytic.data()[i],
                fd
            );
        }
    }
    println!("gradcheck {name}: max rel err {worst:.3e}");
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = Shape::d4(2, 2, 3, 3);
    let a = rand_tensor(s, &mut rng);
    let b = rand_tensor(s, &mut rng);
    gradcheck("add", &[a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1]);
        let y = t.mul(y, y);
        t.sum_all(y)
    });
    gradcheck("sub", &[a.clone(), b.clone()], |t, v| {
        let y = t.sub(v[0], v[1]);
        let y = t.mul(y, y);
        t.sum_all(y)
    });
    gradcheck("mul", &[a.clone(), b.clone()], |t, v| {
        let y = t.mul(v[0], v[1]);
        t.sum_all(y)
    });
    gradcheck("scale_add_scalar", &[a.clone()], |t, v| {
        let y = t.scale(v[0], -1.7);
        let y = t.add_scalar(y, 0.3);
        let y = t.mul(y, y);
        t.mean_all(y)
    });
    gradcheck("exp", &[a.map(|x| x * 0.5)], |t, v| {
        let y = t.exp(v[0]);
        t.sum_all(y)
    });
    gradcheck("sigmoid", &[a.clone()], |t, v| {
        let y = t.sigmoid(v[0]);
        let y = t.mul(y, y);
        t.sum_all(y)
    });
    gradcheck("silu", &[a.clone()], |t, v| {
        let y = t.silu(v[0]);
        let y = t.mul(y, y);
        t.sum_all(y)
    });
    gradcheck("mse", &[a.clone(), b.clone()], |t, v| t.mse(v[0], v[1]));
}

#[test]
fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(Shape::d4(2, 2, 2, 4), &mut rng);
    let b = rand_tensor(Shape::d4(2, 3, 2, 4), &mut rng);
    let v = rand_tensor(Shape::d2(2, 2), &mut rng);
    gradcheck("reshape", &[a.clone()], |t, ids| {
        let y = t.reshape(ids[0], Shape::d2(2, 16));
        let y = t.mul(y, y);
        t.sum_all(y)
    });
    gradcheck("concat_c", &[a.clone(), b.clone()], |t, ids| {
        let y = t.concat_c(ids[0], ids[1]);
        let y = t.mul(y, y);
        t.sum_all(y)
    });
    gradcheck("add_chan_vec", &[a.clone(), v.clone()], |t, ids| {
        let y = t.add_chan_vec(ids[0], ids[1]);
        let y = t.mul(y, y);
        t.sum_all(y)
    });
}

#[test]
fn layer_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(Shape::d2(3, 4), &mut rng);
    let w = rand_tensor(Shape::d2(2, 4), &mut rng);
    let b = rand_tensor(Shape::d1(2), &mut rng);
    gradcheck("linear", &[x, w, b], |t, ids| {
        let y = t.linear(ids[0], ids[1], ids[2]);
        let y = t.mul(y, y);
        t.sum_all(y)
    });

    // The spec's 1x1x4x4 conv MSE case, plus a multi-channel one.
    let x = rand_tensor(Shape::d4(1, 1, 4, 4), &mut rng);
    let w = rand_tensor(Shape::d4(2, 1, 3, 3), &mut rng);
    let b = rand_tensor(Shape::d1(2), &mut rng);
    let target = rand_tensor(Shape::d4(1, 2, 4, 4), &mut rng);
    gradcheck("conv2d_mse_1x1x4x4", &[x, w, b], |t, ids| {
        let y = t.conv2d(ids[0], ids[1], ids[2], 1);
        let tgt = t.leaf(target.clone());
        t.mse(y, tgt)
    });

    let x = rand_tensor(Shape::d4(2, 3, 4, 4), &mut rng);
    let w = rand_tensor(Shape::d4(2, 3, 3, 3), &mut rng);
    let b = rand_tensor(Shape::d1(2), &mut rng);
    gradcheck("conv2d_multichannel", &[x, w, b], |t, ids| {
        let y = t.conv2d(ids[0], ids[1], ids[2], 1);
        let y = t.mul(y, y);
        t.sum_all(y)
    });

    let x = rand_tensor(Shape::d4(2, 2, 4, 4), &mut rng);
    gradcheck("avg_pool2", &[x.clone()], |t, ids| {
        let y = t.avg_pool2(ids[0]);
        let y = t.mul(y, y);
        t.sum_all(y)
    });
    gradcheck("upsample2", &[x.clone()], |t, ids| {
        let y = t.upsample2(ids[0]);
        let y = t.mul(y, y);
        t.sum_all(y)
    });

    let g = rand_tensor(Shape::d1(2), &mut rng);
    let s = rand_tensor(Shape::d1(2), &mut rng);
    gradcheck("instance_norm", &[x, g, s], |t, ids| {
        let y = t.instance_norm(ids[0], ids[1], ids[2]);
        let y = t.mul(y, y);
        t.sum_all(y)
    });
}

#[test]
fn unet_end_to_end_gradcheck() {
    // Tiny denoiser: every parameter probed against finite differences.
    let config = UNetConfig { in_channels: 1, widths: [2, 3, 4], time_embed_dim: 8 };
    let model = DenoiserParams::<f64>::init(config, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(Shape::d4(2, 1, 4, 4), &mut rng);
    let target = rand_tensor(Shape::d4(2, 1, 4, 4), &mut rng);
    let t_steps = [3usize, 17];

    let mut tape = Tape::new();
    let bp = BoundParams::bind(&mut tape, &model.params);
    let xid = tape.leaf(x.clone());
    let out = forward_graph(&config, &mut tape, &bp, xid, &t_steps).unwrap();
    let tgt = tape.leaf(target.clone());
    let loss = tape.mse(out, tgt);
    let grads = tape.backward(loss).unwrap();

    let eval = |probe: &DenoiserParams<f64>| -> f64 {
        let mut t = Tape::new();
        let bp = BoundParams::bind(&mut t, &probe.params);
        let xid = t.leaf(x.clone());
        let out = forward_graph(&config, &mut t, &bp, xid, &t_steps).unwrap();
        let tgt = t.leaf(target.clone());
        let l = t.mse(out, tgt);
        t.value(l).item()
    };

    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (pi, (name, tensor)) in model.params.iter().enumerate() {
        let analytic = grads.get_or_zeros(bp.vars[pi], tensor.shape());
        // Probe a deterministic subset of elements per parameter to keep
        // runtime inside the acceptance budget.
        let stride = (tensor.len() / 8).max(1);
        for i in (0..tensor.len()).step_by(stride) {
            let mut plus = model.clone();
            plus.params.tensors_mut()[pi].data_mut()[i] += FD_STEP;
            let mut minus = model.clone();
            minus.params.tensors_mut()[pi].data_mut()[i] -= FD_STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let e = rel_err(analytic.data()[i], fd);
            worst = worst.max(e);
            checked += 1;
            assert!(
                e <= MAX_REL_ERR,
                "unet param {name} elem {i}: analytic {} vs fd {} (rel err {e:.3e})",
                analytic.data()[i],
                fd
            );
        }
    }
    println!("unet gradcheck: {checked} probes, max rel err {worst:.3e}");
}

#[test]
fn backward_semantics() {
    // d(sum)/dp = 1 everywhere.
    let mut tape = Tape::<f64>::new();
    let p = tape.leaf(Tensor::from_vec(Shape::d2(2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let loss = tape.sum_all(p);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(p).unwrap().data(), &[1.0; 6]);

    // Linearity: grad of summed disjoint losses = sum of separate grads.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_tensor(Shape::d2(2, 2), &mut rng);
    let b = rand_tensor(Shape::d2(2, 2), &mut rng);

    let run = |with_both: bool| -> (Vec<f64>, Vec<f64>) {
        let mut t = Tape::new();
        let ia = t.leaf(a.clone());
        let ib = t.leaf(b.clone());
        let la = {
            let y = t.mul(ia, ia);
            t.sum_all(y)
        };
        let lb = {
            let y = t.mul(ib, ib);
            let y = t.scale(y, 3.0);
            t.sum_all(y)
        };
        let loss = if with_both { t.add(la, lb) } else { la };
        let g = t.backward(loss).unwrap();
        (
            g.get_or_zeros(ia, a.shape()).data().to_vec(),
            g.get_or_zeros(ib, b.shape()).data().to_vec(),
        )
    };
    let (ga_both, gb_both) = run(true);
    let (ga_only, gb_only) = run(false);
    for (x, y) in ga_both.iter().zip(&ga_only) {
        assert!((x - y).abs() < 1e-12);
    }
    // Non-participating leaf gets zero gradient.
    assert!(gb_only.iter().all(|&g| g == 0.0));
    assert!(gb_both.iter().any(|&g| g != 0.0));

    // Backward requires a scalar loss.
    let mut t2 = Tape::<f64>::new();
    let big = t2.leaf(a.clone());
    assert!(t2.backward(big).is_err());
}

#[test]
fn unet_contracts() {
    let config = UNetConfig { in_channels: 1, widths: [2, 3, 4], time_embed_dim: 8 };
    let model = DenoiserParams::<f64>::init(config, 99);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Tensor::randn(Shape::d4(2, 1, 8, 8), 1.0, &mut rng);

    // Output shape equals input shape.
    let y = forward_infer(&model, &x, &[1, 200]).unwrap();
    assert_eq!(y.shape(), x.shape());

    // Zero parameters -> zero output.
    let mut zero = model.clone();
    for t in zero.params.tensors_mut() {
        *t = Tensor::zeros(t.shape());
    }
    let y0 = forward_infer(&zero, &x, &[1, 200]).unwrap();
    assert!(y0.data().iter().all(|&v| v == 0.0));

    // Fixed seed init + fixed input -> identical output across calls.
    let model2 = DenoiserParams::<f64>::init(config, 99);
    let y2 = forward_infer(&model2, &x, &[1, 200]).unwrap();
    assert_eq!(y.data(), y2.data());

    // Graph forward and inference forward agree.
    let mut tape = Tape::new();
    let bp = BoundParams::bind(&mut tape, &model.params);
    let xid = tape.leaf(x.clone());
    let out = forward_graph(&config, &mut tape, &bp, xid, &[1, 200]).unwrap();
    for (a, b) in tape.value(out).data().iter().zip(y.data()) {
        assert!((a - b).abs() < 1e-12);
    }

    // Shape mismatch is an error naming the offending layer.
    let bad = Tensor::randn(Shape::d4(2, 2, 8, 8), 1.0, &mut rng);
    assert!(forward_infer(&model, &bad, &[1, 200]).is_err());
}

#[test]
fn parameter_budget() {
    let model = DenoiserParams::<f32>::init(UNetConfig::default(), 0);
    let n = model.num_scalars();
    assert!(n <= 2_000_000, "denoiser has {n} parameters, budget is 2e6");
}

#[test]
fn clamp_op() {
    // Probes sit away from the clamp boundaries so the finite-difference
    // oracle stays valid.
    let vals = Tensor::from_vec(
        Shape::d2(2, 3),
        vec![-2.0, -0.4, 0.1, 0.6, 1.8, 0.9],
    );
    gradcheck("clamp", &[vals], |t, v| {
        let y = t.clamp(v[0], -1.0, 1.0);
        let y = t.mul(y, y);
        t.sum_all(y)
    });
}

#[test]
fn vae_elbo_gradcheck() {
    // Tiny VAE: every parameter probed against finite differences through the
    // full ELBO (reconstruction MSE + KL).
    let config = VaeConfig { widths: [2, 3], d_z: 4, h: 8, w: 8 };
    let model = VaeParams::<f64>::init(config, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x: Tensor<f64> = Tensor::randn(Shape::d4(2, 1, 8, 8), 0.3, &mut rng).map(|v| v + 0.5);
    let eps = rand_tensor(Shape::d2(2, 4), &mut rng);

    let mut tape = Tape::new();
    let bp = BoundParams::bind(&mut tape, &model.params);
    let xid = tape.leaf(x.clone());
    let eid = tape.leaf(eps.clone());
    let loss = elbo_graph(&config, &mut tape, &bp, xid, eid).unwrap();
    let grads = tape.backward(loss).unwrap();

    let eval = |probe: &VaeParams<f64>| -> f64 {
        let mut t = Tape::new();
        let bp = BoundParams::bind(&mut t, &probe.params);
        let xid = t.leaf(x.clone());
        let eid = t.leaf(eps.clone());
        let l = elbo_graph(&config, &mut t, &bp, xid, eid).unwrap();
        t.value(l).item()
    };

    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (pi, (name, tensor)) in model.params.iter().enumerate() {
        let analytic = grads.get_or_zeros(bp.vars[pi], tensor.shape());
        let stride = (tensor.len() / 8).max(1);
        for i in (0..tensor.len()).step_by(stride) {
            // Fourth-order central stencil: some ELBO gradients are tiny and
            // the O(h^2) truncation error would dominate the comparison.
            let at = |delta: f64| -> f64 {
                let mut probe = model.clone();
                probe.params.tensors_mut()[pi].data_mut()[i] += delta;
                eval(&probe)
            };
            let fd = (-at(2.0 * FD_STEP) + 8.0 * at(FD_STEP) - 8.0 * at(-FD_STEP)
                + at(-2.0 * FD_STEP))
                / (12.0 * FD_STEP);
            let e = rel_err(analytic.data()[i], fd);
            worst = worst.max(e);
            checked += 1;
            assert!(
                e <= MAX_REL_ERR,
                "vae elbo: {name} elem {i}: analytic {} vs fd {} (rel err {e:.3e})",
                analytic.data()[i],
                fd
            );
        }
    }
    println!("gradcheck vae elbo: {checked} probes, max rel err {worst:.3e}");
}

#[test]
fn ddpm_loss_gradcheck() {
    // The sampled timestep and noise are re-drawn from a fixed seed on every
    // call, making the loss a deterministic function of the parameters.
    let config = UNetConfig { in_channels: 1, widths: [2, 3, 4], time_embed_dim: 8 };
    let model = DenoiserParams::<f64>::init(config, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x0: Tensor<f64> = Tensor::randn(Shape::d4(2, 1, 4, 4), 0.4, &mut rng);
    let schedule = cosine_schedule(40).unwrap();

    let eval = |probe: &DenoiserParams<f64>| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (loss, _) = ddpm_loss(
            probe,
            &x0,
            &schedule,
            NoiseKind::Gaussian,
            &SimplexNoiseConfig::default(),
            &mut rng,
        )
        .unwrap();
        loss
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (_, grads) = ddpm_loss(
        &model,
        &x0,
        &schedule,
        NoiseKind::Gaussian,
        &SimplexNoiseConfig::default(),
        &mut rng,
    )
    .unwrap();

    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (pi, (name, tensor)) in model.params.iter().enumerate() {
        let stride = (tensor.len() / 8).max(1);
        for i in (0..tensor.len()).step_by(stride) {
            let at = |delta: f64| -> f64 {
                let mut probe = model.clone();
                probe.params.tensors_mut()[pi].data_mut()[i] += delta;
                eval(&probe)
            };
            let fd = (-at(2.0 * FD_STEP) + 8.0 * at(FD_STEP) - 8.0 * at(-FD_STEP)
                + at(-2.0 * FD_STEP))
                / (12.0 * FD_STEP);
            let e = rel_err(grads[pi].data()[i], fd);
            worst = worst.max(e);
            checked += 1;
            assert!(
                e <= MAX_REL_ERR,
                "ddpm loss: {name} elem {i}: analytic {} vs fd {} (rel err {e:.3e})",
                grads[pi].data()[i],
                fd
            );
        }
    }
    println!("gradcheck ddpm loss: {checked} probes, max rel err {worst:.3e}");
}
