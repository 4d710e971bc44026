use crate::error::{Error, Result};
use crate::nn::params::ParamSet;
use crate::nn::tensor::{Scalar, Tensor};

/// AdamW hyperparameters plus per-parameter moment state.
#[derive(Clone)]
pub struct OptimizerState<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

pub struct AdamW;

impl AdamW {
    /// Paper defaults for the diffusion model: AdamW, lr 1e-6.
    pub fn ddpm_default<F: Scalar>(params: &ParamSet<F>) -> OptimizerState<F> {
        OptimizerState::new(params, 1e-6, 0.9, 0.999, 1e-8, 1e-2)
    }

    /// Plain Adam (no decoupled decay), paper default for the VAE: lr 1e-3.
    pub fn vae_default<F: Scalar>(params: &ParamSet<F>) -> OptimizerState<F> {
        OptimizerState::new(params, 1e-3, 0.9, 0.999, 1e-8, 0.0)
    }
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(
        params: &ParamSet<F>,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    ) -> Self {
        let m = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let v = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        OptimizerState { lr, beta1, beta2, eps, weight_decay, step: 0, m, v }
    }

    /// One decoupled-weight-decay Adam update with bias correction.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &[Tensor<F>]) -> Result<()> {
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        for (name, g) in params.names().iter().zip(grads) {
            if !g.all_finite() {
                return Err(Error::config(format!("non-finite gradient for parameter {name}")));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2) = (F::fl(self.beta1), F::fl(self.beta2));
        let (ob1, ob2) = (F::fl(1.0 - self.beta1), F::fl(1.0 - self.beta2));
        let lr = F::fl(self.lr);
        let eps = F::fl(self.eps);
        let decay = F::fl(1.0 - self.lr * self.weight_decay);
        let inv_bc1 = F::fl(1.0 / bc1);
        let inv_bc2 = F::fl(1.0 / bc2);

        for ((p, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + ob1 * gi;
                let vi = b2 * v.data()[i] + ob2 * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi * inv_bc1;
                let vhat = vi * inv_bc2;
                pd[i] = pd[i] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment state as a named parameter set (`m.<name>` / `v.<name>`),
    /// suitable for checkpointing alongside the model parameters.
    pub fn moments_param_set(&self, names: &[String]) -> ParamSet<F> {
        assert_eq!(names.len(), self.m.len(), "name count mismatch");
        let mut set = ParamSet::new();
        for (name, t) in names.iter().zip(&self.m) {
            set.insert(format!("m.{name}"), t.clone());
        }
        for (name, t) in names.iter().zip(&self.v) {
            set.insert(format!("v.{name}"), t.clone());
        }
        set
    }

    /// Restores moment state saved by [`moments_param_set`].
    pub fn load_moments(&mut self, step: u64, set: &ParamSet<F>, names: &[String]) -> Result<()> {
        let fetch = |prefix: &str, name: &str| {
            set.get(&format!("{prefix}.{name}"))
                .cloned()
                .ok_or_else(|| Error::config(format!("missing optimizer moment {prefix}.{name}")))
        };
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for name in names {
            m.push(fetch("m", name)?);
            v.push(fetch("v", name)?);
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
