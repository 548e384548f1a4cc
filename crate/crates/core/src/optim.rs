//! AdamW with per-group learning rates.
//!
//! ```text
//! m = b1 m + (1 - b1) g
//! v = b2 v + (1 - b2) g^2
//! p = p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps) - lr * wd * p
//! ```
//!
//! Weight decay is decoupled from the gradient and applied only to tensors
//! with two or more dimensions (matrices); biases, norms and the positional
//! table's bias-like vectors are not decayed.

use std::collections::HashMap;

use crate::arcface::ArcFaceHead;
use crate::encoder::{Gradients, VitEncoder};
use crate::error::{Error, Result};
use crate::lr_schedule::{ParamGroup, ParamRef};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.05 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let AdamWConfig { beta1, beta2, eps, weight_decay } = *self;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config(format!("AdamW betas must lie in [0, 1), got ({beta1}, {beta2})")));
        }
        if eps.is_nan() || eps <= 0.0 || weight_decay.is_nan() || weight_decay < 0.0 {
            return Err(Error::Config("AdamW needs eps > 0 and weight_decay >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    state: HashMap<ParamRef, Moments>,
}

fn update(
    config: &AdamWConfig,
    moments: &mut Moments,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
    decay: bool,
    (bc1, bc2): (f64, f64),
) {
    if moments.m.len() != params.len() {
        moments.m = vec![0.0; params.len()];
        moments.v = vec![0.0; params.len()];
    }
    let wd = if decay { config.weight_decay } else { 0.0 };
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut moments.m).zip(&mut moments.v) {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + config.eps) + wd * *p);
    }
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, step: 0, state: HashMap::new() })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `groups`. `lr_scale` multiplies every
    /// group's rate (1.0 for a constant schedule). Parameters are rounded to
    /// f32 afterwards so checkpoints reproduce them exactly.
    pub fn step(
        &mut self,
        groups: &[ParamGroup],
        lr_scale: f64,
        encoder: &mut VitEncoder,
        encoder_grads: &Gradients,
        head: &mut ArcFaceHead,
        head_grads: &[f64],
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.config.beta1.powi(t);
        let bc2 = 1.0 - self.config.beta2.powi(t);
        for group in groups {
            let lr = group.lr * lr_scale;
            for &slot in &group.params {
                let moments = self.state.entry(slot).or_default();
                match slot {
                    ParamRef::Encoder(id) => {
                        let p = encoder.store_mut().get_mut(id);
                        let decay = p.shape.len() >= 2;
                        update(&self.config, moments, &mut p.data, encoder_grads.get(id), lr, decay, (bc1, bc2));
                    }
                    ParamRef::Head => {
                        update(&self.config, moments, head.weights_mut(), head_grads, lr, true, (bc1, bc2));
                    }
                }
            }
        }
        encoder.snap_to_f32();
        head.snap_to_f32();
    }
}
