//! Adam and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::NetworkParams;

/// Added to the norm in the clip denominator.
pub const CLIP_DELTA: f64 = 1e-12;

/// Square root of the sum of squares of every gradient element.
pub fn global_l2_norm(params: &NetworkParams) -> Result<f64> {
    let mut acc = 0.0;
    for (name, t) in params.iter() {
        let g = t
            .grad()
            .ok_or_else(|| Error::Contract(format!("missing gradient for {name}")))?;
        acc += g.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(acc.sqrt())
}

/// Outcome of one [`clip_grad_norm`] call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    pub pre_norm: f64,
    pub post_norm: f64,
    pub clipped: bool,
    /// Factor applied to every gradient element; 1 when not clipped.
    pub scale: f64,
}

/// Rescales all gradients together when their global L2 norm exceeds `max_norm`.
pub fn clip_grad_norm(params: &mut NetworkParams, max_norm: f64) -> Result<ClipReport> {
    if max_norm.is_nan() || max_norm <= 0.0 {
        return Err(Error::Config(format!("max gradient norm must be positive, got {max_norm}")));
    }
    for (name, t) in params.iter() {
        match t.grad() {
            None => return Err(Error::Contract(format!("missing gradient for {name}"))),
            Some(g) if g.iter().any(|v| !v.is_finite()) => {
                return Err(Error::Numeric(format!("gradient of {name}")))
            }
            _ => {}
        }
    }
    let pre_norm = global_l2_norm(params)?;
    if pre_norm <= max_norm {
        return Ok(ClipReport {
            pre_norm,
            post_norm: pre_norm,
            clipped: false,
            scale: 1.0,
        });
    }
    let scale = max_norm / (pre_norm + CLIP_DELTA);
    for (_, t) in params.iter_mut() {
        if let Some(g) = t.grad_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(ClipReport {
        pre_norm,
        post_norm: global_l2_norm(params)?,
        clipped: true,
        scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    shapes: Vec<Vec<usize>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        let shapes = params.iter().map(|(_, t)| t.shape().to_vec()).collect();
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            shapes,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update; gradients are zeroed afterwards.
    pub fn step(&mut self, params: &mut NetworkParams) -> Result<()> {
        if self.shapes.len() != params.len()
            || params
                .iter()
                .zip(&self.shapes)
                .any(|((_, t), s)| t.shape() != s.as_slice())
        {
            return Err(Error::Contract(
                "optimizer state was not initialized for these parameters".into(),
            ));
        }
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::Contract(format!("missing gradient for {name}")));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (_, tensor)) in params.iter_mut().enumerate() {
            let grad = tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, g), m), v) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            tensor.zero_grad();
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut NetworkParams) -> Result<()> {
    state.step(params)
}
