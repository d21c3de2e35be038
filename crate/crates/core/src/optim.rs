use ndarray::{Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::network::layers::Param;

/// SGD with momentum and L2 weight decay (decay added to the gradient).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

/// `lr(p) = lr0 · (1 + gamma·p)^(−power)` with `p ∈ [0, 1]` the training progress.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseDecay {
    pub base_lr: f64,
    pub gamma: f64,
    pub power: f64,
}

impl Default for InverseDecay {
    fn default() -> Self {
        Self {
            base_lr: 0.0003,
            gamma: 10.0,
            power: 0.75,
        }
    }
}

impl InverseDecay {
    pub fn lr(&self, progress: f64) -> f64 {
        self.base_lr * (1.0 + self.gamma * progress.clamp(0.0, 1.0)).powf(-self.power)
    }
}

pub fn sgd_step(params: Vec<&mut Param>, lr: f64, config: &SgdConfig) {
    let (mu, wd) = (config.momentum, config.weight_decay);
    for p in params {
        if !p.trainable {
            continue;
        }
        let base = lr as f32 * p.lr_mult;
        let Param {
            value,
            grad,
            velocity,
            row_lr,
            ..
        } = p;
        for (r, ((mut w, g), mut v)) in value
            .axis_iter_mut(Axis(0))
            .zip(grad.axis_iter(Axis(0)))
            .zip(velocity.axis_iter_mut(Axis(0)))
            .enumerate()
        {
            let step = base * row_lr.as_ref().map_or(1.0, |rows| rows[r]);
            Zip::from(&mut w).and(&g).and(&mut v).for_each(|w, &g, v| {
                *v = mu * *v + g + wd * *w;
                *w -= step * *v;
            });
        }
    }
}
