//! Optimizers over a [`ParamStore`] plus a cosine learning-rate schedule.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::param::{GradBuffer, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adamw,
}

pub enum Optimizer {
    SgdMomentum {
        momentum: f64,
        velocity: Vec<ArrayD<f64>>,
    },
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
        step: u64,
        m: Vec<ArrayD<f64>>,
        v: Vec<ArrayD<f64>>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<ArrayD<f64>> = store.iter().map(|(_, v)| ArrayD::zeros(v.raw_dim())).collect();
        match kind {
            OptimizerKind::SgdMomentum => Optimizer::SgdMomentum {
                momentum: 0.9,
                velocity: zeros,
            },
            OptimizerKind::Adamw => Optimizer::AdamW {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay,
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer, lr: f64) {
        match self {
            Optimizer::SgdMomentum { momentum, velocity } => {
                for id in store.ids().collect::<Vec<_>>() {
                    let g = grads.get(id);
                    let vel = &mut velocity[id.0];
                    vel.zip_mut_with(g, |v, &gv| *v = *momentum * *v + gv);
                    let vel = vel.clone();
                    store.value_mut(id).zip_mut_with(&vel, |p, &v| *p -= lr * v);
                }
            }
            Optimizer::AdamW { beta1, beta2, eps, weight_decay, step, m, v } => {
                *step += 1;
                let bc1 = 1.0 - beta1.powi(*step as i32);
                let bc2 = 1.0 - beta2.powi(*step as i32);
                for id in store.ids().collect::<Vec<_>>() {
                    let g = grads.get(id);
                    let mi = &mut m[id.0];
                    let vi = &mut v[id.0];
                    mi.zip_mut_with(g, |mv, &gv| *mv = *beta1 * *mv + (1.0 - *beta1) * gv);
                    vi.zip_mut_with(g, |vv, &gv| *vv = *beta2 * *vv + (1.0 - *beta2) * gv * gv);
                    let p = store.value_mut(id);
                    let (mi, vi) = (&*mi, &*vi);
                    ndarray::Zip::from(p).and(mi).and(vi).for_each(|pv, &mv, &vv| {
                        let mhat = mv / bc1;
                        let vhat = vv / bc2;
                        *pv -= lr * (mhat / (vhat.sqrt() + *eps) + *weight_decay * *pv);
                    });
                }
            }
        }
    }
}

/// Cosine decay from `base_lr` to zero over `total_steps`.
pub fn cosine_lr(base_lr: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let t = (step as f64 / total_steps as f64).min(1.0);
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * t).cos())
}
