//! AdamW with decoupled weight decay, plus the learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::ParamSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Linear warmup, then flat.
    #[default]
    Constant,
    /// Linear warmup, then cosine decay to zero at the last epoch.
    Cosine,
}

/// Learning rate for 1-based `epoch`.
pub fn lr_at(base: f64, epoch: usize, warmup: usize, total: usize, schedule: Schedule) -> f64 {
    if warmup > 0 && epoch <= warmup {
        return base * epoch as f64 / warmup as f64;
    }
    match schedule {
        Schedule::Constant => base,
        Schedule::Cosine => {
            let span = total.saturating_sub(warmup).max(1) as f64;
            let progress = (epoch - warmup) as f64 / span;
            0.5 * base * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moments per parameter, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. `grads[i]` is `None` for frozen parameters, which are
    /// left untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f64>>], lr: f64, hp: &AdamHyper) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(contract("gradient list does not match the parameter set"));
        }
        self.step += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.step as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params.by_index_mut(i);
            if !p.trainable {
                continue;
            }
            let decay = if p.decay { lr * hp.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g[j];
                v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g[j] * g[j];
                *w -= decay * *w;
                *w -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + hp.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use r3d_autodiff::Tensor;

    use super::*;
    use crate::model::Param;

    fn one_param(values: Vec<f64>, decay: bool) -> ParamSet {
        let mut s = ParamSet::default();
        s.push(Param {
            name: "w".into(),
            value: Tensor::new(vec![values.len()], values).unwrap(),
            trainable: true,
            decay,
        });
        s
    }

    #[test]
    fn warmup_schedule() {
        assert!((lr_at(8e-4, 1, 10, 150, Schedule::Constant) - 8e-5).abs() < 1e-18);
        assert_eq!(lr_at(8e-4, 10, 10, 150, Schedule::Constant), 8e-4);
        assert_eq!(lr_at(8e-4, 90, 10, 150, Schedule::Constant), 8e-4);
        assert!(lr_at(8e-4, 150, 10, 150, Schedule::Cosine).abs() < 1e-18);
        assert_eq!(lr_at(1.0, 3, 0, 5, Schedule::Constant), 1.0);
    }

    #[test]
    fn zero_decay_zero_grad_is_identity() {
        let mut p = one_param(vec![1.0, -2.0], true);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let hp = AdamHyper {
            weight_decay: 0.0,
            ..AdamHyper::default()
        };
        st.step(&mut p, &[Some(vec![0.0, 0.0])], 1e-3, &hp).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one_param(vec![1.0], false);
        let mut st = AdamState::new(&p);
        st.step(&mut p, &[Some(vec![0.5])], 0.1, &AdamHyper::default()).unwrap();
        assert!((p.by_index(0).value.data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = one_param(vec![2.0], true);
        let mut st = AdamState::new(&p);
        let hp = AdamHyper {
            weight_decay: 0.5,
            ..AdamHyper::default()
        };
        st.step(&mut p, &[Some(vec![0.0])], 0.1, &hp).unwrap();
        assert!((p.by_index(0).value.data()[0] - 1.9).abs() < 1e-15);
    }
}
