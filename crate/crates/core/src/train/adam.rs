//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::image::Tensor;
use crate::nn::{Gradients, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Added to `sqrt(v_hat)`, outside the square root.
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(invalid!("adam lr and eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid!("adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Moment estimates aligned with a [`ParameterStore`]. Slots of
/// non-trainable tensors stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParameterStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn check(&self, params: &ParameterStore, grads: &Gradients) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() || grads.slots.len() != params.len() {
            return Err(shape_err!("optimizer state does not match the parameter store"));
        }
        for (i, p) in params.params().iter().enumerate() {
            let s = p.value.shape();
            if self.m[i].shape() != s || self.v[i].shape() != s || grads.slots[i].shape() != s {
                return Err(shape_err!("optimizer or gradient slot for {} has the wrong shape", p.name));
            }
        }
        Ok(())
    }
}

/// One update of every trainable tensor; `t` is incremented first.
pub fn adam_step(params: &mut ParameterStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    state.check(params, grads)?;
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powf(state.t as f64);
    let c2 = 1.0 - beta2.powf(state.t as f64);
    for (i, p) in params.values_mut().enumerate() {
        if !p.kind.trainable() {
            continue;
        }
        let g = grads.slots[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, theta) in p.value.data_mut().iter_mut().enumerate() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rounds parameters and moments to f32 so a checkpoint stores them exactly.
pub fn round_to_storage(params: &mut ParameterStore, state: &mut AdamState) {
    let round = |t: &mut Tensor| t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    for p in params.values_mut() {
        round(&mut p.value);
    }
    state.m.iter_mut().chain(state.v.iter_mut()).for_each(round);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    fn single(theta: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add("w".into(), ParamKind::Kernel, 1, Tensor::from_vec(vec![1], vec![theta]).unwrap());
        s
    }

    fn grad(g: f64) -> Gradients {
        Gradients {
            slots: vec![Tensor::from_vec(vec![1], vec![g]).unwrap()],
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(0.123456789);
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &grad(0.0), &mut st).unwrap();
        assert_eq!(p.get("w").data()[0].to_bits(), before.get("w").data()[0].to_bits());
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_example() {
        let mut p = single(0.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &grad(0.5), &mut st).unwrap();
        let delta = p.get("w").data()[0];
        assert!((delta - (-0.001 * 0.5 / (0.5 + 1e-7))).abs() < 1e-12, "{delta:e}");
        assert!((delta - (-9.999998e-4)).abs() < 1e-12, "{delta:e}");
    }

    #[test]
    fn first_step_with_smaller_eps() {
        let mut p = single(0.0);
        let cfg = AdamConfig { eps: 1e-8, ..AdamConfig::default() };
        let mut st = AdamState::new(&p, cfg);
        adam_step(&mut p, &grad(0.5), &mut st).unwrap();
        assert!((p.get("w").data()[0] - (-9.9999998e-4)).abs() < 1e-12);
    }

    #[test]
    fn first_step_magnitude_bounds() {
        for g in [1e-6, 1e-3, 0.5, -2.0, 40.0] {
            let mut p = single(1.0);
            let mut st = AdamState::new(&p, AdamConfig::default());
            adam_step(&mut p, &grad(g), &mut st).unwrap();
            let step = (p.get("w").data()[0] - 1.0).abs();
            let lr = 1e-3;
            assert!(step <= lr * (1.0 + 1e-12));
            assert!(step >= 0.999 * lr * g.abs() / (g.abs() + 1e-7));
            assert!((p.get("w").data()[0] - 1.0).signum() == -g.signum());
        }
    }

    #[test]
    fn running_stats_are_not_updated() {
        let mut s = ParameterStore::new();
        s.add("m".into(), ParamKind::BnMean, 0, Tensor::from_vec(vec![1], vec![0.5]).unwrap());
        let mut st = AdamState::new(&s, AdamConfig::default());
        adam_step(&mut s, &grad(1.0), &mut st).unwrap();
        assert_eq!(s.get("m").data()[0], 0.5);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = single(0.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let bad = Gradients {
            slots: vec![Tensor::zeros(&[2])],
        };
        assert!(adam_step(&mut p, &bad, &mut st).is_err());
    }

    #[test]
    fn moments_stay_valid() {
        let mut p = single(0.3);
        let mut st = AdamState::new(&p, AdamConfig::default());
        for k in 0..50 {
            adam_step(&mut p, &grad(((k * 7) % 5) as f64 - 2.0), &mut st).unwrap();
            assert!(st.v[0].data()[0] >= 0.0);
        }
        assert_eq!(st.t, 50);
    }
}
