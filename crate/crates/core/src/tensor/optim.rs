use std::collections::BTreeMap;

use super::{ParamStore, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: each step subtracts `lr * weight_decay * param`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter in `params`. Every parameter
    /// must have an entry in `grads` of matching shape.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| TensorError::MissingGradient(name.to_string()))?;
            if g.shape() != p.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * pd[i]);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `base_lr` at step 0 down to 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(TensorError::Invalid {
            op: "cosine_lr",
            msg: "total_steps must be positive".into(),
        });
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(value));
        s
    }

    fn grad(value: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("p".to_string(), Tensor::scalar(value))])
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = single(0.5);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut s, &grad(1.0), 0.01).unwrap();
        let delta = s.get("p").unwrap().item() - 0.5;
        assert!((delta + 0.01).abs() < 1e-9, "{delta}");
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut s = single(2.0);
        let mut adam = Adam::new(AdamConfig {
            weight_decay: 0.01,
            ..Default::default()
        });
        adam.step(&mut s, &grad(0.0), 0.1).unwrap();
        assert!((s.get("p").unwrap().item() - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-15);

        let mut s = single(2.0);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut s, &grad(0.0), 0.1).unwrap();
        }
        assert_eq!(s.get("p").unwrap().item(), 2.0);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut s = single(0.0);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..50 {
            adam.step(&mut s, &grad(-3.0), 0.01).unwrap();
        }
        assert!(s.get("p").unwrap().item() > 0.4);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = single(0.0);
        let err = Adam::new(AdamConfig::default())
            .step(&mut s, &BTreeMap::new(), 0.1)
            .unwrap_err();
        assert_eq!(err, TensorError::MissingGradient("p".into()));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.01).unwrap(), 0.01);
        assert!(cosine_lr(100, 100, 0.01).unwrap().abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.01).unwrap() - 0.005).abs() < 1e-15);
        assert!(cosine_lr(0, 0, 0.01).is_err());
    }
}
