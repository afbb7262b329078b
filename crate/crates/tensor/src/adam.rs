//! Adam optimiser over named f32 parameter tensors.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
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

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::InvalidArgument(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// First and second moment buffers of parameter `i`, once initialised.
    pub fn moments(&self, i: usize) -> Option<(&[f32], &[f32])> {
        Some((self.m.get(i)?.as_slice(), self.v.get(i)?.as_slice()))
    }

    /// Applies one bias-corrected update. All gradients are checked before any
    /// parameter is touched, so a non-finite gradient leaves the model intact.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [(String, &mut Tensor)],
        grads: &[Option<Tensor>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam",
                dim: "parameter count".into(),
                expected: params.len(),
                actual: grads.len(),
            });
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "adam",
                        dim: format!("{name} numel"),
                        expected: p.numel(),
                        actual: g.numel(),
                    });
                }
                g.ensure_finite(&format!("gradient of {name}"))?;
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut w = Tensor::<f32>::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::<f32>::new(&[3], vec![3.0, -0.25, 100.0]).unwrap();
        let mut st = AdamState::new();
        st.step(&cfg, &mut [("w".into(), &mut w)], &[Some(g)]).unwrap();
        let expect = [0.99, -1.99, 0.49];
        for (a, b) in w.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn non_finite_gradient_is_named_and_leaves_params() {
        let cfg = AdamConfig::default();
        let mut a = Tensor::<f32>::ones(&[2]);
        let mut b = Tensor::<f32>::ones(&[2]);
        let ga = Tensor::<f32>::ones(&[2]);
        let gb = Tensor::<f32>::new(&[2], vec![0.0, f32::INFINITY]).unwrap();
        let mut st = AdamState::new();
        let err = st
            .step(
                &cfg,
                &mut [("a".into(), &mut a), ("conv2.bias".into(), &mut b)],
                &[Some(ga), Some(gb)],
            )
            .unwrap_err();
        assert_eq!(err, TensorError::NonFinite("gradient of conv2.bias".into()));
        assert_eq!(a.data(), &[1.0, 1.0]);
        assert_eq!(st.step, 0);
    }
}
