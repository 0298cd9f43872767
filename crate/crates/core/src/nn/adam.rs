use super::{Gradients, Network, Tensor};
use crate::error::{Error, Result};

/// Bias-corrected Adam with per-tensor moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u32,
}

impl Adam {
    pub fn new(net: &Network<f32>) -> Self {
        Self::for_sizes(net.params().iter().map(|p| p.len()))
    }

    pub fn for_sizes(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes
            .into_iter()
            .map(|n| (vec![0.0; n], vec![0.0; n]))
            .unzip();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// Updates `params` in place. Tensors with `trainable[i] == false` are
    /// left untouched, moments included. Non-finite gradients abort before
    /// anything is modified.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<f32>],
        grads: &[Tensor<f32>],
        names: &[String],
        lr: f32,
        trainable: Option<&[bool]>,
    ) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        for (k, g) in grads.iter().enumerate() {
            if params[k].dims() != g.dims() {
                return Err(Error::shape(
                    format!("gradient for {}", names.get(k).map_or("?", |s| s)),
                    format!("{:?}", params[k].dims()),
                    format!("{:?}", g.dims()),
                ));
            }
            if let Some(index) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: names.get(k).cloned().unwrap_or_else(|| format!("#{k}")),
                    index,
                });
            }
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if trainable.is_some_and(|mask| !mask[k]) {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn step_network(
        &mut self,
        net: &mut Network<f32>,
        grads: &Gradients<f32>,
        lr: f32,
        trainable: Option<&[bool]>,
    ) -> Result<()> {
        let names = net.param_names();
        let mut params = net.params_mut();
        self.step(&mut params, &grads.tensors, &names, lr, trainable)
    }
}

/// One Adam update of `net` using `grads`.
pub fn sgd_adam_step(
    net: &mut Network<f32>,
    grads: &Gradients<f32>,
    lr: f32,
    state: &mut Adam,
) -> Result<()> {
    state.step_network(net, grads, lr, None)
}
