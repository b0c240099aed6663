//! Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Adam state over a fixed, ordered list of parameter tensors.
///
/// A `None` gradient means the parameter is not being trained in this step
/// and is left alone, moments included. A zero gradient still decays the
/// moments, and the step counter advances on every call.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    /// Sizes taken from the current parameter values.
    pub fn for_params<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::len).collect();
        Adam::new(config, &sizes)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam",
                format!("{} params, {} grads, state for {}", params.len(), grads.len(), self.m.len()),
            ));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if g.len() != p.len() || g.len() != self.m[k].len() {
                return Err(Error::shape("adam", format!("gradient {k} has {} entries, parameter {}", g.len(), p.len())));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                *pi -= update;
            }
            p.check_finite("adam")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::vector(vec![1.0, -2.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &[2]).unwrap();
        let g = Tensor::vector(vec![3.0, -0.5]).unwrap();
        opt.step(vec![&mut p], &[Some(g)]).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_advances_only_the_counter() {
        let mut p = Tensor::vector(vec![0.25, 4.0]).unwrap();
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::default(), &[2]).unwrap();
        for _ in 0..3 {
            opt.step(vec![&mut p], &[Some(Tensor::zeros(&[2]))]).unwrap();
        }
        assert!(p.bitwise_eq(&before));
        assert_eq!(opt.steps(), 3);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Tensor::vector(vec![5.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), &[1]).unwrap();
        for _ in 0..2000 {
            let g = Tensor::vector(vec![2.0 * (p.data()[0] - 1.5)]).unwrap();
            opt.step(vec![&mut p], &[Some(g)]).unwrap();
        }
        assert!((p.data()[0] - 1.5).abs() < 1e-3);
    }
}
