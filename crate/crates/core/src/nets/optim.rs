//! RMSprop and global-norm gradient clipping.

use super::{Grads, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    pub acc: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(net: &Network, lr: f64, decay: f64, eps: f64) -> RmsProp {
        RmsProp { lr, decay, eps, acc: net.zero_grads() }
    }

    /// acc ← decay·acc + (1 − decay)·g²;  θ ← θ − lr·g/(√acc + ε)
    pub fn step(&mut self, net: &mut Network, grads: &Grads) -> Result<()> {
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        let params = net.params_mut();
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::Shape("gradient layout does not match the network".into()));
        }
        for ((p, g), acc) in params.into_iter().zip(grads).zip(&mut self.acc) {
            for ((p, &g), a) in p.iter_mut().zip(g).zip(acc.iter_mut()) {
                *a = self.decay * *a + (1.0 - self.decay) * g * g;
                *p -= self.lr * g / (a.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &Grads) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales to `max_norm` when the global norm exceeds it; returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= k);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{MlpSpec, NetSpec};

    fn tiny() -> Network {
        let mut net = Network::zeros(&NetSpec::Mlp(MlpSpec { input: 1, hidden: vec![] })).unwrap();
        net.params_mut()[0][0] = 0.7;
        net
    }

    #[test]
    fn zero_gradient_decays_accumulator_only() {
        let mut net = tiny();
        let mut opt = RmsProp::new(&net, 1e-5, 0.99, 1e-8);
        opt.acc[0][0] = 4.0;
        opt.step(&mut net, &vec![vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(net.params()[0][0], 0.7);
        assert_eq!(opt.acc[0][0], 0.99 * 4.0);
    }

    #[test]
    fn first_step_size() {
        let mut net = tiny();
        let mut opt = RmsProp::new(&net, 1e-5, 0.99, 1e-8);
        opt.step(&mut net, &vec![vec![1.0], vec![0.0]]).unwrap();
        let expected = 0.7 - 1e-5 * 1.0 / ((1.0f64 - 0.99).sqrt() + 1e-8);
        assert_eq!(net.params()[0][0], expected);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut net = tiny();
        let mut opt = RmsProp::new(&net, 1e-5, 0.99, 1e-8);
        assert!(opt.step(&mut net, &vec![vec![f64::NAN], vec![0.0]]).is_err());
    }

    #[test]
    fn clipping() {
        let mut small = vec![vec![0.3, 0.0]];
        clip_global_norm(&mut small, 0.5);
        assert_eq!(small, vec![vec![0.3, 0.0]]);
        let mut big = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_global_norm(&mut big, 0.5), 5.0);
        assert!((global_norm(&big) - 0.5).abs() < 1e-15);
        let once = big.clone();
        clip_global_norm(&mut big, 0.5);
        assert_eq!(big, once);
    }
}
