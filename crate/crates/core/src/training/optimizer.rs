use super::config::OptimizerKind;
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First-order update rule with its state. Gradients are of a quantity to
/// minimize.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { step_size: f64 },
    Adam { step_size: f64, m: Vec<f64>, v: Vec<f64>, t: u64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, step_size: f64, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { step_size },
            OptimizerKind::Adam => Optimizer::Adam {
                step_size,
                m: vec![0.0; n_params],
                v: vec![0.0; n_params],
                t: 0,
            },
        }
    }

    pub fn step(&mut self, phi: &mut [f64], grad: &[f64]) -> Result<()> {
        if phi.len() != grad.len() {
            return Err(Error::shape("gradient and parameter lengths differ"));
        }
        match self {
            Optimizer::Sgd { step_size } => {
                for (p, g) in phi.iter_mut().zip(grad) {
                    *p -= *step_size * g;
                }
            }
            Optimizer::Adam { step_size, m, v, t } => {
                if m.len() != phi.len() {
                    return Err(Error::shape("optimizer state does not match parameters"));
                }
                *t += 1;
                let bias1 = 1.0 - BETA1.powi(*t as i32);
                let bias2 = 1.0 - BETA2.powi(*t as i32);
                for (((p, g), mi), vi) in phi.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = BETA1 * *mi + (1.0 - BETA1) * g;
                    *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
                    let m_hat = *mi / bias1;
                    let v_hat = *vi / bias2;
                    *p -= *step_size * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, 2);
        let mut phi = vec![1.0, -1.0];
        opt.step(&mut phi, &[2.0, -4.0]).unwrap();
        assert_eq!(phi, vec![0.0, 1.0]);
    }

    #[test]
    fn adam_first_step_is_signed_step_size() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 3);
        let mut phi = vec![0.0; 3];
        opt.step(&mut phi, &[5.0, -0.01, 0.0]).unwrap();
        assert!((phi[0] + 0.1).abs() < 1e-8);
        assert!((phi[1] - 0.1).abs() < 1e-5);
        assert_eq!(phi[2], 0.0);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, 2);
        let mut phi = vec![3.0, -2.0];
        for _ in 0..2000 {
            let grad: Vec<f64> = phi.iter().map(|p| 2.0 * (p - 1.0)).collect();
            opt.step(&mut phi, &grad).unwrap();
        }
        assert!(phi.iter().all(|p| (p - 1.0).abs() < 1e-3), "{phi:?}");
    }
}
