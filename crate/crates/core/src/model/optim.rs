use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const RMSPROP_EPS: f64 = 1e-8;

/// RMSprop without momentum: `acc ← ρ·acc + (1−ρ)·g²`, `θ ← θ − η·g/√(acc+ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
    acc: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, decay: f64) -> Self {
        Self {
            learning_rate,
            decay,
            eps: RMSPROP_EPS,
            acc: Vec::new(),
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.acc
    }

    /// Applies one update given gradients in parameter order.
    pub fn step_with(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Tape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if self.acc.is_empty() {
            self.acc = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.acc.len() != params.len() || self.acc.iter().zip(params.iter()).any(|(a, p)| a.len() != p.len()) {
            return Err(Error::shape("optimizer state does not match the parameter set"));
        }
        let (eta, rho, eps) = (self.learning_rate, self.decay, self.eps);
        for ((p, g), acc) in params.iter_mut().zip(grads).zip(&mut self.acc) {
            if g.len() != p.len() {
                return Err(Error::shape(format!(
                    "gradient of length {} for parameter of length {}",
                    g.len(),
                    p.len()
                )));
            }
            for ((theta, &gi), a) in p.data_mut().iter_mut().zip(g.iter()).zip(acc.iter_mut()) {
                *a = rho * *a + (1.0 - rho) * gi * gi;
                *theta -= eta * gi / (*a + eps).sqrt();
            }
        }
        Ok(())
    }

    /// Reads gradients of `vars` off the tape after `backward`.
    pub fn step(&mut self, tape: &Tape, vars: &[Var], params: &mut [&mut Tensor]) -> Result<()> {
        let grads = vars
            .iter()
            .enumerate()
            .map(|(i, &v)| tape.grad(v).ok_or_else(|| Error::Tape(format!("parameter {i} has no gradient"))))
            .collect::<Result<Vec<_>>>()?;
        self.step_with(params, &grads)
    }
}
