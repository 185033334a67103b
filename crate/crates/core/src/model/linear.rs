//! Logistic regression over the flattened input. Serves as a reference
//! classifier with closed-form gradients.

use super::{Classifier, Trainable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// `[weights..., bias]`.
    params: Vec<f64>,
}

impl LogisticModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        let mut params = weights;
        params.push(bias);
        Self { params }
    }

    pub fn zeros(n_inputs: usize) -> Self {
        Self { params: vec![0.0; n_inputs + 1] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.params.len() - 1]
    }

    pub fn bias(&self) -> f64 {
        *self.params.last().unwrap()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() + 1 != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, model expects {}",
                x.len(),
                self.params.len() - 1
            )));
        }
        Ok(())
    }
}

impl Classifier for LogisticModel {
    fn input_len(&self) -> usize {
        self.params.len() - 1
    }

    fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.bias() + self.weights().iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }

    fn logit_input_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.logit(x)?, self.weights().to_vec()))
    }
}

impl Trainable for LogisticModel {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logit_param_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let z = self.logit(x)?;
        let mut g = x.to_vec();
        g.push(1.0);
        Ok((z, g))
    }
}
