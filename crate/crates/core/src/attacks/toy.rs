use std::cell::Cell;

use super::{DecisionModel, GradientModel};
use crate::error::{Error, Result};

/// Affine softmax classifier `z = W x + b` with closed-form gradients.
/// Counts evaluated rows so tests can audit query use.
#[derive(Clone, Debug)]
pub struct LinearSoftmax {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    rows_evaluated: Cell<usize>,
}

impl LinearSoftmax {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let n = weights.first().map_or(0, Vec::len);
        if weights.len() < 2 || n == 0 || weights.iter().any(|w| w.len() != n) || bias.len() != weights.len() {
            return Err(Error::shape("linear model needs >= 2 equal-length weight rows and one bias each"));
        }
        Ok(LinearSoftmax {
            weights,
            bias,
            rows_evaluated: Cell::new(0),
        })
    }

    pub fn rows_evaluated(&self) -> usize {
        self.rows_evaluated.get()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.weights[0].len() {
            return Err(Error::shape(format!(
                "input of length {} for a {}-feature model",
                x.len(),
                self.weights[0].len()
            )));
        }
        Ok(())
    }

    fn logit_row(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }

    pub fn softmax(z: &[f64]) -> Vec<f64> {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    fn combine(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.weights[0].len()];
        for (c, w) in coeffs.iter().zip(&self.weights) {
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi += c * wi;
            }
        }
        g
    }
}

impl GradientModel for LinearSoftmax {
    fn classes(&self) -> usize {
        self.weights.len()
    }

    fn logits(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        self.rows_evaluated.set(self.rows_evaluated.get() + xs.len());
        xs.iter()
            .map(|x| {
                self.check(x)?;
                Ok(self.logit_row(x))
            })
            .collect()
    }

    fn loss_grad(&self, xs: &[&[f64]], labels: &[usize]) -> Result<Vec<Vec<f64>>> {
        xs.iter()
            .zip(labels)
            .map(|(x, &y)| {
                self.check(x)?;
                let mut p = Self::softmax(&self.logit_row(x));
                p[y] -= 1.0;
                Ok(self.combine(&p))
            })
            .collect()
    }

    fn margin_grad(
        &self,
        xs: &[&[f64]],
        labels: &[usize],
        floor: f64,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut values = Vec::with_capacity(xs.len());
        let mut grads = Vec::with_capacity(xs.len());
        for (x, &y) in xs.iter().zip(labels) {
            self.check(x)?;
            let z = self.logit_row(x);
            let (j, zj) = z
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != y)
                .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            let m = z[y] - zj;
            let mut c = vec![0.0; z.len()];
            if m > -floor {
                c[y] = 1.0;
                c[j] = -1.0;
                values.push(m);
            } else {
                values.push(-floor);
            }
            grads.push(self.combine(&c));
        }
        Ok((values, grads))
    }
}

impl DecisionModel for LinearSoftmax {
    fn decide(&self, xs: &[&[f64]]) -> Result<Vec<usize>> {
        GradientModel::predict(self, xs)
    }
}
