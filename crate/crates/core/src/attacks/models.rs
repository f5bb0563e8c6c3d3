use super::{DecisionModel, GradientModel};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::models::{signal_batch, Discriminator, Mode};

/// The class head in inference mode. Running statistics make each row's
/// output independent of the rest of the batch.
impl GradientModel for Discriminator {
    fn classes(&self) -> usize {
        Discriminator::classes(self)
    }

    fn logits(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(256) {
            out.extend(self.class_logits(chunk)?);
        }
        Ok(out)
    }

    fn loss_grad(&self, xs: &[&[f64]], labels: &[usize]) -> Result<Vec<Vec<f64>>> {
        let width = self.config().width;
        let mut tape = Tape::new();
        let x = tape.variable(signal_batch(xs, width)?);
        let pass = self.forward(&mut tape, x, labels, Mode::Infer, false)?;
        let loss = tape.nll(pass.class_probs, labels, &vec![xs.len() as f64; xs.len()])?;
        tape.backward(loss)?;
        split_grad(&tape.grad_or_zeros(x), width)
    }

    fn margin_grad(
        &self,
        xs: &[&[f64]],
        labels: &[usize],
        floor: f64,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let width = self.config().width;
        let mut tape = Tape::new();
        let x = tape.variable(signal_batch(xs, width)?);
        let pass = self.forward(&mut tape, x, labels, Mode::Infer, false)?;
        let m = tape.margin(pass.class_logits, labels, floor)?;
        let values = tape.value(m).data().to_vec();
        let total = tape.sum(m)?;
        tape.backward(total)?;
        Ok((values, split_grad(&tape.grad_or_zeros(x), width)?))
    }
}

impl DecisionModel for Discriminator {
    fn decide(&self, xs: &[&[f64]]) -> Result<Vec<usize>> {
        self.predict(xs)
    }
}

fn split_grad(g: &[f64], width: usize) -> Result<Vec<Vec<f64>>> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input gradient"));
    }
    Ok(g.chunks(width).map(<[f64]>::to_vec).collect())
}
