use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::data_gen::Dataset;
use crate::error::{invalid, Error, Result};

/// Mini-batch SGD settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub eta: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl Sgd {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid("learning rate must be finite and nonnegative"));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(invalid("epochs and batch size must be at least 1"));
        }
        Ok(())
    }
}

/// A frozen teacher and the weight of its distillation term.
#[derive(Debug, Clone, Copy)]
pub struct Distill<'a> {
    pub teacher: &'a Classifier,
    pub coeff: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Classifier,
    /// Number of SGD steps taken; zero means the call was a no-op.
    pub steps: usize,
}

impl Trained {
    pub fn is_noop(&self) -> bool {
        self.steps == 0
    }
}

/// SGD on `CE(model; data) + coeff·KD(model, teacher; data)`.
///
/// The data order is reshuffled every epoch from `rng`; the final short batch
/// is kept. A zero coefficient drops the teacher entirely, so the trajectory
/// matches plain cross-entropy training bit for bit.
pub fn train<R: Rng + ?Sized>(
    model: &Classifier,
    data: &Dataset,
    distill: Option<Distill<'_>>,
    sgd: &Sgd,
    rng: &mut R,
) -> Result<Trained> {
    sgd.validate()?;
    if let Some(d) = distill {
        if !(d.coeff >= 0.0 && d.coeff.is_finite()) {
            return Err(invalid("distillation coefficient must be nonnegative"));
        }
        if d.teacher.dim() != model.dim() || d.teacher.classes() != model.classes() {
            return Err(Error::DimensionMismatch {
                expected: model.classes(),
                actual: d.teacher.classes(),
            });
        }
    }
    if data.is_empty() {
        return Ok(Trained {
            model: model.clone(),
            steps: 0,
        });
    }
    if data.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: data.dim(),
        });
    }
    let teacher = distill
        .filter(|d| d.coeff != 0.0)
        .map(|d| (d.teacher, d.coeff));

    let mut current = model.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut steps = 0;
    for _ in 0..sgd.epochs {
        order.shuffle(rng);
        for batch in order.chunks(sgd.batch) {
            let grad = current.objective_grad(data, batch, teacher, 1.0);
            for (p, g) in current.params.iter_mut().zip(&grad) {
                *p -= sgd.eta * g;
            }
            steps += 1;
        }
    }
    Ok(Trained {
        model: current,
        steps,
    })
}
