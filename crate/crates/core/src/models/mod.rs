//! Softmax classifiers with exact hand-written gradients.
//!
//! Two architectures share one flat, row-major parameter vector:
//!
//! * `Linear`: `W (d×C)`, `b (C)`.
//! * `Mlp1`: `W1 (d×H)`, `b1 (H)`, ReLU, `W2 (H×C)`, `b2 (C)`.
//!
//! Class probabilities are `softmax(logits / τ)`. The distillation loss is the
//! soft-label cross-entropy `−Σ_c q_c log p_c` against a frozen teacher `q`;
//! with two classes it reduces to the binary sigmoid form.

mod io;
mod train;

pub use io::ModelDocument;
pub use train::{train, Distill, Sgd, Trained};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_gen::Dataset;
use crate::error::{invalid, Error, Result};

/// Probabilities are clipped below at this value before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp1 { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    kind: ModelKind,
    dim: usize,
    classes: usize,
    params: Vec<f64>,
    tau: f64,
}

/// Gradient with the same flat layout as the owning [`Classifier`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(Vec<f64>);

impl Gradient {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

fn param_count(kind: ModelKind, dim: usize, classes: usize) -> usize {
    match kind {
        ModelKind::Linear => dim * classes + classes,
        ModelKind::Mlp1 { hidden } => dim * hidden + hidden + hidden * classes + classes,
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64], tau: f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = ((*v - max) / tau).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Buffers for one forward/backward pass.
pub(crate) struct Scratch {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

impl Classifier {
    /// Zero-initialized linear model (uniform outputs).
    pub fn linear(dim: usize, classes: usize) -> Self {
        Self::zeros(ModelKind::Linear, dim, classes)
    }

    /// One-hidden-layer ReLU network with He-scaled normal weights and zero biases.
    pub fn mlp1<R: Rng + ?Sized>(dim: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(ModelKind::Mlp1 { hidden }, dim, classes);
        let l1 = Normal::new(0.0, (2.0 / dim as f64).sqrt()).unwrap();
        let l2 = Normal::new(0.0, (2.0 / hidden as f64).sqrt()).unwrap();
        let (w1, rest) = m.params.split_at_mut(dim * hidden);
        w1.iter_mut().for_each(|w| *w = l1.sample(rng));
        let w2 = &mut rest[hidden..hidden + hidden * classes];
        w2.iter_mut().for_each(|w| *w = l2.sample(rng));
        m
    }

    pub fn zeros(kind: ModelKind, dim: usize, classes: usize) -> Self {
        Self {
            kind,
            dim,
            classes,
            params: vec![0.0; param_count(kind, dim, classes)],
            tau: 1.0,
        }
    }

    pub fn from_params(
        kind: ModelKind,
        dim: usize,
        classes: usize,
        params: Vec<f64>,
        tau: f64,
    ) -> Result<Self> {
        let expected = param_count(kind, dim, classes);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: params.len(),
            });
        }
        if dim == 0 || classes == 0 {
            return Err(invalid("model needs at least one input and one class"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid("temperature must be positive"));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("model parameters must be finite"));
        }
        Ok(Self {
            kind,
            dim,
            classes,
            params,
            tau,
        })
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        assert!(tau > 0.0, "temperature must be positive");
        self.tau = tau;
        self
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn same_shape(&self, other: &Classifier) -> bool {
        self.kind == other.kind && self.dim == other.dim && self.classes == other.classes
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: data.dim(),
            });
        }
        if data.classes() > self.classes {
            return Err(Error::DimensionMismatch {
                expected: self.classes,
                actual: data.classes(),
            });
        }
        Ok(())
    }

    fn check_pair(&self, teacher: &Classifier) -> Result<()> {
        if teacher.dim != self.dim || teacher.classes != self.classes {
            return Err(Error::DimensionMismatch {
                expected: self.classes,
                actual: teacher.classes,
            });
        }
        Ok(())
    }

    pub(crate) fn scratch(&self) -> Scratch {
        let h = match self.kind {
            ModelKind::Linear => 0,
            ModelKind::Mlp1 { hidden } => hidden,
        };
        Scratch {
            pre: vec![0.0; h],
            hidden: vec![0.0; h],
            out: vec![0.0; self.classes],
        }
    }

    /// Logits of one row into `s.out` (hidden activations left in `s.hidden`).
    pub(crate) fn logits_into(&self, x: &[f64], s: &mut Scratch) {
        let (d, c) = (self.dim, self.classes);
        match self.kind {
            ModelKind::Linear => {
                let (w, b) = self.params.split_at(d * c);
                s.out.copy_from_slice(b);
                for (j, xj) in x.iter().enumerate() {
                    let wr = &w[j * c..(j + 1) * c];
                    for (o, wv) in s.out.iter_mut().zip(wr) {
                        *o += xj * wv;
                    }
                }
            }
            ModelKind::Mlp1 { hidden: h } => {
                let w1 = &self.params[..d * h];
                let b1 = &self.params[d * h..d * h + h];
                let w2 = &self.params[d * h + h..d * h + h + h * c];
                let b2 = &self.params[d * h + h + h * c..];
                s.pre.copy_from_slice(b1);
                for (j, xj) in x.iter().enumerate() {
                    let wr = &w1[j * h..(j + 1) * h];
                    for (p, wv) in s.pre.iter_mut().zip(wr) {
                        *p += xj * wv;
                    }
                }
                for (a, p) in s.hidden.iter_mut().zip(&s.pre) {
                    *a = p.max(0.0);
                }
                s.out.copy_from_slice(b2);
                for (i, hi) in s.hidden.iter().enumerate() {
                    if *hi == 0.0 {
                        continue;
                    }
                    let wr = &w2[i * c..(i + 1) * c];
                    for (o, wv) in s.out.iter_mut().zip(wr) {
                        *o += hi * wv;
                    }
                }
            }
        }
    }

    /// Class probabilities of one row, written to `s.out`.
    pub(crate) fn probs_into(&self, x: &[f64], s: &mut Scratch) {
        self.logits_into(x, s);
        softmax_in_place(&mut s.out, self.tau);
    }

    pub fn logits_row(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.scratch();
        self.logits_into(x, &mut s);
        s.out
    }

    pub fn proba_row(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.scratch();
        self.probs_into(x, &mut s);
        s.out
    }

    /// Row-major `n×d` features to row-major `n×C` probabilities.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        if !features.len().is_multiple_of(self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: features.len() % self.dim,
            });
        }
        let mut s = self.scratch();
        let mut out = Vec::with_capacity(features.len() / self.dim * self.classes);
        for x in features.chunks_exact(self.dim) {
            self.probs_into(x, &mut s);
            out.extend_from_slice(&s.out);
        }
        Ok(out)
    }

    pub fn predict_proba(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_data(data)?;
        self.forward(data.features())
    }

    /// Argmax class per row; ties go to the lowest index.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<usize>> {
        let probs = self.forward(features)?;
        Ok(probs.chunks_exact(self.classes).map(argmax).collect())
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        argmax(&self.logits_row(x))
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        self.check_data(data)?;
        let pred = self.predict(data.features())?;
        let hits = pred
            .iter()
            .zip(data.labels())
            .filter(|(p, y)| p == y)
            .count();
        Ok(hits as f64 / data.len() as f64)
    }

    /// Mean `−log p(true class)`.
    pub fn ce_loss(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        self.check_data(data)?;
        let mut s = self.scratch();
        let total: f64 = data
            .rows()
            .zip(data.labels())
            .map(|(x, &y)| {
                self.probs_into(x, &mut s);
                -s.out[y].max(PROB_FLOOR).ln()
            })
            .sum();
        Ok(total / data.len() as f64)
    }

    /// Mean soft-label cross-entropy of this model against a frozen teacher.
    pub fn kd_loss(&self, teacher: &Classifier, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        self.check_data(data)?;
        self.check_pair(teacher)?;
        let mut s = self.scratch();
        let mut t = teacher.scratch();
        let total: f64 = data
            .rows()
            .map(|x| {
                self.probs_into(x, &mut s);
                teacher.probs_into(x, &mut t);
                -t.out
                    .iter()
                    .zip(&s.out)
                    .map(|(q, p)| q * p.max(PROB_FLOOR).ln())
                    .sum::<f64>()
            })
            .sum();
        Ok(total / data.len() as f64)
    }

    /// Gradient of `CE + kd_coeff·KD` (means over the rows) w.r.t. this model's parameters.
    pub(crate) fn objective_grad(
        &self,
        data: &Dataset,
        rows: &[usize],
        teacher: Option<(&Classifier, f64)>,
        ce_weight: f64,
    ) -> Vec<f64> {
        let (d, c) = (self.dim, self.classes);
        let mut grad = vec![0.0; self.params.len()];
        if rows.is_empty() {
            return grad;
        }
        let mut s = self.scratch();
        let mut t = teacher.map(|(m, _)| m.scratch());
        let mut dz = vec![0.0; c];
        let mut dh = match self.kind {
            ModelKind::Linear => Vec::new(),
            ModelKind::Mlp1 { hidden } => vec![0.0; hidden],
        };
        let scale = 1.0 / (rows.len() as f64 * self.tau);
        for &i in rows {
            let x = data.row(i);
            let y = data.label(i);
            self.probs_into(x, &mut s);
            for k in 0..c {
                let onehot = if k == y { 1.0 } else { 0.0 };
                dz[k] = ce_weight * (s.out[k] - onehot);
            }
            if let (Some((tm, coeff)), Some(ts)) = (teacher, t.as_mut()) {
                tm.probs_into(x, ts);
                for k in 0..c {
                    dz[k] += coeff * (s.out[k] - ts.out[k]);
                }
            }
            for v in dz.iter_mut() {
                *v *= scale;
            }
            match self.kind {
                ModelKind::Linear => {
                    let (gw, gb) = grad.split_at_mut(d * c);
                    for (j, xj) in x.iter().enumerate() {
                        for (g, dv) in gw[j * c..(j + 1) * c].iter_mut().zip(&dz) {
                            *g += xj * dv;
                        }
                    }
                    for (g, dv) in gb.iter_mut().zip(&dz) {
                        *g += dv;
                    }
                }
                ModelKind::Mlp1 { hidden: h } => {
                    let w2 = &self.params[d * h + h..d * h + h + h * c];
                    let (gw1, rest) = grad.split_at_mut(d * h);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(h * c);
                    for i_h in 0..h {
                        let a = s.hidden[i_h];
                        let wr = &w2[i_h * c..(i_h + 1) * c];
                        let mut back = 0.0;
                        for k in 0..c {
                            gw2[i_h * c + k] += a * dz[k];
                            back += wr[k] * dz[k];
                        }
                        dh[i_h] = if s.pre[i_h] > 0.0 { back } else { 0.0 };
                    }
                    for (g, dv) in gb2.iter_mut().zip(&dz) {
                        *g += dv;
                    }
                    for (j, xj) in x.iter().enumerate() {
                        for (g, dv) in gw1[j * h..(j + 1) * h].iter_mut().zip(&dh) {
                            *g += xj * dv;
                        }
                    }
                    for (g, dv) in gb1.iter_mut().zip(&dh) {
                        *g += dv;
                    }
                }
            }
        }
        grad
    }

    pub fn grad_ce(&self, data: &Dataset) -> Result<Gradient> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        self.check_data(data)?;
        let rows: Vec<usize> = (0..data.len()).collect();
        Ok(Gradient(self.objective_grad(data, &rows, None, 1.0)))
    }

    /// Gradient of the distillation loss only; the teacher is treated as a constant.
    pub fn grad_kd(&self, teacher: &Classifier, data: &Dataset) -> Result<Gradient> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        self.check_data(data)?;
        self.check_pair(teacher)?;
        let rows: Vec<usize> = (0..data.len()).collect();
        Ok(Gradient(self.objective_grad(
            data,
            &rows,
            Some((teacher, 1.0)),
            0.0,
        )))
    }

    /// Representation used for divergence diagnostics: raw features for the
    /// linear model, post-ReLU hidden activations for the MLP.
    pub fn representation(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::Linear => x.to_vec(),
            ModelKind::Mlp1 { .. } => {
                let mut s = self.scratch();
                self.logits_into(x, &mut s);
                s.hidden
            }
        }
    }

    pub fn representation_dim(&self) -> usize {
        match self.kind {
            ModelKind::Linear => self.dim,
            ModelKind::Mlp1 { hidden } => hidden,
        }
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn two_rows(labels: Vec<usize>) -> Dataset {
        let n = labels.len();
        Dataset::new(1, 2, vec![1.0; n], labels).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Classifier::linear(4, 3);
        let p = m
            .forward(&[0.3, -1.0, 2.0, 5.0, 1.0, 1.0, 1.0, 1.0])
            .unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(m.predict(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0]);
    }

    #[test]
    fn two_class_softmax_is_sigmoid() {
        // logits (2, 0) at x = 1
        let m = Classifier::from_params(ModelKind::Linear, 1, 2, vec![2.0, 0.0, 0.0, 0.0], 1.0)
            .unwrap();
        let p = m.proba_row(&[1.0]);
        assert_abs_diff_eq!(p[0], 0.8807970779778823, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.11920292202211755, epsilon = 1e-12);
        for z in [-3.0, -0.5, 0.0, 1.7] {
            let m = Classifier::from_params(ModelKind::Linear, 1, 2, vec![z, 0.0, 0.0, 0.0], 1.0)
                .unwrap();
            assert_abs_diff_eq!(
                m.proba_row(&[1.0])[0],
                1.0 / (1.0 + (-z as f64).exp()),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn forward_rejects_ragged_input() {
        assert!(Classifier::linear(3, 2).forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn ce_examples() {
        let uniform = Classifier::linear(1, 2);
        assert_abs_diff_eq!(
            uniform.ce_loss(&two_rows(vec![0, 1, 1])).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );

        // p(class 0) = σ(z) with z = ln 3 gives 0.75 / 0.25
        let z = 3f64.ln();
        let m =
            Classifier::from_params(ModelKind::Linear, 1, 2, vec![z, 0.0, 0.0, 0.0], 1.0).unwrap();
        let d = Dataset::new(1, 2, vec![0.0, 1.0], vec![0, 1]).unwrap();
        // row 1: x = 0 → p = 0.5 on class 0; row 2: x = 1 → p(1) = 0.25
        assert_abs_diff_eq!(
            m.ce_loss(&d).unwrap(),
            (2f64.ln() + 4f64.ln()) / 2.0,
            epsilon = 1e-12
        );

        let sure = Classifier::from_params(ModelKind::Linear, 1, 2, vec![0.0, 0.0, 40.0, 0.0], 1.0)
            .unwrap();
        assert!(sure.ce_loss(&two_rows(vec![0, 0])).unwrap() < 1e-12);
        assert!(matches!(
            uniform.ce_loss(&Dataset::empty(1, 2)),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn kd_examples() {
        let uniform = Classifier::linear(1, 2);
        let d = two_rows(vec![0, 1]);
        assert_abs_diff_eq!(
            uniform.kd_loss(&uniform, &d).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );

        let teacher =
            Classifier::from_params(ModelKind::Linear, 1, 2, vec![3f64.ln(), 0.0, 0.0, 0.0], 1.0)
                .unwrap();
        assert_abs_diff_eq!(
            uniform.kd_loss(&teacher, &d).unwrap(),
            2f64.ln(),
            epsilon = 1e-12
        );

        // a near one-hot teacher turns KD into CE against its argmax labels
        let hard = Classifier::from_params(ModelKind::Linear, 1, 2, vec![40.0, 0.0, 0.0, 0.0], 1.0)
            .unwrap();
        let student =
            Classifier::from_params(ModelKind::Linear, 1, 2, vec![0.4, -0.2, 0.1, 0.0], 1.0)
                .unwrap();
        let kd = student.kd_loss(&hard, &two_rows(vec![0, 0])).unwrap();
        let ce = student.ce_loss(&two_rows(vec![0, 0])).unwrap();
        assert_abs_diff_eq!(kd, ce, epsilon = 1e-12);

        assert!(uniform.kd_loss(&Classifier::linear(1, 3), &d).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let d = Dataset::new(1, 2, vec![0.0, 1.0, 2.0, 3.0], vec![0, 1, 0, 1]).unwrap();
        assert_eq!(Classifier::linear(1, 2).accuracy(&d).unwrap(), 0.5);
        let perfect = Dataset::new(1, 2, vec![0.0, 1.0], vec![0, 0]).unwrap();
        assert_eq!(Classifier::linear(1, 2).accuracy(&perfect).unwrap(), 1.0);
        assert!(Classifier::linear(1, 2)
            .accuracy(&Dataset::empty(1, 2))
            .is_err());
    }

    #[test]
    fn kd_gradient_vanishes_when_student_matches_teacher() {
        let mut rng = seeded(2);
        let m = Classifier::mlp1(3, 5, 4, &mut rng);
        let feats: Vec<f64> = (0..24)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let d = Dataset::new(3, 4, feats, vec![0, 1, 2, 3, 0, 1, 2, 3]).unwrap();
        let g = m.grad_kd(&m, &d).unwrap();
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn binary_kd_gradient_is_sigmoid_difference() {
        // logit-difference parameterization: class-0 weight w, class-1 weight 0
        let (ws, wt, x) = (0.7, -0.4, 1.3);
        let student =
            Classifier::from_params(ModelKind::Linear, 1, 2, vec![ws, 0.0, 0.0, 0.0], 1.0).unwrap();
        let teacher =
            Classifier::from_params(ModelKind::Linear, 1, 2, vec![wt, 0.0, 0.0, 0.0], 1.0).unwrap();
        let d = Dataset::new(1, 2, vec![x], vec![0]).unwrap();
        let g = student.grad_kd(&teacher, &d).unwrap();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let expected = (sig(ws * x) - sig(wt * x)) * x;
        // gradient on the class-0 weight; the class-1 weight gets the mirror image
        assert_abs_diff_eq!(g.as_slice()[0], expected, epsilon = 1e-14);
        assert_abs_diff_eq!(g.as_slice()[1], -expected, epsilon = 1e-14);
    }

    #[test]
    fn self_distillation_is_entropy() {
        let mut rng = seeded(8);
        let m = Classifier::mlp1(2, 4, 3, &mut rng);
        let feats: Vec<f64> = (0..20)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let d = Dataset::new(2, 3, feats, vec![0; 10]).unwrap();
        let entropy: f64 = d
            .rows()
            .map(|x| -m.proba_row(x).iter().map(|p| p * p.ln()).sum::<f64>())
            .sum::<f64>()
            / 10.0;
        assert_abs_diff_eq!(m.kd_loss(&m, &d).unwrap(), entropy, epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(params in prop::collection::vec(-5.0f64..5.0, 12), x in prop::collection::vec(-3.0f64..3.0, 9), tau in 0.5f64..3.0) {
            let m = Classifier::from_params(ModelKind::Linear, 3, 3, params, tau).unwrap();
            let p = m.forward(&x).unwrap();
            for row in p.chunks(3) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
