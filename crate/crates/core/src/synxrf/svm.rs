//! One-vs-rest linear SVMs trained in the primal.
//!
//! Each class minimizes `λ‖w‖² + mean(max(0, 1 − yᵢ(w·xᵢ + b)))` over
//! standardized inputs by full-batch subgradient descent with step
//! `η₀/√t`, keeping the iterate with the lowest objective. Probabilities
//! are a softmax over the margins divided by a temperature.

use super::{check_input, check_training, softmax_in_place, standardizer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    /// Initial step η₀.
    pub step: f64,
    pub temperature: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            epochs: 500,
            step: 1.0,
            temperature: 1.0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config("svm lambda must be finite and nonnegative".into()));
        }
        if self.epochs == 0 || !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::Config("svm needs epochs ≥ 1 and a positive step".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config("svm temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    /// `[C,d]` weights over standardized inputs.
    weights: Tensor,
    bias: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    lambda: f64,
    temperature: f64,
}

fn objective(x: &Tensor, y: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = y.len();
    let hinge: f64 = (0..n).map(|i| (1.0 - y[i] * (dot(x.row(i), w) + b)).max(0.0)).sum();
    lambda * dot(w, w) + hinge / n as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fit_binary(x: &Tensor, y: &[f64], config: &SvmConfig) -> (Vec<f64>, f64) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let mut best = (objective(x, y, &w, b, config.lambda), w.clone(), b);
    for t in 1..=config.epochs {
        let mut gw: Vec<f64> = w.iter().map(|v| 2.0 * config.lambda * v).collect();
        let mut gb = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            let row = x.row(i);
            if yi * (dot(row, &w) + b) < 1.0 {
                gw.iter_mut().zip(row).for_each(|(g, v)| *g -= yi * v / n as f64);
                gb -= yi / n as f64;
            }
        }
        let eta = config.step / (t as f64).sqrt();
        w.iter_mut().zip(&gw).for_each(|(v, g)| *v -= eta * g);
        b -= eta * gb;
        let obj = objective(x, y, &w, b, config.lambda);
        if obj < best.0 {
            best = (obj, w.clone(), b);
        }
    }
    (best.1, best.2)
}

pub fn svm_fit(x: &Tensor, labels: &[usize], config: &SvmConfig) -> Result<SvmModel> {
    config.validate()?;
    let classes = check_training("svm_fit", x, labels)?;
    let present = (0..classes).filter(|c| labels.contains(c)).count();
    if present < 2 {
        return Err(Error::InvalidArgument("svm needs at least two classes present".into()));
    }
    let (mean, scale, xs) = standardizer(x);
    let fits = crate::par::map(&(0..classes).collect::<Vec<_>>(), |&c| {
        let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
        fit_binary(&xs, &y, config)
    });
    let d = x.shape()[1];
    let mut weights = Vec::with_capacity(classes * d);
    let mut bias = Vec::with_capacity(classes);
    for (w, b) in fits {
        weights.extend(w);
        bias.push(b);
    }
    Ok(SvmModel {
        weights: Tensor::new(vec![classes, d], weights).expect("classes ≥ 2"),
        bias,
        mean,
        scale,
        lambda: config.lambda,
        temperature: config.temperature,
    })
}

impl SvmModel {
    pub(crate) fn from_parts(
        weights: Tensor,
        bias: Vec<f64>,
        mean: Vec<f64>,
        scale: Vec<f64>,
        lambda: f64,
        temperature: f64,
    ) -> Result<Self> {
        let ok = weights.shape().len() == 2
            && bias.len() == weights.shape()[0]
            && mean.len() == weights.shape()[1]
            && scale.len() == mean.len()
            && weights.is_finite();
        if !ok {
            return Err(Error::InvalidArgument("inconsistent svm parameters".into()));
        }
        Ok(Self {
            weights,
            bias,
            mean,
            scale,
            lambda,
            temperature,
        })
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::Config("svm temperature must be positive".into()));
        }
        self.temperature = temperature;
        Ok(self)
    }

    /// Raw per-class margins `w·x̂ + b`, affine in the input.
    pub fn decision(&self, x: &Tensor) -> Result<Tensor> {
        let n = check_input("svm_decision", x, self.features())?;
        let c = self.classes();
        let mut out = Vec::with_capacity(n * c);
        let mut z = vec![0.0; self.features()];
        for i in 0..n {
            for (j, v) in x.row(i).iter().enumerate() {
                z[j] = (v - self.mean[j]) / self.scale[j];
            }
            out.extend((0..c).map(|k| dot(self.weights.row(k), &z) + self.bias[k]));
        }
        Ok(Tensor::new(vec![n, c], out).expect("n ≥ 1"))
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let mut t = self.decision(x)?;
        let c = self.classes();
        for row in t.data_mut().chunks_exact_mut(c) {
            row.iter_mut().for_each(|v| *v /= self.temperature);
            softmax_in_place(row);
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vote::argmax_rows;

    #[test]
    fn equal_margins_give_uniform_rows() {
        let m = SvmModel::from_parts(
            Tensor::zeros(&[3, 2]),
            vec![0.5; 3],
            vec![0.0; 2],
            vec![1.0; 2],
            0.0,
            1.0,
        )
        .unwrap();
        let p = m
            .predict_proba(&Tensor::from_rows(&[vec![4.0, -2.0]]).unwrap())
            .unwrap();
        assert!(p.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn temperature_keeps_argmax() {
        let x = Tensor::from_rows(&[vec![0.0, 0.1], vec![3.0, 0.0], vec![0.0, 3.0], vec![3.0, 3.1]]).unwrap();
        let m = svm_fit(&x, &[0, 1, 2, 1], &SvmConfig::default()).unwrap();
        let raw = argmax_rows(&m.decision(&x).unwrap());
        for t in [0.1, 1.0, 10.0] {
            let p = m.clone().with_temperature(t).unwrap().predict_proba(&x).unwrap();
            assert_eq!(argmax_rows(&p), raw);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(svm_fit(&x, &[1, 1], &SvmConfig::default()).is_err());
    }
}
