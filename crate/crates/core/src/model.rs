//! Linear logistic base losses and the zero-one evaluation loss.
//!
//! Weights are stored as a `rows x inputs` matrix with one row for binary tasks
//! and one row per class otherwise. With `includes_bias` the last column acts on
//! an implicit constant-one feature.

use ndarray::{Array1, Array2, ArrayView1};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Array2<f64>,
    pub includes_bias: bool,
}

/// Per-example losses and their gradients with respect to the flattened weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub values: Vec<f64>,
    /// `n x n_params`, row `i` holds the gradient of `values[i]`.
    pub grads: Array2<f64>,
}

impl LossBatch {
    /// A batch of loss values with no attached parameters.
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        LossBatch {
            values,
            grads: Array2::zeros((n, 0)),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.grads.ncols()
    }

    /// `sum_i coef[i] * grads[i]`.
    pub fn weighted_grad(&self, coef: &[f64]) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_params());
        for (row, &c) in self.grads.rows().into_iter().zip(coef) {
            if c != 0.0 {
                out.scaled_add(c, &row);
            }
        }
        out
    }
}

impl LinearModel {
    /// Zero-initialised model for `n_classes` classes over `n_features` inputs.
    pub fn zeros(n_classes: usize, n_features: usize, includes_bias: bool) -> Self {
        let rows = if n_classes <= 2 { 1 } else { n_classes };
        LinearModel {
            weights: Array2::zeros((rows, n_features + usize::from(includes_bias))),
            includes_bias,
        }
    }

    pub fn n_features(&self) -> usize {
        self.weights.ncols() - usize::from(self.includes_bias)
    }

    pub fn n_params(&self) -> usize {
        self.weights.len()
    }

    pub fn is_binary(&self) -> bool {
        self.weights.nrows() == 1
    }

    pub fn n_classes(&self) -> usize {
        if self.is_binary() {
            2
        } else {
            self.weights.nrows()
        }
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn flat(&self) -> &[f64] {
        self.weights.as_slice().expect("weights are contiguous")
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        self.weights.as_slice_mut().expect("weights are contiguous")
    }

    fn check_dim(&self, x: &ArrayView1<f64>) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn score_row(&self, k: usize, x: &ArrayView1<f64>) -> f64 {
        let w = self.weights.row(k);
        let d = self.n_features();
        let mut s = 0.0;
        for j in 0..d {
            s += w[j] * x[j];
        }
        if self.includes_bias {
            s += w[d];
        }
        s
    }

    pub fn scores(&self, x: ArrayView1<f64>) -> Vec<f64> {
        (0..self.weights.nrows()).map(|k| self.score_row(k, &x)).collect()
    }

    /// Predicted class; ties go to the lowest index (a zero binary score predicts class 0).
    pub fn predict(&self, x: ArrayView1<f64>) -> usize {
        if self.is_binary() {
            return usize::from(self.score_row(0, &x) > 0.0);
        }
        let scores = self.scores(x);
        let mut best = 0;
        for (k, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = k;
            }
        }
        best
    }

    /// Writes `coef * [x, 1]` into row `k` of a flattened gradient.
    #[inline]
    fn write_outer(&self, out: &mut [f64], k: usize, coef: f64, x: &ArrayView1<f64>) {
        let width = self.weights.ncols();
        let d = self.n_features();
        let row = &mut out[k * width..(k + 1) * width];
        for j in 0..d {
            row[j] = coef * x[j];
        }
        if self.includes_bias {
            row[d] = coef;
        }
    }

    fn binary_into(&self, x: &ArrayView1<f64>, y: f64, out: &mut [f64]) -> f64 {
        let margin = y * self.score_row(0, x);
        let loss = log1p_exp(-margin);
        self.write_outer(out, 0, -y * sigmoid(-margin), x);
        loss
    }

    fn multiclass_into(&self, x: &ArrayView1<f64>, label: usize, out: &mut [f64]) -> f64 {
        let scores = self.scores(x.view());
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        let lse = max + total.ln();
        for (k, &s) in scores.iter().enumerate() {
            let p = (s - max).exp() / total;
            let coef = if k == label { p - 1.0 } else { p };
            self.write_outer(out, k, coef, x);
        }
        lse - scores[label]
    }

    /// Loss of one example under the model's task (binary labels are 0/1 class indices).
    fn example_into(&self, x: &ArrayView1<f64>, label: usize, out: &mut [f64]) -> f64 {
        if self.is_binary() {
            self.binary_into(x, if label == 1 { 1.0 } else { -1.0 }, out)
        } else {
            self.multiclass_into(x, label, out)
        }
    }

    fn example_loss(&self, x: &ArrayView1<f64>, label: usize) -> f64 {
        if self.is_binary() {
            let y = if label == 1 { 1.0 } else { -1.0 };
            log1p_exp(-y * self.score_row(0, x))
        } else {
            let scores = self.scores(x.view());
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            max + total.ln() - scores[label]
        }
    }
}

/// `log(1 + exp(t))` without overflow.
#[inline]
pub fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Binary logistic loss `log(1 + exp(-y <w, x>))` for `y` in `{-1, +1}`.
pub fn binary_logistic(model: &LinearModel, x: ArrayView1<f64>, y: f64) -> Result<(f64, Array2<f64>)> {
    if !model.is_binary() {
        return Err(Error::InvalidParameter("binary loss needs a single-row model".into()));
    }
    if y != 1.0 && y != -1.0 {
        return Err(Error::InvalidLabel(format!("binary label must be +1 or -1, got {y}")));
    }
    model.check_dim(&x)?;
    let mut g = Array2::zeros(model.weights.raw_dim());
    let loss = model.binary_into(&x, y, g.as_slice_mut().unwrap());
    Ok((loss, g))
}

/// Softmax cross-entropy with one linear score per class.
pub fn multiclass_logistic(model: &LinearModel, x: ArrayView1<f64>, label: usize) -> Result<(f64, Array2<f64>)> {
    let k = model.weights.nrows();
    if k < 2 {
        return Err(Error::InvalidParameter("multiclass loss needs at least two rows".into()));
    }
    if label >= k {
        return Err(Error::InvalidLabel(format!("class {label} out of range for {k} classes")));
    }
    model.check_dim(&x)?;
    let mut g = Array2::zeros(model.weights.raw_dim());
    let loss = model.multiclass_into(&x, label, g.as_slice_mut().unwrap());
    Ok((loss, g))
}

fn check_model_data(model: &LinearModel, dataset: &Dataset) -> Result<()> {
    if model.n_features() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            got: dataset.dim(),
        });
    }
    if model.n_classes() != dataset.n_classes.max(2) {
        return Err(Error::InvalidParameter(format!(
            "model has {} classes, dataset has {}",
            model.n_classes(),
            dataset.n_classes
        )));
    }
    Ok(())
}

/// Losses and gradients for the rows in `indices`, in the given order.
pub fn loss_batch(model: &LinearModel, dataset: &Dataset, indices: &[usize]) -> Result<LossBatch> {
    check_model_data(model, dataset)?;
    let p = model.n_params();
    let mut grads = Array2::zeros((indices.len(), p));
    let mut values = Vec::with_capacity(indices.len());
    for (r, &i) in indices.iter().enumerate() {
        let mut row = grads.row_mut(r);
        let out = row.as_slice_mut().unwrap();
        values.push(model.example_into(&dataset.row(i), dataset.labels[i], out));
    }
    Ok(LossBatch { values, grads })
}

/// Loss values only, for the rows in `indices`.
pub fn loss_values(model: &LinearModel, dataset: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
    check_model_data(model, dataset)?;
    Ok(indices
        .iter()
        .map(|&i| model.example_loss(&dataset.row(i), dataset.labels[i]))
        .collect())
}

/// Fraction of rows in `indices` whose predicted class differs from the label.
pub fn error_rate(model: &LinearModel, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Empty("no rows to evaluate"));
    }
    check_model_data(model, dataset)?;
    let wrong = indices
        .iter()
        .filter(|&&i| model.predict(dataset.row(i)) != dataset.labels[i])
        .count();
    Ok(wrong as f64 / indices.len() as f64)
}

/// Average zero-one loss over every row of `dataset`.
pub fn zero_one_error(model: &LinearModel, dataset: &Dataset) -> Result<f64> {
    let all: Vec<usize> = (0..dataset.n()).collect();
    error_rate(model, dataset, &all)
}
