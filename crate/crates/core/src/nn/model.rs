//! Forward pass, softmax cross-entropy and backpropagation for the
//! two-layer classifier.

use crate::error::{Result, WaflError};
use crate::nn::params::{Layer, Layout, ModelParams};
use crate::scalar::Scalar;

/// A borrowed mini-batch: `rows x layout.inputs` inputs plus one label per row.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T> {
    pub inputs: &'a [T],
    pub labels: &'a [u8],
}

impl<'a, T: Scalar> Batch<'a, T> {
    pub fn new(inputs: &'a [T], labels: &'a [u8]) -> Self {
        Self { inputs, labels }
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    fn validate(&self, layout: Layout) -> Result<()> {
        if self.labels.is_empty() {
            return Err(WaflError::contract("batch must contain at least one row"));
        }
        if self.inputs.len() != self.labels.len() * layout.inputs {
            return Err(WaflError::contract(format!(
                "batch has {} input values for {} labels of width {}",
                self.inputs.len(),
                self.labels.len(),
                layout.inputs
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y as usize >= layout.classes) {
            return Err(WaflError::input(format!(
                "label {bad} outside [0, {}]",
                layout.classes - 1
            )));
        }
        Ok(())
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Default, Clone)]
pub(crate) struct Activations<T> {
    pub hidden: Vec<T>,
    pub logits: Vec<T>,
    pub dlogits: Vec<T>,
    pub dhidden: Vec<T>,
}

pub(crate) fn forward_into<T: Scalar>(params: &ModelParams<T>, inputs: &[T], rows: usize, act: &mut Activations<T>) {
    let l = params.layout();
    let (ni, nh, nc) = (l.inputs, l.hidden, l.classes);
    act.hidden.clear();
    act.hidden.resize(rows * nh, T::zero());
    act.logits.clear();
    act.logits.resize(rows * nc, T::zero());

    let w1 = params.layer(Layer::Fc1Weight);
    T::gemm(
        rows,
        ni,
        nh,
        T::one(),
        inputs,
        (ni, 1),
        w1,
        (1, ni),
        T::zero(),
        &mut act.hidden,
        (nh, 1),
    );
    let b1 = params.layer(Layer::Fc1Bias);
    for row in act.hidden.chunks_exact_mut(nh) {
        for (h, &b) in row.iter_mut().zip(b1) {
            *h = (*h + b).max(T::zero());
        }
    }

    let w2 = params.layer(Layer::Fc2Weight);
    T::gemm(
        rows,
        nh,
        nc,
        T::one(),
        &act.hidden,
        (nh, 1),
        w2,
        (1, nh),
        T::zero(),
        &mut act.logits,
        (nc, 1),
    );
    let b2 = params.layer(Layer::Fc2Bias);
    for row in act.logits.chunks_exact_mut(nc) {
        for (z, &b) in row.iter_mut().zip(b2) {
            *z += b;
        }
    }
}

/// Logits for every input row, row-major `rows x classes`. Never mutates `params`.
pub fn predict<T: Scalar>(params: &ModelParams<T>, inputs: &[T]) -> Result<Vec<T>> {
    let ni = params.layout().inputs;
    if inputs.is_empty() || !inputs.len().is_multiple_of(ni) {
        return Err(WaflError::contract(format!(
            "input length {} is not a positive multiple of {ni}",
            inputs.len()
        )));
    }
    let mut act = Activations::default();
    forward_into(params, inputs, inputs.len() / ni, &mut act);
    Ok(act.logits)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict_classes<T: Scalar>(params: &ModelParams<T>, inputs: &[T]) -> Result<Vec<usize>> {
    let nc = params.layout().classes;
    Ok(predict(params, inputs)?.chunks_exact(nc).map(argmax).collect())
}

/// `log(sum(exp(row)))` computed with the max shifted out.
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&z| (z - max).exp()).sum();
    max + s.ln()
}

/// Per-row cross-entropy of `logits` against `labels`, accumulated in f64.
pub(crate) fn cross_entropy_sum<T: Scalar>(logits: &[T], labels: &[u8], classes: usize) -> f64 {
    logits
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &y)| (log_sum_exp(row) - row[y as usize]).as_f64())
        .sum()
}

/// Mean cross-entropy over the batch and its gradient, written into `grad`.
pub(crate) fn loss_and_grad_into<T: Scalar>(
    params: &ModelParams<T>,
    batch: Batch<'_, T>,
    grad: &mut ModelParams<T>,
    act: &mut Activations<T>,
) -> Result<f64> {
    let l = params.layout();
    batch.validate(l)?;
    params.ensure_same_shape(grad)?;
    let (ni, nh, nc) = (l.inputs, l.hidden, l.classes);
    let rows = batch.rows();
    forward_into(params, batch.inputs, rows, act);

    let inv_rows = T::one() / T::from_usize(rows).expect("batch size fits scalar");
    let mut loss = 0.0;
    act.dlogits.clear();
    act.dlogits.extend_from_slice(&act.logits);
    for (row, &y) in act.dlogits.chunks_exact_mut(nc).zip(batch.labels) {
        let lse = log_sum_exp(row);
        loss += (lse - row[y as usize]).as_f64();
        for z in row.iter_mut() {
            *z = (*z - lse).exp() * inv_rows;
        }
        row[y as usize] -= inv_rows;
    }
    loss /= rows as f64;

    {
        let g = grad.layer_mut(Layer::Fc2Weight);
        T::gemm(
            nc,
            rows,
            nh,
            T::one(),
            &act.dlogits,
            (1, nc),
            &act.hidden,
            (nh, 1),
            T::zero(),
            g,
            (nh, 1),
        );
    }
    column_sums(&act.dlogits, nc, grad.layer_mut(Layer::Fc2Bias));

    act.dhidden.clear();
    act.dhidden.resize(rows * nh, T::zero());
    let w2 = params.layer(Layer::Fc2Weight);
    T::gemm(
        rows,
        nc,
        nh,
        T::one(),
        &act.dlogits,
        (nc, 1),
        w2,
        (nh, 1),
        T::zero(),
        &mut act.dhidden,
        (nh, 1),
    );
    for (d, &h) in act.dhidden.iter_mut().zip(&act.hidden) {
        if h <= T::zero() {
            *d = T::zero();
        }
    }

    {
        let g = grad.layer_mut(Layer::Fc1Weight);
        T::gemm(
            nh,
            rows,
            ni,
            T::one(),
            &act.dhidden,
            (1, nh),
            batch.inputs,
            (ni, 1),
            T::zero(),
            g,
            (ni, 1),
        );
    }
    column_sums(&act.dhidden, nh, grad.layer_mut(Layer::Fc1Bias));
    Ok(loss)
}

fn column_sums<T: Scalar>(m: &[T], cols: usize, out: &mut [T]) {
    out.fill(T::zero());
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Mean softmax cross-entropy of the batch and `d loss / d params`.
pub fn loss_and_grad<T: Scalar>(params: &ModelParams<T>, batch: Batch<'_, T>) -> Result<(f64, ModelParams<T>)> {
    let mut grad = ModelParams::zeros(params.layout());
    let mut act = Activations::default();
    let loss = loss_and_grad_into(params, batch, &mut grad, &mut act)?;
    Ok((loss, grad))
}
