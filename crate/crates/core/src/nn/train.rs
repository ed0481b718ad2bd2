use rand::seq::SliceRandom;

use crate::dataset::LabeledDataset;
use crate::error::{Result, WaflError};
use crate::nn::adam::OptimizerState;
use crate::nn::model::{loss_and_grad_into, Activations, Batch};
use crate::nn::params::ModelParams;
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassReport {
    pub steps: usize,
    pub mean_loss: f64,
}

/// Reusable buffers for repeated mini-batch passes.
#[derive(Debug, Clone, Default)]
pub struct Trainer<T> {
    grad: Option<ModelParams<T>>,
    act: Activations<T>,
    inputs: Vec<T>,
    labels: Vec<u8>,
    order: Vec<usize>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new() -> Self {
        Self {
            grad: None,
            act: Activations::default(),
            inputs: Vec::new(),
            labels: Vec::new(),
            order: Vec::new(),
        }
    }

    /// One pass over `data`: seeded shuffle, `ceil(len / batch_size)`
    /// consecutive mini-batches (the last may be short), one Adam step each.
    pub fn train_one_pass(
        &mut self,
        params: &mut ModelParams<T>,
        opt: &mut OptimizerState<T>,
        data: &LabeledDataset<T>,
        batch_size: usize,
        shuffle_seed: u64,
    ) -> Result<PassReport> {
        if data.is_empty() {
            return Err(WaflError::input("cannot train on an empty partition"));
        }
        if batch_size == 0 {
            return Err(WaflError::input("batch size must be positive"));
        }
        if data.width() != params.layout().inputs {
            return Err(WaflError::contract(format!(
                "data width {} does not match model input {}",
                data.width(),
                params.layout().inputs
            )));
        }
        let mut grad = match self.grad.take() {
            Some(g) if g.layout() == params.layout() => g,
            _ => ModelParams::zeros(params.layout()),
        };
        self.order.clear();
        self.order.extend(0..data.len());
        self.order.shuffle(&mut seed::rng(shuffle_seed));

        let mut steps = 0;
        let mut loss_sum = 0.0;
        let result = (|| {
            for chunk in self.order.chunks(batch_size) {
                self.inputs.clear();
                self.labels.clear();
                for &i in chunk {
                    self.inputs.extend_from_slice(data.image(i));
                    self.labels.push(data.labels()[i]);
                }
                let batch = Batch::new(&self.inputs, &self.labels);
                loss_sum += loss_and_grad_into(params, batch, &mut grad, &mut self.act)?;
                opt.step(params, &grad)?;
                steps += 1;
            }
            Ok(())
        })();
        self.grad = Some(grad);
        result.map(|()| PassReport {
            steps,
            mean_loss: loss_sum / steps as f64,
        })
    }
}

/// Stateless convenience wrapper around [`Trainer::train_one_pass`].
pub fn train_one_pass<T: Scalar>(
    params: &mut ModelParams<T>,
    opt: &mut OptimizerState<T>,
    data: &LabeledDataset<T>,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<PassReport> {
    Trainer::new().train_one_pass(params, opt, data, batch_size, shuffle_seed)
}
