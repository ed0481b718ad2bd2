use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Result, WaflError};
use crate::scalar::Scalar;
use crate::seed;

/// Dimensions of the two-layer classifier `FC(in, hidden) - ReLU - FC(hidden, classes)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Layout {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Layout {
    pub const MNIST: Layout = Layout {
        inputs: 784,
        hidden: 128,
        classes: 10,
    };

    pub fn new(inputs: usize, hidden: usize, classes: usize) -> Result<Self> {
        if inputs == 0 || hidden == 0 || classes < 2 {
            return Err(WaflError::input(format!(
                "degenerate layout {inputs}x{hidden}x{classes}"
            )));
        }
        Ok(Self {
            inputs,
            hidden,
            classes,
        })
    }

    pub fn shape(&self, layer: Layer) -> (usize, usize) {
        match layer {
            Layer::Fc1Weight => (self.hidden, self.inputs),
            Layer::Fc1Bias => (self.hidden, 1),
            Layer::Fc2Weight => (self.classes, self.hidden),
            Layer::Fc2Bias => (self.classes, 1),
        }
    }

    pub fn layer_len(&self, layer: Layer) -> usize {
        let (r, c) = self.shape(layer);
        r * c
    }

    /// Start offset of `layer` in the canonical flattening.
    pub fn offset(&self, layer: Layer) -> usize {
        Layer::ALL
            .iter()
            .take_while(|&&l| l != layer)
            .map(|&l| self.layer_len(l))
            .sum()
    }

    pub fn range(&self, layer: Layer) -> std::ops::Range<usize> {
        let start = self.offset(layer);
        start..start + self.layer_len(layer)
    }

    pub fn param_count(&self) -> usize {
        Layer::ALL.iter().map(|&l| self.layer_len(l)).sum()
    }

    fn fan_in(&self, layer: Layer) -> usize {
        match layer {
            Layer::Fc1Weight | Layer::Fc1Bias => self.inputs,
            Layer::Fc2Weight | Layer::Fc2Bias => self.hidden,
        }
    }
}

impl Default for Layout {
    fn default() -> Self {
        Self::MNIST
    }
}

/// Named parameter blocks, in canonical flattening order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Fc1Weight,
    Fc1Bias,
    Fc2Weight,
    Fc2Bias,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Fc1Weight, Layer::Fc1Bias, Layer::Fc2Weight, Layer::Fc2Bias];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Fc1Weight => "fc1.weight",
            Layer::Fc1Bias => "fc1.bias",
            Layer::Fc2Weight => "fc2.weight",
            Layer::Fc2Bias => "fc2.bias",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layer {
    type Err = WaflError;

    fn from_str(s: &str) -> Result<Self> {
        Layer::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| WaflError::input(format!("unknown layer `{s}`")))
    }
}

/// Model parameters stored as one flat vector in canonical order
/// (`fc1.weight` row-major, `fc1.bias`, `fc2.weight` row-major, `fc2.bias`).
#[derive(Clone, PartialEq)]
pub struct ModelParams<T> {
    layout: Layout,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for ModelParams<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelParams")
            .field("layout", &self.layout)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            layout,
            data: vec![T::zero(); layout.param_count()],
        }
    }

    pub fn filled(layout: Layout, value: T) -> Self {
        Self {
            layout,
            data: vec![value; layout.param_count()],
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for every weight and bias.
    ///
    /// Values are drawn in `f64` and rounded, so an `f32` and an `f64` model
    /// built from the same seed agree to `f32` precision.
    pub fn init_uniform(layout: Layout, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut data = Vec::with_capacity(layout.param_count());
        for layer in Layer::ALL {
            let bound = 1.0 / (layout.fan_in(layer) as f64).sqrt();
            data.extend((0..layout.layer_len(layer)).map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound))));
        }
        Self { layout, data }
    }

    pub fn from_flat(layout: Layout, data: Vec<T>) -> Result<Self> {
        if data.len() != layout.param_count() {
            return Err(WaflError::contract(format!(
                "flat vector has {} entries, layout needs {}",
                data.len(),
                layout.param_count()
            )));
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<T> {
        self.data
    }

    pub fn layer(&self, layer: Layer) -> &[T] {
        &self.data[self.layout.range(layer)]
    }

    pub fn layer_mut(&mut self, layer: Layer) -> &mut [T] {
        let r = self.layout.range(layer);
        &mut self.data[r]
    }

    pub fn layer_by_name(&self, name: &str) -> Result<&[T]> {
        Ok(self.layer(name.parse()?))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(WaflError::contract(format!(
                "layout mismatch: {:?} vs {:?}",
                self.layout, other.layout
            )));
        }
        Ok(())
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Self {
            layout: self.layout,
            data,
        })
    }

    /// Euclidean norm, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        l2(&self.data)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            layout: self.layout,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}

pub(crate) fn l2<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt()
}
