//! Labelled image data, IDX ingestion, Non-IID partitioning and the label
//! transforms used to build poisoned training sets.

mod idx;
mod partition;
mod transform;

pub use idx::{load_idx, read_idx_images, read_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{partition_noniid, PartitionPlan};
pub use transform::{depress_label, swap_labels};

use rand::seq::SliceRandom;

use crate::error::{Result, WaflError};
use crate::scalar::Scalar;
use crate::seed;

pub const NUM_CLASSES: usize = 10;

/// Images (row-major, one flattened image per row, pixels in `[0, 1]`),
/// labels, and each row's position in the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    width: usize,
    images: Vec<T>,
    labels: Vec<u8>,
    origin: Vec<usize>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(width: usize, images: Vec<T>, labels: Vec<u8>) -> Result<Self> {
        let origin = (0..labels.len()).collect();
        Self::with_origin(width, images, labels, origin)
    }

    pub fn with_origin(width: usize, images: Vec<T>, labels: Vec<u8>, origin: Vec<usize>) -> Result<Self> {
        if width == 0 || images.len() != labels.len() * width {
            return Err(WaflError::contract(format!(
                "{} pixel values do not form {} rows of width {width}",
                images.len(),
                labels.len()
            )));
        }
        if origin.len() != labels.len() {
            return Err(WaflError::contract("origin index count differs from label count"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= NUM_CLASSES) {
            return Err(WaflError::input(format!("label {bad} outside [0, 9]")));
        }
        if images.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
            return Err(WaflError::input("pixel values must lie in [0, 1]"));
        }
        Ok(Self {
            width,
            images,
            labels,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn images(&self) -> &[T] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn image(&self, i: usize) -> &[T] {
        &self.images[i * self.width..(i + 1) * self.width]
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &y in &self.labels {
            counts[y as usize] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order, keeping their origin indices.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut images = Vec::with_capacity(indices.len() * self.width);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Self {
            width: self.width,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            origin: indices.iter().map(|&i| self.origin[i]).collect(),
        }
    }

    /// Uniformly keeps `ceil(fraction * len)` rows (at least one), preserving row order.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(WaflError::input(format!("subset fraction {fraction} outside (0, 1]")));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let keep = ((self.len() as f64 * fraction).ceil() as usize).clamp(1.min(self.len()), self.len());
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seed::rng(seed));
        idx.truncate(keep);
        idx.sort_unstable();
        Ok(self.select(&idx))
    }

    pub(crate) fn with_labels(&self, labels: Vec<u8>) -> Self {
        Self {
            width: self.width,
            images: self.images.clone(),
            labels,
            origin: self.origin.clone(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            width: self.width,
            images: self.images.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            labels: self.labels.clone(),
            origin: self.origin.clone(),
        }
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::Rng;

    /// Random pixels with the given label sequence.
    pub fn synthetic<T: Scalar>(labels: &[u8], width: usize, s: u64) -> LabeledDataset<T> {
        let mut rng = seed::rng(s);
        let images = (0..labels.len() * width)
            .map(|_| T::from_f64_lossy(rng.gen::<f64>()))
            .collect();
        LabeledDataset::new(width, images, labels.to_vec()).unwrap()
    }
}
