use super::{LabeledDataset, NUM_CLASSES};
use crate::error::{Result, WaflError};
use crate::scalar::Scalar;

fn check_class(c: usize) -> Result<()> {
    if c >= NUM_CLASSES {
        return Err(WaflError::input(format!("class {c} outside [0, 9]")));
    }
    Ok(())
}

/// Exchanges labels `a` and `b`; images are untouched.
pub fn swap_labels<T: Scalar>(ds: &LabeledDataset<T>, a: usize, b: usize) -> Result<LabeledDataset<T>> {
    check_class(a)?;
    check_class(b)?;
    if a == b {
        return Err(WaflError::input(format!(
            "swap needs two distinct classes, got ({a}, {b})"
        )));
    }
    let (a, b) = (a as u8, b as u8);
    let labels = ds
        .labels()
        .iter()
        .map(|&y| match y {
            y if y == a => b,
            y if y == b => a,
            y => y,
        })
        .collect();
    Ok(ds.with_labels(labels))
}

/// Relabels every `target` sample as `replacement`, so no `target` labels remain.
pub fn depress_label<T: Scalar>(
    ds: &LabeledDataset<T>,
    target: usize,
    replacement: usize,
) -> Result<LabeledDataset<T>> {
    check_class(target)?;
    check_class(replacement)?;
    if target == replacement {
        return Err(WaflError::input(format!("target and override are both {target}")));
    }
    let labels = ds
        .labels()
        .iter()
        .map(|&y| if y as usize == target { replacement as u8 } else { y })
        .collect();
    Ok(ds.with_labels(labels))
}
