//! Big-endian IDX files (the MNIST distribution format), optionally gzipped.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::LabeledDataset;
use crate::error::{Result, WaflError};
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| WaflError::io(format!("opening {}", path.display()), e))?;
    let mut bytes = Vec::new();
    let res = if path.extension().is_some_and(|ext| ext == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes)
    } else {
        let mut file = file;
        file.read_to_end(&mut bytes)
    };
    res.map_err(|e| WaflError::io(format!("reading {}", path.display()), e))?;
    Ok(bytes)
}

struct Header {
    dims: Vec<usize>,
    data_offset: usize,
}

fn parse_header(path: &Path, bytes: &[u8], magic: u32, ndims: usize) -> Result<Header> {
    let fail = |offset: usize, reason: String| WaflError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    let word = |i: usize| -> Result<u32> {
        let off = 4 * i;
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| fail(off, "truncated header".into()))
    };
    let found = word(0)?;
    if found != magic {
        return Err(fail(0, format!("bad magic {found}, expected {magic}")));
    }
    let dims = (1..=ndims)
        .map(|i| word(i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let data_offset = 4 * (ndims + 1);
    let expected: usize = dims.iter().product();
    let available = bytes.len() - data_offset;
    if available != expected {
        let offset = data_offset + available.min(expected);
        return Err(fail(
            offset,
            format!("header promises {expected} data bytes, file holds {available}"),
        ));
    }
    Ok(Header { dims, data_offset })
}

/// Returns `(count, rows, cols, pixels scaled to [0, 1])`.
pub fn read_idx_images<T: Scalar>(path: &Path) -> Result<(usize, usize, usize, Vec<T>)> {
    let bytes = read_all(path)?;
    let h = parse_header(path, &bytes, IDX_IMAGES_MAGIC, 3)?;
    let scale = T::from_f64_lossy(255.0);
    let pixels = bytes[h.data_offset..]
        .iter()
        .map(|&b| T::from_u8(b).expect("byte fits scalar") / scale)
        .collect();
    Ok((h.dims[0], h.dims[1], h.dims[2], pixels))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    let h = parse_header(path, &bytes, IDX_LABELS_MAGIC, 1)?;
    let labels = bytes[h.data_offset..].to_vec();
    if let Some(pos) = labels.iter().position(|&y| y > 9) {
        return Err(WaflError::Format {
            path: path.to_path_buf(),
            offset: (h.data_offset + pos) as u64,
            reason: format!("label {} outside [0, 9]", labels[pos]),
        });
    }
    Ok(labels)
}

/// Loads an image/label file pair; images are flattened row-major.
pub fn load_idx<T: Scalar>(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset<T>> {
    let (n, rows, cols, pixels) = read_idx_images::<T>(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(WaflError::Format {
            path: labels_path.to_path_buf(),
            offset: 4,
            reason: format!("{} labels for {n} images in {}", labels.len(), images_path.display()),
        });
    }
    LabeledDataset::new(rows * cols, pixels, labels)
}
