//! Binary model snapshots.
//!
//! ```text
//! "WAFLM1"
//! u32 layer_count
//! per layer: u32 name_len, name (utf-8), u32 ndim, ndim x u32 dim
//! parameters as f32, canonical order
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Result, WaflError};
use crate::nn::params::{Layer, Layout, ModelParams};
use crate::scalar::Scalar;

pub const SNAPSHOT_MAGIC: &[u8; 6] = b"WAFLM1";

fn layer_dims(layout: Layout, layer: Layer) -> Vec<u32> {
    let (r, c) = layout.shape(layer);
    match layer {
        Layer::Fc1Bias | Layer::Fc2Bias => vec![r as u32],
        _ => vec![r as u32, c as u32],
    }
}

pub fn encode_snapshot<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let layout = params.layout();
    let mut out = Vec::with_capacity(64 + 4 * params.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(Layer::ALL.len() as u32).to_le_bytes());
    for layer in Layer::ALL {
        let name = layer.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let dims = layer_dims(layout, layer);
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    for v in params.as_slice() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, reason: impl Into<String>) -> WaflError {
        WaflError::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| self.fail(format!("truncated: wanted {n} more bytes")))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_snapshot<T: Scalar>(bytes: &[u8], path: &Path) -> Result<ModelParams<T>> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    if cur.take(SNAPSHOT_MAGIC.len())? != SNAPSHOT_MAGIC {
        cur.pos = 0;
        return Err(cur.fail("bad magic, expected WAFLM1"));
    }
    let count = cur.u32()? as usize;
    if count != Layer::ALL.len() {
        return Err(cur.fail(format!("expected {} layers, header lists {count}", Layer::ALL.len())));
    }
    let mut shapes = Vec::with_capacity(count);
    for expected in Layer::ALL {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?).map_err(|_| cur.fail("layer name is not utf-8"))?;
        if name != expected.name() {
            return Err(cur.fail(format!("expected layer {expected}, found {name}")));
        }
        let ndim = cur.u32()? as usize;
        let dims = (0..ndim).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        shapes.push(dims);
    }
    let [w1, b1, w2, b2] = [&shapes[0], &shapes[1], &shapes[2], &shapes[3]];
    let layout = match (w1.as_slice(), w2.as_slice()) {
        (&[h, i], &[c, h2]) if h == h2 => Layout::new(i as usize, h as usize, c as usize)?,
        _ => return Err(cur.fail("inconsistent layer shapes")),
    };
    if b1.as_slice() != [layout.hidden as u32] || b2.as_slice() != [layout.classes as u32] {
        return Err(cur.fail("bias shapes do not match weights"));
    }
    let n = layout.param_count();
    let body = cur.take(4 * n)?;
    if cur.pos != bytes.len() {
        return Err(cur.fail(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| T::from_f64_lossy(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect();
    ModelParams::from_flat(layout, data)
}

pub fn save_snapshot<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_snapshot(params)).map_err(|e| WaflError::io(format!("writing {}", path.display()), e))
}

pub fn load_snapshot<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let bytes = std::fs::read(path).map_err(|e| WaflError::io(format!("reading {}", path.display()), e))?;
    decode_snapshot(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let p = ModelParams::<f32>::zeros(Layout::MNIST);
        let bytes = encode_snapshot(&p);
        assert_eq!(&bytes[..6], b"WAFLM1");
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 10);
        assert_eq!(&bytes[14..24], b"fc1.weight");
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 128);
        assert_eq!(u32::from_le_bytes(bytes[32..36].try_into().unwrap()), 784);
        // 4 layers: 10+8+10+8 name bytes, 4+4 length words, 2 or 1 dims each.
        let header = 6 + 4 + (4 + 10 + 4 + 8) + (4 + 8 + 4 + 4) + (4 + 10 + 4 + 8) + (4 + 8 + 4 + 4);
        assert_eq!(bytes.len(), header + 4 * 101_770);
    }

    #[test]
    fn rejects_corruption() {
        let p = ModelParams::<f32>::init_uniform(Layout::MNIST, 2);
        let mut bytes = encode_snapshot(&p);
        let path = Path::new("x.bin");
        assert!(decode_snapshot::<f32>(&bytes[..bytes.len() - 1], path).is_err());
        bytes.push(0);
        assert!(decode_snapshot::<f32>(&bytes, path).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            decode_snapshot::<f32>(&bytes, path),
            Err(WaflError::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.waflm");
        let p = ModelParams::<f32>::init_uniform(Layout::MNIST, 9);
        save_snapshot(&p, &path).unwrap();
        assert_eq!(load_snapshot::<f32>(&path).unwrap(), p);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_any_layout(i in 1usize..20, h in 1usize..20, c in 2usize..12, s in any::<u64>()) {
            let layout = Layout::new(i, h, c).unwrap();
            let p = ModelParams::<f32>::init_uniform(layout, s);
            let q: ModelParams<f32> = decode_snapshot(&encode_snapshot(&p), Path::new("p")).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
