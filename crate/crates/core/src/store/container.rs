//! `ACTV` activation container.
//!
//! ```text
//! offset  size          field
//! 0       4             magic "ACTV"
//! 4       4             version (u32 LE)
//! 8       4             header_len (u32 LE)
//! 12      header_len    UTF-8 JSON header
//! ...     n*d*sizeof    row-major payload, LE f32 or f64
//! ```
//!
//! The same layout with a different magic and a free-form header carrying a
//! tensor table is used for model bundles ([`write_bundle`]).

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{Result, StoreError};

pub const ACTV_MAGIC: [u8; 4] = *b"ACTV";
pub const CONTAINER_VERSION: u32 = 1;
const PREAMBLE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// JSON header of an activation container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationHeader {
    pub run_id: String,
    pub block: u32,
    pub n_steps: u64,
    pub dim: u64,
    pub dtype: Dtype,
    pub source: String,
    pub seed: u64,
}

impl ActivationHeader {
    /// Header describing `values` with the remaining fields left for the caller.
    pub fn for_matrix(values: &ArrayView2<f64>, dtype: Dtype) -> Self {
        ActivationHeader {
            run_id: String::new(),
            block: 0,
            n_steps: values.nrows() as u64,
            dim: values.ncols() as u64,
            dtype,
            source: String::new(),
            seed: 0,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.n_steps as usize * self.dim as usize * self.dtype.size()
    }
}

/// An `n_steps x dim` block of activation vectors as held in memory.
///
/// Values are always kept as `f64`; an `f32` container stores (and returns)
/// their `f32` truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub header: ActivationHeader,
    pub values: Array2<f64>,
}

impl ActivationMatrix {
    pub fn n_steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

fn check_finite(values: &ArrayView2<f64>) -> Result<()> {
    for ((row, col), &value) in values.indexed_iter() {
        if !value.is_finite() {
            return Err(StoreError::NonFinite { row, col, value });
        }
    }
    Ok(())
}

fn encode(magic: [u8; 4], header_json: &[u8], payload_len: usize) -> Result<Vec<u8>> {
    let header_len = u32::try_from(header_json.len())
        .map_err(|_| StoreError::HeaderInvalid("header longer than u32::MAX bytes".into()))?;
    let mut buf = Vec::with_capacity(PREAMBLE + header_json.len() + payload_len);
    buf.extend_from_slice(&magic);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    buf.extend_from_slice(&header_len.to_le_bytes());
    buf.extend_from_slice(header_json);
    Ok(buf)
}

fn push_values(buf: &mut Vec<u8>, values: &ArrayView2<f64>, dtype: Dtype) {
    for &v in values.iter() {
        match dtype {
            Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

/// Serializes a matrix into container bytes.
pub fn encode_activations(values: &ArrayView2<f64>, header: &ActivationHeader) -> Result<Vec<u8>> {
    if header.n_steps as usize != values.nrows() || header.dim as usize != values.ncols() {
        return Err(StoreError::HeaderMismatch(format!(
            "header declares {}x{}, matrix is {}x{}",
            header.n_steps,
            header.dim,
            values.nrows(),
            values.ncols()
        )));
    }
    if header.n_steps == 0 || header.dim == 0 {
        return Err(StoreError::HeaderInvalid("n_steps and dim must be >= 1".into()));
    }
    check_finite(values)?;
    let json = serde_json::to_vec(header).map_err(|e| StoreError::HeaderInvalid(e.to_string()))?;
    let mut buf = encode(ACTV_MAGIC, &json, header.payload_len())?;
    push_values(&mut buf, values, header.dtype);
    Ok(buf)
}

pub fn write_activations(
    path: impl AsRef<Path>,
    values: &ArrayView2<f64>,
    header: &ActivationHeader,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_activations(values, header)?;
    fs::write(path, bytes).map_err(|e| StoreError::io(path, e))
}

struct Framed<'a> {
    header: &'a [u8],
    payload: &'a [u8],
}

fn split_frame(bytes: &[u8], magic: [u8; 4]) -> Result<Framed<'_>> {
    if bytes.len() < PREAMBLE {
        return Err(StoreError::Truncated {
            what: "preamble",
            expected: PREAMBLE,
            found: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != magic {
        return Err(StoreError::BadMagic {
            found,
            expected: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(StoreError::VersionMismatch {
            found: version,
            expected: CONTAINER_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = PREAMBLE + header_len;
    if bytes.len() < header_end {
        return Err(StoreError::Truncated {
            what: "header",
            expected: header_end,
            found: bytes.len(),
        });
    }
    Ok(Framed {
        header: &bytes[PREAMBLE..header_end],
        payload: &bytes[header_end..],
    })
}

fn decode_values(payload: &[u8], rows: usize, cols: usize, dtype: Dtype) -> Result<Array2<f64>> {
    let values: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let m = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| StoreError::HeaderMismatch(e.to_string()))?;
    check_finite(&m.view())?;
    Ok(m)
}

/// Parses container bytes produced by [`encode_activations`].
pub fn decode_activations(bytes: &[u8]) -> Result<ActivationMatrix> {
    let frame = split_frame(bytes, ACTV_MAGIC)?;
    let header: ActivationHeader = serde_json::from_slice(frame.header)
        .map_err(|e| StoreError::HeaderInvalid(e.to_string()))?;
    if header.n_steps == 0 || header.dim == 0 {
        return Err(StoreError::HeaderMismatch(format!(
            "n_steps={} dim={} (both must be >= 1)",
            header.n_steps, header.dim
        )));
    }
    let expected = header.payload_len();
    if frame.payload.len() < expected {
        return Err(StoreError::Truncated {
            what: "payload",
            expected,
            found: frame.payload.len(),
        });
    }
    if frame.payload.len() > expected {
        return Err(StoreError::HeaderMismatch(format!(
            "payload has {} bytes, header implies {expected}",
            frame.payload.len()
        )));
    }
    let values = decode_values(
        frame.payload,
        header.n_steps as usize,
        header.dim as usize,
        header.dtype,
    )?;
    Ok(ActivationMatrix { header, values })
}

pub fn read_activations(path: impl AsRef<Path>) -> Result<ActivationMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
    decode_activations(&bytes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleHeader {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Writes named f64 tensors plus a JSON `meta` document under `magic`.
pub fn write_bundle(
    path: impl AsRef<Path>,
    magic: [u8; 4],
    meta: &serde_json::Value,
    tensors: &[(&str, ArrayView2<f64>)],
) -> Result<()> {
    let path = path.as_ref();
    let header = BundleHeader {
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: (*name).to_string(),
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect(),
    };
    for (_, t) in tensors {
        check_finite(t)?;
    }
    let json = serde_json::to_vec(&header).map_err(|e| StoreError::HeaderInvalid(e.to_string()))?;
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut buf = encode(magic, &json, payload)?;
    for (_, t) in tensors {
        push_values(&mut buf, t, Dtype::F64);
    }
    fs::write(path, buf).map_err(|e| StoreError::io(path, e))
}

/// Reads a bundle written by [`write_bundle`]; tensors come back in file order.
pub fn read_bundle(
    path: impl AsRef<Path>,
    magic: [u8; 4],
) -> Result<(serde_json::Value, Vec<(String, Array2<f64>)>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
    let frame = split_frame(&bytes, magic)?;
    let header: BundleHeader = serde_json::from_slice(frame.header)
        .map_err(|e| StoreError::HeaderInvalid(e.to_string()))?;
    let expected: usize = header.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
    if frame.payload.len() < expected {
        return Err(StoreError::Truncated {
            what: "payload",
            expected,
            found: frame.payload.len(),
        });
    }
    if frame.payload.len() > expected {
        return Err(StoreError::HeaderMismatch(format!(
            "payload has {} bytes, tensor table implies {expected}",
            frame.payload.len()
        )));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let len = entry.rows * entry.cols * 8;
        let t = decode_values(
            &frame.payload[offset..offset + len],
            entry.rows,
            entry.cols,
            Dtype::F64,
        )?;
        offset += len;
        out.push((entry.name, t));
    }
    Ok((header.meta, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn header(values: &Array2<f64>, dtype: Dtype) -> ActivationHeader {
        ActivationHeader {
            run_id: "run-0".into(),
            block: 3,
            seed: 7,
            source: "test".into(),
            ..ActivationHeader::for_matrix(&values.view(), dtype)
        }
    }

    #[test]
    fn two_by_three_f64_layout() {
        let m = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let h = header(&m, Dtype::F64);
        let bytes = encode_activations(&m.view(), &h).unwrap();
        let json_len = serde_json::to_vec(&h).unwrap().len();
        assert_eq!(bytes.len(), 12 + json_len + 48);
        let back = decode_activations(&bytes).unwrap();
        assert_eq!(back.values, m);
        assert_eq!(back.header, h);
    }

    #[test]
    fn hand_written_byte_fixture() {
        // One f32 value 1.5 = 0x3FC00000, header {"run_id":"r",...}
        let m = array![[1.5]];
        let h = ActivationHeader {
            run_id: "r".into(),
            block: 0,
            n_steps: 1,
            dim: 1,
            dtype: Dtype::F32,
            source: "s".into(),
            seed: 1,
        };
        let json = br#"{"run_id":"r","block":0,"n_steps":1,"dim":1,"dtype":"f32","source":"s","seed":1}"#;
        let mut expected = Vec::new();
        expected.extend_from_slice(b"ACTV");
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&[json.len() as u8, 0, 0, 0]);
        expected.extend_from_slice(json);
        expected.extend_from_slice(&[0x00, 0x00, 0xC0, 0x3F]);
        assert_eq!(encode_activations(&m.view(), &h).unwrap(), expected);
    }

    #[test]
    fn f32_truncation_is_the_contract() {
        let m = array![[0.1]];
        let bytes = encode_activations(&m.view(), &header(&m, Dtype::F32)).unwrap();
        let back = decode_activations(&bytes).unwrap();
        assert_eq!(back.values[[0, 0]], 0.1f32 as f64);
        assert_ne!(back.values[[0, 0]], 0.1);
    }

    #[test]
    fn payload_size_at_ingest_scale() {
        let h = ActivationHeader {
            n_steps: 18_000,
            dim: 8192,
            dtype: Dtype::F32,
            ..ActivationHeader::for_matrix(&Array2::<f64>::zeros((1, 1)).view(), Dtype::F32)
        };
        assert_eq!(h.payload_len(), 589_824_000);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let m = array![[1.0, -2.5], [3.25, 4.0]];
        let h = header(&m, Dtype::F64);
        let a = dir.path().join("a.actv");
        let b = dir.path().join("b.actv");
        write_activations(&a, &m.view(), &h).unwrap();
        write_activations(&b, &m.view(), &h).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(read_activations(&a).unwrap().values, m);
    }

    #[test]
    fn rejects_non_finite_on_write() {
        let m = array![[1.0, f64::NAN]];
        let err = encode_activations(&m.view(), &header(&m, Dtype::F64)).unwrap_err();
        assert!(matches!(err, StoreError::NonFinite { row: 0, col: 1, .. }));
        let m = array![[f64::INFINITY]];
        assert!(encode_activations(&m.view(), &header(&m, Dtype::F32)).is_err());
    }

    #[test]
    fn dims_must_match_header() {
        let m = array![[1.0, 2.0]];
        let mut h = header(&m, Dtype::F64);
        h.dim = 3;
        assert_eq!(
            encode_activations(&m.view(), &h).unwrap_err().code(),
            "E_HEADER_DIM"
        );
    }

    #[test]
    fn distinct_error_codes_on_corruption() {
        let m = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let bytes = encode_activations(&m.view(), &header(&m, Dtype::F64)).unwrap();

        let mut bad = bytes.clone();
        bad[0..4].copy_from_slice(b"XXXX");
        assert_eq!(decode_activations(&bad).unwrap_err().code(), "E_BAD_MAGIC");

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(decode_activations(&bad).unwrap_err().code(), "E_VERSION");

        let short = &bytes[..bytes.len() - 1];
        assert_eq!(decode_activations(short).unwrap_err().code(), "E_TRUNCATED");

        let mut long = bytes.clone();
        long.extend_from_slice(&[0u8; 8]);
        assert_eq!(decode_activations(&long).unwrap_err().code(), "E_HEADER_DIM");

        let mut bad = bytes.clone();
        bad[12] = b'#';
        assert_eq!(decode_activations(&bad).unwrap_err().code(), "E_HEADER");

        assert_eq!(decode_activations(&bytes[..5]).unwrap_err().code(), "E_TRUNCATED");
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let a = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let b = array![[0.5, -0.5]];
        let meta = serde_json::json!({"d": 2});
        write_bundle(&path, *b"TEST", &meta, &[("a", a.view()), ("b", b.view())]).unwrap();
        let (meta_back, tensors) = read_bundle(&path, *b"TEST").unwrap();
        assert_eq!(meta_back, meta);
        assert_eq!(tensors[0], ("a".to_string(), a));
        assert_eq!(tensors[1], ("b".to_string(), b));
        assert_eq!(read_bundle(&path, *b"ACTV").unwrap_err().code(), "E_BAD_MAGIC");
    }

    fn finite_matrix() -> impl Strategy<Value = Array2<f64>> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(
                proptest::num::f64::NORMAL | proptest::num::f64::ZERO | proptest::num::f64::SUBNORMAL,
                r * c,
            )
            .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn f64_round_trip_is_bit_exact(m in finite_matrix(), seed in any::<u64>()) {
            let mut h = header(&m, Dtype::F64);
            h.seed = seed;
            let back = decode_activations(&encode_activations(&m.view(), &h).unwrap()).unwrap();
            for (a, b) in m.iter().zip(back.values.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back.header, h);
        }

        #[test]
        fn f32_round_trip_is_bit_exact(m in finite_matrix()) {
            let m = m.mapv(|v| (v as f32) as f64).mapv(|v| if v.is_finite() { v } else { 0.0 });
            let h = header(&m, Dtype::F32);
            let back = decode_activations(&encode_activations(&m.view(), &h).unwrap()).unwrap();
            for (a, b) in m.iter().zip(back.values.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
