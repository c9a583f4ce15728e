//! `MXMAT1` feature matrices and `MXLAB1` label arrays.
//!
//! ```text
//! MXMAT1: "MXMAT1" u32 rows, u32 cols, rows*cols f64 (row-major)
//! MXLAB1: "MXLAB1" u32 n, n u32 labels
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::binio::{put_f64s, put_u32, to_u32, Reader};
use crate::error::Result;
use crate::numcore::Tensor;

pub const MATRIX_MAGIC: &[u8; 6] = b"MXMAT1";
pub const LABELS_MAGIC: &[u8; 6] = b"MXLAB1";

pub fn encode_matrix(m: &Tensor) -> Result<Vec<u8>> {
    let (r, c) = m.dims2()?;
    let mut out = Vec::with_capacity(14 + 8 * r * c);
    out.extend_from_slice(MATRIX_MAGIC);
    put_u32(&mut out, to_u32(r, "rows")?);
    put_u32(&mut out, to_u32(c, "cols")?);
    put_f64s(&mut out, m.data());
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    r.magic(MATRIX_MAGIC)?;
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let data = r.f64s(rows * cols, "matrix data")?;
    r.finish()?;
    Tensor::matrix(rows, cols, data)
}

pub fn encode_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(10 + 4 * labels.len());
    out.extend_from_slice(LABELS_MAGIC);
    put_u32(&mut out, to_u32(labels.len(), "label count")?);
    for &l in labels {
        put_u32(&mut out, to_u32(l, "label")?);
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader::new(bytes);
    r.magic(LABELS_MAGIC)?;
    let n = r.u32("label count")? as usize;
    let labels = (0..n)
        .map(|_| r.u32("label").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(labels)
}

pub fn save_matrix(m: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_matrix(m)?)?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<Tensor> {
    decode_matrix(&fs::read(path)?)
}

pub fn save_labels(labels: &[usize], path: &Path) -> Result<()> {
    fs::write(path, encode_labels(labels)?)?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    decode_labels(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let m = Tensor::matrix(2, 3, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.5, 3.0]).unwrap();
        let bytes = encode_matrix(&m).unwrap();
        assert_eq!(&bytes[..6], MATRIX_MAGIC);
        let back = decode_matrix(&bytes).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(back.shape(), m.shape());
    }

    #[test]
    fn empty_matrix_round_trips() {
        let m = Tensor::matrix(0, 0, vec![]).unwrap();
        assert_eq!(decode_matrix(&encode_matrix(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn truncations_and_trailing_bytes() {
        let bytes = encode_matrix(&Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        for len in 0..bytes.len() {
            assert!(matches!(decode_matrix(&bytes[..len]), Err(Error::Format { .. })), "len {len}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_matrix(&long), Err(Error::Format { offset: 30, .. })));
        // Truncated in the middle of the data block reports where data starts.
        assert!(matches!(decode_matrix(&bytes[..20]), Err(Error::Format { offset: 14, .. })));
    }

    #[test]
    fn labels_round_trip_and_truncate() {
        let labels = vec![3, 0, 1, 4_000_000];
        let bytes = encode_labels(&labels).unwrap();
        assert_eq!(decode_labels(&bytes).unwrap(), labels);
        for len in 0..bytes.len() {
            assert!(matches!(decode_labels(&bytes[..len]), Err(Error::Format { .. })));
        }
        assert!(matches!(decode_labels(b"MXMAT1\0\0\0\0"), Err(Error::Format { offset: 0, .. })));
    }
}
