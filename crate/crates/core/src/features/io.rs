//! Binary feature files: `FTR1` float matrices and `TOK1` token matrices.
//!
//! Layout: 4-byte magic, u32 rows, u32 cols, then a row-major little-endian
//! payload of `rows * cols` f32 (`FTR1`) or i32 (`TOK1`) values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::tokens::TokenSeq;

const FLOAT_MAGIC: &[u8; 4] = b"FTR1";
const TOKEN_MAGIC: &[u8; 4] = b"TOK1";

/// Row-major float matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::Dim(format!("{rows} x {cols} matrix cannot hold {} values", values.len())));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }
}

fn encode(magic: &[u8; 4], rows: usize, cols: usize, payload: impl Iterator<Item = [u8; 4]>) -> Result<Vec<u8>> {
    let r = u32::try_from(rows).map_err(|_| Error::OutOfRange(format!("{rows} rows")))?;
    let c = u32::try_from(cols).map_err(|_| Error::OutOfRange(format!("{cols} cols")))?;
    let mut out = Vec::with_capacity(12 + rows * cols * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&r.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    for b in payload {
        out.extend_from_slice(&b);
    }
    Ok(out)
}

fn decode<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!("feature file has only {} bytes", bytes.len())));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(4)) != Some(payload.len()) {
        return Err(Error::Format(format!(
            "header says {rows} x {cols} but payload has {} bytes",
            payload.len()
        )));
    }
    Ok((rows, cols, payload))
}

pub fn encode_feature_matrix(m: &FeatureMatrix) -> Result<Vec<u8>> {
    encode(FLOAT_MAGIC, m.rows, m.cols, m.values.iter().map(|v| v.to_le_bytes()))
}

pub fn decode_feature_matrix(bytes: &[u8]) -> Result<FeatureMatrix> {
    let (rows, cols, payload) = decode(bytes, FLOAT_MAGIC)?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(rows, cols, values)
}

pub fn write_feature_file(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    Ok(fs::write(path, encode_feature_matrix(m)?)?)
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    decode_feature_matrix(&fs::read(path)?)
}

pub fn write_token_file(path: impl AsRef<Path>, t: &TokenSeq) -> Result<()> {
    let payload = t.ids().iter().map(|&i| (i as i32).to_le_bytes());
    Ok(fs::write(path, encode(TOKEN_MAGIC, t.n_frames(), t.groups(), payload)?)?)
}

pub fn read_token_file(path: impl AsRef<Path>) -> Result<TokenSeq> {
    let bytes = fs::read(path)?;
    let (_, groups, payload) = decode(&bytes, TOKEN_MAGIC)?;
    let ids = payload
        .chunks_exact(4)
        .map(|c| {
            let v = i32::from_le_bytes(c.try_into().unwrap());
            u32::try_from(v).map_err(|_| Error::Format(format!("negative token id {v}")))
        })
        .collect::<Result<Vec<u32>>>()?;
    if groups == 0 {
        return Err(Error::Format("token file has zero groups".into()));
    }
    TokenSeq::new(ids, groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_bit_exact() {
        let values: Vec<f32> = (0..7 * 13).map(|i| ((i as f32) * 0.77).sin() / 3.0).collect();
        let m = FeatureMatrix::new(7, 13, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ftr");
        write_feature_file(&p, &m).unwrap();
        let back = read_feature_file(&p).unwrap();
        assert_eq!(
            m.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!((back.rows, back.cols), (7, 13));
    }

    #[test]
    fn wrong_magic_and_truncation_are_format_errors() {
        let m = FeatureMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = encode_feature_matrix(&m).unwrap();
        assert!(matches!(decode_feature_matrix(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(decode_feature_matrix(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn token_round_trip() {
        let t = TokenSeq::new(vec![0, 5, 3, 2, 9, 1], 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tok");
        write_token_file(&p, &t).unwrap();
        assert_eq!(read_token_file(&p).unwrap(), t);
        let bytes = std::fs::read(&p).unwrap();
        assert!(matches!(decode_feature_matrix(&bytes), Err(Error::Format(_))));
    }
}
