//! Flat little-endian parameter blobs with a fixed 16-byte header.
//!
//! ```text
//! offset size field
//!      0    4 magic "ORDP"
//!      4    1 family (0 bare score function, 1 ordinal, 2 softmax, 3 gaussian)
//!      5    1 torso kind (0 linear, 1 mlp2)
//!      6    2 hidden width       (u16 LE)
//!      8    2 input dimension    (u16 LE)
//!     10    2 output dimension   (u16 LE)
//!     12    2 classes per head   (u16 LE, 0 when not discrete)
//!     14    2 action dimensions  (u16 LE)
//!     16  8·n parameters         (f64 LE)
//! ```

use super::{ScoreKind, Shape};
use crate::{Error, Result};

pub const BLOB_MAGIC: [u8; 4] = *b"ORDP";
pub const BLOB_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobHeader {
    pub family: u8,
    pub kind: u8,
    pub hidden: u16,
    pub input: u16,
    pub output: u16,
    pub classes: u16,
    pub action_dims: u16,
}

impl BlobHeader {
    pub fn for_score(kind: ScoreKind, shape: Shape) -> Self {
        Self {
            family: 0,
            kind: kind_code(kind),
            hidden: shape.hidden as u16,
            input: shape.input as u16,
            output: shape.output as u16,
            classes: 0,
            action_dims: 0,
        }
    }

    pub fn score(&self) -> Result<(ScoreKind, Shape)> {
        let kind = match self.kind {
            0 => ScoreKind::Linear,
            1 => ScoreKind::Mlp2,
            k => return Err(Error::Checkpoint(format!("unknown torso kind {k}"))),
        };
        Ok((
            kind,
            Shape::new(
                self.input as usize,
                self.hidden as usize,
                self.output as usize,
            ),
        ))
    }
}

pub fn kind_code(kind: ScoreKind) -> u8 {
    match kind {
        ScoreKind::Linear => 0,
        ScoreKind::Mlp2 => 1,
    }
}

pub fn encode_blob(header: &BlobHeader, params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(BLOB_HEADER_LEN + 8 * params.len());
    out.extend_from_slice(&BLOB_MAGIC);
    out.push(header.family);
    out.push(header.kind);
    for v in [
        header.hidden,
        header.input,
        header.output,
        header.classes,
        header.action_dims,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_blob(bytes: &[u8]) -> Result<(BlobHeader, Vec<f64>)> {
    if bytes.len() < BLOB_HEADER_LEN {
        return Err(Error::Checkpoint(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if bytes[..4] != BLOB_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let payload = &bytes[BLOB_HEADER_LEN..];
    if !payload.len().is_multiple_of(8) {
        return Err(Error::Checkpoint(
            "payload is not a whole number of f64".into(),
        ));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let header = BlobHeader {
        family: bytes[4],
        kind: bytes[5],
        hidden: u16_at(6),
        input: u16_at(8),
        output: u16_at(10),
        classes: u16_at(12),
        action_dims: u16_at(14),
    };
    let params = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let h = BlobHeader {
            family: 1,
            kind: 1,
            hidden: 64,
            input: 3,
            output: 2,
            classes: 17,
            action_dims: 2,
        };
        let bytes = encode_blob(&h, &[1.5]);
        assert_eq!(&bytes[..4], b"ORDP");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[6..8], &[64, 0]);
        assert_eq!(&bytes[12..14], &[17, 0]);
        assert_eq!(&bytes[16..], &1.5f64.to_le_bytes());
        let (h2, p) = decode_blob(&bytes).unwrap();
        assert_eq!(h2, h);
        assert_eq!(p, vec![1.5]);
    }

    #[test]
    fn malformed_blobs_rejected() {
        assert!(decode_blob(b"ORD").is_err());
        assert!(decode_blob(b"XXXX000000000000").is_err());
        let mut ok = encode_blob(
            &BlobHeader::for_score(ScoreKind::Linear, Shape::new(1, 0, 1)),
            &[0.0, 1.0],
        );
        ok.pop();
        assert!(decode_blob(&ok).is_err());
    }
}
