//! GCB1 codebook file.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{
    check_version, f32_values, parse_json, push_f32, push_prefixed, Cursor, FORMAT_VERSION,
};
use crate::tokenizer::{Codebooks, EpochLog};
use crate::{Error, Result};

pub const MAGIC: &str = "GCB1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gcb1Header {
    pub version: u32,
    #[serde(rename = "P")]
    pub books: usize,
    #[serde(rename = "K")]
    pub size: usize,
    pub dim: usize,
    pub decay: f64,
    pub seed: u64,
    #[serde(default)]
    pub log: Vec<EpochLog>,
}

/// Codes are stored as `f32`; EMA statistics restart from the stored codes.
pub fn to_bytes(books: &Codebooks, seed: u64, log: &[EpochLog]) -> Result<Vec<u8>> {
    let header = Gcb1Header {
        version: FORMAT_VERSION,
        books: books.books(),
        size: books.size(),
        dim: books.dim(),
        decay: books.decay,
        seed,
        log: log.to_vec(),
    };
    let mut out = MAGIC.as_bytes().to_vec();
    push_prefixed(&mut out, &serde_json::to_vec(&header)?);
    push_f32(&mut out, books.codes.iter().copied());
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Gcb1Header, Codebooks)> {
    let mut c = Cursor::new(bytes);
    c.magic(MAGIC)?;
    let header: Gcb1Header = parse_json(c.prefixed("header")?)?;
    check_version(MAGIC, header.version)?;
    let n = header
        .books
        .checked_mul(header.size)
        .and_then(|x| x.checked_mul(header.dim))
        .ok_or_else(|| Error::Header("codebook dimensions overflow".into()))?;
    let codes: Vec<f64> = f32_values(c.take(n * 4, "codes")?)
        .into_iter()
        .map(f64::from)
        .collect();
    c.finish()?;
    let codes = Array3::from_shape_vec((header.books, header.size, header.dim), codes)
        .expect("length checked");
    let books = Codebooks::from_codes(codes, header.decay)?;
    Ok((header, books))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let codes =
            Array3::from_shape_fn((2, 16, 4), |(p, k, d)| (p * 100 + k * 4 + d) as f64 * 0.1);
        let books = Codebooks::from_codes(codes, 0.99).unwrap();
        let log = vec![EpochLog {
            epoch: 0,
            commitment: 0.25,
            perplexity: vec![15.5, 16.0],
            refreshed: 2,
        }];
        let bytes = to_bytes(&books, 7, &log).unwrap();
        let (h, back) = from_bytes(&bytes).unwrap();
        assert_eq!((h.books, h.size, h.dim, h.seed), (2, 16, 4, 7));
        assert_eq!(to_bytes(&back, h.seed, &h.log).unwrap(), bytes);
        assert!(
            matches!(from_bytes(&bytes[..bytes.len() - 4]), Err(Error::Truncated(s)) if s == "codes")
        );
    }
}
