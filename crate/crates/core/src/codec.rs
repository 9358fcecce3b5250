//! Chunk codecs applied at population time and undone after a fetch.
//!
//! `Factor` is a size-only stand-in for an external compressor such as
//! CacheGen: it shrinks the payload by a fixed ratio and restores the length on
//! decode, but decoded values carry no meaning. Do not use it where the KV
//! values matter.

use std::fmt;
use std::str::FromStr;

use half::f16;
use thiserror::Error;

/// Reduction ratio the CacheGen stand-in applies.
pub const CACHEGEN_FACTOR: f64 = 8.6;

/// Bytes of scale metadata in front of a quant8 payload: min and max as f16.
pub const QUANT8_HEADER: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("quant8 input must hold whole 16-bit floats, got {0} bytes")]
    OddLength(usize),
    #[error("quant8 input holds a non-finite value at element {0}")]
    NonFinite(usize),
    #[error("encoded length {actual} does not match expected {expected} for {codec}")]
    LengthMismatch { codec: String, expected: u64, actual: u64 },
    #[error("unknown codec {0:?}")]
    Unknown(String),
    #[error("factor codec ratio must be > 1, got {0}")]
    BadRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Codec {
    Identity,
    /// Per-chunk min/max affine quantization of f16 values to u8.
    Quant8,
    /// Size-only reduction by a ratio > 1.
    Factor(f64),
}

impl Codec {
    pub fn factor(ratio: f64) -> Result<Codec, CodecError> {
        if ratio > 1.0 && ratio.is_finite() {
            Ok(Codec::Factor(ratio))
        } else {
            Err(CodecError::BadRatio(ratio))
        }
    }

    pub fn cachegen() -> Codec {
        Codec::Factor(CACHEGEN_FACTOR)
    }

    /// Encoded size of an `n`-byte payload.
    pub fn encoded_len(&self, n: u64) -> u64 {
        match *self {
            Codec::Identity => n,
            Codec::Quant8 => n / 2 + QUANT8_HEADER as u64,
            Codec::Factor(r) => (n as f64 / r).ceil() as u64,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Codec::Identity)
    }

    pub fn encode(&self, payload: &[u8]) -> Result<Vec<u8>, CodecError> {
        match *self {
            Codec::Identity => Ok(payload.to_vec()),
            Codec::Quant8 => quant8_encode(payload),
            Codec::Factor(_) => {
                let m = self.encoded_len(payload.len() as u64) as usize;
                let mut out = vec![0u8; m];
                if m > 0 {
                    for (row, block) in payload.chunks(m).enumerate() {
                        for (slot, b) in out.iter_mut().zip(block) {
                            *slot ^= b.rotate_left(row as u32 & 7);
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn decode(&self, encoded: &[u8], original_len: u64) -> Result<Vec<u8>, CodecError> {
        let expected = self.encoded_len(original_len);
        if encoded.len() as u64 != expected {
            return Err(CodecError::LengthMismatch { codec: self.to_string(), expected, actual: encoded.len() as u64 });
        }
        match *self {
            Codec::Identity => Ok(encoded.to_vec()),
            Codec::Quant8 => {
                if !original_len.is_multiple_of(2) {
                    return Err(CodecError::OddLength(original_len as usize));
                }
                Ok(quant8_decode(encoded))
            }
            Codec::Factor(_) => {
                let m = encoded.len();
                if m == 0 {
                    return Ok(Vec::new());
                }
                Ok((0..original_len as usize).map(|i| encoded[i % m]).collect())
            }
        }
    }
}

fn quant8_encode(payload: &[u8]) -> Result<Vec<u8>, CodecError> {
    if !payload.len().is_multiple_of(2) {
        return Err(CodecError::OddLength(payload.len()));
    }
    let values: Vec<f64> = payload.chunks_exact(2).map(|b| f16::from_le_bytes([b[0], b[1]]).to_f64()).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite(i));
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if values.is_empty() { (0.0, 0.0) } else { (lo, hi) };

    let mut out = Vec::with_capacity(QUANT8_HEADER + values.len());
    // lo and hi came from f16 inputs, so they round-trip exactly
    out.extend_from_slice(&f16::from_f64(lo).to_le_bytes());
    out.extend_from_slice(&f16::from_f64(hi).to_le_bytes());
    let range = hi - lo;
    out.extend(values.iter().map(|&v| if range == 0.0 { 0u8 } else { ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8 }));
    Ok(out)
}

fn quant8_decode(encoded: &[u8]) -> Vec<u8> {
    let lo = f16::from_le_bytes([encoded[0], encoded[1]]).to_f64();
    let hi = f16::from_le_bytes([encoded[2], encoded[3]]).to_f64();
    let step = (hi - lo) / 255.0;
    encoded[QUANT8_HEADER..].iter().flat_map(|&q| f16::from_f64(lo + q as f64 * step).to_le_bytes()).collect()
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Codec::Identity => write!(f, "identity"),
            Codec::Quant8 => write!(f, "quant8"),
            Codec::Factor(r) => write!(f, "factor:{r}"),
        }
    }
}

impl FromStr for Codec {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Codec, CodecError> {
        match s.trim() {
            "identity" | "none" => Ok(Codec::Identity),
            "quant8" => Ok(Codec::Quant8),
            "cachegen" => Ok(Codec::cachegen()),
            other => match other.strip_prefix("factor:").map(str::parse::<f64>) {
                Some(Ok(r)) => Codec::factor(r),
                _ => Err(CodecError::Unknown(other.to_string())),
            },
        }
    }
}

/// Packs f32 values as little-endian f16 bytes.
pub fn f16_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|&v| f16::from_f32(v).to_le_bytes()).collect()
}

/// Unpacks little-endian f16 bytes.
pub fn f16_values(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(2).map(|b| f16::from_le_bytes([b[0], b[1]]).to_f32()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encoded_sizes() {
        assert_eq!(Codec::Quant8.encode(&vec![0u8; 1 << 20]).unwrap().len(), 524_292);
        assert_eq!(Codec::cachegen().encoded_len(268_435_456), 31_213_426);
        assert_eq!(Codec::Identity.encoded_len(17), 17);
    }

    #[test]
    fn identity_round_trip() {
        let data: Vec<u8> = (0..=255).collect();
        let enc = Codec::Identity.encode(&data).unwrap();
        assert_eq!(enc, data);
        assert_eq!(Codec::Identity.decode(&enc, 256).unwrap(), data);
    }

    #[test]
    fn quant8_rejects_odd_and_non_finite() {
        assert_eq!(Codec::Quant8.encode(&[1, 2, 3]), Err(CodecError::OddLength(3)));
        let bytes = f16_bytes(&[1.0, f32::NAN]);
        assert_eq!(Codec::Quant8.encode(&bytes), Err(CodecError::NonFinite(1)));
    }

    #[test]
    fn quant8_constant_payload_is_exact() {
        let bytes = f16_bytes(&[0.375; 1000]);
        let enc = Codec::Quant8.encode(&bytes).unwrap();
        assert_eq!(Codec::Quant8.decode(&enc, bytes.len() as u64).unwrap(), bytes);
    }

    #[test]
    fn factor_restores_length_only() {
        let codec = Codec::factor(4.0).unwrap();
        let data = vec![7u8; 1001];
        let enc = codec.encode(&data).unwrap();
        assert_eq!(enc.len(), 251);
        assert_eq!(codec.decode(&enc, 1001).unwrap().len(), 1001);
    }

    #[test]
    fn decode_rejects_length_mismatch() {
        let err = Codec::Quant8.decode(&[0u8; 10], 100).unwrap_err();
        assert!(matches!(err, CodecError::LengthMismatch { expected: 54, actual: 10, .. }));
        assert!(Codec::Identity.decode(&[0u8; 3], 4).is_err());
    }

    #[test]
    fn parse_and_display() {
        for c in [Codec::Identity, Codec::Quant8, Codec::Factor(8.6)] {
            assert_eq!(c.to_string().parse::<Codec>().unwrap(), c);
        }
        assert_eq!("cachegen".parse::<Codec>().unwrap(), Codec::Factor(8.6));
        assert!("factor:0.5".parse::<Codec>().is_err());
        assert!("zstd".parse::<Codec>().is_err());
    }

    /// Reference quantizer: requantize each element independently against the
    /// payload's min/max, without going through the byte format.
    fn requantize(values: &[f32]) -> Vec<f64> {
        let lo = values.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
        let hi = values.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        values
            .iter()
            .map(|&v| {
                if hi == lo {
                    return lo;
                }
                let level = ((v as f64 - lo) / (hi - lo) * 255.0).round();
                lo + level * (hi - lo) / 255.0
            })
            .collect()
    }

    fn f16_ulp(v: f64) -> f64 {
        let h = f16::from_f64(v.abs());
        let next = f16::from_bits(h.to_bits() + 1);
        next.to_f64() - h.to_f64()
    }

    proptest! {
        #[test]
        fn quant8_error_bound(raw in prop::collection::vec(-1.0f32..1.0, 1..2000)) {
            let bytes = f16_bytes(&raw);
            let values = f16_values(&bytes);
            let enc = Codec::Quant8.encode(&bytes).unwrap();
            prop_assert_eq!(enc.len(), bytes.len() / 2 + QUANT8_HEADER);
            let dec = f16_values(&Codec::Quant8.decode(&enc, bytes.len() as u64).unwrap());
            let oracle = requantize(&values);

            let lo = values.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
            let hi = values.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let half_level = (hi - lo) / 255.0 * 0.5;
            for ((&v, &d), &o) in values.iter().zip(&dec).zip(&oracle) {
                let err = (v as f64 - d as f64).abs();
                prop_assert!(err <= half_level + f16_ulp(v as f64) + 1e-12, "err {} bound {}", err, half_level);
                prop_assert!(err <= 2.0 / 255.0);
                // decoded value is the oracle's level rounded to f16
                prop_assert!((d as f64 - o).abs() <= f16_ulp(o));
            }
        }

        #[test]
        fn factor_size_law(n in 1024u64..200_000, r in 1.5f64..20.0) {
            let codec = Codec::factor(r).unwrap();
            let enc = codec.encode(&vec![1u8; n as usize]).unwrap();
            prop_assert_eq!(enc.len() as u64, (n as f64 / r).ceil() as u64);
        }
    }
}
