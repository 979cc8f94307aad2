//! Canonical weight encoding:
//! `"FLW1" | u32 layer_count | u32 shape[layer_count] | f64 values[..]`,
//! all little-endian.

use super::model::{check_shapes, param_count, WeightVector};
use super::FlError;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"FLW1";

pub fn encoded_len(shapes: &[usize]) -> usize {
    4 + 4 + 4 * shapes.len() + 8 * param_count(shapes)
}

pub fn encode_weights(w: &WeightVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(&w.shapes));
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(w.shapes.len() as u32).to_le_bytes());
    for &s in &w.shapes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for v in &w.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightVector, FlError> {
    let take_u32 = |at: usize| -> Result<u32, FlError> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or(FlError::Codec("truncated header"))
    };
    if bytes.get(..4) != Some(WEIGHTS_MAGIC.as_slice()) {
        return Err(FlError::Codec("bad magic"));
    }
    let n_layers = take_u32(4)? as usize;
    if n_layers > 64 {
        return Err(FlError::Codec("implausible layer count"));
    }
    let shapes = (0..n_layers)
        .map(|i| take_u32(8 + 4 * i).map(|s| s as usize))
        .collect::<Result<Vec<_>, _>>()?;
    check_shapes(&shapes).map_err(|_| FlError::Codec("invalid shapes"))?;
    if bytes.len() != encoded_len(&shapes) {
        return Err(FlError::Codec("length does not match shapes"));
    }
    let values: Vec<f64> = bytes[8 + 4 * n_layers..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FlError::Codec("non-finite value"));
    }
    Ok(WeightVector { shapes, values })
}
