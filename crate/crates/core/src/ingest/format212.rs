//! Format 212: pairs of 12-bit two's-complement samples packed into 3 bytes.
//!
//! ```text
//! byte 0: low 8 bits of sample A
//! byte 1: high nibble of B (bits 7..4) | high nibble of A (bits 3..0)
//! byte 2: low 8 bits of sample B
//! ```
//! Samples are frame-interleaved, so with two signals A is channel 0 and B
//! channel 1 of the same frame.

use crate::error::{Error, Result};

pub const MIN_SAMPLE: i16 = -2048;
pub const MAX_SAMPLE: i16 = 2047;

#[inline]
fn sign_extend_12(v: u16) -> i16 {
    ((v << 4) as i16) >> 4
}

/// Decodes `n_samples` frames of `n_signals` interleaved channels.
///
/// Returns one vector per signal.
pub fn decode_format212(raw: &[u8], n_samples: usize, n_signals: usize) -> Result<Vec<Vec<i16>>> {
    if !(1..=2).contains(&n_signals) {
        return Err(Error::Usage(format!(
            "format 212 decoding expects 1 or 2 signals, got {n_signals}"
        )));
    }
    let total = n_samples * n_signals;
    let needed = (total * 3).div_ceil(2);
    if raw.len() < needed {
        // Start of the first incomplete 3-byte group.
        let offset = raw.len() / 3 * 3;
        return Err(Error::parse_offset(
            offset,
            format!("truncated format-212 stream: need {needed} bytes, have {}", raw.len()),
        ));
    }

    let mut out = vec![Vec::with_capacity(n_samples); n_signals];
    for k in 0..total {
        let group = k / 2;
        let b = &raw[group * 3..];
        let value = if k % 2 == 0 {
            sign_extend_12(u16::from(b[0]) | (u16::from(b[1] & 0x0F) << 8))
        } else {
            sign_extend_12(u16::from(b[2]) | (u16::from(b[1] & 0xF0) << 4))
        };
        out[k % n_signals].push(value);
    }
    Ok(out)
}

/// Packs frame-interleaved samples. An odd count pads the last group with a
/// zero second sample, written as 2 bytes.
pub fn encode_format212(signals: &[Vec<i16>]) -> Result<Vec<u8>> {
    let n_signals = signals.len();
    if !(1..=2).contains(&n_signals) {
        return Err(Error::Usage(format!(
            "format 212 encoding expects 1 or 2 signals, got {n_signals}"
        )));
    }
    let n = signals[0].len();
    if signals.iter().any(|s| s.len() != n) {
        return Err(Error::Shape("signals differ in length".into()));
    }
    let interleaved: Vec<i16> = (0..n)
        .flat_map(|i| signals.iter().map(move |s| s[i]))
        .collect();
    if let Some(v) = interleaved
        .iter()
        .find(|v| !(MIN_SAMPLE..=MAX_SAMPLE).contains(*v))
    {
        return Err(Error::Usage(format!("sample {v} does not fit in 12 bits")));
    }

    let mut out = Vec::with_capacity((interleaved.len() * 3).div_ceil(2));
    for pair in interleaved.chunks(2) {
        let a = pair[0] as u16 & 0x0FFF;
        let b = pair.get(1).map_or(0, |&v| v as u16 & 0x0FFF);
        out.push((a & 0xFF) as u8);
        out.push((((b >> 8) << 4) | (a >> 8)) as u8);
        if pair.len() == 2 {
            out.push((b & 0xFF) as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_bytes() {
        assert_eq!(decode_format212(&[0, 0, 0], 2, 1).unwrap(), vec![vec![0, 0]]);
    }

    #[test]
    fn known_packing() {
        let s = decode_format212(&[0x21, 0x43, 0x65], 1, 2).unwrap();
        assert_eq!(s, vec![vec![801], vec![1125]]);
    }

    #[test]
    fn all_ones_is_minus_one() {
        let s = decode_format212(&[0xFF, 0xFF, 0xFF], 2, 1).unwrap();
        assert_eq!(s, vec![vec![-1, -1]]);
    }

    #[test]
    fn extremes() {
        let bytes = encode_format212(&[vec![-2048], vec![2047]]).unwrap();
        assert_eq!(decode_format212(&bytes, 1, 2).unwrap(), vec![vec![-2048], vec![2047]]);
    }

    #[test]
    fn odd_sample_count_single_channel() {
        let bytes = encode_format212(&[vec![5, -6, 7]]).unwrap();
        assert_eq!(bytes.len(), 5);
        assert_eq!(decode_format212(&bytes, 3, 1).unwrap(), vec![vec![5, -6, 7]]);
    }

    #[test]
    fn truncated_stream_reports_offset() {
        let err = decode_format212(&[1, 2, 3, 4], 2, 2).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, Some(3)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(encode_format212(&[vec![2048]]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(pairs in proptest::collection::vec((-2048i16..=2047, -2048i16..=2047), 1..64)) {
            let a: Vec<i16> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<i16> = pairs.iter().map(|p| p.1).collect();
            let bytes = encode_format212(&[a.clone(), b.clone()]).unwrap();
            let back = decode_format212(&bytes, a.len(), 2).unwrap();
            prop_assert_eq!(back, vec![a, b]);
        }
    }
}
