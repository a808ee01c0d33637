//! MIT-format annotation streams (`.atr`).
//!
//! The stream is a sequence of little-endian 16-bit words; the top 6 bits
//! carry the annotation code and the low 10 bits either a time delta (beat
//! and marker codes) or a payload length/value (pseudo-codes).

use crate::error::{Error, Result};

pub const SKIP: u8 = 59;
pub const NUM: u8 = 60;
pub const SUB: u8 = 61;
pub const CHN: u8 = 62;
pub const AUX: u8 = 63;
/// Highest code that denotes an actual annotation.
pub const ACMAX: u8 = 49;

/// Standard WFDB mnemonics for codes 0..=41. Unassigned codes map to `None`.
const MNEMONICS: [Option<char>; 42] = [
    Some(' '), Some('N'), Some('L'), Some('R'), Some('a'), Some('V'), Some('F'), Some('J'),
    Some('A'), Some('S'), Some('E'), Some('j'), Some('/'), Some('Q'), Some('~'), None,
    Some('|'), None, Some('s'), Some('T'), Some('*'), Some('D'), Some('"'), Some('='),
    Some('p'), Some('B'), Some('^'), Some('t'), Some('+'), Some('u'), Some('?'), Some('!'),
    Some('['), Some(']'), Some('e'), Some('n'), Some('@'), Some('x'), Some('f'), Some('('),
    Some(')'), Some('r'),
];

pub fn mnemonic(code: u8) -> Option<char> {
    MNEMONICS.get(code as usize).copied().flatten()
}

pub fn code_for_mnemonic(symbol: char) -> Option<u8> {
    MNEMONICS
        .iter()
        .position(|m| *m == Some(symbol))
        .map(|p| p as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnotationEvent {
    pub sample_index: u64,
    pub code: u8,
    /// Standard mnemonic, or `'?'` for codes without one.
    pub mnemonic: char,
}

impl AnnotationEvent {
    pub fn new(sample_index: u64, code: u8) -> Self {
        Self {
            sample_index,
            code,
            mnemonic: mnemonic(code).unwrap_or('?'),
        }
    }
}

fn word_at(raw: &[u8], pos: usize) -> Result<u16> {
    raw.get(pos..pos + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| Error::parse_offset(pos, "truncated annotation word"))
}

pub fn parse_annotations(raw: &[u8]) -> Result<Vec<AnnotationEvent>> {
    let mut events = Vec::new();
    let mut time: i64 = 0;
    let mut pos = 0usize;

    while pos + 1 < raw.len() {
        let word_pos = pos;
        let word = word_at(raw, pos)?;
        pos += 2;
        let code = (word >> 10) as u8;
        let data = word & 0x03FF;

        match code {
            0 if data == 0 => {
                // A null word is end-of-file unless it introduces an AUX
                // payload (the leading "## time resolution" style record).
                match raw.get(pos..pos + 2) {
                    Some(b) if (u16::from_le_bytes([b[0], b[1]]) >> 10) as u8 == AUX => continue,
                    _ => break,
                }
            }
            SKIP => {
                let hi = word_at(raw, pos)?;
                let lo = word_at(raw, pos + 2)?;
                pos += 4;
                let interval = ((u32::from(hi) << 16) | u32::from(lo)) as i32;
                time += i64::from(interval);
                if time < 0 {
                    return Err(Error::parse_offset(word_pos, "SKIP produces a negative sample index"));
                }
            }
            NUM | SUB | CHN => {}
            AUX => {
                let len = data as usize;
                let padded = len + (len & 1);
                if pos + len > raw.len() {
                    return Err(Error::parse_offset(word_pos, "AUX payload runs past end of stream"));
                }
                pos = (pos + padded).min(raw.len());
            }
            c if c <= ACMAX => {
                time += i64::from(data);
                if time < 0 {
                    return Err(Error::parse_offset(word_pos, "negative sample index"));
                }
                events.push(AnnotationEvent::new(time as u64, c));
            }
            c => {
                return Err(Error::parse_offset(word_pos, format!("unknown annotation code {c}")));
            }
        }
    }
    Ok(events)
}

/// Encodes events (sorted by sample index) as an MIT annotation stream,
/// using SKIP words for gaps wider than 10 bits.
pub fn encode_annotations(events: &[AnnotationEvent]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(events.len() * 2 + 2);
    let mut prev = 0u64;
    for e in events {
        if e.code > ACMAX {
            return Err(Error::Usage(format!("code {} is not an annotation code", e.code)));
        }
        let delta = e
            .sample_index
            .checked_sub(prev)
            .ok_or_else(|| Error::Usage("events must be sorted by sample index".into()))?;
        let data = if delta > 0x03FF {
            let interval = i32::try_from(delta)
                .map_err(|_| Error::Usage("gap exceeds 32-bit SKIP interval".into()))?;
            out.extend_from_slice(&(u16::from(SKIP) << 10).to_le_bytes());
            out.extend_from_slice(&((interval as u32 >> 16) as u16).to_le_bytes());
            out.extend_from_slice(&((interval as u32 & 0xFFFF) as u16).to_le_bytes());
            0
        } else {
            delta as u16
        };
        out.extend_from_slice(&((u16::from(e.code) << 10) | data).to_le_bytes());
        prev = e.sample_index;
    }
    out.extend_from_slice(&[0, 0]);
    Ok(out)
}
