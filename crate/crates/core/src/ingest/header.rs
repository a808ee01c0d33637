//! `.hea` record headers.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// WFDB default when the record line omits a sampling frequency.
const DEFAULT_FS: f64 = 250.0;
const DEFAULT_GAIN: f64 = 200.0;

/// The only signal storage format the decoder handles.
pub const FORMAT_212: u16 = 212;

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub file_name: String,
    pub format: u16,
    /// ADC units per millivolt.
    pub gain: f64,
    pub baseline: i32,
    pub adc_resolution: Option<u32>,
    pub adc_zero: Option<i32>,
    pub initial_value: Option<i32>,
    pub checksum: Option<i32>,
    pub block_size: Option<u32>,
    /// Lead name such as `MLII` or `V1`.
    pub description: String,
}

impl SignalSpec {
    pub fn is_supported(&self) -> bool {
        self.format == FORMAT_212
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordHeader {
    pub record_name: String,
    pub sampling_rate: f64,
    pub n_samples: usize,
    pub signals: Vec<SignalSpec>,
}

impl RecordHeader {
    pub fn n_signals(&self) -> usize {
        self.signals.len()
    }

    /// Index of the signal whose description matches `lead` exactly.
    pub fn lead_index(&self, lead: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.description == lead)
    }

    pub fn unsupported_signals(&self) -> Vec<(usize, u16)> {
        self.signals
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_supported())
            .map(|(i, s)| (i, s.format))
            .collect()
    }

    /// Fails unless every signal is stored in format 212 in one shared file.
    pub fn ensure_decodable(&self) -> Result<()> {
        if let Some((i, fmt)) = self.unsupported_signals().first() {
            return Err(Error::Config(format!(
                "record {}: signal {} uses unsupported format {}",
                self.record_name, i, fmt
            )));
        }
        let first = &self.signals[0].file_name;
        if self.signals.iter().any(|s| &s.file_name != first) {
            return Err(Error::Config(format!(
                "record {}: signals spread over several files",
                self.record_name
            )));
        }
        if self.signals.len() > 2 {
            return Err(Error::Config(format!(
                "record {}: format-212 decoding supports at most 2 signals, found {}",
                self.record_name,
                self.signals.len()
            )));
        }
        Ok(())
    }

    /// Renders the header in `.hea` syntax. Fields that were absent on parse
    /// are omitted, so parsing the output yields an equal header.
    pub fn to_hea_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {}",
            self.record_name,
            self.signals.len(),
            fmt_num(self.sampling_rate),
            self.n_samples
        );
        for s in &self.signals {
            let _ = write!(
                out,
                "{} {} {}({})",
                s.file_name,
                s.format,
                fmt_num(s.gain),
                s.baseline
            );
            let tail = [
                s.adc_resolution.map(|v| v.to_string()),
                s.adc_zero.map(|v| v.to_string()),
                s.initial_value.map(|v| v.to_string()),
                s.checksum.map(|v| v.to_string()),
                s.block_size.map(|v| v.to_string()),
            ];
            let mut wrote_all = true;
            for field in tail {
                match field {
                    Some(v) if wrote_all => {
                        let _ = write!(out, " {v}");
                    }
                    _ => wrote_all = false,
                }
            }
            if wrote_all && !s.description.is_empty() {
                let _ = write!(out, " {}", s.description);
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Parses the text content of a `.hea` file.
pub fn parse_header(raw: &[u8]) -> Result<RecordHeader> {
    let text = std::str::from_utf8(raw)
        .map_err(|e| Error::parse_offset(e.valid_up_to(), "header is not valid UTF-8"))?;

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line_no, record_line) = lines
        .next()
        .ok_or_else(|| Error::parse_line(1, "empty header"))?;
    let fields: Vec<&str> = record_line.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(Error::parse_line(line_no, "record line needs a name and a signal count"));
    }

    let record_name = fields[0].split('/').next().unwrap_or_default().to_string();
    if fields[0].contains('/') {
        return Err(Error::parse_line(line_no, "multi-segment records are not supported"));
    }
    let n_signals: usize = fields[1]
        .parse()
        .map_err(|_| Error::parse_line(line_no, format!("bad signal count {:?}", fields[1])))?;
    if n_signals == 0 {
        return Err(Error::parse_line(line_no, "record declares zero signals"));
    }

    let sampling_rate = match fields.get(2) {
        // `360/...` (counter frequency) and `360(base)` suffixes are ignored.
        Some(f) => {
            let head = f.split(['/', '(']).next().unwrap_or_default();
            head.parse::<f64>()
                .map_err(|_| Error::parse_line(line_no, format!("bad sampling frequency {f:?}")))?
        }
        None => DEFAULT_FS,
    };
    if !(sampling_rate > 0.0) {
        return Err(Error::parse_line(line_no, "sampling frequency must be positive"));
    }
    let n_samples = match fields.get(3) {
        Some(f) => f
            .parse()
            .map_err(|_| Error::parse_line(line_no, format!("bad sample count {f:?}")))?,
        None => 0,
    };

    let mut signals = Vec::with_capacity(n_signals);
    for _ in 0..n_signals {
        let (line_no, line) = lines.next().ok_or_else(|| {
            Error::parse_line(
                line_no + signals.len() + 1,
                format!("expected {n_signals} signal lines, found {}", signals.len()),
            )
        })?;
        signals.push(parse_signal_line(line_no, line)?);
    }

    Ok(RecordHeader {
        record_name,
        sampling_rate,
        n_samples,
        signals,
    })
}

fn parse_signal_line(line_no: usize, line: &str) -> Result<SignalSpec> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let description = parts.get(8..).map(|d| d.join(" ")).unwrap_or_default();
    let mut fields = parts.into_iter().take(8);
    let bad = |what: &str, f: &str| Error::parse_line(line_no, format!("bad {what} {f:?}"));

    let file_name = fields
        .next()
        .ok_or_else(|| Error::parse_line(line_no, "missing file name"))?
        .to_string();
    let fmt_field = fields
        .next()
        .ok_or_else(|| Error::parse_line(line_no, "missing format"))?;
    let digits: String = fmt_field.chars().take_while(|c| c.is_ascii_digit()).collect();
    let format: u16 = digits.parse().map_err(|_| bad("format", fmt_field))?;

    let mut gain = DEFAULT_GAIN;
    let mut baseline = None;
    if let Some(g) = fields.next() {
        // gain[(baseline)][/units]
        let g = g.split('/').next().unwrap_or_default();
        let (gain_str, base_str) = match g.find('(') {
            Some(p) => (&g[..p], Some(g[p + 1..].trim_end_matches(')'))),
            None => (g, None),
        };
        gain = gain_str.parse().map_err(|_| bad("gain", g))?;
        if gain == 0.0 {
            gain = DEFAULT_GAIN;
        }
        if let Some(b) = base_str {
            baseline = Some(b.parse().map_err(|_| bad("baseline", b))?);
        }
    }

    let mut next_num = |what: &str| -> Result<Option<i64>> {
        match fields.next() {
            Some(f) => f.parse().map(Some).map_err(|_| bad(what, f)),
            None => Ok(None),
        }
    };
    let adc_resolution = next_num("adc resolution")?.map(|v| v as u32);
    let adc_zero = next_num("adc zero")?.map(|v| v as i32);
    let initial_value = next_num("initial value")?.map(|v| v as i32);
    let checksum = next_num("checksum")?.map(|v| v as i32);
    let block_size = next_num("block size")?.map(|v| v as u32);

    Ok(SignalSpec {
        file_name,
        format,
        gain,
        baseline: baseline.or(adc_zero).unwrap_or(0),
        adc_resolution,
        adc_zero,
        initial_value,
        checksum,
        block_size,
        description,
    })
}
