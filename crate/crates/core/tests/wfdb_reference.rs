//! Decoding checked against the reference WFDB implementation. The fixture
//! files and `expected.json` come from `python/make_wfdb_fixtures.py`.

use std::path::PathBuf;

use ecgkit::ingest::beats::LeadChoice;
use ecgkit::ingest::record::{ingest_directory, load_record, record_beats};
use ecgkit::ingest::{decode_format212, parse_annotations, parse_header};
use serde_json::Value;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wfdb")
}

fn expected() -> Value {
    let text = std::fs::read_to_string(fixture_dir().join("expected.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn ints(v: &Value) -> Vec<i64> {
    v.as_array().unwrap().iter().map(|x| x.as_i64().unwrap()).collect()
}

#[test]
fn header_matches_reference() {
    let exp = expected();
    let h = parse_header(&std::fs::read(fixture_dir().join("synth01.hea")).unwrap()).unwrap();
    assert_eq!(h.sampling_rate, exp["fs"].as_f64().unwrap());
    assert_eq!(h.n_samples as i64, exp["sig_len"].as_i64().unwrap());
    let names: Vec<&str> = h.signals.iter().map(|s| s.description.as_str()).collect();
    assert_eq!(names, vec!["MLII", "V1"]);
    for (i, s) in h.signals.iter().enumerate() {
        assert_eq!(s.format, 212);
        assert_eq!(s.gain, exp["adc_gain"][i].as_f64().unwrap());
        assert_eq!(i64::from(s.baseline), exp["baseline"][i].as_i64().unwrap());
    }
    // Writer round trip on a header produced by the reference writer.
    assert_eq!(parse_header(h.to_hea_string().as_bytes()).unwrap(), h);
}

#[test]
fn signal_matches_reference() {
    let exp = expected();
    let raw = std::fs::read(fixture_dir().join("synth01.dat")).unwrap();
    let n = exp["sig_len"].as_u64().unwrap() as usize;
    let decoded = decode_format212(&raw, n, 2).unwrap();
    for k in 0..2 {
        let want = ints(&exp["signals"][k]);
        let got: Vec<i64> = decoded[k].iter().map(|&v| i64::from(v)).collect();
        assert_eq!(got, want, "signal {k}");
    }
}

#[test]
fn annotations_match_reference() {
    let exp = expected();
    let raw = std::fs::read(fixture_dir().join("synth01.atr")).unwrap();
    let events = parse_annotations(&raw).unwrap();
    let samples: Vec<i64> = events.iter().map(|e| e.sample_index as i64).collect();
    let codes: Vec<i64> = events.iter().map(|e| i64::from(e.code)).collect();
    let symbols: Vec<String> = events.iter().map(|e| e.mnemonic.to_string()).collect();
    assert_eq!(samples, ints(&exp["ann_sample"]));
    assert_eq!(codes, ints(&exp["ann_code"]));
    let want: Vec<String> = exp["ann_symbol"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect();
    assert_eq!(symbols, want);
    assert!(samples.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn record_to_beats() {
    let rec = load_record(&fixture_dir(), "synth01", "atr").unwrap();
    let beats = record_beats(&rec, &LeadChoice::PreferMlii, 187).unwrap();
    // N, A, V, f, F are interior; '+' and '/' are not beat classes.
    let labels: Vec<usize> = beats.iter().map(|b| b.label).collect();
    assert_eq!(labels, vec![0, 1, 2, 3, 4]);
    for b in &beats {
        b.validate(187).unwrap();
    }

    let (ds, summary) = ingest_directory(&fixture_dir(), &LeadChoice::Exact("MLII".into()), 187, "atr").unwrap();
    assert_eq!(summary.records, vec!["synth01"]);
    assert_eq!(ds.len(), 5);

    let (ds, summary) = ingest_directory(&fixture_dir(), &LeadChoice::Exact("V5".into()), 187, "atr").unwrap();
    assert_eq!(summary.skipped, vec!["synth01"]);
    assert!(ds.is_empty());
}
