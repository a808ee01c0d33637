//! Acceptance criteria. Each test prints one PASS/FAIL line; run with
//! `cargo test --test acceptance -- --nocapture --test-threads=1`.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ecgkit::ensemble::{build_strategy, fuse, predict, top2_weights, Strategy};
use ecgkit::eval::{confusion, evaluate, grad_cam, prf1, roc_auc};
use ecgkit::gan::{balance_dataset, train_class_gans, GanTrainConfig};
use ecgkit::ingest::beats::hold_out_test;
use ecgkit::ingest::record::ingest_directory;
use ecgkit::ingest::{
    decode_format212, encode_format212, parse_header, stratified_split, BeatDataset, BeatRecord, BeatSource,
    LeadChoice, SplitTag, N_CLASSES,
};
use ecgkit::models::{build, Architecture, ModelDescriptor};
use ecgkit::tensor::{softmax_rows, Graph, Mode, Tensor};
use ecgkit::train::{batch_tensor, focal_loss, train, FocalLossConfig, PlateauScheduler, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    println!("[criterion {n:>2}] {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

#[test]
fn criterion_01_gradient_checks() {
    const SEEDS: u64 = 20;
    let mut worst = (0.0f64, "");
    let mut failures = Vec::new();
    for &op in common::OPS {
        for seed in 0..SEEDS {
            let r = common::gradcheck_op(op, seed).unwrap();
            if r.max_rel_err > worst.0 {
                worst = (r.max_rel_err, op);
            }
            if !r.passed() || r.checked == 0 {
                failures.push(format!("{op}#{seed}"));
            }
        }
    }
    verdict(
        1,
        "gradient checks",
        failures.is_empty(),
        &format!(
            "{} ops x {SEEDS} seeds, worst rel err {:.2e} ({}), failures {:?}",
            common::OPS.len(),
            worst.0,
            worst.1,
            failures
        ),
    );
}

#[test]
fn criterion_02_focal_gamma0_is_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = FocalLossConfig { alpha: 1.0, gamma: 0.0 };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let b = rng.gen_range(1..=64);
        let c = rng.gen_range(2..=5);
        let logits: Vec<f64> = (0..b * c).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let y: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
        // Oracle: mean of log-sum-exp minus the target logit.
        let ce = (0..b)
            .map(|i| {
                let row = &logits[i * c..(i + 1) * c];
                let m = row.iter().cloned().fold(f64::MIN, f64::max);
                m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - row[y[i]]
            })
            .sum::<f64>()
            / b as f64;
        let z = Tensor::new(&[b, c], logits).unwrap();
        let direct = focal_loss(&softmax_rows(&z), &y, &cfg).unwrap();
        let mut g = Graph::<f64>::new(Mode::Eval);
        let zv = g.constant(z);
        let p = g.softmax(zv).unwrap();
        let l = g.focal_loss(p, &y, 1.0, 0.0).unwrap();
        let graph = g.value(l).data()[0];
        worst = worst.max((direct - ce).abs()).max((graph - ce).abs());
    }
    verdict(2, "focal(gamma=0) == CE", worst < 1e-9, &format!("100 batches, max |diff| {worst:.2e}"));
}

#[test]
fn criterion_03_scheduler_traces() {
    let mut ok = true;
    let mut notes = Vec::new();
    // Improve twice, then plateau: reductions land on the 3rd, 6th, ... flat epoch.
    let mut s = PlateauScheduler::new(1e-3);
    let trace = [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9];
    let lrs: Vec<f64> = trace.iter().map(|&l| {
        s.step(l);
        s.lr
    }).collect();
    let expected = [1e-3, 1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 5e-4, 2.5e-4];
    ok &= lrs == expected;
    notes.push(format!("plateau trace {lrs:?}"));
    // An improvement resets the count.
    let mut s = PlateauScheduler::new(1e-3);
    for l in [1.0, 1.0, 1.0, 0.5, 0.5, 0.5] {
        s.step(l);
    }
    ok &= s.lr == 1e-3;
    // A drop within the threshold is not an improvement.
    let mut s = PlateauScheduler::new(1e-3);
    for l in [1.0, 1.0 - 5e-9, 1.0 - 9e-9, 1.0 - 1e-8 + 1e-12] {
        s.step(l);
    }
    ok &= s.lr == 5e-4;
    // Floor: the rate settles exactly on min_lr.
    let mut s = PlateauScheduler::new(1e-3);
    for _ in 0..200 {
        s.step(1.0);
    }
    ok &= s.lr == 1e-6;
    notes.push(format!("floor {}", s.lr));
    verdict(3, "plateau scheduler", ok, &notes.join("; "));
}

#[test]
fn criterion_04_ensemble() {
    let (w1, w2) = top2_weights(0.956, 0.951).unwrap();
    let mut ok = (w1 - 0.50131).abs() < 1e-5 && (w2 - 0.49869).abs() < 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ids: Vec<String> = Architecture::ALL.iter().map(|a| a.to_string()).collect();
    let mut worst_sum = 0.0f64;
    for _ in 0..200 {
        let f1: Vec<f64> = (0..4).map(|_| rng.gen_range(0.01..1.0)).collect();
        for s in Strategy::ALL {
            let spec = build_strategy(&ids, &f1, s).unwrap();
            worst_sum = worst_sum.max((spec.weights.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ok &= worst_sum <= 1e-9;
    let mut invariance_failures = 0;
    for _ in 0..1000 {
        let m = rng.gen_range(2..=4);
        let n = rng.gen_range(1..=16);
        let sets: Vec<Tensor<f64>> = (0..m)
            .map(|_| Tensor::from_fn(&[n, N_CLASSES], |_| rng.gen_range(-5.0..5.0)))
            .collect();
        let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        // Powers of two keep the scaled sums exact.
        let c = 2f64.powi(rng.gen_range(-6..=6));
        let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
        if predict(&fuse(&sets, &w).unwrap()) != predict(&fuse(&sets, &scaled).unwrap()) {
            invariance_failures += 1;
        }
    }
    ok &= invariance_failures == 0;
    verdict(
        4,
        "ensemble weights",
        ok,
        &format!("top2 ({w1:.5}, {w2:.5}), max |sum-1| {worst_sum:.1e}, argmax scale failures {invariance_failures}/1000"),
    );
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut total, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                total += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    total / pairs
}

#[test]
fn criterion_05_metrics_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut worst_auc = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(10..=200);
        let t: Vec<usize> = (0..n).map(|_| rng.gen_range(0..N_CLASSES)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..N_CLASSES)).collect();
        let m = prf1(&confusion(&t, &p, N_CLASSES).unwrap());
        let count = |f: &dyn Fn(usize) -> bool| (0..n).filter(|&i| f(i)).count() as f64;
        let acc = count(&|i| t[i] == p[i]) / n as f64;
        mismatches += usize::from(m.accuracy != acc);
        let mut f1s = Vec::new();
        for c in 0..N_CLASSES {
            let tp = count(&|i| t[i] == c && p[i] == c);
            let fp = count(&|i| t[i] != c && p[i] == c);
            let fneg = count(&|i| t[i] == c && p[i] != c);
            let pr = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rc = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            let f1 = if pr + rc > 0.0 { 2.0 * pr * rc / (pr + rc) } else { 0.0 };
            f1s.push(f1);
            mismatches += usize::from(m.precision[c] != pr || m.recall[c] != rc || m.f1[c] != f1);
        }
        mismatches += usize::from(m.macro_f1 != f1s.iter().sum::<f64>() / N_CLASSES as f64);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..25) as f64 / 25.0).collect();
        let labels: Vec<bool> = t.iter().map(|&c| c == rng.gen_range(0..2)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            let auc = roc_auc(&scores, &labels).unwrap().auc;
            worst_auc = worst_auc.max((auc - brute_auc(&scores, &labels)).abs());
        }
    }
    verdict(
        5,
        "metrics oracle",
        mismatches == 0 && worst_auc < 1e-9,
        &format!("50 instances, {mismatches} count mismatches, max AUC diff {worst_auc:.1e}"),
    );
}

/// Published header of MIT-BIH record 100.
const RECORD_100_HEA: &str = "100 2 360 650000\n\
100.dat 212 200 11 1024 995 -22131 0 MLII\n\
100.dat 212 200 11 1024 1011 20052 0 V5\n\
# 69 M 1085 1629 x1\n\
# Aldomet, Inderal\n";

#[test]
fn criterion_06_wfdb() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 100_000;
    let a: Vec<i16> = (0..n).map(|_| rng.gen_range(-2048..=2047)).collect();
    let b: Vec<i16> = (0..n).map(|_| rng.gen_range(-2048..=2047)).collect();
    let bytes = encode_format212(&[a.clone(), b.clone()]).unwrap();
    let decoded = decode_format212(&bytes, n, 2).unwrap();
    let round_trip = decoded[0] == a && decoded[1] == b && bytes.len() == 3 * n;
    let h = parse_header(RECORD_100_HEA.as_bytes()).unwrap();
    let header_ok = h.sampling_rate == 360.0 && h.lead_index("MLII") == Some(0) && h.n_samples == 650_000;
    verdict(
        6,
        "format 212 / record 100",
        round_trip && header_ok,
        &format!("{n} pairs exact: {round_trip}; rate {} Hz, MLII at {:?}", h.sampling_rate, h.lead_index("MLII")),
    );
}

/// Real-source beats of distinct shapes per class, all tagged train.
fn skewed_dataset(counts: [usize; N_CLASSES], seed: u64) -> BeatDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beats = Vec::new();
    for (label, &n) in counts.iter().enumerate() {
        for i in 0..n {
            let center = 40.0 + 25.0 * label as f64 + rng.gen_range(-2.0..2.0);
            let samples = (0..187)
                .map(|t| {
                    let d = (t as f64 - center) / 6.0;
                    (0.1 + 0.8 * (-0.5 * d * d).exp() + rng.gen_range(0.0..0.05)).min(1.0) as f32
                })
                .collect();
            beats.push(BeatRecord {
                samples,
                label,
                source: BeatSource::Real { record: format!("c{label}"), r_peak: i as u64 },
                split: SplitTag::Train,
            });
        }
    }
    BeatDataset::new(beats, 187, seed)
}

#[test]
fn criterion_07_gan_balance() {
    let ds = skewed_dataset([400, 40, 120, 64, 48], 7);
    // Declared defaults: 200 epochs, tau 0.5, ratio 1.
    let cfg = GanTrainConfig::default();
    let gans = train_class_gans(&ds, &cfg, 7, ecgkit::util::thread_budget()).unwrap();
    let nets: BTreeMap<_, _> = gans.into_iter().map(|(c, o)| (c, (o.generator, o.discriminator))).collect();
    let result = balance_dataset(&ds, &nets, cfg.tau, cfg.balance_ratio, 8);
    let (ok, detail) = match result {
        Ok((out, report)) => {
            let counts = out.split_counts(SplitTag::Train);
            let majority = *counts.iter().max().unwrap() as f64;
            let spread = (*counts.iter().max().unwrap() - *counts.iter().min().unwrap()) as f64;
            let synthetic: Vec<&BeatRecord> = out.beats.iter().filter(|b| b.source.is_synthetic()).collect();
            let shape_ok = synthetic
                .iter()
                .all(|b| b.samples.len() == 187 && b.samples.iter().all(|v| (0.0..=1.0).contains(v)));
            (
                spread <= 0.01 * majority && shape_ok && !synthetic.is_empty(),
                format!(
                    "counts {:?} -> {:?}, {} synthetic beats, length/range ok {shape_ok}",
                    report.before,
                    counts,
                    synthetic.len()
                ),
            )
        }
        Err(e) => (false, format!("balancing failed: {e}")),
    };
    verdict(7, "GAN balance contract", ok, &detail);
}

#[test]
fn criterion_08_gradcam_localization() {
    let (ds, test) = common::pulse_task(120, 50, 187, 21);
    let mut cfg = TrainConfig::recipe(Architecture::Cnn);
    cfg.epochs = 8;
    cfg.seed = 3;
    let out = train(build(&ModelDescriptor::new(Architecture::Cnn), 3).unwrap(), &ds, &cfg).unwrap();
    let maps = grad_cam(&out.model, &test, Some(&[1; 50])).unwrap();
    let hits = maps
        .iter()
        .filter(|m| !m.constant && ecgkit::models::argmax(&m.values).abs_diff(common::PULSE_AT) <= 10)
        .count();
    verdict(
        8,
        "Grad-CAM localization",
        hits * 10 >= maps.len() * 9,
        &format!("{hits}/{} maps peak within 10 samples of index {}", maps.len(), common::PULSE_AT),
    );
}

pub const MITDB_ENV: &str = "ECGKIT_MITDB_DIR";

fn mitdb_dir() -> Option<PathBuf> {
    std::env::var_os(MITDB_ENV).map(PathBuf::from).filter(|p| p.is_dir())
}

/// Class-proportional sample of `n` beats.
fn stratified_subset(ds: &BeatDataset, n: usize, seed: u64) -> BeatDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = ds.class_counts();
    let total = ds.len() as f64;
    let mut beats = Vec::new();
    for (c, &count) in counts.iter().enumerate() {
        let mut members: Vec<&BeatRecord> = ds.beats.iter().filter(|b| b.label == c).collect();
        members.shuffle(&mut rng);
        let take = ((count as f64 / total) * n as f64).round() as usize;
        beats.extend(members.into_iter().take(take.max(2).min(count)).cloned());
    }
    BeatDataset::new(beats, ds.beat_len, seed)
}

#[test]
fn criterion_09_mitbih_smoke_train() {
    let Some(dir) = mitdb_dir() else {
        verdict(9, "MIT-BIH smoke train", false, &format!("no MIT-BIH records: set {MITDB_ENV} to a directory of WFDB records"));
        return;
    };
    let start = Instant::now();
    let (full, _) = ingest_directory(&dir, &LeadChoice::PreferMlii, 187, "atr").unwrap();
    let mut ds = stratified_subset(&full, 2000, 9);
    hold_out_test(&mut ds, 0.2, 9).unwrap();
    stratified_split(&mut ds, 0.85, 9).unwrap();
    let mut cfg = TrainConfig::recipe(Architecture::Cnn);
    cfg.epochs = 5;
    cfg.seed = 9;
    let out = train(build(&ModelDescriptor::new(Architecture::Cnn), 9).unwrap(), &ds, &cfg).unwrap();
    let test = ds.indices_with(SplitTag::Test);
    let (x, y) = batch_tensor(&ds, &test).unwrap();
    let f1 = evaluate(&out.model.predict(&x, 256).unwrap().cast::<f64>(), &y).unwrap().metrics.macro_f1;
    let elapsed = start.elapsed();
    verdict(
        9,
        "MIT-BIH smoke train",
        f1 >= 0.70 && elapsed <= Duration::from_secs(600),
        &format!("{} beats, test macro-F1 {f1:.3}, {:.0} s", ds.len(), elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_10_toy_convergence() {
    let ds = common::toy_dataset(100, 187, 7);
    let mut notes = Vec::new();
    let mut ok = true;
    for arch in [Architecture::Cnn, Architecture::CnnLstm] {
        let mut cfg = TrainConfig::recipe(arch);
        cfg.epochs = 30;
        cfg.patience = 30;
        cfg.seed = 10;
        let out = train(build(&ModelDescriptor::new(arch), 10).unwrap(), &ds, &cfg).unwrap();
        let first = out.history.records.iter().find(|r| r.train_acc == 1.0).map(|r| r.epoch);
        ok &= first.is_some();
        notes.push(format!("{arch}: train accuracy 1.0 at epoch {first:?}"));
    }
    verdict(10, "toy convergence", ok, &notes.join("; "));
}

/// Trained model, validation macro F1, test logits and test labels.
type FullRun = BTreeMap<Architecture, (ecgkit::models::Model, f64, Tensor<f64>, Vec<usize>)>;

/// Full augmented MIT-BIH run; hours on CPU.
fn full_run(archs: &[Architecture]) -> Option<FullRun> {
    let dir = mitdb_dir()?;
    let (mut ds, _) = ingest_directory(&dir, &LeadChoice::PreferMlii, 187, "atr").unwrap();
    hold_out_test(&mut ds, 0.2, 11).unwrap();
    stratified_split(&mut ds, 0.85, 11).unwrap();
    let gan = GanTrainConfig::default();
    let gans = train_class_gans(&ds, &gan, 11, ecgkit::util::thread_budget()).unwrap();
    let nets: BTreeMap<_, _> = gans.into_iter().map(|(c, o)| (c, (o.generator, o.discriminator))).collect();
    let (ds, _) = balance_dataset(&ds, &nets, gan.tau, gan.balance_ratio, 11).unwrap();
    let test = ds.indices_with(SplitTag::Test);
    let (x, y) = batch_tensor(&ds, &test).unwrap();
    let val = ds.indices_with(SplitTag::Val);
    let (vx, vy) = batch_tensor(&ds, &val).unwrap();
    let mut out = BTreeMap::new();
    for &arch in archs {
        let mut cfg = TrainConfig::recipe(arch);
        cfg.seed = 11;
        let trained = train(build(&ModelDescriptor::new(arch), 11).unwrap(), &ds, &cfg).unwrap().model;
        let val_f1 = evaluate(&trained.predict(&vx, 256).unwrap().cast::<f64>(), &vy).unwrap().metrics.macro_f1;
        let logits = trained.predict(&x, 256).unwrap().cast::<f64>();
        out.insert(arch, (trained, val_f1, logits, y.clone()));
    }
    Some(out)
}

#[test]
#[ignore = "full MIT-BIH reproduction, hours on CPU"]
fn criterion_11_cnn_lstm_full() {
    let Some(runs) = full_run(&[Architecture::CnnLstm]) else {
        verdict(11, "CNN-LSTM full run", false, &format!("no MIT-BIH records: set {MITDB_ENV}"));
        return;
    };
    let (_, _, logits, y) = &runs[&Architecture::CnnLstm];
    let f1 = evaluate(logits, y).unwrap().metrics.macro_f1;
    verdict(11, "CNN-LSTM full run", (0.921..=0.985).contains(&f1), &format!("test macro-F1 {f1:.3} (band 0.921-0.985)"));
}

#[test]
#[ignore = "full MIT-BIH reproduction, hours on CPU"]
fn criterion_12_top2_weighted_full() {
    let Some(runs) = full_run(&[Architecture::Cnn, Architecture::CnnLstm]) else {
        verdict(12, "Top2-Weighted ensemble", false, &format!("no MIT-BIH records: set {MITDB_ENV}"));
        return;
    };
    let ids = vec!["cnn".to_string(), "cnn_lstm".to_string()];
    let f1s = vec![runs[&Architecture::Cnn].1, runs[&Architecture::CnnLstm].1];
    let spec = build_strategy(&ids, &f1s, Strategy::Top2Weighted).unwrap();
    let by_id = |id: &str| if id == "cnn" { &runs[&Architecture::Cnn].2 } else { &runs[&Architecture::CnnLstm].2 };
    let sets: Vec<Tensor<f64>> = spec.members.iter().map(|m| by_id(m).clone()).collect();
    let fused = fuse(&sets, &spec.weights).unwrap();
    let m = evaluate(&fused, &runs[&Architecture::Cnn].3).unwrap().metrics;
    let ok = (m.macro_f1 - 0.958).abs() <= 0.03
        && (m.macro_precision - 0.986).abs() <= 0.02
        && (m.macro_recall - 0.934).abs() <= 0.03;
    verdict(
        12,
        "Top2-Weighted ensemble",
        ok,
        &format!("F1 {:.3}, precision {:.3}, recall {:.3}, weights {:?}", m.macro_f1, m.macro_precision, m.macro_recall, spec.weights),
    );
}
