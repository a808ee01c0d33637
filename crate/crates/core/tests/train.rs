mod common;

use ecgkit::ingest::{BeatDataset, SplitTag};
use ecgkit::models::{build, Architecture, ModelDescriptor};
use ecgkit::train::{train, TrainConfig};

#[test]
fn runs_are_deterministic() {
    let ds = common::toy_dataset(20, 64, 3);
    let mut d = ModelDescriptor::new(Architecture::CnnLstm);
    d.input_len = 64;
    d.channels = vec![8, 8];
    d.lstm_hidden = 8;
    let mut cfg = TrainConfig::recipe(Architecture::CnnLstm);
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 11;
    let a = train(build(&d, 1).unwrap(), &ds, &cfg).unwrap();
    let b = train(build(&d, 1).unwrap(), &ds, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
    assert_eq!(a.history.len(), 3);
}

#[test]
fn empty_split_is_config_error() {
    let mut ds = common::toy_dataset(5, 64, 1);
    for b in &mut ds.beats {
        b.split = SplitTag::Train;
    }
    let mut d = ModelDescriptor::new(Architecture::Cnn);
    d.input_len = 64;
    let err = train(build(&d, 1).unwrap(), &ds, &TrainConfig::recipe(Architecture::Cnn)).unwrap_err();
    assert!(matches!(err, ecgkit::Error::Config(_)));
    let empty = BeatDataset::new(vec![], 64, 0);
    assert!(train(build(&d, 1).unwrap(), &empty, &TrainConfig::recipe(Architecture::Cnn)).is_err());
}

#[test]
fn early_stopping_restores_best_epoch() {
    let ds = common::toy_dataset(10, 64, 5);
    let mut d = ModelDescriptor::new(Architecture::Cnn);
    d.input_len = 64;
    d.channels = vec![4];
    let mut cfg = TrainConfig::recipe(Architecture::Cnn);
    // A learning rate this large makes validation loss diverge quickly.
    cfg.lr = 5.0;
    cfg.epochs = 40;
    cfg.patience = 2;
    cfg.batch_size = 4;
    let out = train(build(&d, 2).unwrap(), &ds, &cfg).unwrap();
    let best = out.history.records[out.best_epoch - 1].val_loss;
    assert!(out.history.records.iter().all(|r| r.val_loss >= best));
    if out.stopped_early {
        assert_eq!(out.history.len(), out.best_epoch + 2);
    }
}
