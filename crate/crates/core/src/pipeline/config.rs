//! Strict JSON pipeline configuration. Missing keys take the defaults;
//! unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::Strategy;
use crate::error::{Error, Result};
use crate::gan::{GanNetConfig, GanTrainConfig};
use crate::ingest::DEFAULT_BEAT_LEN;
use crate::models::{Architecture, ModelDescriptor};
use crate::train::{FocalLossConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of WFDB records.
    pub records_dir: Option<PathBuf>,
    /// Pre-segmented beat CSV, used instead of `records_dir`.
    pub beats_csv: Option<PathBuf>,
    /// Lead name or `auto`.
    pub lead: String,
    pub annotator: String,
    pub beat_len: usize,
    pub test_fraction: f64,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            records_dir: None,
            beats_csv: None,
            lead: "MLII".into(),
            annotator: "atr".into(),
            beat_len: DEFAULT_BEAT_LEN,
            test_fraction: 0.2,
            train_fraction: 0.85,
        }
    }
}

/// Per-architecture overrides of the default training recipe and the default plan.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub weight_decay: Option<f64>,
    pub focal_alpha: Option<f64>,
    pub focal_gamma: Option<f64>,
    pub scheduler_factor: Option<f64>,
    pub scheduler_patience: Option<usize>,
    pub min_lr: Option<f64>,
    pub channels: Option<Vec<usize>>,
    pub lstm_hidden: Option<usize>,
    pub lstm_layers: Option<usize>,
    pub attention_dim: Option<usize>,
    pub stem_channels: Option<usize>,
    pub blocks_per_stage: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub enabled: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub balance_ratio: f64,
    pub lstm_hidden: usize,
    pub dense_units: usize,
    /// Samples per recurrent step; defaults to the largest divisor of the
    /// beat length not above the standard frame.
    pub frame: Option<usize>,
}

impl Default for GanConfig {
    fn default() -> Self {
        let d = GanTrainConfig::default();
        Self {
            enabled: true,
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr_generator: d.lr_generator,
            lr_discriminator: d.lr_discriminator,
            weight_decay: d.weight_decay,
            tau: d.tau,
            balance_ratio: d.balance_ratio,
            lstm_hidden: d.net.lstm_hidden,
            dense_units: d.net.dense_units,
            frame: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub strategy: Strategy,
    /// Manifest of trained models; `reproduce` writes its own.
    pub manifest: Option<PathBuf>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Top2Weighted,
            manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub bootstrap_resamples: usize,
    /// Test beats that get a Grad-CAM map in each report.
    pub gradcam_samples: usize,
    pub predict_chunk: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            bootstrap_resamples: crate::eval::DEFAULT_RESAMPLES,
            gradcam_samples: 5,
            predict_chunk: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub cnn: ArchConfig,
    pub cnn_lstm: ArchConfig,
    pub cnn_lstm_attn: ArchConfig,
    pub resnet1d: ArchConfig,
    pub gan: GanConfig,
    pub ensemble: EnsembleConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            out: PathBuf::from("runs"),
            data: DataConfig::default(),
            cnn: ArchConfig::default(),
            cnn_lstm: ArchConfig::default(),
            cnn_lstm_attn: ArchConfig::default(),
            resnet1d: ArchConfig::default(),
            gan: GanConfig::default(),
            ensemble: EnsembleConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses config text; blank text yields the defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate_values()?;
        Ok(cfg)
    }

    fn validate_values(&self) -> Result<()> {
        if self.data.beat_len < 16 {
            return Err(Error::Config(format!("beat_len {} is too short", self.data.beat_len)));
        }
        for arch in Architecture::ALL {
            self.train_config(arch)?;
            self.descriptor(arch)?;
        }
        self.gan_config()?.validate()?;
        if self.evaluate.predict_chunk == 0 {
            return Err(Error::Config("evaluate.predict_chunk must be positive".into()));
        }
        Ok(())
    }

    /// Every referenced input path must exist.
    pub fn check_paths(&self) -> Result<()> {
        let paths = [&self.data.records_dir, &self.data.beats_csv, &self.ensemble.manifest];
        for p in paths.into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("configured path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn arch(&self, arch: Architecture) -> &ArchConfig {
        match arch {
            Architecture::Cnn => &self.cnn,
            Architecture::CnnLstm => &self.cnn_lstm,
            Architecture::CnnLstmAttn => &self.cnn_lstm_attn,
            Architecture::Resnet1d => &self.resnet1d,
        }
    }

    /// default training recipe with overrides applied; the seed is left at 0.
    pub fn train_config(&self, arch: Architecture) -> Result<TrainConfig> {
        let o = self.arch(arch);
        let mut c = TrainConfig::recipe(arch);
        c.batch_size = o.batch_size.unwrap_or(c.batch_size);
        c.lr = o.lr.unwrap_or(c.lr);
        c.epochs = o.epochs.unwrap_or(c.epochs);
        c.patience = o.patience.unwrap_or(c.patience);
        c.weight_decay = o.weight_decay.unwrap_or(c.weight_decay);
        c.focal = FocalLossConfig {
            alpha: o.focal_alpha.unwrap_or(c.focal.alpha),
            gamma: o.focal_gamma.unwrap_or(c.focal.gamma),
        };
        c.scheduler_factor = o.scheduler_factor.unwrap_or(c.scheduler_factor);
        c.scheduler_patience = o.scheduler_patience.unwrap_or(c.scheduler_patience);
        c.min_lr = o.min_lr.unwrap_or(c.min_lr);
        c.validate()?;
        Ok(c)
    }

    pub fn descriptor(&self, arch: Architecture) -> Result<ModelDescriptor> {
        let o = self.arch(arch);
        let mut d = ModelDescriptor::new(arch);
        d.input_len = self.data.beat_len;
        if let Some(c) = &o.channels {
            d.channels = c.clone();
        }
        d.lstm_hidden = o.lstm_hidden.unwrap_or(d.lstm_hidden);
        d.lstm_layers = o.lstm_layers.unwrap_or(d.lstm_layers);
        d.attention_dim = o.attention_dim.unwrap_or(d.attention_dim);
        d.stem_channels = o.stem_channels.unwrap_or(d.stem_channels);
        d.blocks_per_stage = o.blocks_per_stage.unwrap_or(d.blocks_per_stage);
        d.validate()?;
        Ok(d)
    }

    pub fn gan_config(&self) -> Result<GanTrainConfig> {
        let g = &self.gan;
        let standard = GanNetConfig::default().frame;
        let len = self.data.beat_len;
        let frame = g
            .frame
            .unwrap_or_else(|| (1..=standard).rev().find(|&f| len.is_multiple_of(f)).unwrap_or(1));
        let net = GanNetConfig {
            frame,
            beat_len: self.data.beat_len,
            noise_len: self.data.beat_len,
            lstm_hidden: g.lstm_hidden,
            dense_units: g.dense_units,
            ..GanNetConfig::default()
        };
        let cfg = GanTrainConfig {
            net,
            epochs: g.epochs,
            batch_size: g.batch_size,
            lr_generator: g.lr_generator,
            lr_discriminator: g.lr_discriminator,
            weight_decay: g.weight_decay,
            tau: g.tau,
            balance_ratio: g.balance_ratio,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON: keys sorted at every level, no whitespace.
    pub fn canonical_json(&self) -> Result<String> {
        canonicalize(&serde_json::to_value(self)?)
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical_json()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Re-serializes with object keys in sorted order.
pub fn canonicalize(v: &serde_json::Value) -> Result<String> {
    fn sort(v: &serde_json::Value) -> serde_json::Value {
        match v {
            serde_json::Value::Object(m) => {
                let sorted: std::collections::BTreeMap<&String, serde_json::Value> =
                    m.iter().map(|(k, v)| (k, sort(v))).collect();
                serde_json::to_value(sorted).expect("string keys serialize")
            }
            serde_json::Value::Array(a) => serde_json::Value::Array(a.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    Ok(serde_json::to_string(&sort(v))?)
}

/// Reads and validates a config file, including its referenced paths.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg = PipelineConfig::from_json(&text)?;
    cfg.check_paths()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_gives_recipe() {
        let c = PipelineConfig::from_json("  \n").unwrap();
        assert_eq!(c, PipelineConfig::default());
        let t = c.train_config(Architecture::CnnLstm).unwrap();
        assert_eq!((t.batch_size, t.lr), (96, 1e-3));
        let t = c.train_config(Architecture::Cnn).unwrap();
        assert_eq!((t.batch_size, t.lr), (128, 1.15e-3));
        assert_eq!(c.gan_config().unwrap().net.frame, 11);
        let c = PipelineConfig::from_json(r#"{"data": {"beat_len": 64}}"#).unwrap();
        assert_eq!(c.gan_config().unwrap().net.frame, 8);
    }

    #[test]
    fn overrides_and_typos() {
        let c = PipelineConfig::from_json(r#"{"cnn": {"lr": 0.00115, "epochs": 3}}"#).unwrap();
        let t = c.train_config(Architecture::Cnn).unwrap();
        assert_eq!((t.lr, t.epochs), (0.00115, 3));
        match PipelineConfig::from_json(r#"{"cnn": {"bacth_size": 3}}"#) {
            Err(Error::Config(m)) => assert!(m.contains("bacth_size"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(PipelineConfig::from_json(r#"{"seed": "x"}"#), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_json(r#"{"cnn": {"epochs": 0}}"#), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = PipelineConfig::from_json(r#"{"seed": 3, "gan": {"tau": 0.6, "epochs": 5}}"#).unwrap();
        let b = PipelineConfig::from_json(r#"{"gan": {"epochs": 5, "tau": 0.6}, "seed": 3}"#).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), PipelineConfig::default().hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn missing_path_rejected() {
        let c = PipelineConfig::from_json(r#"{"data": {"records_dir": "/nonexistent/mitdb"}}"#).unwrap();
        assert!(matches!(c.check_paths(), Err(Error::Config(_))));
    }

    const TOP: [&str; 10] = [
        "seed", "out", "data", "cnn", "cnn_lstm", "cnn_lstm_attn", "resnet1d", "gan", "ensemble", "evaluate",
    ];

    proptest! {
        #[test]
        fn only_documented_keys_accepted(key in "[a-z_]{1,14}") {
            let text = format!(r#"{{"{key}": {{}}}}"#);
            let ok = PipelineConfig::from_json(&text).is_ok();
            // Documented object-valued keys accept `{}`; scalar keys reject it.
            let object_keys = ["data", "cnn", "cnn_lstm", "cnn_lstm_attn", "resnet1d", "gan", "ensemble", "evaluate"];
            prop_assert_eq!(ok, object_keys.contains(&key.as_str()));
            prop_assert!(TOP.contains(&key.as_str()) || !ok);
        }
    }
}
