//! Resolved run configuration: defaults, overridden by a `key = value` file,
//! overridden by command-line flags.

use std::path::PathBuf;

use crate::confident::{ConfidenceConfig, ScoreRule, StageConfig};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::nn::{BackboneConfig, ModelConfig, PlainCnnConfig};
use crate::optim::TrainConfig;
use crate::preprocess::{DenoiseConfig, SplitConfig, WindowConfig};
use crate::rng::{child_seed, Stream};
use crate::synth::SynthConfig;
use crate::wavelet::WaveletSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Root seed; every module derives its own stream from it.
    pub seed: u64,
    pub threads: usize,
    pub window: WindowConfig,
    pub denoise_enabled: bool,
    pub denoise: DenoiseConfig,
    /// Segments drawn per category after windowing; 0 disables balancing.
    pub balance_per_class: usize,
    pub split_train_fraction: f64,
    pub split_record_disjoint: bool,
    /// `resnet` or `plain_cnn`, for the `train` command.
    pub architecture: String,
    pub backbone: BackboneConfig,
    pub stage1_model: PlainCnnConfig,
    pub train: TrainConfig,
    pub stage1_train: TrainConfig,
    /// Share of the training set held out for validation.
    pub val_fraction: f64,
    pub threshold: f64,
    pub score_rule: ScoreRule,
    pub strict: bool,
    pub sweep_thresholds: Vec<f64>,
    pub synth: SynthConfig,
    pub input: Vec<PathBuf>,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 1,
            window: WindowConfig::default(),
            denoise_enabled: true,
            denoise: DenoiseConfig::default(),
            balance_per_class: 0,
            split_train_fraction: 0.8,
            split_record_disjoint: false,
            architecture: "resnet".into(),
            backbone: BackboneConfig::default(),
            stage1_model: PlainCnnConfig::default(),
            train: TrainConfig::default(),
            stage1_train: TrainConfig::default(),
            val_fraction: 0.1,
            threshold: 0.8,
            score_rule: ScoreRule::LabelProbability,
            strict: false,
            sweep_thresholds: vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99],
            synth: SynthConfig::default(),
            input: Vec::new(),
            train_path: None,
            test_path: None,
            checkpoint: None,
            out: None,
        }
    }
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn non_empty_path(kv: &KvMap, key: &str) -> Option<PathBuf> {
    kv.get_str(key).filter(|s| !s.is_empty()).map(PathBuf::from)
}

impl RunConfig {
    /// Every key, fully resolved.
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("seed", self.seed);
        kv.set("threads", self.threads);
        kv.set("window.size", self.window.window_size);
        kv.set("window.step", self.window.step);
        kv.set("denoise.enabled", self.denoise_enabled);
        kv.set("wavelet.order", self.denoise.wavelet.order);
        kv.set("wavelet.levels", self.denoise.wavelet.levels);
        kv.set_list("denoise.zero_levels", &self.denoise.zero_levels);
        kv.set("balance.per_class", self.balance_per_class);
        kv.set("split.train_fraction", self.split_train_fraction);
        kv.set("split.record_disjoint", self.split_record_disjoint);
        kv.set("model.architecture", &self.architecture);
        self.backbone.to_kv(&mut kv, "nn.");
        self.stage1_model.to_kv(&mut kv, "stage1.");
        self.train.to_kv(&mut kv, "train.");
        self.stage1_train.to_kv(&mut kv, "stage1.train.");
        kv.set("train.val_fraction", self.val_fraction);
        kv.set("confident.threshold", self.threshold);
        kv.set("confident.score_rule", self.score_rule.as_str());
        kv.set("confident.strict", self.strict);
        kv.set_list("sweep.thresholds", &self.sweep_thresholds);
        self.synth.to_kv(&mut kv, "synth.");
        kv.set(
            "io.input",
            self.input.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
        );
        kv.set("io.train", path_text(&self.train_path));
        kv.set("io.test", path_text(&self.test_path));
        kv.set("io.checkpoint", path_text(&self.checkpoint));
        kv.set("io.out", path_text(&self.out));
        kv
    }

    /// Applies `kv` on top of `self`. Unknown keys are rejected by name.
    pub fn update_from_kv(&mut self, kv: &KvMap) -> Result<()> {
        let known = RunConfig::default().to_kv();
        if let Some(key) = kv.keys().find(|k| !known.contains(k) && *k != "command") {
            return Err(Error::config(key, "unknown key"));
        }
        if let Some(v) = kv.get("seed")? {
            self.seed = v;
        }
        if let Some(v) = kv.get("threads")? {
            self.threads = v;
        }
        if let Some(v) = kv.get("window.size")? {
            self.window.window_size = v;
        }
        if let Some(v) = kv.get("window.step")? {
            self.window.step = v;
        }
        if let Some(v) = kv.get("denoise.enabled")? {
            self.denoise_enabled = v;
        }
        if let Some(v) = kv.get("wavelet.order")? {
            self.denoise.wavelet.order = v;
        }
        if let Some(v) = kv.get("wavelet.levels")? {
            self.denoise.wavelet.levels = v;
        }
        if let Some(v) = kv.get_list("denoise.zero_levels")? {
            self.denoise.zero_levels = v;
        }
        if let Some(v) = kv.get("balance.per_class")? {
            self.balance_per_class = v;
        }
        if let Some(v) = kv.get("split.train_fraction")? {
            self.split_train_fraction = v;
        }
        if let Some(v) = kv.get("split.record_disjoint")? {
            self.split_record_disjoint = v;
        }
        if let Some(v) = kv.get_str("model.architecture") {
            self.architecture = v.to_string();
        }
        self.backbone.update_from_kv(kv, "nn.")?;
        self.stage1_model.update_from_kv(kv, "stage1.")?;
        self.train.update_from_kv(kv, "train.")?;
        self.stage1_train.update_from_kv(kv, "stage1.train.")?;
        if let Some(v) = kv.get("train.val_fraction")? {
            self.val_fraction = v;
        }
        if let Some(v) = kv.get("confident.threshold")? {
            self.threshold = v;
        }
        if let Some(v) = kv.get_str("confident.score_rule") {
            self.score_rule = v.parse()?;
        }
        if let Some(v) = kv.get("confident.strict")? {
            self.strict = v;
        }
        if let Some(v) = kv.get_str("sweep.thresholds") {
            self.sweep_thresholds = parse_thresholds(v)?;
        }
        self.synth.update_from_kv(kv, "synth.")?;
        if let Some(v) = kv.get_str("io.input") {
            self.input = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect();
        }
        for (key, slot) in [
            ("io.train", &mut self.train_path),
            ("io.test", &mut self.test_path),
            ("io.checkpoint", &mut self.checkpoint),
            ("io.out", &mut self.out),
        ] {
            if kv.contains(key) {
                *slot = non_empty_path(kv, key);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        self.window.validate()?;
        self.denoise.wavelet.validate()?;
        if let Some(&l) = self.denoise.zero_levels.iter().find(|&&l| l == 0 || l > self.denoise.wavelet.levels) {
            return Err(Error::config("denoise.zero_levels", format!("level {l} is outside 1..={}", self.denoise.wavelet.levels)));
        }
        if !(self.split_train_fraction > 0.0 && self.split_train_fraction < 1.0) {
            return Err(Error::config("split.train_fraction", "must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("train.val_fraction", "must lie in [0, 1)"));
        }
        if !matches!(self.architecture.as_str(), "resnet" | "plain_cnn") {
            return Err(Error::config("model.architecture", format!("unknown value `{}`", self.architecture)));
        }
        self.backbone.validate()?;
        self.stage1_model.validate()?;
        self.train.validate()?;
        self.stage1_train.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("confident.threshold", "must lie in [0, 1]"));
        }
        if self.sweep_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::config("sweep.thresholds", "every threshold must lie in (0, 1]"));
        }
        self.synth.validate()
    }

    /// Model for the `train` command on segments of length `len`.
    pub fn model_config(&self, len: usize) -> ModelConfig {
        match self.architecture.as_str() {
            "plain_cnn" => ModelConfig::PlainCnn(PlainCnnConfig {
                input_len: len,
                ..self.stage1_model.clone()
            }),
            _ => ModelConfig::ResNet(self.backbone.clone()),
        }
    }

    pub fn train_config(&self, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            seed: child_seed(self.seed, Stream::Init),
            checkpoint_dir,
            ..self.train.clone()
        }
    }

    /// Pipeline settings for segments of length `len`.
    pub fn confidence_config(&self, len: usize) -> ConfidenceConfig {
        ConfidenceConfig {
            threshold: self.threshold,
            score_rule: self.score_rule,
            strict: self.strict,
            train_fraction: 1.0 - self.val_fraction,
            stage1: StageConfig {
                model: ModelConfig::PlainCnn(PlainCnnConfig {
                    input_len: len,
                    ..self.stage1_model.clone()
                }),
                train: self.stage1_train.clone(),
            },
            stage2: StageConfig {
                model: ModelConfig::ResNet(self.backbone.clone()),
                train: self.train.clone(),
            },
            seed: self.seed,
        }
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            train_fraction: self.split_train_fraction,
            seed: child_seed(self.seed, Stream::Split),
            record_disjoint: self.split_record_disjoint,
        }
    }

    pub fn wavelet(&self) -> WaveletSpec {
        self.denoise.wavelet
    }
}

/// `a,b,c` lists, or `lo..hi` (optionally `lo..hi:step`, default step 0.1)
/// expanding to `lo, lo+step, …` below `hi`, then `hi`.
pub fn parse_thresholds(text: &str) -> Result<Vec<f64>> {
    let bad = |reason: String| Error::config("sweep.thresholds", reason);
    if let Some((lo, rest)) = text.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, step),
            None => (rest, "0.1"),
        };
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number")));
        let (lo, hi, step) = (parse(lo)?, parse(hi)?, parse(step)?);
        if !(step > 0.0) || lo > hi {
            return Err(bad(format!("empty range {text}")));
        }
        let mut out = Vec::new();
        let mut i = 0;
        loop {
            // round to suppress accumulated binary error, e.g. 0.30000000000000004
            let t = ((lo + i as f64 * step) * 1e9).round() / 1e9;
            if t >= hi - 1e-9 {
                break;
            }
            out.push(t);
            i += 1;
        }
        out.push(hi);
        return Ok(out);
    }
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_documented_values() {
        let c = RunConfig::default();
        assert_eq!((c.window.window_size, c.window.step), (600, 20));
        assert_eq!(c.denoise.wavelet.levels, 4);
        assert_eq!(c.denoise.zero_levels, vec![1, 2]);
        assert_eq!(c.backbone.filter_schedule, vec![64, 64, 128, 128, 256]);
        assert_eq!(c.backbone.kernel_size, 3);
        assert_eq!(c.backbone.dropout_keep_train, 0.5);
        assert_eq!((c.train.learning_rate, c.train.epochs, c.train.batch_size), (0.002, 100, 128));
        assert_eq!(c.threshold, 0.8);
        c.validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 9;
        c.train.epochs = 3;
        c.input = vec!["a.dat".into(), "b.dat".into()];
        c.out = Some("out".into());
        c.score_rule = ScoreRule::MaxProbability;
        let text = c.to_kv().to_text();
        let mut back = RunConfig::default();
        back.update_from_kv(&KvMap::parse(&text).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let mut c = RunConfig::default();
        let err = c.update_from_kv(&KvMap::parse("train.epoch = 3").unwrap()).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "train.epoch"));
    }

    #[test]
    fn invalid_values_name_their_key() {
        let mut c = RunConfig::default();
        let err = c.update_from_kv(&KvMap::parse("train.batch_size = many").unwrap()).unwrap_err();
        assert!(err.to_string().contains("train.batch_size"));
        c.threshold = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "confident.threshold"));
    }

    #[test]
    fn threshold_ranges() {
        assert_eq!(
            parse_thresholds("0.3..0.99").unwrap(),
            vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99]
        );
        assert_eq!(parse_thresholds("0.5..0.9:0.2").unwrap(), vec![0.5, 0.7, 0.9]);
        assert_eq!(parse_thresholds("0.9, 0.8").unwrap(), vec![0.9, 0.8]);
        assert!(parse_thresholds("0.9..0.1").is_err());
        assert!(parse_thresholds("x").is_err());
    }
}
