use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::decoder::DecoderKind;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::masking::{MaskStrategy, RatioSchedule};
use crate::model::EncoderSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Cosine,
    Poly,
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(LrSchedule::Cosine),
            "poly" => Ok(LrSchedule::Poly),
            other => Err(Error::Config(format!("unknown lr schedule {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: LrSchedule,
    pub epochs: usize,
}

/// A single masking ratio or a dynamic list applied in equal epoch segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatioSetting {
    Fixed(f64),
    Dynamic(Vec<f64>),
}

impl RatioSetting {
    pub fn schedule(&self) -> RatioSchedule {
        match self {
            RatioSetting::Fixed(r) => RatioSchedule::fixed(*r),
            RatioSetting::Dynamic(v) => RatioSchedule::dynamic(v.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub strategy: MaskStrategy,
    pub ratio: RatioSetting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub mask: MaskConfig,
    pub loss: LossConfig,
    pub decoder: DecoderConfig,
    pub encoder: EncoderSpec,
    /// `"scratch"` or a checkpoint path.
    pub init: String,
    pub sample_fraction: f64,
    /// Stop after this many optimizer steps instead of `schedule.epochs`.
    pub max_steps: Option<usize>,
    /// Folds to hold out during fine-tuning; all five when absent.
    pub folds: Option<Vec<usize>>,
}

pub const PRESETS: [&str; 4] = ["desk", "paper-brats2019", "paper-isic2018", "paper-acdc2017"];

impl TrainConfig {
    /// Named training recipe for one phase.
    pub fn preset(name: &str, phase: Phase) -> Result<Self> {
        let pre = phase == Phase::Pretrain;
        // (optimizer, lr, weight decay, batch, schedule, epochs)
        let (kind, lr, wd, batch, sched, epochs) = match name {
            "desk" => (OptimizerKind::Adam, 1e-4, 1e-5, 16, LrSchedule::Cosine, if pre { 30 } else { 60 }),
            "paper-brats2019" => (OptimizerKind::Adam, 1e-4, 1e-5, 64, LrSchedule::Cosine, if pre { 250 } else { 500 }),
            "paper-isic2018" => (
                OptimizerKind::Sgd,
                if pre { 1e-3 } else { 5e-4 },
                1e-8,
                12,
                LrSchedule::Poly,
                if pre { 125 } else { 300 },
            ),
            "paper-acdc2017" => (OptimizerKind::Sgd, 1e-2, 1e-4, 16, LrSchedule::Poly, if pre { 300 } else { 1200 }),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?} (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(TrainConfig {
            phase,
            optimizer: OptimizerConfig {
                kind,
                lr,
                weight_decay: wd,
                momentum: 0.9,
            },
            schedule: ScheduleConfig { kind: sched, epochs },
            batch_size: batch,
            seed: 0,
            mask: MaskConfig {
                strategy: MaskStrategy::Foreground,
                ratio: RatioSetting::Fixed(0.25),
            },
            loss: LossConfig::default(),
            decoder: DecoderConfig {
                kind: DecoderKind::Bad,
            },
            encoder: EncoderSpec::default(),
            init: "scratch".into(),
            sample_fraction: 1.0,
            max_steps: None,
            folds: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.optimizer.lr.is_finite() && self.optimizer.lr >= 0.0) {
            return bad(format!("optimizer.lr = {} must be finite and non-negative", self.optimizer.lr));
        }
        if !(self.optimizer.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.optimizer.momentum) {
            return bad("optimizer.weight_decay must be >= 0 and momentum in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.schedule.epochs == 0 {
            return bad("schedule.epochs must be positive".into());
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad(format!("sample_fraction {} outside (0, 1]", self.sample_fraction));
        }
        if self.max_steps == Some(0) && self.phase == Phase::Pretrain {
            return bad("max_steps must be positive for pretraining".into());
        }
        if let Some(f) = &self.folds {
            if f.is_empty() || f.iter().any(|&k| k >= crate::data::N_FOLDS) {
                return bad(format!("folds {f:?} must be a nonempty subset of 0..5"));
            }
        }
        self.mask.ratio.schedule().validate()?;
        self.loss.validate()?;
        self.encoder.validate()
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `base` with every key of `patch` replaced recursively.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `KEY=VALUE`; the value is JSON when it parses, a string otherwise.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not KEY=VALUE")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::Config(format!("override {s:?} has an empty key")));
    }
    let value = serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().to_string()));
    Ok((k.to_string(), value))
}

/// Sets a dotted key that must already exist in `config`.
pub fn set_path(config: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut slot = config;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
    }
    *slot = value;
    Ok(())
}

/// Applies dotted-key overrides to `cfg` and re-validates.
pub fn with_overrides(cfg: &TrainConfig, overrides: &[(String, Value)]) -> Result<TrainConfig> {
    let mut v = cfg.to_value();
    for (k, val) in overrides {
        set_path(&mut v, k, val.clone())?;
    }
    TrainConfig::from_value(v)
}

/// Preset, then the JSON file at `path`, then `overrides`.
pub fn resolve_config(
    phase: Phase,
    preset: &str,
    path: Option<&Path>,
    overrides: &[(String, Value)],
) -> Result<TrainConfig> {
    let mut v = TrainConfig::preset(preset, phase)?.to_value();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
        let file: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        if !file.is_object() {
            return Err(Error::Config(format!("{}: expected a JSON object", p.display())));
        }
        merge(&mut v, file);
    }
    for (k, val) in overrides {
        set_path(&mut v, k, val.clone())?;
    }
    let cfg = TrainConfig::from_value(v)?;
    if cfg.phase != phase {
        return Err(Error::Config(format!("config phase {} used for {phase}", cfg.phase)));
    }
    Ok(cfg)
}

/// Learning rate at `epoch` of `total`.
pub fn schedule_lr(kind: LrSchedule, base_lr: f64, epoch: usize, total: usize) -> Result<f64> {
    if epoch >= total {
        return Err(Error::Config(format!("epoch {epoch} outside [0, {total})")));
    }
    let t = epoch as f64 / total as f64;
    Ok(match kind {
        LrSchedule::Cosine => base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()),
        LrSchedule::Poly => base_lr * (1.0 - t).powf(0.9),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedules() {
        assert_eq!(schedule_lr(LrSchedule::Cosine, 1e-4, 0, 30).unwrap(), 1e-4);
        assert!((schedule_lr(LrSchedule::Cosine, 1e-4, 15, 30).unwrap() - 5e-5).abs() < 1e-18);
        assert_eq!(schedule_lr(LrSchedule::Poly, 0.01, 0, 300).unwrap(), 0.01);
        assert!(schedule_lr(LrSchedule::Poly, 0.01, 300, 300).is_err());
        assert!(matches!("step".parse::<LrSchedule>(), Err(Error::Config(_))));
    }

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            for phase in [Phase::Pretrain, Phase::Finetune] {
                TrainConfig::preset(name, phase).unwrap().validate().unwrap();
            }
        }
        let b = TrainConfig::preset("paper-brats2019", Phase::Pretrain).unwrap();
        assert_eq!((b.batch_size, b.schedule.epochs), (64, 250));
        assert!(TrainConfig::preset("imagenet", Phase::Pretrain).is_err());
    }

    #[test]
    fn overrides() {
        let base = TrainConfig::preset("desk", Phase::Pretrain).unwrap();
        let o = [
            parse_override("mask.strategy=random").unwrap(),
            parse_override("loss.pb=20").unwrap(),
            parse_override("mask.ratio=[0.15,0.2,0.25]").unwrap(),
            parse_override("max_steps=5").unwrap(),
        ];
        let c = with_overrides(&base, &o).unwrap();
        assert_eq!(c.mask.strategy, MaskStrategy::Random);
        assert_eq!(c.loss.pb, 20.0);
        assert_eq!(c.mask.ratio, RatioSetting::Dynamic(vec![0.15, 0.2, 0.25]));
        assert_eq!(c.max_steps, Some(5));
        assert!(with_overrides(&base, &[parse_override("loss.gamma=2").unwrap()]).is_err());
        assert!(with_overrides(&base, &[parse_override("mask.strategy=checker").unwrap()]).is_err());
        assert!(with_overrides(&base, &[parse_override("batch_size=0").unwrap()]).is_err());
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn json_roundtrip() {
        let c = TrainConfig::preset("paper-isic2018", Phase::Finetune).unwrap();
        assert_eq!(TrainConfig::from_value(c.to_value()).unwrap(), c);
    }
}
