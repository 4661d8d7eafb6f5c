//! Hyperparameters shared by both training stages and the evaluator.
//!
//! The config file is a flat JSON object of scalars. Missing keys take the
//! published defaults; unknown keys are rejected. Stage-specific knobs are
//! prefixed `gen_` (pseudo-label generator) and `ft_` (encoder fine-tuning).

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{MistError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Sub-bags per video bag.
    #[serde(rename = "L")]
    pub subbags: usize,
    /// Consecutive clips per sub-bag (also the minimum anomaly duration).
    #[serde(rename = "T")]
    pub clips_per_subbag: usize,
    /// Ranking margin.
    pub epsilon: f64,
    /// Sparsity weight on positive-bag scores.
    pub lambda: f64,
    /// Half-width of the moving-average filter used on generator scores.
    pub k: usize,
    /// Detectors per class in the guided head.
    #[serde(rename = "K")]
    pub detectors_per_class: usize,
    pub dropout_p: f64,

    pub gen_lr: f64,
    pub gen_batch_abnormal: usize,
    pub gen_batch_normal: usize,
    pub gen_iters: usize,

    pub ft_lr: f64,
    pub ft_weight_decay: f64,
    pub ft_epochs: usize,
    pub ft_warmup_epochs: usize,
    pub ft_videos_per_class_per_batch: usize,
    pub ft_clips_per_video: usize,
    /// Micro-batches per optimizer step. Gradients are accumulated.
    pub ft_grad_accum_steps: usize,

    /// Abnormal-class weight.
    pub w0: f64,
    /// Normal-class weight.
    pub w1: f64,
    /// Frames per clip assumed at feature extraction. Manifest records carry
    /// their own count, and that is what evaluation uses.
    pub frames_per_clip: usize,
    pub seed: u64,
    pub far_threshold: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            subbags: 32,
            clips_per_subbag: 3,
            epsilon: 1.0,
            lambda: 0.01,
            k: 5,
            detectors_per_class: 8,
            dropout_p: 0.6,
            gen_lr: 0.01,
            gen_batch_abnormal: 40,
            gen_batch_normal: 40,
            gen_iters: 200,
            ft_lr: 1e-4,
            ft_weight_decay: 5e-4,
            ft_epochs: 300,
            ft_warmup_epochs: 5,
            ft_videos_per_class_per_batch: 16,
            ft_clips_per_video: 3,
            ft_grad_accum_steps: 1,
            w0: 1.2,
            w1: 0.8,
            frames_per_clip: 16,
            seed: 0,
            far_threshold: 0.5,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        fn positive(field: &str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(MistError::validation(field, "must be at least 1"));
            }
            Ok(())
        }
        fn finite(field: &str, v: f64) -> Result<()> {
            if !v.is_finite() {
                return Err(MistError::validation(field, "must be finite"));
            }
            Ok(())
        }

        positive("L", self.subbags)?;
        positive("T", self.clips_per_subbag)?;
        positive("K", self.detectors_per_class)?;
        positive("gen_batch_abnormal", self.gen_batch_abnormal)?;
        positive("gen_batch_normal", self.gen_batch_normal)?;
        positive("gen_iters", self.gen_iters)?;
        positive("ft_epochs", self.ft_epochs)?;
        positive("ft_videos_per_class_per_batch", self.ft_videos_per_class_per_batch)?;
        positive("ft_clips_per_video", self.ft_clips_per_video)?;
        positive("ft_grad_accum_steps", self.ft_grad_accum_steps)?;
        positive("frames_per_clip", self.frames_per_clip)?;

        for (field, v) in [
            ("epsilon", self.epsilon),
            ("lambda", self.lambda),
            ("dropout_p", self.dropout_p),
            ("gen_lr", self.gen_lr),
            ("ft_lr", self.ft_lr),
            ("ft_weight_decay", self.ft_weight_decay),
            ("w0", self.w0),
            ("w1", self.w1),
            ("far_threshold", self.far_threshold),
        ] {
            finite(field, v)?;
        }

        if self.epsilon <= 0.0 {
            return Err(MistError::validation("epsilon", "must be > 0"));
        }
        if self.lambda < 0.0 {
            return Err(MistError::validation("lambda", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(MistError::validation("dropout_p", "must lie in [0, 1)"));
        }
        if self.gen_lr <= 0.0 {
            return Err(MistError::validation("gen_lr", "must be > 0"));
        }
        if self.ft_lr <= 0.0 {
            return Err(MistError::validation("ft_lr", "must be > 0"));
        }
        if self.ft_weight_decay < 0.0 {
            return Err(MistError::validation("ft_weight_decay", "must be >= 0"));
        }
        if self.w0 <= 0.0 {
            return Err(MistError::validation("w0", "must be > 0"));
        }
        if self.w1 <= 0.0 {
            return Err(MistError::validation("w1", "must be > 0"));
        }
        if !(self.far_threshold > 0.0 && self.far_threshold < 1.0) {
            return Err(MistError::validation("far_threshold", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Builds validated parameters from a parsed JSON object.
    ///
    /// Each key is decoded on its own first so a type error names the key
    /// rather than a line/column.
    pub fn from_json_map(map: &Map<String, Value>) -> Result<Self> {
        for (key, value) in map {
            let mut single = Map::new();
            single.insert(key.clone(), value.clone());
            if let Err(e) = serde_json::from_value::<HyperParams>(Value::Object(single)) {
                return Err(MistError::Config {
                    key: key.clone(),
                    message: e.to_string(),
                });
            }
        }
        let hp: HyperParams =
            serde_json::from_value(Value::Object(map.clone())).map_err(|e| MistError::Config {
                key: "<root>".into(),
                message: e.to_string(),
            })?;
        hp.validate()?;
        Ok(hp)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| MistError::Config {
            key: "<root>".into(),
            message: e.to_string(),
        })?;
        match value {
            Value::Object(map) => Self::from_json_map(&map),
            _ => Err(MistError::Config {
                key: "<root>".into(),
                message: "config must be a JSON object".into(),
            }),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("hyperparameters always serialize")
    }

    /// Applies `key=value` overrides on top of this value. Values are parsed
    /// as JSON scalars.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut map = match serde_json::to_value(self).expect("hyperparameters always serialize") {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw.split_once('=').ok_or_else(|| MistError::Config {
                key: raw.to_string(),
                message: "override must look like key=value".into(),
            })?;
            let key = key.trim();
            if !map.contains_key(key) {
                return Err(MistError::Config {
                    key: key.to_string(),
                    message: "unknown key".into(),
                });
            }
            let parsed: Value = serde_json::from_str(value.trim()).map_err(|e| MistError::Config {
                key: key.to_string(),
                message: e.to_string(),
            })?;
            map.insert(key.to_string(), parsed);
        }
        Self::from_json_map(&map)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<HyperParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MistError::io(path, e))?;
    HyperParams::from_json_str(&text)
}
