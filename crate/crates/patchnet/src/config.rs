//! Flat key=value configuration files with '#' comments.

use std::path::Path;

use crate::correlation::CorrelationConfig;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Everything a config file can describe: model architecture plus training
/// hyperparameters.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    pub model: CorrelationConfig,
    pub train: TrainConfig,
}

/// Parses a flat key=value config. Unknown keys and malformed values fail
/// with the 1-based line number.
pub fn parse_config(text: &str) -> Result<FileConfig> {
    let mut cfg = FileConfig::default();
    let mut template_size_set = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
            line: line_no,
            message: format!("expected key=value, got {line:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();

        let bad = |what: &str| Error::ConfigParse {
            line: line_no,
            message: format!("invalid {what} value {value:?} for key {key:?}"),
        };
        let parse_usize = || value.parse::<usize>().map_err(|_| bad("integer"));
        let parse_f64 = || value.parse::<f64>().map_err(|_| bad("number"));
        let parse_bool = || match value {
            "1" | "true" | "yes" => Ok(true),
            "0" | "false" | "no" => Ok(false),
            _ => Err(bad("boolean")),
        };

        match key {
            "patches_per_side" => cfg.model.patches_per_side = parse_usize()?,
            "patch_size" => cfg.model.patch_size = parse_usize()?,
            "template_size" => {
                cfg.model.template_size = parse_usize()?;
                template_size_set = true;
            }
            "search_size" => cfg.model.search_size = parse_usize()?,
            "corr_stride" => cfg.model.corr_stride = parse_usize()?,
            "channels" => cfg.model.channels = parse_usize()?,
            "relu_between_stages" => cfg.model.relu_between_stages = parse_bool()?,
            "alpha" => cfg.train.alpha = parse_f64()?,
            "lr" => cfg.train.lr = parse_f64()?,
            "momentum" => cfg.train.momentum = parse_f64()?,
            "batch_size" => cfg.train.batch_size = parse_usize()?,
            "steps" => cfg.train.steps = parse_usize()?,
            "smooth_l1_beta" => cfg.train.smooth_l1_beta = parse_f64()?,
            "loss_balance" => cfg.train.loss_balance = parse_f64()?,
            "max_translate_frac" => cfg.train.motion.max_translate_frac = parse_f64()?,
            "scale_min" => cfg.train.motion.scale_range.0 = parse_f64()?,
            "scale_max" => cfg.train.motion.scale_range.1 = parse_f64()?,
            "brightness_jitter" => cfg.train.motion.brightness_jitter = parse_f64()?,
            "train_fourier" => cfg.train.train_fourier = parse_bool()?,
            "train_bbox" => cfg.train.train_bbox = parse_bool()?,
            _ => {
                return Err(Error::ConfigParse {
                    line: line_no,
                    message: format!("unknown key {key:?}"),
                })
            }
        }
    }

    if !template_size_set {
        cfg.model.template_size = cfg.model.patches_per_side * cfg.model.patch_size;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}
