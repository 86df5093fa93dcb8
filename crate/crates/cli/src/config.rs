//! Flat `key = value` run configuration with `#` comments. Unknown keys are
//! rejected so typos fail loudly instead of silently training with defaults.

use std::fs;
use std::path::{Path, PathBuf};

use idlive_core::{Architecture, TrainConfig};

use crate::CliError;

/// Declarative run configuration. Every field has a default; a config file
/// overrides individual keys and command-line flags override paths.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub architecture: Option<String>,
    pub image_size: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub data_root: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub gallery: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            architecture: None,
            image_size: 64,
            margin: train.margin,
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            batch_size: train.batch_size,
            seed: train.seed,
            data_root: None,
            checkpoint: None,
            gallery: None,
            report: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::File { path: path.to_path_buf(), source: e })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut config = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                line: lineno + 1,
                message: format!("expected `key = value`, got {raw:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |message: String| CliError::Config { line: lineno + 1, message };
            match key {
                "architecture" => config.architecture = Some(value.to_string()),
                "image_size" => config.image_size = parse_num(key, value, lineno)?,
                "margin" => config.margin = parse_num(key, value, lineno)?,
                "learning_rate" => config.learning_rate = parse_num(key, value, lineno)?,
                "epochs" => config.epochs = parse_num(key, value, lineno)?,
                "batch_size" => config.batch_size = parse_num(key, value, lineno)?,
                "seed" => config.seed = parse_num(key, value, lineno)?,
                "data_root" => config.data_root = Some(PathBuf::from(value)),
                "checkpoint" => config.checkpoint = Some(PathBuf::from(value)),
                "gallery" => config.gallery = Some(PathBuf::from(value)),
                "report" => config.report = Some(PathBuf::from(value)),
                _ => return Err(bad(format!("unknown key {key:?}"))),
            }
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let reject = |message: String| Err(CliError::ConfigInvalid(message));
        if self.margin <= 0.0 {
            return reject(format!("margin must be positive, got {}", self.margin));
        }
        if self.learning_rate <= 0.0 {
            return reject(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return reject("batch_size must be >= 1".into());
        }
        if self.image_size == 0 {
            return reject("image_size must be >= 1".into());
        }
        Ok(())
    }

    /// Resolves the architecture: an explicit descriptor must match the
    /// configured image size; otherwise the default two-conv stack is built
    /// at that size.
    pub fn architecture(&self) -> Result<Architecture, CliError> {
        match &self.architecture {
            Some(text) => {
                let arch = Architecture::parse(text)?;
                let [c, h, w] = arch.input_shape();
                if c != 1 || h != self.image_size || w != self.image_size {
                    return Err(CliError::ConfigInvalid(format!(
                        "architecture input {c}x{h}x{w} does not match image_size {}",
                        self.image_size
                    )));
                }
                Ok(arch)
            }
            None => Ok(Architecture::default_desk(self.image_size)?),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            margin: self.margin,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, lineno: usize) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::Config {
        line: lineno + 1,
        message: format!("invalid value {value:?} for {key}"),
    })
}
