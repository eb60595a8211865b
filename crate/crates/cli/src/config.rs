//! Versioned run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use lvkd_core::data_model::Split;
use lvkd_core::io::sha256_hex;
use lvkd_core::lvm_eval::DEFAULT_DILATION_PX;
use lvkd_core::seg_metrics::ExclusionPolicy;
use lvkd_student::distillation::TrainingConfig;
use lvkd_student::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;
/// Overrides `paths.out_dir` when set.
pub const OUT_ENV: &str = "ECHODFKD_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScorerChoice {
    Mock,
    ScoresFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_policy")]
    pub policy: ExclusionPolicy,
    #[serde(default = "default_scorer")]
    pub scorer: ScorerChoice,
    /// CSV of precomputed similarities, for `SCORES_FILE`.
    #[serde(default)]
    pub scores_file: Option<PathBuf>,
    #[serde(default = "default_dilation")]
    pub dilation_px: usize,
    /// Frames of warm-up repeated before the first frame at inference.
    #[serde(default)]
    pub prepad_frames: usize,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_policy() -> ExclusionPolicy {
    ExclusionPolicy::Full
}

fn default_scorer() -> ScorerChoice {
    ScorerChoice::Mock
}

fn default_dilation() -> usize {
    DEFAULT_DILATION_PX
}

fn default_split() -> Split {
    Split::Test
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            policy: default_policy(),
            scorer: default_scorer(),
            scores_file: None,
            dilation_px: default_dilation(),
            prepad_frames: 0,
            split: default_split(),
        }
    }
}

/// Size of a generated phantom dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
}

fn default_frames() -> usize {
    64
}

fn default_side() -> usize {
    64
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            train: 200,
            val: 40,
            test: 40,
            frames: 64,
            height: 64,
            width: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Root of all randomness; subcommands derive their own streams from it.
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub phantom: PhantomConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl RunConfig {
    /// A phantom-ready configuration rooted at `root`.
    pub fn with_root(root: &Path) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            paths: Paths {
                data_dir: root.join("data"),
                cache_dir: root.join("cache"),
                out_dir: root.join("out"),
            },
            phantom: PhantomConfig::default(),
            model: ModelConfig::grid(2, 1, (64, 64)),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }

    /// Parses JSON, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("run config: {e}")))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} unsupported, expected {SCHEMA_VERSION}",
                config.schema_version
            )));
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.paths.data_dir);
        resolve(&mut config.paths.cache_dir);
        resolve(&mut config.paths.out_dir);
        if let Some(p) = config.evaluation.scores_file.as_mut() {
            resolve(p);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        let p = &self.phantom;
        if p.frames < 3 || p.height == 0 || p.width == 0 {
            return Err(CliError::Config(format!(
                "phantom size {}x{}x{} too small",
                p.frames, p.height, p.width
            )));
        }
        if self.evaluation.scorer == ScorerChoice::ScoresFile
            && self.evaluation.scores_file.is_none()
        {
            return Err(CliError::Config(
                "scorer SCORES_FILE needs evaluation.scores_file".into(),
            ));
        }
        Ok(())
    }

    /// Applies the output-directory environment override.
    pub fn apply_env(&mut self) {
        if let Some(out) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            self.paths.out_dir = PathBuf::from(out);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash of the canonical serialization; recorded in every run manifest.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_resolves_paths() {
        let cfg = RunConfig::with_root(Path::new("runs"));
        let text = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::parse(&text, Path::new("/base")).unwrap();
        assert_eq!(back.paths.data_dir, Path::new("/base/runs/data"));
        assert_eq!(back.model, cfg.model);
        assert_eq!(back.training, cfg.training);
    }

    #[test]
    fn rejects_other_schema_versions() {
        let mut cfg = RunConfig::with_root(Path::new("/x"));
        cfg.schema_version = 2;
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(matches!(
            RunConfig::parse(&text, Path::new("/")),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let text = r#"{
            "schema_version": 1,
            "paths": {"data_dir": "d", "cache_dir": "c", "out_dir": "o"},
            "model": {"num_blocks": 1, "layers_per_block": 1, "channel_widths": [16], "input_size": [64, 64]}
        }"#;
        let cfg = RunConfig::parse(text, Path::new("/r")).unwrap();
        assert_eq!(cfg.training, TrainingConfig::default());
        assert_eq!(cfg.evaluation.dilation_px, DEFAULT_DILATION_PX);
        assert_eq!(
            cfg.hash(),
            RunConfig::parse(text, Path::new("/r")).unwrap().hash()
        );
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let text = r#"{"schema_version": 1, "bogus": 1}"#;
        assert!(matches!(
            RunConfig::parse(text, Path::new("/")),
            Err(CliError::Config(_))
        ));
    }
}
