//! Configuration: a TOML file of optional keys merged with command-line
//! flags. Flags always win; anything left unset falls back to the defaults
//! in [`Settings`]. Config problems are [`ConfigError`]s so `main` can map
//! them to exit code 2 rather than a generic failure.

use crate::adapter::{AdapterSpec, ParseRule};
use serde::Deserialize;
use std::fmt;
use std::path::{Path, PathBuf};

/// Everything the subcommands need, fully resolved.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub target_vmaf: f64,
    pub window_low: f64,
    pub window_high: f64,
    pub label_tol: f64,
    pub label_max_iters: usize,
    pub scene_threshold: f64,
    pub min_shot_len: usize,
    pub bands: Vec<f64>,
    /// Fraction of the training corpus labeled for the pass-1 pool; the
    /// remainder trains the pass-2 corrector.
    pub pass1_fraction: f64,
    pub hidden: usize,
    pub blocks: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Cap on concurrently running segment workers (and thereby child
    /// processes when adapters are in play).
    pub workers: usize,
    pub codec: CodecConfig,
}

/// Which encoder/quality backend `label`, `train --pass 2`, `run`, and
/// `baseline` talk to.
#[derive(Debug, Clone)]
pub enum CodecConfig {
    /// Replay a synthetic corpus file (see `synth-corpus`); segment ids
    /// resolve against it and measurements come from its quality curves.
    Synthetic,
    /// Spawn external encoder/quality processes per segment.
    Process { encoder: AdapterSpec, quality: AdapterSpec, work_dir: PathBuf },
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            target_vmaf: cqpass_core::controller::DEFAULT_TARGET_VMAF,
            window_low: cqpass_core::controller::DEFAULT_TARGET_VMAF - 1.0,
            window_high: cqpass_core::controller::DEFAULT_TARGET_VMAF + 1.0,
            label_tol: cqpass_core::labeler::DEFAULT_LABEL_TOL,
            label_max_iters: cqpass_core::labeler::DEFAULT_LABEL_MAX_ITERS,
            scene_threshold: cqpass_core::segmenter::DEFAULT_SCENE_THRESHOLD,
            min_shot_len: cqpass_core::segmenter::DEFAULT_MIN_SHOT_LEN,
            bands: vec![1.0, 2.0],
            pass1_fraction: 0.6,
            hidden: cqpass_core::model::DEFAULT_HIDDEN,
            blocks: cqpass_core::model::DEFAULT_BLOCKS,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 200,
            workers: 4,
            codec: CodecConfig::Synthetic,
        }
    }
}

/// A config problem severe enough to refuse to run (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

// ---- file schema ---------------------------------------------------------

/// The TOML file: every key optional. Key names are documented in the
/// README; unknown keys are rejected so typos fail loudly.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub target_vmaf: Option<f64>,
    pub window_low: Option<f64>,
    pub window_high: Option<f64>,
    pub label_tol: Option<f64>,
    pub label_max_iters: Option<usize>,
    pub scene_threshold: Option<f64>,
    pub min_shot_len: Option<usize>,
    pub bands: Option<Vec<f64>>,
    pub pass1_fraction: Option<f64>,
    pub hidden: Option<usize>,
    pub blocks: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub workers: Option<usize>,
    pub codec: Option<CodecSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecSection {
    /// "synthetic" (default) or "process".
    pub mode: Option<String>,
    pub work_dir: Option<PathBuf>,
    pub encoder: Option<AdapterSection>,
    pub quality: Option<AdapterSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSection {
    pub command_template: String,
    pub timeout_secs: Option<u64>,
    /// "last-float" (default) or "float-after:<prefix>".
    pub parse_rule: Option<String>,
}

impl AdapterSection {
    fn resolve(&self, role: &str) -> Result<AdapterSpec, ConfigError> {
        let parse_rule = match self.parse_rule.as_deref() {
            None | Some("last-float") => ParseRule::LastFloat,
            Some(rule) => match rule.strip_prefix("float-after:") {
                Some(prefix) if !prefix.is_empty() => ParseRule::FloatAfter(prefix.to_string()),
                _ => {
                    return Err(bad(format!(
                        "codec.{role}.parse_rule `{rule}` (expected `last-float` or `float-after:<prefix>`)"
                    )))
                }
            },
        };
        let timeout_secs = self.timeout_secs.unwrap_or(600);
        AdapterSpec::new(&self.command_template, timeout_secs, parse_rule)
            .map_err(|e| bad(format!("codec.{role}: {e}")))
    }
}

pub fn read_config_file(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
}

impl ConfigFile {
    /// Folds the file over the defaults. Flags are applied by the caller
    /// afterwards, so the precedence is defaults < file < flags.
    pub fn into_settings(self) -> Result<Settings, ConfigError> {
        let mut s = Settings::default();
        macro_rules! take {
            ($($field:ident),+) => {
                $(if let Some(v) = self.$field { s.$field = v; })+
            };
        }
        take!(
            seed,
            target_vmaf,
            window_low,
            window_high,
            label_tol,
            label_max_iters,
            scene_threshold,
            min_shot_len,
            bands,
            pass1_fraction,
            hidden,
            blocks,
            learning_rate,
            batch_size,
            epochs,
            workers
        );
        // When only the target moved, keep the default ±1 window around it.
        if self.target_vmaf.is_some() && self.window_low.is_none() && self.window_high.is_none() {
            s.window_low = s.target_vmaf - 1.0;
            s.window_high = s.target_vmaf + 1.0;
        }

        if let Some(codec) = self.codec {
            s.codec = match codec.mode.as_deref().unwrap_or("synthetic") {
                "synthetic" => CodecConfig::Synthetic,
                "process" => {
                    let encoder = codec
                        .encoder
                        .as_ref()
                        .ok_or_else(|| bad("codec.mode = \"process\" needs [codec.encoder]"))?
                        .resolve("encoder")?;
                    let quality = codec
                        .quality
                        .as_ref()
                        .ok_or_else(|| bad("codec.mode = \"process\" needs [codec.quality]"))?
                        .resolve("quality")?;
                    let work_dir = codec
                        .work_dir
                        .clone()
                        .unwrap_or_else(|| PathBuf::from("cqpass-work"));
                    CodecConfig::Process { encoder, quality, work_dir }
                }
                other => return Err(bad(format!("codec.mode `{other}`"))),
            };
        }
        s.validate()?;
        Ok(s)
    }
}

impl Settings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.window_low < self.target_vmaf && self.target_vmaf < self.window_high) {
            return Err(bad(format!(
                "acceptance window needs window_low < target_vmaf < window_high, got {} < {} < {}",
                self.window_low, self.target_vmaf, self.window_high
            )));
        }
        if !(self.label_tol > 0.0) || self.label_max_iters == 0 {
            return Err(bad("label_tol must be > 0 and label_max_iters >= 1"));
        }
        if !(0.0 < self.pass1_fraction && self.pass1_fraction < 1.0) {
            return Err(bad(format!(
                "pass1_fraction must lie strictly between 0 and 1, got {}",
                self.pass1_fraction
            )));
        }
        if self.hidden == 0 || self.batch_size == 0 || self.epochs == 0 || self.workers == 0 {
            return Err(bad("hidden, batch_size, epochs, and workers must all be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(bad(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.bands.is_empty() || self.bands.iter().any(|b| !(*b > 0.0)) {
            return Err(bad("bands must be non-empty and positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_validation() {
        Settings::default().validate().unwrap();
    }

    #[test]
    fn file_overrides_defaults() {
        let file: ConfigFile = toml::from_str(
            "target_vmaf = 88.0\nseed = 7\nbands = [0.5, 1.0, 2.0]\n",
        )
        .unwrap();
        let s = file.into_settings().unwrap();
        assert_eq!(s.target_vmaf, 88.0);
        // Window follows the target when not pinned explicitly.
        assert_eq!((s.window_low, s.window_high), (87.0, 89.0));
        assert_eq!(s.seed, 7);
        assert_eq!(s.bands, vec![0.5, 1.0, 2.0]);
        // Untouched keys keep defaults.
        assert_eq!(s.min_shot_len, cqpass_core::segmenter::DEFAULT_MIN_SHOT_LEN);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ConfigFile>("tragget_vmaf = 91.0\n").unwrap_err();
        assert!(err.to_string().contains("tragget_vmaf"));
    }

    #[test]
    fn process_codec_requires_both_adapters() {
        let file: ConfigFile = toml::from_str(
            "[codec]\nmode = \"process\"\n[codec.encoder]\ncommand_template = \"enc {input} {output} {rf}\"\n",
        )
        .unwrap();
        let err = file.into_settings().unwrap_err();
        assert!(err.to_string().contains("codec.quality"));
    }

    #[test]
    fn parse_rule_strings_resolve() {
        let file: ConfigFile = toml::from_str(concat!(
            "[codec]\nmode = \"process\"\n",
            "[codec.encoder]\ncommand_template = \"enc {input} {output} {rf}\"\n",
            "[codec.quality]\ncommand_template = \"vmaf {input} {reference}\"\n",
            "parse_rule = \"float-after:VMAF score:\"\n",
        ))
        .unwrap();
        let s = file.into_settings().unwrap();
        match s.codec {
            CodecConfig::Process { quality, .. } => {
                assert_eq!(quality.parse_rule, ParseRule::FloatAfter("VMAF score:".into()));
            }
            other => panic!("expected process codec, got {other:?}"),
        }
    }

    #[test]
    fn bad_window_is_a_config_error() {
        let file: ConfigFile =
            toml::from_str("target_vmaf = 91.0\nwindow_low = 92.0\nwindow_high = 93.0\n").unwrap();
        assert!(file.into_settings().is_err());
    }
}
