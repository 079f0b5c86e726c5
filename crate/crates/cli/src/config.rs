//! The flat run configuration shared by every subcommand.
//!
//! Resolution order: built-in defaults, then the TOML file given with
//! `--config`, then `--set key=value` pairs, then dedicated flags.

use std::path::Path;

use insert_core::data::{FormatSpec, PreprocessConfig, Split, TimeUnit};
use insert_core::eval::{EvalConfig, Targets};
use insert_core::model::{Activation, LossMode, ModelConfig, Variant};
use insert_core::retrieval::RetrievalConfig;
use insert_core::tensor::Precision;
use insert_core::train::TrainConfig;
use insert_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // input log layout
    pub delimiter: String,
    pub user_col: usize,
    pub item_col: usize,
    pub time_col: usize,
    pub has_header: bool,
    pub time_unit: TimeUnit,

    // preprocessing
    pub idle_threshold_s: i64,
    pub min_freq: usize,
    pub max_session_len: usize,
    pub test_fraction: f64,
    pub valid_fraction: f64,

    // model
    pub embed_dim: usize,
    pub dropout: f64,
    pub loss_mode: LossMode,
    pub variant: Variant,
    pub share_ssrn_gru: bool,
    pub normalize_scores: bool,
    pub prior_activation: Activation,
    pub precision: Precision,

    // training
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub gradient_clip_norm: f64,

    // retrieval
    pub num_similar_users: usize,
    pub max_candidate_sessions: usize,

    // evaluation
    pub ks: Vec<usize>,
    pub short_only: bool,
    pub targets: Targets,
    pub split: Split,
}

impl Default for RunConfig {
    fn default() -> Self {
        let format = FormatSpec::default();
        let pre = PreprocessConfig::default();
        let model = ModelConfig::new(2, 1);
        let train = TrainConfig::default();
        let retrieval = RetrievalConfig::default();
        let eval = EvalConfig::default();
        RunConfig {
            delimiter: format.delimiter.to_string(),
            user_col: format.user_col,
            item_col: format.item_col,
            time_col: format.time_col,
            has_header: format.has_header,
            time_unit: format.time_unit,
            idle_threshold_s: pre.idle_threshold_s,
            min_freq: pre.min_freq,
            max_session_len: pre.max_session_len,
            test_fraction: pre.test_fraction,
            valid_fraction: pre.valid_fraction,
            embed_dim: model.embed_dim,
            dropout: model.dropout,
            loss_mode: model.loss_mode,
            variant: model.variant,
            share_ssrn_gru: model.share_ssrn_gru,
            normalize_scores: model.normalize_scores,
            prior_activation: model.prior_activation,
            precision: model.precision,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            beta1: train.beta1,
            beta2: train.beta2,
            adam_eps: train.adam_eps,
            max_epochs: train.max_epochs,
            patience: train.patience,
            seed: train.seed,
            gradient_clip_norm: train.gradient_clip_norm,
            num_similar_users: retrieval.num_similar_users,
            max_candidate_sessions: retrieval.max_candidate_sessions,
            ks: eval.ks,
            short_only: eval.short_only,
            targets: eval.targets,
            split: Split::Test,
        }
    }
}

/// Parse a `--set` value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Merge a config file, `key=value` pairs and flag overrides.
    pub fn resolve(
        file: Option<&Path>,
        sets: &[String],
        flags: Vec<(&'static str, toml::Value)>,
    ) -> Result<RunConfig, Error> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for pair in sets {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {pair:?}")))?;
            table.insert(key.trim().to_string(), parse_value(value.trim()));
        }
        for (key, value) in flags {
            table.insert(key.to_string(), value);
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.format()?;
        self.preprocess().validate()?;
        self.train().validate()?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be a non-empty list of positive cutoffs".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.embed_dim == 0 {
            return Err(Error::Config("need embed_dim > 0 and dropout in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn format(&self) -> Result<FormatSpec, Error> {
        let delimiter = match self.delimiter.as_str() {
            "\\t" | "tab" => '\t',
            s => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => c,
                    _ => return Err(Error::Config(format!("delimiter must be one character, got {s:?}"))),
                }
            }
        };
        Ok(FormatSpec {
            delimiter,
            user_col: self.user_col,
            item_col: self.item_col,
            time_col: self.time_col,
            has_header: self.has_header,
            time_unit: self.time_unit,
        })
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            idle_threshold_s: self.idle_threshold_s,
            min_freq: self.min_freq,
            max_session_len: self.max_session_len,
            test_fraction: self.test_fraction,
            valid_fraction: self.valid_fraction,
        }
    }

    pub fn model(&self, item_vocab: usize, user_vocab: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            dropout: self.dropout,
            loss_mode: self.loss_mode,
            variant: self.variant,
            share_ssrn_gru: self.share_ssrn_gru,
            normalize_scores: self.normalize_scores,
            prior_activation: self.prior_activation,
            precision: self.precision,
            ..ModelConfig::new(item_vocab, user_vocab)
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            gradient_clip_norm: self.gradient_clip_norm,
        }
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            num_similar_users: self.num_similar_users,
            max_candidate_sessions: self.max_candidate_sessions,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            ks: self.ks.clone(),
            short_only: self.short_only,
            targets: self.targets,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.embed_dim, 50);
        assert_eq!(c.dropout, 0.2);
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.num_similar_users, 10);
        assert_eq!(c.idle_threshold_s, 3600);
        assert_eq!(c.min_freq, 10);
        assert_eq!(c.max_session_len, 20);
        assert_eq!(c.format().unwrap().delimiter, '\t');
    }

    #[test]
    fn flags_beat_sets_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "embed_dim = 8\nseed = 1\nvariant = \"o\"\n").unwrap();
        let sets = vec!["seed=2".to_string(), "targets=last".to_string()];
        let c = RunConfig::resolve(Some(&path), &sets, vec![("seed", toml::Value::Integer(3))]).unwrap();
        assert_eq!(c.embed_dim, 8);
        assert_eq!(c.variant, Variant::O);
        assert_eq!(c.targets, Targets::Last);
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let err = RunConfig::resolve(None, &["embed_dims=3".into()], vec![]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = RunConfig::resolve(None, &["dropout=1.5".into()], vec![]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = RunConfig::resolve(None, &["delimiter=ab".into()], vec![]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn serialized_config_reads_back() {
        let c = RunConfig {
            ks: vec![1, 10],
            split: Split::Valid,
            ..RunConfig::default()
        };
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
