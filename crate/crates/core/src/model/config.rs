use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Precision;

/// Which parts of the global module are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Local preference modulated by both the user's own history and similar users' sessions.
    #[default]
    Full,
    /// Local module only.
    C,
    /// Own history only.
    H,
    /// Similar users' sessions only.
    O,
    /// Both pools, session similarity from mean item embeddings instead of the recurrent max.
    A,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::C, Variant::H, Variant::O, Variant::A, Variant::Full];

    pub fn uses_own_history(self) -> bool {
        matches!(self, Variant::Full | Variant::H | Variant::A)
    }

    pub fn uses_similar_users(self) -> bool {
        matches!(self, Variant::Full | Variant::O | Variant::A)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "INSERT",
            Variant::C => "INSERT-c",
            Variant::H => "INSERT-h",
            Variant::O => "INSERT-o",
            Variant::A => "INSERT-a",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Full => "full",
            Variant::C => "c",
            Variant::H => "h",
            Variant::O => "o",
            Variant::A => "a",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "insert" => Ok(Variant::Full),
            "c" | "insert-c" => Ok(Variant::C),
            "h" | "insert-h" => Ok(Variant::H),
            "o" | "insert-o" => Ok(Variant::O),
            "a" | "insert-a" => Ok(Variant::A),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `-[log p(v+) + sum over v != v+ of log(1 - p(v))]`.
    #[default]
    PaperFormula,
    /// `-log p(v+)`.
    StandardCe,
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_formula" | "paper" => Ok(LossMode::PaperFormula),
            "standard_ce" | "ce" => Ok(LossMode::StandardCe),
            other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

/// Nonlinearity of the two prior-knowledge projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Item vocabulary size including the padding row.
    pub item_vocab: usize,
    pub user_vocab: usize,
    pub dropout: f64,
    pub loss_mode: LossMode,
    pub variant: Variant,
    /// Similar-session retrieval reuses the local GRU and its weights.
    pub share_ssrn_gru: bool,
    /// Softmax the similarity scores within each pool before weighting.
    pub normalize_scores: bool,
    pub prior_activation: Activation,
    /// Replace both prior vectors by zeros; for ablation checks.
    pub zero_prior: bool,
    pub precision: Precision,
}

impl ModelConfig {
    pub fn new(item_vocab: usize, user_vocab: usize) -> Self {
        ModelConfig {
            embed_dim: 50,
            item_vocab,
            user_vocab,
            dropout: 0.2,
            loss_mode: LossMode::PaperFormula,
            variant: Variant::Full,
            share_ssrn_gru: true,
            normalize_scores: false,
            prior_activation: Activation::Tanh,
            zero_prior: false,
            precision: Precision::F64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.item_vocab < 2 || self.user_vocab == 0 {
            return Err(Error::Config("vocabularies must be non-empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_pools() {
        assert!(!Variant::C.uses_own_history() && !Variant::C.uses_similar_users());
        assert!(Variant::H.uses_own_history() && !Variant::H.uses_similar_users());
        assert!(!Variant::O.uses_own_history() && Variant::O.uses_similar_users());
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn config_bounds() {
        let mut c = ModelConfig::new(10, 3);
        assert!(c.validate().is_ok());
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        c.dropout = 0.0;
        c.embed_dim = 0;
        assert!(c.validate().is_err());
    }
}
