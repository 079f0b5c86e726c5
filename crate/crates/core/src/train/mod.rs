//! User-aware mini-batch training.
//!
//! An epoch shuffles the training sessions, packs them into batches of
//! sessions from distinct users, and trains on every next-item target of
//! every session. Each batch is one Adam step on the mean instance loss.

mod adam;
mod batching;
mod checkpoint;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState, StepReport};
pub use batching::{batch_instances, epoch_instances, make_batches, Instance};
pub use checkpoint::{Checkpoint, CheckpointManifest, CHECKPOINT_FORMAT};
pub use trainer::{EpochRecord, TrainSummary, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Sessions per batch; each contributes all of its targets.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    /// Non-improving validation epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient norm cap; 0 disables clipping.
    pub gradient_clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 30,
            patience: 3,
            seed: 42,
            gradient_clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if !(self.gradient_clip_norm >= 0.0) {
            return bad("gradient_clip_norm must be non-negative");
        }
        Ok(())
    }
}

/// Mix several integers into one RNG seed (SplitMix64 finalizer per part).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Patience-based early stopping on a score where higher is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_score: Option<f64>,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_score: None,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    /// Record `score` for `epoch`; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, score: f64) -> (bool, bool) {
        let improved = self.best_score.map_or(true, |b| score > b);
        if improved {
            self.best_score = Some(score);
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        (improved, self.bad_epochs >= self.patience)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_trace() {
        let mut es = EarlyStopping::new(2);
        let scores = [0.1, 0.2, 0.19, 0.18];
        let mut stopped_at = None;
        for (i, &s) in scores.iter().enumerate() {
            let (_, stop) = es.observe(i + 1, s);
            if stop {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(4));
        assert_eq!(es.best_epoch, Some(2));
        assert_eq!(es.best_score, Some(0.2));
    }

    #[test]
    fn improvement_resets_count() {
        let mut es = EarlyStopping::new(2);
        es.observe(1, 0.5);
        assert_eq!(es.observe(2, 0.4), (false, false));
        assert_eq!(es.observe(3, 0.6), (true, false));
        assert_eq!(es.observe(4, 0.6), (false, false));
        assert_eq!(es.observe(5, 0.1), (false, true));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn seeds_differ_by_part() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_ne!(derive_seed(&[0]), derive_seed(&[0, 0]));
        assert_eq!(derive_seed(&[7, 8, 9]), derive_seed(&[7, 8, 9]));
    }
}
