use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SessionDataset, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig};
use crate::model::{dropout_mask, session_loss, Model, ModelConfig};
use crate::retrieval::{build_candidate_sets, RetrievalConfig, SimilarUsers};
use crate::tensor::{Gradients, ParameterStore};
use crate::train::{
    adam_step, derive_seed, make_batches, AdamState, Checkpoint, CheckpointManifest, EarlyStopping, TrainConfig,
    CHECKPOINT_FORMAT,
};

const DROPOUT_STREAM: u64 = 2;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    /// Mean loss over the epoch's training instances.
    pub loss: f64,
    #[serde(rename = "val_recall@5")]
    pub val_recall_5: Option<f64>,
    #[serde(rename = "val_recall@20")]
    pub val_recall_20: Option<f64>,
    #[serde(rename = "val_mrr@5")]
    pub val_mrr_5: Option<f64>,
    #[serde(rename = "val_mrr@20")]
    pub val_mrr_20: Option<f64>,
    pub improved: bool,
    pub grad_clip_norm: f64,
    /// Steps of this epoch whose gradient norm exceeded the cap.
    pub clipped_steps: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_score: Option<f64>,
    pub stopped_early: bool,
    pub records: Vec<EpochRecord>,
}

/// Training loop state; one instance per run.
///
/// Every source of randomness (initialization, shuffling, dropout) is
/// derived from the seed and the epoch/batch/slot position, so resuming from
/// a checkpoint continues the exact trajectory of an uninterrupted run.
/// Per-session gradients are computed in parallel and summed in batch order,
/// which keeps results independent of the thread count.
pub struct Trainer<'d> {
    dataset: &'d SessionDataset,
    similar: &'d SimilarUsers,
    dataset_hash: String,
    model: Model,
    store: ParameterStore,
    adam: AdamState,
    config: TrainConfig,
    retrieval: RetrievalConfig,
    epoch: usize,
    step: u64,
    stopper: EarlyStopping,
    best: Option<ParameterStore>,
    finished: bool,
    extra: serde_json::Value,
}

impl<'d> Trainer<'d> {
    pub fn new(
        dataset: &'d SessionDataset,
        similar: &'d SimilarUsers,
        model_config: ModelConfig,
        config: TrainConfig,
        retrieval: RetrievalConfig,
    ) -> Result<Self> {
        config.validate()?;
        if model_config.item_vocab != dataset.num_items() || model_config.user_vocab != dataset.num_users() {
            return Err(Error::Config(format!(
                "model vocabularies {}x{} do not match dataset {}x{}",
                model_config.item_vocab,
                model_config.user_vocab,
                dataset.num_items(),
                dataset.num_users()
            )));
        }
        if dataset.split(Split::Train).iter().all(|s| s.items.len() < 2) {
            return Err(Error::EmptyDataset("training split has no targets".into()));
        }
        let (model, store) = Model::init(model_config, derive_seed(&[config.seed, 0]))?;
        let adam = AdamState::new(&store);
        Ok(Trainer {
            dataset,
            similar,
            dataset_hash: dataset.content_hash(),
            model,
            store,
            adam,
            stopper: EarlyStopping::new(config.patience),
            config,
            retrieval,
            epoch: 0,
            step: 0,
            best: None,
            finished: false,
            extra: serde_json::Value::Null,
        })
    }

    /// Continue from a checkpoint written by [`Trainer::last_checkpoint`].
    pub fn resume(dataset: &'d SessionDataset, similar: &'d SimilarUsers, checkpoint: Checkpoint) -> Result<Self> {
        let dataset_hash = dataset.content_hash();
        checkpoint.check_dataset(&dataset_hash)?;
        let m = checkpoint.manifest;
        let model = Model::bind(m.model, &checkpoint.params)?;
        let adam = checkpoint
            .adam
            .ok_or_else(|| Error::ArtifactMismatch("checkpoint has no optimizer state to resume from".into()))?;
        Ok(Trainer {
            dataset,
            similar,
            dataset_hash,
            model,
            store: checkpoint.params,
            adam,
            config: m.train,
            retrieval: m.retrieval,
            epoch: m.epoch,
            step: m.step,
            stopper: m.early_stopping,
            best: checkpoint.best,
            finished: m.finished,
            extra: m.extra,
        })
    }

    /// Provenance stored in every checkpoint manifest.
    pub fn with_extra(mut self, extra: serde_json::Value) -> Self {
        self.extra = extra;
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Parameters of the best validation epoch, or the current ones when
    /// nothing has been validated.
    pub fn best_store(&self) -> &ParameterStore {
        self.best.as_ref().unwrap_or(&self.store)
    }

    /// Train one epoch without validating. Returns `(mean loss, clipped steps)`.
    pub fn train_epoch(&mut self) -> Result<(f64, usize)> {
        let train = self.dataset.split(Split::Train);
        let epoch = self.epoch + 1;
        let batches = make_batches(train, self.config.batch_size, self.config.seed, epoch);
        let mut total = 0.0;
        let mut count = 0usize;
        let mut clipped = 0usize;
        for (b, batch) in batches.iter().enumerate() {
            let (loss, n, was_clipped) = self.train_batch(epoch, b, batch)?;
            total += loss;
            count += n;
            clipped += usize::from(was_clipped);
        }
        self.epoch = epoch;
        Ok((total / count.max(1) as f64, clipped))
    }

    /// One optimizer step. Returns the summed loss, instance count, and
    /// whether the gradient was clipped.
    fn train_batch(&mut self, epoch: usize, batch_index: usize, batch: &[usize]) -> Result<(f64, usize, bool)> {
        let train = self.dataset.split(Split::Train);
        let n_instances: usize = batch.iter().map(|&i| train[i].items.len() - 1).sum();
        let scale = 1.0 / n_instances as f64;
        let cfg = self.model.config();
        let rate = cfg.dropout;
        let d = cfg.embed_dim;
        let seed = self.config.seed;
        let (model, store, dataset, similar, retrieval) =
            (&self.model, &self.store, self.dataset, self.similar, &self.retrieval);

        let results: Vec<Result<(Gradients, f64)>> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &si)| {
                let s = &train[si];
                let candidates = build_candidate_sets(dataset, similar, s.user, s.ordinal, retrieval)?;
                let mask = (rate > 0.0).then(|| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                        seed,
                        DROPOUT_STREAM,
                        epoch as u64,
                        batch_index as u64,
                        slot as u64,
                    ]));
                    dropout_mask(&mut rng, s.items.len() - 1, d, rate)
                });
                let mut tape = model.tape(store);
                let w = model.weights(&mut tape);
                let (loss, _) = session_loss(model, &mut tape, &w, s, &candidates, mask.as_ref())?;
                let value = tape.value(loss).item()?;
                let scaled = tape.scale(loss, scale)?;
                Ok((tape.backward(scaled)?, value))
            })
            .collect();

        self.store.zero_grads();
        let mut total = 0.0;
        for r in results {
            let (grads, value) = r?;
            self.store.accumulate(&grads);
            total += value;
        }
        let report = adam_step(&mut self.store, &mut self.adam, &self.config)?;
        self.step += 1;
        Ok((total, n_instances, report.clipped))
    }

    /// Train one epoch, validate, and update early stopping.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        if self.finished {
            return Err(Error::Usage("training already finished".into()));
        }
        let started = Instant::now();
        let (loss, clipped_steps) = self.train_epoch()?;
        let mut record = EpochRecord {
            epoch: self.epoch,
            step: self.step,
            loss,
            val_recall_5: None,
            val_recall_20: None,
            val_mrr_5: None,
            val_mrr_20: None,
            improved: false,
            grad_clip_norm: self.config.gradient_clip_norm,
            clipped_steps,
            wall_time_s: 0.0,
        };
        let has_valid = self.dataset.split(Split::Valid).iter().any(|s| s.items.len() >= 2);
        if has_valid {
            let report = evaluate(
                &self.model,
                &self.store,
                self.dataset,
                self.similar,
                &self.retrieval,
                Split::Valid,
                &EvalConfig::default(),
            )?;
            record.val_recall_5 = report.recall(5);
            record.val_recall_20 = report.recall(20);
            record.val_mrr_5 = report.mrr(5);
            record.val_mrr_20 = report.mrr(20);
            let (improved, stop) = self.stopper.observe(self.epoch, report.mrr(20).unwrap_or(0.0));
            record.improved = improved;
            if improved {
                self.best = Some(self.store.clone());
            }
            self.finished = stop;
        } else {
            // nothing to select on: the latest parameters are the best
            record.improved = true;
            self.best = None;
        }
        if self.epoch >= self.config.max_epochs {
            self.finished = true;
        }
        record.wall_time_s = started.elapsed().as_secs_f64();
        Ok(record)
    }

    /// Run epochs until early stopping or `max_epochs`, handing each record
    /// to `on_epoch`.
    pub fn fit(&mut self, mut on_epoch: impl FnMut(&Trainer<'d>, &EpochRecord) -> Result<()>) -> Result<TrainSummary> {
        let mut records = Vec::new();
        let start_epoch = self.epoch;
        while !self.finished {
            let record = self.run_epoch()?;
            on_epoch(self, &record)?;
            records.push(record);
        }
        Ok(TrainSummary {
            epochs_run: self.epoch - start_epoch,
            best_epoch: self.stopper.best_epoch,
            best_score: self.stopper.best_score,
            stopped_early: self.stopper.bad_epochs >= self.stopper.patience,
            records,
        })
    }

    /// [`Trainer::fit`], writing `last.ckpt` every epoch, `best.ckpt` on
    /// improvement, and appending to `train_log.jsonl` in `dir`.
    pub fn fit_to_dir(&mut self, dir: &Path) -> Result<TrainSummary> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join("train_log.jsonl");
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        self.fit(|t, record| {
            let line = serde_json::to_string(record).expect("record serializes");
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
            if record.improved {
                t.best_checkpoint().save(&dir.join("best.ckpt"))?;
            }
            t.last_checkpoint().save(&dir.join("last.ckpt"))
        })
    }

    fn manifest(&self, epoch: usize, finished: bool) -> CheckpointManifest {
        CheckpointManifest {
            format: CHECKPOINT_FORMAT.into(),
            model: self.model.config().clone(),
            train: self.config.clone(),
            retrieval: self.retrieval,
            dataset_hash: self.dataset_hash.clone(),
            epoch,
            step: self.step,
            early_stopping: self.stopper.clone(),
            finished,
            extra: self.extra.clone(),
        }
    }

    /// Current parameters with optimizer state; resumable.
    pub fn last_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            manifest: self.manifest(self.epoch, self.finished),
            params: self.store.clone(),
            adam: Some(self.adam.clone()),
            best: self.best.clone(),
        }
    }

    /// Best parameters only, for evaluation and serving.
    pub fn best_checkpoint(&self) -> Checkpoint {
        let epoch = match (&self.best, self.stopper.best_epoch) {
            (Some(_), Some(e)) => e,
            _ => self.epoch,
        };
        Checkpoint {
            manifest: self.manifest(epoch, true),
            params: self.best_store().clone(),
            adam: None,
            best: None,
        }
    }
}
