use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{SessionDataset, Split};
use crate::error::Result;
use crate::eval::{evaluate, EvalConfig, RankingReport};
use crate::model::{Model, ModelConfig, Variant};
use crate::retrieval::{RetrievalConfig, SimilarUsers};
use crate::train::{TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    pub report: RankingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub split: Split,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Recall and MRR at the two smallest cutoffs of each row, as text.
    pub fn to_table(&self) -> String {
        let ks: Vec<usize> = self
            .rows
            .first()
            .map(|r| r.report.metrics.iter().map(|m| m.k).collect())
            .unwrap_or_default();
        let mut out = format!("{:<10}", "variant");
        for k in &ks {
            let _ = write!(out, " {:>10}", format!("Recall@{k}"));
        }
        for k in &ks {
            let _ = write!(out, " {:>10}", format!("MRR@{k}"));
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<10}", row.label);
            for k in &ks {
                let _ = write!(out, " {:>10.4}", row.report.recall(*k).unwrap_or(f64::NAN));
            }
            for k in &ks {
                let _ = write!(out, " {:>10.4}", row.report.mrr(*k).unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        out
    }
}

/// Train every variant with the same seed and settings, then evaluate each
/// best checkpoint on `split`.
pub fn run_ablation_suite(
    dataset: &SessionDataset,
    similar: &SimilarUsers,
    base: &ModelConfig,
    train: &TrainConfig,
    retrieval: &RetrievalConfig,
    split: Split,
    eval: &EvalConfig,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let mut cfg = base.clone();
        cfg.variant = variant;
        let mut trainer = Trainer::new(dataset, similar, cfg.clone(), train.clone(), *retrieval)?;
        trainer.fit(|_, _| Ok(()))?;
        let model = Model::bind(cfg, trainer.best_store())?;
        let report = evaluate(&model, trainer.best_store(), dataset, similar, retrieval, split, eval)?;
        rows.push(AblationRow {
            variant,
            label: variant.label().to_string(),
            report,
        });
    }
    Ok(AblationTable { split, rows })
}
