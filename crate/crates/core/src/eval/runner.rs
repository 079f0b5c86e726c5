use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Session, SessionDataset, Split};
use crate::error::{Error, Result};
use crate::eval::metrics::{rank_of_target, RankedInstance, RankingReport, SHORT_SESSION_MAX};
use crate::model::Model;
use crate::retrieval::{build_candidate_sets, RetrievalConfig, SimilarUsers};
use crate::tensor::ParameterStore;

/// Which positions of each session are predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Targets {
    /// Every position from the second item on.
    #[default]
    All,
    /// Only the final item.
    Last,
}

impl FromStr for Targets {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Targets::All),
            "last" => Ok(Targets::Last),
            other => Err(Error::Config(format!("unknown targets mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Restrict to sessions of at most five items.
    pub short_only: bool,
    pub targets: Targets,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![5, 20],
            short_only: false,
            targets: Targets::All,
        }
    }
}

/// Rank every target of one session given its prefixes.
pub fn rank_session(
    model: &Model,
    store: &ParameterStore,
    dataset: &SessionDataset,
    similar: &SimilarUsers,
    retrieval: &RetrievalConfig,
    session: &Session,
    targets: Targets,
) -> Result<Vec<RankedInstance>> {
    let n = session.items.len();
    if n < 2 {
        return Ok(Vec::new());
    }
    let candidates = build_candidate_sets(dataset, similar, session.user, session.ordinal, retrieval)?;
    let mut tape = model.tape(store);
    let w = model.weights(&mut tape);
    let trace = model.forward_session(&mut tape, &w, &session.items[..n - 1], &candidates, None)?;
    let logits = tape.value(trace.logits);
    let positions: Vec<usize> = match targets {
        Targets::All => (1..n).collect(),
        Targets::Last => vec![n - 1],
    };
    positions
        .into_iter()
        .map(|pos| {
            let rank = rank_of_target(logits.row_slice(pos - 1), session.items[pos] as usize, &[0])?;
            Ok(RankedInstance {
                session_len: n,
                position: pos + 1,
                rank,
            })
        })
        .collect()
}

/// Ranks of every evaluated target in `split`, in session order.
///
/// Candidate pools only ever hold training sessions, and the user's own
/// pool only those before the evaluated session.
pub fn rank_split(
    model: &Model,
    store: &ParameterStore,
    dataset: &SessionDataset,
    similar: &SimilarUsers,
    retrieval: &RetrievalConfig,
    split: Split,
    config: &EvalConfig,
) -> Result<Vec<RankedInstance>> {
    let sessions: Vec<&Session> = dataset
        .split(split)
        .iter()
        .filter(|s| !config.short_only || s.items.len() <= SHORT_SESSION_MAX)
        .collect();
    let per_session = sessions
        .par_iter()
        .map(|s| rank_session(model, store, dataset, similar, retrieval, s, config.targets))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_session.into_iter().flatten().collect())
}

pub fn evaluate(
    model: &Model,
    store: &ParameterStore,
    dataset: &SessionDataset,
    similar: &SimilarUsers,
    retrieval: &RetrievalConfig,
    split: Split,
    config: &EvalConfig,
) -> Result<RankingReport> {
    let instances = rank_split(model, store, dataset, similar, retrieval, split, config)?;
    if instances.is_empty() {
        return Err(Error::EmptyDataset(format!("{split} split has nothing to evaluate")));
    }
    RankingReport::from_instances(&instances, &config.ks)
}
