//! Candidate similar-session pools for a target session.
//!
//! Two pools feed the model: the current user's own earlier training
//! sessions, and the training sessions of the `N` users whose training item
//! sets overlap most with the current user's. User similarity is
//! `|A ∩ B| / (|A| * |B|)` over training item sets.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Session, SessionDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Number of similar users whose sessions form the second pool.
    pub num_similar_users: usize,
    /// Most-recent sessions kept per pool; 0 keeps all.
    pub max_candidate_sessions: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            num_similar_users: 10,
            max_candidate_sessions: 50,
        }
    }
}

/// A user's training-split item set and sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile<'a> {
    pub user: u32,
    /// Sorted, deduplicated.
    pub item_set: Vec<u32>,
    pub sessions: &'a [Session],
}

impl<'a> UserProfile<'a> {
    pub fn from_sessions(user: u32, sessions: &'a [Session]) -> Self {
        let mut item_set: Vec<u32> = sessions.iter().flat_map(|s| s.items.iter().copied()).collect();
        item_set.sort_unstable();
        item_set.dedup();
        UserProfile {
            user,
            item_set,
            sessions,
        }
    }
}

pub fn user_profiles(dataset: &SessionDataset) -> Vec<UserProfile<'_>> {
    (0..dataset.num_users() as u32)
        .map(|u| UserProfile::from_sessions(u, dataset.train_sessions_of(u)))
        .collect()
}

fn similarity_from_counts(shared: usize, a: usize, b: usize) -> f64 {
    if a == 0 || b == 0 {
        0.0
    } else {
        shared as f64 / (a as f64 * b as f64)
    }
}

/// `|A ∩ B| / (|A| * |B|)`; 0 when either set is empty.
pub fn user_similarity(other: &UserProfile<'_>, current: &UserProfile<'_>) -> f64 {
    let (a, b) = (&other.item_set, &current.item_set);
    let (mut i, mut j, mut shared) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    similarity_from_counts(shared, a.len(), b.len())
}

/// Highest-scoring other users, ties by ascending index, zero scores never kept.
fn select_top(mut scored: Vec<(u32, f64)>, n: usize) -> Vec<(u32, f64)> {
    scored.retain(|&(_, s)| s > 0.0);
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    scored
}

pub fn top_n_similar_users(current: u32, profiles: &[UserProfile<'_>], n: usize) -> Vec<(u32, f64)> {
    let Some(me) = profiles.iter().find(|p| p.user == current) else {
        return Vec::new();
    };
    let scored = profiles
        .iter()
        .filter(|p| p.user != current)
        .map(|p| (p.user, user_similarity(p, me)))
        .collect();
    select_top(scored, n)
}

/// Cached top-N similar-user table computed once from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarUsers {
    pub num_similar_users: usize,
    pub table: Vec<Vec<(u32, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct SimilarUsersFile {
    format: String,
    dataset_hash: String,
    #[serde(flatten)]
    similar: SimilarUsers,
}

const SIMILAR_FORMAT: &str = "insert-similar-users/1";

impl SimilarUsers {
    /// Co-occurrence counting over an item -> users index; same scores as
    /// pairwise [`user_similarity`].
    pub fn build(dataset: &SessionDataset, num_similar_users: usize) -> Self {
        let profiles = user_profiles(dataset);
        let mut postings: Vec<Vec<u32>> = vec![Vec::new(); dataset.num_items()];
        for p in &profiles {
            for &i in &p.item_set {
                postings[i as usize].push(p.user);
            }
        }
        let table = profiles
            .par_iter()
            .map(|me| {
                let mut shared = vec![0usize; profiles.len()];
                for &i in &me.item_set {
                    for &v in &postings[i as usize] {
                        shared[v as usize] += 1;
                    }
                }
                let scored = shared
                    .iter()
                    .enumerate()
                    .filter(|&(v, &c)| v as u32 != me.user && c > 0)
                    .map(|(v, &c)| {
                        let s = similarity_from_counts(c, profiles[v].item_set.len(), me.item_set.len());
                        (v as u32, s)
                    })
                    .collect();
                select_top(scored, num_similar_users)
            })
            .collect();
        SimilarUsers {
            num_similar_users,
            table,
        }
    }

    pub fn of(&self, user: u32) -> &[(u32, f64)] {
        self.table.get(user as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn save(&self, path: &Path, dataset_hash: &str) -> Result<()> {
        let file = SimilarUsersFile {
            format: SIMILAR_FORMAT.into(),
            dataset_hash: dataset_hash.into(),
            similar: self.clone(),
        };
        let json = serde_json::to_vec(&file).expect("table serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// `Ok(None)` when the file is missing or was built for other inputs.
    pub fn load(path: &Path, dataset_hash: &str, num_similar_users: usize) -> Result<Option<Self>> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        let Ok(file) = serde_json::from_slice::<SimilarUsersFile>(&bytes) else {
            return Ok(None);
        };
        if file.format != SIMILAR_FORMAT
            || file.dataset_hash != dataset_hash
            || file.similar.num_similar_users != num_similar_users
        {
            return Ok(None);
        }
        Ok(Some(file.similar))
    }

    /// Load from `path` if valid, otherwise build and write it.
    pub fn cached(dataset: &SessionDataset, num_similar_users: usize, path: &Path) -> Result<Self> {
        let hash = dataset.content_hash();
        if let Some(s) = Self::load(path, &hash, num_similar_users)? {
            return Ok(s);
        }
        let s = Self::build(dataset, num_similar_users);
        s.save(path, &hash)?;
        Ok(s)
    }
}

/// The two candidate pools for one target session.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSets<'a> {
    /// The user's training sessions before the target session, time order.
    pub own_history: Vec<&'a Session>,
    /// Training sessions of `similar_users`, time order.
    pub similar_users_sessions: Vec<&'a Session>,
    pub similar_users: Vec<(u32, f64)>,
}

impl<'a> CandidateSets<'a> {
    pub fn empty() -> Self {
        Self::default()
    }
}

fn keep_most_recent(mut sessions: Vec<&Session>, cap: usize) -> Vec<&Session> {
    sessions.sort_by_key(|s| (s.start_time, s.user, s.ordinal));
    if cap > 0 && sessions.len() > cap {
        sessions.drain(..sessions.len() - cap);
    }
    sessions
}

/// Pools for the session at `session_ordinal` of `user`.
///
/// Only training sessions are ever returned. `session_ordinal` may be past
/// the end of the user's sessions (e.g. `u32::MAX` for a live request), in
/// which case every training session of the user is history.
pub fn build_candidate_sets<'a>(
    dataset: &'a SessionDataset,
    similar: &SimilarUsers,
    user: u32,
    session_ordinal: u32,
    config: &RetrievalConfig,
) -> Result<CandidateSets<'a>> {
    if user as usize >= dataset.num_users() {
        return Err(Error::Lookup {
            kind: "user",
            key: user.to_string(),
        });
    }
    let own: Vec<&Session> = dataset
        .train_sessions_of(user)
        .iter()
        .filter(|s| s.ordinal < session_ordinal)
        .collect();
    let similar_users: Vec<(u32, f64)> = similar
        .of(user)
        .iter()
        .copied()
        .take(config.num_similar_users)
        .collect();
    let others: Vec<&Session> = similar_users
        .iter()
        .flat_map(|&(v, _)| dataset.train_sessions_of(v))
        .collect();
    Ok(CandidateSets {
        own_history: keep_most_recent(own, config.max_candidate_sessions),
        similar_users_sessions: keep_most_recent(others, config.max_candidate_sessions),
        similar_users,
    })
}
