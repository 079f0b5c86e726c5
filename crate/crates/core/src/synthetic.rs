//! Generated corpora with known structure, for tests and sanity runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{split_per_user, PreprocessConfig, RawSession, Session, SessionDataset, Vocabulary, PADDING};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::tensor::{ParameterStore, Tensor};

const DAY: i64 = 86_400;

/// A dataset whose sessions are all in the training split.
///
/// Users are `u0..`, items `i1..=i{num_items}` at the same indices. Session
/// `k` belongs to user `k % num_users`.
fn train_only(num_users: usize, num_items: usize, sessions: Vec<Vec<u32>>) -> Result<SessionDataset> {
    let users = Vocabulary::from_names((0..num_users).map(|u| format!("u{u}")).collect())?;
    let mut item_names = vec![PADDING.to_string()];
    item_names.extend((1..=num_items).map(|i| format!("i{i}")));
    let items = Vocabulary::from_names(item_names)?;
    let mut ordinals = vec![0u32; num_users];
    let train = sessions
        .into_iter()
        .enumerate()
        .map(|(k, items)| {
            let user = k % num_users;
            let ordinal = ordinals[user];
            ordinals[user] += 1;
            Session {
                user: user as u32,
                ordinal,
                start_time: k as i64 * DAY,
                items,
            }
        })
        .collect();
    SessionDataset::new(PreprocessConfig::default(), users, items, train, Vec::new(), Vec::new())
}

/// Uniformly random sessions of length `2..=max_len`, all in train.
pub fn random_corpus(
    num_users: usize,
    num_sessions: usize,
    num_items: usize,
    max_len: usize,
    seed: u64,
) -> Result<SessionDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sessions = (0..num_sessions)
        .map(|_| {
            let len = rng.gen_range(2..=max_len.max(2));
            (0..len).map(|_| rng.gen_range(1..=num_items as u32)).collect()
        })
        .collect();
    train_only(num_users, num_items, sessions)
}

/// Sessions that follow one fixed random successor table: every item has
/// exactly one possible next item, so each training target is a function of
/// the previous item and can be memorized. 20 users, 50 items and 200
/// sessions of length `2..=6`, all in train.
pub fn memorization_corpus(seed: u64) -> Result<SessionDataset> {
    let (num_users, num_items, num_sessions) = (20, 50u32, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let successor: Vec<u32> = (0..=num_items)
        .map(|v| loop {
            let next = rng.gen_range(1..=num_items);
            if next != v {
                break next;
            }
        })
        .collect();
    let sessions = (0..num_sessions)
        .map(|_| {
            let len = rng.gen_range(2..=6);
            let mut s = vec![rng.gen_range(1..=num_items)];
            while s.len() < len {
                s.push(successor[*s.last().unwrap() as usize]);
            }
            s
        })
        .collect();
    train_only(num_users, num_items as usize, sessions)
}

/// Shape of [`clustered_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredConfig {
    pub clusters: usize,
    pub users_per_cluster: usize,
    /// Items every cluster starts its sessions from.
    pub hubs: usize,
    /// Items private to each cluster.
    pub block: usize,
    pub sessions_per_user: usize,
    pub max_len: usize,
    /// Probability of taking the table transition instead of a random
    /// item of the cluster's block.
    pub follow_prob: f64,
    pub seed: u64,
}

impl Default for ClusteredConfig {
    fn default() -> Self {
        ClusteredConfig {
            clusters: 10,
            users_per_cluster: 10,
            hubs: 10,
            block: 5,
            sessions_per_user: 15,
            max_len: 4,
            follow_prob: 0.9,
            seed: 0,
        }
    }
}

/// Users in clusters that share session patterns.
///
/// Every session starts at a hub item shared by all clusters. Which item
/// follows a hub depends on the cluster: cluster `c` has its own block of
/// private items and its own transition table from hubs into that block and
/// within it. The first item of a session therefore says nothing about the
/// cluster, while the user's other sessions and those of users with similar
/// item sets do. Split per user with the default fractions.
pub fn clustered_corpus(config: &ClusteredConfig) -> Result<SessionDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let b = config.block;
    // per cluster: hub -> block slot, and a within-block successor permutation
    let tables: Vec<(Vec<usize>, Vec<usize>)> = (0..config.clusters)
        .map(|_| {
            let from_hub = (0..config.hubs).map(|_| rng.gen_range(0..b)).collect();
            let mut cycle: Vec<usize> = (0..b).collect();
            cycle.shuffle(&mut rng);
            let mut within = vec![0; b];
            for k in 0..b {
                within[cycle[k]] = cycle[(k + 1) % b];
            }
            (from_hub, within)
        })
        .collect();

    let mut raw = Vec::new();
    let users = config.clusters * config.users_per_cluster;
    for s in 0..config.sessions_per_user {
        for u in 0..users {
            let c = u % config.clusters;
            let (from_hub, within) = &tables[c];
            let len = rng.gen_range(2..=config.max_len.max(2));
            let hub = rng.gen_range(0..config.hubs);
            let mut items = vec![format!("hub{hub}")];
            let mut slot = if rng.gen::<f64>() < config.follow_prob {
                from_hub[hub]
            } else {
                rng.gen_range(0..b)
            };
            while items.len() < len {
                items.push(format!("c{c}i{slot}"));
                slot = if rng.gen::<f64>() < config.follow_prob {
                    within[slot]
                } else {
                    rng.gen_range(0..b)
                };
            }
            let start = (s * users + u) as i64 * DAY;
            raw.push(RawSession {
                user: format!("c{c}u{u}"),
                times: (0..items.len() as i64).map(|k| start + 60 * k).collect(),
                items,
            });
        }
    }
    split_per_user(raw, &PreprocessConfig::default())
}

/// Cluster of a user of [`clustered_corpus`], from its external id.
pub fn cluster_of(user_name: &str) -> Option<usize> {
    let rest = user_name.strip_prefix('c')?;
    rest.split('u').next()?.parse().ok()
}

/// A local-only model that acts as a lookup table: after item `v` it scores
/// `successor[v]` at `10 tanh(3)` and every other item at exactly 0.
///
/// Embeddings are `3 I`, the update gate is saturated open (`b_z = 50`, so
/// `z` rounds to 1), the candidate state is `tanh(x)`, and the output layer
/// is `10` times the successor permutation. Embedding width equals the item
/// vocabulary size; `successor[0]` is ignored.
pub fn lookup_model(num_users: usize, successor: &[u32]) -> Result<(Model, ParameterStore)> {
    let m = successor.len();
    if let Some(&bad) = successor.iter().skip(1).find(|&&v| v == 0 || v as usize >= m) {
        return Err(Error::Argument(format!("successor {bad} outside 1..{m}")));
    }
    let mut cfg = ModelConfig::new(m, num_users);
    cfg.embed_dim = m;
    cfg.variant = Variant::C;
    cfg.dropout = 0.0;
    let (model, mut store) = Model::init(cfg, 0)?;
    for id in store.ids().collect::<Vec<_>>() {
        store.value_mut(id).fill(0.0);
    }
    let mut set = |name: &str, value: Tensor| -> Result<()> {
        let id = store.id(name)?;
        store.set_value(id, value)
    };
    let scaled_identity = |c: f64| {
        let mut t = Tensor::identity(m);
        t.data_mut().iter_mut().for_each(|v| *v *= c);
        t
    };
    set("item_embeddings", scaled_identity(3.0))?;
    set("gru.w_h", Tensor::identity(m))?;
    set("gru.b_z", Tensor::full(&[1, m], 50.0))?;
    let mut out = Tensor::zeros(&[m, m]);
    for (v, &next) in successor.iter().enumerate().skip(1) {
        out.data_mut()[v * m + next as usize] = 10.0;
    }
    set("mlp_out.weight", out)?;
    Ok((model, store))
}
