use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Session;
use crate::train::derive_seed;

const SHUFFLE_STREAM: u64 = 1;

/// One training target: position `target` (1-based, at least 2) of
/// `train[session]`, predicted from the items before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Instance {
    pub session: usize,
    pub target: usize,
}

/// Batches of indices into `train` for one epoch.
///
/// Sessions are shuffled from `(seed, epoch)`, then each batch takes the
/// first pending sessions whose users it does not hold yet. Only when fewer
/// distinct users than `batch_size` remain does a batch repeat a user.
/// Sessions shorter than two items have no target and are skipped.
pub fn make_batches(train: &[Session], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..train.len()).filter(|&i| train[i].items.len() >= 2).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, SHUFFLE_STREAM, epoch as u64]));
    order.shuffle(&mut rng);

    let mut batches = Vec::new();
    let mut pending = order;
    while !pending.is_empty() {
        let mut batch = Vec::with_capacity(batch_size);
        let mut users = HashSet::new();
        let mut rest = Vec::with_capacity(pending.len());
        for idx in pending {
            if batch.len() < batch_size && users.insert(train[idx].user) {
                batch.push(idx);
            } else {
                rest.push(idx);
            }
        }
        let fill = (batch_size - batch.len()).min(rest.len());
        batch.extend(rest.drain(..fill));
        batches.push(batch);
        pending = rest;
    }
    batches
}

pub fn batch_instances(train: &[Session], batch: &[usize]) -> Vec<Instance> {
    batch
        .iter()
        .flat_map(|&session| (2..=train[session].items.len()).map(move |target| Instance { session, target }))
        .collect()
}

pub fn epoch_instances(train: &[Session], batches: &[Vec<usize>]) -> Vec<Instance> {
    batches.iter().flat_map(|b| batch_instances(train, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(users: u32, per_user: u32, len: usize) -> Vec<Session> {
        let mut out = Vec::new();
        for u in 0..users {
            for o in 0..per_user {
                out.push(Session {
                    user: u,
                    ordinal: o,
                    start_time: o as i64,
                    items: (1..=len as u32).collect(),
                });
            }
        }
        out
    }

    #[test]
    fn four_items_three_instances() {
        let train = corpus(1, 1, 4);
        let targets: Vec<usize> = batch_instances(&train, &[0]).iter().map(|i| i.target).collect();
        assert_eq!(targets, vec![2, 3, 4]);
    }

    #[test]
    fn first_batch_has_distinct_users() {
        let train = corpus(10, 5, 3);
        for seed in 0..10 {
            let batches = make_batches(&train, 4, seed, 0);
            let users: HashSet<u32> = batches[0].iter().map(|&i| train[i].user).collect();
            assert_eq!(users.len(), 4);
        }
    }

    #[test]
    fn shuffle_depends_on_seed_and_epoch() {
        let train = corpus(6, 6, 3);
        let a = make_batches(&train, 4, 1, 0);
        assert_eq!(a, make_batches(&train, 4, 1, 0));
        assert_ne!(a, make_batches(&train, 4, 1, 1));
        assert_ne!(a, make_batches(&train, 4, 2, 0));
    }

    proptest! {
        #[test]
        fn epoch_covers_every_target_once(
            lens in proptest::collection::vec((0u32..6, 1usize..7), 1..40),
            batch_size in 1usize..9,
            seed in 0u64..1000,
        ) {
            let train: Vec<Session> = lens.iter().enumerate().map(|(i, &(u, len))| Session {
                user: u, ordinal: i as u32, start_time: i as i64, items: vec![1; len],
            }).collect();
            let batches = make_batches(&train, batch_size, seed, 3);
            let mut got = epoch_instances(&train, &batches);
            got.sort();
            let mut expect = Vec::new();
            for (s, sess) in train.iter().enumerate() {
                for t in 2..=sess.items.len() {
                    expect.push(Instance { session: s, target: t });
                }
            }
            prop_assert_eq!(got, expect);

            let distinct_users = train.iter().filter(|s| s.items.len() >= 2).map(|s| s.user).collect::<HashSet<_>>().len();
            for b in &batches {
                prop_assert!(!b.is_empty() && b.len() <= batch_size);
            }
            // the first batch repeats a user only when it had to
            if distinct_users == 0 {
                prop_assert!(batches.is_empty());
            } else {
                let first: HashSet<u32> = batches[0].iter().map(|&i| train[i].user).collect();
                prop_assert_eq!(first.len(), distinct_users.min(batch_size));
            }
        }
    }
}
