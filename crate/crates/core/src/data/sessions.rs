use std::collections::{HashMap, HashSet};

use crate::data::Interaction;
use crate::error::{Error, Result};

/// A session before vocabulary indexing: external ids, one timestamp per item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSession {
    pub user: String,
    pub items: Vec<String>,
    pub times: Vec<i64>,
}

impl RawSession {
    pub fn start_time(&self) -> i64 {
        self.times[0]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Split each user's time-sorted stream wherever the gap to the previous
/// event is strictly greater than `idle_threshold_s`.
pub fn sessionize(interactions: &[Interaction], idle_threshold_s: i64) -> Vec<RawSession> {
    let mut out: Vec<RawSession> = Vec::new();
    let mut prev: Option<(&str, i64)> = None;
    for it in interactions {
        let continues = matches!(prev, Some((u, t))
            if u == it.user_id && it.timestamp - t <= idle_threshold_s);
        if continues {
            let s = out.last_mut().expect("open session");
            s.items.push(it.item_id.clone());
            s.times.push(it.timestamp);
        } else {
            out.push(RawSession {
                user: it.user_id.clone(),
                items: vec![it.item_id.clone()],
                times: vec![it.timestamp],
            });
        }
        prev = Some((&it.user_id, it.timestamp));
    }
    out
}

/// Drop rare users and items and out-of-range session lengths until nothing changes.
///
/// One pass removes every item and every user whose interaction count is
/// below `min_freq`, then every session longer than `max_session_len` or
/// shorter than 2. Each pass can push other entities under the threshold,
/// so passes repeat to a fixed point.
pub fn filter_corpus(
    sessions: Vec<RawSession>,
    min_freq: usize,
    max_session_len: usize,
) -> Result<Vec<RawSession>> {
    let mut sessions = sessions;
    loop {
        let mut item_freq: HashMap<&str, usize> = HashMap::new();
        let mut user_freq: HashMap<&str, usize> = HashMap::new();
        for s in &sessions {
            *user_freq.entry(&s.user).or_default() += s.len();
            for it in &s.items {
                *item_freq.entry(it).or_default() += 1;
            }
        }
        let rare_items: HashSet<String> = item_freq
            .iter()
            .filter(|&(_, &c)| c < min_freq)
            .map(|(&k, _)| k.to_string())
            .collect();
        let rare_users: HashSet<String> = user_freq
            .iter()
            .filter(|&(_, &c)| c < min_freq)
            .map(|(&k, _)| k.to_string())
            .collect();

        let before: usize = sessions.iter().map(RawSession::len).sum();
        let before_sessions = sessions.len();
        let next: Vec<RawSession> = sessions
            .into_iter()
            .filter(|s| !rare_users.contains(&s.user))
            .map(|s| {
                if rare_items.is_empty() {
                    return s;
                }
                let (items, times) = s
                    .items
                    .into_iter()
                    .zip(s.times)
                    .filter(|(it, _)| !rare_items.contains(it))
                    .unzip();
                RawSession {
                    user: s.user,
                    items,
                    times,
                }
            })
            .filter(|s| s.len() >= 2 && s.len() <= max_session_len)
            .collect();
        let after: usize = next.iter().map(RawSession::len).sum();
        let changed = after != before || next.len() != before_sessions;
        sessions = next;
        if !changed {
            break;
        }
    }
    if sessions.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no sessions survive filtering (min_freq {min_freq}, max_session_len {max_session_len})"
        )));
    }
    Ok(sessions)
}
