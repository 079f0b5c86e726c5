use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{filter_corpus, sessionize, Interaction, RawSession};
use crate::error::{Error, Result};

pub const PADDING: &str = "<pad>";

/// Bidirectional string <-> index map.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Vocabulary whose index 0 is the padding token.
    pub fn with_padding() -> Self {
        let mut v = Self::default();
        v.intern(PADDING);
        v
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i as u32).is_some() {
                return Err(Error::Argument(format!("duplicate vocabulary entry {n}")));
            }
        }
        Ok(Vocabulary { names, index })
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: u32) -> &str {
        &self.names[i as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// A session over vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub user: u32,
    /// Position of this session in the user's full time-ordered sequence.
    pub ordinal: u32,
    pub start_time: i64,
    pub items: Vec<u32>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Settings that fully determine a preprocessed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub idle_threshold_s: i64,
    pub min_freq: usize,
    pub max_session_len: usize,
    pub test_fraction: f64,
    pub valid_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            idle_threshold_s: 3600,
            min_freq: 10,
            max_session_len: 20,
            test_fraction: 0.1,
            valid_fraction: 0.1,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let (t, v) = (self.test_fraction, self.valid_fraction);
        if !(t > 0.0 && t < 1.0) || !(v > 0.0 && v < 1.0) || t + v >= 1.0 {
            return Err(Error::Config(format!(
                "split fractions must lie in (0, 1) and sum below 1, got test {t} valid {v}"
            )));
        }
        if self.idle_threshold_s < 0 {
            return Err(Error::Config("idle threshold must be non-negative".into()));
        }
        if self.max_session_len < 2 {
            return Err(Error::Config("max_session_len must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SplitStats {
    pub users: usize,
    pub sessions: usize,
    pub interactions: usize,
}

/// Corpus summary in the shape of the usual dataset-statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CorpusStats {
    pub users: usize,
    pub items: usize,
    pub sessions: usize,
    pub interactions: usize,
    pub interactions_per_session: f64,
    pub interactions_per_user: f64,
    pub train: SplitStats,
    pub valid: SplitStats,
    pub test: SplitStats,
}

/// Published statistics of the two benchmark corpora, for side-by-side reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceStats {
    pub name: &'static str,
    pub users: usize,
    pub items: usize,
    pub sessions: usize,
    pub interactions: usize,
    pub interactions_per_session: f64,
    pub interactions_per_user: f64,
}

pub const REFERENCE_STATS: [ReferenceStats; 2] = [
    ReferenceStats {
        name: "delicious",
        users: 1_643,
        items: 5_005,
        sessions: 45_603,
        interactions: 257_639,
        interactions_per_session: 5.6,
        interactions_per_user: 156.8,
    },
    ReferenceStats {
        name: "reddit",
        users: 18_173,
        items: 13_521,
        sessions: 1_119_225,
        interactions: 2_868_050,
        interactions_per_session: 2.6,
        interactions_per_user: 157.8,
    },
];

/// The per-user, temporally split session corpus.
///
/// Each split holds sessions sorted by `(user, ordinal)`. For every user,
/// train ordinals precede valid ordinals, which precede test ordinals.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionDataset {
    pub config: PreprocessConfig,
    pub users: Vocabulary,
    /// Index 0 is [`PADDING`].
    pub items: Vocabulary,
    pub train: Vec<Session>,
    pub valid: Vec<Session>,
    pub test: Vec<Session>,
    train_ranges: Vec<Range<usize>>,
}

impl SessionDataset {
    pub fn new(
        config: PreprocessConfig,
        users: Vocabulary,
        items: Vocabulary,
        mut train: Vec<Session>,
        mut valid: Vec<Session>,
        mut test: Vec<Session>,
    ) -> Result<Self> {
        for split in [&mut train, &mut valid, &mut test] {
            split.sort_by_key(|s| (s.user, s.ordinal));
            for s in split.iter() {
                if s.user as usize >= users.len() {
                    return Err(Error::Argument(format!("session user {} not in vocabulary", s.user)));
                }
                if let Some(&bad) = s.items.iter().find(|&&i| i == 0 || i as usize >= items.len()) {
                    return Err(Error::Argument(format!("session item {bad} not in vocabulary")));
                }
            }
        }
        let mut train_ranges = vec![0..0; users.len()];
        let mut i = 0;
        while i < train.len() {
            let u = train[i].user as usize;
            let start = i;
            while i < train.len() && train[i].user as usize == u {
                i += 1;
            }
            train_ranges[u] = start..i;
        }
        Ok(SessionDataset {
            config,
            users,
            items,
            train,
            valid,
            test,
            train_ranges,
        })
    }

    pub fn split(&self, split: Split) -> &[Session] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// A user's training sessions in time order.
    pub fn train_sessions_of(&self, user: u32) -> &[Session] {
        match self.train_ranges.get(user as usize) {
            Some(r) => &self.train[r.clone()],
            None => &[],
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Item vocabulary size including padding.
    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn stats(&self) -> CorpusStats {
        corpus_stats(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = DatasetManifest {
            format: "insert-dataset/1".into(),
            config: self.config.clone(),
            users: self.users.names().to_vec(),
            items: self.items.names().to_vec(),
            stats: self.stats(),
        };
        let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for split in [&self.train, &self.valid, &self.test] {
            out.extend_from_slice(&(split.len() as u64).to_le_bytes());
            for s in split {
                out.extend_from_slice(&s.user.to_le_bytes());
                out.extend_from_slice(&s.ordinal.to_le_bytes());
                out.extend_from_slice(&s.start_time.to_le_bytes());
                out.extend_from_slice(&(s.items.len() as u32).to_le_bytes());
                for i in &s.items {
                    out.extend_from_slice(&i.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(path, m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(bad("truncated dataset file"));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(8)? != DATASET_MAGIC {
            return Err(bad("not a dataset file (bad magic)"));
        }
        let mlen = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let manifest: DatasetManifest = serde_json::from_slice(take(mlen)?)
            .map_err(|e| Error::format(path, format!("manifest: {e}")))?;
        let mut splits: Vec<Vec<Session>> = Vec::with_capacity(3);
        for _ in 0..3 {
            let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let user = u32::from_le_bytes(take(4)?.try_into().unwrap());
                let ordinal = u32::from_le_bytes(take(4)?.try_into().unwrap());
                let start_time = i64::from_le_bytes(take(8)?.try_into().unwrap());
                let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
                let raw = take(len * 4)?;
                let items = raw
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                v.push(Session {
                    user,
                    ordinal,
                    start_time,
                    items,
                });
            }
            splits.push(v);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes in dataset file"));
        }
        let test = splits.pop().unwrap();
        let valid = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        SessionDataset::new(
            manifest.config,
            Vocabulary::from_names(manifest.users)?,
            Vocabulary::from_names(manifest.items)?,
            train,
            valid,
            test,
        )
        .map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// SHA-256 of the serialized form, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

const DATASET_MAGIC: &[u8; 8] = b"INSRTDS1";

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    format: String,
    config: PreprocessConfig,
    users: Vec<String>,
    items: Vec<String>,
    stats: CorpusStats,
}

/// `ceil(fraction * n)`, tolerant of binary rounding (0.1 * 30 is not 3).
fn ceil_fraction(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Assign vocabularies and split every user's sessions by time.
///
/// Per user with at least three sessions, the last `ceil(test_fraction * n)`
/// go to test and the `ceil(valid_fraction * n)` before them to valid; users
/// with fewer sessions keep everything in train. Item indices follow first
/// appearance in time order, starting at 1; user indices likewise from 0.
pub fn split_per_user(sessions: Vec<RawSession>, config: &PreprocessConfig) -> Result<SessionDataset> {
    config.validate()?;
    if sessions.is_empty() {
        return Err(Error::EmptyDataset("no sessions to split".into()));
    }
    // vocabularies by first appearance in time order
    let mut events: Vec<(i64, &str, usize, usize)> = Vec::new();
    for (si, s) in sessions.iter().enumerate() {
        for (pos, &t) in s.times.iter().enumerate() {
            events.push((t, &s.user, si, pos));
        }
    }
    events.sort();
    let mut users = Vocabulary::default();
    let mut items = Vocabulary::with_padding();
    for &(_, user, si, pos) in &events {
        users.intern(user);
        items.intern(&sessions[si].items[pos]);
    }

    let mut per_user: Vec<Vec<&RawSession>> = vec![Vec::new(); users.len()];
    for s in &sessions {
        per_user[users.get(&s.user).unwrap() as usize].push(s);
    }
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (u, list) in per_user.iter_mut().enumerate() {
        list.sort_by_key(|s| s.start_time());
        let n = list.len();
        let (n_test, n_valid) = if n < 3 {
            (0, 0)
        } else {
            (ceil_fraction(config.test_fraction, n), ceil_fraction(config.valid_fraction, n))
        };
        let n_train = n.saturating_sub(n_test + n_valid);
        for (ordinal, s) in list.iter().enumerate() {
            let session = Session {
                user: u as u32,
                ordinal: ordinal as u32,
                start_time: s.start_time(),
                items: s.items.iter().map(|i| items.get(i).unwrap()).collect(),
            };
            if ordinal < n_train {
                train.push(session);
            } else if ordinal < n_train + n_valid {
                valid.push(session);
            } else {
                test.push(session);
            }
        }
    }
    SessionDataset::new(config.clone(), users, items, train, valid, test)
}

/// Sessionize, filter to a fixed point, then split.
pub fn preprocess(interactions: &[Interaction], config: &PreprocessConfig) -> Result<SessionDataset> {
    config.validate()?;
    let sessions = sessionize(interactions, config.idle_threshold_s);
    let sessions = filter_corpus(sessions, config.min_freq, config.max_session_len)?;
    split_per_user(sessions, config)
}

fn split_stats(sessions: &[Session]) -> SplitStats {
    let mut users: Vec<u32> = sessions.iter().map(|s| s.user).collect();
    users.dedup();
    SplitStats {
        users: users.len(),
        sessions: sessions.len(),
        interactions: sessions.iter().map(Session::len).sum(),
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn corpus_stats(dataset: &SessionDataset) -> CorpusStats {
    let all = || dataset.train.iter().chain(&dataset.valid).chain(&dataset.test);
    let sessions = all().count();
    let interactions: usize = all().map(Session::len).sum();
    let mut users: Vec<u32> = all().map(|s| s.user).collect();
    users.sort_unstable();
    users.dedup();
    let mut items: Vec<u32> = all().flat_map(|s| s.items.iter().copied()).collect();
    items.sort_unstable();
    items.dedup();
    CorpusStats {
        users: users.len(),
        items: items.len(),
        sessions,
        interactions,
        interactions_per_session: ratio(interactions, sessions),
        interactions_per_user: ratio(interactions, users.len()),
        train: split_stats(&dataset.train),
        valid: split_stats(&dataset.valid),
        test: split_stats(&dataset.test),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(user: &str, start: i64, items: &[&str]) -> RawSession {
        RawSession {
            user: user.into(),
            items: items.iter().map(|s| s.to_string()).collect(),
            times: (0..items.len() as i64).map(|k| start + k).collect(),
        }
    }

    fn user_with(n: usize) -> Vec<RawSession> {
        (0..n).map(|k| raw("u", k as i64 * 10_000, &["a", "b"])).collect()
    }

    fn counts(ds: &SessionDataset) -> (usize, usize, usize) {
        (ds.train.len(), ds.valid.len(), ds.test.len())
    }

    #[test]
    fn ten_sessions_split_8_1_1() {
        let ds = split_per_user(user_with(10), &PreprocessConfig::default()).unwrap();
        assert_eq!(counts(&ds), (8, 1, 1));
    }

    #[test]
    fn seven_sessions_split_5_1_1() {
        // ceil(0.7) = 1 for both held-out slices
        let ds = split_per_user(user_with(7), &PreprocessConfig::default()).unwrap();
        assert_eq!(counts(&ds), (5, 1, 1));
    }

    #[test]
    fn thirty_sessions_use_exact_ceiling() {
        let ds = split_per_user(user_with(30), &PreprocessConfig::default()).unwrap();
        assert_eq!(counts(&ds), (24, 3, 3));
    }

    #[test]
    fn two_sessions_stay_in_train() {
        let ds = split_per_user(user_with(2), &PreprocessConfig::default()).unwrap();
        assert_eq!(counts(&ds), (2, 0, 0));
    }

    #[test]
    fn bad_fractions_are_config_errors() {
        for (t, v) in [(0.0, 0.1), (0.5, 0.5), (1.2, 0.1), (0.1, -0.1)] {
            let cfg = PreprocessConfig {
                test_fraction: t,
                valid_fraction: v,
                ..Default::default()
            };
            assert!(matches!(split_per_user(user_with(5), &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn vocab_by_first_appearance_with_padding() {
        let sessions = vec![raw("late", 100, &["z", "y"]), raw("early", 0, &["y", "x"])];
        let ds = split_per_user(sessions, &PreprocessConfig::default()).unwrap();
        assert_eq!(ds.items.names(), &[PADDING, "y", "x", "z"]);
        assert_eq!(ds.users.names(), &["early", "late"]);
    }

    #[test]
    fn stats_toy_and_empty() {
        let sessions = vec![
            raw("a", 0, &["x", "y", "z"]),
            raw("a", 10_000, &["x", "y"]),
            raw("b", 0, &["y", "z", "x"]),
        ];
        let ds = split_per_user(sessions, &PreprocessConfig::default()).unwrap();
        let st = ds.stats();
        assert_eq!((st.users, st.items, st.sessions, st.interactions), (2, 3, 3, 8));
        assert!((st.interactions_per_session - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(format!("{:.2}", st.interactions_per_session), "2.67");
        assert_eq!(st.test, SplitStats::default());
        assert_eq!(split_stats(&[]).sessions, 0);
        assert_eq!(ratio(5, 0), 0.0);
    }

    fn arb_sessions() -> impl Strategy<Value = Vec<RawSession>> {
        proptest::collection::vec((0u8..5, 0i64..100, proptest::collection::vec(0u8..8, 2..6)), 1..40)
            .prop_map(|v| {
                v.into_iter()
                    .map(|(u, day, items)| RawSession {
                        user: format!("user{u}"),
                        times: (0..items.len() as i64).map(|k| day * 86_400 + k).collect(),
                        items: items.into_iter().map(|i| format!("item{i}")).collect(),
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn serialization_roundtrip(sessions in arb_sessions()) {
            let ds = split_per_user(sessions, &PreprocessConfig::default()).unwrap();
            let bytes = ds.to_bytes();
            let back = SessionDataset::from_bytes(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(&back, &ds);
            prop_assert_eq!(back.to_bytes(), bytes);
        }

        #[test]
        fn split_is_temporal(sessions in arb_sessions()) {
            let ds = split_per_user(sessions, &PreprocessConfig::default()).unwrap();
            for u in 0..ds.num_users() as u32 {
                let of = |split: &[Session]| split.iter().filter(|s| s.user == u).cloned().collect::<Vec<_>>();
                let (tr, va, te) = (of(&ds.train), of(&ds.valid), of(&ds.test));
                if let (Some(a), Some(b)) = (tr.last(), va.first()) { prop_assert!(a.ordinal < b.ordinal); }
                if let (Some(a), Some(b)) = (va.last(), te.first()) { prop_assert!(a.ordinal < b.ordinal); }
                for a in &tr { for b in &te { prop_assert!(a.start_time <= b.start_time); } }
                prop_assert_eq!(ds.train_sessions_of(u), tr.as_slice());
            }
        }
    }
}
