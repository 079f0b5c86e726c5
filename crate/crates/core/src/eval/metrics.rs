use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based rank of `target` among the non-excluded items, by descending
/// logit with ties broken by ascending item index.
pub fn rank_of_target(logits: &[f64], target: usize, excluded: &[usize]) -> Result<usize> {
    if target >= logits.len() {
        return Err(Error::Argument(format!(
            "target {target} out of range for {} items",
            logits.len()
        )));
    }
    if excluded.contains(&target) {
        return Err(Error::Usage(format!("target {target} is excluded from ranking")));
    }
    let t = logits[target];
    let ahead = logits
        .iter()
        .enumerate()
        .filter(|&(j, &v)| (v > t || (v == t && j < target)) && !excluded.contains(&j))
        .count();
    Ok(ahead + 1)
}

/// `(recall@k, mrr@k)` over a list of ranks.
pub fn recall_mrr_at_k(ranks: &[usize], k: usize) -> Result<(f64, f64)> {
    if ranks.is_empty() {
        return Err(Error::EmptyDataset("no ranks to aggregate".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Argument("ranks are 1-based".into()));
    }
    let mut hits = 0usize;
    let mut rr = 0.0;
    for &r in ranks {
        if r <= k {
            hits += 1;
            rr += 1.0 / r as f64;
        }
    }
    let n = ranks.len() as f64;
    Ok((hits as f64 / n, rr / n))
}

/// Session lengths at or below this count as short.
pub const SHORT_SESSION_MAX: usize = 5;

/// Length bucket of an evaluated instance, by the item count of its whole session.
pub fn bucket_of(session_len: usize) -> &'static str {
    match session_len {
        0..=2 => "len2",
        3 => "len3",
        4 => "len4",
        5 => "len5",
        _ => "long",
    }
}

/// The partition, in report order.
pub const BUCKETS: [&str; 5] = ["len2", "len3", "len4", "len5", "long"];

/// One evaluated prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedInstance {
    pub session_len: usize,
    /// 1-based target position within the session.
    pub position: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAtK {
    pub k: usize,
    pub recall: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: String,
    pub instances: usize,
    /// Empty when the bucket has no instances.
    pub metrics: Vec<MetricAtK>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub instances: usize,
    pub metrics: Vec<MetricAtK>,
    /// `len2`..`len5` and `long`; counts sum to `instances`.
    pub buckets: Vec<BucketReport>,
    /// Union of `len2`..`len5`.
    pub short: BucketReport,
}

fn metrics_for(ranks: &[usize], ks: &[usize]) -> Result<Vec<MetricAtK>> {
    if ranks.is_empty() {
        return Ok(Vec::new());
    }
    ks.iter()
        .map(|&k| {
            let (recall, mrr) = recall_mrr_at_k(ranks, k)?;
            Ok(MetricAtK { k, recall, mrr })
        })
        .collect()
}

impl RankingReport {
    pub fn from_instances(instances: &[RankedInstance], ks: &[usize]) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::EmptyDataset("no instances to evaluate".into()));
        }
        if ks.is_empty() || ks.contains(&0) {
            return Err(Error::Config("cutoffs must be positive".into()));
        }
        let all: Vec<usize> = instances.iter().map(|i| i.rank).collect();
        let mut buckets = Vec::with_capacity(BUCKETS.len());
        for name in BUCKETS {
            let ranks: Vec<usize> = instances
                .iter()
                .filter(|i| bucket_of(i.session_len) == name)
                .map(|i| i.rank)
                .collect();
            buckets.push(BucketReport {
                bucket: name.to_string(),
                instances: ranks.len(),
                metrics: metrics_for(&ranks, ks)?,
            });
        }
        let short: Vec<usize> = instances
            .iter()
            .filter(|i| i.session_len <= SHORT_SESSION_MAX)
            .map(|i| i.rank)
            .collect();
        Ok(RankingReport {
            instances: instances.len(),
            metrics: metrics_for(&all, ks)?,
            buckets,
            short: BucketReport {
                bucket: "short".into(),
                instances: short.len(),
                metrics: metrics_for(&short, ks)?,
            },
        })
    }

    pub fn metric(&self, k: usize) -> Option<&MetricAtK> {
        self.metrics.iter().find(|m| m.k == k)
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.metric(k).map(|m| m.recall)
    }

    pub fn mrr(&self, k: usize) -> Option<f64> {
        self.metric(k).map(|m| m.mrr)
    }

    fn rows(&self) -> Vec<&BucketReport> {
        let mut rows: Vec<&BucketReport> = self.buckets.iter().collect();
        rows.push(&self.short);
        rows
    }

    /// `bucket,k,instances,recall,mrr`, one row per (bucket, K) including `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,k,instances,recall,mrr\n");
        for m in &self.metrics {
            let _ = writeln!(out, "all,{},{},{:.6},{:.6}", m.k, self.instances, m.recall, m.mrr);
        }
        for b in self.rows() {
            for m in &b.metrics {
                let _ = writeln!(out, "{},{},{},{:.6},{:.6}", b.bucket, m.k, b.instances, m.recall, m.mrr);
            }
        }
        out
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let ks: Vec<usize> = self.metrics.iter().map(|m| m.k).collect();
        let mut header = format!("{:<8} {:>9}", "bucket", "instances");
        for k in &ks {
            let _ = write!(header, " {:>10} {:>10}", format!("Recall@{k}"), format!("MRR@{k}"));
        }
        let mut out = header;
        out.push('\n');
        let mut line = |name: &str, n: usize, metrics: &[MetricAtK]| {
            let _ = write!(out, "{name:<8} {n:>9}");
            for k in &ks {
                match metrics.iter().find(|m| m.k == *k) {
                    Some(m) => {
                        let _ = write!(out, " {:>10.4} {:>10.4}", m.recall, m.mrr);
                    }
                    None => {
                        let _ = write!(out, " {:>10} {:>10}", "-", "-");
                    }
                }
            }
            out.push('\n');
        };
        line("all", self.instances, &self.metrics);
        for b in self.rows() {
            line(&b.bucket, b.instances, &b.metrics);
        }
        out
    }
}
