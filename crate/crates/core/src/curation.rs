//! Embedding-space curation: per-patient deduplication and nearest-normal
//! pair selection for blend sources.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::manifest::{Manifest, Sample};
use crate::seed;

/// Distance below which two frames of one patient count as duplicates.
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 356.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DedupConfig {
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            threshold: DEFAULT_DEDUP_THRESHOLD,
            seed: 0,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold <= 0.0 || !self.threshold.is_finite() {
            return Err(Error::Config(format!(
                "dedup threshold must be > 0, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Euclidean distance, accumulated in `f64`.
pub fn distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "embedding rows of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(sq_dist(a, b).sqrt())
}

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// One patient group's deduplication. `pick(remaining)` chooses the index of
/// the next query among the `remaining` candidates (kept in original order).
/// Returns the kept members, in original order.
pub(crate) fn dedup_group(
    members: &[usize],
    within: impl Fn(usize, usize) -> bool,
    mut pick: impl FnMut(usize) -> usize,
) -> Vec<usize> {
    let mut remaining = members.to_vec();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let query = remaining.remove(pick(remaining.len()));
        remaining.retain(|&m| !within(query, m));
        kept.push(query);
    }
    kept.sort_unstable();
    kept
}

/// Removes near-duplicate frames within each patient group.
///
/// Per group: draw a remaining sample uniformly at random, keep it, and drop
/// every remaining sample whose embedding lies within `threshold` (inclusive)
/// of it; repeat until the group is exhausted. Kept samples retain their
/// original relative order. Each group draws from its own stream derived from
/// `cfg.seed` and the patient id, so the result does not depend on group
/// iteration order.
pub fn deduplicate(
    manifest: &Manifest,
    table: &EmbeddingTable,
    cfg: &DedupConfig,
) -> Result<Manifest> {
    cfg.validate()?;
    manifest.check_embeddings(table)?;
    let samples = manifest.samples();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        s.embedding()?;
        groups.entry(s.patient_id.as_str()).or_default().push(i);
    }

    let thr_sq = cfg.threshold * cfg.threshold;
    let mut keep = vec![false; samples.len()];
    for (patient, members) in &groups {
        let mut rng = seed::rng(cfg.seed, &[seed::str_key(patient)]);
        let row = |i: usize| table.row(samples[i].embedding_index.unwrap());
        let kept = dedup_group(
            members,
            |q, m| sq_dist(row(q), row(m)) <= thr_sq,
            |n| rng.gen_range(0..n),
        );
        for k in kept {
            keep[k] = true;
        }
    }
    let out = samples
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(s, _)| s.clone())
        .collect();
    Manifest::new(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTarget {
    pub id: String,
    pub distance: f64,
}

/// A lesion sample and its nearest eligible normal samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAssignment {
    pub lesion_id: String,
    pub targets: Vec<PairTarget>,
}

impl PairAssignment {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("pair assignment serializes")
    }
}

/// Writes assignments as JSON Lines.
pub fn pairs_to_jsonl(pairs: &[PairAssignment]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&p.to_json_line());
        out.push('\n');
    }
    out
}

/// Exact k-nearest search over the normals that do not share the lesion's
/// patient. Ties on distance are broken by ascending sample id.
pub fn select_pairs(
    lesion: &Sample,
    normals: &Manifest,
    table: &EmbeddingTable,
    k: usize,
) -> Result<PairAssignment> {
    if k == 0 {
        return Err(Error::Config("pair count k must be >= 1".into()));
    }
    let query = table_row(table, lesion)?;
    let mut scored: Vec<(f64, &str)> = Vec::new();
    for s in normals.samples() {
        if s.patient_id == lesion.patient_id {
            continue;
        }
        let d = distance(query, table_row(table, s)?)?;
        scored.push((d, s.id.as_str()));
    }
    if scored.is_empty() {
        return Err(Error::NoCandidates(lesion.id.clone()));
    }
    let by_rank = |a: &(f64, &str), b: &(f64, &str)| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, by_rank);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_rank);
    Ok(PairAssignment {
        lesion_id: lesion.id.clone(),
        targets: scored
            .into_iter()
            .map(|(distance, id)| PairTarget {
                id: id.to_string(),
                distance,
            })
            .collect(),
    })
}

fn table_row<'a>(table: &'a EmbeddingTable, s: &Sample) -> Result<&'a [f32]> {
    let i = s.embedding()?;
    if i >= table.count() {
        return Err(Error::EmbeddingIndexOutOfRange {
            id: s.id.clone(),
            index: i,
            count: table.count(),
        });
    }
    Ok(table.row(i))
}

/// Pair selection for every sample in `lesions`, in manifest order.
pub fn select_all_pairs(
    lesions: &Manifest,
    normals: &Manifest,
    table: &EmbeddingTable,
    k: usize,
) -> Result<Vec<PairAssignment>> {
    use rayon::prelude::*;
    lesions
        .samples()
        .par_iter()
        .map(|l| select_pairs(l, normals, table, k))
        .collect()
}
