//! Per-split, per-class sample and bounding-box counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::manifest::Manifest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsRow {
    pub split: String,
    pub label: String,
    pub count: usize,
    pub bbox_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Stats {
    pub rows: Vec<StatsRow>,
}

/// Counts samples grouped by `(split, label)`, sorted by split then label.
pub fn stats(manifest: &Manifest) -> Stats {
    let mut grouped: BTreeMap<(&str, &str), (usize, usize)> = BTreeMap::new();
    for s in manifest.samples() {
        let e = grouped
            .entry((s.split.as_str(), s.label.as_str()))
            .or_default();
        e.0 += 1;
        e.1 += s.bbox.is_some() as usize;
    }
    Stats {
        rows: grouped
            .into_iter()
            .map(|((split, label), (count, bbox_count))| StatsRow {
                split: split.to_string(),
                label: label.to_string(),
                count,
                bbox_count,
            })
            .collect(),
    }
}

impl Stats {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, split: &str, label: &str) -> Option<&StatsRow> {
        self.rows
            .iter()
            .find(|r| r.split == split && r.label == label)
    }

    /// `(count, bbox_count)` per label, summed over splits.
    pub fn per_class(&self) -> BTreeMap<String, (usize, usize)> {
        let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = out.entry(r.label.clone()).or_default();
            e.0 += r.count;
            e.1 += r.bbox_count;
        }
        out
    }

    pub fn to_table(&self) -> String {
        let lw = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain([5])
            .max()
            .unwrap();
        let sw = self
            .rows
            .iter()
            .map(|r| r.split.len())
            .chain([5])
            .max()
            .unwrap();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<sw$}  {:<lw$}  {:>8}  {:>8}",
            "split", "label", "images", "bboxes"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<sw$}  {:<lw$}  {:>8}  {:>8}",
                r.split, r.label, r.count, r.bbox_count
            );
        }
        out
    }
}
