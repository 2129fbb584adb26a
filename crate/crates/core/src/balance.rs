//! Per-class augmentation planning and the class-rebalancing baselines
//! (random over/undersampling, thresholding, class weights).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{Manifest, Sample};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPlan {
    pub real: usize,
    pub keep: usize,
    pub pbda: usize,
    pub iida: usize,
}

impl ClassPlan {
    pub fn total(&self) -> usize {
        self.keep + self.pbda + self.iida
    }

    pub fn synthetic(&self) -> usize {
        self.pbda + self.iida
    }
}

/// Per-class counts of kept real samples and synthetic samples to generate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub target_per_class: usize,
    pub mix_pbda_percent: u32,
    pub classes: BTreeMap<String, ClassPlan>,
}

impl AugmentationPlan {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Plans how each class reaches `target` samples.
///
/// The deficit `d = max(0, target − real)` is split into
/// `round_half_up(d · percent / 100)` PBDA samples and the remainder as IIDA
/// samples; classes above `target` keep only `target` real samples.
pub fn plan_augmentation(
    counts: &BTreeMap<String, usize>,
    target: usize,
    mix_pbda_percent: u32,
) -> Result<AugmentationPlan> {
    if counts.is_empty() {
        return Err(Error::EmptyClassList);
    }
    if target == 0 {
        return Err(Error::Config("target per class must be >= 1".into()));
    }
    if mix_pbda_percent > 100 {
        return Err(Error::Config(format!(
            "mix percentage must be in [0, 100], got {mix_pbda_percent}"
        )));
    }
    let classes = counts
        .iter()
        .map(|(name, &real)| {
            let deficit = target.saturating_sub(real);
            let pbda = (deficit * mix_pbda_percent as usize + 50) / 100;
            let plan = ClassPlan {
                real,
                keep: real.min(target),
                pbda,
                iida: deficit - pbda,
            };
            (name.clone(), plan)
        })
        .collect();
    Ok(AugmentationPlan {
        target_per_class: target,
        mix_pbda_percent,
        classes,
    })
}

/// Undersamples every planned class to its `keep` count (seeded, uniform,
/// without replacement). Classes absent from the plan pass through.
/// Relative order is preserved.
pub fn cap_to_plan(
    manifest: &Manifest,
    plan: &AugmentationPlan,
    seed_value: u64,
) -> Result<Manifest> {
    let mut keep = vec![true; manifest.len()];
    for (class, cp) in &plan.classes {
        let members = class_members(manifest, class);
        if members.len() != cp.real {
            return Err(Error::DimensionMismatch(format!(
                "plan expects {} samples of class {class:?}, manifest has {}",
                cp.real,
                members.len()
            )));
        }
        if cp.keep < members.len() {
            let mut rng = seed::rng(seed_value, &[seed::str_key("cap"), seed::str_key(class)]);
            let mut chosen = vec![false; members.len()];
            for i in index::sample(&mut rng, members.len(), cp.keep) {
                chosen[i] = true;
            }
            for (m, c) in members.iter().zip(chosen) {
                keep[*m] = c;
            }
        }
    }
    Ok(manifest.filter({
        let mut it = keep.into_iter();
        move |_| it.next().unwrap()
    }))
}

fn class_members(manifest: &Manifest, class: &str) -> Vec<usize> {
    manifest
        .samples()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label == class)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// Oversample every class to the majority count.
    Ros,
    /// Undersample every class to the minority count.
    Rus,
    /// Undersample classes larger than the reference class to its count.
    Threshold { reference: String },
    /// Match every class to the reference count, over- or undersampling.
    ThresholdRos { reference: String },
}

impl SamplingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SamplingStrategy::Ros => "ros",
            SamplingStrategy::Rus => "rus",
            SamplingStrategy::Threshold { .. } => "threshold",
            SamplingStrategy::ThresholdRos { .. } => "threshold_ros",
        }
    }

    /// Parses `ros`, `rus`, `threshold` or `threshold_ros`; the threshold
    /// modes require a reference class.
    pub fn parse(name: &str, reference: Option<&str>) -> Result<Self> {
        let need_ref = || {
            reference
                .map(str::to_string)
                .ok_or_else(|| Error::Config(format!("strategy {name} needs a reference class")))
        };
        match name {
            "ros" => Ok(SamplingStrategy::Ros),
            "rus" => Ok(SamplingStrategy::Rus),
            "threshold" => Ok(SamplingStrategy::Threshold {
                reference: need_ref()?,
            }),
            "threshold_ros" | "threshold-ros" => Ok(SamplingStrategy::ThresholdRos {
                reference: need_ref()?,
            }),
            other => Err(Error::Config(format!(
                "unknown sampling strategy {other:?}"
            ))),
        }
    }

    /// Target count for a class of size `n` given the manifest-wide counts.
    fn target_for(&self, n: usize, counts: &BTreeMap<String, usize>) -> Result<usize> {
        let reference = |r: &str| {
            counts
                .get(r)
                .copied()
                .ok_or_else(|| Error::UnknownClass(r.to_string()))
        };
        Ok(match self {
            SamplingStrategy::Ros => counts.values().copied().max().unwrap_or(0),
            SamplingStrategy::Rus => counts.values().copied().min().unwrap_or(0),
            SamplingStrategy::Threshold { reference: r } => n.min(reference(r)?),
            SamplingStrategy::ThresholdRos { reference: r } => reference(r)?,
        })
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingStrategy::Threshold { reference }
            | SamplingStrategy::ThresholdRos { reference } => {
                write!(f, "{}({reference})", self.name())
            }
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for SamplingStrategy {
    type Err = Error;

    /// Accepts `ros`, `rus`, `threshold:<class>` and `threshold_ros:<class>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((name, reference)) => Self::parse(name, Some(reference)),
            None => Self::parse(s, None),
        }
    }
}

/// Rebalances `manifest` according to `strategy`.
///
/// Undersampled classes keep a uniform subset in original order. Oversampled
/// classes keep every original and append uniform draws with replacement;
/// each duplicate gets the id `<id>__ros<k>` with `k` counting from 1 within
/// the class. Every draw uses a stream derived from `seed_value` and the
/// class name.
pub fn resample(
    manifest: &Manifest,
    strategy: &SamplingStrategy,
    seed_value: u64,
) -> Result<Manifest> {
    if manifest.is_empty() {
        return Err(Error::EmptyClassList);
    }
    let counts = manifest.class_counts();
    if let Some((name, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(Error::EmptyClass(name.clone()));
    }

    let mut keep = vec![true; manifest.len()];
    let mut extra: Vec<Sample> = Vec::new();
    for class in manifest.class_names() {
        let members = class_members(manifest, class);
        let n = members.len();
        let t = strategy.target_for(n, &counts)?;
        let mut rng = seed::rng(
            seed_value,
            &[seed::str_key(strategy.name()), seed::str_key(class)],
        );
        if t < n {
            let mut chosen = vec![false; n];
            for i in index::sample(&mut rng, n, t) {
                chosen[i] = true;
            }
            for (m, c) in members.iter().zip(chosen) {
                keep[*m] = c;
            }
        } else {
            for k in 1..=t - n {
                let src = &manifest.samples()[members[rng.gen_range(0..n)]];
                let mut dup = src.clone();
                dup.id = format!("{}__ros{k}", src.id);
                extra.push(dup);
            }
        }
    }
    let mut out: Vec<Sample> = manifest
        .samples()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(s, _)| s.clone())
        .collect();
    out.extend(extra);
    Manifest::new(out)
}

/// Inverse-frequency weights `w_c = N / (C · n_c)`, normalized so the
/// class-frequency-weighted mean weight is 1.
pub fn class_weights(counts: &BTreeMap<String, usize>) -> Result<BTreeMap<String, f64>> {
    if counts.is_empty() {
        return Err(Error::EmptyClassList);
    }
    if let Some((name, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(Error::ZeroCount(name.clone()));
    }
    let total: usize = counts.values().sum();
    let c = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|(name, &n)| (name.clone(), total as f64 / (c * n as f64)))
        .collect())
}
