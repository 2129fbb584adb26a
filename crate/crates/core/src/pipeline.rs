//! End-to-end batch run: deduplicate, pick pairs, place and blend lesions,
//! merge pre-generated inpainting samples, and write a balanced manifest.
//!
//! Output layout under the output directory:
//!
//! ```text
//! images/<class>/<id>.png   PBDA composites
//! manifest.jsonl            balanced manifest with origin tags
//! plan.json                 per-class augmentation plan
//! report.json               counts, ROI scores, solver statistics
//! timing.json               wall-clock time (kept out of report.json so
//!                           the report stays byte-identical across reruns)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::balance::{cap_to_plan, plan_augmentation, AugmentationPlan, ClassPlan};
use crate::curation::{deduplicate, select_pairs, DedupConfig, DEFAULT_DEDUP_THRESHOLD};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::image::{BBox, ImageBuffer};
use crate::manifest::{Manifest, Origin, Sample};
use crate::poisson::{seamless_clone_detailed, SolverConfig, DEFAULT_TOL};
use crate::roi::{select_roi, RoiSearchConfig, DEFAULT_MARGIN, DEFAULT_STRIDE};
use crate::seed;

pub const IIDA_MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub dedup_threshold: f64,
    pub pairs_k: usize,
    pub roi_stride: usize,
    pub solver_tol: f64,
    pub target_per_class: usize,
    pub mix_pbda_percent: u32,
    /// Directory holding inpainted samples and their own `manifest.jsonl`.
    pub iida_dir: Option<PathBuf>,
    pub workers: usize,
    /// Label of the healthy-tissue class used as blend targets.
    pub normal_class: String,
}

impl PipelineConfig {
    pub fn new(
        manifest: impl Into<PathBuf>,
        embeddings: impl Into<PathBuf>,
        output_dir: impl Into<PathBuf>,
    ) -> Self {
        PipelineConfig {
            manifest: manifest.into(),
            embeddings: embeddings.into(),
            output_dir: output_dir.into(),
            seed: 0,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            pairs_k: 1,
            roi_stride: DEFAULT_STRIDE,
            solver_tol: DEFAULT_TOL,
            target_per_class: 2000,
            mix_pbda_percent: 100,
            iida_dir: None,
            workers: 1,
            normal_class: "normal".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        DedupConfig {
            threshold: self.dedup_threshold,
            seed: self.seed,
        }
        .validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.pairs_k == 0 {
            return bad("pairs-k must be >= 1".into());
        }
        if self.roi_stride == 0 {
            return bad("roi-stride must be >= 1".into());
        }
        if self.solver_tol <= 0.0 || !self.solver_tol.is_finite() {
            return bad(format!("solver-tol must be > 0, got {}", self.solver_tol));
        }
        if self.target_per_class == 0 {
            return bad("target-per-class must be >= 1".into());
        }
        if self.mix_pbda_percent > 100 {
            return bad(format!(
                "mix-pbda-percent must be in [0, 100], got {}",
                self.mix_pbda_percent
            ));
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassTotals {
    pub real: usize,
    pub pbda: usize,
    pub iida: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub min: usize,
    pub max: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobRecord {
    pub id: String,
    pub class: String,
    pub lesion_id: String,
    pub lesion_patient: String,
    pub target_id: String,
    pub target_patient: String,
    pub pair_distance: f64,
    pub src_bbox: BBox,
    pub dst_bbox: BBox,
    pub roi_score: f64,
    pub roi_candidates: usize,
    pub solver_iterations: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub input_samples: usize,
    pub after_dedup: usize,
    pub classes: BTreeMap<String, ClassTotals>,
    /// Classes without blend sources that were only capped, never augmented.
    pub unplanned_classes: Vec<String>,
    pub total: usize,
    pub pbda_jobs: usize,
    pub mean_roi_score: Option<f64>,
    pub solver_iterations_histogram: Vec<HistogramBin>,
    pub jobs: Vec<JobRecord>,
}

impl RunReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: Manifest,
    pub plan: AugmentationPlan,
    pub report: RunReport,
    pub wall_time_seconds: f64,
}

/// One planned composite.
#[derive(Debug, Clone)]
struct BlendJob<'a> {
    id: String,
    class: &'a str,
    index: usize,
    round: usize,
    lesion: &'a Sample,
    target: &'a Sample,
    pair_distance: f64,
}

/// Directory-safe form of a class label.
pub fn class_slug(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

fn absolutize(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| Error::io(path, e))
}

fn base_dir(manifest: &Path) -> Result<PathBuf> {
    let parent = manifest.parent().unwrap_or(Path::new("."));
    let parent = if parent.as_os_str().is_empty() {
        Path::new(".")
    } else {
        parent
    };
    absolutize(parent)
}

/// Histogram with bins `[0], [1], [2,3], [4,7], ...`.
fn iteration_histogram(counts: impl IntoIterator<Item = usize>) -> Vec<HistogramBin> {
    let mut bins: BTreeMap<usize, usize> = BTreeMap::new();
    for c in counts {
        let b = if c == 0 {
            0
        } else {
            usize::BITS - c.leading_zeros()
        } as usize;
        *bins.entry(b).or_default() += 1;
    }
    bins.into_iter()
        .map(|(b, count)| {
            let (min, max) = if b == 0 {
                (0, 0)
            } else {
                (1 << (b - 1), (1 << b) - 1)
            };
            HistogramBin { min, max, count }
        })
        .collect()
}

fn load_iida_inventory(cfg: &PipelineConfig) -> Result<(Manifest, PathBuf)> {
    let Some(dir) = &cfg.iida_dir else {
        return Ok((Manifest::default(), PathBuf::new()));
    };
    let path = dir.join(IIDA_MANIFEST);
    if !path.exists() {
        return Ok((Manifest::default(), absolutize(dir)?));
    }
    Ok((Manifest::load(&path)?, absolutize(dir)?))
}

/// Runs the full augmentation pipeline and writes its outputs.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutput> {
    let started = Instant::now();
    cfg.validate()?;
    let input = Manifest::load(&cfg.manifest)?;
    let table = EmbeddingTable::load(&cfg.embeddings)?;
    input.check_embeddings(&table)?;
    let base = base_dir(&cfg.manifest)?;

    let deduped = deduplicate(
        &input,
        &table,
        &DedupConfig {
            threshold: cfg.dedup_threshold,
            seed: cfg.seed,
        },
    )?;

    // Classes with bbox-bearing samples (other than the normal class) can be
    // augmented; the normal class is planned only when it needs no synthesis.
    let counts = deduped.class_counts();
    let mut planned = BTreeMap::new();
    let mut unplanned = BTreeMap::new();
    for (class, &n) in &counts {
        let is_normal = *class == cfg.normal_class;
        let has_sources = deduped.of_class(class).any(|s| s.bbox.is_some());
        if (is_normal && n >= cfg.target_per_class) || (!is_normal && has_sources) {
            planned.insert(class.clone(), n);
        } else {
            unplanned.insert(class.clone(), n);
        }
    }
    if planned.is_empty() {
        return Err(Error::EmptyClassList);
    }
    let plan = plan_augmentation(&planned, cfg.target_per_class, cfg.mix_pbda_percent)?;

    // Inventory check happens before any blending work.
    let (iida_inventory, iida_base) = load_iida_inventory(cfg)?;
    let mut iida_samples = Vec::new();
    for (class, cp) in &plan.classes {
        if cp.iida == 0 {
            continue;
        }
        let available: Vec<&Sample> = iida_inventory.of_class(class).collect();
        if available.len() < cp.iida {
            return Err(Error::InsufficientInventory {
                class: class.clone(),
                needed: cp.iida,
                available: available.len(),
            });
        }
        let mut rng = seed::rng(cfg.seed, &[seed::str_key("iida"), seed::str_key(class)]);
        let mut picked: Vec<usize> = index::sample(&mut rng, available.len(), cp.iida).into_vec();
        picked.sort_unstable();
        for i in picked {
            let mut s = available[i].clone();
            s.path = s.resolve_path(&iida_base).to_string_lossy().into_owned();
            s.origin = Origin::Iida;
            iida_samples.push(s);
        }
    }

    let mut cap_plan = plan.clone();
    for (class, &n) in &unplanned {
        cap_plan.classes.insert(
            class.clone(),
            ClassPlan {
                real: n,
                keep: n.min(cfg.target_per_class),
                pbda: 0,
                iida: 0,
            },
        );
    }
    let capped = cap_to_plan(&deduped, &cap_plan, cfg.seed)?;

    let normals = deduped.filter(|s| s.label == cfg.normal_class);
    let jobs = plan_blend_jobs(&plan, &deduped, &normals, &table, cfg)?;

    let out_dir = &cfg.output_dir;
    for class in plan
        .classes
        .iter()
        .filter(|(_, cp)| cp.pbda > 0)
        .map(|(c, _)| c)
    {
        let dir = out_dir.join("images").join(class_slug(class));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let solver = SolverConfig::with_tol(cfg.solver_tol);
    let results: Vec<(Sample, JobRecord)> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                run_blend_job(job, &base, out_dir, cfg, &solver).map_err(|e| {
                    e.in_job(format!(
                        "blend job {} ({} onto {})",
                        job.id, job.lesion.id, job.target.id
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut samples: Vec<Sample> = capped
        .samples()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.path = s.resolve_path(&base).to_string_lossy().into_owned();
            s
        })
        .collect();
    let mut records = Vec::with_capacity(results.len());
    for (s, r) in results {
        samples.push(s);
        records.push(r);
    }
    samples.extend(iida_samples);
    let manifest = Manifest::new(samples)?;

    let mut classes: BTreeMap<String, ClassTotals> = BTreeMap::new();
    for s in manifest.samples() {
        let e = classes.entry(s.label.clone()).or_insert(ClassTotals {
            real: 0,
            pbda: 0,
            iida: 0,
            total: 0,
        });
        match s.origin {
            Origin::Real => e.real += 1,
            Origin::Pbda => e.pbda += 1,
            Origin::Iida => e.iida += 1,
        }
        e.total += 1;
    }
    let mean_roi_score = if records.is_empty() {
        None
    } else {
        Some(records.iter().map(|r| r.roi_score).sum::<f64>() / records.len() as f64)
    };
    let report = RunReport {
        seed: cfg.seed,
        input_samples: input.len(),
        after_dedup: deduped.len(),
        classes,
        unplanned_classes: unplanned.keys().cloned().collect(),
        total: manifest.len(),
        pbda_jobs: records.len(),
        mean_roi_score,
        solver_iterations_histogram: iteration_histogram(
            records.iter().flat_map(|r| r.solver_iterations),
        ),
        jobs: records,
    };

    manifest.save(out_dir.join("manifest.jsonl"))?;
    write_text(&out_dir.join("plan.json"), &plan.to_json_pretty())?;
    write_text(&out_dir.join("report.json"), &report.to_json_pretty())?;
    let wall_time_seconds = started.elapsed().as_secs_f64();
    write_text(
        &out_dir.join("timing.json"),
        &serde_json::to_string_pretty(
            &serde_json::json!({ "wall_time_seconds": wall_time_seconds }),
        )
        .unwrap(),
    )?;

    Ok(RunOutput {
        manifest,
        plan,
        report,
        wall_time_seconds,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut body = text.to_string();
    body.push('\n');
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Expands the plan into blend jobs. Pairs are listed lesion by lesion
/// (manifest order) and nearest target first; when a class needs more
/// composites than pairs, the list is reused round-robin.
fn plan_blend_jobs<'a>(
    plan: &'a AugmentationPlan,
    deduped: &'a Manifest,
    normals: &'a Manifest,
    table: &EmbeddingTable,
    cfg: &PipelineConfig,
) -> Result<Vec<BlendJob<'a>>> {
    let mut jobs = Vec::new();
    for (class, cp) in &plan.classes {
        if cp.pbda == 0 {
            continue;
        }
        if normals.is_empty() {
            return Err(Error::Config(format!(
                "class {class:?} needs blending but there are no {:?} samples to use as targets",
                cfg.normal_class
            )));
        }
        let lesions: Vec<&Sample> = deduped
            .of_class(class)
            .filter(|s| s.bbox.is_some())
            .collect();
        let assignments = lesions
            .par_iter()
            .map(|l| select_pairs(l, normals, table, cfg.pairs_k))
            .collect::<Result<Vec<_>>>()?;
        let mut pairs = Vec::new();
        for (lesion, a) in lesions.iter().zip(&assignments) {
            for t in &a.targets {
                let target = normals
                    .get(&t.id)
                    .expect("pair target comes from the normal manifest");
                pairs.push((*lesion, target, t.distance));
            }
        }
        let slug = class_slug(class);
        for j in 0..cp.pbda {
            let (lesion, target, d) = pairs[j % pairs.len()];
            jobs.push(BlendJob {
                id: format!("pbda_{slug}_{j:05}"),
                class: class.as_str(),
                index: j,
                round: j / pairs.len(),
                lesion,
                target,
                pair_distance: d,
            });
        }
    }
    Ok(jobs)
}

fn run_blend_job(
    job: &BlendJob<'_>,
    base: &Path,
    out_dir: &Path,
    cfg: &PipelineConfig,
    solver: &SolverConfig,
) -> Result<(Sample, JobRecord)> {
    let source = ImageBuffer::open(job.lesion.resolve_path(base))?;
    let target = ImageBuffer::open(job.target.resolve_path(base))?;
    let src_bbox = job.lesion.bbox.expect("blend sources carry a bbox");
    src_bbox.validate_in(source.width(), source.height())?;

    // The first pass over the pair list uses the canonical grid; reuse passes
    // shift the grid origin so repeated pairs explore different windows.
    let grid_offset = if job.round == 0 {
        (0, 0)
    } else {
        let mut rng = seed::rng(
            cfg.seed,
            &[
                seed::str_key("roi"),
                seed::str_key(job.class),
                job.index as u64,
            ],
        );
        (
            rng.gen_range(0..cfg.roi_stride),
            rng.gen_range(0..cfg.roi_stride),
        )
    };
    let roi_cfg = RoiSearchConfig {
        stride: cfg.roi_stride,
        margin: DEFAULT_MARGIN,
        grid_offset,
        valid_mask: None,
    };
    let roi = select_roi(&source, &src_bbox, &target, &roi_cfg)?;
    let blended = seamless_clone_detailed(&source, &src_bbox, &target, &roi.bbox, solver)?;

    let rel = format!("images/{}/{}.png", class_slug(job.class), job.id);
    blended.image.save_png(out_dir.join(&rel))?;

    let sample = Sample {
        id: job.id.clone(),
        path: rel,
        label: job.class.to_string(),
        patient_id: job.target.patient_id.clone(),
        split: job.lesion.split.clone(),
        bbox: Some(roi.bbox),
        embedding_index: None,
        origin: Origin::Pbda,
    };
    let record = JobRecord {
        id: job.id.clone(),
        class: job.class.to_string(),
        lesion_id: job.lesion.id.clone(),
        lesion_patient: job.lesion.patient_id.clone(),
        target_id: job.target.id.clone(),
        target_patient: job.target.patient_id.clone(),
        pair_distance: job.pair_distance,
        src_bbox,
        dst_bbox: roi.bbox,
        roi_score: roi.score,
        roi_candidates: roi.candidates_evaluated,
        solver_iterations: blended.iterations,
    };
    Ok((sample, record))
}
