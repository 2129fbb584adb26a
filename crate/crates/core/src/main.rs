use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pbda::balance::{cap_to_plan, class_weights, plan_augmentation, resample, SamplingStrategy};
use pbda::curation::{
    deduplicate, pairs_to_jsonl, select_all_pairs, DedupConfig, DEFAULT_DEDUP_THRESHOLD,
};
use pbda::pipeline::{run_pipeline, PipelineConfig};
use pbda::poisson::{
    seamless_clone_detailed, seamless_clone_via_correction_detailed, SolverConfig, DEFAULT_TOL,
};
use pbda::roi::{select_roi, RoiSearchConfig, DEFAULT_MARGIN, DEFAULT_STRIDE};
use pbda::{BBox, EmbeddingTable, Error, ImageBuffer, Manifest, Result};

#[derive(Parser)]
#[command(
    name = "pbda",
    version,
    about = "Poisson-blending data augmentation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Remove near-duplicate frames within each patient group.
    Dedup {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEDUP_THRESHOLD)]
        dedup_threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair every lesion sample with its nearest normal samples from other patients.
    Pairs {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value = "normal")]
        normal_class: String,
        #[arg(long, default_value_t = 1)]
        pairs_k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find the best blending window for a source box in a target image.
    Roi {
        #[arg(long)]
        source: PathBuf,
        #[arg(long, value_parser = parse_bbox)]
        src_bbox: BBox,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = DEFAULT_STRIDE)]
        roi_stride: usize,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: usize,
    },
    /// Seamlessly clone a source box into a target image.
    Blend {
        #[arg(long)]
        source: PathBuf,
        #[arg(long, value_parser = parse_bbox)]
        src_bbox: BBox,
        #[arg(long)]
        target: PathBuf,
        /// Destination box; searched with the ROI criterion when omitted.
        #[arg(long, value_parser = parse_bbox)]
        dst_bbox: Option<BBox>,
        #[arg(long, default_value_t = DEFAULT_STRIDE)]
        roi_stride: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        solver_tol: f64,
        #[arg(long)]
        max_iter: Option<usize>,
        /// Keep iterating until the error in every pixel is provably below this.
        #[arg(long)]
        max_error: Option<f64>,
        /// Solve through the boundary-mismatch correction instead of the guided system.
        #[arg(long)]
        via_correction: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the per-class augmentation plan.
    Plan {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        target_per_class: usize,
        #[arg(long, default_value_t = 100)]
        mix_pbda_percent: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebalance a manifest (ros, rus, threshold, threshold_ros) or cap it to a plan.
    Balance {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        reference_class: Option<String>,
        /// Cap every class to this many samples instead of applying a strategy.
        #[arg(long, conflicts_with = "strategy")]
        target_per_class: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print inverse-frequency class weights instead of resampling.
        #[arg(long)]
        class_weights: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-split, per-class image and bounding-box counts.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run the whole pipeline.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_DEDUP_THRESHOLD)]
    dedup_threshold: f64,
    #[arg(long, default_value_t = 1)]
    pairs_k: usize,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    roi_stride: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    solver_tol: f64,
    #[arg(long)]
    target_per_class: usize,
    #[arg(long, default_value_t = 100)]
    mix_pbda_percent: u32,
    #[arg(long)]
    iida_dir: Option<PathBuf>,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    #[arg(long, default_value = "normal")]
    normal_class: String,
}

fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn parse_bbox(s: &str) -> std::result::Result<BBox, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected x,y,w,h but got {s:?}"));
    }
    let mut v = [0usize; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|_| format!("bad integer {p:?} in bbox"))?;
    }
    Ok(BBox::from(v))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dedup {
            manifest,
            embeddings,
            dedup_threshold,
            seed,
            out,
        } => {
            let m = Manifest::load(&manifest)?;
            let t = EmbeddingTable::load(&embeddings)?;
            let kept = deduplicate(
                &m,
                &t,
                &DedupConfig {
                    threshold: dedup_threshold,
                    seed,
                },
            )?;
            kept.save(&out)?;
            eprintln!("kept {} of {} samples", kept.len(), m.len());
        }
        Command::Pairs {
            manifest,
            embeddings,
            normal_class,
            pairs_k,
            out,
        } => {
            let m = Manifest::load(&manifest)?;
            let t = EmbeddingTable::load(&embeddings)?;
            m.check_embeddings(&t)?;
            let normals = m.filter(|s| s.label == normal_class);
            let lesions = m.filter(|s| s.label != normal_class && s.bbox.is_some());
            let pairs = select_all_pairs(&lesions, &normals, &t, pairs_k)?;
            emit(out.as_deref(), &pairs_to_jsonl(&pairs))?;
        }
        Command::Roi {
            source,
            src_bbox,
            target,
            roi_stride,
            margin,
        } => {
            let src = ImageBuffer::open(&source)?;
            let tgt = ImageBuffer::open(&target)?;
            let cfg = RoiSearchConfig {
                stride: roi_stride,
                margin,
                ..Default::default()
            };
            let r = select_roi(&src, &src_bbox, &tgt, &cfg)?;
            print!(
                "{}",
                pretty(&serde_json::json!({
                    "bbox": r.bbox,
                    "score": r.score,
                    "candidates_evaluated": r.candidates_evaluated,
                }))
            );
        }
        Command::Blend {
            source,
            src_bbox,
            target,
            dst_bbox,
            roi_stride,
            solver_tol,
            max_iter,
            max_error,
            via_correction,
            out,
        } => {
            let src = ImageBuffer::open(&source)?;
            let tgt = ImageBuffer::open(&target)?;
            let dst = match dst_bbox {
                Some(b) => b,
                None => {
                    select_roi(
                        &src,
                        &src_bbox,
                        &tgt,
                        &RoiSearchConfig::with_stride(roi_stride),
                    )?
                    .bbox
                }
            };
            let solver = SolverConfig {
                tol: solver_tol,
                max_iter,
                max_error,
            };
            let result = if via_correction {
                seamless_clone_via_correction_detailed(&src, &src_bbox, &tgt, &dst, &solver)?
            } else {
                seamless_clone_detailed(&src, &src_bbox, &tgt, &dst, &solver)?
            };
            result.image.save_png(&out)?;
            print!(
                "{}",
                pretty(&serde_json::json!({
                    "dst_bbox": dst,
                    "iterations": result.iterations,
                    "residuals": result.residuals,
                }))
            );
        }
        Command::Plan {
            manifest,
            target_per_class,
            mix_pbda_percent,
            out,
        } => {
            let m = Manifest::load(&manifest)?;
            let plan = plan_augmentation(&m.class_counts(), target_per_class, mix_pbda_percent)?;
            let mut text = plan.to_json_pretty();
            text.push('\n');
            emit(out.as_deref(), &text)?;
        }
        Command::Balance {
            manifest,
            strategy,
            reference_class,
            target_per_class,
            seed,
            class_weights: weights,
            out,
        } => {
            let m = Manifest::load(&manifest)?;
            if weights {
                emit(out.as_deref(), &pretty(&class_weights(&m.class_counts())?))?;
            } else if let Some(target) = target_per_class {
                let plan = plan_augmentation(&m.class_counts(), target, 0)?;
                emit(out.as_deref(), &cap_to_plan(&m, &plan, seed)?.to_jsonl())?;
            } else {
                let name = strategy.ok_or_else(|| {
                    Error::Config(
                        "balance needs --strategy, --target-per-class or --class-weights".into(),
                    )
                })?;
                let strategy = SamplingStrategy::parse(&name, reference_class.as_deref())?;
                emit(out.as_deref(), &resample(&m, &strategy, seed)?.to_jsonl())?;
            }
        }
        Command::Stats { manifest, json } => {
            let m = Manifest::load(&manifest)?;
            let s = pbda::stats(&m);
            if json {
                print!("{}", pretty(&s));
            } else {
                print!("{}", s.to_table());
            }
        }
        Command::Run(a) => {
            let cfg = PipelineConfig {
                manifest: a.manifest,
                embeddings: a.embeddings,
                output_dir: a.output_dir,
                seed: a.seed,
                dedup_threshold: a.dedup_threshold,
                pairs_k: a.pairs_k,
                roi_stride: a.roi_stride,
                solver_tol: a.solver_tol,
                target_per_class: a.target_per_class,
                mix_pbda_percent: a.mix_pbda_percent,
                iida_dir: a.iida_dir,
                workers: a.workers,
                normal_class: a.normal_class,
            };
            let out = run_pipeline(&cfg)?;
            eprintln!(
                "wrote {} samples ({} composites) to {} in {:.2}s",
                out.report.total,
                out.report.pbda_jobs,
                cfg.output_dir.display(),
                out.wall_time_seconds
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
