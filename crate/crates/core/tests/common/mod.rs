//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pbda::{BBox, EmbeddingTable, ImageBuffer, Manifest, Sample};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Dense direct-solve oracle
// ---------------------------------------------------------------------------

/// Gaussian elimination with partial pivoting on a dense system with
/// several right-hand sides.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b.first().map_or(0, Vec::len);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        assert!(d.abs() > 1e-300, "singular system");
        for row in col + 1..n {
            let f = a[row][col] / d;
            if f == 0.0 {
                continue;
            }
            let (upper, lower) = a.split_at_mut(row);
            for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *dst -= f * src;
            }
            let (upper, lower) = b.split_at_mut(row);
            for (dst, src) in lower[0].iter_mut().zip(&upper[col]) {
                *dst -= f * src;
            }
        }
    }
    let mut x = vec![vec![0.0; m]; n];
    for row in (0..n).rev() {
        for k in 0..m {
            let mut acc = b[row][k];
            for c in row + 1..n {
                acc -= a[row][c] * x[c][k];
            }
            x[row][k] = acc / a[row][row];
        }
    }
    x
}

/// Pre-clamp seamless-clone values over `dst`, built straight from the
/// pixel equations and solved densely. Row-major over the box.
pub fn dense_clone_region(
    source: &ImageBuffer,
    src: &BBox,
    target: &ImageBuffer,
    dst: &BBox,
) -> Vec<[f64; 3]> {
    let (w, h) = (dst.w as isize, dst.h as isize);
    let n = (w * h) as usize;
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![vec![0.0; 3]; n];
    for j in 0..h {
        for i in 0..w {
            let k = (j * w + i) as usize;
            a[k][k] = 4.0;
            let gp = source.pixel(src.x + i as usize, src.y + j as usize);
            for (di, dj) in [(0, -1), (-1, 0), (1, 0), (0, 1)] {
                let (qi, qj) = (i + di, j + dj);
                let gq = source.pixel(
                    (src.x as isize + qi) as usize,
                    (src.y as isize + qj) as usize,
                );
                for c in 0..3 {
                    b[k][c] += gp[c] - gq[c];
                }
                if qi >= 0 && qj >= 0 && qi < w && qj < h {
                    a[k][(qj * w + qi) as usize] = -1.0;
                } else {
                    let f = target.pixel(
                        (dst.x as isize + qi) as usize,
                        (dst.y as isize + qj) as usize,
                    );
                    for c in 0..3 {
                        b[k][c] += f[c];
                    }
                }
            }
        }
    }
    dense_solve(a, b)
        .into_iter()
        .map(|r| [r[0], r[1], r[2]])
        .collect()
}

// ---------------------------------------------------------------------------
// Random blending instances
// ---------------------------------------------------------------------------

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> ImageBuffer {
    let data = (0..w * h * 3).map(|_| rng.gen::<f64>()).collect();
    ImageBuffer::from_vec(w, h, data).unwrap()
}

/// Image quantized to 8-bit levels, as decoded files are.
pub fn random_image_u8(rng: &mut impl Rng, w: usize, h: usize) -> ImageBuffer {
    let data = (0..w * h * 3)
        .map(|_| rng.gen_range(0..=255u8) as f64 / 255.0)
        .collect();
    ImageBuffer::from_vec(w, h, data).unwrap()
}

pub struct Instance {
    pub source: ImageBuffer,
    pub src_bbox: BBox,
    pub target: ImageBuffer,
    pub dst_bbox: BBox,
}

fn placed_box(rng: &mut impl Rng, w: usize, h: usize, pad_max: usize) -> (usize, usize, BBox) {
    let iw = w + 2 + rng.gen_range(0..=pad_max);
    let ih = h + 2 + rng.gen_range(0..=pad_max);
    let x = rng.gen_range(1..=iw - w - 1);
    let y = rng.gen_range(1..=ih - h - 1);
    (iw, ih, BBox::new(x, y, w, h))
}

/// Random source/target pair with equally sized boxes of sides in `[3, max_side]`.
pub fn random_instance(rng: &mut impl Rng, max_side: usize) -> Instance {
    let w = rng.gen_range(3..=max_side);
    let h = rng.gen_range(3..=max_side);
    let (sw, sh, src_bbox) = placed_box(rng, w, h, 6);
    let (tw, th, dst_bbox) = placed_box(rng, w, h, 6);
    Instance {
        source: random_image(rng, sw, sh),
        src_bbox,
        target: random_image(rng, tw, th),
        dst_bbox,
    }
}

/// Instance whose source box (and its ring) is a single colour and whose
/// target is random.
pub fn constant_source_instance(rng: &mut impl Rng, max_side: usize) -> Instance {
    let mut inst = random_instance(rng, max_side);
    let c = [rng.gen(), rng.gen(), rng.gen()];
    inst.source = ImageBuffer::filled(inst.source.width(), inst.source.height(), c).unwrap();
    inst
}

/// Exterior ring of `b`, clockwise from the top-left outside corner.
pub fn exterior_ring(b: &BBox) -> Vec<(usize, usize)> {
    let outer = BBox::new(b.x - 1, b.y - 1, b.w + 2, b.h + 2);
    pbda::border_pixels(&outer).unwrap()
}

// ---------------------------------------------------------------------------
// Dataset-count fixtures
// ---------------------------------------------------------------------------

/// (label, images, bounding boxes) for the official split 1 (training split).
pub const SPLIT1: [(&str, usize, usize); 9] = [
    ("normal", 19586, 0),
    ("unclear_view", 1119, 0),
    ("ulcer", 272, 272),
    ("blood_fresh", 22, 22),
    ("lymphangiectasia", 224, 224),
    ("foreign_body", 590, 590),
    ("erosion", 345, 345),
    ("angiectasia", 771, 771),
    ("erythema", 132, 90),
];

/// (label, images, bounding boxes) for the official split 0.
pub const SPLIT0: [(&str, usize, usize); 9] = [
    ("normal", 20488, 0),
    ("unclear_view", 1787, 0),
    ("ulcer", 582, 582),
    ("blood_fresh", 424, 424),
    ("lymphangiectasia", 368, 368),
    ("foreign_body", 186, 186),
    ("erosion", 178, 162),
    ("angiectasia", 95, 95),
    ("erythema", 27, 27),
];

/// Whole-dataset class counts.
pub const WHOLE_DATASET: [(&str, usize); 9] = [
    ("normal", 40074),
    ("unclear_view", 2906),
    ("angiectasia", 866),
    ("ulcer", 854),
    ("foreign_body", 776),
    ("lymphangiectasia", 592),
    ("erosion", 523),
    ("blood_fresh", 446),
    ("erythema", 159),
];

/// Manifest records for one split. Patients are numbered per split so the
/// two splits never share one.
pub fn split_samples(rows: &[(&str, usize, usize)], split: &str) -> Vec<Sample> {
    let mut out = Vec::new();
    for (label, n, boxes) in rows {
        for i in 0..*n {
            let mut s = Sample::new(
                format!("s{split}-{label}-{i:05}"),
                format!("images/{label}/{i:05}.jpg"),
                *label,
                format!("s{split}-patient-{:02}", i % 17),
            )
            .with_split(split);
            if i < *boxes {
                s = s.with_bbox(BBox::new(10, 12, 40, 30));
            }
            out.push(s);
        }
    }
    out
}

pub fn split1_manifest() -> Manifest {
    Manifest::new(split_samples(&SPLIT1, "1")).unwrap()
}

pub fn write_manifest(dir: &Path, name: &str, m: &Manifest) -> PathBuf {
    let p = dir.join(name);
    m.save(&p).unwrap();
    p
}

// ---------------------------------------------------------------------------
// Toy image dataset for pipeline runs
// ---------------------------------------------------------------------------

pub struct ToyDataset {
    pub dir: tempfile::TempDir,
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
}

/// Smooth, deterministic "tissue" image.
pub fn tissue(idx: usize, w: usize, h: usize) -> ImageBuffer {
    let base = [
        0.55 + 0.04 * (idx % 5) as f64,
        0.35 + 0.03 * (idx % 3) as f64,
        0.25,
    ];
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let s = ((x as f64 * 0.21 + idx as f64).sin() + (y as f64 * 0.17).cos()) * 0.05;
            data.extend_from_slice(&[base[0] + s, base[1] + s * 0.7, base[2] + s * 0.5]);
        }
    }
    ImageBuffer::from_vec(w, h, data).unwrap()
}

/// Tissue with a dark red blob filling `b`.
pub fn lesion_image(idx: usize, w: usize, h: usize, b: &BBox) -> ImageBuffer {
    let mut img = tissue(idx + 100, w, h);
    let (cx, cy) = (b.x as f64 + b.w as f64 / 2.0, b.y as f64 + b.h as f64 / 2.0);
    let r = b.w.min(b.h) as f64 / 2.5;
    for y in b.y..b.bottom() {
        for x in b.x..b.right() {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d < r {
                let p = img.pixel(x, y);
                let t = 1.0 - d / r;
                img.set_pixel(
                    x,
                    y,
                    [
                        p[0] * (1.0 - 0.3 * t) + 0.3 * t * 0.7,
                        p[1] * (1.0 - 0.6 * t),
                        p[2] * (1.0 - 0.6 * t),
                    ],
                );
            }
        }
    }
    img
}

/// Writes `n_normal` healthy images and `n_lesion` lesion images (class
/// `lesion`, each with a bbox) plus a manifest and an embedding file. All
/// embeddings are at least 1000 apart, so the default dedup threshold keeps
/// every sample.
pub fn toy_dataset(n_normal: usize, n_lesion: usize, size: usize) -> ToyDataset {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("img")).unwrap();
    let mut samples = Vec::new();
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let box_side = size / 4;
    for i in 0..n_normal {
        let path = format!("img/normal_{i:03}.png");
        tissue(i, size, size)
            .save_png(dir.path().join(&path))
            .unwrap();
        samples.push(
            Sample::new(format!("n{i:03}"), path, "normal", format!("p{}", i % 4))
                .with_split("1")
                .with_embedding(rows.len()),
        );
        rows.push(vec![1000.0 * i as f32, 0.0, (i % 3) as f32, 1.0]);
    }
    for i in 0..n_lesion {
        let off = 2 + (i * 5) % (size - box_side - 4);
        let b = BBox::new(
            off,
            size - box_side - 2 - (i * 3) % (size - box_side - 4),
            box_side,
            box_side,
        );
        let path = format!("img/lesion_{i:03}.png");
        lesion_image(i, size, size, &b)
            .save_png(dir.path().join(&path))
            .unwrap();
        // Lesion patients overlap with normal patients p0/p1 to exercise exclusion.
        samples.push(
            Sample::new(format!("l{i:03}"), path, "lesion", format!("p{}", i % 2))
                .with_split("1")
                .with_bbox(b)
                .with_embedding(rows.len()),
        );
        rows.push(vec![1000.0 * i as f32 + 120.0, 5000.0, 0.0, 0.0]);
    }
    let manifest = dir.path().join("manifest.jsonl");
    Manifest::new(samples).unwrap().save(&manifest).unwrap();
    let embeddings = dir.path().join("embeddings.bin");
    EmbeddingTable::from_rows(&rows)
        .unwrap()
        .save(&embeddings)
        .unwrap();
    ToyDataset {
        dir,
        manifest,
        embeddings,
    }
}

/// Writes an IIDA inventory of `n` images of `class` under `dir`.
pub fn iida_inventory(dir: &Path, class: &str, n: usize, size: usize) {
    std::fs::create_dir_all(dir).unwrap();
    let mut samples = Vec::new();
    for i in 0..n {
        let path = format!("iida_{class}_{i:03}.png");
        let b = BBox::new(4, 4, size / 4, size / 4);
        lesion_image(500 + i, size, size, &b)
            .save_png(dir.join(&path))
            .unwrap();
        samples.push(
            Sample::new(format!("iida-{class}-{i:03}"), path, class, format!("g{i}"))
                .with_split("1")
                .with_bbox(b),
        );
    }
    Manifest::new(samples)
        .unwrap()
        .save(dir.join("manifest.jsonl"))
        .unwrap();
}

// ---------------------------------------------------------------------------
// Synthetic embedding groups
// ---------------------------------------------------------------------------

/// `groups` patients with 1..=12 samples each. Samples sit around a few
/// cluster centres per patient with offsets on the order of `scale`, so at
/// the default threshold some collapse and some survive.
pub fn random_groups(
    rng: &mut impl Rng,
    groups: usize,
    dim: usize,
    scale: f32,
) -> (Manifest, EmbeddingTable) {
    let mut samples = Vec::new();
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for g in 0..groups {
        let size = rng.gen_range(1..=12);
        let centres: Vec<Vec<f32>> = (0..rng.gen_range(1..=3))
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0) * scale).collect())
            .collect();
        for i in 0..size {
            let c = &centres[rng.gen_range(0..centres.len())];
            let row = c
                .iter()
                .map(|v| v + rng.gen_range(-0.4..0.4) * scale)
                .collect();
            samples.push(
                Sample::new(
                    format!("g{g:03}-{i:02}"),
                    format!("{g}/{i}.png"),
                    "normal",
                    format!("patient-{g:03}"),
                )
                .with_embedding(rows.len()),
            );
            rows.push(row);
        }
    }
    // Shuffle so groups interleave in the manifest.
    use rand::seq::SliceRandom;
    samples.shuffle(rng);
    (
        Manifest::new(samples).unwrap(),
        EmbeddingTable::from_rows(&rows).unwrap(),
    )
}

/// Plain sum-of-squares Euclidean distance.
pub fn naive_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        s += d * d;
    }
    s.sqrt()
}

/// Checks separation, coverage, survival and order for one dedup result.
/// Returns a description of the first violation.
pub fn check_dedup(
    input: &Manifest,
    kept: &Manifest,
    table: &EmbeddingTable,
    threshold: f64,
) -> Result<(), String> {
    use std::collections::{BTreeMap, HashSet};
    let row = |s: &Sample| table.row(s.embedding_index.unwrap());
    let kept_ids: HashSet<&str> = kept.samples().iter().map(|s| s.id.as_str()).collect();
    let order: Vec<&str> = input
        .samples()
        .iter()
        .map(|s| s.id.as_str())
        .filter(|id| kept_ids.contains(id))
        .collect();
    let got: Vec<&str> = kept.samples().iter().map(|s| s.id.as_str()).collect();
    if order != got {
        return Err("kept samples are not in input order".into());
    }
    let mut by_patient: BTreeMap<&str, (Vec<&Sample>, Vec<&Sample>)> = BTreeMap::new();
    for s in input.samples() {
        let e = by_patient.entry(&s.patient_id).or_default();
        if kept_ids.contains(s.id.as_str()) {
            e.0.push(s);
        } else {
            e.1.push(s);
        }
    }
    for (patient, (k, removed)) in by_patient {
        if k.is_empty() {
            return Err(format!("patient {patient} lost every sample"));
        }
        for (i, a) in k.iter().enumerate() {
            for b in &k[i + 1..] {
                let d = naive_distance(row(a), row(b));
                if d <= threshold {
                    return Err(format!("{} and {} kept at distance {d}", a.id, b.id));
                }
            }
        }
        for r in removed {
            if !k
                .iter()
                .any(|q| naive_distance(row(q), row(r)) <= threshold)
            {
                return Err(format!(
                    "{} removed with no kept sample within threshold",
                    r.id
                ));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Border-score oracle
// ---------------------------------------------------------------------------

/// Mean RGB distance over the perimeter pixels of two equally sized boxes,
/// summed in plain raster order over each box.
pub fn naive_roi_score(source: &ImageBuffer, s: &BBox, target: &ImageBuffer, t: &BBox) -> f64 {
    let mut total = 0.0;
    let mut m = 0;
    for j in 0..s.h {
        for i in 0..s.w {
            if i == 0 || j == 0 || i == s.w - 1 || j == s.h - 1 {
                let a = source.pixel(s.x + i, s.y + j);
                let b = target.pixel(t.x + i, t.y + j);
                total +=
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                m += 1;
            }
        }
    }
    total / m as f64
}

/// Exhaustive scan over the stride grid (stride steps from the margin plus
/// the far edge). Returns (best box, best score, windows scanned).
pub fn roi_oracle(
    source: &ImageBuffer,
    s: &BBox,
    target: &ImageBuffer,
    stride: usize,
    margin: usize,
) -> (BBox, f64, usize) {
    let axis = |len: usize, side: usize| {
        let hi = len - margin - side;
        let mut v = Vec::new();
        let mut p = margin;
        while p <= hi {
            v.push(p);
            p += stride;
        }
        if *v.last().unwrap() != hi {
            v.push(hi);
        }
        v
    };
    let mut best: Option<(f64, BBox)> = None;
    let mut n = 0;
    for y in axis(target.height(), s.h) {
        for x in axis(target.width(), s.w) {
            let c = BBox::new(x, y, s.w, s.h);
            let score = naive_roi_score(source, s, target, &c);
            n += 1;
            let better = match best {
                None => true,
                Some((b, bb)) => score < b || (score == b && (y, x) < (bb.y, bb.x)),
            };
            if better {
                best = Some((score, c));
            }
        }
    }
    let (score, bbox) = best.unwrap();
    (bbox, score, n)
}
