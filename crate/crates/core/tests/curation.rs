mod common;

use common::{check_dedup, naive_distance, random_groups, rng};
use pbda::curation::{pairs_to_jsonl, select_all_pairs, DEFAULT_DEDUP_THRESHOLD};
use pbda::{
    deduplicate, distance, select_pairs, DedupConfig, EmbeddingTable, Error, Manifest, Sample,
};
use proptest::prelude::*;
use rand::Rng;

fn cfg(seed: u64) -> DedupConfig {
    DedupConfig {
        threshold: DEFAULT_DEDUP_THRESHOLD,
        seed,
    }
}

#[test]
fn distance_of_long_vectors_matches_plain_summation() {
    let mut r = rng(1);
    for _ in 0..20 {
        let a: Vec<f32> = (0..1536).map(|_| r.gen_range(-50.0..50.0)).collect();
        let b: Vec<f32> = (0..1536).map(|_| r.gen_range(-50.0..50.0)).collect();
        let want = naive_distance(&a, &b);
        let got = distance(&a, &b).unwrap();
        assert!((got - want).abs() <= 1e-9 * want);
        assert_eq!(got, distance(&b, &a).unwrap());
    }
    assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
    assert!(matches!(
        distance(&[0.0], &[0.0, 1.0]),
        Err(Error::DimensionMismatch(_))
    ));
}

#[test]
fn identical_embeddings_collapse_to_one_per_patient() {
    let samples: Vec<Sample> = (0..9)
        .map(|i| {
            Sample::new(format!("s{i}"), "x.png", "normal", format!("p{}", i % 3))
                .with_embedding(i % 3)
        })
        .collect();
    let m = Manifest::new(samples).unwrap();
    let t = EmbeddingTable::from_rows(&[vec![1.0f32; 4], vec![500.0; 4], vec![-500.0; 4]]).unwrap();
    let kept = deduplicate(&m, &t, &cfg(3)).unwrap();
    assert_eq!(kept.len(), 3);
    let patients: Vec<&str> = kept
        .samples()
        .iter()
        .map(|s| s.patient_id.as_str())
        .collect();
    assert_eq!(patients, ["p0", "p1", "p2"]);
}

#[test]
fn well_separated_group_is_kept_whole() {
    let samples: Vec<Sample> = (0..6)
        .map(|i| Sample::new(format!("s{i}"), "x.png", "normal", "p").with_embedding(i))
        .collect();
    let rows: Vec<Vec<f32>> = (0..6).map(|i| vec![400.0 * i as f32, 0.0]).collect();
    let m = Manifest::new(samples).unwrap();
    let kept = deduplicate(&m, &EmbeddingTable::from_rows(&rows).unwrap(), &cfg(0)).unwrap();
    assert_eq!(kept, m);
}

#[test]
fn missing_embedding_is_reported_by_id() {
    let m = Manifest::new(vec![
        Sample::new("a", "a.png", "normal", "p").with_embedding(0),
        Sample::new("b", "b.png", "normal", "p"),
    ])
    .unwrap();
    let t = EmbeddingTable::from_rows(&[vec![0.0f32]]).unwrap();
    match deduplicate(&m, &t, &cfg(0)) {
        Err(Error::MissingEmbedding(id)) => assert_eq!(id, "b"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn nonpositive_threshold_is_rejected() {
    let m = Manifest::new(vec![
        Sample::new("a", "a.png", "normal", "p").with_embedding(0)
    ])
    .unwrap();
    let t = EmbeddingTable::from_rows(&[vec![0.0f32]]).unwrap();
    let bad = DedupConfig {
        threshold: 0.0,
        seed: 0,
    };
    assert!(deduplicate(&m, &t, &bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dedup_separates_covers_and_is_deterministic(seed in any::<u64>(), dedup_seed in any::<u64>()) {
        let (m, t) = random_groups(&mut rng(seed), 20, 6, 300.0);
        let kept = deduplicate(&m, &t, &cfg(dedup_seed)).unwrap();
        prop_assert_eq!(check_dedup(&m, &kept, &t, DEFAULT_DEDUP_THRESHOLD), Ok(()));
        prop_assert_eq!(&kept, &deduplicate(&m, &t, &cfg(dedup_seed)).unwrap());
    }

    #[test]
    fn pairs_match_brute_force_sort(seed in any::<u64>(), k in 1usize..6) {
        let mut r = rng(seed);
        let dim = 8;
        let normals: Vec<Sample> = (0..50)
            .map(|i| Sample::new(format!("n{i:02}"), "n.png", "normal", format!("p{}", r.gen_range(0..8))).with_embedding(i))
            .collect();
        let mut rows: Vec<Vec<f32>> = (0..50).map(|_| (0..dim).map(|_| r.gen_range(-3i32..3) as f32).collect()).collect();
        rows.push((0..dim).map(|_| r.gen_range(-3i32..3) as f32).collect());
        let lesion = Sample::new("L", "l.png", "ulcer", format!("p{}", r.gen_range(0..8))).with_embedding(50);
        let t = EmbeddingTable::from_rows(&rows).unwrap();
        let nm = Manifest::new(normals).unwrap();

        let mut oracle: Vec<(f64, String)> = nm
            .samples()
            .iter()
            .filter(|s| s.patient_id != lesion.patient_id)
            .map(|s| (naive_distance(&rows[50], &rows[s.embedding_index.unwrap()]), s.id.clone()))
            .collect();
        oracle.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        oracle.truncate(k);

        let got = select_pairs(&lesion, &nm, &t, k).unwrap();
        prop_assert_eq!(&got.lesion_id, "L");
        let got_pairs: Vec<(f64, String)> = got.targets.iter().map(|p| (p.distance, p.id.clone())).collect();
        prop_assert_eq!(got_pairs.len(), oracle.len());
        for (g, o) in got_pairs.iter().zip(&oracle) {
            prop_assert_eq!(&g.1, &o.1);
            prop_assert!((g.0 - o.0).abs() <= 1e-9 * o.0.max(1.0));
        }
        for tgt in &got.targets {
            prop_assert_ne!(&nm.get(&tgt.id).unwrap().patient_id, &lesion.patient_id);
        }
    }
}

#[test]
fn single_candidate_and_exact_match() {
    let nm = Manifest::new(vec![
        Sample::new("a", "a.png", "normal", "p1").with_embedding(0),
        Sample::new("b", "b.png", "normal", "p2").with_embedding(1),
        Sample::new("c", "c.png", "normal", "p3").with_embedding(2),
    ])
    .unwrap();
    let t = EmbeddingTable::from_rows(&[
        vec![0.0f32, 0.0],
        vec![5.0, 5.0],
        vec![1.0, 1.0],
        vec![1.0, 1.0],
    ])
    .unwrap();
    let lesion = Sample::new("L", "l.png", "ulcer", "p1").with_embedding(3);
    let got = select_pairs(&lesion, &nm, &t, 5).unwrap();
    let ids: Vec<&str> = got.targets.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["c", "b"]);
    assert_eq!(got.targets[0].distance, 0.0);

    let only = Manifest::new(vec![
        Sample::new("a", "a.png", "normal", "p1").with_embedding(0)
    ])
    .unwrap();
    let other = Sample::new("M", "m.png", "ulcer", "p9").with_embedding(3);
    assert_eq!(
        select_pairs(&other, &only, &t, 1).unwrap().targets[0].id,
        "a"
    );
    assert!(matches!(
        select_pairs(&lesion, &only, &t, 1),
        Err(Error::NoCandidates(_))
    ));
}

#[test]
fn patient_exclusion_holds_for_every_lesion() {
    let mut r = rng(77);
    let mut samples = Vec::new();
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for i in 0..120 {
        let label = if i % 4 == 0 { "ulcer" } else { "normal" };
        samples.push(
            Sample::new(
                format!("s{i:03}"),
                "x.png",
                label,
                format!("p{}", r.gen_range(0..6)),
            )
            .with_embedding(i),
        );
        rows.push((0..4).map(|_| r.gen_range(-1.0..1.0)).collect());
    }
    let m = Manifest::new(samples).unwrap();
    let t = EmbeddingTable::from_rows(&rows).unwrap();
    let normals = m.filter(|s| s.label == "normal");
    let lesions = m.filter(|s| s.label == "ulcer");
    let pairs = select_all_pairs(&lesions, &normals, &t, 4).unwrap();
    assert_eq!(pairs.len(), lesions.len());
    for (p, l) in pairs.iter().zip(lesions.samples()) {
        assert_eq!(p.lesion_id, l.id);
        assert_eq!(p.targets.len(), 4);
        assert!(p.targets.windows(2).all(|w| w[0].distance <= w[1].distance));
        for tgt in &p.targets {
            assert_ne!(normals.get(&tgt.id).unwrap().patient_id, l.patient_id);
        }
    }
    let text = pairs_to_jsonl(&pairs);
    assert_eq!(text.lines().count(), pairs.len());
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first["targets"][0]["distance"].is_number());
}
