use proptest::prelude::*;
use qapseg::data::{
    load_dataset, load_pgm, normalize_resize, overlay_counts, render_overlay, save_pgm, split,
    synth_phantoms, write_dataset, DatasetManifest, Grid, ManifestEntry, Normalization, Split,
    FN_RGB, FP_RGB,
};
use qapseg::metrics::ConfusionMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn pgm_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (maxval, w, h) in [(255u16, 7, 5), (65535, 4, 9), (255, 1, 1)] {
        let data = (0..w * h).map(|_| rng.gen_range(0..=maxval)).collect();
        let g = Grid::new(w, h, maxval, data).unwrap();
        let path = dir.path().join(format!("g{maxval}.pgm"));
        save_pgm(&g, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(load_pgm(&path).unwrap(), g);
        save_pgm(&load_pgm(&path).unwrap(), &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }
}

#[test]
fn overlay_counts_reconcile_with_confusion_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let (w, h) = (rng.gen_range(1..20), rng.gen_range(1..20));
        let pred: Vec<u8> = (0..w * h).map(|_| rng.gen_range(0..4)).collect();
        let truth: Vec<u8> = (0..w * h).map(|_| rng.gen_range(0..4)).collect();
        let image: Vec<f32> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = render_overlay(&pred, &truth, Some(&image), w, h, 4).unwrap();
        let cm = ConfusionMatrix::from_masks(4, &pred, &truth).unwrap();
        let counts = overlay_counts(&img, 3).unwrap();
        for c in 1..4 {
            let o = counts[c - 1];
            assert_eq!(
                (o.tp, o.fp, o.fn_),
                (cm.tp(c), cm.fp(c), cm.fn_(c)),
                "class {c}"
            );
        }
    }
}

#[test]
fn all_background_prediction_paints_truth_green() {
    let truth = [0u8, 1, 2, 3, 0, 1];
    let img = render_overlay(&[0; 6], &truth, None, 3, 2, 4).unwrap();
    assert_eq!(img.count(FP_RGB), 0);
    assert_eq!(img.count(FN_RGB), 4);
}

#[test]
fn written_dataset_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let samples: Vec<_> = synth_phantoms(12, 32, 4)
        .into_iter()
        .map(|s| (s, None))
        .collect();
    let m = write_dataset(&samples, dir.path()).unwrap();
    assert_eq!(m.samples.len(), 12);
    let loaded = load_dataset(dir.path().join("manifest.json")).unwrap();
    for ((a, _), (b, _)) in samples.iter().zip(&loaded) {
        assert_eq!(a.mask, b.mask);
        for (x, y) in a.image.iter().zip(&b.image) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}

#[test]
fn bad_manifest_paths_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let m = DatasetManifest {
        samples: vec![ManifestEntry {
            id: "a".into(),
            image: "missing.pgm".into(),
            mask: "missing_mask.pgm".into(),
            split: None,
            scan: None,
        }],
    };
    let path = dir.path().join("m.json");
    m.save(&path).unwrap();
    let err = load_dataset(&path).unwrap_err();
    assert!(matches!(err, qapseg::Error::Io { .. }), "{err}");
}

fn manifest(n: usize) -> DatasetManifest {
    DatasetManifest {
        samples: (0..n)
            .map(|i| ManifestEntry {
                id: format!("{i}"),
                image: format!("{i}.pgm"),
                mask: format!("{i}m.pgm"),
                split: None,
                scan: None,
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn split_is_a_deterministic_partition(n in 10usize..=100, seed in 0u64..1000) {
        let m = split(&manifest(n), seed).unwrap();
        prop_assert_eq!(&m, &split(&manifest(n), seed).unwrap());
        let held = n.div_ceil(10);
        prop_assert_eq!(m.ids(Split::Test).len(), held);
        prop_assert_eq!(m.ids(Split::Val).len(), held);
        prop_assert_eq!(m.ids(Split::Train).len(), n - 2 * held);
        prop_assert!(m.samples.iter().all(|e| e.split.is_some()));
    }

    #[test]
    fn nearest_resize_keeps_mask_alphabet(seed in 0u64..1000, w in 16usize..48, h in 16usize..48, target in 16usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = (0..w * h).map(|_| rng.gen_range(-2.0..3.0)).collect();
        let mask: Vec<u8> = (0..w * h).map(|_| rng.gen_range(0..3)).collect();
        let s = qapseg::data::Sample::new("p", w, h, image, mask).unwrap();
        let r = normalize_resize(&s, target, Normalization::MinMax).unwrap();
        prop_assert_eq!((r.width, r.height), (target, target));
        prop_assert!(r.classes().iter().all(|c| s.classes().contains(c)));
        let lo = r.image.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = r.image.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        prop_assert_eq!((lo, hi), (0.0, 1.0));
        let again = normalize_resize(&r, target, Normalization::MinMax).unwrap();
        prop_assert_eq!(&again.mask, &r.mask);
        prop_assert!(again.image.iter().zip(&r.image).all(|(a, b)| (a - b).abs() < 1e-6));
    }
}
