use std::collections::BTreeSet;
use std::path::PathBuf;

use mi_sseg::data::dataset::{assign_splits, write_image_png, write_mask_png, write_raw, INDEX_FILE};
use mi_sseg::data::{
    area_downsample, downsample_lge, load_dataset, make_multires_pair, make_synthetic_pair, normalize, DatasetIndex,
    DatasetSpec, Domain, GrayImage, IndexRecord, PhantomParams, Resample, SegMask, Split,
};
use mi_sseg::Error;
use proptest::prelude::*;

fn params(res: usize) -> PhantomParams {
    PhantomParams {
        resolution: res,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_resample_never_invents_labels(
        h in 1usize..24,
        w in 1usize..24,
        th in 1usize..48,
        tw in 1usize..48,
        seed in any::<u64>(),
    ) {
        let labels: Vec<u8> = (0..h * w)
            .map(|i| ((seed.rotate_left(i as u32 % 64) ^ i as u64) % 3) as u8)
            .collect();
        let m = SegMask::new(h, w, labels, 3).unwrap();
        let r = m.resample((th, tw)).unwrap();
        let before: BTreeSet<u8> = m.labels().iter().copied().collect();
        prop_assert_eq!(r.resolution(), (th, tw));
        prop_assert!(r.labels().iter().all(|l| before.contains(l)));
    }

    #[test]
    fn mask_integer_upsample_round_trips(h in 1usize..12, w in 1usize..12, k in 1usize..5) {
        let labels: Vec<u8> = (0..h * w).map(|i| (i % 2) as u8).collect();
        let m = SegMask::new(h, w, labels, 2).unwrap();
        let up = m.resample((h * k, w * k)).unwrap();
        prop_assert_eq!(up.resample((h, w)).unwrap(), m);
    }

    #[test]
    fn normalize_lands_in_unit_range(values in prop::collection::vec(-1e3f32..1e3, 4..64)) {
        let n = values.len();
        let out = normalize(&values, 1, n, Domain::Dti).unwrap();
        let px = out.image.pixels();
        prop_assert!(px.iter().all(|v| (0.0..=1.0).contains(v)));
        if !out.constant {
            prop_assert!(px.iter().any(|&v| v == 0.0));
            prop_assert!(px.iter().any(|&v| v == 1.0));
        }
    }
}

#[test]
fn area_downsample_of_constant_blocks() {
    let mut px = vec![0f32; 16 * 16];
    for y in 0..16 {
        for x in 0..16 {
            px[y * 16 + x] = ((y / 4) * 4 + x / 4) as f32 / 15.0;
        }
    }
    let img = GrayImage::new(16, 16, px, Domain::Lge).unwrap();
    let down = area_downsample(&img, 4).unwrap();
    let expect: Vec<f32> = (0..16).map(|i| i as f32 / 15.0).collect();
    for (a, b) in down.pixels().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn checkerboard_averages_to_half() {
    let px = (0..512 * 512).map(|i| ((i / 512 + i % 512) % 2) as f32).collect();
    let img = GrayImage::new(512, 512, px, Domain::Lge).unwrap();
    let down = downsample_lge(&img).unwrap();
    assert_eq!(down.resolution(), (64, 64));
    assert!(down.pixels().iter().all(|&v| v == 0.5));
    let wrong = GrayImage::filled(256, 256, 0.0, Domain::Lge).unwrap();
    assert!(matches!(downsample_lge(&wrong), Err(Error::Dimension(_))));
}

#[test]
fn image_resample_preserves_constants() {
    let img = GrayImage::filled(7, 5, 0.3, Domain::Dti).unwrap();
    let r = img.resample((13, 21)).unwrap();
    assert!(r.pixels().iter().all(|v| (v - 0.3).abs() < 1e-6));
}

#[test]
fn phantoms_are_deterministic_and_seed_dependent() {
    let p = params(64);
    let a = make_synthetic_pair(9, &p).unwrap();
    assert_eq!(a, make_synthetic_pair(9, &p).unwrap());
    assert_ne!(a.image_a, make_synthetic_pair(10, &p).unwrap().image_a);
    assert_eq!(a.image_a.resolution(), (64, 64));
    assert_eq!(a.mask.resolution(), (64, 64));
}

#[test]
fn phantom_lesion_fraction_in_range() {
    let p = params(64);
    for seed in 0..40 {
        let pair = make_synthetic_pair(seed, &p).unwrap();
        let f = pair.mask.foreground_fraction();
        assert!(f == 0.0 || (p.lesion_fraction.0..=p.lesion_fraction.1).contains(&f), "seed {seed}: {f}");
        assert!(pair.image_a.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn lge_lesions_are_brighter_than_dti_lesions_relative_to_tissue() {
    let pair = (0..20)
        .map(|s| make_synthetic_pair(s, &params(64)).unwrap())
        .find(|p| p.mask.foreground_count() > 20)
        .expect("a phantom with a visible lesion");
    let mean_where = |img: &GrayImage, fg: bool| {
        let v: Vec<f32> = img
            .pixels()
            .iter()
            .zip(pair.mask.labels())
            .filter(|(_, &l)| (l != 0) == fg)
            .map(|(p, _)| *p)
            .collect();
        v.iter().sum::<f32>() / v.len() as f32
    };
    let lge_gap = mean_where(&pair.image_b, true) - mean_where(&pair.image_b, false);
    let dti_gap = mean_where(&pair.image_a, true) - mean_where(&pair.image_a, false);
    assert!(lge_gap > dti_gap.abs(), "lge {lge_gap} dti {dti_gap}");
}

#[test]
fn multires_masks_agree() {
    let pair = make_multires_pair(3, &params(32), 4).unwrap();
    assert_eq!(pair.mask_hr.resolution(), (128, 128));
    assert_eq!(pair.mask_lr, pair.mask_hr.resample((32, 32)).unwrap());
    assert!(make_multires_pair(3, &params(32), 3).is_err());
}

#[test]
fn invalid_phantom_params_are_generation_errors() {
    let p = PhantomParams {
        lesion_radius: (0.2, 0.4),
        ..Default::default()
    };
    assert!(matches!(make_synthetic_pair(0, &p), Err(Error::Generation(_))));
    let p = PhantomParams {
        lesion_fraction: (0.5, 0.6),
        max_attempts: 3,
        ..Default::default()
    };
    let err = make_synthetic_pair(0, &p).unwrap_err();
    assert!(err.to_string().contains("lesion fraction"), "{err}");
}

#[test]
fn splits_follow_fractions() {
    let s = assign_splits(20, (0.7, 0.15), 4);
    let count = |k| s.iter().filter(|x| **x == k).count();
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (14, 3, 3));
    assert_eq!(s, assign_splits(20, (0.7, 0.15), 4));
}

fn record(id: &str, domain: Domain, image: &str, mask: Option<&str>, pair: Option<&str>) -> IndexRecord {
    IndexRecord {
        id: id.into(),
        domain,
        image_path: PathBuf::from(image),
        mask_path: mask.map(PathBuf::from),
        pair_id: pair.map(String::from),
        split: Split::Train,
    }
}

#[test]
fn dataset_round_trip_png_and_raw() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let pair = make_synthetic_pair(1, &params(16)).unwrap();
    write_image_png(&root.join("a.png"), &pair.image_a).unwrap();
    let raw: Vec<f32> = pair.image_b.pixels().iter().map(|v| v * 1000.0 - 20.0).collect();
    write_raw(&root.join("b.raw"), 16, 16, &raw).unwrap();
    write_mask_png(&root.join("m.png"), &pair.mask).unwrap();
    let mut index = DatasetIndex::empty();
    index.records = vec![
        record("b", Domain::Lge, "b.raw", Some("m.png"), Some("p0")),
        record("a", Domain::Dti, "a.png", Some("m.png"), Some("p0")),
    ];
    DatasetSpec { root: root.into(), index }.write().unwrap();

    let spec = DatasetSpec::open(root).unwrap();
    let samples = load_dataset(&spec).unwrap();
    assert_eq!(samples.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    assert_eq!(samples[0].mask.as_ref().unwrap(), &pair.mask);
    for (s, want) in samples.iter().zip([&pair.image_a, &pair.image_b]) {
        let lo = want.pixels().iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = want.pixels().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        for (got, w) in s.image.pixels().iter().zip(want.pixels()) {
            assert!((got - (w - lo) / (hi - lo)).abs() < 1e-3);
        }
    }
}

#[test]
fn dataset_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let img = GrayImage::filled(8, 8, 0.5, Domain::Lge).unwrap();
    write_image_png(&root.join("x.png"), &img).unwrap();

    let mut index = DatasetIndex::empty();
    index.records = vec![record("x", Domain::Lge, "missing.png", None, None)];
    DatasetSpec { root: root.into(), index: index.clone() }.write().unwrap();
    assert!(matches!(DatasetSpec::open(root), Err(Error::Load { .. })));

    index.records = vec![
        record("x", Domain::Lge, "x.png", None, Some("p")),
        record("y", Domain::Lge, "x.png", None, Some("p")),
    ];
    DatasetSpec { root: root.into(), index: index.clone() }.write().unwrap();
    assert!(matches!(DatasetSpec::open(root), Err(Error::Validation(_))));

    index.records = vec![record("x", Domain::Lge, "x.png", None, None); 2];
    DatasetSpec { root: root.into(), index }.write().unwrap();
    assert!(matches!(DatasetSpec::open(root), Err(Error::Validation(_))));

    std::fs::write(root.join(INDEX_FILE), "{ not json").unwrap();
    assert!(matches!(DatasetSpec::open(root), Err(Error::Load { .. })));
}
