use std::collections::BTreeMap;

use mi_sseg::checkpoint::{fingerprint, Checkpoint, CheckpointReader, TensorData, MAGIC};
use mi_sseg::data::{Domain, GrayImage};
use mi_sseg::error::Error;
use mi_sseg::params::ParamStore;
use mi_sseg::pipeline::{load_sseg, InferencePipeline, Translator, SSEG_MODULE, STYLE_MODULE};
use mi_sseg::sseg::{EncoderConfig, SSegConfig, SSegNet};
use mi_sseg::style::{StyleConfig, StyleModels};
use proptest::prelude::*;

fn tiny_sseg() -> SSegConfig {
    SSegConfig {
        encoder: EncoderConfig {
            embed_dim: 8,
            depths: vec![1, 1],
            num_heads: vec![2, 2],
            window_size: 4,
            input_resolution: 16,
            ..Default::default()
        },
        scale: 2,
        decoder_channels: 8,
        ..Default::default()
    }
}

fn tiny_style() -> StyleConfig {
    StyleConfig {
        resolution: 16,
        ngf: 4,
        n_blocks: 1,
        ndf: 4,
        ..Default::default()
    }
}

fn history() -> BTreeMap<String, Vec<f64>> {
    BTreeMap::from([("loss".to_string(), vec![0.75, 0.5, 0.125])])
}

fn saved_sseg(dir: &std::path::Path, seed: u64) -> (std::path::PathBuf, SSegNet) {
    let net = SSegNet::new(tiny_sseg(), &ParamStore::new(seed)).unwrap();
    let path = dir.join(format!("sseg_{seed}.ckpt"));
    Checkpoint::from_params(SSEG_MODULE, net.config(), 12, history(), net.params(), &[])
        .unwrap()
        .save(&path)
        .unwrap();
    (path, net)
}

fn probe_image() -> GrayImage {
    let px = (0..256).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
    GrayImage::new(16, 16, px, Domain::Lge).unwrap()
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = saved_sseg(dir.path(), 1);
    let first = std::fs::read(&path).unwrap();
    let again = Checkpoint::load(&path).unwrap().to_bytes().unwrap();
    assert_eq!(first, again);
    assert_eq!(&first[..8], MAGIC);
}

#[test]
fn manifest_keeps_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let (path, net) = saved_sseg(dir.path(), 2);
    let ckpt = Checkpoint::load(&path).unwrap();
    let m = &ckpt.manifest;
    assert_eq!(m.module, SSEG_MODULE);
    assert_eq!(m.step, 12);
    assert_eq!(m.metric_history, history());
    assert_eq!(m.config_fingerprint, fingerprint(net.config()).unwrap());
    assert_eq!(m.config_as::<SSegConfig>().unwrap(), *net.config());
    assert_eq!(m.names().map(str::to_string).collect::<Vec<_>>(), net.params().names());
}

#[test]
fn reloaded_network_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (path, net) = saved_sseg(dir.path(), 3);
    let loaded = load_sseg(&CheckpointReader::open(&path).unwrap()).unwrap();
    let img = probe_image();
    let x = img.to_tensor(net.params().device()).unwrap();
    let a = net.forward_t(&x, false).unwrap();
    let b = loaded.forward_t(&x, false).unwrap();
    assert_eq!(
        a.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
        b.flatten_all().unwrap().to_vec1::<f32>().unwrap()
    );
    assert_eq!(net.params().checksum("").unwrap(), loaded.params().checksum("").unwrap());
}

#[test]
fn garbage_is_rejected() {
    assert!(matches!(Checkpoint::from_bytes(b"hello"), Err(Error::Checkpoint(_))));
    assert!(matches!(
        Checkpoint::from_bytes(b"NOTACKPT\x01\0\0\0\0\0\0\0\0\0\0\0"),
        Err(Error::Checkpoint(_))
    ));

    let dir = tempfile::tempdir().unwrap();
    let (path, _) = saved_sseg(dir.path(), 4);
    let bytes = std::fs::read(&path).unwrap();

    let mut bad_version = bytes.clone();
    bad_version[8] = 99;
    assert!(matches!(Checkpoint::from_bytes(&bad_version), Err(Error::Checkpoint(_))));

    let truncated = &bytes[..bytes.len() - 4];
    assert!(matches!(Checkpoint::from_bytes(truncated), Err(Error::Checkpoint(_))));

    let short = dir.path().join("short.ckpt");
    std::fs::write(&short, &bytes[..30]).unwrap();
    assert!(matches!(CheckpointReader::open(&short), Err(Error::Load { .. })));
    assert!(matches!(Checkpoint::load(dir.path().join("absent.ckpt")), Err(Error::Load { .. })));
}

#[test]
fn fingerprint_mismatch_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let (path, net) = saved_sseg(dir.path(), 5);
    let m = Checkpoint::load(&path).unwrap().manifest;
    let own = fingerprint(net.config()).unwrap();
    m.verify(SSEG_MODULE, Some(&own), false).unwrap();

    let other = SSegConfig {
        scale: 4,
        ..tiny_sseg()
    };
    let other = fingerprint(&other).unwrap();
    assert_ne!(own, other);
    assert!(matches!(m.verify(SSEG_MODULE, Some(&other), false), Err(Error::Checkpoint(_))));
    m.verify(SSEG_MODULE, Some(&other), true).unwrap();
}

#[test]
fn modules_are_not_interchangeable() {
    let dir = tempfile::tempdir().unwrap();
    let (sseg_path, _) = saved_sseg(dir.path(), 6);
    let params = ParamStore::new(6);
    let style = StyleModels::new(tiny_style(), &params).unwrap();
    let style_path = dir.path().join("style.ckpt");
    Checkpoint::from_params(STYLE_MODULE, style.config(), 0, BTreeMap::new(), &params, &[])
        .unwrap()
        .save(&style_path)
        .unwrap();

    let style_reader = CheckpointReader::open(&style_path).unwrap();
    let sseg_reader = CheckpointReader::open(&sseg_path).unwrap();
    assert!(matches!(load_sseg(&style_reader), Err(Error::Checkpoint(_))));
    assert!(matches!(Translator::load(&sseg_reader), Err(Error::Checkpoint(_))));
    assert!(matches!(
        InferencePipeline::load(Some(&sseg_reader), &style_reader),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn translator_reads_only_the_forward_generator() {
    let dir = tempfile::tempdir().unwrap();
    let params = ParamStore::new(7);
    let style = StyleModels::new(tiny_style(), &params).unwrap();
    let path = dir.path().join("style.ckpt");
    Checkpoint::from_params(STYLE_MODULE, style.config(), 0, BTreeMap::new(), &params, &[])
        .unwrap()
        .save(&path)
        .unwrap();
    let reader = CheckpointReader::open(&path).unwrap();
    assert!(reader.manifest().names().any(|n| n.starts_with("seg.")));
    let t = Translator::load(&reader).unwrap();
    let log = reader.access_log();
    assert!(!log.is_empty());
    assert!(log.iter().all(|n| n.starts_with("g_st.")), "{log:?}");
    assert_eq!(t.resolution(), 16);
}

#[test]
fn missing_tensor_is_a_key_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (path, net) = saved_sseg(dir.path(), 8);
    let mut ckpt = Checkpoint::load(&path).unwrap();
    let dropped = net.params().names().pop().unwrap();
    ckpt.tensors.remove(&dropped);
    let partial = Checkpoint::new(
        SSEG_MODULE,
        net.config(),
        0,
        BTreeMap::new(),
        Vec::new(),
        ckpt.tensors,
    )
    .unwrap();
    let partial_path = dir.path().join("partial.ckpt");
    partial.save(&partial_path).unwrap();
    match load_sseg(&CheckpointReader::open(&partial_path).unwrap()) {
        Err(Error::KeyMismatch { keys }) => assert_eq!(keys, vec![dropped]),
        other => panic!("expected a key mismatch, got {other:?}"),
    }
}

#[test]
fn inconsistent_tensors_and_metrics_are_rejected() {
    let bad_shape: BTreeMap<String, TensorData> = BTreeMap::from([("w".to_string(), (vec![2, 2], vec![1.0; 3]))]);
    assert!(matches!(
        Checkpoint::new("m", &0u8, 0, BTreeMap::new(), Vec::new(), bad_shape),
        Err(Error::Checkpoint(_))
    ));
    let nan = BTreeMap::from([("loss".to_string(), vec![f64::NAN])]);
    assert!(matches!(
        Checkpoint::new("m", &0u8, 0, nan, Vec::new(), BTreeMap::new()),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn reader_is_lazy() {
    let dir = tempfile::tempdir().unwrap();
    let (path, net) = saved_sseg(dir.path(), 9);
    let reader = CheckpointReader::open(&path).unwrap();
    assert!(reader.access_log().is_empty());
    let name = net.params().names()[0].clone();
    let (shape, values) = reader.tensor(&name).unwrap();
    let var = net.params().get(&name).unwrap();
    assert_eq!(shape, var.dims());
    assert_eq!(values, var.flatten_all().unwrap().to_vec1::<f32>().unwrap());
    assert_eq!(reader.access_log(), vec![name]);
    assert!(matches!(reader.tensor("nope"), Err(Error::Checkpoint(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_tensors_round_trip(
        tensors in prop::collection::btree_map(
            "[a-z]{1,6}(\\.[a-z]{1,4})?",
            prop::collection::vec(-1e6f32..1e6, 0..20).prop_map(|v| (vec![v.len()], v)),
            0..6,
        ),
        step in any::<u64>(),
    ) {
        let ckpt = Checkpoint::new("m", &("cfg", 3), step, BTreeMap::new(), vec!["x.".into()], tensors).unwrap();
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ckpt);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}
