use std::collections::BTreeMap;
use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use mi_sseg::checkpoint::Checkpoint;
use mi_sseg::pipeline::SSEG_MODULE;
use mi_sseg::sseg::{EncoderConfig, SSegConfig, SSegNet};
use mi_sseg_ffi::*;

fn tiny_config() -> SSegConfig {
    SSegConfig {
        encoder: EncoderConfig {
            embed_dim: 8,
            depths: vec![1, 1],
            num_heads: vec![1, 2],
            window_size: 4,
            input_resolution: 16,
            ..Default::default()
        },
        scale: 2,
        decoder_channels: 8,
        min_decoder_channels: 4,
        ..Default::default()
    }
}

fn write_sseg(dir: &Path) -> CString {
    let net = SSegNet::with_seed(tiny_config(), 3).unwrap();
    let path = dir.join("sseg.ckpt");
    Checkpoint::from_params(SSEG_MODULE, net.config(), 0, BTreeMap::new(), net.params(), &[])
        .unwrap()
        .save(&path)
        .unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = miss_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(miss_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn dsc_through_c_abi() {
    let a = [1u8, 1, 0, 0];
    let b = [1u8, 0, 0, 1];
    let mut out = 0.0;
    let status = unsafe { miss_dsc(a.as_ptr(), b.as_ptr(), a.len(), &mut out) };
    assert_eq!(status, MissStatus::Ok);
    assert!((out - 0.5).abs() < 1e-12);
    assert!(miss_last_error_message().is_null());

    let empty = [0u8; 4];
    let status = unsafe { miss_dsc(empty.as_ptr(), empty.as_ptr(), 4, &mut out) };
    assert_eq!(status, MissStatus::Ok);
    assert_eq!(out, 1.0);
}

#[test]
fn null_arguments_are_reported() {
    let mut out = 0.0;
    let status = unsafe { miss_dsc(ptr::null(), ptr::null(), 4, &mut out) };
    assert_eq!(status, MissStatus::NullPointer);
    assert!(last_error().contains("null"));

    let status = unsafe { miss_pipeline_load(ptr::null(), ptr::null(), ptr::null_mut()) };
    assert_eq!(status, MissStatus::NullPointer);
    unsafe { miss_pipeline_free(ptr::null_mut()) };
    assert_eq!(unsafe { miss_pipeline_input_resolution(ptr::null()) }, 0);
}

#[test]
fn synthetic_pair_matches_library() {
    let res = 32;
    let mut a = vec![0f32; res * res];
    let mut b = vec![0f32; res * res];
    let mut m = vec![0u8; res * res];
    let status = unsafe { miss_synthetic_pair(11, res, a.as_mut_ptr(), b.as_mut_ptr(), m.as_mut_ptr()) };
    assert_eq!(status, MissStatus::Ok);
    let params = mi_sseg::data::PhantomParams {
        resolution: res,
        ..Default::default()
    };
    let pair = mi_sseg::data::make_synthetic_pair(11, &params).unwrap();
    assert_eq!(a, pair.image_a.pixels());
    assert_eq!(b, pair.image_b.pixels());
    assert_eq!(m, pair.mask.labels());
}

#[test]
fn invalid_resolution_is_a_generation_error() {
    let mut buf = [0f32; 4];
    let mut m = [0u8; 4];
    let status = unsafe { miss_synthetic_pair(0, 2, buf.as_mut_ptr(), buf.as_mut_ptr(), m.as_mut_ptr()) };
    assert_eq!(status, MissStatus::Generation);
    assert!(last_error().contains("resolution"));
}

#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sseg = write_sseg(dir.path());
    let mut handle = ptr::null_mut();
    let status = unsafe { miss_pipeline_load(ptr::null(), sseg.as_ptr(), &mut handle) };
    assert_eq!(status, MissStatus::Ok, "{}", last_error());
    assert!(!handle.is_null());
    assert_eq!(unsafe { miss_pipeline_input_resolution(handle) }, 16);
    let out_res = unsafe { miss_pipeline_output_resolution(handle) };
    assert_eq!(out_res, 32);

    let pixels: Vec<f32> = (0..256).map(|i| (i as f32 * 0.37).sin() * 40.0 + 100.0).collect();
    let mut first = vec![9u8; out_res * out_res];
    let mut second = vec![9u8; out_res * out_res];
    for out in [&mut first, &mut second] {
        let status = unsafe { miss_pipeline_infer(handle, pixels.as_ptr(), 16, 16, out.as_mut_ptr(), out.len()) };
        assert_eq!(status, MissStatus::Ok, "{}", last_error());
    }
    assert_eq!(first, second);
    assert!(first.iter().all(|&l| l <= 1));

    let mut short = vec![0u8; 10];
    let status = unsafe { miss_pipeline_infer(handle, pixels.as_ptr(), 16, 16, short.as_mut_ptr(), short.len()) };
    assert_eq!(status, MissStatus::Dimension);

    let status = unsafe { miss_pipeline_infer(handle, pixels.as_ptr(), 8, 32, first.as_mut_ptr(), first.len()) };
    assert_ne!(status, MissStatus::Ok);
    unsafe { miss_pipeline_free(handle) };
}

#[test]
fn missing_checkpoint_is_a_load_error() {
    let path = CString::new("/nonexistent/sseg.ckpt").unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { miss_pipeline_load(ptr::null(), path.as_ptr(), &mut handle) };
    assert_eq!(status, MissStatus::Load);
    assert!(handle.is_null());
    assert!(last_error().contains("/nonexistent/sseg.ckpt"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mi_sseg.h")).unwrap();
    for name in [
        "miss_last_error_message",
        "miss_version",
        "miss_pipeline_load",
        "miss_pipeline_infer",
        "miss_pipeline_free",
        "miss_dsc",
        "miss_synthetic_pair",
        "typedef struct MissPipeline MissPipeline",
        "MISS_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
