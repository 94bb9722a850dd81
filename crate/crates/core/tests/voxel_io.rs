//! Integration tests for the raw-file voxel IO path: dtype widening, sidecar
//! round-trips, and the error taxonomy for malformed inputs.

use std::fs;
use std::path::PathBuf;

use voxhom::voxel::{
    load_voxel_grid, make_cubic_void_cell, read_sidecar, segment_threshold, sidecar_path,
    write_mask, Dtype, GridMeta, DEFAULT_ALPHA_VOID,
};
use voxhom::Error;

fn scratch(tag: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("voxel_io_{tag}"));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn meta(dims: [usize; 3], dtype: Dtype) -> GridMeta {
    GridMeta { dims, spacing_mm: [0.1, 0.1, 0.1], dtype, order: "x-fastest".to_string() }
}

#[test]
fn every_dtype_widens_to_the_same_f64_intensities() {
    let dir = scratch("dtypes");
    let dims = [3, 2, 2];
    let values: Vec<f64> = (0..12).map(|i| (i * 17 % 256) as f64).collect();

    let mut raw_u8 = Vec::new();
    let mut raw_u16 = Vec::new();
    let mut raw_f32 = Vec::new();
    let mut raw_f64 = Vec::new();
    for &v in &values {
        raw_u8.push(v as u8);
        raw_u16.extend_from_slice(&(v as u16).to_le_bytes());
        raw_f32.extend_from_slice(&(v as f32).to_le_bytes());
        raw_f64.extend_from_slice(&v.to_le_bytes());
    }

    for (name, bytes, dtype) in [
        ("grid.u8.raw", raw_u8, Dtype::U8),
        ("grid.u16.raw", raw_u16, Dtype::U16),
        ("grid.f32.raw", raw_f32, Dtype::F32),
        ("grid.f64.raw", raw_f64, Dtype::F64),
    ] {
        let path = dir.join(name);
        fs::write(&path, &bytes).unwrap();
        let grid = load_voxel_grid(&path, &meta(dims, dtype)).unwrap();
        assert_eq!(grid.dims, dims);
        assert_eq!(grid.data, values, "dtype {dtype:?} must widen losslessly");
    }
}

#[test]
fn mask_round_trip_preserves_geometry_exactly() {
    let dir = scratch("mask");
    let field = make_cubic_void_cell(1.0, 0.5, 8).unwrap();
    let raw = dir.join("mask.raw");
    write_mask(&field, &raw).unwrap();

    let side = read_sidecar(&sidecar_path(&raw)).unwrap();
    assert_eq!(side.dims, field.dims);
    assert_eq!(side.spacing_mm, field.spacing);
    assert_eq!(side.dtype, Dtype::U8);

    let grid = load_voxel_grid(&raw, &side).unwrap();
    let back = segment_threshold(&grid, 0.5, DEFAULT_ALPHA_VOID).unwrap();
    assert_eq!(back.dims, field.dims);
    for i in 0..field.voxel_count() {
        assert_eq!(back.is_solid(i), field.is_solid(i), "voxel {i} changed in round trip");
    }
}

#[test]
fn wrong_file_length_is_an_input_error_naming_both_sizes() {
    let dir = scratch("length");
    let path = dir.join("short.raw");
    fs::write(&path, vec![0u8; 7]).unwrap();
    let err = load_voxel_grid(&path, &meta([2, 2, 2], Dtype::U8)).unwrap_err();
    match err {
        Error::Input(msg) => {
            assert!(msg.contains("holds 7 bytes"), "{msg}");
            assert!(msg.contains("require 8 bytes"), "{msg}");
        }
        other => panic!("expected Input error, got {other:?}"),
    }
}

#[test]
fn missing_file_maps_to_io_and_bad_sidecar_to_json() {
    let dir = scratch("errors");
    match load_voxel_grid(&dir.join("nope.raw"), &meta([1, 1, 1], Dtype::U8)) {
        Err(Error::Io(_)) => {}
        other => panic!("expected Io error, got {other:?}"),
    }

    let bad = dir.join("bad.json");
    fs::write(&bad, "{ dims: oops").unwrap();
    match read_sidecar(&bad) {
        Err(Error::Json(_)) => {}
        other => panic!("expected Json error, got {other:?}"),
    }
}

#[test]
fn sidecar_defaults_the_layout_and_rejects_unknown_ones() {
    let dir = scratch("order");
    let implicit = dir.join("implicit.json");
    fs::write(
        &implicit,
        r#"{ "dims": [4, 5, 6], "spacing_mm": [0.2, 0.2, 0.5], "dtype": "u16" }"#,
    )
    .unwrap();
    let side = read_sidecar(&implicit).unwrap();
    assert_eq!(side.order, "x-fastest");
    assert_eq!(side.voxel_count(), 120);

    let exotic = dir.join("exotic.json");
    fs::write(
        &exotic,
        r#"{ "dims": [4, 5, 6], "spacing_mm": [0.2, 0.2, 0.5], "dtype": "u16", "order": "z-fastest" }"#,
    )
    .unwrap();
    let err = read_sidecar(&exotic).unwrap_err();
    assert!(matches!(err, Error::Input(_)), "got {err:?}");
}
