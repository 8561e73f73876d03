use std::collections::BTreeMap;
use std::ffi::CString;
use std::path::Path;
use std::process::Command;
use std::ptr;

use ief_core::data::{generate_dataset, GeneratorConfig};
use ief_core::infer::infer;
use ief_core::model::Model;
use ief_core::train::{fpc_train, TrainConfig};
use ief_ffi::*;

fn last_error() -> String {
    let len = unsafe { ief_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0u8; len + 1];
    unsafe { ief_last_error_message(buf.as_mut_ptr().cast(), buf.len()) };
    String::from_utf8(buf[..len].to_vec()).unwrap()
}

fn trained_model(dir: &Path) -> (Model, ief_core::data::Example) {
    let ds = generate_dataset(6, 3, 0, &GeneratorConfig::square(32), 1).unwrap();
    let config = TrainConfig { learning_rate: 1e-4, batch_size: 4, epochs_per_stage: 1, steps: 2, ..TrainConfig::default() };
    let model = fpc_train(&ds, &config).unwrap().model;
    model.save(dir, &BTreeMap::new()).unwrap();
    (model, ds.examples[0].clone())
}

#[test]
fn model_handle_matches_library_inference() {
    let dir = tempfile::tempdir().unwrap();
    let (model, ex) = trained_model(dir.path());
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut handle: *mut IefModel = ptr::null_mut();
    assert_eq!(unsafe { ief_model_load(path.as_ptr(), &mut handle) }, IefStatus::Ok);

    let mut info = IefModelInfo::default();
    assert_eq!(unsafe { ief_model_info(handle, &mut info) }, IefStatus::Ok);
    assert_eq!((info.width, info.height, info.image_channels, info.keypoints), (32, 32, 1, 7));

    let given = ex.given[0].1;
    let mut y0 = vec![0.0; 14];
    let status = unsafe { ief_model_initial_pose(handle, [given.x, given.y].as_ptr(), 2, y0.as_mut_ptr(), y0.len()) };
    assert_eq!(status, IefStatus::Ok);
    let expected_y0 = model.initial_pose(&ex.given).unwrap();
    let flat: Vec<f64> = expected_y0.points().iter().flat_map(|p| [p.x, p.y]).collect();
    assert_eq!(y0, flat);

    let steps = 3;
    let mut out = vec![0.0; 14 * (steps + 1)];
    let image = &ex.image.data;
    let status = unsafe { ief_model_infer(handle, image.as_ptr(), image.len(), y0.as_ptr(), y0.len(), steps, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, IefStatus::Ok, "{}", last_error());
    let expected = infer(&model, &ex.image, &expected_y0, steps, None).unwrap();
    let flat: Vec<f64> = expected.poses.iter().flat_map(|p| p.points().iter().flat_map(|q| [q.x, q.y]).collect::<Vec<_>>()).collect();
    assert_eq!(out, flat);

    let mut short = vec![0.0; 3];
    let status =
        unsafe { ief_model_infer(handle, image.as_ptr(), image.len(), y0.as_ptr(), y0.len(), steps, short.as_mut_ptr(), short.len()) };
    assert_eq!(status, IefStatus::BufferTooSmall);
    let status = unsafe { ief_model_infer(handle, image.as_ptr(), 5, y0.as_ptr(), y0.len(), steps, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, IefStatus::DimensionMismatch);
    assert!(!last_error().is_empty());
    unsafe { ief_model_free(handle) };
}

#[test]
fn load_reports_missing_and_null_paths() {
    let mut handle: *mut IefModel = ptr::null_mut();
    let missing = CString::new("/nonexistent/model").unwrap();
    assert_eq!(unsafe { ief_model_load(missing.as_ptr(), &mut handle) }, IefStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("No such file"), "{}", last_error());
    assert_eq!(unsafe { ief_model_load(ptr::null(), &mut handle) }, IefStatus::NullPointer);
    unsafe { ief_model_free(ptr::null_mut()) };
}

#[test]
fn primitives_match_the_library() {
    let target = [10.0, 0.0, 1.0, 1.0];
    let current = [0.0, 0.0, 0.0, 0.0];
    let mut out = [0.0; 4];
    assert_eq!(unsafe { ief_bounded_correction(target.as_ptr(), current.as_ptr(), 2, 5.0, out.as_mut_ptr()) }, IefStatus::Ok);
    assert_eq!(out, [5.0, 0.0, 1.0, 1.0]);
    assert_eq!(unsafe { ief_bounded_correction(target.as_ptr(), current.as_ptr(), 2, -1.0, out.as_mut_ptr()) }, IefStatus::InvalidArgument);

    let mut map = vec![0.0f32; 16];
    assert_eq!(unsafe { ief_render_heatmap(1.5, 2.5, 4, 4, 1.0, map.as_mut_ptr(), map.len()) }, IefStatus::Ok);
    let expected = ief_core::render::render_heatmap(ief_core::Point::new(1.5, 2.5), 4, 4, 1.0).unwrap();
    assert_eq!(map, expected);
    assert_eq!(map[2 * 4 + 1], 1.0);
    assert_eq!(unsafe { ief_render_heatmap(1.0, 2.0, 4, 4, 1.0, map.as_mut_ptr(), 15) }, IefStatus::BufferTooSmall);

    let pred = [0.0, 0.0, 15.0, 0.0, 50.0, 0.0];
    let truth = [0.0, 0.0, 10.0, 0.0, 0.0, 0.0];
    let mut scores = [9i32; 3];
    let annotated = [1u8, 1, 0];
    assert_eq!(unsafe { ief_pckh(pred.as_ptr(), truth.as_ptr(), annotated.as_ptr(), 3, 10.0, 0.5, scores.as_mut_ptr()) }, IefStatus::Ok);
    assert_eq!(scores, [1, 1, -1]);
    assert_eq!(unsafe { ief_pckh(pred.as_ptr(), truth.as_ptr(), ptr::null(), 3, 10.0, 0.4, scores.as_mut_ptr()) }, IefStatus::Ok);
    assert_eq!(scores, [1, 0, 0]);
    assert_eq!(unsafe { ief_pckh(ptr::null(), truth.as_ptr(), ptr::null(), 3, 10.0, 0.4, scores.as_mut_ptr()) }, IefStatus::NullPointer);
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ief.h");
    let header = std::fs::read_to_string(&header_path).unwrap();
    for name in [
        "ief_last_error_message",
        "ief_model_load",
        "ief_model_free",
        "ief_model_info",
        "ief_model_initial_pose",
        "ief_model_infer",
        "ief_bounded_correction",
        "ief_render_heatmap",
        "ief_pckh",
        "IEF_STATUS_BUFFER_TOO_SMALL",
        "typedef struct IefModel IefModel;",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let Ok(status) = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"]).arg(&header_path).status()
    else {
        eprintln!("no C compiler found; header syntax not checked");
        return;
    };
    assert!(status.success());
}
