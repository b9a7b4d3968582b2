use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use dv3_core::depth_io::DepthFormat;
use dv3_core::net::{save_model, Arch, MultiStreamModel};
use dv3_core::pointset::{write_pointset, DvPointSet};
use dv3_core::rankpool::approx_coeffs;
use dv3_core::synth::{make_dataset, write_dataset, DatasetConfig};
use dv3_ffi::*;

fn c(path: &Path) -> CString {
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = dv3_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_the_package() {
    let v = unsafe { CStr::from_ptr(dv3_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn approx_coeffs_are_copied_and_checked() {
    let mut buf = vec![0.0; 10];
    assert_eq!(
        unsafe { dv3_approx_coeffs(7, buf.as_mut_ptr(), buf.len()) },
        Dv3Status::Ok
    );
    assert_eq!(&buf[..7], approx_coeffs(7).as_slice());
    assert_eq!(
        unsafe { dv3_approx_coeffs(11, buf.as_mut_ptr(), buf.len()) },
        Dv3Status::BufferTooSmall
    );
    assert!(last_error().contains("11 needed"));
    assert_eq!(
        unsafe { dv3_approx_coeffs(0, buf.as_mut_ptr(), buf.len()) },
        Dv3Status::InvalidArgument
    );
    assert_eq!(
        unsafe { dv3_approx_coeffs(3, ptr::null_mut(), 3) },
        Dv3Status::NullPointer
    );
}

#[test]
fn pointset_read_copy_write() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.dv3p");
    let ps = DvPointSet::new(vec![[0.1, -0.2, 0.3], [0.5, 0.0, -0.5]], vec![1.0, 2.0, 3.0, 4.0], 2).unwrap();
    write_pointset(&path, &ps).unwrap();

    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { dv3_pointset_read(c(&path).as_ptr(), &mut handle) },
        Dv3Status::Ok
    );
    assert_eq!(unsafe { dv3_pointset_len(handle) }, 2);
    assert_eq!(unsafe { dv3_pointset_channels(handle) }, 2);
    let mut coords = [0.0; 6];
    let mut motion = [0.0; 4];
    let status = unsafe { dv3_pointset_copy(handle, coords.as_mut_ptr(), 6, motion.as_mut_ptr(), 4) };
    assert_eq!(status, Dv3Status::Ok);
    assert_eq!(coords.map(|v| v as f32), [0.1f32, -0.2, 0.3, 0.5, 0.0, -0.5]);
    assert_eq!(motion, [1.0, 2.0, 3.0, 4.0]);
    let status = unsafe { dv3_pointset_copy(handle, coords.as_mut_ptr(), 5, ptr::null_mut(), 0) };
    assert_eq!(status, Dv3Status::BufferTooSmall);

    let copy = dir.path().join("b.dv3p");
    assert_eq!(unsafe { dv3_pointset_write(handle, c(&copy).as_ptr()) }, Dv3Status::Ok);
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&copy).unwrap());
    unsafe { dv3_pointset_free(handle) };
    unsafe { dv3_pointset_free(ptr::null_mut()) };
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.dv3p");
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { dv3_pointset_read(c(&missing).as_ptr(), &mut handle) },
        Dv3Status::Io
    );
    assert!(last_error().contains("missing.dv3p"));
    assert!(handle.is_null());

    let junk = dir.path().join("junk.dv3p");
    std::fs::write(&junk, b"not a point set").unwrap();
    assert_eq!(
        unsafe { dv3_pointset_read(c(&junk).as_ptr(), &mut handle) },
        Dv3Status::Format
    );
    assert_eq!(
        unsafe { dv3_pointset_read(ptr::null(), &mut handle) },
        Dv3Status::NullPointer
    );
    assert_eq!(
        unsafe { dv3_pointset_read(c(&junk).as_ptr(), ptr::null_mut()) },
        Dv3Status::NullPointer
    );
    assert_eq!(unsafe { dv3_pointset_len(ptr::null()) }, 0);
}

#[test]
fn extract_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        train_per_class: 2,
        test_per_class: 0,
        frames: 12,
        ..DatasetConfig::default()
    };
    let entries = make_dataset(&cfg).unwrap();
    write_dataset(dir.path(), &entries[..1], DepthFormat::D16).unwrap();
    let clip = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "d16"))
        .unwrap();

    let mut ex = ptr::null_mut();
    let status = unsafe { dv3_extract(c(&clip).as_ptr(), ptr::null(), ptr::null(), &mut ex) };
    assert_eq!(status, Dv3Status::Ok, "{}", last_error());
    let motion = unsafe { dv3_extraction_motion(ex) };
    assert_eq!(unsafe { dv3_pointset_channels(motion) }, 5);
    assert!(unsafe { dv3_pointset_len(motion) } > 0);
    assert_eq!(unsafe { dv3_extraction_appearance_count(ex) }, 3);
    assert!(!unsafe { dv3_extraction_appearance(ex, 2) }.is_null());
    assert!(unsafe { dv3_extraction_appearance(ex, 3) }.is_null());

    let model_path = dir.path().join("m.dv3m");
    let model = MultiStreamModel::<f32>::init(Arch::tiny(4, 5, 3), 1).unwrap();
    save_model(&model_path, &model).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { dv3_model_load(c(&model_path).as_ptr(), &mut m) },
        Dv3Status::Ok
    );
    assert_eq!(unsafe { dv3_model_classes(m) }, 4);
    let mut class = usize::MAX;
    let mut probs = [0.0f32; 4];
    let status = unsafe { dv3_model_predict(m, ex, &mut class, probs.as_mut_ptr(), probs.len()) };
    assert_eq!(status, Dv3Status::Ok, "{}", last_error());
    assert!(class < 4);
    assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    assert!(probs.iter().all(|&p| p <= probs[class]));
    let status = unsafe { dv3_model_predict(m, ex, &mut class, probs.as_mut_ptr(), 2) };
    assert_eq!(status, Dv3Status::BufferTooSmall);

    let wide = MultiStreamModel::<f32>::init(Arch::tiny(4, 7, 3), 1).unwrap();
    save_model(&model_path, &wide).unwrap();
    let mut w = ptr::null_mut();
    assert_eq!(
        unsafe { dv3_model_load(c(&model_path).as_ptr(), &mut w) },
        Dv3Status::Ok
    );
    let status = unsafe { dv3_model_predict(w, ex, &mut class, ptr::null_mut(), 0) };
    assert_eq!(status, Dv3Status::InvalidArgument);
    assert!(last_error().contains("motion channels"));

    unsafe {
        dv3_model_free(m);
        dv3_model_free(w);
        dv3_extraction_free(ex);
    }
}

#[test]
fn extract_reports_missing_clip() {
    let mut ex = ptr::null_mut();
    let path = CString::new("/nonexistent/clip.d16").unwrap();
    let status = unsafe { dv3_extract(path.as_ptr(), ptr::null(), ptr::null(), &mut ex) };
    assert_ne!(status, Dv3Status::Ok);
    assert!(last_error().contains("clip.d16"));
    assert!(ex.is_null());
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dv3.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "dv3_version",
        "dv3_last_error",
        "dv3_approx_coeffs",
        "dv3_pointset_read",
        "dv3_pointset_copy",
        "dv3_pointset_free",
        "dv3_extract",
        "dv3_extraction_free",
        "dv3_model_load",
        "dv3_model_predict",
        "dv3_model_free",
        "DV3_STATUS_BUFFER_TOO_SMALL = 6",
        "typedef struct Dv3Model Dv3Model;",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    match Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("skipping C compile check: {e}"),
    }
}
