use std::ffi::{CStr, CString};
use std::ptr;

use lfpp_core::conformal::Region;
use lfpp_core::gff::{heat_mollify, sample_gff};
use lfpp_core::grid::GridSpec;
use lfpp_core::lfpp::build_graph;
use lfpp_ffi::*;
use num_complex::Complex64;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lfpp_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn distances_match_the_library() {
    unsafe {
        let mut field = ptr::null_mut();
        assert_eq!(lfpp_field_sample(96, 96, 1.0 / 32.0, -1.5, -1.5, 2.0, 9, &mut field), LfppStatus::Ok);
        let mut smooth = ptr::null_mut();
        assert_eq!(lfpp_field_mollify(field, 0.1, LfppKernel::Heat, &mut smooth), LfppStatus::Ok);
        let mut graph = ptr::null_mut();
        assert_eq!(lfpp_graph_build(smooth, 0.3, 0.0, 0.0, 0.5, &mut graph), LfppStatus::Ok);
        let mut d = 0.0;
        assert_eq!(lfpp_graph_distance(graph, -0.25, 0.0, 0.25, 0.125, &mut d), LfppStatus::Ok);

        let spec = GridSpec::new(96, 96, 1.0 / 32.0, Complex64::new(-1.5, -1.5)).unwrap();
        let h = heat_mollify(&sample_gff(&spec, 2.0, 9).unwrap(), 0.1).unwrap();
        let g = build_graph(&h, &Region::disk(Complex64::new(0.0, 0.0), 0.5), 0.3).unwrap();
        let expect = g.distance(Complex64::new(-0.25, 0.0), Complex64::new(0.25, 0.125)).unwrap().raw.unwrap();
        assert_eq!(d, expect);

        let mut around = 0.0;
        assert_eq!(lfpp_graph_around(graph, 0.0, 0.0, 0.2, 0.35, &mut around), LfppStatus::Ok);
        assert!(around.is_finite() && around > 0.0);

        lfpp_graph_free(graph);
        lfpp_field_free(smooth);
        lfpp_field_free(field);
    }
}

#[test]
fn snapshot_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("f.lfp").to_str().unwrap()).unwrap();
    unsafe {
        let values: Vec<f64> = (0..12).map(|k| k as f64 * 0.5 - 1.0).collect();
        let mut f = ptr::null_mut();
        assert_eq!(lfpp_field_from_values(4, 3, 0.25, 1.0, 2.0, values.as_ptr(), &mut f), LfppStatus::Ok);
        assert_eq!(lfpp_field_save(f, path.as_ptr()), LfppStatus::Ok);
        let mut g = ptr::null_mut();
        assert_eq!(lfpp_field_load(path.as_ptr(), &mut g), LfppStatus::Ok);
        let (mut nx, mut ny) = (0usize, 0usize);
        assert_eq!(lfpp_field_dims(g, &mut nx, &mut ny), LfppStatus::Ok);
        assert_eq!((nx, ny), (4, 3));
        let mut back = vec![0.0; 12];
        assert_eq!(lfpp_field_values(g, back.as_mut_ptr(), 12), LfppStatus::Ok);
        assert_eq!(back, values);
        assert_eq!(lfpp_field_values(g, back.as_mut_ptr(), 11), LfppStatus::InvalidArgument);
        lfpp_field_free(f);
        lfpp_field_free(g);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(lfpp_field_constant(8, 8, 0.1, 0.0, 0.0, 0.0, &mut f), LfppStatus::Ok);
        let mut m = ptr::null_mut();
        assert_eq!(lfpp_field_mollify(f, 0.1, LfppKernel::Heat, &mut m), LfppStatus::Precondition);
        assert!(m.is_null());
        assert!(last_error().contains("twice the spacing"));
        let missing = CString::new("/nonexistent/field.lfp").unwrap();
        let mut g = ptr::null_mut();
        assert_eq!(lfpp_field_load(missing.as_ptr(), &mut g), LfppStatus::Io);
        assert_eq!(lfpp_field_dims(ptr::null(), ptr::null_mut(), ptr::null_mut()), LfppStatus::NullPointer);
        lfpp_field_free(f);
        lfpp_field_free(ptr::null_mut());
    }
}

#[test]
fn scaling_table_handles() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    let eps = [0.1, 0.05, 0.025, 0.0125];
    lfpp_core::scaling::ScalingTable::power_law(0.2, 2.0, 1.0, &eps).unwrap().write_csv(&p).unwrap();
    let path = CString::new(p.to_str().unwrap()).unwrap();
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(lfpp_table_read(path.as_ptr(), &mut t), LfppStatus::Ok);
        let mut q = 0.0;
        assert_eq!(lfpp_table_fit(t, 1, &mut q), LfppStatus::Ok);
        assert!((q - 2.0).abs() < 1e-9);
        let mut a = 0.0;
        assert_eq!(lfpp_table_a(t, 0.05, &mut a), LfppStatus::Ok);
        assert!((a - 0.05f64.powf(1.0 - 0.2 * 2.0)).abs() < 1e-12);
        assert_eq!(lfpp_table_a(t, 0.5, &mut a), LfppStatus::Precondition);
        lfpp_table_free(t);
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lfpp.h")).unwrap();
    for sym in ["lfpp_field_sample", "lfpp_graph_distance", "lfpp_table_fit", "lfpp_last_error", "LFPP_STATUS_OK", "typedef struct LfppField LfppField"] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-Wall", "-Werror", concat!(env!("CARGO_MANIFEST_DIR"), "/include/lfpp.h")])
        .output()
    else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
