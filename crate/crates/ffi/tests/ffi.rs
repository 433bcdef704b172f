//! Drives the C ABI the way a foreign caller would: raw pointers, status
//! codes and explicit frees.

use std::ffi::{CStr, CString};
use std::ptr;

use povm_forge_ffi::*;

fn last_error() -> String {
    let msg = pf_last_error();
    assert!(!msg.is_null());
    unsafe { CStr::from_ptr(msg) }.to_string_lossy().into_owned()
}

fn povm(spec: &str, truncation: usize) -> *mut PfPovm {
    let spec = CString::new(spec).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { pf_povm_from_spec(spec.as_ptr(), truncation, &mut out) };
    assert_eq!(status, PfStatus::Ok);
    assert!(!out.is_null());
    out
}

#[test]
fn apd_diagonals_cross_the_boundary() {
    let p = povm("apd:0.5", 4);
    unsafe {
        assert_eq!(pf_povm_outcomes(p), 2);
        assert_eq!(pf_povm_truncation(p), 4);
        let mut diag = [0.0; 5];
        assert_eq!(pf_povm_diag(p, 0, diag.as_mut_ptr(), diag.len()), PfStatus::Ok);
        assert_eq!(diag, [1.0, 0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(pf_povm_diag(p, 0, diag.as_mut_ptr(), 3), PfStatus::DimensionMismatch);
        assert_eq!(pf_povm_diag(p, 7, diag.as_mut_ptr(), diag.len()), PfStatus::Domain);
        pf_povm_free(p);
    }
}

#[test]
fn bad_arguments_report_codes_and_messages() {
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(pf_povm_from_spec(ptr::null(), 4, &mut out), PfStatus::NullPointer);
        let spec = CString::new("laser:3").unwrap();
        assert_eq!(pf_povm_from_spec(spec.as_ptr(), 4, &mut out), PfStatus::Parse);
        assert!(out.is_null());
        assert!(last_error().contains("laser"));
        let spec = CString::new("apd:1.5").unwrap();
        assert_eq!(pf_povm_from_spec(spec.as_ptr(), 4, &mut out), PfStatus::Domain);
        assert_eq!(pf_povm_from_spec(spec.as_ptr(), 4, ptr::null_mut()), PfStatus::NullPointer);

        // null handles are tolerated by the accessors and frees
        assert_eq!(pf_povm_outcomes(ptr::null()), 0);
        assert!(pf_reconstruction_residual(ptr::null()).is_nan());
        pf_povm_free(ptr::null_mut());
        pf_dataset_free(ptr::null_mut());
        pf_reconstruction_free(ptr::null_mut());
    }
}

#[test]
fn simulate_and_reconstruct() {
    let truth = povm("apd:0.5", 8);
    let means: Vec<f64> = (0..30).map(|i| 0.05 + 0.85 * i as f64 / 29.0).collect();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(pf_dataset_simulate(truth, means.as_ptr(), means.len(), 0, 1, &mut ds), PfStatus::Ok);
        assert_eq!(pf_dataset_probes(ds), 30);
        assert_eq!(pf_dataset_outcomes(ds), 2);
        let mut freq = vec![0.0; 60];
        assert_eq!(pf_dataset_frequencies(ds, freq.as_mut_ptr(), freq.len()), PfStatus::Ok);
        for row in freq.chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
        // ⟨n⟩ = 0.05 rarely clicks
        assert!(freq[0] > 0.97);

        let mut rec = ptr::null_mut();
        let status = pf_reconstruct(ds, 9, 0.0, &mut rec);
        assert!(matches!(status, PfStatus::Ok | PfStatus::NotConverged));
        assert!(!rec.is_null());
        assert!(pf_reconstruction_residual(rec) < 1e-3);
        assert!(pf_reconstruction_iterations(rec) > 0);
        let mut fitted = ptr::null_mut();
        assert_eq!(pf_reconstruction_povm(rec, &mut fitted), PfStatus::Ok);
        assert_eq!(pf_povm_truncation(fitted), 8);
        let mut diag = [0.0; 9];
        assert_eq!(pf_povm_diag(fitted, 1, diag.as_mut_ptr(), 9), PfStatus::Ok);
        assert!(diag.iter().all(|v| (0.0..=1.0 + 1e-9).contains(v)));

        pf_povm_free(fitted);
        pf_reconstruction_free(rec);
        pf_dataset_free(ds);
        pf_povm_free(truth);
    }
}

#[test]
fn sampled_data_is_reproducible() {
    let p = povm("builtin:paper-tmd-8bin,0.48", 40);
    let means = [0.5, 2.0, 5.0];
    let sample = |seed| unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(pf_dataset_simulate(p, means.as_ptr(), 3, 1000, seed, &mut ds), PfStatus::Ok);
        let mut freq = vec![0.0; 27];
        assert_eq!(pf_dataset_frequencies(ds, freq.as_mut_ptr(), 27), PfStatus::Ok);
        pf_dataset_free(ds);
        freq
    };
    assert_eq!(sample(7), sample(7));
    assert_ne!(sample(7), sample(8));
    unsafe { pf_povm_free(p) };
}

#[test]
fn calibration_and_version() {
    let mut power = 0.0;
    assert_eq!(unsafe { pf_mean_photon_to_power(1.0, 800e-9, 1e5, &mut power) }, PfStatus::Ok);
    assert!((power - 2.483e-14).abs() / 2.483e-14 < 1e-3);
    assert_eq!(unsafe { pf_mean_photon_to_power(-1.0, 800e-9, 1e5, &mut power) }, PfStatus::Domain);
    let version = unsafe { CStr::from_ptr(pf_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_abi() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/povm_forge.h")).unwrap();
    for name in [
        "pf_last_error",
        "pf_povm_from_spec",
        "pf_povm_diag",
        "pf_dataset_simulate",
        "pf_dataset_frequencies",
        "pf_reconstruct",
        "pf_reconstruction_povm",
        "pf_mean_photon_to_power",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing");
    }
    assert!(header.contains("PF_STATUS_NOT_CONVERGED = 8"));
    assert!(header.contains("typedef struct PfPovm PfPovm;"));
}
