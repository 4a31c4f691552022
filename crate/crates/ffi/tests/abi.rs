use std::ffi::CString;
use std::process::Command;
use std::ptr;

use puma_lab_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { puma_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn zm(d: usize) -> *mut PumaDist {
    let mut dist = ptr::null_mut();
    assert_eq!(unsafe { puma_dist_zm(4, d, 0.1, 0, &mut dist) }, PumaStatus::Ok);
    dist
}

#[test]
fn posterior_of_y_given_latents() {
    let dist = zm(2);
    unsafe {
        assert_eq!(puma_dist_len(dist), 3);
        assert_eq!(puma_dist_vocab(dist), 4);
        let mut out = [0.0; 4];
        // Latents (2, 0): Y = 2 with probability 0.9.
        let ids = [2u32, 0, 4];
        assert_eq!(puma_exact_posterior(dist, ids.as_ptr(), 3, 2, out.as_mut_ptr(), 4), PumaStatus::Ok);
        assert!((out[2] - 0.9).abs() < 1e-12);
        assert!((out[0] - 0.1 / 3.0).abs() < 1e-12);
        assert_eq!(puma_exact_posterior(dist, ids.as_ptr(), 3, 2, out.as_mut_ptr(), 3), PumaStatus::BufferTooSmall);
        let bad = [1u32, 0, 4];
        assert_eq!(puma_exact_posterior(dist, bad.as_ptr(), 3, 2, out.as_mut_ptr(), 4), PumaStatus::ImpossibleContext);
        assert!(last_error().contains("impossible context"));
        puma_dist_free(dist);
    }
}

#[test]
fn table_build_and_marginal_check() {
    let tokens = [0u32, 0, 1, 1];
    let probs = [0.5, 0.5];
    let mut dist = ptr::null_mut();
    unsafe {
        assert_eq!(puma_dist_table(2, 2, tokens.as_ptr(), probs.as_ptr(), 2, &mut dist), PumaStatus::Ok);
        let (mut tv, mut passed) = (1.0, false);
        assert_eq!(puma_verify_marginal(dist, PumaPolicy::Margin, 1, 2, &mut tv, &mut passed), PumaStatus::Ok);
        assert!(passed && tv < 1e-10);
        puma_dist_free(dist);
        let bad = [0.5, -0.1];
        let mut d2 = ptr::null_mut();
        assert_eq!(puma_dist_table(2, 2, tokens.as_ptr(), bad.as_ptr(), 2, &mut d2), PumaStatus::InvalidArgument);
        assert!(d2.is_null());
    }
}

#[test]
fn null_handles_are_reported() {
    let mut out = 0.0;
    unsafe {
        assert_eq!(puma_chernoff_information(ptr::null(), ptr::null(), 2, &mut out), PumaStatus::NullPointer);
        assert!(last_error().contains("null"));
        assert_eq!(puma_dist_len(ptr::null()), 0);
        puma_dist_free(ptr::null_mut());
        puma_model_free(ptr::null_mut());
    }
}

#[test]
fn chernoff_and_trajectory_distance() {
    let p = [0.5, 0.5];
    let mut c = -1.0;
    unsafe {
        assert_eq!(puma_chernoff_information(p.as_ptr(), p.as_ptr(), 2, &mut c), PumaStatus::Ok);
        assert_eq!(c, 0.0);
        let (a, b) = ([0usize, 1, 2], [2usize, 1, 0]);
        let mut d = 0.0;
        assert_eq!(puma_trajectory_distance(a.as_ptr(), b.as_ptr(), 3, &mut d), PumaStatus::Ok);
        assert!((d - 4.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn model_train_save_load() {
    let dist = zm(2);
    let mut model = ptr::null_mut();
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.txt").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(puma_model_new(3, 4, 0.5, &mut model), PumaStatus::Ok);
        let mut loss = 0.0;
        assert_eq!(puma_model_train_puma(model, dist, 200, 16, 7, &mut loss), PumaStatus::Ok);
        assert!(loss.is_finite());
        let ids = [2u32, 2, 4];
        let mut probs = [0.0; 4];
        assert_eq!(puma_model_forward(model, ids.as_ptr(), 3, 2, probs.as_mut_ptr(), 4), PumaStatus::Ok);
        // (2, 2) gives Y = 0 noise-free; training should favour it.
        assert!(probs[0] > 0.5, "{probs:?}");
        assert_eq!(puma_model_forward(model, ids.as_ptr(), 3, 0, probs.as_mut_ptr(), 4), PumaStatus::InvalidArgument);
        assert_eq!(puma_model_save(model, path.as_ptr()), PumaStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(puma_model_load(path.as_ptr(), &mut loaded), PumaStatus::Ok);
        let mut again = [0.0; 4];
        puma_model_forward(model, ids.as_ptr(), 3, 2, probs.as_mut_ptr(), 4);
        assert_eq!(puma_model_forward(loaded, ids.as_ptr(), 3, 2, again.as_mut_ptr(), 4), PumaStatus::Ok);
        assert_eq!(probs, again);
        let missing = CString::new("/nonexistent/m.txt").unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(puma_model_load(missing.as_ptr(), &mut none), PumaStatus::Io);
        puma_model_free(model);
        puma_model_free(loaded);
        puma_dist_free(dist);
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "puma_lab.h"
int main(void) {
    PumaDist *d = NULL;
    PumaStatus s = puma_dist_zm(4, 2, 0.1, 0, &d);
    double out[4];
    uint32_t ids[3] = {0, 0, 4};
    s = puma_exact_posterior(d, ids, 3, 2, out, 4);
    char msg[64];
    puma_last_error(msg, sizeof msg);
    puma_dist_free(d);
    return s == PUMA_STATUS_OK ? 0 : (int)PUMA_POLICY_MAX_PROB;
}
"#,
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
}
