use std::ffi::CStr;
use std::ptr;

use momo_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(momo_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn recurrent_linear_matches_batch_causal() {
    let (n, d, dv) = (5, 3, 2);
    let q: Vec<f64> = (0..n * d).map(|i| ((i * 7 % 11) as f64) / 11.0 - 0.4).collect();
    let k: Vec<f64> = (0..n * d).map(|i| ((i * 5 % 13) as f64) / 13.0 - 0.5).collect();
    let v: Vec<f64> = (0..n * dv).map(|i| (i as f64).sin()).collect();
    let mut batch = vec![0.0; n * dv];
    let st = unsafe {
        momo_attention(
            MomoAttentionKind::Momentum, true, q.as_ptr(), k.as_ptr(), v.as_ptr(), 1, n, d, dv, 0.4, 0.7,
            MomoFeatureMap::EluPlusOne, 1e-6, batch.as_mut_ptr(),
        )
    };
    assert_eq!(st, MomoStatus::Ok);

    let mut h = ptr::null_mut();
    assert_eq!(unsafe { momo_recurrent_state_new(d, dv, &mut h) }, MomoStatus::Ok);
    let mut out = vec![0.0; dv];
    for i in 0..n {
        let st = unsafe {
            momo_recurrent_state_step_momentum(
                h, q[i * d..].as_ptr(), k[i * d..].as_ptr(), v[i * dv..].as_ptr(), 0.4, 0.7,
                MomoFeatureMap::EluPlusOne, 1e-6, out.as_mut_ptr(),
            )
        };
        assert_eq!(st, MomoStatus::Ok);
        for c in 0..dv {
            assert!((out[c] - batch[i * dv + c]).abs() <= 1e-10);
        }
    }
    assert_eq!(unsafe { momo_recurrent_state_index(h) }, n);
    assert_eq!(unsafe { momo_recurrent_state_aux_elements(h) }, 2 * d * dv + d);
    unsafe { momo_recurrent_state_free(h) };
}

#[test]
fn linear_step_and_batch_agree() {
    let (d, dv) = (2, 2);
    let q = [0.3, -0.2, 0.1, 0.5];
    let k = [0.7, 0.1, -0.4, 0.2];
    let v = [1.0, 2.0, -1.0, 0.5];
    let mut batch = [0.0; 4];
    let st = unsafe {
        momo_attention(
            MomoAttentionKind::Linear, true, q.as_ptr(), k.as_ptr(), v.as_ptr(), 1, 2, d, dv, 0.0, 0.0,
            MomoFeatureMap::EluPlusOne, 1e-6, batch.as_mut_ptr(),
        )
    };
    assert_eq!(st, MomoStatus::Ok);
    let mut h = ptr::null_mut();
    unsafe { momo_recurrent_state_new(d, dv, &mut h) };
    let mut out = [0.0; 2];
    for i in 0..2 {
        let st = unsafe {
            momo_recurrent_state_step_linear(
                h, q[i * d..].as_ptr(), k[i * d..].as_ptr(), v[i * dv..].as_ptr(), MomoFeatureMap::EluPlusOne, 1e-6,
                out.as_mut_ptr(),
            )
        };
        assert_eq!(st, MomoStatus::Ok);
        assert!((out[0] - batch[i * dv]).abs() <= 1e-12 && (out[1] - batch[i * dv + 1]).abs() <= 1e-12);
    }
    unsafe { momo_recurrent_state_free(h) };
}

#[test]
fn softmax_single_key_returns_value() {
    let q = [1.0, 2.0];
    let k = [0.5, -0.5];
    let v = [3.0, -4.0];
    let mut out = [0.0; 2];
    let st = unsafe {
        momo_attention(
            MomoAttentionKind::Softmax, false, q.as_ptr(), k.as_ptr(), v.as_ptr(), 1, 1, 2, 2, 0.0, 0.0,
            MomoFeatureMap::Identity, 0.0, out.as_mut_ptr(),
        )
    };
    assert_eq!(st, MomoStatus::Ok);
    assert_eq!(out, [3.0, -4.0]);
}

#[test]
fn null_pointers_are_reported() {
    let mut out = [0.0; 2];
    let st = unsafe { momo_recurrent_state_step_linear(ptr::null_mut(), ptr::null(), ptr::null(), ptr::null(), MomoFeatureMap::Identity, 0.0, out.as_mut_ptr()) };
    assert_eq!(st, MomoStatus::NullPointer);
    assert!(last_error().contains("state"));
    assert_eq!(unsafe { momo_optimal_momentum(0.1, 1.0, ptr::null_mut()) }, MomoStatus::NullPointer);
    assert_eq!(unsafe { momo_recurrent_state_new(2, 2, ptr::null_mut()) }, MomoStatus::NullPointer);
    unsafe {
        momo_recurrent_state_free(ptr::null_mut());
        momo_quadratic_free(ptr::null_mut());
    }
    assert_eq!(unsafe { momo_recurrent_state_index(ptr::null()) }, 0);
}

#[test]
fn optimal_momentum_and_domain_error() {
    let mut beta = 0.0;
    assert_eq!(unsafe { momo_optimal_momentum(1.0, 0.1, &mut beta) }, MomoStatus::Ok);
    let expect = (1.0 - 0.1f64.sqrt()).powi(2);
    assert!((beta - expect).abs() < 1e-15);
    assert_eq!(last_error(), "");
    assert_eq!(unsafe { momo_optimal_momentum(1.0, 2.0, &mut beta) }, MomoStatus::Domain);
    assert!(!last_error().is_empty());
}

#[test]
fn adaptive_value_is_projected() {
    let g1 = [1.0, 0.0];
    let g0 = [1.0, 0.0];
    let mut out = -1.0;
    assert_eq!(unsafe { momo_adaptive_momentum_value(g1.as_ptr(), g0.as_ptr(), 2, 1e-3, &mut out) }, MomoStatus::Ok);
    assert!((0.0..=1.0 - 1e-3).contains(&out));
}

#[test]
fn quadratic_heavy_ball_contracts() {
    let a = [1.0, 0.0, 0.0, 10.0];
    let b = [0.0, 0.0];
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { momo_quadratic_new(a.as_ptr(), b.as_ptr(), 2, &mut p) }, MomoStatus::Ok);
    let (mut nu, mut ell) = (0.0, 0.0);
    assert_eq!(unsafe { momo_quadratic_spectrum(p, &mut nu, &mut ell) }, MomoStatus::Ok);
    assert!((nu - 1.0).abs() < 1e-10 && (ell - 10.0).abs() < 1e-10);
    let iters = 100;
    let mut dist = vec![0.0; iters + 1];
    let x0 = [1.0, 1.0];
    let beta = (1.0 - 0.1f64.sqrt()).powi(2);
    assert_eq!(unsafe { momo_heavy_ball_run(p, x0.as_ptr(), 0.1, beta, iters, dist.as_mut_ptr()) }, MomoStatus::Ok);
    assert!((dist[0] - 2f64.sqrt()).abs() < 1e-12);
    assert!(dist[iters] < 1e-12);
    unsafe { momo_quadratic_free(p) };
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let a = [1.0, 2.0, 0.0, 1.0];
    let b = [0.0, 0.0];
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { momo_quadratic_new(a.as_ptr(), b.as_ptr(), 2, &mut p) }, MomoStatus::Domain);
    assert!(p.is_null());
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { momo_recurrent_state_new(0, 2, &mut h) }, MomoStatus::Dimension);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/momo.h")).unwrap();
    for name in [
        "momo_last_error_message",
        "momo_recurrent_state_new",
        "momo_recurrent_state_free",
        "momo_recurrent_state_step_linear",
        "momo_recurrent_state_step_momentum",
        "momo_attention",
        "momo_optimal_momentum",
        "momo_adaptive_momentum_value",
        "momo_quadratic_new",
        "momo_heavy_ball_run",
        "MOMO_STATUS_NULL_POINTER",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
