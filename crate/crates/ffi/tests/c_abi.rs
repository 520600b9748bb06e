use std::ffi::{CStr, CString};
use std::ptr;

use heatrisk_ffi::*;

fn last_error() -> String {
    let p = hr_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn dep(alpha: f64, phi: f64, nu: f64, v_r: f64) -> *mut HrDependenceModel {
    let mut h = ptr::null_mut();
    let st = unsafe { hr_dependence_new(alpha, phi, nu, v_r, &mut h) };
    assert_eq!(st, HrStatus::Ok);
    h
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(hr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_pointers_are_reported() {
    let mut v = 0.0;
    let st = unsafe { hr_dependence_chi(ptr::null(), 10.0, 0.0, &mut v) };
    assert_eq!(st, HrStatus::NullPointer);
    assert!(last_error().contains("model"));
    let st = unsafe { hr_marginal_load(ptr::null(), ptr::null_mut()) };
    assert_eq!(st, HrStatus::NullPointer);
    // free functions accept null
    unsafe {
        hr_marginal_free(ptr::null_mut());
        hr_dependence_free(ptr::null_mut());
        hr_batch_free(ptr::null_mut());
    }
    assert_eq!(unsafe { hr_batch_n_sites(ptr::null()) }, 0);
}

#[test]
fn missing_file_is_an_io_error() {
    let path = CString::new("/nonexistent/marginal.json").unwrap();
    let mut h = ptr::null_mut();
    let st = unsafe { hr_marginal_load(path.as_ptr(), &mut h) };
    assert_eq!(st, HrStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("/nonexistent/marginal.json"));
    hr_clear_error();
    assert!(hr_last_error_message().is_null());
}

#[test]
fn invalid_variogram_rejected() {
    let mut h = ptr::null_mut();
    let st = unsafe { hr_dependence_new(1.0, -5.0, 1.0, 2.0, &mut h) };
    assert_eq!(st, HrStatus::InvalidInput);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn chi_matches_closed_form() {
    // with ν = 1/2 the Matérn variogram is α(1 − e^{−√2 h/φ})
    let h = dep(2.0, 100.0, 0.5, 1.0);
    let mut chi = 0.0;
    assert_eq!(unsafe { hr_dependence_chi(h, 100.0, 0.0, &mut chi) }, HrStatus::Ok);
    let gamma = 2.0 * (1.0 - (-std::f64::consts::SQRT_2).exp());
    let phi = simpson_normal_cdf(gamma.sqrt() / 2.0);
    assert!((chi - (2.0 - 2.0 * phi)).abs() < 1e-7, "{chi}");
    let mut chi0 = 0.0;
    unsafe { hr_dependence_chi(h, 0.0, 0.0, &mut chi0) };
    assert!((chi0 - 1.0).abs() < 1e-12);
    let mut v_r = 0.0;
    unsafe { hr_dependence_risk_threshold(h, &mut v_r) };
    assert_eq!(v_r, 1.0);
    unsafe { hr_dependence_free(h) };
}

/// Φ by Simpson integration of the density.
fn simpson_normal_cdf(x: f64) -> f64 {
    let n = 200_000;
    let a = -12.0;
    let dx = (x - a) / n as f64;
    let f = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(a) + f(x);
    for k in 1..n {
        let t = a + k as f64 * dx;
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(t);
    }
    s * dx / 3.0
}

#[test]
fn simulate_and_estimate() {
    let d = dep(1.5, 150.0, 1.0, 1.0);
    let coords = [0.0, 0.0, 50.0, 0.0, 0.0, 80.0, 120.0, 40.0];
    let mut batch = ptr::null_mut();
    let st = unsafe { hr_simulate(d, coords.as_ptr(), 4, 0.0, 2000, 50, 9, -1, &mut batch) };
    assert_eq!(st, HrStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { hr_batch_n_sites(batch) }, 4);
    assert_eq!(unsafe { hr_batch_n_profiles(batch) }, 2000);

    let tp = [50.0; 4];
    let mut e = HrEventEstimate::default();
    assert_eq!(unsafe { hr_prob_event(batch, tp.as_ptr(), 4, 1.0, &mut e) }, HrStatus::Ok);
    // Pr{∃ s: X(s) > 50} lies between the single-site and the union bound
    assert!(e.prob >= 1.0 / 50.0 * 0.9 && e.prob <= 4.0 / 50.0 * 1.1, "{e:?}");
    assert!(e.prob_se > 0.0 && e.prob_se < e.prob);
    assert!(e.coverage_given_event > 0.25 - 1e-12 && e.coverage_given_event <= 1.0);
    assert!((e.coverage - e.prob * e.coverage_given_event).abs() < 1e-12);

    // wrong number of thresholds
    let st = unsafe { hr_prob_event(batch, tp.as_ptr(), 3, 1.0, &mut e) };
    assert_eq!(st, HrStatus::OutOfRange);
    assert!(last_error().contains("3 thresholds"));

    // identical seeds give identical estimates
    let mut again = ptr::null_mut();
    unsafe { hr_simulate(d, coords.as_ptr(), 4, 0.0, 2000, 50, 9, -1, &mut again) };
    let mut e2 = HrEventEstimate::default();
    unsafe { hr_prob_event(again, tp.as_ptr(), 4, 1.0, &mut e2) };
    assert_eq!(e.prob.to_bits(), e2.prob.to_bits());

    unsafe {
        hr_batch_free(batch);
        hr_batch_free(again);
        hr_dependence_free(d);
    }
}

#[test]
fn bad_reference_site_is_reported() {
    let d = dep(1.5, 150.0, 1.0, 1.0);
    let coords = [0.0, 0.0, 50.0, 0.0];
    let mut batch = ptr::null_mut();
    let st = unsafe { hr_simulate(d, coords.as_ptr(), 2, 0.0, 10, 5, 1, 7, &mut batch) };
    assert_ne!(st, HrStatus::Ok);
    assert!(batch.is_null());
    unsafe { hr_dependence_free(d) };
}

#[test]
fn errors_are_thread_local() {
    let mut v = 0.0;
    unsafe { hr_dependence_chi(ptr::null(), 1.0, 0.0, &mut v) };
    let other = std::thread::spawn(|| hr_last_error_message().is_null()).join().unwrap();
    assert!(other);
    assert!(!hr_last_error_message().is_null());
}
