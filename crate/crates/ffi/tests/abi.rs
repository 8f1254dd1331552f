use std::ffi::{CStr, CString};

use lithoroute::data::LabelSchema;
use lithoroute::model::BaseModel;
use lithoroute_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lr_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn routing_boundary_is_inclusive() {
    assert_eq!(lr_decide(0.7, 0.7), 1);
    assert_eq!(lr_decide(0.7 - 1e-12, 0.7), 0);
    assert_eq!(lr_decide(0.0, 0.0), 1);
}

#[test]
fn coverage_curve_through_abi() {
    let conf = [0.9, 0.6, 0.2, 0.55];
    let ok = [1u8, 0, 1, 1];
    let (mut th, mut cov, mut acc) = ([0.0; 11], [0.0; 11], [0.0; 11]);
    let st = unsafe {
        lr_coverage_curve(conf.as_ptr(), ok.as_ptr(), 4, 11, th.as_mut_ptr(), cov.as_mut_ptr(), acc.as_mut_ptr())
    };
    assert_eq!(st, LrStatus::Ok);
    assert_eq!(cov[0], 1.0);
    assert!(cov.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!((th[5], cov[5], acc[5]), (0.5, 0.75, 2.0 / 3.0));
}

#[test]
fn mismatched_lengths_report_errors() {
    let mut tau = 0.0;
    let st = unsafe { lr_calibrate_threshold(std::ptr::null(), std::ptr::null(), 0, 101, 0.01, &mut tau) };
    assert_eq!(st, LrStatus::InvalidArgument);
    assert!(last_error().contains("at least one sample"));

    let st = unsafe { lr_ols_slope(std::ptr::null(), 3, &mut tau) };
    assert_eq!(st, LrStatus::NullPointer);
    let vals = [1.0, 2.0];
    assert_eq!(unsafe { lr_ols_slope(vals.as_ptr(), 2, &mut tau) }, LrStatus::Ok);
    assert_eq!(last_error(), "");
}

#[test]
fn neighbours_and_handles() {
    let set = lr_reference_new(3);
    assert!(!set.is_null());
    for i in 0..10u32 {
        let p = [i as f64, 0.0, 0.0];
        assert_eq!(unsafe { lr_reference_push(set, p.as_ptr(), 3, i % 2) }, LrStatus::Ok);
    }
    assert_eq!(unsafe { lr_reference_len(set) }, 10);
    let q = [4.4, 0.0, 0.0];
    let (mut idx, mut lab, mut dist, mut n) = ([0usize; 4], [0u32; 4], [0.0; 4], 0usize);
    let st = unsafe {
        lr_retrieve_neighbors(set, q.as_ptr(), 3, 4, idx.as_mut_ptr(), lab.as_mut_ptr(), dist.as_mut_ptr(), &mut n)
    };
    assert_eq!(st, LrStatus::Ok);
    assert_eq!((n, idx), (4, [4, 5, 3, 6]));
    assert_eq!(lab, [0, 1, 1, 0]);
    unsafe { lr_reference_free(set) };
    assert!(lr_reference_new(0).is_null());
}

#[test]
fn smoothing_and_metrics() {
    let mut labels = [0u32, 0, 1, 0, 0, 2, 2];
    let mut fpr = 0.0;
    assert_eq!(unsafe { lr_flying_point_ratio(labels.as_ptr(), 7, &mut fpr) }, LrStatus::Ok);
    assert!((fpr - 1.0 / 7.0).abs() < 1e-15);
    let p = labels.as_mut_ptr();
    assert_eq!(unsafe { lr_smooth_labels(p, 7, 2, p) }, LrStatus::Ok);
    assert_eq!(labels, [0, 0, 0, 0, 0, 2, 2]);
    assert_eq!(unsafe { lr_smooth_labels(p, 7, 0, p) }, LrStatus::InvalidArgument);

    let cm = [8u64, 2, 3, 7];
    let mut m = LrWeightedMetrics::default();
    assert_eq!(unsafe { lr_weighted_metrics(cm.as_ptr(), 2, &mut m) }, LrStatus::Ok);
    // per class: p = (8/11, 7/9), r = (0.8, 0.7), support 10 each
    let f = |p: f64, r: f64| 2.0 * p * r / (p + r);
    let expected = 0.5 * f(8.0 / 11.0, 0.8) + 0.5 * f(7.0 / 9.0, 0.7);
    assert!((m.f1 - expected).abs() < 1e-12);
    assert!((m.recall - 0.75).abs() < 1e-12);
}

#[test]
fn model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    let schema = LabelSchema::new(["A", "B", "C"]).unwrap();
    BaseModel::zeros(schema, vec!["x".into(), "y".into()], 4, 3).save(&path).unwrap();

    let c = CString::new(path.to_str().unwrap()).unwrap();
    let model = unsafe { lr_model_load(c.as_ptr()) };
    assert!(!model.is_null());
    assert_eq!(unsafe { (lr_model_num_classes(model), lr_model_num_channels(model)) }, (3, 2));
    let values = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let mut probs = [0.0; 9];
    let st = unsafe { lr_model_predict(model, values.as_ptr(), 3, 2, probs.as_mut_ptr()) };
    assert_eq!(st, LrStatus::Ok);
    assert!(probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
    let st = unsafe { lr_model_predict(model, values.as_ptr(), 2, 3, probs.as_mut_ptr()) };
    assert_eq!(st, LrStatus::InvalidArgument);
    unsafe { lr_model_free(model) };

    let missing = CString::new("/nonexistent/model.txt").unwrap();
    assert!(unsafe { lr_model_load(missing.as_ptr()) }.is_null());
    assert!(last_error().contains("nonexistent"));
}
