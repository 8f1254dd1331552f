//! C ABI over the numeric kernels: routing, calibration, neighbour retrieval,
//! trend slope, smoothing, metrics and base-model scoring.
//!
//! Every fallible function returns an [`LrStatus`]; on failure the message is
//! kept per thread and read back with [`lr_last_error`]. Handles are opaque
//! and must be released with their `_free` function. Pointer arguments must be
//! valid for the stated number of elements; a null pointer with a nonzero
//! length is reported as `LR_STATUS_NULL_POINTER`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lithoroute::data::WellLogSequence;
use lithoroute::metrics::{weighted_metrics, ConfusionStats};
use lithoroute::model::{confidence, load_classifier, BaseClassifier, ProbabilityVector};
use lithoroute::refine::{flying_point_ratio, refine_deterministic};
use lithoroute::router::{calibrate_threshold, coverage_curve, decide, threshold_grid, Verdict};
use lithoroute::tools::{ols_slope, retrieve_neighbors, ReferenceSet};
use lithoroute::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Model = 4,
    Io = 5,
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> LrStatus {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) | Error::Label(_) => LrStatus::InvalidArgument,
        Error::Model(_) => LrStatus::Model,
        Error::Io { .. } | Error::MissingArtifact { .. } => LrStatus::Io,
        Error::Data(_) | Error::Schema(_) | Error::Csv(_) | Error::Json(_) => LrStatus::Data,
        _ => LrStatus::Internal,
    }
}

struct Fail(LrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(LrStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LrStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LrStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Fail(LrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Fail(LrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    ptr.as_mut().ok_or_else(|| Fail(LrStatus::NullPointer, format!("{what} is null")))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Highest probability of a distribution over `k` classes.
///
/// # Safety
/// `probs` must point to `k` doubles and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn lr_confidence(probs: *const f64, k: usize, out_conf: *mut f64) -> LrStatus {
    guard(|| {
        let p = ProbabilityVector::new(slice(probs, k, "probs")?.to_vec())?;
        *out(out_conf, "out_conf")? = confidence(&p);
        Ok(())
    })
}

/// 1 when the base prediction is accepted (`confidence >= threshold`), 0 when
/// the depth is escalated.
#[no_mangle]
pub extern "C" fn lr_decide(confidence: f64, threshold: f64) -> i32 {
    i32::from(decide(confidence, threshold).verdict == Verdict::Base)
}

/// Coverage and selective accuracy at `grid_points` evenly spaced thresholds.
/// `correct[i]` is nonzero when sample `i` was classified correctly.
///
/// # Safety
/// `conf` and `correct` hold `n` elements; each output holds `grid_points`.
#[no_mangle]
pub unsafe extern "C" fn lr_coverage_curve(
    conf: *const f64,
    correct: *const u8,
    n: usize,
    grid_points: usize,
    out_threshold: *mut f64,
    out_coverage: *mut f64,
    out_accuracy: *mut f64,
) -> LrStatus {
    guard(|| {
        let conf = slice(conf, n, "conf")?;
        let correct: Vec<bool> = slice(correct, n, "correct")?.iter().map(|&c| c != 0).collect();
        let curve = coverage_curve(conf, &correct, &threshold_grid(grid_points))?;
        let th = slice_mut(out_threshold, grid_points, "out_threshold")?;
        let cov = slice_mut(out_coverage, grid_points, "out_coverage")?;
        let acc = slice_mut(out_accuracy, grid_points, "out_accuracy")?;
        for (i, p) in curve.points.iter().enumerate() {
            th[i] = p.threshold;
            cov[i] = p.coverage;
            acc[i] = p.accuracy;
        }
        Ok(())
    })
}

/// Smallest grid threshold whose selective accuracy is within `epsilon` of
/// the best.
///
/// # Safety
/// `conf` and `correct` hold `n` elements; `out_tau` points to one double.
#[no_mangle]
pub unsafe extern "C" fn lr_calibrate_threshold(
    conf: *const f64,
    correct: *const u8,
    n: usize,
    grid_points: usize,
    epsilon: f64,
    out_tau: *mut f64,
) -> LrStatus {
    guard(|| {
        let conf = slice(conf, n, "conf")?;
        let correct: Vec<bool> = slice(correct, n, "correct")?.iter().map(|&c| c != 0).collect();
        let curve = coverage_curve(conf, &correct, &threshold_grid(grid_points))?;
        *out(out_tau, "out_tau")? = calibrate_threshold(&curve, epsilon, n)?.threshold;
        Ok(())
    })
}

/// Labelled reference points for exact nearest-neighbour search.
pub struct LrReferenceSet(ReferenceSet);

/// Empty reference set of dimension `dim`; null when `dim` is 0.
#[no_mangle]
pub extern "C" fn lr_reference_new(dim: usize) -> *mut LrReferenceSet {
    if dim == 0 {
        set_error("dimension must be positive");
        return std::ptr::null_mut();
    }
    Box::into_raw(Box::new(LrReferenceSet(ReferenceSet::new(dim))))
}

/// # Safety
/// `set` comes from [`lr_reference_new`]; `point` holds `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn lr_reference_push(
    set: *mut LrReferenceSet,
    point: *const f64,
    dim: usize,
    label: u32,
) -> LrStatus {
    guard(|| {
        let set = out(set, "set")?;
        set.0.push(slice(point, dim, "point")?, label as usize)?;
        Ok(())
    })
}

/// # Safety
/// `set` comes from [`lr_reference_new`] or is null.
#[no_mangle]
pub unsafe extern "C" fn lr_reference_len(set: *const LrReferenceSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `set` comes from [`lr_reference_new`] or is null; it is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lr_reference_free(set: *mut LrReferenceSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// The `k` nearest reference points to `query` in Euclidean distance, nearest
/// first, ties by insertion index. Fewer than `k` are returned when the set
/// is smaller; `out_count` receives the number written.
///
/// # Safety
/// `query` holds `dim` doubles; `out_index`, `out_label` and `out_distance`
/// hold `k` elements each.
#[no_mangle]
pub unsafe extern "C" fn lr_retrieve_neighbors(
    set: *const LrReferenceSet,
    query: *const f64,
    dim: usize,
    k: usize,
    out_index: *mut usize,
    out_label: *mut u32,
    out_distance: *mut f64,
    out_count: *mut usize,
) -> LrStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| Fail(LrStatus::NullPointer, "set is null".into()))?;
        let found = retrieve_neighbors(slice(query, dim, "query")?, &set.0, k)?;
        let idx = slice_mut(out_index, k, "out_index")?;
        let lab = slice_mut(out_label, k, "out_label")?;
        let dist = slice_mut(out_distance, k, "out_distance")?;
        for (i, n) in found.neighbors.iter().enumerate() {
            idx[i] = n.index;
            lab[i] = n.label as u32;
            dist[i] = n.distance;
        }
        *out(out_count, "out_count")? = found.neighbors.len();
        Ok(())
    })
}

/// Least-squares slope of `values` against their index.
///
/// # Safety
/// `values` holds `n` doubles; `out_slope` points to one.
#[no_mangle]
pub unsafe extern "C" fn lr_ols_slope(values: *const f64, n: usize, out_slope: *mut f64) -> LrStatus {
    guard(|| {
        *out(out_slope, "out_slope")? = ols_slope(slice(values, n, "values")?);
        Ok(())
    })
}

/// Removes runs shorter than `min_run` by relabelling them from a neighbour.
///
/// # Safety
/// `labels` and `out_labels` hold `n` elements (they may alias).
#[no_mangle]
pub unsafe extern "C" fn lr_smooth_labels(
    labels: *const u32,
    n: usize,
    min_run: usize,
    out_labels: *mut u32,
) -> LrStatus {
    guard(|| {
        if min_run == 0 {
            return Err(invalid("min_run must be positive"));
        }
        let input: Vec<usize> = slice(labels, n, "labels")?.iter().map(|&l| l as usize).collect();
        let smoothed = refine_deterministic(&input, min_run);
        for (o, s) in slice_mut(out_labels, n, "out_labels")?.iter_mut().zip(smoothed) {
            *o = s as u32;
        }
        Ok(())
    })
}

/// Fraction of depths whose label differs from both neighbours.
///
/// # Safety
/// `labels` holds `n` elements; `out_ratio` points to one double.
#[no_mangle]
pub unsafe extern "C" fn lr_flying_point_ratio(labels: *const u32, n: usize, out_ratio: *mut f64) -> LrStatus {
    guard(|| {
        let input: Vec<usize> = slice(labels, n, "labels")?.iter().map(|&l| l as usize).collect();
        *out(out_ratio, "out_ratio")? = flying_point_ratio(&input);
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LrWeightedMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Support-weighted precision, recall and F1 of a `k`×`k` confusion matrix
/// given row-major with rows as true classes.
///
/// # Safety
/// `counts` holds `k * k` elements; `out_metrics` points to one struct.
#[no_mangle]
pub unsafe extern "C" fn lr_weighted_metrics(
    counts: *const u64,
    k: usize,
    out_metrics: *mut LrWeightedMetrics,
) -> LrStatus {
    guard(|| {
        let len = k.checked_mul(k).ok_or_else(|| invalid("class count overflows"))?;
        let cm = ConfusionStats::from_counts(k, slice(counts, len, "counts")?.to_vec())?;
        let m = weighted_metrics(&cm)?;
        *out(out_metrics, "out_metrics")? = LrWeightedMetrics {
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        };
        Ok(())
    })
}

/// A persisted base classifier.
pub struct LrModel(Box<dyn BaseClassifier>);

/// Loads a model file written by the training stage; null on failure.
///
/// # Safety
/// `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lr_model_load(path: *const c_char) -> *mut LrModel {
    let mut model = None;
    let status = guard(|| {
        if path.is_null() {
            return Err(Fail(LrStatus::NullPointer, "path is null".into()));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        model = Some(load_classifier(Path::new(p))?);
        Ok(())
    });
    match (status, model) {
        (LrStatus::Ok, Some(m)) => Box::into_raw(Box::new(LrModel(m))),
        _ => std::ptr::null_mut(),
    }
}

/// # Safety
/// `model` comes from [`lr_model_load`] or is null.
#[no_mangle]
pub unsafe extern "C" fn lr_model_num_classes(model: *const LrModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.schema().num_classes())
}

/// # Safety
/// `model` comes from [`lr_model_load`] or is null.
#[no_mangle]
pub unsafe extern "C" fn lr_model_num_channels(model: *const LrModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.channel_names().len())
}

/// Class probabilities for every depth of one well. `values` is row-major
/// `[depth][channel]`, already normalized with the training statistics, with
/// channels in the model's order. Writes `n_depths * num_classes` doubles.
///
/// # Safety
/// `values` holds `n_depths * n_channels` doubles and `out_probs`
/// `n_depths * lr_model_num_classes(model)`.
#[no_mangle]
pub unsafe extern "C" fn lr_model_predict(
    model: *const LrModel,
    values: *const f64,
    n_depths: usize,
    n_channels: usize,
    out_probs: *mut f64,
) -> LrStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| Fail(LrStatus::NullPointer, "model is null".into()))?.0;
        let names = model.channel_names().to_vec();
        if n_channels != names.len() {
            return Err(invalid(format!("model expects {} channels, got {n_channels}", names.len())));
        }
        let len = n_depths.checked_mul(n_channels).ok_or_else(|| invalid("size overflows"))?;
        let rows = slice(values, len, "values")?;
        let channels: Vec<Vec<f64>> = (0..n_channels)
            .map(|c| (0..n_depths).map(|t| rows[t * n_channels + c]).collect())
            .collect();
        let k = model.schema().num_classes();
        let seq = WellLogSequence::new(
            "ffi",
            (0..n_depths).map(|t| t as f64).collect(),
            names,
            channels,
            None,
            1.0,
            k,
        )?;
        let probs = model.predict_sequence(&seq)?;
        let dst = slice_mut(out_probs, n_depths * k, "out_probs")?;
        for (t, p) in probs.iter().enumerate() {
            dst[t * k..(t + 1) * k].copy_from_slice(p.as_slice());
        }
        Ok(())
    })
}

/// # Safety
/// `model` comes from [`lr_model_load`] or is null; it is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lr_model_free(model: *mut LrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
