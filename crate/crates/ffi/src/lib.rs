//! C ABI for the hoi-anomaly library.
//!
//! The surface follows the usual opaque-handle pattern: models and
//! explanations are heap-allocated behind pointers, every fallible call
//! returns a [`HoianomStatus`], and the most recent error message for the
//! calling thread is available from [`hoianom_last_error_message`]. The
//! matching header is generated into `include/hoianom.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;

use hoi_anomaly::detector::{self, FrameScore, NormalityModel, TrainingConfig};
use hoi_anomaly::explain::{self, Explanation};
use hoi_anomaly::gmm::EmConfig;
use hoi_anomaly::hoi::{HoiVector, Vocabulary};
use hoi_anomaly::io;

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoianomStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument value was rejected before any work started.
    InvalidArgument = 2,
    /// The filesystem failed.
    IoError = 3,
    /// Input data or model contents failed validation.
    DataError = 4,
}

/// Opaque fitted normality model.
pub struct HoianomModel {
    inner: NormalityModel,
}

/// Opaque explanation of one detection.
pub struct HoianomExplanation {
    inner: Explanation,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &hoi_anomaly::Error) -> HoianomStatus {
    match err {
        hoi_anomaly::Error::Io { .. } => HoianomStatus::IoError,
        _ => HoianomStatus::DataError,
    }
}

fn fail(err: hoi_anomaly::Error) -> HoianomStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

fn invalid(message: &str) -> HoianomStatus {
    set_error(message);
    HoianomStatus::InvalidArgument
}

fn null_argument(name: &str) -> HoianomStatus {
    set_error(&format!("{name} must not be null"));
    HoianomStatus::NullArgument
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for the call.
unsafe fn path_arg(ptr: *const c_char, name: &str) -> Result<PathBuf, HoianomStatus> {
    if ptr.is_null() {
        return Err(null_argument(name));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(invalid(&format!("{name} is not valid UTF-8"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hoianom_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last error raised on this thread. The pointer stays valid
/// until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn hoianom_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a model file written by `hoianom fit` or [`hoianom_model_save`].
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hoianom_model_load(
    path: *const c_char,
    out: *mut *mut HoianomModel,
) -> HoianomStatus {
    if out.is_null() {
        return null_argument("out");
    }
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    match io::load_model(&path) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(HoianomModel { inner }));
            HoianomStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Fits a model from a JSONL training stream and two vocabulary files.
/// `m_override` of 0 selects the component count by the BIC elbow over
/// `[m_min, m_max]`.
///
/// # Safety
/// All path pointers must be NUL-terminated strings; `out` must point to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hoianom_model_fit_jsonl(
    train_path: *const c_char,
    interactions_path: *const c_char,
    objects_path: *const c_char,
    variance_threshold: f64,
    m_min: usize,
    m_max: usize,
    m_override: usize,
    seed: u64,
    out: *mut *mut HoianomModel,
) -> HoianomStatus {
    if out.is_null() {
        return null_argument("out");
    }
    let train = match path_arg(train_path, "train_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let interactions = match path_arg(interactions_path, "interactions_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let objects = match path_arg(objects_path, "objects_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return invalid("variance_threshold outside (0, 1]");
    }
    if m_min == 0 || m_min > m_max {
        return invalid("component range is empty");
    }

    let result = (|| {
        let vocab = Vocabulary::load(&interactions, &objects)?;
        let frames = io::read_hoi_jsonl(&train, &vocab.layout())?;
        let config = TrainingConfig {
            variance_threshold,
            m_min,
            m_max,
            m_override: (m_override > 0).then_some(m_override),
            em: (&EmConfig {
                seed,
                ..EmConfig::default()
            })
                .into(),
        };
        NormalityModel::fit(&frames, vocab, &config)
    })();
    match result {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(HoianomModel { inner }));
            HoianomStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `model` must be a live handle from this library; `path` a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn hoianom_model_save(
    model: *const HoianomModel,
    path: *const c_char,
) -> HoianomStatus {
    if model.is_null() {
        return null_argument("model");
    }
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match io::save_model(&(*model).inner, &path) {
        Ok(()) => HoianomStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be a pointer returned by a load or fit call, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hoianom_model_free(model: *mut HoianomModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Flat HOI vector length the model expects (`D`). Returns 0 on null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hoianom_model_input_dim(model: *const HoianomModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.layout().dim()
}

/// Reduced (PCA) dimension. Returns 0 on null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hoianom_model_reduced_dim(model: *const HoianomModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.pca().reduced_dim()
}

/// Mixture component count. Returns 0 on null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hoianom_model_component_count(model: *const HoianomModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.gmm().component_count()
}

unsafe fn hoi_from_raw(
    model: &NormalityModel,
    values: *const f64,
    len: usize,
) -> Result<HoiVector, HoianomStatus> {
    if values.is_null() {
        return Err(null_argument("values"));
    }
    let slice = std::slice::from_raw_parts(values, len);
    HoiVector::unflatten(slice, model.layout()).map_err(|e| {
        set_error(&e.to_string());
        HoianomStatus::DataError
    })
}

/// Anomaly score (negative log mixture density) of one flattened HOI vector
/// laid out as `[interactions | objects | box w, h]`.
///
/// # Safety
/// `model` must be a live handle, `values` must point to `len` readable
/// doubles, and `out_score` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn hoianom_score_vector(
    model: *const HoianomModel,
    values: *const f64,
    len: usize,
    out_score: *mut f64,
) -> HoianomStatus {
    if model.is_null() {
        return null_argument("model");
    }
    if out_score.is_null() {
        return null_argument("out_score");
    }
    let inner = &(*model).inner;
    let hoi = match hoi_from_raw(inner, values, len) {
        Ok(h) => h,
        Err(s) => return s,
    };
    match inner.hoi_anomaly_score(&hoi) {
        Ok(score) => {
            *out_score = score;
            HoianomStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Smooths one video's frame scores in place with the truncated, window
/// renormalized Gaussian kernel.
///
/// # Safety
/// `scores` must point to `len` readable and writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hoianom_smooth_scores(
    scores: *mut f64,
    len: usize,
    sigma: f64,
) -> HoianomStatus {
    if scores.is_null() {
        return null_argument("scores");
    }
    let slice = std::slice::from_raw_parts_mut(scores, len);
    let mut wrapped: Vec<FrameScore> = slice
        .iter()
        .enumerate()
        .map(|(i, &raw)| FrameScore {
            video_id: String::new(),
            frame_idx: i as u64,
            raw_score: raw,
            smoothed_score: raw,
            worst_hoi_index: None,
        })
        .collect();
    match detector::smooth_scores(&mut wrapped, sigma) {
        Ok(()) => {
            for (slot, s) in slice.iter_mut().zip(&wrapped) {
                *slot = s.smoothed_score;
            }
            HoianomStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Builds the saliency explanation of one flattened HOI vector.
///
/// # Safety
/// `model` must be a live handle, `values` must point to `len` readable
/// doubles, and `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hoianom_explain_vector(
    model: *const HoianomModel,
    values: *const f64,
    len: usize,
    out: *mut *mut HoianomExplanation,
) -> HoianomStatus {
    if model.is_null() {
        return null_argument("model");
    }
    if out.is_null() {
        return null_argument("out");
    }
    let inner = &(*model).inner;
    let hoi = match hoi_from_raw(inner, values, len) {
        Ok(h) => h,
        Err(s) => return s,
    };
    match explain::saliency_heatmap(inner, &hoi) {
        Ok(e) => {
            *out = Box::into_raw(Box::new(HoianomExplanation { inner: e }));
            HoianomStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Total heatmap mass: the squared Mahalanobis deviation from the closest
/// normal event. Returns NaN on null.
///
/// # Safety
/// `explanation` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hoianom_explanation_total(explanation: *const HoianomExplanation) -> f64 {
    if explanation.is_null() {
        return f64::NAN;
    }
    (*explanation).inner.total()
}

/// 0-based index of the closest normal mixture component.
///
/// # Safety
/// `explanation` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hoianom_explanation_mode(explanation: *const HoianomExplanation) -> usize {
    if explanation.is_null() {
        return usize::MAX;
    }
    (*explanation).inner.normal_mode
}

/// Side length of the square heatmap (`D`).
///
/// # Safety
/// `explanation` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hoianom_explanation_dim(explanation: *const HoianomExplanation) -> usize {
    if explanation.is_null() {
        return 0;
    }
    (*explanation).inner.heatmap.nrows()
}

/// Sum of the two box-size diagonal entries.
///
/// # Safety
/// `explanation` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hoianom_explanation_location_score(
    explanation: *const HoianomExplanation,
) -> f64 {
    if explanation.is_null() {
        return f64::NAN;
    }
    (*explanation).inner.location_score
}

/// Copies the coarse 3x3 block heatmap, row-major, into `out9`.
///
/// # Safety
/// `explanation` must be a live handle and `out9` must point to 9 writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn hoianom_explanation_coarse(
    explanation: *const HoianomExplanation,
    out9: *mut f64,
) -> HoianomStatus {
    if explanation.is_null() {
        return null_argument("explanation");
    }
    if out9.is_null() {
        return null_argument("out9");
    }
    let coarse = &(*explanation).inner.coarse;
    let out = std::slice::from_raw_parts_mut(out9, 9);
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = coarse[i][j];
        }
    }
    HoianomStatus::Ok
}

/// Copies the full `D x D` heatmap, row-major, into `out`, which holds
/// `out_len` doubles (`out_len` must be at least `D * D`).
///
/// # Safety
/// `explanation` must be a live handle and `out` must point to `out_len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hoianom_explanation_heatmap(
    explanation: *const HoianomExplanation,
    out: *mut f64,
    out_len: usize,
) -> HoianomStatus {
    if explanation.is_null() {
        return null_argument("explanation");
    }
    if out.is_null() {
        return null_argument("out");
    }
    let heatmap = &(*explanation).inner.heatmap;
    let needed = heatmap.nrows() * heatmap.ncols();
    if out_len < needed {
        return invalid(&format!("out_len {out_len} below required {needed}"));
    }
    let slice = std::slice::from_raw_parts_mut(out, needed);
    for i in 0..heatmap.nrows() {
        for j in 0..heatmap.ncols() {
            slice[i * heatmap.ncols() + j] = heatmap[(i, j)];
        }
    }
    HoianomStatus::Ok
}

/// Releases an explanation handle. Null is ignored.
///
/// # Safety
/// `explanation` must be a pointer returned by [`hoianom_explain_vector`],
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hoianom_explanation_free(explanation: *mut HoianomExplanation) {
    if !explanation.is_null() {
        drop(Box::from_raw(explanation));
    }
}
