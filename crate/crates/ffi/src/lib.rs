//! C ABI over `mocp`.
//!
//! Every fallible function returns a [`MocpStatus`]; on failure the message
//! is available from [`mocp_last_error_message`] on the same thread until
//! the next failing call. Handles are opaque and immutable once built,
//! except that a dataset accepts `mocp_dataset_push` until it is first used.
//! Strings returned through `out` parameters are owned by the caller and
//! must be released with [`mocp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mocp::cli::{self, PredictionFile};
use mocp::eval::DEFAULT_SDR_THRESHOLDS;
use mocp::io::{self, Split};
use mocp::{
    CalibratorConfig, CalibratorSet, Dataset, Error, Example, GridDistribution, GridGeometry, Method,
    PredictionRegion,
};

/// Result code of every fallible call. Codes from 10 up mirror the core
/// library's error kinds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MocpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Panic = 3,
    InvalidArgument = 4,
    Io = 10,
    MalformedHeader = 11,
    ShapeMismatch = 12,
    UnsupportedDtype = 13,
    MissingTensor = 14,
    InvariantViolation = 15,
    InvalidManifest = 16,
    DimMismatch = 17,
    NonSpdMatrix = 18,
    IndexOutOfRange = 19,
    OutOfDomain = 20,
    DegenerateGrid = 21,
    GeometryMismatch = 22,
    EmptyCalibrationSet = 23,
    EmptyLedger = 24,
    MissingField = 25,
    InvalidAlpha = 26,
    InvalidConfig = 27,
    LengthMismatch = 28,
    DegenerateInput = 29,
    UnsupportedNoise = 30,
    UnknownMethod = 31,
    UnknownFormat = 32,
    IdMismatch = 33,
    Json = 34,
}

impl From<&Error> for MocpStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => MocpStatus::Io,
            Error::MalformedHeader(_) => MocpStatus::MalformedHeader,
            Error::ShapeMismatch { .. } => MocpStatus::ShapeMismatch,
            Error::UnsupportedDType(_) => MocpStatus::UnsupportedDtype,
            Error::MissingTensor(_) => MocpStatus::MissingTensor,
            Error::InvariantViolation(_) => MocpStatus::InvariantViolation,
            Error::Manifest(_) => MocpStatus::InvalidManifest,
            Error::DimMismatch { .. } => MocpStatus::DimMismatch,
            Error::NonSpdMatrix => MocpStatus::NonSpdMatrix,
            Error::IndexOutOfRange { .. } => MocpStatus::IndexOutOfRange,
            Error::OutOfDomain(_) => MocpStatus::OutOfDomain,
            Error::DegenerateGrid => MocpStatus::DegenerateGrid,
            Error::GeometryMismatch => MocpStatus::GeometryMismatch,
            Error::EmptyCalibrationSet => MocpStatus::EmptyCalibrationSet,
            Error::EmptyLedger => MocpStatus::EmptyLedger,
            Error::MissingField { .. } => MocpStatus::MissingField,
            Error::InvalidAlpha(_) => MocpStatus::InvalidAlpha,
            Error::InvalidConfig { .. } => MocpStatus::InvalidConfig,
            Error::LengthMismatch { .. } => MocpStatus::LengthMismatch,
            Error::DegenerateInput(_) => MocpStatus::DegenerateInput,
            Error::UnsupportedNoise(_) => MocpStatus::UnsupportedNoise,
            Error::UnknownMethod(_) => MocpStatus::UnknownMethod,
            Error::UnknownFormat(_) => MocpStatus::UnknownFormat,
            Error::IdMismatch(_) => MocpStatus::IdMismatch,
            Error::Json(_) => MocpStatus::Json,
        }
    }
}

/// A dataset: loaded from a manifest or assembled from arrays.
pub struct MocpDataset(Dataset);

/// Fitted calibrators, one per landmark or one pooled.
pub struct MocpCalibrator(CalibratorSet);

/// A single prediction region.
pub struct MocpRegion(PredictionRegion);

/// One example passed in by the caller. Optional arrays may be null.
///
/// All matrices are row-major. `grid_values` holds `prod(grid_shape)` cells
/// with the last axis fastest; it is copied and normalized.
#[repr(C)]
pub struct MocpExampleInput {
    pub id: *const c_char,
    pub landmark: usize,
    pub dims: usize,
    /// `dims` values, mm.
    pub truth: *const f64,
    pub grid_values: *const f64,
    /// `dims` values each; required when `grid_values` is set.
    pub grid_shape: *const usize,
    pub grid_origin: *const f64,
    pub grid_spacing: *const f64,
    /// `dims` values.
    pub point: *const f64,
    /// `dims * dims` values.
    pub covariance: *const f64,
    /// `n_samples * dims` values.
    pub samples: *const f64,
    pub n_samples: usize,
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Utf8(&'static str),
    Argument(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(Error::Json(e))
    }
}

type FfiResult<T> = Result<T, Failure>;

struct LastError {
    name: CString,
    message: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<LastError>> = const { RefCell::new(None) };
}

fn set_last_error(name: &str, message: String) {
    let clean = |s: String| CString::new(s.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(LastError {
            name: clean(name.to_string()),
            message: clean(message),
        })
    });
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> MocpStatus {
    let (status, name, message) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return MocpStatus::Ok,
        Ok(Err(Failure::Core(e))) => (MocpStatus::from(&e), e.name(), e.to_string()),
        Ok(Err(Failure::Null(what))) => (MocpStatus::NullPointer, "NullPointer", format!("{what} is null")),
        Ok(Err(Failure::Utf8(what))) => (
            MocpStatus::InvalidUtf8,
            "InvalidUtf8",
            format!("{what} is not valid UTF-8"),
        ),
        Ok(Err(Failure::Argument(msg))) => (MocpStatus::InvalidArgument, "InvalidArgument", msg),
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            (MocpStatus::Panic, "Panic", msg)
        }
    };
    set_last_error(name, message);
    status
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &'static str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn opt_slice<'a, T>(p: *const T, len: usize) -> Option<&'a [T]> {
    (!p.is_null()).then(|| std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

fn c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::Argument("output contains a NUL byte".into()))
}

fn rows(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width).map(<[f64]>::to_vec).collect()
}

unsafe fn example_from_input(input: &MocpExampleInput) -> FfiResult<Example> {
    let d = input.dims;
    let id = str_arg(input.id, "id")?;
    let mut ex = Example::new(id, slice_arg(input.truth, d, "truth")?.to_vec());
    ex.landmark = input.landmark;
    if !input.grid_values.is_null() {
        let shape = slice_arg(input.grid_shape, d, "grid_shape")?.to_vec();
        let origin = slice_arg(input.grid_origin, d, "grid_origin")?.to_vec();
        let spacing = slice_arg(input.grid_spacing, d, "grid_spacing")?.to_vec();
        let geometry = GridGeometry::new(shape, origin, spacing)?;
        let values = slice_arg(input.grid_values, geometry.len(), "grid_values")?.to_vec();
        ex.grid = Some(GridDistribution::new(geometry, values)?);
    }
    ex.point = opt_slice(input.point, d).map(<[f64]>::to_vec);
    ex.covariance = opt_slice(input.covariance, d * d).map(|c| rows(c, d));
    if input.n_samples > 0 {
        ex.samples = opt_slice(input.samples, input.n_samples * d).map(|s| rows(s, d));
    }
    ex.validate()?;
    Ok(ex)
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mocp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mocp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |e| e.message.as_ptr()))
}

/// Stable error name of the last failure on this thread (e.g.
/// `"ShapeMismatch"`), or null.
#[no_mangle]
pub extern "C" fn mocp_last_error_name() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |e| e.name.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mocp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset manifest and its tensors.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mocp_dataset_load(path: *const c_char, out: *mut *mut MocpDataset) -> MocpStatus {
    guard(|| {
        let data = io::load_dataset(str_arg(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(MocpDataset(data))), "out")
    })
}

/// Creates an empty dataset of dimension 2 or 3.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mocp_dataset_new(dims: usize, out: *mut *mut MocpDataset) -> MocpStatus {
    guard(|| {
        if !(2..=3).contains(&dims) {
            return Err(Failure::Argument(format!("dims must be 2 or 3, got {dims}")));
        }
        let data = Dataset::new(dims, Split::Calibration, Vec::new());
        write_out(out, Box::into_raw(Box::new(MocpDataset(data))), "out")
    })
}

/// Validates and appends one example.
///
/// # Safety
/// `dataset` must come from this library and not be used concurrently;
/// every non-null array in `input` must hold the documented length.
#[no_mangle]
pub unsafe extern "C" fn mocp_dataset_push(
    dataset: *mut MocpDataset,
    input: *const MocpExampleInput,
) -> MocpStatus {
    guard(|| {
        let data = dataset.as_mut().ok_or(Failure::Null("dataset"))?;
        let input = handle(input, "input")?;
        if input.dims != data.0.dims {
            return Err(Error::DimMismatch {
                expected: data.0.dims,
                found: input.dims,
            }
            .into());
        }
        data.0.examples.push(example_from_input(input)?);
        Ok(())
    })
}

/// Number of examples; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mocp_dataset_len(dataset: *const MocpDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `dataset` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn mocp_dataset_free(dataset: *mut MocpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fits `method` on every example of `dataset`. `config_json` may be null for
/// defaults.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mocp_calibrator_fit(
    method: *const c_char,
    dataset: *const MocpDataset,
    config_json: *const c_char,
    pooled: bool,
    out: *mut *mut MocpCalibrator,
) -> MocpStatus {
    guard(|| {
        let method: Method = str_arg(method, "method")?.parse()?;
        let data = handle(dataset, "dataset")?;
        let config: CalibratorConfig = match opt_str_arg(config_json, "config_json")? {
            Some(text) => serde_json::from_str(text).map_err(|e| Error::InvalidConfig {
                field: "config".into(),
                reason: e.to_string(),
            })?,
            None => CalibratorConfig::default(),
        };
        let set = CalibratorSet::fit(method, &data.0.examples, config, pooled)?;
        write_out(out, Box::into_raw(Box::new(MocpCalibrator(set))), "out")
    })
}

/// Serializes a calibrator exactly as `mocp calibrate` writes it.
///
/// # Safety
/// `calibrator` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mocp_calibrator_to_json(
    calibrator: *const MocpCalibrator,
    out: *mut *mut c_char,
) -> MocpStatus {
    guard(|| {
        let text = io::to_json_text(&handle(calibrator, "calibrator")?.0)?;
        write_out(out, c_string(text)?, "out")
    })
}

/// Reads a calibrator written by `mocp calibrate` or
/// [`mocp_calibrator_to_json`].
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mocp_calibrator_from_json(
    json: *const c_char,
    out: *mut *mut MocpCalibrator,
) -> MocpStatus {
    guard(|| {
        let set: CalibratorSet = serde_json::from_str(str_arg(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(MocpCalibrator(set))), "out")
    })
}

/// # Safety
/// `calibrator` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn mocp_calibrator_free(calibrator: *mut MocpCalibrator) {
    if !calibrator.is_null() {
        drop(Box::from_raw(calibrator));
    }
}

/// Predicts the region of example `index` of `dataset`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mocp_predict(
    calibrator: *const MocpCalibrator,
    dataset: *const MocpDataset,
    index: usize,
    alpha: f64,
    out: *mut *mut MocpRegion,
) -> MocpStatus {
    guard(|| {
        let set = &handle(calibrator, "calibrator")?.0;
        let data = &handle(dataset, "dataset")?.0;
        let ex = data.examples.get(index).ok_or_else(|| {
            Failure::Argument(format!("index {index} out of range for {} examples", data.len()))
        })?;
        let region = set.predict_full(ex, alpha)?.region;
        write_out(out, Box::into_raw(Box::new(MocpRegion(region))), "out")
    })
}

/// Predicts every example and returns the same JSON document `mocp predict`
/// writes.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mocp_predict_json(
    calibrator: *const MocpCalibrator,
    dataset: *const MocpDataset,
    alpha: f64,
    out: *mut *mut c_char,
) -> MocpStatus {
    guard(|| {
        let set = &handle(calibrator, "calibrator")?.0;
        let data = &handle(dataset, "dataset")?.0;
        let file = cli::predict_examples(set, &data.examples, alpha)?;
        write_out(out, c_string(io::to_json_text(&file)?)?, "out")
    })
}

/// Evaluates a `mocp predict` document against `dataset`; returns the same
/// JSON as `report.json`.
///
/// # Safety
/// `predictions_json` must be NUL-terminated; handles must be live; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn mocp_evaluate_json(
    predictions_json: *const c_char,
    dataset: *const MocpDataset,
    out: *mut *mut c_char,
) -> MocpStatus {
    guard(|| {
        let file: PredictionFile = serde_json::from_str(str_arg(predictions_json, "predictions_json")?)?;
        let data = &handle(dataset, "dataset")?.0;
        let report = cli::evaluate_examples(&file, &data.examples, &DEFAULT_SDR_THRESHOLDS)?;
        write_out(out, c_string(io::to_json_text(&report)?)?, "out")
    })
}

/// Region dimension; 0 for a null handle.
///
/// # Safety
/// `region` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mocp_region_dims(region: *const MocpRegion) -> usize {
    region.as_ref().map_or(0, |r| r.0.dims())
}

/// # Safety
/// `y` must hold `dims` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mocp_region_contains(
    region: *const MocpRegion,
    y: *const f64,
    dims: usize,
    out: *mut bool,
) -> MocpStatus {
    guard(|| {
        let r = &handle(region, "region")?.0;
        let inside = r.contains(slice_arg(y, dims, "y")?)?;
        write_out(out, inside, "out")
    })
}

/// Area (2-D) or volume (3-D) in mm units.
///
/// # Safety
/// `region` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mocp_region_measure(region: *const MocpRegion, out: *mut f64) -> MocpStatus {
    guard(|| {
        let m = handle(region, "region")?.0.measure()?;
        write_out(out, m, "out")
    })
}

/// Canonical JSON geometry, as `mocp export-region --format json`.
///
/// # Safety
/// `region` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mocp_region_to_json(region: *const MocpRegion, out: *mut *mut c_char) -> MocpStatus {
    guard(|| {
        let text = serde_json::to_string_pretty(&handle(region, "region")?.0)? + "\n";
        write_out(out, c_string(text)?, "out")
    })
}

/// # Safety
/// `region` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn mocp_region_free(region: *mut MocpRegion) {
    if !region.is_null() {
        drop(Box::from_raw(region));
    }
}
