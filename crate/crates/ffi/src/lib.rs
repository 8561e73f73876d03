//! C ABI over the keypoint estimator: load a trained model behind an opaque
//! handle, run the feedback loop on raw image buffers, and call the
//! correction, rendering, and PCKh primitives directly.
//!
//! Every function returns an [`IefStatus`]; on failure the message is kept
//! per thread and can be read with [`ief_last_error_message`]. Poses cross
//! the boundary as `[x0, y0, x1, y1, ...]` arrays of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ief_core::eval::pckh;
use ief_core::infer::infer;
use ief_core::model::Model;
use ief_core::pose::{bounded_correction, Point, Pose};
use ief_core::render::{render_heatmap, ImageGrid};
use ief_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IefStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Data = 5,
    Divergence = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A trained model. Create with [`ief_model_load`], release with
/// [`ief_model_free`].
pub struct IefModel {
    model: Model,
}

/// Shapes a caller needs to size buffers for a model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IefModelInfo {
    pub width: usize,
    pub height: usize,
    pub image_channels: usize,
    pub keypoints: usize,
    pub test_steps: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

fn status_of(e: &Error) -> IefStatus {
    match e {
        Error::Example { source, .. } => status_of(source),
        Error::DimensionMismatch { .. } => IefStatus::DimensionMismatch,
        Error::Io(_) => IefStatus::Io,
        Error::VersionMismatch { .. } | Error::Truncated { .. } | Error::Checksum { .. } | Error::Format { .. } => IefStatus::Data,
        Error::NonFinite(_) | Error::GradientDivergence { .. } | Error::LossDivergence { .. } | Error::InferenceDivergence { .. } => {
            IefStatus::Divergence
        }
        Error::InvalidArgument(_) | Error::Usage(_) | Error::UnannotatedKeypoint { .. } => IefStatus::InvalidArgument,
    }
}

enum Fail {
    Status(IefStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(IefStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IefStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            IefStatus::Ok
        }
        Ok(Err(Fail::Status(s, m))) => {
            set_error(m);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            IefStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn pose_from(xy: &[f64]) -> Result<Pose, Fail> {
    Ok(Pose::annotated(xy.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())?)
}

fn write_pose(pose: &Pose, out: &mut [f64]) {
    for (o, p) in out.chunks_exact_mut(2).zip(pose.points()) {
        o[0] = p.x;
        o[1] = p.y;
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to fit) and returns the full message length in
/// bytes, excluding the terminator. Pass a null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ief_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads the model saved in directory `path` into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ief_model_load(path: *const c_char, out: *mut *mut IefModel) -> IefStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| Fail::Status(IefStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let model = Model::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(IefModel { model }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`ief_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ief_model_free(model: *mut IefModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `info` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ief_model_info(model: *const IefModel, info: *mut IefModelInfo) -> IefStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let info = info.as_mut().ok_or_else(|| null("info"))?;
        *info = IefModelInfo {
            width: m.width(),
            height: m.height(),
            image_channels: m.params.arch().image_channels,
            keypoints: m.layout.keypoints,
            test_steps: m.test_steps,
        };
        Ok(())
    })
}

/// Writes the model's starting pose for an image whose given keypoints sit
/// at `given_xy` (one point per given keypoint, in the model's order) into
/// `out_xy` (`2 * keypoints` doubles).
///
/// # Safety
/// `given_xy` must be valid for `given_len` reads and `out_xy` for
/// `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn ief_model_initial_pose(
    model: *const IefModel,
    given_xy: *const f64,
    given_len: usize,
    out_xy: *mut f64,
    out_len: usize,
) -> IefStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let given_xy = slice(given_xy, given_len, "given_xy")?;
        if given_len != 2 * m.layout.given.len() {
            return Err(Error::DimensionMismatch { what: "given coordinates", expected: 2 * m.layout.given.len(), found: given_len }.into());
        }
        let given: Vec<(usize, Point)> =
            m.layout.given.iter().zip(given_xy.chunks_exact(2)).map(|(&k, c)| (k, Point::new(c[0], c[1]))).collect();
        let pose = m.initial_pose(&given)?;
        if out_len < 2 * pose.len() {
            return Err(Fail::Status(IefStatus::BufferTooSmall, format!("out_xy holds {out_len} doubles, {} needed", 2 * pose.len())));
        }
        write_pose(&pose, slice_mut(out_xy, out_len, "out_xy")?);
        Ok(())
    })
}

/// Runs `steps` feedback iterations on a `channels x height x width`
/// row-major image from `initial_xy`, writing all `steps + 1` poses to
/// `out_xy` (`2 * keypoints * (steps + 1)` doubles).
///
/// # Safety
/// Each pointer must be valid for its stated length.
#[no_mangle]
pub unsafe extern "C" fn ief_model_infer(
    model: *const IefModel,
    image: *const f32,
    image_len: usize,
    initial_xy: *const f64,
    initial_len: usize,
    steps: usize,
    out_xy: *mut f64,
    out_len: usize,
) -> IefStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let a = m.params.arch();
        let image = slice(image, image_len, "image")?;
        let grid = ImageGrid::new(a.width, a.height, a.image_channels, image.to_vec())?;
        let k = m.layout.keypoints;
        if initial_len != 2 * k {
            return Err(Error::DimensionMismatch { what: "initial pose coordinates", expected: 2 * k, found: initial_len }.into());
        }
        let y0 = pose_from(slice(initial_xy, initial_len, "initial_xy")?)?;
        let need = 2 * k * (steps + 1);
        if out_len < need {
            return Err(Fail::Status(IefStatus::BufferTooSmall, format!("out_xy holds {out_len} doubles, {need} needed")));
        }
        let out = slice_mut(out_xy, out_len, "out_xy")?;
        let trajectory = infer(m, &grid, &y0, steps, None)?;
        for (chunk, pose) in out.chunks_exact_mut(2 * k).zip(&trajectory.poses) {
            write_pose(pose, chunk);
        }
        Ok(())
    })
}

/// Bounded correction from `current_xy` toward `target_xy` for `keypoints`
/// points, written to `out_xy`.
///
/// # Safety
/// Each pointer must be valid for `2 * keypoints` elements.
#[no_mangle]
pub unsafe extern "C" fn ief_bounded_correction(
    target_xy: *const f64,
    current_xy: *const f64,
    keypoints: usize,
    bound: f64,
    out_xy: *mut f64,
) -> IefStatus {
    guard(|| {
        let target = pose_from(slice(target_xy, 2 * keypoints, "target_xy")?)?;
        let current = pose_from(slice(current_xy, 2 * keypoints, "current_xy")?)?;
        let c = bounded_correction(&target, &current, bound, &vec![true; keypoints])?;
        let out = slice_mut(out_xy, 2 * keypoints, "out_xy")?;
        for (o, d) in out.chunks_exact_mut(2).zip(c.deltas()) {
            o[0] = d.x;
            o[1] = d.y;
        }
        Ok(())
    })
}

/// Peak-normalized Gaussian heatmap of one keypoint, row-major into `out`
/// (`width * height` floats).
///
/// # Safety
/// `out` must be valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn ief_render_heatmap(
    x: f64,
    y: f64,
    width: usize,
    height: usize,
    sigma: f64,
    out: *mut f32,
    out_len: usize,
) -> IefStatus {
    guard(|| {
        if out_len < width * height {
            return Err(Fail::Status(IefStatus::BufferTooSmall, format!("out holds {out_len} floats, {} needed", width * height)));
        }
        let map = render_heatmap(Point::new(x, y), width, height, sigma)?;
        slice_mut(out, out_len, "out")?[..map.len()].copy_from_slice(&map);
        Ok(())
    })
}

/// PCKh per keypoint: `out[k]` is 1 when correct, 0 when wrong, and -1 when
/// `annotated[k]` is 0 and the keypoint is not scored.
///
/// # Safety
/// `predicted_xy` and `truth_xy` must be valid for `2 * keypoints` reads,
/// `annotated` for `keypoints` reads (or null for all annotated), and `out`
/// for `keypoints` writes.
#[no_mangle]
pub unsafe extern "C" fn ief_pckh(
    predicted_xy: *const f64,
    truth_xy: *const f64,
    annotated: *const u8,
    keypoints: usize,
    reference_length: f64,
    alpha: f64,
    out: *mut i32,
) -> IefStatus {
    guard(|| {
        let predicted = pose_from(slice(predicted_xy, 2 * keypoints, "predicted_xy")?)?;
        let mut truth = pose_from(slice(truth_xy, 2 * keypoints, "truth_xy")?)?;
        if !annotated.is_null() {
            truth = truth.with_mask(slice(annotated, keypoints, "annotated")?.iter().map(|&a| a != 0).collect())?;
        }
        let scores = pckh(&predicted, &truth, reference_length, alpha)?;
        for (o, s) in slice_mut(out, keypoints, "out")?.iter_mut().zip(scores) {
            *o = match s {
                Some(true) => 1,
                Some(false) => 0,
                None => -1,
            };
        }
        Ok(())
    })
}
