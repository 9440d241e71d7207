//! C ABI over the voting and reward kernels.
//!
//! Every function returns a [`GuircStatus`]; on failure a message is kept
//! per thread and can be read with [`guirc_last_error`]. Texts are
//! NUL-terminated UTF-8. Output arrays are caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use guirc::{
    consensus_of_rects, group_advantages, parse_prediction, region_consistency_rewards,
    Connectivity, ConsensusRegion, Error, ImageSize, PixelRect, PointMode, PredictedTarget,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuircStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    OutOfBounds = 4,
    NoConsensus = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuircTargetKind {
    Point = 0,
    Box = 1,
    Unparseable = 2,
}

/// Half-open cell rectangle `[x1, x2) x [y1, y2)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GuircRect {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl From<PixelRect> for GuircRect {
    fn from(r: PixelRect) -> Self {
        Self {
            x1: r.x1,
            y1: r.y1,
            x2: r.x2,
            y2: r.y2,
        }
    }
}

impl From<GuircRect> for PixelRect {
    fn from(r: GuircRect) -> Self {
        PixelRect::new(r.x1, r.y1, r.x2, r.y2)
    }
}

/// Parsed model output. Unused coordinates are zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuircTarget {
    pub kind: GuircTargetKind,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GuircConsensus {
    pub v_max: u32,
    pub area: u64,
    pub bbox: GuircRect,
    /// Click point chosen by the requested point mode.
    pub x: f64,
    pub y: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub centroid_x: f64,
    pub centroid_y: f64,
}

/// Accumulates rects for one query. Opaque to C.
pub struct GuircVoter {
    size: ImageSize,
    alpha: f64,
    rects: Vec<PixelRect>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(GuircStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::OutOfBounds { .. } => GuircStatus::OutOfBounds,
            Error::NoConsensus => GuircStatus::NoConsensus,
            _ => GuircStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GuircStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GuircStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            GuircStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside guirc");
            GuircStatus::Panic
        }
    }
}

unsafe fn cstr<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(GuircStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn cstrs<'a>(p: *const *const c_char, n: usize) -> Result<Vec<&'a str>, Fail> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null("texts"));
    }
    std::slice::from_raw_parts(p, n)
        .iter()
        .enumerate()
        .map(|(i, &t)| cstr(t, &format!("texts[{i}]")))
        .collect()
}

unsafe fn out_slice<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

fn size(width: u32, height: u32) -> Result<ImageSize, Fail> {
    Ok(ImageSize::new(width, height)?)
}

fn check_alpha(alpha: f64) -> Result<(), Fail> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Fail(GuircStatus::InvalidArgument, format!("alpha must be positive, got {alpha}")))
    }
}

fn connectivity(neighbors: u8) -> Result<Connectivity, Fail> {
    Ok(Connectivity::from_neighbors(neighbors)?)
}

fn point_mode(centroid: bool) -> PointMode {
    if centroid {
        PointMode::Centroid
    } else {
        PointMode::BboxCenter
    }
}

fn to_consensus(c: &ConsensusRegion, mode: PointMode) -> GuircConsensus {
    let (x, y) = c.point(mode);
    GuircConsensus {
        v_max: c.v_max,
        area: c.area,
        bbox: c.bbox.into(),
        x,
        y,
        center_x: c.center.0,
        center_y: c.center.1,
        centroid_x: c.centroid.0,
        centroid_y: c.centroid.1,
    }
}

/// Message for the last failed call on this thread, or NULL.
/// Valid until the next guirc call on the same thread.
#[no_mangle]
pub extern "C" fn guirc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn guirc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses one model output into its target and effective rect.
///
/// # Safety
/// `text` must be a valid C string; `out_target` and `out_rect` must be writable.
#[no_mangle]
pub unsafe extern "C" fn guirc_parse_prediction(
    text: *const c_char,
    alpha: f64,
    width: u32,
    height: u32,
    out_target: *mut GuircTarget,
    out_rect: *mut GuircRect,
) -> GuircStatus {
    guard(|| {
        let t = cstr(text, "text")?;
        check_alpha(alpha)?;
        let size = size(width, height)?;
        if out_target.is_null() || out_rect.is_null() {
            return Err(null("output"));
        }
        let (target, rect) = parse_prediction(t, alpha, size);
        let target = match target {
            PredictedTarget::Point { x, y } => GuircTarget {
                kind: GuircTargetKind::Point,
                x1: x,
                y1: y,
                x2: 0.0,
                y2: 0.0,
            },
            PredictedTarget::Box { x1, y1, x2, y2 } => GuircTarget {
                kind: GuircTargetKind::Box,
                x1,
                y1,
                x2,
                y2,
            },
            PredictedTarget::Unparseable => GuircTarget {
                kind: GuircTargetKind::Unparseable,
                x1: 0.0,
                y1: 0.0,
                x2: 0.0,
                y2: 0.0,
            },
        };
        *out_target = target;
        *out_rect = rect.into();
        Ok(())
    })
}

/// Consistency reward for each of `n` texts, written to `out_rewards[0..n]`.
///
/// # Safety
/// `texts` must point to `n` valid C strings and `out_rewards` to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn guirc_reward_from_texts(
    texts: *const *const c_char,
    n: usize,
    alpha: f64,
    width: u32,
    height: u32,
    out_rewards: *mut f64,
) -> GuircStatus {
    guard(|| {
        let t = cstrs(texts, n)?;
        check_alpha(alpha)?;
        let size = size(width, height)?;
        let out = out_slice(out_rewards, n, "out_rewards")?;
        let rewards = guirc::reward_from_texts(&t, alpha, size)?;
        out.copy_from_slice(&rewards);
        Ok(())
    })
}

/// Group-standardized advantages of `n` rewards.
///
/// # Safety
/// `rewards` and `out_advantages` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn guirc_group_advantages(
    rewards: *const f64,
    n: usize,
    eps: f64,
    out_advantages: *mut f64,
) -> GuircStatus {
    guard(|| {
        if rewards.is_null() && n > 0 {
            return Err(null("rewards"));
        }
        let r = if n == 0 { &[][..] } else { std::slice::from_raw_parts(rewards, n) };
        let out = out_slice(out_advantages, n, "out_advantages")?;
        out.copy_from_slice(&group_advantages(r, eps)?);
        Ok(())
    })
}

/// Consensus region of `n` texts.
///
/// # Safety
/// `texts` must point to `n` valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn guirc_consensus_from_texts(
    texts: *const *const c_char,
    n: usize,
    alpha: f64,
    width: u32,
    height: u32,
    neighbors: u8,
    use_centroid: bool,
    out: *mut GuircConsensus,
) -> GuircStatus {
    guard(|| {
        let t = cstrs(texts, n)?;
        check_alpha(alpha)?;
        let size = size(width, height)?;
        let conn = connectivity(neighbors)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rects: Vec<PixelRect> = t.iter().map(|s| parse_prediction(s, alpha, size).1).collect();
        let c = consensus_of_rects(&rects, size, conn)?;
        *out = to_consensus(&c, point_mode(use_centroid));
        Ok(())
    })
}

/// Creates an empty voter for one image size. Free with [`guirc_voter_free`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn guirc_voter_new(width: u32, height: u32, alpha: f64, out: *mut *mut GuircVoter) -> GuircStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        check_alpha(alpha)?;
        let voter = GuircVoter {
            size: size(width, height)?,
            alpha,
            rects: Vec::new(),
        };
        *out = Box::into_raw(Box::new(voter));
        Ok(())
    })
}

/// # Safety
/// `voter` must come from [`guirc_voter_new`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn guirc_voter_free(voter: *mut GuircVoter) {
    if !voter.is_null() {
        drop(Box::from_raw(voter));
    }
}

unsafe fn voter_mut<'a>(v: *mut GuircVoter) -> Result<&'a mut GuircVoter, Fail> {
    v.as_mut().ok_or_else(|| null("voter"))
}

/// Parses `text` and adds its rect; optionally reports the rect.
///
/// # Safety
/// `voter` must be live; `text` a valid C string; `out_rect` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn guirc_voter_add_text(
    voter: *mut GuircVoter,
    text: *const c_char,
    out_rect: *mut GuircRect,
) -> GuircStatus {
    guard(|| {
        let v = voter_mut(voter)?;
        let t = cstr(text, "text")?;
        let rect = parse_prediction(t, v.alpha, v.size).1;
        v.rects.push(rect);
        if !out_rect.is_null() {
            *out_rect = rect.into();
        }
        Ok(())
    })
}

/// Adds an already rasterized rect; it must lie within the image.
///
/// # Safety
/// `voter` must be live.
#[no_mangle]
pub unsafe extern "C" fn guirc_voter_add_rect(voter: *mut GuircVoter, rect: GuircRect) -> GuircStatus {
    guard(|| {
        let v = voter_mut(voter)?;
        let r = PixelRect::from(rect);
        if r.x1 > r.x2 || r.y1 > r.y2 || !r.fits(v.size) {
            return Err(Error::OutOfBounds { rect: r, size: v.size }.into());
        }
        v.rects.push(r);
        Ok(())
    })
}

/// Number of rects added so far.
///
/// # Safety
/// `voter` must be live or NULL (NULL reads as 0).
#[no_mangle]
pub unsafe extern "C" fn guirc_voter_len(voter: *const GuircVoter) -> usize {
    voter.as_ref().map_or(0, |v| v.rects.len())
}

/// # Safety
/// `voter` must be live.
#[no_mangle]
pub unsafe extern "C" fn guirc_voter_clear(voter: *mut GuircVoter) -> GuircStatus {
    guard(|| {
        voter_mut(voter)?.rects.clear();
        Ok(())
    })
}

/// # Safety
/// `voter` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn guirc_voter_consensus(
    voter: *const GuircVoter,
    neighbors: u8,
    use_centroid: bool,
    out: *mut GuircConsensus,
) -> GuircStatus {
    guard(|| {
        let v = voter.as_ref().ok_or_else(|| null("voter"))?;
        let conn = connectivity(neighbors)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = consensus_of_rects(&v.rects, v.size, conn)?;
        *out = to_consensus(&c, point_mode(use_centroid));
        Ok(())
    })
}

/// Rewards of all added rects, in insertion order, into `out[0..cap]`.
/// Fails with `BufferTooSmall` when `cap` is less than the voter length.
///
/// # Safety
/// `voter` must be live; `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn guirc_voter_rewards(voter: *const GuircVoter, out: *mut f64, cap: usize) -> GuircStatus {
    guard(|| {
        let v = voter.as_ref().ok_or_else(|| null("voter"))?;
        let n = v.rects.len();
        if cap < n {
            return Err(Fail(GuircStatus::BufferTooSmall, format!("need {n} slots, got {cap}")));
        }
        let dst = out_slice(out, n, "out")?;
        dst.copy_from_slice(&region_consistency_rewards(&v.rects, v.size)?);
        Ok(())
    })
}
