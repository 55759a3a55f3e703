//! C ABI over `hero_core`.
//!
//! Every fallible call returns a [`HeroStatus`]; on failure the message is
//! available from [`hero_last_error_message`] on the same thread. Handles are
//! opaque and owned by the caller until passed to the matching `*_free`.
//! Panics never cross the boundary; they surface as `HERO_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hero_core::budgeting::{allocate, BudgetAllocation, RemainderPolicy};
use hero_core::container::{read_trace, read_trace_file, write_trace};
use hero_core::efficiency::{prefill_flops, LlmProfile};
use hero_core::scoring::score_tiles;
use hero_core::selection::{select_all, LayerSet, RetentionMask};
use hero_core::tiling::plan_tiling;
use hero_core::{Error, ImageTrace};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeroStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed container bytes.
    Container = 3,
    /// Trace contents violate a shape or value invariant.
    Invariant = 4,
    OutOfRange = 5,
    Io = 6,
    /// Output buffer too small; the required length was still written.
    BufferTooSmall = 7,
    Panic = 99,
}

pub struct HeroTrace(ImageTrace);
pub struct HeroAllocation(BudgetAllocation);
pub struct HeroMasks(Vec<RetentionMask>);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HeroTraceInfo {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub num_tiles: usize,
    pub num_patches: usize,
    pub num_layers: usize,
    pub has_clip_embeddings: bool,
    pub has_text_embedding: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HeroTilingPlan {
    pub target_w: u32,
    pub target_h: u32,
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub pad_left: u32,
    pub pad_right: u32,
    pub pad_top: u32,
    pub pad_bottom: u32,
    pub scale_x: f64,
    pub scale_y: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeroBudget {
    pub n_total: usize,
    pub n_global: usize,
    pub n_local: usize,
    /// Tokens actually kept; below `n_total` only under the strict-floor policy.
    pub retained: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HeroEfficiency {
    pub tflops: f64,
    pub kv_cache_mib: f64,
    pub per_layer_flops: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(HeroStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::BadMagic | Error::CorruptHeader(_) => HeroStatus::Container,
            Error::ShapeMismatch { .. }
            | Error::NonFiniteValue { .. }
            | Error::InvariantViolation { .. }
            | Error::ZeroNorm
            | Error::DimensionMismatch(_)
            | Error::MissingClipEmbedding(_) => HeroStatus::Invariant,
            Error::LayerOutOfRange { .. }
            | Error::QuotaExceedsN { .. }
            | Error::IndexOutOfRange { .. }
            | Error::AlphaOutOfRange(_)
            | Error::RatioOutOfRange(_) => HeroStatus::OutOfRange,
            Error::Io(_) => HeroStatus::Io,
            _ => HeroStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn fail(status: HeroStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HeroStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HeroStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal error: {msg}"));
            HeroStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(HeroStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(HeroStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(HeroStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copy `src` into a caller buffer. `*out_len` always receives the full
/// length, so a first call with `capacity == 0` can size the buffer.
unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, capacity: usize, out_len: *mut usize) -> Result<(), Fail> {
    *out(out_len, "out_len")? = src.len();
    if src.len() > capacity {
        return Err(fail(
            HeroStatus::BufferTooSmall,
            format!("need {} elements, buffer holds {capacity}", src.len()),
        ));
    }
    if !src.is_empty() {
        if dst.is_null() {
            return Err(fail(HeroStatus::NullPointer, "output buffer is null"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    Ok(())
}

unsafe fn layer_set(p: *const usize, len: usize, default: LayerSet) -> Result<LayerSet, Fail> {
    if p.is_null() && len == 0 {
        return Ok(default);
    }
    Ok(LayerSet::new(slice(p, len, "layer list")?.to_vec())?)
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hero_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hero_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a trace container from memory.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out_trace` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hero_trace_read(bytes: *const u8, len: usize, out_trace: *mut *mut HeroTrace) -> HeroStatus {
    guard(|| {
        let dst = out(out_trace, "out_trace")?;
        *dst = ptr::null_mut();
        let t = read_trace(slice(bytes, len, "bytes")?)?;
        *dst = Box::into_raw(Box::new(HeroTrace(t)));
        Ok(())
    })
}

/// Parse a trace container from a file path (UTF-8).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_trace` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hero_trace_read_file(path: *const c_char, out_trace: *mut *mut HeroTrace) -> HeroStatus {
    guard(|| {
        let dst = out(out_trace, "out_trace")?;
        *dst = ptr::null_mut();
        if path.is_null() {
            return Err(fail(HeroStatus::NullPointer, "path is null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(HeroStatus::InvalidArgument, "path is not UTF-8"))?;
        let t = read_trace_file(path)?;
        *dst = Box::into_raw(Box::new(HeroTrace(t)));
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a handle from `hero_trace_read*`, freed once.
#[no_mangle]
pub unsafe extern "C" fn hero_trace_free(trace: *mut HeroTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// # Safety
/// `trace` must be a live handle; `info` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hero_trace_info(trace: *const HeroTrace, info: *mut HeroTraceInfo) -> HeroStatus {
    guard(|| {
        let t = &deref(trace, "trace")?.0;
        *out(info, "info")? = HeroTraceInfo {
            grid_rows: t.grid_rows(),
            grid_cols: t.grid_cols(),
            num_tiles: t.num_tiles(),
            num_patches: t.num_patches(),
            num_layers: t.num_layers(),
            has_clip_embeddings: t.has_clip_embeddings(),
            has_text_embedding: t.text_embed().is_some(),
        };
        Ok(())
    })
}

/// Serialize a trace. The buffer must be released with `hero_bytes_free`.
///
/// # Safety
/// `trace` must be a live handle; `out_bytes` and `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hero_trace_write(
    trace: *const HeroTrace,
    out_bytes: *mut *mut u8,
    out_len: *mut usize,
) -> HeroStatus {
    guard(|| {
        let t = &deref(trace, "trace")?.0;
        let bytes_dst = out(out_bytes, "out_bytes")?;
        let len_dst = out(out_len, "out_len")?;
        let bytes = write_trace(t)?.into_boxed_slice();
        *len_dst = bytes.len();
        *bytes_dst = Box::into_raw(bytes).cast();
        Ok(())
    })
}

/// # Safety
/// `bytes`/`len` must come from `hero_trace_write`, freed once.
#[no_mangle]
pub unsafe extern "C" fn hero_bytes_free(bytes: *mut u8, len: usize) {
    if !bytes.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(bytes, len)));
    }
}

/// Tiling geometry for an image of `width` x `height` pixels.
///
/// # Safety
/// `plan` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hero_plan_tiling(width: u32, height: u32, plan: *mut HeroTilingPlan) -> HeroStatus {
    guard(|| {
        let dst = out(plan, "plan")?;
        if width == 0 || height == 0 {
            return Err(fail(HeroStatus::InvalidArgument, "image dimensions must be positive"));
        }
        let p = plan_tiling(width, height);
        *dst = HeroTilingPlan {
            target_w: p.target_w,
            target_h: p.target_h,
            grid_cols: p.grid_cols,
            grid_rows: p.grid_rows,
            pad_left: p.pad_left,
            pad_right: p.pad_right,
            pad_top: p.pad_top,
            pad_bottom: p.pad_bottom,
            scale_x: p.scale_x,
            scale_y: p.scale_y,
        };
        Ok(())
    })
}

/// Combined per-tile scores into `scores[0..capacity]`. `alpha_used`, if
/// non-null, receives the weight actually applied (1 when the trace has no
/// instruction embedding).
///
/// # Safety
/// `trace` must be live; `scores` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn hero_score_tiles(
    trace: *const HeroTrace,
    alpha: f64,
    scores: *mut f64,
    capacity: usize,
    out_len: *mut usize,
    alpha_used: *mut f64,
) -> HeroStatus {
    guard(|| {
        let s = score_tiles(&deref(trace, "trace")?.0, alpha)?;
        if let Some(a) = alpha_used.as_mut() {
            *a = s.alpha;
        }
        copy_out(&s.s, scores, capacity, out_len)
    })
}

/// Split the token budget for `num_tiles` tiles of `n_patches` patches.
///
/// # Safety
/// `scores` must hold `num_tiles` doubles; `out_alloc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hero_allocate(
    num_tiles: usize,
    n_patches: usize,
    ratio: f64,
    scores: *const f64,
    strict_floor: bool,
    out_alloc: *mut *mut HeroAllocation,
) -> HeroStatus {
    guard(|| {
        let dst = out(out_alloc, "out_alloc")?;
        *dst = ptr::null_mut();
        let policy = if strict_floor { RemainderPolicy::StrictFloor } else { RemainderPolicy::Redistribute };
        let a = allocate(num_tiles, n_patches, ratio, slice(scores, num_tiles, "scores")?, policy)?;
        *dst = Box::into_raw(Box::new(HeroAllocation(a)));
        Ok(())
    })
}

/// # Safety
/// `alloc` must be null or a handle from `hero_allocate`, freed once.
#[no_mangle]
pub unsafe extern "C" fn hero_allocation_free(alloc: *mut HeroAllocation) {
    if !alloc.is_null() {
        drop(Box::from_raw(alloc));
    }
}

/// # Safety
/// `alloc` must be live; `budget` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hero_allocation_budget(alloc: *const HeroAllocation, budget: *mut HeroBudget) -> HeroStatus {
    guard(|| {
        let a = &deref(alloc, "alloc")?.0;
        *out(budget, "budget")? = HeroBudget {
            n_total: a.n_total,
            n_global: a.n_global,
            n_local: a.n_local,
            retained: a.retained(),
        };
        Ok(())
    })
}

/// # Safety
/// `alloc` must be live; `quotas` must hold `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn hero_allocation_per_tile(
    alloc: *const HeroAllocation,
    quotas: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> HeroStatus {
    guard(|| copy_out(&deref(alloc, "alloc")?.0.per_tile, quotas, capacity, out_len))
}

/// Select retained patches for every tile and the thumbnail. Layer lists are
/// 1-based; pass null with length 0 for the defaults.
///
/// # Safety
/// Handles must be live; layer pointers must hold their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hero_select(
    trace: *const HeroTrace,
    alloc: *const HeroAllocation,
    layers_low: *const usize,
    layers_low_len: usize,
    layers_high: *const usize,
    layers_high_len: usize,
    out_masks: *mut *mut HeroMasks,
) -> HeroStatus {
    guard(|| {
        let dst = out(out_masks, "out_masks")?;
        *dst = ptr::null_mut();
        let low = layer_set(layers_low, layers_low_len, LayerSet::default_low())?;
        let high = layer_set(layers_high, layers_high_len, LayerSet::default_high())?;
        let masks = select_all(&deref(trace, "trace")?.0, &deref(alloc, "alloc")?.0, &low, &high)?;
        *dst = Box::into_raw(Box::new(HeroMasks(masks)));
        Ok(())
    })
}

/// # Safety
/// `masks` must be null or a handle from `hero_select`, freed once.
#[no_mangle]
pub unsafe extern "C" fn hero_masks_free(masks: *mut HeroMasks) {
    if !masks.is_null() {
        drop(Box::from_raw(masks));
    }
}

/// Number of regions: tiles followed by the thumbnail. Zero for null.
///
/// # Safety
/// `masks` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn hero_masks_count(masks: *const HeroMasks) -> usize {
    masks.as_ref().map_or(0, |m| m.0.len())
}

unsafe fn region<'a>(masks: *const HeroMasks, index: usize) -> Result<&'a RetentionMask, Fail> {
    let m = &deref(masks, "masks")?.0;
    m.get(index)
        .ok_or_else(|| fail(HeroStatus::OutOfRange, format!("region {index} of {}", m.len())))
}

/// Kept patch indices of one region, ascending.
///
/// # Safety
/// `masks` must be live; `indices` must hold `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn hero_masks_kept(
    masks: *const HeroMasks,
    region_index: usize,
    indices: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> HeroStatus {
    guard(|| copy_out(&region(masks, region_index)?.kept_indices, indices, capacity, out_len))
}

/// Packed LSB-first bitmap of one region, `ceil(N / 8)` bytes.
///
/// # Safety
/// `masks` must be live; `bitmap` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn hero_masks_bitmap(
    masks: *const HeroMasks,
    region_index: usize,
    bitmap: *mut u8,
    capacity: usize,
    out_len: *mut usize,
) -> HeroStatus {
    guard(|| copy_out(&region(masks, region_index)?.to_bitmap(), bitmap, capacity, out_len))
}

/// Prefill cost for a token count. `profile` is a built-in name
/// (`vicuna-7b`, `vicuna-13b`) or a path to a JSON profile; null selects
/// `vicuna-7b`.
///
/// # Safety
/// `profile` must be null or NUL-terminated; `report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hero_prefill_flops(
    n_visual: u64,
    n_text: u64,
    profile: *const c_char,
    report: *mut HeroEfficiency,
) -> HeroStatus {
    guard(|| {
        let dst = out(report, "report")?;
        let p = if profile.is_null() {
            LlmProfile::vicuna_7b()
        } else {
            let name = CStr::from_ptr(profile)
                .to_str()
                .map_err(|_| fail(HeroStatus::InvalidArgument, "profile is not UTF-8"))?;
            LlmProfile::resolve(name)?
        };
        let r = prefill_flops(n_visual, n_text, &p);
        *dst = HeroEfficiency {
            tflops: r.tflops,
            kv_cache_mib: r.kv_cache_mib,
            per_layer_flops: r.per_layer_flops,
        };
        Ok(())
    })
}
