//! C interface to the maple latency predictor.
//!
//! Every fallible function returns a [`MapleStatus`]. On failure, a
//! description is available from [`maple_last_error`] until the next call
//! on the same thread. Models and descriptors are opaque handles that the
//! caller releases with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use maple_core::devicesim::{pool_device, sim_descriptor};
use maple_core::eval::error_bound_accuracy;
use maple_core::hwcounters::HardwareDescriptor;
use maple_core::predictor::{predict_device, RegressionModel};
use maple_core::search_space::{
    decode, encode, flops, ArchEncoding, ArchitectureId, NetworkSkeleton, ENCODING_LEN, NUM_EDGES,
    NUM_OPS,
};
use maple_core::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapleStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Shape = 6,
    Unsupported = 7,
    Internal = 8,
}

/// Trained predictor.
pub struct MapleModel(RegressionModel);

/// Hardware descriptor of one device.
pub struct MapleDescriptor(HardwareDescriptor);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MapleStatus {
    match e {
        Error::Domain(_) | Error::Usage(_) | Error::MalformedEncoding(_) => {
            MapleStatus::InvalidArgument
        }
        Error::Io(_) => MapleStatus::Io,
        Error::Parse { .. } | Error::Json(_) => MapleStatus::Parse,
        Error::Validation(_) => MapleStatus::Validation,
        Error::Shape(_) => MapleStatus::Shape,
        Error::Unsupported(_) => MapleStatus::Unsupported,
        Error::Divergence { .. } => MapleStatus::Internal,
    }
}

struct Fail(MapleStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(MapleStatus::NullPointer, format!("`{name}` is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MapleStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MapleStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MapleStatus::Internal
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail(MapleStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_out<'a, T>(p: *mut T, n: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

fn arch(id: u32) -> Result<ArchitectureId, Fail> {
    Ok(ArchitectureId::new(id)?)
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn maple_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn maple_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maple_model_load(
    path: *const c_char,
    out: *mut *mut MapleModel,
) -> MapleStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = RegressionModel::load_json(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(MapleModel(m)));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`maple_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn maple_model_free(model: *mut MapleModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads a descriptor JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maple_descriptor_load(
    path: *const c_char,
    out: *mut *mut MapleDescriptor,
) -> MapleStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let d = HardwareDescriptor::load_json(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(MapleDescriptor(d)));
        Ok(())
    })
}

/// Descriptor of the default simulated device with the given seed.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maple_descriptor_sim(
    seed: u64,
    out: *mut *mut MapleDescriptor,
) -> MapleStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(MapleDescriptor(sim_descriptor(&pool_device(seed)))));
        Ok(())
    })
}

/// Releases a descriptor. Null is ignored.
///
/// # Safety
/// `desc` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn maple_descriptor_free(desc: *mut MapleDescriptor) {
    if !desc.is_null() {
        drop(Box::from_raw(desc));
    }
}

/// Predicted latency in milliseconds of one architecture.
///
/// # Safety
/// Handles must be live; `out_ms` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maple_predict(
    model: *const MapleModel,
    desc: *const MapleDescriptor,
    arch_id: u32,
    out_ms: *mut f64,
) -> MapleStatus {
    maple_predict_batch(model, desc, &arch_id, 1, out_ms)
}

/// Predicted latencies for `n` architecture ids, written in input order.
///
/// # Safety
/// Handles must be live; `arch_ids` and `out_ms` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn maple_predict_batch(
    model: *const MapleModel,
    desc: *const MapleDescriptor,
    arch_ids: *const u32,
    n: usize,
    out_ms: *mut f64,
) -> MapleStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let d = &desc.as_ref().ok_or_else(|| null("desc"))?.0;
        let ids = slice_arg(arch_ids, n, "arch_ids")?;
        let out = slice_out(out_ms, n, "out_ms")?;
        let archs = ids.iter().map(|&i| arch(i)).collect::<Result<Vec<_>, _>>()?;
        out.copy_from_slice(&predict_device(m, &archs, d));
        Ok(())
    })
}

/// One-hot encoding of an architecture: 30 values, edge-major.
///
/// # Safety
/// `out` must hold 30 doubles.
#[no_mangle]
pub unsafe extern "C" fn maple_encode(arch_id: u32, out: *mut f64) -> MapleStatus {
    guard(|| {
        let out = slice_out(out, ENCODING_LEN, "out")?;
        out.copy_from_slice(&encode(arch(arch_id)?).flatten());
        Ok(())
    })
}

/// Inverse of [`maple_encode`]; every edge row must be exactly one-hot.
///
/// # Safety
/// `encoding` must hold 30 doubles; `out_id` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maple_decode(encoding: *const f64, out_id: *mut u32) -> MapleStatus {
    guard(|| {
        let v = slice_arg(encoding, ENCODING_LEN, "encoding")?;
        let out = out_arg(out_id, "out_id")?;
        let mut enc = ArchEncoding {
            matrix: [[0; NUM_OPS]; NUM_EDGES],
        };
        for (row, chunk) in enc.matrix.iter_mut().zip(v.chunks(NUM_OPS)) {
            for (bit, &x) in row.iter_mut().zip(chunk) {
                *bit = if x == 0.0 {
                    0
                } else if x == 1.0 {
                    1
                } else {
                    return Err(Fail(
                        MapleStatus::InvalidArgument,
                        format!("encoding entries must be 0 or 1, got {x}"),
                    ));
                };
            }
        }
        *out = decode(&enc)?.get();
        Ok(())
    })
}

/// FLOPs of the full network with `cells_per_stage` cells in each stage.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maple_flops(
    arch_id: u32,
    cells_per_stage: usize,
    out: *mut u64,
) -> MapleStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if cells_per_stage == 0 {
            return Err(Fail(
                MapleStatus::InvalidArgument,
                "cells_per_stage must be at least 1".into(),
            ));
        }
        *out = flops(arch(arch_id)?, &NetworkSkeleton::with_cells_per_stage(cells_per_stage));
        Ok(())
    })
}

/// Fraction of `n` predictions within `bound` relative error of the truth.
///
/// # Safety
/// `preds` and `truths` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maple_error_bound_accuracy(
    preds: *const f64,
    truths: *const f64,
    n: usize,
    bound: f64,
    out: *mut f64,
) -> MapleStatus {
    guard(|| {
        let p = slice_arg(preds, n, "preds")?;
        let t = slice_arg(truths, n, "truths")?;
        let out = out_arg(out, "out")?;
        *out = error_bound_accuracy(p, t, bound)?;
        Ok(())
    })
}
