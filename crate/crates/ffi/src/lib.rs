//! C ABI over the copygen model.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free`. Every fallible call returns a [`CgStatus`] and, on
//! failure, stores a message retrievable with [`cg_last_error`] on the same
//! thread.
//!
//! # Safety
//!
//! Pointer arguments must be null or valid for the access the function
//! documents: handles must come from this library and not be freed yet,
//! strings must be NUL-terminated, and buffers must hold the stated length.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use copygen::data::LoadOptions;
use copygen::model::rank_entities;
use copygen::vocab::PresentValue;
use copygen::{Checkpoint, Dataset, Error, HistVocab, MaskStyle, Mode, Predictor, Quadruple, Query};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Parse = 5,
    Bounds = 6,
    Sequencing = 7,
    Checkpoint = 8,
    Config = 9,
    Internal = 10,
}

/// Scoring modes accepted by the `mode` argument.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CgMode {
    Full = 0,
    CopyOnly = 1,
    GenOnly = 2,
    GenNew = 3,
}

/// A loaded checkpoint.
pub struct CgModel {
    ckpt: Checkpoint,
}

/// A historical vocabulary built snapshot by snapshot.
pub struct CgVocab {
    vocab: HistVocab,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: CgStatus, msg: impl Into<String>) -> CgStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> CgStatus {
    match err {
        Error::Io { .. } => CgStatus::Io,
        Error::Parse { .. } => CgStatus::Parse,
        Error::Bounds { .. } => CgStatus::Bounds,
        Error::Sequencing { .. } => CgStatus::Sequencing,
        Error::Checkpoint(_) => CgStatus::Checkpoint,
        Error::Config(_) => CgStatus::Config,
        Error::Parameter(_) | Error::Split(_) | Error::Capacity(_) => CgStatus::InvalidArgument,
        Error::NonFiniteGradient { .. } => CgStatus::Internal,
    }
}

fn from_error(err: Error) -> CgStatus {
    fail(status_of(&err), format!("{}: {err}", err.kind()))
}

/// Runs `body`, turning panics into `Internal`.
fn guard(body: impl FnOnce() -> CgStatus) -> CgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(CgStatus::Internal, "panic inside copygen"),
    }
}

fn mode_from(raw: u32) -> Option<Mode> {
    match raw {
        0 => Some(Mode::Full),
        1 => Some(Mode::CopyOnly),
        2 => Some(Mode::GenOnly),
        3 => Some(Mode::GenNew),
        _ => None,
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, CgStatus> {
    if path.is_null() {
        return Err(fail(CgStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(CgStatus::InvalidArgument, "path is not valid UTF-8"))
}

/// Copies the last error message of this thread into `buf` as a NUL-terminated
/// string, truncating if needed. Returns the full message length in bytes
/// (excluding the terminator), so a caller can size a second attempt.
#[no_mangle]
pub unsafe extern "C" fn cg_last_error(buf: *mut c_char, len: usize) -> usize {
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

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a `CYG1` checkpoint.
#[no_mangle]
pub unsafe extern "C" fn cg_model_load(path: *const c_char, out: *mut *mut CgModel) -> CgStatus {
    guard(|| {
        if out.is_null() {
            return fail(CgStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Checkpoint::load(path) {
            Ok(ckpt) => {
                *out = Box::into_raw(Box::new(CgModel { ckpt }));
                CgStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cg_model_free(model: *mut CgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Entity count, relation count (reciprocals included), snapshot count and
/// embedding dimension. Any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn cg_model_dims(
    model: *const CgModel,
    num_entities: *mut u32,
    num_relations: *mut u32,
    num_snapshots: *mut u32,
    dim: *mut u32,
) -> CgStatus {
    let Some(m) = model.as_ref() else {
        return fail(CgStatus::NullPointer, "model is null");
    };
    let p = &m.ckpt.params;
    for (dst, v) in [
        (num_entities, p.num_entities() as u32),
        (num_relations, p.num_relations() as u32),
        (num_snapshots, m.ckpt.num_snapshots),
        (dim, p.dim() as u32),
    ] {
        if !dst.is_null() {
            *dst = v;
        }
    }
    CgStatus::Ok
}

/// Mixing weight stored in the checkpoint.
#[no_mangle]
pub unsafe extern "C" fn cg_model_alpha(model: *const CgModel, alpha: *mut f64) -> CgStatus {
    match (model.as_ref(), alpha.is_null()) {
        (Some(m), false) => {
            *alpha = m.ckpt.alpha.to_string().parse().unwrap_or(f64::from(m.ckpt.alpha));
            CgStatus::Ok
        }
        _ => fail(CgStatus::NullPointer, "model or alpha is null"),
    }
}

/// Empty vocabulary with frontier 0.
#[no_mangle]
pub extern "C" fn cg_vocab_new() -> *mut CgVocab {
    Box::into_raw(Box::new(CgVocab {
        vocab: HistVocab::new(),
    }))
}

/// Vocabulary of every training snapshot of a prepared dataset directory.
#[no_mangle]
pub unsafe extern "C" fn cg_vocab_from_dataset(dir: *const c_char, out: *mut *mut CgVocab) -> CgStatus {
    guard(|| {
        if out.is_null() {
            return fail(CgStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let dir = match path_arg(dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Dataset::load(dir, LoadOptions::default()) {
            Ok(ds) => {
                let seq = ds.train_snapshots();
                let vocab = HistVocab::from_sequence(&seq, seq.len());
                *out = Box::into_raw(Box::new(CgVocab { vocab }));
                CgStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cg_vocab_free(vocab: *mut CgVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Index of the next snapshot the vocabulary expects.
#[no_mangle]
pub unsafe extern "C" fn cg_vocab_frontier(vocab: *const CgVocab) -> u32 {
    vocab.as_ref().map_or(0, |v| v.vocab.frontier() as u32)
}

/// Adds snapshot `step` given as parallel arrays of `len` ids. Snapshots must
/// arrive in increasing order; a gap or repeat yields `Sequencing`.
#[no_mangle]
pub unsafe extern "C" fn cg_vocab_absorb(
    vocab: *mut CgVocab,
    step: u32,
    subjects: *const u32,
    relations: *const u32,
    objects: *const u32,
    len: usize,
) -> CgStatus {
    guard(|| {
        let Some(v) = vocab.as_mut() else {
            return fail(CgStatus::NullPointer, "vocab is null");
        };
        if len > 0 && (subjects.is_null() || relations.is_null() || objects.is_null()) {
            return fail(CgStatus::NullPointer, "id array is null");
        }
        let facts: Vec<Quadruple> = (0..len)
            .map(|i| Quadruple::new(*subjects.add(i), *relations.add(i), *objects.add(i), step))
            .collect();
        match v.vocab.absorb_snapshot(step as usize, &facts) {
            Ok(()) => CgStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

struct Request<'a> {
    model: &'a CgModel,
    vocab: &'a CgVocab,
    query: Query,
    alpha: f64,
    mode: Mode,
}

unsafe fn request<'a>(
    model: *const CgModel,
    vocab: *const CgVocab,
    subject: u32,
    relation: u32,
    step: u32,
    alpha: f64,
    mode: u32,
) -> Result<Request<'a>, CgStatus> {
    let (Some(model), Some(vocab)) = (model.as_ref(), vocab.as_ref()) else {
        return Err(fail(CgStatus::NullPointer, "model or vocab is null"));
    };
    let Some(mode) = mode_from(mode) else {
        return Err(fail(CgStatus::InvalidArgument, format!("unknown mode {mode}")));
    };
    let query = Query::new(subject, relation, step as usize);
    model.ckpt.params.check_query(&query).map_err(from_error)?;
    Ok(Request {
        model,
        vocab,
        query,
        alpha,
        mode,
    })
}

impl Request<'_> {
    fn combined(&self) -> Result<Vec<f32>, CgStatus> {
        let mask = MaskStyle {
            magnitude: f64::from(self.model.ckpt.mask_magnitude),
            present: PresentValue::Zero,
        };
        let predictor = Predictor::new(&self.model.ckpt.params, &self.vocab.vocab, mask, self.alpha, self.mode)
            .map_err(from_error)?;
        Ok(predictor.scores(&self.query).combined.into_vec())
    }
}

/// Writes the probability of every entity for `(subject, relation, ?, step)`
/// into `probs`, which must hold at least `len >= N` floats. `mode` takes a
/// [`CgMode`] value.
#[no_mangle]
pub unsafe extern "C" fn cg_predict_probs(
    model: *const CgModel,
    vocab: *const CgVocab,
    subject: u32,
    relation: u32,
    step: u32,
    alpha: f64,
    mode: u32,
    probs: *mut f32,
    len: usize,
) -> CgStatus {
    guard(|| {
        let req = match request(model, vocab, subject, relation, step, alpha, mode) {
            Ok(r) => r,
            Err(s) => return s,
        };
        if probs.is_null() {
            return fail(CgStatus::NullPointer, "probs is null");
        }
        let n = req.model.ckpt.params.num_entities();
        if len < n {
            return fail(CgStatus::BufferTooSmall, format!("need {n} floats, got {len}"));
        }
        match req.combined() {
            Ok(p) => {
                ptr::copy_nonoverlapping(p.as_ptr(), probs, n);
                CgStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Writes the `k` best entity ids, best first, into `ids`. Ties are broken by
/// ascending id. `k` larger than the entity count is an error.
#[no_mangle]
pub unsafe extern "C" fn cg_predict_topk(
    model: *const CgModel,
    vocab: *const CgVocab,
    subject: u32,
    relation: u32,
    step: u32,
    alpha: f64,
    mode: u32,
    ids: *mut u32,
    k: usize,
) -> CgStatus {
    guard(|| {
        let req = match request(model, vocab, subject, relation, step, alpha, mode) {
            Ok(r) => r,
            Err(s) => return s,
        };
        if ids.is_null() {
            return fail(CgStatus::NullPointer, "ids is null");
        }
        let n = req.model.ckpt.params.num_entities();
        if k > n {
            return fail(CgStatus::InvalidArgument, format!("k={k} exceeds {n} entities"));
        }
        match req.combined() {
            Ok(p) => {
                let ranked = rank_entities(&p);
                ptr::copy_nonoverlapping(ranked.as_ptr(), ids, k);
                CgStatus::Ok
            }
            Err(s) => s,
        }
    })
}
