//! C ABI over `phcle`.
//!
//! Models are opaque `PhcleModel` handles released with `phcle_model_free`.
//! Every fallible call returns a `PhcleStatus`; on failure a message is kept
//! per thread and read back with `phcle_last_error`. Strings are NUL
//! terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::ArrayView1;
use phcle::datamodel::{load_model, model_to_bytes, EmbeddingModel, HyperParams, VocabularyMaps};
use phcle::eval::{cosine_similarity, describe_embedding, retrieve_labels};
use phcle::ingest::{load_attribute_table, read_sparse_cooccurrence};
use phcle::trainer::train;
use phcle::{AttributeContext, Error};

/// Result of every fallible call. The first four values match the command
/// line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhcleStatus {
    Ok = 0,
    Io = 1,
    InvalidInput = 2,
    Diverged = 3,
    NullPointer = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Trained model with its vocabularies and hyperparameters.
pub struct PhcleModel {
    model: EmbeddingModel,
    vocab: VocabularyMaps,
    hyper: HyperParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: PhcleStatus, msg: impl Into<String>) -> PhcleStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> PhcleStatus {
    let status = match e.exit_code() {
        1 => PhcleStatus::Io,
        3 => PhcleStatus::Diverged,
        _ => PhcleStatus::InvalidInput,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> PhcleStatus) -> PhcleStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(PhcleStatus::Panic, "internal panic"))
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, PhcleStatus> {
    if s.is_null() {
        return Err(fail(PhcleStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(PhcleStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `m` must be null or a handle returned by this library.
unsafe fn model_arg<'a>(m: *const PhcleModel) -> Result<&'a PhcleModel, PhcleStatus> {
    m.as_ref().ok_or_else(|| fail(PhcleStatus::NullPointer, "model handle is null"))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! lib {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return from_error(e),
        }
    };
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn phcle_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a binary model file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn phcle_model_load(path: *const c_char, out: *mut *mut PhcleModel) -> PhcleStatus {
    guard(|| {
        let path = tri!(str_arg(path, "path"));
        if out.is_null() {
            return fail(PhcleStatus::NullPointer, "output pointer is null");
        }
        let (model, vocab, hyper) = lib!(load_model(path));
        *out = Box::into_raw(Box::new(PhcleModel { model, vocab, hyper }));
        PhcleStatus::Ok
    })
}

/// Writes the model in the binary format.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn phcle_model_save(model: *const PhcleModel, path: *const c_char) -> PhcleStatus {
    guard(|| {
        let m = tri!(model_arg(model));
        let path = tri!(str_arg(path, "path"));
        let bytes = lib!(model_to_bytes(&m.model, &m.vocab, &m.hyper));
        lib!(std::fs::write(path, bytes).map_err(Error::from));
        PhcleStatus::Ok
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn phcle_model_free(model: *mut PhcleModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trains from a sparse co-occurrence file, an optional attribute table and
/// an optional config file (null for defaults).
///
/// # Safety
/// Path arguments must be null (where allowed) or NUL-terminated strings;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn phcle_train_files(
    cooc_path: *const c_char,
    attrs_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut PhcleModel,
) -> PhcleStatus {
    guard(|| {
        let cooc = PathBuf::from(tri!(str_arg(cooc_path, "co-occurrence path")));
        if out.is_null() {
            return fail(PhcleStatus::NullPointer, "output pointer is null");
        }
        let hyper = if config_path.is_null() {
            HyperParams::default()
        } else {
            let text = lib!(std::fs::read_to_string(tri!(str_arg(config_path, "config path"))).map_err(Error::from));
            lib!(HyperParams::from_config_str(&text)).0
        };
        let file = lib!(std::fs::File::open(&cooc).map_err(Error::from));
        let (d, labels, contexts) = lib!(read_sparse_cooccurrence(std::io::BufReader::new(file)));
        let mut vocab = VocabularyMaps::new(labels, contexts, Default::default());
        let ctx = if attrs_path.is_null() {
            lib!(AttributeContext::fully_observed(ndarray::Array2::zeros((vocab.labels.len(), 0))))
        } else {
            let table = lib!(load_attribute_table(tri!(str_arg(attrs_path, "attribute path")), &vocab));
            vocab.attributes = table.attributes;
            table.context
        };
        let (model, _) = lib!(train(&d, &ctx, &hyper, &vocab));
        *out = Box::into_raw(Box::new(PhcleModel { model, vocab, hyper }));
        PhcleStatus::Ok
    })
}

/// Embedding dimension, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn phcle_model_dim(model: *const PhcleModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.dim())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn phcle_model_num_labels(model: *const PhcleModel) -> usize {
    model.as_ref().map_or(0, |m| m.vocab.labels.len())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn phcle_model_num_attributes(model: *const PhcleModel) -> usize {
    model.as_ref().map_or(0, |m| m.vocab.attributes.len())
}

/// Index of a label name.
///
/// # Safety
/// `model` must be a live handle, `name` a NUL-terminated string and
/// `out_index` writable.
#[no_mangle]
pub unsafe extern "C" fn phcle_model_label_index(
    model: *const PhcleModel,
    name: *const c_char,
    out_index: *mut usize,
) -> PhcleStatus {
    guard(|| {
        let m = tri!(model_arg(model));
        let name = tri!(str_arg(name, "label name"));
        if out_index.is_null() {
            return fail(PhcleStatus::NullPointer, "output pointer is null");
        }
        match m.vocab.labels.index_of(name) {
            Some(i) => {
                *out_index = i;
                PhcleStatus::Ok
            }
            None => {
                let hint = m.vocab.labels.suggestions(name, 3);
                let msg = if hint.is_empty() {
                    format!("label '{name}' unknown")
                } else {
                    format!("label '{name}' unknown (did you mean: {}?)", hint.join(", "))
                };
                fail(PhcleStatus::InvalidInput, msg)
            }
        }
    })
}

/// Copies the name of label `index` into `buf` with a trailing NUL.
/// `*out_len` receives the name length in bytes without the NUL, also when
/// the buffer is too small.
///
/// # Safety
/// `buf` must point to `buf_len` writable bytes; `out_len` may be null.
#[no_mangle]
pub unsafe extern "C" fn phcle_model_label_name(
    model: *const PhcleModel,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    out_len: *mut usize,
) -> PhcleStatus {
    guard(|| {
        let m = tri!(model_arg(model));
        if index >= m.vocab.labels.len() {
            return fail(PhcleStatus::InvalidInput, format!("label index {index} out of range"));
        }
        let name = m.vocab.labels.name(index).as_bytes();
        if !out_len.is_null() {
            *out_len = name.len();
        }
        if buf.is_null() {
            return fail(PhcleStatus::NullPointer, "buffer is null");
        }
        if buf_len < name.len() + 1 {
            return fail(PhcleStatus::BufferTooSmall, format!("name needs {} bytes", name.len() + 1));
        }
        ptr::copy_nonoverlapping(name.as_ptr(), buf.cast::<u8>(), name.len());
        *buf.add(name.len()) = 0;
        PhcleStatus::Ok
    })
}

/// Copies the embedding of label `index` into `out` (`len` >= dim).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn phcle_model_embedding(
    model: *const PhcleModel,
    index: usize,
    out: *mut f64,
    len: usize,
) -> PhcleStatus {
    guard(|| {
        let m = tri!(model_arg(model));
        if index >= m.model.w.ncols() {
            return fail(PhcleStatus::InvalidInput, format!("label index {index} out of range"));
        }
        if out.is_null() {
            return fail(PhcleStatus::NullPointer, "output buffer is null");
        }
        let dim = m.model.dim();
        if len < dim {
            return fail(PhcleStatus::BufferTooSmall, format!("embedding needs {dim} values"));
        }
        for (i, v) in m.model.w.column(index).iter().enumerate() {
            *out.add(i) = *v;
        }
        PhcleStatus::Ok
    })
}

/// Cosine similarity of two vectors of length `len`; 0 when either has
/// near-zero norm or a pointer is null.
///
/// # Safety
/// `a` and `b` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn phcle_cosine_similarity(a: *const f64, b: *const f64, len: usize) -> f64 {
    if a.is_null() || b.is_null() || len == 0 {
        return 0.0;
    }
    let a = std::slice::from_raw_parts(a, len);
    let b = std::slice::from_raw_parts(b, len);
    cosine_similarity(ArrayView1::from(a), ArrayView1::from(b))
}

/// Top `topk` labels most similar to `query`, excluding it. Indices and
/// similarities go to arrays of capacity `topk`; `*out_count` receives the
/// number written.
///
/// # Safety
/// Output arrays must hold `topk` elements.
#[no_mangle]
pub unsafe extern "C" fn phcle_model_retrieve(
    model: *const PhcleModel,
    query: *const c_char,
    topk: usize,
    out_indices: *mut usize,
    out_similarities: *mut f64,
    out_count: *mut usize,
) -> PhcleStatus {
    guard(|| {
        let m = tri!(model_arg(model));
        let query = tri!(str_arg(query, "query"));
        if out_indices.is_null() || out_similarities.is_null() || out_count.is_null() {
            return fail(PhcleStatus::NullPointer, "output pointer is null");
        }
        let hits = lib!(retrieve_labels(&m.model, &m.vocab, query, topk));
        for (i, n) in hits.iter().enumerate() {
            *out_indices.add(i) = n.index;
            *out_similarities.add(i) = n.similarity;
        }
        *out_count = hits.len();
        PhcleStatus::Ok
    })
}

/// Describes `vector` (length `len` = dim): related labels with their
/// percentage of the covered similarity mass, then the `top_attrs`
/// best-scoring attributes. Fails with `BufferTooSmall` when more related
/// labels are selected than `related_cap`.
///
/// # Safety
/// `vector` must point to `len` doubles; related arrays must hold
/// `related_cap` elements and attribute arrays `top_attrs` elements.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn phcle_model_describe(
    model: *const PhcleModel,
    vector: *const f64,
    len: usize,
    coverage: f64,
    top_attrs: usize,
    related_indices: *mut usize,
    related_percent: *mut f64,
    related_cap: usize,
    related_count: *mut usize,
    attr_indices: *mut usize,
    attr_scores: *mut f64,
    attr_count: *mut usize,
) -> PhcleStatus {
    guard(|| {
        let m = tri!(model_arg(model));
        let outs = [related_indices.is_null(), related_percent.is_null(), related_count.is_null()];
        let attr_outs = [attr_indices.is_null(), attr_scores.is_null(), attr_count.is_null()];
        if vector.is_null() || outs.iter().chain(&attr_outs).any(|&n| n) {
            return fail(PhcleStatus::NullPointer, "pointer argument is null");
        }
        let star = std::slice::from_raw_parts(vector, len);
        let desc = lib!(describe_embedding(&m.model, &m.vocab, star, coverage, top_attrs));
        *related_count = desc.related.len();
        if desc.related.len() > related_cap {
            return fail(
                PhcleStatus::BufferTooSmall,
                format!("{} related labels selected", desc.related.len()),
            );
        }
        for (i, r) in desc.related.iter().enumerate() {
            *related_indices.add(i) = r.index;
            *related_percent.add(i) = r.percent;
        }
        for (i, s) in desc.attributes.iter().enumerate() {
            *attr_indices.add(i) = s.index;
            *attr_scores.add(i) = s.score;
        }
        *attr_count = desc.attributes.len();
        PhcleStatus::Ok
    })
}
