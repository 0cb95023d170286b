//! C bindings for ngram-lab.
//!
//! Models and corpora cross the boundary as opaque handles that the caller
//! frees with `nl_model_free` / `nl_corpus_free`. Every fallible function
//! returns an `NlStatus`; on failure `nl_last_error` describes the problem
//! for the calling thread. Panics never unwind into C; they surface as
//! `NL_STATUS_INTERNAL`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use ngram_lab::classic::{ClassicLm, CountTable, Smoothing};
use ngram_lab::corpus::{sample_strings, Corpus, Split};
use ngram_lab::eval::{empirical_kl, exact_entropy, exact_kl, ScoreFile};
use ngram_lab::gen::{generate_general, generate_representation, GeneralLmSpec, RepLmSpec};
use ngram_lab::lm::{string_logprob, Alphabet, SymbolString};
use ngram_lab::pipeline::AnyModel;
use ngram_lab::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlStatus {
    Ok = 0,
    NullPointer = 1,
    Input = 2,
    Spec = 3,
    Resource = 4,
    Sampling = 5,
    Protocol = 6,
    Model = 7,
    Training = 8,
    Divergence = 9,
    Statistics = 10,
    Format = 11,
    Io = 12,
    Internal = 13,
}

impl From<&Error> for NlStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Input(_) => NlStatus::Input,
            Error::Spec(_) => NlStatus::Spec,
            Error::Resource(_) => NlStatus::Resource,
            Error::Sampling(_) => NlStatus::Sampling,
            Error::Protocol(_) => NlStatus::Protocol,
            Error::Model(_) => NlStatus::Model,
            Error::Training(_) => NlStatus::Training,
            Error::Divergence(_) => NlStatus::Divergence,
            Error::DegenerateColumn(_) | Error::RankDeficient(_) => NlStatus::Statistics,
            Error::Format(_) | Error::Json(_) => NlStatus::Format,
            Error::Io(_) => NlStatus::Io,
        }
    }
}

/// Ground-truth LM family for `nl_generate_lm`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlFamily {
    General = 0,
    Sparse = 1,
    Dense = 2,
}

/// Count-based estimator for `nl_fit_classic`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlMethod {
    Mle = 0,
    AddLambda = 1,
    AbsoluteDiscounting = 2,
    WittenBell = 3,
}

/// Any loadable model: a ground-truth LM, a count-based estimator, or a trained network.
pub struct NlModel(AnyModel);

/// A list of symbol strings with its provenance.
pub struct NlCorpus(Corpus);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Fail {
    Null(&'static str),
    Lab(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lab(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NlStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            NlStatus::NullPointer
        }
        Ok(Err(Fail::Lab(e))) => {
            set_error(e.to_string());
            NlStatus::from(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            NlStatus::Internal
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|e| Error::Input(format!("{what} is not UTF-8: {e}")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Draws a ground-truth LM. `rank` is read only for `NL_FAMILY_DENSE`.
#[no_mangle]
pub unsafe extern "C" fn nl_generate_lm(
    family: NlFamily,
    order: usize,
    alphabet_size: usize,
    rank: usize,
    seed: u64,
    out: *mut *mut NlModel,
) -> NlStatus {
    guard(|| {
        let lm = match family {
            NlFamily::General => generate_general(&GeneralLmSpec::new(order, alphabet_size, seed))?,
            NlFamily::Sparse => generate_representation(&RepLmSpec::sparse(order, alphabet_size, seed))?,
            NlFamily::Dense => generate_representation(&RepLmSpec::dense(order, alphabet_size, rank, seed))?,
        };
        put(out, Box::into_raw(Box::new(NlModel(AnyModel::Truth(lm)))), "out")
    })
}

/// Loads any model file written by the lab.
#[no_mangle]
pub unsafe extern "C" fn nl_model_load(path: *const c_char, out: *mut *mut NlModel) -> NlStatus {
    guard(|| {
        let m = AnyModel::load(&path_arg(path, "path")?)?;
        put(out, Box::into_raw(Box::new(NlModel(m))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn nl_model_save(model: *const NlModel, path: *const c_char) -> NlStatus {
    guard(|| Ok(borrow(model, "model")?.0.save(&path_arg(path, "path")?)?))
}

/// Frees a model handle; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn nl_model_free(model: *mut NlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn nl_model_order(model: *const NlModel, out: *mut usize) -> NlStatus {
    guard(|| put(out, borrow(model, "model")?.0.as_lm().order(), "out"))
}

/// |Σ|, the number of plain symbols.
#[no_mangle]
pub unsafe extern "C" fn nl_model_alphabet_size(model: *const NlModel, out: *mut usize) -> NlStatus {
    guard(|| put(out, borrow(model, "model")?.0.as_lm().alphabet().size(), "out"))
}

/// Natural-log probability of the string `symbols[0..len]` (EOS included implicitly).
#[no_mangle]
pub unsafe extern "C" fn nl_model_logprob(model: *const NlModel, symbols: *const u32, len: usize, out: *mut f64) -> NlStatus {
    guard(|| {
        let lm = borrow(model, "model")?.0.as_lm();
        let y = SymbolString::new(lm.alphabet(), slice_arg(symbols, len, "symbols")?.to_vec())?;
        put(out, string_logprob(lm, &y)?, "out")
    })
}

/// Draws `count` i.i.d. strings.
#[no_mangle]
pub unsafe extern "C" fn nl_sample(
    model: *const NlModel,
    count: usize,
    seed: u64,
    max_len: usize,
    out: *mut *mut NlCorpus,
) -> NlStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let strings = sample_strings(m.0.as_lm(), count, seed, max_len)?;
        let c = Corpus { strings, split: Split::Train, lm_id: String::new(), seed };
        put(out, Box::into_raw(Box::new(NlCorpus(c))), "out")
    })
}

/// Loads a corpus file and its sidecar; `alphabet_size` of 0 skips symbol validation.
#[no_mangle]
pub unsafe extern "C" fn nl_corpus_load(path: *const c_char, alphabet_size: usize, out: *mut *mut NlCorpus) -> NlStatus {
    guard(|| {
        let alphabet = if alphabet_size == 0 { None } else { Some(Alphabet::new(alphabet_size)?) };
        let c = Corpus::load(&path_arg(path, "path")?, alphabet)?;
        put(out, Box::into_raw(Box::new(NlCorpus(c))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn nl_corpus_save(corpus: *const NlCorpus, path: *const c_char) -> NlStatus {
    guard(|| Ok(borrow(corpus, "corpus")?.0.save(&path_arg(path, "path")?)?))
}

#[no_mangle]
pub unsafe extern "C" fn nl_corpus_free(corpus: *mut NlCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

#[no_mangle]
pub unsafe extern "C" fn nl_corpus_len(corpus: *const NlCorpus, out: *mut usize) -> NlStatus {
    guard(|| put(out, borrow(corpus, "corpus")?.0.len(), "out"))
}

/// Copies string `index` into `buf`, which holds `capacity` ids; `out_len`
/// always receives the full length, so a first call with `capacity` 0 sizes the buffer.
#[no_mangle]
pub unsafe extern "C" fn nl_corpus_string(
    corpus: *const NlCorpus,
    index: usize,
    buf: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> NlStatus {
    guard(|| {
        let c = &borrow(corpus, "corpus")?.0;
        let y = c.strings.get(index).ok_or_else(|| Error::Input(format!("index {index} out of {} strings", c.len())))?;
        let ids = y.symbols();
        put(out_len, ids.len(), "out_len")?;
        if capacity > 0 {
            if buf.is_null() {
                return Err(Fail::Null("buf"));
            }
            let n = ids.len().min(capacity);
            std::ptr::copy_nonoverlapping(ids.as_ptr(), buf, n);
        }
        Ok(())
    })
}

/// Fits a count-based estimator of the given order. `hyper` is λ or δ and
/// is ignored by MLE and Witten-Bell.
#[no_mangle]
pub unsafe extern "C" fn nl_fit_classic(
    corpus: *const NlCorpus,
    alphabet_size: usize,
    order: usize,
    method: NlMethod,
    hyper: f64,
    out: *mut *mut NlModel,
) -> NlStatus {
    guard(|| {
        let c = &borrow(corpus, "corpus")?.0;
        let alphabet = Alphabet::new(alphabet_size)?;
        let smoothing = match method {
            NlMethod::Mle => Smoothing::Mle,
            NlMethod::AddLambda => Smoothing::AddLambda { lambda: hyper },
            NlMethod::AbsoluteDiscounting => Smoothing::AbsoluteDiscounting { delta: hyper },
            NlMethod::WittenBell => Smoothing::WittenBell,
        };
        let table = Arc::new(CountTable::count(alphabet, c, order)?);
        let m = ClassicLm::new(table, smoothing, order)?;
        put(out, Box::into_raw(Box::new(NlModel(AnyModel::Classic(m)))), "out")
    })
}

/// Writes ln q(y) for every corpus string into `out[0..len]`; `len` must equal the corpus size.
#[no_mangle]
pub unsafe extern "C" fn nl_score(model: *const NlModel, corpus: *const NlCorpus, out: *mut f64, len: usize) -> NlStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let c = &borrow(corpus, "corpus")?.0;
        if len != c.len() {
            return Err(Error::Input(format!("buffer holds {len} scores, corpus has {} strings", c.len())).into());
        }
        let scores = m.score(c, "ffi")?;
        if len > 0 {
            if out.is_null() {
                return Err(Fail::Null("out"));
            }
            std::ptr::copy_nonoverlapping(scores.logprobs.as_ptr(), out, len);
        }
        Ok(())
    })
}

/// Exact string-level entropy H(p) in nats.
#[no_mangle]
pub unsafe extern "C" fn nl_exact_entropy(p: *const NlModel, out: *mut f64) -> NlStatus {
    guard(|| put(out, exact_entropy(borrow(p, "p")?.0.as_lm())?, "out"))
}

/// Exact KL(p‖q) in nats; may be +inf.
#[no_mangle]
pub unsafe extern "C" fn nl_exact_kl(p: *const NlModel, q: *const NlModel, out: *mut f64) -> NlStatus {
    guard(|| put(out, exact_kl(borrow(p, "p")?.0.as_lm(), borrow(q, "q")?.0.as_lm())?, "out"))
}

/// Empirical KL and its standard error from paired log-probabilities of the same test strings.
#[no_mangle]
pub unsafe extern "C" fn nl_empirical_kl(
    truth: *const f64,
    model: *const f64,
    len: usize,
    out_kl: *mut f64,
    out_stderr: *mut f64,
) -> NlStatus {
    guard(|| {
        let file = |logprobs: &[f64]| ScoreFile {
            model_id: String::new(),
            lm_id: String::new(),
            split: "test".into(),
            logprobs: logprobs.to_vec(),
        };
        let t = file(slice_arg(truth, len, "truth")?);
        let m = file(slice_arg(model, len, "model")?);
        let r = empirical_kl(&t, &m)?;
        put(out_kl, r.kl_hat, "out_kl")?;
        put(out_stderr, r.stderr, "out_stderr")
    })
}
