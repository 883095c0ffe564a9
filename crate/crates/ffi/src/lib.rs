//! C interface to the `remi` toolkit.
//!
//! Objects cross the boundary as opaque handles released with their
//! `*_free` function. Every call returns a [`RemiStatus`]; on failure
//! [`remi_last_error`] describes the problem. Buffers and strings handed
//! out by the library are owned by the caller and released with
//! [`remi_buffer_free`] and [`remi_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use remi::chords::{recognize_chords, Quality};
use remi::codec::{decode_remi, decode_to_performance, encode_midilike, encode_remi, EncodeOptions};
use remi::metrics::rhythm_report;
use remi::midi_io::{parse_smf, write_smf};
use remi::seqmodel::{load_checkpoint, sample, Checkpoint, SampleOptions};
use remi::timegrid::{dequantize, quantize, GridConfig, QuantizedScore};
use remi::tokens::{MidiLikeVariant, Representation, TokenSequence};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    CodecError = 4,
    ModelError = 5,
    IoError = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemiRepresentation {
    Remi = 0,
    MidiLikeV1 = 1,
    MidiLikeV2 = 2,
    MidiLikeV3 = 3,
}

impl From<RemiRepresentation> for Representation {
    fn from(r: RemiRepresentation) -> Self {
        match r {
            RemiRepresentation::Remi => Representation::Remi,
            RemiRepresentation::MidiLikeV1 => Representation::MidiLike(MidiLikeVariant::V1),
            RemiRepresentation::MidiLikeV2 => Representation::MidiLike(MidiLikeVariant::V2),
            RemiRepresentation::MidiLikeV3 => Representation::MidiLike(MidiLikeVariant::V3),
        }
    }
}

impl From<Representation> for RemiRepresentation {
    fn from(r: Representation) -> Self {
        match r {
            Representation::Remi => RemiRepresentation::Remi,
            Representation::MidiLike(MidiLikeVariant::V1) => RemiRepresentation::MidiLikeV1,
            Representation::MidiLike(MidiLikeVariant::V2) => RemiRepresentation::MidiLikeV2,
            Representation::MidiLike(MidiLikeVariant::V3) => RemiRepresentation::MidiLikeV3,
        }
    }
}

/// A quantized score.
pub struct RemiScore(QuantizedScore);

/// A token sequence tagged with its representation.
pub struct RemiTokens(TokenSequence);

/// A trained model with its tokenization settings.
pub struct RemiModel(Checkpoint);

/// Bytes owned by the caller.
#[repr(C)]
pub struct RemiBuffer {
    pub data: *mut u8,
    pub len: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemiRhythmReport {
    pub beat_std: f64,
    pub downbeat_std: f64,
    pub n_beats: usize,
    pub n_bars: usize,
    pub grammar_violation_rate: f64,
    pub too_short: bool,
}

/// One chord segment. `root` is -1 and `quality` is -1 when no chord was
/// recognized; otherwise `quality` counts major, minor, diminished,
/// augmented, dominant from 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RemiChordSegment {
    pub start_beat: u32,
    pub length_beats: u32,
    pub root: i32,
    pub quality: i32,
    pub score: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemiSampleOptions {
    pub temperature: f64,
    pub top_k: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(RemiStatus, String);

impl Failure {
    fn new(status: RemiStatus, e: impl ToString) -> Self {
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RemiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RemiStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RemiStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(RemiStatus::NullPointer, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(RemiStatus::NullPointer, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(Failure::new(RemiStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(Failure::new(RemiStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| Failure::new(RemiStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn buffer(bytes: Vec<u8>) -> RemiBuffer {
    let boxed = bytes.into_boxed_slice();
    let len = boxed.len();
    RemiBuffer { data: Box::into_raw(boxed) as *mut u8, len }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn remi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn remi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

#[no_mangle]
pub unsafe extern "C" fn remi_buffer_free(buf: RemiBuffer) {
    if !buf.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf.data, buf.len)));
    }
}

#[no_mangle]
pub unsafe extern "C" fn remi_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// Scores

/// Parse a Standard MIDI File and quantize it to the 16-step grid.
#[no_mangle]
pub unsafe extern "C" fn remi_score_from_midi(data: *const u8, len: usize, out: *mut *mut RemiScore) -> RemiStatus {
    guard(|| {
        let bytes = slice(data, len, "data")?;
        let perf = parse_smf(bytes).map_err(|e| Failure::new(RemiStatus::ParseError, e))?;
        put(out, RemiScore(quantize(&perf, GridConfig::default())))
    })
}

/// Render a score as a Standard MIDI File.
#[no_mangle]
pub unsafe extern "C" fn remi_score_to_midi(score: *const RemiScore, out: *mut RemiBuffer) -> RemiStatus {
    guard(|| {
        let score = get(score, "score")?;
        let out = out.as_mut().ok_or_else(|| Failure::new(RemiStatus::NullPointer, "output pointer is null"))?;
        let bytes = write_smf(&dequantize(&score.0)).map_err(|e| Failure::new(RemiStatus::CodecError, e))?;
        *out = buffer(bytes);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn remi_score_note_count(score: *const RemiScore, out: *mut usize) -> RemiStatus {
    guard(|| {
        let score = get(score, "score")?;
        *out.as_mut().ok_or_else(|| Failure::new(RemiStatus::NullPointer, "output pointer is null"))? =
            score.0.notes.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn remi_score_free(score: *mut RemiScore) {
    if !score.is_null() {
        drop(Box::from_raw(score));
    }
}

/// Chord segments of a score; release with [`remi_chords_free`].
#[no_mangle]
pub unsafe extern "C" fn remi_chords(
    score: *const RemiScore,
    out: *mut *mut RemiChordSegment,
    out_len: *mut usize,
) -> RemiStatus {
    guard(|| {
        let score = get(score, "score")?;
        if out.is_null() || out_len.is_null() {
            return Err(Failure::new(RemiStatus::NullPointer, "output pointer is null"));
        }
        let segments: Vec<RemiChordSegment> = recognize_chords(&score.0)
            .into_iter()
            .map(|s| RemiChordSegment {
                start_beat: s.start_beat,
                length_beats: s.length_beats,
                root: s.label.map_or(-1, |l| l.root as i32),
                quality: s.label.map_or(-1, |l| Quality::ALL.iter().position(|&q| q == l.quality).unwrap_or(0) as i32),
                score: s.score,
            })
            .collect();
        let boxed = segments.into_boxed_slice();
        *out_len = boxed.len();
        *out = Box::into_raw(boxed) as *mut RemiChordSegment;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn remi_chords_free(segments: *mut RemiChordSegment, len: usize) {
    if !segments.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(segments, len)));
    }
}

// ---------------------------------------------------------------------------
// Tokens

/// Tokenize a score. The tempo and chord switches apply to REMI only.
#[no_mangle]
pub unsafe extern "C" fn remi_encode(
    score: *const RemiScore,
    repr: RemiRepresentation,
    with_tempo: bool,
    with_chord: bool,
    out: *mut *mut RemiTokens,
) -> RemiStatus {
    guard(|| {
        let score = get(score, "score")?;
        let seq = match Representation::from(repr) {
            Representation::Remi => encode_remi(&score.0, EncodeOptions { with_tempo, with_chord }),
            Representation::MidiLike(v) => encode_midilike(&dequantize(&score.0), v),
        }
        .map_err(|e| Failure::new(RemiStatus::CodecError, e))?;
        put(out, RemiTokens(seq))
    })
}

/// Decode tokens back to a Standard MIDI File. REMI must be grammatical;
/// MIDI-like sequences are repaired where needed.
#[no_mangle]
pub unsafe extern "C" fn remi_decode_to_midi(tokens: *const RemiTokens, out: *mut RemiBuffer) -> RemiStatus {
    guard(|| {
        let seq = &get(tokens, "tokens")?.0;
        let out = out.as_mut().ok_or_else(|| Failure::new(RemiStatus::NullPointer, "output pointer is null"))?;
        let codec = |e: remi::codec::CodecError| Failure::new(RemiStatus::CodecError, e);
        let perf = match seq.repr {
            Representation::Remi => dequantize(&decode_remi(seq).map_err(codec)?),
            Representation::MidiLike(_) => decode_to_performance(seq).map_err(codec)?.value,
        };
        *out = buffer(write_smf(&perf).map_err(|e| Failure::new(RemiStatus::CodecError, e))?);
        Ok(())
    })
}

/// Parse the line-oriented token text format.
#[no_mangle]
pub unsafe extern "C" fn remi_tokens_from_text(s: *const c_char, out: *mut *mut RemiTokens) -> RemiStatus {
    guard(|| {
        let seq = TokenSequence::from_text(text(s, "text")?).map_err(|e| Failure::new(RemiStatus::ParseError, e))?;
        put(out, RemiTokens(seq))
    })
}

/// Token text; release with [`remi_string_free`].
#[no_mangle]
pub unsafe extern "C" fn remi_tokens_to_text(tokens: *const RemiTokens, out: *mut *mut c_char) -> RemiStatus {
    guard(|| {
        let seq = &get(tokens, "tokens")?.0;
        if out.is_null() {
            return Err(Failure::new(RemiStatus::NullPointer, "output pointer is null"));
        }
        let s = seq.to_text().map_err(|e| Failure::new(RemiStatus::CodecError, e))?;
        *out = CString::new(s).map_err(|e| Failure::new(RemiStatus::CodecError, e))?.into_raw();
        Ok(())
    })
}

/// Build a sequence from vocabulary indices.
#[no_mangle]
pub unsafe extern "C" fn remi_tokens_from_indices(
    repr: RemiRepresentation,
    indices: *const u32,
    len: usize,
    out: *mut *mut RemiTokens,
) -> RemiStatus {
    guard(|| {
        let repr = Representation::from(repr);
        let idx = slice(indices, len, "indices")?;
        let size = repr.vocab().size();
        if let Some(bad) = idx.iter().find(|&&i| i >= size) {
            return Err(Failure::new(RemiStatus::InvalidArgument, format!("index {bad} outside {repr} vocabulary")));
        }
        put(out, RemiTokens(TokenSequence { repr, indices: idx.to_vec() }))
    })
}

/// Borrow the vocabulary indices; valid while the handle lives.
#[no_mangle]
pub unsafe extern "C" fn remi_tokens_indices(
    tokens: *const RemiTokens,
    data: *mut *const u32,
    len: *mut usize,
) -> RemiStatus {
    guard(|| {
        let seq = &get(tokens, "tokens")?.0;
        if data.is_null() || len.is_null() {
            return Err(Failure::new(RemiStatus::NullPointer, "output pointer is null"));
        }
        *data = seq.indices.as_ptr();
        *len = seq.indices.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn remi_tokens_representation(
    tokens: *const RemiTokens,
    out: *mut RemiRepresentation,
) -> RemiStatus {
    guard(|| {
        let seq = &get(tokens, "tokens")?.0;
        *out.as_mut().ok_or_else(|| Failure::new(RemiStatus::NullPointer, "output pointer is null"))? = seq.repr.into();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn remi_tokens_free(tokens: *mut RemiTokens) {
    if !tokens.is_null() {
        drop(Box::from_raw(tokens));
    }
}

/// Rhythm statistics of a REMI sequence.
#[no_mangle]
pub unsafe extern "C" fn remi_rhythm_report(tokens: *const RemiTokens, out: *mut RemiRhythmReport) -> RemiStatus {
    guard(|| {
        let seq = &get(tokens, "tokens")?.0;
        let out = out.as_mut().ok_or_else(|| Failure::new(RemiStatus::NullPointer, "output pointer is null"))?;
        let r = rhythm_report(seq).map_err(|e| Failure::new(RemiStatus::InvalidArgument, e))?;
        *out = RemiRhythmReport {
            beat_std: r.beat_std,
            downbeat_std: r.downbeat_std,
            n_beats: r.n_beats,
            n_bars: r.n_bars,
            grammar_violation_rate: r.grammar_violation_rate,
            too_short: r.too_short,
        };
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Models

/// Load a checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn remi_model_load(path: *const c_char, out: *mut *mut RemiModel) -> RemiStatus {
    guard(|| {
        let path = text(path, "path")?;
        let ckpt = load_checkpoint(Path::new(path)).map_err(|e| match e {
            remi::seqmodel::ModelError::Io(io) => Failure::new(RemiStatus::IoError, io),
            other => Failure::new(RemiStatus::ModelError, other),
        })?;
        put(out, RemiModel(ckpt))
    })
}

#[no_mangle]
pub unsafe extern "C" fn remi_model_representation(
    model: *const RemiModel,
    out: *mut RemiRepresentation,
) -> RemiStatus {
    guard(|| {
        let model = get(model, "model")?;
        *out.as_mut().ok_or_else(|| Failure::new(RemiStatus::NullPointer, "output pointer is null"))? =
            model.0.representation.into();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn remi_model_free(model: *mut RemiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Defaults: temperature 1, top-k 16, 512 tokens, seed 0.
#[no_mangle]
pub extern "C" fn remi_sample_options_default() -> RemiSampleOptions {
    let d = SampleOptions::default();
    RemiSampleOptions { temperature: d.temperature, top_k: d.top_k, max_tokens: d.max_tokens, seed: d.seed }
}

/// Continue `prompt` (or start from a lone `Bar` when it is null and the
/// model is REMI), never emitting the `mask_len` indices in `mask`.
#[no_mangle]
pub unsafe extern "C" fn remi_generate(
    model: *const RemiModel,
    prompt: *const RemiTokens,
    options: *const RemiSampleOptions,
    mask: *const u32,
    mask_len: usize,
    out: *mut *mut RemiTokens,
) -> RemiStatus {
    guard(|| {
        let model = &get(model, "model")?.0;
        let opts = get(options, "options")?;
        let mask = slice(mask, mask_len, "mask")?.to_vec();
        let prompt = match prompt.as_ref() {
            Some(p) => p.0.clone(),
            None if model.representation == Representation::Remi => {
                TokenSequence { repr: Representation::Remi, indices: vec![0] }
            }
            None => return Err(Failure::new(RemiStatus::InvalidArgument, "MIDI-like models need a prompt")),
        };
        let sample_opts = SampleOptions {
            temperature: opts.temperature,
            top_k: opts.top_k,
            max_tokens: opts.max_tokens,
            mask,
            seed: opts.seed,
            context: None,
        };
        let seq = sample(&model.params, &prompt, &sample_opts).map_err(|e| Failure::new(RemiStatus::ModelError, e))?;
        put(out, RemiTokens(seq))
    })
}
