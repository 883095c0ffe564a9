use std::ffi::{CStr, CString};
use std::ptr;

use remi::codec::EncodeOptions;
use remi::midi_io::{canonicalize_notes, write_smf, Note, Performance, TempoMarking};
use remi::seqmodel::{save_checkpoint, Checkpoint, ModelConfig, ModelParams};
use remi::tokens::Representation;
use remi_ffi::*;

/// Two bars of C major and A minor triads with an arpeggio above, at 100 BPM.
fn midi_bytes() -> Vec<u8> {
    let tpb = 480u64;
    let mut perf = Performance::new(tpb as u16);
    perf.tempo_map = vec![TempoMarking::from_bpm(0, 100.0)];
    let mut notes = Vec::new();
    for (bar, root, third) in [(0u64, 60u8, 4u8), (1, 57, 3)] {
        for iv in [0, third, 7] {
            notes.push(Note { pitch: root + iv, velocity: 64, onset: bar * 4 * tpb, duration: 4 * tpb });
        }
        for (beat, iv) in [0, third, 7, 12].into_iter().enumerate() {
            let onset = (bar * 4 + beat as u64) * tpb;
            notes.push(Note { pitch: root + 12 + iv, velocity: 90, onset, duration: tpb });
        }
    }
    perf.notes = canonicalize_notes(notes);
    write_smf(&perf).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(remi_last_error()) }.to_str().unwrap().to_owned()
}

fn load_score() -> *mut RemiScore {
    let bytes = midi_bytes();
    let mut score = ptr::null_mut();
    assert_eq!(unsafe { remi_score_from_midi(bytes.as_ptr(), bytes.len(), &mut score) }, RemiStatus::Ok);
    score
}

fn encode(score: *const RemiScore, repr: RemiRepresentation) -> *mut RemiTokens {
    let mut tokens = ptr::null_mut();
    assert_eq!(unsafe { remi_encode(score, repr, true, true, &mut tokens) }, RemiStatus::Ok);
    tokens
}

fn indices(tokens: *const RemiTokens) -> Vec<u32> {
    let (mut data, mut len) = (ptr::null(), 0);
    assert_eq!(unsafe { remi_tokens_indices(tokens, &mut data, &mut len) }, RemiStatus::Ok);
    unsafe { std::slice::from_raw_parts(data, len) }.to_vec()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(remi_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn midi_round_trips_through_tokens() {
    let score = load_score();
    let mut n = 0;
    assert_eq!(unsafe { remi_score_note_count(score, &mut n) }, RemiStatus::Ok);
    assert_eq!(n, 14);

    let tokens = encode(score, RemiRepresentation::Remi);
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { remi_tokens_to_text(tokens, &mut text) }, RemiStatus::Ok);
    let s = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
    assert!(s.starts_with("# tokens v1 REMI\nBar\n"), "{s}");
    assert!(s.contains("Chord_C_maj") && s.contains("Chord_A_min"), "{s}");

    let mut parsed = ptr::null_mut();
    assert_eq!(unsafe { remi_tokens_from_text(text, &mut parsed) }, RemiStatus::Ok);
    assert_eq!(indices(parsed), indices(tokens));
    let mut repr = RemiRepresentation::MidiLikeV1;
    assert_eq!(unsafe { remi_tokens_representation(parsed, &mut repr) }, RemiStatus::Ok);
    assert_eq!(repr, RemiRepresentation::Remi);

    let mut midi = RemiBuffer { data: ptr::null_mut(), len: 0 };
    assert_eq!(unsafe { remi_decode_to_midi(tokens, &mut midi) }, RemiStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { remi_score_from_midi(midi.data, midi.len, &mut back) }, RemiStatus::Ok);
    assert_eq!(indices(encode(back, RemiRepresentation::Remi)), indices(tokens));

    unsafe {
        remi_buffer_free(midi);
        remi_string_free(text);
        remi_tokens_free(parsed);
        remi_tokens_free(tokens);
        remi_score_free(back);
        remi_score_free(score);
    }
}

#[test]
fn midi_like_tokens_decode() {
    let score = load_score();
    for repr in [RemiRepresentation::MidiLikeV1, RemiRepresentation::MidiLikeV2, RemiRepresentation::MidiLikeV3] {
        let tokens = encode(score, repr);
        let idx = indices(tokens);
        let mut rebuilt = ptr::null_mut();
        assert_eq!(unsafe { remi_tokens_from_indices(repr, idx.as_ptr(), idx.len(), &mut rebuilt) }, RemiStatus::Ok);
        let mut midi = RemiBuffer { data: ptr::null_mut(), len: 0 };
        assert_eq!(unsafe { remi_decode_to_midi(rebuilt, &mut midi) }, RemiStatus::Ok);
        assert!(midi.len > 14);
        unsafe {
            remi_buffer_free(midi);
            remi_tokens_free(rebuilt);
            remi_tokens_free(tokens);
        }
    }
    unsafe { remi_score_free(score) };
}

#[test]
fn chords_and_rhythm() {
    let score = load_score();
    let (mut segs, mut len) = (ptr::null_mut(), 0);
    assert_eq!(unsafe { remi_chords(score, &mut segs, &mut len) }, RemiStatus::Ok);
    let found = unsafe { std::slice::from_raw_parts(segs, len) }.to_vec();
    unsafe { remi_chords_free(segs, len) };
    assert_eq!(found.iter().map(|s| s.length_beats).sum::<u32>(), 8);
    assert_eq!((found[0].start_beat, found[0].root, found[0].quality), (0, 0, 0));
    let last = found.last().unwrap();
    assert_eq!((last.root, last.quality), (9, 1));

    let tokens = encode(score, RemiRepresentation::Remi);
    let mut report = RemiRhythmReport {
        beat_std: -1.0,
        downbeat_std: -1.0,
        n_beats: 0,
        n_bars: 0,
        grammar_violation_rate: -1.0,
        too_short: true,
    };
    assert_eq!(unsafe { remi_rhythm_report(tokens, &mut report) }, RemiStatus::Ok);
    assert_eq!((report.beat_std, report.downbeat_std, report.grammar_violation_rate), (0.0, 0.0, 0.0));
    assert_eq!(report.n_bars, 2);
    unsafe {
        remi_tokens_free(tokens);
        remi_score_free(score);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut score = ptr::null_mut();
    let junk = b"RIFF\0\0\0\0";
    assert_eq!(unsafe { remi_score_from_midi(junk.as_ptr(), junk.len(), &mut score) }, RemiStatus::ParseError);
    assert!(!last_error().is_empty());
    assert!(score.is_null());

    assert_eq!(unsafe { remi_score_from_midi(ptr::null(), 4, &mut score) }, RemiStatus::NullPointer);
    assert!(last_error().contains("null"));

    let bad = CString::new("# tokens v1 REMI\nBar\nPosition_99/16\n").unwrap();
    let mut tokens = ptr::null_mut();
    assert_eq!(unsafe { remi_tokens_from_text(bad.as_ptr(), &mut tokens) }, RemiStatus::ParseError);

    let out_of_range = [0u32, 10_000];
    let status = unsafe { remi_tokens_from_indices(RemiRepresentation::Remi, out_of_range.as_ptr(), 2, &mut tokens) };
    assert_eq!(status, RemiStatus::InvalidArgument);

    // a position without its group cannot be decoded
    let dangling = [0u32, 1, 140];
    assert_eq!(
        unsafe { remi_tokens_from_indices(RemiRepresentation::Remi, dangling.as_ptr(), 3, &mut tokens) },
        RemiStatus::Ok
    );
    let mut midi = RemiBuffer { data: ptr::null_mut(), len: 0 };
    assert_eq!(unsafe { remi_decode_to_midi(tokens, &mut midi) }, RemiStatus::CodecError);
    unsafe { remi_tokens_free(tokens) };

    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { remi_model_load(missing.as_ptr(), &mut model) }, RemiStatus::IoError);

    let score = load_score();
    assert_eq!(unsafe { remi_score_note_count(score, ptr::null_mut()) }, RemiStatus::NullPointer);
    let mut n = 0;
    assert_eq!(unsafe { remi_score_note_count(score, &mut n) }, RemiStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe { remi_score_free(score) };

    // freeing null is a no-op
    unsafe {
        remi_score_free(ptr::null_mut());
        remi_tokens_free(ptr::null_mut());
        remi_model_free(ptr::null_mut());
        remi_string_free(ptr::null_mut());
        remi_buffer_free(RemiBuffer { data: ptr::null_mut(), len: 0 });
    }
}

#[test]
fn generation_is_seeded_and_masked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let config = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        model_dim: 16,
        ffn_dim: 32,
        vocab_size: Representation::Remi.vocab().size() as usize,
        segment_len: 16,
        memory_len: 16,
        tie_embeddings: false,
        seed: 9,
    };
    let ckpt = Checkpoint {
        params: ModelParams::init(config).unwrap(),
        representation: Representation::Remi,
        encode: EncodeOptions::default(),
    };
    save_checkpoint(&path, &ckpt).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { remi_model_load(c_path.as_ptr(), &mut model) }, RemiStatus::Ok);
    let mut repr = RemiRepresentation::MidiLikeV1;
    assert_eq!(unsafe { remi_model_representation(model, &mut repr) }, RemiStatus::Ok);
    assert_eq!(repr, RemiRepresentation::Remi);

    let mut opts = remi_sample_options_default();
    assert_eq!((opts.temperature, opts.top_k), (1.0, 16));
    opts.max_tokens = 40;
    let chords: Vec<u32> = (80..140).collect();
    let run = |seed: u64| {
        let opts = RemiSampleOptions { seed, ..opts };
        let mut out = ptr::null_mut();
        let status = unsafe { remi_generate(model, ptr::null(), &opts, chords.as_ptr(), chords.len(), &mut out) };
        assert_eq!(status, RemiStatus::Ok, "{}", last_error());
        let idx = indices(out);
        unsafe { remi_tokens_free(out) };
        idx
    };
    let a = run(1);
    assert_eq!(a[0], 0);
    assert_eq!(a.len(), 41);
    assert!(a.iter().all(|i| !(80..140).contains(i)));
    assert_eq!(a, run(1));
    assert_ne!(a, run(2));

    let score = load_score();
    let prompt = encode(score, RemiRepresentation::Remi);
    let prefix = indices(prompt);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { remi_generate(model, prompt, &opts, ptr::null(), 0, &mut out) }, RemiStatus::Ok);
    let continued = indices(out);
    assert_eq!(&continued[..prefix.len()], &prefix[..]);
    assert_eq!(continued.len(), prefix.len() + 40);

    let everything: Vec<u32> = (0..Representation::Remi.vocab().size()).collect();
    let status = unsafe { remi_generate(model, prompt, &opts, everything.as_ptr(), everything.len(), &mut out) };
    assert_eq!(status, RemiStatus::ModelError);
    unsafe {
        remi_tokens_free(out);
        remi_tokens_free(prompt);
        remi_score_free(score);
        remi_model_free(model);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/remi.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["remi_score_from_midi", "remi_generate", "remi_last_error", "REMI_STATUS_PANIC"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c", header]).output() else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
