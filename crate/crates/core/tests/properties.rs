mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use remi::chords::recognize_chords;
use remi::codec::{decode_midilike_grid, decode_remi, encode_midilike_score, encode_remi, EncodeOptions};
use remi::metrics::rhythm_report;
use remi::midi_io::{parse_smf, write_smf};
use remi::timegrid::{dequantize, quantize, QuantizedScore};
use remi::tokens::{validate_grammar, GrammarRule, MidiLikeVariant, RemiToken, Token, TokenSequence};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn score(seed: u64) -> QuantizedScore {
    common::random_score(&mut rng(seed), 30..=209)
}

/// Keeps what a performance can hold: notes that start while an earlier
/// note of the same pitch sounds are dropped, and the score ends with the
/// bar of its last onset.
fn representable(mut qs: QuantizedScore) -> QuantizedScore {
    let mut free_at = [0u64; 128];
    qs.notes.retain(|n| {
        let onset = (n.bar as u64 * 16 + n.position as u64 - 1) * 2;
        let ok = onset >= free_at[n.pitch as usize];
        if ok {
            free_at[n.pitch as usize] = onset + n.duration_units as u64;
        }
        ok
    });
    let bars = qs.notes.last().map_or(0, |n| n.bar as usize + 1);
    qs.beat_tempi.truncate(bars * 4);
    qs
}

const ALL_ON: EncodeOptions = EncodeOptions { with_tempo: true, with_chord: true };

/// Counts note-on/note-off pairs directly from the event bytes of a
/// single-track file written with explicit note-off messages.
fn count_pairs(bytes: &[u8]) -> usize {
    let mut i = 14 + 8;
    let mut sounding = [0usize; 128];
    let mut pairs = 0;
    let vlq = |i: &mut usize| {
        let mut v = 0usize;
        loop {
            let b = bytes[*i];
            *i += 1;
            v = (v << 7) | (b & 0x7f) as usize;
            if b & 0x80 == 0 {
                return v;
            }
        }
    };
    while i < bytes.len() {
        vlq(&mut i);
        match bytes[i] {
            0xff => {
                i += 2;
                let n = vlq(&mut i);
                i += n;
            }
            s if s & 0xf0 == 0x90 && bytes[i + 2] > 0 => {
                sounding[bytes[i + 1] as usize] += 1;
                i += 3;
            }
            s if s & 0xf0 == 0x80 || s & 0xf0 == 0x90 => {
                let p = bytes[i + 1] as usize;
                if sounding[p] > 0 {
                    sounding[p] -= 1;
                    pairs += 1;
                }
                i += 3;
            }
            s => panic!("unexpected status {s:#x}"),
        }
    }
    pairs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn smf_round_trip_is_exact(seed in any::<u64>()) {
        let perf = common::random_performance(&mut rng(seed));
        let bytes = write_smf(&perf).unwrap();
        prop_assert_eq!(parse_smf(&bytes).unwrap(), perf);
    }

    #[test]
    fn parsed_notes_match_byte_pairs(seed in any::<u64>()) {
        let perf = common::random_performance(&mut rng(seed));
        let bytes = write_smf(&perf).unwrap();
        prop_assert_eq!(count_pairs(&bytes), parse_smf(&bytes).unwrap().notes.len());
    }

    #[test]
    fn parser_survives_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = parse_smf(&bytes);
        let mut framed = b"MThd\0\0\0\x06\0\0\0\x01\x01\xe0MTrk".to_vec();
        framed.extend((bytes.len() as u32).to_be_bytes());
        framed.extend(&bytes);
        let _ = parse_smf(&framed);
    }

    #[test]
    fn quantize_undoes_dequantize(seed in any::<u64>()) {
        let qs = representable(score(seed));
        prop_assert_eq!(quantize(&dequantize(&qs), qs.grid), qs);
    }

    #[test]
    fn remi_encoding_is_grammatical_and_reversible(seed in any::<u64>(), with_chord in any::<bool>()) {
        let qs = score(seed);
        let seq = encode_remi(&qs, EncodeOptions { with_tempo: true, with_chord }).unwrap();
        prop_assert!(validate_grammar(&seq).unwrap().is_empty());
        prop_assert_eq!(decode_remi(&seq).unwrap(), qs);
    }

    #[test]
    fn encoding_is_deterministic(seed in any::<u64>()) {
        let a = encode_remi(&score(seed), ALL_ON).unwrap().to_text().unwrap();
        let b = encode_remi(&score(seed), ALL_ON).unwrap().to_text().unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn chord_tokens_do_not_change_notes(seed in any::<u64>()) {
        let qs = score(seed);
        let with = decode_remi(&encode_remi(&qs, ALL_ON).unwrap()).unwrap();
        let without = decode_remi(&encode_remi(&qs, EncodeOptions { with_chord: false, ..ALL_ON }).unwrap()).unwrap();
        prop_assert_eq!(with.notes, without.notes);
    }

    #[test]
    fn prefixes_only_dangle(seed in any::<u64>(), cut in 0.0f64..1.0) {
        let seq = encode_remi(&score(seed), ALL_ON).unwrap();
        let n = 1 + ((seq.indices.len() - 1) as f64 * cut) as usize;
        let prefix = TokenSequence { repr: seq.repr, indices: seq.indices[..n].to_vec() };
        for v in validate_grammar(&prefix).unwrap() {
            prop_assert_eq!(v.rule, GrammarRule::G5, "{:?}", v);
        }
    }

    #[test]
    fn grid_midi_like_round_trip(seed in any::<u64>()) {
        let qs = score(seed);
        let seq = encode_midilike_score(&qs, MidiLikeVariant::V3).unwrap();
        prop_assert_eq!(decode_midilike_grid(&seq).unwrap().value.notes, qs.notes);
    }

    #[test]
    fn chord_segments_tile_the_piece(seed in any::<u64>()) {
        let qs = score(seed);
        let mut next = 0;
        for s in recognize_chords(&qs) {
            prop_assert_eq!(s.start_beat, next);
            prop_assert!(s.length_beats > 0);
            next += s.length_beats;
        }
        prop_assert_eq!(next, qs.n_beats());
        prop_assert_eq!(recognize_chords(&qs), recognize_chords(&qs));
    }

    #[test]
    fn beat_std_ignores_transposition(seed in any::<u64>(), k in 0u8..128) {
        let qs = score(seed);
        let room = 127 - qs.notes.iter().map(|n| n.pitch).max().unwrap_or(0);
        let mut moved = qs.clone();
        for n in &mut moved.notes {
            n.pitch += k % (room + 1);
        }
        let a = rhythm_report(&encode_remi(&qs, ALL_ON).unwrap()).unwrap();
        let b = rhythm_report(&encode_remi(&moved, ALL_ON).unwrap()).unwrap();
        prop_assert_eq!(a.beat_std, b.beat_std);
        prop_assert_eq!(a.downbeat_std, b.downbeat_std);
    }

    #[test]
    fn no_tempo_means_no_deviation(seed in any::<u64>()) {
        let seq = encode_remi(&score(seed), EncodeOptions { with_tempo: false, ..ALL_ON }).unwrap();
        let r = rhythm_report(&seq).unwrap();
        prop_assert_eq!((r.beat_std, r.downbeat_std), (0.0, 0.0));
    }

    #[test]
    fn repeated_bar_tempi_give_steady_downbeats(seed in any::<u64>()) {
        let mut qs = score(seed);
        let bar: Vec<u16> = qs.beat_tempi[..4].to_vec();
        for (i, t) in qs.beat_tempi.iter_mut().enumerate() {
            *t = bar[i % 4];
        }
        let r = rhythm_report(&encode_remi(&qs, ALL_ON).unwrap()).unwrap();
        prop_assert_eq!(r.downbeat_std, 0.0);
        prop_assert!(r.beat_std >= 0.0 && (0.0..=1.0).contains(&r.grammar_violation_rate));
    }
}

#[test]
fn a_reversed_position_breaks_g2() {
    let vocab = remi::tokens::Representation::Remi.vocab();
    let idx = |t| vocab.index_of(&Token::Remi(t)).unwrap();
    let mut seq = encode_remi(&score(7), ALL_ON).unwrap();
    seq.indices.truncate(1);
    seq.indices.extend([idx(RemiToken::Position(9)), idx(RemiToken::Position(3))]);
    let rules: Vec<_> = validate_grammar(&seq).unwrap().into_iter().map(|v| v.rule).collect();
    assert!(rules.contains(&GrammarRule::G2), "{rules:?}");
}
