//! Conversion between quantized scores / performances and token sequences.

use thiserror::Error;

use crate::chords::{beat_position, recognize_chords};
use crate::midi_io::{canonicalize_notes, Note, Performance, DEFAULT_TICKS_PER_BEAT};
use crate::timegrid::{
    bin_to_velocity, bins_to_tempo, dequantize, integer_tempo_to_bins, quantize, velocity_to_bin, GridConfig,
    QuantizedNote, QuantizedScore, DEFAULT_BPM, MAX_DURATION_UNITS,
};
use crate::tokens::{
    validate_grammar, MidiLikeToken, MidiLikeVariant, RemiToken, Representation, Token, TokenError, TokenSequence,
    Violation,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("ungrammatical REMI sequence: {0}")]
    Ungrammatical(Violation),
    #[error("expected a {expected} sequence, got {found}")]
    WrongRepresentation { expected: String, found: Representation },
    #[error("REMI and grid time shifts require 16 positions per bar, got {0}")]
    UnsupportedGrid(u32),
    #[error(transparent)]
    Token(#[from] TokenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncodeOptions {
    pub with_tempo: bool,
    pub with_chord: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions { with_tempo: true, with_chord: true }
    }
}

/// Decoder output for representations that can need repairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

fn require_q16(grid: &GridConfig) -> Result<(), CodecError> {
    if grid.positions_per_bar() != 16 {
        return Err(CodecError::UnsupportedGrid(grid.positions_per_bar()));
    }
    Ok(())
}

/// Encode a quantized score as REMI.
///
/// Within one position the order is tempo pair, chord, then notes by
/// ascending pitch; each group carries its own `Position` token.
pub fn encode_remi(qs: &QuantizedScore, opts: EncodeOptions) -> Result<TokenSequence, CodecError> {
    require_q16(&qs.grid)?;
    let mut chord_at: Vec<Option<RemiToken>> = vec![None; qs.n_beats() as usize];
    if opts.with_chord {
        for seg in recognize_chords(qs) {
            if let Some(label) = seg.label {
                chord_at[seg.start_beat as usize] = Some(RemiToken::Chord(label));
            }
        }
    }

    let mut toks: Vec<Token> = Vec::new();
    let mut push = |t: RemiToken| toks.push(Token::Remi(t));
    let mut notes = qs.notes.iter().peekable();
    for bar in 0..qs.n_bars() {
        push(RemiToken::Bar);
        for position in 1..=16u8 {
            if (position - 1) % 4 == 0 {
                let beat = (bar * 4 + (position as u32 - 1) / 4) as usize;
                if opts.with_tempo {
                    let (class, value) = integer_tempo_to_bins(qs.beat_tempi[beat]);
                    push(RemiToken::Position(position));
                    push(RemiToken::TempoClass(class));
                    push(RemiToken::TempoValue(value));
                }
                if let Some(chord) = chord_at[beat] {
                    debug_assert_eq!(beat_position(&qs.grid, beat as u32), (bar, position));
                    push(RemiToken::Position(position));
                    push(chord);
                }
            }
            while let Some(n) = notes.next_if(|n| n.bar == bar && n.position == position) {
                push(RemiToken::Position(position));
                push(RemiToken::NoteVelocity(n.velocity_bin));
                push(RemiToken::NoteOn(n.pitch));
                push(RemiToken::NoteDuration(n.duration_units));
            }
        }
    }
    Ok(TokenSequence::from_tokens(Representation::Remi, &toks)?)
}

fn require_repr(seq: &TokenSequence, ok: impl Fn(Representation) -> bool, expected: &str) -> Result<(), CodecError> {
    if !ok(seq.repr) {
        return Err(CodecError::WrongRepresentation { expected: expected.into(), found: seq.repr });
    }
    Ok(())
}

/// Decode a grammatical REMI sequence. Chord tokens are ignored.
pub fn decode_remi(seq: &TokenSequence) -> Result<QuantizedScore, CodecError> {
    require_repr(seq, |r| r == Representation::Remi, "REMI")?;
    if let Some(v) = validate_grammar(seq)?.into_iter().next() {
        return Err(CodecError::Ungrammatical(v));
    }
    Ok(walk_remi(seq)?.value)
}

/// Decode whatever complete groups a REMI sequence contains, skipping
/// malformed ones. Used for model output, which is not guaranteed to be
/// grammatical.
pub fn decode_remi_lenient(seq: &TokenSequence) -> Result<Decoded<QuantizedScore>, CodecError> {
    require_repr(seq, |r| r == Representation::Remi, "REMI")?;
    walk_remi(seq)
}

fn walk_remi(seq: &TokenSequence) -> Result<Decoded<QuantizedScore>, CodecError> {
    let tokens: Vec<RemiToken> = seq
        .tokens()?
        .into_iter()
        .map(|t| match t {
            Token::Remi(r) => r,
            Token::MidiLike(_) => unreachable!("REMI vocabulary"),
        })
        .collect();
    let mut warnings = Vec::new();
    let mut bar_tempi: Vec<[Option<u16>; 4]> = Vec::new();
    let mut notes = Vec::new();
    let mut position: Option<u8> = None;
    let mut i = 0;
    while i < tokens.len() {
        let bar = bar_tempi.len().checked_sub(1);
        match (tokens[i], bar, position) {
            (RemiToken::Bar, _, _) => {
                bar_tempi.push([None; 4]);
                position = None;
                i += 1;
            }
            (RemiToken::Position(p), Some(_), _) => {
                position = Some(p);
                i += 1;
            }
            (RemiToken::TempoClass(c), Some(b), Some(p)) => match tokens.get(i + 1) {
                Some(RemiToken::TempoValue(v)) => {
                    bar_tempi[b][(p as usize - 1) / 4] = Some(bins_to_tempo(c, *v));
                    i += 2;
                }
                _ => {
                    warnings.push(format!("token {i}: Tempo-Class without Tempo-Value skipped"));
                    i += 1;
                }
            },
            (RemiToken::NoteVelocity(vel), Some(b), Some(p)) => match (tokens.get(i + 1), tokens.get(i + 2)) {
                (Some(RemiToken::NoteOn(pitch)), Some(RemiToken::NoteDuration(d))) => {
                    notes.push(QuantizedNote {
                        bar: b as u32,
                        position: p,
                        pitch: *pitch,
                        velocity_bin: vel,
                        duration_units: *d,
                    });
                    i += 3;
                }
                _ => {
                    warnings.push(format!("token {i}: incomplete note triple skipped"));
                    i += 1;
                }
            },
            (RemiToken::Chord(_), _, _) => i += 1,
            (t, _, _) => {
                warnings.push(format!("token {i}: {} out of place, skipped", Token::Remi(t)));
                i += 1;
            }
        }
    }

    let mut beat_tempi = Vec::with_capacity(bar_tempi.len() * 4);
    let mut current = DEFAULT_BPM;
    for bt in bar_tempi.iter().flatten() {
        if let Some(t) = bt {
            current = *t;
        }
        beat_tempi.push(current);
    }
    notes.sort();
    Ok(Decoded {
        value: QuantizedScore { grid: GridConfig::default(), notes, beat_tempi },
        warnings,
    })
}

/// Longest single 10 ms time shift, in bins.
const MAX_SHIFT_MS_BINS: u64 = 100;
/// Longest single grid time shift, in 16th notes.
const MAX_SHIFT_GRID: u64 = 16;

fn push_shifts(out: &mut Vec<Token>, mut delta: u64, max: u64, make: fn(u8) -> MidiLikeToken) {
    while delta > 0 {
        let step = delta.min(max);
        out.push(Token::MidiLike(make(step as u8)));
        delta -= step;
    }
}

fn duration_units(ticks: u64, tpb: u16) -> u8 {
    let tpb = tpb as u64;
    let units = (ticks * 8 + tpb / 2) / tpb;
    units.clamp(1, MAX_DURATION_UNITS as u64) as u8
}

/// Encode a performance with a MIDI-like baseline. Variant 3 quantizes the
/// performance onto the 16th-note grid first.
pub fn encode_midilike(perf: &Performance, variant: MidiLikeVariant) -> Result<TokenSequence, CodecError> {
    if variant == MidiLikeVariant::V3 {
        return encode_midilike_score(&quantize(perf, GridConfig::default()), variant);
    }
    let repr = Representation::MidiLike(variant);
    let ms_bin = |tick: u64| (perf.tick_to_seconds(tick) * 100.0).round() as u64;
    let vel = |v: u8| velocity_to_bin(v.min(127)).expect("clamped");
    let mut toks = Vec::new();
    match variant {
        MidiLikeVariant::V1 => {
            // (bin, 0 = off / 1 = on, pitch, velocity bin)
            let mut events = Vec::with_capacity(perf.notes.len() * 2);
            for n in &perf.notes {
                let on = ms_bin(n.onset);
                let off = ms_bin(n.offset()).max(on + 1);
                events.push((on, 1u8, n.pitch, vel(n.velocity)));
                events.push((off, 0u8, n.pitch, 0));
            }
            events.sort();
            let mut now = 0;
            for (bin, kind, pitch, v) in events {
                push_shifts(&mut toks, bin - now, MAX_SHIFT_MS_BINS, MidiLikeToken::TimeShiftMs);
                now = bin;
                if kind == 0 {
                    toks.push(Token::MidiLike(MidiLikeToken::NoteOff(pitch)));
                } else {
                    toks.push(Token::MidiLike(MidiLikeToken::NoteVelocity(v)));
                    toks.push(Token::MidiLike(MidiLikeToken::NoteOn(pitch)));
                }
            }
        }
        MidiLikeVariant::V2 => {
            let mut now = 0;
            for n in &perf.notes {
                let bin = ms_bin(n.onset);
                push_shifts(&mut toks, bin.saturating_sub(now), MAX_SHIFT_MS_BINS, MidiLikeToken::TimeShiftMs);
                now = now.max(bin);
                toks.push(Token::MidiLike(MidiLikeToken::NoteVelocity(vel(n.velocity))));
                toks.push(Token::MidiLike(MidiLikeToken::NoteOn(n.pitch)));
                toks.push(Token::MidiLike(MidiLikeToken::NoteDuration(duration_units(
                    n.duration,
                    perf.ticks_per_beat,
                ))));
            }
        }
        MidiLikeVariant::V3 => unreachable!("handled above"),
    }
    Ok(TokenSequence::from_tokens(repr, &toks)?)
}

/// Encode a quantized score with a MIDI-like baseline. Variants 1 and 2
/// render the score to milliseconds through its per-beat tempi.
pub fn encode_midilike_score(qs: &QuantizedScore, variant: MidiLikeVariant) -> Result<TokenSequence, CodecError> {
    if variant != MidiLikeVariant::V3 {
        return encode_midilike(&dequantize(qs), variant);
    }
    require_q16(&qs.grid)?;
    let mut toks = Vec::new();
    let mut now = 0u64;
    for n in &qs.notes {
        let idx = n.grid_index(&qs.grid);
        push_shifts(&mut toks, idx - now, MAX_SHIFT_GRID, MidiLikeToken::TimeShiftGrid);
        now = idx;
        toks.push(Token::MidiLike(MidiLikeToken::NoteVelocity(n.velocity_bin)));
        toks.push(Token::MidiLike(MidiLikeToken::NoteOn(n.pitch)));
        toks.push(Token::MidiLike(MidiLikeToken::NoteDuration(n.duration_units)));
    }
    // Run the clock out to the end of the last bar so the bar count survives.
    let end = qs.n_bars() as u64 * 16;
    push_shifts(&mut toks, end.saturating_sub(now), MAX_SHIFT_GRID, MidiLikeToken::TimeShiftGrid);
    Ok(TokenSequence::from_tokens(Representation::MidiLike(variant), &toks)?)
}

/// Ticks at 480 per beat and 120 BPM for a count of 10 ms bins.
fn ms_bins_to_ticks(bins: u64) -> u64 {
    // 10 ms = 9.6 ticks
    (bins * 48 + 2) / 5
}

const DANGLING_UNITS: u64 = MAX_DURATION_UNITS as u64;

struct NoteCollector {
    notes: Vec<Note>,
    warnings: Vec<String>,
}

impl NoteCollector {
    fn dangling(&mut self, i: usize, pitch: u8, onset: u64, velocity: u8) {
        self.warnings.push(format!(
            "token {i}: dangling Note-On_{pitch} closed after the maximal duration of {DANGLING_UNITS} 32nd notes"
        ));
        self.notes.push(Note { pitch, velocity, onset, duration: DANGLING_UNITS * 60 });
    }
}

/// Decode a MIDI-like sequence to a performance at 480 ticks per beat and a
/// constant 120 BPM (the baselines carry no tempo).
pub fn decode_midilike(seq: &TokenSequence) -> Result<Decoded<Performance>, CodecError> {
    let Representation::MidiLike(variant) = seq.repr else {
        return Err(CodecError::WrongRepresentation { expected: "MIDI-like".into(), found: seq.repr });
    };
    if variant == MidiLikeVariant::V3 {
        let d = decode_midilike_grid(seq)?;
        return Ok(Decoded { value: dequantize(&d.value), warnings: d.warnings });
    }
    let tokens = seq.tokens()?;
    let mut c = NoteCollector { notes: Vec::new(), warnings: Vec::new() };
    let mut now_bins = 0u64;
    let mut velocity_bin = 16u8;
    let mut open: [Option<(usize, u64, u8)>; 128] = [None; 128];
    let mut pending: Option<(usize, u8, u64, u8)> = None;

    for (i, t) in tokens.iter().enumerate() {
        let Token::MidiLike(t) = *t else { unreachable!("MIDI-like vocabulary") };
        let now = ms_bins_to_ticks(now_bins);
        if variant == MidiLikeVariant::V2 && !matches!(t, MidiLikeToken::NoteDuration(_)) {
            if let Some((j, pitch, onset, vel)) = pending.take() {
                c.dangling(j, pitch, onset, vel);
            }
        }
        let vel = bin_to_velocity(velocity_bin).expect("valid bin");
        match t {
            MidiLikeToken::TimeShiftMs(k) => now_bins += k as u64,
            MidiLikeToken::TimeShiftGrid(_) => unreachable!("not in v1/v2 vocabularies"),
            MidiLikeToken::NoteVelocity(b) => velocity_bin = b,
            MidiLikeToken::NoteOn(pitch) => match variant {
                MidiLikeVariant::V1 => {
                    if let Some((_, onset, v)) = open[pitch as usize].take() {
                        c.notes.push(Note { pitch, velocity: v, onset, duration: now - onset });
                    }
                    open[pitch as usize] = Some((i, now, vel));
                }
                _ => pending = Some((i, pitch, now, vel)),
            },
            MidiLikeToken::NoteOff(pitch) => match open[pitch as usize].take() {
                Some((_, onset, v)) => c.notes.push(Note { pitch, velocity: v, onset, duration: now - onset }),
                None => c.warnings.push(format!("token {i}: Note-Off_{pitch} without a sounding note ignored")),
            },
            MidiLikeToken::NoteDuration(d) => match pending.take() {
                Some((_, pitch, onset, v)) => {
                    c.notes.push(Note { pitch, velocity: v, onset, duration: d as u64 * 60 })
                }
                None => c.warnings.push(format!("token {i}: Note-Duration without Note-On ignored")),
            },
        }
    }
    if let Some((j, pitch, onset, vel)) = pending.take() {
        c.dangling(j, pitch, onset, vel);
    }
    for (pitch, slot) in open.iter().enumerate() {
        if let Some((j, onset, vel)) = *slot {
            c.dangling(j, pitch as u8, onset, vel);
        }
    }
    let mut perf = Performance::new(DEFAULT_TICKS_PER_BEAT);
    perf.notes = canonicalize_notes(c.notes);
    Ok(Decoded { value: perf, warnings: c.warnings })
}

/// Decode a variant-3 sequence straight onto the grid. Exact inverse of
/// [`encode_midilike_score`] apart from tempo, which variant 3 does not carry.
pub fn decode_midilike_grid(seq: &TokenSequence) -> Result<Decoded<QuantizedScore>, CodecError> {
    require_repr(
        seq,
        |r| r == Representation::MidiLike(MidiLikeVariant::V3),
        "MIDI-like-v3",
    )?;
    let tokens = seq.tokens()?;
    let mut warnings = Vec::new();
    let mut now = 0u64;
    let mut velocity_bin = 16u8;
    let mut notes = Vec::new();
    let mut pending: Option<(usize, u8, u64)> = None;
    let note_at = |idx: u64, pitch: u8, velocity_bin: u8, duration_units: u8| QuantizedNote {
        bar: (idx / 16) as u32,
        position: (idx % 16) as u8 + 1,
        pitch,
        velocity_bin,
        duration_units,
    };
    for (i, t) in tokens.iter().enumerate() {
        let Token::MidiLike(t) = *t else { unreachable!("MIDI-like vocabulary") };
        if !matches!(t, MidiLikeToken::NoteDuration(_)) {
            if let Some((j, pitch, at)) = pending.take() {
                warnings.push(format!(
                    "token {j}: dangling Note-On_{pitch} closed after the maximal duration of {DANGLING_UNITS} 32nd notes"
                ));
                notes.push(note_at(at, pitch, velocity_bin, MAX_DURATION_UNITS));
            }
        }
        match t {
            MidiLikeToken::TimeShiftGrid(k) => now += k as u64,
            MidiLikeToken::NoteVelocity(b) => velocity_bin = b,
            MidiLikeToken::NoteOn(pitch) => pending = Some((i, pitch, now)),
            MidiLikeToken::NoteDuration(d) => match pending.take() {
                Some((_, pitch, at)) => notes.push(note_at(at, pitch, velocity_bin, d)),
                None => warnings.push(format!("token {i}: Note-Duration without Note-On ignored")),
            },
            _ => unreachable!("not in the v3 vocabulary"),
        }
    }
    if let Some((j, pitch, at)) = pending.take() {
        warnings.push(format!(
            "token {j}: dangling Note-On_{pitch} closed after the maximal duration of {DANGLING_UNITS} 32nd notes"
        ));
        notes.push(note_at(at, pitch, velocity_bin, MAX_DURATION_UNITS));
    }
    notes.sort();
    let n_bars = notes.last().map_or(0, |n| n.bar as u64 + 1).max(now.div_ceil(16));
    Ok(Decoded {
        value: QuantizedScore {
            grid: GridConfig::default(),
            notes,
            beat_tempi: vec![DEFAULT_BPM; n_bars as usize * 4],
        },
        warnings,
    })
}

/// Encode a score in any representation.
pub fn encode(qs: &QuantizedScore, repr: Representation, opts: EncodeOptions) -> Result<TokenSequence, CodecError> {
    match repr {
        Representation::Remi => encode_remi(qs, opts),
        Representation::MidiLike(v) => encode_midilike_score(qs, v),
    }
}

/// Decode any representation to a performance, repairing what can be
/// repaired and reporting it.
pub fn decode_to_performance(seq: &TokenSequence) -> Result<Decoded<Performance>, CodecError> {
    match seq.repr {
        Representation::Remi => {
            let d = decode_remi_lenient(seq)?;
            Ok(Decoded { value: dequantize(&d.value), warnings: d.warnings })
        }
        Representation::MidiLike(_) => decode_midilike(seq),
    }
}
