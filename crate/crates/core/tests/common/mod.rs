#![allow(dead_code)]

pub mod model_oracle;

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remi::codec::{encode_remi, EncodeOptions};
use remi::midi_io::{canonicalize_notes, Note, Performance, TempoMarking};
use remi::timegrid::{quantize, GridConfig, QuantizedNote, QuantizedScore};
use remi::tokens::TokenSequence;

pub const TOY_BARS: u64 = 16;

/// A pseudo-random on-grid piece in one key: a two-chord-per-bar diatonic
/// progression repeating every four bars under a four-bar melody that
/// returns with a fresh variation every eighth bar. The tempo swings
/// smoothly by up to 8 BPM around a per-piece base.
pub fn toy_performance(seed: u64) -> Performance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tpb = 480u64;
    let step = tpb / 4;
    let mut perf = Performance::new(tpb as u16);
    let base = rng.random_range(100..140) as f64;
    perf.tempo_map = (0..TOY_BARS * 4)
        .map(|b| {
            let swing = 8.0 * (std::f64::consts::TAU * b as f64 / 16.0).sin();
            TempoMarking::from_bpm(b * tpb, (base + swing).round())
        })
        .collect();
    let key = rng.random_range(0..12u8);
    let diatonic = [(0u8, 4u8), (2, 3), (4, 3), (5, 4), (7, 4), (9, 3)];
    let progression: Vec<(u8, u8)> = (0..8).map(|_| diatonic[rng.random_range(0..6)]).collect();
    let chord_velocity = rng.random_range(40..70u8);
    let phrase: Vec<_> = (0..4).map(|_| melody_bar(&mut rng)).collect();
    let mut notes = Vec::new();
    for bar in 0..TOY_BARS {
        let bar_start = bar * 4 * tpb;
        for half in 0..2u64 {
            let (degree, third) = progression[((bar % 4) * 2 + half) as usize];
            for iv in [0, third, 7] {
                notes.push(Note {
                    pitch: 48 + (key + degree) % 12 + iv,
                    velocity: chord_velocity,
                    onset: bar_start + half * 2 * tpb,
                    duration: 2 * tpb,
                });
            }
        }
        let melody = if bar % 8 == 7 { melody_bar(&mut rng) } else { phrase[(bar % 4) as usize].clone() };
        for (slot, pitch, velocity, len) in melody {
            notes.push(Note { pitch, velocity, onset: bar_start + slot * step, duration: len * step });
        }
    }
    perf.notes = canonicalize_notes(notes);
    perf.validate().expect("toy piece is valid");
    perf
}

/// Six notes as (slot, pitch, velocity, length) in sixteenths, non-overlapping.
fn melody_bar(rng: &mut ChaCha8Rng) -> Vec<(u64, u8, u8, u64)> {
    let mut slots: Vec<u64> = (0..16).collect();
    for _ in 0..10 {
        slots.swap_remove(rng.random_range(0..slots.len()));
    }
    slots.sort();
    slots
        .iter()
        .enumerate()
        .map(|(i, &slot)| {
            let next = slots.get(i + 1).copied().unwrap_or(16);
            (slot, rng.random_range(72..90), rng.random_range(60..100), rng.random_range(1..=(next - slot).min(4)))
        })
        .collect()
}

pub fn toy_scores() -> Vec<QuantizedScore> {
    (0..2).map(|s| quantize(&toy_performance(100 + s), GridConfig::default())).collect()
}

pub fn toy_remi(with_tempo: bool) -> Vec<TokenSequence> {
    toy_scores()
        .iter()
        .map(|qs| encode_remi(qs, EncodeOptions { with_tempo, with_chord: true }).expect("encodable"))
        .collect()
}

/// A valid performance with random resolution, tempo map and notes.
pub fn random_performance(rng: &mut impl Rng) -> Performance {
    let tpb = match rng.random_range(0..4) {
        0 => 480,
        1 => 96,
        2 => 960,
        _ => rng.random_range(1..0x8000u16),
    };
    let mut perf = Performance::new(tpb);
    let mut tick = 0;
    perf.tempo_map.clear();
    for i in 0..rng.random_range(1..6) {
        if i > 0 {
            tick += rng.random_range(1..5000u64);
        }
        perf.tempo_map.push(TempoMarking { tick, micros_per_quarter: rng.random_range(1..=0xFF_FFFF) });
    }
    let notes = (0..rng.random_range(0..60))
        .map(|_| Note {
            pitch: rng.random_range(0..128),
            velocity: rng.random_range(1..128),
            onset: rng.random_range(0..20_000),
            duration: rng.random_range(1..5000),
        })
        .collect();
    perf.notes = canonicalize_notes(notes);
    perf
}

/// A valid quantized score on the default grid with per-beat tempi drawn
/// from `tempi`.
pub fn random_score(rng: &mut impl Rng, tempi: RangeInclusive<u16>) -> QuantizedScore {
    let n_bars = rng.random_range(1..8u32);
    let beat_tempi = (0..n_bars * 4).map(|_| rng.random_range(tempi.clone())).collect();
    let mut notes: Vec<QuantizedNote> = (0..rng.random_range(0..40))
        .map(|_| QuantizedNote {
            bar: rng.random_range(0..n_bars),
            position: rng.random_range(1..=16),
            pitch: rng.random_range(0..128),
            velocity_bin: rng.random_range(0..32),
            duration_units: rng.random_range(1..=64),
        })
        .collect();
    notes.sort();
    let qs = QuantizedScore { grid: GridConfig::default(), notes, beat_tempi };
    qs.validate().expect("random score is valid");
    qs
}
