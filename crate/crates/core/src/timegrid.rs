//! Bar/position grid quantization and the discrete bins used by the
//! tempo and velocity vocabularies.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::midi_io::{canonicalize_notes, Note, Performance, TempoMarking, DEFAULT_TICKS_PER_BEAT};

pub const MIN_BPM: u16 = 30;
pub const MAX_BPM: u16 = 209;
pub const DEFAULT_BPM: u16 = 120;
pub const VELOCITY_BINS: u8 = 32;
pub const MAX_DURATION_UNITS: u8 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Positions per bar and beats per bar. Only 4/4 is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridConfig {
    positions_per_bar: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { positions_per_bar: 16 }
    }
}

impl GridConfig {
    pub const BEATS_PER_BAR: u32 = 4;

    pub fn new(positions_per_bar: u32) -> Result<Self, GridError> {
        if positions_per_bar == 0 || !positions_per_bar.is_multiple_of(Self::BEATS_PER_BAR) {
            return Err(GridError::InvalidArgument(format!(
                "positions per bar ({positions_per_bar}) must be a positive multiple of 4"
            )));
        }
        Ok(GridConfig { positions_per_bar })
    }

    pub fn positions_per_bar(&self) -> u32 {
        self.positions_per_bar
    }

    pub fn positions_per_beat(&self) -> u32 {
        self.positions_per_bar / Self::BEATS_PER_BAR
    }

    /// Grid step in ticks at the canonical 480 ticks per beat.
    pub fn step_ticks(&self) -> u64 {
        (DEFAULT_TICKS_PER_BEAT as u64 * Self::BEATS_PER_BAR as u64) / self.positions_per_bar as u64
    }
}

/// A note on the bar/position grid. `position` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuantizedNote {
    pub bar: u32,
    pub position: u8,
    pub pitch: u8,
    pub velocity_bin: u8,
    /// Multiples of a 32nd note, 1..=64.
    pub duration_units: u8,
}

impl QuantizedNote {
    /// Grid index counted from the start of the piece (0-based).
    pub fn grid_index(&self, grid: &GridConfig) -> u64 {
        self.bar as u64 * grid.positions_per_bar as u64 + (self.position as u64 - 1)
    }

    /// Onset and offset in ticks at 480 ticks per beat.
    pub fn span_ticks(&self, grid: &GridConfig) -> (u64, u64) {
        let onset = self.grid_index(grid) * grid.step_ticks();
        (onset, onset + self.duration_units as u64 * duration_unit_ticks())
    }
}

/// Ticks of one 32nd note at the canonical resolution.
pub fn duration_unit_ticks() -> u64 {
    DEFAULT_TICKS_PER_BEAT as u64 / 8
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct QuantizedScore {
    pub grid: GridConfig,
    /// Sorted by `(bar, position, pitch, velocity_bin, duration_units)`.
    pub notes: Vec<QuantizedNote>,
    /// Integer BPM per beat, `4 * n_bars` entries, each in 30..=209.
    pub beat_tempi: Vec<u16>,
}

impl QuantizedScore {
    pub fn n_bars(&self) -> u32 {
        (self.beat_tempi.len() / GridConfig::BEATS_PER_BAR as usize) as u32
    }

    pub fn n_beats(&self) -> u32 {
        self.beat_tempi.len() as u32
    }

    pub fn sort_notes(&mut self) {
        self.notes.sort();
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |m: String| Err(GridError::InvalidArgument(m));
        if !self.beat_tempi.len().is_multiple_of(GridConfig::BEATS_PER_BAR as usize) {
            return bad(format!("{} beat tempi is not a whole number of bars", self.beat_tempi.len()));
        }
        if let Some(t) = self.beat_tempi.iter().find(|t| !(MIN_BPM..=MAX_BPM).contains(t)) {
            return bad(format!("beat tempo {t} outside {MIN_BPM}..={MAX_BPM}"));
        }
        let q = self.grid.positions_per_bar;
        for n in &self.notes {
            if n.bar >= self.n_bars() {
                return bad(format!("note in bar {} beyond {} bars", n.bar, self.n_bars()));
            }
            if n.position == 0 || n.position as u32 > q {
                return bad(format!("position {} outside 1..={q}", n.position));
            }
            if n.pitch > 127 || n.velocity_bin >= VELOCITY_BINS {
                return bad(format!("pitch {} / velocity bin {} out of range", n.pitch, n.velocity_bin));
            }
            if n.duration_units == 0 || n.duration_units > MAX_DURATION_UNITS {
                return bad(format!("duration {} outside 1..=64", n.duration_units));
            }
        }
        if self.notes.windows(2).any(|w| w[0] > w[1]) {
            return bad("notes are not sorted".into());
        }
        Ok(())
    }
}

/// `num / den` rounded to the nearest integer, exact halves rounding down.
fn round_half_down(num: u128, den: u128) -> u128 {
    let q = num / den;
    let r = num % den;
    if 2 * r > den {
        q + 1
    } else {
        q
    }
}

/// Snap a performance onto the bar/position grid.
///
/// The number of bars runs to the bar holding the last onset, so trailing
/// empty bars are not represented.
pub fn quantize(perf: &Performance, grid: GridConfig) -> QuantizedScore {
    let tpb = perf.ticks_per_beat as u128;
    let q = grid.positions_per_bar as u128;
    let bar_den = GridConfig::BEATS_PER_BAR as u128 * tpb;

    let mut notes: Vec<QuantizedNote> = perf
        .notes
        .iter()
        .map(|n| {
            let idx = round_half_down(n.onset as u128 * q, bar_den);
            let units = round_half_down(n.duration as u128 * 8, tpb).clamp(1, MAX_DURATION_UNITS as u128);
            QuantizedNote {
                bar: (idx / q) as u32,
                position: (idx % q) as u8 + 1,
                pitch: n.pitch,
                velocity_bin: n.velocity.min(127) / 4,
                duration_units: units as u8,
            }
        })
        .collect();
    notes.sort();

    let n_bars = notes.last().map_or(0, |n| n.bar + 1);
    let beat_tempi = (0..n_bars as u64 * GridConfig::BEATS_PER_BAR as u64)
        .map(|beat| {
            let bpm = perf.bpm_at(beat * perf.ticks_per_beat as u64);
            clamp_bpm(bpm)
        })
        .collect();

    QuantizedScore { grid, notes, beat_tempi }
}

fn clamp_bpm(bpm: f64) -> u16 {
    bpm.clamp(MIN_BPM as f64, MAX_BPM as f64).round() as u16
}

/// Rebuild a performance at 480 ticks per beat from a quantized score.
pub fn dequantize(qs: &QuantizedScore) -> Performance {
    let mut perf = Performance::new(DEFAULT_TICKS_PER_BEAT);
    let tpb = DEFAULT_TICKS_PER_BEAT as u64;
    perf.tempo_map.clear();
    let mut last: Option<u16> = None;
    for (beat, &bpm) in qs.beat_tempi.iter().enumerate() {
        if last != Some(bpm) {
            perf.tempo_map.push(TempoMarking::from_bpm(beat as u64 * tpb, bpm as f64));
            last = Some(bpm);
        }
    }
    if perf.tempo_map.is_empty() {
        perf.tempo_map.push(TempoMarking::from_bpm(0, DEFAULT_BPM as f64));
    }

    let notes: Vec<Note> = qs
        .notes
        .iter()
        .map(|n| {
            let (onset, offset) = n.span_ticks(&qs.grid);
            Note {
                pitch: n.pitch,
                velocity: bin_to_velocity(n.velocity_bin).unwrap_or(127),
                onset,
                duration: offset - onset,
            }
        })
        .collect();
    let notes = canonicalize_notes(notes);
    perf.notes = notes;
    perf
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TempoClass {
    Low,
    Mid,
    High,
}

impl TempoClass {
    pub const ALL: [TempoClass; 3] = [TempoClass::Low, TempoClass::Mid, TempoClass::High];

    pub fn lower_bound(self) -> u16 {
        match self {
            TempoClass::Low => 30,
            TempoClass::Mid => 90,
            TempoClass::High => 150,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TempoClass::Low => "low",
            TempoClass::Mid => "mid",
            TempoClass::High => "high",
        }
    }
}

impl fmt::Display for TempoClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TempoClass {
    type Err = GridError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(TempoClass::Low),
            "mid" => Ok(TempoClass::Mid),
            "high" => Ok(TempoClass::High),
            _ => Err(GridError::InvalidArgument(format!("unknown tempo class {s:?}"))),
        }
    }
}

/// Number of tempo values per class.
pub const TEMPO_VALUES: u8 = 60;

/// Split a BPM into its tempo class and the offset within that class.
pub fn tempo_to_bins(bpm: f64) -> Result<(TempoClass, u8), GridError> {
    if !bpm.is_finite() || bpm <= 0.0 {
        return Err(GridError::InvalidArgument(format!("tempo must be positive, got {bpm}")));
    }
    Ok(integer_tempo_to_bins(clamp_bpm(bpm)))
}

pub(crate) fn integer_tempo_to_bins(bpm: u16) -> (TempoClass, u8) {
    let bpm = bpm.clamp(MIN_BPM, MAX_BPM);
    let class = if bpm < 90 {
        TempoClass::Low
    } else if bpm < 150 {
        TempoClass::Mid
    } else {
        TempoClass::High
    };
    (class, (bpm - class.lower_bound()) as u8)
}

pub fn bins_to_tempo(class: TempoClass, value: u8) -> u16 {
    class.lower_bound() + value.min(TEMPO_VALUES - 1) as u16
}

pub fn velocity_to_bin(velocity: u8) -> Result<u8, GridError> {
    if velocity > 127 {
        return Err(GridError::InvalidArgument(format!("velocity {velocity} outside 0..=127")));
    }
    Ok(velocity / 4)
}

/// Midpoint velocity of a bin.
pub fn bin_to_velocity(bin: u8) -> Result<u8, GridError> {
    if bin >= VELOCITY_BINS {
        return Err(GridError::InvalidArgument(format!("velocity bin {bin} outside 0..=31")));
    }
    Ok((4 * bin + 2).min(127))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn perf_with(notes: &[(u64, u64)]) -> Performance {
        let mut p = Performance::new(480);
        for &(onset, duration) in notes {
            p.notes.push(Note { pitch: 60, velocity: 64, onset, duration });
        }
        p
    }

    #[test]
    fn grid_point_is_fixed() {
        let qs = quantize(&perf_with(&[(2880, 480)]), GridConfig::default());
        assert_eq!((qs.notes[0].bar, qs.notes[0].position), (1, 9));
        assert_eq!(qs.notes[0].duration_units, 8);
        assert_eq!(qs.beat_tempi, vec![120; 8]);
    }

    #[test]
    fn near_grid_onsets_snap() {
        let g = GridConfig::default();
        let qs = quantize(&perf_with(&[(120 + 7, 480)]), g);
        assert_eq!(qs.notes[0].position, 2);
        // exact half step rounds toward the earlier point
        let qs = quantize(&perf_with(&[(120 + 60, 480)]), g);
        assert_eq!(qs.notes[0].position, 2);
        let qs = quantize(&perf_with(&[(120 + 61, 480)]), g);
        assert_eq!(qs.notes[0].position, 3);
    }

    #[test]
    fn durations_clamp() {
        let qs = quantize(&perf_with(&[(0, 10), (1920, 480 * 100)]), GridConfig::default());
        assert_eq!(qs.notes[0].duration_units, 1);
        assert_eq!(qs.notes[1].duration_units, 64);
    }

    #[test]
    fn tempo_sampled_per_beat_and_clamped() {
        let mut p = perf_with(&[(0, 480)]);
        p.tempo_map.push(TempoMarking::from_bpm(480, 250.0));
        p.tempo_map.push(TempoMarking::from_bpm(960, 20.0));
        p.tempo_map.push(TempoMarking::from_bpm(1000, 100.0));
        let qs = quantize(&p, GridConfig::default());
        assert_eq!(qs.beat_tempi, vec![120, 209, 30, 100]);
    }

    #[test]
    fn empty_performance_gives_empty_score() {
        let qs = quantize(&Performance::default(), GridConfig::default());
        assert!(qs.notes.is_empty());
        assert!(qs.beat_tempi.is_empty());
    }

    #[test]
    fn dequantize_arithmetic() {
        let qs = QuantizedScore {
            grid: GridConfig::default(),
            notes: vec![
                QuantizedNote { bar: 0, position: 1, pitch: 60, velocity_bin: 16, duration_units: 8 },
                QuantizedNote { bar: 1, position: 9, pitch: 62, velocity_bin: 31, duration_units: 3 },
            ],
            beat_tempi: vec![120; 8],
        };
        let p = dequantize(&qs);
        assert_eq!(p.notes[0].onset, 0);
        assert_eq!(p.notes[0].duration, 480);
        assert_eq!(p.notes[1].onset, 2880);
        assert_eq!(p.notes[1].velocity, 126);
        assert_eq!(p.tempo_map.len(), 1);
    }

    #[test]
    fn tempo_bins() {
        assert_eq!(tempo_to_bins(30.0).unwrap(), (TempoClass::Low, 0));
        assert_eq!(tempo_to_bins(209.0).unwrap(), (TempoClass::High, 59));
        assert_eq!(tempo_to_bins(120.0).unwrap(), (TempoClass::Mid, 30));
        assert_eq!(tempo_to_bins(1000.0).unwrap(), (TempoClass::High, 59));
        assert_eq!(tempo_to_bins(1e-3).unwrap(), (TempoClass::Low, 0));
        assert!(tempo_to_bins(0.0).is_err());
        assert!(tempo_to_bins(-5.0).is_err());
        assert!(tempo_to_bins(f64::NAN).is_err());
    }

    #[test]
    fn tempo_bins_cover_180_pairs() {
        let mut seen = std::collections::HashSet::new();
        for bpm in 1..400 {
            seen.insert(tempo_to_bins(bpm as f64).unwrap());
        }
        assert_eq!(seen.len(), 180);
        for (c, v) in seen {
            assert!(v < TEMPO_VALUES);
            assert_eq!(tempo_to_bins(bins_to_tempo(c, v) as f64).unwrap(), (c, v));
        }
    }

    #[test]
    fn velocity_bins() {
        assert_eq!(velocity_to_bin(0).unwrap(), 0);
        assert_eq!(velocity_to_bin(127).unwrap(), 31);
        assert_eq!(velocity_to_bin(64).unwrap(), 16);
        assert!(velocity_to_bin(128).is_err());
        assert!(bin_to_velocity(32).is_err());
        for b in 0..VELOCITY_BINS {
            assert_eq!(velocity_to_bin(bin_to_velocity(b).unwrap()).unwrap(), b);
        }
    }

    #[test]
    fn grid_config_rejects_bad_q() {
        assert!(GridConfig::new(0).is_err());
        assert!(GridConfig::new(6).is_err());
        assert_eq!(GridConfig::new(32).unwrap().step_ticks(), 60);
    }

    proptest! {
        #[test]
        fn onset_order_is_preserved(a in 0u64..20_000, gap in 61u64..5_000) {
            let g = GridConfig::default();
            let qa = quantize(&perf_with(&[(a, 100)]), g).notes[0];
            let qb = quantize(&perf_with(&[(a + gap, 100)]), g).notes[0];
            prop_assert!((qa.bar, qa.position) <= (qb.bar, qb.position));
        }
    }
}
