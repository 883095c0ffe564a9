//! Rule-based chord recognition on the symbolic timeline.
//!
//! Each 2-beat and 4-beat window is summarized as a binary chroma vector.
//! Every active pitch class is tried as a root against five interval
//! templates; the winning window is fixed and the regions to its left and
//! right are labeled recursively.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::timegrid::{QuantizedScore, GridConfig};

pub const PITCH_CLASS_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChordError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quality {
    Major,
    Minor,
    Diminished,
    Augmented,
    Dominant,
}

impl Quality {
    pub const ALL: [Quality; 5] = [
        Quality::Major,
        Quality::Minor,
        Quality::Diminished,
        Quality::Augmented,
        Quality::Dominant,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Quality::Major => "maj",
            Quality::Minor => "min",
            Quality::Diminished => "dim",
            Quality::Augmented => "aug",
            Quality::Dominant => "dom",
        }
    }

    pub fn rule(self) -> &'static QualityRule {
        &RULES[self as usize]
    }
}

/// Interval sets (semitones above the root) for one chord quality, stored
/// as 12-bit masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QualityRule {
    pub required: u16,
    pub gain1: u16,
    pub deduct1: u16,
    pub deduct2: u16,
}

const fn mask(intervals: &[u8]) -> u16 {
    let mut m = 0u16;
    let mut i = 0;
    while i < intervals.len() {
        m |= 1 << intervals[i];
        i += 1;
    }
    m
}

pub const RULES: [QualityRule; 5] = [
    QualityRule {
        required: mask(&[0, 4]),
        gain1: mask(&[7]),
        deduct1: mask(&[2, 5, 9]),
        deduct2: mask(&[1, 3, 6, 8, 10]),
    },
    QualityRule {
        required: mask(&[0, 3]),
        gain1: mask(&[7]),
        deduct1: mask(&[2, 5, 8]),
        deduct2: mask(&[1, 4, 6, 9, 11]),
    },
    QualityRule {
        required: mask(&[0, 3, 6]),
        gain1: mask(&[9]),
        deduct1: mask(&[2, 5, 10]),
        deduct2: mask(&[1, 4, 7, 8, 11]),
    },
    QualityRule {
        required: mask(&[0, 4, 8]),
        gain1: 0,
        deduct1: mask(&[2, 5, 9]),
        deduct2: mask(&[1, 3, 6, 7, 10]),
    },
    QualityRule {
        required: mask(&[0, 4, 7, 10]),
        gain1: 0,
        deduct1: mask(&[2, 5, 9]),
        deduct2: mask(&[1, 3, 6, 8, 11]),
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChordLabel {
    /// Pitch class 0..=11, 0 = C.
    pub root: u8,
    pub quality: Quality,
}

impl fmt::Display for ChordLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", PITCH_CLASS_NAMES[self.root as usize % 12], self.quality.short_name())
    }
}

impl FromStr for ChordLabel {
    type Err = ChordError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ChordError::InvalidArgument(format!("unknown chord label {s:?}"));
        let (root, quality) = s.split_once('_').ok_or_else(bad)?;
        let root = PITCH_CLASS_NAMES.iter().position(|&n| n == root).ok_or_else(bad)? as u8;
        let quality = Quality::ALL
            .into_iter()
            .find(|q| q.short_name() == quality)
            .ok_or_else(bad)?;
        Ok(ChordLabel { root, quality })
    }
}

/// Binary pitch-class activations, bit `k` = pitch class `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ChromaVector(pub u16);

impl ChromaVector {
    pub fn from_pitch_classes(pcs: &[u8]) -> Self {
        ChromaVector(pcs.iter().fold(0u16, |m, &pc| m | 1 << (pc % 12)))
    }

    pub fn is_active(&self, pc: u8) -> bool {
        pc < 12 && self.0 & (1 << pc) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 & 0x0FFF == 0
    }

    pub fn active(&self) -> impl Iterator<Item = u8> + '_ {
        (0..12u8).filter(move |&pc| self.is_active(pc))
    }

    /// Rotate up by `k` semitones.
    pub fn transpose(&self, k: u8) -> Self {
        let k = (k % 12) as u32;
        let m = (self.0 & 0x0FFF) as u32;
        ChromaVector((((m << k) | (m >> (12 - k))) & 0x0FFF) as u16)
    }

    /// Intervals of every active class above `root`, as a 12-bit mask.
    pub fn intervals_from(&self, root: u8) -> u16 {
        self.transpose(12 - root % 12).0
    }
}

/// Pitch classes sounding anywhere within `length_beats` beats starting at
/// `start_beat`.
pub fn segment_chroma(qs: &QuantizedScore, start_beat: u32, length_beats: u32) -> Result<ChromaVector, ChordError> {
    if length_beats == 0 || start_beat as u64 + length_beats as u64 > qs.n_beats() as u64 {
        return Err(ChordError::InvalidArgument(format!(
            "segment {start_beat}+{length_beats} outside piece of {} beats",
            qs.n_beats()
        )));
    }
    let beat = crate::midi_io::DEFAULT_TICKS_PER_BEAT as u64;
    let seg = (start_beat as u64 * beat, (start_beat + length_beats) as u64 * beat);
    Ok(chroma_in_span(qs, seg))
}

fn chroma_in_span(qs: &QuantizedScore, (lo, hi): (u64, u64)) -> ChromaVector {
    let mut m = 0u16;
    for n in &qs.notes {
        let (on, off) = n.span_ticks(&qs.grid);
        if on < hi && off > lo {
            m |= 1 << (n.pitch % 12);
        }
    }
    ChromaVector(m)
}

/// Score of `root`/`quality` for `chroma`, or `None` if the root is not
/// active or a required interval is missing.
pub fn score_candidate(chroma: ChromaVector, root: u8, quality: Quality) -> Option<i32> {
    if !chroma.is_active(root) {
        return None;
    }
    let intervals = chroma.intervals_from(root);
    let rule = quality.rule();
    if intervals & rule.required != rule.required {
        return None;
    }
    let count = |m: u16| (intervals & m).count_ones() as i32;
    Some(count(rule.gain1) - count(rule.deduct1) - 2 * count(rule.deduct2))
}

/// Highest-scoring label for a chroma vector. Ties go to the lower root,
/// then to the earlier quality in [`Quality::ALL`].
pub fn best_label(chroma: ChromaVector) -> Option<(ChordLabel, i32)> {
    let mut best: Option<(ChordLabel, i32)> = None;
    for root in chroma.active() {
        for quality in Quality::ALL {
            if let Some(score) = score_candidate(chroma, root, quality) {
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((ChordLabel { root, quality }, score));
                }
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChordSegment {
    pub start_beat: u32,
    pub length_beats: u32,
    pub label: Option<ChordLabel>,
    /// Summed window score of the merged windows; 0 for unlabeled spans.
    pub score: i32,
}

#[derive(Debug, Clone, Copy)]
struct Window {
    start: u32,
    len: u32,
    label: ChordLabel,
    score: i32,
}

impl Window {
    /// Ordering key: larger is better.
    fn beats(&self, other: &Window) -> bool {
        // score/len compared by cross-multiplication
        let lhs = self.score as i64 * other.len as i64;
        let rhs = other.score as i64 * self.len as i64;
        if lhs != rhs {
            return lhs > rhs;
        }
        if self.score != other.score {
            return self.score > other.score;
        }
        if self.len != other.len {
            return self.len > other.len;
        }
        if self.start != other.start {
            return self.start < other.start;
        }
        (self.label.root, self.label.quality) < (other.label.root, other.label.quality)
    }
}

pub const WINDOW_SIZES: [u32; 2] = [2, 4];

/// Label the piece with non-overlapping chord segments that tile every beat.
pub fn recognize_chords(qs: &QuantizedScore) -> Vec<ChordSegment> {
    let n_beats = qs.n_beats();
    if n_beats == 0 {
        return Vec::new();
    }
    let beat = crate::midi_io::DEFAULT_TICKS_PER_BEAT as u64;
    let mut windows = Vec::new();
    for len in WINDOW_SIZES {
        for start in 0..=n_beats.saturating_sub(len) {
            if start + len > n_beats {
                break;
            }
            let chroma = chroma_in_span(qs, (start as u64 * beat, (start + len) as u64 * beat));
            if let Some((label, score)) = best_label(chroma) {
                windows.push(Window { start, len, label, score });
            }
        }
    }

    let mut labeled: Vec<Window> = Vec::new();
    let mut stack = vec![(0u32, n_beats)];
    while let Some((lo, hi)) = stack.pop() {
        let best = windows
            .iter()
            .filter(|w| w.start >= lo && w.start + w.len <= hi)
            .fold(None::<&Window>, |acc, w| match acc {
                Some(b) if !w.beats(b) => Some(b),
                _ => Some(w),
            });
        if let Some(w) = best {
            labeled.push(*w);
            stack.push((lo, w.start));
            stack.push((w.start + w.len, hi));
        }
    }
    labeled.sort_by_key(|w| w.start);

    let mut out: Vec<ChordSegment> = Vec::new();
    let mut push = |seg: ChordSegment| match out.last_mut() {
        Some(last) if last.label == seg.label && last.start_beat + last.length_beats == seg.start_beat => {
            last.length_beats += seg.length_beats;
            last.score += seg.score;
        }
        _ => out.push(seg),
    };
    let mut cursor = 0;
    for w in labeled {
        if w.start > cursor {
            push(ChordSegment { start_beat: cursor, length_beats: w.start - cursor, label: None, score: 0 });
        }
        push(ChordSegment { start_beat: w.start, length_beats: w.len, label: Some(w.label), score: w.score });
        cursor = w.start + w.len;
    }
    if cursor < n_beats {
        push(ChordSegment { start_beat: cursor, length_beats: n_beats - cursor, label: None, score: 0 });
    }
    out
}

/// Position (1-based, on the score's grid) of a beat's downbeat within its bar.
pub fn beat_position(grid: &GridConfig, beat: u32) -> (u32, u8) {
    let bar = beat / GridConfig::BEATS_PER_BAR;
    let pos = (beat % GridConfig::BEATS_PER_BAR) * grid.positions_per_beat() + 1;
    (bar, pos as u8)
}
