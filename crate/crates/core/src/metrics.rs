//! Beat and downbeat timing statistics measured on the symbolic timeline of
//! a REMI sequence.
//!
//! Every bar spans four beats; a beat lasts `60 / bpm` seconds where `bpm`
//! is the most recent tempo pair (120 before the first one). The interval
//! statistics include the duration of the final beat (and bar), so a piece
//! of `n` beats contributes `n` intervals.

use std::collections::HashSet;

use thiserror::Error;

use crate::timegrid::{bins_to_tempo, GridConfig, DEFAULT_BPM};
use crate::tokens::{validate_grammar, RemiToken, Representation, Token, TokenError, TokenSequence};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("rhythm metrics need a REMI sequence, got {0}")]
    WrongRepresentation(Representation),
    #[error("ungrammatical sequence: {0}")]
    Ungrammatical(String),
    #[error(transparent)]
    Token(#[from] TokenError),
}

/// Onset times of every beat and every bar, plus the end of the piece.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Timeline {
    pub beats: Vec<f64>,
    pub downbeats: Vec<f64>,
    pub end: f64,
    /// Length in seconds of each beat, taken from its tempo.
    pub beat_lengths: Vec<f64>,
}

impl Timeline {
    /// Beat lengths; the last beat runs to the end of the piece.
    pub fn beat_intervals(&self) -> Vec<f64> {
        self.beat_lengths.clone()
    }

    /// Bar lengths, each the sum of its four beats.
    pub fn downbeat_intervals(&self) -> Vec<f64> {
        self.beat_lengths.chunks(GridConfig::BEATS_PER_BAR as usize).map(|c| c.iter().sum()).collect()
    }
}

fn remi_tokens(seq: &TokenSequence) -> Result<Vec<RemiToken>, MetricsError> {
    if seq.repr != Representation::Remi {
        return Err(MetricsError::WrongRepresentation(seq.repr));
    }
    Ok(seq
        .tokens()?
        .into_iter()
        .map(|t| match t {
            Token::Remi(r) => r,
            Token::MidiLike(_) => unreachable!("REMI vocabulary"),
        })
        .collect())
}

/// Walk bars and tempo pairs. Malformed groups are skipped; a tempo pair
/// only counts when it sits after a `Position` inside a bar.
fn walk(tokens: &[RemiToken]) -> Timeline {
    let mut bars: Vec<[Option<u16>; 4]> = Vec::new();
    let mut position: Option<u8> = None;
    for (i, t) in tokens.iter().enumerate() {
        match *t {
            RemiToken::Bar => {
                bars.push([None; 4]);
                position = None;
            }
            RemiToken::Position(p) => position = Some(p),
            RemiToken::TempoClass(c) => {
                if let (Some(bar), Some(p), Some(RemiToken::TempoValue(v))) =
                    (bars.last_mut(), position, tokens.get(i + 1))
                {
                    bar[(p as usize - 1) / 4] = Some(bins_to_tempo(c, *v));
                }
            }
            _ => {}
        }
    }
    let mut tl = Timeline::default();
    let mut now = 0.0;
    let mut bpm = DEFAULT_BPM;
    for bar in &bars {
        tl.downbeats.push(now);
        for beat in bar {
            if let Some(t) = beat {
                bpm = *t;
            }
            let len = 60.0 / bpm as f64;
            tl.beats.push(now);
            tl.beat_lengths.push(len);
            now += len;
        }
    }
    tl.end = now;
    tl
}

/// Timeline of a grammatical REMI sequence.
pub fn timeline(seq: &TokenSequence) -> Result<Timeline, MetricsError> {
    let tokens = remi_tokens(seq)?;
    if let Some(v) = validate_grammar(seq)?.into_iter().next() {
        return Err(MetricsError::Ungrammatical(v.to_string()));
    }
    Ok(walk(&tokens))
}

/// Beat onset times in seconds.
pub fn beat_times(seq: &TokenSequence) -> Result<Vec<f64>, MetricsError> {
    Ok(timeline(seq)?.beats)
}

/// Downbeat (bar start) times in seconds.
pub fn downbeat_times(seq: &TokenSequence) -> Result<Vec<f64>, MetricsError> {
    Ok(timeline(seq)?.downbeats)
}

/// Population standard deviation; 0 for an empty slice.
///
/// Values are shifted by the first one before summing, so equal values
/// give exactly 0.
pub fn population_std(xs: &[f64]) -> f64 {
    let Some(&k) = xs.first() else { return 0.0 };
    let n = xs.len() as f64;
    let (s1, s2) = xs.iter().fold((0.0, 0.0), |(s1, s2), &x| (s1 + (x - k), s2 + (x - k) * (x - k)));
    ((s2 - s1 * s1 / n) / n).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhythmReport {
    /// Seconds, symbolic timeline.
    pub beat_std: f64,
    /// Seconds, symbolic timeline.
    pub downbeat_std: f64,
    pub n_beats: usize,
    pub n_bars: usize,
    pub grammar_violation_rate: f64,
    /// Fewer than three beats: both deviations are reported as 0.
    pub too_short: bool,
}

/// Rhythm statistics of a REMI sequence. Ungrammatical sequences are
/// measured leniently; their violations show up in the violation rate.
pub fn rhythm_report(seq: &TokenSequence) -> Result<RhythmReport, MetricsError> {
    let tokens = remi_tokens(seq)?;
    let violations = validate_grammar(seq)?;
    let flagged: HashSet<usize> = violations.iter().map(|v| v.position).collect();
    let rate = if tokens.is_empty() { 0.0 } else { flagged.len() as f64 / tokens.len() as f64 };
    let tl = walk(&tokens);
    let too_short = tl.beats.len() < 3;
    let (beat_std, downbeat_std) = if too_short {
        (0.0, 0.0)
    } else {
        (population_std(&tl.beat_intervals()), population_std(&tl.downbeat_intervals()))
    };
    Ok(RhythmReport {
        beat_std,
        downbeat_std,
        n_beats: tl.beats.len(),
        n_bars: tl.downbeats.len(),
        grammar_violation_rate: rate,
        too_short,
    })
}

/// Fraction of tokens flagged by the grammar check.
pub fn violation_rate(seq: &TokenSequence) -> Result<f64, MetricsError> {
    Ok(rhythm_report(seq)?.grammar_violation_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timegrid::{integer_tempo_to_bins, TempoClass};

    fn with_tempi(tempi: &[&[u16]]) -> TokenSequence {
        let mut toks = Vec::new();
        for bar in tempi {
            toks.push(RemiToken::Bar);
            for (beat, &bpm) in bar.iter().enumerate() {
                let (c, v) = integer_tempo_to_bins(bpm);
                toks.push(RemiToken::Position(beat as u8 * 4 + 1));
                toks.push(RemiToken::TempoClass(c));
                toks.push(RemiToken::TempoValue(v));
            }
        }
        let toks: Vec<Token> = toks.into_iter().map(Token::Remi).collect();
        TokenSequence::from_tokens(Representation::Remi, &toks).unwrap()
    }

    #[test]
    fn constant_tempo_two_bars() {
        let seq = with_tempi(&[&[120; 4], &[120; 4]]);
        let times = beat_times(&seq).unwrap();
        let expected: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        assert_eq!(times, expected);
        assert_eq!(downbeat_times(&seq).unwrap(), vec![0.0, 2.0]);
        let r = rhythm_report(&seq).unwrap();
        assert_eq!(r.beat_std, 0.0);
        assert_eq!(r.downbeat_std, 0.0);
        assert_eq!(r.grammar_violation_rate, 0.0);
        assert_eq!((r.n_beats, r.n_bars), (8, 2));
    }

    #[test]
    fn alternating_tempi() {
        let seq = with_tempi(&[&[120, 60, 120, 60], &[120, 60, 120, 60]]);
        let tl = timeline(&seq).unwrap();
        for (i, d) in tl.beats.windows(2).map(|w| w[1] - w[0]).enumerate() {
            assert_eq!(d, if i % 2 == 0 { 0.5 } else { 1.0 });
        }
        let r = rhythm_report(&seq).unwrap();
        assert!((r.beat_std - 0.25).abs() < 1e-12);
        assert_eq!(r.downbeat_std, 0.0);
    }

    #[test]
    fn missing_tempo_defaults_to_120() {
        let toks: Vec<Token> = [RemiToken::Bar, RemiToken::Bar].into_iter().map(Token::Remi).collect();
        let seq = TokenSequence::from_tokens(Representation::Remi, &toks).unwrap();
        assert_eq!(timeline(&seq).unwrap().end, 4.0);
    }

    #[test]
    fn empty_and_short() {
        let seq = TokenSequence::new(Representation::Remi);
        assert!(beat_times(&seq).unwrap().is_empty());
        let r = rhythm_report(&seq).unwrap();
        assert!(r.too_short);
        assert_eq!(r.beat_std, 0.0);
    }

    #[test]
    fn ungrammatical_is_rejected_by_strict_timeline_only() {
        let toks: Vec<Token> = [RemiToken::Bar, RemiToken::Position(1), RemiToken::TempoClass(TempoClass::Low)]
            .into_iter()
            .map(Token::Remi)
            .collect();
        let seq = TokenSequence::from_tokens(Representation::Remi, &toks).unwrap();
        assert!(beat_times(&seq).is_err());
        let r = rhythm_report(&seq).unwrap();
        assert!((r.grammar_violation_rate - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn population_std_of_two_values() {
        assert!((population_std(&[0.5, 1.0, 0.5, 1.0]) - 0.25).abs() < 1e-15);
        assert_eq!(population_std(&[]), 0.0);
        assert_eq!(population_std(&[60.0 / 77.0; 13]), 0.0);
        assert_eq!(population_std(&[240.0 / 77.0; 3]), 0.0);
    }
}
