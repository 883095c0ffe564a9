//! Closed token vocabularies for REMI and the three MIDI-like baselines,
//! the line-oriented token text format, and the REMI grammar checker.
//!
//! REMI index layout (364 tokens):
//!
//! | range     | token                                  |
//! |-----------|----------------------------------------|
//! | 0         | `Bar`                                  |
//! | 1..=16    | `Position_1/16` .. `Position_16/16`    |
//! | 17..=19   | `Tempo-Class_{low,mid,high}`           |
//! | 20..=79   | `Tempo-Value_0` .. `Tempo-Value_59`    |
//! | 80..=139  | `Chord_<root>_<quality>`, root-major   |
//! | 140..=171 | `Note-Velocity_0` .. `Note-Velocity_31`|
//! | 172..=299 | `Note-On_0` .. `Note-On_127`           |
//! | 300..=363 | `Note-Duration_1` .. `Note-Duration_64`|
//!
//! MIDI-like layouts put `Note-On` first, then the offset mechanism
//! (`Note-Off` for v1, `Note-Duration` for v2/v3), then the time shifts,
//! then `Note-Velocity`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::chords::{ChordLabel, Quality};
use crate::timegrid::TempoClass;

pub const REMI_POSITIONS: u8 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("token index {index} outside {repr} vocabulary of {size}")]
    IndexOutOfRange { index: u32, repr: Representation, size: u32 },
    #[error("token {token} does not belong to the {repr} vocabulary")]
    WrongVocabulary { token: Token, repr: Representation },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MidiLikeVariant {
    /// Note-On/Note-Off with 10 ms time shifts.
    V1,
    /// Note-Duration instead of Note-Off, 10 ms time shifts.
    V2,
    /// Note-Duration with 16th-note time shifts.
    V3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Representation {
    Remi,
    MidiLike(MidiLikeVariant),
}

impl Representation {
    pub const ALL: [Representation; 4] = [
        Representation::Remi,
        Representation::MidiLike(MidiLikeVariant::V1),
        Representation::MidiLike(MidiLikeVariant::V2),
        Representation::MidiLike(MidiLikeVariant::V3),
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Representation::Remi => "REMI",
            Representation::MidiLike(MidiLikeVariant::V1) => "MIDI-like-v1",
            Representation::MidiLike(MidiLikeVariant::V2) => "MIDI-like-v2",
            Representation::MidiLike(MidiLikeVariant::V3) => "MIDI-like-v3",
        }
    }

    pub fn vocab(self) -> Vocabulary {
        Vocabulary { repr: self }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Representation {
    type Err = TokenError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "remi" => Representation::Remi,
            "midi-like-v1" | "midi-like" | "v1" | "baseline1" => Representation::MidiLike(MidiLikeVariant::V1),
            "midi-like-v2" | "v2" | "baseline2" => Representation::MidiLike(MidiLikeVariant::V2),
            "midi-like-v3" | "v3" | "baseline3" => Representation::MidiLike(MidiLikeVariant::V3),
            _ => return Err(TokenError::InvalidArgument(format!("unknown representation {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RemiToken {
    Bar,
    /// 1..=16
    Position(u8),
    TempoClass(TempoClass),
    /// 0..=59
    TempoValue(u8),
    Chord(ChordLabel),
    /// 0..=31
    NoteVelocity(u8),
    /// 0..=127
    NoteOn(u8),
    /// 1..=64 32nd notes
    NoteDuration(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MidiLikeToken {
    NoteOn(u8),
    NoteOff(u8),
    NoteDuration(u8),
    /// `k` steps of 10 ms, 1..=100.
    TimeShiftMs(u8),
    /// `k` 16th notes, 1..=16.
    TimeShiftGrid(u8),
    NoteVelocity(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Remi(RemiToken),
    MidiLike(MidiLikeToken),
}

/// Coarse token category, used for per-type loss curves and masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenKind {
    Bar,
    Position,
    TempoClass,
    TempoValue,
    Chord,
    NoteVelocity,
    NoteOn,
    NoteOff,
    NoteDuration,
    TimeShift,
}

impl TokenKind {
    pub const ALL: [TokenKind; 10] = [
        TokenKind::Bar,
        TokenKind::Position,
        TokenKind::TempoClass,
        TokenKind::TempoValue,
        TokenKind::Chord,
        TokenKind::NoteVelocity,
        TokenKind::NoteOn,
        TokenKind::NoteOff,
        TokenKind::NoteDuration,
        TokenKind::TimeShift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TokenKind::Bar => "bar",
            TokenKind::Position => "position",
            TokenKind::TempoClass => "tempo-class",
            TokenKind::TempoValue => "tempo-value",
            TokenKind::Chord => "chord",
            TokenKind::NoteVelocity => "note-velocity",
            TokenKind::NoteOn => "note-on",
            TokenKind::NoteOff => "note-off",
            TokenKind::NoteDuration => "note-duration",
            TokenKind::TimeShift => "time-shift",
        }
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TokenKind {
    type Err = TokenError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TokenKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| TokenError::InvalidArgument(format!("unknown token kind {s:?}")))
    }
}

impl Token {
    pub fn kind(&self) -> TokenKind {
        match self {
            Token::Remi(t) => match t {
                RemiToken::Bar => TokenKind::Bar,
                RemiToken::Position(_) => TokenKind::Position,
                RemiToken::TempoClass(_) => TokenKind::TempoClass,
                RemiToken::TempoValue(_) => TokenKind::TempoValue,
                RemiToken::Chord(_) => TokenKind::Chord,
                RemiToken::NoteVelocity(_) => TokenKind::NoteVelocity,
                RemiToken::NoteOn(_) => TokenKind::NoteOn,
                RemiToken::NoteDuration(_) => TokenKind::NoteDuration,
            },
            Token::MidiLike(t) => match t {
                MidiLikeToken::NoteOn(_) => TokenKind::NoteOn,
                MidiLikeToken::NoteOff(_) => TokenKind::NoteOff,
                MidiLikeToken::NoteDuration(_) => TokenKind::NoteDuration,
                MidiLikeToken::TimeShiftMs(_) | MidiLikeToken::TimeShiftGrid(_) => TokenKind::TimeShift,
                MidiLikeToken::NoteVelocity(_) => TokenKind::NoteVelocity,
            },
        }
    }

    /// Text mnemonic used in token files.
    pub fn mnemonic(&self) -> String {
        self.to_string()
    }

    pub fn parse_mnemonic(s: &str, repr: Representation) -> Result<Token, TokenError> {
        let bad = || TokenError::InvalidArgument(format!("unknown token mnemonic {s:?} for {repr}"));
        let (head, arg) = match s.split_once('_') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<u8, TokenError> {
            a.and_then(|a| a.parse::<u8>().ok()).ok_or_else(bad)
        };
        let token = match repr {
            Representation::Remi => Token::Remi(match head {
                "Bar" if arg.is_none() => RemiToken::Bar,
                "Position" => {
                    let a = arg.ok_or_else(bad)?;
                    let (p, q) = a.split_once('/').ok_or_else(bad)?;
                    if q != "16" {
                        return Err(bad());
                    }
                    RemiToken::Position(p.parse().map_err(|_| bad())?)
                }
                "Tempo-Class" => RemiToken::TempoClass(arg.ok_or_else(bad)?.parse().map_err(|_| bad())?),
                "Tempo-Value" => RemiToken::TempoValue(num(arg)?),
                "Chord" => RemiToken::Chord(arg.ok_or_else(bad)?.parse().map_err(|_| bad())?),
                "Note-Velocity" => RemiToken::NoteVelocity(num(arg)?),
                "Note-On" => RemiToken::NoteOn(num(arg)?),
                "Note-Duration" => RemiToken::NoteDuration(num(arg)?),
                _ => return Err(bad()),
            }),
            Representation::MidiLike(_) => Token::MidiLike(match head {
                "Note-On" => MidiLikeToken::NoteOn(num(arg)?),
                "Note-Off" => MidiLikeToken::NoteOff(num(arg)?),
                "Note-Duration" => MidiLikeToken::NoteDuration(num(arg)?),
                "Time-Shift" => MidiLikeToken::TimeShiftMs(num(arg)?),
                "Time-Shift-16th" => MidiLikeToken::TimeShiftGrid(num(arg)?),
                "Note-Velocity" => MidiLikeToken::NoteVelocity(num(arg)?),
                _ => return Err(bad()),
            }),
        };
        // Range and variant membership checks.
        repr.vocab().index_of(&token).map_err(|_| bad())?;
        Ok(token)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Remi(t) => match t {
                RemiToken::Bar => write!(f, "Bar"),
                RemiToken::Position(p) => write!(f, "Position_{p}/{REMI_POSITIONS}"),
                RemiToken::TempoClass(c) => write!(f, "Tempo-Class_{c}"),
                RemiToken::TempoValue(v) => write!(f, "Tempo-Value_{v}"),
                RemiToken::Chord(c) => write!(f, "Chord_{c}"),
                RemiToken::NoteVelocity(v) => write!(f, "Note-Velocity_{v}"),
                RemiToken::NoteOn(p) => write!(f, "Note-On_{p}"),
                RemiToken::NoteDuration(d) => write!(f, "Note-Duration_{d}"),
            },
            Token::MidiLike(t) => match t {
                MidiLikeToken::NoteOn(p) => write!(f, "Note-On_{p}"),
                MidiLikeToken::NoteOff(p) => write!(f, "Note-Off_{p}"),
                MidiLikeToken::NoteDuration(d) => write!(f, "Note-Duration_{d}"),
                MidiLikeToken::TimeShiftMs(k) => write!(f, "Time-Shift_{k}"),
                MidiLikeToken::TimeShiftGrid(k) => write!(f, "Time-Shift-16th_{k}"),
                MidiLikeToken::NoteVelocity(v) => write!(f, "Note-Velocity_{v}"),
            },
        }
    }
}

/// Index bijection for one representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    repr: Representation,
}

// REMI block offsets.
const R_POSITION: u32 = 1;
const R_TEMPO_CLASS: u32 = 17;
const R_TEMPO_VALUE: u32 = 20;
const R_CHORD: u32 = 80;
const R_VELOCITY: u32 = 140;
const R_NOTE_ON: u32 = 172;
const R_DURATION: u32 = 300;
const R_SIZE: u32 = 364;

impl Vocabulary {
    pub fn representation(&self) -> Representation {
        self.repr
    }

    pub fn size(&self) -> u32 {
        match self.repr {
            Representation::Remi => R_SIZE,
            Representation::MidiLike(MidiLikeVariant::V1) => 128 + 128 + 100 + 32,
            Representation::MidiLike(MidiLikeVariant::V2) => 128 + 64 + 100 + 32,
            Representation::MidiLike(MidiLikeVariant::V3) => 128 + 64 + 16 + 32,
        }
    }

    /// Sizes of the (note-on, offset, time-shift, velocity) blocks.
    fn midilike_blocks(variant: MidiLikeVariant) -> (u32, u32, u32) {
        match variant {
            MidiLikeVariant::V1 => (128, 100, 32),
            MidiLikeVariant::V2 => (64, 100, 32),
            MidiLikeVariant::V3 => (64, 16, 32),
        }
    }

    pub fn index_of(&self, token: &Token) -> Result<u32, TokenError> {
        let wrong = || TokenError::WrongVocabulary { token: *token, repr: self.repr };
        match (self.repr, token) {
            (Representation::Remi, Token::Remi(t)) => Ok(match *t {
                RemiToken::Bar => 0,
                RemiToken::Position(p) if (1..=REMI_POSITIONS).contains(&p) => R_POSITION + p as u32 - 1,
                RemiToken::TempoClass(c) => R_TEMPO_CLASS + c as u32,
                RemiToken::TempoValue(v) if v < 60 => R_TEMPO_VALUE + v as u32,
                RemiToken::Chord(c) if c.root < 12 => R_CHORD + c.root as u32 * 5 + c.quality as u32,
                RemiToken::NoteVelocity(v) if v < 32 => R_VELOCITY + v as u32,
                RemiToken::NoteOn(p) if p < 128 => R_NOTE_ON + p as u32,
                RemiToken::NoteDuration(d) if (1..=64).contains(&d) => R_DURATION + d as u32 - 1,
                _ => return Err(wrong()),
            }),
            (Representation::MidiLike(variant), Token::MidiLike(t)) => {
                let (off_n, shift_n, _) = Self::midilike_blocks(variant);
                let off0 = 128;
                let shift0 = off0 + off_n;
                let vel0 = shift0 + shift_n;
                Ok(match (*t, variant) {
                    (MidiLikeToken::NoteOn(p), _) if p < 128 => p as u32,
                    (MidiLikeToken::NoteOff(p), MidiLikeVariant::V1) if p < 128 => off0 + p as u32,
                    (MidiLikeToken::NoteDuration(d), MidiLikeVariant::V2 | MidiLikeVariant::V3)
                        if (1..=64).contains(&d) =>
                    {
                        off0 + d as u32 - 1
                    }
                    (MidiLikeToken::TimeShiftMs(k), MidiLikeVariant::V1 | MidiLikeVariant::V2)
                        if (1..=100).contains(&k) =>
                    {
                        shift0 + k as u32 - 1
                    }
                    (MidiLikeToken::TimeShiftGrid(k), MidiLikeVariant::V3) if (1..=16).contains(&k) => {
                        shift0 + k as u32 - 1
                    }
                    (MidiLikeToken::NoteVelocity(v), _) if v < 32 => vel0 + v as u32,
                    _ => return Err(wrong()),
                })
            }
            _ => Err(wrong()),
        }
    }

    pub fn token_of(&self, index: u32) -> Result<Token, TokenError> {
        if index >= self.size() {
            return Err(TokenError::IndexOutOfRange { index, repr: self.repr, size: self.size() });
        }
        Ok(match self.repr {
            Representation::Remi => Token::Remi(match index {
                0 => RemiToken::Bar,
                i if i < R_TEMPO_CLASS => RemiToken::Position((i - R_POSITION + 1) as u8),
                i if i < R_TEMPO_VALUE => RemiToken::TempoClass(TempoClass::ALL[(i - R_TEMPO_CLASS) as usize]),
                i if i < R_CHORD => RemiToken::TempoValue((i - R_TEMPO_VALUE) as u8),
                i if i < R_VELOCITY => {
                    let c = i - R_CHORD;
                    RemiToken::Chord(ChordLabel {
                        root: (c / 5) as u8,
                        quality: Quality::ALL[(c % 5) as usize],
                    })
                }
                i if i < R_NOTE_ON => RemiToken::NoteVelocity((i - R_VELOCITY) as u8),
                i if i < R_DURATION => RemiToken::NoteOn((i - R_NOTE_ON) as u8),
                i => RemiToken::NoteDuration((i - R_DURATION + 1) as u8),
            }),
            Representation::MidiLike(variant) => {
                let (off_n, shift_n, _) = Self::midilike_blocks(variant);
                let off0 = 128;
                let shift0 = off0 + off_n;
                let vel0 = shift0 + shift_n;
                Token::MidiLike(match index {
                    i if i < off0 => MidiLikeToken::NoteOn(i as u8),
                    i if i < shift0 => match variant {
                        MidiLikeVariant::V1 => MidiLikeToken::NoteOff((i - off0) as u8),
                        _ => MidiLikeToken::NoteDuration((i - off0 + 1) as u8),
                    },
                    i if i < vel0 => match variant {
                        MidiLikeVariant::V3 => MidiLikeToken::TimeShiftGrid((i - shift0 + 1) as u8),
                        _ => MidiLikeToken::TimeShiftMs((i - shift0 + 1) as u8),
                    },
                    i => MidiLikeToken::NoteVelocity((i - vel0) as u8),
                })
            }
        })
    }

    /// Every token of the vocabulary in index order.
    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.size()).map(move |i| self.token_of(i).expect("index within vocabulary"))
    }

    /// Indices of all tokens of the given kind.
    pub fn indices_of_kind(&self, kind: TokenKind) -> Vec<u32> {
        (0..self.size())
            .filter(|&i| self.token_of(i).map(|t| t.kind()) == Ok(kind))
            .collect()
    }

    pub fn kind_of(&self, index: u32) -> Result<TokenKind, TokenError> {
        Ok(self.token_of(index)?.kind())
    }
}

/// A tagged sequence of vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub repr: Representation,
    pub indices: Vec<u32>,
}

pub const TEXT_HEADER: &str = "# tokens v1";

impl TokenSequence {
    pub fn new(repr: Representation) -> Self {
        TokenSequence { repr, indices: Vec::new() }
    }

    pub fn from_tokens<'a>(
        repr: Representation,
        tokens: impl IntoIterator<Item = &'a Token>,
    ) -> Result<Self, TokenError> {
        let vocab = repr.vocab();
        let indices = tokens
            .into_iter()
            .map(|t| vocab.index_of(t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TokenSequence { repr, indices })
    }

    pub fn push(&mut self, token: Token) -> Result<(), TokenError> {
        self.indices.push(self.repr.vocab().index_of(&token)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn tokens(&self) -> Result<Vec<Token>, TokenError> {
        let vocab = self.repr.vocab();
        self.indices.iter().map(|&i| vocab.token_of(i)).collect()
    }

    pub fn to_text(&self) -> Result<String, TokenError> {
        let mut out = format!("{TEXT_HEADER} {}\n", self.repr);
        for t in self.tokens()? {
            out.push_str(&t.mnemonic());
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self, TokenError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(TokenError::Syntax { line: 1, reason: "empty file".into() })?;
        let repr_tag = header
            .strip_prefix(TEXT_HEADER)
            .map(str::trim)
            .ok_or_else(|| TokenError::Syntax {
                line: 1,
                reason: format!("expected header {TEXT_HEADER:?} followed by a representation tag"),
            })?;
        let repr: Representation = repr_tag.parse().map_err(|e: TokenError| TokenError::Syntax {
            line: 1,
            reason: e.to_string(),
        })?;
        let vocab = repr.vocab();
        let mut seq = TokenSequence::new(repr);
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let token = Token::parse_mnemonic(line, repr).map_err(|e| TokenError::Syntax {
                line: i + 1,
                reason: e.to_string(),
            })?;
            seq.indices.push(vocab.index_of(&token)?);
        }
        Ok(seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GrammarRule {
    /// Sequence starts with `Bar`.
    G1,
    /// Positions do not decrease within a bar.
    G2,
    /// `Tempo-Class` is immediately followed by `Tempo-Value`.
    G3,
    /// Every group is immediately preceded by a `Position`, and note
    /// triples come in velocity, pitch, duration order.
    G4,
    /// No dangling partial group.
    G5,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Index of the offending token.
    pub position: usize,
    pub rule: GrammarRule,
    pub description: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at token {}: {}", self.rule, self.position, self.description)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Expect {
    /// Between groups.
    Idle,
    AfterPosition(usize),
    AfterTempoClass(usize),
    AfterVelocity(usize),
    AfterNoteOn(usize),
}

/// Check a REMI sequence against the grammar. An empty result means the
/// sequence is grammatical.
pub fn validate_grammar(seq: &TokenSequence) -> Result<Vec<Violation>, TokenError> {
    if seq.repr != Representation::Remi {
        return Err(TokenError::InvalidArgument(format!(
            "grammar check requires a REMI sequence, got {}",
            seq.repr
        )));
    }
    let tokens = seq.tokens()?;
    let mut out = Vec::new();
    let mut v = |position: usize, rule: GrammarRule, description: &str| {
        out.push(Violation { position, rule, description: description.to_string() })
    };

    let mut state = Expect::Idle;
    let mut last_position: Option<u8> = None;

    // Report whatever partial group `state` describes as dangling.
    fn dangling(state: Expect, v: &mut impl FnMut(usize, GrammarRule, &str)) {
        match state {
            Expect::Idle => {}
            Expect::AfterPosition(i) => v(i, GrammarRule::G5, "Position not followed by a group"),
            Expect::AfterTempoClass(i) => v(i, GrammarRule::G5, "Tempo-Class without Tempo-Value"),
            Expect::AfterVelocity(i) => v(i, GrammarRule::G5, "Note-Velocity without Note-On"),
            Expect::AfterNoteOn(i) => v(i, GrammarRule::G5, "Note-On without Note-Duration"),
        }
    }

    for (i, t) in tokens.iter().enumerate() {
        let Token::Remi(t) = t else { unreachable!("REMI vocabulary yields REMI tokens") };
        if i == 0 && *t != RemiToken::Bar {
            v(0, GrammarRule::G1, "sequence does not start with Bar");
        }
        // A Tempo-Class followed by anything but Tempo-Value breaks G3.
        if let Expect::AfterTempoClass(j) = state {
            if !matches!(t, RemiToken::TempoValue(_)) {
                v(j, GrammarRule::G3, "Tempo-Class not followed by Tempo-Value");
                state = Expect::Idle;
            }
        }
        match *t {
            RemiToken::Bar => {
                dangling(state, &mut v);
                state = Expect::Idle;
                last_position = None;
            }
            RemiToken::Position(p) => {
                dangling(state, &mut v);
                if let Some(lp) = last_position {
                    if p < lp {
                        v(i, GrammarRule::G2, "Position goes backwards within a bar");
                    }
                }
                last_position = Some(p);
                state = Expect::AfterPosition(i);
            }
            RemiToken::TempoClass(_) => {
                if !matches!(state, Expect::AfterPosition(_)) {
                    dangling(state, &mut v);
                    v(i, GrammarRule::G4, "Tempo-Class not preceded by Position");
                }
                state = Expect::AfterTempoClass(i);
            }
            RemiToken::TempoValue(_) => {
                if !matches!(state, Expect::AfterTempoClass(_)) {
                    dangling(state, &mut v);
                    v(i, GrammarRule::G3, "Tempo-Value not preceded by Tempo-Class");
                }
                state = Expect::Idle;
            }
            RemiToken::Chord(_) => {
                if !matches!(state, Expect::AfterPosition(_)) {
                    dangling(state, &mut v);
                    v(i, GrammarRule::G4, "Chord not preceded by Position");
                }
                state = Expect::Idle;
            }
            RemiToken::NoteVelocity(_) => {
                if !matches!(state, Expect::AfterPosition(_)) {
                    dangling(state, &mut v);
                    v(i, GrammarRule::G4, "Note-Velocity not preceded by Position");
                }
                state = Expect::AfterVelocity(i);
            }
            RemiToken::NoteOn(_) => {
                if !matches!(state, Expect::AfterVelocity(_)) {
                    if !matches!(state, Expect::AfterPosition(_)) {
                        dangling(state, &mut v);
                    }
                    v(i, GrammarRule::G4, "Note-On not preceded by Note-Velocity");
                }
                state = Expect::AfterNoteOn(i);
            }
            RemiToken::NoteDuration(_) => {
                if !matches!(state, Expect::AfterNoteOn(_)) {
                    dangling(state, &mut v);
                    v(i, GrammarRule::G4, "Note-Duration not preceded by Note-On");
                }
                state = Expect::Idle;
            }
        }
    }
    dangling(state, &mut v);
    out.sort_by_key(|x| (x.position, x.rule));
    Ok(out)
}
