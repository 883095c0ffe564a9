//! Standard MIDI File (format 0/1) reading and writing.
//!
//! Everything is merged into one logical piano track: channels, program
//! changes and controllers are parsed and dropped. Only 4/4 material is
//! accepted.

use std::fmt;

use thiserror::Error;

/// Resolution used by [`write_smf`] callers that build a [`Performance`] from
/// scratch. 480 ticks per quarter represents a 32nd note as 60 ticks.
pub const DEFAULT_TICKS_PER_BEAT: u16 = 480;

/// Microseconds per quarter note at 120 BPM.
pub const DEFAULT_MICROS_PER_QUARTER: u32 = 500_000;

/// Largest delta time a variable-length quantity can carry.
const MAX_VLQ: u64 = 0x0FFF_FFFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Note {
    pub pitch: u8,
    pub velocity: u8,
    pub onset: u64,
    pub duration: u64,
}

impl Note {
    pub fn offset(&self) -> u64 {
        self.onset + self.duration
    }
}

/// A tempo change. The tempo is kept in the file's native unit
/// (microseconds per quarter note) so that writing and re-reading is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TempoMarking {
    pub tick: u64,
    pub micros_per_quarter: u32,
}

impl TempoMarking {
    pub fn from_bpm(tick: u64, bpm: f64) -> Self {
        let us = (60_000_000.0 / bpm).round().clamp(1.0, 0xFF_FFFF as f64) as u32;
        TempoMarking {
            tick,
            micros_per_quarter: us,
        }
    }

    pub fn bpm(&self) -> f64 {
        60_000_000.0 / self.micros_per_quarter as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeSignature {
    pub numerator: u8,
    pub denominator: u8,
}

impl TimeSignature {
    pub const COMMON: TimeSignature = TimeSignature {
        numerator: 4,
        denominator: 4,
    };
}

impl fmt::Display for TimeSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

/// A parsed piano performance: notes in ticks plus the tempo map.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Performance {
    pub ticks_per_beat: u16,
    /// Sorted by `(onset, pitch)`.
    pub notes: Vec<Note>,
    /// Sorted by tick, first marking at tick 0.
    pub tempo_map: Vec<TempoMarking>,
    pub time_signature: TimeSignature,
}

impl Default for Performance {
    fn default() -> Self {
        Performance::new(DEFAULT_TICKS_PER_BEAT)
    }
}

impl Performance {
    /// An empty performance with a single 120 BPM marking.
    pub fn new(ticks_per_beat: u16) -> Self {
        Performance {
            ticks_per_beat,
            notes: Vec::new(),
            tempo_map: vec![TempoMarking {
                tick: 0,
                micros_per_quarter: DEFAULT_MICROS_PER_QUARTER,
            }],
            time_signature: TimeSignature::COMMON,
        }
    }

    /// Sort notes into canonical `(onset, pitch)` order.
    pub fn sort_notes(&mut self) {
        self.notes
            .sort_by_key(|n| (n.onset, n.pitch, n.duration, n.velocity));
    }

    /// Tempo in BPM in effect at `tick`.
    pub fn bpm_at(&self, tick: u64) -> f64 {
        self.tempo_at(tick).bpm()
    }

    fn tempo_at(&self, tick: u64) -> TempoMarking {
        let idx = self.tempo_map.partition_point(|m| m.tick <= tick);
        if idx == 0 {
            TempoMarking {
                tick: 0,
                micros_per_quarter: DEFAULT_MICROS_PER_QUARTER,
            }
        } else {
            self.tempo_map[idx - 1]
        }
    }

    /// Absolute time of `tick` in seconds, integrating the tempo map.
    pub fn tick_to_seconds(&self, tick: u64) -> f64 {
        let tpb = self.ticks_per_beat as f64;
        let mut seconds = 0.0;
        let mut last_tick = 0u64;
        let mut us = DEFAULT_MICROS_PER_QUARTER as f64;
        for m in &self.tempo_map {
            if m.tick >= tick {
                break;
            }
            seconds += (m.tick - last_tick) as f64 / tpb * us * 1e-6;
            last_tick = m.tick;
            us = m.micros_per_quarter as f64;
        }
        seconds + (tick - last_tick) as f64 / tpb * us * 1e-6
    }

    /// Check every structural invariant the writer relies on.
    pub fn validate(&self) -> Result<(), MidiError> {
        let invalid = |msg: String| Err(MidiError::InvalidPerformance(msg));
        if self.ticks_per_beat == 0 || self.ticks_per_beat >= 0x8000 {
            return invalid(format!("ticks_per_beat {} out of range", self.ticks_per_beat));
        }
        if self.time_signature != TimeSignature::COMMON {
            return Err(MidiError::UnsupportedTimeSignature(self.time_signature));
        }
        match self.tempo_map.first() {
            Some(m) if m.tick == 0 => {}
            _ => return invalid("tempo map must start at tick 0".into()),
        }
        for w in self.tempo_map.windows(2) {
            if w[1].tick <= w[0].tick {
                return invalid(format!("tempo markings not strictly increasing at tick {}", w[1].tick));
            }
        }
        for m in &self.tempo_map {
            if m.micros_per_quarter == 0 || m.micros_per_quarter > 0xFF_FFFF {
                return invalid(format!("tempo {} us/quarter not encodable", m.micros_per_quarter));
            }
        }
        let mut sounding_until = [0u64; 128];
        let mut prev: Option<&Note> = None;
        for n in &self.notes {
            if n.pitch > 127 {
                return invalid(format!("pitch {} out of range", n.pitch));
            }
            if n.velocity == 0 || n.velocity > 127 {
                return invalid(format!("velocity {} out of range", n.velocity));
            }
            if n.duration == 0 {
                return invalid(format!("zero-length note at tick {}", n.onset));
            }
            if let Some(p) = prev {
                if (p.onset, p.pitch) >= (n.onset, n.pitch) {
                    return invalid(format!("notes not sorted by (onset, pitch) at tick {}", n.onset));
                }
            }
            if sounding_until[n.pitch as usize] > n.onset {
                return invalid(format!("overlapping notes on pitch {} at tick {}", n.pitch, n.onset));
            }
            sounding_until[n.pitch as usize] = n.offset();
            prev = Some(n);
        }
        Ok(())
    }
}

/// Put notes into canonical form: sorted by `(onset, pitch)`, one note per
/// `(onset, pitch)` (the later one wins), and a same-pitch note cut short
/// where the next one starts.
pub fn canonicalize_notes(mut notes: Vec<Note>) -> Vec<Note> {
    notes.sort_by_key(|n| (n.onset, n.pitch));
    notes.reverse();
    notes.dedup_by_key(|n| (n.onset, n.pitch));
    notes.reverse();
    let mut next_onset: [Option<u64>; 128] = [None; 128];
    for n in notes.iter_mut().rev() {
        let p = (n.pitch & 0x7F) as usize;
        if let Some(next) = next_onset[p] {
            n.duration = n.duration.min(next - n.onset);
        }
        next_onset[p] = Some(n.onset);
    }
    notes.retain(|n| n.duration > 0);
    notes
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MidiError {
    #[error("malformed MIDI at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("truncated MIDI data at byte {offset}: {reason}")]
    Truncated { offset: usize, reason: String },
    #[error("unsupported SMF format {format} at byte {offset}")]
    UnsupportedFormat { offset: usize, format: u16 },
    #[error("unsupported time signature {0}")]
    UnsupportedTimeSignature(TimeSignature),
    #[error("invalid performance: {0}")]
    InvalidPerformance(String),
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    fn truncated(&self, what: &str) -> MidiError {
        MidiError::Truncated {
            offset: self.pos,
            reason: format!("expected {what}"),
        }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn u8(&mut self, what: &str) -> Result<u8, MidiError> {
        let b = *self.data.get(self.pos).ok_or_else(|| self.truncated(what))?;
        self.pos += 1;
        Ok(b)
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return Err(self.truncated(what));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, MidiError> {
        let b = self.bytes(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, MidiError> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u64, MidiError> {
        let start = self.pos;
        let mut value = 0u64;
        for _ in 0..4 {
            let b = self.u8("variable-length quantity")?;
            value = (value << 7) | (b & 0x7F) as u64;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::Malformed {
            offset: start,
            reason: "variable-length quantity longer than 4 bytes".into(),
        })
    }
}

/// Decode one variable-length quantity from the start of `bytes`, returning
/// the value and the number of bytes consumed.
pub fn read_vlq(bytes: &[u8]) -> Result<(u64, usize), MidiError> {
    let mut r = Reader::new(bytes);
    let v = r.vlq()?;
    Ok((v, r.pos))
}

/// Append `value` as a variable-length quantity. Values above 0x0FFFFFFF are
/// not representable and are rejected.
pub fn write_vlq(out: &mut Vec<u8>, value: u64) -> Result<(), MidiError> {
    if value > MAX_VLQ {
        return Err(MidiError::InvalidPerformance(format!(
            "delta time {value} exceeds variable-length range"
        )));
    }
    let mut groups = [0u8; 4];
    let mut n = 0;
    let mut v = value;
    loop {
        groups[n] = (v & 0x7F) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let cont = if i > 0 { 0x80 } else { 0 };
        out.push(groups[i] | cont);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum RawKind {
    NoteOn { pitch: u8, velocity: u8 },
    NoteOff { pitch: u8 },
    Tempo(u32),
    EndOfTrack,
}

#[derive(Debug, Clone, Copy)]
struct RawEvent {
    tick: u64,
    track: usize,
    kind: RawKind,
}

fn parse_track(
    r: &mut Reader<'_>,
    end: usize,
    track: usize,
    events: &mut Vec<RawEvent>,
    time_sig: &mut Option<TimeSignature>,
) -> Result<(), MidiError> {
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    while r.pos < end {
        tick += r.vlq()?;
        let status_pos = r.pos;
        let first = r.u8("event status")?;
        match first {
            0xFF => {
                let ty = r.u8("meta type")?;
                let len = r.vlq()? as usize;
                if r.pos + len > end {
                    return Err(r.truncated("meta event payload"));
                }
                let payload = r.bytes(len, "meta event payload")?;
                match ty {
                    0x2F => {
                        events.push(RawEvent { tick, track, kind: RawKind::EndOfTrack });
                        r.pos = end;
                        return Ok(());
                    }
                    0x51 => {
                        if len != 3 {
                            return Err(MidiError::Malformed {
                                offset: status_pos,
                                reason: format!("tempo meta event with length {len}"),
                            });
                        }
                        let us = u32::from_be_bytes([0, payload[0], payload[1], payload[2]]);
                        if us == 0 {
                            return Err(MidiError::Malformed {
                                offset: status_pos,
                                reason: "zero tempo".into(),
                            });
                        }
                        events.push(RawEvent { tick, track, kind: RawKind::Tempo(us) });
                    }
                    0x58 => {
                        if len < 2 {
                            return Err(MidiError::Malformed {
                                offset: status_pos,
                                reason: "short time-signature meta event".into(),
                            });
                        }
                        let denominator = 1u32.checked_shl(payload[1] as u32).unwrap_or(0);
                        let ts = TimeSignature {
                            numerator: payload[0],
                            denominator: denominator.min(255) as u8,
                        };
                        if ts != TimeSignature::COMMON || denominator != 4 {
                            return Err(MidiError::UnsupportedTimeSignature(ts));
                        }
                        *time_sig = Some(ts);
                    }
                    _ => {}
                }
                running = None;
            }
            0xF0 | 0xF7 => {
                let len = r.vlq()? as usize;
                if r.pos + len > end {
                    return Err(r.truncated("sysex payload"));
                }
                r.bytes(len, "sysex payload")?;
                running = None;
            }
            0xF1..=0xFE => {
                return Err(MidiError::Malformed {
                    offset: status_pos,
                    reason: format!("unexpected system status byte {first:#04x} in track"),
                });
            }
            _ => {
                let (status, data0) = if first & 0x80 != 0 {
                    running = Some(first);
                    (first, r.u8("channel message data")?)
                } else {
                    match running {
                        Some(s) => (s, first),
                        None => {
                            return Err(MidiError::Malformed {
                                offset: status_pos,
                                reason: "data byte without running status".into(),
                            })
                        }
                    }
                };
                let kind = status & 0xF0;
                let two_bytes = !matches!(kind, 0xC0 | 0xD0);
                let data1 = if two_bytes { r.u8("channel message data")? } else { 0 };
                if data0 > 0x7F || data1 > 0x7F {
                    return Err(MidiError::Malformed {
                        offset: status_pos,
                        reason: "channel message data byte above 0x7F".into(),
                    });
                }
                match kind {
                    0x90 if data1 > 0 => events.push(RawEvent {
                        tick,
                        track,
                        kind: RawKind::NoteOn { pitch: data0, velocity: data1 },
                    }),
                    0x90 | 0x80 => events.push(RawEvent {
                        tick,
                        track,
                        kind: RawKind::NoteOff { pitch: data0 },
                    }),
                    _ => {}
                }
            }
        }
        if r.pos > end {
            return Err(MidiError::Truncated {
                offset: end,
                reason: "event runs past end of track chunk".into(),
            });
        }
    }
    events.push(RawEvent { tick, track, kind: RawKind::EndOfTrack });
    Ok(())
}

/// Parse a Standard MIDI File into a [`Performance`].
pub fn parse_smf(bytes: &[u8]) -> Result<Performance, MidiError> {
    let mut r = Reader::new(bytes);
    let magic = r.bytes(4, "MThd chunk")?;
    if magic != b"MThd" {
        return Err(MidiError::Malformed {
            offset: 0,
            reason: "missing MThd signature".into(),
        });
    }
    let header_len = r.u32("header length")? as usize;
    if header_len < 6 {
        return Err(MidiError::Malformed {
            offset: 4,
            reason: format!("header length {header_len} < 6"),
        });
    }
    let header_start = r.pos;
    let format = r.u16("format")?;
    if format > 1 {
        return Err(MidiError::UnsupportedFormat { offset: header_start, format });
    }
    let ntracks = r.u16("track count")?;
    let division_pos = r.pos;
    let division = r.u16("time division")?;
    if division & 0x8000 != 0 {
        return Err(MidiError::Malformed {
            offset: division_pos,
            reason: "SMPTE time division is not supported".into(),
        });
    }
    if division == 0 {
        return Err(MidiError::Malformed {
            offset: division_pos,
            reason: "zero ticks per beat".into(),
        });
    }
    r.bytes(header_len - 6, "header padding")?;

    let mut events = Vec::new();
    let mut time_sig = None;
    let mut track = 0usize;
    while track < ntracks as usize {
        let chunk_pos = r.pos;
        let id = r.bytes(4, "track chunk id")?;
        let len = r.u32("track chunk length")? as usize;
        if r.remaining() < len {
            return Err(MidiError::Truncated {
                offset: chunk_pos,
                reason: format!("chunk declares {len} bytes, {} available", r.remaining()),
            });
        }
        let end = r.pos + len;
        if id == b"MTrk" {
            parse_track(&mut r, end, track, &mut events, &mut time_sig)?;
            track += 1;
        }
        r.pos = end;
    }

    // Stable sort keeps per-track order for simultaneous events.
    events.sort_by_key(|e| e.tick);

    let mut track_end = vec![0u64; ntracks as usize];
    for e in &events {
        if let RawKind::EndOfTrack = e.kind {
            track_end[e.track] = track_end[e.track].max(e.tick);
        }
    }

    let mut notes = Vec::new();
    let mut tempo_map: Vec<TempoMarking> = Vec::new();
    let mut open: [Option<(u64, u8, usize)>; 128] = [None; 128];
    let close = |notes: &mut Vec<Note>, pitch: u8, (onset, velocity, _): (u64, u8, usize), at: u64| {
        if at > onset {
            notes.push(Note { pitch, velocity, onset, duration: at - onset });
        }
    };
    for e in &events {
        match e.kind {
            RawKind::NoteOn { pitch, velocity } => {
                if let Some(prev) = open[pitch as usize].take() {
                    close(&mut notes, pitch, prev, e.tick);
                }
                open[pitch as usize] = Some((e.tick, velocity, e.track));
            }
            RawKind::NoteOff { pitch } => {
                if let Some(prev) = open[pitch as usize].take() {
                    close(&mut notes, pitch, prev, e.tick);
                }
            }
            RawKind::Tempo(us) => match tempo_map.last_mut() {
                Some(last) if last.tick == e.tick => last.micros_per_quarter = us,
                _ => tempo_map.push(TempoMarking { tick: e.tick, micros_per_quarter: us }),
            },
            RawKind::EndOfTrack => {}
        }
    }
    for (pitch, slot) in open.iter_mut().enumerate() {
        if let Some(prev) = slot.take() {
            let end = track_end[prev.2];
            close(&mut notes, pitch as u8, prev, end);
        }
    }
    if tempo_map.first().is_none_or(|m| m.tick != 0) {
        tempo_map.insert(
            0,
            TempoMarking {
                tick: 0,
                micros_per_quarter: DEFAULT_MICROS_PER_QUARTER,
            },
        );
    }

    let mut perf = Performance {
        ticks_per_beat: division,
        notes,
        tempo_map,
        time_signature: time_sig.unwrap_or(TimeSignature::COMMON),
    };
    perf.sort_notes();
    Ok(perf)
}

/// Serialize a [`Performance`] as a format-0 Standard MIDI File.
pub fn write_smf(perf: &Performance) -> Result<Vec<u8>, MidiError> {
    perf.validate()?;

    // (tick, order, bytes) with order: note-offs, tempo, note-ons.
    let mut events: Vec<(u64, u8, [u8; 6], usize)> = Vec::new();
    for m in &perf.tempo_map {
        let us = m.micros_per_quarter.to_be_bytes();
        events.push((m.tick, 1, [0xFF, 0x51, 0x03, us[1], us[2], us[3]], 6));
    }
    for n in &perf.notes {
        events.push((n.offset(), 0, [0x80, n.pitch, 0, 0, 0, 0], 3));
        events.push((n.onset, 2, [0x90, n.pitch, n.velocity, 0, 0, 0], 3));
    }
    events.sort_by_key(|e| (e.0, e.1));

    let mut track = Vec::new();
    track.extend_from_slice(&[0x00, 0xFF, 0x58, 0x04, 4, 2, 24, 8]);
    let mut last = 0u64;
    for (tick, _, bytes, len) in &events {
        write_vlq(&mut track, tick - last)?;
        track.extend_from_slice(&bytes[..*len]);
        last = *tick;
    }
    track.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&perf.ticks_per_beat.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}
