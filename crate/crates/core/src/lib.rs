//! Beat-based symbolic music tokenization (REMI and MIDI-like baselines),
//! rule-based chord recognition, a segment-recurrent attention language
//! model, and rhythm-consistency metrics.

pub mod chords;
pub mod cli;
pub mod codec;
pub mod metrics;
pub mod midi_io;
pub mod seqmodel;
pub mod timegrid;
pub mod tokens;
