//! Command-line front end.
//!
//! A `--config FILE` option may appear anywhere. The file holds
//! `key = value` lines (`#` starts a comment) where each key is a long flag
//! of the chosen subcommand; `true` turns a switch on and `false` leaves it
//! off. Flags given on the command line override the file.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::chords::{recognize_chords, ChordLabel};
use crate::codec::{decode_remi, decode_remi_lenient, decode_to_performance, encode_midilike, encode_remi, EncodeOptions};
use crate::metrics::{rhythm_report, RhythmReport};
use crate::midi_io::{parse_smf, write_smf, Performance};
use crate::seqmodel::{
    load_checkpoint, sample, save_checkpoint, train_from, Checkpoint, DecodeContext, EpochLog, ModelConfig, ModelParams,
    SampleOptions, TrainConfig,
};
use crate::timegrid::{dequantize, quantize, GridConfig, QuantizedScore, TempoClass};
use crate::tokens::{RemiToken, Representation, Token, TokenKind, TokenSequence};

pub const RHYTHM_HEADER: &str = "# rhythm v1";
pub const CHORDS_HEADER: &str = "# chords v1";
pub const LOSS_HEADER: &str = "# loss v1";
pub const STATS_HEADER: &str = "# stats v1";

#[derive(Parser, Debug)]
#[command(name = "remi", version, about = "Beat-based music tokenization and generation", args_override_self = true)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert MIDI files to token text.
    Encode {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        tokenize: TokenizeArgs,
        /// Output file, or directory when several inputs are given.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Convert token text to a MIDI file.
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Skip malformed REMI groups instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// List recognized chord segments of a MIDI file.
    Chords {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train a model on a directory of MIDI or token files.
    Train {
        corpus: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        tokenize: TokenizeArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Per-epoch loss table.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Sample a continuation from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// MIDI file whose first bars prime the model.
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        prompt_bars: u32,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 16)]
        top_k: usize,
        #[arg(long, default_value_t = 512)]
        max_tokens: usize,
        /// Forbid tokens: chord:<ROOT>_<QUAL>, tempo-class:<low|mid|high>, type:<kind>.
        #[arg(long = "mask")]
        masks: Vec<String>,
        /// Attend to a sliding window of this many positions instead of the
        /// segment layout used in training.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Token text output.
        #[arg(short, long)]
        output: PathBuf,
        /// Also render the result as MIDI.
        #[arg(long)]
        midi: Option<PathBuf>,
    },
    /// Rhythm statistics of token or MIDI files.
    Eval {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        tokenize: TokenizeArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Vocabulary coverage and length histogram of a corpus.
    Stats {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        tokenize: TokenizeArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct TokenizeArgs {
    /// remi, midi-like-v1, midi-like-v2 or midi-like-v3.
    #[arg(long, default_value = "remi")]
    repr: String,
    #[arg(long, overrides_with = "no_tempo")]
    tempo: bool,
    /// Leave out tempo groups (REMI).
    #[arg(long)]
    no_tempo: bool,
    #[arg(long, overrides_with = "no_chord")]
    chord: bool,
    /// Leave out chord tokens (REMI).
    #[arg(long)]
    no_chord: bool,
}

impl TokenizeArgs {
    fn representation(&self) -> Result<Representation, String> {
        self.repr.parse().map_err(|e| format!("{e}"))
    }

    fn options(&self) -> EncodeOptions {
        EncodeOptions { with_tempo: !self.no_tempo, with_chord: !self.no_chord }
    }
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 512)]
    ffn: usize,
    #[arg(long, default_value_t = 64)]
    segment_len: usize,
    #[arg(long, default_value_t = 64)]
    memory_len: usize,
    /// Share the embedding with the output projection.
    #[arg(long)]
    tie: bool,
    #[arg(long, default_value_t = 3000)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    warmup: usize,
    /// Gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    /// Stop once an epoch's mean loss is below this.
    #[arg(long)]
    stop_below: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parse `key = value` lines into command-line arguments.
fn config_args(text: &str, path: &Path) -> Result<Vec<OsString>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| format!("{}:{}: expected key = value", path.display(), i + 1))?;
        if key.is_empty() {
            return Err(format!("{}:{}: empty key", path.display(), i + 1));
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => {
                out.push(format!("--{key}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

/// Splice `--config FILE` contents in right after the subcommand name so
/// later command-line flags take precedence.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(PathBuf::from(it.next().ok_or("--config needs a file")?));
        } else if let Some(p) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let extra = config_args(&text, &path)?;
    let sub = rest.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 2);
    match sub {
        Some(at) => {
            let tail = rest.split_off(at);
            rest.extend(extra);
            rest.extend(tail);
            Ok(rest)
        }
        None => Ok(rest),
    }
}

/// Run the command line; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), String> {
    match cmd {
        Command::Encode { inputs, tokenize, output } => cmd_encode(&inputs, &tokenize, &output),
        Command::Decode { input, output, lenient } => cmd_decode(&input, &output, lenient),
        Command::Chords { input, output } => cmd_chords(&input, output.as_deref()),
        Command::Train { corpus, output, tokenize, model, loss_log } => {
            cmd_train(&corpus, &output, &tokenize, &model, loss_log.as_deref())
        }
        Command::Generate {
            checkpoint,
            prompt,
            prompt_bars,
            temperature,
            top_k,
            max_tokens,
            masks,
            window,
            seed,
            output,
            midi,
        } => {
            let opts = SampleOptions { temperature, top_k, max_tokens, mask: Vec::new(), seed, context: window.map(DecodeContext::Sliding) };
            cmd_generate(&checkpoint, prompt.as_deref(), prompt_bars, &masks, opts, &output, midi.as_deref())
        }
        Command::Eval { inputs, tokenize, output } => cmd_eval(&inputs, &tokenize, output.as_deref()),
        Command::Stats { inputs, tokenize, output } => cmd_stats(&inputs, &tokenize, output.as_deref()),
    }
}

// ---------------------------------------------------------------------------
// I/O helpers

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), String> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let fail = |e: std::io::Error| format!("cannot write {}: {e}", path.display());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), String> {
    match output {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn read_midi(path: &Path) -> Result<Performance, String> {
    parse_smf(&read_bytes(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_tokens(path: &Path) -> Result<TokenSequence, String> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|_| format!("{}: not UTF-8 text", path.display()))?;
    TokenSequence::from_text(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn is_midi(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("mid") | Some("midi")
    )
}

fn is_tokens(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("tokens")
}

fn tokenize_performance(perf: &Performance, repr: Representation, opts: EncodeOptions) -> Result<TokenSequence, String> {
    match repr {
        Representation::Remi => encode_remi(&quantize(perf, GridConfig::default()), opts),
        Representation::MidiLike(v) => encode_midilike(perf, v),
    }
    .map_err(|e| e.to_string())
}

/// Token file as-is, or a MIDI file tokenized with `repr` and `opts`.
fn load_sequence(path: &Path, repr: Representation, opts: EncodeOptions) -> Result<TokenSequence, String> {
    if is_midi(path) {
        tokenize_performance(&read_midi(path)?, repr, opts).map_err(|e| format!("{}: {e}", path.display()))
    } else {
        read_tokens(path)
    }
}

/// Files of a directory (sorted), or the paths themselves.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, String> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| format!("cannot list {}: {e}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && (is_midi(f) || is_tokens(f)))
                .collect();
            files.sort();
            out.extend(files);
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(format!("{}: no such file", p.display()));
        }
    }
    Ok(out)
}

fn load_corpus(inputs: &[PathBuf], t: &TokenizeArgs) -> Result<Vec<(PathBuf, TokenSequence)>, String> {
    let repr = t.representation()?;
    let files = expand_inputs(inputs)?;
    files
        .par_iter()
        .map(|f| load_sequence(f, repr, t.options()).map(|s| (f.clone(), s)))
        .collect()
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_encode(inputs: &[PathBuf], t: &TokenizeArgs, output: &Path) -> Result<(), String> {
    let repr = t.representation()?;
    let texts: Vec<(PathBuf, String)> = inputs
        .par_iter()
        .map(|p| {
            let seq = tokenize_performance(&read_midi(p)?, repr, t.options()).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok((p.clone(), seq.to_text().map_err(|e| e.to_string())?))
        })
        .collect::<Result<_, String>>()?;
    if let [(_, text)] = texts.as_slice() {
        return write_atomic(output, text.as_bytes());
    }
    std::fs::create_dir_all(output).map_err(|e| format!("cannot create {}: {e}", output.display()))?;
    for (p, text) in &texts {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
        write_atomic(&output.join(format!("{stem}.tokens")), text.as_bytes())?;
    }
    Ok(())
}

fn sequence_to_performance(seq: &TokenSequence, lenient: bool) -> Result<Performance, String> {
    match seq.repr {
        Representation::Remi if !lenient => Ok(dequantize(&decode_remi(seq).map_err(|e| e.to_string())?)),
        Representation::Remi => {
            let d = decode_remi_lenient(seq).map_err(|e| e.to_string())?;
            d.warnings.iter().for_each(|w| log::warn!("{w}"));
            Ok(dequantize(&d.value))
        }
        Representation::MidiLike(_) => {
            let d = decode_to_performance(seq).map_err(|e| e.to_string())?;
            d.warnings.iter().for_each(|w| log::warn!("{w}"));
            Ok(d.value)
        }
    }
}

fn cmd_decode(input: &Path, output: &Path, lenient: bool) -> Result<(), String> {
    let seq = read_tokens(input)?;
    let perf = sequence_to_performance(&seq, lenient).map_err(|e| format!("{}: {e}", input.display()))?;
    write_atomic(output, &write_smf(&perf).map_err(|e| e.to_string())?)
}

fn chord_table(qs: &QuantizedScore) -> String {
    let mut out = format!("{CHORDS_HEADER}\n");
    for seg in recognize_chords(qs) {
        let bar = seg.start_beat / GridConfig::BEATS_PER_BAR + 1;
        let beat = seg.start_beat % GridConfig::BEATS_PER_BAR + 1;
        let label = seg.label.map_or_else(|| "N_N".to_string(), |l: ChordLabel| l.to_string());
        let _ = writeln!(out, "{bar}.{beat} {} {} {}", seg.length_beats, label, seg.score);
    }
    out
}

fn cmd_chords(input: &Path, output: Option<&Path>) -> Result<(), String> {
    let qs = quantize(&read_midi(input)?, GridConfig::default());
    emit(output, &chord_table(&qs))
}

fn loss_table(curve: &[EpochLog]) -> String {
    let kinds: Vec<TokenKind> =
        TokenKind::ALL.into_iter().filter(|k| curve.iter().any(|l| l.kind_loss(*k).is_some())).collect();
    let mut out = format!("{LOSS_HEADER}\nepoch\tstep\tloss");
    for k in &kinds {
        let _ = write!(out, "\t{}", k.name());
    }
    out.push('\n');
    for log in curve {
        let _ = write!(out, "{}\t{}\t{:.6}", log.epoch, log.step, log.mean_loss);
        for k in &kinds {
            match log.kind_loss(*k) {
                Some(l) => {
                    let _ = write!(out, "\t{l:.6}");
                }
                None => out.push_str("\tNA"),
            }
        }
        out.push('\n');
    }
    out
}

fn cmd_train(
    corpus_dir: &Path,
    output: &Path,
    t: &TokenizeArgs,
    m: &ModelArgs,
    loss_log: Option<&Path>,
) -> Result<(), String> {
    if !corpus_dir.is_dir() {
        return Err(format!("{}: not a directory", corpus_dir.display()));
    }
    let corpus: Vec<TokenSequence> = load_corpus(&[corpus_dir.to_path_buf()], t)?.into_iter().map(|(_, s)| s).collect();
    if corpus.is_empty() {
        return Err("empty corpus".into());
    }
    let repr = corpus[0].repr;
    let config = ModelConfig {
        n_layers: m.layers,
        n_heads: m.heads,
        model_dim: m.dim,
        ffn_dim: m.ffn,
        vocab_size: repr.vocab().size() as usize,
        segment_len: m.segment_len,
        memory_len: m.memory_len,
        tie_embeddings: m.tie,
        seed: m.seed,
    };
    let hp = TrainConfig {
        steps: m.steps,
        batch_size: m.batch_size,
        learning_rate: m.lr,
        warmup_steps: m.warmup,
        clip_norm: (m.clip > 0.0).then_some(m.clip),
        stop_below: m.stop_below,
        dropout: m.dropout,
        ..Default::default()
    };
    let params = ModelParams::init(config).map_err(|e| e.to_string())?;
    let report = train_from(params, &corpus, &hp, |_| {}).map_err(|e| e.to_string())?;
    let ckpt = Checkpoint { params: report.params, representation: repr, encode: t.options() };
    save_checkpoint(output, &ckpt).map_err(|e| e.to_string())?;
    if let Some(p) = loss_log {
        write_atomic(p, loss_table(&report.curve).as_bytes())?;
    }
    Ok(())
}

/// Token indices selected by one mask specification.
pub fn mask_indices(spec: &str, repr: Representation) -> Result<Vec<u32>, String> {
    let vocab = repr.vocab();
    let (kind, value) = spec.split_once(':').ok_or_else(|| format!("mask {spec:?}: expected kind:value"))?;
    let one = |t: RemiToken| {
        vocab
            .index_of(&Token::Remi(t))
            .map(|i| vec![i])
            .map_err(|_| format!("mask {spec:?} does not apply to {repr}"))
    };
    match kind {
        "chord" => one(RemiToken::Chord(value.parse::<ChordLabel>().map_err(|e| e.to_string())?)),
        "tempo-class" => one(RemiToken::TempoClass(value.parse::<TempoClass>().map_err(|e| e.to_string())?)),
        "type" => {
            let k: TokenKind = value.parse().map_err(|e: crate::tokens::TokenError| e.to_string())?;
            let idx = vocab.indices_of_kind(k);
            if idx.is_empty() {
                return Err(format!("mask {spec:?}: {repr} has no {value} tokens"));
            }
            Ok(idx)
        }
        _ => Err(format!("mask {spec:?}: unknown kind {kind:?} (chord, tempo-class, type)")),
    }
}

/// First `bars` bars of a performance, as a quantized score.
fn prompt_score(perf: &Performance, bars: u32) -> QuantizedScore {
    let mut qs = quantize(perf, GridConfig::default());
    qs.notes.retain(|n| n.bar < bars);
    let keep = (bars * GridConfig::BEATS_PER_BAR) as usize;
    qs.beat_tempi.truncate(keep);
    qs
}

fn cmd_generate(
    checkpoint: &Path,
    prompt: Option<&Path>,
    prompt_bars: u32,
    masks: &[String],
    mut opts: SampleOptions,
    output: &Path,
    midi: Option<&Path>,
) -> Result<(), String> {
    let ckpt = load_checkpoint(checkpoint).map_err(|e| format!("{}: {e}", checkpoint.display()))?;
    let repr = ckpt.representation;
    for spec in masks {
        opts.mask.extend(mask_indices(spec, repr)?);
    }
    opts.mask.sort_unstable();
    opts.mask.dedup();
    let prompt_seq = match prompt {
        Some(p) => {
            let perf = read_midi(p)?;
            let qs = prompt_score(&perf, prompt_bars);
            match repr {
                Representation::Remi => encode_remi(&qs, ckpt.encode).map_err(|e| e.to_string())?,
                Representation::MidiLike(v) => encode_midilike(&dequantize(&qs), v).map_err(|e| e.to_string())?,
            }
        }
        None if repr == Representation::Remi => {
            TokenSequence::from_tokens(repr, &[Token::Remi(RemiToken::Bar)]).map_err(|e| e.to_string())?
        }
        None => return Err(format!("{repr} models need a --prompt")),
    };
    if prompt_seq.is_empty() {
        return Err("prompt encodes to no tokens".into());
    }
    let out = sample(&ckpt.params, &prompt_seq, &opts).map_err(|e| e.to_string())?;
    write_atomic(output, out.to_text().map_err(|e| e.to_string())?.as_bytes())?;
    if let Some(m) = midi {
        let perf = sequence_to_performance(&out, true)?;
        write_atomic(m, &write_smf(&perf).map_err(|e| e.to_string())?)?;
    }
    Ok(())
}

/// REMI view of any sequence: baseline sequences are decoded and
/// re-encoded with tempo so their timeline can be measured.
fn as_remi(seq: TokenSequence) -> Result<TokenSequence, String> {
    if seq.repr == Representation::Remi {
        return Ok(seq);
    }
    let perf = sequence_to_performance(&seq, true)?;
    encode_remi(&quantize(&perf, GridConfig::default()), EncodeOptions::default()).map_err(|e| e.to_string())
}

fn rhythm_table(rows: &[(PathBuf, RhythmReport)]) -> String {
    let mut out = format!("{RHYTHM_HEADER}\nfile\tbeat_std\tdownbeat_std\tn_beats\tn_bars\tviolation_rate\n");
    for (p, r) in rows {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{}\t{}\t{:.6}",
            p.display(),
            r.beat_std,
            r.downbeat_std,
            r.n_beats,
            r.n_bars,
            r.grammar_violation_rate
        );
    }
    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&RhythmReport) -> f64| rows.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
    let _ = writeln!(
        out,
        "MEAN\t{:.6}\t{:.6}\t{:.2}\t{:.2}\t{:.6}",
        mean(&|r| r.beat_std),
        mean(&|r| r.downbeat_std),
        mean(&|r| r.n_beats as f64),
        mean(&|r| r.n_bars as f64),
        mean(&|r| r.grammar_violation_rate)
    );
    out
}

fn cmd_eval(inputs: &[PathBuf], t: &TokenizeArgs, output: Option<&Path>) -> Result<(), String> {
    let corpus = load_corpus(inputs, t)?;
    if corpus.is_empty() {
        return Err("empty corpus".into());
    }
    let rows: Vec<(PathBuf, RhythmReport)> = corpus
        .into_par_iter()
        .map(|(p, s)| {
            let r = as_remi(s).and_then(|s| rhythm_report(&s).map_err(|e| e.to_string()));
            r.map(|r| (p.clone(), r)).map_err(|e| format!("{}: {e}", p.display()))
        })
        .collect::<Result<_, String>>()?;
    emit(output, &rhythm_table(&rows))
}

fn cmd_stats(inputs: &[PathBuf], t: &TokenizeArgs, output: Option<&Path>) -> Result<(), String> {
    let corpus = load_corpus(inputs, t)?;
    let Some((_, first)) = corpus.first() else { return Err("empty corpus".into()) };
    let repr = first.repr;
    if let Some((p, _)) = corpus.iter().find(|(_, s)| s.repr != repr) {
        return Err(format!("{}: representation differs from {repr}", p.display()));
    }
    let vocab = repr.vocab();
    let mut used = vec![0usize; vocab.size() as usize];
    for (_, s) in &corpus {
        for &i in &s.indices {
            used[i as usize] += 1;
        }
    }
    let total: usize = used.iter().sum();
    let mut out = format!("{STATS_HEADER}\nrepresentation\t{repr}\nsequences\t{}\ntokens\t{total}\n", corpus.len());
    let distinct = used.iter().filter(|&&c| c > 0).count();
    let _ = writeln!(out, "coverage\t{distinct}/{}", vocab.size());
    out.push_str("\nkind\tdistinct\tsize\tcount\n");
    for kind in TokenKind::ALL {
        let idx = vocab.indices_of_kind(kind);
        if idx.is_empty() {
            continue;
        }
        let d = idx.iter().filter(|&&i| used[i as usize] > 0).count();
        let c: usize = idx.iter().map(|&i| used[i as usize]).sum();
        let _ = writeln!(out, "{}\t{d}\t{}\t{c}", kind.name(), idx.len());
    }
    out.push_str("\nlength_from\tlength_to\tsequences\n");
    let mut buckets = std::collections::BTreeMap::new();
    for (_, s) in &corpus {
        let lo = if s.is_empty() { 0 } else { 1usize << (usize::BITS - 1 - s.len().leading_zeros()) };
        *buckets.entry(lo).or_insert(0usize) += 1;
    }
    for (lo, n) in buckets {
        let hi = if lo == 0 { 0 } else { 2 * lo - 1 };
        let _ = writeln!(out, "{lo}\t{hi}\t{n}");
    }
    emit(output, &out)
}
