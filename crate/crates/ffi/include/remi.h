#ifndef REMI_H
#define REMI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum RemiStatus {
  REMI_STATUS_OK = 0,
  REMI_STATUS_NULL_POINTER = 1,
  REMI_STATUS_INVALID_ARGUMENT = 2,
  REMI_STATUS_PARSE_ERROR = 3,
  REMI_STATUS_CODEC_ERROR = 4,
  REMI_STATUS_MODEL_ERROR = 5,
  REMI_STATUS_IO_ERROR = 6,
  REMI_STATUS_PANIC = 7,
} RemiStatus;

typedef enum RemiRepresentation {
  REMI_REPRESENTATION_REMI = 0,
  REMI_REPRESENTATION_MIDI_LIKE_V1 = 1,
  REMI_REPRESENTATION_MIDI_LIKE_V2 = 2,
  REMI_REPRESENTATION_MIDI_LIKE_V3 = 3,
} RemiRepresentation;

// A trained model with its tokenization settings.
typedef struct RemiModel RemiModel;

// A quantized score.
typedef struct RemiScore RemiScore;

// A token sequence tagged with its representation.
typedef struct RemiTokens RemiTokens;

// Bytes owned by the caller.
typedef struct RemiBuffer {
  uint8_t *data;
  size_t len;
} RemiBuffer;

// One chord segment. `root` is -1 and `quality` is -1 when no chord was
// recognized; otherwise `quality` counts major, minor, diminished,
// augmented, dominant from 0.
typedef struct RemiChordSegment {
  uint32_t start_beat;
  uint32_t length_beats;
  int32_t root;
  int32_t quality;
  int32_t score;
} RemiChordSegment;

typedef struct RemiRhythmReport {
  double beat_std;
  double downbeat_std;
  size_t n_beats;
  size_t n_bars;
  double grammar_violation_rate;
  bool too_short;
} RemiRhythmReport;

typedef struct RemiSampleOptions {
  double temperature;
  size_t top_k;
  size_t max_tokens;
  uint64_t seed;
} RemiSampleOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *remi_last_error(void);

// Library version as a static string.
const char *remi_version(void);

void remi_buffer_free(struct RemiBuffer buf);

void remi_string_free(char *s);

// Parse a Standard MIDI File and quantize it to the 16-step grid.
enum RemiStatus remi_score_from_midi(const uint8_t *data, size_t len, struct RemiScore **out);

// Render a score as a Standard MIDI File.
enum RemiStatus remi_score_to_midi(const struct RemiScore *score, struct RemiBuffer *out);

enum RemiStatus remi_score_note_count(const struct RemiScore *score, size_t *out);

void remi_score_free(struct RemiScore *score);

// Chord segments of a score; release with [`remi_chords_free`].
enum RemiStatus remi_chords(const struct RemiScore *score,
                            struct RemiChordSegment **out,
                            size_t *out_len);

void remi_chords_free(struct RemiChordSegment *segments, size_t len);

// Tokenize a score. The tempo and chord switches apply to REMI only.
enum RemiStatus remi_encode(const struct RemiScore *score,
                            enum RemiRepresentation repr,
                            bool with_tempo,
                            bool with_chord,
                            struct RemiTokens **out);

// Decode tokens back to a Standard MIDI File. REMI must be grammatical;
// MIDI-like sequences are repaired where needed.
enum RemiStatus remi_decode_to_midi(const struct RemiTokens *tokens, struct RemiBuffer *out);

// Parse the line-oriented token text format.
enum RemiStatus remi_tokens_from_text(const char *s, struct RemiTokens **out);

// Token text; release with [`remi_string_free`].
enum RemiStatus remi_tokens_to_text(const struct RemiTokens *tokens, char **out);

// Build a sequence from vocabulary indices.
enum RemiStatus remi_tokens_from_indices(enum RemiRepresentation repr,
                                         const uint32_t *indices,
                                         size_t len,
                                         struct RemiTokens **out);

// Borrow the vocabulary indices; valid while the handle lives.
enum RemiStatus remi_tokens_indices(const struct RemiTokens *tokens,
                                    const uint32_t **data,
                                    size_t *len);

enum RemiStatus remi_tokens_representation(const struct RemiTokens *tokens,
                                           enum RemiRepresentation *out);

void remi_tokens_free(struct RemiTokens *tokens);

// Rhythm statistics of a REMI sequence.
enum RemiStatus remi_rhythm_report(const struct RemiTokens *tokens, struct RemiRhythmReport *out);

// Load a checkpoint file.
enum RemiStatus remi_model_load(const char *path, struct RemiModel **out);

enum RemiStatus remi_model_representation(const struct RemiModel *model,
                                          enum RemiRepresentation *out);

void remi_model_free(struct RemiModel *model);

// Defaults: temperature 1, top-k 16, 512 tokens, seed 0.
struct RemiSampleOptions remi_sample_options_default(void);

// Continue `prompt` (or start from a lone `Bar` when it is null and the
// model is REMI), never emitting the `mask_len` indices in `mask`.
enum RemiStatus remi_generate(const struct RemiModel *model,
                              const struct RemiTokens *prompt,
                              const struct RemiSampleOptions *options,
                              const uint32_t *mask,
                              size_t mask_len,
                              struct RemiTokens **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REMI_H */
