/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef GUIRC_H
#define GUIRC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GuircStatus {
  GUIRC_STATUS_OK = 0,
  GUIRC_STATUS_NULL_POINTER = 1,
  GUIRC_STATUS_INVALID_ARGUMENT = 2,
  GUIRC_STATUS_INVALID_UTF8 = 3,
  GUIRC_STATUS_OUT_OF_BOUNDS = 4,
  GUIRC_STATUS_NO_CONSENSUS = 5,
  GUIRC_STATUS_BUFFER_TOO_SMALL = 6,
  GUIRC_STATUS_PANIC = 7,
} GuircStatus;

typedef enum GuircTargetKind {
  GUIRC_TARGET_KIND_POINT = 0,
  GUIRC_TARGET_KIND_BOX = 1,
  GUIRC_TARGET_KIND_UNPARSEABLE = 2,
} GuircTargetKind;

// Accumulates rects for one query. Opaque to C.
typedef struct GuircVoter GuircVoter;

// Parsed model output. Unused coordinates are zero.
typedef struct GuircTarget {
  enum GuircTargetKind kind;
  double x1;
  double y1;
  double x2;
  double y2;
} GuircTarget;

// Half-open cell rectangle `[x1, x2) x [y1, y2)`.
typedef struct GuircRect {
  uint32_t x1;
  uint32_t y1;
  uint32_t x2;
  uint32_t y2;
} GuircRect;

typedef struct GuircConsensus {
  uint32_t v_max;
  uint64_t area;
  struct GuircRect bbox;
  // Click point chosen by the requested point mode.
  double x;
  double y;
  double center_x;
  double center_y;
  double centroid_x;
  double centroid_y;
} GuircConsensus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL.
// Valid until the next guirc call on the same thread.
const char *guirc_last_error(void);

// Library version as a static string.
const char *guirc_version(void);

// Parses one model output into its target and effective rect.
//
// # Safety
// `text` must be a valid C string; `out_target` and `out_rect` must be writable.
enum GuircStatus guirc_parse_prediction(const char *text,
                                        double alpha,
                                        uint32_t width,
                                        uint32_t height,
                                        struct GuircTarget *out_target,
                                        struct GuircRect *out_rect);

// Consistency reward for each of `n` texts, written to `out_rewards[0..n]`.
//
// # Safety
// `texts` must point to `n` valid C strings and `out_rewards` to `n` doubles.
enum GuircStatus guirc_reward_from_texts(const char *const *texts,
                                         size_t n,
                                         double alpha,
                                         uint32_t width,
                                         uint32_t height,
                                         double *out_rewards);

// Group-standardized advantages of `n` rewards.
//
// # Safety
// `rewards` and `out_advantages` must each hold `n` doubles.
enum GuircStatus guirc_group_advantages(const double *rewards,
                                        size_t n,
                                        double eps,
                                        double *out_advantages);

// Consensus region of `n` texts.
//
// # Safety
// `texts` must point to `n` valid C strings; `out` must be writable.
enum GuircStatus guirc_consensus_from_texts(const char *const *texts,
                                            size_t n,
                                            double alpha,
                                            uint32_t width,
                                            uint32_t height,
                                            uint8_t neighbors,
                                            bool use_centroid,
                                            struct GuircConsensus *out);

// Creates an empty voter for one image size. Free with [`guirc_voter_free`].
//
// # Safety
// `out` must be writable.
enum GuircStatus guirc_voter_new(uint32_t width,
                                 uint32_t height,
                                 double alpha,
                                 struct GuircVoter **out);

// # Safety
// `voter` must come from [`guirc_voter_new`] and not be used afterwards. NULL is ignored.
void guirc_voter_free(struct GuircVoter *voter);

// Parses `text` and adds its rect; optionally reports the rect.
//
// # Safety
// `voter` must be live; `text` a valid C string; `out_rect` NULL or writable.
enum GuircStatus guirc_voter_add_text(struct GuircVoter *voter,
                                      const char *text,
                                      struct GuircRect *out_rect);

// Adds an already rasterized rect; it must lie within the image.
//
// # Safety
// `voter` must be live.
enum GuircStatus guirc_voter_add_rect(struct GuircVoter *voter, struct GuircRect rect);

// Number of rects added so far.
//
// # Safety
// `voter` must be live or NULL (NULL reads as 0).
size_t guirc_voter_len(const struct GuircVoter *voter);

// # Safety
// `voter` must be live.
enum GuircStatus guirc_voter_clear(struct GuircVoter *voter);

// # Safety
// `voter` must be live; `out` writable.
enum GuircStatus guirc_voter_consensus(const struct GuircVoter *voter,
                                       uint8_t neighbors,
                                       bool use_centroid,
                                       struct GuircConsensus *out);

// Rewards of all added rects, in insertion order, into `out[0..cap]`.
// Fails with `BufferTooSmall` when `cap` is less than the voter length.
//
// # Safety
// `voter` must be live; `out` must hold `cap` doubles.
enum GuircStatus guirc_voter_rewards(const struct GuircVoter *voter, double *out, size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GUIRC_H */
