#ifndef RACL_H
#define RACL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum RaclStatus {
  RACL_STATUS_OK = 0,
  RACL_STATUS_NULL_ARGUMENT = 1,
  RACL_STATUS_INVALID_ARGUMENT = 2,
  RACL_STATUS_IO = 3,
  RACL_STATUS_FORMAT = 4,
  RACL_STATUS_CONFIG = 5,
  RACL_STATUS_SHAPE = 6,
  RACL_STATUS_NUMERIC = 7,
  RACL_STATUS_UNDEFINED = 8,
  RACL_STATUS_PANIC = 9,
} RaclStatus;

/*
 Loaded detector: frozen extractor, trained parameters and the config
 they were trained under.
 */
typedef struct RaclDetector RaclDetector;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *racl_version(void);

/*
 Message of the last failed call on this thread, or an empty string.
 Valid until the next call into the library from the same thread.
 */
const char *racl_last_error(void);

/*
 Opens a checkpoint. `config_path` may be null, in which case
 `config.json` next to the checkpoint is used if present, else defaults.
 The checkpoint must have been written under the same config.

 # Safety
 Path arguments must be null or valid NUL-terminated strings; `out` must
 be a valid pointer.
 */
enum RaclStatus racl_detector_open(const char *checkpoint_path,
                                   const char *config_path,
                                   struct RaclDetector **out);

/*
 Releases a detector. Null is ignored.

 # Safety
 `detector` must be null or a handle from [`racl_detector_open`] that has
 not been freed.
 */
void racl_detector_free(struct RaclDetector *detector);

/*
 Embedding width of the detector, or 0 for a null handle.

 # Safety
 `detector` must be null or a live handle.
 */
size_t racl_detector_embedding_dim(const struct RaclDetector *detector);

/*
 Working sample rate of the detector, or 0 for a null handle.

 # Safety
 `detector` must be null or a live handle.
 */
uint32_t racl_detector_sample_rate(const struct RaclDetector *detector);

/*
 Scores one mono clip. The clip is resampled and length-normalized
 first. `score_out` receives the spoof probability; `embedding_out` may be
 null, otherwise it must hold exactly `embedding_len` =
 [`racl_detector_embedding_dim`] values.

 # Safety
 `samples` must point to `len` readable values; output pointers must be
 valid for the stated lengths.
 */
enum RaclStatus racl_detector_score(const struct RaclDetector *detector,
                                    const double *samples,
                                    size_t len,
                                    uint32_t sample_rate,
                                    double *score_out,
                                    double *embedding_out,
                                    size_t embedding_len);

/*
 Equal error rate in percent of spoof-probability scores.

 # Safety
 Score pointers must be valid for their lengths; `out` must be valid.
 */
enum RaclStatus racl_eer(const double *bona,
                         size_t n_bona,
                         const double *spoof,
                         size_t n_spoof,
                         double *out);

/*
 Truncates or circularly pads `len` samples into `out` (`target_len`
 values).

 # Safety
 `samples` must hold `len` values and `out` room for `target_len`.
 */
enum RaclStatus racl_fix_length(const double *samples, size_t len, double *out, size_t target_len);

/*
 Mel round-trip reconstruction with the default analysis settings. Output
 has the input length.

 # Safety
 `samples` must hold `len` values and `out` room for `len`.
 */
enum RaclStatus racl_reconstruct(const double *samples,
                                 size_t len,
                                 uint32_t sample_rate,
                                 uint64_t seed,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RACL_H */
