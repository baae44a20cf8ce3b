#ifndef CAVENET_H
#define CAVENET_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CavenetStatus {
  CAVENET_STATUS_OK = 0,
  CAVENET_STATUS_NULL_POINTER = 1,
  CAVENET_STATUS_INVALID_UTF8 = 2,
  CAVENET_STATUS_CONFIG = 3,
  CAVENET_STATUS_MISSING_ARTIFACT = 4,
  CAVENET_STATUS_SHAPE = 5,
  CAVENET_STATUS_INVALID_ARGUMENT = 6,
  CAVENET_STATUS_IO = 7,
  CAVENET_STATUS_FORMAT = 8,
  CAVENET_STATUS_UNTRAINED = 9,
  CAVENET_STATUS_EMPTY_DATASET = 10,
  CAVENET_STATUS_NON_FINITE = 11,
  CAVENET_STATUS_UNKNOWN_CLASS = 12,
  CAVENET_STATUS_BUFFER_TOO_SMALL = 13,
  CAVENET_STATUS_PANIC = 14,
} CavenetStatus;

/**
 * Run configuration being assembled from the C side.
 */
typedef struct CavenetConfig CavenetConfig;

/**
 * A trained, fused model loaded from an output directory.
 */
typedef struct CavenetModel CavenetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *cavenet_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cavenet_version(void);

/**
 * Fresh configuration holding every default.
 */
struct CavenetConfig *cavenet_config_new(void);

/**
 * Loads `key = value` lines from `path` into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CavenetStatus cavenet_config_load(const char *path, struct CavenetConfig **out);

/**
 * Sets one key. Unknown keys are a [`CavenetStatus::Config`] error.
 *
 * # Safety
 * `config` must come from this library; `key` and `value` must be
 * NUL-terminated strings.
 */
enum CavenetStatus cavenet_config_set(struct CavenetConfig *config,
                                      const char *key,
                                      const char *value);

/**
 * # Safety
 * `config` must be null or come from this library, and not be used again.
 */
void cavenet_config_free(struct CavenetConfig *config);

/**
 * Runs one pipeline stage by its command name, e.g. `"gen-data"`.
 *
 * # Safety
 * `config` must come from this library and `command` be a NUL-terminated
 * string.
 */
enum CavenetStatus cavenet_run(const struct CavenetConfig *config, const char *command);

/**
 * Loads the fused model from the checkpoints under the configured output
 * directory.
 *
 * # Safety
 * `config` must come from this library and `out` be a valid pointer.
 */
enum CavenetStatus cavenet_model_load(const struct CavenetConfig *config,
                                      struct CavenetModel **out);

/**
 * Side length of the square images the model expects.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t cavenet_model_side(const struct CavenetModel *model);

/**
 * Number of classes in each probability row.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t cavenet_model_classes(const struct CavenetModel *model);

/**
 * Fused class probabilities for `count` images.
 *
 * `pixels` holds `count * 3 * side * side` values in `[0, 1]`, channel
 * planes in row-major order per image. `probs` receives `count * classes`
 * values and `labels`, when not null, `count` argmax classes.
 *
 * # Safety
 * Buffers must be valid for the lengths given.
 */
enum CavenetStatus cavenet_model_predict(const struct CavenetModel *model,
                                         const double *pixels,
                                         size_t pixels_len,
                                         size_t count,
                                         double *probs,
                                         size_t probs_len,
                                         size_t *labels);

/**
 * # Safety
 * `model` must be null or come from this library, and not be used again.
 */
void cavenet_model_free(struct CavenetModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAVENET_H */
