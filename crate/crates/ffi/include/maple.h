#ifndef MAPLE_H
#define MAPLE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every function.
typedef enum MapleStatus {
  MAPLE_STATUS_OK = 0,
  MAPLE_STATUS_NULL_POINTER = 1,
  MAPLE_STATUS_INVALID_ARGUMENT = 2,
  MAPLE_STATUS_IO = 3,
  MAPLE_STATUS_PARSE = 4,
  MAPLE_STATUS_VALIDATION = 5,
  MAPLE_STATUS_SHAPE = 6,
  MAPLE_STATUS_UNSUPPORTED = 7,
  MAPLE_STATUS_INTERNAL = 8,
} MapleStatus;

// Hardware descriptor of one device.
typedef struct MapleDescriptor MapleDescriptor;

// Trained predictor.
typedef struct MapleModel MapleModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The pointer
// stays valid until the next call into this library from the same thread.
const char *maple_last_error(void);

// Library version as a static NUL-terminated string.
const char *maple_version(void);

// Loads a model JSON file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MapleStatus maple_model_load(const char *path, struct MapleModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from [`maple_model_load`] and not be used afterwards.
void maple_model_free(struct MapleModel *model);

// Loads a descriptor JSON file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MapleStatus maple_descriptor_load(const char *path, struct MapleDescriptor **out);

// Descriptor of the default simulated device with the given seed.
//
// # Safety
// `out` must be writable.
enum MapleStatus maple_descriptor_sim(uint64_t seed, struct MapleDescriptor **out);

// Releases a descriptor. Null is ignored.
//
// # Safety
// `desc` must come from this library and not be used afterwards.
void maple_descriptor_free(struct MapleDescriptor *desc);

// Predicted latency in milliseconds of one architecture.
//
// # Safety
// Handles must be live; `out_ms` must be writable.
enum MapleStatus maple_predict(const struct MapleModel *model,
                               const struct MapleDescriptor *desc,
                               uint32_t arch_id,
                               double *out_ms);

// Predicted latencies for `n` architecture ids, written in input order.
//
// # Safety
// Handles must be live; `arch_ids` and `out_ms` must hold `n` elements.
enum MapleStatus maple_predict_batch(const struct MapleModel *model,
                                     const struct MapleDescriptor *desc,
                                     const uint32_t *arch_ids,
                                     size_t n,
                                     double *out_ms);

// One-hot encoding of an architecture: 30 values, edge-major.
//
// # Safety
// `out` must hold 30 doubles.
enum MapleStatus maple_encode(uint32_t arch_id, double *out);

// Inverse of [`maple_encode`]; every edge row must be exactly one-hot.
//
// # Safety
// `encoding` must hold 30 doubles; `out_id` must be writable.
enum MapleStatus maple_decode(const double *encoding, uint32_t *out_id);

// FLOPs of the full network with `cells_per_stage` cells in each stage.
//
// # Safety
// `out` must be writable.
enum MapleStatus maple_flops(uint32_t arch_id, size_t cells_per_stage, uint64_t *out);

// Fraction of `n` predictions within `bound` relative error of the truth.
//
// # Safety
// `preds` and `truths` must hold `n` doubles; `out` must be writable.
enum MapleStatus maple_error_bound_accuracy(const double *preds,
                                            const double *truths,
                                            size_t n,
                                            double bound,
                                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAPLE_H */
