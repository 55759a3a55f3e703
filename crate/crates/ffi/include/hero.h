#ifndef HERO_H
#define HERO_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum HeroStatus {
  HERO_STATUS_OK = 0,
  HERO_STATUS_NULL_POINTER = 1,
  HERO_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed container bytes.
   */
  HERO_STATUS_CONTAINER = 3,
  /**
   * Trace contents violate a shape or value invariant.
   */
  HERO_STATUS_INVARIANT = 4,
  HERO_STATUS_OUT_OF_RANGE = 5,
  HERO_STATUS_IO = 6,
  /**
   * Output buffer too small; the required length was still written.
   */
  HERO_STATUS_BUFFER_TOO_SMALL = 7,
  HERO_STATUS_PANIC = 99,
} HeroStatus;

typedef struct HeroAllocation HeroAllocation;

typedef struct HeroMasks HeroMasks;

typedef struct HeroTrace HeroTrace;

typedef struct HeroTraceInfo {
  size_t grid_rows;
  size_t grid_cols;
  size_t num_tiles;
  size_t num_patches;
  size_t num_layers;
  bool has_clip_embeddings;
  bool has_text_embedding;
} HeroTraceInfo;

typedef struct HeroTilingPlan {
  uint32_t target_w;
  uint32_t target_h;
  uint32_t grid_cols;
  uint32_t grid_rows;
  uint32_t pad_left;
  uint32_t pad_right;
  uint32_t pad_top;
  uint32_t pad_bottom;
  double scale_x;
  double scale_y;
} HeroTilingPlan;

typedef struct HeroBudget {
  size_t n_total;
  size_t n_global;
  size_t n_local;
  /**
   * Tokens actually kept; below `n_total` only under the strict-floor policy.
   */
  size_t retained;
} HeroBudget;

typedef struct HeroEfficiency {
  double tflops;
  double kv_cache_mib;
  double per_layer_flops;
} HeroEfficiency;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *hero_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hero_version(void);

/**
 * Parse a trace container from memory.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes; `out_trace` must be writable.
 */
enum HeroStatus hero_trace_read(const uint8_t *bytes, size_t len, struct HeroTrace **out_trace);

/**
 * Parse a trace container from a file path (UTF-8).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_trace` must be writable.
 */
enum HeroStatus hero_trace_read_file(const char *path, struct HeroTrace **out_trace);

/**
 * # Safety
 * `trace` must be null or a handle from `hero_trace_read*`, freed once.
 */
void hero_trace_free(struct HeroTrace *trace);

/**
 * # Safety
 * `trace` must be a live handle; `info` must be writable.
 */
enum HeroStatus hero_trace_info(const struct HeroTrace *trace, struct HeroTraceInfo *info);

/**
 * Serialize a trace. The buffer must be released with `hero_bytes_free`.
 *
 * # Safety
 * `trace` must be a live handle; `out_bytes` and `out_len` must be writable.
 */
enum HeroStatus hero_trace_write(const struct HeroTrace *trace,
                                 uint8_t **out_bytes,
                                 size_t *out_len);

/**
 * # Safety
 * `bytes`/`len` must come from `hero_trace_write`, freed once.
 */
void hero_bytes_free(uint8_t *bytes, size_t len);

/**
 * Tiling geometry for an image of `width` x `height` pixels.
 *
 * # Safety
 * `plan` must be writable.
 */
enum HeroStatus hero_plan_tiling(uint32_t width, uint32_t height, struct HeroTilingPlan *plan);

/**
 * Combined per-tile scores into `scores[0..capacity]`. `alpha_used`, if
 * non-null, receives the weight actually applied (1 when the trace has no
 * instruction embedding).
 *
 * # Safety
 * `trace` must be live; `scores` must hold `capacity` doubles.
 */
enum HeroStatus hero_score_tiles(const struct HeroTrace *trace,
                                 double alpha,
                                 double *scores,
                                 size_t capacity,
                                 size_t *out_len,
                                 double *alpha_used);

/**
 * Split the token budget for `num_tiles` tiles of `n_patches` patches.
 *
 * # Safety
 * `scores` must hold `num_tiles` doubles; `out_alloc` must be writable.
 */
enum HeroStatus hero_allocate(size_t num_tiles,
                              size_t n_patches,
                              double ratio,
                              const double *scores,
                              bool strict_floor,
                              struct HeroAllocation **out_alloc);

/**
 * # Safety
 * `alloc` must be null or a handle from `hero_allocate`, freed once.
 */
void hero_allocation_free(struct HeroAllocation *alloc);

/**
 * # Safety
 * `alloc` must be live; `budget` must be writable.
 */
enum HeroStatus hero_allocation_budget(const struct HeroAllocation *alloc,
                                       struct HeroBudget *budget);

/**
 * # Safety
 * `alloc` must be live; `quotas` must hold `capacity` elements.
 */
enum HeroStatus hero_allocation_per_tile(const struct HeroAllocation *alloc,
                                         size_t *quotas,
                                         size_t capacity,
                                         size_t *out_len);

/**
 * Select retained patches for every tile and the thumbnail. Layer lists are
 * 1-based; pass null with length 0 for the defaults.
 *
 * # Safety
 * Handles must be live; layer pointers must hold their stated lengths.
 */
enum HeroStatus hero_select(const struct HeroTrace *trace,
                            const struct HeroAllocation *alloc,
                            const size_t *layers_low,
                            size_t layers_low_len,
                            const size_t *layers_high,
                            size_t layers_high_len,
                            struct HeroMasks **out_masks);

/**
 * # Safety
 * `masks` must be null or a handle from `hero_select`, freed once.
 */
void hero_masks_free(struct HeroMasks *masks);

/**
 * Number of regions: tiles followed by the thumbnail. Zero for null.
 *
 * # Safety
 * `masks` must be null or live.
 */
size_t hero_masks_count(const struct HeroMasks *masks);

/**
 * Kept patch indices of one region, ascending.
 *
 * # Safety
 * `masks` must be live; `indices` must hold `capacity` elements.
 */
enum HeroStatus hero_masks_kept(const struct HeroMasks *masks,
                                size_t region_index,
                                size_t *indices,
                                size_t capacity,
                                size_t *out_len);

/**
 * Packed LSB-first bitmap of one region, `ceil(N / 8)` bytes.
 *
 * # Safety
 * `masks` must be live; `bitmap` must hold `capacity` bytes.
 */
enum HeroStatus hero_masks_bitmap(const struct HeroMasks *masks,
                                  size_t region_index,
                                  uint8_t *bitmap,
                                  size_t capacity,
                                  size_t *out_len);

/**
 * Prefill cost for a token count. `profile` is a built-in name
 * (`vicuna-7b`, `vicuna-13b`) or a path to a JSON profile; null selects
 * `vicuna-7b`.
 *
 * # Safety
 * `profile` must be null or NUL-terminated; `report` must be writable.
 */
enum HeroStatus hero_prefill_flops(uint64_t n_visual,
                                   uint64_t n_text,
                                   const char *profile,
                                   struct HeroEfficiency *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HERO_H */
