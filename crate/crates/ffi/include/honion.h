#ifndef HONION_H
#define HONION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HonionMethod {
  HONION_METHOD_GREEDY = 0,
  HONION_METHOD_EXACT = 1,
} HonionMethod;

typedef enum HonionStatus {
  HONION_STATUS_OK = 0,
  HONION_STATUS_NULL_POINTER = 1,
  HONION_STATUS_INVALID_ARGUMENT = 2,
  HONION_STATUS_IO = 3,
  HONION_STATUS_PARSE = 4,
  HONION_STATUS_GRAPH = 5,
  HONION_STATUS_DETECT = 6,
  HONION_STATUS_SIMULATION = 7,
  HONION_STATUS_OUT_OF_RANGE = 8,
  HONION_STATUS_PANIC = 99,
} HonionStatus;

// Opaque result of one detection run.
typedef struct HonionDetection HonionDetection;

// Opaque attribution graph.
typedef struct HonionGraph HonionGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *honion_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void honion_string_free(char *s);

// Batch size reaching `fraction` of `n_hsdirs` (nearest integer).
//
// # Safety
// `out` must be a valid pointer.
enum HonionStatus honion_required_honions(uint64_t n_hsdirs, double fraction, uint64_t *out);

// Expected fraction of relays hosting at least one of `m` honions.
//
// # Safety
// `out` must be a valid pointer.
enum HonionStatus honion_coverage_probability(uint64_t n_hsdirs, uint64_t m, double *out);

uint32_t honion_time_period(uint64_t unix_time, uint8_t permanent_id_byte);

// Writes the 20-byte descriptor-id. `cookie` may be NULL or point to 16 bytes.
//
// # Safety
// `identifier` must point to 10 bytes and `out` to 20 writable bytes.
enum HonionStatus honion_descriptor_id(const uint8_t *identifier,
                                       uint32_t time_period,
                                       const uint8_t *cookie,
                                       uint8_t replica,
                                       uint8_t *out);

// Writes the 16-character onion address plus a terminating NUL.
//
// # Safety
// `identifier` must point to 10 bytes and `out` to 17 writable bytes.
enum HonionStatus honion_onion_address(const uint8_t *identifier, char *out);

// Runs a simulation from a JSON configuration and writes its artifacts to `out_dir`.
//
// # Safety
// Both arguments must be NUL-terminated strings.
enum HonionStatus honion_simulate(const char *config_json, const char *out_dir);

// Builds the attribution graph of a run directory (placements.jsonl and visits.jsonl).
//
// # Safety
// `run_dir` must be a NUL-terminated string and `out` a valid pointer.
enum HonionStatus honion_graph_from_run_dir(const char *run_dir, struct HonionGraph **out);

// Loads a graph from the JSON written by `honion build-graph`.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum HonionStatus honion_graph_from_json(const char *json, struct HonionGraph **out);

// # Safety
// `g` must be NULL or a live graph handle.
size_t honion_graph_hsdir_count(const struct HonionGraph *g);

// # Safety
// `g` must be NULL or a live graph handle.
size_t honion_graph_instance_count(const struct HonionGraph *g);

// # Safety
// `g` must be NULL or a live graph handle.
size_t honion_graph_edge_count(const struct HonionGraph *g);

// # Safety
// `g` must be NULL or a handle not yet freed.
void honion_graph_free(struct HonionGraph *g);

// Finds an explaining set. `component_cap` bounds the components solved
// exactly; 0 selects the default. Larger components fall back to greedy.
//
// # Safety
// `g` must be a live graph handle and `out` a valid pointer.
enum HonionStatus honion_detect(const struct HonionGraph *g,
                                enum HonionMethod method,
                                size_t component_cap,
                                struct HonionDetection **out);

// Number of relays in the explaining set.
//
// # Safety
// `d` must be NULL or a live detection handle.
size_t honion_detection_size(const struct HonionDetection *d);

// # Safety
// `d` must be NULL or a live detection handle.
size_t honion_detection_lower_bound(const struct HonionDetection *d);

// # Safety
// `d` must be NULL or a live detection handle.
bool honion_detection_proven_optimal(const struct HonionDetection *d);

// Writes the 40-hex-digit fingerprint of relay `index` plus a NUL.
//
// # Safety
// `d` must be a live detection handle and `out` must have 41 writable bytes.
enum HonionStatus honion_detection_fingerprint(const struct HonionDetection *d,
                                               size_t index,
                                               char *out);

// Label of relay `index`; free with `honion_string_free`.
//
// # Safety
// `d` must be a live detection handle and `out` a valid pointer.
enum HonionStatus honion_detection_label(const struct HonionDetection *d, size_t index, char **out);

// Full detection report (results and ranked suspects) as JSON; free with
// `honion_string_free`.
//
// # Safety
// `d` must be a live detection handle and `out` a valid pointer.
enum HonionStatus honion_detection_to_json(const struct HonionDetection *d, char **out);

// # Safety
// `d` must be NULL or a handle not yet freed.
void honion_detection_free(struct HonionDetection *d);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HONION_H */
