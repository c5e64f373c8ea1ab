#ifndef PROTCOMP_H
#define PROTCOMP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_ARGUMENT = 1,
  PC_STATUS_INVALID_UTF8 = 2,
  PC_STATUS_IO = 3,
  PC_STATUS_PARSE = 4,
  PC_STATUS_VALIDATION = 5,
  PC_STATUS_INFEASIBLE = 6,
  PC_STATUS_TIMED_OUT = 7,
  /**
   * Cycle left after selection, false alarm, or inconsistent finalization.
   */
  PC_STATUS_CONFLICT = 8,
  PC_STATUS_UNKNOWN_INSTRUCTION = 9,
  /**
   * Any other engine error, or a caught panic.
   */
  PC_STATUS_INTERNAL = 10,
} PcStatus;

/**
 * Program model handle.
 */
typedef struct PcProgram PcProgram;

/**
 * Composition result handle.
 */
typedef struct PcResult PcResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next protcomp call on the same thread.
 */
const char *pc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pc_version(void);

/**
 * Load a program model from a JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PcStatus pc_program_load(const char *path, struct PcProgram **out);

/**
 * Parse a program model from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum PcStatus pc_program_from_json(const char *json, struct PcProgram **out);

/**
 * Seeded synthetic program.
 *
 * # Safety
 * `out` must be writable.
 */
enum PcStatus pc_program_generate(uint64_t seed,
                                  size_t functions,
                                  size_t blocks,
                                  double det_ratio,
                                  struct PcProgram **out);

/**
 * # Safety
 * `program` must come from a `pc_program_*` constructor, or be NULL.
 */
void pc_program_free(struct PcProgram *program);

/**
 * Program model as JSON.
 *
 * # Safety
 * `program` must be a live handle; `out` must be writable.
 */
enum PcStatus pc_program_to_json(const struct PcProgram *program, char **out);

/**
 * Run the full pipeline. `config_json` may be NULL for defaults.
 *
 * # Safety
 * `program` must be a live handle; `config_json` NULL or NUL-terminated;
 * `out` must be writable.
 */
enum PcStatus pc_compose(const struct PcProgram *program,
                         const char *config_json,
                         struct PcResult **out);

/**
 * # Safety
 * `result` must come from [`pc_compose`], or be NULL.
 */
void pc_result_free(struct PcResult *result);

/**
 * Number of selected manifests, or 0 for NULL.
 *
 * # Safety
 * `result` must be a live handle or NULL.
 */
size_t pc_result_selected_count(const struct PcResult *result);

/**
 * Composition report as JSON.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum PcStatus pc_result_report_json(const struct PcResult *result, char **out);

/**
 * Protected program, selected manifests and patch slots as JSON.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum PcStatus pc_result_protected_json(const struct PcResult *result, char **out);

/**
 * Ids of the manifests whose guards notice a change to `instruction`.
 * Writes up to `cap` ids into `ids` (which may be NULL when `cap` is 0) and
 * the total count into `count`.
 *
 * # Safety
 * `result` must be a live handle; `ids` must hold `cap` elements; `count`
 * must be writable.
 */
enum PcStatus pc_tamper(const struct PcResult *result,
                        uint32_t instruction,
                        uint32_t *ids,
                        size_t cap,
                        size_t *count);

/**
 * # Safety
 * `s` must be a string returned by this library, or NULL.
 */
void pc_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* PROTCOMP_H */
