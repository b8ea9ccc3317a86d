#ifndef DOLHODGE_H
#define DOLHODGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of an FFI call. Codes 0 to 4 coincide with the exit codes of the
// command-line tool.
typedef enum DhStatus {
  DH_STATUS_OK = 0,
  // The computation finished but an asserted tolerance failed.
  DH_STATUS_TOLERANCE = 1,
  DH_STATUS_INVALID_CONFIG = 2,
  DH_STATUS_NOT_LOCALLY_FREE = 3,
  DH_STATUS_SOLVER = 4,
  DH_STATUS_NULL_POINTER = 5,
  DH_STATUS_PANIC = 6,
} DhStatus;

// A family of line bundles together with its run configuration.
typedef struct DhFamily DhFamily;

// Result of one curvature comparison.
typedef struct DhReport DhReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *dh_last_error(void);

// Library version as a static NUL-terminated string.
const char *dh_version(void);

// Creates a family from a JSON object of configuration keys (`"{}"` for the
// defaults).
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` a valid pointer.
enum DhStatus dh_family_new(const char *config_json, struct DhFamily **out);

// Releases a family; null is ignored.
//
// # Safety
// `family` must be null or a handle from [`dh_family_new`] not yet freed.
void dh_family_free(struct DhFamily *family);

// Dimension of the harmonic space of degree `q` at the base point `s_re + i s_im`
// (first base coordinate; the others are zero).
//
// # Safety
// `family` must be a live handle and `out` a valid pointer.
enum DhStatus dh_harmonic_dim(const struct DhFamily *family,
                              double s_re,
                              double s_im,
                              uint32_t q,
                              size_t *out);

// Weil-Petersson entry `<rho_k, rho_l>` at the configured base point.
//
// # Safety
// `family` must be a live handle; `re` and `im` valid pointers.
enum DhStatus dh_wp_metric(const struct DhFamily *family,
                           size_t k,
                           size_t l,
                           double *re,
                           double *im);

// Compares both sides of the curvature formula at the configured base point,
// degree and step. Returns [`DhStatus::Tolerance`] together with a report
// when the residual exceeds the configured bound.
//
// # Safety
// `family` must be a live handle and `out` a valid pointer.
enum DhStatus dh_verify_theorem(const struct DhFamily *family, struct DhReport **out);

// Releases a report; null is ignored.
//
// # Safety
// `report` must be null or a handle from [`dh_verify_theorem`] not yet freed.
void dh_report_free(struct DhReport *report);

// Relative residual of the report.
//
// # Safety
// `report` must be a live handle and `out` a valid pointer.
enum DhStatus dh_report_residual_rel(const struct DhReport *report, double *out);

// Rank of the direct image in the report.
//
// # Safety
// `report` must be a live handle and `out` a valid pointer.
enum DhStatus dh_report_rank(const struct DhReport *report, size_t *out);

// Entry `(rho, sigma, k, l)` of the finite-difference curvature (`which = 0`)
// or of the term `T_which` (`which = 1..4`).
//
// # Safety
// `report` must be a live handle; `re` and `im` valid pointers.
enum DhStatus dh_report_entry(const struct DhReport *report,
                              uint32_t which,
                              size_t rho,
                              size_t sigma,
                              size_t k,
                              size_t l,
                              double *re,
                              double *im);

// JSON rendering of the report; release with [`dh_string_free`].
//
// # Safety
// `report` must be a live handle and `out` a valid pointer.
enum DhStatus dh_report_json(const struct DhReport *report, char **out);

// Runs a full command described by a JSON configuration (its `command` key
// selects the experiment) and returns the report JSON, or the error object
// on failure. The status mirrors the exit code of the command-line tool.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` a valid pointer.
enum DhStatus dh_run(const char *config_json, char **out);

// Releases a string returned by this library; null is ignored.
//
// # Safety
// `s` must be null or a string returned by this library not yet freed.
void dh_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOLHODGE_H */
