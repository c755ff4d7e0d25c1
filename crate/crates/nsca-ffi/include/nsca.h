/* C API for nonstationary component analysis.
 *
 * All fallible calls return an NscaStatus; on failure a thread-local message
 * is available from nsca_last_error_message(). Results are owned by an
 * opaque NscaResult handle released with nsca_result_free().
 */

#ifndef NSCA_H
#define NSCA_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes returned by every fallible entry point. */
typedef enum NscaStatus {
  /* Success. */
  NscaOk = 0,
  /* A required pointer argument was null. */
  NscaNullPointer = 1,
  /* Malformed input: bad dimensions, non-finite samples, or an invalid
   * configuration document. */
  NscaInvalidInput = 2,
  /* The pipeline ran but could not produce a result (e.g. no nonstationary
   * epochs were found). */
  NscaPipelineError = 3,
  /* An output buffer was too small. */
  NscaBufferTooSmall = 4,
  /* An internal panic was caught; the library state is still valid. */
  NscaInternalError = 5,
} NscaStatus;

/* Opaque separation result handle. */
typedef struct NscaResult NscaResult;

/* Returns the library version as a static NUL-terminated string. */
const char *nsca_version(void);

/* Returns the message of the last error raised on this thread. The pointer
 * stays valid until the next failing call on the same thread. */
const char *nsca_last_error_message(void);

/* Runs the extraction pipeline on channel-major samples
 * (data[ch * n_samples + t]).
 *
 * config_json is an optional NUL-terminated run-configuration document (the
 * same strict JSON schema as the CLI); pass NULL for defaults. On success
 * *out owns the result and must be freed with nsca_result_free. */
NscaStatus nsca_extract(const double *data,
                        size_t n_channels,
                        size_t n_samples,
                        double fs,
                        const char *config_json,
                        NscaResult **out);

/* Number of extracted components (equals the channel count). */
size_t nsca_result_n_components(const NscaResult *result);

/* Number of samples per component. */
size_t nsca_result_n_samples(const NscaResult *result);

/* Copies the components into buf channel-major (buf[comp * n_samples + t]);
 * len is the buffer capacity in doubles. */
NscaStatus nsca_result_components(const NscaResult *result,
                                  double *buf,
                                  size_t len);

/* Copies the n x n demixing matrix into buf row-major. */
NscaStatus nsca_result_demixing(const NscaResult *result,
                                double *buf,
                                size_t len);

/* Copies the component ranking: indices[i] is the component index ranked
 * i-th (most target-like first) and scores[i] its energy-ratio score. len is
 * the capacity of both arrays. */
NscaStatus nsca_result_ranking(const NscaResult *result,
                               size_t *indices,
                               double *scores,
                               size_t len);

/* Releases a result handle. NULL is ignored; a handle must not be used after
 * being freed. */
void nsca_result_free(NscaResult *result);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* NSCA_H */
