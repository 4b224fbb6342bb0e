/* C API for the provsage streaming provenance-graph anomaly detector.
 *
 * Conventions:
 *   - Every function returns PROVSAGE_OK (0) on success.
 *   - PROVSAGE_INVALID_ARGUMENT (2) marks null pointers, bad UTF-8 or bad
 *     config text; PROVSAGE_ERROR (1) is any runtime failure.
 *   - provsage_last_error() describes the most recent failure on the
 *     calling thread; the pointer stays valid until the next failing call.
 *   - Strings returned through out-parameters are heap-allocated and must
 *     be released with provsage_string_free().
 *   - Config text is flat "key = value" lines using the experiment
 *     parameter names (BS, SS, split_size, R, T, T_hat, K, hidden, epoch,
 *     learning_rate, seed, ...); pass NULL for the defaults.
 *   - Edge lines are tab-separated:
 *     src_id \t src_type \t dst_id \t dst_type \t edge_type \t timestamp
 */

#ifndef PROVSAGE_H
#define PROVSAGE_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#define PROVSAGE_OK 0
#define PROVSAGE_ERROR 1
#define PROVSAGE_INVALID_ARGUMENT 2

/* Opaque trained-ensemble handle. */
typedef struct ProvsageModel ProvsageModel;

/* Opaque streaming-detector handle. */
typedef struct ProvsageDetector ProvsageDetector;

/* Message of the most recent failure on this thread; empty on success. */
const char *provsage_last_error(void);

/* Trains an ensemble on n_inputs benign edge-stream files. */
int provsage_train(const char *const *inputs,
                   size_t n_inputs,
                   const char *config_text,
                   ProvsageModel **out);

/* Loads a serialized ensemble. */
int provsage_model_load(const char *path, ProvsageModel **out);

/* Serializes the ensemble; byte-stable for a given model. */
int provsage_model_save(const ProvsageModel *model, const char *path);

/* Number of stacked submodels, or -1 on a null handle. */
int provsage_model_cnt(const ProvsageModel *model);

void provsage_model_free(ProvsageModel *model);

/* Creates a streaming detector over a copy of the model. */
int provsage_detector_new(const ProvsageModel *model,
                          const char *config_text,
                          ProvsageDetector **out);

/* Ingests one edge line. When the edge completed a detection flush,
 * *flushed (if non-null) is set to 1 and *flagged (if non-null) receives
 * the number of nodes flagged in that flush. */
int provsage_detector_ingest(ProvsageDetector *detector,
                             const char *line,
                             int *flushed,
                             int *flagged);

/* Final flush, queue aging, and summary. Stores a JSON summary string in
 * *summary_json; the handle cannot ingest afterwards but must still be
 * freed. */
int provsage_detector_finish(ProvsageDetector *detector, char **summary_json);

void provsage_detector_free(ProvsageDetector *detector);

/* Releases a string returned through an out-parameter. */
void provsage_string_free(char *s);

#ifdef __cplusplus
}
#endif

#endif /* PROVSAGE_H */
