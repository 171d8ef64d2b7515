#ifndef COLLAPSE_HEAT_C_API_H
#define COLLAPSE_HEAT_C_API_H

/* C interface to the collapse_heat library. Handles are opaque; every call
 * returns a ch_status and leaves a message for ch_last_error() on failure.
 * Strings returned through char** are owned by the caller (ch_string_free);
 * strings returned directly stay valid until the owning handle is freed. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  CH_OK = 0,
  CH_VERDICT_FAIL = 1,
  CH_CONFIG_ERROR = 2,
  CH_NUMERIC_ERROR = 3,
  CH_INVALID_ARGUMENT = 4,
  CH_INTERNAL_ERROR = 5
} ch_status;

typedef struct ch_config ch_config;
typedef struct ch_result ch_result;

typedef void (*ch_progress_fn)(const char* message, void* user);

const char* ch_version(void);
/* Message of the last failed call on this thread ("" if none). */
const char* ch_last_error(void);
/* Process exit code: 0 pass, 1 fail, 2 config or usage error, 3 numeric failure, 4 other. */
int ch_exit_code(ch_status status);
void ch_string_free(char* s);

ch_status ch_config_load(const char* path, const char* const* overrides, size_t n_overrides, ch_config** out);
ch_status ch_config_parse(const char* json_text, const char* const* overrides, size_t n_overrides, ch_config** out);
void ch_config_free(ch_config* config);
/* buf receives 16 hex digits and a terminator (buf_len >= 17). */
ch_status ch_config_hash(const ch_config* config, char* buf, size_t buf_len);
ch_status ch_config_json(const ch_config* config, char** out);

typedef struct {
  const char* out_dir;   /* default "out" */
  const char* cache_dir; /* NULL: COLLAPSE_HEAT_CACHE or <out_dir>/.cache */
  int use_cache;         /* default 1 */
  ch_progress_fn progress;
  void* progress_user;
} ch_run_options;

void ch_run_options_init(ch_run_options* options);

/* Iterated-limit run. On CH_OK or CH_VERDICT_FAIL *out holds the result and
 * the report bundle and manifest are on disk. */
ch_status ch_run(const ch_config* config, const ch_run_options* options, ch_result** out);
/* Sweep over the config file with key=value overrides; array values on scalar
 * keys are sweep axes. Without axes this is ch_run. */
ch_status ch_sweep(const char* config_path, const char* const* overrides, size_t n_overrides,
                   const ch_run_options* options, ch_result** out);

int ch_result_pass(const ch_result* result);
const char* ch_result_blamed(const ch_result* result);
/* Human-readable multi-line summary. */
const char* ch_result_summary(const ch_result* result);
/* report.json text for a run, sweep.json text for a multi-point sweep. */
const char* ch_result_json(const ch_result* result);
void ch_result_free(ch_result* result);

/* modules: comma-separated list or NULL/"" for all. Returns CH_OK when every
 * invariant passes, CH_VERDICT_FAIL otherwise; table and first failing id are
 * returned through the optional out pointers. */
ch_status ch_check_invariants(const ch_config* config, const char* modules, int break_density_normalization,
                              int samples, ch_progress_fn progress, void* progress_user, char** table,
                              char** first_failure);

/* Flat-cone heat kernel at one pair. tail receives the certified bound on the
 * omitted modes; on non-convergence the call returns CH_NUMERIC_ERROR and the
 * error message carries the tail estimate. */
ch_status ch_cone_kernel(double alpha, double r, double theta, double rp, double thetap, double tau, double* value,
                         double* tail);
/* points holds n rows of (r, theta, rp, thetap); writes CSV r,theta,rp,thetap,tau,K.
 * max_terms <= 0 keeps the default mode budget. */
ch_status ch_cone_kernel_csv(double alpha, double tau, int max_terms, const double* points, size_t n, char** csv);

#ifdef __cplusplus
}
#endif

#endif
