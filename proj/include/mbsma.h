/* mbsma - dynamic event-risk prediction from longitudinal markers by
 * minimum-Brier-score model averaging over joint models.
 *
 * C API over the C++ core: opaque handles, status codes, thread-local error
 * messages. Status codes double as the CLI exit codes.
 */
#ifndef MBSMA_H
#define MBSMA_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mbsma_status {
    MBSMA_OK = 0,
    MBSMA_ERR_CONFIG = 2,     /* malformed config / plan / spec */
    MBSMA_ERR_DATA = 3,       /* invalid data or unidentifiable model */
    MBSMA_ERR_CAPABILITY = 4, /* request exceeds a hard limit */
    MBSMA_ERR_NUMERIC = 5     /* numerical failure */
} mbsma_status;

typedef struct mbsma_dataset mbsma_dataset;
typedef struct mbsma_model mbsma_model;

const char* mbsma_version(void);

/* message for the most recent failing call on this thread */
const char* mbsma_last_error(void);

typedef struct mbsma_options {
    int64_t seed;        /* < 0: keep the config's seed */
    int32_t jobs;        /* <= 0: all cores */
    int32_t mc_draws;    /* <= 0: default 500 */
    int32_t knots;       /* <= 0: default 5 */
    int32_t quad_points; /* <= 0: per-dimension default */
    int32_t mh_burnin;   /* <= 0: default 200 */
} mbsma_options;

void mbsma_options_init(mbsma_options* opts);

/* Datasets: directory with longitudinal.csv, survival.csv, markers.json. */
mbsma_status mbsma_dataset_read(const char* dir, mbsma_dataset** out);
void mbsma_dataset_free(mbsma_dataset* ds);
int64_t mbsma_dataset_subjects(const mbsma_dataset* ds);
int32_t mbsma_dataset_markers(const mbsma_dataset* ds);

/* Joint models. spec_json matches model_spec.json (see README). */
mbsma_status mbsma_model_fit(const mbsma_dataset* ds, const char* spec_json, const mbsma_options* opts,
                             mbsma_model** out);
mbsma_status mbsma_model_load(const char* path, mbsma_model** out);
mbsma_status mbsma_model_save(const mbsma_model* model, const char* path);
void mbsma_model_free(mbsma_model* model);
double mbsma_model_loglik(const mbsma_model* model);
int32_t mbsma_model_converged(const mbsma_model* model);
const char* mbsma_model_id(const mbsma_model* model);

typedef struct mbsma_risk {
    double point;    /* event probability in (s, s+t] */
    double mc_se;    /* Monte Carlo standard error of the draw mean */
    double draw_var; /* variance of the draw-level probabilities */
    double mh_accept_rate;
} mbsma_risk;

mbsma_status mbsma_predict_risk(const mbsma_model* model, const mbsma_dataset* ds, const char* subject_id, double s,
                                double t, const mbsma_options* opts, mbsma_risk* out);

/* Minimum-Brier-score weights over the probability simplex.
 * pi: row-major n x k prediction matrix; dstar: observed in-window event
 * indicators; psi: IPCW weights. w_out has length k. */
mbsma_status mbsma_solve_weights(const double* pi, const int32_t* dstar, const double* psi, int64_t n, int32_t k,
                                 double* w_out, double* objective_out, double* kkt_out);

/* Command front doors mirroring the CLI subcommands. out_dir receives the
 * command outputs plus a manifest.json. */
mbsma_status mbsma_cmd_simulate(const char* config_path, const char* out_dir, const mbsma_options* opts);
mbsma_status mbsma_cmd_fit(const char* data_dir, const char* spec_path, const char* out_dir,
                           const mbsma_options* opts);
mbsma_status mbsma_cmd_predict(const char* plan_path, const char* out_dir, const mbsma_options* opts);
mbsma_status mbsma_cmd_weights(const char* plan_path, const char* out_dir, const mbsma_options* opts);
mbsma_status mbsma_cmd_evaluate(const char* plan_path, const char* out_dir, const mbsma_options* opts);

#ifdef __cplusplus
}
#endif

#endif /* MBSMA_H */
