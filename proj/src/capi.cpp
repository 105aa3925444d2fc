#include "mbsma.h"

#include <string>

#include <Eigen/Core>
#include <json.hpp>

#include "commands.hpp"
#include "common.hpp"
#include "dataset.hpp"
#include "joint_model.hpp"
#include "prediction.hpp"
#include "simplex_qp.hpp"

using namespace mbsma;

struct mbsma_dataset {
    Dataset data;
};

struct mbsma_model {
    FittedJointModel model;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
mbsma_status wrap(Fn&& fn) {
    try {
        fn();
        return MBSMA_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return static_cast<mbsma_status>(static_cast<int>(e.cls()));
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MBSMA_ERR_NUMERIC;
    } catch (...) {
        g_last_error = "unknown error";
        return MBSMA_ERR_NUMERIC;
    }
}

CommandOptions to_command_options(const mbsma_options* opts) {
    CommandOptions out;
    if (!opts) return out;
    out.seed = opts->seed;
    out.jobs = opts->jobs;
    out.mc_draws = opts->mc_draws;
    out.knots = opts->knots;
    out.quad_points = opts->quad_points;
    out.mh_burnin = opts->mh_burnin;
    return out;
}

}  // namespace

extern "C" {

const char* mbsma_version(void) { return "0.1.0"; }

const char* mbsma_last_error(void) { return g_last_error.c_str(); }

void mbsma_options_init(mbsma_options* opts) {
    if (!opts) return;
    opts->seed = -1;
    opts->jobs = 0;
    opts->mc_draws = 0;
    opts->knots = 0;
    opts->quad_points = 0;
    opts->mh_burnin = 0;
}

mbsma_status mbsma_dataset_read(const char* dir, mbsma_dataset** out) {
    return wrap([&] {
        if (!dir || !out) throw_config("null argument");
        auto handle = new mbsma_dataset{read_dataset(dir)};
        *out = handle;
    });
}

void mbsma_dataset_free(mbsma_dataset* ds) { delete ds; }

int64_t mbsma_dataset_subjects(const mbsma_dataset* ds) { return ds ? ds->data.n_subjects() : 0; }

int32_t mbsma_dataset_markers(const mbsma_dataset* ds) { return ds ? ds->data.n_markers() : 0; }

mbsma_status mbsma_model_fit(const mbsma_dataset* ds, const char* spec_json, const mbsma_options* opts,
                             mbsma_model** out) {
    return wrap([&] {
        if (!ds || !spec_json || !out) throw_config("null argument");
        nlohmann::json sj;
        try {
            sj = nlohmann::json::parse(spec_json);
        } catch (const std::exception& e) {
            throw_config(std::string("invalid spec JSON: ") + e.what());
        }
        ModelSpec spec;
        for (const auto& mk : sj.at("markers")) {
            MarkerDesign d;
            if (mk.is_number_integer()) {
                d.marker_id = mk.get<int>();
            } else {
                d.marker_id = mk.at("marker_id").get<int>();
                d.covariates = mk.value("covariates", std::vector<std::string>{});
                d.random_slope = mk.value("random_slope", true);
            }
            spec.markers.push_back(d);
        }
        spec.survival_covariates = sj.value("survival_covariates", std::vector<std::string>{});
        spec.knots = sj.value("knots", 5);

        FitOptions fo;
        if (opts && opts->knots > 0) fo.knots = opts->knots;
        if (opts && opts->quad_points > 0) fo.quad_points = opts->quad_points;
        *out = new mbsma_model{fit(ds->data, spec, fo)};
    });
}

mbsma_status mbsma_model_load(const char* path, mbsma_model** out) {
    return wrap([&] {
        if (!path || !out) throw_config("null argument");
        *out = new mbsma_model{load_model(path)};
    });
}

mbsma_status mbsma_model_save(const mbsma_model* model, const char* path) {
    return wrap([&] {
        if (!model || !path) throw_config("null argument");
        save_model(model->model, path);
    });
}

void mbsma_model_free(mbsma_model* model) { delete model; }

double mbsma_model_loglik(const mbsma_model* model) { return model ? model->model.loglik : 0.0; }

int32_t mbsma_model_converged(const mbsma_model* model) { return model && model->model.converged ? 1 : 0; }

const char* mbsma_model_id(const mbsma_model* model) { return model ? model->model.model_id.c_str() : ""; }

mbsma_status mbsma_predict_risk(const mbsma_model* model, const mbsma_dataset* ds, const char* subject_id, double s,
                                double t, const mbsma_options* opts, mbsma_risk* out) {
    return wrap([&] {
        if (!model || !ds || !subject_id || !out) throw_config("null argument");
        SubjectHistory hist = truncate_history(ds->data, subject_id, s);
        PredictionQuery q;
        q.s = s;
        q.t = t;
        if (opts) {
            if (opts->mc_draws > 0) q.mc_draws = opts->mc_draws;
            if (opts->mh_burnin > 0) q.mh_burnin = opts->mh_burnin;
            if (opts->seed >= 0) q.seed = static_cast<uint64_t>(opts->seed);
        }
        RiskPrediction rp = predict_risk(model->model, hist, q);
        out->point = rp.point;
        out->mc_se = rp.mc_se;
        out->draw_var = rp.draw_var;
        out->mh_accept_rate = rp.mh_accept_rate;
    });
}

mbsma_status mbsma_solve_weights(const double* pi, const int32_t* dstar, const double* psi, int64_t n, int32_t k,
                                 double* w_out, double* objective_out, double* kkt_out) {
    return wrap([&] {
        if (!pi || !dstar || !psi || !w_out) throw_config("null argument");
        if (n < 1 || k < 1) throw_data("empty weight problem");
        Eigen::MatrixXd q = Eigen::MatrixXd::Zero(k, k);
        Eigen::VectorXd c = Eigen::VectorXd::Zero(k);
        for (int64_t i = 0; i < n; ++i) {
            if (psi[i] == 0.0) continue;
            Eigen::Map<const Eigen::VectorXd> row(pi + i * k, k);
            q.noalias() += psi[i] * row * row.transpose();
            if (dstar[i] == 1) c.noalias() += psi[i] * row;
        }
        q /= static_cast<double>(n);
        c /= static_cast<double>(n);
        SimplexQpResult res = solve_simplex_qp(q, c);
        for (int32_t j = 0; j < k; ++j) w_out[j] = res.w[j];

        double obj = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            double combined = 0.0;
            for (int32_t j = 0; j < k; ++j) combined += pi[i * k + j] * res.w[j];
            const double r = dstar[i] - combined;
            obj += psi[i] * r * r;
        }
        if (objective_out) *objective_out = obj / static_cast<double>(n);
        if (kkt_out) *kkt_out = res.kkt_residual;
    });
}

mbsma_status mbsma_cmd_simulate(const char* config_path, const char* out_dir, const mbsma_options* opts) {
    return wrap([&] {
        if (!config_path || !out_dir) throw_config("null argument");
        cmd_simulate(config_path, out_dir, to_command_options(opts));
    });
}

mbsma_status mbsma_cmd_fit(const char* data_dir, const char* spec_path, const char* out_dir,
                           const mbsma_options* opts) {
    return wrap([&] {
        if (!data_dir || !spec_path || !out_dir) throw_config("null argument");
        cmd_fit(data_dir, spec_path, out_dir, to_command_options(opts));
    });
}

mbsma_status mbsma_cmd_predict(const char* plan_path, const char* out_dir, const mbsma_options* opts) {
    return wrap([&] {
        if (!plan_path || !out_dir) throw_config("null argument");
        cmd_predict(plan_path, out_dir, to_command_options(opts));
    });
}

mbsma_status mbsma_cmd_weights(const char* plan_path, const char* out_dir, const mbsma_options* opts) {
    return wrap([&] {
        if (!plan_path || !out_dir) throw_config("null argument");
        cmd_weights(plan_path, out_dir, to_command_options(opts));
    });
}

mbsma_status mbsma_cmd_evaluate(const char* plan_path, const char* out_dir, const mbsma_options* opts) {
    return wrap([&] {
        if (!plan_path || !out_dir) throw_config("null argument");
        cmd_evaluate(plan_path, out_dir, to_command_options(opts));
    });
}

}  // extern "C"
