#include "model_averaging.hpp"

#include <cmath>

#include "common.hpp"
#include "parallel.hpp"
#include "simplex_qp.hpp"

namespace mbsma {

PredictionMatrix build_prediction_matrix(const std::vector<const FittedJointModel*>& models, const Dataset& ds,
                                         const RiskSetFrame& frame, const MatrixOptions& options) {
    if (models.empty()) throw_config("prediction matrix needs at least one model");

    std::vector<const FittedJointModel*> used;
    for (const FittedJointModel* m : models) {
        if (!m->converged) {
            if (options.on_unconverged == "drop") {
                log_warn("dropping non-converged model " + m->model_id);
                continue;
            }
            if (options.on_unconverged == "refuse")
                throw_numeric("model " + m->model_id + " did not converge");
            log_warn("using non-converged model " + m->model_id);
        }
        used.push_back(m);
    }
    if (used.empty()) throw_numeric("all candidate models dropped (non-convergence)");

    PredictionMatrix out;
    out.s = frame.s;
    out.t = frame.t;
    out.subject_ids = frame.subject_ids;
    for (const auto* m : used) out.model_ids.push_back(m->model_id);
    const int n = frame.n_at_risk();
    const int km = static_cast<int>(used.size());
    out.pi.resize(n, km);
    out.draw_var.resize(n, km);

    parallel_for(n * km, options.jobs, [&](int cell) {
        const int i = cell / km;
        const int k = cell % km;
        const FittedJointModel& model = *used[k];
        SubjectHistory hist = truncate_history(ds, frame.subject_idx[i], frame.s);
        const uint64_t cell_seed = SeedStream(options.seed)
                                       .mix(model.model_id)
                                       .mix(hist.subject_id)
                                       .mix(frame.s)
                                       .mix(frame.t)
                                       .get();
        PredictionQuery q;
        q.s = frame.s;
        q.t = frame.t;
        q.mc_draws = options.mc_draws;
        q.mh_burnin = options.mh_burnin;
        q.seed = cell_seed;
        RiskPrediction rp = predict_risk(model, hist, q);
        out.pi(i, k) = rp.point;
        out.draw_var(i, k) = rp.draw_var;
    });
    return out;
}

double weighted_brier(const PredictionMatrix& matrix, const Eigen::VectorXd& w, const RiskSetFrame& frame) {
    if (matrix.n_rows() != frame.n_at_risk()) throw_data("matrix/frame misaligned");
    if (w.size() != matrix.n_models()) throw_data("weight vector length mismatch");
    const Eigen::VectorXd combined = matrix.pi * w;
    double acc = 0.0;
    for (int i = 0; i < matrix.n_rows(); ++i) {
        const double r = frame.d_star[i] - combined[i];
        acc += frame.psi[i] * r * r;
    }
    return acc / matrix.n_rows();
}

WeightSolution solve_weights(const PredictionMatrix& matrix, const RiskSetFrame& frame) {
    const int n = matrix.n_rows();
    const int km = matrix.n_models();
    if (n == 0) throw_data("empty risk set");
    if (matrix.n_rows() != frame.n_at_risk()) throw_data("matrix/frame misaligned");
    double psi_total = 0.0;
    for (double p : frame.psi) psi_total += p;
    if (psi_total <= 0.0) throw_data("all IPCW weights are zero");

    // BS_w(w) = w'Qw - 2c'w + const with Q the weighted Gram matrix of
    // prediction rows and c the weighted sum of event rows
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(km, km);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(km);
    for (int i = 0; i < n; ++i) {
        if (frame.psi[i] == 0.0) continue;
        const Eigen::VectorXd row = matrix.pi.row(i).transpose();
        q.noalias() += frame.psi[i] * row * row.transpose();
        if (frame.d_star[i] == 1) c.noalias() += frame.psi[i] * row;
    }
    q /= n;
    c /= n;

    SimplexQpResult qp = solve_simplex_qp(q, c);
    WeightSolution out;
    out.w = qp.w;
    out.objective = weighted_brier(matrix, qp.w, frame);
    out.kkt_residual = qp.kkt_residual;
    out.solver_iterations = qp.iterations;
    return out;
}

std::vector<AveragedPrediction> ma_predict(const PredictionMatrix& matrix, const WeightSolution& solution) {
    const Eigen::VectorXd combined = matrix.pi * solution.w;
    std::vector<AveragedPrediction> out(matrix.n_rows());
    for (int i = 0; i < matrix.n_rows(); ++i) {
        out[i].subject_id = matrix.subject_ids[i];
        out[i].point = combined[i];
    }
    return out;
}

std::vector<AveragedPrediction> ma_standard_errors(const PredictionMatrix& matrix, const WeightSolution& solution) {
    std::vector<AveragedPrediction> out = ma_predict(matrix, solution);
    for (int i = 0; i < matrix.n_rows(); ++i) {
        double se_sum = 0.0, var_sum = 0.0;
        for (int k = 0; k < matrix.n_models(); ++k) {
            const double z = matrix.pi(i, k) - out[i].point;
            double v = matrix.draw_var(i, k);
            if (v < 0.0) {
                log_warn("negative draw variance clamped to 0 (subject '" + matrix.subject_ids[i] + "')");
                v = 0.0;
            }
            se_sum += solution.w[k] * std::sqrt(z * z + v);
            var_sum += solution.w[k] * (z * z + v);
        }
        out[i].se_buckland = se_sum;
        out[i].se_burnham = std::sqrt(var_sum);
    }
    return out;
}

}  // namespace mbsma
