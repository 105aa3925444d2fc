#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "ipcw.hpp"
#include "joint_model.hpp"
#include "prediction.hpp"

namespace mbsma {

// pi_hat_ik(s,t) for every at-risk subject (row) and candidate model (column),
// with the per-cell Monte Carlo draw variance.
struct PredictionMatrix {
    double s = 0.0, t = 0.0;
    std::vector<std::string> subject_ids;  // aligned with the frame used to build it
    std::vector<std::string> model_ids;
    Eigen::MatrixXd pi;
    Eigen::MatrixXd draw_var;

    int n_rows() const { return static_cast<int>(pi.rows()); }
    int n_models() const { return static_cast<int>(pi.cols()); }
};

struct MatrixOptions {
    int mc_draws = 500;
    int mh_burnin = 200;
    uint64_t seed = 0;
    int jobs = 1;
    std::string on_unconverged = "refuse";  // refuse | drop
};

// One predict_risk call per (subject, model); cell seeds derive from
// (seed, model id, subject id, s, t) so any evaluation order gives the same
// matrix.
PredictionMatrix build_prediction_matrix(const std::vector<const FittedJointModel*>& models, const Dataset& dataset,
                                         const RiskSetFrame& frame, const MatrixOptions& options);

double weighted_brier(const PredictionMatrix& matrix, const Eigen::VectorXd& w, const RiskSetFrame& frame);

struct WeightSolution {
    Eigen::VectorXd w;
    double objective = 0.0;
    double kkt_residual = 0.0;
    int solver_iterations = 0;
};

WeightSolution solve_weights(const PredictionMatrix& matrix, const RiskSetFrame& frame);

struct AveragedPrediction {
    std::string subject_id;
    double point = 0.0;
    double se_buckland = 0.0;
    double se_burnham = 0.0;
};

std::vector<AveragedPrediction> ma_predict(const PredictionMatrix& matrix, const WeightSolution& solution);
std::vector<AveragedPrediction> ma_standard_errors(const PredictionMatrix& matrix, const WeightSolution& solution);

}  // namespace mbsma
