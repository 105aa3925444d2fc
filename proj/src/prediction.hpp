#pragma once

#include <vector>

#include <Eigen/Core>

#include "dataset.hpp"
#include "joint_model.hpp"

namespace mbsma {

struct PredictionQuery {
    double s = 0.0;
    double t = 0.5;
    int mc_draws = 500;
    int mh_burnin = 200;
    uint64_t seed = 0;
};

struct RiskPrediction {
    std::string subject_id;
    double point = 0.0;      // pi_hat in [0,1]
    double mc_se = 0.0;      // sd of draw-level probabilities / sqrt(M)
    double draw_mean = 0.0;  // mean of draw-level probabilities (== point)
    double draw_var = 0.0;   // sample variance of draw-level probabilities
    double mh_accept_rate = 0.0;
    bool used_diagonal_covariance = false;
};

struct ParameterDraws {
    std::vector<ParameterVector> draws;
    bool diagonal_fallback = false;
};

// m draws from Normal(theta_hat, covariance) on the unconstrained scale,
// mapped back to the natural parameterization.
ParameterDraws draw_parameters(const FittedJointModel& fitted, int m, uint64_t seed);

struct MhSample {
    Eigen::VectorXd b;
    double accept_rate = 0.0;
};

// One draw from f(b | T > s, Y(s), X(s)) by an independence Metropolis-Hastings
// chain with a multivariate t(4) proposal centered at the posterior mode.
MhSample sample_random_effects(const ResolvedModel& model, const ParameterVector& p, const SubjectHistory& history,
                               int n_mh, uint64_t seed);

RiskPrediction predict_risk(const FittedJointModel& fitted, const SubjectHistory& history,
                            const PredictionQuery& query);

// Shared parameter and random-effect draws across a grid of windows, so the
// predicted risk is nondecreasing in t by construction.
std::vector<RiskPrediction> predict_risk_grid(const FittedJointModel& fitted, const SubjectHistory& history,
                                              double s, const std::vector<double>& windows, int mc_draws,
                                              int mh_burnin, uint64_t seed);

double conditional_survival_ratio(const ResolvedModel& model, const ParameterVector& p, const Eigen::VectorXd& b,
                                  const Eigen::VectorXd& x_full, double s, double t);

}  // namespace mbsma
