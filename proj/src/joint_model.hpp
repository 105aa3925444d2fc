#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dataset.hpp"

namespace mbsma {

// Shared-random-effect joint model: per marker a (generalized) linear mixed
// sub-model with random intercept (+ optional random slope), and a
// proportional-hazards sub-model with piecewise-constant baseline whose
// log-hazard is shifted by alpha_k * m_k(t) (current-value association).

struct MarkerDesign {
    int marker_id = 0;                    // 1-based index into Dataset::markers
    std::vector<std::string> covariates;  // extra baseline covariates in the fixed design
    bool random_slope = true;             // Z = (1, t) if true, (1) otherwise
};

struct ModelSpec {
    std::vector<MarkerDesign> markers;  // >= 1, unique ids, ascending
    std::vector<std::string> survival_covariates;
    int knots = 5;  // baseline hazard pieces
};

struct ParameterVector {
    std::vector<Eigen::VectorXd> beta;  // per marker: (intercept, time, covariates...)
    std::vector<double> sigma2;         // per marker; meaningful for gaussian markers only
    Eigen::MatrixXd B;                  // random-effect covariance, SPD
    Eigen::VectorXd gamma;              // survival covariate coefficients
    Eigen::VectorXd alpha;              // association, one per marker
    Eigen::VectorXd lambda0;            // positive baseline hazard values, one per piece
};

// Spec bound to a dataset: covariate names resolved to indices, knots placed
// at event-time quantiles, random-effect layout fixed.
struct ResolvedModel {
    ModelSpec spec;
    std::vector<Family> families;                 // per marker, spec order
    std::vector<std::vector<int>> fixed_cov_idx;  // per marker, indices into covariates
    std::vector<int> surv_cov_idx;
    std::vector<double> knot_bounds;  // size J+1, knot_bounds[0] = 0, strictly increasing
    int re_dim = 0;
    std::vector<int> re_offset;  // per marker
    std::vector<int> re_size;    // per marker, 1 or 2

    int n_markers() const { return static_cast<int>(spec.markers.size()); }
    int n_pieces() const { return static_cast<int>(knot_bounds.size()) - 1; }
    std::string model_id(const Dataset& ds) const;
};

ResolvedModel resolve_model(const Dataset& dataset, const ModelSpec& spec);

// Unconstrained parameterization: log for sigma^2 and lambda0, Cholesky with
// log-diagonal for B. Natural-scale view used for reporting.
class ParameterLayout {
public:
    explicit ParameterLayout(const ResolvedModel& model);

    int size() const { return size_; }
    Eigen::VectorXd pack(const ParameterVector& p) const;
    ParameterVector unpack(const Eigen::VectorXd& theta) const;
    std::vector<std::string> names() const { return names_; }

    Eigen::VectorXd natural(const ParameterVector& p) const;
    std::vector<std::string> natural_names() const { return natural_names_; }
    int natural_size() const { return static_cast<int>(natural_names_.size()); }

    std::vector<int> alpha_indices() const;  // positions of alpha in theta

private:
    const ResolvedModel* model_;
    int size_ = 0;
    std::vector<int> beta_off_, sigma_off_;
    int chol_off_ = 0, gamma_off_ = 0, alpha_off_ = 0, lambda_off_ = 0;
    std::vector<std::string> names_, natural_names_;
};

double linear_predictor(const ResolvedModel& model, const ParameterVector& p, int marker_pos,
                        const Eigen::VectorXd& b, const Eigen::VectorXd& x_full, double t);

double marker_loglik(const ResolvedModel& model, const ParameterVector& p, int marker_pos, const Eigen::VectorXd& b,
                     const std::vector<double>& times, const std::vector<double>& values,
                     const Eigen::VectorXd& x_full);

double hazard(const ResolvedModel& model, const ParameterVector& p, const Eigen::VectorXd& b,
              const Eigen::VectorXd& x_full, double t);

double cumulative_hazard(const ResolvedModel& model, const ParameterVector& p, const Eigen::VectorXd& b,
                         const Eigen::VectorXd& x_full, double t);

double cumulative_hazard_between(const ResolvedModel& model, const ParameterVector& p, const Eigen::VectorXd& b,
                                 const Eigen::VectorXd& x_full, double t1, double t2);

// Marginal log-likelihood with adaptive Gauss-Hermite quadrature over the
// random effects (q points per dimension).
double joint_loglik(const Dataset& dataset, const ResolvedModel& model, const ParameterVector& p, int quad_points = 9);

struct FitOptions {
    int quad_points = 0;  // 0: by dimension (<=2: 9, <=4: 5, else 3)
    int knots = 5;
    int max_iter = 400;
    double grad_tol = 5e-3;
    bool fix_alpha_zero = false;
    bool compute_covariance = true;
};

int auto_quad_points(int re_dim);

struct FittedJointModel {
    ResolvedModel model;
    ParameterVector estimate;
    Eigen::VectorXd theta;       // unconstrained estimate
    Eigen::MatrixXd covariance;  // unconstrained scale
    double loglik = 0.0;
    bool converged = false;
    int iterations = 0;
    double grad_norm = 0.0;
    std::vector<double> trace;
    bool covariance_psd = true;
    int quad_points = 9;
    Eigen::VectorXd natural;     // natural-scale estimates
    Eigen::VectorXd natural_se;  // delta-method standard errors
    std::string model_id;
};

FittedJointModel fit(const Dataset& dataset, const ModelSpec& spec, const FitOptions& options = {});

void save_model(const FittedJointModel& fitted, const std::string& path);
FittedJointModel load_model(const std::string& path);

}  // namespace mbsma
