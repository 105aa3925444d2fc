#pragma once

// Internal likelihood machinery shared by fitting and prediction: the
// per-subject integrand over random effects, its derivatives, and the
// adaptive Gauss-Hermite marginalization.

#include <Eigen/Core>

#include "dataset.hpp"
#include "joint_model.hpp"

namespace mbsma {

// Realized designs for one subject under one model.
struct SubjectData {
    struct MarkerObs {
        Eigen::VectorXd times;
        Eigen::VectorXd values;
        Eigen::MatrixXd w;  // fixed design rows (intercept, time, covariates...)
    };
    std::vector<MarkerObs> markers;  // per model marker
    Eigen::VectorXd x_surv;
    Eigen::VectorXd x_full;
    double obs_time = 0.0;
    int event = 0;
    std::string id;
};

SubjectData make_subject_data(const Dataset& dataset, const ResolvedModel& model, int subject_index);
SubjectData make_subject_data(const SubjectHistory& history, const ResolvedModel& model);

// Exponent of the hazard as an affine function of (1, u, b):
//   log lambda(u|b) = log lambda0(u) + a0 + avec.b + (c0 + cvec.b) u
struct HazardCoeffs {
    double a0 = 0.0, c0 = 0.0;
    Eigen::VectorXd avec, cvec;
};

HazardCoeffs hazard_coeffs(const ResolvedModel& model, const ParameterVector& p, const Eigen::VectorXd& x_full);

// log of the unnormalized joint density of (data, b) for one subject:
//   sum_k log f(Y_k | b) [obs with t <= tau]
//   + event * log lambda(tau_event | b)          (if include_event)
//   - Lambda(tau | b)                            (if include_survival)
//   + log phi(b; 0, B)
class SubjectTarget {
public:
    SubjectTarget(const ResolvedModel& model, const ParameterVector& p, const SubjectData& data, double tau,
                  bool include_event, bool include_survival = true);

    int dim() const { return dim_; }
    const std::string& subject_id() const { return id_; }

    double value(const Eigen::VectorXd& b) const;
    double value_grad_hess(const Eigen::VectorXd& b, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const;
    void value_batch(const Eigen::MatrixXd& bpts, Eigen::VectorXd& out) const;

    // Lambda(t2|b) - Lambda(t1|b), last baseline piece extended past the final knot
    double cumulative_hazard_between(const Eigen::VectorXd& b, double t1, double t2) const;

    // Newton mode search; curvature = -hessian at the mode (SPD).
    // Returns false when the integrand is nowhere finite (caller treats the
    // likelihood contribution as -inf); throws on genuine non-convergence.
    bool mode(Eigen::VectorXd& b, Eigen::MatrixXd& curvature, const Eigen::VectorXd* warm = nullptr) const;

    // log integral of exp(target) over b, AGHQ with q points per dimension
    double log_integral(int q, Eigen::VectorXd* mode_out = nullptr, Eigen::MatrixXd* curvature_out = nullptr,
                        const Eigen::VectorXd* warm = nullptr) const;

private:
    struct Piece {
        double lo, hi, lam, log_lam;
    };
    void hazard_integrals(const Eigen::VectorXd& b, double& i0, double& i1, double& i2) const;

    int dim_ = 0;
    std::string id_;
    // quadratic part: c0q_ + rq_.b - 0.5 b'Mq b  (gaussian obs + prior + event term)
    double c0q_ = 0.0;
    Eigen::VectorXd rq_;
    Eigen::MatrixXd mq_;
    // binary observations
    struct BinObs {
        int off;
        int zdim;
        double t, y, o;  // o = fixed-effect part of the linear predictor
    };
    std::vector<BinObs> bin_;
    // survival
    bool survival_ = false;
    HazardCoeffs hz_;
    std::vector<Piece> pieces_;       // clipped to [0, tau]
    std::vector<double> knot_bounds_; // unclipped, for cumulative_hazard_between
    Eigen::VectorXd lambda0_;
};

// Marginal log-likelihood evaluator with per-subject warm-started modes.
// One instance per fit; not thread-safe across concurrent calls.
class JointLoglikEvaluator {
public:
    JointLoglikEvaluator(const Dataset& dataset, const ResolvedModel& model, int quad_points);
    double operator()(const ParameterVector& p);
    int quad_points() const { return q_; }

private:
    const ResolvedModel& model_;
    int q_;
    std::vector<SubjectData> data_;
    std::vector<Eigen::VectorXd> warm_;
    std::vector<bool> has_warm_;
};

}  // namespace mbsma
