#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

namespace mbsma {

struct MaximizeOptions {
    int max_iter = 300;
    double grad_tol = 5e-3;       // max-norm of the gradient at convergence
    double f_tol = 1e-10;         // relative objective stall
    int stall_limit = 4;          // consecutive stalled iterations before giving up
};

struct MaximizeResult {
    Eigen::VectorXd x;
    double f = 0.0;
    Eigen::VectorXd grad;
    bool converged = false;
    int iterations = 0;
    std::vector<double> trace;  // accepted objective values, nondecreasing
};

// Dense BFGS maximization with Armijo backtracking. `f` returns the objective,
// `grad` its gradient (may be finite-difference based).
MaximizeResult bfgs_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                             const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
                             Eigen::VectorXd x0, const MaximizeOptions& opts = {});

// Central finite-difference gradient with per-coordinate relative step.
Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                            double rel_step = 1e-5);

// Central finite-difference Hessian (symmetric).
Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                           double rel_step = 5e-4);

}  // namespace mbsma
