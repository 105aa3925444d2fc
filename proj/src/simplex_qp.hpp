#pragma once

#include <Eigen/Core>

namespace mbsma {

// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v);

struct SimplexQpResult {
    Eigen::VectorXd w;
    double objective = 0.0;     // w'Qw - 2c'w at the solution (ridge-free)
    double kkt_residual = 0.0;  // stationarity violation over active/inactive sets
    int iterations = 0;
};

// Minimize w'Qw - 2c'w over the simplex. Q must be PSD. Accelerated projected
// gradient with an active-set polish; ties among optima are broken toward the
// minimum-norm solution by a small ridge.
SimplexQpResult solve_simplex_qp(const Eigen::MatrixXd& q, const Eigen::VectorXd& c, double ridge = 1e-12,
                                 double kkt_tol = 1e-9, int max_iter = 200000);

}  // namespace mbsma
