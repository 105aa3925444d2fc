#pragma once

#include <Eigen/Core>

namespace mbsma {

// Gauss-Hermite rule for weight exp(-x^2): integral f(x) exp(-x^2) dx ~ sum w_i f(x_i)
struct GaussHermite {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
};

const GaussHermite& gauss_hermite(int q);

// Tensor grid over d dimensions for the adaptive rule: row j holds z_j, and
// logw[j] = sum_r (log w_{j_r} + z_{j_r}^2), the weight after absorbing the
// exp(|z|^2) factor of the adaptive transformation.
struct TensorRule {
    Eigen::MatrixXd z;      // n x d
    Eigen::VectorXd logw;   // n
    int q = 0;
    int dim = 0;
};

const TensorRule& tensor_rule(int q, int dim);

}  // namespace mbsma
