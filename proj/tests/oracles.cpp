#include "oracles.hpp"

namespace mbsma::test {

namespace {

// objective at integer grid point (i1..ik)/steps
double obj_at(const Eigen::MatrixXd& q, const Eigen::VectorXd& c, double constant, const Eigen::VectorXd& w) {
    return w.dot(q * w) - 2.0 * c.dot(w) + constant;
}

// minimum over k in 0..rem of the objective along w(k) = base + k/steps * dir,
// a quadratic in k: check the vertex neighbors and the endpoints
double line_min(const Eigen::MatrixXd& q, const Eigen::VectorXd& c, double constant, const Eigen::VectorXd& base,
                const Eigen::VectorXd& dir, int rem, int steps) {
    const double h = 1.0 / steps;
    // f(k) = obj(base + k h dir) = a2 k^2 + a1 k + a0
    const double a2 = h * h * dir.dot(q * dir);
    const double a1 = 2.0 * h * dir.dot(q * base - c);
    double best = std::numeric_limits<double>::infinity();
    auto eval_k = [&](long k) {
        if (k < 0 || k > rem) return;
        const Eigen::VectorXd w = base + (k * h) * dir;
        best = std::min(best, obj_at(q, c, constant, w));
    };
    eval_k(0);
    eval_k(rem);
    if (a2 > 0.0) {
        const double vertex = -a1 / (2.0 * a2);
        eval_k(static_cast<long>(std::floor(vertex)));
        eval_k(static_cast<long>(std::ceil(vertex)));
    }
    return best;
}

}  // namespace

double simplex_grid_min(const Eigen::MatrixXd& q, const Eigen::VectorXd& c, double constant, int steps) {
    const int k = static_cast<int>(c.size());
    const double h = 1.0 / steps;
    double best = std::numeric_limits<double>::infinity();

    if (k == 1) {
        return obj_at(q, c, constant, Eigen::VectorXd::Ones(1));
    }
    if (k == 2) {
        Eigen::VectorXd base(2), dir(2);
        base << 0.0, 1.0;
        dir << 1.0, -1.0;
        return line_min(q, c, constant, base, dir, steps, steps);
    }
    if (k == 3) {
        Eigen::VectorXd base(3), dir(3);
        dir << 0.0, 1.0, -1.0;
        for (int i = 0; i <= steps; ++i) {
            base << i * h, 0.0, 1.0 - i * h;
            best = std::min(best, line_min(q, c, constant, base, dir, steps - i, steps));
        }
        return best;
    }
    if (k == 4) {
        Eigen::VectorXd base(4), dir(4);
        dir << 0.0, 0.0, 1.0, -1.0;
        for (int i = 0; i <= steps; ++i)
            for (int j = 0; j + i <= steps; ++j) {
                base << i * h, j * h, 0.0, 1.0 - i * h - j * h;
                best = std::min(best, line_min(q, c, constant, base, dir, steps - i - j, steps));
            }
        return best;
    }
    throw std::runtime_error("simplex_grid_min supports up to 4 models");
}

}  // namespace mbsma::test
