#include "quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include <Eigen/Eigenvalues>

#include "common.hpp"

namespace mbsma {

// Golub-Welsch on the Hermite Jacobi matrix (off-diagonal sqrt(i/2)).
static GaussHermite compute_gh(int q) {
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(q, q);
    for (int i = 1; i < q; ++i) {
        const double b = std::sqrt(i / 2.0);
        jac(i, i - 1) = b;
        jac(i - 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
    GaussHermite gh;
    gh.nodes = es.eigenvalues();
    gh.weights.resize(q);
    const double sqrt_pi = std::sqrt(M_PI);
    for (int i = 0; i < q; ++i) {
        const double v0 = es.eigenvectors()(0, i);
        gh.weights[i] = sqrt_pi * v0 * v0;
    }
    return gh;
}

const GaussHermite& gauss_hermite(int q) {
    if (q < 1 || q > 60) throw_config("quadrature points must be in 1..60");
    static std::map<int, GaussHermite> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(q);
    if (it == cache.end()) it = cache.emplace(q, compute_gh(q)).first;
    return it->second;
}

static TensorRule compute_tensor(int q, int dim) {
    const GaussHermite& gh = gauss_hermite(q);
    long n = 1;
    for (int r = 0; r < dim; ++r) {
        n *= q;
        if (n > 2'000'000) throw_capability("tensor quadrature grid too large (q=" + std::to_string(q) +
                                            ", dim=" + std::to_string(dim) + ")");
    }
    TensorRule rule;
    rule.q = q;
    rule.dim = dim;
    rule.z.resize(n, dim);
    rule.logw.resize(n);
    Eigen::VectorXd lw(q);
    for (int i = 0; i < q; ++i) lw[i] = std::log(gh.weights[i]) + gh.nodes[i] * gh.nodes[i];

    std::vector<int> idx(dim, 0);
    for (long j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int r = 0; r < dim; ++r) {
            rule.z(j, r) = gh.nodes[idx[r]];
            acc += lw[idx[r]];
        }
        rule.logw[j] = acc;
        for (int r = dim - 1; r >= 0; --r) {
            if (++idx[r] < q) break;
            idx[r] = 0;
        }
    }
    return rule;
}

const TensorRule& tensor_rule(int q, int dim) {
    if (dim < 1 || dim > 6) throw_capability("random-effect dimension " + std::to_string(dim) + " exceeds cap 6");
    static std::map<std::pair<int, int>, TensorRule> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(q, dim);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, compute_tensor(q, dim)).first;
    return it->second;
}

}  // namespace mbsma
