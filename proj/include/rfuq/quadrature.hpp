#pragma once

#include <functional>
#include <vector>

namespace rfuq {

enum class QuadKind { gauss_hermite, gauss_legendre };

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
    QuadKind kind = QuadKind::gauss_legendre;
    int order = 0;
};

/// Physicists' Gauss-Hermite rule for weight e^{-x^2}; weights sum to sqrt(pi).
/// Nodes come from the Jacobi-matrix eigenvalues, polished by Newton on the
/// orthonormal recurrence (rescaled, so orders in the thousands are fine).
QuadratureRule gauss_hermite(int order);

/// Gauss-Legendre rule on [-1, 1]; weights sum to 2.
QuadratureRule gauss_legendre(int order);

/// Rule for E_{z~N(0,1)}[f(z)]: nodes sqrt(2)x_i, weights w_i/sqrt(pi).
/// Cached per order; the returned reference stays valid for the process.
const QuadratureRule& normal_rule(int order);

/// Cached Gauss-Legendre rule on [-1, 1].
const QuadratureRule& legendre_rule(int order);

/// E_{z~N(0,1)}[f(z) 1{lo<z<hi}] by adaptive Gauss-Kronrod on the truncated
/// range [-10, 10]. `breaks` are extra split points where f has kinks or sharp
/// transitions.
double normal_expectation(const std::function<double(double)>& f, double lo, double hi,
                          std::vector<double> breaks = {}, double tol = 1e-12);

} // namespace rfuq
