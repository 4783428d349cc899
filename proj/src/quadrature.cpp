#include "rfuq/quadrature.hpp"

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace rfuq {

namespace {

// Orthonormal Hermite recurrence at x. Returns p_n(x)/p_{n-1}(x) and log|p_{n-1}(x)|.
void hermite_eval(int n, double x, double& ratio, double& log_pnm1)
{
    double pm1 = 0.0;
    double p = std::pow(std::numbers::pi, -0.25);
    double log_scale = 0.0;
    for (int k = 0; k < n; ++k) {
        double next = std::sqrt(2.0 / (k + 1)) * x * p - std::sqrt(double(k) / (k + 1)) * pm1;
        pm1 = p;
        p = next;
        if (std::abs(p) > 1e150) {
            p *= 1e-150;
            pm1 *= 1e-150;
            log_scale += 150.0 * std::log(10.0);
        }
    }
    ratio = p / pm1;
    log_pnm1 = std::log(std::abs(pm1)) + log_scale;
}

std::vector<double> jacobi_eigenvalues(const Eigen::VectorXd& diag, const Eigen::VectorXd& sub)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw std::runtime_error("tridiagonal eigensolver failed");
    const auto& ev = es.eigenvalues();
    return {ev.data(), ev.data() + ev.size()};
}

} // namespace

QuadratureRule gauss_hermite(int order)
{
    if (order < 1) throw std::invalid_argument("quadrature order must be positive");
    const int n = order;
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub(std::max(n - 1, 0));
    for (int k = 1; k < n; ++k) sub(k - 1) = std::sqrt(k / 2.0);
    std::vector<double> x = n == 1 ? std::vector<double>{0.0} : jacobi_eigenvalues(diag, sub);

    QuadratureRule r;
    r.kind = QuadKind::gauss_hermite;
    r.order = n;
    r.nodes.resize(n);
    r.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        double xi = x[i];
        double ratio = 0.0, lp = 0.0;
        for (int it = 0; it < 8; ++it) {
            hermite_eval(n, xi, ratio, lp);
            // p_n' = sqrt(2n) p_{n-1}
            double step = ratio / std::sqrt(2.0 * n);
            xi -= step;
            if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(xi))) break;
        }
        hermite_eval(n, xi, ratio, lp);
        r.nodes[i] = xi;
        r.weights[i] = std::exp(-std::log(double(n)) - 2.0 * lp);
    }
    // Exact symmetry removes the last-ulp asymmetry of the eigenvalues.
    for (int i = 0; i < n / 2; ++i) {
        double a = 0.5 * (r.nodes[n - 1 - i] - r.nodes[i]);
        double w = 0.5 * (r.weights[i] + r.weights[n - 1 - i]);
        r.nodes[i] = -a;
        r.nodes[n - 1 - i] = a;
        r.weights[i] = r.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) r.nodes[n / 2] = 0.0;
    return r;
}

QuadratureRule gauss_legendre(int order)
{
    if (order < 1) throw std::invalid_argument("quadrature order must be positive");
    const int n = order;
    QuadratureRule r;
    r.kind = QuadKind::gauss_legendre;
    r.order = n;
    r.nodes.resize(n);
    r.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            double step = p1 / dp;
            x -= step;
            if (std::abs(step) < 1e-16) break;
        }
        r.nodes[n - 1 - i] = x;
        r.weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return r;
}

namespace {

template <class Make>
const QuadratureRule& cached(std::map<int, std::unique_ptr<QuadratureRule>>& cache, std::mutex& mu,
                             int order, Make make)
{
    std::lock_guard lock(mu);
    auto it = cache.find(order);
    if (it == cache.end()) it = cache.emplace(order, std::make_unique<QuadratureRule>(make(order))).first;
    return *it->second;
}

} // namespace

const QuadratureRule& normal_rule(int order)
{
    static std::map<int, std::unique_ptr<QuadratureRule>> cache;
    static std::mutex mu;
    return cached(cache, mu, order, [](int n) {
        QuadratureRule r = gauss_hermite(n);
        for (auto& x : r.nodes) x *= std::numbers::sqrt2;
        for (auto& w : r.weights) w /= std::sqrt(std::numbers::pi);
        return r;
    });
}

const QuadratureRule& legendre_rule(int order)
{
    static std::map<int, std::unique_ptr<QuadratureRule>> cache;
    static std::mutex mu;
    return cached(cache, mu, order, [](int n) { return gauss_legendre(n); });
}

namespace {

using Kronrod = boost::math::quadrature::gauss_kronrod<double, 31>;

// Bisects until the Kronrod/Gauss discrepancy on a panel is within its share
// of the absolute budget.
double adaptive_panel(const std::function<double(double)>& g, double a, double b, double budget, int depth)
{
    double err = 0.0;
    double I = Kronrod::integrate(g, a, b, 0, 0.0, &err);
    if (err <= budget || depth == 0) return I;
    double m = 0.5 * (a + b);
    return adaptive_panel(g, a, m, 0.5 * budget, depth - 1) + adaptive_panel(g, m, b, 0.5 * budget, depth - 1);
}

} // namespace

double normal_expectation(const std::function<double(double)>& f, double lo, double hi,
                          std::vector<double> breaks, double tol)
{
    constexpr double L = 10.0;
    constexpr double abs_floor = 1e-15;
    lo = std::max(lo, -L);
    hi = std::min(hi, L);
    if (!(lo < hi)) return 0.0;
    breaks.push_back(lo);
    breaks.push_back(hi);
    std::sort(breaks.begin(), breaks.end());
    const double c = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    std::function<double(double)> g = [&](double z) { return f(z) * c * std::exp(-0.5 * z * z); };
    std::vector<std::pair<double, double>> panels;
    double coarse = 0.0;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        double a = std::max(breaks[i], lo), b = std::min(breaks[i + 1], hi);
        if (!(a < b)) continue;
        panels.emplace_back(a, b);
        double err = 0.0, l1 = 0.0;
        Kronrod::integrate(g, a, b, 0, 0.0, &err, &l1);
        coarse += l1;
    }
    // Relative to the integral of |f|, with an absolute floor for integrands that vanish up to rounding.
    const double budget = std::max(tol * coarse, abs_floor);
    double total = 0.0;
    for (auto [a, b] : panels) total += adaptive_panel(g, a, b, budget * (b - a) / (hi - lo), 15);
    return total;
}

} // namespace rfuq
