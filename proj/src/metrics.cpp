#include "rfuq/metrics.hpp"

#include "rfuq/quadrature.hpp"
#include "rfuq/scalar_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rfuq {

namespace {

constexpr double kInf = 1e300;

// Break points around the score transition: the confidence map varies on the
// scale sqrt(1 + hat_tau^2) in the score, i.e. that divided by sqrt(q) in zeta.
std::vector<double> score_breaks(const Overlaps& o)
{
    std::vector<double> b{0.0};
    if (o.q > 0.0) {
        double s = std::sqrt(1.0 + o.hat_tau_sq) / std::sqrt(o.q);
        for (double k : {1.0, 4.0, 16.0})
            if (k * s < 10.0) {
                b.push_back(k * s);
                b.push_back(-k * s);
            }
    }
    return b;
}

} // namespace

JointDensityParams joint_density_params(const Overlaps& o)
{
    JointDensityParams p;
    p.sigma_cov << o.rho_proj(), o.m, o.m, o.q;
    p.noise_a = o.noise.total();
    p.noise_b = o.hat_tau_sq;
    return p;
}

double joint_density(double a, double b, const JointDensityParams& params)
{
    if (!(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0)) throw std::invalid_argument("joint_density: arguments must lie in (0,1)");
    const Eigen::Matrix2d& S = params.sigma_cov;
    double det = S(0, 0) * S(1, 1) - S(0, 1) * S(1, 0);
    if (!(det > 0.0)) throw std::invalid_argument("joint_density: covariance must be positive definite");
    double x1 = smoothed_sigmoid_inverse(a, params.noise_a);
    double x2 = smoothed_sigmoid_inverse(b, params.noise_b);
    double quad = (S(1, 1) * x1 * x1 - 2.0 * S(0, 1) * x1 * x2 + S(0, 0) * x2 * x2) / det;
    double g = std::exp(-0.5 * quad) / (2.0 * std::numbers::pi * std::sqrt(det));
    double j1 = smoothed_sigmoid_all(x1, params.noise_a).d1;
    double j2 = smoothed_sigmoid_all(x2, params.noise_b).d1;
    return g / (j1 * j2);
}

double oracle_error(double rho, double tau0_sq)
{
    double s = std::sqrt(rho);
    return 2.0 * normal_expectation([&](double z) { return smoothed_sigmoid(-s * z, tau0_sq); }, 0.0, kInf);
}

double gen_error(const Overlaps& o)
{
    double a = o.m_over_sqrt_q();
    double var = std::max(o.label_var(), 0.0);
    if (a == 0.0) return 0.5;
    double s = std::sqrt(var + 1.0) / std::abs(a);
    std::vector<double> br;
    for (double k : {1.0, 4.0}) if (k * s < 10.0) br.push_back(k * s);
    return 2.0 * normal_expectation([&](double z) { return smoothed_sigmoid(-a * z, var); }, 0.0, kInf, br);
}

double gen_loss(const Overlaps& o)
{
    double a = o.m_over_sqrt_q(), sq = std::sqrt(std::max(o.q, 0.0));
    double var = std::max(o.label_var(), 0.0), tau = o.hat_tau_sq;
    auto f = [&](double z) {
        double p = smoothed_sigmoid(a * z, var);
        return p * -log_smoothed_sigmoid(sq * z, tau) + (1.0 - p) * -log_smoothed_sigmoid(-sq * z, tau);
    };
    return normal_expectation(f, -kInf, kInf, score_breaks(o));
}

double calibration(double level, const Overlaps& o)
{
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("calibration: level must lie in (0,1)");
    if (o.q <= 0.0) return level - 0.5;
    double x = smoothed_sigmoid_inverse(level, o.hat_tau_sq);
    return level - smoothed_sigmoid(o.m / o.q * x, std::max(o.label_var(), 0.0));
}

double ece(const Overlaps& o)
{
    // With b = sigma_{hat_tau^2}(xi), sigma^{-1}_{hat_tau^2}(b) = xi, so |Delta_b|
    // is |sigma_{hat_tau^2}(sqrt(q) z) - sigma_{label_var}(a z)| at z = xi/sqrt(q).
    double a = o.m_over_sqrt_q(), sq = std::sqrt(std::max(o.q, 0.0));
    double var = std::max(o.label_var(), 0.0);
    auto f = [&](double z) { return std::abs(smoothed_sigmoid(sq * z, o.hat_tau_sq) - smoothed_sigmoid(a * z, var)); };
    return normal_expectation(f, -kInf, kInf, score_breaks(o));
}

double conditional_variance(double level, const Overlaps& t, const Overlaps& bo)
{
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("conditional_variance: level must lie in (0,1)");
    double xi = smoothed_sigmoid_inverse(level, t.hat_tau_sq);
    double mean = t.q > 0.0 ? t.m / t.q * xi : 0.0;
    double var = bo.q - (t.q > 0.0 ? t.m * t.m / t.q : 0.0);
    if (var < -1e-10) throw std::runtime_error("conditional_variance: inconsistent fixed points (negative variance)");
    var = std::max(var, 0.0);
    double vb = bo.rho_proj() - bo.q + bo.noise.total();
    const QuadratureRule& r = normal_rule(150);
    double s1 = 0.0, s2 = 0.0, sd = std::sqrt(var);
    for (int k = 0; k < r.order; ++k) {
        double f = smoothed_sigmoid(mean + sd * r.nodes[k], vb);
        s1 += r.weights[k] * f;
        s2 += r.weights[k] * f * f;
    }
    return std::max(s2 - s1 * s1, 0.0);
}

Overlaps temperature_scale(const Overlaps& o, double T)
{
    if (!(T > 0.0)) throw std::invalid_argument("temperature_scale: T must be positive");
    Overlaps s = o;
    s.m = o.m / T;
    s.q = o.q / (T * T);
    return s;
}

MetricsRecord compute_metrics(const Overlaps& o, const std::vector<double>& levels, const Overlaps* bo)
{
    MetricsRecord r;
    r.overlaps = o;
    r.hat_tau_sq = o.hat_tau_sq;
    r.gen_error = gen_error(o);
    r.gen_loss = gen_loss(o);
    r.ece = ece(o);
    for (double l : levels) {
        r.calibration[l] = calibration(l, o);
        if (bo) r.cond_variance[l] = conditional_variance(l, o, *bo);
    }
    return r;
}

} // namespace rfuq
