#include "rfuq/scalar_kernel.hpp"

#include "rfuq/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace rfuq {

double sigmoid(double x)
{
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double log_sigmoid(double x)
{
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

namespace {

constexpr int kHermiteOrder = 120;
constexpr double kHermiteMaxVar = 2.0;
constexpr int kPanelOrder = 12;
constexpr double kRange = 10.0;      // |z| cut for the standard-normal variable
constexpr double kTransition = 40.0; // |t| beyond which sigmoid'(t) < 5e-18

struct Acc {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    void add(double w, double t)
    {
        double s = sigmoid(t);
        double sm = sigmoid(-t);
        double d = s * sm;
        s0 += w * s;
        s1 += w * d;
        s2 += w * d * (sm - s);
    }
};

void add_panels(Acc& acc, double x, double sv, double a, double b, double width)
{
    if (!(a < b)) return;
    const QuadratureRule& gl = legendre_rule(kPanelOrder);
    const double c = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    int k = std::max(1, int(std::ceil((b - a) / width)));
    double h = (b - a) / k;
    for (int j = 0; j < k; ++j) {
        double mid = a + (j + 0.5) * h;
        for (int i = 0; i < kPanelOrder; ++i) {
            double z = mid + 0.5 * h * gl.nodes[i];
            double w = 0.5 * h * gl.weights[i] * c * std::exp(-0.5 * z * z);
            acc.add(w, x + sv * z);
        }
    }
}

// x <= 0 branch.
SmoothedSigmoid smoothed_negative(double x, double v)
{
    Acc acc;
    double sv = std::sqrt(v);
    if (v <= kHermiteMaxVar) {
        const QuadratureRule& r = normal_rule(kHermiteOrder);
        for (int i = 0; i < r.order; ++i) acc.add(r.weights[i], x + sv * r.nodes[i]);
    } else {
        // In z-space the sigmoid transition sits at z0 = -x/sqrt(v) with width
        // ~1/sqrt(v); panels there are narrower than the distance pi/sqrt(v) to
        // the sigmoid poles.
        double z0 = -x / sv;
        double lo = std::clamp(z0 - kTransition / sv, -kRange, kRange);
        double hi = std::clamp(z0 + kTransition / sv, -kRange, kRange);
        double fine = std::min(1.0, std::numbers::pi / sv);
        add_panels(acc, x, sv, -kRange, lo, 1.0);
        add_panels(acc, x, sv, lo, hi, fine);
        add_panels(acc, x, sv, hi, kRange, 1.0);
    }
    return {acc.s0, acc.s1, acc.s2};
}

} // namespace

SmoothedSigmoid smoothed_sigmoid_all(double x, double v)
{
    if (!(v >= 0.0)) throw std::invalid_argument("smoothed_sigmoid: variance must be >= 0");
    if (v == 0.0) {
        double s = sigmoid(x), sm = sigmoid(-x);
        return {s, s * sm, s * sm * (sm - s)};
    }
    if (x <= 0.0) return smoothed_negative(x, v);
    SmoothedSigmoid r = smoothed_negative(-x, v);
    return {1.0 - r.value, r.d1, -r.d2};
}

double smoothed_sigmoid(double x, double v) { return smoothed_sigmoid_all(x, v).value; }

double log_smoothed_sigmoid(double x, double v)
{
    if (v == 0.0) return log_sigmoid(x);
    if (x <= 0.0) return std::log(std::max(smoothed_sigmoid(x, v), 1e-300));
    return std::log1p(-smoothed_sigmoid(-x, v));
}

double smoothed_sigmoid_reference(double x, double v, int order)
{
    if (!(v >= 0.0)) throw std::invalid_argument("smoothed_sigmoid: variance must be >= 0");
    const QuadratureRule& r = normal_rule(order);
    double sv = std::sqrt(v), s = 0.0;
    for (int i = 0; i < r.order; ++i) s += r.weights[i] * sigmoid(x + sv * r.nodes[i]);
    return s;
}

double smoothed_sigmoid_inverse(double p, double v)
{
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("smoothed_sigmoid_inverse: p must lie in (0,1)");
    if (!(v >= 0.0)) throw std::invalid_argument("smoothed_sigmoid_inverse: variance must be >= 0");
    if (p == 0.5) return 0.0;
    if (v == 0.0) return std::log(p) - std::log1p(-p);
    // Solve on the side where the target is below 1/2 so tails stay accurate.
    bool flip = p > 0.5;
    double target = flip ? 1.0 - p : p;
    double lo = -50.0, hi = 0.0;
    while (smoothed_sigmoid(lo, v) > target) {
        hi = lo;
        lo *= 2.0;
        if (lo < -1e12) throw std::runtime_error("smoothed_sigmoid_inverse: bracket expansion failed");
    }
    double x = 0.5 * (lo + hi);
    double f_prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 300; ++it) {
        SmoothedSigmoid s = smoothed_sigmoid_all(x, v);
        double f = s.value - target;
        if (f == 0.0) break;
        if (f > 0.0) hi = x; else lo = x;
        double xn = s.d1 > 0.0 ? x - f / s.d1 : 0.5 * (lo + hi);
        if (!(xn > lo && xn < hi) || std::abs(f) > 0.5 * std::abs(f_prev)) xn = 0.5 * (lo + hi);
        f_prev = f;
        if (std::abs(xn - x) < 1e-14 * std::max(1.0, std::abs(x)) || hi - lo < 1e-14) {
            x = xn;
            break;
        }
        x = xn;
    }
    return flip ? -x : x;
}

double prox_logistic(int y, double omega, double V)
{
    if (!(V > 0.0)) throw std::invalid_argument("prox_logistic: V must be positive");
    if (y != 1 && y != -1) throw std::invalid_argument("prox_logistic: label must be +-1");
    // Work with u = y z: root of f(u) = u - y omega - V sigmoid(-u) in [y omega, y omega + V].
    // Safeguarded Newton: bisect whenever a step leaves the bracket or fails to halve |f|.
    double a = y * omega;
    double lo = a, hi = a + V;
    double u = std::clamp(a + V * sigmoid(-a), lo, hi);
    double f_prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 300; ++it) {
        double s = sigmoid(-u);
        double f = u - a - V * s;
        if (f == 0.0) break;
        if (f > 0.0) hi = u; else lo = u;
        double df = 1.0 + V * s * sigmoid(u);
        double un = u - f / df;
        if (!(un > lo && un < hi) || std::abs(f) > 0.5 * std::abs(f_prev)) un = 0.5 * (lo + hi);
        f_prev = f;
        if (std::abs(un - u) <= 1e-16 * std::max(1.0, std::abs(u)) || hi - lo <= 1e-16 * std::max(1.0, std::abs(u))) {
            u = un;
            break;
        }
        u = un;
    }
    return y * u;
}

ChannelEval channel_eval(EstimatorKind estimator, int y, double omega, double V,
                         const EffectiveNoise& noise, double beta)
{
    if (!(V > 0.0)) throw std::invalid_argument("channel_eval: V must be positive");
    if (y != 1 && y != -1) throw std::invalid_argument("channel_eval: label must be +-1");
    ChannelEval out;
    switch (estimator) {
    case EstimatorKind::erm:
    case EstimatorKind::lap: {
        double z = prox_logistic(y, omega, V);
        double d = sigmoid(z) * sigmoid(-z);
        out.value = (z - omega) / V;
        out.d_omega = -d / (1.0 + V * d);
        out.log_partition = log_sigmoid(y * z) - (z - omega) * (z - omega) / (2.0 * V);
        return out;
    }
    case EstimatorKind::eb:
    case EstimatorKind::bo: {
        double scale = estimator == EstimatorKind::eb ? beta : 1.0;
        double var = estimator == EstimatorKind::eb ? beta * beta * V : V + noise.total();
        SmoothedSigmoid s = smoothed_sigmoid_all(scale * y * omega, var);
        double val = std::max(s.value, std::numeric_limits<double>::min());
        double r1 = s.d1 / val, r2 = s.d2 / val;
        out.value = scale * y * r1;
        out.d_omega = scale * scale * (r2 - r1 * r1);
        out.log_partition = std::log(val);
        return out;
    }
    }
    throw std::invalid_argument("channel_eval: unknown estimator");
}

double partition_Z0(int y, double omega, double v, const EffectiveNoise& noise)
{
    if (!(v >= 0.0)) throw std::invalid_argument("partition_Z0: variance must be >= 0");
    return smoothed_sigmoid(y * omega, v + noise.total());
}

} // namespace rfuq
