#pragma once

#include "rfuq/types.hpp"

namespace rfuq {

double sigmoid(double x);

/// log(sigmoid(x)) without overflow or cancellation.
double log_sigmoid(double x);

/// Value and first two x-derivatives of the Gaussian-smoothed sigmoid
/// sigma_v(x) = E_{z~N(x,v)}[sigmoid(z)].
struct SmoothedSigmoid {
    double value;
    double d1;
    double d2;
};

/// Gauss-Hermite (order 120) for v <= 2; composite Gauss-Legendre with panels
/// refined around the sigmoid transition for larger v, where the Hermite rule
/// no longer resolves sigmoid(x + sqrt(v) z). Always evaluated on the side
/// x <= 0 so small values keep relative accuracy.
SmoothedSigmoid smoothed_sigmoid_all(double x, double v);

double smoothed_sigmoid(double x, double v);

/// log sigma_v(x), accurate for large |x|.
double log_smoothed_sigmoid(double x, double v);

/// Reference evaluation with a plain Gauss-Hermite rule of the given order.
double smoothed_sigmoid_reference(double x, double v, int order);

double smoothed_sigmoid_inverse(double p, double v);

/// argmin_z V log(1 + e^{-yz}) + (z - omega)^2 / 2.
double prox_logistic(int y, double omega, double V);

struct ChannelEval {
    double value = 0.0;
    double d_omega = 0.0;
    double log_partition = 0.0;
};

/// Output channel g_t(y, omega, V) and its omega-derivative. erm and lap share
/// the proximal channel (prox - omega)/V; eb uses the likelihood sigmoid(beta y z);
/// bo the teacher channel smoothed by the effective noise.
ChannelEval channel_eval(EstimatorKind estimator, int y, double omega, double V,
                         const EffectiveNoise& noise, double beta = 1.0);

/// Z0(y, omega, v) = sigma_{v + tau0^2 + tau_add^2}(y omega).
double partition_Z0(int y, double omega, double v, const EffectiveNoise& noise);

} // namespace rfuq
