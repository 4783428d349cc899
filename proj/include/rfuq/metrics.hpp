#pragma once

#include "rfuq/state_evolution.hpp"

#include <Eigen/Dense>
#include <map>
#include <vector>

namespace rfuq {

/// Joint law of (f*(x), f_hat(x)): the pre-activations are centered Gaussian
/// with covariance sigma_cov, pushed through sigma_{noise_a} and sigma_{noise_b}.
struct JointDensityParams {
    Eigen::Matrix2d sigma_cov;
    double noise_a = 0.0;
    double noise_b = 0.0;
};

struct MetricsRecord {
    double gen_error = 0.0;
    double gen_loss = 0.0;
    std::map<double, double> calibration;
    double ece = 0.0;
    std::map<double, double> cond_variance;
    double hat_tau_sq = 0.0;
    Overlaps overlaps;
};

inline const std::vector<double>& default_levels()
{
    static const std::vector<double> levels{0.6, 0.75, 0.9, 0.95};
    return levels;
}

JointDensityParams joint_density_params(const Overlaps& o);

/// Density of (a, b) = (f*, f_hat) on (0,1)^2.
double joint_density(double a, double b, const JointDensityParams& params);

/// Misclassification error of the oracle sign(theta*^T x) under label noise tau0.
double oracle_error(double rho, double tau0_sq);

double gen_error(const Overlaps& o);

/// Test cross-entropy of the confidence map sigma_{hat_tau^2}(score).
double gen_loss(const Overlaps& o);

/// Delta_l = l - sigma_{label_var}((m/q) sigma^{-1}_{hat_tau^2}(l)).
double calibration(double level, const Overlaps& o);

double ece(const Overlaps& o);

/// Var(f_bo(x) | f_t(x) = level) from the t fixed point and the bo fixed point
/// of the same scenario.
double conditional_variance(double level, const Overlaps& overlaps_t, const Overlaps& overlaps_bo);

/// m -> m/T, q -> q/T^2; everything else unchanged.
Overlaps temperature_scale(const Overlaps& o, double T);

MetricsRecord compute_metrics(const Overlaps& o, const std::vector<double>& levels = default_levels(),
                              const Overlaps* bo = nullptr);

} // namespace rfuq
