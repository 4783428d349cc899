#pragma once

#include "rfuq/gamp.hpp"
#include "rfuq/spectra.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace rfuq {

/// Independent stream for (seed, purpose, index); streams never depend on the
/// order in which other streams were drawn.
std::mt19937_64 keyed_rng(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

struct McScenario {
    int d = 200;
    double n_over_d = 2.0;
    double p_over_n = 1.0;
    double tau0_sq = 0.25;
    double teacher_norm_sq = 1.0;
    Activation activation = Activation::parse("erf");
    int n_val = 1000;
    int n_test = 4000;

    int n() const;
    int p() const;
};

/// Teacher, random features and the three splits. Psi rows are centered,
/// 1/sqrt(p)-scaled features; fstar_* hold the teacher probabilities.
struct Dataset {
    McScenario scenario;
    ActivationMoments moments;
    Eigen::MatrixXd F;
    Eigen::VectorXd theta_star;
    Eigen::MatrixXd psi_train, psi_val, psi_test;
    Eigen::VectorXd y_train, y_val, y_test;
    Eigen::VectorXd fstar_val, fstar_test;
};

Dataset generate_dataset(const McScenario& sc, std::uint64_t seed);

/// Centered, scaled features of the rows of X under the dataset's F.
Eigen::MatrixXd features(const Dataset& data, const Eigen::MatrixXd& X);

struct NewtonOptions {
    int max_steps = 500;
    double grad_tol = 1e-10;
};

struct ErmFit {
    Eigen::VectorXd theta;
    double lambda = 0.0;
    int iterations = 0;
    double grad_norm = 0.0;
    bool converged = false;
};

/// Minimizes sum_mu log(1 + exp(-y_mu theta.psi_mu)) + lambda/2 |theta|^2 by
/// Newton's method with Armijo backtracking. Stops once
/// |grad| < grad_tol * max(1, |theta|).
ErmFit train_erm(const Dataset& data, double lambda, const NewtonOptions& opts = {});

/// psi^T H^{-1} psi for each row of psi_points, with H the loss Hessian at the fit.
Eigen::VectorXd laplace_variances(const Dataset& data, const ErmFit& fit, const Eigen::MatrixXd& psi_points);

/// Eigenbasis of the Gaussian-equivalent feature covariance
/// kappa1^2 F F^T / d + kappa_*^2 I, with whitening scales (0 for null directions).
struct FeatureBasis {
    Eigen::MatrixXd Q;
    Eigen::VectorXd x;
    Eigen::VectorXd omega;
    Eigen::VectorXd inv_sqrt_omega;
};

FeatureBasis feature_basis(const Dataset& data);

struct GampFit {
    EstimatorKind estimator = EstimatorKind::eb;
    double lambda = 0.0;
    Eigen::VectorXd theta;
    GampState state;
    bool rotated = false;
    FeatureBasis basis;

    /// GAMP estimate of the score variance at the given feature rows.
    Eigen::VectorXd score_variances(const Eigen::MatrixXd& psi_points) const;
};

/// Runs GAMP on the training split. erm runs in feature coordinates with a
/// ridge prior; eb and bo run in the whitened eigenbasis, where both priors
/// are diagonal.
GampFit fit_gamp(const Dataset& data, EstimatorKind estimator, double lambda, const GampOptions& opts = {},
                 bool with_trace = false);

struct EmpiricalOverlaps {
    double m = 0.0;
    double q = 0.0;
};

/// m = kappa1 theta*^T F^T theta / (d sqrt p), q = theta^T Omega theta / p.
EmpiricalOverlaps measure_overlaps(const Dataset& data, const Eigen::VectorXd& theta);

struct EmpiricalMetrics {
    double gen_error = 0.0;
    double gen_loss = 0.0;
    double ece = 0.0;
    std::map<double, double> calibration;
    std::vector<std::string> warnings;
};

/// Metrics of the predictor sigma_{var}(score) against teacher probabilities.
/// Errors and losses are expectations over the label given x; calibration
/// averages mean(f_hat) - mean(f*) inside |f_hat - level| <= window; ECE uses
/// equal-mass bins.
EmpiricalMetrics empirical_metrics(const Eigen::VectorXd& score, const Eigen::VectorXd& var,
                                   const Eigen::VectorXd& fstar, const std::vector<double>& levels,
                                   double window = 0.02, int bins = 15);

/// Temperature minimizing the validation cross-entropy of sigmoid(score / T).
double fit_temperature(const Eigen::VectorXd& score, const Eigen::VectorXd& y, double lo = 0.05, double hi = 20.0,
                       double tol = 1e-6);

/// One estimator curve evaluated in a Monte Carlo trial.
struct McCurve {
    EstimatorKind estimator = EstimatorKind::erm;
    double lambda = 1e-2;
    bool temperature = false;
    /// Fixed temperature applied to the scores when > 0.
    double fixed_temperature = 0.0;
};

struct McCurveResult {
    bool ok = false;
    std::string error;
    EmpiricalMetrics metrics;
    EmpiricalOverlaps overlaps;
    double temperature = 1.0;
};

/// One trial: draws a dataset from (seed, trial) and evaluates every curve on it.
std::vector<McCurveResult> run_trial(const McScenario& sc, const std::vector<McCurve>& curves, std::uint64_t seed,
                                     int trial, const std::vector<double>& levels);

} // namespace rfuq
