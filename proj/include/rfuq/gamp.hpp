#pragma once

#include "rfuq/types.hpp"

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rfuq {

/// Gaussian prior acting through f_w(b, A): ridge (scalar precision), diagonal
/// (per-coordinate precision, +inf pins a coordinate to 0) or a dense covariance.
class PriorDenoiser {
public:
    enum class Kind { ridge, diagonal, gaussian_cov };

    static PriorDenoiser ridge(double lambda);
    static PriorDenoiser diagonal(Eigen::VectorXd precision);
    /// sigma must be symmetric positive semidefinite (checked).
    static PriorDenoiser gaussian_cov(Eigen::MatrixXd sigma);

    Kind kind() const { return kind_; }
    double lambda() const { return lambda_; }

    /// Posterior mean and marginal variances of N(0, prior) * exp(-A x^2/2 + b x):
    /// the solve (prior^{-1} + diag A)^{-1} b and the diagonal of that inverse.
    std::pair<Eigen::VectorXd, Eigen::VectorXd> denoise(const Eigen::VectorXd& b, const Eigen::VectorXd& A) const;

private:
    Kind kind_ = Kind::ridge;
    double lambda_ = 1.0;
    Eigen::VectorXd precision_;
    Eigen::MatrixXd sigma_;
};

std::pair<Eigen::VectorXd, Eigen::VectorXd> prior_denoise(const PriorDenoiser& d, const Eigen::VectorXd& b,
                                                          const Eigen::VectorXd& A);

struct GampOptions {
    int max_iter = 2000;
    double tol = 1e-7;
    double damping = 0.7;
    double init_sigma = 0.1;
    std::uint64_t seed = 0;
    bool onsager = true;
    double beta = 1.0;
};

struct GampTraceRow {
    int iteration = 0;
    double residual = 0.0;
    double m_emp = std::numeric_limits<double>::quiet_NaN();
    double q_emp = std::numeric_limits<double>::quiet_NaN();
};

struct GampState {
    Eigen::VectorXd theta_hat, c_hat;
    Eigen::VectorXd g, d_g;
    Eigen::VectorXd omega, V;
    int iteration = 0;
    bool converged = false;
    std::vector<GampTraceRow> trace;
};

struct GampDivergence : std::runtime_error {
    GampState state;
    GampDivergence(const std::string& what, GampState s) : std::runtime_error(what), state(std::move(s)) {}
};

/// Maps the current estimate to (m_emp, q_emp) for the trace.
using OverlapProbe = std::function<std::pair<double, double>(const Eigen::VectorXd&)>;

/// GAMP on data matrix V (n x p, rows are feature vectors) with labels y in
/// {-1,+1}. The channel is channel_eval(estimator, ...) row by row; the
/// Onsager term -V_t * g_{t-1} can be switched off for negative controls.
GampState run_gamp(const Eigen::MatrixXd& V, const Eigen::VectorXd& y, EstimatorKind estimator,
                   const PriorDenoiser& prior, const EffectiveNoise& noise, const GampOptions& opts = {},
                   const OverlapProbe& probe = {});

/// Trace as CSV: iteration,residual,m_emp,q_emp.
std::string gamp_trace_csv(const std::vector<GampTraceRow>& trace);

} // namespace rfuq
