#pragma once

#include "rfuq/spectra.hpp"
#include "rfuq/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rfuq {

struct SolverOptions {
    double damping = 0.5;
    double tol = 1e-9;
    int max_iter = 10000;
    int xi_order = 150;
    bool auto_damping = true;
};

struct ScenarioConfig {
    double alpha = 1.0; // n / p
    double gamma = 1.0; // p / d
    double tau0_sq = 0.25;
    double lambda = 1e-2;
    double teacher_norm_sq = 1.0;
    double beta = 1.0;
    Activation activation;
    EstimatorKind estimator = EstimatorKind::erm;
    SolverOptions solver;
};

enum class FixedPointStatus { converged, max_iter, interpolating, failed };

std::string to_string(FixedPointStatus s);

/// Sufficient statistics of a fixed point. m_hat is in the convention where it
/// carries alpha*sqrt(gamma) (so m = sqrt(gamma) dPsi_w/dm_hat). rho is the
/// teacher self-overlap ||theta*||^2/d; the part reachable from the features is
/// rho_proj() = rho - noise.tau_add_sq.
struct Overlaps {
    double m = 0.1, q = 0.5, v = 1.0;
    double m_hat = 0.0, q_hat = 0.0, v_hat = 0.0;
    double rho = 1.0;
    EffectiveNoise noise;
    double hat_tau_sq = 0.0;
    EstimatorKind estimator = EstimatorKind::erm;
    int iterations = 0;
    double residual = 0.0;
    FixedPointStatus status = FixedPointStatus::converged;

    double rho_proj() const { return rho - noise.tau_add_sq; }
    /// m / sqrt(q); stays finite in the interpolating regime.
    double m_over_sqrt_q() const { return q > 0.0 ? m / std::sqrt(q) : 0.0; }
    /// Conditional variance of the reachable teacher field given the student score.
    double v_star() const { return rho_proj() - (q > 0.0 ? m * m / q : 0.0); }
    /// Variance of Z0's argument around (m/q) xi: v_star + tau0^2 + tau_add^2.
    double label_var() const { return v_star() + noise.total(); }
};

struct SolverError : std::runtime_error {
    Overlaps state;
    SolverError(const std::string& what, Overlaps s) : std::runtime_error(what), state(s) {}
};

EffectiveNoise effective_noise(const ScenarioConfig& cfg, const SpectralModel& spec);

struct PsiWGrad {
    double d_mhat = 0.0, d_qhat = 0.0, d_vhat = 0.0;
};

/// Prior covariance eigenvalue c(x) = 1 / pi_hat(x): 1/lambda for erm/lap/eb,
/// gamma rho kappa1^2 x / omega(x)^2 for bo (0 on the atom at x = 0).
double prior_covariance(EstimatorKind estimator, const SpectralModel& spec, double lambda,
                        double teacher_norm_sq, double x);

double psi_w(double m_hat, double q_hat, double v_hat, EstimatorKind estimator, const SpectralModel& spec,
             double lambda, double teacher_norm_sq = 1.0);

PsiWGrad psi_w_grad(double m_hat, double q_hat, double v_hat, EstimatorKind estimator,
                    const SpectralModel& spec, double lambda, double teacher_norm_sq = 1.0);

/// Channel half-sweep: (m_hat, q_hat, v_hat) from (m, q, v).
Overlaps update_hats(const Overlaps& current, const ScenarioConfig& cfg);

/// Prior half-sweep: (m, q, v) from the hats, undamped.
Overlaps update_overlaps(const Overlaps& current, const ScenarioConfig& cfg, const SpectralModel& spec);

/// One damped sweep: hats from (m, q, v), then (m, q, v) from the hats.
Overlaps se_step(const Overlaps& current, const ScenarioConfig& cfg, const SpectralModel& spec);

/// Iterate to a fixed point. `init` warm-starts (its m, q, v are reused).
/// Throws SolverError on NaN or unphysical states; non-convergence and the
/// interpolating regime (q > 1e8) are reported through Overlaps::status.
Overlaps solve_fixed_point(const ScenarioConfig& cfg, const SpectralModel& spec, const Overlaps* init = nullptr);

/// erm/lap at small lambda: geometric schedule 1e-1, 1e-2, ... down to cfg.lambda
/// with warm starts.
Overlaps solve_with_homotopy(const ScenarioConfig& cfg, const SpectralModel& spec, const Overlaps* init = nullptr);

double hat_tau(EstimatorKind estimator, const Overlaps& overlaps, const SpectralModel& spec, double lambda);

/// E_xi sum_y Z0 log Z_g for the Bayesian channels (eb, bo).
double psi_y(const ScenarioConfig& cfg, double m, double q, double v, const EffectiveNoise& noise);

/// Free entropy -(1/sqrt g) m m_hat + (q v_hat - q_hat v + v_hat v)/2 + Psi_w + alpha Psi_y
/// at arbitrary arguments; the free energy is its negative.
double free_entropy(const ScenarioConfig& cfg, const SpectralModel& spec, const Overlaps& o);

double free_energy(const ScenarioConfig& cfg, const Overlaps& overlaps, const SpectralModel& spec);

/// Log-evidence per feature, -free_energy, for eb (and bo) fixed points.
double log_evidence(const ScenarioConfig& cfg, const Overlaps& overlaps, const SpectralModel& spec);

} // namespace rfuq
