#pragma once

#include "rfuq/types.hpp"

#include <string>
#include <vector>

namespace rfuq {

enum class ActivationKind { erf, tanh, relu, sign, linear, tabulated };

struct Activation {
    ActivationKind kind = ActivationKind::erf;
    // tabulated: piecewise-linear through (grid[i], values[i]), constant outside.
    std::vector<double> grid;
    std::vector<double> values;

    double operator()(double z) const;
    std::string name() const;
    static Activation parse(const std::string& name);
};

struct ActivationMoments {
    double kappa0 = 0.0;
    double kappa1 = 0.0;
    double kappa_star = 0.0;
};

ActivationMoments activation_moments(const Activation& act);

enum class SpectrumKind { marchenko_pastur, empirical };

/// Discretized law of the eigenvalues x of F F^T / d (F is p x d), with the
/// atom at zero carried as an ordinary node.
struct SpectralModel {
    double kappa0 = 0.0;
    double kappa1 = 0.0;
    double kappa_star = 0.0;
    double gamma = 1.0;
    SpectrumKind kind = SpectrumKind::marchenko_pastur;
    std::vector<double> nodes;
    std::vector<double> weights;

    /// Eigenvalue kappa1^2 x + kappa_star^2 of the feature covariance Omega.
    double omega(double x) const { return kappa1 * kappa1 * x + kappa_star * kappa_star; }

    static SpectralModel marchenko_pastur(const ActivationMoments& k, double gamma, int order = 200);
    static SpectralModel empirical(const ActivationMoments& k, double gamma, std::vector<double> eigenvalues);
};

template <class H>
double spectral_integrate(const SpectralModel& model, H&& h)
{
    double s = 0.0;
    for (std::size_t i = 0; i < model.nodes.size(); ++i) s += model.weights[i] * h(model.nodes[i]);
    return s;
}

/// Mismatch fraction 1 - gamma E_mu[kappa1^2 x / (kappa1^2 x + kappa_star^2)],
/// i.e. the teacher variance (per unit teacher norm) not linearly reachable
/// from the features. Zero eigenvalues contribute nothing.
double tau_add(const SpectralModel& model);

/// One real per line; blank lines and lines starting with '#' are skipped.
std::vector<double> load_eigenvalues(const std::string& path);

} // namespace rfuq
