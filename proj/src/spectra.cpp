#include "rfuq/spectra.hpp"

#include "rfuq/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace rfuq {

double Activation::operator()(double z) const
{
    switch (kind) {
    case ActivationKind::erf: return std::erf(z);
    case ActivationKind::tanh: return std::tanh(z);
    case ActivationKind::relu: return z > 0.0 ? z : 0.0;
    case ActivationKind::sign: return z > 0.0 ? 1.0 : (z < 0.0 ? -1.0 : 0.0);
    case ActivationKind::linear: return z;
    case ActivationKind::tabulated: {
        if (grid.empty()) throw std::invalid_argument("tabulated activation without data");
        if (z <= grid.front()) return values.front();
        if (z >= grid.back()) return values.back();
        auto it = std::upper_bound(grid.begin(), grid.end(), z);
        std::size_t j = std::size_t(it - grid.begin());
        double t = (z - grid[j - 1]) / (grid[j] - grid[j - 1]);
        return (1.0 - t) * values[j - 1] + t * values[j];
    }
    }
    return 0.0;
}

std::string Activation::name() const
{
    switch (kind) {
    case ActivationKind::erf: return "erf";
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::relu: return "relu";
    case ActivationKind::sign: return "sign";
    case ActivationKind::linear: return "linear";
    case ActivationKind::tabulated: return "tabulated";
    }
    return "?";
}

Activation Activation::parse(const std::string& name)
{
    Activation a;
    if (name == "erf") a.kind = ActivationKind::erf;
    else if (name == "tanh") a.kind = ActivationKind::tanh;
    else if (name == "relu") a.kind = ActivationKind::relu;
    else if (name == "sign") a.kind = ActivationKind::sign;
    else if (name == "linear") a.kind = ActivationKind::linear;
    else throw std::invalid_argument("unknown activation '" + name + "'");
    return a;
}

ActivationMoments activation_moments(const Activation& act)
{
    std::vector<double> breaks{0.0};
    if (act.kind == ActivationKind::tabulated) {
        if (act.grid.size() < 2 || act.grid.size() != act.values.size() ||
            !std::is_sorted(act.grid.begin(), act.grid.end()))
            throw std::invalid_argument("tabulated activation needs a sorted grid with matching values");
        breaks = act.grid;
    }
    double e0 = normal_expectation([&](double z) { return act(z); }, -1e300, 1e300, breaks);
    double e1 = normal_expectation([&](double z) { return z * act(z); }, -1e300, 1e300, breaks);
    double e2 = normal_expectation([&](double z) { double f = act(z); return f * f; }, -1e300, 1e300, breaks);
    if (!std::isfinite(e2)) throw std::invalid_argument("activation has no finite second moment");
    ActivationMoments m;
    m.kappa0 = e0;
    m.kappa1 = e1;
    double ks = e2 - e0 * e0 - e1 * e1;
    if (ks < -1e-10) throw std::runtime_error("activation moments: negative kappa_star^2");
    m.kappa_star = std::sqrt(std::max(ks, 0.0));
    return m;
}

SpectralModel SpectralModel::marchenko_pastur(const ActivationMoments& k, double gamma, int order)
{
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
    SpectralModel m;
    m.kappa0 = k.kappa0;
    m.kappa1 = k.kappa1;
    m.kappa_star = k.kappa_star;
    m.gamma = gamma;
    m.kind = SpectrumKind::marchenko_pastur;
    // x = c + r cos(theta) turns the square-root edges into a smooth integrand.
    const double c = 1.0 + gamma, r = 2.0 * std::sqrt(gamma);
    const QuadratureRule& gl = legendre_rule(order);
    for (int i = 0; i < order; ++i) {
        double th = 0.5 * std::numbers::pi * (1.0 + gl.nodes[i]);
        double x = c + r * std::cos(th);
        double s = r * std::sin(th);
        double w = 0.5 * std::numbers::pi * gl.weights[i] * s * s / (2.0 * std::numbers::pi * gamma * x);
        m.nodes.push_back(x);
        m.weights.push_back(w);
    }
    if (gamma > 1.0) {
        m.nodes.push_back(0.0);
        m.weights.push_back(1.0 - 1.0 / gamma);
    }
    return m;
}

SpectralModel SpectralModel::empirical(const ActivationMoments& k, double gamma, std::vector<double> eigenvalues)
{
    if (eigenvalues.empty()) throw std::invalid_argument("empty eigenvalue list");
    SpectralModel m;
    m.kappa0 = k.kappa0;
    m.kappa1 = k.kappa1;
    m.kappa_star = k.kappa_star;
    m.gamma = gamma;
    m.kind = SpectrumKind::empirical;
    double w = 1.0 / double(eigenvalues.size());
    for (double x : eigenvalues) {
        if (x < -1e-9) throw std::invalid_argument("negative eigenvalue in empirical spectrum");
        m.nodes.push_back(std::max(x, 0.0));
        m.weights.push_back(w);
    }
    return m;
}

double tau_add(const SpectralModel& model)
{
    const double k1s = model.kappa1 * model.kappa1;
    double e = spectral_integrate(model, [&](double x) {
        double om = model.omega(x);
        return om > 0.0 ? k1s * x / om : 0.0;
    });
    double t = 1.0 - model.gamma * e;
    if (t < -1e-8 || t > 1.0 + 1e-8) throw std::runtime_error("tau_add outside [0,1]: spectral normalization is inconsistent");
    return std::clamp(t, 0.0, 1.0);
}

std::vector<double> load_eigenvalues(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open eigenvalue file '" + path + "'");
    std::vector<double> out;
    std::string line;
    while (std::getline(in, line)) {
        auto pos = line.find_first_not_of(" \t\r");
        if (pos == std::string::npos || line[pos] == '#') continue;
        std::istringstream ss(line);
        double x;
        if (!(ss >> x)) throw std::runtime_error("bad eigenvalue line: '" + line + "'");
        out.push_back(x);
    }
    return out;
}

} // namespace rfuq
