#include "rfuq/spectra.hpp"

#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

using namespace rfuq;

namespace {

/// Eigenvalues of F F^T / d for a p x d standard Gaussian F, zeros included.
std::vector<double> sampled_eigenvalues(int p, int d, unsigned seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd F(p, d);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < d; ++j) F(i, j) = n01(rng);
    bool tall = p > d;
    Eigen::MatrixXd G = tall ? Eigen::MatrixXd(F.transpose() * F / d) : Eigen::MatrixXd(F * F.transpose() / d);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
    std::vector<double> out(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
    for (double& x : out) x = std::max(x, 0.0);
    out.resize(p, 0.0);
    return out;
}

/// (1/d) Tr(I - Phi^T Omega^{-1} Phi) with Phi = kappa1 F / sqrt(d) and
/// Omega = kappa1^2 F F^T / d + kappa_*^2 I, written through the SVD of F / sqrt(d).
double finite_trace_mismatch(int p, int d, double kappa1, double kappa_star, unsigned seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd F(p, d);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < d; ++j) F(i, j) = n01(rng);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(F / std::sqrt(double(d)));
    double explained = 0.0;
    double tiny = 1e-9 * svd.singularValues()(0);
    for (int i = 0; i < svd.singularValues().size(); ++i) {
        double s = svd.singularValues()(i);
        if (s <= tiny) continue;
        double k2x = kappa1 * kappa1 * s * s;
        explained += k2x / (k2x + kappa_star * kappa_star);
    }
    return 1.0 - explained / d;
}

} // namespace

TEST_CASE("activation moments")
{
    auto lin = activation_moments(Activation::parse("linear"));
    CHECK(std::abs(lin.kappa0) < 1e-14);
    CHECK(lin.kappa1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(lin.kappa_star) < 1e-6);

    auto erf = activation_moments(Activation::parse("erf"));
    CHECK(std::abs(erf.kappa0) < 1e-14);
    CHECK(erf.kappa1 == doctest::Approx(2.0 / std::sqrt(3.0 * M_PI)).epsilon(1e-12));
    CHECK(erf.kappa1 == doctest::Approx(0.65147).epsilon(1e-5));
    // E[erf(z)^2] = (2/pi) asin(2/3)
    double erf_k2 = 2.0 / M_PI * std::asin(2.0 / 3.0) - erf.kappa1 * erf.kappa1;
    CHECK(erf.kappa_star * erf.kappa_star == doctest::Approx(erf_k2).epsilon(1e-10));

    auto sgn = activation_moments(Activation::parse("sign"));
    CHECK(std::abs(sgn.kappa0) < 1e-12);
    CHECK(sgn.kappa1 == doctest::Approx(std::sqrt(2.0 / M_PI)).epsilon(1e-10));
    CHECK(sgn.kappa_star * sgn.kappa_star == doctest::Approx(1.0 - 2.0 / M_PI).epsilon(1e-10));

    auto relu = activation_moments(Activation::parse("relu"));
    CHECK(relu.kappa0 == doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-10));
    CHECK(relu.kappa1 == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(relu.kappa_star * relu.kappa_star == doctest::Approx(0.25 - 0.5 / M_PI).epsilon(1e-10));

    for (const char* name : {"erf", "tanh", "relu", "sign", "linear"})
        CHECK(activation_moments(Activation::parse(name)).kappa_star >= 0.0);
    CHECK_THROWS(Activation::parse("softplus-ish"));
}

TEST_CASE("Marchenko-Pastur integrals")
{
    auto k = activation_moments(Activation::parse("erf"));
    for (double g : {0.1, 0.5, 1.0, 2.0, 7.0}) {
        auto mp = SpectralModel::marchenko_pastur(k, g);
        CHECK(spectral_integrate(mp, [](double) { return 1.0; }) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::abs(spectral_integrate(mp, [](double x) { return x; }) - 1.0) < 1e-8);
        CHECK(std::abs(spectral_integrate(mp, [](double x) { return x * x; }) - (1.0 + g)) < 1e-8);
    }
}

TEST_CASE("Marchenko-Pastur matches sampled eigenvalues")
{
    auto k = activation_moments(Activation::parse("erf"));
    for (auto [p, d] : {std::pair{500, 1000}, std::pair{2000, 1000}}) {
        double g = double(p) / d;
        auto mp = SpectralModel::marchenko_pastur(k, g);
        auto emp = SpectralModel::empirical(k, g, sampled_eigenvalues(p, d, 3));
        auto h1 = [](double x) { return x; };
        auto h2 = [](double x) { return x * x; };
        auto h3 = [](double x) { return 1.0 / (1.0 + x); };
        CHECK(spectral_integrate(emp, h1) == doctest::Approx(spectral_integrate(mp, h1)).epsilon(0.01));
        CHECK(spectral_integrate(emp, h2) == doctest::Approx(spectral_integrate(mp, h2)).epsilon(0.01));
        CHECK(spectral_integrate(emp, h3) == doctest::Approx(spectral_integrate(mp, h3)).epsilon(0.01));
    }
}

TEST_CASE("tau_add for the linear activation")
{
    auto lin = activation_moments(Activation::parse("linear"));
    for (double g : {1.0, 1.5, 2.0, 4.0}) CHECK(std::abs(tau_add(SpectralModel::marchenko_pastur(lin, g))) < 1e-10);
    for (double g : {0.1, 0.5, 0.9})
        CHECK(tau_add(SpectralModel::marchenko_pastur(lin, g)) == doctest::Approx(1.0 - g).epsilon(1e-8));
    // finite-size trace oracle at d = 400
    CHECK(std::abs(finite_trace_mismatch(800, 400, 1.0, 0.0, 5)) < 1e-10);
    CHECK(finite_trace_mismatch(200, 400, 1.0, 0.0, 5) == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("tau_add for erf matches the finite-size trace")
{
    auto k = activation_moments(Activation::parse("erf"));
    for (double g : {0.5, 2.0}) {
        int d = 400, p = int(g * d);
        double finite = finite_trace_mismatch(p, d, k.kappa1, k.kappa_star, 9);
        CHECK(tau_add(SpectralModel::marchenko_pastur(k, g)) == doctest::Approx(finite).epsilon(0.01));
    }
}

TEST_CASE("tau_add limits and monotonicity")
{
    ActivationMoments weak{0.0, 1e-6, 1.0};
    CHECK(tau_add(SpectralModel::marchenko_pastur(weak, 2.0)) == doctest::Approx(1.0).epsilon(1e-9));
    for (const char* name : {"erf", "relu", "tanh", "linear"}) {
        auto k = activation_moments(Activation::parse(name));
        double prev = 1.0;
        for (double g = 0.05; g <= 20.0; g *= 1.25) {
            double t = tau_add(SpectralModel::marchenko_pastur(k, g));
            CHECK(t >= 0.0);
            CHECK(t <= 1.0);
            CHECK(t <= prev + 1e-12);
            prev = t;
        }
    }
}

TEST_CASE("eigenvalue file round trip")
{
    std::string path = "test_spectra_eigs.txt";
    {
        std::ofstream f(path);
        f << "# eigenvalues\n0\n0.5\n\n1.5\n2\n";
    }
    auto eig = load_eigenvalues(path);
    std::remove(path.c_str());
    REQUIRE(eig.size() == 4);
    auto emp = SpectralModel::empirical(activation_moments(Activation::parse("erf")), 1.0, eig);
    CHECK(spectral_integrate(emp, [](double) { return 1.0; }) == doctest::Approx(1.0));
    CHECK(spectral_integrate(emp, [](double x) { return x; }) == doctest::Approx(1.0));
    CHECK_THROWS(load_eigenvalues("/nonexistent/eigs.txt"));
}
