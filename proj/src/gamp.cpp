#include "rfuq/gamp.hpp"

#include "rfuq/scalar_kernel.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace rfuq {

PriorDenoiser PriorDenoiser::ridge(double lambda)
{
    if (!(lambda > 0.0)) throw std::invalid_argument("ridge prior needs lambda > 0");
    PriorDenoiser d;
    d.kind_ = Kind::ridge;
    d.lambda_ = lambda;
    return d;
}

PriorDenoiser PriorDenoiser::diagonal(Eigen::VectorXd precision)
{
    for (Eigen::Index i = 0; i < precision.size(); ++i)
        if (!(precision(i) > 0.0)) throw std::invalid_argument("diagonal prior needs positive precisions");
    PriorDenoiser d;
    d.kind_ = Kind::diagonal;
    d.precision_ = std::move(precision);
    return d;
}

PriorDenoiser PriorDenoiser::gaussian_cov(Eigen::MatrixXd sigma)
{
    if (sigma.rows() != sigma.cols()) throw std::invalid_argument("prior covariance must be square");
    if (!sigma.isApprox(sigma.transpose(), 1e-10)) throw std::invalid_argument("prior covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma, Eigen::EigenvaluesOnly);
    double top = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    if (es.eigenvalues().minCoeff() < -1e-10 * top) throw std::invalid_argument("prior covariance is not positive semidefinite");
    PriorDenoiser d;
    d.kind_ = Kind::gaussian_cov;
    d.sigma_ = std::move(sigma);
    return d;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> PriorDenoiser::denoise(const Eigen::VectorXd& b, const Eigen::VectorXd& A) const
{
    const Eigen::Index p = b.size();
    switch (kind_) {
    case Kind::ridge: {
        Eigen::VectorXd var = (A.array() + lambda_).inverse();
        return {var.cwiseProduct(b), var};
    }
    case Kind::diagonal: {
        if (precision_.size() != p) throw std::invalid_argument("diagonal prior size mismatch");
        Eigen::VectorXd var(p);
        for (Eigen::Index i = 0; i < p; ++i) var(i) = std::isinf(precision_(i)) ? 0.0 : 1.0 / (precision_(i) + A(i));
        return {var.cwiseProduct(b), var};
    }
    case Kind::gaussian_cov: {
        if (sigma_.rows() != p) throw std::invalid_argument("covariance prior size mismatch");
        // (S^{-1} + D)^{-1} = S - S D^{1/2} (I + D^{1/2} S D^{1/2})^{-1} D^{1/2} S; valid for singular S.
        Eigen::VectorXd dh = A.cwiseMax(0.0).cwiseSqrt();
        Eigen::MatrixXd M = dh.asDiagonal() * sigma_ * dh.asDiagonal();
        M.diagonal().array() += 1.0;
        Eigen::LLT<Eigen::MatrixXd> llt(M);
        if (llt.info() != Eigen::Success) throw std::runtime_error("covariance prior: singular system");
        Eigen::VectorXd sb = sigma_ * b;
        Eigen::VectorXd mean = sb - sigma_ * (dh.asDiagonal() * llt.solve(dh.cwiseProduct(sb)));
        Eigen::MatrixXd W = dh.asDiagonal() * sigma_;
        llt.matrixL().solveInPlace(W);
        Eigen::VectorXd var = sigma_.diagonal() - W.colwise().squaredNorm().transpose();
        return {mean, var.cwiseMax(0.0)};
    }
    }
    throw std::logic_error("unknown prior kind");
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> prior_denoise(const PriorDenoiser& d, const Eigen::VectorXd& b,
                                                          const Eigen::VectorXd& A)
{
    for (Eigen::Index i = 0; i < A.size(); ++i)
        if (A(i) < 0.0) throw std::invalid_argument("prior_denoise: A must be componentwise >= 0");
    return d.denoise(b, A);
}

GampState run_gamp(const Eigen::MatrixXd& V, const Eigen::VectorXd& y, EstimatorKind estimator,
                   const PriorDenoiser& prior, const EffectiveNoise& noise, const GampOptions& opts,
                   const OverlapProbe& probe)
{
    const Eigen::Index n = V.rows(), p = V.cols();
    if (y.size() != n) throw std::invalid_argument("run_gamp: label count mismatch");
    const Eigen::MatrixXd V2 = V.cwiseAbs2();
    std::mt19937_64 gen(opts.seed);
    std::normal_distribution<double> nd(0.0, opts.init_sigma);

    GampState s;
    s.theta_hat.resize(p);
    for (Eigen::Index i = 0; i < p; ++i) s.theta_hat(i) = nd(gen);
    s.c_hat = Eigen::VectorXd::Ones(p);
    s.g = Eigen::VectorXd::Zero(n);
    s.d_g = Eigen::VectorXd::Zero(n);
    s.omega = Eigen::VectorXd::Zero(n);
    const double eta = opts.damping;

    if (probe) {
        auto [m, q] = probe(s.theta_hat);
        s.trace.push_back({0, std::numeric_limits<double>::quiet_NaN(), m, q});
    }
    for (int t = 1; t <= opts.max_iter; ++t) {
        s.V = V2 * s.c_hat;
        Eigen::VectorXd omega = V * s.theta_hat;
        if (opts.onsager) omega -= s.V.cwiseProduct(s.g);
        s.omega = t == 1 ? omega : ((1.0 - eta) * omega + eta * s.omega).eval();
        for (Eigen::Index mu = 0; mu < n; ++mu) {
            ChannelEval ce = channel_eval(estimator, y(mu) > 0 ? 1 : -1, s.omega(mu), std::max(s.V(mu), 1e-300), noise,
                                          opts.beta);
            s.g(mu) = ce.value;
            s.d_g(mu) = ce.d_omega;
        }
        Eigen::VectorXd A = (-(V2.transpose() * s.d_g)).cwiseMax(0.0);
        Eigen::VectorXd b = V.transpose() * s.g + A.cwiseProduct(s.theta_hat);
        auto [mean, var] = prior.denoise(b, A);
        Eigen::VectorXd theta_new = (1.0 - eta) * mean + eta * s.theta_hat;
        Eigen::VectorXd c_new = (1.0 - eta) * var + eta * s.c_hat;
        double denom = std::max(s.theta_hat.norm(), 1e-300);
        double res = (theta_new - s.theta_hat).norm() / denom;
        s.theta_hat = std::move(theta_new);
        s.c_hat = std::move(c_new);
        s.iteration = t;
        GampTraceRow row{t, res, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
        if (probe) std::tie(row.m_emp, row.q_emp) = probe(s.theta_hat);
        s.trace.push_back(row);
        if (!std::isfinite(res) || res > 1e6) throw GampDivergence("run_gamp: diverged", s);
        if (res < opts.tol) {
            s.converged = true;
            break;
        }
    }
    return s;
}

std::string gamp_trace_csv(const std::vector<GampTraceRow>& trace)
{
    std::ostringstream out;
    out.precision(12);
    out << "iteration,residual,m_emp,q_emp\n";
    for (const auto& r : trace) {
        out << r.iteration << ',';
        if (std::isfinite(r.residual)) out << r.residual;
        out << ',';
        if (std::isfinite(r.m_emp)) out << r.m_emp;
        out << ',';
        if (std::isfinite(r.q_emp)) out << r.q_emp;
        out << '\n';
    }
    return out.str();
}

} // namespace rfuq
