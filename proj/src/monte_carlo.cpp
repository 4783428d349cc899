#include "rfuq/monte_carlo.hpp"

#include "rfuq/hyperopt.hpp"
#include "rfuq/scalar_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rfuq {

std::mt19937_64 keyed_rng(std::uint64_t seed, std::string_view purpose, std::uint64_t index)
{
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : purpose) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

int McScenario::n() const { return static_cast<int>(std::lround(n_over_d * d)); }
int McScenario::p() const { return std::max(1, static_cast<int>(std::lround(p_over_n * n()))); }

namespace {

Eigen::MatrixXd gaussian_matrix(std::mt19937_64& gen, Eigen::Index rows, Eigen::Index cols, double sd)
{
    std::normal_distribution<double> nd(0.0, sd);
    Eigen::MatrixXd M(rows, cols);
    // Fill row by row so a split's rows do not depend on its column count's layout.
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) M(i, j) = nd(gen);
    return M;
}

void draw_split(const Dataset& data, int count, const std::string& name, std::uint64_t seed, Eigen::MatrixXd& psi,
                Eigen::VectorXd& y, Eigen::VectorXd& fstar)
{
    const McScenario& sc = data.scenario;
    auto gx = keyed_rng(seed, "inputs/" + name);
    Eigen::MatrixXd X = gaussian_matrix(gx, count, sc.d, 1.0 / std::sqrt(static_cast<double>(sc.d)));
    Eigen::VectorXd field = X * data.theta_star;
    auto gy = keyed_rng(seed, "labels/" + name);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    fstar.resize(count);
    y.resize(count);
    for (int i = 0; i < count; ++i) {
        fstar(i) = smoothed_sigmoid(field(i), sc.tau0_sq);
        y(i) = u(gy) < fstar(i) ? 1.0 : -1.0;
    }
    psi = features(data, X);
}

double logistic_objective(const Eigen::VectorXd& margins, const Eigen::VectorXd& theta, double lambda)
{
    double s = 0.0;
    for (Eigen::Index i = 0; i < margins.size(); ++i) s -= log_sigmoid(margins(i));
    return s + 0.5 * lambda * theta.squaredNorm();
}

// Hessian Psi^T D Psi + lambda I; factored directly when p <= n, otherwise
// through the n x n system lambda I + D^{1/2} Psi Psi^T D^{1/2}.
class HessianSystem {
public:
    HessianSystem(const Eigen::MatrixXd& psi, const Eigen::MatrixXd* gram, const Eigen::VectorXd& curvature, double lambda)
        : psi_(psi), lambda_(lambda), woodbury_(psi.cols() > psi.rows())
    {
        dh_ = curvature.cwiseMax(0.0).cwiseSqrt();
        if (woodbury_) {
            Eigen::MatrixXd M = dh_.asDiagonal() * (*gram) * dh_.asDiagonal();
            M.diagonal().array() += lambda;
            llt_.compute(M);
        } else {
            Eigen::MatrixXd B = dh_.asDiagonal() * psi;
            Eigen::MatrixXd H = Eigen::MatrixXd::Identity(psi.cols(), psi.cols()) * lambda;
            H.selfadjointView<Eigen::Lower>().rankUpdate(B.transpose());
            llt_.compute(H);
        }
        if (llt_.info() != Eigen::Success) throw std::runtime_error("Hessian factorization failed");
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& g) const
    {
        if (!woodbury_) return llt_.solve(g);
        Eigen::VectorXd t = dh_.cwiseProduct(psi_ * g);
        t = dh_.cwiseProduct(llt_.solve(t));
        return (g - psi_.transpose() * t) / lambda_;
    }

    /// Row-wise quadratic forms phi^T H^{-1} phi.
    Eigen::VectorXd quad_forms(const Eigen::MatrixXd& rows) const
    {
        if (!woodbury_) {
            Eigen::MatrixXd W = rows.transpose();
            llt_.matrixL().solveInPlace(W);
            return W.colwise().squaredNorm().transpose();
        }
        Eigen::MatrixXd W = dh_.asDiagonal() * (psi_ * rows.transpose());
        llt_.matrixL().solveInPlace(W);
        return (rows.rowwise().squaredNorm() - W.colwise().squaredNorm().transpose()) / lambda_;
    }

private:
    const Eigen::MatrixXd& psi_;
    double lambda_;
    bool woodbury_;
    Eigen::VectorXd dh_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

Eigen::VectorXd logistic_curvature(const Eigen::VectorXd& scores)
{
    Eigen::VectorXd D(scores.size());
    for (Eigen::Index i = 0; i < scores.size(); ++i) D(i) = sigmoid(scores(i)) * sigmoid(-scores(i));
    return D;
}

Eigen::MatrixXd gram_if_needed(const Eigen::MatrixXd& psi)
{
    if (psi.cols() <= psi.rows()) return {};
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(psi.rows(), psi.rows());
    G.selfadjointView<Eigen::Lower>().rankUpdate(psi);
    return G.selfadjointView<Eigen::Lower>();
}

} // namespace

Eigen::MatrixXd features(const Dataset& data, const Eigen::MatrixXd& X)
{
    Eigen::MatrixXd Z = X * data.F.transpose();
    const Activation& act = data.scenario.activation;
    const double k0 = data.moments.kappa0, scale = 1.0 / std::sqrt(static_cast<double>(data.F.rows()));
    return Z.unaryExpr([&](double z) { return (act(z) - k0) * scale; });
}

Dataset generate_dataset(const McScenario& sc, std::uint64_t seed)
{
    if (sc.d < 1 || sc.n() < 1 || sc.n_val < 1 || sc.n_test < 1) throw std::invalid_argument("generate_dataset: empty split");
    if (sc.tau0_sq < 0.0 || !(sc.teacher_norm_sq > 0.0)) throw std::invalid_argument("generate_dataset: bad noise or teacher norm");
    Dataset data;
    data.scenario = sc;
    data.moments = activation_moments(sc.activation);
    const int d = sc.d, p = sc.p();

    auto gt = keyed_rng(seed, "teacher");
    data.theta_star = gaussian_matrix(gt, d, 1, 1.0).col(0);
    data.theta_star *= std::sqrt(sc.teacher_norm_sq * d) / data.theta_star.norm();
    auto gf = keyed_rng(seed, "features");
    data.F = gaussian_matrix(gf, p, d, 1.0);

    Eigen::VectorXd unused;
    draw_split(data, sc.n(), "train", seed, data.psi_train, data.y_train, unused);
    draw_split(data, sc.n_val, "val", seed, data.psi_val, data.y_val, data.fstar_val);
    draw_split(data, sc.n_test, "test", seed, data.psi_test, data.y_test, data.fstar_test);
    return data;
}

ErmFit train_erm(const Dataset& data, double lambda, const NewtonOptions& opts)
{
    if (!(lambda > 0.0)) throw std::invalid_argument("train_erm: lambda must be positive");
    const Eigen::MatrixXd& psi = data.psi_train;
    const Eigen::VectorXd& y = data.y_train;
    const Eigen::MatrixXd gram = gram_if_needed(psi);

    ErmFit fit;
    fit.lambda = lambda;
    fit.theta = Eigen::VectorXd::Zero(psi.cols());
    Eigen::VectorXd scores = Eigen::VectorXd::Zero(psi.rows());
    double obj = logistic_objective(y.cwiseProduct(scores), fit.theta, lambda);
    for (int step = 0; step <= opts.max_steps; ++step) {
        Eigen::VectorXd r(y.size());
        for (Eigen::Index i = 0; i < y.size(); ++i) r(i) = y(i) * sigmoid(-y(i) * scores(i));
        Eigen::VectorXd g = lambda * fit.theta - psi.transpose() * r;
        fit.grad_norm = g.norm();
        fit.iterations = step;
        if (fit.grad_norm < opts.grad_tol * std::max(1.0, fit.theta.norm())) {
            fit.converged = true;
            break;
        }
        if (step == opts.max_steps) break;
        HessianSystem H(psi, &gram, logistic_curvature(scores), lambda);
        Eigen::VectorXd dir = -H.solve(g);
        double slope = g.dot(dir);
        Eigen::VectorXd dscores = psi * dir;
        // Near the optimum the decrease drops below rounding in the objective; take the full step.
        if (-slope < 1e-12 * (1.0 + std::abs(obj))) {
            fit.theta += dir;
            scores += dscores;
            obj = logistic_objective(y.cwiseProduct(scores), fit.theta, lambda);
            continue;
        }
        double t = 1.0;
        bool accepted = false;
        for (int k = 0; k < 60; ++k, t *= 0.5) {
            Eigen::VectorXd th = fit.theta + t * dir;
            Eigen::VectorXd sc = scores + t * dscores;
            double o = logistic_objective(y.cwiseProduct(sc), th, lambda);
            if (o <= obj + 1e-4 * t * slope) {
                fit.theta = std::move(th);
                scores = std::move(sc);
                obj = o;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
    }
    return fit;
}

Eigen::VectorXd laplace_variances(const Dataset& data, const ErmFit& fit, const Eigen::MatrixXd& psi_points)
{
    const Eigen::MatrixXd gram = gram_if_needed(data.psi_train);
    HessianSystem H(data.psi_train, &gram, logistic_curvature(data.psi_train * fit.theta), fit.lambda);
    return H.quad_forms(psi_points);
}

FeatureBasis feature_basis(const Dataset& data)
{
    const double d = static_cast<double>(data.F.cols());
    Eigen::BDCSVD<Eigen::MatrixXd> svd(data.F / std::sqrt(d), Eigen::ComputeFullU);
    FeatureBasis b;
    const Eigen::Index p = data.F.rows();
    b.Q = svd.matrixU();
    b.x = Eigen::VectorXd::Zero(p);
    b.x.head(svd.singularValues().size()) = svd.singularValues().cwiseAbs2();
    const double k1 = data.moments.kappa1, ks = data.moments.kappa_star;
    b.omega = (k1 * k1) * b.x.array() + ks * ks;
    const double top = b.omega.maxCoeff();
    b.inv_sqrt_omega.resize(p);
    for (Eigen::Index i = 0; i < p; ++i) b.inv_sqrt_omega(i) = b.omega(i) > 1e-12 * top ? 1.0 / std::sqrt(b.omega(i)) : 0.0;
    return b;
}

Eigen::VectorXd GampFit::score_variances(const Eigen::MatrixXd& psi_points) const
{
    if (!rotated) return psi_points.cwiseAbs2() * state.c_hat;
    Eigen::MatrixXd W = (psi_points * basis.Q) * basis.inv_sqrt_omega.asDiagonal();
    return W.cwiseAbs2() * state.c_hat;
}

EmpiricalOverlaps measure_overlaps(const Dataset& data, const Eigen::VectorXd& theta)
{
    const double d = static_cast<double>(data.F.cols()), p = static_cast<double>(data.F.rows());
    const double k1 = data.moments.kappa1, ks = data.moments.kappa_star;
    Eigen::VectorXd ft = data.F.transpose() * theta;
    EmpiricalOverlaps o;
    o.m = k1 * data.theta_star.dot(ft) / (d * std::sqrt(p));
    o.q = (k1 * k1 * ft.squaredNorm() / d + ks * ks * theta.squaredNorm()) / p;
    return o;
}

GampFit fit_gamp(const Dataset& data, EstimatorKind estimator, double lambda, const GampOptions& opts, bool with_trace)
{
    GampFit fit;
    fit.estimator = estimator;
    fit.lambda = lambda;
    const McScenario& sc = data.scenario;
    EffectiveNoise noise{sc.tau0_sq, 0.0};

    if (estimator == EstimatorKind::erm) {
        OverlapProbe probe;
        if (with_trace) probe = [&](const Eigen::VectorXd& th) {
            auto o = measure_overlaps(data, th);
            return std::make_pair(o.m, o.q);
        };
        fit.state = run_gamp(data.psi_train, data.y_train, estimator, PriorDenoiser::ridge(lambda), noise, opts, probe);
        fit.theta = fit.state.theta_hat;
        return fit;
    }
    if (estimator != EstimatorKind::eb && estimator != EstimatorKind::bo)
        throw std::invalid_argument("fit_gamp: estimator must be erm, eb or bo");

    fit.rotated = true;
    fit.basis = feature_basis(data);
    const FeatureBasis& b = fit.basis;
    const Eigen::Index p = b.x.size();
    const double d = static_cast<double>(sc.d), gamma = p / d, k1sq = data.moments.kappa1 * data.moments.kappa1;
    const double inf = std::numeric_limits<double>::infinity();
    Eigen::VectorXd precision(p);
    if (estimator == EstimatorKind::eb) {
        for (Eigen::Index i = 0; i < p; ++i) precision(i) = b.inv_sqrt_omega(i) > 0.0 ? lambda / b.omega(i) : inf;
    } else {
        const double top = b.x.maxCoeff();
        double reach = 0.0;
        for (Eigen::Index i = 0; i < p; ++i) {
            bool live = b.inv_sqrt_omega(i) > 0.0 && b.x(i) > 1e-12 * top;
            precision(i) = live ? b.omega(i) / (gamma * sc.teacher_norm_sq * k1sq * b.x(i)) : inf;
            if (live) reach += k1sq * b.x(i) / b.omega(i);
        }
        noise.tau_add_sq = sc.teacher_norm_sq * std::max(0.0, 1.0 - reach / d);
    }
    auto to_original = [&b](const Eigen::VectorXd& th) -> Eigen::VectorXd {
        return b.Q * b.inv_sqrt_omega.cwiseProduct(th);
    };
    Eigen::MatrixXd Vr = (data.psi_train * b.Q) * b.inv_sqrt_omega.asDiagonal();
    OverlapProbe probe;
    if (with_trace) probe = [&](const Eigen::VectorXd& th) {
        auto o = measure_overlaps(data, to_original(th));
        return std::make_pair(o.m, o.q);
    };
    fit.state = run_gamp(Vr, data.y_train, estimator, PriorDenoiser::diagonal(precision), noise, opts, probe);
    fit.theta = to_original(fit.state.theta_hat);
    return fit;
}

EmpiricalMetrics empirical_metrics(const Eigen::VectorXd& score, const Eigen::VectorXd& var, const Eigen::VectorXd& fstar,
                                   const std::vector<double>& levels, double window, int bins)
{
    const Eigen::Index N = score.size();
    if (N == 0 || var.size() != N || fstar.size() != N) throw std::invalid_argument("empirical_metrics: size mismatch");
    EmpiricalMetrics out;
    std::vector<double> fhat(N);
    double err = 0.0, loss = 0.0;
    for (Eigen::Index k = 0; k < N; ++k) {
        double s = score(k), v = std::max(var(k), 0.0), f = fstar(k);
        fhat[k] = smoothed_sigmoid(s, v);
        err += s > 0.0 ? 1.0 - f : (s < 0.0 ? f : 0.5);
        loss -= f * log_smoothed_sigmoid(s, v) + (1.0 - f) * log_smoothed_sigmoid(-s, v);
    }
    out.gen_error = err / N;
    out.gen_loss = loss / N;

    for (double level : levels) {
        double w = window;
        double sum_hat = 0.0, sum_star = 0.0;
        int count = 0;
        for (int widen = 0; widen < 4; ++widen, w *= 2.0) {
            sum_hat = sum_star = 0.0;
            count = 0;
            for (Eigen::Index k = 0; k < N; ++k)
                if (std::abs(fhat[k] - level) <= w) {
                    sum_hat += fhat[k];
                    sum_star += fstar(k);
                    ++count;
                }
            if (count >= 10) break;
        }
        std::ostringstream msg;
        if (count == 0) {
            msg << "no test confidences near level " << level;
            out.warnings.push_back(msg.str());
            out.calibration[level] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        if (w > window * 1.5) {
            msg << "calibration window at level " << level << " widened to " << w;
            out.warnings.push_back(msg.str());
        }
        out.calibration[level] = (sum_hat - sum_star) / count;
    }

    std::vector<Eigen::Index> order(N);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return fhat[a] < fhat[b]; });
    double e = 0.0;
    for (int b = 0; b < bins; ++b) {
        Eigen::Index lo = b * N / bins, hi = (b + 1) * N / bins;
        if (hi <= lo) continue;
        double sh = 0.0, ss = 0.0;
        for (Eigen::Index k = lo; k < hi; ++k) {
            sh += fhat[order[k]];
            ss += fstar(order[k]);
        }
        e += std::abs(sh - ss) / N;
    }
    out.ece = e;
    return out;
}

double fit_temperature(const Eigen::VectorXd& score, const Eigen::VectorXd& y, double lo, double hi, double tol)
{
    ScalarOptProblem p;
    p.lo = lo;
    p.hi = hi;
    p.tol = tol;
    p.objective = [&](double T) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < score.size(); ++k) s -= log_sigmoid(y(k) * score(k) / T);
        return s / score.size();
    };
    return golden_section(p).x;
}

std::vector<McCurveResult> run_trial(const McScenario& sc, const std::vector<McCurve>& curves, std::uint64_t seed,
                                     int trial, const std::vector<double>& levels)
{
    std::vector<McCurveResult> out(curves.size());
    Dataset data;
    try {
        data = generate_dataset(sc, keyed_rng(seed, "trial", static_cast<std::uint64_t>(trial))());
    } catch (const std::exception& ex) {
        for (auto& r : out) r.error = ex.what();
        return out;
    }
    std::map<double, ErmFit> erm_cache;
    auto erm_for = [&](double lambda) -> const ErmFit& {
        auto it = erm_cache.find(lambda);
        if (it == erm_cache.end()) it = erm_cache.emplace(lambda, train_erm(data, lambda)).first;
        return it->second;
    };

    for (std::size_t c = 0; c < curves.size(); ++c) {
        const McCurve& cv = curves[c];
        McCurveResult& r = out[c];
        try {
            Eigen::VectorXd theta, var;
            std::vector<std::string> notes;
            if (cv.estimator == EstimatorKind::erm || cv.estimator == EstimatorKind::lap) {
                const ErmFit& fit = erm_for(cv.lambda);
                if (!fit.converged) notes.push_back("Newton did not reach the gradient certificate");
                theta = fit.theta;
                var = cv.estimator == EstimatorKind::lap ? laplace_variances(data, fit, data.psi_test)
                                                         : Eigen::VectorXd::Zero(data.psi_test.rows());
            } else {
                GampOptions go;
                go.seed = keyed_rng(seed, "gamp-init", static_cast<std::uint64_t>(trial))();
                GampFit fit = fit_gamp(data, cv.estimator, cv.lambda, go);
                if (!fit.state.converged) {
                    double res = fit.state.trace.empty() ? 1.0 : fit.state.trace.back().residual;
                    if (!(res < 1e-4)) throw std::runtime_error("GAMP did not converge");
                    notes.push_back("GAMP stopped at max_iter");
                }
                theta = fit.theta;
                var = fit.score_variances(data.psi_test);
            }
            Eigen::VectorXd score = data.psi_test * theta;
            if (cv.temperature || cv.fixed_temperature > 0.0) {
                r.temperature = cv.fixed_temperature > 0.0 ? cv.fixed_temperature
                                                           : fit_temperature(data.psi_val * theta, data.y_val);
                score /= r.temperature;
                theta /= r.temperature;
            }
            r.overlaps = measure_overlaps(data, theta);
            r.metrics = empirical_metrics(score, var, data.fstar_test, levels);
            r.metrics.warnings.insert(r.metrics.warnings.end(), notes.begin(), notes.end());
            r.ok = true;
        } catch (const std::exception& ex) {
            r.ok = false;
            r.error = ex.what();
        }
    }
    return out;
}

} // namespace rfuq
