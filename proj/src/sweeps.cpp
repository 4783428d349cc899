#include "rfuq/sweeps.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace rfuq {

// ---------------------------------------------------------------- specs

std::string CurveSpec::label() const
{
    std::string s = to_string(estimator);
    if (!lambda_spec.empty()) s += "@" + lambda_spec;
    if (temperature) s += "+ts";
    return s;
}

CurveSpec CurveSpec::parse(const std::string& text)
{
    CurveSpec c;
    std::string t = text;
    if (t.size() > 3 && t.compare(t.size() - 3, 3, "+ts") == 0) {
        c.temperature = true;
        t.resize(t.size() - 3);
    }
    auto at = t.find('@');
    std::string est = t.substr(0, at);
    try {
        c.estimator = parse_estimator(est);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (at != std::string::npos) {
        c.lambda_spec = t.substr(at + 1);
        if (c.lambda_spec != "error" && c.lambda_spec != "loss" && c.lambda_spec != "evidence") {
            double v = parse_double(c.lambda_spec, "curve '" + text + "'");
            if (!(v > 0.0)) throw UsageError("curve '" + text + "': lambda must be positive");
        }
    }
    return c;
}

std::string to_string(SweepAxis a)
{
    switch (a) {
    case SweepAxis::p_over_n: return "p_over_n";
    case SweepAxis::lambda: return "lambda";
    case SweepAxis::T: return "T";
    case SweepAxis::level: return "level";
    }
    return "?";
}

SweepAxis parse_axis(const std::string& s)
{
    if (s == "p_over_n") return SweepAxis::p_over_n;
    if (s == "lambda") return SweepAxis::lambda;
    if (s == "T") return SweepAxis::T;
    if (s == "level") return SweepAxis::level;
    throw UsageError("unknown sweep axis '" + s + "' (expected p_over_n, lambda, T or level)");
}

ScenarioConfig SweepSpec::scenario_at(double pn) const
{
    ScenarioConfig c;
    c.alpha = 1.0 / pn;
    c.gamma = n_over_d * pn;
    c.tau0_sq = tau0 * tau0;
    c.lambda = lambda;
    c.teacher_norm_sq = teacher_norm_sq;
    c.beta = beta;
    c.activation = activation;
    return c;
}

McScenario SweepSpec::mc_scenario_at(double pn) const
{
    McScenario s;
    s.d = d;
    s.n_over_d = n_over_d;
    s.p_over_n = pn;
    s.tau0_sq = tau0 * tau0;
    s.teacher_norm_sq = teacher_norm_sq;
    s.activation = activation;
    s.n_val = n_val;
    s.n_test = n_test;
    return s;
}

namespace {

std::vector<double> parse_grid(const Config& cfg, const std::string& key)
{
    auto items = cfg.get_list(key);
    // "lo:hi:count" expands to an evenly spaced grid.
    if (items.size() == 1 && items[0].find(':') != std::string::npos) {
        std::istringstream in(items[0]);
        std::string a, b, n;
        std::getline(in, a, ':');
        std::getline(in, b, ':');
        std::getline(in, n, ':');
        double lo = parse_double(a, key), hi = parse_double(b, key);
        int count = static_cast<int>(parse_double(n, key));
        if (count < 1) throw UsageError(key + ": grid count must be >= 1");
        std::vector<double> g(count);
        for (int i = 0; i < count; ++i) g[i] = count == 1 ? lo : lo + (hi - lo) * i / (count - 1);
        return g;
    }
    std::vector<double> g;
    for (const auto& s : items) g.push_back(parse_double(s, key));
    return g;
}

} // namespace

SweepSpec sweep_spec_from_config(const Config& cfg)
{
    SweepSpec s;
    try {
        s.name = cfg.get_string("name", "custom");
        s.n_over_d = cfg.get_double("scenario.n_over_d", s.n_over_d);
        s.p_over_n = cfg.get_double("scenario.p_over_n", s.p_over_n);
        s.tau0 = cfg.get_double("scenario.tau0", s.tau0);
        s.teacher_norm_sq = cfg.get_double("scenario.teacher_norm_sq", s.teacher_norm_sq);
        s.beta = cfg.get_double("scenario.beta", s.beta);
        s.lambda = cfg.get_double("scenario.lambda", s.lambda);
        s.activation = Activation::parse(cfg.get_string("scenario.activation", "erf"));
        s.eigenvalue_file = cfg.get_string("scenario.eigenvalues", "");
        s.axis = parse_axis(cfg.get_string("sweep.axis", "p_over_n"));
        s.grid = parse_grid(cfg, "sweep.grid");
        if (s.grid.empty()) s.grid = {s.axis == SweepAxis::p_over_n ? s.p_over_n : s.lambda};
        for (const auto& c : cfg.get_list("sweep.estimators")) s.curves.push_back(CurveSpec::parse(c));
        if (cfg.has("sweep.levels")) s.levels = cfg.get_doubles("sweep.levels");
        if (cfg.has("sweep.criteria")) {
            s.criteria.clear();
            for (const auto& c : cfg.get_list("sweep.criteria")) s.criteria.push_back(parse_criterion(c));
        }
        s.d = static_cast<int>(cfg.get_int("mc.d", s.d));
        s.trials = static_cast<int>(cfg.get_int("mc.trials", s.trials));
        s.n_val = static_cast<int>(cfg.get_int("mc.n_val", s.n_val));
        s.n_test = static_cast<int>(cfg.get_int("mc.n_test", s.n_test));
        s.seed = static_cast<std::uint64_t>(cfg.get_int("mc.seed", static_cast<long long>(s.seed)));
        s.threads = static_cast<int>(cfg.get_int("run.threads", s.threads));
        s.gamp.damping = cfg.get_double("gamp.damping", s.gamp.damping);
        s.gamp.tol = cfg.get_double("gamp.tol", s.gamp.tol);
        s.gamp.max_iter = static_cast<int>(cfg.get_int("gamp.max_iter", s.gamp.max_iter));
        s.gamp.onsager = cfg.get_bool("gamp.onsager", s.gamp.onsager);
        s.gamp_p_over_n = cfg.get_double("gamp.p_over_n", s.p_over_n);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    if (s.curves.empty()) throw UsageError("sweep.estimators must list at least one estimator");
    if (!std::is_sorted(s.grid.begin(), s.grid.end())) throw UsageError("sweep.grid must be sorted");
    if (!(s.n_over_d > 0.0) || !(s.tau0 >= 0.0) || !(s.teacher_norm_sq > 0.0) || !(s.beta > 0.0))
        throw UsageError("scenario values out of range");
    for (double x : s.grid) {
        bool ok = s.axis == SweepAxis::level ? (x > 0.0 && x < 1.0) : x > 0.0;
        if (!ok) throw UsageError("sweep.grid value out of range for axis " + to_string(s.axis));
    }
    for (double l : s.levels)
        if (!(l > 0.0 && l < 1.0)) throw UsageError("sweep.levels must lie in (0,1)");
    for (const auto& c : s.curves) {
        if (s.axis == SweepAxis::lambda && !c.lambda_spec.empty())
            throw UsageError("curve '" + c.label() + "': lambda is the sweep axis");
        if (s.axis == SweepAxis::T && c.temperature)
            throw UsageError("curve '" + c.label() + "': temperature is the sweep axis");
    }
    if (!s.eigenvalue_file.empty() && s.axis == SweepAxis::p_over_n)
        throw UsageError("an empirical spectrum fixes p/d; it cannot be combined with a p_over_n sweep");
    if (s.d < 1 || s.trials < 1 || s.n_val < 1 || s.n_test < 1 || s.threads < 1)
        throw UsageError("mc sizes, trials and threads must be positive");
    return s;
}

// ---------------------------------------------------------------- tables

namespace {

std::string format_double(double v)
{
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

std::string Table::to_csv() const
{
    std::ostringstream out;
    out << "# schema: " << schema << "\n";
    for (const auto& c : comments) out << "# " << c << "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            if (auto d = std::get_if<double>(&row[i])) out << format_double(*d);
            else if (auto s = std::get_if<std::string>(&row[i])) out << csv_escape(*s);
        }
        out << "\n";
    }
    return out.str();
}

std::string Table::to_json() const
{
    nlohmann::ordered_json j;
    j["schema"] = schema;
    j["comments"] = comments;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
        nlohmann::ordered_json r = nlohmann::ordered_json::object();
        for (std::size_t i = 0; i < row.size() && i < columns.size(); ++i) {
            if (auto d = std::get_if<double>(&row[i])) {
                if (std::isfinite(*d)) r[columns[i]] = *d;
                else if (std::isinf(*d)) r[columns[i]] = *d > 0 ? "inf" : "-inf";
                else r[columns[i]] = nullptr;
            } else if (auto s = std::get_if<std::string>(&row[i])) {
                r[columns[i]] = *s;
            } else {
                r[columns[i]] = nullptr;
            }
        }
        j["rows"].push_back(r);
    }
    return j.dump(2) + "\n";
}

Table read_csv_table(const std::string& text)
{
    Table t;
    std::istringstream in(text);
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string tag = "# schema: ";
            if (line.rfind(tag, 0) == 0) t.schema = line.substr(tag.size());
            else t.comments.push_back(line.size() > 2 ? line.substr(2) : "");
            continue;
        }
        auto fields = split_csv_line(line);
        if (!header) {
            t.columns = fields;
            header = true;
            continue;
        }
        if (fields.size() != t.columns.size()) throw UsageError("malformed CSV row: '" + line + "'");
        std::vector<Cell> row;
        for (auto& f : fields) row.push_back(f.empty() ? Cell{} : Cell{f});
        t.rows.push_back(std::move(row));
    }
    if (!header) throw UsageError("CSV has no header line");
    return t;
}

void parallel_for(int count, int threads, const std::function<void(int)>& fn)
{
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex mu;
    int failed_index = count;
    std::exception_ptr failure;
    auto worker = [&] {
        for (int i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                // Keep the lowest failing index so the reported error does not depend on scheduling.
                if (i < failed_index) {
                    failed_index = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(threads, count); ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------- shared plumbing

namespace {

struct ModelCache {
    const SweepSpec& spec;
    ActivationMoments moments;
    std::vector<double> eigenvalues;

    explicit ModelCache(const SweepSpec& s) : spec(s), moments(activation_moments(s.activation))
    {
        if (!s.eigenvalue_file.empty()) {
            try {
                eigenvalues = load_eigenvalues(s.eigenvalue_file);
            } catch (const std::exception& e) {
                throw UsageError(e.what());
            }
        }
    }

    SpectralModel at(double pn) const
    {
        double gamma = spec.n_over_d * pn;
        if (!eigenvalues.empty()) return SpectralModel::empirical(moments, gamma, eigenvalues);
        return SpectralModel::marchenko_pastur(moments, gamma);
    }
};

std::optional<LambdaCriterion> criterion_of(const CurveSpec& c)
{
    if (c.lambda_spec == "error") return LambdaCriterion::error;
    if (c.lambda_spec == "loss") return LambdaCriterion::loss;
    if (c.lambda_spec == "evidence") return LambdaCriterion::evidence;
    return std::nullopt;
}

// Distinct p/n values behind the grid: the grid itself on a p_over_n sweep,
// otherwise the single base value.
std::vector<double> scenario_points(const SweepSpec& s)
{
    if (s.axis == SweepAxis::p_over_n) return s.grid;
    return {s.p_over_n};
}

int scenario_index(const SweepSpec& s, int grid_index) { return s.axis == SweepAxis::p_over_n ? grid_index : 0; }

struct ResolvedLambda {
    double value = std::numeric_limits<double>::quiet_NaN();
    std::string error;
};

// Optimized lambdas per (scenario point, criterion) for every criterion a curve asks for.
std::map<std::pair<int, LambdaCriterion>, ResolvedLambda> resolve_lambdas(const SweepSpec& spec, const ModelCache& models)
{
    std::set<LambdaCriterion> wanted;
    if (spec.axis != SweepAxis::lambda)
        for (const auto& c : spec.curves)
            if (auto cr = criterion_of(c)) wanted.insert(*cr);
    auto pts = scenario_points(spec);
    std::vector<std::pair<int, LambdaCriterion>> tasks;
    for (int i = 0; i < static_cast<int>(pts.size()); ++i)
        for (auto c : wanted) tasks.emplace_back(i, c);
    std::vector<ResolvedLambda> out(tasks.size());
    parallel_for(static_cast<int>(tasks.size()), spec.threads, [&](int k) {
        auto [i, c] = tasks[k];
        try {
            out[k].value = optimize_lambda(c, spec.scenario_at(pts[i]), models.at(pts[i])).lambda;
        } catch (const std::exception& e) {
            out[k].error = e.what();
        }
    });
    std::map<std::pair<int, LambdaCriterion>, ResolvedLambda> res;
    for (std::size_t k = 0; k < tasks.size(); ++k) res[tasks[k]] = out[k];
    return res;
}

// Lambda for a curve at a grid point; NaN with a message when it cannot be resolved.
ResolvedLambda curve_lambda(const SweepSpec& spec, const CurveSpec& c, int grid_index,
                            const std::map<std::pair<int, LambdaCriterion>, ResolvedLambda>& resolved)
{
    if (spec.axis == SweepAxis::lambda) return {spec.grid[grid_index], ""};
    if (auto cr = criterion_of(c)) return resolved.at({scenario_index(spec, grid_index), *cr});
    if (!c.lambda_spec.empty()) return {parse_double(c.lambda_spec, "lambda"), ""};
    return {spec.lambda, ""};
}

std::string level_name(double l) { return format_double(l); }

std::vector<double> row_levels(const SweepSpec& s, int grid_index)
{
    if (s.axis == SweepAxis::level) return {s.grid[grid_index]};
    return s.levels;
}

std::vector<std::string> level_columns(const SweepSpec& s, const std::string& prefix)
{
    if (s.axis == SweepAxis::level) return {prefix};
    std::vector<std::string> cols;
    for (double l : s.levels) cols.push_back(prefix + "_" + level_name(l));
    return cols;
}

std::vector<std::string> common_comments(const SweepSpec& s)
{
    std::ostringstream sc;
    sc << "scenario: n_over_d=" << format_double(s.n_over_d) << " tau0=" << format_double(s.tau0)
       << " teacher_norm_sq=" << format_double(s.teacher_norm_sq) << " activation=" << s.activation.name()
       << " beta=" << format_double(s.beta);
    if (!s.eigenvalue_file.empty()) sc << " spectrum=empirical";
    return {"name: " + s.name, sc.str(), "axis: " + to_string(s.axis)};
}

bool status_ok(FixedPointStatus st) { return st == FixedPointStatus::converged || st == FixedPointStatus::interpolating; }

Overlaps solve_curve_point(ScenarioConfig cfg, const SpectralModel& model, const Overlaps* warm)
{
    if (cfg.estimator == EstimatorKind::erm || cfg.estimator == EstimatorKind::lap) return solve_with_homotopy(cfg, model, warm);
    if (warm) {
        try {
            Overlaps o = solve_fixed_point(cfg, model, warm);
            if (status_ok(o.status)) return o;
        } catch (const SolverError&) {
        }
    }
    return solve_fixed_point(cfg, model);
}

} // namespace

// ---------------------------------------------------------------- theory sweep

Table run_theory_sweep(const SweepSpec& spec)
{
    ModelCache models(spec);
    const int npts = static_cast<int>(spec.grid.size()), ncurves = static_cast<int>(spec.curves.size());
    auto resolved = resolve_lambdas(spec, models);
    auto pts = scenario_points(spec);

    // Bayes-optimal reference per scenario point, for the conditional variance.
    std::vector<std::optional<Overlaps>> bo(pts.size());
    parallel_for(static_cast<int>(pts.size()), spec.threads, [&](int i) {
        ScenarioConfig c = spec.scenario_at(pts[i]);
        c.estimator = EstimatorKind::bo;
        try {
            Overlaps o = solve_fixed_point(c, models.at(pts[i]));
            if (status_ok(o.status)) bo[i] = o;
        } catch (const SolverError&) {
        }
    });

    Table t;
    t.schema = "rfuq-theory-sweep/1";
    t.comments = common_comments(spec);
    t.columns = {"x", "curve", "estimator", "lambda", "T", "status", "iterations", "residual", "m", "q", "v",
                 "m_hat", "q_hat", "v_hat", "rho", "tau_add_sq", "hat_tau_sq", "gen_error", "gen_loss", "ece"};
    for (const auto& c : level_columns(spec, "cal")) t.columns.push_back(c);
    for (const auto& c : level_columns(spec, "condvar")) t.columns.push_back(c);
    t.columns.push_back("free_energy");
    t.columns.push_back("message");

    std::vector<std::vector<std::vector<Cell>>> rows(ncurves, std::vector<std::vector<Cell>>(npts));
    std::vector<char> ok(static_cast<std::size_t>(ncurves) * npts, 1);
    parallel_for(ncurves, spec.threads, [&](int ci) {
        const CurveSpec& curve = spec.curves[ci];
        std::optional<Overlaps> warm;
        for (int gi = 0; gi < npts; ++gi) {
            const double x = spec.grid[gi];
            const int si = scenario_index(spec, gi);
            const double pn = pts[si];
            ResolvedLambda lam = curve_lambda(spec, curve, gi, resolved);
            std::vector<Cell> row{x, curve.label(), to_string(curve.estimator),
                                  curve.estimator == EstimatorKind::bo ? Cell{} : Cell{lam.value}};
            auto fail = [&](const std::string& msg) {
                row.resize(t.columns.size());
                row[5] = std::string("failed");
                row.back() = msg;
                ok[static_cast<std::size_t>(ci) * npts + gi] = 0;
            };
            if (curve.estimator != EstimatorKind::bo && std::isnan(lam.value)) {
                row.push_back(Cell{});
                fail("lambda selection failed: " + lam.error);
                rows[ci][gi] = row;
                continue;
            }
            try {
                ScenarioConfig cfg = spec.scenario_at(pn);
                cfg.estimator = curve.estimator;
                if (curve.estimator != EstimatorKind::bo) cfg.lambda = lam.value;
                SpectralModel model = models.at(pn);
                Overlaps o = solve_curve_point(cfg, model, warm ? &*warm : nullptr);
                if (status_ok(o.status)) warm = o;
                else warm.reset();
                double T = 1.0;
                if (curve.temperature) T = optimal_temperature(o).T;
                if (spec.axis == SweepAxis::T) T = x;
                Overlaps scaled = T == 1.0 ? o : temperature_scale(o, T);
                auto levels = row_levels(spec, gi);
                MetricsRecord mr = compute_metrics(scaled, levels, bo[si] ? &*bo[si] : nullptr);
                row.push_back(T);
                row.push_back(to_string(o.status));
                row.push_back(static_cast<double>(o.iterations));
                row.push_back(o.residual);
                for (double v : {scaled.m, scaled.q, o.v, o.m_hat, o.q_hat, o.v_hat, o.rho, o.noise.tau_add_sq,
                                 o.hat_tau_sq, mr.gen_error, mr.gen_loss, mr.ece})
                    row.push_back(v);
                for (double l : levels) row.push_back(mr.calibration.at(l));
                for (double l : levels) row.push_back(bo[si] ? Cell{mr.cond_variance.at(l)} : Cell{});
                if (curve.estimator == EstimatorKind::eb || curve.estimator == EstimatorKind::bo)
                    row.push_back(free_energy(cfg, o, model));
                else
                    row.push_back(Cell{});
                row.push_back(std::string(bo[si] ? "" : "bayes-optimal reference did not converge"));
                if (!status_ok(o.status)) ok[static_cast<std::size_t>(ci) * npts + gi] = 0;
            } catch (const std::exception& e) {
                row.resize(5);
                fail(e.what());
            }
            rows[ci][gi] = row;
        }
    });
    for (int gi = 0; gi < npts; ++gi)
        for (int ci = 0; ci < ncurves; ++ci) t.rows.push_back(rows[ci][gi]);
    t.all_ok = std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
    return t;
}

// ---------------------------------------------------------------- Monte Carlo sweep

namespace {

struct Moments {
    double sum = 0.0, sum_sq = 0.0;
    int count = 0;

    void add(double v)
    {
        if (!std::isfinite(v)) return;
        sum += v;
        sum_sq += v * v;
        ++count;
    }
    Cell mean() const { return count ? Cell{sum / count} : Cell{}; }
    Cell se() const
    {
        if (count < 2) return Cell{};
        double m = sum / count;
        double var = std::max(0.0, (sum_sq - count * m * m) / (count - 1));
        return Cell{std::sqrt(var / count)};
    }
};

} // namespace

Table run_mc_sweep(const SweepSpec& spec)
{
    ModelCache models(spec);
    const int npts = static_cast<int>(spec.grid.size()), ncurves = static_cast<int>(spec.curves.size());
    auto resolved = resolve_lambdas(spec, models);
    auto pts = scenario_points(spec);

    // Curves per grid point, with lambdas resolved from theory.
    std::vector<std::vector<McCurve>> curves(npts);
    std::vector<std::vector<std::string>> lambda_errors(npts, std::vector<std::string>(ncurves));
    for (int gi = 0; gi < npts; ++gi)
        for (int ci = 0; ci < ncurves; ++ci) {
            const CurveSpec& c = spec.curves[ci];
            ResolvedLambda lam = curve_lambda(spec, c, gi, resolved);
            McCurve mc;
            mc.estimator = c.estimator;
            mc.lambda = c.estimator == EstimatorKind::bo ? 1.0 : lam.value;
            mc.temperature = c.temperature;
            if (spec.axis == SweepAxis::T) mc.fixed_temperature = spec.grid[gi];
            if (c.estimator != EstimatorKind::bo && std::isnan(lam.value)) lambda_errors[gi][ci] = "lambda selection failed: " + lam.error;
            curves[gi].push_back(mc);
        }

    const int trials = spec.trials;
    std::vector<std::vector<McCurveResult>> results(static_cast<std::size_t>(npts) * trials);
    parallel_for(npts * trials, spec.threads, [&](int k) {
        int gi = k / trials, trial = k % trials;
        std::vector<McCurve> runnable;
        for (int ci = 0; ci < ncurves; ++ci)
            if (lambda_errors[gi][ci].empty()) runnable.push_back(curves[gi][ci]);
        auto res = run_trial(spec.mc_scenario_at(pts[scenario_index(spec, gi)]), runnable, spec.seed, trial,
                             row_levels(spec, gi));
        std::vector<McCurveResult> full(ncurves);
        for (int ci = 0, r = 0; ci < ncurves; ++ci) {
            if (lambda_errors[gi][ci].empty()) full[ci] = res[r++];
            else full[ci].error = lambda_errors[gi][ci];
        }
        results[k] = std::move(full);
    });

    Table t;
    t.schema = "rfuq-mc-sweep/1";
    t.comments = common_comments(spec);
    std::ostringstream mc;
    mc << "mc: d=" << spec.d << " trials=" << spec.trials << " seed=" << spec.seed << " n_val=" << spec.n_val
       << " n_test=" << spec.n_test;
    t.comments.push_back(mc.str());
    t.columns = {"x", "curve", "estimator", "lambda", "trials", "n_ok", "status"};
    std::vector<std::string> metric_names{"gen_error", "gen_loss", "ece"};
    for (const auto& c : level_columns(spec, "cal")) metric_names.push_back(c);
    for (const auto& n : {"m", "q", "T"}) metric_names.push_back(n);
    for (const auto& n : metric_names) {
        t.columns.push_back(n);
        t.columns.push_back(n + "_se");
    }
    t.columns.push_back("message");

    for (int gi = 0; gi < npts; ++gi) {
        auto levels = row_levels(spec, gi);
        for (int ci = 0; ci < ncurves; ++ci) {
            std::vector<Moments> acc(metric_names.size());
            int n_ok = 0;
            std::string message;
            for (int trial = 0; trial < trials; ++trial) {
                const McCurveResult& r = results[static_cast<std::size_t>(gi) * trials + trial][ci];
                if (!r.ok) {
                    if (message.empty()) message = r.error;
                    continue;
                }
                ++n_ok;
                std::size_t k = 0;
                acc[k++].add(r.metrics.gen_error);
                acc[k++].add(r.metrics.gen_loss);
                acc[k++].add(r.metrics.ece);
                for (double l : levels) acc[k++].add(r.metrics.calibration.at(l));
                acc[k++].add(r.overlaps.m);
                acc[k++].add(r.overlaps.q);
                acc[k++].add(r.temperature);
                if (message.empty() && !r.metrics.warnings.empty()) message = r.metrics.warnings.front();
            }
            const McCurve& c = curves[gi][ci];
            std::vector<Cell> row{spec.grid[gi], spec.curves[ci].label(), to_string(c.estimator),
                                  c.estimator == EstimatorKind::bo ? Cell{} : Cell{c.lambda},
                                  static_cast<double>(trials), static_cast<double>(n_ok),
                                  std::string(n_ok == trials ? "ok" : (n_ok ? "partial" : "failed"))};
            for (const auto& a : acc) {
                row.push_back(a.mean());
                row.push_back(a.se());
            }
            row.push_back(message);
            if (n_ok != trials) t.all_ok = false;
            t.rows.push_back(std::move(row));
        }
    }
    return t;
}

// ---------------------------------------------------------------- hyperopt

Table run_hyperopt_sweep(const SweepSpec& spec)
{
    if (spec.axis != SweepAxis::p_over_n) throw UsageError("hyperopt sweeps run along p_over_n");
    if (spec.criteria.empty()) throw UsageError("sweep.criteria must list at least one criterion");
    ModelCache models(spec);
    const int npts = static_cast<int>(spec.grid.size()), ncrit = static_cast<int>(spec.criteria.size());
    Table t;
    t.schema = "rfuq-hyperopt/1";
    t.comments = common_comments(spec);
    t.columns = {"x", "criterion", "estimator", "lambda", "objective", "status", "m", "q", "v", "hat_tau_sq",
                 "gen_error", "gen_loss", "ece"};
    for (const auto& c : level_columns(spec, "cal")) t.columns.push_back(c);
    t.columns.push_back("T_opt");
    t.columns.push_back("message");

    std::vector<std::vector<Cell>> rows(static_cast<std::size_t>(npts) * ncrit);
    std::vector<char> ok(rows.size(), 1);
    parallel_for(static_cast<int>(rows.size()), spec.threads, [&](int k) {
        int gi = k / ncrit;
        LambdaCriterion cr = spec.criteria[k % ncrit];
        double pn = spec.grid[gi];
        std::vector<Cell> row{pn, to_string(cr), std::string(cr == LambdaCriterion::evidence ? "eb" : "erm")};
        try {
            LambdaOptResult r = optimize_lambda(cr, spec.scenario_at(pn), models.at(pn));
            const Overlaps& o = r.overlaps;
            MetricsRecord mr = compute_metrics(o, spec.levels);
            row.push_back(r.lambda);
            row.push_back(r.objective);
            row.push_back(to_string(o.status));
            for (double v : {o.m, o.q, o.v, o.hat_tau_sq, mr.gen_error, mr.gen_loss, mr.ece}) row.push_back(v);
            for (double l : spec.levels) row.push_back(mr.calibration.at(l));
            row.push_back(o.estimator == EstimatorKind::erm ? Cell{optimal_temperature(o).T} : Cell{});
            std::string msg;
            for (const auto& w : r.warnings) msg += (msg.empty() ? "" : "; ") + w;
            row.push_back(msg);
        } catch (const std::exception& e) {
            row.resize(t.columns.size());
            row[5] = std::string("failed");
            row.back() = std::string(e.what());
            ok[k] = 0;
        }
        rows[k] = std::move(row);
    });
    t.rows = std::move(rows);
    t.all_ok = std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
    return t;
}

// ---------------------------------------------------------------- GAMP trace

Table run_gamp_trace(const SweepSpec& spec)
{
    const CurveSpec& c = spec.curves.front();
    if (c.estimator == EstimatorKind::lap) throw UsageError("gamp-run supports erm, eb and bo");
    ResolvedLambda lam{spec.lambda, ""};
    if (auto cr = criterion_of(c)) {
        ModelCache models(spec);
        lam.value = optimize_lambda(*cr, spec.scenario_at(spec.gamp_p_over_n), models.at(spec.gamp_p_over_n)).lambda;
    } else if (!c.lambda_spec.empty()) {
        lam.value = parse_double(c.lambda_spec, "lambda");
    }
    Dataset data = generate_dataset(spec.mc_scenario_at(spec.gamp_p_over_n), keyed_rng(spec.seed, "gamp-run")());
    GampOptions go = spec.gamp;
    go.seed = keyed_rng(spec.seed, "gamp-init")();
    Table t;
    t.schema = "rfuq-gamp-trace/1";
    t.comments = common_comments(spec);
    std::ostringstream run;
    run << "gamp: estimator=" << to_string(c.estimator) << " lambda=" << format_double(lam.value)
        << " d=" << spec.d << " p_over_n=" << format_double(spec.gamp_p_over_n) << " seed=" << spec.seed
        << " damping=" << format_double(go.damping) << " onsager=" << (go.onsager ? "true" : "false");
    t.comments.push_back(run.str());
    t.columns = {"iteration", "residual", "m_emp", "q_emp"};
    GampState state;
    std::string outcome;
    try {
        state = fit_gamp(data, c.estimator, lam.value, go, true).state;
        outcome = state.converged ? "converged" : "max_iter";
    } catch (const GampDivergence& e) {
        state = e.state;
        outcome = "diverged";
    }
    t.comments.push_back("outcome: " + outcome + " after " + std::to_string(state.iteration) + " iterations");
    for (const auto& r : state.trace)
        t.rows.push_back({static_cast<double>(r.iteration), r.residual, r.m_emp, r.q_emp});
    t.all_ok = outcome == "converged";
    return t;
}

// ---------------------------------------------------------------- compare

Table compare_tables(const Table& theory, const Table& mc)
{
    auto col = [](const Table& t, const std::string& name) -> int {
        auto it = std::find(t.columns.begin(), t.columns.end(), name);
        return it == t.columns.end() ? -1 : static_cast<int>(it - t.columns.begin());
    };
    auto text = [](const Cell& c) -> std::string {
        if (auto s = std::get_if<std::string>(&c)) return *s;
        if (auto d = std::get_if<double>(&c)) return format_double(*d);
        return "";
    };
    auto number = [&](const Cell& c) {
        std::string s = text(c);
        if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        try {
            return parse_double(s, "value");
        } catch (const ConfigError&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
    int tx = col(theory, "x"), tc = col(theory, "curve"), mx = col(mc, "x"), mcv = col(mc, "curve");
    if (tx < 0 || tc < 0 || mx < 0 || mcv < 0) throw UsageError("compare: both tables need x and curve columns");

    std::vector<std::string> metrics;
    for (const auto& c : mc.columns)
        if (c != "x" && col(mc, c + "_se") >= 0 && col(theory, c) >= 0) metrics.push_back(c);
    if (metrics.empty()) throw UsageError("compare: no shared metric columns");

    std::map<std::pair<std::string, std::string>, const std::vector<Cell>*> th_rows;
    for (const auto& r : theory.rows) th_rows[{format_double(number(r[tx])), text(r[tc])}] = &r;

    Table out;
    out.schema = "rfuq-compare/1";
    out.columns = {"x", "curve", "metric", "theory", "mc_mean", "mc_se", "deviation_se"};
    double worst = 0.0;
    std::string worst_at;
    for (const auto& r : mc.rows) {
        auto key = std::make_pair(format_double(number(r[mx])), text(r[mcv]));
        auto it = th_rows.find(key);
        if (it == th_rows.end()) continue;
        for (const auto& m : metrics) {
            double th = number((*it->second)[col(theory, m)]);
            double mean = number(r[col(mc, m)]), se = number(r[col(mc, m + "_se")]);
            double dev = se > 0.0 ? std::abs(mean - th) / se : std::numeric_limits<double>::quiet_NaN();
            out.rows.push_back({number(r[mx]), key.second, m, th, mean, se, dev});
            if (std::isfinite(dev) && dev > worst) {
                worst = dev;
                worst_at = m + " at x=" + key.first + " curve=" + key.second;
            }
        }
    }
    if (out.rows.empty()) throw UsageError("compare: no (x, curve) pairs in common");
    out.comments.push_back("max deviation: " + format_double(worst) + " se" + (worst_at.empty() ? "" : " (" + worst_at + ")"));
    return out;
}

} // namespace rfuq
