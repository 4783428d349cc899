#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rfuq {

/// Which classifier an overlap state / channel describes.
enum class EstimatorKind { erm, bo, eb, lap };

inline std::string to_string(EstimatorKind k)
{
    switch (k) {
    case EstimatorKind::erm: return "erm";
    case EstimatorKind::bo: return "bo";
    case EstimatorKind::eb: return "eb";
    case EstimatorKind::lap: return "lap";
    }
    return "?";
}

inline EstimatorKind parse_estimator(std::string_view s)
{
    if (s == "erm") return EstimatorKind::erm;
    if (s == "bo") return EstimatorKind::bo;
    if (s == "eb") return EstimatorKind::eb;
    if (s == "lap") return EstimatorKind::lap;
    throw std::invalid_argument("unknown estimator '" + std::string(s) + "'");
}

/// Label noise seen by the student. Both entries are variances in units of the
/// label pre-activation: tau_add_sq is the mismatch variance already multiplied
/// by the teacher norm (it equals the bare fraction when teacher_norm_sq = 1).
struct EffectiveNoise {
    double tau0_sq = 0.0;
    double tau_add_sq = 0.0;

    double total() const { return tau0_sq + tau_add_sq; }
};

} // namespace rfuq
