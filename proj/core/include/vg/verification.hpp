#pragma once

#include <functional>
#include <random>
#include <vector>

#include "vg/data.hpp"
#include "vg/geometry.hpp"

namespace vg::verify {

// Central-difference gradient of a scalar function. eps = 1e-4 balances
// truncation against round-off at 64-bit precision.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> theta, double eps = 1e-4);

struct GradCheckReport {
    std::vector<double> rel_errors;  // one per checked coordinate
    double max_rel_error = 0;
    double threshold = 0;
    bool pass = false;
};

// Compares analytic gradients against central differences on a sample of
// coordinates (all coordinates when sample_count <= 0). Relative error is
// |ga-gn| / max(|ga|,|gn|,1e-8).
GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& theta, const std::vector<double>& analytic,
                           double threshold, int sample_count, std::mt19937_64& rng,
                           double eps = 1e-4);

// Exhaustive evaluation of a grammar query over all scene objects; throws
// DataError unless exactly one object satisfies it.
int brute_force_referent(const data::SceneSpec& scene, const std::string& query);

// Plain double loop over every anchor placement; oracle twin of
// assign_best_anchor with the same tie rule (lowest flat index).
std::pair<int, double> exhaustive_anchor_scan(const Box& gt, const AnchorLayout& layout);

}  // namespace vg::verify
