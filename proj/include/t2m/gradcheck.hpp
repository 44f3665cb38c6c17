#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace t2m {

struct GradCheckEntry {
    std::string component;
    double max_rel_err = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 1e-4;
    double step = 1e-5;
    bool all_pass = true;
};

// Checks every hand-written backward pass against central finite differences
// on small random instances (widths <= 8, k <= 5). The error per component is
// max_i |analytic_i - numeric_i| / max(1, |analytic|_inf, |numeric|_inf).
GradCheckReport run_gradient_checks(std::uint64_t seed, double tolerance = 1e-4,
                                    double step = 1e-5);

}  // namespace t2m
