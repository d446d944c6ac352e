#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hgan/gradcheck.hpp"

namespace hgan {

struct SuiteCase {
    std::string name;
    GradCheckReport report;
};

struct GradSuiteResult {
    std::vector<SuiteCase> cases;
    bool all_pass = true;
    double max_rel_err = 0.0;
};

/// Checks the reverse-mode gradient of every differentiable operation against
/// central differences, plus the full loss on a tiny end-to-end instance
/// (m=3, k=2, l=4, D=8, H=2, M=1, B=2). Instances sitting on a ReLU/hinge/sort
/// kink are re-drawn, since central differences are invalid there.
GradSuiteResult run_gradient_suite(double h = 1e-5, double tol = 1e-4,
                                   std::uint64_t seed = 20240501);

} // namespace hgan
