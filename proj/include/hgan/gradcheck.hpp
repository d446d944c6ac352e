#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hgan/tensor.hpp"

namespace hgan {

struct ParamRef {
    std::string name;
    Tensor* tensor;
};

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    double h = 1e-5;
    double tol = 1e-4;
    std::size_t n_coords = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::string failure;  // set when the oracle itself failed (non-finite f)

    std::string summary() const;
};

/// Finite-difference oracle. `grads` must return the reverse-mode gradient for
/// each entry of `params` (in order) at the current parameter values; `value`
/// re-evaluates the scalar objective from the live parameter storage, which
/// this routine perturbs one coordinate at a time (and restores).
GradCheckReport check_gradient(const std::function<double()>& value,
                               const std::function<std::vector<Tensor>()>& grads,
                               const std::vector<ParamRef>& params, double h = 1e-5,
                               double tol = 1e-4);

} // namespace hgan
