#include "hgan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hgan/error.hpp"

namespace hgan {

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    if (!failure.empty()) {
        os << "FAIL (" << failure << ")";
        return os.str();
    }
    os << (pass ? "pass" : "FAIL") << " max_rel_err=" << max_rel_err << " over " << n_coords
       << " coords";
    if (!worst_param.empty())
        os << " (worst " << worst_param << "[" << worst_index << "]: analytic "
           << worst_analytic << " vs central " << worst_numeric << ")";
    return os.str();
}

GradCheckReport check_gradient(const std::function<double()>& value,
                               const std::function<std::vector<Tensor>()>& grads,
                               const std::vector<ParamRef>& params, double h, double tol) {
    GradCheckReport rep;
    rep.h = h;
    rep.tol = tol;

    std::vector<Tensor> analytic = grads();
    if (analytic.size() != params.size()) {
        rep.failure = "gradient count mismatch";
        return rep;
    }

    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p].tensor;
        if (!analytic[p].same_shape(t)) {
            rep.failure = "gradient shape mismatch for " + params[p].name;
            return rep;
        }
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t[i];
            t[i] = saved + h;
            const double f_plus = value();
            t[i] = saved - h;
            const double f_minus = value();
            t[i] = saved;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
                rep.failure = "non-finite objective while probing " + params[p].name;
                return rep;
            }
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double a = analytic[p][i];
            // floor keeps central-difference roundoff from registering as a
            // relative error on near-zero gradients
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-5});
            const double rel = std::abs(a - numeric) / denom;
            ++rep.n_coords;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = params[p].name;
                rep.worst_index = i;
                rep.worst_analytic = a;
                rep.worst_numeric = numeric;
            }
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

} // namespace hgan
