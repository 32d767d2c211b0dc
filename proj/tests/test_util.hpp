#pragma once

#include <functional>
#include <vector>

#include "diffusesg/common.hpp"
#include "diffusesg/rng.hpp"
#include "diffusesg/tape.hpp"

namespace dsg::test {

inline Mat random_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

// Builds the scalar loss from leaf nodes created for `params` (in order) and
// checks analytic gradients against central finite differences.
// build(tape, leaf_ids) must be deterministic.
struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_grad = 0.0;
};

inline GradCheckResult check_gradients(
    std::vector<Mat> params, const std::function<int(Tape&, const std::vector<int>&)>& build,
    double h = 1e-5) {
    const auto eval = [&](const std::vector<Mat>& p) {
        Tape tape(false);
        std::vector<int> ids;
        ids.reserve(p.size());
        for (const auto& m : p) ids.push_back(tape.leaf(m, false));
        return tape.value(build(tape, ids))(0, 0);
    };

    Tape tape(true);
    std::vector<int> ids;
    ids.reserve(params.size());
    for (const auto& m : params) ids.push_back(tape.leaf(m, true));
    const int loss = build(tape, ids);
    tape.backward(loss);

    GradCheckResult res;
    std::vector<Mat> analytic;
    for (size_t p = 0; p < params.size(); ++p) {
        analytic.push_back(tape.has_grad(ids[p])
                               ? tape.grad(ids[p])
                               : Mat::Zero(params[p].rows(), params[p].cols()));
        res.max_abs_grad = std::max(res.max_abs_grad, analytic.back().cwiseAbs().maxCoeff());
    }
    const double floor = std::max(1e-3, 1e-3 * res.max_abs_grad);
    for (size_t p = 0; p < params.size(); ++p) {
        for (Eigen::Index i = 0; i < params[p].size(); ++i) {
            const double orig = params[p].data()[i];
            params[p].data()[i] = orig + h;
            const double lp = eval(params);
            params[p].data()[i] = orig - h;
            const double lm = eval(params);
            params[p].data()[i] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double ga = analytic[p].data()[i];
            const double rel = std::abs(ga - fd) / std::max({std::abs(ga), std::abs(fd), floor});
            res.max_rel_err = std::max(res.max_rel_err, rel);
        }
    }
    return res;
}

}  // namespace dsg::test
