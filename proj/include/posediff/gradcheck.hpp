#ifndef POSEDIFF_GRADCHECK_HPP
#define POSEDIFF_GRADCHECK_HPP

// Central finite-difference verification of autograd gradients. Runs in
// double; intended for tiny configurations (dims <= 4).

#include <functional>
#include <string>

#include "nn.hpp"

namespace posediff {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    int64_t checked = 0;

    bool ok(double tol) const { return max_rel_err < tol; }
};

// rel err = |a - f| / max(|a|, |f|, floor); the floor turns the comparison
// into an absolute one for near-zero gradients.
inline double rel_err(double a, double f, double floor = 1e-3) {
    return std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor});
}

// loss_fn rebuilds the forward graph from the current parameter values and
// returns a scalar. Analytic gradients come from one backward pass; each
// parameter element is then perturbed +-h for the central difference.
// max_per_tensor > 0 checks an evenly spaced element subset of big tensors.
inline GradCheckReport grad_check(ParamMap<double>& params,
                                  const std::function<ag::Var<double>()>& loss_fn,
                                  double h = 1e-5, int64_t max_per_tensor = -1) {
    GradCheckReport report;

    std::map<std::string, Tensor<double>> analytic;
    {
        for (auto& [name, p] : params) {
            p.zero_grad();
        }
        auto loss = loss_fn();
        ag::backward(loss);
        for (auto& [name, p] : params) {
            analytic[name] = p.grad();
        }
    }

    auto eval = [&]() {
        ag::NoGradGuard ng;
        return loss_fn().value()[0];
    };

    for (auto& [name, p] : params) {
        Tensor<double>& w = p.value();
        const Tensor<double>& ga = analytic[name];
        int64_t n = w.numel();
        int64_t count = (max_per_tensor > 0 && max_per_tensor < n) ? max_per_tensor : n;
        for (int64_t k = 0; k < count; k++) {
            int64_t i = (k * n) / count;
            double orig = w[i];
            double step = h * std::max(1.0, std::abs(orig));
            w[i] = orig + step;
            double lp = eval();
            w[i] = orig - step;
            double lm = eval();
            w[i] = orig;
            double fd = (lp - lm) / (2.0 * step);
            double e = rel_err(ga[i], fd);
            report.checked++;
            if (e > report.max_rel_err) {
                report.max_rel_err = e;
                report.worst_param = name;
                report.worst_index = i;
                report.analytic = ga[i];
                report.numeric = fd;
            }
        }
    }
    return report;
}

}  // namespace posediff

#endif  // POSEDIFF_GRADCHECK_HPP
