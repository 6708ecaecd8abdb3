#ifndef POSEDIFF_OPTIM_HPP
#define POSEDIFF_OPTIM_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "nn.hpp"

namespace posediff {

struct LossRecord {
    std::vector<std::pair<int64_t, double>> entries;  // (step, loss)

    void add(int64_t step, double loss) { entries.push_back({step, loss}); }
    double mean_over(size_t begin, size_t end) const {
        end = std::min(end, entries.size());
        if (begin >= end) {
            return 0.0;
        }
        double s = 0;
        for (size_t i = begin; i < end; i++) {
            s += entries[i].second;
        }
        return s / static_cast<double>(end - begin);
    }
    double first_window_mean(size_t n) const { return mean_over(0, n); }
    double last_window_mean(size_t n) const {
        size_t total = entries.size();
        return mean_over(total > n ? total - n : 0, total);
    }
};

// Adam with bias correction. Only touches the parameters it was constructed
// with, which is how the stage-2 freeze contract is enforced.
template <typename T>
class Adam {
public:
    explicit Adam(const ParamMap<T>& params, double lr = 1e-4, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& [name, p] : params) {
            params_.push_back(p);
            m_.push_back(Tensor<T>::zeros(p.value().shape));
            v_.push_back(Tensor<T>::zeros(p.value().shape));
        }
    }

    void step() {
        t_++;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < params_.size(); i++) {
            auto& p = params_[i];
            Tensor<T>& g = p.grad();
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            T* pv = p.value().data();
            for (int64_t j = 0; j < g.numel(); j++) {
                m[j] = static_cast<T>(beta1_ * m[j] + (1.0 - beta1_) * g[j]);
                v[j] = static_cast<T>(beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j]);
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                pv[j] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p.zero_grad();
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<ag::Var<T>> params_;
    std::vector<Tensor<T>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace posediff

#endif  // POSEDIFF_OPTIM_HPP
