#ifndef POSEDIFF_NN_HPP
#define POSEDIFF_NN_HPP

// Parameterised building blocks on top of the autograd ops. Modules own their
// parameters as Vars and register them under hierarchical dotted names, which
// is what the checkpoint format, the optimizers and the freeze-contract hashes
// all key on.

#include <map>
#include <string>

#include "autograd.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace posediff {

template <typename T>
using ParamMap = std::map<std::string, ag::Var<T>>;

template <typename T>
uint64_t params_hash(const ParamMap<T>& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, p] : params) {
        h = fnv1a(name.data(), name.size(), h);
        h = tensor_hash(p.value(), h);
    }
    return h;
}

template <typename T>
int64_t params_count(const ParamMap<T>& params) {
    int64_t n = 0;
    for (const auto& [name, p] : params) {
        n += p.value().numel();
    }
    return n;
}

template <typename T>
struct Linear {
    ag::Var<T> w;  // (in, out)
    ag::Var<T> b;  // (out)

    Linear() = default;
    Linear(int64_t in, int64_t out, Rng& rng, double wstd = -1.0) {
        if (wstd < 0) {
            wstd = 1.0 / std::sqrt(static_cast<double>(in));
        }
        w = ag::Var<T>::leaf(rng.normal_tensor<T>({in, out}, 0.0, wstd), true);
        b = ag::Var<T>::leaf(Tensor<T>::zeros({out}), true);
    }

    // x (..., in) -> (..., out)
    ag::Var<T> forward(const ag::Var<T>& x) const {
        Shape s = x.shape();
        int64_t in = s.back();
        int64_t rows = x.value().numel() / in;
        auto flat = ag::reshape(x, {rows, in});
        auto y = ag::add_rowbcast(ag::matmul(flat, w), b);
        s.back() = w.shape()[1];
        return ag::reshape(y, s);
    }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        m[prefix + ".w"] = w;
        m[prefix + ".b"] = b;
    }
};

template <typename T>
struct Conv2dLayer {
    ag::Var<T> w;  // (kh, kw, cin, cout)
    ag::Var<T> b;  // (cout)
    ag::ConvSpec spec;

    Conv2dLayer() = default;
    Conv2dLayer(int64_t kh, int64_t kw, int64_t cin, int64_t cout, ag::ConvSpec cs, Rng& rng,
                double wstd = -1.0)
        : spec(cs) {
        if (wstd < 0) {
            wstd = 1.0 / std::sqrt(static_cast<double>(kh * kw * cin));
        }
        w = ag::Var<T>::leaf(rng.normal_tensor<T>({kh, kw, cin, cout}, 0.0, wstd), true);
        b = ag::Var<T>::leaf(Tensor<T>::zeros({cout}), true);
    }

    void zero_init() {
        for (auto& x : w.value().v) {
            x = T(0);
        }
        for (auto& x : b.value().v) {
            x = T(0);
        }
    }

    ag::Var<T> forward(const ag::Var<T>& x) const { return ag::conv2d(x, w, b, spec); }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        m[prefix + ".w"] = w;
        m[prefix + ".b"] = b;
    }
};

template <typename T>
struct GroupNormLayer {
    ag::Var<T> gamma, beta;
    int groups = 1;

    GroupNormLayer() = default;
    GroupNormLayer(int groups_, int64_t channels) : groups(groups_) {
        gamma = ag::Var<T>::leaf(Tensor<T>::full({channels}, T(1)), true);
        beta = ag::Var<T>::leaf(Tensor<T>::zeros({channels}), true);
    }

    ag::Var<T> forward(const ag::Var<T>& x) const { return ag::group_norm(x, gamma, beta, groups); }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        m[prefix + ".gamma"] = gamma;
        m[prefix + ".beta"] = beta;
    }
};

template <typename T>
struct LayerNormLayer {
    ag::Var<T> gamma, beta;

    LayerNormLayer() = default;
    explicit LayerNormLayer(int64_t channels) {
        gamma = ag::Var<T>::leaf(Tensor<T>::full({channels}, T(1)), true);
        beta = ag::Var<T>::leaf(Tensor<T>::zeros({channels}), true);
    }

    ag::Var<T> forward(const ag::Var<T>& x) const { return ag::layer_norm(x, gamma, beta); }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        m[prefix + ".gamma"] = gamma;
        m[prefix + ".beta"] = beta;
    }
};

// Pick a group count that divides the channel width, keeping at least two
// channels per group so the statistics stay well-conditioned.
inline int norm_groups_for(int64_t channels) {
    for (int g : {8, 4, 2}) {
        if (channels % g == 0 && channels / g >= 2) {
            return g;
        }
    }
    return 1;
}

}  // namespace posediff

#endif  // POSEDIFF_NN_HPP
