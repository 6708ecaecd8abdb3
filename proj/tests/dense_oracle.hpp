#ifndef POSEDIFF_TESTS_DENSE_ORACLE_HPP
#define POSEDIFF_TESTS_DENSE_ORACLE_HPP

// Test-side reference implementation of multi-head softmax attention: plain
// nested loops, independent of the autograd op path it is used to check.

#include <cmath>
#include <vector>

#include "posediff/attention.hpp"

namespace posediff::testing {

inline Tensor<double> oracle_attend(const AttentionParams<double>& p, const Tensor<double>& q_in,
                                    const Tensor<double>& kv_in) {
    int64_t B = q_in.shape[0], S = q_in.shape[1], Cq = q_in.shape[2];
    int64_t S2 = kv_in.shape[1], Ckv = kv_in.shape[2];
    int64_t C = p.q.w.shape()[1];
    int64_t H = p.heads, dh = C / H;

    auto project = [](const Tensor<double>& x, const Linear<double>& lin, int64_t rows,
                      int64_t cin) {
        int64_t cout = lin.w.shape()[1];
        Tensor<double> y({rows, cout});
        for (int64_t r = 0; r < rows; r++) {
            for (int64_t j = 0; j < cout; j++) {
                double s = lin.b.value()[j];
                for (int64_t i = 0; i < cin; i++) {
                    s += x[r * cin + i] * lin.w.value().at(i, j);
                }
                y.at(r, j) = s;
            }
        }
        return y;
    };

    Tensor<double> q = project(q_in, p.q, B * S, Cq);
    Tensor<double> k = project(kv_in, p.k, B * S2, Ckv);
    Tensor<double> v = project(kv_in, p.v, B * S2, Ckv);

    Tensor<double> mixed({B * S, C});
    for (int64_t b = 0; b < B; b++) {
        for (int64_t s = 0; s < S; s++) {
            for (int64_t h = 0; h < H; h++) {
                std::vector<double> scores(static_cast<size_t>(S2));
                for (int64_t s2 = 0; s2 < S2; s2++) {
                    double dot = 0;
                    for (int64_t d = 0; d < dh; d++) {
                        dot += q.at(b * S + s, h * dh + d) * k.at(b * S2 + s2, h * dh + d);
                    }
                    scores[static_cast<size_t>(s2)] = dot / std::sqrt(static_cast<double>(dh));
                }
                double mx = scores[0];
                for (double x : scores) {
                    mx = std::max(mx, x);
                }
                double denom = 0;
                for (auto& x : scores) {
                    x = std::exp(x - mx);
                    denom += x;
                }
                for (int64_t d = 0; d < dh; d++) {
                    double acc = 0;
                    for (int64_t s2 = 0; s2 < S2; s2++) {
                        acc += scores[static_cast<size_t>(s2)] / denom *
                               v.at(b * S2 + s2, h * dh + d);
                    }
                    mixed.at(b * S + s, h * dh + d) = acc;
                }
            }
        }
    }
    Tensor<double> out = project(mixed, p.o, B * S, C);
    out.shape = {B, S, C};
    return out;
}

}  // namespace posediff::testing

#endif  // POSEDIFF_TESTS_DENSE_ORACLE_HPP
