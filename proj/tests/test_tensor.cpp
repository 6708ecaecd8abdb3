#include <doctest.h>

#include "posediff/rng.hpp"
#include "posediff/tensor.hpp"

using namespace posediff;

TEST_CASE("tensor shape and indexing") {
    Tensor<float> t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.rank() == 3);
    CHECK(t.dim(-1) == 4);
    t.at(1, 2, 3) = 5.0f;
    CHECK(t[23] == 5.0f);
    t.at(0, 0, 0) = 1.0f;
    CHECK(t[0] == 1.0f);
}

TEST_CASE("tensor fill constructors") {
    auto z = Tensor<double>::zeros({3, 3});
    for (auto x : z.v) {
        CHECK(x == 0.0);
    }
    auto f = Tensor<double>::full({2, 2}, 7.0);
    for (auto x : f.v) {
        CHECK(x == 7.0);
    }
    auto s = Tensor<double>::scalar(2.5);
    CHECK(s.numel() == 1);
    CHECK(s[0] == 2.5);
}

TEST_CASE("tensor hash changes with content and shape") {
    Tensor<float> a({2, 2});
    Tensor<float> b({2, 2});
    CHECK(tensor_hash(a) == tensor_hash(b));
    b[0] = 1.0f;
    CHECK(tensor_hash(a) != tensor_hash(b));
    Tensor<float> c({4});
    CHECK(tensor_hash(a) != tensor_hash(c));  // same bytes, different shape
}

TEST_CASE("rng determinism and stream independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 10; i++) {
        CHECK(a.normal() == b.normal());
    }
    Rng s0 = Rng::stream(7, 0);
    Rng s1 = Rng::stream(7, 1);
    CHECK(s0.bits() != s1.bits());

    Rng c(1);
    auto t = c.normal_tensor<float>({4, 4});
    CHECK(t.numel() == 16);
}
