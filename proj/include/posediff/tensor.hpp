#ifndef POSEDIFF_TENSOR_HPP
#define POSEDIFF_TENSOR_HPP

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace posediff {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); i++) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) {
            out += ", ";
        }
    }
    return out + ")";
}

// Dense row-major n-d tensor. Plain value type: copy copies the buffer.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), v(static_cast<size_t>(numel_of(shape)), T(0)) {}
    Tensor(Shape s, T fill) : shape(std::move(s)), v(static_cast<size_t>(numel_of(shape)), fill) {}

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, T value) { return Tensor(std::move(s), value); }
    static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

    bool empty() const { return v.empty(); }
    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i < 0 ? i + rank() : i)]; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    T& at(int64_t a, int64_t b) { return v[static_cast<size_t>(a * shape[1] + b)]; }
    const T& at(int64_t a, int64_t b) const { return v[static_cast<size_t>(a * shape[1] + b)]; }
    T& at(int64_t a, int64_t b, int64_t c) {
        return v[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
    }
    const T& at(int64_t a, int64_t b, int64_t c) const {
        return v[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
    }
    T& at(int64_t a, int64_t b, int64_t c, int64_t d) {
        return v[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }
    const T& at(int64_t a, int64_t b, int64_t c, int64_t d) const {
        return v[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }
    T& at(int64_t a, int64_t b, int64_t c, int64_t d, int64_t e) {
        return v[static_cast<size_t>((((a * shape[1] + b) * shape[2] + c) * shape[3] + d) * shape[4] + e)];
    }
    const T& at(int64_t a, int64_t b, int64_t c, int64_t d, int64_t e) const {
        return v[static_cast<size_t>((((a * shape[1] + b) * shape[2] + c) * shape[3] + d) * shape[4] + e)];
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); i++) {
            out.v[i] = static_cast<U>(v[i]);
        }
        return out;
    }
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape;
}

template <typename T>
void check_shape(const Tensor<T>& t, const Shape& want, const char* what) {
    if (t.shape != want) {
        throw std::invalid_argument(std::string(what) + ": expected shape " + shape_str(want) +
                                    ", got " + shape_str(t.shape));
    }
}

// FNV-1a over the raw value bytes; used for freeze contracts and run manifests.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; i++) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

template <typename T>
uint64_t tensor_hash(const Tensor<T>& t, uint64_t seed = 0xcbf29ce484222325ull) {
    uint64_t h = fnv1a(t.shape.data(), t.shape.size() * sizeof(int64_t), seed);
    return fnv1a(t.v.data(), t.v.size() * sizeof(T), h);
}

}  // namespace posediff

#endif  // POSEDIFF_TENSOR_HPP
