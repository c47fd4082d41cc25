#pragma once

// Dense row-major matrices, elementwise kernels and a counter-based RNG.
//
// Every kernel uses a fixed accumulation order, so a given binary produces
// bit-identical results regardless of how work is scheduled across threads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mcl {

template <typename T>
using Vector = std::vector<T>;

template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
        Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
        std::size_t r = 0;
        for (const auto& row : rows) {
            if (row.size() != m.cols_) throw std::invalid_argument("Matrix::from_rows: ragged rows");
            std::size_t c = 0;
            for (T v : row) m(r, c++) = v;
            ++r;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

inline std::string shape_str(std::size_t r, std::size_t c) {
    std::ostringstream os;
    os << r << "x" << c;
    return os.str();
}

namespace detail {

// Dot product with eight interleaved partial sums combined in a fixed tree.
template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
    T acc[8] = {};
    std::size_t k = 0;
    for (; k + 8 <= n; k += 8) {
        for (std::size_t j = 0; j < 8; ++j) acc[j] += a[k + j] * b[k + j];
    }
    T tail = T(0);
    for (; k < n; ++k) tail += a[k] * b[k];
    return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) y[k] += alpha * x[k];
}

}  // namespace detail

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: dimension mismatch " + shape_str(a.rows(), a.cols()) + " * " +
                                    shape_str(b.rows(), b.cols()));
    }
    Matrix<T> out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        T* orow = out.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) detail::axpy(a(i, k), b.row(k).data(), orow, b.cols());
    }
    return out;
}

/// y += W x
template <typename T>
void matvec_acc(const Matrix<T>& w, std::span<const T> x, std::span<T> y) {
    if (w.cols() != x.size() || w.rows() != y.size()) {
        throw std::invalid_argument("matvec: dimension mismatch " + shape_str(w.rows(), w.cols()) + " * " +
                                    std::to_string(x.size()) + " -> " + std::to_string(y.size()));
    }
    const std::size_t n = w.cols();
    if (n == 0) return;
    for (std::size_t i = 0; i < w.rows(); ++i) y[i] += detail::dot(w.row(i).data(), x.data(), n);
}

/// x_grad += W^T dy
template <typename T>
void matvec_t_acc(const Matrix<T>& w, std::span<const T> dy, std::span<T> dx) {
    if (w.rows() != dy.size() || w.cols() != dx.size()) {
        throw std::invalid_argument("matvec_t: dimension mismatch " + shape_str(w.rows(), w.cols()));
    }
    if (w.cols() == 0) return;
    for (std::size_t i = 0; i < w.rows(); ++i) detail::axpy(dy[i], w.row(i).data(), dx.data(), w.cols());
}

/// W_grad += dy x^T
template <typename T>
void outer_acc(Matrix<T>& w_grad, std::span<const T> dy, std::span<const T> x) {
    if (w_grad.rows() != dy.size() || w_grad.cols() != x.size()) {
        throw std::invalid_argument("outer: dimension mismatch " + shape_str(w_grad.rows(), w_grad.cols()));
    }
    if (x.empty()) return;
    for (std::size_t i = 0; i < dy.size(); ++i) detail::axpy(dy[i], x.data(), w_grad.row(i).data(), x.size());
}

template <typename T>
inline T sigmoid(T x) {
    // Split form keeps exp() from overflowing for large |x|.
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Vector<T> sigmoid(std::span<const T> x) {
    Vector<T> out(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = sigmoid(x[k]);
    return out;
}

template <typename T>
Vector<T> tanh(std::span<const T> x) {
    Vector<T> out(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = std::tanh(x[k]);
    return out;
}

template <typename T>
Vector<T> hadamard(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("hadamard: length mismatch " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
    }
    Vector<T> out(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] * b[k];
    return out;
}

/// Counter-based generator: the n-th draw is a pure function of (key, n), so
/// streams can be split per model or per sample without shared state.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc908ULL)) {}

    static Rng from_state(std::uint64_t key, std::uint64_t counter) {
        Rng r;
        r.key_ = key;
        r.counter_ = counter;
        return r;
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: empty range");
        // Rejection keeps the draw unbiased.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Independent child stream; does not advance this generator.
    Rng split(std::uint64_t stream) const {
        Rng child;
        child.key_ = mix(key_ ^ mix(stream + 0xbb67ae8584caa73bULL));
        return child;
    }

    template <typename Container>
    void shuffle(Container& c) {
        for (std::size_t i = c.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            using std::swap;
            swap(c[i - 1], c[j]);
        }
    }

    bool operator==(const Rng&) const = default;

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

template <typename T>
Matrix<T> uniform_init(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    if (!(scale > 0.0)) throw std::invalid_argument("uniform_init: scale must be positive");
    Matrix<T> m(rows, cols);
    for (T& v : m.values()) v = static_cast<T>(rng.uniform(-scale, scale));
    return m;
}

template <typename T>
Vector<T> uniform_init_vector(Rng& rng, std::size_t len, double scale) {
    if (!(scale > 0.0)) throw std::invalid_argument("uniform_init: scale must be positive");
    Vector<T> v(len);
    for (T& x : v) x = static_cast<T>(rng.uniform(-scale, scale));
    return v;
}

}  // namespace mcl
