#include <gtest/gtest.h>

#include <cmath>

#include "mcl/numerics.hpp"

using mcl::Matrix;
using mcl::Rng;

namespace {

// Naive triple loop, independent of the kernel's axpy ordering.
Matrix<double> naive_matmul(const Matrix<double>& a, const Matrix<double>& b) {
    Matrix<double> out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

Matrix<double> random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    return mcl::uniform_init<double>(rng, r, c, 1.0);
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    Rng rng(1);
    const auto b = random_matrix(rng, 3, 3);
    const auto id = Matrix<double>::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    EXPECT_EQ(mcl::matmul(id, b), b);
}

TEST(Matmul, ZeroMatrixGivesZero) {
    Rng rng(2);
    const auto a = random_matrix(rng, 4, 3);
    const auto z = mcl::matmul(a, Matrix<double>(3, 5));
    for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, TwoByTwoMatchesNaiveLoop) {
    const auto a = Matrix<double>::from_rows({{1, 2}, {3, 4}});
    const auto b = Matrix<double>::from_rows({{5, 6}, {7, 8}});
    const auto expected = naive_matmul(a, b);
    EXPECT_EQ(expected, Matrix<double>::from_rows({{19, 22}, {43, 50}}));
    EXPECT_EQ(mcl::matmul(a, b), expected);
}

TEST(Matmul, DimensionMismatchNamesBothShapes) {
    try {
        mcl::matmul(Matrix<double>(2, 3), Matrix<double>(4, 2));
        FAIL() << "expected throw";
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("2x3"), std::string::npos);
        EXPECT_NE(msg.find("4x2"), std::string::npos);
    }
}

TEST(Matmul, AssociativityOnRandomTriples) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_matrix(rng, 5, 7);
        const auto b = random_matrix(rng, 7, 4);
        const auto c = random_matrix(rng, 4, 6);
        const auto l = mcl::matmul(mcl::matmul(a, b), c);
        const auto r = mcl::matmul(a, mcl::matmul(b, c));
        for (std::size_t k = 0; k < l.size(); ++k) {
            EXPECT_NEAR(l.data()[k], r.data()[k], 1e-10 * std::max(1.0, std::abs(l.data()[k])));
        }
        // Training precision.
        Matrix<float> af(5, 7), bf(7, 4), cf(4, 6);
        for (std::size_t k = 0; k < a.size(); ++k) af.data()[k] = static_cast<float>(a.data()[k]);
        for (std::size_t k = 0; k < b.size(); ++k) bf.data()[k] = static_cast<float>(b.data()[k]);
        for (std::size_t k = 0; k < c.size(); ++k) cf.data()[k] = static_cast<float>(c.data()[k]);
        const auto lf = mcl::matmul(mcl::matmul(af, bf), cf);
        const auto rf = mcl::matmul(af, mcl::matmul(bf, cf));
        for (std::size_t k = 0; k < lf.size(); ++k) {
            EXPECT_NEAR(lf.data()[k], rf.data()[k], 1e-4 * std::max(1.0f, std::abs(lf.data()[k])));
        }
    }
}

TEST(Matvec, MatchesMatmulWithColumnVector) {
    Rng rng(4);
    const auto w = random_matrix(rng, 6, 19);
    const auto x = random_matrix(rng, 19, 1);
    std::vector<double> y(6, 0.0);
    mcl::matvec_acc(w, x.values(), std::span(y));
    const auto ref = naive_matmul(w, x);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(y[i], ref(i, 0), 1e-12);
}

TEST(Elementwise, SigmoidTanhHadamard) {
    const std::vector<double> zero{0.0};
    EXPECT_EQ(mcl::sigmoid(std::span<const double>(zero))[0], 0.5);
    EXPECT_EQ(mcl::tanh(std::span<const double>(zero))[0], 0.0);
    const std::vector<double> a{2, 3}, b{4, 5};
    EXPECT_EQ(mcl::hadamard(std::span<const double>(a), std::span<const double>(b)), (std::vector<double>{8, 15}));
    const std::vector<double> c{1};
    EXPECT_THROW(mcl::hadamard(std::span<const double>(a), std::span<const double>(c)), std::invalid_argument);
}

TEST(Elementwise, SigmoidIsSymmetricAndBounded) {
    Rng rng(5);
    for (int k = 0; k < 1000; ++k) {
        const double x = rng.uniform(-40, 40);
        EXPECT_NEAR(mcl::sigmoid(x) + mcl::sigmoid(-x), 1.0, 1e-15);
        const float xf = static_cast<float>(x);
        EXPECT_NEAR(mcl::sigmoid(xf) + mcl::sigmoid(-xf), 1.0f, 1e-6f);
        if (std::abs(x) < 30) {
            EXPECT_GT(mcl::sigmoid(x), 0.0);
            EXPECT_LT(mcl::sigmoid(x), 1.0);
        }
    }
    EXPECT_TRUE(std::isfinite(mcl::sigmoid(-1000.0)));
    EXPECT_TRUE(std::isfinite(mcl::sigmoid(1000.0)));
}

TEST(UniformInit, DeterministicAndBounded) {
    Rng r1(42), r2(42);
    const auto a = mcl::uniform_init<float>(r1, 30, 20, 0.08);
    const auto b = mcl::uniform_init<float>(r2, 30, 20, 0.08);
    EXPECT_EQ(a, b);
    for (float v : a.values()) {
        EXPECT_GE(v, -0.08f);
        EXPECT_LE(v, 0.08f);
    }
    EXPECT_THROW(mcl::uniform_init<float>(r1, 2, 2, 0.0), std::invalid_argument);
}

TEST(UniformInit, MeanOfMillionSamplesNearZero) {
    Rng rng(7);
    const auto m = mcl::uniform_init<double>(rng, 1000, 1000, 0.08);
    double sum = 0;
    for (double v : m.values()) sum += v;
    EXPECT_NEAR(sum / 1e6, 0.0, 0.001);
}

TEST(Rng, SplitStreamsAreReproducibleAndDistinct) {
    Rng base(99);
    Rng a = base.split(1), b = base.split(1), c = base.split(2);
    for (int k = 0; k < 100; ++k) {
        const auto va = a.next_u64();
        EXPECT_EQ(va, b.next_u64());
        EXPECT_NE(va, c.next_u64());
    }
    // Splitting does not advance the parent.
    EXPECT_EQ(base.counter(), 0u);
    Rng restored = Rng::from_state(a.key(), a.counter());
    EXPECT_EQ(restored.next_u64(), a.next_u64());
}

TEST(Rng, BelowIsInRangeAndCoversAllValues) {
    Rng rng(11);
    std::vector<int> seen(7, 0);
    for (int k = 0; k < 7000; ++k) ++seen[rng.below(7)];
    for (int s : seen) EXPECT_GT(s, 800);
}
