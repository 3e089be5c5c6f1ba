#include "doctest.h"
#include "support.hpp"

#include "featret/autodiff.hpp"
#include "featret/error.hpp"

#include <cmath>
#include <random>

using namespace featret;
using support::max_fd_error;
using support::random_tensor;

namespace {

constexpr int kTrials = 100;
constexpr double kTol = 1e-6;

// Sum of op(x) weighted by a fixed random matrix, so every output entry gets its own gradient.
template <typename Op>
double trial_unary(std::mt19937_64& rng, std::size_t rows, std::size_t cols, Op op, double input_scale = 1.0,
                   double away_from_zero = 0.0) {
    Tensor2 x = random_tensor(rows, cols, rng, input_scale);
    if (away_from_zero > 0) {
        for (double& v : x.data())
            if (std::abs(v) < away_from_zero) v = v < 0 ? -away_from_zero : away_from_zero;
    }
    ad::Tape probe;
    const auto out = op(probe.constant(x));
    const Tensor2 weights = random_tensor(out.rows(), out.cols(), rng);
    return max_fd_error(
        [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
            return ad::sum_all(ad::hadamard(op(v[0]), tape.constant(weights)));
        },
        {x});
}

} // namespace

TEST_CASE("tensor construction and matmul") {
    const Tensor2 x = Tensor2::from_rows({{1, 2, 3}, {4, 5, 6}});
    CHECK(x.rows() == 2);
    CHECK(x.cols() == 3);
    CHECK(matmul(Tensor2::identity(2), x) == x);
    const Tensor2 t = transpose(x);
    CHECK(t(2, 1) == 6);
    CHECK_THROWS_AS(matmul(x, x), ShapeError);
    CHECK_THROWS(Tensor2(2, 2, std::vector<double>{1, 2, 3}));
}

TEST_CASE("sigmoid at zero") {
    ad::Tape tape;
    auto x = tape.variable(Tensor2(1, 1, 0.0));
    auto y = ad::sigmoid(x);
    CHECK(y.value()[0] == doctest::Approx(0.5));
    tape.backward(ad::sum_all(y));
    CHECK(x.grad()[0] == doctest::Approx(0.25));
}

TEST_CASE("matmul by identity passes gradients through") {
    std::mt19937_64 rng(1);
    ad::Tape tape;
    const Tensor2 xv = random_tensor(3, 4, rng);
    auto x = tape.variable(xv);
    auto y = ad::matmul(tape.constant(Tensor2::identity(3)), x);
    CHECK(y.value() == xv);
    tape.backward(ad::sum_all(y));
    const Tensor2 grad = x.grad();
    for (double g : grad.data()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("unary primitives match finite differences") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < kTrials; ++trial) {
        const std::size_t r = 3, c = 4;
        CHECK(trial_unary(rng, r, c, [](ad::Var a) { return ad::sigmoid(a); }) < kTol);
        CHECK(trial_unary(rng, r, c, [](ad::Var a) { return ad::tanh(a); }) < kTol);
        CHECK(trial_unary(rng, r, c, [](ad::Var a) { return ad::leaky_relu(a); }, 1.0, 1e-3) < kTol);
        CHECK(trial_unary(rng, r, c, [](ad::Var a) { return ad::leaky_relu(a, 0.2); }, 1.0, 1e-3) < kTol);
        CHECK(trial_unary(rng, r, c, [](ad::Var a) { return ad::scale(a, -1.7); }) < kTol);
        CHECK(trial_unary(rng, r, c, [](ad::Var a) { return ad::transpose(a); }) < kTol);
        CHECK(trial_unary(rng, r, c, [](ad::Var a) { return ad::mean_rows(a); }) < kTol);
        CHECK(trial_unary(rng, r, c, [](ad::Var a) { return ad::l2_normalize_rows(a); }) < kTol);
        CHECK(trial_unary(rng, r, c, [](ad::Var a) { return ad::sum_all(a); }) < kTol);
        CHECK(trial_unary(rng, r, c + 1, [&](ad::Var a) { return ad::slice_cols(a, 1, a.cols()); }) < kTol);
    }
}

TEST_CASE("binary primitives match finite differences") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < kTrials; ++trial) {
        const std::size_t n = 3, m = 4, k = 1 + rng() % 4;
        auto check = [&](std::vector<Tensor2> in, auto op) {
            return max_fd_error([&](ad::Tape&, const std::vector<ad::Var>& v) { return ad::sum_all(op(v)); },
                                std::move(in));
        };
        const auto a = random_tensor(n, m, rng), b = random_tensor(n, m, rng), w = random_tensor(m, k, rng);
        const auto bias = random_tensor(1, m, rng);
        CHECK(check({a, w}, [](const auto& v) { return ad::tanh(ad::matmul(v[0], v[1])); }) < kTol);
        CHECK(check({a, b}, [](const auto& v) { return ad::tanh(ad::add(v[0], v[1])); }) < kTol);
        CHECK(check({a, b}, [](const auto& v) { return ad::tanh(ad::sub(v[0], v[1])); }) < kTol);
        CHECK(check({a, b}, [](const auto& v) { return ad::hadamard(v[0], v[1]); }) < kTol);
        CHECK(check({a, b}, [](const auto& v) { return ad::dot(v[0], v[1]); }) < kTol);
        CHECK(check({a, bias}, [](const auto& v) { return ad::tanh(ad::add_row_broadcast(v[0], v[1])); }) < kTol);
        CHECK(check({a, b}, [](const auto& v) {
                  const std::vector<ad::Var> parts{v[0], v[1]};
                  return ad::tanh(ad::concat_rows(parts));
              }) < kTol);
        CHECK(check({a, b}, [](const auto& v) {
                  const std::vector<ad::Var> parts{v[0], v[1], v[0]};
                  return ad::tanh(ad::average(parts));
              }) < kTol);
        const std::vector<std::size_t> rows{n - 1, 0, n - 1};
        CHECK(check({a}, [&](const auto& v) { return ad::tanh(ad::gather_rows(v[0], rows)); }) < kTol);
    }
}

TEST_CASE("normalization and masked reductions match finite differences") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < kTrials; ++trial) {
        const std::size_t n = 3, m = 4;
        const auto x = random_tensor(n, m, rng, 2.0);
        const auto gamma = random_tensor(1, m, rng), beta = random_tensor(1, m, rng);
        const auto weights = random_tensor(n, m, rng);
        ad::Mask mask(n * m, 0);
        for (std::size_t i = 0; i < n; ++i) {
            mask[i * m + rng() % m] = 1;
            for (std::size_t j = 0; j < m; ++j)
                if (rng() % 2) mask[i * m + j] = 1;
        }
        auto weighted = [&](ad::Tape& tape, ad::Var y) { return ad::sum_all(ad::hadamard(y, tape.constant(weights))); };
        CHECK(max_fd_error(
                  [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
                      return weighted(tape, ad::layer_norm_rows(v[0], v[1], v[2]));
                  },
                  {x, gamma, beta}, 1e-3, 1e-6, true) < kTol);
        CHECK(max_fd_error(
                  [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
                      return weighted(tape, ad::masked_softmax_rows(v[0], mask));
                  },
                  {x}) < kTol);
        CHECK(max_fd_error(
                  [&](ad::Tape&, const std::vector<ad::Var>& v) {
                      return ad::sum_all(ad::tanh(ad::masked_logsumexp_rows(v[0], mask)));
                  },
                  {x}) < kTol);
    }
}

TEST_CASE("masked softmax is supported exactly on the mask") {
    ad::Tape tape;
    auto x = tape.constant(Tensor2::from_rows({{1, 2, 3}, {5, 0, -1}}));
    const ad::Mask mask{1, 0, 1, 0, 1, 0};
    const Tensor2 y = ad::masked_softmax_rows(x, mask).value();
    CHECK(y(0, 1) == 0.0);
    CHECK(y(1, 0) == 0.0);
    CHECK(y(1, 1) == doctest::Approx(1.0));
    CHECK(y(0, 0) + y(0, 2) == doctest::Approx(1.0));
    const Tensor2 lse = ad::masked_logsumexp_rows(x, ad::Mask{0, 0, 0, 0, 1, 0}).value();
    CHECK(lse(0, 0) == 0.0);
    CHECK(lse(1, 0) == doctest::Approx(0.0));
}

TEST_CASE("gradients accumulate across reuse") {
    ad::Tape tape;
    auto x = tape.variable(Tensor2(1, 1, 3.0));
    tape.backward(ad::hadamard(x, x));
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}
