#include <cmath>
#include <vector>

#include "doctest.h"
#include "simcl/tensor.hpp"

using namespace simcl;

TEST_SUITE("tensor") {
  TEST_CASE("tensor_from validates extent product and finiteness") {
    CHECK_THROWS_AS(tensor_from({2, 3}, {1.f, 2.f}), ShapeError);
    CHECK_THROWS_AS(tensor_from({2}, {1.f, std::nanf("")}), NumericError);
    CHECK_THROWS_AS(tensor_from({2}, {1.f, HUGE_VALF}), NumericError);
    auto t = tensor_from({2, 2}, {1, 2, 3, 4});
    CHECK(t.numel() == 4);
    CHECK(t.rank() == 2);
    CHECK(t.vals()[3] == 4.0f);
  }

  TEST_CASE("scalar() rejects non-scalars") {
    CHECK(scalar_tensor(2.5f).scalar() == 2.5f);
    CHECK_THROWS_AS(full({3}, 1.0f).scalar(), ContractError);
  }

  TEST_CASE("add: elementwise and row-bias broadcast") {
    Tape tape;
    auto a = tensor_from({2, 2}, {1, 2, 3, 4});
    auto b = tensor_from({2, 2}, {10, 20, 30, 40});
    auto s = tape.add(a, b);
    CHECK(s.vals() == std::vector<float>{11, 22, 33, 44});

    auto bias = tensor_from({2}, {100, 200});
    auto sb = tape.add(a, bias);
    CHECK(sb.vals() == std::vector<float>{101, 202, 103, 204});

    CHECK_THROWS_AS(tape.add(a, full({3}, 0.0f)), ShapeError);
    CHECK_THROWS_AS(tape.add(a, full({2, 3}, 0.0f)), ShapeError);
  }

  TEST_CASE("mul is strictly same-shape") {
    Tape tape;
    auto a = tensor_from({2}, {3, -4});
    CHECK(tape.mul(a, a).vals() == std::vector<float>{9, 16});
    CHECK_THROWS_AS(tape.mul(a, full({2, 1}, 1.0f)), ShapeError);
  }

  TEST_CASE("matmul against hand-computed products") {
    Tape tape;
    auto a = tensor_from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = tensor_from({3, 2}, {7, 8, 9, 10, 11, 12});
    auto c = tape.matmul(a, b);
    CHECK(c.shape == Shape{2, 2});
    CHECK(c.vals() == std::vector<float>{58, 64, 139, 154});

    // transpose_b: a [2,3] x b [2,3]^T = [2,2]
    auto bt = tensor_from({2, 3}, {7, 9, 11, 8, 10, 12});
    auto c2 = tape.matmul(a, bt, true);
    CHECK(c2.vals() == std::vector<float>{58, 64, 139, 154});

    CHECK_THROWS_AS(tape.matmul(a, a), ShapeError);
    CHECK_THROWS_AS(tape.matmul(a, full({3}, 1.0f)), ShapeError);
  }

  TEST_CASE("conv2d: identity kernel, padding, stride") {
    Tape tape;
    auto x = tensor_from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});

    // 1x1 identity kernel reproduces the input.
    auto k1 = tensor_from({1, 1, 1, 1}, {1});
    CHECK(tape.conv2d(x, k1, 1, 0).vals() == x.vals());

    // 3x3 all-ones kernel at pad 1: center output = sum of all 9.
    auto k3 = full({1, 1, 3, 3}, 1.0f);
    auto y = tape.conv2d(x, k3, 1, 1);
    CHECK(y.shape == Shape{1, 1, 3, 3});
    CHECK(y.vals()[4] == 45.0f);
    CHECK(y.vals()[0] == 1 + 2 + 4 + 5);  // corner sees the 2x2 window

    // stride 2 halves the output grid: (3 + 2*1 - 3)/2 + 1 = 2.
    CHECK(tape.conv2d(x, k3, 2, 1).shape == Shape{1, 1, 2, 2});

    CHECK_THROWS_AS(tape.conv2d(x, tensor_from({1, 2, 1, 1}, {1, 1}), 1, 0), ShapeError);
    CHECK_THROWS_AS(tape.conv2d(x, full({1, 1, 2, 3}, 1.0f), 1, 0), ShapeError);
    CHECK_THROWS_AS(tape.conv2d(x, k1, 0, 0), ShapeError);
    CHECK_THROWS_AS(tape.conv2d(x, full({1, 1, 5, 5}, 1.0f), 1, 0), ShapeError);
  }

  TEST_CASE("max_pool2 picks window maxima and rejects odd extents") {
    Tape tape;
    auto x = tensor_from({1, 1, 4, 4}, {1, 2, 3, 4,
                                        5, 6, 7, 8,
                                        9, 10, 11, 12,
                                        13, 14, 15, 16});
    auto y = tape.max_pool2(x);
    CHECK(y.shape == Shape{1, 1, 2, 2});
    CHECK(y.vals() == std::vector<float>{6, 8, 14, 16});
    CHECK_THROWS_AS(tape.max_pool2(tensor_from({1, 1, 3, 3}, std::vector<float>(9, 0.f))), ShapeError);
  }

  TEST_CASE("avg_pool_global averages each plane") {
    Tape tape;
    auto x = tensor_from({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    auto y = tape.avg_pool_global(x);
    CHECK(y.shape == Shape{1, 2});
    CHECK(y.vals() == std::vector<float>{2.5f, 25.0f});
  }

  TEST_CASE("relu clamps negatives") {
    Tape tape;
    auto y = tape.relu(tensor_from({4}, {-1, 0, 2, -3}));
    CHECK(y.vals() == std::vector<float>{0, 0, 2, 0});
  }

  TEST_CASE("batch_norm: training normalizes with batch stats, eval with running stats") {
    Tape tape;
    auto x = tensor_from({4, 1}, {1, 2, 3, 4});
    auto gamma = full({1}, 2.0f);
    auto beta = full({1}, 10.0f);
    std::vector<float> rm{0}, rv{1};

    auto y = tape.batch_norm(x, gamma, beta, rm, rv, true);
    // mean 2.5, biased var 1.25
    const double inv = 1.0 / std::sqrt(1.25 + 1e-5);
    CHECK(y.vals()[0] == doctest::Approx(10 + 2 * (1 - 2.5) * inv).epsilon(1e-5));
    CHECK(y.vals()[3] == doctest::Approx(10 + 2 * (4 - 2.5) * inv).epsilon(1e-5));
    CHECK(rm[0] == doctest::Approx(0.9 * 0 + 0.1 * 2.5));
    CHECK(rv[0] == doctest::Approx(0.9 * 1 + 0.1 * 1.25));

    // Eval mode: per-element affine map under the running stats, so a
    // single-row batch is legal and batch-independent.
    auto one = tensor_from({1, 1}, {3});
    auto ye = tape.batch_norm(one, gamma, beta, rm, rv, false);
    const double inv_e = 1.0 / std::sqrt(rv[0] + 1e-5f);
    CHECK(ye.vals()[0] == doctest::Approx(10 + 2 * (3 - rm[0]) * inv_e).epsilon(1e-5));

    CHECK_THROWS_AS(tape.batch_norm(one, gamma, beta, rm, rv, true), ShapeError);
    CHECK_THROWS_AS(tape.batch_norm(x, full({2}, 1.0f), beta, rm, rv, true), ShapeError);
    std::vector<float> bad{1, 2};
    CHECK_THROWS_AS(tape.batch_norm(x, gamma, beta, bad, rv, true), ShapeError);
  }

  TEST_CASE("l2_normalize_rows yields unit rows and survives zero rows") {
    Tape tape;
    auto x = tensor_from({2, 2}, {3, 4, 0, 0});
    auto y = tape.l2_normalize_rows(x);
    CHECK(y.vals()[0] == doctest::Approx(0.6));
    CHECK(y.vals()[1] == doctest::Approx(0.8));
    CHECK(y.vals()[2] == 0.0f);  // zero row maps to zero, no NaN
    CHECK(y.vals()[3] == 0.0f);
    CHECK_THROWS_AS(tape.l2_normalize_rows(full({4}, 1.0f)), ShapeError);
  }

  TEST_CASE("log_softmax_rows matches direct enumeration and is shift-invariant") {
    Tape tape;
    auto x = tensor_from({1, 3}, {1, 2, 3});
    auto y = tape.log_softmax_rows(x);
    const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int j = 0; j < 3; ++j) CHECK(y.vals()[j] == doctest::Approx(std::log(std::exp(1.0 + j) / denom)).epsilon(1e-6));

    // Shifting by +100 moves the log-sum-exp addend into coarser float
    // spacing (~1e-5 at magnitude 103), so the match is loose-float, not bitwise.
    auto shifted = tape.log_softmax_rows(tensor_from({1, 3}, {101, 102, 103}));
    for (int j = 0; j < 3; ++j) CHECK(shifted.vals()[j] == doctest::Approx(y.vals()[j]).epsilon(1e-4));

    // exp of rows sums to one
    double s = 0;
    for (int j = 0; j < 3; ++j) s += std::exp(y.vals()[j]);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("mean_all, reshape, concat_rows") {
    Tape tape;
    CHECK(tape.mean_all(tensor_from({2, 2}, {1, 2, 3, 4})).scalar() == 2.5f);

    auto x = tensor_from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto r = tape.reshape(x, {3, 2});
    CHECK(r.shape == Shape{3, 2});
    CHECK(r.vals() == x.vals());
    CHECK_THROWS_AS(tape.reshape(x, {4, 2}), ShapeError);

    auto c = tape.concat_rows({x, x});
    CHECK(c.shape == Shape{4, 3});
    CHECK(c.vals()[8] == 3.0f);
    CHECK_THROWS_AS(tape.concat_rows({x, tensor_from({2, 2}, {1, 2, 3, 4})}), ShapeError);
    CHECK_THROWS_AS(tape.concat_rows({}), ShapeError);
  }

  TEST_CASE("non-finite intermediate values are rejected at the producing op") {
    Tape tape;
    auto big = full({2}, 3e38f);
    CHECK_THROWS_AS(tape.add(big, big), NumericError);
    CHECK_THROWS_AS(tape.mul(big, big), NumericError);
  }

  TEST_CASE("backward requires a scalar loss and a watched graph") {
    Tape tape;
    auto x = tensor_from({2}, {1, 2});
    tape.watch(x);
    CHECK_THROWS_AS(tape.backward(tape.relu(x)), ContractError);

    // gradient lookup is tied to the tape that watched the leaf
    Tape other;
    auto loss = tape.mean_all(tape.mul(x, x));
    auto grads = tape.backward(loss);
    auto y = tensor_from({2}, {1, 2});
    other.watch(y);
    CHECK_THROWS_AS(grads.at(y), ContractError);

    // d mean(x*x) / dx = 2x/n
    CHECK(grads.at(x).vals()[0] == doctest::Approx(1.0));
    CHECK(grads.at(x).vals()[1] == doctest::Approx(2.0));
  }

  TEST_CASE("double backward on one tape is rejected") {
    Tape tape;
    auto x = tensor_from({2}, {1, 2});
    tape.watch(x);
    auto loss = tape.mean_all(tape.mul(x, x));
    (void)tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), StateError);
  }

  TEST_CASE("constants do not grow the gradient map") {
    Tape tape;
    auto x = tensor_from({2}, {1, 2});
    auto c = tensor_from({2}, {5, 5});
    tape.watch(x);
    auto grads = tape.backward(tape.mean_all(tape.mul(x, c)));
    CHECK(grads.contains(x.node));
    CHECK(grads.size() >= 1);
    CHECK(c.node == kNoNode);
  }
}
