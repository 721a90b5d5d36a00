#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "rislab/adam.hpp"
#include "rislab/complex_matrix.hpp"
#include "rislab/tape.hpp"
#include "rislab/tensor.hpp"
#include "test_support.hpp"

using namespace rislab;

namespace {

RealTensor random_tensor(std::mt19937_64& rng, std::size_t rows,
                         std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  RealTensor t(rows, cols);
  for (double& v : t.raw()) v = dist(rng);
  return t;
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("tensor layout invariant and finiteness check") {
  RealTensor t(2, 3, 1.5);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 1.5);

  CHECK_THROWS(RealTensor(2, 2, std::vector<double>{1.0}));

  RealTensor bad(1, 2, {1.0, std::nan("")});
  CHECK(testsup::throws_containing<std::domain_error>(
      [&] { bad.check_finite("weights"); }, "weights"));

  RealTensor a(1, 2, {1.0, 2.0});
  RealTensor b(1, 2, {1.5, 2.0});
  CHECK(RealTensor::max_abs_diff(a, b) == 0.5);
}

TEST_CASE("leaky relu and softmax match their defining values") {
  Tape t;
  const auto x = t.input(RealTensor::row({-1.0, 2.0}));
  const auto y = t.leaky_relu(x);
  CHECK(t.value(y)[0] == -0.01);
  CHECK(t.value(y)[1] == 2.0);

  const auto z = t.softmax(t.input(RealTensor::row({0.0, 0.0})));
  CHECK(t.value(z)[0] == 0.5);
  CHECK(t.value(z)[1] == 0.5);
}

TEST_CASE("matmul against the identity returns the operand") {
  std::mt19937_64 rng(7);
  Tape t;
  const RealTensor a = random_tensor(rng, 2, 3);
  const auto eye = t.constant(RealTensor(2, 2, {1.0, 0.0, 0.0, 1.0}));
  const auto prod = t.matmul(eye, t.input(a));
  CHECK(RealTensor::max_abs_diff(t.value(prod), a) == 0.0);
}

TEST_CASE("sum of squares backpropagates 2x") {
  Tape t;
  const auto x = t.input(RealTensor::row({1.0, 2.0}));
  const auto loss = t.sum_axis(t.square(x), 1);
  t.backward(loss);
  REQUIRE(t.has_grad(x));
  CHECK(t.grad(x)[0] == 2.0);
  CHECK(t.grad(x)[1] == 4.0);
}

TEST_CASE("constants never receive gradients") {
  SUBCASE("constant factor in a differentiable loss") {
    Tape t;
    const auto x = t.input(RealTensor::row({1.0, 2.0}));
    const auto c = t.constant(RealTensor::row({3.0, 4.0}));
    const auto loss = t.sum_axis(t.mul(x, c), 1);
    t.backward(loss);
    CHECK(t.grad(x)[0] == 3.0);
    CHECK(t.grad(x)[1] == 4.0);
    CHECK_FALSE(t.has_grad(c));
  }
  SUBCASE("loss independent of every input") {
    Tape t;
    const auto x = t.input(RealTensor::row({1.0, 2.0}));
    const auto c = t.constant(RealTensor::row({3.0, 4.0}));
    const auto loss = t.sum_axis(t.square(c), 1);
    t.backward(loss);
    CHECK_FALSE(t.has_grad(x));
    CHECK_FALSE(t.has_grad(c));
  }
}

TEST_CASE("broadcast adjoints are the matching sum-reductions") {
  Tape t;
  const auto a = t.input(RealTensor(2, 3, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0}));
  const auto row = t.input(RealTensor::row({10.0, 20.0, 30.0}));
  const auto col = t.input(RealTensor(2, 1, {2.0, 3.0}));
  const auto loss =
      t.sum_axis(t.sum_axis(t.mul(t.add(a, row), col), 1), 0);
  t.backward(loss);
  // d/da[r][c] = col[r]; d/drow[c] = sum_r col[r]; d/dcol[r] = sum_c (a+row).
  CHECK(t.grad(a).at(0, 1) == 2.0);
  CHECK(t.grad(a).at(1, 2) == 3.0);
  CHECK(t.grad(row)[0] == 5.0);
  CHECK(t.grad(col).at(0, 0) == (1.0 + 10.0) + (2.0 + 20.0) + (3.0 + 30.0));
  CHECK(t.grad(col).at(1, 0) == (4.0 + 10.0) + (5.0 + 20.0) + (6.0 + 30.0));
}

TEST_CASE("three-layer perceptron gradient matches finite differences") {
  const std::size_t d_in = 3, d_h = 4, d_out = 2, batch = 2;
  const double h = 1e-6;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 11);
    const RealTensor x = random_tensor(rng, batch, d_in);
    // Parameter order: w1, b1, w2, b2, w3, b3, flattened back to back.
    std::vector<RealTensor> shapes = {
        random_tensor(rng, d_in, d_h, 0.5), random_tensor(rng, 1, d_h, 0.5),
        random_tensor(rng, d_h, d_h, 0.5),  random_tensor(rng, 1, d_h, 0.5),
        random_tensor(rng, d_h, d_out, 0.5), random_tensor(rng, 1, d_out, 0.5)};
    std::vector<double> flat;
    for (const auto& s : shapes) {
      flat.insert(flat.end(), s.raw().begin(), s.raw().end());
    }

    const auto eval = [&](Tape& t, const std::vector<double>& w,
                          std::vector<Tape::NodeId>* ids) {
      std::size_t off = 0;
      std::vector<Tape::NodeId> p;
      for (const auto& s : shapes) {
        RealTensor v(s.rows(), s.cols(),
                     std::vector<double>(w.begin() + off,
                                         w.begin() + off + s.numel()));
        off += s.numel();
        p.push_back(t.input(std::move(v)));
      }
      const auto xin = t.constant(x);
      auto y = t.leaky_relu(t.add(t.matmul(xin, p[0]), p[1]));
      y = t.leaky_relu(t.add(t.matmul(y, p[2]), p[3]));
      y = t.leaky_relu(t.add(t.matmul(y, p[4]), p[5]));
      if (ids) *ids = p;
      return t.sum_axis(t.sum_axis(t.square(y), 1), 0);
    };

    // Scalar objective for the finite-difference probe.
    const auto f = [&](const std::vector<double>& w) {
      Tape t;
      const auto loss = eval(t, w, nullptr);
      return t.value(loss).at(0, 0);
    };

    Tape t;
    std::vector<Tape::NodeId> ids;
    const auto loss = eval(t, flat, &ids);
    t.backward(loss);
    const double f0 = t.value(loss).at(0, 0);
    std::vector<double> analytic;
    for (const auto id : ids) {
      REQUIRE(t.has_grad(id));
      const auto& g = t.grad(id).raw();
      analytic.insert(analytic.end(), g.begin(), g.end());
    }
    const std::vector<double> fd = oracles::fd_gradient(f, flat, h);
    CHECK(oracles::fd_max_rel_error(analytic, fd, f0, h) < 1e-5);
  }
}

TEST_CASE("identical graphs evaluate and differentiate bit-identically") {
  const auto run = [](RealTensor* grad_out) {
    std::mt19937_64 rng(42);
    Tape t;
    const auto x = t.input(random_tensor(rng, 3, 4));
    const auto w = t.input(random_tensor(rng, 4, 4));
    const auto y = t.softmax(t.matmul(t.leaky_relu(x), w));
    const auto loss = t.sum_axis(t.sum_axis(t.mul(y, y), 1), 0);
    t.backward(loss);
    *grad_out = t.grad(w);
    return t.value(loss).at(0, 0);
  };
  RealTensor g1, g2;
  const double v1 = run(&g1);
  const double v2 = run(&g2);
  CHECK(v1 == v2);
  CHECK(RealTensor::max_abs_diff(g1, g2) == 0.0);
}

TEST_CASE("softmax rows are stochastic and shift-invariant") {
  std::mt19937_64 rng(3);
  Tape t;
  const RealTensor logits = random_tensor(rng, 5, 4, 3.0);
  const auto a = t.input(logits);
  const auto s = t.softmax(a);
  for (std::size_t r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 4; ++c) sum += t.value(s).at(r, c);
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  const auto shifted = t.softmax(t.add_scalar(a, 7.25));
  CHECK(RealTensor::max_abs_diff(t.value(s), t.value(shifted)) <= 1e-12);
}

TEST_CASE("max_many routes the adjoint to the first maximal operand") {
  Tape t;
  const auto a = t.input(RealTensor::row({1.0, 3.0}));
  const auto b = t.input(RealTensor::row({2.0, 3.0}));
  const auto m = t.max_many({a, b});
  CHECK(t.value(m)[0] == 2.0);
  CHECK(t.value(m)[1] == 3.0);
  t.backward(t.sum_axis(m, 1));
  CHECK(t.grad(a)[0] == 0.0);
  CHECK(t.grad(a)[1] == 1.0);  // tie: first operand wins
  CHECK(t.grad(b)[0] == 1.0);
  CHECK(t.grad(b)[1] == 0.0);
}

TEST_CASE("slice and concat round trip values and gradients") {
  std::mt19937_64 rng(5);
  Tape t;
  const RealTensor xv = random_tensor(rng, 3, 4);
  const RealTensor wv = random_tensor(rng, 3, 4);
  const auto x = t.input(xv);
  const auto top = t.slice(x, 0, 1, 0, 4);
  const auto bottom = t.slice(x, 1, 3, 0, 4);
  const auto glued = t.concat({top, bottom}, 0);
  CHECK(RealTensor::max_abs_diff(t.value(glued), xv) == 0.0);
  const auto w = t.constant(wv);
  t.backward(t.sum_axis(t.sum_axis(t.mul(glued, w), 1), 0));
  CHECK(RealTensor::max_abs_diff(t.grad(x), wv) == 0.0);
}

TEST_CASE("per-row kernel map applies each block to its own row") {
  // Row r of the output is x[r,:] times the r-th 2x3 kernel block.
  auto kernels = std::make_shared<std::vector<double>>(std::vector<double>{
      1.0, 0.0, 2.0, 0.0, 1.0, -1.0,   // row 0 kernel (2x3)
      0.5, 0.5, 0.0, 1.0, 0.0, 1.0});  // row 1 kernel
  Tape t;
  const auto x = t.input(RealTensor(2, 2, {1.0, 2.0, 3.0, 4.0}));
  const auto y = t.linmap_rows(x, kernels, 2, 3);
  REQUIRE(t.value(y).rows() == 2);
  REQUIRE(t.value(y).cols() == 3);
  CHECK(t.value(y).at(0, 0) == 1.0);
  CHECK(t.value(y).at(0, 1) == 2.0);
  CHECK(t.value(y).at(0, 2) == 0.0);
  CHECK(t.value(y).at(1, 0) == 0.5 * 3.0 + 1.0 * 4.0);
  CHECK(t.value(y).at(1, 2) == 4.0);
  t.backward(t.sum_axis(t.sum_axis(y, 1), 0));
  // d loss / dx[r, i] = sum_o K_r[i, o].
  CHECK(t.grad(x).at(0, 0) == 3.0);
  CHECK(t.grad(x).at(0, 1) == 0.0);
  CHECK(t.grad(x).at(1, 0) == 1.0);
  CHECK(t.grad(x).at(1, 1) == 2.0);
}

TEST_CASE("unit modulus normalizes pairs and zeroes dead units") {
  Tape t;
  // Layout [Re block | Im block]; pairs are (3,4) and (0,0).
  const auto x = t.input(RealTensor::row({3.0, 0.0, 4.0, 0.0}));
  const auto y = t.unit_modulus(x);
  CHECK(t.value(y)[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(t.value(y)[2] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(t.value(y)[1] == 1.0);  // dead pair pinned to 1+0j
  CHECK(t.value(y)[3] == 0.0);
  CHECK(t.dead_unit_count() == 1);

  const auto w = t.constant(RealTensor::row({1.0, 2.0, -1.0, 3.0}));
  t.backward(t.sum_axis(t.mul(y, w), 1));
  // Dead pair: zero gradient on both coordinates.
  CHECK(t.grad(x)[1] == 0.0);
  CHECK(t.grad(x)[3] == 0.0);
  // Live pair: match finite differences of the same weighted readout.
  const auto f = [&](const std::vector<double>& v) {
    const double mag = std::hypot(v[0], v[1]);
    return 1.0 * v[0] / mag + (-1.0) * v[1] / mag;
  };
  const auto fd = oracles::fd_gradient(f, {3.0, 4.0}, 1e-6);
  CHECK(oracles::fd_rel_error(t.grad(x)[0], fd[0], f({3.0, 4.0}), 1e-6) < 1e-5);
  CHECK(oracles::fd_rel_error(t.grad(x)[2], fd[1], f({3.0, 4.0}), 1e-6) < 1e-5);
}

TEST_CASE("adam ignores parameters without gradients") {
  std::map<std::string, RealTensor> params{{"w", RealTensor::row({1.0, 2.0})}};
  AdamState state{AdamConfig{}};
  std::map<std::string, RealTensor> grads;
  adam_step(params, grads, state);
  CHECK(params.at("w")[0] == 1.0);
  CHECK(params.at("w")[1] == 2.0);
  CHECK(state.step_count() == 1);

  grads["w"] = RealTensor::row({0.0, 0.0});
  adam_step(params, grads, state);
  CHECK(params.at("w")[0] == 1.0);
  CHECK(params.at("w")[1] == 2.0);
}

TEST_CASE("adam first step against a unit gradient moves by about -lr") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  std::map<std::string, RealTensor> params{{"w", RealTensor::scalar(1.0)}};
  std::map<std::string, RealTensor> grads{{"w", RealTensor::scalar(1.0)}};
  AdamState state{cfg};
  adam_step(params, grads, state);
  CHECK(std::abs(params.at("w").at(0, 0) - 0.9) < 1e-8);

  oracles::ScalarAdam ref;
  ref.lr = 0.1;
  // Tolerance instead of equality: the library build may contract multiplies
  // and adds into fused instructions that the reference build does not.
  CHECK(std::abs(params.at("w").at(0, 0) - ref.step(1.0, 1.0)) <= 1e-15);
}

TEST_CASE("adam matches the scalar recurrence on a quadratic") {
  for (const double wd : {0.0, 0.1}) {
    AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = wd;
    std::map<std::string, RealTensor> params{{"theta", RealTensor::scalar(1.0)}};
    AdamState state{cfg};
    oracles::ScalarAdam ref;
    ref.lr = 0.1;
    ref.weight_decay = wd;
    double ref_theta = 1.0;
    for (int step = 0; step < 100; ++step) {
      const double theta = params.at("theta").at(0, 0);
      std::map<std::string, RealTensor> grads{
          {"theta", RealTensor::scalar(2.0 * theta)}};
      adam_step(params, grads, state);
      ref_theta = ref.step(ref_theta, 2.0 * ref_theta);
      CHECK(std::abs(params.at("theta").at(0, 0) - ref_theta) <=
            1e-12 * std::max(1.0, std::abs(ref_theta)));
    }
    CHECK(std::abs(params.at("theta").at(0, 0)) < 0.05);
    CHECK(state.step_count() == 100);
  }
}

TEST_CASE("adam rejects malformed gradient maps") {
  std::map<std::string, RealTensor> params{{"w", RealTensor::scalar(1.0)}};
  AdamState state{AdamConfig{}};

  std::map<std::string, RealTensor> nan_grads{
      {"w", RealTensor::scalar(std::nan(""))}};
  CHECK(testsup::throws_containing<std::domain_error>(
      [&] { adam_step(params, nan_grads, state); }, "w"));

  std::map<std::string, RealTensor> unknown{{"ghost", RealTensor::scalar(1.0)}};
  CHECK_THROWS_AS(adam_step(params, unknown, state), std::invalid_argument);

  std::map<std::string, RealTensor> bad_shape{{"w", RealTensor::row({1.0, 2.0})}};
  CHECK_THROWS_AS(adam_step(params, bad_shape, state), std::invalid_argument);
}

TEST_CASE("complex primitives match hand values") {
  ComplexMatrix v(1, 2);
  v.at(0, 0) = cplx(1.0, 0.0);
  v.at(0, 1) = cplx(0.0, 1.0);
  ComplexMatrix ones_col(2, 1, cplx(1.0, 0.0));
  const ComplexMatrix dv = multiply(diag_from_vector(v), ones_col);
  CHECK(std::abs(dv.at(0, 0) - cplx(1.0, 0.0)) == 0.0);
  CHECK(std::abs(dv.at(1, 0) - cplx(0.0, 1.0)) == 0.0);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> dist;
  ComplexMatrix a(3, 2);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 2; ++c) a.at(r, c) = cplx(dist(rng), dist(rng));
  }
  CHECK(testsup::cmax_abs_diff(hermitian(hermitian(a)), a) == 0.0);
}

TEST_CASE("hpd solve: scaled identity, residual bound, conditioning guard") {
  ComplexMatrix two_eye = scalar_multiply(ComplexMatrix::identity(3), 2.0);
  ComplexMatrix b(3, 1);
  b.at(0, 0) = cplx(1.0, 1.0);
  b.at(1, 0) = cplx(-2.0, 0.5);
  b.at(2, 0) = cplx(0.0, -3.0);
  const ComplexMatrix x = solve_hpd(two_eye, b);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(std::abs(x.at(r, 0) - b.at(r, 0) / 2.0) <= 1e-15);
  }

  std::mt19937_64 rng(21);
  std::normal_distribution<double> dist;
  ComplexMatrix m(4, 4);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) m.at(r, c) = cplx(dist(rng), dist(rng));
  }
  const ComplexMatrix a = add(multiply(hermitian(m), m),
                              ComplexMatrix::identity(4));
  ComplexMatrix rhs(4, 1);
  for (std::size_t r = 0; r < 4; ++r) rhs.at(r, 0) = cplx(dist(rng), dist(rng));
  const ComplexMatrix sol = solve_hpd(a, rhs);
  const ComplexMatrix resid = subtract(multiply(a, sol), rhs);
  CHECK(frobenius_norm(resid) <= 1e-9 * frobenius_norm(rhs));

  ComplexMatrix ill = ComplexMatrix::identity(2);
  ill.at(1, 1) = cplx(1e-13, 0.0);
  CHECK_THROWS_AS(solve_hpd(ill, ComplexMatrix(2, 1, cplx(1.0, 0.0))),
                  std::domain_error);
}

}  // TEST_SUITE("numerics")
