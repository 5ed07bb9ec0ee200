#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "hialign/errors.hpp"
#include "hialign/gradcheck.hpp"
#include "hialign/hfat.hpp"
#include "hialign/kernels.hpp"
#include "hialign/ops.hpp"
#include "test_util.hpp"

using namespace hialign;
using hialign::testing::random_tensor;
using hialign::testing::random_uniform;
using hialign::testing::weighted_sum;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a.at(i, p) * b.at(p, j);
      c.at(i, j) = s;
    }
  return c;
}

// Gradchecks `op` applied to freshly drawn inputs over ten seeds.
template <typename Build>
void check_op_gradients(const std::vector<Shape>& shapes, Build build, double lo = -1.0, double hi = 1.0) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    ParameterStore store;
    for (std::size_t i = 0; i < shapes.size(); ++i)
      store.add("in" + std::to_string(i), random_uniform(shapes[i], rng, lo, hi));
    auto f = [&](Tape& tape, ParameterStore& ps) {
      std::vector<Var> xs;
      for (std::size_t i = 0; i < shapes.size(); ++i) xs.push_back(tape.param(ps, "in" + std::to_string(i)));
      return weighted_sum(tape, build(xs), seed);
    };
    const auto report = gradcheck(f, store);
    INFO("seed " << seed << " max rel err " << report.max_rel_err);
    CHECK(report.passed);
  }
}

}  // namespace

TEST_CASE("tensor invariants") {
  CHECK(Tensor().numel() == 1);
  CHECK(Tensor::scalar(3.0).rank() == 0);
  CHECK(Tensor({2, 3, 4}).numel() == 24);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  const Tensor t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(t.transposed().at(2, 1) == 6);
  CHECK(t.slice_rows(1, 2).at(0, 0) == 4);
}

TEST_CASE("matmul") {
  Tape tape;
  SUBCASE("identity") {
    Rng rng(1);
    const Tensor b = random_tensor({3, 4}, rng);
    CHECK(ops::matmul(tape.constant(Tensor::identity(3)), tape.constant(b)).value() == b);
  }
  SUBCASE("scalar product") {
    auto c = ops::matmul(tape.constant(Tensor::matrix({{2}})), tape.constant(Tensor::matrix({{3}})));
    CHECK(c.value().item() == 6.0);
  }
  SUBCASE("random against triple loop") {
    Rng rng(7);
    const Tensor a = random_tensor({5, 4}, rng), b = random_tensor({4, 3}, rng);
    CHECK(max_abs_diff(ops::matmul(tape.constant(a), tape.constant(b)).value(), naive_matmul(a, b)) < 1e-6);
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      ops::matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3})));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2, 3]") != std::string::npos);
    }
  }
}

TEST_CASE("softmax_temp") {
  Tape tape;
  SUBCASE("constant input is uniform for any tau") {
    for (double tau : {0.05, 1.0, 7.0}) {
      auto y = ops::softmax_temp(tape.constant(Tensor::vector({2, 2, 2, 2})), 0, tau);
      for (double v : y.value().data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
    }
  }
  SUBCASE("closed form (0, ln 3)") {
    auto y = ops::softmax_temp(tape.constant(Tensor::vector({0.0, std::log(3.0)})), 0, 1.0);
    CHECK(y.value()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y.value()[1] == doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("non-positive tau") {
    CHECK_THROWS_AS(ops::softmax_temp(tape.constant(Tensor::vector({1, 2})), 0, 0.0), DomainError);
    CHECK_THROWS_AS(ops::softmax_temp(tape.constant(Tensor::vector({1, 2})), 0, -1.0), DomainError);
  }
  SUBCASE("positivity, normalization and shift invariance on both axes") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor x = random_tensor({4, 6}, rng, 3.0);
      Tensor shifted = x;
      for (auto& v : shifted.storage()) v += 11.5;
      for (std::size_t axis : {0u, 1u}) {
        const double tau = 0.1 + rng.uniform();
        const auto y = ops::softmax_temp(tape.constant(x), axis, tau).value();
        const auto ys = ops::softmax_temp(tape.constant(shifted), axis, tau).value();
        CHECK(max_abs_diff(y, ys) < 1e-12);
        for (double v : y.data()) CHECK(v > 0.0);
        const std::size_t outer = axis == 0 ? 6 : 4, n = axis == 0 ? 4 : 6;
        for (std::size_t o = 0; o < outer; ++o) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += axis == 0 ? y.at(j, o) : y.at(o, j);
          CHECK(std::abs(s - 1.0) < 1e-6);
        }
      }
    }
  }
  SUBCASE("gradients including the learnable temperature") {
    check_op_gradients({{3, 5}, {}}, [](std::vector<Var> x) {
      return ops::softmax_temp(x[0], 0, ops::add(x[1], x[1].tape->constant(Tensor::scalar(2.0))));
    });
    check_op_gradients({{3, 5}}, [](std::vector<Var> x) { return ops::softmax_temp(x[0], 1, 0.3); });
  }
}

TEST_CASE("cosine_sim_matrix") {
  Tape tape;
  SUBCASE("unit column, orthogonal column and zero column") {
    const Tensor a = Tensor::matrix({{3, 0, 0}, {0, 2, 0}});
    Tensor cols({3, 3});
    cols.at(0, 1) = 1.0;  // column 1 = e0
    cols.at(1, 2) = 1.0;  // column 2 = e1
    auto s = ops::cosine_sim_matrix(tape.constant(a), tape.constant(cols)).value();
    CHECK(s.at(0, 1) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(s.at(0, 2) == 0.0);
    CHECK(std::abs(s.at(0, 0)) < 1e-6);
    CHECK(std::abs(s.at(1, 0)) < 1e-6);
  }
  SUBCASE("positive row scaling invariance and range") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor a = random_tensor({4, 6}, rng), b = random_tensor({6, 5}, rng);
      Tensor ac = a;
      const double c = 0.01 + 10.0 * rng.uniform();
      for (auto& v : ac.storage()) v *= c;
      const auto s1 = ops::cosine_sim_matrix(tape.constant(a), tape.constant(b)).value();
      const auto s2 = ops::cosine_sim_matrix(tape.constant(ac), tape.constant(b)).value();
      CHECK(max_abs_diff(s1, s2) < 1e-6);
      for (double v : s1.data()) CHECK((v >= -1.0 && v <= 1.0));
    }
  }
  SUBCASE("gradients") {
    check_op_gradients({{3, 4}, {4, 5}}, [](std::vector<Var> x) { return ops::cosine_sim_matrix(x[0], x[1]); });
  }
}

TEST_CASE("bce_mean") {
  Tape tape;
  SUBCASE("half predictions") {
    auto l = ops::bce_mean(tape.constant(Tensor::vector({0.5, 0.5})), Tensor::vector({1, 0}));
    CHECK(l.value().item() == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  }
  SUBCASE("predictions approaching the target") {
    auto l = ops::bce_mean(tape.constant(Tensor::vector({1 - 1e-9, 1e-9, 1 - 1e-9})), Tensor::vector({1, 0, 1}));
    CHECK(l.value().item() < 1e-8);
  }
  SUBCASE("matches a scalar loop") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor p = random_uniform({7}, rng, 0.01, 0.99);
      Tensor t({7});
      for (auto& v : t.storage()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
      double oracle = 0.0;
      for (std::size_t i = 0; i < 7; ++i) oracle += -(t[i] * std::log(p[i]) + (1 - t[i]) * std::log(1 - p[i]));
      oracle /= 7.0;
      CHECK(ops::bce_mean(tape.constant(p), t).value().item() == doctest::Approx(oracle).epsilon(1e-12));
    }
  }
  SUBCASE("out-of-range predictions are clamped and counted") {
    ops::reset_bce_clamp_events();
    auto l = ops::bce_mean(tape.constant(Tensor::vector({0.0, 1.0})), Tensor::vector({1, 0}));
    CHECK(std::isfinite(l.value().item()));
    CHECK(ops::bce_clamp_events() == 2);
  }
}

TEST_CASE("cross_entropy_logits") {
  Tape tape;
  SUBCASE("uniform logits") {
    const std::vector<int> tg{0, 3, 1};
    auto l = ops::cross_entropy_logits(tape.constant(Tensor({3, 4})), tg);
    CHECK(l.value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("confident correct logit") {
    Tensor logits({2, 5});
    logits.at(0, 2) = 20.0;
    logits.at(1, 4) = 20.0;
    const std::vector<int> tg{2, 4};
    CHECK(ops::cross_entropy_logits(tape.constant(logits), tg).value().item() < 1e-8);
  }
  SUBCASE("softmax-then-pick oracle with ignored rows") {
    Rng rng(11);
    const Tensor logits = random_tensor({5, 6}, rng, 2.0);
    const std::vector<int> tg{1, -1, 5, 0, -1};
    double oracle = 0.0;
    for (std::size_t i : {0u, 2u, 3u}) {
      double z = 0.0;
      for (std::size_t j = 0; j < 6; ++j) z += std::exp(logits.at(i, j));
      oracle -= std::log(std::exp(logits.at(i, static_cast<std::size_t>(tg[i]))) / z);
    }
    oracle /= 3.0;
    CHECK(ops::cross_entropy_logits(tape.constant(logits), tg, -1).value().item() ==
          doctest::Approx(oracle).epsilon(1e-12));
  }
  SUBCASE("all ignored") {
    const std::vector<int> tg{7, 7};
    CHECK_THROWS_AS(ops::cross_entropy_logits(tape.constant(Tensor({2, 3})), tg, 7), DomainError);
  }
  SUBCASE("gradients") {
    const std::vector<int> tg{2, 0, -1, 3};
    check_op_gradients({{4, 5}}, [&](std::vector<Var> x) { return ops::cross_entropy_logits(x[0], tg, -1); }, -3, 3);
  }
}

TEST_CASE("affine primitives") {
  Tape tape;
  Rng rng(13);
  SUBCASE("linear with identity weight") {
    const Tensor x = random_tensor({3, 4}, rng);
    auto y = ops::linear(tape.constant(x), tape.constant(Tensor::identity(4)), tape.constant(Tensor({4})));
    CHECK(y.value() == x);
  }
  SUBCASE("dropout with p = 0 and in eval mode") {
    const Tensor x = random_tensor({3, 4}, rng);
    Rng stream(1);
    CHECK(ops::dropout(tape.constant(x), 0.0, &stream, true).value() == x);
    CHECK(ops::dropout(tape.constant(x), 0.0, &stream, false).value() == x);
    CHECK(ops::dropout(tape.constant(x), 0.5, &stream, false).value() == x);
    CHECK_THROWS_AS(ops::dropout(tape.constant(x), 1.0, &stream, true), DomainError);
  }
  SUBCASE("dropout keeps expectation") {
    const Tensor x({20000}, 1.0);
    Rng stream(2);
    auto y = ops::dropout(tape.constant(x), 0.3, &stream, true);
    double s = 0.0;
    for (double v : y.value().data()) s += v;
    CHECK(s / 20000.0 == doctest::Approx(1.0).epsilon(0.03));
  }
  SUBCASE("layer norm of a constant row") {
    auto y = ops::layer_norm(tape.constant(Tensor({2, 5}, 3.25)), tape.constant(Tensor({5}, 1.0)),
                             tape.constant(Tensor({5})));
    CHECK(y.value().max_abs() == 0.0);
  }
  SUBCASE("batch norm train/eval") {
    const Tensor x = random_tensor({6, 3}, rng, 2.0);
    Tensor rm({3}), rv({3}, 1.0);
    ops::BatchNormState st{&rm, &rv};
    auto y = ops::batch_norm_1d(tape.constant(x), tape.constant(Tensor({3}, 1.0)), tape.constant(Tensor({3})), st, true);
    for (std::size_t j = 0; j < 3; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < 6; ++i) m += y.value().at(i, j);
      CHECK(std::abs(m / 6.0) < 1e-12);
    }
    CHECK(rm.max_abs() > 0.0);
    Tensor rm0({3}), rv1({3}, 1.0);
    ops::BatchNormState eval_state{&rm0, &rv1};
    auto e = ops::batch_norm_1d(tape.constant(x), tape.constant(Tensor({3}, 1.0)), tape.constant(Tensor({3})),
                                eval_state, false);
    CHECK(max_abs_diff(e.value(), x) < 1e-4);
  }
  SUBCASE("gradients") {
    check_op_gradients({{3, 4}, {5, 4}, {5}}, [](std::vector<Var> x) { return ops::linear(x[0], x[1], x[2]); });
    check_op_gradients({{3, 4}, {4}, {4}}, [](std::vector<Var> x) { return ops::layer_norm(x[0], x[1], x[2]); });
    check_op_gradients({{3, 4}}, [](std::vector<Var> x) { return ops::gelu(x[0]); }, -3, 3);
    check_op_gradients({{3, 4}, {3, 4}}, [](std::vector<Var> x) { return ops::mul(ops::add(x[0], x[1]), x[1]); });
    check_op_gradients({{5, 3}, {3}, {3}}, [](std::vector<Var> x) {
      static Tensor rm({3}), rv({3}, 1.0);
      return ops::batch_norm_1d(x[0], x[1], x[2], ops::BatchNormState{&rm, &rv}, true);
    });
    check_op_gradients({{5, 3}}, [](std::vector<Var> x) { return ops::temporal_downsample(x[0], 2); });
    check_op_gradients({{4, 3}, {}}, [](std::vector<Var> x) { return ops::div_scalar(x[0], ops::add(x[1], x[1].tape->constant(Tensor::scalar(3.0)))); });
    check_op_gradients({{4, 3}}, [](std::vector<Var> x) {
      static const bool mask[] = {true, false, true, true};
      return ops::mean_pool(x[0], mask);
    });
    check_op_gradients({{4, 3}}, [](std::vector<Var> x) { return ops::sum_axis(ops::slice_rows(x[0], 1, 4), 0); });
  }
}

TEST_CASE("backward") {
  SUBCASE("x^2 at 3") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0));
    tape.backward(ops::mul(x, x));
    CHECK(tape.grad(x).item() == 6.0);
  }
  SUBCASE("sum(W x) has outer-product structure") {
    Tape tape;
    Var w = tape.leaf(Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}));
    Var x = tape.constant(Tensor::matrix({{7}, {-2}}));
    tape.backward(ops::sum(ops::matmul(w, x)));
    const Tensor g = tape.grad(w);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(g.at(i, 0) == 7.0);
      CHECK(g.at(i, 1) == -2.0);
    }
  }
  SUBCASE("non-scalar loss") {
    Tape tape;
    Var x = tape.leaf(Tensor({2}));
    CHECK_THROWS_AS(tape.backward(x), ContractError);
  }
  SUBCASE("frozen leaves get zero") {
    ParameterStore store;
    store.add("a", Tensor::vector({1, 2}));
    store.add("b", Tensor::vector({3, 4})).frozen = true;
    Tape tape;
    tape.backward(ops::sum(ops::mul(tape.param(store, "a"), tape.param(store, "b"))));
    const auto grads = tape.param_grads(store);
    CHECK(grads.at("a") == Tensor::vector({3, 4}));
    CHECK(grads.at("b").max_abs() == 0.0);
  }
  SUBCASE("random composite graph matches finite differences") {
    check_op_gradients({{3, 4}, {4, 4}, {4}}, [](std::vector<Var> x) {
      Var h = ops::gelu(ops::linear(x[0], x[1], x[2]));
      Var s = ops::softmax_temp(ops::matmul(h, ops::transpose(x[1])), 1, 0.7);
      return ops::layer_norm(ops::add(s, x[0]), x[2], x[2]);
    });
  }
}

TEST_CASE("gradcheck") {
  SUBCASE("quadratic form") {
    ParameterStore store;
    store.add("x", Tensor::vector({0.3, -1.2, 2.0}));
    const Tensor a = Tensor::matrix({{2, 1, 0}, {1, 3, 1}, {0, 1, 4}});
    auto f = [&](Tape& tape, ParameterStore& ps) {
      Var x = ops::reshape(tape.param(ps, "x"), {3, 1});
      return ops::sum(ops::mul(x, ops::matmul(tape.constant(a), x)));
    };
    const auto r = gradcheck(f, store);
    CHECK(r.passed);
    CHECK(r.max_rel_err < 1e-8);
  }
  SUBCASE("softmax_temp then bce") {
    ParameterStore store;
    Rng rng(21);
    store.add("s", random_tensor({4, 5}, rng));
    store.add("tau", Tensor::scalar(0.5));
    const Tensor target = Tensor::vector({1, 0, 0, 1, 0});
    auto f = [&](Tape& tape, ParameterStore& ps) {
      Var y = ops::softmax_temp(tape.param(ps, "s"), 0, tape.param(ps, "tau"));
      return ops::bce_mean(ops::sum_axis(ops::mul(y, ops::softmax(tape.param(ps, "s"), 1)), 0), target);
    };
    const auto r = gradcheck(f, store);
    CHECK(r.passed);
    CHECK(r.max_rel_err <= 1e-4);
  }
}

TEST_CASE("nan check mode") {
  Tape::set_nan_check(true);
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 0.0}));  // 1 / 1e-320 overflows
  CHECK_THROWS_AS(ops::div_scalar(x, tape.constant(Tensor::scalar(1e-320))), NumericError);
  Tape::set_nan_check(false);
}

TEST_CASE("kernels: parallel matches serial bit for bit") {
  Rng rng(31);
  for (auto [m, k, n] : {std::tuple{3, 4, 5}, std::tuple{64, 48, 80}, std::tuple{129, 33, 65}}) {
    const Tensor a = random_tensor({std::size_t(m), std::size_t(k)}, rng);
    const Tensor b = random_tensor({std::size_t(k), std::size_t(n)}, rng);
    const Tensor bt = b.transposed();
    const Tensor at = a.transposed();
    Tensor c1({std::size_t(m), std::size_t(n)}), c2 = c1, c3 = c1, c4 = c1, c5 = c1, c6 = c1;
    kernels::gemm_nn(a.data(), b.data(), c1.data(), m, k, n);
    kernels::serial::gemm_nn(a.data(), b.data(), c2.data(), m, k, n);
    kernels::gemm_nt(a.data(), bt.data(), c3.data(), m, k, n);
    kernels::serial::gemm_nt(a.data(), bt.data(), c4.data(), m, k, n);
    kernels::gemm_tn(at.data(), b.data(), c5.data(), m, k, n);
    kernels::serial::gemm_tn(at.data(), b.data(), c6.data(), m, k, n);
    CHECK(c1 == c2);
    CHECK(c3 == c4);
    CHECK(c5 == c6);
    CHECK(max_abs_diff(c1, naive_matmul(a, b)) < 1e-9);
    CHECK(max_abs_diff(c3, c1) < 1e-9);
    Tensor s1 = a, s2 = a;
    kernels::softmax_rows(s1.data(), m, k);
    kernels::serial::softmax_rows(s2.data(), m, k);
    CHECK(s1 == s2);
  }
}

TEST_CASE("rng determinism") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(42).next_u64() != c.next_u64());
  CHECK(Rng(1).split("x").next_u64() == Rng(1).split("x").next_u64());
  CHECK(Rng(1).split("x").next_u64() != Rng(1).split("y").next_u64());
}

TEST_CASE("HFAT container") {
  Rng rng(41);
  const Tensor t = random_tensor({3, 2, 4}, rng);
  std::stringstream ss;
  hfat::write(ss, t, hfat::DType::kF64);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "HFAT");
  CHECK(static_cast<int>(bytes[4]) == 1);
  CHECK(static_cast<int>(bytes[5]) == 1);
  CHECK(bytes.size() == 4 + 1 + 1 + 4 + 3 * 8 + 24 * 8);
  std::stringstream in(bytes);
  CHECK(hfat::read(in) == t);

  std::stringstream ss32;
  hfat::write(ss32, t, hfat::DType::kF32);
  std::stringstream in32(ss32.str());
  const Tensor narrowed = hfat::read(in32);
  CHECK(max_abs_diff(narrowed, t) < 1e-6);

  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_WITH_AS(hfat::read(truncated), doctest::Contains("payload length"), LoadError);
  std::stringstream bad("HFBT");
  CHECK_THROWS_AS(hfat::read(bad), LoadError);
}
