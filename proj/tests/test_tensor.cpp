#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fixformer/errors.hpp"
#include "fixformer/ops.hpp"
#include "fixformer/tensor.hpp"
#include "test_support.hpp"

using namespace fixformer;
using testsup::check_op_gradients;
using testsup::random_tensor;

TEST_CASE("tensor basics") {
  Tensor a({2, 3}, 0.5);
  CHECK(a.rows() == 2);
  CHECK(a.cols() == 3);
  CHECK(a.size() == 6);
  CHECK(a.at(1, 2) == 0.5);
  CHECK_FALSE(a.requires_grad());

  Tensor s = Tensor::scalar(3.0);
  CHECK(s.is_scalar());
  CHECK(s.value() == 3.0);

  CHECK_THROWS_AS(Tensor({2, 0}, 0.0), ContractError);
  Tensor undef;
  CHECK_FALSE(undef.defined());
}

TEST_CASE("matmul identity and annihilator") {
  auto r = testsup::rng(1);
  Tensor a = random_tensor({3, 3}, r);
  Tensor eye({3, 3}, 0.0);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor p = matmul(a, eye);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(p.data()[i] == doctest::Approx(a.data()[i]).epsilon(1e-15));

  Tensor z({3, 4}, 0.0);
  Tensor q = matmul(a, z);
  for (double v : q.data()) CHECK(v == 0.0);
}

TEST_CASE("matmul against triple loop") {
  auto r = testsup::rng(2);
  Tensor a = random_tensor({3, 4}, r);
  Tensor b = random_tensor({4, 2}, r);
  Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3}, 1.0);
  Tensor b({4, 2}, 1.0);
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("softmax rows frozen values") {
  Tensor x({1, 2}, std::vector<double>{0.0, 0.0});
  Tensor y = softmax_rows(x);
  CHECK(y.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

  Tensor big({1, 2}, std::vector<double>{1000.0, 0.0});
  Tensor yb = softmax_rows(big);
  CHECK(std::abs(yb.at(0, 0) - 1.0) < 1e-12);
  CHECK(std::abs(yb.at(0, 1) - 0.0) < 1e-12);

  Tensor t({1, 3}, std::vector<double>{1.0, 2.0, 3.0});
  Tensor yt = softmax_rows(t);
  CHECK(yt.at(0, 0) == doctest::Approx(0.09003057317038046).epsilon(1e-14));
  CHECK(yt.at(0, 1) == doctest::Approx(0.24472847105479767).epsilon(1e-14));
  CHECK(yt.at(0, 2) == doctest::Approx(0.6652409557748219).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one across magnitudes") {
  auto r = testsup::rng(3);
  for (double mag : {1.0, 10.0, 100.0, 1000.0}) {
    Tensor x = random_tensor({5, 7}, r, -mag, mag);
    Tensor y = softmax_rows(x);
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        double v = y.at(i, j);
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("layernorm constant row reduces to bias") {
  Tensor x({2, 4}, 5.0);
  Tensor gain({1, 4}, 1.0);
  Tensor bias({1, 4}, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  Tensor y = layernorm_rows(x, gain, bias, 1e-5);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(y.at(i, j) == doctest::Approx(bias.at(0, j)).epsilon(1e-12));
}

TEST_CASE("layernorm two-point row") {
  Tensor x({1, 2}, std::vector<double>{1.0, -1.0});
  Tensor gain({1, 2}, 1.0);
  Tensor bias({1, 2}, 0.0);
  double eps = 1e-5;
  Tensor y = layernorm_rows(x, gain, bias, eps);
  double expect = 1.0 / std::sqrt(1.0 + eps);
  CHECK(y.at(0, 0) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(y.at(0, 1) == doctest::Approx(-expect).epsilon(1e-14));
}

TEST_CASE("layernorm random row against direct formula") {
  auto r = testsup::rng(4);
  Tensor x = random_tensor({3, 6}, r, -2.0, 2.0);
  Tensor gain = random_tensor({1, 6}, r, 0.5, 1.5);
  Tensor bias = random_tensor({1, 6}, r, -0.5, 0.5);
  double eps = 1e-5;
  Tensor y = layernorm_rows(x, gain, bias, eps);
  for (std::size_t i = 0; i < 3; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < 6; ++j) mean += x.at(i, j);
    mean /= 6.0;
    double var = 0.0;
    for (std::size_t j = 0; j < 6; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= 6.0;
    for (std::size_t j = 0; j < 6; ++j) {
      double expect = gain.at(0, j) * (x.at(i, j) - mean) / std::sqrt(var + eps) + bias.at(0, j);
      CHECK(y.at(i, j) == doctest::Approx(expect).epsilon(1e-13));
    }
  }
}

TEST_CASE("gelu frozen points") {
  Tensor x({1, 5}, std::vector<double>{0.0, 10.0, -10.0, 1.0, -1.0});
  Tensor y = gelu(x);
  CHECK(y.at(0, 0) == 0.0);
  CHECK(y.at(0, 1) == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(std::abs(y.at(0, 2)) < 1e-14);
  CHECK(y.at(0, 3) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  double phi1 = 0.5 * std::erfc(1.0 / std::sqrt(2.0));
  CHECK(y.at(0, 4) == doctest::Approx(-phi1).epsilon(1e-12));
}

TEST_CASE("cross entropy uniform logits") {
  Tensor logits({2, 4}, 0.0);
  Tensor loss = cross_entropy_mean(logits, {0, 3});
  CHECK(loss.value() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("cross entropy label bounds") {
  Tensor logits({1, 3}, 0.0);
  CHECK_THROWS_AS(cross_entropy_mean(logits, {3}), ContractError);
  CHECK_THROWS_AS(cross_entropy_mean(logits, {0, 1}), DimensionError);
}

TEST_CASE("backward of plain sum is ones") {
  auto r = testsup::rng(5);
  Tensor x = random_tensor({3, 4}, r, -1.0, 1.0, true);
  GradTape tape;
  TapeScope scope(tape);
  Tensor loss = sum_all(x);
  tape.backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum of squares") {
  Tensor x({1, 2}, std::vector<double>{1.0, 2.0}, true);
  GradTape tape;
  TapeScope scope(tape);
  Tensor loss = sum_all(mul(x, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("backward requires scalar loss on the active tape") {
  Tensor x({2, 2}, 1.0, true);
  GradTape tape;
  Tensor y;
  {
    TapeScope scope(tape);
    y = mul(x, x);
  }
  CHECK_THROWS_AS(tape.backward(y), ContractError);

  Tensor off = Tensor::scalar(1.0);
  CHECK_THROWS_AS(tape.backward(off), ContractError);
}

TEST_CASE("tape replays every recorded op exactly once") {
  auto r = testsup::rng(6);
  Tensor x = random_tensor({2, 3}, r, -1.0, 1.0, true);
  Tensor w = random_tensor({3, 3}, r, -1.0, 1.0, true);
  GradTape tape;
  TapeScope scope(tape);
  Tensor h = gelu(matmul(x, w));
  Tensor loss = sum_all(h);
  std::size_t ops = tape.op_count();
  CHECK(ops == 3);
  tape.backward(loss);
  CHECK(tape.replay_count() == ops);
}

TEST_CASE("backward does not mutate forward values") {
  auto r = testsup::rng(7);
  Tensor x = random_tensor({2, 3}, r, -1.0, 1.0, true);
  GradTape tape;
  TapeScope scope(tape);
  Tensor y = softmax_rows(mul(x, x));
  Tensor loss = sum_all(y);
  std::vector<double> y_before = y.data();
  std::vector<double> x_before = x.data();
  tape.backward(loss);
  CHECK(y.data() == y_before);
  CHECK(x.data() == x_before);
}

TEST_CASE("gradients accumulate until zeroed and are bit identical across reruns") {
  auto r = testsup::rng(8);
  Tensor x = random_tensor({2, 2}, r, -1.0, 1.0, true);
  auto run = [&]() {
    GradTape tape;
    TapeScope scope(tape);
    Tensor loss = sum_all(mul(x, x));
    tape.backward(loss);
  };
  run();
  std::vector<double> g1 = x.grad();
  run();
  std::vector<double> g2 = x.grad();
  for (std::size_t i = 0; i < g1.size(); ++i)
    CHECK(g2[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-15));
  x.zero_grad();
  run();
  CHECK(x.grad() == g1);
}

TEST_CASE("ops off tape leave no gradient state") {
  Tensor x({2, 2}, 1.5, true);
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("finite guard rejects NaN products") {
  Tensor a({1, 1}, std::numeric_limits<double>::infinity());
  Tensor b({1, 1}, 0.0);
  CHECK_THROWS_AS(matmul(a, b), NumericError);
  set_finite_checks(false);
  CHECK_NOTHROW(matmul(a, b));
  set_finite_checks(true);
}

TEST_CASE("row slice and concat invert each other") {
  auto r = testsup::rng(9);
  Tensor x = random_tensor({7, 3}, r);
  Tensor top = row_slice(x, 0, 4);
  Tensor bot = row_slice(x, 4, 7);
  Tensor back = concat_rows({top, bot});
  CHECK(back.data() == x.data());

  Tensor left = col_slice(x, 0, 2);
  Tensor right = col_slice(x, 2, 3);
  Tensor cback = concat_cols({left, right});
  CHECK(cback.data() == x.data());
}

TEST_CASE("finite difference agreement for every op") {
  auto r = testsup::rng(10);
  double tol = 1e-4;

  SUBCASE("matmul") {
    Tensor a = random_tensor({3, 4}, r);
    Tensor b = random_tensor({4, 2}, r);
    double err = check_op_gradients([&]() { return matmul(a, b); }, {a, b});
    CHECK(err < tol);
  }
  SUBCASE("linear with bias") {
    Tensor x = random_tensor({3, 4}, r);
    Tensor w = random_tensor({2, 4}, r);
    Tensor b = random_tensor({1, 2}, r);
    double err = check_op_gradients([&]() { return linear(x, w, b); }, {x, w, b});
    CHECK(err < tol);
  }
  SUBCASE("add sub mul scale") {
    Tensor a = random_tensor({2, 3}, r);
    Tensor b = random_tensor({2, 3}, r);
    CHECK(check_op_gradients([&]() { return add(a, b); }, {a, b}) < tol);
    CHECK(check_op_gradients([&]() { return sub(a, b); }, {a, b}) < tol);
    CHECK(check_op_gradients([&]() { return mul(a, b); }, {a, b}) < tol);
    CHECK(check_op_gradients([&]() { return scale(a, -1.7); }, {a}) < tol);
  }
  SUBCASE("add_bias") {
    Tensor x = random_tensor({3, 4}, r);
    Tensor b = random_tensor({1, 4}, r);
    CHECK(check_op_gradients([&]() { return add_bias(x, b); }, {x, b}) < tol);
  }
  SUBCASE("transpose") {
    Tensor a = random_tensor({3, 5}, r);
    CHECK(check_op_gradients([&]() { return transpose(a); }, {a}) < tol);
  }
  SUBCASE("softmax") {
    Tensor x = random_tensor({3, 5}, r, -2.0, 2.0);
    CHECK(check_op_gradients([&]() { return softmax_rows(x); }, {x}) < tol);
  }
  SUBCASE("layernorm") {
    Tensor x = random_tensor({3, 6}, r, -2.0, 2.0);
    Tensor gain = random_tensor({1, 6}, r, 0.5, 1.5);
    Tensor bias = random_tensor({1, 6}, r, -0.5, 0.5);
    CHECK(check_op_gradients([&]() { return layernorm_rows(x, gain, bias, 1e-5); },
                             {x, gain, bias}) < tol);
  }
  SUBCASE("gelu") {
    Tensor x = random_tensor({3, 4}, r, -3.0, 3.0);
    CHECK(check_op_gradients([&]() { return gelu(x); }, {x}) < tol);
  }
  SUBCASE("slices and concats") {
    Tensor x = random_tensor({6, 4}, r);
    CHECK(check_op_gradients([&]() { return row_slice(x, 1, 4); }, {x}) < tol);
    CHECK(check_op_gradients([&]() { return col_slice(x, 1, 3); }, {x}) < tol);
    Tensor a = random_tensor({2, 3}, r);
    Tensor b = random_tensor({4, 3}, r);
    CHECK(check_op_gradients([&]() { return concat_rows({a, b}); }, {a, b}) < tol);
    Tensor c = random_tensor({3, 2}, r);
    Tensor d = random_tensor({3, 5}, r);
    CHECK(check_op_gradients([&]() { return concat_cols({c, d}); }, {c, d}) < tol);
  }
  SUBCASE("cross entropy") {
    Tensor logits = random_tensor({4, 3}, r, -2.0, 2.0, true);
    std::vector<int> labels{0, 2, 1, 2};
    auto loss_value = [&]() {
      return cross_entropy_mean(logits, labels).value();
    };
    auto populate = [&]() {
      logits.zero_grad();
      GradTape tape;
      TapeScope scope(tape);
      tape.backward(cross_entropy_mean(logits, labels));
    };
    populate();
    GradCheckSettings st;
    auto rep = check_param_gradient("logits", logits, logits.grad(), loss_value, st);
    CHECK(rep.max_rel_err < tol);
  }
}

TEST_CASE("gradcheck harness flags corrupted gradients") {
  auto r = testsup::rng(11);
  Tensor x = random_tensor({2, 3}, r, -1.0, 1.0, true);
  auto loss_value = [&]() {
    Tensor y = mul(x, x);
    return sum_all(y).value();
  };
  auto populate = [&]() {
    GradTape tape;
    TapeScope scope(tape);
    tape.backward(sum_all(mul(x, x)));
  };
  std::vector<NamedParam> params{{"x", x}};
  GradCheckSettings st;
  auto reports = gradcheck_all(params, loss_value, populate, st);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].passed);

  st.corrupt_group = "x";
  auto bad = gradcheck_all(params, loss_value, populate, st);
  CHECK_FALSE(bad[0].passed);
  CHECK(bad[0].max_rel_err > 1e-2);
}
