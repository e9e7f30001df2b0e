#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "ace/gradcheck.hpp"
#include "ace/tensor.hpp"
#include "support/test_util.hpp"

using namespace ace;
using ace::test::random_tensor;

TEST_CASE("matmul identity") {
  CounterRng rng(7);
  TensorD x = random_tensor<double>({2, 5}, rng);
  TensorD eye = TensorD::from({2, 2}, {1, 0, 0, 1});
  TensorD y = matmul(eye, x);
  CHECK(ace::test::bit_equal(y.values(), x.values()));
}

TEST_CASE("matmul hand oracle") {
  TensorD a = TensorD::from({2, 3}, {1, 2, 3, 4, 5, 6});
  TensorD b = TensorD::from({3, 1}, {1, 0, 1});
  TensorD c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.values()[0] == doctest::Approx(4.0));
  CHECK(c.values()[1] == doctest::Approx(10.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  TensorD a = TensorD::zeros({2, 3});
  TensorD b = TensorD::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient equals row sums of B^T and passes gradcheck") {
  CounterRng rng(11);
  TensorD b = random_tensor<double>({3, 4}, rng);
  TensorD a0 = random_tensor<double>({2, 3}, rng);
  auto f = [&](TensorD& a) { return sum(matmul(a, b)); };
  auto rep = gradcheck<double>(f, a0, 1e-6, 1e-6);
  CHECK(rep.pass);
  // d sum(A B) / dA[i,k] = sum_j B[k,j]
  TensorD a = a0;
  a.set_requires_grad(true);
  a.zero_grad();
  backward(sum(matmul(a, b)));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      double row = 0;
      for (std::size_t j = 0; j < 4; ++j) row += b.values()[k * 4 + j];
      CHECK(a.grad()[i * 3 + k] == doctest::Approx(row).epsilon(1e-12));
    }
}

TEST_CASE("elementwise add zero is identity") {
  CounterRng rng(3);
  TensorD x = random_tensor<double>({3, 3}, rng);
  TensorD y = add(x, TensorD::zeros({3, 3}));
  CHECK(ace::test::bit_equal(y.values(), x.values()));
}

TEST_CASE("relu basic") {
  TensorD x = TensorD::from({3}, {-1, 0, 2});
  TensorD y = relu(x);
  CHECK(y.values()[0] == 0);
  CHECK(y.values()[1] == 0);
  CHECK(y.values()[2] == 2);
}

TEST_CASE("unary ops pass gradcheck at 64 random points (double)") {
  CounterRng rng(17);
  // Kink-free sampling per op domain; 64 coordinates in one tensor.
  auto check = [&](auto op, double lo, double hi, double margin) {
    TensorD x = sample_uniform_nonzero<double>({64}, lo, hi, rng, margin);
    auto f = [&](TensorD& t) { return sum(op(t)); };
    auto rep = gradcheck<double>(f, x, 1e-6, 1e-6);
    CHECK_MESSAGE(rep.pass, "max rel err ", rep.max_rel_err);
  };
  check([](const TensorD& t) { return exp(t); }, -2.0, 2.0, 0.0);
  check([](const TensorD& t) { return log(t); }, 0.1, 3.0, 0.0);
  check([](const TensorD& t) { return abs(t); }, -2.0, 2.0, 1e-3);
  check([](const TensorD& t) { return relu(t); }, -2.0, 2.0, 1e-3);
  check([](const TensorD& t) { return sigmoid(t); }, -3.0, 3.0, 0.0);
  check([](const TensorD& t) { return tanh(t); }, -3.0, 3.0, 0.0);
}

TEST_CASE("unary ops pass gradcheck in single precision") {
  CounterRng rng(18);
  TensorF x = sample_uniform_nonzero<float>({32}, -2.f, 2.f, rng, 1e-2f);
  auto f = [](TensorF& t) { return sum(mul(sigmoid(t), tanh(t))); };
  auto rep = gradcheck<float>(f, x, 1e-2f, 1e-2);
  CHECK_MESSAGE(rep.pass, "max rel err ", rep.max_rel_err);
}

TEST_CASE("abs subgradient at zero is zero") {
  TensorD x = TensorD::from({3}, {-1.0, 0.0, 2.0});
  x.set_requires_grad(true);
  backward(sum(abs(x)));
  CHECK(x.grad()[0] == -1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("log clamps below epsilon instead of producing NaN") {
  TensorD x = TensorD::from({2}, {0.0, -1.0});
  TensorD y = log(x);
  for (double v : y.values()) {
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(std::log(1e-7)));
  }
}

TEST_CASE("broadcasting trailing dims with gradient reduction") {
  TensorD a = TensorD::from({2, 3}, {1, 2, 3, 4, 5, 6});
  TensorD b = TensorD::from({3}, {10, 20, 30});
  b.set_requires_grad(true);
  TensorD y = add(a, b);
  CHECK(y.values()[0] == 11);
  CHECK(y.values()[5] == 36);
  backward(sum(y));
  for (std::size_t i = 0; i < 3; ++i) CHECK(b.grad()[i] == 2.0);  // two rows

  // [C,1,1] against [B,C,H,W]
  TensorD img = TensorD::ones({2, 3, 2, 2});
  TensorD bias = TensorD::from({3, 1, 1}, {1, 2, 3});
  bias.set_requires_grad(true);
  TensorD z = add(img, bias);
  CHECK(z.values()[0] == 2.0);
  backward(sum(z));
  for (std::size_t i = 0; i < 3; ++i) CHECK(bias.grad()[i] == 8.0);  // B*H*W
}

TEST_CASE("incompatible broadcast raises") {
  CHECK_THROWS_AS(add(TensorD::zeros({2, 3}), TensorD::zeros({2, 2})),
                  ShapeError);
}

TEST_CASE("reduce examples") {
  CHECK(sum(TensorD::ones({3, 4})).item() == 12.0);
  CHECK(mean(TensorD::from({2}, {2, 4})).item() == 3.0);

  TensorD x = TensorD::from({3}, {1, 3, 3});
  x.set_requires_grad(true);
  backward(max(x));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);  // first maximal element only
  CHECK(x.grad()[2] == 0.0);

  CHECK_THROWS_AS(sum(TensorD::zeros({0, 3})), DomainError);
}

TEST_CASE("axis reduction with keepdims") {
  TensorD x = TensorD::from({2, 3}, {1, 2, 3, 4, 5, 6});
  TensorD s = sum(x, {1});
  CHECK(s.shape() == Shape{2});
  CHECK(s.values()[0] == 6);
  CHECK(s.values()[1] == 15);
  TensorD k = sum(x, {1}, true);
  CHECK(k.shape() == Shape{2, 1});
  TensorD m = max(x, {0});
  CHECK(m.shape() == Shape{3});
  CHECK(m.values()[2] == 6);
}

TEST_CASE("backward basics") {
  CounterRng rng(5);
  TensorD x = random_tensor<double>({4}, rng);
  x.set_requires_grad(true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.0 * x.values()[i]).epsilon(1e-12));
}

TEST_CASE("backward requires scalar loss") {
  TensorD x = TensorD::ones({3});
  x.set_requires_grad(true);
  TensorD y = mul(x, x);
  CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("repeated backward accumulates") {
  TensorD x = TensorD::ones({3});
  x.set_requires_grad(true);
  TensorD loss = sum(x);
  backward(loss);
  backward(loss);
  for (double g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("shared subexpression accumulates like the unrolled tree") {
  CounterRng rng(23);
  TensorD x0 = random_tensor<double>({5}, rng);

  TensorD xa = TensorD::from({5}, std::vector<double>(x0.values().begin(),
                                                      x0.values().end()));
  xa.set_requires_grad(true);
  TensorD shared = mul(xa, xa);
  backward(add(sum(shared), sum(shared)));

  TensorD xb = TensorD::from({5}, std::vector<double>(x0.values().begin(),
                                                      x0.values().end()));
  xb.set_requires_grad(true);
  backward(add(sum(mul(xb, xb)), sum(mul(xb, xb))));

  CHECK(ace::test::bit_equal(xa.grad(), xb.grad()));
}

TEST_CASE("composite MLP loss gradcheck") {
  CounterRng rng(29);
  TensorD w1 = random_tensor<double>({6, 4}, rng, -0.5, 0.5);
  TensorD w2 = random_tensor<double>({1, 6}, rng, -0.5, 0.5);
  TensorD x = random_tensor<double>({3, 4}, rng);
  auto f = [&](TensorD& w) {
    TensorD h = tanh(matmul(x, transpose(w)));
    TensorD o = sigmoid(matmul(h, transpose(w2)));
    return sum(mul(o, o));
  };
  auto rep = gradcheck<double>(f, w1, 1e-6, 1e-5);
  CHECK_MESSAGE(rep.pass, "max rel err ", rep.max_rel_err);
}

TEST_CASE("gradcheck on a linear function reports near machine epsilon") {
  TensorD x = TensorD::from({4}, {1, 2, 3, 4});
  auto f = [](TensorD& t) { return sum(affine(t, 3.0, 1.0)); };
  auto rep = gradcheck<double>(f, x, 1e-6, 1e-9);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-9);
}

TEST_CASE("graph evaluation is deterministic") {
  auto run = [] {
    CounterRng rng(99);
    TensorD a = random_tensor<double>({8, 8}, rng);
    TensorD b = random_tensor<double>({8, 8}, rng);
    a.set_requires_grad(true);
    TensorD loss = sum(sigmoid(matmul(a, b)));
    backward(loss);
    std::vector<double> out(a.grad().begin(), a.grad().end());
    out.push_back(loss.item());
    return out;
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1 == r2);
}

TEST_CASE("gather/scatter rows round trip and accumulate") {
  TensorD x = TensorD::from({3, 2}, {1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  TensorD g = gather_rows(x, {2, 0, 2});
  CHECK(g.values()[0] == 5);
  CHECK(g.values()[4] == 5);
  backward(sum(g));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[4] == 2.0);  // row 2 gathered twice

  TensorD rows = TensorD::from({2, 2}, {1, 1, 2, 2});
  TensorD s = scatter_rows(rows, {1, 1}, 3);
  CHECK(s.values()[2] == 3.0);  // duplicate indices accumulate
  CHECK(s.values()[0] == 0.0);
}

TEST_CASE("select_block picks the labeled slice") {
  TensorD x = TensorD::from({2, 6}, {0, 1, 2, 3, 4, 5, 10, 11, 12, 13, 14, 15});
  x.set_requires_grad(true);
  TensorD y = select_block(x, {2, 0}, 2);
  CHECK(y.values()[0] == 4);
  CHECK(y.values()[1] == 5);
  CHECK(y.values()[2] == 10);
  CHECK(y.values()[3] == 11);
  backward(sum(y));
  CHECK(x.grad()[4] == 1.0);
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[6] == 1.0);
}

TEST_CASE("tensor dump/load round trip is bit exact") {
  CounterRng rng(41);
  TensorF x = random_tensor<float>({3, 5, 2}, rng);
  std::stringstream ss;
  dump_tensor(x, ss);
  TensorF y = load_tensor<float>(ss);
  CHECK(y.shape() == x.shape());
  CHECK(ace::test::bit_equal(x.values(), y.values()));

  std::stringstream truncated(ss.str().substr(0, 20));
  CHECK_THROWS_AS(load_tensor<float>(truncated), FormatError);
}
