#include <cmath>
#include <limits>
#include <random>

#include "acl/error.hpp"
#include "acl/gradcheck.hpp"
#include "acl/tensor.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace acl;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_SUITE("primitives") {
  TEST_CASE("matmul of 1x2 by 2x1") {
    auto c = matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4}));
    CHECK(c.shape() == Shape{1, 1});
    CHECK(c.item() == 11.0);
  }

  TEST_CASE("relu clamps negatives") {
    CHECK(to_vec(relu(Tensor::vector({-1, 0, 2})).values()) == std::vector<double>{0, 0, 2});
  }

  TEST_CASE("gradient of sum of squares") {
    auto x = Tensor::vector({1, 2, 3}, true);
    sum(x * x).backward();
    CHECK(to_vec(x.grad()) == std::vector<double>{2, 4, 6});
  }

  TEST_CASE("gradient of a dot product") {
    auto x = Tensor::vector({1, 2}, true);
    auto y = Tensor::vector({3, 4}, true);
    sum(x * y).backward();
    CHECK(to_vec(x.grad()) == std::vector<double>{3, 4});
    CHECK(to_vec(y.grad()) == std::vector<double>{1, 2});
  }

  TEST_CASE("a node used twice accumulates") {
    auto x = Tensor::scalar(1.0, true);
    (x + x).backward();
    CHECK(x.grad()[0] == 2.0);
  }

  TEST_CASE("leaf gradients accumulate across backward calls until zeroed") {
    auto x = Tensor::vector({1, 2}, true);
    sum(x).backward();
    sum(x).backward();
    CHECK(to_vec(x.grad()) == std::vector<double>{2, 2});
    x.zero_grad();
    CHECK(to_vec(x.grad()) == std::vector<double>{0, 0});
  }

  TEST_CASE("shape and domain errors") {
    CHECK_THROWS_AS(add(Tensor::vector({1, 2}), Tensor::vector({1})), ShapeError);
    CHECK_THROWS_AS(matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(1, 2, {1, 2})),
                    ShapeError);
    CHECK_THROWS_AS(log(Tensor::vector({1, 0})), DomainError);
    CHECK_THROWS_AS(log(Tensor::vector({-1})), DomainError);
    CHECK_THROWS_AS(div(Tensor::vector({1}), Tensor::vector({0})), DomainError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  }

  TEST_CASE("non-finite values surface as errors") {
    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(Tensor::vector({1, inf}), NumericError);
    CHECK_THROWS_AS(exp(Tensor::vector({1000.0})), NumericError);
  }

  TEST_CASE("backward needs a scalar") {
    auto x = Tensor::vector({1, 2}, true);
    CHECK_THROWS_AS((x * x).backward(), ShapeError);
  }

  TEST_CASE("no-grad guard records nothing") {
    auto x = Tensor::vector({1, 2}, true);
    Tensor y;
    {
      NoGradGuard guard;
      y = x * x;
    }
    CHECK_FALSE(y.requires_grad());
    CHECK(grad_enabled());
  }

  TEST_CASE("detach cuts the graph") {
    auto x = Tensor::vector({1, 2}, true);
    auto d = (x * x).detach();
    CHECK_FALSE(d.requires_grad());
    CHECK(to_vec(d.values()) == std::vector<double>{1, 4});
  }

  TEST_CASE("layout ops") {
    auto m = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
    CHECK(to_vec(transpose(m).values()) == std::vector<double>{1, 3, 5, 2, 4, 6});
    CHECK(to_vec(slice_rows(m, 1, 3).values()) == std::vector<double>{3, 4, 5, 6});
    const std::vector<std::size_t> rows{2, 0, 2};
    CHECK(to_vec(index_rows(m, rows).values()) == std::vector<double>{5, 6, 1, 2, 5, 6});
    const std::vector<std::size_t> cols{1, 0, 1};
    CHECK(to_vec(pick(m, cols).values()) == std::vector<double>{2, 3, 6});
    auto cat = concat_rows({m, slice_rows(m, 0, 1)});
    CHECK(cat.shape() == Shape{4, 2});
    CHECK(to_vec(sum_rows(m).values()) == std::vector<double>{3, 7, 11});
  }

  TEST_CASE("maxpool picks the window maximum") {
    auto x = Tensor::matrix(1, 16, {1, 2, 0, 0,   //
                                    3, 4, 0, 9,   //
                                    5, 0, 1, 1,   //
                                    0, 0, 1, 2});
    CHECK(to_vec(maxpool2x2(x, 1, 4, 4).values()) == std::vector<double>{4, 9, 5, 2});
  }

  TEST_CASE("conv2d agrees with a direct 3x3 convolution") {
    std::mt19937_64 rng(11);
    const kernels::ConvGeometry geo{2, 4, 5, 3, 1};
    auto x = random_tensor(rng, {2, 2 * 4 * 5});
    auto w = random_tensor(rng, {geo.patch_size(), 3});
    auto b = random_tensor(rng, {3});
    auto y = conv2d(x, w, b, geo);
    REQUIRE(y.shape() == Shape{2, 3 * 4 * 5});
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t o = 0; o < 3; ++o)
        for (long r = 0; r < 4; ++r)
          for (long c = 0; c < 5; ++c) {
            double acc = b[o];
            for (std::size_t ch = 0; ch < 2; ++ch)
              for (long ky = 0; ky < 3; ++ky)
                for (long kx = 0; kx < 3; ++kx) {
                  const long yy = r + ky - 1, xx = c + kx - 1;
                  if (yy < 0 || xx < 0 || yy >= 4 || xx >= 5) continue;
                  acc += x.at(s, (ch * 4 + yy) * 5 + xx) *
                         w.at((ch * 3 + ky) * 3 + kx, o);
                }
            CHECK(y.at(s, (o * 4 + r) * 5 + c) == doctest::Approx(acc).epsilon(1e-12));
          }
  }
}

TEST_SUITE("similarity") {
  TEST_CASE("cosine similarity examples") {
    CHECK(cosine_similarity(Tensor::vector({1, 0}), Tensor::vector({0, 1})).item() == 0.0);
    CHECK(cosine_similarity(Tensor::vector({1, 1}), Tensor::vector({2, 2})).item() ==
          doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_similarity(Tensor::vector({1, 0}), Tensor::vector({-1, 0})).item() == -1.0);
  }

  TEST_CASE("cosine of a zero vector is an error") {
    CHECK_THROWS_AS(cosine_similarity(Tensor::vector({0, 0}), Tensor::vector({1, 0})),
                    DomainError);
    CHECK_THROWS_AS(normalize_rows(Tensor::matrix(2, 2, {1, 0, 0, 0})), DomainError);
  }

  TEST_CASE("cosine similarity is invariant to positive scaling") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> alpha(0.01, 100.0);
    for (int trial = 0; trial < 100; ++trial) {
      auto a = random_tensor(rng, {6}), b = random_tensor(rng, {6});
      const double base = cosine_similarity(a, b).item();
      const double scaled =
          cosine_similarity(scale(a, alpha(rng)), scale(b, alpha(rng))).item();
      CHECK(std::abs(base - scaled) < 1e-12);
      CHECK(std::abs(base) <= 1.0 + 1e-15);
    }
  }

  TEST_CASE("softmax examples") {
    CHECK(to_vec(softmax(Tensor::vector({0, 0})).values()) == std::vector<double>{0.5, 0.5});
    const double e = std::exp(1.0);
    auto p = softmax(Tensor::vector({1, 0, 0}));
    CHECK(p[0] == doctest::Approx(e / (e + 2)).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(1 / (e + 2)).epsilon(1e-15));
    auto shifted = softmax(Tensor::vector({1 + 7.5, 7.5, 7.5}));
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(shifted[i] - p[i]) < 1e-15);
  }

  TEST_CASE("softmax sums to one for logits up to magnitude 100") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 200; ++trial) {
      auto p = softmax(random_tensor(rng, {10}, -100.0, 100.0));
      double s = 0;
      for (double v : p.values()) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_SUITE("finite differences") {
  TEST_CASE("finite_difference_check examples") {
    auto sq = [](const Tensor& x) { return sum(x * x); };
    CHECK(finite_difference_check(sq, Tensor::vector({1, 2, 3})) < 1e-6);

    std::mt19937_64 rng(7);
    auto fixed = random_tensor(rng, {5});
    auto cs = [&](const Tensor& x) { return cosine_similarity(x, fixed); };
    for (int i = 0; i < 10; ++i)
      CHECK(finite_difference_check(cs, random_tensor(rng, {5})) < 1e-4);

    auto constant = [](const Tensor&) { return Tensor::scalar(3.0); };
    CHECK(finite_difference_check(constant, Tensor::vector({1, 2})) == 0.0);
  }

  TEST_CASE("every primitive passes a gradient check") {
    std::mt19937_64 rng(8);
    auto a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {3, 4});
    auto w = random_tensor(rng, {4, 2});
    auto pos = random_tensor(rng, {3, 4}, 0.5, 2.0);
    auto bias = random_tensor(rng, {4});
    const std::vector<std::size_t> idx{2, 0, 0};
    const std::vector<std::size_t> col{3, 1, 0};
    const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1, 1, 1, 1, 1, 0, 1};

    const std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>> cases{
        {"add", [&](const Tensor& x) { return sum((x + b) * (x + b)); }},
        {"sub", [&](const Tensor& x) { return sum((b - x) * x); }},
        {"div", [&](const Tensor& x) { return sum(x / pos) + sum(b / add_scalar(x * x, 1.0)); }},
        {"scale", [&](const Tensor& x) { return sum(scale(x * x, -2.5)); }},
        {"tanh", [&](const Tensor& x) { return sum(tanh(x) * b); }},
        {"exp", [&](const Tensor& x) { return sum(exp(x) * b); }},
        {"log", [&](const Tensor& x) { return sum(log(add_scalar(x * x, 0.5))); }},
        {"relu", [&](const Tensor& x) { return sum(relu(x) * b); }},
        {"mean", [&](const Tensor& x) { return mean(x * b); }},
        {"l2_norm", [&](const Tensor& x) { return l2_norm(x); }},
        {"matmul", [&](const Tensor& x) { return sum(tanh(matmul(x, w))); }},
        {"transpose", [&](const Tensor& x) { return sum(matmul(transpose(x), b) * matmul(transpose(b), x)); }},
        {"add_bias", [&](const Tensor& x) { return sum(tanh(add_bias(x, bias))); }},
        {"sum_rows", [&](const Tensor& x) { return sum(exp(sum_rows(x))); }},
        {"lse", [&](const Tensor& x) { return sum(logsumexp_rows(x)); }},
        {"lse_masked", [&](const Tensor& x) { return sum(logsumexp_rows(x, mask)); }},
        {"masked_max", [&](const Tensor& x) { return masked_max(x * b, mask); }},
        {"index_rows", [&](const Tensor& x) { return sum(tanh(index_rows(x, idx))); }},
        {"pick", [&](const Tensor& x) { return sum(exp(pick(x, col))); }},
        {"slice", [&](const Tensor& x) { return sum(exp(slice_rows(x, 1, 3))); }},
        {"concat", [&](const Tensor& x) { return sum(tanh(concat_rows({x, b, x}))); }},
        {"reshape", [&](const Tensor& x) { return sum(tanh(matmul(reshape(x, {4, 3}), reshape(b, {3, 4})))); }},
        {"normalize_rows", [&](const Tensor& x) { return sum(normalize_rows(x) * b); }},
        {"cosine_matrix", [&](const Tensor& x) { return sum(exp(cosine_matrix(x, b))); }},
        {"softmax_rows", [&](const Tensor& x) { return sum(softmax_rows(x) * b); }},
        {"apply_mask", [&](const Tensor& x) { return sum(exp(apply_mask(x, mask))); }},
    };
    for (const auto& [name, f] : cases) {
      CAPTURE(name);
      CHECK(finite_difference_check(f, a) < 1e-6);
    }
  }

  TEST_CASE("conv2d and maxpool gradients") {
    std::mt19937_64 rng(9);
    const kernels::ConvGeometry geo{2, 4, 4, 3, 1};
    std::vector<Tensor> leaves{random_tensor(rng, {2, 32}), random_tensor(rng, {18, 3}),
                               random_tensor(rng, {3})};
    auto probe = random_tensor(rng, {2, 12});
    auto loss = [&] {
      auto y = relu(conv2d(leaves[0], leaves[1], leaves[2], geo));
      return sum(maxpool2x2(y, 3, 4, 4) * probe);
    };
    CHECK(check_gradients(loss, leaves).max_rel_error < 1e-6);
  }

  TEST_CASE("shared subexpressions: DAG gradient equals the unrolled tree") {
    std::mt19937_64 rng(10);
    auto point = random_tensor(rng, {3, 3});
    auto w = random_tensor(rng, {3, 3});
    auto dag = [&](const Tensor& x) {
      const Tensor h = tanh(matmul(x, w));  // reused three times
      return sum(h * h) + sum(matmul(h, h));
    };
    auto tree = [&](const Tensor& x) {
      return sum(tanh(matmul(x, w)) * tanh(matmul(x, w))) +
             sum(matmul(tanh(matmul(x, w)), tanh(matmul(x, w))));
    };
    auto x1 = point.detach(), x2 = point.detach();
    x1.set_requires_grad(true);
    x2.set_requires_grad(true);
    dag(x1).backward();
    tree(x2).backward();
    for (std::size_t i = 0; i < 9; ++i)
      CHECK(std::abs(x1.grad()[i] - x2.grad()[i]) < 1e-12);
  }
}
