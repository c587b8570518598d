#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mustr/gradcheck.hpp"
#include "mustr/tensor.hpp"

using namespace mustr;

namespace {

TensorD rand_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
  return TensorD::randn(std::move(shape), rng, scale);
}

// Triple-loop reference, kept independent of mm_acc.
std::vector<double> matmul_ref(const TensorD& a, const TensorD& b) {
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int kk = 0; kk < k; ++kk)
        c[static_cast<std::size_t>(i) * n + j] +=
            a.at(static_cast<std::size_t>(i) * k + kk) * b.at(static_cast<std::size_t>(kk) * n + j);
  return c;
}

}  // namespace

TEST_CASE("matmul identity and annihilator") {
  std::mt19937_64 rng(7);
  TensorD a = rand_tensor({3, 3}, rng);
  TensorD eye = TensorD::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i * 3 + i) = 1.0;
  TensorD prod = matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(prod.at(i) == doctest::Approx(a.at(i)).epsilon(1e-12));

  TensorD zero = TensorD::zeros({3, 4});
  TensorD z = matmul(a, zero);
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z.at(i) == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  std::mt19937_64 rng(11);
  TensorD a = rand_tensor({4, 5}, rng);
  TensorD b = rand_tensor({5, 3}, rng);
  TensorD c = matmul(a, b);
  auto ref = matmul_ref(a, b);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(std::abs(c.at(i) - ref[i]) <= 1e-6 * (std::abs(ref[i]) + 1.0));
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  TensorD a = TensorD::zeros({2, 3});
  TensorD b = TensorD::zeros({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), DimensionError);
  try {
    matmul(a, b);
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("layer_norm trivial rows") {
  TensorD gamma = TensorD::full({4}, 1.0);
  TensorD beta = TensorD::zeros({4});

  // constant row -> zeros (zero variance, eps keeps it finite)
  TensorD c = TensorD::full({1, 4}, 3.25);
  TensorD out = layer_norm(c, gamma, beta, 1e-6);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.at(i) == doctest::Approx(0.0).epsilon(1e-9));

  // already-normalized row survives as eps -> 0
  TensorD g2 = TensorD::full({2}, 1.0);
  TensorD b2 = TensorD::zeros({2});
  TensorD row = TensorD::from({1, 2}, {1.0, -1.0});
  TensorD out2 = layer_norm(row, g2, b2, 1e-14);
  CHECK(out2.at(0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(out2.at(1) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm matches scalar reference") {
  std::mt19937_64 rng(3);
  const int d = 6;
  TensorD x = rand_tensor({2, d}, rng);
  TensorD gamma = rand_tensor({d}, rng);
  TensorD beta = rand_tensor({d}, rng);
  const double eps = 1e-5;
  TensorD out = layer_norm(x, gamma, beta, eps);
  for (int r = 0; r < 2; ++r) {
    double mean = 0, var = 0;
    for (int j = 0; j < d; ++j) mean += x.at(r * d + j);
    mean /= d;
    for (int j = 0; j < d; ++j) var += (x.at(r * d + j) - mean) * (x.at(r * d + j) - mean);
    var /= d;
    for (int j = 0; j < d; ++j) {
      const double want = (x.at(r * d + j) - mean) / std::sqrt(var + eps) * gamma.at(j) + beta.at(j);
      CHECK(std::abs(out.at(r * d + j) - want) < 1e-6);
    }
  }
  CHECK_THROWS_AS(layer_norm(TensorD::zeros({0, 1}), gamma, beta, 1e-5), DimensionError);
}

TEST_CASE("attention singleton and uniform cases") {
  std::mt19937_64 rng(5);
  // Lk = 1: softmax over a singleton is 1, output equals v broadcast
  TensorD q = rand_tensor({2, 3, 4}, rng);
  TensorD k = rand_tensor({2, 1, 4}, rng);
  TensorD v = rand_tensor({2, 1, 4}, rng);
  TensorD out = attention(q, k, v);
  for (int h = 0; h < 2; ++h)
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 4; ++c)
        CHECK(out.at((h * 3 + i) * 4 + c) == doctest::Approx(v.at(h * 4 + c)).epsilon(1e-12));

  // identical key rows -> uniform average of v regardless of q
  TensorD k2 = TensorD::zeros({1, 3, 2});
  TensorD v2 = TensorD::from({1, 3, 2}, {1, 2, 3, 4, 5, 6});
  TensorD q2 = rand_tensor({1, 1, 2}, rng);
  TensorD out2 = attention(q2, k2, v2);
  CHECK(out2.at(0) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(out2.at(1) == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("attention matches loop reference") {
  std::mt19937_64 rng(9);
  const int h = 2, lq = 3, lk = 5, dh = 4;
  TensorD q = rand_tensor({h, lq, dh}, rng);
  TensorD k = rand_tensor({h, lk, dh}, rng);
  TensorD v = rand_tensor({h, lk, dh}, rng);
  TensorD out = attention(q, k, v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int hh = 0; hh < h; ++hh)
    for (int i = 0; i < lq; ++i) {
      std::vector<double> s(lk, 0.0);
      double mx = -1e300;
      for (int j = 0; j < lk; ++j) {
        for (int c = 0; c < dh; ++c)
          s[j] += q.at((hh * lq + i) * dh + c) * k.at((hh * lk + j) * dh + c);
        s[j] *= scale;
        mx = std::max(mx, s[j]);
      }
      double sum = 0;
      for (int j = 0; j < lk; ++j) {
        s[j] = std::exp(s[j] - mx);
        sum += s[j];
      }
      for (int c = 0; c < dh; ++c) {
        double want = 0;
        for (int j = 0; j < lk; ++j) want += s[j] / sum * v.at((hh * lk + j) * dh + c);
        CHECK(std::abs(out.at((hh * lq + i) * dh + c) - want) < 1e-5);
      }
    }
}

TEST_CASE("attention rejects mismatched and empty contexts") {
  TensorD q = TensorD::zeros({1, 2, 4});
  CHECK_THROWS_AS(attention(q, TensorD::zeros({1, 1, 4}), TensorD::zeros({1, 2, 4})),
                  DimensionError);
  // a zero-length context cannot even be represented; the decoder raises the
  // empty-memory error before it would get here
  CHECK_THROWS_AS(TensorD::zeros({1, 0, 4}), DimensionError);
}

TEST_CASE("backward linear and quadratic") {
  TensorD x = TensorD::from({3}, {1.0, 2.0, 3.0}, true);
  TensorD s = sum(x);
  backward(s);
  for (int i = 0; i < 3; ++i) CHECK((*x.grad)[i] == 1.0);

  TensorD y = TensorD::from({2}, {1.0, 2.0}, true);
  TensorD sq = sum(mul(y, y));
  backward(sq);
  CHECK((*y.grad)[0] == doctest::Approx(2.0));
  CHECK((*y.grad)[1] == doctest::Approx(4.0));
}

TEST_CASE("backward requires scalar loss") {
  TensorD x = TensorD::from({2}, {1.0, 2.0}, true);
  TensorD y = mul(x, x);
  CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("gradient accumulation is exactly additive") {
  std::mt19937_64 rng(21);
  TensorD x = rand_tensor({4, 4}, rng);
  x.set_requires_grad(true);
  TensorD w = rand_tensor({4, 4}, rng);
  w.set_requires_grad(true);
  TensorD loss = sum(gelu(matmul(x, w)));
  backward(loss);
  std::vector<double> g1 = *x.grad;
  backward(loss);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK((*x.grad)[i] == 2.0 * g1[i]);
}

TEST_CASE("detached tensors never receive gradient") {
  TensorD x = TensorD::from({2}, {1.0, 2.0}, true);
  TensorD d = x.detach();
  TensorD loss = sum(mul(d, d));
  CHECK_FALSE(loss.requires_grad);
  CHECK_THROWS_AS(backward(loss), ContractError);
  CHECK(d.grad->empty());
}

TEST_CASE("forward determinism") {
  std::mt19937_64 rng(33);
  TensorD a = rand_tensor({3, 8}, rng);
  TensorD g = rand_tensor({8}, rng);
  TensorD b = rand_tensor({8}, rng);
  TensorD r1 = layer_norm(gelu(a), g, b, 1e-5);
  TensorD r2 = layer_norm(gelu(a), g, b, 1e-5);
  for (std::size_t i = 0; i < r1.numel(); ++i) CHECK(r1.at(i) == r2.at(i));
}

TEST_CASE("finite differences: linear is exact, composites under 1e-4") {
  std::mt19937_64 rng(99);
  {
    TensorD x = rand_tensor({5}, rng);
    auto res = finite_diff_check<double>([&] { return sum(x); }, {&x}, 1e-4);
    CHECK(res.max_rel_err < 1e-7);
  }
  {
    TensorD x = rand_tensor({6}, rng);
    auto res = finite_diff_check<double>([&] { return sum(mul(x, x)); }, {&x}, 1e-4);
    CHECK(res.max_rel_err < 1e-8);
  }
  {
    TensorD q = rand_tensor({2, 3, 4}, rng);
    TensorD k = rand_tensor({2, 5, 4}, rng);
    TensorD v = rand_tensor({2, 5, 4}, rng);
    auto res = finite_diff_check<double>(
        [&] { return sum(attention(q, k, v)); }, {&q, &k, &v}, 1e-4);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("finite differences across the op set, randomized trials") {
  // 100 randomized trials spread over every differentiable op.
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int op = trial % 10;
    GradCheckResult res;
    switch (op) {
      case 0: {
        TensorD a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 2}, rng);
        res = finite_diff_check<double>([&] { return sum(matmul(a, b)); }, {&a, &b}, 1e-5);
        break;
      }
      case 1: {
        TensorD a = rand_tensor({3, 4}, rng), b = rand_tensor({2, 4}, rng);
        res = finite_diff_check<double>([&] { return sum(matmul_nt(a, b)); }, {&a, &b}, 1e-5);
        break;
      }
      case 2: {
        TensorD x = rand_tensor({2, 5}, rng), g = rand_tensor({5}, rng), b = rand_tensor({5}, rng);
        res = finite_diff_check<double>(
            [&] { return sum(mul(layer_norm(x, g, b, 1e-5), layer_norm(x, g, b, 1e-5))); },
            {&x, &g, &b}, 1e-5);
        break;
      }
      case 3: {
        TensorD x = rand_tensor({3, 4}, rng);
        res = finite_diff_check<double>([&] { return sum(mul(softmax_rows(x), x)); }, {&x}, 1e-5);
        break;
      }
      case 4: {
        TensorD x = rand_tensor({2, 6}, rng);
        res = finite_diff_check<double>([&] { return sum(gelu(x)); }, {&x}, 1e-5);
        break;
      }
      case 5: {
        TensorD x = rand_tensor({4, 3}, rng);
        res = finite_diff_check<double>([&] { return sum(logmap_rows(x)); }, {&x}, 1e-5);
        break;
      }
      case 6: {
        TensorD x = rand_tensor({4, 3}, rng);
        TensorD s = rand_tensor({4}, rng);
        res = finite_diff_check<double>(
            [&] { return sum(mul_colvec(x, s)); }, {&x, &s}, 1e-5);
        break;
      }
      case 7: {
        TensorD x = rand_tensor({5, 3}, rng, 0.7);
        res = finite_diff_check<double>([&] { return sum(rownorm(x)); }, {&x}, 1e-5);
        break;
      }
      case 8: {
        std::vector<std::pair<int, int>> grid = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
        auto tab = make_rotary_table<double>(grid, 4);
        TensorD x = rand_tensor({2, 4, 4}, rng);
        res = finite_diff_check<double>(
            [&] { return sum(mul(rope_apply(x, tab), rope_apply(x, tab))); }, {&x}, 1e-5);
        break;
      }
      default: {
        TensorD x = rand_tensor({3, 4}, rng);
        TensorD b = rand_tensor({4}, rng);
        TensorD s = rand_tensor({1}, rng);
        res = finite_diff_check<double>(
            [&] {
              TensorD y = add_rowvec(x, b);
              y = scale_by(y, s);
              y = exp(mul_scalar(y, 0.1));
              return sum(log(add_scalar(y, 1.0)));
            },
            {&x, &b, &s}, 1e-5);
        break;
      }
    }
    worst = std::max(worst, res.max_rel_err);
    CHECK(res.max_rel_err < 1e-4);
  }
  MESSAGE("worst relative error across 100 trials: " << worst);
}

TEST_CASE("shape ops roundtrip gradients") {
  std::mt19937_64 rng(1);
  std::vector<std::pair<int, int>> grid = {{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1}, {1, 2}};
  auto tab = make_rotary_table<double>(grid, 4);
  TensorD x = rand_tensor({6, 8}, rng);
  auto res = finite_diff_check<double>(
      [&] {
        TensorD h = split_heads(x, 2);
        h = rope_apply(h, tab);
        return sum(mul(merge_heads(h), merge_heads(h)));
      },
      {&x}, 1e-5);
  CHECK(res.max_rel_err < 1e-6);

  TensorD a = rand_tensor({3, 4}, rng);
  TensorD b = rand_tensor({2, 4}, rng);
  auto res2 = finite_diff_check<double>(
      [&] {
        TensorD cat = concat_rows<double>({a, b});
        TensorD sl = slice_rows(cat, 1, 4);
        TensorD tk = take_rows(sl, {0, 2, 2});
        return sum(mul(tk, tk));
      },
      {&a, &b}, 1e-5);
  CHECK(res2.max_rel_err < 1e-6);
}

TEST_CASE("rope preserves norms and composes") {
  std::mt19937_64 rng(4);
  std::vector<std::pair<int, int>> grid = {{0, 0}, {2, 1}, {1, 3}};
  auto tab = make_rotary_table<double>(grid, 8);
  TensorD x = rand_tensor({2, 3, 8}, rng);
  TensorD y = rope_apply(x, tab);
  for (int h = 0; h < 2; ++h)
    for (int t = 0; t < 3; ++t) {
      double nx = 0, ny = 0;
      for (int c = 0; c < 8; ++c) {
        nx += x.at((h * 3 + t) * 8 + c) * x.at((h * 3 + t) * 8 + c);
        ny += y.at((h * 3 + t) * 8 + c) * y.at((h * 3 + t) * 8 + c);
      }
      CHECK(nx == doctest::Approx(ny).epsilon(1e-10));
    }
  // token at grid origin is left untouched
  for (int c = 0; c < 8; ++c) CHECK(y.at(c) == doctest::Approx(x.at(c)).epsilon(1e-12));
}

TEST_CASE("take_rows rejects bad indices, concat rejects mismatch") {
  TensorD a = TensorD::zeros({2, 3});
  CHECK_THROWS_AS(take_rows(a, {0, 5}), ContractError);
  CHECK_THROWS_AS(take_rows(a, std::vector<int>{}), ContractError);
  TensorD b = TensorD::zeros({2, 4});
  CHECK_THROWS_AS(concat_rows<double>({a, b}), DimensionError);
}
