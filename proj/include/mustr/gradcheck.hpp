#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mustr/tensor.hpp"

namespace mustr {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

// Central-difference check of reverse-mode gradients. `f` must be a pure
// scalar-valued function of the tensors pointed to by `wrt` (closure capture
// of the same handles). Independent of the autodiff path: it only ever calls
// the forward pass. Reports, never throws on mismatch.
//
// When max_coords_per_tensor >= 0 only a seeded random subset of coordinates
// per tensor is perturbed, which keeps whole-model checks affordable.
template <class T>
GradCheckResult finite_diff_check(const std::function<TensorT<T>()>& f,
                                  const std::vector<TensorT<T>*>& wrt, T eps,
                                  long max_coords_per_tensor = -1,
                                  std::uint64_t seed = 12345) {
  if (!(eps > T(0))) throw ContractError("finite_diff_check: eps must be positive");

  std::vector<bool> prev_req;
  for (auto* t : wrt) {
    prev_req.push_back(t->requires_grad);
    t->set_requires_grad(true);
    t->ensure_grad();
    t->zero_grad();
  }
  TensorT<T> loss = f();
  if (loss.numel() != 1)
    throw ContractError("finite_diff_check: f must be scalar-valued, got " + shape_str(loss.shape));
  backward(loss);

  std::vector<std::vector<T>> g_ad;
  g_ad.reserve(wrt.size());
  for (auto* t : wrt) {
    t->ensure_grad();
    g_ad.push_back(*t->grad);
    t->zero_grad();
  }

  GradCheckResult res;
  std::mt19937_64 rng(seed);
  NoGradGuard ng;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& t = *wrt[ti];
    const std::size_t n = t.numel();
    std::vector<std::size_t> coords;
    if (max_coords_per_tensor < 0 || static_cast<std::size_t>(max_coords_per_tensor) >= n) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      std::uniform_int_distribution<std::size_t> dist(0, n - 1);
      for (long i = 0; i < max_coords_per_tensor; ++i) coords.push_back(dist(rng));
    }
    for (std::size_t j : coords) {
      const T orig = t.at(j);
      t.at(j) = orig + eps;
      const double lp = static_cast<double>(f().at(0));
      t.at(j) = orig - eps;
      const double lm = static_cast<double>(f().at(0));
      t.at(j) = orig;
      const double g_fd = (lp - lm) / (2.0 * static_cast<double>(eps));
      const double err =
          std::abs(static_cast<double>(g_ad[ti][j]) - g_fd) / (std::abs(g_fd) + 1e-8);
      res.max_rel_err = std::max(res.max_rel_err, err);
      ++res.coords_checked;
    }
  }
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) wrt[ti]->set_requires_grad(prev_req[ti]);
  return res;
}

}  // namespace mustr
