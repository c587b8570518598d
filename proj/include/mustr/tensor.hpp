#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mustr/error.hpp"

namespace mustr {

// Thread-local autograd switch. Inference paths wrap themselves in NoGradGuard
// so no graph is recorded.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
struct TensorT;

template <class T>
struct NodeT {
  std::vector<TensorT<T>> parents;
  // Reads the output's grad buffer and accumulates into parents' grad buffers.
  std::function<void(const TensorT<T>&)> backward;
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// Dense tensor with optional reverse-mode gradient tracking. Every op produces
// a fresh data buffer; data pointers uniquely identify graph nodes.
template <class T>
struct TensorT {
  std::vector<int> shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  std::shared_ptr<NodeT<T>> node;

  TensorT() = default;

  static TensorT zeros(std::vector<int> s, bool req = false) {
    TensorT t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(shape_numel(t.shape), T(0));
    // The grad buffer is shared by all copies of this handle and resized on
    // first use, so gradients written through one copy are seen by all.
    t.grad = std::make_shared<std::vector<T>>();
    t.requires_grad = req && grad_mode();
    return t;
  }

  static TensorT full(std::vector<int> s, T v, bool req = false) {
    TensorT t = zeros(std::move(s), req);
    std::fill(t.data->begin(), t.data->end(), v);
    return t;
  }

  static TensorT from(std::vector<int> s, std::vector<T> values, bool req = false) {
    TensorT t;
    t.shape = std::move(s);
    if (shape_numel(t.shape) != values.size())
      throw DimensionError("from: " + std::to_string(values.size()) + " values for shape " +
                           shape_str(t.shape));
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    t.grad = std::make_shared<std::vector<T>>();
    t.requires_grad = req && grad_mode();
    return t;
  }

  static TensorT randn(std::vector<int> s, std::mt19937_64& rng, T stddev = T(1),
                       bool req = false) {
    TensorT t = zeros(std::move(s), req);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : *t.data) v = static_cast<T>(dist(rng)) * stddev;
    return t;
  }

  std::size_t numel() const { return data ? data->size() : 0; }
  bool defined() const { return static_cast<bool>(data); }
  bool is_leaf() const { return !node; }

  T& at(std::size_t i) { return (*data)[i]; }
  const T& at(std::size_t i) const { return (*data)[i]; }

  void ensure_grad() {
    if (grad->size() != data->size()) grad->assign(data->size(), T(0));
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }

  // Same data, cut loose from the graph. Never receives gradient.
  TensorT detach() const {
    TensorT t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(*data);
    t.grad = std::make_shared<std::vector<T>>();
    return t;
  }

  TensorT& set_requires_grad(bool v) {
    requires_grad = v;
    return *this;
  }
};

namespace detail {

template <class T>
bool track(const TensorT<T>& a) {
  return grad_mode() && a.requires_grad;
}

template <class T, class... Ts>
bool track(const TensorT<T>& a, const Ts&... ts) {
  return track(a) || track(ts...);
}

template <class T>
void attach(TensorT<T>& out, std::vector<TensorT<T>> parents,
            std::function<void(const TensorT<T>&)> bw) {
  out.node = std::make_shared<NodeT<T>>();
  out.node->parents = std::move(parents);
  out.node->backward = std::move(bw);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape != b.shape)
    throw DimensionError("add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
  if (detail::track(a, b)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a, b}, [](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      auto& pb = o.node->parents[1];
      const std::size_t n2 = o.numel();
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i];
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::size_t i = 0; i < n2; ++i) (*pb.grad)[i] += (*o.grad)[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape != b.shape)
    throw DimensionError("sub: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) - b.at(i);
  if (detail::track(a, b)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a, b}, [](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      auto& pb = o.node->parents[1];
      const std::size_t n2 = o.numel();
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i];
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::size_t i = 0; i < n2; ++i) (*pb.grad)[i] -= (*o.grad)[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape != b.shape)
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
  if (detail::track(a, b)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a, b}, [](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      auto& pb = o.node->parents[1];
      const std::size_t n2 = o.numel();
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i] * pb.at(i);
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::size_t i = 0; i < n2; ++i) (*pb.grad)[i] += (*o.grad)[i] * pa.at(i);
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * s;
  if (detail::track(a)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a}, [s](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      const std::size_t n2 = o.numel();
      for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i] * s;
    });
  }
  return out;
}

template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) + s;
  if (detail::track(a)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a}, [](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      const std::size_t n2 = o.numel();
      for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> exp(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = std::exp(a.at(i));
  if (detail::track(a)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a}, [](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      const std::size_t n2 = o.numel();
      for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i] * o.at(i);
    });
  }
  return out;
}

template <class T>
TensorT<T> log(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    if (a.at(i) <= T(0)) throw ContractError("log: non-positive input");
    out.at(i) = std::log(a.at(i));
  }
  if (detail::track(a)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a}, [](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      const std::size_t n2 = o.numel();
      for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i] / pa.at(i);
    });
  }
  return out;
}

template <class T>
TensorT<T> recip(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    if (a.at(i) == T(0)) throw ContractError("recip: zero input");
    out.at(i) = T(1) / a.at(i);
  }
  if (detail::track(a)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a}, [](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      const std::size_t n2 = o.numel();
      for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] -= (*o.grad)[i] * o.at(i) * o.at(i);
    });
  }
  return out;
}

// Exact GELU: x * Phi(x).
template <class T>
TensorT<T> gelu(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  const double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(a.at(i));
    out.at(i) = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * inv_sqrt2)));
  }
  if (detail::track(a)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a}, [](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      const double inv_sqrt2pi = 0.3989422804014326779;
      const double is2 = 0.7071067811865475244;
      const std::size_t n2 = o.numel();
      for (std::size_t i = 0; i < n2; ++i) {
        const double x = static_cast<double>(pa.at(i));
        const double phi = 0.5 * (1.0 + std::erf(x * is2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        (*pa.grad)[i] += (*o.grad)[i] * static_cast<T>(phi + x * pdf);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

namespace detail {

// c[m,n] += a[m,k] * b[k,n], ikj order.
template <class T>
void mm_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<std::size_t>(i) * k;
    T* ci = c + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const T av = ai[kk];
      if (av == T(0)) continue;
      const T* bk = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
template <class T>
void mm_nt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<std::size_t>(i) * k;
    T* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + static_cast<std::size_t>(j) * k;
      T acc = T(0);
      for (int kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      ci[j] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <class T>
void mm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<std::size_t>(i) * k;
    const T* bi = b + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const T av = ai[kk];
      if (av == T(0)) continue;
      T* ck = c + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) ck[j] += av * bi[j];
    }
  }
}

template <class T>
void require_matrix(const TensorT<T>& a, const char* op) {
  if (a.shape.size() != 2) throw DimensionError(std::string(op) + ": expected rank-2, got " + shape_str(a.shape));
}

}  // namespace detail

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.shape[1] != b.shape[0])
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  TensorT<T> out = TensorT<T>::zeros({m, n});
  detail::mm_acc(a.data->data(), b.data->data(), out.data->data(), m, k, n);
  if (detail::track(a, b)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a, b}, [m, k, n](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      auto& pb = o.node->parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        // dA += dC * B^T
        detail::mm_nt_acc(o.grad->data(), pb.data->data(), pa.grad->data(), m, n, k);
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        // dB += A^T * dC
        detail::mm_tn_acc(pa.data->data(), o.grad->data(), pb.grad->data(), m, k, n);
      }
    });
  }
  return out;
}

// a[m,k] * b[n,k]^T -> [m,n]; the natural shape for Linear weights and attention scores.
template <class T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  if (a.shape[1] != b.shape[1])
    throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape) + "^T");
  const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
  TensorT<T> out = TensorT<T>::zeros({m, n});
  detail::mm_nt_acc(a.data->data(), b.data->data(), out.data->data(), m, k, n);
  if (detail::track(a, b)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a, b}, [m, k, n](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      auto& pb = o.node->parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        // dA += dC * B
        detail::mm_acc(o.grad->data(), pb.data->data(), pa.grad->data(), m, n, k);
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        // dB += dC^T * A
        detail::mm_tn_acc(o.grad->data(), pa.data->data(), pb.grad->data(), m, n, k);
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> transpose(const TensorT<T>& a) {
  detail::require_matrix(a, "transpose");
  const int m = a.shape[0], n = a.shape[1];
  TensorT<T> out = TensorT<T>::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(static_cast<std::size_t>(j) * m + i) = a.at(static_cast<std::size_t>(i) * n + j);
  if (detail::track(a)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a}, [m, n](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          (*pa.grad)[static_cast<std::size_t>(i) * n + j] += (*o.grad)[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

// x[m,n] + b[n] broadcast over rows.
template <class T>
TensorT<T> add_rowvec(const TensorT<T>& x, const TensorT<T>& b) {
  detail::require_matrix(x, "add_rowvec");
  if (b.shape.size() != 1 || b.shape[0] != x.shape[1])
    throw DimensionError("add_rowvec: bias " + shape_str(b.shape) + " vs rows of " + shape_str(x.shape));
  const int m = x.shape[0], n = x.shape[1];
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.at(static_cast<std::size_t>(i) * n + j) = x.at(static_cast<std::size_t>(i) * n + j) + b.at(j);
  if (detail::track(x, b)) {
    out.requires_grad = true;
    detail::attach<T>(out, {x, b}, [m, n](const TensorT<T>& o) {
      auto& px = o.node->parents[0];
      auto& pb = o.node->parents[1];
      if (px.requires_grad) {
        px.ensure_grad();
        const std::size_t total = o.numel();
        for (std::size_t i = 0; i < total; ++i) (*px.grad)[i] += (*o.grad)[i];
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) (*pb.grad)[j] += (*o.grad)[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops (always copy; data pointers stay unique graph keys)
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> reshape(const TensorT<T>& a, std::vector<int> s) {
  if (shape_numel(s) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape) + " to " + shape_str(s));
  TensorT<T> out;
  out.shape = std::move(s);
  out.data = std::make_shared<std::vector<T>>(*a.data);
  out.grad = std::make_shared<std::vector<T>>();
  if (detail::track(a)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a}, [](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      const std::size_t n = o.numel();
      for (std::size_t i = 0; i < n; ++i) (*pa.grad)[i] += (*o.grad)[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty input");
  const int cols = parts[0].shape.size() == 2 ? parts[0].shape[1] : -1;
  int rows = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.shape[1] != cols)
      throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape));
    rows += p.shape[0];
  }
  TensorT<T> out = TensorT<T>::zeros({rows, cols});
  std::size_t off = 0;
  bool any = false;
  for (const auto& p : parts) {
    std::copy(p.data->begin(), p.data->end(), out.data->begin() + off);
    off += p.numel();
    any = any || detail::track(p);
  }
  if (any) {
    out.requires_grad = true;
    detail::attach<T>(out, parts, [](const TensorT<T>& o) {
      std::size_t off2 = 0;
      for (auto& p : o.node->parents) {
        const std::size_t n = p.numel();
        if (p.requires_grad) {
          p.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) (*p.grad)[i] += (*o.grad)[off2 + i];
        }
        off2 += n;
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> slice_rows(const TensorT<T>& a, int r0, int r1) {
  detail::require_matrix(a, "slice_rows");
  if (r0 < 0 || r1 > a.shape[0] || r0 >= r1)
    throw DimensionError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") of " + shape_str(a.shape));
  const int n = a.shape[1];
  TensorT<T> out = TensorT<T>::zeros({r1 - r0, n});
  std::copy(a.data->begin() + static_cast<std::size_t>(r0) * n,
            a.data->begin() + static_cast<std::size_t>(r1) * n, out.data->begin());
  if (detail::track(a)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a}, [r0, n](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      const std::size_t cnt = o.numel();
      for (std::size_t i = 0; i < cnt; ++i)
        (*pa.grad)[static_cast<std::size_t>(r0) * n + i] += (*o.grad)[i];
    });
  }
  return out;
}

// Row gather; the token-dropout primitive. Backward scatter-adds.
template <class T>
TensorT<T> take_rows(const TensorT<T>& a, const std::vector<int>& ids) {
  detail::require_matrix(a, "take_rows");
  if (ids.empty()) throw ContractError("take_rows: empty index set");
  const int n = a.shape[1];
  TensorT<T> out = TensorT<T>::zeros({static_cast<int>(ids.size()), n});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= a.shape[0]) throw ContractError("take_rows: index out of range");
    std::copy(a.data->begin() + static_cast<std::size_t>(ids[r]) * n,
              a.data->begin() + static_cast<std::size_t>(ids[r] + 1) * n,
              out.data->begin() + r * n);
  }
  if (detail::track(a)) {
    out.requires_grad = true;
    auto idx = ids;
    detail::attach<T>(out, {a}, [idx, n](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < n; ++j)
          (*pa.grad)[static_cast<std::size_t>(idx[r]) * n + j] += (*o.grad)[r * n + j];
    });
  }
  return out;
}

// Concatenate [h,Li,dh] tensors along the token axis -> [h,sum Li,dh].
template <class T>
TensorT<T> concat_tokens3(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw EmptyMemoryError("concat_tokens3: empty context");
  const int heads = parts[0].shape.size() == 3 ? parts[0].shape[0] : -1;
  const int dh = parts[0].shape.size() == 3 ? parts[0].shape[2] : -1;
  int total = 0;
  for (const auto& p : parts) {
    if (p.shape.size() != 3 || p.shape[0] != heads || p.shape[2] != dh)
      throw DimensionError("concat_tokens3: incompatible part " + shape_str(p.shape));
    total += p.shape[1];
  }
  TensorT<T> out = TensorT<T>::zeros({heads, total, dh});
  std::size_t off = 0;
  bool any = false;
  for (const auto& p : parts) {
    const int li = p.shape[1];
    for (int h = 0; h < heads; ++h)
      std::copy(p.data->begin() + static_cast<std::size_t>(h) * li * dh,
                p.data->begin() + static_cast<std::size_t>(h + 1) * li * dh,
                out.data->begin() + (static_cast<std::size_t>(h) * total + off) * dh);
    off += li;
    any = any || detail::track(p);
  }
  if (any) {
    out.requires_grad = true;
    detail::attach<T>(out, parts, [heads, total, dh](const TensorT<T>& o) {
      std::size_t off2 = 0;
      for (auto& p : o.node->parents) {
        const int li = p.shape[1];
        if (p.requires_grad) {
          p.ensure_grad();
          for (int h = 0; h < heads; ++h)
            for (int t = 0; t < li; ++t)
              for (int c = 0; c < dh; ++c)
                (*p.grad)[(static_cast<std::size_t>(h) * li + t) * dh + c] +=
                    (*o.grad)[(static_cast<std::size_t>(h) * total + off2 + t) * dh + c];
        }
        off2 += li;
      }
    });
  }
  return out;
}

// [T,d] -> [h,T,d/h]
template <class T>
TensorT<T> split_heads(const TensorT<T>& x, int heads) {
  detail::require_matrix(x, "split_heads");
  const int tok = x.shape[0], d = x.shape[1];
  if (heads <= 0 || d % heads != 0)
    throw DimensionError("split_heads: dim " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  const int dh = d / heads;
  TensorT<T> out = TensorT<T>::zeros({heads, tok, dh});
  for (int t = 0; t < tok; ++t)
    for (int h = 0; h < heads; ++h)
      for (int j = 0; j < dh; ++j)
        out.at((static_cast<std::size_t>(h) * tok + t) * dh + j) =
            x.at(static_cast<std::size_t>(t) * d + h * dh + j);
  if (detail::track(x)) {
    out.requires_grad = true;
    detail::attach<T>(out, {x}, [heads, tok, dh, d](const TensorT<T>& o) {
      auto& px = o.node->parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      for (int t = 0; t < tok; ++t)
        for (int h = 0; h < heads; ++h)
          for (int j = 0; j < dh; ++j)
            (*px.grad)[static_cast<std::size_t>(t) * d + h * dh + j] +=
                (*o.grad)[(static_cast<std::size_t>(h) * tok + t) * dh + j];
    });
  }
  return out;
}

// [h,T,dh] -> [T,h*dh]
template <class T>
TensorT<T> merge_heads(const TensorT<T>& x) {
  if (x.shape.size() != 3) throw DimensionError("merge_heads: expected rank-3, got " + shape_str(x.shape));
  const int heads = x.shape[0], tok = x.shape[1], dh = x.shape[2];
  const int d = heads * dh;
  TensorT<T> out = TensorT<T>::zeros({tok, d});
  for (int h = 0; h < heads; ++h)
    for (int t = 0; t < tok; ++t)
      for (int j = 0; j < dh; ++j)
        out.at(static_cast<std::size_t>(t) * d + h * dh + j) =
            x.at((static_cast<std::size_t>(h) * tok + t) * dh + j);
  if (detail::track(x)) {
    out.requires_grad = true;
    detail::attach<T>(out, {x}, [heads, tok, dh, d](const TensorT<T>& o) {
      auto& px = o.node->parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      for (int h = 0; h < heads; ++h)
        for (int t = 0; t < tok; ++t)
          for (int j = 0; j < dh; ++j)
            (*px.grad)[(static_cast<std::size_t>(h) * tok + t) * dh + j] +=
                (*o.grad)[static_cast<std::size_t>(t) * d + h * dh + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization / activation over rows
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
  if (x.shape.empty()) throw DimensionError("softmax_rows: scalar input");
  const int n = x.shape.back();
  const std::size_t rows = x.numel() / n;
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xi = x.data->data() + r * n;
    T* oi = out.data->data() + r * n;
    T mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    T sum = T(0);
    for (int j = 0; j < n; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      sum += oi[j];
    }
    for (int j = 0; j < n; ++j) oi[j] /= sum;
  }
  if (detail::track(x)) {
    out.requires_grad = true;
    detail::attach<T>(out, {x}, [n, rows](const TensorT<T>& o) {
      auto& px = o.node->parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* p = o.data->data() + r * n;
        const T* du = o.grad->data() + r * n;
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += du[j] * p[j];
        T* dx = px.grad->data() + r * n;
        for (int j = 0; j < n; ++j) dx[j] += p[j] * (du[j] - dot);
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps) {
  if (x.shape.empty() || x.shape.back() == 0) throw DimensionError("layer_norm: empty last dimension");
  const int d = x.shape.back();
  if (gamma.shape != std::vector<int>{d} || beta.shape != std::vector<int>{d})
    throw DimensionError("layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xi = x.data->data() + r * d;
    T* oi = out.data->data() + r * d;
    T mean = T(0);
    for (int j = 0; j < d; ++j) mean += xi[j];
    mean /= d;
    T var = T(0);
    for (int j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= d;
    const T inv = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) oi[j] = (xi[j] - mean) * inv * gamma.at(j) + beta.at(j);
  }
  if (detail::track(x, gamma, beta)) {
    out.requires_grad = true;
    detail::attach<T>(out, {x, gamma, beta}, [d, rows, eps](const TensorT<T>& o) {
      auto& px = o.node->parents[0];
      auto& pg = o.node->parents[1];
      auto& pb = o.node->parents[2];
      if (px.requires_grad) px.ensure_grad();
      if (pg.requires_grad) pg.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* xi = px.data->data() + r * d;
        const T* du = o.grad->data() + r * d;
        T mean = T(0);
        for (int j = 0; j < d; ++j) mean += xi[j];
        mean /= d;
        T var = T(0);
        for (int j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= d;
        const T inv = T(1) / std::sqrt(var + eps);
        if (pb.requires_grad)
          for (int j = 0; j < d; ++j) (*pb.grad)[j] += du[j];
        if (pg.requires_grad)
          for (int j = 0; j < d; ++j) (*pg.grad)[j] += du[j] * (xi[j] - mean) * inv;
        if (px.requires_grad) {
          // dx = inv * (g - mean(g) - xhat * mean(g*xhat)), g = gamma .* du
          T gmean = T(0), gxmean = T(0);
          for (int j = 0; j < d; ++j) {
            const T g = pg.at(j) * du[j];
            gmean += g;
            gxmean += g * (xi[j] - mean) * inv;
          }
          gmean /= d;
          gxmean /= d;
          T* dx = px.grad->data() + r * d;
          for (int j = 0; j < d; ++j) {
            const T g = pg.at(j) * du[j];
            const T xhat = (xi[j] - mean) * inv;
            dx[j] += inv * (g - gmean - xhat * gxmean);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rotary position table + scaled-dot-product attention
// ---------------------------------------------------------------------------

// Per-token cos/sin for rotary rotation; built 2D-axial over patch grid
// coordinates (first half of the pairs encodes rows, second half columns).
template <class T>
struct RotaryTableT {
  int len = 0;
  int head_dim = 0;
  std::vector<T> cos_tab;  // [len, head_dim/2]
  std::vector<T> sin_tab;
};

template <class T>
RotaryTableT<T> make_rotary_table(const std::vector<std::pair<int, int>>& grid, int head_dim,
                                  double base = 100.0) {
  if (head_dim % 4 != 0)
    throw DimensionError("make_rotary_table: head dim " + std::to_string(head_dim) +
                         " must be divisible by 4 for 2D axial rotation");
  RotaryTableT<T> tab;
  tab.len = static_cast<int>(grid.size());
  tab.head_dim = head_dim;
  const int pairs = head_dim / 2;
  const int per_axis = pairs / 2;
  tab.cos_tab.resize(static_cast<std::size_t>(tab.len) * pairs);
  tab.sin_tab.resize(static_cast<std::size_t>(tab.len) * pairs);
  for (int t = 0; t < tab.len; ++t) {
    for (int j = 0; j < pairs; ++j) {
      const int axis_j = j < per_axis ? j : j - per_axis;
      const double pos = j < per_axis ? grid[t].first : grid[t].second;
      const double freq = std::pow(base, -static_cast<double>(axis_j) / per_axis);
      const double ang = pos * freq;
      tab.cos_tab[static_cast<std::size_t>(t) * pairs + j] = static_cast<T>(std::cos(ang));
      tab.sin_tab[static_cast<std::size_t>(t) * pairs + j] = static_cast<T>(std::sin(ang));
    }
  }
  return tab;
}

template <class T>
TensorT<T> rope_apply(const TensorT<T>& x, const RotaryTableT<T>& tab) {
  if (x.shape.size() != 3) throw DimensionError("rope_apply: expected [h,T,dh], got " + shape_str(x.shape));
  const int heads = x.shape[0], tok = x.shape[1], dh = x.shape[2];
  if (dh != tab.head_dim || tok != tab.len)
    throw DimensionError("rope_apply: table built for len " + std::to_string(tab.len) + "/dim " +
                         std::to_string(tab.head_dim) + ", tensor is " + shape_str(x.shape));
  if (dh % 2 != 0) throw DimensionError("rope_apply: head dim must be even");
  const int pairs = dh / 2;
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  for (int h = 0; h < heads; ++h)
    for (int t = 0; t < tok; ++t) {
      const T* xi = x.data->data() + (static_cast<std::size_t>(h) * tok + t) * dh;
      T* oi = out.data->data() + (static_cast<std::size_t>(h) * tok + t) * dh;
      const T* c = tab.cos_tab.data() + static_cast<std::size_t>(t) * pairs;
      const T* s = tab.sin_tab.data() + static_cast<std::size_t>(t) * pairs;
      for (int j = 0; j < pairs; ++j) {
        oi[2 * j] = c[j] * xi[2 * j] - s[j] * xi[2 * j + 1];
        oi[2 * j + 1] = s[j] * xi[2 * j] + c[j] * xi[2 * j + 1];
      }
    }
  if (detail::track(x)) {
    out.requires_grad = true;
    auto cos_tab = tab.cos_tab;
    auto sin_tab = tab.sin_tab;
    detail::attach<T>(out, {x}, [heads, tok, dh, pairs, cos_tab, sin_tab](const TensorT<T>& o) {
      auto& px = o.node->parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      for (int h = 0; h < heads; ++h)
        for (int t = 0; t < tok; ++t) {
          const T* du = o.grad->data() + (static_cast<std::size_t>(h) * tok + t) * dh;
          T* dx = px.grad->data() + (static_cast<std::size_t>(h) * tok + t) * dh;
          const T* c = cos_tab.data() + static_cast<std::size_t>(t) * pairs;
          const T* s = sin_tab.data() + static_cast<std::size_t>(t) * pairs;
          for (int j = 0; j < pairs; ++j) {
            // inverse rotation on the upstream gradient
            dx[2 * j] += c[j] * du[2 * j] + s[j] * du[2 * j + 1];
            dx[2 * j + 1] += -s[j] * du[2 * j] + c[j] * du[2 * j + 1];
          }
        }
    });
  }
  return out;
}

// softmax(q k^T / sqrt(dh)) v per head, single fused op. Rope, when supplied,
// rotates q and k first (self-attention path); cross-attention passes none.
template <class T>
TensorT<T> attention(const TensorT<T>& q_in, const TensorT<T>& k_in, const TensorT<T>& v,
                     const RotaryTableT<T>* rope = nullptr) {
  if (q_in.shape.size() != 3 || k_in.shape.size() != 3 || v.shape.size() != 3)
    throw DimensionError("attention: expected [h,L,dh] tensors");
  const int heads = q_in.shape[0], lq = q_in.shape[1], dh = q_in.shape[2];
  const int lk = k_in.shape[1];
  if (k_in.shape[0] != heads || v.shape[0] != heads || k_in.shape[2] != dh || v.shape[2] != dh ||
      v.shape[1] != lk)
    throw DimensionError("attention: incompatible shapes q" + shape_str(q_in.shape) + " k" +
                         shape_str(k_in.shape) + " v" + shape_str(v.shape));
  if (lk == 0) throw EmptyMemoryError("attention: empty key/value context");
  if (rope && dh % 2 != 0) throw DimensionError("attention: rope requires even head dim");

  TensorT<T> q = rope ? rope_apply(q_in, *rope) : q_in;
  TensorT<T> k = rope ? rope_apply(k_in, *rope) : k_in;

  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  TensorT<T> out = TensorT<T>::zeros({heads, lq, dh});
  // Probabilities are retained for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(heads) * lq * lk);
  for (int h = 0; h < heads; ++h) {
    const T* qh = q.data->data() + static_cast<std::size_t>(h) * lq * dh;
    const T* kh = k.data->data() + static_cast<std::size_t>(h) * lk * dh;
    const T* vh = v.data->data() + static_cast<std::size_t>(h) * lk * dh;
    T* oh = out.data->data() + static_cast<std::size_t>(h) * lq * dh;
    T* ph = probs->data() + static_cast<std::size_t>(h) * lq * lk;
    for (int i = 0; i < lq; ++i) {
      T* row = ph + static_cast<std::size_t>(i) * lk;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < lk; ++j) {
        T acc = T(0);
        const T* qi = qh + static_cast<std::size_t>(i) * dh;
        const T* kj = kh + static_cast<std::size_t>(j) * dh;
        for (int c = 0; c < dh; ++c) acc += qi[c] * kj[c];
        row[j] = acc * scale;
        mx = std::max(mx, row[j]);
      }
      T sum = T(0);
      for (int j = 0; j < lk; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      T* oi = oh + static_cast<std::size_t>(i) * dh;
      for (int j = 0; j < lk; ++j) {
        row[j] /= sum;
        const T* vj = vh + static_cast<std::size_t>(j) * dh;
        for (int c = 0; c < dh; ++c) oi[c] += row[j] * vj[c];
      }
    }
  }
  if (detail::track(q, k, v)) {
    out.requires_grad = true;
    detail::attach<T>(out, {q, k, v}, [heads, lq, lk, dh, scale, probs](const TensorT<T>& o) {
      auto& pq = o.node->parents[0];
      auto& pk = o.node->parents[1];
      auto& pv = o.node->parents[2];
      if (pq.requires_grad) pq.ensure_grad();
      if (pk.requires_grad) pk.ensure_grad();
      if (pv.requires_grad) pv.ensure_grad();
      std::vector<T> dp(static_cast<std::size_t>(lk));
      for (int h = 0; h < heads; ++h) {
        const T* qh = pq.data->data() + static_cast<std::size_t>(h) * lq * dh;
        const T* kh = pk.data->data() + static_cast<std::size_t>(h) * lk * dh;
        const T* vh = pv.data->data() + static_cast<std::size_t>(h) * lk * dh;
        const T* ph = probs->data() + static_cast<std::size_t>(h) * lq * lk;
        const T* doh = o.grad->data() + static_cast<std::size_t>(h) * lq * dh;
        for (int i = 0; i < lq; ++i) {
          const T* prow = ph + static_cast<std::size_t>(i) * lk;
          const T* doi = doh + static_cast<std::size_t>(i) * dh;
          // dV += P^T dO ; dP = dO V^T
          T dot = T(0);
          for (int j = 0; j < lk; ++j) {
            const T* vj = vh + static_cast<std::size_t>(j) * dh;
            T acc = T(0);
            for (int c = 0; c < dh; ++c) acc += doi[c] * vj[c];
            dp[j] = acc;
            dot += acc * prow[j];
            if (pv.requires_grad) {
              T* dvj = pv.grad->data() + (static_cast<std::size_t>(h) * lk + j) * dh;
              for (int c = 0; c < dh; ++c) dvj[c] += prow[j] * doi[c];
            }
          }
          // dS = P .* (dP - rowdot); dQ += dS K * scale ; dK += dS^T Q * scale
          const T* qi = qh + static_cast<std::size_t>(i) * dh;
          for (int j = 0; j < lk; ++j) {
            const T ds = prow[j] * (dp[j] - dot) * scale;
            if (ds == T(0)) continue;
            const T* kj = kh + static_cast<std::size_t>(j) * dh;
            if (pq.requires_grad) {
              T* dqi = pq.grad->data() + (static_cast<std::size_t>(h) * lq + i) * dh;
              for (int c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
            }
            if (pk.requires_grad) {
              T* dkj = pk.grad->data() + (static_cast<std::size_t>(h) * lk + j) * dh;
              for (int c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and loss composites
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros({1});
  T acc = T(0);
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a.at(i);
  out.at(0) = acc;
  if (detail::track(a)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a}, [](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      const T g = (*o.grad)[0];
      for (std::size_t i = 0; i < pa.numel(); ++i) (*pa.grad)[i] += g;
    });
  }
  return out;
}

// Euclidean norm of each row of a [N,d] matrix -> [N].
template <class T>
TensorT<T> rownorm(const TensorT<T>& a) {
  detail::require_matrix(a, "rownorm");
  const int rows = a.shape[0], d = a.shape[1];
  TensorT<T> out = TensorT<T>::zeros({rows});
  for (int r = 0; r < rows; ++r) {
    T acc = T(0);
    for (int j = 0; j < d; ++j) {
      const T v = a.at(static_cast<std::size_t>(r) * d + j);
      acc += v * v;
    }
    out.at(r) = std::sqrt(acc);
  }
  if (detail::track(a)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a}, [rows, d](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      for (int r = 0; r < rows; ++r) {
        const T nr = o.at(r);
        if (nr == T(0)) continue;  // subgradient 0 at the kink
        const T g = (*o.grad)[r] / nr;
        for (int j = 0; j < d; ++j)
          (*pa.grad)[static_cast<std::size_t>(r) * d + j] += g * pa.at(static_cast<std::size_t>(r) * d + j);
      }
    });
  }
  return out;
}

// Row-wise x -> x * log(1 + |x|) / |x| with f(0) = 0; the log-space map used
// by the regression loss.
template <class T>
TensorT<T> logmap_rows(const TensorT<T>& a) {
  detail::require_matrix(a, "logmap_rows");
  const int rows = a.shape[0], d = a.shape[1];
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  for (int r = 0; r < rows; ++r) {
    const T* xi = a.data->data() + static_cast<std::size_t>(r) * d;
    T* oi = out.data->data() + static_cast<std::size_t>(r) * d;
    T nr = T(0);
    for (int j = 0; j < d; ++j) nr += xi[j] * xi[j];
    nr = std::sqrt(nr);
    const T s = nr > T(1e-12) ? std::log1p(nr) / nr : T(1) - nr / T(2);
    for (int j = 0; j < d; ++j) oi[j] = xi[j] * s;
  }
  if (detail::track(a)) {
    out.requires_grad = true;
    detail::attach<T>(out, {a}, [rows, d](const TensorT<T>& o) {
      auto& pa = o.node->parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      for (int r = 0; r < rows; ++r) {
        const T* xi = pa.data->data() + static_cast<std::size_t>(r) * d;
        const T* du = o.grad->data() + static_cast<std::size_t>(r) * d;
        T* dx = pa.grad->data() + static_cast<std::size_t>(r) * d;
        T nr = T(0);
        for (int j = 0; j < d; ++j) nr += xi[j] * xi[j];
        nr = std::sqrt(nr);
        if (nr <= T(1e-12)) {
          // df/dx -> identity at the origin
          for (int j = 0; j < d; ++j) dx[j] += du[j];
          continue;
        }
        const T s = std::log1p(nr) / nr;
        // s'(r) = (r/(1+r) - log1p(r)) / r^2 ; vjp: du*s + x * ((du.x) * s'/r)
        const T sp = (nr / (T(1) + nr) - std::log1p(nr)) / (nr * nr);
        T dux = T(0);
        for (int j = 0; j < d; ++j) dux += du[j] * xi[j];
        const T coef = dux * sp / nr;
        for (int j = 0; j < d; ++j) dx[j] += du[j] * s + xi[j] * coef;
      }
    });
  }
  return out;
}

// x[N,d] scaled row-wise by s[N].
template <class T>
TensorT<T> mul_colvec(const TensorT<T>& x, const TensorT<T>& s) {
  detail::require_matrix(x, "mul_colvec");
  if (s.shape.size() != 1 || s.shape[0] != x.shape[0])
    throw DimensionError("mul_colvec: scale " + shape_str(s.shape) + " vs " + shape_str(x.shape));
  const int rows = x.shape[0], d = x.shape[1];
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j)
      out.at(static_cast<std::size_t>(r) * d + j) = x.at(static_cast<std::size_t>(r) * d + j) * s.at(r);
  if (detail::track(x, s)) {
    out.requires_grad = true;
    detail::attach<T>(out, {x, s}, [rows, d](const TensorT<T>& o) {
      auto& px = o.node->parents[0];
      auto& ps = o.node->parents[1];
      if (px.requires_grad) {
        px.ensure_grad();
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j)
            (*px.grad)[static_cast<std::size_t>(r) * d + j] +=
                (*o.grad)[static_cast<std::size_t>(r) * d + j] * ps.at(r);
      }
      if (ps.requires_grad) {
        ps.ensure_grad();
        for (int r = 0; r < rows; ++r) {
          T acc = T(0);
          for (int j = 0; j < d; ++j)
            acc += (*o.grad)[static_cast<std::size_t>(r) * d + j] * px.at(static_cast<std::size_t>(r) * d + j);
          (*ps.grad)[r] += acc;
        }
      }
    });
  }
  return out;
}

// Multiply every element by a scalar held in a [1] tensor (gradients flow to both).
template <class T>
TensorT<T> scale_by(const TensorT<T>& x, const TensorT<T>& s) {
  if (s.shape != std::vector<int>{1}) throw DimensionError("scale_by: scale must be [1]");
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  const T sv = s.at(0);
  for (std::size_t i = 0; i < x.numel(); ++i) out.at(i) = x.at(i) * sv;
  if (detail::track(x, s)) {
    out.requires_grad = true;
    detail::attach<T>(out, {x, s}, [](const TensorT<T>& o) {
      auto& px = o.node->parents[0];
      auto& ps = o.node->parents[1];
      const T sv2 = ps.at(0);
      if (px.requires_grad) {
        px.ensure_grad();
        for (std::size_t i = 0; i < o.numel(); ++i) (*px.grad)[i] += (*o.grad)[i] * sv2;
      }
      if (ps.requires_grad) {
        ps.ensure_grad();
        T acc = T(0);
        for (std::size_t i = 0; i < o.numel(); ++i) acc += (*o.grad)[i] * px.at(i);
        (*ps.grad)[0] += acc;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Parameter (leaf) gradients accumulate
// across calls; intermediate grads are pass-local scratch.
template <class T>
void backward(TensorT<T>& loss) {
  if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape));
  if (!loss.node && !loss.requires_grad)
    throw ContractError("backward: loss is not connected to any graph");

  // Topological order over unique logical tensors (keyed by data buffer).
  std::vector<TensorT<T>> topo;
  std::unordered_set<const void*> seen;
  std::vector<std::pair<TensorT<T>, std::size_t>> stack;  // tensor, next-parent index
  stack.emplace_back(loss, 0);
  seen.insert(loss.data.get());
  while (!stack.empty()) {
    auto& [t, idx] = stack.back();
    const std::size_t np = t.node ? t.node->parents.size() : 0;
    if (idx == np) {
      topo.push_back(t);
      stack.pop_back();
      continue;
    }
    const TensorT<T>& p = t.node->parents[idx++];
    if (!seen.count(p.data.get())) {
      seen.insert(p.data.get());
      stack.emplace_back(p, 0);
    }
  }

  // Zero non-leaf grads so each pass propagates only the fresh seed; leaf
  // (parameter) grads keep accumulating, making repeated backward additive.
  for (auto& t : topo) {
    if (t.node) {
      t.ensure_grad();
      t.zero_grad();
    }
  }
  loss.ensure_grad();
  (*loss.grad)[0] += T(1);

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if (it->node && it->node->backward) it->node->backward(*it);
  }
}

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace mustr
