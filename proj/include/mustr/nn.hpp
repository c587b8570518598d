#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mustr/tensor.hpp"

namespace mustr {

template <class T>
struct ParameterT {
  TensorT<T> value;
  std::string name;
  bool frozen = false;

  void freeze() {
    frozen = true;
    value.set_requires_grad(false);
  }
  void unfreeze() {
    frozen = false;
    value.set_requires_grad(true);
  }
};

template <class T>
using ParamRefs = std::vector<ParameterT<T>*>;

namespace nn {

template <class T>
TensorT<T> xavier(std::vector<int> shape, int fan_in, int fan_out, std::mt19937_64& rng) {
  const T stddev = std::sqrt(T(2) / static_cast<T>(fan_in + fan_out));
  return TensorT<T>::randn(std::move(shape), rng, stddev, true);
}

template <class T>
struct LinearT {
  ParameterT<T> weight;  // [out, in]
  ParameterT<T> bias;    // [out]

  LinearT() = default;
  LinearT(int in, int out, const std::string& name, std::mt19937_64& rng) {
    weight = {xavier<T>({out, in}, in, out, rng), name + ".weight"};
    bias = {TensorT<T>::zeros({out}, true), name + ".bias"};
  }

  TensorT<T> forward(const TensorT<T>& x) const {
    return add_rowvec(matmul_nt(x, weight.value), bias.value);
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

template <class T>
struct LayerNormT {
  ParameterT<T> gamma;
  ParameterT<T> beta;
  T eps = T(1e-5);

  LayerNormT() = default;
  LayerNormT(int d, const std::string& name) {
    gamma = {TensorT<T>::full({d}, T(1), true), name + ".gamma"};
    beta = {TensorT<T>::zeros({d}, true), name + ".beta"};
  }

  TensorT<T> forward(const TensorT<T>& x) const {
    return layer_norm(x, gamma.value, beta.value, eps);
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

template <class T>
struct MlpT {
  LinearT<T> fc1, fc2;

  MlpT() = default;
  MlpT(int d, int hidden, const std::string& name, std::mt19937_64& rng)
      : fc1(d, hidden, name + ".fc1", rng), fc2(hidden, d, name + ".fc2", rng) {}

  TensorT<T> forward(const TensorT<T>& x) const { return fc2.forward(gelu(fc1.forward(x))); }

  void collect(ParamRefs<T>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }
};

// Multi-head attention over externally supplied key/value tokens. Cross
// attention callers project the context once per batch and reuse it across
// query frames, which is where batched rendering gets its speedup.
template <class T>
struct MultiHeadAttentionT {
  int heads = 1;
  LinearT<T> wq, wk, wv, wo;

  struct Kv {
    TensorT<T> k;  // [h, Lk, dh]
    TensorT<T> v;
  };

  MultiHeadAttentionT() = default;
  MultiHeadAttentionT(int d, int heads_, const std::string& name, std::mt19937_64& rng)
      : heads(heads_),
        wq(d, d, name + ".wq", rng),
        wk(d, d, name + ".wk", rng),
        wv(d, d, name + ".wv", rng),
        wo(d, d, name + ".wo", rng) {}

  Kv project_kv(const TensorT<T>& ctx) const {
    return {split_heads(wk.forward(ctx), heads), split_heads(wv.forward(ctx), heads)};
  }

  TensorT<T> forward_kv(const TensorT<T>& x, const Kv& kv,
                        const RotaryTableT<T>* rope = nullptr) const {
    TensorT<T> q = split_heads(wq.forward(x), heads);
    TensorT<T> o = attention(q, kv.k, kv.v, rope);
    return wo.forward(merge_heads(o));
  }

  // Self attention path: q, k, v all come from x; rope rotates q and k.
  TensorT<T> forward_self(const TensorT<T>& x, const RotaryTableT<T>* rope) const {
    TensorT<T> q = split_heads(wq.forward(x), heads);
    TensorT<T> k = split_heads(wk.forward(x), heads);
    TensorT<T> v = split_heads(wv.forward(x), heads);
    TensorT<T> o = attention(q, k, v, rope);
    return wo.forward(merge_heads(o));
  }

  void collect(ParamRefs<T>& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
  }
};

// Pre-norm ViT block: residual self-attention with rope, residual MLP.
template <class T>
struct EncoderBlockT {
  LayerNormT<T> ln1, ln2;
  MultiHeadAttentionT<T> attn;
  MlpT<T> mlp;

  EncoderBlockT() = default;
  EncoderBlockT(int d, int heads, int mlp_mult, const std::string& name, std::mt19937_64& rng)
      : ln1(d, name + ".ln1"),
        ln2(d, name + ".ln2"),
        attn(d, heads, name + ".attn", rng),
        mlp(d, d * mlp_mult, name + ".mlp", rng) {}

  TensorT<T> forward(const TensorT<T>& x, const RotaryTableT<T>& rope) const {
    TensorT<T> y = add(x, attn.forward_self(ln1.forward(x), &rope));
    return add(y, mlp.forward(ln2.forward(y)));
  }

  void collect(ParamRefs<T>& out) {
    ln1.collect(out);
    ln2.collect(out);
    attn.collect(out);
    mlp.collect(out);
  }
};

// SGD with momentum; frozen parameters are skipped entirely.
template <class T>
struct SgdT {
  T lr;
  T momentum;
  std::vector<std::vector<T>> vel;

  explicit SgdT(T lr_, T momentum_ = T(0.9)) : lr(lr_), momentum(momentum_) {}

  void step(const ParamRefs<T>& params) {
    if (vel.size() != params.size()) vel.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto* p = params[i];
      if (p->frozen || !p->value.requires_grad) continue;
      p->value.ensure_grad();
      auto& v = vel[i];
      if (v.size() != p->value.numel()) v.assign(p->value.numel(), T(0));
      for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = momentum * v[k] + (*p->value.grad)[k];
        p->value.at(k) -= lr * v[k];
      }
    }
  }

  static void zero_grad(const ParamRefs<T>& params) {
    for (auto* p : params) p->value.zero_grad();
  }

  static double grad_norm(const ParamRefs<T>& params) {
    double acc = 0.0;
    for (const auto* p : params) {
      if (p->value.grad->empty()) continue;
      for (T g : *p->value.grad) acc += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(acc);
  }

  static void clip_grad_norm(const ParamRefs<T>& params, double max_norm) {
    const double n = grad_norm(params);
    if (n <= max_norm || n == 0.0) return;
    const T s = static_cast<T>(max_norm / n);
    for (auto* p : params)
      for (auto& g : *p->value.grad) g *= s;
  }
};

// Decoder block: residual self-attention (rope), residual cross-attention over
// the memory/peer context (no positional encoding), residual MLP.
template <class T>
struct DecoderBlockT {
  LayerNormT<T> ln1, ln2, ln3;
  MultiHeadAttentionT<T> self_attn, cross_attn;
  MlpT<T> mlp;

  DecoderBlockT() = default;
  DecoderBlockT(int d, int heads, int mlp_mult, const std::string& name, std::mt19937_64& rng)
      : ln1(d, name + ".ln1"),
        ln2(d, name + ".ln2"),
        ln3(d, name + ".ln3"),
        self_attn(d, heads, name + ".self", rng),
        cross_attn(d, heads, name + ".cross", rng),
        mlp(d, d * mlp_mult, name + ".mlp", rng) {}

  TensorT<T> forward(const TensorT<T>& x, const typename MultiHeadAttentionT<T>::Kv& ctx_kv,
                     const RotaryTableT<T>& rope) const {
    TensorT<T> y = add(x, self_attn.forward_self(ln1.forward(x), &rope));
    y = add(y, cross_attn.forward_kv(ln2.forward(y), ctx_kv));
    return add(y, mlp.forward(ln3.forward(y)));
  }

  void collect(ParamRefs<T>& out) {
    ln1.collect(out);
    ln2.collect(out);
    ln3.collect(out);
    self_attn.collect(out);
    cross_attn.collect(out);
    mlp.collect(out);
  }
};

}  // namespace nn
}  // namespace mustr
