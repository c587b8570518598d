#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "mustr/hash.hpp"
#include "mustr/loss.hpp"
#include "mustr/nn.hpp"
#include "mustr/tensor.hpp"

namespace mustr {

enum class InjectionVariant { MLP, Linear, Constant, None, FromLayerL };

struct ModelConfig {
  int image_h = 64;
  int image_w = 64;
  int patch_size = 16;
  int embed_dim_enc = 64;
  int embed_dim_dec = 64;
  int enc_depth = 2;
  int depth_L = 4;  // decoder layer count
  int heads = 4;
  int mlp_mult = 4;
  InjectionVariant injection_variant = InjectionVariant::MLP;
  int injection_hidden_mult = 4;
  LossSpace loss_space = LossSpace::Log;
  double dropout_p = 0.0;
  double conf_alpha = 0.2;

  int tokens_per_frame() const { return (image_h / patch_size) * (image_w / patch_size); }

  void validate() const {
    if (patch_size <= 0 || image_h % patch_size != 0 || image_w % patch_size != 0)
      throw DimensionError("config: image " + std::to_string(image_h) + "x" +
                           std::to_string(image_w) + " not divisible by patch " +
                           std::to_string(patch_size));
    if (embed_dim_enc <= 0 || embed_dim_dec <= 0 || heads <= 0)
      throw ContractError("config: dims and heads must be positive");
    if (embed_dim_enc % heads != 0 || embed_dim_dec % heads != 0)
      throw ContractError("config: embed dims must be divisible by heads");
    if ((embed_dim_enc / heads) % 4 != 0 || (embed_dim_dec / heads) % 4 != 0)
      throw ContractError("config: head dim must be divisible by 4 for 2D rotary encoding");
    if (depth_L < 2) throw ContractError("config: decoder depth must be >= 2");
    if (enc_depth < 1) throw ContractError("config: encoder depth must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ContractError("config: dropout_p in [0,1)");
    if (injection_hidden_mult <= 0) throw ContractError("config: injection_hidden_mult > 0");
  }
};

// RGB image, row-major, channels interleaved, values in [0,1].
struct Image {
  int h = 0;
  int w = 0;
  std::vector<float> rgb;  // h*w*3
  float at(int r, int c, int ch) const { return rgb[(static_cast<std::size_t>(r) * w + c) * 3 + ch]; }
};

template <class T>
struct TokenSeqT {
  TensorT<T> tokens;                       // [T, d]
  std::vector<std::pair<int, int>> grid;   // per-token patch (row, col)
  int image_id = -1;
};

template <class T>
struct PredictionT {
  int h = 0, w = 0;
  TensorT<T> global_pts;  // [H*W, 3], frame-1 coordinates
  TensorT<T> local_pts;   // [H*W, 3], camera coordinates
  TensorT<T> conf;        // [H*W], >= 1 (activation 1+exp)
};

template <class T>
struct MemoryEntryT {
  int frame_id = -1;
  TensorT<T> raw;                  // dropout-surviving decoder tokens at this layer
  TensorT<T> augmented;            // raw + injected terminal-layer information
  std::vector<int> kept_token_ids;
};

// Per-decoder-layer sequences of admitted frame tokens; the cross-attention
// context. Entries are append-only: once inserted they are never rewritten.
template <class T>
struct MemoryStateT {
  std::vector<std::vector<MemoryEntryT<T>>> layers;  // [L][frames in insertion order]
  std::vector<int> frame_ids;

  bool empty() const { return frame_ids.empty(); }
  int reference_id() const { return frame_ids.empty() ? -1 : frame_ids.front(); }
  std::size_t frame_count() const { return frame_ids.size(); }

  std::size_t token_count() const {
    std::size_t n = 0;
    if (!layers.empty())
      for (const auto& e : layers[0]) n += e.kept_token_ids.size();
    return n;
  }
};

// Byte-level fingerprint of every entry; the causality checks compare this
// before and after extend/render calls.
template <class T>
std::uint64_t memory_hash(const MemoryStateT<T>& mem) {
  Fnv1a h;
  h.update_vector(mem.frame_ids);
  h.update_value(mem.layers.size());
  for (const auto& layer : mem.layers) {
    h.update_value(layer.size());
    for (const auto& e : layer) {
      h.update_value(e.frame_id);
      h.update_vector(e.kept_token_ids);
      h.update_vector(*e.raw.data);
      h.update_vector(*e.augmented.data);
    }
  }
  return h.digest();
}

namespace detail {

// Gather per-pixel channels [c0,c1) out of per-token patch vectors.
// x: [T, pp*pp*num_ch] pixel-major; out: [H*W, c1-c0].
template <class T>
TensorT<T> unpatchify_channels(const TensorT<T>& x, const std::vector<std::pair<int, int>>& grid,
                               int img_h, int img_w, int patch, int num_ch, int c0, int c1) {
  const int tokens = x.shape[0];
  const int nc = c1 - c0;
  TensorT<T> out = TensorT<T>::zeros({img_h * img_w, nc});
  for (int t = 0; t < tokens; ++t) {
    const auto [pr, pc] = grid[t];
    for (int py = 0; py < patch; ++py)
      for (int px = 0; px < patch; ++px) {
        const std::size_t pix = static_cast<std::size_t>(pr * patch + py) * img_w + pc * patch + px;
        const std::size_t src = static_cast<std::size_t>(t) * x.shape[1] +
                                (static_cast<std::size_t>(py) * patch + px) * num_ch;
        for (int c = 0; c < nc; ++c) out.at(pix * nc + c) = x.at(src + c0 + c);
      }
  }
  if (mustr::detail::track(x)) {
    out.requires_grad = true;
    auto g = grid;
    mustr::detail::attach<T>(out, {x}, [g, img_w, patch, num_ch, c0, nc, tokens](const TensorT<T>& o) {
      auto& px_ = o.node->parents[0];
      if (!px_.requires_grad) return;
      px_.ensure_grad();
      for (int t = 0; t < tokens; ++t) {
        const auto [pr, pc] = g[t];
        for (int py = 0; py < patch; ++py)
          for (int qx = 0; qx < patch; ++qx) {
            const std::size_t pix = static_cast<std::size_t>(pr * patch + py) * img_w + pc * patch + qx;
            const std::size_t src = static_cast<std::size_t>(t) * px_.shape[1] +
                                    (static_cast<std::size_t>(py) * patch + qx) * num_ch;
            for (int c = 0; c < nc; ++c) (*px_.grad)[src + c0 + c] += (*o.grad)[pix * nc + c];
          }
      }
    });
  }
  return out;
}

}  // namespace detail

template <class T>
struct FrameForwardT {
  int image_id = -1;
  std::vector<std::pair<int, int>> grid;
  std::vector<TensorT<T>> layer_out;  // D^0 .. D^L (depth_L + 1 entries)
  PredictionT<T> pred;
};

// The full network: frozen-capable ViT encoder, symmetric memory decoder with
// terminal-layer feedback injection, and a linear dual-pointmap head.
template <class T>
class ModelT {
 public:
  ModelConfig cfg;

  explicit ModelT(const ModelConfig& config, std::uint64_t seed = 1) : cfg(config) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const int pvec = cfg.patch_size * cfg.patch_size * 3;
    patch_embed_ = nn::LinearT<T>(pvec, cfg.embed_dim_enc, "enc.patch_embed", rng);
    for (int i = 0; i < cfg.enc_depth; ++i)
      enc_blocks_.emplace_back(cfg.embed_dim_enc, cfg.heads, cfg.mlp_mult,
                               "enc.block" + std::to_string(i), rng);
    enc_norm_ = nn::LayerNormT<T>(cfg.embed_dim_enc, "enc.norm");
    dec_proj_ = nn::LinearT<T>(cfg.embed_dim_enc, cfg.embed_dim_dec, "dec.proj", rng);
    ref_embed_ = {TensorT<T>::randn({cfg.embed_dim_dec}, rng, T(0.02), true), "dec.view_embed"};
    for (int i = 0; i < cfg.depth_L; ++i)
      dec_blocks_.emplace_back(cfg.embed_dim_dec, cfg.heads, cfg.mlp_mult,
                               "dec.block" + std::to_string(i), rng);
    dec_norm_ = nn::LayerNormT<T>(cfg.embed_dim_dec, "dec.norm");
    head_ = nn::LinearT<T>(cfg.embed_dim_dec, 7 * cfg.patch_size * cfg.patch_size, "head.linear", rng);
    inj_norm_ = nn::LayerNormT<T>(cfg.embed_dim_dec, "inj.norm");
    inj_mlp_ = nn::MlpT<T>(cfg.embed_dim_dec, cfg.embed_dim_dec * cfg.injection_hidden_mult,
                           "inj.mlp", rng);
    inj_lin_ = nn::LinearT<T>(cfg.embed_dim_dec, cfg.embed_dim_dec, "inj.lin", rng);
    inj_bias_ = {TensorT<T>::randn({cfg.depth_L - 1, cfg.embed_dim_dec}, rng, T(0.02), true),
                 "inj.bias"};
  }

  // ---- encoder ------------------------------------------------------------

  TokenSeqT<T> patchify_encode(const Image& img, int image_id) const {
    if (img.h != cfg.image_h || img.w != cfg.image_w)
      throw DimensionError("patchify_encode: image " + std::to_string(img.h) + "x" +
                           std::to_string(img.w) + " does not match configured " +
                           std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w));
    if (img.h % cfg.patch_size != 0 || img.w % cfg.patch_size != 0)
      throw DimensionError("patchify_encode: image not divisible by patch size");
    for (float v : img.rgb)
      if (!(v >= -1e-6f && v <= 1.0f + 1e-6f))
        throw ContractError("patchify_encode: pixel values must lie in [0,1]");

    const int P = cfg.patch_size;
    const int gh = img.h / P, gw = img.w / P;
    TokenSeqT<T> seq;
    seq.image_id = image_id;
    std::vector<T> patches(static_cast<std::size_t>(gh) * gw * P * P * 3);
    seq.grid.reserve(static_cast<std::size_t>(gh) * gw);
    std::size_t o = 0;
    for (int pr = 0; pr < gh; ++pr)
      for (int pc = 0; pc < gw; ++pc) {
        seq.grid.emplace_back(pr, pc);
        for (int py = 0; py < P; ++py)
          for (int px = 0; px < P; ++px)
            for (int c = 0; c < 3; ++c)
              patches[o++] = static_cast<T>(img.at(pr * P + py, pc * P + px, c));
      }
    TensorT<T> x = TensorT<T>::from({gh * gw, P * P * 3}, std::move(patches));
    x = patch_embed_.forward(x);
    RotaryTableT<T> rope = make_rotary_table<T>(seq.grid, cfg.embed_dim_enc / cfg.heads);
    for (const auto& blk : enc_blocks_) x = blk.forward(x, rope);
    seq.tokens = enc_norm_.forward(x);
    return seq;
  }

  // ---- decoder ------------------------------------------------------------

  // D^0 = Linear(E) with the view embedding added to every non-reference token.
  TensorT<T> project_and_mark(const TokenSeqT<T>& tok, bool is_reference) const {
    TensorT<T> d0 = dec_proj_.forward(tok.tokens);
    if (!is_reference) d0 = add_rowvec(d0, ref_embed_.value);
    return d0;
  }

  // Augmented layer slots for one frame: slots l < L-1 receive the terminal
  // layer's injected information, slot L-1 stays raw.
  std::vector<TensorT<T>> inject_feedback(const std::vector<TensorT<T>>& layer_out) const {
    const int L = cfg.depth_L;
    std::vector<TensorT<T>> aug(L);
    aug[L - 1] = layer_out[L - 1];
    if (L == 1) return aug;
    TensorT<T> inj;
    switch (cfg.injection_variant) {
      case InjectionVariant::MLP:
        inj = inj_mlp_.forward(inj_norm_.forward(layer_out[L - 1]));
        break;
      case InjectionVariant::FromLayerL:
        inj = inj_mlp_.forward(inj_norm_.forward(layer_out[L]));
        break;
      case InjectionVariant::Linear:
        inj = inj_lin_.forward(inj_norm_.forward(layer_out[L - 1]));
        break;
      case InjectionVariant::Constant:
      case InjectionVariant::None:
        break;
    }
    for (int l = 0; l < L - 1; ++l) {
      switch (cfg.injection_variant) {
        case InjectionVariant::None:
          aug[l] = layer_out[l];
          break;
        case InjectionVariant::Constant: {
          TensorT<T> row = reshape(take_rows(inj_bias_.value, {l}), {cfg.embed_dim_dec});
          aug[l] = add_rowvec(layer_out[l], row);
          break;
        }
        default:
          aug[l] = add(layer_out[l], inj);
      }
    }
    return aug;
  }

  // Forward a batch of frames against the memory. When peers_visible, each
  // frame also cross-attends to the other incoming frames' previous-layer
  // tokens (the s>1 update path); rendering keeps frames independent.
  // A lone first frame on an empty memory attends to its own tokens.
  std::vector<FrameForwardT<T>> forward_frames(const MemoryStateT<T>& mem,
                                               const std::vector<TokenSeqT<T>>& frames,
                                               bool peers_visible) const {
    if (frames.empty()) throw ContractError("forward_frames: no frames");
    const int L = cfg.depth_L;
    const int nf = static_cast<int>(frames.size());
    const bool have_mem = !mem.empty();
    if (!have_mem && !(peers_visible || nf == 1))
      throw EmptyMemoryError("forward_frames: empty memory and no peer context");
    if (have_mem && static_cast<int>(mem.layers.size()) != L)
      throw ContractError("forward_frames: memory depth mismatch");

    const int ref_id = have_mem ? mem.reference_id() : frames.front().image_id;

    std::vector<FrameForwardT<T>> out(nf);
    std::vector<RotaryTableT<T>> rope(nf);
    std::vector<TensorT<T>> cur(nf);
    for (int i = 0; i < nf; ++i) {
      out[i].image_id = frames[i].image_id;
      out[i].grid = frames[i].grid;
      rope[i] = make_rotary_table<T>(frames[i].grid, cfg.embed_dim_dec / cfg.heads);
      cur[i] = project_and_mark(frames[i], frames[i].image_id == ref_id);
      out[i].layer_out.push_back(cur[i]);
    }

    using Kv = typename nn::MultiHeadAttentionT<T>::Kv;
    for (int l = 0; l < L; ++l) {
      const auto& blk = dec_blocks_[l];
      // Memory context at slot l, projected once and shared by every frame in
      // the batch.
      Kv mem_kv;
      bool have_mem_kv = false;
      if (have_mem && !mem.layers[l].empty()) {
        std::vector<TensorT<T>> parts;
        parts.reserve(mem.layers[l].size());
        for (const auto& e : mem.layers[l]) parts.push_back(e.augmented);
        mem_kv = blk.cross_attn.project_kv(concat_rows(parts));
        have_mem_kv = true;
      }
      std::vector<Kv> peer_kv(nf);
      if (peers_visible && nf > 1)
        for (int i = 0; i < nf; ++i) peer_kv[i] = blk.cross_attn.project_kv(cur[i]);

      std::vector<TensorT<T>> next(nf);
      for (int i = 0; i < nf; ++i) {
        std::vector<TensorT<T>> kparts, vparts;
        if (have_mem_kv) {
          kparts.push_back(mem_kv.k);
          vparts.push_back(mem_kv.v);
        }
        if (peers_visible && nf > 1)
          for (int j = 0; j < nf; ++j) {
            if (j == i) continue;
            kparts.push_back(peer_kv[j].k);
            vparts.push_back(peer_kv[j].v);
          }
        Kv ctx;
        if (kparts.empty()) {
          // lone first frame: self-context
          ctx = blk.cross_attn.project_kv(cur[i]);
        } else if (kparts.size() == 1) {
          ctx = {kparts[0], vparts[0]};
        } else {
          ctx = {concat_tokens3(kparts), concat_tokens3(vparts)};
        }
        next[i] = blk.forward(cur[i], ctx, rope[i]);
      }
      cur = std::move(next);
      for (int i = 0; i < nf; ++i) out[i].layer_out.push_back(cur[i]);
    }

    for (int i = 0; i < nf; ++i) out[i].pred = head_forward(cur[i], out[i].grid);
    return out;
  }

  // Linear head: token -> (3+3+1) * patch^2 values, unpatchified into the
  // global pointmap, local pointmap and confidence (1 + exp).
  PredictionT<T> head_forward(const TensorT<T>& dl, const std::vector<std::pair<int, int>>& grid) const {
    TensorT<T> hout = head_.forward(dec_norm_.forward(dl));
    PredictionT<T> pred;
    pred.h = cfg.image_h;
    pred.w = cfg.image_w;
    const int P = cfg.patch_size;
    pred.global_pts = detail::unpatchify_channels(hout, grid, cfg.image_h, cfg.image_w, P, 7, 0, 3);
    pred.local_pts = detail::unpatchify_channels(hout, grid, cfg.image_h, cfg.image_w, P, 7, 3, 6);
    TensorT<T> c = detail::unpatchify_channels(hout, grid, cfg.image_h, cfg.image_w, P, 7, 6, 7);
    pred.conf = add_scalar(exp(reshape(c, {cfg.image_h * cfg.image_w})), T(1));
    return pred;
  }

  // Run the decoder over new frames (jointly when several are given), apply
  // token dropout, inject feedback, and append the surviving tokens to every
  // layer of the memory. Pre-existing entries are never touched.
  std::vector<PredictionT<T>> extend_memory(MemoryStateT<T>& mem,
                                            const std::vector<TokenSeqT<T>>& frames,
                                            std::mt19937_64& rng, double dropout_p) const {
    if (frames.empty()) throw ContractError("extend_memory: no frames");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ContractError("extend_memory: dropout_p in [0,1)");
    auto fwd = forward_frames(mem, frames, /*peers_visible=*/true);
    std::vector<PredictionT<T>> preds;
    preds.reserve(fwd.size());
    for (auto& f : fwd) {
      insert_from_forward(mem, f, rng, dropout_p);
      preds.push_back(f.pred);
    }
    return preds;
  }

  // Predictions against a frozen memory; the memory is left untouched.
  std::vector<PredictionT<T>> render(const MemoryStateT<T>& mem,
                                     const std::vector<TokenSeqT<T>>& frames) const {
    if (mem.empty()) throw EmptyMemoryError("render: empty memory");
    auto fwd = forward_frames(mem, frames, /*peers_visible=*/false);
    std::vector<PredictionT<T>> preds;
    preds.reserve(fwd.size());
    for (auto& f : fwd) preds.push_back(std::move(f.pred));
    return preds;
  }

  // Append one already-forwarded frame to the memory (the online path decides
  // admission after seeing the prediction and must not re-run the decoder).
  void insert_from_forward(MemoryStateT<T>& mem, const FrameForwardT<T>& fwd,
                           std::mt19937_64& rng, double dropout_p) const {
    const int L = cfg.depth_L;
    if (mem.layers.empty()) mem.layers.resize(L);
    for (int id : mem.frame_ids)
      if (id == fwd.image_id)
        throw ContractError("insert_from_forward: duplicate image id " + std::to_string(fwd.image_id));

    const bool is_reference = mem.frame_ids.empty();
    const int tokens = fwd.layer_out[0].shape[0];
    std::vector<int> kept;
    if (is_reference || dropout_p == 0.0) {
      kept.resize(tokens);
      for (int t = 0; t < tokens; ++t) kept[t] = t;
    } else {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (int t = 0; t < tokens; ++t)
        if (u(rng) >= dropout_p) kept.push_back(t);
      if (kept.empty()) {
        std::uniform_int_distribution<int> pick(0, tokens - 1);
        kept.push_back(pick(rng));  // never drop a frame entirely
      }
    }

    // Injection is row-wise, so masking before injecting equals injecting then
    // masking; entries are cached at insertion time and never recomputed.
    std::vector<TensorT<T>> masked(L + 1);
    for (int l = 0; l <= L; ++l) masked[l] = take_rows(fwd.layer_out[l], kept);
    std::vector<TensorT<T>> aug = inject_feedback(masked);
    for (int l = 0; l < L; ++l) {
      MemoryEntryT<T> e;
      e.frame_id = fwd.image_id;
      e.raw = masked[l];
      e.augmented = aug[l];
      e.kept_token_ids = kept;
      mem.layers[l].push_back(std::move(e));
    }
    mem.frame_ids.push_back(fwd.image_id);
  }

  // ---- parameters ---------------------------------------------------------

  ParamRefs<T> parameters() {
    ParamRefs<T> out;
    patch_embed_.collect(out);
    for (auto& b : enc_blocks_) b.collect(out);
    enc_norm_.collect(out);
    dec_proj_.collect(out);
    out.push_back(&ref_embed_);
    for (auto& b : dec_blocks_) b.collect(out);
    dec_norm_.collect(out);
    head_.collect(out);
    inj_norm_.collect(out);
    inj_mlp_.collect(out);
    inj_lin_.collect(out);
    out.push_back(&inj_bias_);
    return out;
  }

  ParamRefs<T> encoder_parameters() {
    ParamRefs<T> out;
    patch_embed_.collect(out);
    for (auto& b : enc_blocks_) b.collect(out);
    enc_norm_.collect(out);
    return out;
  }

  void freeze_encoder() {
    for (auto* p : encoder_parameters()) p->freeze();
  }

  ParameterT<T>* find_param(const std::string& name) {
    for (auto* p : parameters())
      if (p->name == name) return p;
    return nullptr;
  }

  ParameterT<T>& view_embedding() { return ref_embed_; }
  nn::LinearT<T>& head_layer() { return head_; }

 private:
  nn::LinearT<T> patch_embed_;
  std::vector<nn::EncoderBlockT<T>> enc_blocks_;
  nn::LayerNormT<T> enc_norm_;
  nn::LinearT<T> dec_proj_;
  ParameterT<T> ref_embed_;  // B of the reference-marking scheme
  std::vector<nn::DecoderBlockT<T>> dec_blocks_;
  nn::LayerNormT<T> dec_norm_;
  nn::LinearT<T> head_;
  nn::LayerNormT<T> inj_norm_;
  nn::MlpT<T> inj_mlp_;
  nn::LinearT<T> inj_lin_;
  ParameterT<T> inj_bias_;  // per-target-layer bias for the Constant variant
};

using Model = ModelT<float>;
using Memory = MemoryStateT<float>;
using Prediction = PredictionT<float>;
using TokenSeq = TokenSeqT<float>;

}  // namespace mustr
