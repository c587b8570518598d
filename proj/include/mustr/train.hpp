#pragma once

#include <random>
#include <vector>

#include "mustr/loss.hpp"
#include "mustr/model.hpp"
#include "mustr/pipeline.hpp"

namespace mustr {

template <class T>
struct SceneTensorsT {
  std::vector<TensorT<T>> gt_global;  // [H*W,3] per frame
  std::vector<TensorT<T>> gt_local;
  std::vector<std::vector<std::uint8_t>> valid;
};

template <class T>
SceneTensorsT<T> scene_to_tensors(const SyntheticScene& scene) {
  SceneTensorsT<T> out;
  const std::size_t n = scene.images.size();
  out.gt_global.reserve(n);
  out.gt_local.reserve(n);
  out.valid.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.gt_global.push_back(pointmap_to_tensor<T>(scene.gt_global[i]));
    out.gt_local.push_back(pointmap_to_tensor<T>(scene.gt_local[i]));
    std::vector<std::uint8_t> v(scene.gt_local[i].size());
    for (std::size_t k = 0; k < v.size(); ++k)
      v[k] = scene.gt_local[i].valid[k] && scene.gt_global[i].valid[k];
    out.valid.push_back(std::move(v));
  }
  return out;
}

// One multi-view training tuple: populate the memory with the first n views
// (two jointly, then one at a time), render all N views against it, and take
// the mean confidence-wrapped regression loss over the n + N predictions.
template <class T>
TensorT<T> multiview_tuple_loss(const ModelT<T>& model, const std::vector<TokenSeqT<T>>& frames,
                                const SceneTensorsT<T>& gt, const std::vector<int>& view_ids,
                                int n, std::mt19937_64& rng, double dropout_p) {
  const int N = static_cast<int>(frames.size());
  if (n < 2 || n > N) throw ContractError("multiview_tuple_loss: need 2 <= n <= N");

  MemoryStateT<T> mem;
  std::vector<PredictionT<T>> preds;
  preds.reserve(n + N);
  std::vector<int> pred_view;
  pred_view.reserve(n + N);

  {
    std::vector<TokenSeqT<T>> init(frames.begin(), frames.begin() + 2);
    auto p = model.extend_memory(mem, init, rng, dropout_p);
    for (int i = 0; i < 2; ++i) {
      preds.push_back(p[i]);
      pred_view.push_back(view_ids[i]);
    }
  }
  for (int i = 2; i < n; ++i) {
    auto p = model.extend_memory(mem, {frames[i]}, rng, dropout_p);
    preds.push_back(p[0]);
    pred_view.push_back(view_ids[i]);
  }
  {
    auto p = model.render(mem, frames);
    for (int i = 0; i < N; ++i) {
      preds.push_back(p[i]);
      pred_view.push_back(view_ids[i]);
    }
  }

  const T alpha = static_cast<T>(model.cfg.conf_alpha);
  TensorT<T> total;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int v = pred_view[i];
    TensorT<T> lg = regression_loss(preds[i].global_pts, gt.gt_global[v], gt.valid[v],
                                    NormalizerMode::Metric, model.cfg.loss_space);
    TensorT<T> ll = regression_loss(preds[i].local_pts, gt.gt_local[v], gt.valid[v],
                                    NormalizerMode::Metric, model.cfg.loss_space);
    TensorT<T> term = add(confidence_loss(lg, preds[i].conf, gt.valid[v], alpha),
                          confidence_loss(ll, preds[i].conf, gt.valid[v], alpha));
    total = total.defined() ? add(total, term) : term;
  }
  return mul_scalar(total, T(1) / static_cast<T>(preds.size()));
}

}  // namespace mustr
