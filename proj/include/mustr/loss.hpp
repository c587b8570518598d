#pragma once

#include <cstdint>
#include <vector>

#include "mustr/tensor.hpp"

namespace mustr {

// z := zhat when ground truth is metric; ScaleInvariant derives z from the
// prediction itself (mean distance of valid points to the origin).
enum class NormalizerMode { Metric, ScaleInvariant };

enum class LossSpace { Log, Linear };

namespace detail {

template <class T>
T mean_valid_norm(const TensorT<T>& pts, const std::vector<std::uint8_t>& valid) {
  const int n = pts.shape[0], d = pts.shape[1];
  double acc = 0.0;
  std::size_t cnt = 0;
  for (int r = 0; r < n; ++r) {
    if (!valid[r]) continue;
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      const double v = static_cast<double>(pts.at(static_cast<std::size_t>(r) * d + j));
      s += v * v;
    }
    acc += std::sqrt(s);
    ++cnt;
  }
  if (cnt == 0) throw DegeneracyError("regression_loss: no valid points for normalization");
  return static_cast<T>(acc / static_cast<double>(cnt));
}

}  // namespace detail

// Per-pixel regression loss between predicted and ground-truth pointmaps.
// Log space compares f(pred/z) against f(gt/zhat) with f the log-magnitude
// map; Linear space compares the normalized points directly. Invalid pixels
// contribute exactly zero. Gradients flow through pred, including through the
// ScaleInvariant normalizer.
template <class T>
TensorT<T> regression_loss(const TensorT<T>& pred, const TensorT<T>& gt,
                           const std::vector<std::uint8_t>& valid, NormalizerMode norm,
                           LossSpace space) {
  if (pred.shape != gt.shape)
    throw DimensionError("regression_loss: pred " + shape_str(pred.shape) + " vs gt " +
                         shape_str(gt.shape));
  if (pred.shape.size() != 2 || pred.shape[1] != 3)
    throw DimensionError("regression_loss: expected [N,3] pointmaps, got " + shape_str(pred.shape));
  const int n = pred.shape[0];
  if (static_cast<int>(valid.size()) != n)
    throw DimensionError("regression_loss: valid mask size mismatch");

  const T zhat = detail::mean_valid_norm(gt, valid);
  if (zhat <= T(0)) throw DegeneracyError("regression_loss: degenerate ground-truth normalizer");

  // mask as a constant tensor, used both for the normalizer and the output
  std::vector<T> mvec(n, T(0));
  std::size_t cnt = 0;
  for (int r = 0; r < n; ++r)
    if (valid[r]) {
      mvec[r] = T(1);
      ++cnt;
    }
  TensorT<T> mask = TensorT<T>::from({n}, std::move(mvec));

  TensorT<T> pred_n;
  if (norm == NormalizerMode::Metric) {
    pred_n = mul_scalar(pred, T(1) / zhat);
  } else {
    // z = mean |pred| over valid pixels, as a graph node
    TensorT<T> norms = mul(rownorm(pred), mask);
    TensorT<T> z = mul_scalar(sum(norms), T(1) / static_cast<T>(cnt));
    if (z.at(0) <= T(0)) throw DegeneracyError("regression_loss: degenerate prediction normalizer");
    pred_n = scale_by(pred, recip(z));
  }
  TensorT<T> gt_n = mul_scalar(gt.requires_grad ? gt.detach() : gt, T(1) / zhat);

  TensorT<T> diff;
  if (space == LossSpace::Log) {
    diff = sub(logmap_rows(pred_n), logmap_rows(gt_n));
  } else {
    diff = sub(pred_n, gt_n);
  }
  return mul(rownorm(diff), mask);
}

// Mean over valid pixels of conf*loss - alpha*log(conf).
template <class T>
TensorT<T> confidence_loss(const TensorT<T>& loss_map, const TensorT<T>& conf,
                           const std::vector<std::uint8_t>& valid, T alpha) {
  if (alpha < T(0)) throw ContractError("confidence_loss: alpha must be non-negative");
  if (loss_map.shape != conf.shape || loss_map.shape.size() != 1)
    throw DimensionError("confidence_loss: loss " + shape_str(loss_map.shape) + " vs conf " +
                         shape_str(conf.shape));
  const int n = loss_map.shape[0];
  if (static_cast<int>(valid.size()) != n)
    throw DimensionError("confidence_loss: valid mask size mismatch");
  for (int r = 0; r < n; ++r)
    if (valid[r] && conf.at(r) < T(1) - T(1e-6))
      throw ContractError("confidence_loss: confidence below 1");

  std::vector<T> mvec(n, T(0));
  std::size_t cnt = 0;
  for (int r = 0; r < n; ++r)
    if (valid[r]) {
      mvec[r] = T(1);
      ++cnt;
    }
  if (cnt == 0) throw DegeneracyError("confidence_loss: no valid pixels");
  TensorT<T> mask = TensorT<T>::from({n}, std::move(mvec));

  TensorT<T> weighted = sub(mul(conf, loss_map), mul_scalar(log(conf), alpha));
  return mul_scalar(sum(mul(weighted, mask)), T(1) / static_cast<T>(cnt));
}

}  // namespace mustr
