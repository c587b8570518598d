#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "mustr/geometry.hpp"
#include "mustr/model.hpp"
#include "mustr/scene_store.hpp"
#include "mustr/trajectory.hpp"

namespace mustr {

// ---------------------------------------------------------------------------
// Synthetic scenes: textured box room, exact pinhole pointmaps
// ---------------------------------------------------------------------------

enum class TrajectoryKind { Orbit, Line, RandomWalk };

struct SynthParams {
  int frames = 20;
  int image_h = 64;
  int image_w = 64;
  double focal_px = 80.0;
  double room_half_extent = 3.0;
  TrajectoryKind kind = TrajectoryKind::Orbit;
  double orbit_radius = 1.2;
  double step = 0.05;  // per-frame translation for Line / RandomWalk
};

struct SyntheticScene {
  SynthParams params;
  double focal_px = 0.0;
  Trajectory traj;  // ground truth, camera -> world, timestamp = frame index
  std::vector<Image> images;
  std::vector<PointMap> gt_local;   // camera coordinates
  std::vector<PointMap> gt_global;  // frame-1 coordinates, derived exactly from poses
};

SyntheticScene synth_scene(std::uint64_t seed, const SynthParams& params);

// ---------------------------------------------------------------------------
// Oracle predictor: ground truth + controllable corruption
// ---------------------------------------------------------------------------

struct OracleConfig {
  double noise_sigma = 0.0;   // meters, isotropic, per pointmap
  double focal_jitter = 0.0;  // relative focal perturbation amplitude
  double dropout_frac = 0.0;  // fraction of pixels invalidated
  // Noise shrinks as sigma/sqrt(1 + context_gain * memory_frames): predictions
  // sharpen with accumulated context, which is what end-of-run rendering
  // exploits.
  double context_gain = 0.0;
};

struct FramePrediction {
  PointMap local;
  PointMap global;
  std::vector<double> conf;  // >= 1
};

FramePrediction oracle_predict(const SyntheticScene& scene, int idx, const OracleConfig& cfg,
                               std::mt19937_64& rng, int context_frames = 0);

// ---------------------------------------------------------------------------
// Predictor interface for the online loop
// ---------------------------------------------------------------------------

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual int frame_count() const = 0;
  virtual double timestamp(int idx) const = 0;
  // prediction against the current context, without admitting the frame
  virtual FramePrediction predict(int idx) = 0;
  // admit the most recent prediction for idx into the memory
  virtual void commit(int idx) = 0;
  virtual std::size_t memory_frames() const = 0;
};

class OraclePredictor : public Predictor {
 public:
  OraclePredictor(const SyntheticScene& scene, const OracleConfig& cfg, std::uint64_t seed)
      : scene_(scene), cfg_(cfg), rng_(seed) {}
  int frame_count() const override { return static_cast<int>(scene_.images.size()); }
  double timestamp(int idx) const override { return scene_.traj.entries[idx].timestamp; }
  FramePrediction predict(int idx) override {
    return oracle_predict(scene_, idx, cfg_, rng_, static_cast<int>(committed_));
  }
  void commit(int) override { ++committed_; }
  std::size_t memory_frames() const override { return committed_; }

 private:
  const SyntheticScene& scene_;
  OracleConfig cfg_;
  std::mt19937_64 rng_;
  std::size_t committed_ = 0;
};

class ModelPredictor : public Predictor {
 public:
  ModelPredictor(const Model& model, const std::vector<Image>& images);
  int frame_count() const override { return static_cast<int>(images_.size()); }
  double timestamp(int idx) const override { return static_cast<double>(idx); }
  FramePrediction predict(int idx) override;
  void commit(int idx) override;
  std::size_t memory_frames() const override { return memory_.frame_count(); }
  const Memory& memory() const { return memory_; }

 private:
  const Model& model_;
  const std::vector<Image>& images_;
  std::vector<TokenSeq> encoded_;
  Memory memory_;
  std::unique_ptr<FrameForwardT<float>> last_forward_;
  int last_idx_ = -1;
  std::mt19937_64 rng_{0};
};

// ---------------------------------------------------------------------------
// Online visual odometry
// ---------------------------------------------------------------------------

struct FrameResult {
  CameraPose pose;
  double focal = 0.0;
  std::vector<double> depth;  // full-resolution z of the local pointmap
  bool added_to_memory = false;
  double discovery = 0.0;
  bool pose_ok = true;
};

// One step of the online loop: predict, recover focal and pose, rate the
// discovery of new scene content, and admit the frame if it sees enough.
FrameResult online_update(int frame_idx, Predictor& pred, SceneStore& scene,
                          const GateParams& gate, double conf_thresh = 1.0);

struct VoResult {
  Trajectory traj;         // final trajectory (rendered when render_final)
  Trajectory causal_traj;  // per-frame outputs of the causal pass
  std::vector<FrameResult> frames;
  double fps = 0.0;
};

VoResult run_vo(Predictor& pred, const GateParams& gate, bool render_final,
                double conf_thresh = 1.0);

// ---------------------------------------------------------------------------
// Offline reconstruction
// ---------------------------------------------------------------------------

// Cosine similarity of mean-pooled token vectors; symmetric, unit diagonal.
Eigen::MatrixXd pooled_similarity(const std::vector<Eigen::VectorXd>& pooled);

Eigen::VectorXd mean_pool_tokens(const Tensor& tokens);
// Raw-patch pooling for pipelines that run without an encoder.
Eigen::VectorXd mean_pool_patches(const Image& img, int patch);

// Farthest point sampling on d = 1 - sim, seeded at the least connected image.
std::vector<int> select_keyframes_fps(const Eigen::MatrixXd& sim, int K);

// Most connected keyframe first, then greedily append by highest similarity
// to the already selected set. Ties break toward the lowest index.
std::vector<int> order_greedy(const Eigen::MatrixXd& sim, const std::vector<int>& keyframes);

struct Reconstruction {
  std::vector<int> keyframes;
  std::vector<int> order;  // keyframes in memory-build order
  std::vector<CameraPose> poses;
  std::vector<double> focals;
  std::vector<PointMap> global_maps;
  std::vector<std::vector<double>> confs;
};

Reconstruction offline_reconstruct(const Model& model, const std::vector<Image>& images, int K,
                                   int batch_s = 1, double conf_thresh = 1.0);

Reconstruction offline_reconstruct_oracle(const SyntheticScene& scene, const OracleConfig& cfg,
                                          int K, std::uint64_t seed, double conf_thresh = 1.0);

// ---------------------------------------------------------------------------
// Toy multi-view training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int steps = 300;
  int views_per_tuple = 10;  // N
  double lr = 0.01;
  double momentum = 0.9;
  double grad_clip = 1.0;
  double dropout_p = 0.05;
  std::uint64_t seed = 1;
  bool freeze_encoder = true;
};

std::vector<double> toy_train(Model& model, const std::vector<SyntheticScene>& scenes,
                              const TrainConfig& cfg);

// Moving average used to judge convergence of noisy step losses.
std::vector<double> smooth_history(const std::vector<double>& history, int window = 20);

// ---------------------------------------------------------------------------
// Bridges between model-space tensors and geometry-space maps
// ---------------------------------------------------------------------------

template <class T>
FramePrediction to_frame_prediction(const PredictionT<T>& p) {
  FramePrediction out;
  out.local.rows = out.global.rows = p.h;
  out.local.cols = out.global.cols = p.w;
  out.local.frame = PointFrame::LocalCamera;
  out.global.frame = PointFrame::GlobalFrame1;
  const std::size_t n = static_cast<std::size_t>(p.h) * p.w;
  out.local.pts.resize(n);
  out.global.pts.resize(n);
  out.local.valid.assign(n, 1);
  out.global.valid.assign(n, 1);
  out.conf.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.global.pts[i] = Eigen::Vector3d(p.global_pts.at(i * 3), p.global_pts.at(i * 3 + 1),
                                        p.global_pts.at(i * 3 + 2));
    out.local.pts[i] = Eigen::Vector3d(p.local_pts.at(i * 3), p.local_pts.at(i * 3 + 1),
                                       p.local_pts.at(i * 3 + 2));
    out.conf[i] = static_cast<double>(p.conf.at(i));
  }
  return out;
}

template <class T>
TensorT<T> pointmap_to_tensor(const PointMap& pm) {
  std::vector<T> data(pm.size() * 3);
  for (std::size_t i = 0; i < pm.size(); ++i)
    for (int k = 0; k < 3; ++k) data[i * 3 + k] = static_cast<T>(pm.pts[i][k]);
  return TensorT<T>::from({static_cast<int>(pm.size()), 3}, std::move(data));
}

}  // namespace mustr
