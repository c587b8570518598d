#include "mustr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>

#include "mustr/train.hpp"

namespace mustr {

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

namespace {

Eigen::Matrix3d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  // camera axes expressed in world coordinates; z forward, y down, x right
  Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d up(0.0, 1.0, 0.0);
  if (std::abs(up.dot(z)) > 0.999) up = Eigen::Vector3d(1.0, 0.0, 0.0);
  Eigen::Vector3d x = up.cross(z).normalized();
  Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

// first positive parameter where eye + t*dir crosses the box boundary
double ray_box_exit(const Eigen::Vector3d& eye, const Eigen::Vector3d& dir, double extent) {
  double t = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] > 1e-15)
      t = std::min(t, (extent - eye[a]) / dir[a]);
    else if (dir[a] < -1e-15)
      t = std::min(t, (-extent - eye[a]) / dir[a]);
  }
  return t;
}

// deterministic wall texture from the world-space hit point
void wall_color(const Eigen::Vector3d& p, float* rgb) {
  const double r = 0.5 + 0.2 * std::sin(3.1 * p.x()) + 0.15 * std::sin(7.3 * p.y() + 1.0);
  const double g = 0.5 + 0.2 * std::sin(2.3 * p.y()) + 0.15 * std::sin(5.9 * p.z() + 2.0);
  const double b = 0.5 + 0.2 * std::sin(2.7 * p.z()) + 0.15 * std::sin(6.1 * p.x() + 4.0);
  rgb[0] = static_cast<float>(std::clamp(r, 0.0, 1.0));
  rgb[1] = static_cast<float>(std::clamp(g, 0.0, 1.0));
  rgb[2] = static_cast<float>(std::clamp(b, 0.0, 1.0));
}

}  // namespace

SyntheticScene synth_scene(std::uint64_t seed, const SynthParams& params) {
  if (params.frames < 1) throw ContractError("synth_scene: need at least one frame");
  SyntheticScene scene;
  scene.params = params;
  scene.focal_px = params.focal_px;
  std::mt19937_64 rng(seed);

  const double E = params.room_half_extent;
  const double inner = 0.75 * E;  // keep cameras away from the walls

  // trajectory
  std::vector<CameraPose> poses;
  if (params.kind == TrajectoryKind::Orbit) {
    for (int i = 0; i < params.frames; ++i) {
      const double th = 2.0 * M_PI * i / std::max(params.frames, 2);
      Eigen::Vector3d eye(params.orbit_radius * std::cos(th), 0.15 * std::sin(2.0 * th),
                          params.orbit_radius * std::sin(th));
      CameraPose p;
      p.rotation = Eigen::Quaterniond(look_at(eye, Eigen::Vector3d::Zero())).normalized();
      p.translation = eye;
      poses.push_back(p);
    }
  } else if (params.kind == TrajectoryKind::Line) {
    for (int i = 0; i < params.frames; ++i) {
      Eigen::Vector3d eye(-0.5 * inner + params.step * i, 0.0, -0.3 * inner);
      eye.x() = std::clamp(eye.x(), -inner, inner);
      CameraPose p;
      p.rotation =
          Eigen::Quaterniond(look_at(eye, eye + Eigen::Vector3d(0.2, 0.0, 1.0))).normalized();
      p.translation = eye;
      poses.push_back(p);
    }
  } else {
    std::normal_distribution<double> step(0.0, params.step);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::Vector3d eye(0.3 * u(rng), 0.2 * u(rng), 0.3 * u(rng));
    double yaw = u(rng) * M_PI;
    for (int i = 0; i < params.frames; ++i) {
      CameraPose p;
      const Eigen::Vector3d fwd(std::sin(yaw), 0.0, std::cos(yaw));
      p.rotation = Eigen::Quaterniond(look_at(eye, eye + fwd)).normalized();
      p.translation = eye;
      poses.push_back(p);
      eye += Eigen::Vector3d(step(rng), 0.3 * step(rng), step(rng));
      for (int a = 0; a < 3; ++a) eye[a] = std::clamp(eye[a], -inner, inner);
      yaw += 0.15 * u(rng);
    }
  }

  const CameraPose pose1_inv = poses.front().inverse();
  const double cx = (params.image_w - 1) * 0.5;
  const double cy = (params.image_h - 1) * 0.5;
  const std::size_t npix = static_cast<std::size_t>(params.image_h) * params.image_w;

  for (int i = 0; i < params.frames; ++i) {
    scene.traj.append(static_cast<double>(i), poses[i]);
    Image img;
    img.h = params.image_h;
    img.w = params.image_w;
    img.rgb.resize(npix * 3);
    PointMap local, global;
    local.rows = global.rows = params.image_h;
    local.cols = global.cols = params.image_w;
    local.frame = PointFrame::LocalCamera;
    global.frame = PointFrame::GlobalFrame1;
    local.pts.resize(npix);
    global.pts.resize(npix);
    local.valid.assign(npix, 1);
    global.valid.assign(npix, 1);

    const Eigen::Matrix3d R = poses[i].rotation.toRotationMatrix();
    for (int r = 0; r < params.image_h; ++r)
      for (int c = 0; c < params.image_w; ++c) {
        const std::size_t k = static_cast<std::size_t>(r) * params.image_w + c;
        const Eigen::Vector3d dir_cam((c - cx) / params.focal_px, (r - cy) / params.focal_px, 1.0);
        const Eigen::Vector3d dir_world = R * dir_cam;
        const double z = ray_box_exit(poses[i].translation, dir_world, E);
        local.pts[k] = dir_cam * z;
        const Eigen::Vector3d world = poses[i].translation + dir_world * z;
        global.pts[k] = pose1_inv.apply(world);
        wall_color(world, &img.rgb[k * 3]);
      }
    scene.images.push_back(std::move(img));
    scene.gt_local.push_back(std::move(local));
    scene.gt_global.push_back(std::move(global));
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

FramePrediction oracle_predict(const SyntheticScene& scene, int idx, const OracleConfig& cfg,
                               std::mt19937_64& rng, int context_frames) {
  if (idx < 0 || idx >= static_cast<int>(scene.images.size()))
    throw ContractError("oracle_predict: frame index out of range");
  FramePrediction out;
  out.local = scene.gt_local[idx];
  out.global = scene.gt_global[idx];
  const std::size_t n = out.local.size();
  out.conf.assign(n, 2.0);

  const double sigma =
      cfg.noise_sigma / std::sqrt(1.0 + cfg.context_gain * std::max(context_frames, 0));

  if (cfg.focal_jitter > 0.0) {
    // scaling x,y of the local map emulates a focal error of f/(1+j)
    std::mt19937_64 jrng(0x9e3779b9ull ^ static_cast<std::uint64_t>(idx));
    std::uniform_real_distribution<double> uj(-cfg.focal_jitter, cfg.focal_jitter);
    const double j = uj(jrng);
    for (auto& p : out.local.pts) {
      p.x() *= 1.0 + j;
      p.y() *= 1.0 + j;
    }
  }

  if (sigma > 0.0) {
    std::normal_distribution<double> g(0.0, sigma);
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Vector3d el(g(rng), g(rng), g(rng));
      Eigen::Vector3d eg(g(rng), g(rng), g(rng));
      out.local.pts[i] += el;
      out.global.pts[i] += eg;
      out.conf[i] = 1.0 + 1.0 / (1.0 + el.norm() + eg.norm());
    }
  }

  if (cfg.dropout_frac > 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i)
      if (u(rng) < cfg.dropout_frac) {
        out.local.valid[i] = 0;
        out.global.valid[i] = 0;
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model predictor
// ---------------------------------------------------------------------------

ModelPredictor::ModelPredictor(const Model& model, const std::vector<Image>& images)
    : model_(model), images_(images) {
  NoGradGuard ng;
  encoded_.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    encoded_.push_back(model_.patchify_encode(images[i], static_cast<int>(i) + 1));
}

FramePrediction ModelPredictor::predict(int idx) {
  NoGradGuard ng;
  auto fwd = model_.forward_frames(memory_, {encoded_[idx]}, /*peers_visible=*/memory_.empty());
  last_forward_ = std::make_unique<FrameForwardT<float>>(fwd[0]);
  last_idx_ = idx;
  return to_frame_prediction(fwd[0].pred);
}

void ModelPredictor::commit(int idx) {
  if (!last_forward_ || last_idx_ != idx)
    throw ContractError("ModelPredictor: commit without a matching predict");
  NoGradGuard ng;
  model_.insert_from_forward(memory_, *last_forward_, rng_, 0.0);
}

// ---------------------------------------------------------------------------
// Online loop
// ---------------------------------------------------------------------------

FrameResult online_update(int frame_idx, Predictor& pred, SceneStore& scene,
                          const GateParams& gate, double conf_thresh) {
  gate.validate();
  FrameResult res;
  FramePrediction p = pred.predict(frame_idx);

  // depth: z channel of the local pointmap
  const std::size_t n = p.local.size();
  res.depth.resize(n);
  for (std::size_t i = 0; i < n; ++i) res.depth[i] = p.local.pts[i].z();

  PoseEstimate est;
  try {
    est = recover_pose(p.local, p.global, p.conf, conf_thresh);
  } catch (const DegeneracyError& e) {
    std::cerr << "warning: frame " << frame_idx << " skipped: " << e.what() << "\n";
    res.pose_ok = false;
    res.discovery = 0.0;
    res.added_to_memory = false;
    return res;
  }
  res.pose = est.pose;
  res.focal = est.focal;
  res.pose_ok = true;

  // confident pixels drive both the discovery statistics and scene insertion
  std::vector<double> cvals;
  for (std::size_t i = 0; i < n; ++i)
    if (p.local.valid[i] && p.global.valid[i] && p.conf[i] > conf_thresh)
      cvals.push_back(p.conf[i]);
  const std::size_t kth = cvals.size() - (cvals.size() * 7 + 9) / 10;
  std::nth_element(cvals.begin(), cvals.begin() + kth, cvals.end());
  const double cut = cvals[kth];

  std::vector<Eigen::Vector3d> pts, rays;
  std::vector<double> depths;
  const Eigen::Vector3d cam = est.pose.translation;
  for (std::size_t i = 0; i < n; ++i) {
    if (!p.local.valid[i] || !p.global.valid[i]) continue;
    if (!(p.conf[i] > conf_thresh) || p.conf[i] < cut) continue;
    const double depth = p.local.pts[i].z();
    if (!(depth > 0.0)) continue;
    Eigen::Vector3d ray = p.global.pts[i] - cam;
    const double rn = ray.norm();
    if (!(rn > 1e-12)) continue;
    pts.push_back(p.global.pts[i]);
    rays.push_back(ray / rn);
    depths.push_back(depth);
  }
  if (pts.empty()) {
    std::cerr << "warning: frame " << frame_idx << " has no usable pixels for the gate\n";
    res.pose_ok = false;
    res.discovery = 0.0;
    res.added_to_memory = false;
    return res;
  }

  const std::vector<double> dists = scene.nearest_normalized(pts, rays, depths);
  res.discovery = discovery_rate(dists, gate.percentile);
  res.added_to_memory = res.discovery > gate.tau_d;
  if (res.added_to_memory) {
    pred.commit(frame_idx);
    scene.insert(pts, rays);
  }
  return res;
}

VoResult run_vo(Predictor& pred, const GateParams& gate, bool render_final, double conf_thresh) {
  if (pred.frame_count() < 1) throw ContractError("run_vo: need at least one frame");
  VoResult out;
  SceneStore scene;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < pred.frame_count(); ++i) {
    FrameResult r = online_update(i, pred, scene, gate, conf_thresh);
    if (r.pose_ok) out.causal_traj.append(pred.timestamp(i), r.pose);
    out.frames.push_back(std::move(r));
  }
  const auto t1 = std::chrono::steady_clock::now();
  const double secs = std::chrono::duration<double>(t1 - t0).count();
  out.fps = secs > 0.0 ? pred.frame_count() / secs : 0.0;

  if (!render_final) {
    out.traj = out.causal_traj;
    return out;
  }
  // break causality: re-render everything against the final memory
  for (int i = 0; i < pred.frame_count(); ++i) {
    FramePrediction p = pred.predict(i);
    try {
      PoseEstimate est = recover_pose(p.local, p.global, p.conf, conf_thresh);
      out.frames[i].pose = est.pose;
      out.frames[i].focal = est.focal;
      out.frames[i].pose_ok = true;
      const std::size_t n = p.local.size();
      for (std::size_t k = 0; k < n; ++k) out.frames[i].depth[k] = p.local.pts[k].z();
      out.traj.append(pred.timestamp(i), est.pose);
    } catch (const DegeneracyError& e) {
      std::cerr << "warning: rendered frame " << i << " skipped: " << e.what() << "\n";
      out.frames[i].pose_ok = false;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Offline reconstruction
// ---------------------------------------------------------------------------

Eigen::MatrixXd pooled_similarity(const std::vector<Eigen::VectorXd>& pooled) {
  const int n = static_cast<int>(pooled.size());
  if (n < 1) throw ContractError("pooled_similarity: need at least one image");
  Eigen::MatrixXd sim(n, n);
  for (int i = 0; i < n; ++i) {
    sim(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      const double denom = std::max(pooled[i].norm() * pooled[j].norm(), 1e-30);
      const double s = pooled[i].dot(pooled[j]) / denom;
      sim(i, j) = s;
      sim(j, i) = s;
    }
  }
  return sim;
}

Eigen::VectorXd mean_pool_tokens(const Tensor& tokens) {
  const int t = tokens.shape[0], d = tokens.shape[1];
  Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) v[j] += tokens.at(static_cast<std::size_t>(i) * d + j);
  return v / t;
}

Eigen::VectorXd mean_pool_patches(const Image& img, int patch) {
  if (img.h % patch != 0 || img.w % patch != 0)
    throw DimensionError("mean_pool_patches: image not divisible by patch");
  const int gh = img.h / patch, gw = img.w / patch;
  const int d = patch * patch * 3;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
  for (int pr = 0; pr < gh; ++pr)
    for (int pc = 0; pc < gw; ++pc) {
      int k = 0;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int c = 0; c < 3; ++c) v[k++] += img.at(pr * patch + py, pc * patch + px, c);
    }
  return v / (gh * gw);
}

std::vector<int> select_keyframes_fps(const Eigen::MatrixXd& sim, int K) {
  const int n = static_cast<int>(sim.rows());
  if (K < 1 || K > n) throw ContractError("select_keyframes_fps: K out of range");

  // seed: minimal total similarity, lowest index on ties
  int seed = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double tot = sim.row(i).sum();
    if (tot < best) {
      best = tot;
      seed = i;
    }
  }
  std::vector<int> picked{seed};
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(picked.size()) < K) {
    const int last = picked.back();
    for (int i = 0; i < n; ++i) min_d[i] = std::min(min_d[i], 1.0 - sim(last, i));
    int next = -1;
    double far = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (std::find(picked.begin(), picked.end(), i) != picked.end()) continue;
      if (min_d[i] > far) {
        far = min_d[i];
        next = i;
      }
    }
    picked.push_back(next);
  }
  return picked;
}

std::vector<int> order_greedy(const Eigen::MatrixXd& sim, const std::vector<int>& keyframes) {
  if (keyframes.empty()) throw ContractError("order_greedy: empty keyframe set");

  // most connected to the other keyframes first
  int first = keyframes.front();
  double best = -std::numeric_limits<double>::infinity();
  for (int k : keyframes) {
    double tot = 0.0;
    for (int j : keyframes)
      if (j != k) tot += sim(k, j);
    if (tot > best || (tot == best && k < first)) {
      best = tot;
      first = k;
    }
  }
  std::vector<int> order{first};
  std::vector<int> remaining;
  for (int k : keyframes)
    if (k != first) remaining.push_back(k);
  std::sort(remaining.begin(), remaining.end());

  while (!remaining.empty()) {
    int pick = -1;
    double best_s = -std::numeric_limits<double>::infinity();
    std::size_t pick_pos = 0;
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      double s = -std::numeric_limits<double>::infinity();
      for (int sel : order) s = std::max(s, sim(remaining[i], sel));
      if (s > best_s) {
        best_s = s;
        pick = remaining[i];
        pick_pos = i;
      }
    }
    order.push_back(pick);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick_pos));
  }
  return order;
}

namespace {

Reconstruction reconstruct_core(
    const Eigen::MatrixXd& sim, int K, int n_images,
    const std::function<void(const std::vector<int>&)>& build_memory,
    const std::function<std::vector<FramePrediction>(const std::vector<int>&)>& render_batch,
    int batch_s, double conf_thresh) {
  if (n_images < 2) throw ContractError("offline_reconstruct: need at least two images");
  if (batch_s < 1) throw ContractError("offline_reconstruct: batch size must be >= 1");

  Reconstruction rec;
  rec.keyframes = select_keyframes_fps(sim, K);
  rec.order = order_greedy(sim, rec.keyframes);
  build_memory(rec.order);

  rec.poses.resize(n_images);
  rec.focals.assign(n_images, 0.0);
  rec.global_maps.resize(n_images);
  rec.confs.resize(n_images);
  for (int start = 0; start < n_images; start += batch_s) {
    std::vector<int> ids;
    for (int i = start; i < std::min(start + batch_s, n_images); ++i) ids.push_back(i);
    auto preds = render_batch(ids);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const int i = ids[k];
      PoseEstimate est = recover_pose(preds[k].local, preds[k].global, preds[k].conf, conf_thresh);
      rec.poses[i] = est.pose;
      rec.focals[i] = est.focal;
      rec.global_maps[i] = std::move(preds[k].global);
      rec.confs[i] = std::move(preds[k].conf);
    }
  }
  return rec;
}

}  // namespace

Reconstruction offline_reconstruct(const Model& model, const std::vector<Image>& images, int K,
                                   int batch_s, double conf_thresh) {
  NoGradGuard ng;
  std::vector<TokenSeq> encoded;
  encoded.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    encoded.push_back(model.patchify_encode(images[i], static_cast<int>(i) + 1));

  std::vector<Eigen::VectorXd> pooled;
  pooled.reserve(encoded.size());
  for (const auto& e : encoded) pooled.push_back(mean_pool_tokens(e.tokens));
  const Eigen::MatrixXd sim = pooled_similarity(pooled);

  Memory mem;
  std::mt19937_64 rng(0);
  auto build = [&](const std::vector<int>& order) {
    for (int id : order) model.extend_memory(mem, {encoded[id]}, rng, 0.0);
  };
  auto render = [&](const std::vector<int>& ids) {
    std::vector<TokenSeq> batch;
    for (int id : ids) batch.push_back(encoded[id]);
    auto preds = model.render(mem, batch);
    std::vector<FramePrediction> out;
    out.reserve(preds.size());
    for (auto& p : preds) out.push_back(to_frame_prediction(p));
    return out;
  };
  return reconstruct_core(sim, K, static_cast<int>(images.size()), build, render, batch_s,
                          conf_thresh);
}

Reconstruction offline_reconstruct_oracle(const SyntheticScene& scene, const OracleConfig& cfg,
                                          int K, std::uint64_t seed, double conf_thresh) {
  std::vector<Eigen::VectorXd> pooled;
  pooled.reserve(scene.images.size());
  const int patch = std::max(4, scene.params.image_h / 4);
  for (const auto& img : scene.images) pooled.push_back(mean_pool_patches(img, patch));
  const Eigen::MatrixXd sim = pooled_similarity(pooled);

  std::mt19937_64 rng(seed);
  int memory_frames = 0;
  auto build = [&](const std::vector<int>& order) { memory_frames = static_cast<int>(order.size()); };
  auto render = [&](const std::vector<int>& ids) {
    std::vector<FramePrediction> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(oracle_predict(scene, id, cfg, rng, memory_frames));
    return out;
  };
  return reconstruct_core(sim, K, static_cast<int>(scene.images.size()), build, render, 1,
                          conf_thresh);
}

// ---------------------------------------------------------------------------
// Toy training loop
// ---------------------------------------------------------------------------

std::vector<double> toy_train(Model& model, const std::vector<SyntheticScene>& scenes,
                              const TrainConfig& cfg) {
  if (scenes.empty()) throw ContractError("toy_train: no scenes");
  const int N = cfg.views_per_tuple;
  for (const auto& s : scenes)
    if (static_cast<int>(s.images.size()) < N)
      throw ContractError("toy_train: scene has fewer frames than views_per_tuple");

  if (cfg.freeze_encoder) model.freeze_encoder();
  std::mt19937_64 rng(cfg.seed);

  // Encoder outputs are constant once frozen; encode every scene frame once.
  std::vector<std::vector<TokenSeq>> encoded(scenes.size());
  std::vector<SceneTensorsT<float>> gt;
  gt.reserve(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (cfg.freeze_encoder) {
      NoGradGuard ng;
      encoded[s].reserve(scenes[s].images.size());
      for (std::size_t i = 0; i < scenes[s].images.size(); ++i)
        encoded[s].push_back(model.patchify_encode(scenes[s].images[i], static_cast<int>(i) + 1));
    }
    gt.push_back(scene_to_tensors<float>(scenes[s]));
  }

  auto params = model.parameters();
  nn::SgdT<float> opt(static_cast<float>(cfg.lr), static_cast<float>(cfg.momentum));

  std::vector<double> history;
  history.reserve(cfg.steps);
  std::uniform_int_distribution<int> pick_n(2, N);
  for (int step = 0; step < cfg.steps; ++step) {
    const std::size_t s = rng() % scenes.size();
    const int total = static_cast<int>(scenes[s].images.size());
    std::vector<int> ids(total);
    for (int i = 0; i < total; ++i) ids[i] = i;
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(N);

    std::vector<TokenSeq> frames;
    frames.reserve(N);
    if (cfg.freeze_encoder) {
      for (int id : ids) frames.push_back(encoded[s][id]);
    } else {
      for (int id : ids)
        frames.push_back(model.patchify_encode(scenes[s].images[id], id + 1));
    }
    const int n = pick_n(rng);

    TensorT<float> loss = multiview_tuple_loss(model, frames, gt[s], ids, n, rng, cfg.dropout_p);
    const double lv = static_cast<double>(loss.at(0));
    if (!std::isfinite(lv))
      throw DataError("toy_train: non-finite loss at step " + std::to_string(step) + " (scene " +
                      std::to_string(s) + ", n=" + std::to_string(n) + ")");
    history.push_back(lv);

    backward(loss);
    if (cfg.grad_clip > 0.0) nn::SgdT<float>::clip_grad_norm(params, cfg.grad_clip);
    opt.step(params);
    nn::SgdT<float>::zero_grad(params);
  }
  return history;
}

std::vector<double> smooth_history(const std::vector<double>& history, int window) {
  std::vector<double> out(history.size());
  double acc = 0.0;
  std::size_t cnt = 0;
  for (std::size_t i = 0; i < history.size(); ++i) {
    acc += history[i];
    ++cnt;
    if (cnt > static_cast<std::size_t>(window)) {
      acc -= history[i - window];
      --cnt;
    }
    out[i] = acc / static_cast<double>(cnt);
  }
  return out;
}

}  // namespace mustr
