#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "mustr/geometry.hpp"
#include "mustr/loss.hpp"

using namespace mustr;

namespace {

Eigen::Quaterniond random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  return q;
}

Eigen::Vector3d random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  return {g(rng), g(rng), g(rng)};
}

// exact pinhole pointmap of a synthetic depth profile
PointMap pinhole_map(int h, int w, double f, const std::function<double(int, int)>& depth) {
  PointMap pm;
  pm.rows = h;
  pm.cols = w;
  pm.pts.resize(static_cast<std::size_t>(h) * w);
  pm.valid.assign(pm.pts.size(), 1);
  const double cx = (w - 1) * 0.5, cy = (h - 1) * 0.5;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double z = depth(r, c);
      pm.pts[static_cast<std::size_t>(r) * w + c] =
          Eigen::Vector3d((c - cx) / f * z, (r - cy) / f * z, z);
    }
  return pm;
}

}  // namespace

TEST_CASE("log_map analytic values") {
  CHECK(log_map(Eigen::Vector3d::Zero()).norm() == 0.0);
  const double r = std::exp(1.0) - 1.0;
  Eigen::Vector3d v(0.0, r, 0.0);
  CHECK(log_map(v).norm() == doctest::Approx(1.0).epsilon(1e-14));
  Eigen::Vector3d w = log_map(Eigen::Vector3d(3.0, 0.0, 0.0));
  CHECK(w.x() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(w.y() == 0.0);
  CHECK(w.z() == 0.0);
}

TEST_CASE("log_map contracts magnitudes and is monotone") {
  std::mt19937_64 rng(5);
  double prev_out = 0.0;
  for (int i = 1; i <= 50; ++i) {
    const double m = 0.1 * i;
    Eigen::Vector3d x = random_vec(rng).normalized() * m;
    const double fo = log_map(x).norm();
    CHECK(fo < m);
    CHECK(fo > prev_out);
    prev_out = fo;
  }
}

TEST_CASE("regression_loss identity and metric analytic value") {
  const int n = 16;
  std::vector<double> gt_data, pred_data;
  for (int i = 0; i < n; ++i) {
    gt_data.insert(gt_data.end(), {0.0, 0.0, 1.0});
    pred_data.insert(pred_data.end(), {0.0, 0.0, std::exp(1.0) - 1.0});
  }
  std::vector<std::uint8_t> valid(n, 1);
  TensorD gt = TensorD::from({n, 3}, std::vector<double>(gt_data));
  TensorD same = TensorD::from({n, 3}, std::vector<double>(gt_data));
  TensorD zero_loss = regression_loss(same, gt, valid, NormalizerMode::Metric, LossSpace::Log);
  for (int i = 0; i < n; ++i) CHECK(zero_loss.at(i) == 0.0);

  TensorD pred = TensorD::from({n, 3}, std::vector<double>(pred_data));
  TensorD lmap = regression_loss(pred, gt, valid, NormalizerMode::Metric, LossSpace::Log);
  for (int i = 0; i < n; ++i)
    CHECK(lmap.at(i) == doctest::Approx(std::abs(std::log(2.0) - 1.0)).epsilon(1e-12));
}

TEST_CASE("regression_loss scale invariance") {
  std::mt19937_64 rng(7);
  const int n = 64;
  std::vector<double> pd(n * 3), gd(n * 3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : pd) v = g(rng) + 2.0;
  for (auto& v : gd) v = g(rng) + 2.0;
  std::vector<std::uint8_t> valid(n, 1);
  for (int i = 0; i < n; i += 7) valid[i] = 0;
  TensorD gt = TensorD::from({n, 3}, std::vector<double>(gd));
  TensorD pred = TensorD::from({n, 3}, std::vector<double>(pd));
  TensorD base = regression_loss(pred, gt, valid, NormalizerMode::ScaleInvariant, LossSpace::Log);

  // powers of two scale exactly, arbitrary lambdas to near machine precision
  for (double lam : {2.0, 0.25, 8.0}) {
    std::vector<double> sd(pd);
    for (auto& v : sd) v *= lam;
    TensorD scaled = TensorD::from({n, 3}, std::move(sd));
    TensorD l = regression_loss(scaled, gt, valid, NormalizerMode::ScaleInvariant, LossSpace::Log);
    for (int i = 0; i < n; ++i) CHECK(l.at(i) == base.at(i));
  }
  std::uniform_real_distribution<double> ul(0.1, 9.0);
  for (int trial = 0; trial < 10; ++trial) {
    const double lam = ul(rng);
    std::vector<double> sd(pd);
    for (auto& v : sd) v *= lam;
    TensorD scaled = TensorD::from({n, 3}, std::move(sd));
    TensorD l = regression_loss(scaled, gt, valid, NormalizerMode::ScaleInvariant, LossSpace::Log);
    for (int i = 0; i < n; ++i) CHECK(l.at(i) == doctest::Approx(base.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("regression_loss rejects empty valid set") {
  TensorD gt = TensorD::from({2, 3}, {1, 0, 0, 0, 1, 0});
  TensorD pred = TensorD::from({2, 3}, {1, 0, 0, 0, 1, 0});
  std::vector<std::uint8_t> valid(2, 0);
  CHECK_THROWS_AS(
      regression_loss(pred, gt, valid, NormalizerMode::ScaleInvariant, LossSpace::Log),
      DegeneracyError);
}

TEST_CASE("confidence_loss analytic values") {
  const int n = 10;
  std::vector<std::uint8_t> valid(n, 1);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  std::vector<double> lvals(n);
  double mean = 0.0;
  for (auto& v : lvals) {
    v = u(rng);
    mean += v;
  }
  mean /= n;
  TensorD lmap = TensorD::from({n}, std::vector<double>(lvals));
  TensorD ones = TensorD::full({n}, 1.0);
  CHECK(confidence_loss(lmap, ones, valid, 0.2).at(0) == doctest::Approx(mean).epsilon(1e-12));

  TensorD zeros = TensorD::zeros({n});
  TensorD conf_e = TensorD::full({n}, std::exp(1.0));
  CHECK(confidence_loss(zeros, conf_e, valid, 0.2).at(0) == doctest::Approx(-0.2).epsilon(1e-12));

  CHECK_THROWS_AS(confidence_loss(lmap, ones, valid, -0.1), ContractError);
  TensorD below = TensorD::full({n}, 0.5);
  CHECK_THROWS_AS(confidence_loss(lmap, below, valid, 0.2), ContractError);
}

TEST_CASE("confidence_loss optimum matches grid scan") {
  // for pixel loss l the optimal confidence is alpha/l clipped to >= 1
  const double alpha = 0.2;
  std::vector<std::uint8_t> valid(1, 1);
  for (double l : {0.05, 0.1, 0.5, 1.0}) {
    TensorD lmap = TensorD::from({1}, {l});
    double best_c = 1.0, best_v = std::numeric_limits<double>::infinity();
    for (double c = 1.0; c <= 8.0; c += 0.001) {
      TensorD conf = TensorD::from({1}, {c});
      const double v = confidence_loss(lmap, conf, valid, alpha).at(0);
      if (v < best_v) {
        best_v = v;
        best_c = c;
      }
    }
    const double expect = std::max(1.0, alpha / l);
    CHECK(best_c == doctest::Approx(expect).epsilon(0.01));
  }
}

TEST_CASE("estimate_focal recovers pinhole focal") {
  auto depth = [](int r, int c) { return 2.0 + 0.3 * std::sin(0.2 * r) + 0.2 * std::cos(0.3 * c); };
  PointMap pm = pinhole_map(32, 32, 100.0, depth);
  std::vector<double> conf(pm.size(), 1.0);
  const double f = estimate_focal(pm, conf);
  CHECK(f > 99.99);
  CHECK(f < 100.01);

  // uniform scaling leaves x/z untouched
  PointMap scaled = pm;
  for (auto& p : scaled.pts) p *= 3.7;
  CHECK(estimate_focal(scaled, conf) == doctest::Approx(f).epsilon(1e-12));

  // fronto-parallel plane
  PointMap plane = pinhole_map(32, 32, 100.0, [](int, int) { return 2.5; });
  const double fp = estimate_focal(plane, conf);
  CHECK(std::abs(fp - 100.0) / 100.0 < 1e-3);
}

TEST_CASE("estimate_focal requires enough valid depth") {
  PointMap pm = pinhole_map(4, 2, 50.0, [](int, int) { return 1.0; });
  for (std::size_t i = 2; i < pm.size(); ++i) pm.valid[i] = 0;
  std::vector<double> conf(pm.size(), 1.0);
  CHECK_THROWS_AS(estimate_focal(pm, conf), DegeneracyError);
}

TEST_CASE("umeyama identity and exact recovery") {
  std::mt19937_64 rng(11);
  std::vector<Eigen::Vector3d> src;
  for (int i = 0; i < 40; ++i) src.push_back(random_vec(rng, 2.0));

  CameraPose id = umeyama(src, src, {}, false);
  CHECK(id.rotation.angularDistance(Eigen::Quaterniond::Identity()) < 1e-12);
  CHECK(id.translation.norm() < 1e-12);
  CHECK(id.scale == 1.0);

  const Eigen::Quaterniond R = random_rotation(rng);
  const Eigen::Vector3d t = random_vec(rng, 3.0);
  const double s = 1.7;
  std::vector<Eigen::Vector3d> dst;
  for (const auto& p : src) dst.push_back(s * (R * p) + t);
  CameraPose est = umeyama(src, dst, {}, true);
  CHECK(est.rotation.angularDistance(R) < 1e-9);
  CHECK((est.translation - t).norm() < 1e-9);
  CHECK(est.scale == doctest::Approx(s).epsilon(1e-12));
}

TEST_CASE("umeyama reflection correction keeps det(R) = +1") {
  std::mt19937_64 rng(13);
  std::vector<Eigen::Vector3d> src, dst;
  for (int i = 0; i < 30; ++i) {
    Eigen::Vector3d p = random_vec(rng);
    src.push_back(p);
    dst.push_back(Eigen::Vector3d(p.x(), p.y(), -p.z()));  // mirrored
  }
  CameraPose est = umeyama(src, dst, {}, false);
  CHECK(est.rotation.toRotationMatrix().determinant() == doctest::Approx(1.0).epsilon(1e-12));
  double resid = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) resid += (est.apply(src[i]) - dst[i]).norm();
  CHECK(resid > 1e-3);
}

TEST_CASE("umeyama degeneracy and contract errors") {
  std::vector<Eigen::Vector3d> line;
  for (int i = 0; i < 10; ++i) line.push_back(Eigen::Vector3d(i, 2.0 * i, -i));
  CHECK_THROWS_AS(umeyama(line, line, {}, false), DegeneracyError);

  std::vector<Eigen::Vector3d> two{{0, 0, 0}, {1, 0, 0}};
  CHECK_THROWS_AS(umeyama(two, two, {}, false), DegeneracyError);

  std::vector<Eigen::Vector3d> a{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  std::vector<Eigen::Vector3d> b{{0, 0, 0}, {1, 0, 0}};
  CHECK_THROWS_AS(umeyama(a, b, {}, false), ContractError);
}

TEST_CASE("umeyama is left-invariant under a common rigid motion") {
  std::mt19937_64 rng(17);
  std::vector<Eigen::Vector3d> src, dst;
  for (int i = 0; i < 25; ++i) {
    src.push_back(random_vec(rng));
    dst.push_back(random_vec(rng));
  }
  CameraPose base = umeyama(src, dst, {}, false);
  double base_resid = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i)
    base_resid += (base.apply(src[i]) - dst[i]).squaredNorm();

  CameraPose T;
  T.rotation = random_rotation(rng);
  T.translation = random_vec(rng, 2.0);
  std::vector<Eigen::Vector3d> src2, dst2;
  for (std::size_t i = 0; i < src.size(); ++i) {
    src2.push_back(T.apply(src[i]));
    dst2.push_back(T.apply(dst[i]));
  }
  CameraPose moved = umeyama(src2, dst2, {}, false);
  double moved_resid = 0.0;
  for (std::size_t i = 0; i < src2.size(); ++i)
    moved_resid += (moved.apply(src2[i]) - dst2[i]).squaredNorm();
  CHECK(moved_resid == doctest::Approx(base_resid).epsilon(1e-9));

  // conjugated pose: moved = T * base * T^-1
  CameraPose conj = T.compose(base).compose(T.inverse());
  CHECK(moved.rotation.angularDistance(conj.rotation) < 1e-9);
  CHECK((moved.translation - conj.translation).norm() < 1e-9);
}

TEST_CASE("recover_pose identity and synthetic rigid recovery") {
  auto depth = [](int r, int c) { return 1.5 + 0.1 * r + 0.05 * c; };
  PointMap local = pinhole_map(16, 16, 40.0, depth);
  PointMap global = local;
  global.frame = PointFrame::GlobalFrame1;
  std::vector<double> conf(local.size(), 2.0);

  PoseEstimate id = recover_pose(local, global, conf, 1.0);
  CHECK(id.pose.rotation.angularDistance(Eigen::Quaterniond::Identity()) < 1e-12);
  CHECK(id.pose.translation.norm() < 1e-12);

  std::mt19937_64 rng(19);
  CameraPose T;
  T.rotation = random_rotation(rng);
  T.translation = random_vec(rng, 2.0);
  for (std::size_t i = 0; i < global.pts.size(); ++i) global.pts[i] = T.apply(local.pts[i]);
  PoseEstimate est = recover_pose(local, global, conf, 1.0);
  CHECK(est.pose.rotation.angularDistance(T.rotation) < 1e-9);
  CHECK((est.pose.translation - T.translation).norm() < 1e-9);
  CHECK(est.focal == doctest::Approx(40.0).epsilon(1e-9));

  std::vector<double> low(local.size(), 0.5);
  CHECK_THROWS_AS(recover_pose(local, global, low, 1.0), DegeneracyError);
}

TEST_CASE("fov_from_focal analytic values") {
  CHECK(fov_from_focal(32.0, 64.0) == doctest::Approx(90.0).epsilon(1e-12));
  CHECK(fov_from_focal(1e9, 64.0) < 1e-5);
  const double f45 = 64.0 / (2.0 * std::tan(22.5 * M_PI / 180.0));
  CHECK(fov_from_focal(f45, 64.0) == doctest::Approx(45.0).epsilon(1e-12));
  CHECK_THROWS_AS(fov_from_focal(0.0, 64.0), ContractError);
}
