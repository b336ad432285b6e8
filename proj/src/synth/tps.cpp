#include "attrcenter/synth/tps.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <string>

namespace attrcenter::synth {

namespace {

double kernel(double dx, double dy) {
  const double r2 = dx * dx + dy * dy;
  return r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0;  // r^2 log r
}

}  // namespace

ThinPlateSpline::ThinPlateSpline(std::vector<Point> from, const std::vector<Point>& to) : centers_(std::move(from)) {
  const std::size_t n = centers_.size();
  if (n != to.size()) throw TpsError("tps: " + std::to_string(n) + " source points but " + std::to_string(to.size()) + " targets");
  if (n < 3) throw TpsError("tps: needs at least 3 points");
  const auto N = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(N + 3, N + 3);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(N + 3, 2);
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto& p = centers_[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < N; ++j) {
      const auto& q = centers_[static_cast<std::size_t>(j)];
      L(i, j) = kernel(p.x - q.x, p.y - q.y);
    }
    L(i, N) = L(N, i) = 1.0;
    L(i, N + 1) = L(N + 1, i) = p.x;
    L(i, N + 2) = L(N + 2, i) = p.y;
    rhs(i, 0) = to[static_cast<std::size_t>(i)].x;
    rhs(i, 1) = to[static_cast<std::size_t>(i)].y;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(L);
  if (!lu.isInvertible()) throw TpsError("tps: singular system (control points are degenerate or collinear)");
  const Eigen::MatrixXd sol = lu.solve(rhs);
  wx_.resize(n + 3);
  wy_.resize(n + 3);
  for (Eigen::Index i = 0; i < N + 3; ++i) {
    wx_[static_cast<std::size_t>(i)] = sol(i, 0);
    wy_[static_cast<std::size_t>(i)] = sol(i, 1);
  }
}

Point ThinPlateSpline::operator()(Point p) const {
  const std::size_t n = centers_.size();
  double x = wx_[n] + wx_[n + 1] * p.x + wx_[n + 2] * p.y;
  double y = wy_[n] + wy_[n + 1] * p.x + wy_[n + 2] * p.y;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = kernel(p.x - centers_[i].x, p.y - centers_[i].y);
    x += wx_[i] * u;
    y += wy_[i] * u;
  }
  return {x, y};
}

std::vector<Point> control_grid(std::size_t height, std::size_t width, std::size_t rows, std::size_t cols) {
  if (rows < 2 || cols < 2) throw TpsError("tps: control grid needs at least 2 x 2 points");
  std::vector<Point> pts;
  const double w = static_cast<double>(width - 1), h = static_cast<double>(height - 1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      pts.push_back({w * (0.1 + 0.8 * static_cast<double>(c) / static_cast<double>(cols - 1)),
                     h * (0.1 + 0.8 * static_cast<double>(r) / static_cast<double>(rows - 1))});
    }
  return pts;
}

Tensor tps_deform(const Tensor& img, const std::vector<Point>& control, const std::vector<Point>& displacements) {
  const std::size_t C = image_channels(img), H = image_height(img), W = image_width(img);
  if (control.size() != displacements.size()) throw TpsError("tps: control/displacement count mismatch");
  for (const auto& p : control) {
    if (p.x < 0.0 || p.y < 0.0 || p.x > static_cast<double>(W - 1) || p.y > static_cast<double>(H - 1)) {
      throw TpsError("tps: control point outside the image");
    }
  }
  std::vector<Point> moved(control.size());
  for (std::size_t i = 0; i < control.size(); ++i) {
    moved[i] = {control[i].x + displacements[i].x, control[i].y + displacements[i].y};
  }
  // Backward map: displaced positions -> original positions.
  const ThinPlateSpline inverse(moved, control);
  Tensor out(img.shape(), 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const Point src = inverse({static_cast<double>(x), static_cast<double>(y)});
      for (std::size_t c = 0; c < C; ++c) out[(c * H + y) * W + x] = sample_bilinear(img, c, src.x, src.y);
    }
  return out;
}

std::vector<Point> random_displacements(std::size_t count, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> mag(0.0, bound);
  std::vector<Point> d(count);
  for (auto& p : d) {
    const double a = angle(rng), m = mag(rng);
    p = {m * std::cos(a), m * std::sin(a)};
  }
  return d;
}

Tensor random_tps(const Tensor& img, std::mt19937_64& rng, const TpsConfig& cfg) {
  const std::size_t H = image_height(img), W = image_width(img);
  const auto control = control_grid(H, W, cfg.grid, cfg.grid);
  const double diag = std::hypot(static_cast<double>(H), static_cast<double>(W));
  return tps_deform(img, control, random_displacements(control.size(), cfg.max_displacement * diag, rng));
}

}  // namespace attrcenter::synth
