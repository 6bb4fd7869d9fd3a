#include "wsi/preprocess/stain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

#include <Eigen/Dense>

#include "json.hpp"
#include "wsi/error.hpp"

namespace wsi::preprocess {

using slide::RgbImage;

namespace {

std::array<double, 256> make_od_table() {
  std::array<double, 256> table{};
  for (int i = 0; i < 256; ++i) table[i] = -std::log10((i + 1) / 256.0);
  return table;
}

const std::array<double, 256>& od_table() {
  static const auto table = make_od_table();
  return table;
}

Eigen::Vector3d od_of(const std::uint8_t* px) {
  const auto& t = od_table();
  return {t[px[0]], t[px[1]], t[px[2]]};
}

Vec3 to_vec(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }
Eigen::Vector3d to_eigen(const Vec3& v) { return {v[0], v[1], v[2]}; }

/// Clamp tiny negative components produced by noise and renormalize.
Eigen::Vector3d positive_unit(Eigen::Vector3d v) {
  if (v.sum() < 0) v = -v;
  v = v.cwiseMax(0.0);
  const double n = v.norm();
  if (n == 0) fail(ErrorCode::DegenerateStain, "stain direction vanished");
  return v / n;
}

Eigen::Matrix<double, 2, 3> pseudo_inverse(const StainMatrix& m) {
  Eigen::Matrix<double, 3, 2> basis;
  basis.col(0) = to_eigen(m.hematoxylin);
  basis.col(1) = to_eigen(m.eosin);
  return (basis.transpose() * basis).inverse() * basis.transpose();
}

}  // namespace

double optical_density(std::uint8_t intensity) { return od_table()[intensity]; }

double percentile(std::vector<double> values, double p) {
  if (values.empty()) fail(ErrorCode::EmptyInput, "percentile of empty set");
  const double rank = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  if (hi == lo) return a;
  const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(hi), values.end());
  return a + (rank - static_cast<double>(lo)) * (b - a);
}

double angle_deg(const Vec3& a, const Vec3& b) {
  const Eigen::Vector3d x = to_eigen(a), y = to_eigen(b);
  const double c = std::clamp(x.dot(y) / (x.norm() * y.norm()), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

StainMatrix macenko_fit(const RgbImage& pixels, const MacenkoOptions& options) {
  std::vector<Eigen::Vector3d> od;
  od.reserve(pixels.pixel_count());
  for (std::size_t i = 0; i < pixels.pixel_count(); ++i) {
    const Eigen::Vector3d v = od_of(&pixels.pixels[3 * i]);
    if (v.norm() >= options.beta) od.push_back(v);
  }
  if (od.size() < options.min_pixels)
    fail(ErrorCode::InsufficientStain, std::to_string(od.size()) + " stained pixels, need " +
                                           std::to_string(options.min_pixels));

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& v : od) mean += v;
  mean /= static_cast<double>(od.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& v : od) cov += (v - mean) * (v - mean).transpose();
  cov /= static_cast<double>(od.size() - 1);

  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  const Eigen::Vector3d values = solver.eigenvalues();  // ascending
  if (!(values[2] > 0) || values[1] < 1e-8 * values[2])
    fail(ErrorCode::DegenerateStain, "optical densities span less than a plane");
  Eigen::Vector3d e1 = solver.eigenvectors().col(2), e2 = solver.eigenvectors().col(1);
  if (e1.sum() < 0) e1 = -e1;
  if (e2.sum() < 0) e2 = -e2;

  std::vector<double> angles(od.size());
  for (std::size_t i = 0; i < od.size(); ++i) angles[i] = std::atan2(od[i].dot(e2), od[i].dot(e1));
  const double lo = percentile(angles, options.alpha);
  const double hi = percentile(angles, 100.0 - options.alpha);
  const Eigen::Vector3d v_lo = positive_unit(std::cos(lo) * e1 + std::sin(lo) * e2);
  const Eigen::Vector3d v_hi = positive_unit(std::cos(hi) * e1 + std::sin(hi) * e2);
  if (angle_deg(to_vec(v_lo), to_vec(v_hi)) < options.min_separation_deg)
    fail(ErrorCode::DegenerateStain, "extreme stain directions are nearly parallel");

  StainMatrix m;
  const bool lo_is_h = v_lo[2] > v_hi[2];
  m.hematoxylin = to_vec(lo_is_h ? v_lo : v_hi);
  m.eosin = to_vec(lo_is_h ? v_hi : v_lo);

  const auto pinv = pseudo_inverse(m);
  std::vector<double> ch(od.size()), ce(od.size());
  for (std::size_t i = 0; i < od.size(); ++i) {
    const Eigen::Vector2d c = pinv * od[i];
    ch[i] = c[0];
    ce[i] = c[1];
  }
  m.max_concentrations = {percentile(std::move(ch), 99.0), percentile(std::move(ce), 99.0)};
  if (!(m.max_concentrations[0] > 0) || !(m.max_concentrations[1] > 0))
    fail(ErrorCode::DegenerateStain, "non-positive stain concentration scale");
  return m;
}

RgbImage macenko_normalize(const RgbImage& image, const StainMatrix& fitted, const StainMatrix& reference,
                           const MacenkoOptions& options) {
  const auto pinv = pseudo_inverse(fitted);
  Eigen::Matrix<double, 3, 2> target;
  target.col(0) = to_eigen(reference.hematoxylin) * (reference.max_concentrations[0] / fitted.max_concentrations[0]);
  target.col(1) = to_eigen(reference.eosin) * (reference.max_concentrations[1] / fitted.max_concentrations[1]);
  const Eigen::Matrix3d map = target * pinv;

  RgbImage out = image;
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const Eigen::Vector3d od = od_of(&image.pixels[3 * i]);
    if (od.norm() < options.beta) continue;
    const Eigen::Vector3d mapped = map * od;
    for (int c = 0; c < 3; ++c) {
      const double v = std::round(256.0 * std::pow(10.0, -mapped[c]) - 1.0);
      out.pixels[3 * i + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return out;
}

StainMatrix fit_or_reference(const RgbImage& image, const StainMatrix& reference, bool* used_fallback,
                             const MacenkoOptions& options) {
  try {
    StainMatrix m = macenko_fit(image, options);
    if (used_fallback) *used_fallback = false;
    return m;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientStain && e.code() != ErrorCode::DegenerateStain) throw;
    if (used_fallback) *used_fallback = true;
    return reference;
  }
}

void save_stain_matrix(const std::filesystem::path& path, const StainMatrix& m) {
  nlohmann::json j{{"hematoxylin", m.hematoxylin}, {"eosin", m.eosin}, {"max_concentrations", m.max_concentrations}};
  std::ofstream os(path);
  if (!os) fail(ErrorCode::Io, "cannot write " + path.string());
  os << std::setprecision(17) << j.dump(2) << '\n';
}

StainMatrix load_stain_matrix(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::Io, "cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(is);
    StainMatrix m;
    m.hematoxylin = j.at("hematoxylin").get<Vec3>();
    m.eosin = j.at("eosin").get<Vec3>();
    m.max_concentrations = j.at("max_concentrations").get<std::array<double, 2>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

}  // namespace wsi::preprocess
