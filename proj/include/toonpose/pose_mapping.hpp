#pragma once

// Mapping from pose vectors to 3DMM pose parameters through a landmark proxy.
//
// Each expression slot k is expressed as a manipulated landmark set l^k.
// Its 3DMM expression coefficients are the ridge solution
//
//   beta^k = argmin ||(mean + B beta) - l^k||^2 + lambda ||beta||^2
//
// and the 17 solutions stacked row-wise form Phi (17 x 64). A pose vector
// (b, h) maps to m = (b^T Phi) ++ radians(h) ++ 0^3, a 70-vector.

#include <Eigen/Dense>

#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "toonpose/errors.hpp"
#include "toonpose/hash.hpp"
#include "toonpose/pose.hpp"
#include "toonpose/rng.hpp"
#include "toonpose/synth_head.hpp"

namespace toonpose {

inline constexpr int kExpressionCoefficients = 64;
inline constexpr int kMappedDims = kExpressionCoefficients + 3 + 3;
inline constexpr int kLandmarkCoords = 2 * kLandmarkCount;
inline constexpr double kDefaultLambda = 1e-2;
inline constexpr double kMaxConditionNumber = 1e12;
inline constexpr double kGradientTolerance = 1e-8;
inline constexpr std::uint64_t kDefaultBasisSeed = 0x7f4a7c15b5d0e1a3ULL;

/// Mean landmarks (x/y interleaved), a landmark-space expression basis and
/// the ridge weight.
struct LandmarkModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd basis;
  double lambda = kDefaultLambda;

  int coords() const { return static_cast<int>(mean.size()); }
  int coefficients() const { return static_cast<int>(basis.cols()); }
};

/// One semantic's landmark manipulation at full intensity.
struct SemanticEditRule {
  int slot = 0;
  struct Displacement {
    int landmark;
    double dx, dy;
  };
  std::vector<Displacement> displacements;
};

struct FittedBasis {
  Eigen::Matrix<double, kExpressionDims, kExpressionCoefficients> phi =
      Eigen::Matrix<double, kExpressionDims, kExpressionCoefficients>::Zero();
  std::array<double, kExpressionDims> residuals{};
  double lambda = kDefaultLambda;
  std::uint64_t basis_hash = 0;
  std::uint64_t rules_hash = 0;
};

struct MappedPose {
  std::array<double, kMappedDims> m{};

  std::span<const double> expression() const { return std::span(m).first(kExpressionCoefficients); }
  std::span<const double> rotation() const { return std::span(m).subspan(kExpressionCoefficients, 3); }
  std::span<const double> translation() const { return std::span(m).subspan(kExpressionCoefficients + 3, 3); }
};

inline Eigen::VectorXd interleave(const LandmarkSet& lms) {
  Eigen::VectorXd v(kLandmarkCoords);
  for (int i = 0; i < kLandmarkCount; ++i) {
    v[2 * i] = lms[i].x;
    v[2 * i + 1] = lms[i].y;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Synthetic basis

/// Basis plus the signed column permutation realizing its mirror symmetry:
/// mirroring column j gives mirror_sign[j] * column mirror_column[j].
struct SyntheticBasis {
  Eigen::MatrixXd basis;
  std::vector<int> mirror_column;
  std::vector<double> mirror_sign;
};

/// Smooth localized bumps over the landmark set.
///
/// Column layout (64 total):
///  - 44 narrow bumps (sigma in [0.008, 0.012]) on the 11 sided landmarks of
///    the +x side, x- and y-directed, each followed by its mirror image;
///  - 4 narrow bumps on the two midline landmarks (chin, forehead);
///  - 16 wide bumps (sigma in [0.1, 0.3]) at random landmarks with random
///    directions, in mirror pairs.
/// A bump centred on landmark c with width s and direction d displaces
/// landmark i by exp(-|l_i - l_c|^2 / (2 s^2)) * d.
inline SyntheticBasis synthetic_basis(const Eigen::VectorXd& mean, std::uint64_t seed = kDefaultBasisSeed) {
  Rng rng(seed);
  SyntheticBasis out;
  out.basis.resize(mean.size(), kExpressionCoefficients);
  out.mirror_column.assign(kExpressionCoefficients, 0);
  out.mirror_sign.assign(kExpressionCoefficients, 1.0);
  const int n = static_cast<int>(mean.size()) / 2;

  auto bump = [&](int col, int center, double sigma, double dx, double dy) {
    for (int i = 0; i < n; ++i) {
      const double ex = mean[2 * i] - mean[2 * center], ey = mean[2 * i + 1] - mean[2 * center + 1];
      const double w = std::exp(-(ex * ex + ey * ey) / (2 * sigma * sigma));
      out.basis(2 * i, col) = w * dx;
      out.basis(2 * i + 1, col) = w * dy;
    }
  };
  int col = 0;
  auto pair = [&](int center, double sigma, double dx, double dy) {
    bump(col, center, sigma, dx, dy);
    bump(col + 1, kLandmarkMirror[center], sigma, -dx, dy);
    out.mirror_column[col] = col + 1;
    out.mirror_column[col + 1] = col;
    col += 2;
  };

  const std::array<int, 11> sided = {kBrowLInner, kBrowLMid,    kBrowLOuter,  kEyeLInner,   kEyeLOuter, kEyeLUpper,
                                     kEyeLLower,  kMouthCornerL, kMouthUpperL, kMouthLowerL, kCheekL};
  for (int c : sided) {
    pair(c, rng.uniform(0.008, 0.012), 1.0, 0.0);
    pair(c, rng.uniform(0.008, 0.012), 0.0, 1.0);
  }
  for (int c : {kChin, kForehead}) {
    const double sx = rng.uniform(0.008, 0.012), sy = rng.uniform(0.008, 0.012);
    bump(col, c, sx, 1.0, 0.0);
    out.mirror_column[col] = col;
    out.mirror_sign[col] = -1.0;
    ++col;
    bump(col, c, sy, 0.0, 1.0);
    out.mirror_column[col] = col;
    ++col;
  }
  while (col < kExpressionCoefficients) {
    const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    const double sigma = rng.uniform(0.1, 0.3);
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    pair(c, sigma, std::cos(theta), std::sin(theta));
  }
  return out;
}

inline Eigen::VectorXd mean_landmarks(const CharacterDescriptor& ch) { return interleave(landmarks(ch, PoseVector{})); }

/// Landmark model of the canonical character with the synthetic basis.
inline LandmarkModel default_landmark_model(double lambda = kDefaultLambda) {
  LandmarkModel model;
  model.mean = mean_landmarks(CharacterDescriptor::canonical());
  model.basis = synthetic_basis(model.mean).basis;
  model.lambda = lambda;
  return model;
}

/// Semantic edit rules read off a character's control rig: rule k moves each
/// landmark by the full-intensity displacement of its control point.
inline std::array<SemanticEditRule, kExpressionDims> rig_rules(const CharacterDescriptor& ch) {
  const ControlRig rig = build_rig(ch);
  std::array<SemanticEditRule, kExpressionDims> rules;
  for (int k = 0; k < kExpressionDims; ++k) {
    rules[k].slot = k;
    for (int l = 0; l < kLandmarkCount; ++l) {
      double dx = 0, dy = 0;
      bool touched = false;
      for (const auto& t : rig.rules[k]) {
        if (t.point != rig.landmark_points[l]) continue;
        dx += t.delta.x;
        dy += t.delta.y;
        touched = true;
      }
      if (touched) rules[k].displacements.push_back({l, dx, dy});
    }
  }
  return rules;
}

inline std::array<SemanticEditRule, kExpressionDims> default_rules() {
  return rig_rules(CharacterDescriptor::canonical());
}

inline std::uint64_t hash_basis(const Eigen::MatrixXd& basis) {
  Fnv1a h;
  h.update(static_cast<std::uint64_t>(basis.rows()));
  h.update(static_cast<std::uint64_t>(basis.cols()));
  for (Eigen::Index c = 0; c < basis.cols(); ++c)
    for (Eigen::Index r = 0; r < basis.rows(); ++r) h.update(std::bit_cast<std::uint64_t>(basis(r, c)));
  return h.digest();
}

inline std::uint64_t hash_rules(std::span<const SemanticEditRule> rules) {
  Fnv1a h;
  for (const auto& rule : rules) {
    h.update(static_cast<std::uint64_t>(rule.slot));
    for (const auto& d : rule.displacements) {
      h.update(static_cast<std::uint64_t>(d.landmark));
      h.update(std::bit_cast<std::uint64_t>(d.dx));
      h.update(std::bit_cast<std::uint64_t>(d.dy));
    }
  }
  return h.digest();
}

// ---------------------------------------------------------------------------
// Fitting

inline Eigen::VectorXd target_landmarks(const LandmarkModel& model, const SemanticEditRule& rule) {
  Eigen::VectorXd out = model.mean;
  const int n = model.coords() / 2;
  for (const auto& d : rule.displacements) {
    if (d.landmark < 0 || d.landmark >= n)
      throw UsageError("rule for slot " + std::to_string(rule.slot) + " references landmark " +
                       std::to_string(d.landmark) + " outside 0.." + std::to_string(n - 1));
    out[2 * d.landmark] += d.dx;
    out[2 * d.landmark + 1] += d.dy;
  }
  return out;
}

inline double objective(const LandmarkModel& model, const Eigen::VectorXd& target, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd r = model.mean + model.basis * beta - target;
  return r.squaredNorm() + model.lambda * beta.squaredNorm();
}

// Half the gradient of objective(): B^T (mean + B beta - target) + lambda beta.
inline Eigen::VectorXd objective_half_gradient(const LandmarkModel& model, const Eigen::VectorXd& target,
                                               const Eigen::VectorXd& beta) {
  return model.basis.transpose() * (model.mean + model.basis * beta - target) + model.lambda * beta;
}

namespace detail {

inline void check_model(const LandmarkModel& model) {
  if (model.basis.rows() != model.mean.size())
    throw UsageError("basis has " + std::to_string(model.basis.rows()) + " rows but the mean has " +
                     std::to_string(model.mean.size()) + " coordinates");
  if (!(model.lambda > 0.0) || !std::isfinite(model.lambda)) throw UsageError("lambda_reg must be positive");
}

// Cholesky of an SPD system with an eigenvalue-based condition check.
inline Eigen::LLT<Eigen::MatrixXd> factor_checked(const Eigen::MatrixXd& system) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(system, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxConditionNumber) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "ill-conditioned normal equations (condition estimate %.3g, limit %.3g)",
                  lo > 0.0 ? hi / lo : INFINITY, kMaxConditionNumber);
    throw NumericalError(buf);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(system);
  if (llt.info() != Eigen::Success) throw NumericalError("normal equations are not positive definite");
  return llt;
}

}  // namespace detail

/// Ridge fit of expression coefficients to a manipulated landmark set.
///
/// Solves (B^T B + lambda I) beta = B^T (l_k - mean). When the basis has more
/// columns than landmark coordinates the equivalent dual system
/// beta = B^T (B B^T + lambda I)^-1 (l_k - mean) is solved instead; it stays
/// well conditioned as lambda -> 0. A few refinement steps drive the
/// objective's gradient norm below 1e-8.
inline Eigen::VectorXd fit_semantic(const LandmarkModel& model, const Eigen::VectorXd& target) {
  detail::check_model(model);
  if (target.size() != model.mean.size()) throw UsageError("target landmark vector has the wrong length");
  const Eigen::MatrixXd& B = model.basis;
  const Eigen::VectorXd rhs = target - model.mean;
  const double lambda = model.lambda;

  Eigen::VectorXd beta;
  if (B.rows() < B.cols()) {
    Eigen::MatrixXd system = B * B.transpose();
    system.diagonal().array() += lambda;
    const auto llt = detail::factor_checked(system);
    Eigen::VectorXd dual = llt.solve(rhs);
    for (int step = 0; step < 3; ++step) {
      const Eigen::VectorXd residual = rhs - system * dual;
      if ((B.transpose() * residual).norm() <= 0.1 * kGradientTolerance) break;
      dual += llt.solve(residual);
    }
    beta = B.transpose() * dual;
  } else {
    Eigen::MatrixXd system = B.transpose() * B;
    system.diagonal().array() += lambda;
    const auto llt = detail::factor_checked(system);
    const Eigen::VectorXd bt_rhs = B.transpose() * rhs;
    beta = llt.solve(bt_rhs);
    for (int step = 0; step < 3; ++step) {
      const Eigen::VectorXd residual = bt_rhs - system * beta;
      if (residual.norm() <= 0.1 * kGradientTolerance) break;
      beta += llt.solve(residual);
    }
  }
  const double grad = objective_half_gradient(model, target, beta).norm();
  if (!(grad <= kGradientTolerance)) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "ridge solve did not converge (gradient norm %.3g)", grad);
    throw NumericalError(buf);
  }
  return beta;
}

inline FittedBasis build_phi(const LandmarkModel& model, std::span<const SemanticEditRule> rules) {
  detail::check_model(model);
  if (rules.size() != kExpressionDims) throw UsageError("need exactly one edit rule per expression slot");
  if (model.coefficients() != kExpressionCoefficients)
    throw UsageError("basis must have " + std::to_string(kExpressionCoefficients) + " columns");
  FittedBasis fb;
  fb.lambda = model.lambda;
  fb.basis_hash = hash_basis(model.basis);
  fb.rules_hash = hash_rules(rules);
  for (int k = 0; k < kExpressionDims; ++k) {
    const SemanticEditRule& rule = rules[k];
    if (rule.slot != k) throw UsageError("edit rules must be ordered by slot; found slot " + std::to_string(rule.slot) +
                                         " at position " + std::to_string(k));
    try {
      const Eigen::VectorXd target = target_landmarks(model, rule);
      const Eigen::VectorXd beta = fit_semantic(model, target);
      fb.phi.row(k) = beta.transpose();
      fb.residuals[k] = (model.mean + model.basis * beta - target).norm();
    } catch (const NumericalError& e) {
      throw NumericalError("slot " + std::to_string(k) + " (" + slot_name(k) + "): " + e.what());
    }
  }
  return fb;
}

// ---------------------------------------------------------------------------
// Mapping

inline double degrees_to_radians(double deg) { return deg_to_rad(deg); }
inline double radians_to_degrees(double rad) { return rad_to_deg(rad); }

inline MappedPose map_pose(std::span<const double> b, std::span<const double> h, const FittedBasis& fb) {
  if (b.size() != kExpressionDims || h.size() != kAngleDims)
    throw UsageError("map_pose expects 17 expression values and 3 angles, got " + std::to_string(b.size()) + " and " +
                     std::to_string(h.size()));
  for (double v : b)
    if (!(v >= 0.0 && v <= 1.0)) throw UsageError("expression coefficients must lie in [0, 1]");
  for (double v : h)
    if (!std::isfinite(v)) throw UsageError("head angles must be finite");
  MappedPose out;
  for (int j = 0; j < kExpressionCoefficients; ++j) {
    double acc = 0.0;
    for (int k = 0; k < kExpressionDims; ++k) acc += b[k] * fb.phi(k, j);
    out.m[j] = acc;
  }
  for (int a = 0; a < kAngleDims; ++a) out.m[kExpressionCoefficients + a] = degrees_to_radians(h[a]);
  return out;  // translation stays 0
}

inline MappedPose map_pose(const PoseVector& p, const FittedBasis& fb) { return map_pose(p.expr, p.angles_deg, fb); }

// ---------------------------------------------------------------------------
// Serialization

inline std::string format_row(std::span<const double> values, char sep = '\t') {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", values[i]);
    if (i) out += sep;
    out += buf;
  }
  return out;
}

inline std::vector<double> parse_row(const std::string& line, const std::string& where) {
  std::vector<double> out;
  std::string cell;
  std::istringstream in(line);
  while (in >> cell) {
    for (char& c : cell)
      if (c == ',') c = ' ';
    std::istringstream cells(cell);
    std::string part;
    while (cells >> part) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(part, &used));
        if (used != part.size()) throw std::invalid_argument(part);
      } catch (const std::exception&) {
        throw IoError(where + ": not a number: '" + part + "'");
      }
    }
  }
  return out;
}

/// Dense 17x64 table; '#' header lines record lambda, hashes and residuals.
inline std::string phi_to_text(const FittedBasis& fb) {
  std::string out = "# toonpose phi v1\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "# lambda_reg %.17g\n", fb.lambda);
  out += buf;
  out += "# basis_hash " + hex64(fb.basis_hash) + "\n";
  out += "# rules_hash " + hex64(fb.rules_hash) + "\n";
  out += "# residuals " + format_row(fb.residuals, ',') + "\n";
  for (int k = 0; k < kExpressionDims; ++k) {
    std::array<double, kExpressionCoefficients> row{};
    for (int j = 0; j < kExpressionCoefficients; ++j) row[j] = fb.phi(k, j);
    out += format_row(row) + "\n";
  }
  return out;
}

inline std::uint64_t phi_hash(const FittedBasis& fb) { return fnv1a(phi_to_text(fb)); }

inline FittedBasis phi_from_text(const std::string& text, const std::string& where = "phi") {
  FittedBasis fb;
  std::istringstream in(text);
  std::string line;
  int row = 0;
  bool have_lambda = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hdr(line.substr(1));
      std::string key, value;
      hdr >> key >> value;
      if (key == "lambda_reg") {
        fb.lambda = std::stod(value);
        have_lambda = true;
      } else if (key == "basis_hash") {
        fb.basis_hash = std::stoull(value, nullptr, 16);
      } else if (key == "rules_hash") {
        fb.rules_hash = std::stoull(value, nullptr, 16);
      } else if (key == "residuals") {
        const auto r = parse_row(value, where);
        if (r.size() != kExpressionDims) throw IoError(where + ": residual header needs 17 values");
        std::copy(r.begin(), r.end(), fb.residuals.begin());
      }
      continue;
    }
    const auto values = parse_row(line, where + " row " + std::to_string(row));
    if (values.size() != kExpressionCoefficients)
      throw IoError(where + ": row " + std::to_string(row) + " has " + std::to_string(values.size()) +
                    " values, expected 64");
    if (row >= kExpressionDims) throw IoError(where + ": more than 17 rows");
    for (int j = 0; j < kExpressionCoefficients; ++j) fb.phi(row, j) = values[j];
    ++row;
  }
  if (row != kExpressionDims) throw IoError(where + ": expected 17 rows, found " + std::to_string(row));
  if (!have_lambda) throw IoError(where + ": missing lambda_reg header");
  return fb;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline FittedBasis read_phi(const std::filesystem::path& path) { return phi_from_text(read_text_file(path), path.string()); }
inline void write_phi(const std::filesystem::path& path, const FittedBasis& fb) { write_text_file(path, phi_to_text(fb)); }

/// External landmark basis: 48 rows of 64 whitespace/comma separated values.
inline Eigen::MatrixXd read_basis(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    rows.push_back(parse_row(line, path.string() + " row " + std::to_string(rows.size())));
  }
  if (rows.size() != kLandmarkCoords) throw IoError(path.string() + ": basis needs 48 rows, found " + std::to_string(rows.size()));
  Eigen::MatrixXd basis(kLandmarkCoords, kExpressionCoefficients);
  for (int r = 0; r < kLandmarkCoords; ++r) {
    if (rows[r].size() != kExpressionCoefficients) throw IoError(path.string() + ": basis rows need 64 values");
    for (int c = 0; c < kExpressionCoefficients; ++c) basis(r, c) = rows[r][c];
  }
  return basis;
}

}  // namespace toonpose
