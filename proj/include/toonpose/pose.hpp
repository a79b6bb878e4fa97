#pragma once

// Pose vectors and the target-morph taxonomy.
//
// A pose vector holds 17 per-side expression intensities followed by three
// head angles in degrees. Slot layout (normative for every file format):
//
//    0- 5  eye      closed_L closed_R unimpressed_L unimpressed_R surprised_L surprised_R
//    6-11  eyebrow  angry_L  angry_R  raised_L      raised_R      lowered_L   lowered_R
//   12-16  mouth    A E I O U
//   17-19  yaw pitch roll (degrees)

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "toonpose/errors.hpp"

namespace toonpose {

inline constexpr int kExpressionDims = 17;
inline constexpr int kAngleDims = 3;
inline constexpr int kPoseDims = kExpressionDims + kAngleDims;
inline constexpr int kTargetMorphCount = 23;
inline constexpr double kSamplerAngleLimitDeg = 20.0;

enum class Part : std::uint8_t { eye, eyebrow, mouth };
enum class Laterality : std::uint8_t { left, right, both };

inline constexpr std::array<std::string_view, 3> kEyeSemantics = {"closed", "unimpressed", "surprised"};
inline constexpr std::array<std::string_view, 3> kEyebrowSemantics = {"angry", "raised", "lowered"};
inline constexpr std::array<std::string_view, 5> kMouthSemantics = {"A", "E", "I", "O", "U"};

inline constexpr int semantic_count(Part part) { return part == Part::mouth ? 5 : 3; }

inline constexpr std::string_view part_name(Part part) {
  switch (part) {
    case Part::eye: return "eye";
    case Part::eyebrow: return "eyebrow";
    case Part::mouth: return "mouth";
  }
  return "?";
}

inline constexpr std::string_view laterality_name(Laterality side) {
  switch (side) {
    case Laterality::left: return "left";
    case Laterality::right: return "right";
    case Laterality::both: return "both";
  }
  return "?";
}

inline constexpr std::string_view semantic_name(Part part, int semantic) {
  switch (part) {
    case Part::eye: return kEyeSemantics[semantic];
    case Part::eyebrow: return kEyebrowSemantics[semantic];
    case Part::mouth: return kMouthSemantics[semantic];
  }
  return "?";
}

// First expression slot of a part.
inline constexpr int part_base_slot(Part part) {
  switch (part) {
    case Part::eye: return 0;
    case Part::eyebrow: return 6;
    case Part::mouth: return 12;
  }
  return 0;
}

/// One of the 23 canonical target morphs.
///
/// Ids are laid out part-major, semantic-major, then laterality
/// (left, right, both): eye 0-8, eyebrow 9-17, mouth 18-22.
struct TargetMorph {
  int id = 0;
  Part part = Part::eye;
  int semantic = 0;
  Laterality side = Laterality::both;

  friend constexpr bool operator==(const TargetMorph&, const TargetMorph&) = default;
};

inline constexpr std::array<TargetMorph, kTargetMorphCount> make_target_morphs() {
  std::array<TargetMorph, kTargetMorphCount> out{};
  int id = 0;
  for (Part part : {Part::eye, Part::eyebrow}) {
    for (int s = 0; s < 3; ++s) {
      for (Laterality side : {Laterality::left, Laterality::right, Laterality::both}) {
        out[id] = TargetMorph{id, part, s, side};
        ++id;
      }
    }
  }
  for (int s = 0; s < 5; ++s) {
    out[id] = TargetMorph{id, Part::mouth, s, Laterality::both};
    ++id;
  }
  return out;
}

inline constexpr std::array<TargetMorph, kTargetMorphCount> kTargetMorphs = make_target_morphs();

inline const TargetMorph& target_morph(int id) {
  if (id < 0 || id >= kTargetMorphCount) {
    throw UsageError("target morph id out of range: " + std::to_string(id));
  }
  return kTargetMorphs[static_cast<std::size_t>(id)];
}

inline std::optional<int> find_target_morph(Part part, int semantic, Laterality side) {
  for (const auto& m : kTargetMorphs) {
    if (m.part == part && m.semantic == semantic && m.side == side) return m.id;
  }
  return std::nullopt;
}

/// Expression slots driven by a target morph. `both` eye/eyebrow morphs fill
/// the left and right slots together; mouth morphs own one slot.
inline std::vector<int> slots_of(const TargetMorph& m) {
  const int base = part_base_slot(m.part);
  if (m.part == Part::mouth) return {base + m.semantic};
  const int left = base + 2 * m.semantic;
  switch (m.side) {
    case Laterality::left: return {left};
    case Laterality::right: return {left + 1};
    case Laterality::both: return {left, left + 1};
  }
  return {};
}

// Machine name, e.g. "eye/closed/left", "mouth/A".
inline std::string target_key(const TargetMorph& m) {
  std::string out{part_name(m.part)};
  out += '/';
  out += semantic_name(m.part, m.semantic);
  if (m.part != Part::mouth) {
    out += '/';
    out += laterality_name(m.side);
  }
  return out;
}

inline std::optional<int> parse_target_key(std::string_view key) {
  for (const auto& m : kTargetMorphs) {
    if (target_key(m) == key) return m.id;
  }
  return std::nullopt;
}

// Human-facing label as used in mapping tables: "Mouth(A)", "Closed Eyes",
// "Left Raised Eyebrow".
inline std::string target_label(const TargetMorph& m) {
  if (m.part == Part::mouth) return "Mouth(" + std::string(semantic_name(m.part, m.semantic)) + ")";
  std::string sem{semantic_name(m.part, m.semantic)};
  sem[0] = static_cast<char>(sem[0] - 'a' + 'A');
  std::string noun = m.part == Part::eye ? "Eye" : "Eyebrow";
  switch (m.side) {
    case Laterality::left: return "Left " + sem + " " + noun;
    case Laterality::right: return "Right " + sem + " " + noun;
    case Laterality::both: return sem + " " + noun + "s";
  }
  return sem;
}

inline std::string slot_name(int slot) {
  static constexpr std::array<std::string_view, kPoseDims> names = {
      "eye_closed_L",      "eye_closed_R",      "eye_unimpressed_L", "eye_unimpressed_R",
      "eye_surprised_L",   "eye_surprised_R",   "brow_angry_L",      "brow_angry_R",
      "brow_raised_L",     "brow_raised_R",     "brow_lowered_L",    "brow_lowered_R",
      "mouth_A",           "mouth_E",           "mouth_I",           "mouth_O",
      "mouth_U",           "yaw",               "pitch",             "roll"};
  if (slot < 0 || slot >= kPoseDims) return "slot" + std::to_string(slot);
  return std::string(names[static_cast<std::size_t>(slot)]);
}

enum class PoseGroup : std::uint8_t { frontalized_expression, rotated_expression };

inline constexpr std::string_view group_name(PoseGroup g) {
  return g == PoseGroup::frontalized_expression ? "frontalized_expression" : "rotated_expression";
}

inline std::optional<PoseGroup> parse_group(std::string_view s) {
  if (s == "frontalized_expression") return PoseGroup::frontalized_expression;
  if (s == "rotated_expression") return PoseGroup::rotated_expression;
  return std::nullopt;
}

struct PoseVector {
  std::array<double, kExpressionDims> expr{};
  std::array<double, kAngleDims> angles_deg{};  // yaw, pitch, roll

  double yaw() const { return angles_deg[0]; }
  double pitch() const { return angles_deg[1]; }
  double roll() const { return angles_deg[2]; }

  double operator[](int i) const { return i < kExpressionDims ? expr[i] : angles_deg[i - kExpressionDims]; }
  double& operator[](int i) { return i < kExpressionDims ? expr[i] : angles_deg[i - kExpressionDims]; }

  std::array<double, kPoseDims> flat() const {
    std::array<double, kPoseDims> out{};
    for (int i = 0; i < kPoseDims; ++i) out[i] = (*this)[i];
    return out;
  }

  static PoseVector from_flat(std::span<const double> values) {
    if (values.size() != kPoseDims) {
      throw UsageError("pose vector needs " + std::to_string(kPoseDims) + " values, got " +
                       std::to_string(values.size()));
    }
    PoseVector p;
    for (int i = 0; i < kPoseDims; ++i) p[i] = values[i];
    return p;
  }

  static PoseVector unit_slot(int slot, double value = 1.0) {
    PoseVector p;
    p[slot] = value;
    return p;
  }

  friend bool operator==(const PoseVector&, const PoseVector&) = default;
};

// Consistency of a group tag: frontal poses have zero angles.
inline bool consistent(PoseGroup group, const PoseVector& p) {
  return group == PoseGroup::rotated_expression ||
         (p.angles_deg[0] == 0.0 && p.angles_deg[1] == 0.0 && p.angles_deg[2] == 0.0);
}

struct ValidationIssue {
  enum class Kind : std::uint8_t { non_finite, expression_out_of_range };
  Kind kind;
  int slot;
  double value;
};

/// Result of validate(). `issues` are invariant violations; non-finite
/// entries are structural errors and are reported with their own kind.
/// `outside_sampler_range` lists angle slots beyond +/-20 degrees; these are
/// informational and do not make the report non-empty.
struct ValidationReport {
  std::vector<ValidationIssue> issues;
  std::vector<int> outside_sampler_range;

  bool empty() const { return issues.empty(); }
  bool has_structural_error() const {
    for (const auto& i : issues)
      if (i.kind == ValidationIssue::Kind::non_finite) return true;
    return false;
  }
};

inline ValidationReport validate(const PoseVector& p) {
  ValidationReport report;
  for (int i = 0; i < kPoseDims; ++i) {
    const double v = p[i];
    if (!std::isfinite(v)) {
      report.issues.push_back({ValidationIssue::Kind::non_finite, i, v});
      continue;
    }
    if (i < kExpressionDims) {
      if (v < 0.0 || v > 1.0) report.issues.push_back({ValidationIssue::Kind::expression_out_of_range, i, v});
    } else if (std::abs(v) > kSamplerAngleLimitDeg) {
      report.outside_sampler_range.push_back(i);
    }
  }
  return report;
}

inline std::string describe(const ValidationReport& report) {
  std::string out;
  for (const auto& issue : report.issues) {
    if (!out.empty()) out += "; ";
    out += slot_name(issue.slot);
    out += issue.kind == ValidationIssue::Kind::non_finite ? ": non-finite" : ": outside [0, 1]";
  }
  return out;
}

/// Componentwise (1 - t) p + t q over all 20 dimensions.
inline PoseVector lerp(const PoseVector& p, const PoseVector& q, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw UsageError("interpolation parameter must lie in [0, 1]");
  PoseVector out;
  for (int i = 0; i < kPoseDims; ++i) out[i] = (1.0 - t) * p[i] + t * q[i];
  return out;
}

/// `steps` in-between poses at t = i / (steps + 1); endpoints excluded.
inline std::vector<PoseVector> interpolation_path(const PoseVector& p, const PoseVector& q, int steps) {
  if (steps < 1) throw UsageError("--steps must be at least 1");
  std::vector<PoseVector> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (int i = 1; i <= steps; ++i) out.push_back(lerp(p, q, static_cast<double>(i) / (steps + 1)));
  return out;
}

// Text form: comma-separated, 17 significant digits (round-trips exactly).
inline std::string format_pose(const PoseVector& p) {
  std::string out;
  char buf[32];
  for (int i = 0; i < kPoseDims; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", p[i]);
    if (i) out += ',';
    out += buf;
  }
  return out;
}

}  // namespace toonpose
