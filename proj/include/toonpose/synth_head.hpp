#pragma once

// Parametric cartoon head: character descriptors, the control rig with its
// per-slot linear deformation rules, and posed/projected geometry.
//
// Head frame (face units): x to the image right (the character's left),
// y up, z toward the camera. The face spans y in [-1, 1]; hair tops out at
// y = 1.125. Geometry is orthographically projected by dropping z.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "toonpose/pose.hpp"
#include "toonpose/rng.hpp"
#include "toonpose/sampler.hpp"

namespace toonpose {

struct Vec2 {
  double x = 0, y = 0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct Vec3 {
  double x = 0, y = 0, z = 0;
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline Vec3 mirror_x(Vec3 a) { return {-a.x, a.y, a.z}; }

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Vec3 operator*(const Mat3& m, Vec3 v) {
  return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z, m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
          m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

inline Mat3 operator*(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
  return out;
}

inline constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Head rotation R = R_roll(z) * R_pitch(x) * R_yaw(y); yaw is applied first.
/// Positive yaw turns the face toward +x, positive pitch tips it down,
/// positive roll is counter-clockwise in the image.
inline Mat3 head_rotation(double yaw_deg, double pitch_deg, double roll_deg) {
  const double cy = std::cos(deg_to_rad(yaw_deg)), sy = std::sin(deg_to_rad(yaw_deg));
  const double cp = std::cos(deg_to_rad(pitch_deg)), sp = std::sin(deg_to_rad(pitch_deg));
  const double cr = std::cos(deg_to_rad(roll_deg)), sr = std::sin(deg_to_rad(roll_deg));
  const Mat3 yaw{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
  const Mat3 pitch{{{1, 0, 0}, {0, cp, -sp}, {0, sp, cp}}};
  const Mat3 roll{{{cr, -sr, 0}, {sr, cr, 0}, {0, 0, 1}}};
  return roll * (pitch * yaw);
}

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct Palette {
  Rgb skin, hair, eye, outline;
};

struct Proportions {
  double face_ratio = 0.85;       // face half-width over half-height
  double eye_size = 1.0;
  double mouth_width = 0.16;      // mouth half-width
  double brow_thickness = 0.028;  // stroke radius
};

struct ProportionBounds {
  static constexpr double face_ratio_min = 0.78, face_ratio_max = 0.92;
  static constexpr double eye_size_min = 0.85, eye_size_max = 1.2;
  static constexpr double mouth_width_min = 0.12, mouth_width_max = 0.2;
  static constexpr double brow_thickness_min = 0.02, brow_thickness_max = 0.038;
};

// Coordinates live on a 2^-16 grid so that rule targets are reached exactly
// (p + (q - p) == q) and mirroring is exact.
inline double quantize(double v) { return std::round(v * 65536.0) / 65536.0; }

struct CharacterDescriptor {
  std::string model_id;
  std::uint64_t seed = 0;
  Palette palette;
  Proportions proportions;
  MorphAvailability supported;

  /// Deterministic character from a seed. Each target morph is supported
  /// with probability 0.85; the availability substream seed is `seed`.
  static CharacterDescriptor from_seed(std::string model_id, std::uint64_t seed) {
    Rng rng(splitmix64(seed ^ 0xc4a2a7e11ULL));
    CharacterDescriptor ch;
    ch.model_id = std::move(model_id);
    ch.seed = seed;
    // quantized to 1/4096 so descriptors print exactly; stays inside the bounds
    auto q12 = [](double v, double lo, double hi) {
      return std::clamp(std::round(v * 4096.0), std::ceil(lo * 4096.0), std::floor(hi * 4096.0)) / 4096.0;
    };
    using B = ProportionBounds;
    ch.proportions.face_ratio = q12(rng.uniform(B::face_ratio_min, B::face_ratio_max), B::face_ratio_min, B::face_ratio_max);
    ch.proportions.eye_size = q12(rng.uniform(B::eye_size_min, B::eye_size_max), B::eye_size_min, B::eye_size_max);
    ch.proportions.mouth_width = q12(rng.uniform(B::mouth_width_min, B::mouth_width_max), B::mouth_width_min, B::mouth_width_max);
    ch.proportions.brow_thickness = q12(rng.uniform(B::brow_thickness_min, B::brow_thickness_max), B::brow_thickness_min, B::brow_thickness_max);

    static constexpr std::array<Rgb, 6> skins = {
        Rgb{255, 228, 210}, Rgb{250, 215, 190}, Rgb{240, 200, 170}, Rgb{255, 236, 224}, Rgb{225, 180, 150}, Rgb{248, 222, 206}};
    static constexpr std::array<Rgb, 8> hairs = {Rgb{40, 30, 35},   Rgb{200, 60, 70},  Rgb{240, 210, 120}, Rgb{90, 120, 200},
                                                 Rgb{230, 230, 240}, Rgb{120, 70, 40}, Rgb{160, 90, 190},  Rgb{60, 160, 120}};
    static constexpr std::array<Rgb, 6> eyes = {Rgb{60, 90, 200}, Rgb{150, 60, 40}, Rgb{40, 140, 80},
                                                Rgb{180, 40, 120}, Rgb{90, 60, 30},  Rgb{200, 150, 30}};
    ch.palette.skin = skins[rng.below(skins.size())];
    ch.palette.hair = hairs[rng.below(hairs.size())];
    ch.palette.eye = eyes[rng.below(eyes.size())];
    ch.palette.outline = Rgb{static_cast<std::uint8_t>(30 + rng.below(30)), 20, 25};

    ch.supported.seed = seed;
    for (int id = 0; id < kTargetMorphCount; ++id)
      if (rng.uniform() < 0.85) ch.supported.available.set(static_cast<std::size_t>(id));
    return ch;
  }

  /// Mid-range proportions, all morphs supported. Source of the default
  /// landmark model used for pose mapping.
  static CharacterDescriptor canonical() {
    CharacterDescriptor ch;
    ch.model_id = "canonical";
    ch.palette = {Rgb{255, 228, 210}, Rgb{40, 30, 35}, Rgb{60, 90, 200}, Rgb{40, 20, 25}};
    ch.proportions = Proportions{};
    ch.supported = MorphAvailability::all(0);
    return ch;
  }
};

// ---------------------------------------------------------------------------
// Control rig

inline constexpr int kLandmarkCount = 24;

/// Canonical landmarks: 3 per eyebrow, 4 per eye, 6 mouth, 4 face contour.
enum Landmark : int {
  kBrowLInner, kBrowLMid, kBrowLOuter, kBrowRInner, kBrowRMid, kBrowROuter,
  kEyeLInner, kEyeLOuter, kEyeLUpper, kEyeLLower, kEyeRInner, kEyeROuter, kEyeRUpper, kEyeRLower,
  kMouthCornerL, kMouthCornerR, kMouthUpperL, kMouthUpperR, kMouthLowerL, kMouthLowerR,
  kCheekL, kCheekR, kChin, kForehead,
};

inline constexpr std::array<int, kLandmarkCount> kLandmarkMirror = {
    3, 4, 5, 0, 1, 2, 10, 11, 12, 13, 6, 7, 8, 9, 15, 14, 17, 16, 19, 18, 21, 20, 22, 23};

inline constexpr int kOutlineHalf = 16;  // outline segments per side
inline constexpr int kOutlineCount = 2 * kOutlineHalf;

/// Named control points. Left/right features have mirror-image indices.
struct RigLayout {
  // Per eye: inner, outer corners; upper inner/mid/outer; lower inner/mid/outer; iris.
  static constexpr int kEyeStride = 9;
  static constexpr int kEyeL = 0, kEyeR = kEyeL + kEyeStride;
  static constexpr int kCornerIn = 0, kCornerOut = 1, kUpper = 2, kLower = 5, kIris = 8;
  // Per brow: inner, mid, outer.
  static constexpr int kBrowL = 18, kBrowR = 21;
  // Mouth contours: corner L, upper L, upper mid, upper R, corner R, lower R, lower mid, lower L.
  static constexpr int kMouthOuter = 24, kMouthInner = 32;
  static constexpr int kMouthCornerL = 0, kMouthUpperL = 1, kMouthUpperMid = 2, kMouthUpperR = 3,
                       kMouthCornerR = 4, kMouthLowerR = 5, kMouthLowerMid = 6, kMouthLowerL = 7;
  static constexpr int kNose = 40;  // two points
  static constexpr int kOutline = 42;
  static constexpr int kHair = kOutline + kOutlineCount;
  static constexpr int kHairCount = 30;
  static constexpr int kNeck = kHair + kHairCount;  // four points, not rotated with the head
  static constexpr int kPointCount = kNeck + 4;
};

struct RuleTerm {
  int point;
  Vec3 delta;
};

/// Control points with nominal depth and the per-slot deformation rules.
/// Each rule's displacement is applied scaled by the slot intensity.
struct ControlRig {
  std::vector<Vec3> points;
  std::array<std::vector<RuleTerm>, kExpressionDims> rules;
  std::array<int, kLandmarkCount> landmark_points{};
  Vec3 neck_pivot;
  Vec3 head_center;
  double eye_upper_height = 0;
  double iris_radius = 0;
};

inline constexpr Vec3 kNeckPivot{0.0, -1.0, -0.125};
inline constexpr Vec3 kHeadCenter{0.0, 0.0625, 0.0};

namespace detail {

// Writes the left-side point and its mirror at `right_index`.
inline void put_mirrored(std::vector<Vec3>& pts, int left_index, int right_index, Vec3 left) {
  left = {quantize(left.x), quantize(left.y), quantize(left.z)};
  pts[static_cast<std::size_t>(left_index)] = left;
  pts[static_cast<std::size_t>(right_index)] = mirror_x(left);
}

inline Vec3 q3(Vec3 v) { return {quantize(v.x), quantize(v.y), quantize(v.z)}; }

}  // namespace detail

inline ControlRig build_rig(const CharacterDescriptor& ch) {
  using L = RigLayout;
  const auto& pr = ch.proportions;
  ControlRig rig;
  rig.points.assign(L::kPointCount, Vec3{});
  auto& pts = rig.points;

  const double fw = pr.face_ratio;
  const double ew = quantize(0.16 * pr.eye_size);  // eye half-width
  const double eh = quantize(0.15 * pr.eye_size);  // upper lid height
  const double ex = quantize(0.42 * fw);
  const double ey = 0.0;
  const double eye_z = 0.5625;
  rig.eye_upper_height = eh;
  rig.iris_radius = quantize(0.55 * ew);

  // Eyes. The left eye's inner corner faces the midline.
  auto upper_y = [&](double s) { return ey + eh * (1.0 - s * s) + 0.015 * s; };
  auto lower_y = [&](double s) { return ey - 0.35 * eh * (1.0 - s * s) + 0.015 * s; };
  const std::array<double, 3> knots = {-0.5, 0.0, 0.5};
  detail::put_mirrored(pts, L::kEyeL + L::kCornerIn, L::kEyeR + L::kCornerIn, {ex - ew, upper_y(-1), eye_z});
  detail::put_mirrored(pts, L::kEyeL + L::kCornerOut, L::kEyeR + L::kCornerOut, {ex + ew, upper_y(1), eye_z});
  for (int k = 0; k < 3; ++k) {
    const double s = knots[k];
    detail::put_mirrored(pts, L::kEyeL + L::kUpper + k, L::kEyeR + L::kUpper + k, {ex + ew * s, upper_y(s), eye_z});
    detail::put_mirrored(pts, L::kEyeL + L::kLower + k, L::kEyeR + L::kLower + k, {ex + ew * s, lower_y(s), eye_z});
  }
  detail::put_mirrored(pts, L::kEyeL + L::kIris, L::kEyeR + L::kIris, {ex, ey + 0.3 * eh, eye_z});

  // Eyebrows.
  const double brow_base = ey + eh + 0.15;
  detail::put_mirrored(pts, L::kBrowL + 0, L::kBrowR + 0, {ex - 0.8 * ew, brow_base, 0.59375});
  detail::put_mirrored(pts, L::kBrowL + 1, L::kBrowR + 1, {ex + 0.05 * ew, brow_base + 0.05, 0.59375});
  detail::put_mirrored(pts, L::kBrowL + 2, L::kBrowR + 2, {ex + 0.95 * ew, brow_base + 0.01, 0.5625});

  // Mouth: outer and inner contours, symmetric about x = 0.
  const double mw = pr.mouth_width;
  const double my = -0.5625;
  const double mouth_z = 0.59375;
  auto mouth_contour = [&](int base, double half_w, double up, double down) {
    detail::put_mirrored(pts, base + L::kMouthCornerL, base + L::kMouthCornerR, {half_w, my, mouth_z});
    detail::put_mirrored(pts, base + L::kMouthUpperL, base + L::kMouthUpperR, {0.45 * half_w, my + up, mouth_z});
    detail::put_mirrored(pts, base + L::kMouthLowerL, base + L::kMouthLowerR, {0.45 * half_w, my - down, mouth_z});
    pts[base + L::kMouthUpperMid] = detail::q3({0.0, my + 0.8 * up, mouth_z});
    pts[base + L::kMouthLowerMid] = detail::q3({0.0, my - 1.1 * down, mouth_z});
  };
  mouth_contour(L::kMouthOuter, mw, 0.0125, 0.0125);
  mouth_contour(L::kMouthInner, 0.8 * mw, 0.004, 0.004);

  pts[L::kNose] = detail::q3({0.0, -0.1875, 0.75});
  pts[L::kNose + 1] = detail::q3({0.0, -0.25, 0.75});

  // Face outline: top midline, right side (image left), chin, left side.
  // Index 0 is the top, kOutlineHalf the chin; i and kOutlineCount - i mirror.
  auto outline_at = [&](int k) {
    const double t = std::numbers::pi * k / kOutlineHalf;
    double x = fw * std::sin(t);
    if (t > std::numbers::pi / 2) {
      const double u = (t - std::numbers::pi / 2) / (std::numbers::pi / 2);
      x *= 1.0 - 0.4 * u * u;
    }
    return Vec3{x, std::cos(t), 0.0};
  };
  pts[L::kOutline] = detail::q3(outline_at(0));
  pts[L::kOutline + kOutlineHalf] = detail::q3(outline_at(kOutlineHalf));
  for (int k = 1; k < kOutlineHalf; ++k) {
    // Positive x (character's left) runs on the descending indices.
    detail::put_mirrored(pts, L::kOutline + kOutlineCount - k, L::kOutline + k, outline_at(k));
  }

  // Hair: outer arc over the skull and a fringe with five locks.
  {
    std::vector<Vec3> left;  // from top midline clockwise down the +x side, then fringe inward
    const int arc = 9;
    for (int k = 0; k <= arc; ++k) {
      const double a = std::numbers::pi / 2 - (std::numbers::pi / 2 + 0.12) * k / arc;
      left.push_back({(fw + 0.07) * std::cos(a), 0.0625 + 1.0625 * std::sin(a), 0.25});
    }
    const std::array<Vec2, 5> fringe = {Vec2{fw * 0.97, 0.15}, Vec2{fw * 0.78, 0.56}, Vec2{fw * 0.56, 0.36},
                                        Vec2{fw * 0.32, 0.6}, Vec2{fw * 0.13, 0.42}};
    for (auto f : fringe) left.push_back({f.x, f.y, f.x > 0.9 * fw ? 0.25 : 0.4375});
    // left.size() == 15: indices 0 (top midline) .. 14; fringe midline point separate.
    const int n = static_cast<int>(left.size());
    pts[L::kHair] = detail::q3(left[0]);
    for (int k = 1; k < n; ++k) detail::put_mirrored(pts, L::kHair + k, L::kHair + L::kHairCount - k, left[k]);
    pts[L::kHair + n] = detail::q3({0.0, 0.625, 0.4375});
  }

  // Neck (unrotated body part).
  const double nw = quantize(0.3 * fw);
  pts[L::kNeck + 0] = {nw, -0.5, -0.25};
  pts[L::kNeck + 1] = {nw, -1.75, -0.25};
  pts[L::kNeck + 2] = {-nw, -1.75, -0.25};
  pts[L::kNeck + 3] = {-nw, -0.5, -0.25};

  rig.neck_pivot = kNeckPivot;
  rig.head_center = kHeadCenter;

  // Landmark to control point table.
  rig.landmark_points = {
      L::kBrowL, L::kBrowL + 1, L::kBrowL + 2, L::kBrowR, L::kBrowR + 1, L::kBrowR + 2,
      L::kEyeL + L::kCornerIn, L::kEyeL + L::kCornerOut, L::kEyeL + L::kUpper + 1, L::kEyeL + L::kLower + 1,
      L::kEyeR + L::kCornerIn, L::kEyeR + L::kCornerOut, L::kEyeR + L::kUpper + 1, L::kEyeR + L::kLower + 1,
      L::kMouthOuter + L::kMouthCornerL, L::kMouthOuter + L::kMouthCornerR,
      L::kMouthOuter + L::kMouthUpperL, L::kMouthOuter + L::kMouthUpperR,
      L::kMouthOuter + L::kMouthLowerL, L::kMouthOuter + L::kMouthLowerR,
      L::kOutline + kOutlineCount - 10, L::kOutline + 10, L::kOutline + kOutlineHalf, L::kOutline};

  // ---- Deformation rules. Left-side rules are authored; right-side rules mirror them.
  auto& rules = rig.rules;
  auto add = [&](int slot, int point, Vec3 delta) { rules[slot].push_back({point, detail::q3(delta)}); };
  auto eye_pt = [](int eye, int off) { return eye + off; };

  auto eye_rules = [&](int eye, int closed, int unimpressed, int surprised) {
    for (int k = 0; k < 3; ++k) {
      const Vec3 up = pts[eye_pt(eye, L::kUpper + k)];
      const Vec3 lo = pts[eye_pt(eye, L::kLower + k)];
      add(closed, eye_pt(eye, L::kUpper + k), {0, lo.y - up.y, 0});
      add(unimpressed, eye_pt(eye, L::kUpper + k), {0, 0.5 * (lo.y - up.y), 0});
      add(unimpressed, eye_pt(eye, L::kLower + k), {0, 0.08 * eh, 0});
      add(surprised, eye_pt(eye, L::kUpper + k), {0, (k == 1 ? 0.3 : 0.22) * eh, 0});
      add(surprised, eye_pt(eye, L::kLower + k), {0, -0.15 * eh, 0});
    }
  };
  eye_rules(L::kEyeL, 0, 2, 4);

  auto brow_rules = [&](int brow, int angry, int raised, int lowered) {
    add(angry, brow + 0, {-0.03, -0.09, 0});
    add(angry, brow + 1, {0, -0.03, 0});
    add(angry, brow + 2, {0, 0.04, 0});
    add(raised, brow + 0, {0, 0.14, 0});
    add(raised, brow + 1, {0, 0.12, 0});
    add(raised, brow + 2, {0, 0.11, 0});
    add(lowered, brow + 0, {0, -0.05, 0});
    add(lowered, brow + 1, {0, -0.07, 0});
    add(lowered, brow + 2, {0, -0.08, 0});
  };
  brow_rules(L::kBrowL, 6, 8, 10);

  // Mirror left rules (even slots) into right rules (odd slots).
  auto mirror_point = [](int p) {
    if (p >= L::kEyeL && p < L::kEyeR) return p + L::kEyeStride;
    if (p >= L::kBrowL && p < L::kBrowR) return p + 3;
    return p;
  };
  for (int slot = 0; slot < 12; slot += 2) {
    for (const auto& t : rules[slot]) rules[slot + 1].push_back({mirror_point(t.point), mirror_x(t.delta)});
  }

  // Mouth rules are self-symmetric; `sym` adds a term on the +x point and its mirror.
  auto sym = [&](int slot, int base, int left_off, int right_off, Vec3 delta) {
    add(slot, base + left_off, delta);
    add(slot, base + right_off, mirror_x(delta));
  };
  auto mid = [&](int slot, int base, int off, double dy) { add(slot, base + off, {0, dy, 0}); };
  struct MouthShape {
    double corner_dx, corner_dy, upper_dx, upper_dy, lower_dx, lower_dy;
  };
  // A, E, I, O, U at full intensity.
  const std::array<MouthShape, 5> shapes = {
      MouthShape{-0.02, 0.0, 0.0, 0.02, 0.0, -0.22},
      MouthShape{0.05, 0.0, 0.02, 0.01, 0.02, -0.1},
      MouthShape{0.07, 0.02, 0.03, 0.01, 0.03, -0.05},
      MouthShape{-0.3 * mw, 0.0, -0.15 * mw, 0.04, -0.15 * mw, -0.16},
      MouthShape{-0.45 * mw, 0.0, -0.22 * mw, 0.015, -0.22 * mw, -0.05},
  };
  for (int s = 0; s < 5; ++s) {
    const int slot = 12 + s;
    const auto& sh = shapes[s];
    for (int base : {L::kMouthOuter, L::kMouthInner}) {
      const double f = base == L::kMouthOuter ? 1.0 : 0.85;
      sym(slot, base, L::kMouthCornerL, L::kMouthCornerR, {f * sh.corner_dx, sh.corner_dy, 0});
      sym(slot, base, L::kMouthUpperL, L::kMouthUpperR, {f * sh.upper_dx, f * sh.upper_dy, 0});
      sym(slot, base, L::kMouthLowerL, L::kMouthLowerR, {f * sh.lower_dx, f * sh.lower_dy, 0});
      mid(slot, base, L::kMouthUpperMid, f * sh.upper_dy);
      mid(slot, base, L::kMouthLowerMid, f * 1.1 * sh.lower_dy);
    }
  }
  return rig;
}

/// Control points after the deformation rules (head frame, unrotated).
inline std::vector<Vec3> deform(const ControlRig& rig, const PoseVector& p) {
  std::vector<Vec3> pts = rig.points;
  for (int slot = 0; slot < kExpressionDims; ++slot) {
    const double a = p.expr[slot];
    if (a == 0.0) continue;
    for (const auto& t : rig.rules[slot]) pts[t.point] = pts[t.point] + a * t.delta;
  }
  return pts;
}

/// Deformed control points rotated about the neck pivot. The neck itself is
/// a body part and stays put.
inline std::vector<Vec3> pose_points(const ControlRig& rig, const PoseVector& p) {
  std::vector<Vec3> pts = deform(rig, p);
  if (p.yaw() == 0.0 && p.pitch() == 0.0 && p.roll() == 0.0) return pts;
  const Mat3 r = head_rotation(p.yaw(), p.pitch(), p.roll());
  for (int i = 0; i < RigLayout::kNeck; ++i) pts[i] = rig.neck_pivot + r * (pts[i] - rig.neck_pivot);
  return pts;
}

using LandmarkSet = std::array<Vec2, kLandmarkCount>;

inline LandmarkSet landmarks_of(const ControlRig& rig, const std::vector<Vec3>& posed) {
  LandmarkSet out{};
  for (int i = 0; i < kLandmarkCount; ++i) {
    const Vec3 v = posed[rig.landmark_points[i]];
    out[i] = {v.x, v.y};
  }
  return out;
}

/// The 24 canonical landmarks in face units (orthographic, z dropped).
inline LandmarkSet landmarks(const CharacterDescriptor& ch, const PoseVector& p) {
  const ControlRig rig = build_rig(ch);
  return landmarks_of(rig, pose_points(rig, p));
}

}  // namespace toonpose
