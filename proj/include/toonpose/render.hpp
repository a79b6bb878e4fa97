#pragma once

// Software rasterizer for the synthetic head.
//
// Coverage is decided per pixel center with no anti-aliasing, so alpha is
// exactly 0 or 255 and depends only on geometry, never on the shader.
// Pixel-space coordinates (u, v) have their origin at the image center with
// v pointing up; the center of pixel (i, j) is ((2i + 1 - W) / 2, (H - 2j - 1) / 2).
// All inside tests are written so that mirroring the geometry about u = 0
// mirrors the result exactly (edge endpoints are taken in a canonical order).
//
// Colors are computed in double precision and rounded with floor(v + 0.5)
// after clamping to [0, 255].

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "toonpose/image.hpp"
#include "toonpose/synth_head.hpp"

namespace toonpose {

enum class Material : std::uint8_t {
  background, neck, skin, hair, outline, sclera, iris, pupil, highlight, brow, mouth, mouth_inner
};

inline bool is_eye_interior(Material m) {
  return m == Material::sclera || m == Material::iris || m == Material::pupil || m == Material::highlight;
}

inline constexpr std::array<int, 3> kSupportedResolutions = {256, 512, 1024};
inline constexpr int kShaderCount = 4;

// Head (chin to hair top) spans kHeadSpan face units and fills 70% of the
// image height; the camera sits kCameraLift above the neck pivot.
inline constexpr double kHeadSpan = 2.125;
inline constexpr double kHeadFill = 0.7;
inline constexpr double kCameraLift = 1.0625;

struct Framing {
  int width = 256;
  int height = 256;
  double scale = 0;  // pixels per face unit
  double cam_x = 0;
  double cam_y = 0;

  static Framing for_resolution(int res, Vec3 neck_pivot) {
    Framing f;
    f.width = f.height = res;
    f.scale = kHeadFill * res / kHeadSpan;
    f.cam_x = neck_pivot.x;
    f.cam_y = neck_pivot.y + kCameraLift;
    return f;
  }

  Vec2 to_pixel_space(Vec3 p) const { return {(p.x - cam_x) * scale, (p.y - cam_y) * scale}; }
  // Continuous image coordinates: column right, row down; pixel (i, j)
  // covers [i, i + 1) x [j, j + 1).
  Vec2 to_image(Vec3 p) const {
    const Vec2 s = to_pixel_space(p);
    return {s.x + 0.5 * width, 0.5 * height - s.y};
  }
};

/// Output of render(): RGBA raster, per-pixel materials and projected landmarks.
struct RenderedFrame {
  Image rgba;
  std::vector<Material> labels;
  LandmarkSet landmarks_px{};
  Vec2 neck_pivot_px;
  int shader = 1;

  int width() const { return rgba.width; }
  int height() const { return rgba.height; }
  Material label(int i, int j) const { return labels[static_cast<std::size_t>(j) * rgba.width + i]; }
  std::vector<std::uint8_t> alpha_mask() const {
    std::vector<std::uint8_t> out(labels.size());
    for (std::size_t k = 0; k < labels.size(); ++k) out[k] = rgba.pixels[4 * k + 3];
    return out;
  }
  long count(Material m) const { return static_cast<long>(std::count(labels.begin(), labels.end(), m)); }
  long eye_interior_pixels() const {
    return static_cast<long>(std::count_if(labels.begin(), labels.end(), is_eye_interior));
  }
};

namespace raster {

// Even-odd test with the ray cast both ways; a point counts as inside if
// either ray sees an odd number of crossings. Mirror-symmetric by construction.
inline bool inside_polygon(std::span<const Vec2> poly, double x, double y) {
  int right = 0, left = 0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    Vec2 a = poly[j], b = poly[i];
    if ((a.y > y) == (b.y > y)) continue;
    if (b.y < a.y) std::swap(a, b);
    const double xi = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
    if (x < xi) ++right;
    else if (x > xi) ++left;
  }
  return (right & 1) || (left & 1);
}

inline double segment_distance_sq(Vec2 p, Vec2 a, Vec2 b) {
  if (a.y == b.y) {
    const double x0 = std::min(a.x, b.x), x1 = std::max(a.x, b.x);
    const double dx = std::max({x0 - p.x, 0.0, p.x - x1});
    const double dy = p.y - a.y;
    return dx * dx + dy * dy;
  }
  if (b.y < a.y) std::swap(a, b);
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double wx = p.x - a.x, wy = p.y - a.y;
  const double len2 = dx * dx + dy * dy;
  const double dot = wx * dx + wy * dy;
  if (dot <= 0.0) return wx * wx + wy * wy;
  if (dot >= len2) {
    const double ex = p.x - b.x, ey = p.y - b.y;
    return ex * ex + ey * ey;
  }
  const double cross = dx * wy - dy * wx;
  return cross * cross / len2;
}

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), labels_(static_cast<std::size_t>(w) * h, Material::background) {}

  double u(int i) const { return 0.5 * (2 * i + 1 - w_); }
  double v(int j) const { return 0.5 * (h_ - 2 * j - 1); }

  template <typename Inside>
  void fill(double min_u, double max_u, double min_v, double max_v, Material m, Inside&& inside) {
    const int i0 = std::max(0, static_cast<int>(std::floor(min_u + 0.5 * w_)) - 1);
    const int i1 = std::min(w_ - 1, static_cast<int>(std::ceil(max_u + 0.5 * w_)) + 1);
    const int j0 = std::max(0, static_cast<int>(std::floor(0.5 * h_ - max_v)) - 1);
    const int j1 = std::min(h_ - 1, static_cast<int>(std::ceil(0.5 * h_ - min_v)) + 1);
    for (int j = j0; j <= j1; ++j) {
      const double vy = v(j);
      for (int i = i0; i <= i1; ++i) {
        if (inside(u(i), vy)) labels_[static_cast<std::size_t>(j) * w_ + i] = m;
      }
    }
  }

  void polygon(std::span<const Vec2> poly, Material m) {
    auto [lo, hi] = bounds(poly, 0.0);
    fill(lo.x, hi.x, lo.y, hi.y, m, [&](double x, double y) { return inside_polygon(poly, x, y); });
  }

  void capsule(Vec2 a, Vec2 b, double r, Material m) {
    const double r2 = r * r;
    fill(std::min(a.x, b.x) - r, std::max(a.x, b.x) + r, std::min(a.y, b.y) - r, std::max(a.y, b.y) + r, m,
         [&](double x, double y) { return segment_distance_sq({x, y}, a, b) <= r2; });
  }

  void polyline(std::span<const Vec2> pts, bool closed, double r, Material m) {
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) capsule(pts[k], pts[k + 1], r, m);
    if (closed && pts.size() > 2) capsule(pts.back(), pts.front(), r, m);
  }

  // Disk, optionally clipped to a polygon.
  void disk(Vec2 c, double r, Material m, std::span<const Vec2> clip = {}) {
    const double r2 = r * r;
    fill(c.x - r, c.x + r, c.y - r, c.y + r, m, [&](double x, double y) {
      const double dx = x - c.x, dy = y - c.y;
      return dx * dx + dy * dy <= r2 && (clip.empty() || inside_polygon(clip, x, y));
    });
  }

  std::vector<Material> release() && { return std::move(labels_); }

 private:
  static std::pair<Vec2, Vec2> bounds(std::span<const Vec2> pts, double pad) {
    Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
    for (auto p : pts) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    return {{lo.x - pad, lo.y - pad}, {hi.x + pad, hi.y + pad}};
  }

  int w_, h_;
  std::vector<Material> labels_;
};

}  // namespace raster

// Stroke radii in face units.
struct StrokeStyle {
  static constexpr double outline = 0.0125;
  static constexpr double lid = 0.0125;
  static constexpr double upper_lid = 0.021;
  static constexpr double mouth = 0.009;
  static constexpr double nose = 0.008;
};

namespace detail {

struct ShadeInput {
  Material m;
  double lambert;
  int i, j;
  bool near_outline;
};

inline std::array<double, 3> rgb(Rgb c) { return {double(c.r), double(c.g), double(c.b)}; }
inline std::array<double, 3> scaled(std::array<double, 3> c, double s) { return {c[0] * s, c[1] * s, c[2] * s}; }
inline std::array<double, 3> mix(std::array<double, 3> a, std::array<double, 3> b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}
inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0)); }

inline std::array<double, 3> base_color(const Palette& pal, Material m) {
  switch (m) {
    case Material::background: return {0, 0, 0};
    case Material::neck: return scaled(rgb(pal.skin), 0.82);
    case Material::skin: return rgb(pal.skin);
    case Material::hair: return rgb(pal.hair);
    case Material::outline: return rgb(pal.outline);
    case Material::sclera: return {250, 250, 252};
    case Material::iris: return rgb(pal.eye);
    case Material::pupil: return scaled(rgb(pal.eye), 0.35);
    case Material::highlight: return {255, 255, 255};
    case Material::brow: return mix(rgb(pal.hair), rgb(pal.outline), 0.4);
    case Material::mouth: return {182, 72, 84};
    case Material::mouth_inner: return {110, 32, 46};
  }
  return {0, 0, 0};
}

inline bool receives_light(Material m) {
  return m == Material::skin || m == Material::hair || m == Material::brow || m == Material::iris ||
         m == Material::mouth || m == Material::neck;
}

// (1) flat fill + outline, (2) two-band toon, (3) heavy-outline sketch tint,
// (4) soft vertical gradient.
inline std::array<double, 3> shade(int shader, const Palette& pal, const ShadeInput& in, int res) {
  auto c = base_color(pal, in.m);
  switch (shader) {
    case 1:
      return c;
    case 2:
      if (receives_light(in.m)) return scaled(c, in.lambert >= 0.5 ? 1.0 : 0.78);
      return c;
    case 3: {
      if (in.m == Material::outline || in.near_outline) return {24, 22, 26};
      c = mix(c, {247, 241, 228}, 0.45);
      const int a = std::abs(2 * in.i + 1 - res);  // mirror-symmetric hatch phase
      if (receives_light(in.m) && in.lambert < 0.62 && ((a + 2 * in.j) / 2) % 5 == 0) c = scaled(c, 0.8);
      return c;
    }
    case 4: {
      const double g = 1.06 - 0.28 * (in.j + 0.5) / res;
      if (in.m == Material::outline) return mix(c, rgb(pal.skin), 0.3);
      const double soft = receives_light(in.m) ? 0.8 + 0.2 * in.lambert : 1.0;
      return scaled(c, g * soft);
    }
    default:
      return c;
  }
}

}  // namespace detail

inline void check_render_args(int shader, int res) {
  if (shader < 1 || shader > kShaderCount) throw UsageError("shader id must be in 1..4, got " + std::to_string(shader));
  if (std::find(kSupportedResolutions.begin(), kSupportedResolutions.end(), res) == kSupportedResolutions.end())
    throw UsageError("resolution must be 256, 512 or 1024, got " + std::to_string(res));
}

/// Renders a posed character.
///
/// Deformation rules are applied at the pose intensities, the head is
/// rotated about the neck pivot and projected orthographically with the
/// camera framed on the pivot. Lighting is a single directional light on the
/// character's frontal axis (tilted slightly upward), evaluated on a
/// spherical proxy normal centred on the posed head.
inline RenderedFrame render(const CharacterDescriptor& ch, const PoseVector& p, int shader, int res = 256) {
  check_render_args(shader, res);
  const auto report = validate(p);
  if (!report.empty()) throw UsageError("invalid pose vector: " + describe(report));

  using L = RigLayout;
  const ControlRig rig = build_rig(ch);
  const std::vector<Vec3> posed = pose_points(rig, p);
  const Framing fr = Framing::for_resolution(res, rig.neck_pivot);
  const double s = fr.scale;

  auto pix = [&](int idx) { return fr.to_pixel_space(posed[static_cast<std::size_t>(idx)]); };
  auto gather = [&](std::initializer_list<int> idx) {
    std::vector<Vec2> out;
    for (int k : idx) out.push_back(pix(k));
    return out;
  };
  auto range = [&](int first, int count) {
    std::vector<Vec2> out;
    for (int k = 0; k < count; ++k) out.push_back(pix(first + k));
    return out;
  };

  raster::Canvas canvas(res, res);

  canvas.polygon(range(L::kNeck, 4), Material::neck);

  const auto outline = range(L::kOutline, kOutlineCount);
  canvas.polygon(outline, Material::skin);
  canvas.polyline(outline, true, StrokeStyle::outline * s, Material::outline);

  const auto hair = range(L::kHair, L::kHairCount);
  canvas.polygon(hair, Material::hair);
  canvas.polyline(hair, true, StrokeStyle::outline * s, Material::outline);

  canvas.capsule(pix(L::kNose), pix(L::kNose + 1), StrokeStyle::nose * s, Material::outline);

  auto mouth_poly = [&](int base) { return range(base, 8); };
  const auto mouth_outer = mouth_poly(L::kMouthOuter);
  canvas.polygon(mouth_outer, Material::mouth);
  canvas.polygon(mouth_poly(L::kMouthInner), Material::mouth_inner);
  canvas.polyline(mouth_outer, true, StrokeStyle::mouth * s, Material::outline);

  // Eyes: lid strokes first, then the interior fills the polygon exactly.
  for (int eye : {L::kEyeL, L::kEyeR}) {
    const auto poly = gather({eye + L::kCornerIn, eye + L::kUpper, eye + L::kUpper + 1, eye + L::kUpper + 2,
                              eye + L::kCornerOut, eye + L::kLower + 2, eye + L::kLower + 1, eye + L::kLower});
    canvas.polyline(poly, true, StrokeStyle::lid * s, Material::outline);
    canvas.polyline(std::span(poly).first(5), false, StrokeStyle::upper_lid * s, Material::outline);
    canvas.polygon(poly, Material::sclera);
    const Vec2 iris = pix(eye + L::kIris);
    const double r = rig.iris_radius * s;
    canvas.disk(iris, r, Material::iris, poly);
    canvas.disk(iris, 0.45 * r, Material::pupil, poly);
    // Highlight sits toward the outer corner, so the two eyes mirror.
    const double side = eye == L::kEyeL ? 1.0 : -1.0;
    canvas.disk({iris.x + side * 0.35 * r, iris.y + 0.4 * r}, 0.22 * r, Material::highlight, poly);
  }

  for (int brow : {L::kBrowL, L::kBrowR}) {
    canvas.polyline(range(brow, 3), false, ch.proportions.brow_thickness * s, Material::brow);
  }

  RenderedFrame frame;
  frame.shader = shader;
  frame.labels = std::move(canvas).release();
  frame.rgba = Image(res, res, 4);

  // Spherical proxy normal around the posed head center.
  Vec3 head_center = rig.head_center;
  if (p.yaw() != 0.0 || p.pitch() != 0.0 || p.roll() != 0.0) {
    head_center = rig.neck_pivot + head_rotation(p.yaw(), p.pitch(), p.roll()) * (head_center - rig.neck_pivot);
  }
  const Vec2 hc = fr.to_pixel_space(head_center);
  const double head_r = 1.1 * s;
  const double light_y = 0.3 / std::sqrt(1.09), light_z = 1.0 / std::sqrt(1.09);

  raster::Canvas geom(res, res);  // pixel-center helper
  for (int j = 0; j < res; ++j) {
    for (int i = 0; i < res; ++i) {
      const std::size_t k = static_cast<std::size_t>(j) * res + i;
      const Material m = frame.labels[k];
      std::uint8_t* px = &frame.rgba.pixels[4 * k];
      if (m == Material::background) continue;  // RGBA stays 0
      const double nx = (geom.u(i) - hc.x) / head_r, ny = (geom.v(j) - hc.y) / head_r;
      const double nz = std::sqrt(std::max(0.0, 1.0 - nx * nx - ny * ny));
      const double lambert = std::max(0.0, ny * light_y + nz * light_z);
      bool near_outline = false;
      if (shader == 3 && m != Material::outline) {
        auto is_outline = [&](int ii, int jj) {
          return ii >= 0 && jj >= 0 && ii < res && jj < res &&
                 frame.labels[static_cast<std::size_t>(jj) * res + ii] == Material::outline;
        };
        near_outline = is_outline(i - 1, j) || is_outline(i + 1, j) || is_outline(i, j - 1) || is_outline(i, j + 1);
      }
      const auto c = detail::shade(shader, ch.palette, {m, lambert, i, j, near_outline}, res);
      px[0] = detail::to_byte(c[0]);
      px[1] = detail::to_byte(c[1]);
      px[2] = detail::to_byte(c[2]);
      px[3] = 255;
    }
  }

  for (int l = 0; l < kLandmarkCount; ++l) {
    const Vec3 pt = posed[static_cast<std::size_t>(rig.landmark_points[l])];
    frame.landmarks_px[l] = fr.to_image(pt);
  }
  frame.neck_pivot_px = fr.to_image(rig.neck_pivot);
  return frame;
}

/// Structured render job for an external renderer adapter.
inline nlohmann::json render_job(const std::string& model_id, const PoseVector& p, int shader, int res,
                                 std::uint64_t seed) {
  return {{"model_id", model_id}, {"pose", p.flat()}, {"shader", shader}, {"resolution", res}, {"seed", seed}};
}

}  // namespace toonpose
