#pragma once

#include <bitset>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "toonpose/pose.hpp"
#include "toonpose/rng.hpp"

namespace toonpose {

/// Target morphs a character supports, plus the seed of its RNG substream.
struct MorphAvailability {
  std::bitset<kTargetMorphCount> available;
  std::uint64_t seed = 0;

  static MorphAvailability all(std::uint64_t seed = 0) {
    MorphAvailability a;
    a.available.set();
    a.seed = seed;
    return a;
  }
  static MorphAvailability of(std::initializer_list<int> ids, std::uint64_t seed = 0) {
    MorphAvailability a;
    for (int id : ids) a.available.set(static_cast<std::size_t>(target_morph(id).id));
    a.seed = seed;
    return a;
  }

  bool has(int id) const { return available.test(static_cast<std::size_t>(id)); }
  int count() const { return static_cast<int>(available.count()); }
  std::vector<int> ids() const {
    std::vector<int> out;
    for (int i = 0; i < kTargetMorphCount; ++i)
      if (has(i)) out.push_back(i);
    return out;
  }
};

namespace detail {

inline bool has_morph(const MorphAvailability& avail, Part part, int semantic, Laterality side) {
  auto id = find_target_morph(part, semantic, side);
  return id && avail.has(*id);
}

// Eye/eyebrow: pick one available semantic, then fill slots. Independent
// left/right morphs take priority over the `both` morph.
inline void sample_sided_part(const MorphAvailability& avail, Part part, Rng& rng, PoseVector& p) {
  std::vector<int> semantics;
  for (int s = 0; s < semantic_count(part); ++s) {
    if (has_morph(avail, part, s, Laterality::left) || has_morph(avail, part, s, Laterality::right) ||
        has_morph(avail, part, s, Laterality::both))
      semantics.push_back(s);
  }
  if (semantics.empty()) return;
  const int s = semantics[rng.below(semantics.size())];
  const int left_slot = part_base_slot(part) + 2 * s;
  const int right_slot = left_slot + 1;

  const bool has_left = has_morph(avail, part, s, Laterality::left);
  const bool has_right = has_morph(avail, part, s, Laterality::right);
  if (has_left && has_right) {
    p.expr[left_slot] = rng.uniform();
    p.expr[right_slot] = rng.uniform();
  } else if (has_morph(avail, part, s, Laterality::both)) {
    const double u = rng.uniform();
    p.expr[left_slot] = u;
    p.expr[right_slot] = u;
  } else {
    // Only one side exists; the missing side stays neutral.
    p.expr[has_left ? left_slot : right_slot] = rng.uniform();
  }
}

inline void sample_mouth(const MorphAvailability& avail, Rng& rng, PoseVector& p) {
  std::vector<int> semantics;
  for (int s = 0; s < semantic_count(Part::mouth); ++s)
    if (has_morph(avail, Part::mouth, s, Laterality::both)) semantics.push_back(s);
  if (semantics.empty()) return;
  const int s = semantics[rng.below(semantics.size())];
  p.expr[part_base_slot(Part::mouth) + s] = rng.uniform();
}

}  // namespace detail

/// Draws one pose vector.
///
/// Expression values are drawn before angles from the same per-draw stream,
/// so `sample_pose(a, false, i)` and `sample_pose(a, true, i)` share their
/// expression part; the rotated group reuses the frontal expression.
/// Angles are drawn in roll, pitch, yaw order and stored as (yaw, pitch, roll).
inline PoseVector sample_pose(const MorphAvailability& avail, bool rotate, std::uint64_t draw_index = 0) {
  Rng rng(draw_seed(avail.seed, draw_index));
  PoseVector p;
  detail::sample_sided_part(avail, Part::eye, rng, p);
  detail::sample_sided_part(avail, Part::eyebrow, rng, p);
  detail::sample_mouth(avail, rng, p);
  if (rotate) {
    const double lim = kSamplerAngleLimitDeg;
    const double roll = rng.uniform(-lim, lim);
    const double pitch = rng.uniform(-lim, lim);
    const double yaw = rng.uniform(-lim, lim);
    p.angles_deg = {yaw, pitch, roll};
  }
  return p;
}

/// Number of pose draws for a character: 100 with more than five annotated
/// target morphs, otherwise 20.
inline int sample_count(int n_target_morphs) {
  if (n_target_morphs < 0) throw UsageError("target morph count must be non-negative");
  return n_target_morphs > 5 ? 100 : 20;
}

}  // namespace toonpose
