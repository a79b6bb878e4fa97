#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "toonpose/metrics.hpp"
#include "toonpose/render.hpp"

using namespace toonpose;

namespace {

Image noise_image(int w, int h, std::uint64_t seed, bool alpha_disc = false) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<int> d(0, 255);
  Image img(w, h, 4);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(d(gen));
      const double dx = x - w / 2.0, dy = y - h / 2.0;
      img.at(x, y, 3) = !alpha_disc || dx * dx + dy * dy < w * w / 9.0 ? 255 : 0;
    }
  return img;
}

Image invert(const Image& img) {
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = static_cast<std::uint8_t>(255 - img.at(x, y, c));
  return out;
}

}  // namespace

TEST(Ssim, IdenticalImagesScoreExactlyOne) {
  const auto a = noise_image(48, 40, 1);
  EXPECT_EQ(ssim(a, a), 1.0);
  const auto r = render(CharacterDescriptor::canonical(), PoseVector::unit_slot(15), 2, 256).rgba;
  EXPECT_EQ(ssim(r, r), 1.0);
}

TEST(Ssim, Symmetric) {
  for (int s = 0; s < 5; ++s) {
    const auto a = noise_image(40, 40, 10 + s, true), b = noise_image(40, 40, 20 + s, true);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  }
}

TEST(Ssim, MatchesNaiveReference) {
  for (int s = 0; s < 4; ++s) {
    const auto a = noise_image(37, 45, 100 + s, s % 2 == 1);
    auto b = a;
    std::mt19937_64 gen(s);
    for (auto& v : b.pixels) v = static_cast<std::uint8_t>(std::clamp<int>(v + static_cast<int>(gen() % 41) - 20, 0, 255));
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) b.at(x, y, 3) = a.at(x, y, 3);
    EXPECT_NEAR(ssim(a, b), oracle::ssim_reference(a, b), 1e-9) << s;
  }
  const auto ch = CharacterDescriptor::from_seed("c", 3);
  const auto fa = render(ch, PoseVector::unit_slot(12), 1, 256).rgba;
  const auto fb = render(ch, PoseVector::unit_slot(16), 1, 256).rgba;
  EXPECT_NEAR(ssim(fa, fb), oracle::ssim_reference(fa, fb), 1e-9);
}

TEST(Ssim, InvertedStructureIsNegative) {
  const auto a = noise_image(40, 40, 7);
  EXPECT_LT(ssim(a, invert(a)), 0.0);
}

TEST(Ssim, BoundedAndSensitive) {
  const auto a = noise_image(40, 40, 8), b = noise_image(40, 40, 9);
  const double v = ssim(a, b);
  EXPECT_GE(v, -1.0);
  EXPECT_LT(v, 0.2);
}

TEST(Ssim, BackgroundOnlyDifferencesIgnoredAwayFromForeground) {
  // a change far from any foreground pixel does not enter any counted window
  auto a = noise_image(64, 64, 4, true);
  auto b = a;
  b.at(0, 0, 0) = static_cast<std::uint8_t>(255 - b.at(0, 0, 0));
  EXPECT_EQ(ssim(a, b), 1.0);
}

TEST(Ssim, RejectsBadInput) {
  const auto a = noise_image(32, 32, 1), b = noise_image(31, 32, 1);
  EXPECT_THROW(ssim(a, b), UsageError);
  Image empty(32, 32, 4);
  EXPECT_THROW(ssim(empty, empty), UsageError);
  SsimConfig even;
  even.window = 10;
  EXPECT_THROW(ssim(a, a, even), UsageError);
  EXPECT_THROW(ssim(noise_image(8, 8, 1), noise_image(8, 8, 1)), UsageError);
}

TEST(Hae, KnownValue) {
  EXPECT_DOUBLE_EQ(head_angle_error({10, 0, 0}, {0, 0, 0}), 10.0 / 3.0);
  EXPECT_DOUBLE_EQ(head_angle_error({1, -2, 3}, {-1, 2, -3}), 4.0);
}

TEST(Hae, MetricAxioms) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> d(-20.0, 20.0);
  for (int i = 0; i < 1000; ++i) {
    const std::array<double, 3> x{d(gen), d(gen), d(gen)}, y{d(gen), d(gen), d(gen)}, z{d(gen), d(gen), d(gen)};
    EXPECT_EQ(head_angle_error(x, x), 0.0);
    EXPECT_GE(head_angle_error(x, y), 0.0);
    EXPECT_EQ(head_angle_error(x, y), head_angle_error(y, x));
    EXPECT_LE(head_angle_error(x, z), head_angle_error(x, y) + head_angle_error(y, z) + 1e-12);
  }
}

TEST(Hae, RejectsNonFinite) {
  EXPECT_THROW(head_angle_error({NAN, 0, 0}, {0, 0, 0}), UsageError);
  EXPECT_THROW(head_angle_error({0, 0, 0}, {0, INFINITY, 0}), UsageError);
}
