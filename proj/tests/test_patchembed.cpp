#include <gtest/gtest.h>

#include <numeric>

#include "checks.hpp"
#include "vit/patchembed.hpp"

using namespace vit;
using checks::random_tensor;

namespace {

PatchifyConfig geometry(std::size_t h, std::size_t w, std::size_t c, std::size_t p, std::size_t d = 4) {
  return PatchifyConfig{h, w, c, p, d};
}

Parameter<double> param(const std::string& name, Tensor<double> v) { return {name, std::move(v), {}, false}; }

}  // namespace

TEST(ExtractPatches, StandardGeometry) {
  const auto cfg = geometry(224, 224, 3, 16);
  const auto patches = extract_patches(Tensor<float>({224, 224, 3}), cfg);
  EXPECT_EQ(patches.shape(), (Shape{196, 768}));
}

TEST(ExtractPatches, SinglePatchIsFlattenedImage) {
  const auto img = random_tensor({4, 4, 3}, 1);
  const auto patches = extract_patches(img, geometry(4, 4, 3, 4));
  ASSERT_EQ(patches.shape(), (Shape{1, 48}));
  for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(patches[i], img[i]);
}

TEST(ExtractPatches, HandEnumeration) {
  Tensor<double> img({4, 4, 1});
  std::iota(img.data().begin(), img.data().end(), 0.0);
  const auto p = extract_patches(img, geometry(4, 4, 1, 2));
  ASSERT_EQ(p.shape(), (Shape{4, 4}));
  const double want[4][4] = {{0, 1, 4, 5}, {2, 3, 6, 7}, {8, 9, 12, 13}, {10, 11, 14, 15}};
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p[n * 4 + i], want[n][i]);
}

TEST(ExtractPatches, AssembleInvertsOnNonSquareGrid) {
  const auto cfg = geometry(6, 9, 2, 3);
  const auto img = random_tensor({6, 9, 2}, 2);
  EXPECT_EQ(assemble_patches(extract_patches(img, cfg), cfg), img);
}

TEST(ExtractPatches, RejectsNonDividingPatch) {
  EXPECT_THROW(extract_patches(Tensor<double>({5, 4, 1}), geometry(5, 4, 1, 2)), ConfigError);
}

TEST(Patchify, MatchesPerImageExtraction) {
  const auto imgs = random_tensor({2, 4, 6, 3}, 3);
  Tape<double> tape;
  auto p = patchify(tape.constant(imgs), 2).value();
  ASSERT_EQ(p.shape(), (Shape{2, 6, 12}));
  for (std::size_t b = 0; b < 2; ++b) {
    Tensor<double> one({4, 6, 3});
    std::copy_n(imgs.ptr() + b * 72, 72, one.ptr());
    const auto ref = extract_patches(one, geometry(4, 6, 3, 2));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(p[b * 72 + i], ref[i]);
  }
}

TEST(Embed, ZeroProjectionGivesClassTokenAndZeros) {
  auto e = param("e", Tensor<double>({3, 2}));
  auto b = param("b", Tensor<double>({2}));
  auto cls = param("c", Tensor<double>({2}, {0.5, -1.5}));
  Tape<double> tape;
  auto z = embed(tape, tape.constant(random_tensor({1, 4, 3}, 4)), EmbeddingParams<double>{&e, &b, &cls},
                 PositionalParams<double>{}, 2, 2)
               .value();
  ASSERT_EQ(z.shape(), (Shape{1, 5, 2}));
  EXPECT_EQ(z[0], 0.5);
  EXPECT_EQ(z[1], -1.5);
  for (std::size_t i = 2; i < z.size(); ++i) EXPECT_EQ(z[i], 0.0);
}

TEST(Embed, HandMatrixProduct) {
  // N = 2 patches of 2 values, D = 3
  auto e = param("e", Tensor<double>({2, 3}, {1, 0, 2, -1, 3, 1}));
  auto b = param("b", Tensor<double>({3}, {0.5, 0.5, 0.5}));
  auto cls = param("c", Tensor<double>({3}, {9, 8, 7}));
  auto pos = param("p", Tensor<double>({3, 3}, {0, 0, 0, 1, 1, 1, 2, 2, 2}));
  PositionalParams<double> pp;
  pp.kind = PositionalKind::learned_1d;
  pp.table = &pos;
  Tape<double> tape;
  auto z = embed(tape, tape.constant(Tensor<double>({1, 2, 2}, {1, 2, 3, 4})), EmbeddingParams<double>{&e, &b, &cls},
                 pp, 1, 2)
               .value();
  // [1 2] E = [-1 6 4]; [3 4] E = [-1 12 10]
  const double want[] = {9, 8, 7, -1 + 0.5 + 1, 6 + 0.5 + 1, 4 + 0.5 + 1, -1 + 0.5 + 2, 12 + 0.5 + 2, 10 + 0.5 + 2};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(z[i], want[i]);
}

TEST(Embed, NoPositionIsPermutationEquivariant) {
  auto e = param("e", random_tensor({6, 4}, 5));
  auto b = param("b", random_tensor({4}, 6));
  auto cls = param("c", random_tensor({4}, 7));
  const auto patches = random_tensor({1, 4, 6}, 8);
  const std::size_t perm[] = {2, 0, 3, 1};
  Tensor<double> moved(patches.shape());
  for (std::size_t n = 0; n < 4; ++n) std::copy_n(patches.ptr() + perm[n] * 6, 6, moved.ptr() + n * 6);
  Tape<double> tape;
  const EmbeddingParams<double> ep{&e, &b, &cls};
  auto z = embed(tape, tape.constant(patches), ep, {}, 2, 2).value();
  auto zm = embed(tape, tape.constant(moved), ep, {}, 2, 2).value();
  for (std::size_t d = 0; d < 4; ++d) EXPECT_EQ(z[d], zm[d]);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t d = 0; d < 4; ++d) EXPECT_DOUBLE_EQ(zm[(n + 1) * 4 + d], z[(perm[n] + 1) * 4 + d]);
}

TEST(Positional2d, SingleCellIsConcatenation) {
  const Tensor<double> x({1, 2}, {1, 2}), y({1, 2}, {3, 4}), c({4}, {9, 9, 9, 9});
  const auto pos = build_2d_positional(x, y, c, 1, 1);
  ASSERT_EQ(pos.shape(), (Shape{2, 4}));
  const double want[] = {9, 9, 9, 9, 1, 2, 3, 4};
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(pos[i], want[i]);
}

TEST(Positional2d, RowsAndColumnsShareHalves) {
  const auto x = random_tensor({2, 3}, 9), y = random_tensor({2, 3}, 10), c = random_tensor({6}, 11);
  const auto pos = build_2d_positional(x, y, c, 2, 2);
  ASSERT_EQ(pos.shape(), (Shape{5, 6}));
  auto row = [&](std::size_t t, std::size_t k) { return pos[(t + 1) * 6 + k]; };
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(row(t, k), x[(t % 2) * 3 + k]);
      EXPECT_EQ(row(t, 3 + k), y[(t / 2) * 3 + k]);
    }
  }
  // tokens 0 and 1 share a row, 0 and 2 a column; all four distinct
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(row(0, 3 + k), row(1, 3 + k));
    EXPECT_EQ(row(0, k), row(2, k));
  }
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) {
      bool same = true;
      for (std::size_t k = 0; k < 6; ++k) same = same && row(a, k) == row(b, k);
      EXPECT_FALSE(same) << a << " vs " << b;
    }
}

TEST(Interpolate, IdentityIsBitExact) {
  const auto pos = random_tensor({1 + 3 * 5, 8}, 12);
  EXPECT_EQ(interpolate_positional(pos, 3, 5, 3, 5), pos);
}

TEST(Interpolate, TwoByTwoToThreeByThree) {
  const Tensor<double> grid({2, 2, 1}, {0, 1, 2, 3});
  const auto out = bilinear_resize(grid, 3, 3);
  const double want[] = {0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(out[i], want[i]);
}

TEST(Interpolate, FineTuningGridKeepsClassRowAndBounds) {
  const auto pos = random_tensor({1 + 14 * 14, 6}, 13);
  const auto out = interpolate_positional(pos, 14, 14, 24, 24);
  ASSERT_EQ(out.shape(), (Shape{1 + 24 * 24, 6}));
  for (std::size_t d = 0; d < 6; ++d) {
    EXPECT_EQ(out[d], pos[d]);
    double lo = 1e9, hi = -1e9;
    for (std::size_t n = 1; n < pos.dim(0); ++n) lo = std::min(lo, pos[n * 6 + d]), hi = std::max(hi, pos[n * 6 + d]);
    for (std::size_t n = 1; n < out.dim(0); ++n) {
      EXPECT_GE(out[n * 6 + d], lo - 1e-12);
      EXPECT_LE(out[n * 6 + d], hi + 1e-12);
    }
  }
  // corners are preserved
  for (std::size_t d = 0; d < 6; ++d) {
    EXPECT_DOUBLE_EQ(out[1 * 6 + d], pos[1 * 6 + d]);
    EXPECT_DOUBLE_EQ(out[(24 * 24) * 6 + d], pos[(14 * 14) * 6 + d]);
  }
}
