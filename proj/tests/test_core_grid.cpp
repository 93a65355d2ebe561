#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "svin/autodiff.hpp"
#include "svin/grid.hpp"

using namespace svin;

namespace {

Volume random_volume(Dims d, std::mt19937_64& rng) { return Volume(oracle::random_tensor<float>(1, d, rng)); }

}  // namespace

TEST(Warp, ZeroFieldIsIdentity) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Volume v = random_volume({5 + trial % 3, 6, 7}, rng);
    const Volume w = warp(v, VectorField(v.dims()));
    EXPECT_LE(max_abs_diff(v.tensor(), w.tensor()), 1e-6f);
  }
}

TEST(Warp, RampShiftedByOneVoxel) {
  const Dims d{4, 5, 8};
  Volume ramp(d);
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) ramp.at(z, y, x) = float(x) / d.w;
  const Volume out = warp(ramp, VectorField::uniform(d, 1.0f, 0.0f, 0.0f));
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y) {
      for (int x = 0; x + 1 < d.w; ++x) EXPECT_NEAR(out.at(z, y, x), float(x + 1) / d.w, 1e-6);
      EXPECT_NEAR(out.at(z, y, d.w - 1), float(d.w - 1) / d.w, 1e-6);
    }
}

TEST(Warp, ConstantVolumeStaysConstant) {
  std::mt19937_64 rng(2);
  const Dims d{6, 6, 6};
  const Volume c(d, {}, 0.37f);
  const VectorField f(oracle::random_tensor<float>(3, d, rng, -4, 4));
  const Volume out = warp(c, f);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.37f, 1e-6);
}

TEST(Warp, MatchesCornerSumOracle) {
  std::mt19937_64 rng(3);
  const Dims d{5, 6, 7};
  for (int trial = 0; trial < 10; ++trial) {
    const Volume v = random_volume(d, rng);
    const VectorField f(oracle::random_tensor<float>(3, d, rng, -3, 3));
    const Volume out = warp(v, f);
    const Tensor<double> ref = oracle::warp(v.tensor(), f.tensor());
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-5);
  }
}

TEST(Warp, HugeDisplacementsStayInBounds) {
  std::mt19937_64 rng(4);
  const Dims d{4, 5, 6};
  const Volume v = random_volume(d, rng);
  const VectorField f(oracle::random_tensor<float>(3, d, rng, -60, 60));
  const Volume out = warp(v, f);
  float lo = 1, hi = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    lo = std::min(lo, v[i]);
    hi = std::max(hi, v[i]);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_TRUE(std::isfinite(out[i]));
    EXPECT_GE(out[i], lo - 1e-6f);
    EXPECT_LE(out[i], hi + 1e-6f);
  }
}

TEST(Warp, RejectsMismatchAndNonFinite) {
  const Volume v(Dims{4, 4, 4});
  EXPECT_THROW(warp(v, VectorField(Dims{4, 4, 5})), ShapeError);
  VectorField bad(Dims{4, 4, 4});
  bad.at(1, 2, 2, 2) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(warp(v, bad), ValidationError);
  bad.at(1, 2, 2, 2) = std::numeric_limits<float>::infinity();
  EXPECT_THROW(warp(v, bad), ValidationError);
}

TEST(Warp, GradientsMatchCentralDifferences) {
  std::mt19937_64 rng(5);
  const Dims d{6, 6, 6};
  Tensor<double> src = oracle::random_tensor<double>(1, d, rng);
  Tensor<double> field = oracle::smooth_field<double>(d, rng, 1.5, 0.05);
  const Tensor<double> weights = oracle::random_tensor<double>(1, d, rng, -1, 1);
  auto loss = [&] {
    const Tensor<double> out = kernel::warp(src, field);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
    return s / double(out.size());
  };
  auto s = ad::Var<double>::leaf(src, true);
  auto f = ad::Var<double>::leaf(field, true);
  auto out = ad::mul(ad::warp(s, f), ad::Var<double>::constant(weights));
  ad::backward(ad::global_avg_pool(out));
  const auto num_src = oracle::numeric_gradient(src, loss, 1e-4);
  const auto num_field = oracle::numeric_gradient(field, loss, 1e-4);
  const std::vector<double> an_src(s.grad().span().begin(), s.grad().span().end());
  const std::vector<double> an_field(f.grad().span().begin(), f.grad().span().end());
  EXPECT_LT(oracle::relative_error(an_src, num_src), 1e-3);
  EXPECT_LT(oracle::relative_error(an_field, num_field), 1e-3);
}

TEST(Warp, SumGradientWrtFieldMatchesCentralDifferences) {
  std::mt19937_64 rng(6);
  const Dims d{6, 6, 6};
  const Tensor<double> src = oracle::random_tensor<double>(1, d, rng);
  Tensor<double> field = oracle::smooth_field<double>(d, rng, 1.5, 0.05);
  auto loss = [&] {
    const Tensor<double> out = kernel::warp(src, field);
    double s = 0;
    for (double v : out.span()) s += v;
    return s;
  };
  auto f = ad::Var<double>::leaf(field, true);
  auto out = ad::warp(ad::Var<double>::constant(src), f);
  ad::backward(ad::global_avg_pool(out));
  const auto num = oracle::numeric_gradient(field, loss, 1e-3);
  std::vector<double> an(f.grad().size());
  for (std::size_t i = 0; i < an.size(); ++i) an[i] = f.grad()[i] * double(d.voxels());
  EXPECT_LT(oracle::relative_error(an, num), 1e-3);
}

TEST(WarpField, IdentityAndUniformCases) {
  std::mt19937_64 rng(7);
  const Dims d{5, 5, 5};
  const VectorField F(oracle::random_tensor<float>(3, d, rng, -2, 2));
  EXPECT_LE(max_abs_diff(warp_field(F, VectorField(d)).tensor(), F.tensor()), 1e-6f);
  const auto u = VectorField::uniform(d, 0.5f, -1.0f, 2.0f);
  const auto w = VectorField::uniform(d, 1.3f, 0.7f, -0.4f);
  EXPECT_LE(max_abs_diff(warp_field(u, w).tensor(), u.tensor()), 1e-6f);
}

TEST(WarpField, LinearFieldPicksUpShift) {
  const Dims d{8, 8, 8};
  const float a = 0.25f;
  VectorField F(d);
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) {
        F.at(0, z, y, x) = a * x;
        F.at(1, z, y, x) = a * y;
        F.at(2, z, y, x) = a * z;
      }
  const float w[3] = {0.5f, -1.25f, 1.5f};
  const VectorField out = warp_field(F, VectorField::uniform(d, w[0], w[1], w[2]));
  for (int z = 2; z < d.d - 2; ++z)
    for (int y = 2; y < d.h - 2; ++y)
      for (int x = 2; x < d.w - 2; ++x)
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(out.at(c, z, y, x), F.at(c, z, y, x) + a * w[c], 1e-5);
}

TEST(SpatialGradient, UniformFieldIsZero) {
  const auto g = spatial_gradient(VectorField::uniform(Dims{4, 5, 6}, 1.f, 2.f, 3.f));
  EXPECT_EQ(l1_norm(g), 0.0);
  EXPECT_EQ(l1_norm(spatial_gradient(VectorField(Dims{3, 3, 3}))), 0.0);
}

TEST(SpatialGradient, IdentityXComponent) {
  const Dims d{4, 5, 6};
  VectorField F(d);
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) F.at(0, z, y, x) = float(x);
  const auto g = spatial_gradient(F);
  ASSERT_EQ(g.channels(), 9);
  for (int ch = 0; ch < 9; ++ch)
    for (int z = 0; z < d.d; ++z)
      for (int y = 0; y < d.h; ++y)
        for (int x = 0; x < d.w; ++x) {
          const float expected = ch == gradient_channel(0, 2) && x < d.w - 1 ? 1.f : 0.f;
          EXPECT_EQ(g(ch, z, y, x), expected);
        }
}

TEST(SpatialGradient, MatchesBruteForceL1) {
  std::mt19937_64 rng(8);
  const VectorField F(oracle::random_tensor<float>(3, Dims{5, 6, 7}, rng, -1, 1));
  EXPECT_NEAR(l1_norm(spatial_gradient(F)), oracle::gradient_l1(F.tensor()), 1e-4);
}

TEST(SpatialGradient, DegenerateExtentRejected) {
  EXPECT_THROW(spatial_gradient(VectorField(Dims{1, 4, 4})), ValidationError);
  EXPECT_THROW(spatial_gradient(VectorField(Dims{4, 4, 1})), ValidationError);
}

TEST(Resample, FactorOneIsIdentity) {
  std::mt19937_64 rng(9);
  const Volume v = random_volume({5, 6, 7}, rng);
  EXPECT_EQ(resample_volume(v, Factors::uniform(1.0)), v);
  const VectorField f(oracle::random_tensor<float>(3, Dims{5, 6, 7}, rng));
  EXPECT_EQ(resample_field(f, Factors::uniform(1.0)), f);
}

TEST(Resample, ConstantStaysConstant) {
  const Volume c(Dims{6, 4, 8}, {}, 0.6f);
  for (double fac : {0.5, 2.0, 1.5}) {
    const Volume r = resample_volume(c, Factors::uniform(fac));
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r[i], 0.6f, 1e-6);
  }
}

TEST(Resample, HalvingRampMatchesAveragedOracle) {
  const Dims d{4, 4, 4};
  Volume v(d);
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) v.at(z, y, x) = float(x + 4 * y + 16 * z);
  const Volume r = resample_volume(v, Factors::uniform(0.5));
  ASSERT_EQ(r.dims(), (Dims{2, 2, 2}));
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) {
        double avg = 0;
        for (int k = 0; k < 8; ++k) avg += v.at(2 * z + (k >> 2), 2 * y + ((k >> 1) & 1), 2 * x + (k & 1));
        EXPECT_NEAR(r.at(z, y, x), avg / 8, 1e-5);
        // The half-voxel aligned source position is 2j + 0.5 along every axis.
        EXPECT_NEAR(r.at(z, y, x), oracle::sample(v.tensor(), 0, 2 * z + 0.5, 2 * y + 0.5, 2 * x + 0.5), 1e-5);
      }
  EXPECT_DOUBLE_EQ(r.spacing().x, 2.0);
}

TEST(Resample, RoundTripApproximatesSmoothInput) {
  const Dims d{8, 8, 8};
  Volume v(d);
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) v.at(z, y, x) = float(0.5 + 0.3 * std::sin(0.3 * x) * std::cos(0.25 * y) + 0.02 * z);
  const Volume back = resample_volume(resample_volume(v, Factors::uniform(2.0)), Factors::uniform(0.5));
  ASSERT_EQ(back.dims(), d);
  EXPECT_LT(max_abs_diff(back.tensor(), v.tensor()), 0.02f);
}

TEST(Resample, InvalidFactorsRejected) {
  const Volume v(Dims{4, 4, 4});
  EXPECT_THROW(resample_volume(v, Factors::uniform(0.0)), ValidationError);
  EXPECT_THROW(resample_volume(v, Factors::uniform(-1.0)), ValidationError);
  EXPECT_THROW(resample_volume(v, Factors::uniform(0.3)), ValidationError);
}

TEST(ResampleField, UniformVectorsScaleWithGrid) {
  const auto f = VectorField::uniform(Dims{4, 4, 4}, 2.f, 0.f, 0.f);
  const VectorField up = resample_field(f, Factors{1.0, 1.0, 2.0});
  ASSERT_EQ(up.dims(), (Dims{4, 4, 8}));
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 8; ++x) {
        EXPECT_FLOAT_EQ(up.at(0, z, y, x), 4.f);
        EXPECT_FLOAT_EQ(up.at(1, z, y, x), 0.f);
        EXPECT_FLOAT_EQ(up.at(2, z, y, x), 0.f);
      }
}

TEST(ResampleField, LinearFieldDownsampledMatchesAnalytic) {
  // F(v) = a*v in fine voxels; on the half grid the sample at coarse j sits at
  // fine 2j+0.5, and vectors halve, giving a*(2j+0.5)/2.
  const Dims d{8, 8, 8};
  const float a = 0.4f;
  VectorField F(d);
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        F.at(0, z, y, x) = a * x;
        F.at(1, z, y, x) = a * y;
        F.at(2, z, y, x) = a * z;
      }
  const VectorField c = resample_field(F, Factors::uniform(0.5));
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        EXPECT_NEAR(c.at(0, z, y, x), a * (2 * x + 0.5f) / 2, 1e-5);
        EXPECT_NEAR(c.at(1, z, y, x), a * (2 * y + 0.5f) / 2, 1e-5);
        EXPECT_NEAR(c.at(2, z, y, x), a * (2 * z + 0.5f) / 2, 1e-5);
      }
}

TEST(Normalize, MapsToUnitRange) {
  std::mt19937_64 rng(10);
  Volume v(oracle::random_tensor<float>(1, Dims{4, 5, 6}, rng, -3, 7));
  const Volume n = normalize(v);
  float lo = 1, hi = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    lo = std::min(lo, n[i]);
    hi = std::max(hi, n[i]);
  }
  EXPECT_EQ(lo, 0.f);
  EXPECT_EQ(hi, 1.f);
  const Volume c = normalize(Volume(Dims{3, 3, 3}, {}, 5.f));
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c[i], 0.f);
}

TEST(Types, InvariantsEnforced) {
  EXPECT_THROW(Volume(Dims{2, 2, 2}, Spacing{1, 0, 1}), ValidationError);
  EXPECT_THROW(VectorField(Tensor<float>(2, Dims{2, 2, 2})), ShapeError);
  EXPECT_THROW(PhaseIndex(1.5), ValidationError);
  EXPECT_THROW(PhaseIndex(-0.1), ValidationError);
  EXPECT_NO_THROW(PhaseIndex(0.0));
  EXPECT_NO_THROW(PhaseIndex(1.0));
}
