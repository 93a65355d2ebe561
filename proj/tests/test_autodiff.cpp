#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "oracles.hpp"
#include "svin/autodiff.hpp"
#include "svin/nn.hpp"

using namespace svin;
using V = ad::Var<double>;
using Graph = std::function<V(const std::vector<V>&)>;

namespace {

/// Analytic gradient of a scalar graph against central differences, every input.
double check(std::vector<Tensor<double>> inputs, const Graph& g, double h = 1e-5) {
  std::vector<V> leaves;
  for (auto& t : inputs) leaves.push_back(V::leaf(t, true));
  ad::backward(g(leaves));
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&] {
      std::vector<V> cs;
      for (auto& t : inputs) cs.push_back(V::constant(t));
      return g(cs).item();
    };
    const auto num = oracle::numeric_gradient(inputs[k], f, h);
    std::vector<double> an(num.size(), 0.0);
    if (!leaves[k].grad().empty())
      for (std::size_t i = 0; i < an.size(); ++i) an[i] = leaves[k].grad()[i];
    worst = std::max(worst, oracle::relative_error(an, num));
  }
  return worst;
}

/// Mean over voxels, summed over channels.
V sum_all(const V& x) {
  const V pooled = ad::global_avg_pool(x);
  Tensor<double> ones(1, Dims{1, 1, x.channels()}, 1.0);
  return ad::dense(pooled, V::constant(ones), V::constant(Tensor<double>(1, Dims{1, 1, 1})));
}

/// Linear functional with fixed random weights so every output entry matters.
V weighted(const V& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum_all(ad::mul(x, V::constant(oracle::random_tensor<double>(x.channels(), x.dims(), rng, -1, 1))));
}

}  // namespace

TEST(Autodiff, ElementwiseOps) {
  std::mt19937_64 rng(1);
  const Dims d{3, 4, 5};
  auto a = oracle::random_tensor<double>(2, d, rng, -1, 1);
  auto b = oracle::random_tensor<double>(2, d, rng, -1, 1);
  EXPECT_LT(check({a, b}, [](const std::vector<V>& x) { return weighted(ad::add(x[0], x[1]), 1); }), 1e-6);
  EXPECT_LT(check({a, b}, [](const std::vector<V>& x) { return weighted(ad::sub(x[0], x[1]), 2); }), 1e-6);
  EXPECT_LT(check({a, b}, [](const std::vector<V>& x) { return weighted(ad::mul(x[0], x[1]), 3); }), 1e-6);
  EXPECT_LT(check({a}, [](const std::vector<V>& x) { return weighted(ad::scale(x[0], -2.5), 4); }), 1e-6);
  EXPECT_LT(check({a}, [](const std::vector<V>& x) { return weighted(ad::leaky_relu(x[0]), 5); }), 1e-6);
  EXPECT_LT(check({a}, [](const std::vector<V>& x) { return weighted(ad::sigmoid(x[0]), 6); }), 1e-6);
}

TEST(Autodiff, ChannelPlumbing) {
  std::mt19937_64 rng(2);
  const Dims d{4, 4, 4};
  auto a = oracle::random_tensor<double>(2, d, rng);
  auto b = oracle::random_tensor<double>(3, d, rng);
  EXPECT_LT(check({a, b}, [](const std::vector<V>& x) { return weighted(ad::concat<double>({x[0], x[1]}), 1); }), 1e-6);
  EXPECT_LT(check({b}, [](const std::vector<V>& x) { return weighted(ad::slice(x[0], 1, 2), 2); }), 1e-6);
  auto c = oracle::random_tensor<double>(2, Dims{2, 3, 2}, rng);
  EXPECT_LT(check({c}, [](const std::vector<V>& x) { return weighted(ad::upsample_nearest(x[0], Dims{4, 5, 4}), 3); }),
            1e-6);
  EXPECT_LT(check({a}, [](const std::vector<V>& x) { return weighted(ad::avg_pool2(x[0]), 4); }), 1e-6);
}

TEST(Autodiff, ResampleField) {
  std::mt19937_64 rng(3);
  auto f = oracle::random_tensor<double>(3, Dims{2, 3, 2}, rng, -1, 1);
  EXPECT_LT(check({f}, [](const std::vector<V>& x) { return weighted(ad::resample_field(x[0], Dims{4, 6, 4}), 1); }),
            1e-6);
}

TEST(Autodiff, WarpBothInputs) {
  std::mt19937_64 rng(4);
  const Dims d{6, 6, 6};
  auto src = oracle::random_tensor<double>(2, d, rng);
  auto field = oracle::smooth_field<double>(d, rng, 2.0, 0.05);
  EXPECT_LT(check({src, field}, [](const std::vector<V>& x) { return weighted(ad::warp(x[0], x[1]), 1); }, 1e-4),
            1e-3);
}

TEST(Autodiff, BlendWeighted) {
  std::mt19937_64 rng(5);
  const Dims d{3, 3, 3};
  auto a = oracle::random_tensor<double>(1, d, rng);
  auto b = oracle::random_tensor<double>(1, d, rng);
  auto g = oracle::random_tensor<double>(1, d, rng, 0.1, 0.9);
  for (bool norm : {false, true}) {
    EXPECT_LT(check({a, b, g},
                    [norm](const std::vector<V>& x) { return weighted(ad::blend_weighted(x[0], x[1], x[2], 0.3, norm), 1); }),
              1e-6);
  }
}

TEST(Autodiff, Losses) {
  std::mt19937_64 rng(6);
  const Dims d{4, 4, 4};
  auto a = oracle::random_tensor<double>(3, d, rng, -1, 1);
  auto b = oracle::random_tensor<double>(3, d, rng, -1, 1);
  EXPECT_LT(check({a, b}, [](const std::vector<V>& x) { return ad::mse(x[0], x[1]); }), 1e-6);
  for (Reduction r : {Reduction::sum, Reduction::mean}) {
    EXPECT_LT(check({a}, [r](const std::vector<V>& x) { return ad::gradient_l1(x[0], r); }), 1e-6);
  }
  auto s = oracle::random_tensor<double>(1, Dims{1, 1, 1}, rng, 0.2, 0.8);
  EXPECT_LT(check({s}, [](const std::vector<V>& x) { return ad::abs_diff(x[0], 0.1); }), 1e-6);
  auto t = oracle::random_tensor<double>(1, Dims{1, 1, 1}, rng);
  EXPECT_LT(check({s, t},
                  [](const std::vector<V>& x) { return ad::weighted_sum<double>({{2.0, x[0]}, {-0.5, x[1]}}); }),
            1e-6);
}

TEST(Autodiff, DenseAndPool) {
  std::mt19937_64 rng(7);
  auto x = oracle::random_tensor<double>(4, Dims{2, 2, 3}, rng, -1, 1);
  auto w = oracle::random_tensor<double>(2, Dims{1, 1, 4}, rng, -1, 1);
  auto b = oracle::random_tensor<double>(2, Dims{1, 1, 1}, rng, -1, 1);
  EXPECT_LT(check({x, w, b},
                  [](const std::vector<V>& v) { return weighted(ad::dense(ad::global_avg_pool(v[0]), v[1], v[2]), 2); }),
            1e-6);
}

TEST(Autodiff, Conv3dStrides) {
  std::mt19937_64 rng(8);
  for (int stride : {1, 2}) {
    auto x = oracle::random_tensor<double>(2, Dims{5, 4, 6}, rng, -1, 1);
    auto w = oracle::random_tensor<double>(3, Dims{1, 1, 2 * 27}, rng, -0.3, 0.3);
    auto b = oracle::random_tensor<double>(3, Dims{1, 1, 1}, rng, -1, 1);
    EXPECT_LT(check({x, w, b},
                    [stride](const std::vector<V>& v) { return weighted(nn::conv3d(v[0], v[1], v[2], stride), 9); }),
              1e-6)
        << "stride " << stride;
  }
}

TEST(Autodiff, Conv3dMatchesDirectLoop) {
  std::mt19937_64 rng(9);
  const Dims d{4, 5, 3};
  auto x = oracle::random_tensor<double>(2, d, rng, -1, 1);
  auto w = oracle::random_tensor<double>(3, Dims{1, 1, 54}, rng, -1, 1);
  auto b = oracle::random_tensor<double>(3, Dims{1, 1, 1}, rng, -1, 1);
  for (int stride : {1, 2}) {
    const auto y = nn::conv3d(V::constant(x), V::constant(w), V::constant(b), stride).value();
    const Dims od = y.dims();
    EXPECT_EQ(od, (Dims{(d.d - 1) / stride + 1, (d.h - 1) / stride + 1, (d.w - 1) / stride + 1}));
    for (int o = 0; o < 3; ++o)
      for (int z = 0; z < od.d; ++z)
        for (int yy = 0; yy < od.h; ++yy)
          for (int xx = 0; xx < od.w; ++xx) {
            double s = b[o];
            for (int c = 0; c < 2; ++c)
              for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                  for (int kx = 0; kx < 3; ++kx) {
                    const int iz = z * stride + kz - 1, iy = yy * stride + ky - 1, ix = xx * stride + kx - 1;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= d.d || iy >= d.h || ix >= d.w) continue;
                    s += w[o * 54 + c * 27 + kz * 9 + ky * 3 + kx] * x(c, iz, iy, ix);
                  }
            EXPECT_NEAR(y(o, z, yy, xx), s, 1e-12);
          }
  }
}

TEST(Autodiff, SharedSubgraphAccumulates) {
  std::mt19937_64 rng(10);
  auto a = oracle::random_tensor<double>(1, Dims{3, 3, 3}, rng);
  EXPECT_LT(check({a},
                  [](const std::vector<V>& x) {
                    const V s = ad::sigmoid(x[0]);
                    return weighted(ad::add(ad::mul(s, s), s), 3);
                  }),
            1e-6);
}

TEST(Autodiff, BackwardNeedsScalar) {
  auto v = V::leaf(Tensor<double>(2, Dims{1, 1, 1}), true);
  EXPECT_THROW(ad::backward(v), ShapeError);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  nn::ParamSet<double> p;
  p.add("w", Tensor<double>(1, Dims{1, 1, 3}, 1.0));
  nn::Adam<double> opt(p);
  auto& w = p.get("w");
  auto& g = w.grad_buffer();
  g[0] = 2.0;
  g[1] = -0.5;
  g[2] = 0.0;
  opt.step(p, 0.1);
  EXPECT_NEAR(w.value()[0], 0.9, 1e-6);
  EXPECT_NEAR(w.value()[1], 1.1, 1e-6);
  EXPECT_DOUBLE_EQ(w.value()[2], 1.0);
  EXPECT_EQ(opt.steps(), 1);
}
