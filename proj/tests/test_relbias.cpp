#include <gtest/gtest.h>

#include <vector>

#include "redt/gradcheck.hpp"
#include "redt/relbias.hpp"
#include "test_util.hpp"

using namespace redt;
using namespace redt::testing;

namespace {

using T = Tensor<double>;

void fill_random(T t, Rng& rng) {
  for (Index i = 0; i < t.size(); ++i) t.mutable_data()[i] = rng.uniform(-1, 1);
}

}  // namespace

TEST(DepthBin, Boundaries) {
  const BinConfig cfg{1.0, 20.0, 128};
  EXPECT_EQ(depth_bin(1.0, cfg), 0);
  EXPECT_EQ(depth_bin(20.0, cfg), 127);
  EXPECT_EQ(depth_bin(0.2, cfg), 0);
  EXPECT_EQ(depth_bin(35.0, cfg), 127);
}

TEST(DepthBin, Midpoint) {
  EXPECT_EQ(depth_bin(40.0, BinConfig{0.0, 80.0, 128}), 64);
}

TEST(DepthBin, Monotone) {
  const BinConfig cfg{1.0, 20.0, 37};
  int prev = 0;
  for (double d = 0.5; d < 21; d += 0.01) {
    const int b = depth_bin(d, cfg);
    EXPECT_GE(b, prev);
    prev = b;
  }
}

TEST(DepthBin, NonFiniteIsDataError) {
  EXPECT_THROW(depth_bin(std::nan(""), BinConfig{}), DataError);
}

TEST(Discretize, MapAndConfigErrors) {
  const std::vector<float> d{1.0f, 10.5f, 20.0f};
  const auto bins = discretize_depth_map<float>(d, BinConfig{1.0, 20.0, 2});
  EXPECT_EQ(bins, (std::vector<int>{0, 1, 1}));
  EXPECT_THROW(discretize_depth_map<float>(d, BinConfig{1.0, 20.0, 1}), ConfigError);
  EXPECT_THROW(discretize_depth_map<float>(d, BinConfig{5.0, 5.0, 8}), ConfigError);
}

TEST(RelativeIndex, PaperExample) {
  EXPECT_EQ(raw_relative_depth(198, 1), 197);
  EXPECT_EQ(relative_index(198, 1, 200), 396);
  EXPECT_EQ((BinConfig{1, 20, 200}.relative_classes()), 399);
}

TEST(RelativeIndex, CentreAndExtremes) {
  for (int b = 0; b < 128; ++b) EXPECT_EQ(relative_index(b, b, 128), 127);
  EXPECT_EQ(relative_index(0, 127, 128), 0);
  EXPECT_EQ(relative_index(127, 0, 128), 254);
}

TEST(RelativeIndex, AntisymmetricAndInRange) {
  for (int nb = 2; nb <= 16; ++nb)
    for (int a = 0; a < nb; ++a)
      for (int b = 0; b < nb; ++b) {
        const Index ab = relative_index(a, b, nb), ba = relative_index(b, a, nb);
        EXPECT_EQ(ab + ba, 2 * (nb - 1));
        EXPECT_GE(ab, 0);
        EXPECT_LE(ab, 2 * nb - 2);
      }
}

TEST(RelativeIndex, RandomPairsInRange) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const int nb = 2 + static_cast<int>(rng.below(300));
    const Index r = relative_index(static_cast<int>(rng.below(nb)), static_cast<int>(rng.below(nb)), nb);
    EXPECT_GE(r, 0);
    EXPECT_LE(r, 2 * nb - 2);
  }
}

TEST(RelativeIndex, OutOfRangeIsUsageError) {
  EXPECT_THROW(relative_index(-1, 0, 8), UsageError);
  EXPECT_THROW(relative_index(0, 8, 8), UsageError);
}

TEST(BuildBias, TableShape) {
  ParameterStore<double> store;
  DepthBiasTable<double> tab(store, "theta", 200, 3);
  EXPECT_EQ(tab.theta().shape(), (Shape{399, 3}));
}

TEST(BuildBias, ZeroTableGivesZeroBias) {
  ParameterStore<double> store;
  DepthBiasTable<double> tab(store, "theta", 16, 2);
  const std::vector<int> bins{0, 15, 3, 7};
  EXPECT_EQ(tab.build_bias(bins).data().abs().maxCoeff(), 0.0);
}

TEST(BuildBias, ConstantWindowUsesCentreRow) {
  ParameterStore<double> store;
  Rng rng(2);
  DepthBiasTable<double> tab(store, "theta", 16, 3);
  fill_random(tab.theta(), rng);
  const std::vector<int> bins(9, 5);
  auto r = tab.build_bias(bins);
  for (Index h = 0; h < 3; ++h)
    for (Index pq = 0; pq < 81; ++pq) EXPECT_EQ(r.data()[h * 81 + pq], tab.theta().data()[15 * 3 + h]);
}

TEST(BuildBias, ThreeByThreeWindowMatchesBruteForce) {
  ParameterStore<double> store;
  Rng rng(3);
  const int nb = 200, heads = 3;
  DepthBiasTable<double> tab(store, "theta", nb, heads);
  fill_random(tab.theta(), rng);
  // A and B as in the worked example; the rest arbitrary.
  const std::vector<int> bins{198, 1, 57, 120, 0, 199, 33, 33, 150};
  auto r = tab.build_bias(bins);
  ASSERT_EQ(r.shape(), (Shape{heads, 9, 9}));
  for (int h = 0; h < heads; ++h)
    for (int p = 0; p < 9; ++p)
      for (int q = 0; q < 9; ++q) {
        const int row = bins[p] - bins[q] + nb - 1;
        EXPECT_EQ(r.data()[(h * 9 + p) * 9 + q], tab.theta().data()[row * heads + h]);
      }
  EXPECT_EQ(r.data()[0 * 9 + 1], tab.theta().data()[396 * heads + 0]);
}

TEST(BuildBias, DiagonalIsCentreRow) {
  ParameterStore<double> store;
  Rng rng(4);
  DepthBiasTable<double> tab(store, "theta", 32, 2);
  fill_random(tab.theta(), rng);
  std::vector<int> bins(16);
  for (auto& b : bins) b = static_cast<int>(rng.below(32));
  auto r = tab.build_bias(bins);
  for (Index h = 0; h < 2; ++h)
    for (Index p = 0; p < 16; ++p) EXPECT_EQ(r.data()[(h * 16 + p) * 16 + p], tab.theta().data()[31 * 2 + h]);
}

TEST(BuildBias, UniformShiftInvariance) {
  ParameterStore<double> store;
  Rng rng(5);
  DepthBiasTable<double> tab(store, "theta", 64, 2);
  fill_random(tab.theta(), rng);
  std::vector<int> bins(16), shifted(16);
  for (std::size_t i = 0; i < bins.size(); ++i) {
    bins[i] = static_cast<int>(rng.below(40));
    shifted[i] = bins[i] + 17;
  }
  EXPECT_EQ(tab.build_bias(bins).data().matrix(), tab.build_bias(shifted).data().matrix());
}

TEST(BuildBias, ContentFree) {
  // R depends on bins only: two depth maps with different values but equal
  // bins give the same bias.
  ParameterStore<double> store;
  Rng rng(6);
  const BinConfig cfg{1.0, 20.0, 16};
  DepthBiasTable<double> tab(store, "theta", 16, 2);
  fill_random(tab.theta(), rng);
  std::vector<double> a(16), b(16);
  const double width = (cfg.d_max - cfg.d_min) / cfg.num_bins;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int bin = static_cast<int>(rng.below(16));
    a[i] = cfg.d_min + (bin + 0.2) * width;
    b[i] = cfg.d_min + (bin + 0.7) * width;
  }
  const auto ba = discretize_depth_map<double>(a, cfg), bb = discretize_depth_map<double>(b, cfg);
  EXPECT_EQ(ba, bb);
  EXPECT_EQ(tab.build_bias(ba).data().matrix(), tab.build_bias(bb).data().matrix());
}

TEST(BuildBias, PartitionedMatchesPerWindow) {
  ParameterStore<double> store;
  Rng rng(7);
  DepthBiasTable<double> tab(store, "theta", 8, 2);
  fill_random(tab.theta(), rng);
  std::vector<int> pix(2 * 4 * 4);
  for (auto& b : pix) b = static_cast<int>(rng.below(8));
  const auto part = make_window_partition(2, 4, 4, 2, 1);
  auto all = tab.build_bias(pix, part);
  ASSERT_EQ(all.shape(), (Shape{8 * 2, 4, 4}));
  for (Index w = 0; w < 8; ++w) {
    std::vector<int> wb(4);
    for (Index t = 0; t < 4; ++t) wb[static_cast<std::size_t>(t)] = pix[static_cast<std::size_t>((*part.sources)[static_cast<std::size_t>(w * 4 + t)])];
    auto one = tab.build_bias(wb);
    EXPECT_EQ(all.data().segment(w * 2 * 16, 2 * 16).matrix(), one.data().matrix());
  }
  EXPECT_THROW(tab.build_bias(std::span<const int>(pix.data(), 5), part), ShapeError);
}

TEST(BiasGradient, ScatterAddIntoSelectedRows) {
  ParameterStore<double> store;
  Rng rng(8);
  const int nb = 4, heads = 2;
  DepthBiasTable<double> tab(store, "theta", nb, heads);
  tab.theta().set_requires_grad(true);
  const std::vector<int> bins{0, 3, 3, 1};
  auto upstream = random_tensor(rng, {heads, 4, 4}, -1, 1, false);
  sum(mul(tab.build_bias(bins), upstream)).backward();
  Vec<double> expect = Vec<double>::Zero((2 * nb - 1) * heads);
  for (int h = 0; h < heads; ++h)
    for (int p = 0; p < 4; ++p)
      for (int q = 0; q < 4; ++q)
        expect[(bins[p] - bins[q] + nb - 1) * heads + h] += upstream.data()[(h * 4 + p) * 4 + q];
  EXPECT_LT((tab.theta().grad() - expect).abs().maxCoeff(), 1e-15);
}

TEST(BiasGradient, UnusedBiasGivesZeroGradient) {
  ParameterStore<double> store;
  DepthBiasTable<double> tab(store, "theta", 4, 2);
  tab.theta().set_requires_grad(true);
  const std::vector<int> bins{0, 1, 2, 3};
  auto r = tab.build_bias(bins);
  auto other = Tensor<double>::from({1}, {2.0}, true);
  add(scale(sum(r), 0.0), sum(square(other))).backward();
  EXPECT_EQ(tab.theta().grad().abs().maxCoeff(), 0.0);
}

TEST(BiasGradient, TableGradientCheck) {
  ParameterStore<double> store;
  Rng rng(9);
  DepthBiasTable<double> tab(store, "theta", 6, 2);
  fill_random(tab.theta(), rng);
  tab.theta().set_requires_grad(true);
  std::vector<int> bins(9);
  for (auto& b : bins) b = static_cast<int>(rng.below(6));
  auto w = random_tensor(rng, {2, 9, 9}, -1, 1, false);
  EXPECT_LT(gradient_check<double>([&] { return sum(square(mul(tab.build_bias(bins), w))); }, {tab.theta()}), 1e-5);
}
