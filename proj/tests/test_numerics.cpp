#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "primitive_cases.hpp"
#include "redt/io.hpp"
#include "redt/optim.hpp"
#include "redt/params.hpp"
#include "test_util.hpp"

using namespace redt;
using namespace redt::testing;

TEST(Softmax, EqualLogitsGiveUniformRow) {
  auto y = softmax_rows(Tensor<double>::from({1, 3}, {0, 0, 0}));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(y.data()[i], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantRatio) {
  for (double c : {-5.0, 0.0, 3.0, 40.0}) {
    auto y = softmax_rows(Tensor<double>::from({1, 2}, {c, c + std::log(2.0)}));
    EXPECT_NEAR(y.data()[0], 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(y.data()[1], 2.0 / 3.0, 1e-12);
  }
}

TEST(Softmax, LargeGap) {
  auto y = softmax_rows(Tensor<double>::from({1, 2}, {0, 10}));
  const double small = 1.0 / (1.0 + std::exp(10.0));
  EXPECT_NEAR(y.data()[0], small, 1e-8);
  EXPECT_NEAR(y.data()[0], 4.5398e-5, 1e-8);
  EXPECT_NEAR(y.data()[1], 1.0 - small, 1e-8);
}

TEST(Softmax, RejectsRankOne) {
  EXPECT_THROW(softmax_rows(Tensor<double>::from({3}, {0, 1, 2})), ShapeError);
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
  Rng rng(3);
  auto x = random_tensor(rng, {4, 5}, -3, 3);
  sum(softmax_rows(x)).backward();
  EXPECT_LT(x.grad().abs().maxCoeff(), 1e-15);
}

TEST(Backward, SquareAtThree) {
  auto x = Tensor<double>::from({1}, {3.0}, true);
  sum(square(x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, UnrecordedValueIsUsageError) {
  auto x = Tensor<double>::from({1}, {3.0});
  EXPECT_THROW(sum(square(x)).backward(), UsageError);
}

TEST(Backward, ReleasedTapeIsUsageError) {
  auto x = Tensor<double>::from({1}, {3.0}, true);
  auto loss = sum(square(x));
  loss.backward();
  EXPECT_THROW(loss.backward(), UsageError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = Tensor<double>::from({1}, {3.0}, true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    y = square(x);
  }
  EXPECT_FALSE(y.requires_grad());
}

TEST(FiniteDifference, SquareAtThree) {
  auto x = Tensor<double>::from({1}, {3.0});
  auto g = finite_difference_gradient<double>([](const Tensor<double>& t) { return t.data()[0] * t.data()[0]; }, x, 1e-6);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
  EXPECT_EQ(x.data()[0], 3.0);
}

TEST(FiniteDifference, ConstantIsZero) {
  Rng rng(1);
  auto x = random_tensor(rng, {3, 3}, -1, 1, false);
  auto g = finite_difference_gradient<double>([](const Tensor<double>&) { return 4.2; }, x, 1e-6);
  EXPECT_EQ(g.abs().maxCoeff(), 0.0);
}

TEST(FiniteDifference, RejectsNonPositiveStep) {
  auto x = Tensor<double>::from({1}, {3.0});
  EXPECT_THROW(finite_difference_gradient<double>([](const Tensor<double>&) { return 0.0; }, x, 0.0), UsageError);
}

TEST(FiniteDifference, MatchesSiLossGradient) {
  DepthMap gt = DepthMap::dense(2, 2, {1.0f, 2.5f, 4.0f, 7.0f});
  auto x = Tensor<double>::from({4}, {1.3, 2.0, 5.0, 6.1}, true);
  LossParams p;
  p.form = LossForm::kConventional;
  si_loss(x, gt, p).backward();
  const Vec<double> analytic = x.grad();
  auto fd = finite_difference_gradient<double>([&](const Tensor<double>& t) { return si_loss(t, gt, p).item(); }, x, 1e-6);
  EXPECT_LT(vector_relative_error(analytic, fd), 1e-5);
}

class PrimitiveGradient : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  const auto cases = primitive_cases();
  const auto& c = cases[static_cast<std::size_t>(GetParam())];
  Rng rng(Rng::mix(1234, static_cast<std::uint64_t>(GetParam())));
  for (int trial = 0; trial < 10; ++trial) EXPECT_LT(c.run(rng), 1e-5) << c.name << " trial " << trial;
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient,
                         ::testing::Range(0, static_cast<int>(primitive_cases().size())),
                         [](const ::testing::TestParamInfo<int>& info) {
                           return primitive_cases()[static_cast<std::size_t>(info.param)].name;
                         });

TEST(Ops, LinearMatchesLoop) {
  Rng rng(5);
  auto x = random_tensor(rng, {3, 4}, -1, 1, false);
  auto w = random_tensor(rng, {4, 2}, -1, 1, false);
  auto b = random_tensor(rng, {2}, -1, 1, false);
  auto y = linear(x, w, b);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 2; ++j) {
      double s = b.data()[j];
      for (Index k = 0; k < 4; ++k) s += x.data()[i * 4 + k] * w.data()[k * 2 + j];
      EXPECT_NEAR(y.data()[i * 2 + j], s, 1e-12);
    }
}

TEST(Ops, ConvMatchesLoop) {
  Rng rng(6);
  const Index B = 1, H = 4, W = 5, Ci = 2, Co = 3, k = 3;
  auto x = random_tensor(rng, {B, H, W, Ci}, -1, 1, false);
  auto w = random_tensor(rng, {k * k * Ci, Co}, -1, 1, false);
  auto b = random_tensor(rng, {Co}, -1, 1, false);
  auto y = conv2d(x, w, b, k);
  ASSERT_EQ(y.shape(), (Shape{B, H, W, Co}));
  for (Index r = 0; r < H; ++r)
    for (Index c = 0; c < W; ++c)
      for (Index o = 0; o < Co; ++o) {
        double s = b.data()[o];
        for (Index dy = 0; dy < k; ++dy)
          for (Index dx = 0; dx < k; ++dx) {
            const Index rr = r + dy - 1, cc = c + dx - 1;
            if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
            for (Index i = 0; i < Ci; ++i)
              s += x.data()[(rr * W + cc) * Ci + i] * w.data()[((dy * k + dx) * Ci + i) * Co + o];
          }
        EXPECT_NEAR(y.data()[(r * W + c) * Co + o], s, 1e-12);
      }
}

TEST(Ops, UpsampleOfConstantIsConstant) {
  auto x = Tensor<double>::full({1, 2, 2, 3}, 1.75);
  auto y = upsample_bilinear(x, 16, 16);
  EXPECT_EQ(y.shape(), (Shape{1, 16, 16, 3}));
  EXPECT_LT((y.data() - 1.75).abs().maxCoeff(), 1e-14);
}

TEST(Ops, ShapeMismatchThrows) {
  EXPECT_THROW(add(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({3, 2})), ShapeError);
  EXPECT_THROW(linear(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({4, 2})), ShapeError);
}

TEST(Ops, ReductionsAreDeterministic) {
  Rng rng(8);
  auto x = random_tensor(rng, {64, 64}, -1, 1, false);
  const double a = sum(x).item(), b = sum(x).item();
  EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
}

TEST(AdamW, ZeroGradientNoDecayLeavesParameter) {
  auto p = Tensor<double>::from({2}, {1.5, -2.0}, true);
  p.mutable_grad().setZero();
  OptimizerState<double> st;
  st.config.weight_decay = 0;
  std::vector<Tensor<double>> ps{p};
  adamw_step<double>(ps, st, 0.1);
  EXPECT_EQ(p.data()[0], 1.5);
  EXPECT_EQ(p.data()[1], -2.0);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  auto p = Tensor<double>::from({1}, {0.0}, true);
  p.mutable_grad().setConstant(1.0);
  OptimizerState<double> st;
  st.config.weight_decay = 0;
  std::vector<Tensor<double>> ps{p};
  adamw_step<double>(ps, st, 0.1);
  EXPECT_NEAR(p.data()[0], -0.1 / (1.0 + 1e-8), 1e-12);
}

TEST(AdamW, DecoupledDecay) {
  auto p = Tensor<double>::from({1}, {1.0}, true);
  p.mutable_grad().setZero();
  OptimizerState<double> st;
  st.config.weight_decay = 0.1;
  std::vector<Tensor<double>> ps{p};
  adamw_step<double>(ps, st, 0.1);
  EXPECT_NEAR(p.data()[0], 0.99, 1e-12);
}

TEST(AdamW, ParameterCountChangeThrows) {
  auto p = Tensor<double>::from({1}, {1.0}, true);
  OptimizerState<double> st;
  std::vector<Tensor<double>> one{p};
  adamw_step<double>(one, st, 0.1);
  std::vector<Tensor<double>> two{p, p};
  EXPECT_THROW(adamw_step<double>(two, st, 0.1), ShapeError);
}

TEST(LRSchedule, Anchors) {
  LRSchedule s;
  s.total_iters = 2000;
  EXPECT_DOUBLE_EQ(s.lr_at(0), 4e-6);
  EXPECT_NEAR(s.lr_at(500), 1e-4, 1e-18);
  EXPECT_NEAR(s.lr_at(2000), 1e-6, 1e-18);
}

TEST(LRSchedule, DecayMidpoint) {
  LRSchedule s;
  s.total_iters = 1000;
  EXPECT_NEAR(s.lr_at(625), 5.05e-5, 1e-15);
}

TEST(LRSchedule, OutOfRangeThrows) {
  LRSchedule s;
  s.total_iters = 10;
  EXPECT_THROW(s.lr_at(-1), UsageError);
  EXPECT_THROW(s.lr_at(11), UsageError);
}

TEST(ClipGlobalNorm, BelowThresholdUnchanged) {
  auto p = Tensor<double>::from({2}, {0, 0}, true);
  p.mutable_grad() << 0.03, 0.04;
  std::vector<Tensor<double>> ps{p};
  EXPECT_NEAR(clip_global_norm<double>(ps, 0.1), 0.05, 1e-15);
  EXPECT_EQ(p.grad()[0], 0.03);
  EXPECT_EQ(p.grad()[1], 0.04);
}

TEST(ClipGlobalNorm, AboveThresholdScales) {
  auto a = Tensor<double>::from({1}, {0}, true);
  auto b = Tensor<double>::from({1}, {0}, true);
  a.mutable_grad() << 0.12;
  b.mutable_grad() << 0.16;
  std::vector<Tensor<double>> ps{a, b};
  EXPECT_NEAR(clip_global_norm<double>(ps, 0.1), 0.2, 1e-15);
  EXPECT_NEAR(a.grad()[0], 0.06, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.08, 1e-15);
}

TEST(ClipGlobalNorm, ZeroGradients) {
  auto p = Tensor<double>::from({3}, {1, 2, 3}, true);
  p.mutable_grad().setZero();
  std::vector<Tensor<double>> ps{p};
  EXPECT_EQ(clip_global_norm<double>(ps, 0.1), 0.0);
  EXPECT_EQ(p.grad().abs().maxCoeff(), 0.0);
}

TEST(RdtFormat, RandomTensorsRoundTripBitwise) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const RawTensor t = random_raw(rng);
    std::stringstream ss;
    write_rdt(ss, t);
    EXPECT_TRUE(bitwise_equal(read_rdt(ss), t)) << "tensor " << i;
  }
}

TEST(RdtFormat, SpecialValuesRoundTrip) {
  RawTensor t{{5}, {0.0f, -0.0f, std::numeric_limits<float>::infinity(), std::numeric_limits<float>::quiet_NaN(),
                    std::numeric_limits<float>::denorm_min()}};
  std::stringstream ss;
  write_rdt(ss, t);
  EXPECT_TRUE(bitwise_equal(read_rdt(ss), t));
}

TEST(RdtFormat, BadMagicReportsOffset) {
  std::stringstream ss("RDT2\x01\0\0\0");
  try {
    read_rdt(ss);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0);
  }
}

TEST(RdtFormat, TruncatedPayloadThrows) {
  std::stringstream full;
  write_rdt(full, RawTensor{{2, 3}, {1, 2, 3, 4, 5, 6}});
  const std::string bytes = full.str();
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    std::stringstream ss(bytes.substr(0, cut));
    EXPECT_THROW(read_rdt(ss), FormatError) << "cut at " << cut;
  }
}

TEST(Checkpoint, RoundTripBitwise) {
  Rng rng(12);
  Checkpoint ckpt;
  for (int i = 0; i < 20; ++i) ckpt.emplace_back("layer" + std::to_string(i) + ".w", random_raw(rng));
  const auto dir = scratch_dir("ckpt");
  write_checkpoint_file(dir / "a.ckpt", ckpt);
  const auto back = read_checkpoint_file(dir / "a.ckpt");
  ASSERT_EQ(back.size(), ckpt.size());
  for (std::size_t i = 0; i < ckpt.size(); ++i) {
    EXPECT_EQ(back[i].first, ckpt[i].first);
    EXPECT_TRUE(bitwise_equal(back[i].second, ckpt[i].second));
  }
}

TEST(Checkpoint, TruncatedThrows) {
  std::stringstream full;
  write_checkpoint(full, Checkpoint{{"a", RawTensor{{2}, {1, 2}}}, {"b", RawTensor{{1}, {3}}}});
  const std::string bytes = full.str();
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    std::stringstream ss(bytes.substr(0, cut));
    EXPECT_THROW(read_checkpoint(ss), FormatError) << "cut at " << cut;
  }
}

TEST(ParameterStore, LoadRejectsShapeMismatch) {
  ParameterStore<float> store;
  store.parameter("w", Tensor<float>::zeros({2, 3}));
  Checkpoint bad{{"w", RawTensor{{3, 2}, std::vector<float>(6, 1.0f)}}};
  EXPECT_THROW(store.load(bad), ConfigError);
}
