#include <gtest/gtest.h>

#include <numeric>

#include "ptadet/errors.hpp"
#include "ptadet/fusion.hpp"
#include "ptadet/suites.hpp"
#include "test_util.hpp"

using namespace ptadet;
using ptadet::testing::max_abs_diff;
using ptadet::testing::random_points;

namespace {

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) { return gather_rows(x, perm); }

}  // namespace

TEST(Attention, ShapeAndGroupClamp) {
  Rng rng(1);
  const auto coords = random_points(5, rng);
  const Tensor f = Tensor::uniform({5, 4}, 1.0, rng);
  const AttentionBlock wide = AttentionBlock::init(4, 16, AttnMode::kSubtract, rng);
  EXPECT_EQ(attention_forward(coords, f, wide).shape(), (Shape{5, 4}));
}

TEST(Attention, EquivariantToPointOrder) {
  Rng rng(2);
  for (AttnMode mode : {AttnMode::kSubtract, AttnMode::kMultiply}) {
    const auto coords = random_points(14, rng);
    const Tensor f = Tensor::uniform({14, 6}, 1.0, rng);
    const AttentionBlock blk = AttentionBlock::init(6, 5, mode, rng);
    std::vector<std::size_t> perm(14);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<Vec3> pc;
    for (std::size_t i : perm) pc.push_back(coords[i]);
    const Tensor a = permute_rows(attention_forward(coords, f, blk), perm);
    const Tensor b = attention_forward(pc, permute_rows(f, perm), blk);
    EXPECT_LT(max_abs_diff(a.data(), b.data()), 1e-9);
  }
}

TEST(Attention, InvariantToTranslation) {
  Rng rng(3);
  const auto coords = random_points(10, rng);
  const Tensor f = Tensor::uniform({10, 4}, 1.0, rng);
  const AttentionBlock blk = AttentionBlock::init(4, 4, AttnMode::kSubtract, rng);
  std::vector<Vec3> moved;
  for (const auto& p : coords) moved.push_back(p + Vec3(3.0, -2.0, 0.5));
  EXPECT_LT(max_abs_diff(attention_forward(coords, f, blk).data(), attention_forward(moved, f, blk).data()), 1e-9);
}

TEST(Attention, NeighborOrderWithinGroupIsIrrelevantBitwise) {
  Rng rng(4);
  const auto coords = random_points(9, rng);
  const Tensor f = Tensor::uniform({9, 3}, 1.0, rng);
  const AttentionBlock blk = AttentionBlock::init(3, 4, AttnMode::kMultiply, rng);
  const KnnResult knn = knn_group(coords, coords, 4);
  std::vector<std::size_t> shuffled = knn.indices;
  for (std::size_t r = 0; r < 9; ++r) {
    std::vector<std::size_t> row(shuffled.begin() + r * 4, shuffled.begin() + r * 4 + 4);
    rng.shuffle(row);
    std::ranges::copy(row, shuffled.begin() + r * 4);
  }
  const Tensor a = attention_forward(coords, f, knn.indices, 4, blk);
  const Tensor b = attention_forward(coords, f, shuffled, 4, blk);
  EXPECT_TRUE(std::ranges::equal(a.data(), b.data()));
}

TEST(Ptd, DownsamplesToFpsCentroids) {
  Rng rng(5);
  const PointSet in{random_points(20, rng), Tensor::uniform({20, 3}, 1.0, rng)};
  const PtdStage st = PtdStage::init(3, 6, 4, 5, AttnMode::kSubtract, rng);
  const PointSet out = ptd_forward(in, st);
  EXPECT_EQ(out.feats.shape(), (Shape{6, 5}));
  const auto idx = farthest_point_sampling(in.coords, 6);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(out.coords[i], in.coords[idx[i]]);
  const PtdStage too_many = PtdStage::init(3, 21, 4, 5, AttnMode::kSubtract, rng);
  EXPECT_THROW(ptd_forward(in, too_many), ConfigError);
  const PtdStage big_group = PtdStage::init(3, 6, 25, 5, AttnMode::kSubtract, rng);
  EXPECT_THROW(ptd_forward(in, big_group), ConfigError);
}

TEST(Upsampling, PtuAndFpRestoreSkipResolution) {
  Rng rng(6);
  const PointSet coarse{random_points(4, rng), Tensor::uniform({4, 6}, 1.0, rng)};
  const PointSet skip{random_points(11, rng), Tensor::uniform({11, 3}, 1.0, rng)};
  const PtuStage ptu = PtuStage::init(6, 3, 4, AttnMode::kSubtract, rng);
  const PointSet up = ptu_forward(coarse, skip, ptu);
  EXPECT_EQ(up.coords, skip.coords);
  EXPECT_EQ(up.feats.shape(), (Shape{11, 6}));
  const FpStage fp = FpStage::init(6, 3, {7, 5}, rng);
  const PointSet up2 = fp_forward(coarse, skip, fp);
  EXPECT_EQ(up2.feats.shape(), (Shape{11, 5}));
  EXPECT_EQ(fp.c_out(), 5u);
  const PointSet empty;
  EXPECT_THROW(ptu_forward(empty, skip, ptu), ContractError);
  EXPECT_THROW(fp_forward(skip, coarse, FpStage::init(3, 6, {4}, rng)), ContractError);
}

TEST(Pft, AttentionRowsAreDistributions) {
  Rng rng(7);
  for (CombineMode cm : {CombineMode::kSubtract, CombineMode::kAdd, CombineMode::kConcat})
    for (AttnMode am : {AttnMode::kSubtract, AttnMode::kMultiply}) {
      const PftStage st = PftStage::init(4, 5, 6, 9, 3, 7, cm, am, rng);
      const PftOutput o = pft_forward(Tensor::uniform({9, 4}, 1.0, rng), Tensor::uniform({3, 5}, 1.0, rng), st);
      EXPECT_EQ(o.raw.shape(), (Shape{9, 6}));
      EXPECT_EQ(o.pseu.shape(), (Shape{3, 6}));
      ASSERT_EQ(o.attn_raw.shape(), (Shape{9, 3}));
      ASSERT_EQ(o.attn_pseu.shape(), (Shape{3, 9}));
      for (const Tensor* a : {&o.attn_raw, &o.attn_pseu}) {
        const std::size_t rows = a->dim(0), cols = a->dim(1);
        for (std::size_t r = 0; r < rows; ++r) {
          double s = 0;
          for (std::size_t c = 0; c < cols; ++c) {
            EXPECT_GE((*a)[r * cols + c], 0.0);
            s += (*a)[r * cols + c];
          }
          EXPECT_NEAR(s, 1.0, 1e-12);
        }
      }
    }
}

TEST(Pft, SwappedBlockExchangesModalities) {
  Rng rng(8);
  const PftStage st = PftStage::init(4, 4, 5, 6, 6, 8, CombineMode::kSubtract, AttnMode::kMultiply, rng);
  const Tensor a = Tensor::uniform({6, 4}, 1.0, rng), b = Tensor::uniform({6, 4}, 1.0, rng);
  const PftOutput o = pft_forward(a, b, st);
  const PftOutput s = pft_forward(b, a, st.swapped());
  EXPECT_LT(max_abs_diff(o.raw.data(), s.pseu.data()), 1e-12);
  EXPECT_LT(max_abs_diff(o.pseu.data(), s.raw.data()), 1e-12);
}

TEST(Pft, CombineModesProduceDifferentOutputs) {
  const Tensor a = [] { Rng r(9); return Tensor::uniform({5, 3}, 1.0, r); }();
  const Tensor b = [] { Rng r(10); return Tensor::uniform({4, 3}, 1.0, r); }();
  std::vector<std::vector<double>> outs;
  for (CombineMode cm : {CombineMode::kSubtract, CombineMode::kAdd, CombineMode::kConcat}) {
    Rng rng(11);
    const PftStage st = PftStage::init(3, 3, 4, 5, 4, 4, cm, AttnMode::kMultiply, rng);
    const Tensor r = pft_forward(a, b, st).raw;
    outs.emplace_back(r.data().begin(), r.data().end());
  }
  EXPECT_NE(outs[0], outs[1]);
  EXPECT_NE(outs[0], outs[2]);
  EXPECT_NE(outs[1], outs[2]);
}

TEST(Modes, ParseAcceptsNamesAndSymbols) {
  EXPECT_EQ(parse_attn_mode("-"), AttnMode::kSubtract);
  EXPECT_EQ(parse_attn_mode("x"), AttnMode::kMultiply);
  EXPECT_EQ(parse_combine_mode("concat"), CombineMode::kConcat);
  EXPECT_THROW(parse_attn_mode("divide"), ConfigError);
  EXPECT_THROW(parse_combine_mode("mul"), ConfigError);
}

TEST(Network, ValidateRejectsInconsistentShapes) {
  NetworkConfig c = miniature_config().net;
  EXPECT_NO_THROW(c.validate());
  NetworkConfig bad = c;
  bad.raw_stages = {16, 16};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.pft_links = {true};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.l_group = 40;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Network, OutputWidthFollowsFinalFusionSwitch) {
  Rng rng(12);
  for (bool fuse : {true, false}) {
    NetworkConfig c = miniature_config().net;
    c.final_fusion = fuse;
    c.fusion_width = 5;
    c.pft_links = {fuse, false};
    const TwoStreamNet net = TwoStreamNet::init(c, rng);
    const PointSet raw{random_points(c.raw_points, rng), Tensor::uniform({c.raw_points, 4}, 1.0, rng)};
    const PointSet ppc{random_points(c.ppc_points, rng), Tensor::uniform({c.ppc_points, c.ppc_in_channels}, 1.0, rng)};
    const Tensor out = two_stream_forward(raw, ppc, net, c);
    EXPECT_EQ(out.shape(), (Shape{c.raw_points, fuse ? 5u : c.channels.back()}));
  }
}

class StageGradcheck : public ::testing::TestWithParam<std::size_t> {};

TEST_P(StageGradcheck, MatchesCentralDifferences) {
  const auto cases = gradcheck_cases("stage", 21);
  const GradcheckCase& c = cases.at(GetParam());
  for (const GradcheckRow& r : run_gradcheck_case(c)) EXPECT_TRUE(r.pass) << c.name << " " << r.group << " " << r.max_rel_err;
}

INSTANTIATE_TEST_SUITE_P(AllStages, StageGradcheck,
                         ::testing::Range<std::size_t>(0, gradcheck_cases("stage", 21).size()));
