#include <gtest/gtest.h>

#include "lssg/block.hpp"
#include "lssg/gradcheck.hpp"
#include "support.hpp"

namespace lssg {
namespace {

LssgBlockParams<double> random_block(std::size_t c, GroupingMode mode, std::size_t groups,
                                     std::size_t gn_groups, std::mt19937_64& rng) {
  auto p = LssgBlockParams<double>::zeros(c, mode, groups, gn_groups);
  p.attn = test::random_attention<double>(c, rng);
  p.w_z = test::random_matrix<double>(c, c, rng);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& v : p.gn_gamma) v = u(rng);
  for (auto& v : p.gn_beta) v = u(rng) - 1.0;
  return p;
}

TEST(GroupNorm, ConstantInputNormalizesToZero) {
  Volume<double> x({4, 2, 2, 2}, 0.5);
  std::vector<double> gamma(4, 1.0), beta(4, 0.0);
  auto r = group_norm<double>(x, gamma, beta, 2);
  for (double v : r.output.values()) EXPECT_NEAR(v, 0.0, 1e-12);
  for (double v : r.stats.variance) EXPECT_GE(v, 0.0);
}

TEST(GroupNorm, ZeroGammaGivesBeta) {
  std::mt19937_64 rng(31);
  auto x = test::random_volume<double>({4, 2, 2, 2}, rng);
  std::vector<double> gamma(4, 0.0), beta{1, 2, 3, 4};
  auto r = group_norm<double>(x, gamma, beta, 2);
  for (std::size_t c = 0; c < 4; ++c)
    for (double v : r.output.channel(c)) EXPECT_EQ(v, beta[c]);
}

TEST(GroupNorm, NormalizedStatistics) {
  std::mt19937_64 rng(32);
  auto x = test::random_volume<double>({4, 2, 2, 2}, rng, -3.0, 5.0);
  std::vector<double> gamma(4, 1.0), beta(4, 0.0);
  auto r = group_norm<double>(x, gamma, beta, 2, 1e-12);
  for (std::size_t k = 0; k < 2; ++k) {
    double mean = 0, var = 0;
    for (std::size_t c = 2 * k; c < 2 * k + 2; ++c)
      for (double v : r.output.channel(c)) mean += v;
    mean /= 16;
    for (std::size_t c = 2 * k; c < 2 * k + 2; ++c)
      for (double v : r.output.channel(c)) var += (v - mean) * (v - mean);
    var /= 16;
    EXPECT_LT(std::abs(mean), 1e-10);
    EXPECT_LT(std::abs(var - 1.0), 1e-6);
  }
}

TEST(GroupNorm, RejectsIndivisibleGroups) {
  std::vector<double> gamma(4, 1.0), beta(4, 0.0);
  EXPECT_THROW(group_norm<double>(Volume<double>({4, 1, 1, 1}), gamma, beta, 3), ConfigError);
}

TEST(GroupNorm, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(33);
  for (std::size_t groups : {1, 2, 4}) {
    auto x = test::random_volume<double>({4, 2, 2, 2}, rng);
    std::vector<double> gamma{0.7, 1.3, -0.4, 1.1}, beta{0.1, -0.2, 0.3, 0.0};
    auto r = test::random_volume<double>(x.shape(), rng);
    auto fwd = group_norm<double>(x, gamma, beta, groups);
    auto g = group_norm_backward<double>(x, gamma, fwd.stats, r);
    auto loss = [&] { return test::weighted_sum(group_norm<double>(x, gamma, beta, groups).output, r); };
    for (const auto& rep : gradcheck<double>({{"x", x.values(), g.grad_x.values()},
                                              {"gamma", gamma, g.grad_gamma},
                                              {"beta", beta, g.grad_beta}},
                                             loss))
      EXPECT_LT(rep.rel_error, 1e-6) << rep.name << " groups=" << groups;
  }
}

TEST(LssgBlock, ZeroProjectionIsIdentity) {
  std::mt19937_64 rng(34);
  for (auto mode : {GroupingMode::Short, GroupingMode::Long}) {
    auto p = random_block(4, mode, 2, 2, rng);
    p.w_z = Matrix<double>(4, 4);
    p.gn_beta.assign(4, 0.0);
    auto x = test::random_volume<double>({4, 4, 3, 2}, rng);
    EXPECT_EQ(lssg_block_forward(x, p).output, x);
  }
}

TEST(LssgBlock, PreservesShape) {
  std::mt19937_64 rng(35);
  std::uniform_int_distribution<std::size_t> hw(1, 4);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t groups = std::size_t(1) << (trial % 3);
    const Shape4 s{4, groups * hw(rng), hw(rng), hw(rng)};
    auto p = random_block(4, trial % 2 ? GroupingMode::Long : GroupingMode::Short, groups, 2, rng);
    EXPECT_EQ(lssg_block_forward(test::random_volume<double>(s, rng), p).output.shape(), s);
  }
}

TEST(LssgBlock, MatchesComposedReference) {
  std::mt19937_64 rng(36);
  for (auto mode : {GroupingMode::Short, GroupingMode::Long}) {
    auto p = random_block(2, mode, 2, 2, rng);
    auto x = test::random_volume<double>({2, 4, 2, 2}, rng);
    // straight-line composition of the primitives
    auto sg = build_grouping(mode, 4, 2);
    std::vector<Volume<double>> parts;
    for (std::size_t g = 0; g < 2; ++g) {
      auto y = compact_nonlocal_fast(gather_group(x, sg, g), p.attn);
      parts.push_back(group_norm<double>(pointwise_conv(y, p.w_z), p.gn_gamma, p.gn_beta, 2).output);
    }
    auto expect = add(scatter_groups(parts, sg), x);
    EXPECT_EQ(lssg_block_forward(x, p).output, expect);
  }
}

TEST(LssgBlock, ResidualOnlyGradient) {
  std::mt19937_64 rng(37);
  auto p = random_block(2, GroupingMode::Long, 2, 2, rng);
  p.w_z = Matrix<double>(2, 2);
  auto x = test::random_volume<double>({2, 4, 2, 2}, rng);
  auto r = test::random_volume<double>(x.shape(), rng);
  auto fwd = lssg_block_forward(x, p);
  EXPECT_EQ(lssg_block_backward(x, p, fwd.stats, r).grad_x, r);
}

TEST(LssgBlock, ConstantInputGammaGradientVanishes) {
  std::mt19937_64 rng(38);
  auto p = random_block(2, GroupingMode::Short, 2, 2, rng);
  Volume<double> x({2, 4, 2, 2}, 0.5);
  auto r = test::random_volume<double>(x.shape(), rng);
  auto fwd = lssg_block_forward(x, p);
  auto g = lssg_block_backward(x, p, fwd.stats, r);
  for (double v : g.grad_p.gn_gamma) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(LssgBlock, StaleStatsRejected) {
  std::mt19937_64 rng(39);
  auto p = random_block(2, GroupingMode::Short, 2, 2, rng);
  auto x = test::random_volume<double>({2, 4, 2, 2}, rng);
  auto fwd = lssg_block_forward(x, p);
  auto x2 = x;
  x2.values()[0] += 1.0;
  EXPECT_THROW(lssg_block_backward(x2, p, fwd.stats, x), StateError);
  auto p2 = p;
  p2.w_z(0, 0) += 1.0;
  EXPECT_THROW(lssg_block_backward(x, p2, fwd.stats, x), StateError);
}

TEST(LssgBlock, RejectsBadConfig) {
  std::mt19937_64 rng(40);
  auto p = random_block(4, GroupingMode::Short, 3, 2, rng);
  EXPECT_THROW(lssg_block_forward(Volume<double>({4, 4, 1, 1}), p), ShapeError);
  p.group_count = 2;
  p.gn_groups = 3;
  EXPECT_THROW(lssg_block_forward(Volume<double>({4, 4, 1, 1}), p), ConfigError);
  p.gn_groups = 2;
  EXPECT_THROW(lssg_block_forward(Volume<double>({2, 4, 1, 1}), p), ShapeError);
}

void check_block_gradients(LssgBlockParams<double> p, std::mt19937_64& rng, const Shape4& s) {
  auto x = test::random_volume<double>(s, rng);
  auto r = test::random_volume<double>(s, rng);
  auto fwd = lssg_block_forward(x, p);
  auto g = lssg_block_backward(x, p, fwd.stats, r);
  auto loss = [&] { return test::weighted_sum(lssg_block_forward(x, p).output, r); };
  const auto reports = gradcheck<double>(
      {{"x", x.values(), g.grad_x.values()},
       {"w_theta", p.attn.w_theta.values(), g.grad_p.attn.w_theta.values()},
       {"w_phi", p.attn.w_phi.values(), g.grad_p.attn.w_phi.values()},
       {"w_g", p.attn.w_g.values(), g.grad_p.attn.w_g.values()},
       {"w_z", p.w_z.values(), g.grad_p.w_z.values()},
       {"gn_gamma", p.gn_gamma, g.grad_p.gn_gamma},
       {"gn_beta", p.gn_beta, g.grad_p.gn_beta}},
      loss);
  for (const auto& rep : reports)
    EXPECT_LT(rep.rel_error, 1e-6) << rep.name << " mode=" << to_string(p.grouping_mode)
                                   << " G=" << p.group_count;
}

TEST(LssgBlock, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(41);
  for (auto mode : {GroupingMode::Short, GroupingMode::Long})
    for (std::size_t groups : {1, 2, 4}) check_block_gradients(random_block(2, mode, groups, 2, rng), rng, {2, 4, 2, 2});
}

TEST(LssgBlock, AblationVariantsGradcheck) {
  std::mt19937_64 rng(42);
  auto whole = random_block(2, GroupingMode::Long, 2, 1, rng);
  whole.gn_placement = GnPlacement::WholeVolume;
  check_block_gradients(whole, rng, {2, 4, 2, 2});
  auto nl = random_block(2, GroupingMode::Short, 2, 2, rng);
  nl.kernel = AttentionKernel::NonLocal;
  check_block_gradients(nl, rng, {2, 4, 2, 2});
}

TEST(LssgBlock, SerializationRoundTrip) {
  std::mt19937_64 rng(43);
  auto p = random_block(4, GroupingMode::Long, 4, 2, rng);
  p.kernel = AttentionKernel::NonLocal;
  const auto bytes = encode_lssp(block_to_sections(p, "blk."));
  EXPECT_EQ(block_from_sections(decode_lssp<double>(bytes), "blk."), p);
  EXPECT_THROW(block_from_sections(decode_lssp<double>(bytes), "other."), FormatError);
}

}  // namespace
}  // namespace lssg
