#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "lssg/io.hpp"
#include "lssg/tensor.hpp"
#include "support.hpp"

namespace lssg {
namespace {

TEST(PointwiseConv, IdentityWeightsReproduceInput) {
  std::mt19937_64 rng(1);
  auto x = test::random_volume<double>({3, 2, 3, 4}, rng);
  EXPECT_EQ(pointwise_conv(x, Matrix<double>::identity(3)), x);
}

TEST(PointwiseConv, ZeroWeightsGiveZeros) {
  std::mt19937_64 rng(2);
  auto x = test::random_volume<double>({3, 2, 2, 2}, rng);
  auto y = pointwise_conv(x, Matrix<double>(5, 3));
  EXPECT_EQ(y.shape(), (Shape4{5, 2, 2, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(PointwiseConv, MatchesScalarLoop) {
  std::mt19937_64 rng(3);
  auto x = test::random_volume<double>({3, 2, 3, 2}, rng);
  auto w = test::random_matrix<double>(2, 3, rng);
  std::vector<double> bias{0.25, -0.5};
  auto y = pointwise_conv(x, w, std::span<const double>(bias));
  for (std::size_t co = 0; co < 2; ++co)
    for (std::size_t d = 0; d < 2; ++d)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t ww = 0; ww < 2; ++ww) {
          double acc = bias[co];
          for (std::size_t ci = 0; ci < 3; ++ci) acc += w(co, ci) * x.at(ci, d, h, ww);
          EXPECT_NEAR(y.at(co, d, h, ww), acc, 1e-14);
        }
}

TEST(PointwiseConv, RejectsChannelMismatch) {
  Volume<double> x({3, 1, 1, 1});
  EXPECT_THROW(pointwise_conv(x, Matrix<double>(2, 4)), ShapeError);
}

TEST(PointwiseConv, IsLinear) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape4 s{3, 2, 3, 3};
    auto x = test::random_volume<double>(s, rng);
    auto y = test::random_volume<double>(s, rng);
    auto w = test::random_matrix<double>(4, 3, rng);
    const double a = coef(rng), b = coef(rng);
    auto lhs = pointwise_conv(add(scale(x, a), scale(y, b)), w);
    auto rhs = add(scale(pointwise_conv(x, w), a), scale(pointwise_conv(y, w), b));
    EXPECT_LT(relative_error(lhs, rhs), 1e-10);
  }
}

TEST(PointwiseConv, LeavesInputsUntouched) {
  std::mt19937_64 rng(5);
  auto x = test::random_volume<double>({2, 2, 2, 2}, rng);
  auto w = test::random_matrix<double>(2, 2, rng);
  const auto x0 = x;
  const auto w0 = w;
  (void)pointwise_conv(x, w);
  (void)pointwise_conv_backward(x, w, x);
  EXPECT_EQ(x, x0);
  EXPECT_EQ(w, w0);
}

TEST(Vectorize, SingleElement) {
  Volume<double> x({1, 1, 1, 1}, std::vector<double>{3.5});
  EXPECT_EQ(vectorize(x).values, std::vector<double>{3.5});
}

TEST(Vectorize, RoundTripIsExact) {
  std::mt19937_64 rng(6);
  auto x = test::random_volume<double>({4, 6, 5, 5}, rng);
  EXPECT_EQ(devectorize(vectorize(x), x.shape()), x);
}

TEST(Vectorize, ChannelMajorOrdering) {
  const Shape4 s{2, 3, 4, 5};
  Volume<double> x(s);
  x.at(1, 0, 0, 0) = 7.0;
  const auto e = vectorize(x);
  EXPECT_EQ(e.values[s.d * s.h * s.w], 7.0);
  EXPECT_EQ(x.index(1, 0, 0, 0), s.d * s.h * s.w);
}

TEST(Vectorize, DimsMismatchThrows) {
  FlatEmbedding<double> e{std::vector<double>(10)};
  EXPECT_THROW(devectorize(e, Shape4{1, 2, 2, 2}), ShapeError);
}

TEST(FlatOps, DotWithZerosAndBasis) {
  std::mt19937_64 rng(7);
  auto x = vectorize(test::random_volume<double>({1, 1, 1, 8}, rng));
  EXPECT_EQ(dot(x, FlatEmbedding<double>{std::vector<double>(8)}), 0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      FlatEmbedding<double> ei{std::vector<double>(4)}, ej{std::vector<double>(4)};
      ei.values[i] = 1.0;
      ej.values[j] = 1.0;
      EXPECT_EQ(dot(ei, ej), i == j ? 1.0 : 0.0);
    }
}

TEST(FlatOps, DotAgreesWithExtendedPrecision) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = vectorize(test::random_volume<double>({1, 1, 1, 64}, rng));
    auto b = vectorize(test::random_volume<double>({1, 1, 1, 64}, rng));
    long double ref = 0.0L;
    for (std::size_t i = 0; i < 64; ++i) ref += (long double)a.values[i] * (long double)b.values[i];
    const double got = dot(a, b);
    EXPECT_LT(std::abs((long double)got - ref) / std::abs(ref), 1e-12L);
  }
}

TEST(FlatOps, LengthMismatchThrows) {
  FlatEmbedding<double> a{std::vector<double>(3)}, b{std::vector<double>(4)};
  EXPECT_THROW(dot(a, b), ShapeError);
  EXPECT_THROW(add(a, b), ShapeError);
}

TEST(FlatOps, ScaleAndAdd) {
  FlatEmbedding<double> a{{1.0, 2.0}}, b{{0.5, -1.0}};
  EXPECT_EQ(add(scale(a, 2.0), b).values, (std::vector<double>{2.5, 3.0}));
}

TEST(VolumeInvariants, RejectsNonFiniteAndWrongLength) {
  EXPECT_THROW(Volume<double>(Shape4{1, 1, 1, 2}, std::vector<double>{1.0, std::nan("")}),
               NumericError);
  EXPECT_THROW(Volume<double>(Shape4{1, 1, 1, 2},
                              std::vector<double>{1.0, std::numeric_limits<double>::infinity()}),
               NumericError);
  EXPECT_THROW(Volume<double>(Shape4{1, 1, 1, 2}, std::vector<double>{1.0}), ShapeError);
}

TEST(Lssv, HeaderBytes) {
  Volume<float> v({2, 1, 1, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  const std::string b = encode_lssv(v);
  ASSERT_EQ(b.size(), 4u + 1 + 16 + 1 + 6 * 4);
  EXPECT_EQ(b.substr(0, 4), "LSSV");
  EXPECT_EQ(b[4], '\x01');
  EXPECT_EQ(b.substr(5, 4), std::string("\x02\x00\x00\x00", 4));   // C
  EXPECT_EQ(b.substr(9, 4), std::string("\x01\x00\x00\x00", 4));   // D
  EXPECT_EQ(b.substr(17, 4), std::string("\x03\x00\x00\x00", 4));  // W
  EXPECT_EQ(b[21], '\x04');
  EXPECT_EQ(b.substr(22, 4), std::string("\x00\x00\x80\x3f", 4));  // 1.0f LE
}

TEST(Lssv, RoundTripBothPrecisions) {
  std::mt19937_64 rng(9);
  auto v = test::random_volume<double>({2, 3, 4, 5}, rng);
  EXPECT_EQ(decode_lssv<double>(encode_lssv(v)), v);
  auto f = decode_lssv<float>(encode_lssv(v, 4));
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(f.values()[i], float(v.values()[i]));

  const auto path = std::filesystem::temp_directory_path() / "lssg_tensor_test.lssv";
  write_lssv(path, v);
  EXPECT_EQ(read_lssv<double>(path), v);
  std::filesystem::remove(path);
}

TEST(Lssv, RejectsMalformed) {
  Volume<double> v({1, 1, 1, 2});
  std::string b = encode_lssv(v);
  EXPECT_THROW(decode_lssv<double>(b.substr(0, b.size() - 1)), FormatError);
  std::string bad = b;
  bad[0] = 'X';
  EXPECT_THROW(decode_lssv<double>(bad), FormatError);
  bad = b;
  bad[21] = 3;
  EXPECT_THROW(decode_lssv<double>(bad), FormatError);
}

TEST(Lssp, RoundTrip) {
  std::vector<NamedTensor<double>> s{{"a", {2, 2}, {1, 2, 3, 4}}, {"b.c", {3}, {0.5, -1, 2}}};
  const auto bytes = encode_lssp(s);
  EXPECT_EQ(bytes.substr(0, 4), "LSSP");
  EXPECT_EQ(decode_lssp<double>(bytes), s);
  EXPECT_THROW(decode_lssp<double>(bytes.substr(0, bytes.size() - 3)), FormatError);
}

}  // namespace
}  // namespace lssg
