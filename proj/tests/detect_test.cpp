#include <gtest/gtest.h>

#include <random>
#include <set>

#include "lssg/csv.hpp"
#include "lssg/detect.hpp"

namespace lssg {
namespace {

Box3D random_box(std::mt19937_64& rng, double span = 20.0) {
  std::uniform_real_distribution<double> c(0, span), e(1, 10);
  return {c(rng), c(rng), c(rng), e(rng), e(rng), e(rng)};
}

TEST(Anchors, SingleCellHasFiveCubes) {
  auto a = generate_anchors({1, 1, 1}, AnchorSet{});
  ASSERT_EQ(a.size(), 5u);
  const std::vector<double> sizes{5, 10, 20, 30, 50};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a[i].center(), (std::array<double, 3>{2, 2, 2}));
    EXPECT_EQ(a[i].extent(), (std::array<double, 3>{sizes[i], sizes[i], sizes[i]}));
  }
}

TEST(Anchors, EightCellCenters) {
  AnchorSet s{{4}, 4};
  auto a = generate_anchors({2, 2, 2}, s);
  ASSERT_EQ(a.size(), 8u);
  std::set<std::array<double, 3>> centers;
  for (const auto& b : a) centers.insert(b.center());
  for (double z : {2.0, 6.0})
    for (double y : {2.0, 6.0})
      for (double x : {2.0, 6.0}) EXPECT_TRUE(centers.count({z, y, x}));
}

TEST(Anchors, CountMatchesEnumeration) {
  std::size_t n = 0;
  for (int d = 0; d < 4; ++d)
    for (int h = 0; h < 6; ++h)
      for (int w = 0; w < 6; ++w)
        for (int s = 0; s < 5; ++s) ++n;
  EXPECT_EQ(generate_anchors({4, 6, 6}, AnchorSet{}).size(), n);
  EXPECT_EQ(n, 720u);
  for (std::size_t d = 1; d < 4; ++d)
    for (std::size_t h = 1; h < 4; ++h) EXPECT_EQ(generate_anchors({d, h, 2}, AnchorSet{}).size(), d * h * 2 * 5);
}

TEST(Anchors, RejectsUnsortedSizes) {
  EXPECT_THROW(generate_anchors({1, 1, 1}, AnchorSet{{10, 5}, 4}), ConfigError);
  EXPECT_THROW(generate_anchors({0, 1, 1}, AnchorSet{}), ConfigError);
}

TEST(Iou, SelfDisjointAndHalfOffset) {
  Box3D a{5, 5, 5, 2, 3, 4};
  EXPECT_DOUBLE_EQ(iou3d(a, a), 1.0);
  EXPECT_EQ(iou3d(a, Box3D{50, 5, 5, 2, 3, 4}), 0.0);
  Box3D u{0.5, 0.5, 0.5, 1, 1, 1}, v{0.5, 0.5, 1.0, 1, 1, 1};
  EXPECT_NEAR(iou3d(u, v), 0.5 / 1.5, 1e-15);
}

TEST(Iou, SymmetricAndBounded) {
  std::mt19937_64 rng(201);
  for (int i = 0; i < 1000; ++i) {
    auto a = random_box(rng), b = random_box(rng);
    const double ab = iou3d(a, b);
    EXPECT_EQ(ab, iou3d(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(BoxCodec, IdentityAndLogRatio) {
  Box3D anchor{10, 10, 10, 10, 10, 10};
  for (double v : encode_box(anchor, anchor)) EXPECT_EQ(v, 0.0);
  auto t = encode_box(anchor, Box3D{10, 10, 10, 20, 20, 20});
  for (int k = 3; k < 6; ++k) EXPECT_NEAR(t[k], std::log(2.0), 1e-15);
}

TEST(BoxCodec, RoundTrip) {
  std::mt19937_64 rng(202);
  for (int i = 0; i < 1000; ++i) {
    auto a = random_box(rng), g = random_box(rng);
    auto r = decode_box(a, encode_box(a, g));
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(r.center()[k], g.center()[k], 1e-10);
      EXPECT_NEAR(r.extent()[k], g.extent()[k], 1e-10);
    }
  }
}

TEST(ClipBox, IntersectsVolume) {
  auto c = clip_box(Box3D{1, 5, 9, 4, 4, 4}, {10, 10, 10});
  EXPECT_EQ(c, (Box3D{1.5, 5, 8.5, 3, 4, 3}));
}

std::vector<Detection> nms_reference(std::vector<Detection> dets, double thr) {
  // repeatedly take the best remaining (first on ties), drop everything overlapping it
  std::vector<Detection> out;
  std::vector<bool> alive(dets.size(), true);
  while (true) {
    std::size_t best = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && (best == dets.size() || dets[i].score > dets[best].score)) best = i;
    }
    if (best == dets.size()) break;
    out.push_back(dets[best]);
    alive[best] = false;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && iou3d(dets[i].box, dets[best].box) > thr) alive[i] = false;
    }
  }
  return out;
}

TEST(Nms, TrivialCases) {
  Detection d{{5, 5, 5, 4, 4, 4}, 0.7};
  EXPECT_EQ(nms3d({d}, 0.5), std::vector<Detection>{d});
  Detection a{{5, 5, 5, 4, 4, 4}, 0.9}, b{{5, 5, 5, 4, 4, 4}, 0.8};
  EXPECT_EQ(nms3d({b, a}, 0.5), std::vector<Detection>{a});
  EXPECT_THROW(nms3d({a}, 1.0), ConfigError);
  EXPECT_THROW(nms3d({a}, 0.0), ConfigError);
}

TEST(Nms, MatchesBruteForce) {
  std::mt19937_64 rng(203);
  std::uniform_real_distribution<double> s(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> dets;
    for (int i = 0; i < 5; ++i) dets.push_back({random_box(rng, 8.0), s(rng)});
    if (trial % 5 == 0) dets[3].score = dets[1].score;
    const double thr = 0.05 + 0.9 * s(rng);
    auto got = nms3d(dets, thr);
    EXPECT_EQ(got, nms_reference(dets, thr));
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (i > 0) {
        EXPECT_GE(got[i - 1].score, got[i].score);
      }
      for (std::size_t j = i + 1; j < got.size(); ++j) EXPECT_LE(iou3d(got[i].box, got[j].box), thr);
    }
  }
}

TEST(Csv, DetectionRoundTrip) {
  DetectionsByScan d{{"a", {{{1.5, 2, 3, 4, 5, 6}, 0.25}, {{0.1, 0.2, 0.3, 1, 1, 1}, 1.0 / 3}}}, {"b", {}}};
  auto text = detections_to_csv(d);
  EXPECT_EQ(text.substr(0, text.find('\n')), "scan_id,cz,cy,cx,d,h,w,score");
  auto back = detections_from_csv(text);
  EXPECT_EQ(back.at("a"), d.at("a"));
  EXPECT_FALSE(back.contains("b"));  // a scan with no rows has nothing to say
}

TEST(Csv, GroundTruthEmptyScanRow) {
  GroundTruthByScan g{{"s0", {{1, 2, 3, 4, 5, 6}}}, {"s1", {}}};
  auto text = ground_truth_to_csv(g);
  EXPECT_NE(text.find("s1,,,,,,"), std::string::npos);
  EXPECT_EQ(ground_truth_from_csv(text), g);
}

TEST(Csv, RejectsMalformed) {
  EXPECT_THROW(detections_from_csv("wrong\n"), InputError);
  EXPECT_THROW(detections_from_csv(std::string(kDetectionHeader) + "\na,1,2,3,4,5,6\n"), InputError);
  EXPECT_THROW(detections_from_csv(std::string(kDetectionHeader) + "\na,1,2,3,4,5,6,x\n"), InputError);
  EXPECT_THROW(detections_from_csv(std::string(kDetectionHeader) + "\na,1,2,3,0,5,6,0.5\n"), InputError);
  EXPECT_THROW(detections_from_csv(std::string(kDetectionHeader) + "\na,1,2,3,4,5,6,1.5\n"), InputError);
}

}  // namespace
}  // namespace lssg
